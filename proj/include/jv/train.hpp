#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "jv/network.hpp"

namespace jv::net {

struct TrainConfig {
  std::size_t batch_size = 128;
  double lr = 1e-2;
  std::size_t lr_halving_interval = 100000;
  double momentum = 0.9;
  double weight_decay_conv = 0.0;
  double weight_decay_fc = 5e-4;
  std::size_t max_iters = 1000;
  std::uint64_t seed = 0;
  bool hflip = true;
  /// Random crop_size crops when images are larger than the network input.
  bool random_crop = true;
  /// Write a checkpoint every N iterations (0 = only at the end, if a path is set).
  std::size_t checkpoint_interval = 0;
  std::filesystem::path checkpoint_path;
};

/// lr * 0.5^floor(iter / lr_halving_interval)
double learning_rate(const TrainConfig& cfg, std::size_t iter);

struct Dataset {
  std::vector<Tensor> images;  // preprocessed h x w x c
  std::vector<int> labels;
};

struct AugmentConfig {
  std::size_t crop_size = 100;
  bool random_crop = true;
  bool hflip = true;
};

struct CropOffset {
  std::size_t y = 0;
  std::size_t x = 0;
  bool flipped = false;
};

Tensor hflip(const Tensor& img);
Tensor crop(const Tensor& img, std::size_t y, std::size_t x, std::size_t size);
/// Centred crop_size window; the evaluation-time counterpart of augment().
Tensor center_crop(const Tensor& img, std::size_t size);

/// Per sample: a uniform random crop offset in [0, H - crop]^2 (if enabled)
/// then a horizontal flip with probability 0.5 (if enabled). offsets, when
/// given, receives what was drawn.
Tensor augment(const std::vector<Tensor>& images, Rng& rng, const AugmentConfig& cfg,
               std::vector<CropOffset>* offsets = nullptr);

/// One momentum SGD update of every parameter from its current gradient:
/// v = momentum * v + lr * (grad + decay * w); w -= v.
/// Decay applies to convolution and fully connected weights only.
void sgd_step(Network& net, const TrainConfig& cfg, double lr);

struct TrainResult {
  std::vector<double> loss_curve;
  std::size_t iterations = 0;
};

/// Mini-batch momentum SGD on softmax cross-entropy. Samples are visited in
/// a fresh random order each epoch. Throws DivergenceError on a non-finite
/// loss. on_iter, if set, is called after each step with (iter, loss).
TrainResult train(Network& net, const Dataset& data, const TrainConfig& cfg,
                  const std::function<void(std::size_t, double)>& on_iter = {});

/// Fraction of images classified correctly in eval mode.
double accuracy(Network& net, const Dataset& data, std::size_t batch_size = 64);

/// Synthetic classification images: class k is a pair of Gaussian blobs
/// mirrored about the vertical axis at a class-specific height and spread,
/// with position jitter and pixel noise. Pixels are raw [0, 255].
Dataset make_blob_dataset(std::size_t num_classes, std::size_t per_class, std::size_t size,
                          std::uint64_t seed);

}  // namespace jv::net

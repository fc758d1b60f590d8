#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "jv/layers.hpp"

namespace jv::net {

struct NetworkSpec {
  std::vector<LayerSpec> layers;
  Shape3 input{100, 100, 1};
  std::size_t num_classes = 10548;
  /// Applied by preprocess(): pixel / 255 - input_mean.
  double input_mean = 0.0;

  /// Per-layer output shapes; throws DimensionError on inconsistent specs.
  std::vector<Shape3> output_shapes() const;
  /// Index of the global average pooling layer (the face feature).
  std::size_t feature_layer() const;

  /// Line-oriented text form, stored inside checkpoints.
  std::string to_text() const;
  static NetworkSpec from_text(const std::string& text);
};

/// The 100x100 face network: ten 3x3 convolutions in five blocks with
/// PReLU after every convolution but the last, LRN after Conv12 and Conv22,
/// ceil-mode 2x2 max pooling, global average pooling (Pool5), 40% dropout
/// and the Fc6 classifier with softmax cost.
///
/// channel_divisor and input_size give scaled-down variants; the defaults
/// reproduce the full-size architecture.
NetworkSpec table1_spec(std::size_t num_classes = 10548, std::size_t in_channels = 1,
                        std::size_t channel_divisor = 1, std::size_t input_size = 100);

enum class InitScheme { gaussian, msra };

struct InitConfig {
  InitScheme scheme = InitScheme::gaussian;
  /// Standard deviation for the gaussian scheme.
  double std = 0.01;
  std::uint64_t seed = 0;
};

/// Weight count of a parameterized layer. Biases and PReLU slopes are
/// reported separately.
struct ParamCount {
  std::string layer;
  std::size_t weights = 0;
  std::size_t biases = 0;
};

struct BackwardResult {
  double loss = 0.0;
  Tensor input_grad;
};

class Network {
public:
  explicit Network(NetworkSpec spec, const InitConfig& init = {});

  const NetworkSpec& spec() const { return spec_; }
  std::size_t num_layers() const { return layers_.size(); }
  Layer& layer(std::size_t i) { return *layers_.at(i); }
  const Layer& layer(std::size_t i) const { return *layers_.at(i); }

  /// Every parameter in layer order (weights, then bias, per layer).
  std::vector<Param*> params();
  std::vector<const Param*> params() const;
  std::vector<ParamCount> param_counts() const;

  /// acts[0] is the input batch [n,h,w,c]; acts[i+1] the output of layer i.
  /// Stops after layer `last` when given.
  std::vector<Tensor> forward(const Tensor& batch, Mode mode,
                              std::size_t last = static_cast<std::size_t>(-1));

  /// Mean softmax cross-entropy of the last forward pass against labels.
  /// Parameter gradients are overwritten (not accumulated).
  BackwardResult backward(const std::vector<Tensor>& acts, const std::vector<int>& labels);

  void zero_grads();

  /// Seed for the dropout masks drawn in training-mode forward passes.
  void reseed_dropout(std::uint64_t seed) { dropout_rng_ = Rng(seed); }

  void save(const std::filesystem::path& path) const;
  static Network load(const std::filesystem::path& path);

private:
  NetworkSpec spec_;
  std::vector<std::unique_ptr<Layer>> layers_;
  Rng dropout_rng_;
};

/// Scale raw [0,255] pixels to [0,1] and subtract the stored mean.
Tensor preprocess(const Tensor& raw, const NetworkSpec& spec);

/// Stack h x w x c images into a batch [n, h, w, c].
Tensor stack(const std::vector<Tensor>& images);

/// Pool5 activations of preprocessed images in eval mode, one L2-normalized
/// row per image. Throws DegenerateError for an all-zero feature.
Tensor extract_features(Network& net, const std::vector<Tensor>& images,
                        std::size_t batch_size = 32);

}  // namespace jv::net

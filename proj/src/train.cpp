#include "jv/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "jv/error.hpp"

namespace jv::net {

double learning_rate(const TrainConfig& cfg, std::size_t iter) {
  if (cfg.lr_halving_interval == 0) return cfg.lr;
  return cfg.lr * std::pow(0.5, static_cast<double>(iter / cfg.lr_halving_interval));
}

Tensor hflip(const Tensor& img) {
  if (img.rank() != 3) throw DimensionError("hflip: expected h x w x c");
  const std::size_t h = img.dim(0), w = img.dim(1), c = img.dim(2);
  Tensor out(img.shape());
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t k = 0; k < c; ++k) out(y, x, k) = img(y, w - 1 - x, k);
  return out;
}

Tensor crop(const Tensor& img, std::size_t y, std::size_t x, std::size_t size) {
  if (img.rank() != 3) throw DimensionError("crop: expected h x w x c");
  if (y + size > img.dim(0) || x + size > img.dim(1))
    throw DimensionError("crop: window exceeds image");
  const std::size_t c = img.dim(2);
  Tensor out({size, size, c});
  for (std::size_t i = 0; i < size; ++i)
    for (std::size_t j = 0; j < size; ++j)
      for (std::size_t k = 0; k < c; ++k) out(i, j, k) = img(y + i, x + j, k);
  return out;
}

Tensor center_crop(const Tensor& img, std::size_t size) {
  if (img.rank() != 3 || img.dim(0) < size || img.dim(1) < size)
    throw DimensionError("center_crop: image smaller than crop");
  return crop(img, (img.dim(0) - size) / 2, (img.dim(1) - size) / 2, size);
}

Tensor augment(const std::vector<Tensor>& images, Rng& rng, const AugmentConfig& cfg,
               std::vector<CropOffset>* offsets) {
  std::vector<Tensor> out;
  out.reserve(images.size());
  if (offsets) offsets->clear();
  for (const auto& img : images) {
    if (img.rank() != 3 || img.dim(0) < cfg.crop_size || img.dim(1) < cfg.crop_size)
      throw DimensionError("augment: image smaller than crop size " +
                           std::to_string(cfg.crop_size));
    CropOffset off;
    if (cfg.random_crop) {
      off.y = static_cast<std::size_t>(rng.uniform_int(img.dim(0) - cfg.crop_size + 1));
      off.x = static_cast<std::size_t>(rng.uniform_int(img.dim(1) - cfg.crop_size + 1));
    } else {
      off.y = (img.dim(0) - cfg.crop_size) / 2;
      off.x = (img.dim(1) - cfg.crop_size) / 2;
    }
    Tensor t = crop(img, off.y, off.x, cfg.crop_size);
    if (cfg.hflip && rng.bernoulli(0.5)) {
      off.flipped = true;
      t = hflip(t);
    }
    if (offsets) offsets->push_back(off);
    out.push_back(std::move(t));
  }
  return stack(out);
}

void sgd_step(Network& net, const TrainConfig& cfg, double lr) {
  for (auto* p : net.params()) {
    double decay = 0.0;
    if (p->role == ParamRole::conv_weight) decay = cfg.weight_decay_conv;
    if (p->role == ParamRole::fc_weight) decay = cfg.weight_decay_fc;
    auto& w = p->value.values();
    auto& g = p->grad.values();
    auto& v = p->momentum.values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      v[i] = cfg.momentum * v[i] + lr * (g[i] + decay * w[i]);
      w[i] -= v[i];
    }
  }
}

TrainResult train(Network& net, const Dataset& data, const TrainConfig& cfg,
                  const std::function<void(std::size_t, double)>& on_iter) {
  if (data.images.empty() || data.images.size() != data.labels.size())
    throw DimensionError("train: images and labels must be non-empty and aligned");
  if (cfg.batch_size == 0) throw FormatError("train: batch size must be positive");
  Rng rng(derive_seed(cfg.seed, "train.order"));
  Rng aug_rng(derive_seed(cfg.seed, "train.augment"));
  net.reseed_dropout(derive_seed(cfg.seed, "train.dropout"));

  const auto& in = net.spec().input;
  AugmentConfig aug{in.h, cfg.random_crop, cfg.hflip};

  std::vector<std::size_t> order(data.images.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();

  TrainResult result;
  std::vector<Tensor> images;
  std::vector<int> labels;
  for (std::size_t iter = 0; iter < cfg.max_iters; ++iter) {
    images.clear();
    labels.clear();
    while (images.size() < cfg.batch_size && images.size() < data.images.size()) {
      if (cursor == order.size()) {
        rng.shuffle(order.begin(), order.end());
        cursor = 0;
      }
      images.push_back(data.images[order[cursor]]);
      labels.push_back(data.labels[order[cursor]]);
      ++cursor;
    }
    const Tensor batch = augment(images, aug_rng, aug);
    auto acts = net.forward(batch, Mode::train);
    const auto bw = net.backward(acts, labels);
    if (!std::isfinite(bw.loss)) {
      std::ostringstream msg;
      msg << "training diverged at iteration " << iter << " (loss " << bw.loss
          << ", lr " << learning_rate(cfg, iter) << ")";
      throw DivergenceError(msg.str());
    }
    sgd_step(net, cfg, learning_rate(cfg, iter));
    result.loss_curve.push_back(bw.loss);
    result.iterations = iter + 1;
    if (on_iter) on_iter(iter, bw.loss);
    if (cfg.checkpoint_interval && !cfg.checkpoint_path.empty() &&
        (iter + 1) % cfg.checkpoint_interval == 0)
      net.save(cfg.checkpoint_path);
  }
  if (!cfg.checkpoint_path.empty()) net.save(cfg.checkpoint_path);
  return result;
}

double accuracy(Network& net, const Dataset& data, std::size_t batch_size) {
  if (data.images.empty()) return 0.0;
  const std::size_t side = net.spec().input.h;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < data.images.size(); start += batch_size) {
    const std::size_t end = std::min(data.images.size(), start + batch_size);
    std::vector<Tensor> chunk;
    for (std::size_t i = start; i < end; ++i) chunk.push_back(center_crop(data.images[i], side));
    const auto acts = net.forward(stack(chunk), Mode::eval);
    const Tensor& p = acts.back();
    const std::size_t k = p.size() / p.dim(0);
    for (std::size_t i = start; i < end; ++i) {
      const double* row = p.data().data() + (i - start) * k;
      const auto best = static_cast<int>(std::max_element(row, row + k) - row);
      if (best == data.labels[i]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(data.images.size());
}

Dataset make_blob_dataset(std::size_t num_classes, std::size_t per_class, std::size_t size,
                          std::uint64_t seed) {
  Rng rng(seed);
  Dataset d;
  const double s = static_cast<double>(size);
  const std::size_t rows = (num_classes + 1) / 2;
  const double sigma = s / 16.0;
  for (std::size_t k = 0; k < num_classes; ++k) {
    const double cy = s * (0.5 + static_cast<double>(k % rows)) / static_cast<double>(rows);
    const double dx = (k / rows == 0 ? 0.15 : 0.35) * s;
    for (std::size_t i = 0; i < per_class; ++i) {
      const double jy = rng.uniform() * 2.0 - 1.0;
      const double jx = rng.uniform() * 2.0 - 1.0;
      Tensor img({size, size, 1});
      for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
          const double fy = static_cast<double>(y) - (cy + jy);
          double v = 30.0;
          for (double side : {-1.0, 1.0}) {
            const double fx = static_cast<double>(x) - ((s - 1.0) / 2.0 + side * dx + jx);
            v += 180.0 * std::exp(-(fx * fx + fy * fy) / (2.0 * sigma * sigma));
          }
          v += 10.0 * rng.normal();
          img(y, x, 0) = std::clamp(v, 0.0, 255.0);
        }
      }
      d.images.push_back(std::move(img));
      d.labels.push_back(static_cast<int>(k));
    }
  }
  return d;
}

}  // namespace jv::net

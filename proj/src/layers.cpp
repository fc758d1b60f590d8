#include "jv/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "jv/error.hpp"

namespace jv::net {

namespace {

struct KindName {
  LayerKind kind;
  const char* name;
};

constexpr KindName kKindNames[] = {
    {LayerKind::conv3x3, "conv3x3"},
    {LayerKind::maxpool2x2s2, "maxpool2x2s2"},
    {LayerKind::avgpool_global, "avgpool_global"},
    {LayerKind::prelu, "prelu"},
    {LayerKind::lrn, "lrn"},
    {LayerKind::dropout, "dropout"},
    {LayerKind::fully_connected, "fully_connected"},
    {LayerKind::softmax_xent, "softmax_xent"},
};

Shape3 batch_shape(const Tensor& t) { return {t.dim(1), t.dim(2), t.dim(3)}; }

void ensure_shape(Tensor& t, std::size_t n, Shape3 s) {
  const std::vector<std::size_t> want{n, s.h, s.w, s.c};
  if (t.shape() != want)
    t = Tensor(want);
  else
    t.fill(0.0);
}

void check_input(const Tensor& in, std::size_t channels, const LayerSpec& spec) {
  if (in.rank() != 4) throw DimensionError(spec.name + ": input must be [n,h,w,c]");
  if (channels != 0 && in.dim(3) != channels)
    throw DimensionError(spec.name + ": expected " + std::to_string(channels) +
                         " input channels, got " + std::to_string(in.dim(3)));
}

// 3x3, stride 1, zero padding 1. Weight layout [ky][kx][ic][oc].
class Conv3x3 final : public Layer {
public:
  Conv3x3(const LayerSpec& spec) : Layer(spec) {
    params_.emplace_back(spec.name + ".weight", ParamRole::conv_weight,
                         Tensor({3, 3, spec.in_channels, spec.out_channels}));
    params_.emplace_back(spec.name + ".bias", ParamRole::bias, Tensor({spec.out_channels}));
  }

  Shape3 output_shape(Shape3 in) const override { return {in.h, in.w, spec_.out_channels}; }

  void forward(const Tensor& in, Tensor& out, Mode, Rng&) override {
    check_input(in, spec_.in_channels, spec_);
    const std::size_t n = in.dim(0), h = in.dim(1), w = in.dim(2);
    const std::size_t ic = spec_.in_channels, oc = spec_.out_channels;
    ensure_shape(out, n, {h, w, oc});
    const double* wt = params_[0].value.data().data();
    const double* bias = params_[1].value.data().data();
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          double* o = &out(s, y, x, 0);
          for (std::size_t k = 0; k < oc; ++k) o[k] = bias[k];
          for (std::size_t ky = 0; ky < 3; ++ky) {
            const long iy = static_cast<long>(y + ky) - 1;
            if (iy < 0 || iy >= static_cast<long>(h)) continue;
            for (std::size_t kx = 0; kx < 3; ++kx) {
              const long ix = static_cast<long>(x + kx) - 1;
              if (ix < 0 || ix >= static_cast<long>(w)) continue;
              const double* px = &in(s, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix), 0);
              const double* wk = wt + (ky * 3 + kx) * ic * oc;
              for (std::size_t c = 0; c < ic; ++c) {
                const double v = px[c];
                const double* wc = wk + c * oc;
                for (std::size_t k = 0; k < oc; ++k) o[k] += v * wc[k];
              }
            }
          }
        }
      }
    }
  }

  void backward(const Tensor& in, const Tensor&, const Tensor& grad_out, Tensor& grad_in) override {
    const std::size_t n = in.dim(0), h = in.dim(1), w = in.dim(2);
    const std::size_t ic = spec_.in_channels, oc = spec_.out_channels;
    ensure_shape(grad_in, n, {h, w, ic});
    const double* wt = params_[0].value.data().data();
    double* gw = params_[0].grad.data().data();
    double* gb = params_[1].grad.data().data();
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          const double* g = &grad_out(s, y, x, 0);
          for (std::size_t k = 0; k < oc; ++k) gb[k] += g[k];
          for (std::size_t ky = 0; ky < 3; ++ky) {
            const long iy = static_cast<long>(y + ky) - 1;
            if (iy < 0 || iy >= static_cast<long>(h)) continue;
            for (std::size_t kx = 0; kx < 3; ++kx) {
              const long ix = static_cast<long>(x + kx) - 1;
              if (ix < 0 || ix >= static_cast<long>(w)) continue;
              const auto uy = static_cast<std::size_t>(iy), ux = static_cast<std::size_t>(ix);
              const double* px = &in(s, uy, ux, 0);
              double* gx = &grad_in(s, uy, ux, 0);
              const std::size_t off = (ky * 3 + kx) * ic * oc;
              for (std::size_t c = 0; c < ic; ++c) {
                const double* wc = wt + off + c * oc;
                double* gwc = gw + off + c * oc;
                const double v = px[c];
                double acc = 0.0;
                for (std::size_t k = 0; k < oc; ++k) {
                  acc += wc[k] * g[k];
                  gwc[k] += v * g[k];
                }
                gx[c] += acc;
              }
            }
          }
        }
      }
    }
  }
};

// 2x2 max pooling, stride 2, ceil-mode output; border windows are clipped.
class MaxPool final : public Layer {
public:
  using Layer::Layer;

  Shape3 output_shape(Shape3 in) const override { return {(in.h + 1) / 2, (in.w + 1) / 2, in.c}; }

  void forward(const Tensor& in, Tensor& out, Mode, Rng&) override {
    check_input(in, 0, spec_);
    const auto is = batch_shape(in);
    const auto os = output_shape(is);
    ensure_shape(out, in.dim(0), os);
    for (std::size_t s = 0; s < in.dim(0); ++s)
      for (std::size_t y = 0; y < os.h; ++y)
        for (std::size_t x = 0; x < os.w; ++x)
          for (std::size_t c = 0; c < os.c; ++c) {
            std::size_t by, bx;
            argmax(in, s, y, x, c, by, bx);
            out(s, y, x, c) = in(s, by, bx, c);
          }
  }

  void backward(const Tensor& in, const Tensor&, const Tensor& grad_out, Tensor& grad_in) override {
    const auto is = batch_shape(in);
    const auto os = output_shape(is);
    ensure_shape(grad_in, in.dim(0), is);
    for (std::size_t s = 0; s < in.dim(0); ++s)
      for (std::size_t y = 0; y < os.h; ++y)
        for (std::size_t x = 0; x < os.w; ++x)
          for (std::size_t c = 0; c < os.c; ++c) {
            std::size_t by, bx;
            argmax(in, s, y, x, c, by, bx);
            grad_in(s, by, bx, c) += grad_out(s, y, x, c);
          }
  }

private:
  // First maximum in row-major window order wins ties.
  static void argmax(const Tensor& in, std::size_t s, std::size_t y, std::size_t x, std::size_t c,
                     std::size_t& by, std::size_t& bx) {
    const std::size_t h = in.dim(1), w = in.dim(2);
    double best = -std::numeric_limits<double>::infinity();
    by = 2 * y;
    bx = 2 * x;
    for (std::size_t dy = 0; dy < 2; ++dy) {
      const std::size_t iy = 2 * y + dy;
      if (iy >= h) break;
      for (std::size_t dx = 0; dx < 2; ++dx) {
        const std::size_t ix = 2 * x + dx;
        if (ix >= w) break;
        const double v = in(s, iy, ix, c);
        if (v > best) {
          best = v;
          by = iy;
          bx = ix;
        }
      }
    }
  }
};

class AvgPoolGlobal final : public Layer {
public:
  using Layer::Layer;

  Shape3 output_shape(Shape3 in) const override { return {1, 1, in.c}; }

  void forward(const Tensor& in, Tensor& out, Mode, Rng&) override {
    check_input(in, 0, spec_);
    const std::size_t n = in.dim(0), h = in.dim(1), w = in.dim(2), c = in.dim(3);
    ensure_shape(out, n, {1, 1, c});
    const double inv = 1.0 / static_cast<double>(h * w);
    for (std::size_t s = 0; s < n; ++s) {
      double* o = &out(s, 0, 0, 0);
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const double* p = &in(s, y, x, 0);
          for (std::size_t k = 0; k < c; ++k) o[k] += p[k];
        }
      for (std::size_t k = 0; k < c; ++k) o[k] *= inv;
    }
  }

  void backward(const Tensor& in, const Tensor&, const Tensor& grad_out, Tensor& grad_in) override {
    const std::size_t n = in.dim(0), h = in.dim(1), w = in.dim(2), c = in.dim(3);
    ensure_shape(grad_in, n, {h, w, c});
    const double inv = 1.0 / static_cast<double>(h * w);
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
          for (std::size_t k = 0; k < c; ++k) grad_in(s, y, x, k) = grad_out(s, 0, 0, k) * inv;
  }
};

// Per-channel slope, shared across spatial positions.
class PRelu final : public Layer {
public:
  PRelu(const LayerSpec& spec) : Layer(spec) {
    params_.emplace_back(spec.name + ".slope", ParamRole::prelu_slope,
                         Tensor({spec.in_channels}, 0.25));
  }

  Shape3 output_shape(Shape3 in) const override { return in; }

  void forward(const Tensor& in, Tensor& out, Mode, Rng&) override {
    check_input(in, spec_.in_channels, spec_);
    const std::size_t c = in.dim(3);
    if (out.shape() != in.shape()) out = Tensor(in.shape());
    const double* a = params_[0].value.data().data();
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = prelu(in[i], a[i % c]);
  }

  void backward(const Tensor& in, const Tensor&, const Tensor& grad_out, Tensor& grad_in) override {
    const std::size_t c = in.dim(3);
    if (grad_in.shape() != in.shape()) grad_in = Tensor(in.shape());
    const double* a = params_[0].value.data().data();
    double* ga = params_[0].grad.data().data();
    for (std::size_t i = 0; i < in.size(); ++i) {
      const double x = in[i];
      if (x >= 0.0) {
        grad_in[i] = grad_out[i];
      } else {
        grad_in[i] = a[i % c] * grad_out[i];
        ga[i % c] += x * grad_out[i];
      }
    }
  }
};

// out_c = x_c / (k + alpha/size * sum_{|c'-c| <= size/2} x_c'^2)^beta
class Lrn final : public Layer {
public:
  using Layer::Layer;

  Shape3 output_shape(Shape3 in) const override { return in; }

  void forward(const Tensor& in, Tensor& out, Mode, Rng&) override {
    check_input(in, 0, spec_);
    if (out.shape() != in.shape()) out = Tensor(in.shape());
    const std::size_t c = in.dim(3), pixels = in.size() / c;
    std::vector<double> denom(c);
    for (std::size_t p = 0; p < pixels; ++p) {
      const double* x = in.data().data() + p * c;
      scale_terms(x, c, denom.data());
      double* o = out.data().data() + p * c;
      for (std::size_t k = 0; k < c; ++k) o[k] = x[k] * std::pow(denom[k], -spec_.lrn.beta);
    }
  }

  void backward(const Tensor& in, const Tensor&, const Tensor& grad_out, Tensor& grad_in) override {
    if (grad_in.shape() != in.shape()) grad_in = Tensor(in.shape());
    const auto& p = spec_.lrn;
    const std::size_t c = in.dim(3), pixels = in.size() / c;
    const long half = static_cast<long>(p.size / 2);
    const double coef = 2.0 * p.alpha * p.beta / static_cast<double>(p.size);
    std::vector<double> denom(c), t(c);
    for (std::size_t px = 0; px < pixels; ++px) {
      const double* x = in.data().data() + px * c;
      const double* g = grad_out.data().data() + px * c;
      double* gi = grad_in.data().data() + px * c;
      scale_terms(x, c, denom.data());
      for (std::size_t k = 0; k < c; ++k) t[k] = g[k] * x[k] * std::pow(denom[k], -p.beta - 1.0);
      for (std::size_t j = 0; j < c; ++j) {
        double acc = 0.0;
        const long lo = std::max(0L, static_cast<long>(j) - half);
        const long hi = std::min(static_cast<long>(c) - 1, static_cast<long>(j) + half);
        for (long k = lo; k <= hi; ++k) acc += t[static_cast<std::size_t>(k)];
        gi[j] = g[j] * std::pow(denom[j], -p.beta) - coef * x[j] * acc;
      }
    }
  }

private:
  void scale_terms(const double* x, std::size_t c, double* denom) const {
    const auto& p = spec_.lrn;
    const long half = static_cast<long>(p.size / 2);
    for (std::size_t k = 0; k < c; ++k) {
      double sq = 0.0;
      const long lo = std::max(0L, static_cast<long>(k) - half);
      const long hi = std::min(static_cast<long>(c) - 1, static_cast<long>(k) + half);
      for (long j = lo; j <= hi; ++j) sq += x[j] * x[j];
      denom[k] = p.k + p.alpha / static_cast<double>(p.size) * sq;
    }
  }
};

// Inverted dropout: kept units are scaled by 1/(1-rate) during training, so
// evaluation is the identity.
class Dropout final : public Layer {
public:
  using Layer::Layer;

  Shape3 output_shape(Shape3 in) const override { return in; }

  void forward(const Tensor& in, Tensor& out, Mode mode, Rng& rng) override {
    check_input(in, 0, spec_);
    out = in;
    if (mode == Mode::eval || spec_.dropout_rate <= 0.0) {
      mask_.clear();
      return;
    }
    const double keep = 1.0 - spec_.dropout_rate;
    mask_.assign(in.size(), 0.0);
    for (std::size_t i = 0; i < in.size(); ++i) {
      mask_[i] = rng.bernoulli(keep) ? 1.0 / keep : 0.0;
      out[i] *= mask_[i];
    }
  }

  void backward(const Tensor& in, const Tensor&, const Tensor& grad_out, Tensor& grad_in) override {
    grad_in = grad_out;
    if (mask_.empty()) return;
    if (mask_.size() != in.size()) throw DimensionError(spec_.name + ": stale dropout mask");
    for (std::size_t i = 0; i < grad_in.size(); ++i) grad_in[i] *= mask_[i];
  }

private:
  std::vector<double> mask_;
};

// Weight layout [out][in] over the flattened h*w*c input.
class FullyConnected final : public Layer {
public:
  FullyConnected(const LayerSpec& spec) : Layer(spec) {
    params_.emplace_back(spec.name + ".weight", ParamRole::fc_weight,
                         Tensor({spec.out_channels, spec.in_channels}));
    params_.emplace_back(spec.name + ".bias", ParamRole::bias, Tensor({spec.out_channels}));
  }

  Shape3 output_shape(Shape3) const override { return {1, 1, spec_.out_channels}; }

  void forward(const Tensor& in, Tensor& out, Mode, Rng&) override {
    if (in.rank() != 4) throw DimensionError(spec_.name + ": input must be [n,h,w,c]");
    const std::size_t n = in.dim(0), d = in.size() / n, k = spec_.out_channels;
    if (d != spec_.in_channels)
      throw DimensionError(spec_.name + ": expected " + std::to_string(spec_.in_channels) +
                           " inputs, got " + std::to_string(d));
    ensure_shape(out, n, {1, 1, k});
    const auto& wt = params_[0].value;
    const auto& b = params_[1].value;
    for (std::size_t s = 0; s < n; ++s) {
      std::span<const double> x(in.data().data() + s * d, d);
      for (std::size_t o = 0; o < k; ++o) out(s, 0, 0, o) = b[o] + dot(wt.row(o), x);
    }
  }

  void backward(const Tensor& in, const Tensor&, const Tensor& grad_out, Tensor& grad_in) override {
    const std::size_t n = in.dim(0), d = in.size() / n, k = spec_.out_channels;
    if (grad_in.shape() != in.shape())
      grad_in = Tensor(in.shape());
    else
      grad_in.fill(0.0);
    const auto& wt = params_[0].value;
    auto& gw = params_[0].grad;
    auto& gb = params_[1].grad;
    for (std::size_t s = 0; s < n; ++s) {
      const double* x = in.data().data() + s * d;
      double* gx = grad_in.data().data() + s * d;
      for (std::size_t o = 0; o < k; ++o) {
        const double g = grad_out(s, 0, 0, o);
        if (g == 0.0) continue;
        gb[o] += g;
        const double* wr = &wt(o, 0);
        double* gwr = &gw(o, 0);
        for (std::size_t i = 0; i < d; ++i) {
          gwr[i] += g * x[i];
          gx[i] += g * wr[i];
        }
      }
    }
  }
};

class SoftmaxXent final : public Layer {
public:
  using Layer::Layer;

  Shape3 output_shape(Shape3 in) const override { return in; }

  void forward(const Tensor& in, Tensor& out, Mode, Rng&) override {
    check_input(in, 0, spec_);
    out = softmax(in);
  }

  // Softmax Jacobian-vector product; the loss gradient itself is formed by
  // the network from the labels.
  void backward(const Tensor& in, const Tensor& out, const Tensor& grad_out,
                Tensor& grad_in) override {
    const std::size_t n = in.dim(0), k = in.size() / n;
    grad_in = Tensor(in.shape());
    for (std::size_t s = 0; s < n; ++s) {
      const double* p = out.data().data() + s * k;
      const double* g = grad_out.data().data() + s * k;
      double pg = 0.0;
      for (std::size_t j = 0; j < k; ++j) pg += p[j] * g[j];
      for (std::size_t j = 0; j < k; ++j) grad_in[s * k + j] = p[j] * (g[j] - pg);
    }
  }
};

}  // namespace

const char* to_string(LayerKind kind) {
  for (const auto& kn : kKindNames)
    if (kn.kind == kind) return kn.name;
  return "?";
}

LayerKind layer_kind_from_string(const std::string& s) {
  for (const auto& kn : kKindNames)
    if (s == kn.name) return kn.kind;
  throw FormatError("unknown layer kind '" + s + "'");
}

std::string to_string(const Shape3& s) {
  return std::to_string(s.h) + "x" + std::to_string(s.w) + "x" + std::to_string(s.c);
}

Param::Param(std::string n, ParamRole r, Tensor v)
    : name(std::move(n)), role(r), value(std::move(v)), grad(value.shape()),
      momentum(value.shape()) {}

std::unique_ptr<Layer> make_layer(const LayerSpec& spec, Shape3 in) {
  LayerSpec s = spec;
  switch (s.kind) {
    case LayerKind::conv3x3:
      if (s.in_channels == 0) s.in_channels = in.c;
      if (s.in_channels != in.c || s.out_channels == 0)
        throw DimensionError(s.name + ": conv channel mismatch");
      return std::make_unique<Conv3x3>(s);
    case LayerKind::maxpool2x2s2:
      return std::make_unique<MaxPool>(s);
    case LayerKind::avgpool_global:
      return std::make_unique<AvgPoolGlobal>(s);
    case LayerKind::prelu:
      s.in_channels = s.out_channels = in.c;
      return std::make_unique<PRelu>(s);
    case LayerKind::lrn:
      if (s.lrn.size % 2 == 0) throw FormatError(s.name + ": LRN size must be odd");
      return std::make_unique<Lrn>(s);
    case LayerKind::dropout:
      if (s.dropout_rate < 0.0 || s.dropout_rate >= 1.0)
        throw FormatError(s.name + ": dropout rate must be in [0,1)");
      return std::make_unique<Dropout>(s);
    case LayerKind::fully_connected:
      if (s.in_channels == 0) s.in_channels = in.size();
      if (s.in_channels != in.size() || s.out_channels == 0)
        throw DimensionError(s.name + ": fully connected size mismatch");
      return std::make_unique<FullyConnected>(s);
    case LayerKind::softmax_xent:
      return std::make_unique<SoftmaxXent>(s);
  }
  throw FormatError("unknown layer kind");
}

double prelu(double x, double slope) { return x >= 0.0 ? x : slope * x; }

Tensor lrn(const Tensor& x, const LrnParams& p) {
  if (x.rank() != 3) throw DimensionError("lrn: expected h x w x c");
  if (p.size % 2 == 0) throw FormatError("lrn: size must be odd");
  LayerSpec spec;
  spec.kind = LayerKind::lrn;
  spec.name = "lrn";
  spec.lrn = p;
  Lrn layer(spec);
  Tensor batch = x.reshaped({1, x.dim(0), x.dim(1), x.dim(2)});
  Tensor out;
  Rng unused;
  layer.forward(batch, out, Mode::eval, unused);
  return out.reshaped(x.shape());
}

Tensor softmax(const Tensor& logits) {
  const std::size_t n = logits.dim(0), k = logits.size() / n;
  Tensor out(logits.shape());
  for (std::size_t s = 0; s < n; ++s) {
    const double* z = logits.data().data() + s * k;
    double* p = out.data().data() + s * k;
    const double zmax = *std::max_element(z, z + k);
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) sum += (p[j] = std::exp(z[j] - zmax));
    for (std::size_t j = 0; j < k; ++j) p[j] /= sum;
  }
  return out;
}

double cross_entropy(const Tensor& probs, const std::vector<int>& labels) {
  const std::size_t n = probs.dim(0), k = probs.size() / n;
  if (labels.size() != n) throw DimensionError("cross_entropy: label count mismatch");
  double loss = 0.0;
  for (std::size_t s = 0; s < n; ++s) {
    if (labels[s] < 0 || static_cast<std::size_t>(labels[s]) >= k)
      throw DimensionError("cross_entropy: label out of range");
    const double p = probs[s * k + static_cast<std::size_t>(labels[s])];
    loss -= std::log(std::max(p, std::numeric_limits<double>::min()));
  }
  return loss / static_cast<double>(n);
}

}  // namespace jv::net

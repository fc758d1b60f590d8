#pragma once

#include <memory>
#include <string>
#include <vector>

#include "jv/rng.hpp"
#include "jv/tensor.hpp"

namespace jv::net {

enum class Mode { train, eval };

enum class LayerKind {
  conv3x3,
  maxpool2x2s2,
  avgpool_global,
  prelu,
  lrn,
  dropout,
  fully_connected,
  softmax_xent,
};

const char* to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& s);

/// Spatial activation shape of one sample (height, width, channels).
struct Shape3 {
  std::size_t h = 1;
  std::size_t w = 1;
  std::size_t c = 1;
  std::size_t size() const { return h * w * c; }
  friend bool operator==(const Shape3&, const Shape3&) = default;
};

std::string to_string(const Shape3& s);

/// Cross-channel local response normalization parameters.
struct LrnParams {
  std::size_t size = 5;
  double alpha = 1e-4;
  double beta = 0.75;
  double k = 1.0;
};

struct LayerSpec {
  LayerKind kind = LayerKind::conv3x3;
  std::string name;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  double dropout_rate = 0.0;
  LrnParams lrn;
};

/// What a parameter tensor is; decides weight decay.
enum class ParamRole { conv_weight, fc_weight, bias, prelu_slope };

struct Param {
  std::string name;
  ParamRole role;
  Tensor value;
  Tensor grad;
  Tensor momentum;

  Param(std::string n, ParamRole r, Tensor v);
};

/// One layer of the network. Activation tensors are batches [n, h, w, c].
///
/// backward() receives the forward input and output plus dL/d(output),
/// writes dL/d(input) and *accumulates* parameter gradients.
class Layer {
public:
  explicit Layer(LayerSpec spec) : spec_(std::move(spec)) {}
  virtual ~Layer() = default;

  const LayerSpec& spec() const { return spec_; }

  virtual Shape3 output_shape(Shape3 in) const = 0;
  virtual void forward(const Tensor& in, Tensor& out, Mode mode, Rng& rng) = 0;
  virtual void backward(const Tensor& in, const Tensor& out, const Tensor& grad_out,
                        Tensor& grad_in) = 0;

  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }

protected:
  LayerSpec spec_;
  std::vector<Param> params_;
};

/// Builds the layer for spec; in is the input shape seen by the layer.
std::unique_ptr<Layer> make_layer(const LayerSpec& spec, Shape3 in);

double prelu(double x, double slope);

/// Direct (non-batched) LRN of one h x w x c activation; reference form.
Tensor lrn(const Tensor& x, const LrnParams& p);

/// Row-wise softmax of [n, 1, 1, k] logits.
Tensor softmax(const Tensor& logits);

/// Mean cross-entropy of probabilities [n, 1, 1, k] against labels.
double cross_entropy(const Tensor& probs, const std::vector<int>& labels);

}  // namespace jv::net

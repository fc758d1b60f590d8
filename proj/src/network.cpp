#include "jv/network.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "jv/binary_io.hpp"
#include "jv/error.hpp"

namespace jv::net {

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

LayerSpec conv(const std::string& name, std::size_t in, std::size_t out) {
  LayerSpec s;
  s.kind = LayerKind::conv3x3;
  s.name = name;
  s.in_channels = in;
  s.out_channels = out;
  return s;
}

LayerSpec simple(LayerKind kind, const std::string& name) {
  LayerSpec s;
  s.kind = kind;
  s.name = name;
  return s;
}

std::size_t scaled_channels(std::size_t c, std::size_t divisor) {
  return std::max<std::size_t>(1, c / divisor);
}

}  // namespace

std::vector<Shape3> NetworkSpec::output_shapes() const {
  std::vector<Shape3> shapes;
  Shape3 cur = input;
  for (const auto& l : layers) {
    cur = make_layer(l, cur)->output_shape(cur);
    shapes.push_back(cur);
  }
  return shapes;
}

std::size_t NetworkSpec::feature_layer() const {
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (layers[i].kind == LayerKind::avgpool_global) return i;
  throw FormatError("network has no global average pooling layer");
}

std::string NetworkSpec::to_text() const {
  std::ostringstream os;
  os << "input " << input.h << ' ' << input.w << ' ' << input.c << '\n';
  os << "classes " << num_classes << '\n';
  os << "mean " << format_double(input_mean) << '\n';
  for (const auto& l : layers) {
    os << "layer " << to_string(l.kind) << ' ' << l.name;
    switch (l.kind) {
      case LayerKind::conv3x3:
      case LayerKind::fully_connected:
        os << " in=" << l.in_channels << " out=" << l.out_channels;
        break;
      case LayerKind::lrn:
        os << " size=" << l.lrn.size << " alpha=" << format_double(l.lrn.alpha)
           << " beta=" << format_double(l.lrn.beta) << " k=" << format_double(l.lrn.k);
        break;
      case LayerKind::dropout:
        os << " rate=" << format_double(l.dropout_rate);
        break;
      default:
        break;
    }
    os << '\n';
  }
  return os.str();
}

NetworkSpec NetworkSpec::from_text(const std::string& text) {
  NetworkSpec spec;
  spec.layers.clear();
  std::istringstream is(text);
  std::string line;
  bool have_input = false;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string head;
    ls >> head;
    if (head == "input") {
      ls >> spec.input.h >> spec.input.w >> spec.input.c;
      have_input = !ls.fail();
    } else if (head == "classes") {
      ls >> spec.num_classes;
    } else if (head == "mean") {
      ls >> spec.input_mean;
    } else if (head == "layer") {
      std::string kind, tok;
      LayerSpec l;
      ls >> kind >> l.name;
      l.kind = layer_kind_from_string(kind);
      std::map<std::string, std::string> kv;
      while (ls >> tok) {
        const auto eq = tok.find('=');
        if (eq == std::string::npos) throw FormatError("network spec: bad token '" + tok + "'");
        kv[tok.substr(0, eq)] = tok.substr(eq + 1);
      }
      try {
        if (kv.count("in")) l.in_channels = std::stoul(kv["in"]);
        if (kv.count("out")) l.out_channels = std::stoul(kv["out"]);
        if (kv.count("rate")) l.dropout_rate = std::stod(kv["rate"]);
        if (kv.count("size")) l.lrn.size = std::stoul(kv["size"]);
        if (kv.count("alpha")) l.lrn.alpha = std::stod(kv["alpha"]);
        if (kv.count("beta")) l.lrn.beta = std::stod(kv["beta"]);
        if (kv.count("k")) l.lrn.k = std::stod(kv["k"]);
      } catch (const std::exception&) {
        throw FormatError("network spec: bad value in '" + line + "'");
      }
      spec.layers.push_back(l);
    } else {
      throw FormatError("network spec: unknown line '" + line + "'");
    }
    if (ls.bad()) throw FormatError("network spec: bad line '" + line + "'");
  }
  if (!have_input || spec.layers.empty()) throw FormatError("network spec: missing input or layers");
  return spec;
}

NetworkSpec table1_spec(std::size_t num_classes, std::size_t in_channels,
                        std::size_t channel_divisor, std::size_t input_size) {
  if (num_classes < 2) throw FormatError("table1_spec: need at least 2 classes");
  if (channel_divisor == 0 || input_size == 0 || in_channels == 0)
    throw FormatError("table1_spec: sizes must be positive");
  NetworkSpec spec;
  spec.input = {input_size, input_size, in_channels};
  spec.num_classes = num_classes;

  // {block, first conv channels, second conv channels}
  const std::size_t blocks[5][2] = {{32, 64}, {64, 128}, {96, 192}, {128, 256}, {160, 320}};
  std::size_t c = in_channels;
  for (std::size_t b = 0; b < 5; ++b) {
    const auto id = std::to_string(b + 1);
    const std::size_t c1 = scaled_channels(blocks[b][0], channel_divisor);
    const std::size_t c2 = scaled_channels(blocks[b][1], channel_divisor);
    spec.layers.push_back(conv("Conv" + id + "1", c, c1));
    spec.layers.push_back(simple(LayerKind::prelu, "Conv" + id + "1.prelu"));
    spec.layers.push_back(conv("Conv" + id + "2", c1, c2));
    if (b < 4) {
      spec.layers.push_back(simple(LayerKind::prelu, "Conv" + id + "2.prelu"));
      if (b < 2) spec.layers.push_back(simple(LayerKind::lrn, "Conv" + id + "2.lrn"));
      spec.layers.push_back(simple(LayerKind::maxpool2x2s2, "Pool" + id));
    } else {
      spec.layers.push_back(simple(LayerKind::avgpool_global, "Pool5"));
    }
    c = c2;
  }
  auto drop = simple(LayerKind::dropout, "Dropout");
  drop.dropout_rate = 0.4;
  spec.layers.push_back(drop);
  auto fc = simple(LayerKind::fully_connected, "Fc6");
  fc.in_channels = c;
  fc.out_channels = num_classes;
  spec.layers.push_back(fc);
  spec.layers.push_back(simple(LayerKind::softmax_xent, "Cost"));
  return spec;
}

Network::Network(NetworkSpec spec, const InitConfig& init)
    : spec_(std::move(spec)), dropout_rng_(derive_seed(init.seed, "dropout")) {
  if (spec_.layers.empty() || spec_.layers.back().kind != LayerKind::softmax_xent)
    throw FormatError("network must end with a softmax_xent layer");
  Shape3 cur = spec_.input;
  for (const auto& l : spec_.layers) {
    layers_.push_back(make_layer(l, cur));
    cur = layers_.back()->output_shape(cur);
  }
  if (cur.size() != spec_.num_classes)
    throw DimensionError("network output size " + std::to_string(cur.size()) +
                         " does not match num_classes " + std::to_string(spec_.num_classes));

  Rng rng(init.seed);
  for (auto& layer : layers_) {
    for (auto& p : layer->params()) {
      if (p.role != ParamRole::conv_weight && p.role != ParamRole::fc_weight) continue;
      double std = init.std;
      if (init.scheme == InitScheme::msra) {
        const auto& s = p.value.shape();
        const double fan_in = p.role == ParamRole::conv_weight
                                  ? static_cast<double>(s[0] * s[1] * s[2])
                                  : static_cast<double>(s[1]);
        std = std::sqrt(2.0 / fan_in);
      }
      for (auto& v : p.value.values()) v = std * rng.normal();
    }
  }
}

std::vector<Param*> Network::params() {
  std::vector<Param*> out;
  for (auto& l : layers_)
    for (auto& p : l->params()) out.push_back(&p);
  return out;
}

std::vector<const Param*> Network::params() const {
  std::vector<const Param*> out;
  for (const auto& l : layers_)
    for (const auto& p : l->params()) out.push_back(&p);
  return out;
}

std::vector<ParamCount> Network::param_counts() const {
  std::vector<ParamCount> counts;
  for (const auto& l : layers_) {
    const auto kind = l->spec().kind;
    if (kind != LayerKind::conv3x3 && kind != LayerKind::fully_connected) continue;
    counts.push_back({l->spec().name, l->params()[0].value.size(), l->params()[1].value.size()});
  }
  return counts;
}

std::vector<Tensor> Network::forward(const Tensor& batch, Mode mode, std::size_t last) {
  const auto& in = spec_.input;
  if (batch.rank() != 4 || batch.dim(1) != in.h || batch.dim(2) != in.w || batch.dim(3) != in.c)
    throw DimensionError("forward: batch must be [n," + to_string(in) + "]");
  const std::size_t stop = std::min(last, layers_.size() - 1);
  std::vector<Tensor> acts(stop + 2);
  acts[0] = batch;
  for (std::size_t i = 0; i <= stop; ++i) layers_[i]->forward(acts[i], acts[i + 1], mode, dropout_rng_);
  return acts;
}

void Network::zero_grads() {
  for (auto* p : params()) p->grad.fill(0.0);
}

BackwardResult Network::backward(const std::vector<Tensor>& acts, const std::vector<int>& labels) {
  if (acts.size() != layers_.size() + 1) throw DimensionError("backward: incomplete forward pass");
  const Tensor& probs = acts.back();
  const std::size_t n = probs.dim(0), k = probs.size() / n;
  BackwardResult result;
  result.loss = cross_entropy(probs, labels);

  zero_grads();
  // Softmax and cross-entropy combine to (p - onehot) / n at the logits.
  Tensor grad = probs;
  for (std::size_t s = 0; s < n; ++s) grad[s * k + static_cast<std::size_t>(labels[s])] -= 1.0;
  for (auto& v : grad.values()) v /= static_cast<double>(n);

  Tensor grad_in;
  for (std::size_t i = layers_.size() - 1; i-- > 0;) {
    layers_[i]->backward(acts[i], acts[i + 1], grad, grad_in);
    std::swap(grad, grad_in);
  }
  result.input_grad = std::move(grad);
  return result;
}

void Network::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  bin::write_magic(out, "JVNT");
  bin::write_uint<std::uint32_t>(out, kCheckpointVersion);
  const auto text = spec_.to_text();
  bin::write_uint<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto* p : params())
    for (double v : p->value.values()) bin::write_f64(out, v);
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Network Network::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  const std::string what = "checkpoint " + path.string();
  bin::expect_magic(in, "JVNT", what);
  const auto version = bin::read_uint<std::uint32_t>(in);
  if (version != kCheckpointVersion)
    throw FormatError(what + ": unsupported version " + std::to_string(version));
  const auto len = bin::read_uint<std::uint32_t>(in);
  std::string text(len, '\0');
  in.read(text.data(), len);
  if (static_cast<std::uint32_t>(in.gcount()) != len) throw FormatError(what + ": truncated spec");
  InitConfig zero;
  zero.std = 0.0;
  Network net(NetworkSpec::from_text(text), zero);
  for (auto* p : net.params())
    for (auto& v : p->value.values()) v = bin::read_f64(in);
  bin::expect_eof(in, what);
  return net;
}

Tensor preprocess(const Tensor& raw, const NetworkSpec& spec) {
  Tensor t = raw;
  for (auto& v : t.values()) v = v / 255.0 - spec.input_mean;
  return t;
}

Tensor stack(const std::vector<Tensor>& images) {
  if (images.empty()) throw DimensionError("stack: no images");
  const auto& s = images.front().shape();
  if (s.size() != 3) throw DimensionError("stack: images must be h x w x c");
  Tensor batch({images.size(), s[0], s[1], s[2]});
  const std::size_t per = images.front().size();
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].shape() != s) throw DimensionError("stack: image shapes differ");
    std::copy(images[i].values().begin(), images[i].values().end(),
              batch.values().begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  return batch;
}

Tensor extract_features(Network& net, const std::vector<Tensor>& images, std::size_t batch_size) {
  if (images.empty()) throw DimensionError("extract_features: no images");
  const std::size_t feat = net.spec().feature_layer();
  const std::size_t dim = net.spec().output_shapes()[feat].size();
  Tensor out({images.size(), dim});
  for (std::size_t start = 0; start < images.size(); start += batch_size) {
    const std::size_t end = std::min(images.size(), start + batch_size);
    std::vector<Tensor> chunk(images.begin() + static_cast<std::ptrdiff_t>(start),
                              images.begin() + static_cast<std::ptrdiff_t>(end));
    auto acts = net.forward(stack(chunk), Mode::eval, feat);
    const Tensor& f = acts.back();
    for (std::size_t i = start; i < end; ++i) {
      std::span<const double> row(f.data().data() + (i - start) * dim, dim);
      std::vector<double> unit;
      try {
        unit = l2_normalize(row);
      } catch (const DegenerateError&) {
        throw DegenerateError("extract_features: all-zero feature for image " + std::to_string(i));
      }
      std::copy(unit.begin(), unit.end(), out.row(i).begin());
    }
  }
  return out;
}

}  // namespace jv::net

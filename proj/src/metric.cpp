#include "jv/metric.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <unordered_set>

#include "jv/binary_io.hpp"
#include "jv/error.hpp"

namespace jv::metric {

namespace {

void check_pair(const JointBayesModel& model, std::span<const double> xi,
                std::span<const double> xj) {
  const std::size_t d = model.dim();
  if (xi.size() != d || xj.size() != d)
    throw DimensionError("joint Bayes model has dimension " + std::to_string(d) +
                         ", features have " + std::to_string(xi.size()) + " and " +
                         std::to_string(xj.size()));
}

}  // namespace

void JointBayesModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write model " + path.string());
  bin::write_magic(out, "JVJB");
  bin::write_uint<std::uint32_t>(out, static_cast<std::uint32_t>(dim()));
  for (double v : M.values()) bin::write_f64(out, v);
  for (double v : B.values()) bin::write_f64(out, v);
  bin::write_f64(out, b);
  if (!out) throw IoError("failed writing " + path.string());
}

JointBayesModel JointBayesModel::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open model " + path.string());
  const std::string what = "model " + path.string();
  bin::expect_magic(in, "JVJB", what);
  const auto d = bin::read_uint<std::uint32_t>(in);
  if (d == 0) throw FormatError(what + ": zero dimension");
  JointBayesModel m;
  m.M = Tensor({d, d});
  m.B = Tensor({d, d});
  for (auto& v : m.M.values()) v = bin::read_f64(in);
  for (auto& v : m.B.values()) v = bin::read_f64(in);
  m.b = bin::read_f64(in);
  bin::expect_eof(in, what);
  return m;
}

double distance(const JointBayesModel& model, std::span<const double> xi,
                std::span<const double> xj) {
  check_pair(model, xi, xj);
  const std::size_t d = model.dim();
  double quad = 0.0, cross = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    double m_row = 0.0, b_row = 0.0;
    const double* mk = &model.M(k, 0);
    const double* bk = &model.B(k, 0);
    for (std::size_t l = 0; l < d; ++l) {
      m_row += mk[l] * (xi[l] - xj[l]);
      b_row += bk[l] * xj[l];
    }
    quad += (xi[k] - xj[k]) * m_row;
    cross += xi[k] * b_row;
  }
  return quad - 2.0 * cross;
}

double similarity(const JointBayesModel& model, std::span<const double> xi,
                  std::span<const double> xj) {
  return model.b - distance(model, xi, xj);
}

double cosine_score(std::span<const double> xi, std::span<const double> xj) {
  const double ni = norm2(xi), nj = norm2(xj);
  if (!(ni > 0.0) || !(nj > 0.0)) throw DegenerateError("cosine_score: zero vector");
  return dot(xi, xj) / (ni * nj);
}

double hinge_loss(const JointBayesModel& model, std::span<const double> xi,
                  std::span<const double> xj, int y) {
  return std::max(1.0 - y * similarity(model, xi, xj), 0.0);
}

bool hinge_step(JointBayesModel& model, std::span<const double> xi, std::span<const double> xj,
                int y, const MetricTrainConfig& cfg) {
  if (y * similarity(model, xi, xj) > 1.0) return false;
  const std::size_t d = model.dim();
  const double yd = static_cast<double>(y);
  const double g = cfg.gamma * yd;
  for (std::size_t k = 0; k < d; ++k) {
    const double dk = xi[k] - xj[k];
    double* mk = &model.M(k, 0);
    double* bk = &model.B(k, 0);
    for (std::size_t l = 0; l < d; ++l) {
      mk[l] -= g * (dk * (xi[l] - xj[l]));
      if (cfg.symmetrize_B)
        bk[l] += g * (xi[k] * xj[l] + xj[k] * xi[l]);
      else
        bk[l] += 2.0 * g * (xi[k] * xj[l]);
    }
  }
  model.b += cfg.gamma_b * yd;
  return true;
}

JointBayesModel init_model(std::size_t d, Rng& rng) {
  if (d == 0) throw DimensionError("init_model: dimension must be >= 1");
  const Tensor v = gaussian_matrix(rng, d, d);
  const Tensor w = gaussian_matrix(rng, d, d);
  JointBayesModel m;
  m.M = matmul(v, transpose(v));
  m.B = matmul(w, transpose(w));
  // The Gram products are symmetric up to summation order; mirror exactly.
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < i; ++j) {
      m.M(j, i) = m.M(i, j);
      m.B(j, i) = m.B(i, j);
    }
  m.b = 0.0;
  return m;
}

PairSampler::PairSampler(const std::vector<int>& labels, std::uint64_t seed,
                         std::size_t neg_to_pos_ratio)
    : rng_(seed) {
  if (neg_to_pos_ratio == 0) throw FormatError("negative-to-positive ratio must be >= 1");
  const std::size_t n = labels.size();
  std::size_t total_neg = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      if (labels[i] == labels[j])
        positives_.push_back({i, j, +1});
      else
        ++total_neg;
    }
  if (positives_.empty()) throw FormatError("no positive pairs: every subject has one sample");
  if (total_neg == 0) throw FormatError("no negative pairs: only one subject");

  const std::size_t want = std::min(total_neg, neg_to_pos_ratio * positives_.size());
  if (2 * want >= total_neg) {
    std::vector<Pair> all;
    all.reserve(total_neg);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j)
        if (labels[i] != labels[j]) all.push_back({i, j, -1});
    rng_.shuffle(all.begin(), all.end());
    all.resize(want);
    negatives_ = std::move(all);
  } else {
    std::unordered_set<std::uint64_t> seen;
    while (negatives_.size() < want) {
      auto i = static_cast<std::size_t>(rng_.uniform_int(n));
      auto j = static_cast<std::size_t>(rng_.uniform_int(n));
      if (labels[i] == labels[j]) continue;
      if (i > j) std::swap(i, j);
      if (!seen.insert(static_cast<std::uint64_t>(i) * n + j).second) continue;
      negatives_.push_back({i, j, -1});
    }
  }
  neg_order_.resize(negatives_.size());
  std::iota(neg_order_.begin(), neg_order_.end(), 0);
  rng_.shuffle(neg_order_.begin(), neg_order_.end());
}

std::vector<Pair> PairSampler::next_epoch() {
  std::vector<Pair> pos = positives_;
  rng_.shuffle(pos.begin(), pos.end());
  std::vector<Pair> out;
  out.reserve(2 * pos.size());
  for (const auto& p : pos) {
    out.push_back(p);
    if (neg_cursor_ == neg_order_.size()) {
      rng_.shuffle(neg_order_.begin(), neg_order_.end());
      neg_cursor_ = 0;
    }
    out.push_back(negatives_[neg_order_[neg_cursor_++]]);
  }
  return out;
}

double hinge_objective(const JointBayesModel& model, const Tensor& features,
                       const std::vector<Pair>& pairs) {
  double total = 0.0;
  for (const auto& p : pairs) total += hinge_loss(model, features.row(p.i), features.row(p.j), p.label);
  return total;
}

MetricTrainResult train_metric(const Tensor& features, const std::vector<int>& labels,
                               const MetricTrainConfig& cfg, const JointBayesModel* initial) {
  if (features.rank() != 2 || features.rows() != labels.size())
    throw DimensionError("train_metric: features and labels disagree");
  if (!(cfg.gamma >= 0.0) || !(cfg.gamma_b >= 0.0))
    throw FormatError("train_metric: learning rates must be non-negative");
  std::size_t off_unit = 0;
  for (std::size_t i = 0; i < features.rows(); ++i)
    if (std::abs(norm2(features.row(i)) - 1.0) > 1e-6) ++off_unit;
  if (off_unit)
    std::cerr << "warning: train_metric: " << off_unit << " of " << features.rows()
              << " feature rows are not unit length\n";

  MetricTrainResult result;
  if (initial) {
    if (initial->dim() != features.cols()) throw DimensionError("train_metric: model dimension mismatch");
    result.model = *initial;
  } else {
    Rng init_rng(derive_seed(cfg.seed, "metric.init"));
    result.model = init_model(features.cols(), init_rng);
  }

  PairSampler sampler(labels, derive_seed(cfg.seed, "metric.pairs"), cfg.neg_to_pos_ratio);
  std::vector<Pair> pool;
  if (cfg.track_objective) {
    pool = sampler.positives();
    pool.insert(pool.end(), sampler.negatives().begin(), sampler.negatives().end());
  }
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const auto pairs = sampler.next_epoch();
    std::size_t violated = 0;
    for (const auto& p : pairs)
      if (hinge_step(result.model, features.row(p.i), features.row(p.j), p.label, cfg)) ++violated;
    result.violation_fraction.push_back(static_cast<double>(violated) /
                                        static_cast<double>(pairs.size()));
    if (cfg.track_objective) result.objective.push_back(hinge_objective(result.model, features, pool));
  }
  return result;
}

SyntheticEmbeddingModel SyntheticEmbeddingModel::isotropic(std::size_t d, double var_mu,
                                                           double var_eps, std::size_t subjects,
                                                           std::size_t samples,
                                                           std::uint64_t seed) {
  SyntheticEmbeddingModel m;
  m.S_mu = scaled(Tensor::identity(d), var_mu);
  m.S_eps = scaled(Tensor::identity(d), var_eps);
  m.num_subjects = subjects;
  m.samples_per_subject = samples;
  m.seed = seed;
  return m;
}

LabeledFeatures generate_synthetic(const SyntheticEmbeddingModel& model) {
  if (model.S_mu.rank() != 2 || model.S_mu.shape() != model.S_eps.shape())
    throw DimensionError("generate_synthetic: covariances must be d x d of equal size");
  if (model.num_subjects == 0 || model.samples_per_subject == 0)
    throw FormatError("generate_synthetic: need at least one subject and sample");
  const Tensor l_mu = psd_factor(model.S_mu);
  const Tensor l_eps = psd_factor(model.S_eps);
  const std::size_t d = model.S_mu.rows();
  Rng rng(model.seed);
  LabeledFeatures out;
  out.features = Tensor({model.num_subjects * model.samples_per_subject, d});
  std::vector<double> z(d), mu(d), x(d);
  auto mul = [&](const Tensor& l, std::vector<double>& dst) {
    for (auto& v : z) v = rng.normal();
    for (std::size_t i = 0; i < d; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j <= i; ++j) s += l(i, j) * z[j];
      dst[i] = s;
    }
  };
  std::size_t row = 0;
  for (std::size_t s = 0; s < model.num_subjects; ++s) {
    mul(l_mu, mu);
    for (std::size_t k = 0; k < model.samples_per_subject; ++k, ++row) {
      mul(l_eps, x);
      for (std::size_t i = 0; i < d; ++i) x[i] += mu[i];
      const auto unit = l2_normalize(x);
      std::copy(unit.begin(), unit.end(), out.features.row(row).begin());
      out.labels.push_back(static_cast<int>(s));
    }
  }
  return out;
}

}  // namespace jv::metric

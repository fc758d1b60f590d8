#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "jv/rng.hpp"
#include "jv/tensor.hpp"

namespace jv::metric {

/// Joint Bayesian verification model. With d(x_i, x_j) =
/// (x_i - x_j)^T M (x_i - x_j) - 2 x_i^T B x_j the similarity is b - d;
/// R = M + B recovers the log-likelihood-ratio form.
struct JointBayesModel {
  Tensor M;
  Tensor B;
  double b = 0.0;

  std::size_t dim() const { return M.empty() ? 0 : M.rows(); }
  Tensor R() const { return add(M, B); }

  /// "JVJB", u32 d, M (d*d), B (d*d), b; little-endian f64.
  void save(const std::filesystem::path& path) const;
  static JointBayesModel load(const std::filesystem::path& path);

  friend bool operator==(const JointBayesModel&, const JointBayesModel&) = default;
};

double distance(const JointBayesModel& model, std::span<const double> xi,
                std::span<const double> xj);

/// b - distance; larger means more likely the same identity.
double similarity(const JointBayesModel& model, std::span<const double> xi,
                  std::span<const double> xj);

double cosine_score(std::span<const double> xi, std::span<const double> xj);

struct MetricTrainConfig {
  double gamma = 1e-3;    // step for M and B
  double gamma_b = 1e-4;  // step for b
  std::size_t neg_to_pos_ratio = 20;
  std::size_t epochs = 10;
  std::uint64_t seed = 0;
  /// Apply the B update as gamma*y*(x_i x_j^T + x_j x_i^T) instead of the
  /// asymmetric 2*gamma*y*x_i x_j^T.
  bool symmetrize_B = true;
  /// Evaluate the summed hinge objective over both pair pools after each epoch.
  bool track_objective = false;
};

/// Pair term max(1 - y (b - d), 0).
double hinge_loss(const JointBayesModel& model, std::span<const double> xi,
                  std::span<const double> xj, int y);

/// One stochastic update. A pair with y (b - d) > 1 leaves the model
/// untouched; otherwise M -= gamma y Gamma_ij, B gets the cross term and
/// b += gamma_b y. Returns whether the pair violated the margin.
bool hinge_step(JointBayesModel& model, std::span<const double> xi, std::span<const double> xj,
                int y, const MetricTrainConfig& cfg);

/// M = V V^T, B = W W^T with V, W standard normal d x d; b = 0.
JointBayesModel init_model(std::size_t d, Rng& rng);

struct Pair {
  std::size_t i = 0;
  std::size_t j = 0;
  int label = 0;  // +1 same subject, -1 otherwise

  friend bool operator==(const Pair&, const Pair&) = default;
};

/// Positive pool: every same-subject pair. Negative pool: a random subset of
/// the different-subject pairs, neg_to_pos_ratio times the positive count
/// (or all of them if fewer exist). An epoch walks the shuffled positive pool
/// and interleaves one negative after each positive; the negative cursor
/// persists across epochs and the pool is reshuffled whenever it runs out.
class PairSampler {
public:
  PairSampler(const std::vector<int>& labels, std::uint64_t seed, std::size_t neg_to_pos_ratio);

  const std::vector<Pair>& positives() const { return positives_; }
  const std::vector<Pair>& negatives() const { return negatives_; }

  std::vector<Pair> next_epoch();

private:
  Rng rng_;
  std::vector<Pair> positives_;
  std::vector<Pair> negatives_;
  std::vector<std::size_t> neg_order_;
  std::size_t neg_cursor_ = 0;
};

double hinge_objective(const JointBayesModel& model, const Tensor& features,
                       const std::vector<Pair>& pairs);

struct MetricTrainResult {
  JointBayesModel model;
  std::vector<double> violation_fraction;  // per epoch
  std::vector<double> objective;           // per epoch, if tracked
};

/// Initializes from cfg.seed (or takes `initial`) and runs cfg.epochs epochs
/// of hinge_step over sampled pairs. Rows of features should be unit length;
/// a warning is printed otherwise.
MetricTrainResult train_metric(const Tensor& features, const std::vector<int>& labels,
                               const MetricTrainConfig& cfg,
                               const JointBayesModel* initial = nullptr);

/// Identity/variation generator x = mu + eps, mu ~ N(0, S_mu) per subject,
/// eps ~ N(0, S_eps) per sample; samples are L2-normalized.
struct SyntheticEmbeddingModel {
  Tensor S_mu;
  Tensor S_eps;
  std::size_t num_subjects = 10;
  std::size_t samples_per_subject = 5;
  std::uint64_t seed = 0;

  static SyntheticEmbeddingModel isotropic(std::size_t d, double var_mu, double var_eps,
                                           std::size_t subjects, std::size_t samples,
                                           std::uint64_t seed);
};

struct LabeledFeatures {
  Tensor features;          // n x d, subject-major order
  std::vector<int> labels;  // subject index per row
};

/// Throws DegenerateError if either covariance is not PSD.
LabeledFeatures generate_synthetic(const SyntheticEmbeddingModel& model);

}  // namespace jv::metric

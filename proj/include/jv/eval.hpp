#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "jv/tensor.hpp"

namespace jv::eval {

struct RocPoint {
  double threshold;  // accept when score >= threshold
  double far;
  double tar;
};

/// Empirical ROC from a full sweep over the distinct scores, in order of
/// decreasing threshold. The first point is (+inf, 0, 0); the last is the
/// minimum score with FAR = TAR = 1.
struct RocCurve {
  std::vector<RocPoint> points;
  std::size_t positives = 0;
  std::size_t negatives = 0;
};

/// labels are +1 (genuine) / -1 (impostor). Throws FormatError when only one
/// class is present.
RocCurve roc(std::span<const double> scores, std::span<const int> labels);

/// TAR of the operating point with the largest FAR not exceeding far (step
/// convention, no interpolation). 0 < far <= 1.
double tar_at_far(const RocCurve& curve, double far);

struct CmcResult {
  std::vector<double> accuracy;  // accuracy[k-1] = rank-k identification rate
  std::size_t probes = 0;        // probes evaluated
  std::size_t skipped = 0;       // probes whose subject is not in the gallery

  /// Rank-k rate; ranks past the gallery size saturate at the last value.
  double at(std::size_t k) const;
};

enum class MissingSubject { error, skip };

/// Closed-set identification over sim[gallery x probe]. A probe's rank is
/// 1 + the number of non-matching gallery entries scoring at least the best
/// matching entry, so ties count against the probe.
CmcResult cmc(const Tensor& sim, const std::vector<std::string>& gallery_subjects,
              const std::vector<std::string>& probe_subjects,
              MissingSubject policy = MissingSubject::error);

struct Aggregate {
  double mean = 0.0;
  double std = 0.0;  // sample (n-1) deviation; 0 for a single value
  std::size_t count = 0;
};

Aggregate aggregate_splits(std::span<const double> values);

struct Fold {
  std::vector<double> scores;
  std::vector<int> labels;  // +1 / -1
};

struct LfwResult {
  std::vector<double> fold_accuracy;
  std::vector<double> thresholds;
  Aggregate summary;
};

/// Candidate thresholds: -inf, the midpoints between consecutive distinct
/// scores, and +inf. Returns the candidate with the best accuracy (score >=
/// threshold means "same"); ties go to the smallest threshold.
double best_threshold(std::span<const double> scores, std::span<const int> labels);
double verification_accuracy(std::span<const double> scores, std::span<const int> labels,
                             double threshold);

/// Ten-fold protocol: each fold is scored at the threshold chosen on the
/// other nine. Throws FormatError unless there are exactly 10 non-empty folds.
LfwResult lfw_protocol(const std::vector<Fold>& folds);

/// Split the pair list into 10 consecutive equal folds and run lfw_protocol.
LfwResult lfw_protocol(std::span<const double> scores, std::span<const int> labels);

struct SplitMetrics {
  int split = 0;
  double tar_far_1e2 = 0.0;
  double tar_far_1e1 = 0.0;
  double rank1 = 0.0;
  double rank5 = 0.0;
  double rank10 = 0.0;
  RocCurve roc;
  CmcResult cmc;
};

struct SplitReport {
  std::string scorer;
  std::vector<SplitMetrics> splits;

  Aggregate aggregate(double SplitMetrics::*field) const;
  /// Plain-text table: one row per split, then mean and std rows.
  std::string to_text() const;
};

/// Verification pairs are every (gallery, probe) cell, genuine when the
/// subjects agree.
SplitMetrics evaluate_split(int split, const Tensor& sim,
                            const std::vector<std::string>& gallery_subjects,
                            const std::vector<std::string>& probe_subjects,
                            MissingSubject policy = MissingSubject::skip);

/// Writes `roc_split<N>.csv` (far,tar) and `cmc_split<N>.csv` (rank,accuracy)
/// for every split in the report.
void emit_curves(const SplitReport& report, const std::filesystem::path& dir);

void write_roc_csv(const std::filesystem::path& path, const RocCurve& curve);
/// (far, tar) pairs as written.
std::vector<std::pair<double, double>> read_roc_csv(const std::filesystem::path& path);
void write_cmc_csv(const std::filesystem::path& path, const CmcResult& cmc);
std::vector<double> read_cmc_csv(const std::filesystem::path& path);

struct PairRecord {
  std::string id_a;
  std::string id_b;
  int label = 0;
};

/// Rows `id_a,id_b,label` with label 1 (same) or 0/-1 (different); an
/// optional `id_a,id_b,label` header line is skipped.
std::vector<PairRecord> read_pair_list(const std::filesystem::path& path);
void write_pair_list(const std::filesystem::path& path, const std::vector<PairRecord>& pairs);

}  // namespace jv::eval

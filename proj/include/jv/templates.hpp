#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "jv/features.hpp"
#include "jv/metric.hpp"
#include "jv/tensor.hpp"

namespace jv::templates {

enum class Role { gallery, probe, train };

const char* to_string(Role r);
Role role_from_string(const std::string& s);

struct ManifestRow {
  std::string template_id;
  std::string subject_id;
  std::string media_path;
  Role role = Role::train;
  int split = 1;
};

/// Comma-separated manifest with header `template_id,subject_id,media_path,role,split`.
struct TemplateManifest {
  std::vector<ManifestRow> rows;

  static TemplateManifest load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  /// Rows of one split and role, in file order.
  std::vector<ManifestRow> select(int split, Role role) const;
  /// Distinct split ids in ascending order.
  std::vector<int> splits() const;
  /// Distinct media paths in first-appearance order.
  std::vector<std::string> media() const;

  /// Throws FormatError when a split's gallery and probe share media or a
  /// template id repeats with different subjects within a role.
  void validate() const;
};

/// Drops media whose |yaw| exceeds max_abs_yaw_deg; media without a yaw
/// entry are kept.
TemplateManifest filter_by_yaw(const TemplateManifest& manifest,
                               const std::map<std::string, double>& yaw_deg,
                               double max_abs_yaw_deg = 25.0);

struct Template {
  std::string template_id;
  std::string subject_id;
  std::vector<std::string> media;
  std::vector<double> pooled_feature;
};

/// Mean of the (unit) per-medium features, renormalized to unit length.
/// Throws on an empty list or a zero mean.
std::vector<double> pool_template(const std::vector<std::span<const double>>& features);

/// Group rows by template id (first-appearance order) and pool each
/// template's media features.
std::vector<Template> build_templates(const std::vector<ManifestRow>& rows,
                                      const FeatureSet& media_features);

/// Scores a (gallery, probe) feature pair.
using Scorer = std::function<double(std::span<const double>, std::span<const double>)>;

Scorer cosine_scorer();
Scorer joint_bayes_scorer(const metric::JointBayesModel& model);

/// Dense |gallery| x |probe| similarity matrix in input order. The expected
/// feature dimension, when given, is checked against every template.
Tensor score_templates(const Scorer& scorer, const std::vector<Template>& gallery,
                       const std::vector<Template>& probe,
                       std::optional<std::size_t> expected_dim = std::nullopt);

/// Elementwise sum.
Tensor fuse_scores(const Tensor& s1, const Tensor& s2);

struct SimilarityMatrix {
  std::vector<std::string> gallery_ids;
  std::vector<std::string> probe_ids;
  Tensor scores;  // gallery x probe
};

/// First row: `gallery\probe,<probe ids...>`; each following row starts with
/// the gallery id. Values printed with 17 significant digits.
void write_similarity_matrix(const std::filesystem::path& path, const SimilarityMatrix& m);
SimilarityMatrix read_similarity_matrix(const std::filesystem::path& path);

}  // namespace jv::templates

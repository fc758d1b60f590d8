#include "jv/templates.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <unordered_map>

#include "jv/csv.hpp"
#include "jv/error.hpp"

namespace jv::templates {

namespace {
constexpr const char* kManifestHeader = "template_id,subject_id,media_path,role,split";
}

const char* to_string(Role r) {
  switch (r) {
    case Role::gallery: return "gallery";
    case Role::probe: return "probe";
    case Role::train: return "train";
  }
  return "?";
}

Role role_from_string(const std::string& s) {
  if (s == "gallery") return Role::gallery;
  if (s == "probe") return Role::probe;
  if (s == "train") return Role::train;
  throw FormatError("unknown role '" + s + "'");
}

TemplateManifest TemplateManifest::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::string line;
  if (!std::getline(in, line) || csv::split(line) != csv::split(kManifestHeader))
    throw FormatError(path.string() + ": expected header " + kManifestHeader);
  TemplateManifest m;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto f = csv::split(line);
    const auto where = path.string() + ":" + std::to_string(lineno);
    if (f.size() != 5) throw FormatError(where + ": expected 5 fields");
    ManifestRow row{f[0], f[1], f[2], Role::train, 0};
    try {
      row.role = role_from_string(f[3]);
      row.split = std::stoi(f[4]);
    } catch (const FormatError&) {
      throw FormatError(where + ": bad role '" + f[3] + "'");
    } catch (const std::exception&) {
      throw FormatError(where + ": bad split '" + f[4] + "'");
    }
    if (row.template_id.empty() || row.subject_id.empty() || row.media_path.empty())
      throw FormatError(where + ": empty field");
    m.rows.push_back(std::move(row));
  }
  return m;
}

void TemplateManifest::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << kManifestHeader << '\n';
  for (const auto& r : rows)
    out << r.template_id << ',' << r.subject_id << ',' << r.media_path << ',' << to_string(r.role)
        << ',' << r.split << '\n';
}

std::vector<ManifestRow> TemplateManifest::select(int split, Role role) const {
  std::vector<ManifestRow> out;
  for (const auto& r : rows)
    if (r.split == split && r.role == role) out.push_back(r);
  return out;
}

std::vector<int> TemplateManifest::splits() const {
  std::set<int> s;
  for (const auto& r : rows) s.insert(r.split);
  return {s.begin(), s.end()};
}

std::vector<std::string> TemplateManifest::media() const {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& r : rows)
    if (seen.insert(r.media_path).second) out.push_back(r.media_path);
  return out;
}

void TemplateManifest::validate() const {
  for (int split : splits()) {
    std::set<std::string> gallery_media;
    for (const auto& r : select(split, Role::gallery)) gallery_media.insert(r.media_path);
    for (const auto& r : select(split, Role::probe))
      if (gallery_media.count(r.media_path))
        throw FormatError("split " + std::to_string(split) + ": medium " + r.media_path +
                          " is in both gallery and probe");
    for (Role role : {Role::gallery, Role::probe, Role::train}) {
      std::map<std::string, std::string> subject_of;
      for (const auto& r : select(split, role)) {
        auto [it, fresh] = subject_of.emplace(r.template_id, r.subject_id);
        if (!fresh && it->second != r.subject_id)
          throw FormatError("split " + std::to_string(split) + ": template " + r.template_id +
                            " has several subjects in role " + to_string(role));
      }
    }
  }
}

TemplateManifest filter_by_yaw(const TemplateManifest& manifest,
                               const std::map<std::string, double>& yaw_deg,
                               double max_abs_yaw_deg) {
  TemplateManifest out;
  for (const auto& r : manifest.rows) {
    auto it = yaw_deg.find(r.media_path);
    if (it != yaw_deg.end() && std::abs(it->second) > max_abs_yaw_deg) continue;
    out.rows.push_back(r);
  }
  return out;
}

std::vector<double> pool_template(const std::vector<std::span<const double>>& features) {
  if (features.empty()) throw DimensionError("pool_template: template has no media");
  const std::size_t d = features.front().size();
  std::vector<double> mean(d, 0.0);
  for (const auto& f : features) {
    if (f.size() != d) throw DimensionError("pool_template: feature dimensions differ");
    for (std::size_t k = 0; k < d; ++k) mean[k] += f[k];
  }
  for (auto& v : mean) v /= static_cast<double>(features.size());
  try {
    return l2_normalize(mean);
  } catch (const DegenerateError&) {
    throw DegenerateError("pool_template: media features cancel to a zero mean");
  }
}

std::vector<Template> build_templates(const std::vector<ManifestRow>& rows,
                                      const FeatureSet& media_features) {
  std::unordered_map<std::string, std::size_t> row_of;
  for (std::size_t i = 0; i < media_features.ids.size(); ++i) row_of.emplace(media_features.ids[i], i);

  std::vector<Template> out;
  std::unordered_map<std::string, std::size_t> index;
  for (const auto& r : rows) {
    auto [it, fresh] = index.emplace(r.template_id, out.size());
    if (fresh) out.push_back({r.template_id, r.subject_id, {}, {}});
    out[it->second].media.push_back(r.media_path);
  }
  for (auto& t : out) {
    std::vector<std::span<const double>> feats;
    for (const auto& m : t.media) {
      auto it = row_of.find(m);
      if (it == row_of.end()) throw FormatError("no feature for medium " + m);
      feats.push_back(media_features.rows.row(it->second));
    }
    t.pooled_feature = pool_template(feats);
  }
  return out;
}

Scorer cosine_scorer() {
  return [](std::span<const double> a, std::span<const double> b) { return metric::cosine_score(a, b); };
}

Scorer joint_bayes_scorer(const metric::JointBayesModel& model) {
  return [model](std::span<const double> a, std::span<const double> b) {
    return metric::similarity(model, a, b);
  };
}

Tensor score_templates(const Scorer& scorer, const std::vector<Template>& gallery,
                       const std::vector<Template>& probe, std::optional<std::size_t> expected_dim) {
  if (gallery.empty() || probe.empty()) throw DimensionError("score_templates: empty gallery or probe");
  const std::size_t d = expected_dim.value_or(gallery.front().pooled_feature.size());
  for (const auto* set : {&gallery, &probe})
    for (const auto& t : *set)
      if (t.pooled_feature.size() != d)
        throw DimensionError("score_templates: template " + t.template_id + " has dimension " +
                             std::to_string(t.pooled_feature.size()) + ", expected " +
                             std::to_string(d));
  Tensor s({gallery.size(), probe.size()});
  for (std::size_t g = 0; g < gallery.size(); ++g)
    for (std::size_t p = 0; p < probe.size(); ++p)
      s(g, p) = scorer(gallery[g].pooled_feature, probe[p].pooled_feature);
  return s;
}

Tensor fuse_scores(const Tensor& s1, const Tensor& s2) {
  if (s1.shape() != s2.shape()) throw DimensionError("fuse_scores: matrix shapes differ");
  return add(s1, s2);
}

void write_similarity_matrix(const std::filesystem::path& path, const SimilarityMatrix& m) {
  if (m.scores.rank() != 2 || m.scores.rows() != m.gallery_ids.size() ||
      m.scores.cols() != m.probe_ids.size())
    throw DimensionError("write_similarity_matrix: labels do not match matrix");
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "gallery\\probe";
  for (const auto& p : m.probe_ids) out << ',' << p;
  out << '\n';
  for (std::size_t g = 0; g < m.gallery_ids.size(); ++g) {
    out << m.gallery_ids[g];
    for (std::size_t p = 0; p < m.probe_ids.size(); ++p) out << ',' << csv::format_double(m.scores(g, p));
    out << '\n';
  }
}

SimilarityMatrix read_similarity_matrix(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path.string() + ": empty file");
  auto head = csv::split(line);
  if (head.size() < 2) throw FormatError(path.string() + ": no probe columns");
  SimilarityMatrix m;
  m.probe_ids.assign(head.begin() + 1, head.end());
  std::vector<double> values;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto f = csv::split(line);
    if (f.size() != head.size()) throw FormatError(path.string() + ": ragged row");
    m.gallery_ids.push_back(f[0]);
    for (std::size_t i = 1; i < f.size(); ++i) {
      try {
        values.push_back(std::stod(f[i]));
      } catch (const std::exception&) {
        throw FormatError(path.string() + ": bad score '" + f[i] + "'");
      }
    }
  }
  if (m.gallery_ids.empty()) throw FormatError(path.string() + ": no gallery rows");
  m.scores = Tensor({m.gallery_ids.size(), m.probe_ids.size()}, std::move(values));
  return m;
}

}  // namespace jv::templates

#include "jv/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "jv/csv.hpp"
#include "jv/error.hpp"

namespace jv::eval {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();

std::string fixed6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}
}  // namespace

RocCurve roc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw DimensionError("roc: scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });
  RocCurve curve;
  for (int l : labels) {
    if (l == 1)
      ++curve.positives;
    else if (l == -1)
      ++curve.negatives;
    else
      throw FormatError("roc: labels must be +1 or -1");
  }
  if (curve.positives == 0 || curve.negatives == 0)
    throw FormatError("roc: need at least one genuine and one impostor score");
  const double np = static_cast<double>(curve.positives), nn = static_cast<double>(curve.negatives);
  curve.points.push_back({kInf, 0.0, 0.0});
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double t = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == t; ++i) (labels[order[i]] == 1 ? tp : fp)++;
    curve.points.push_back({t, static_cast<double>(fp) / nn, static_cast<double>(tp) / np});
  }
  return curve;
}

double tar_at_far(const RocCurve& curve, double far) {
  if (!(far > 0.0 && far <= 1.0)) throw FormatError("tar_at_far: far must be in (0, 1]");
  double tar = 0.0;
  for (const auto& p : curve.points) {
    if (p.far > far) break;
    tar = p.tar;
  }
  return tar;
}

double CmcResult::at(std::size_t k) const {
  if (k == 0 || accuracy.empty()) throw FormatError("CmcResult::at: rank must be >= 1");
  return accuracy[std::min(k, accuracy.size()) - 1];
}

CmcResult cmc(const Tensor& sim, const std::vector<std::string>& gallery_subjects,
              const std::vector<std::string>& probe_subjects, MissingSubject policy) {
  if (sim.rank() != 2 || sim.rows() != gallery_subjects.size() || sim.cols() != probe_subjects.size())
    throw DimensionError("cmc: matrix shape does not match subject lists");
  const std::size_t g = gallery_subjects.size();
  CmcResult result;
  std::vector<std::size_t> hits(g, 0);
  for (std::size_t p = 0; p < probe_subjects.size(); ++p) {
    double best = -kInf;
    bool found = false;
    for (std::size_t i = 0; i < g; ++i)
      if (gallery_subjects[i] == probe_subjects[p]) {
        best = found ? std::max(best, sim(i, p)) : sim(i, p);
        found = true;
      }
    if (!found) {
      if (policy == MissingSubject::error)
        throw FormatError("cmc: probe subject " + probe_subjects[p] + " is not in the gallery");
      ++result.skipped;
      continue;
    }
    std::size_t ahead = 0;
    for (std::size_t i = 0; i < g; ++i)
      if (gallery_subjects[i] != probe_subjects[p] && sim(i, p) >= best) ++ahead;
    ++hits[ahead];
    ++result.probes;
  }
  result.accuracy.assign(g, 0.0);
  std::size_t cum = 0;
  for (std::size_t k = 0; k < g; ++k) {
    cum += hits[k];
    result.accuracy[k] = result.probes ? static_cast<double>(cum) / static_cast<double>(result.probes) : 0.0;
  }
  return result;
}

Aggregate aggregate_splits(std::span<const double> values) {
  if (values.empty()) throw FormatError("aggregate_splits: no values");
  Aggregate a;
  a.count = values.size();
  // a constant list has zero spread exactly, whatever the summation rounding
  if (std::all_of(values.begin(), values.end(), [&](double v) { return v == values[0]; })) {
    a.mean = values[0];
    return a;
  }
  a.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(a.count);
  if (a.count > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - a.mean) * (v - a.mean);
    a.std = std::sqrt(ss / static_cast<double>(a.count - 1));
  }
  return a;
}

double verification_accuracy(std::span<const double> scores, std::span<const int> labels,
                             double threshold) {
  if (scores.empty() || scores.size() != labels.size())
    throw DimensionError("verification_accuracy: bad pair list");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if ((scores[i] >= threshold) == (labels[i] == 1)) ++correct;
  return static_cast<double>(correct) / static_cast<double>(scores.size());
}

double best_threshold(std::span<const double> scores, std::span<const int> labels) {
  if (scores.empty() || scores.size() != labels.size())
    throw DimensionError("best_threshold: bad pair list");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Sweep upward: at -inf everything is accepted, so correct = #positives.
  std::size_t correct = 0;
  for (int l : labels)
    if (l == 1) ++correct;
  std::size_t best_correct = correct;
  double best = -kInf;
  for (std::size_t i = 0; i < order.size();) {
    const double v = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == v; ++i) {
      if (labels[order[i]] == 1)
        --correct;
      else
        ++correct;
    }
    const double t = i < order.size() ? v + (scores[order[i]] - v) / 2.0 : kInf;
    if (correct > best_correct) {
      best_correct = correct;
      best = t;
    }
  }
  return best;
}

LfwResult lfw_protocol(const std::vector<Fold>& folds) {
  if (folds.size() != 10) throw FormatError("lfw_protocol: expected 10 folds, got " + std::to_string(folds.size()));
  for (const auto& f : folds)
    if (f.scores.empty() || f.scores.size() != f.labels.size())
      throw FormatError("lfw_protocol: malformed fold");
  LfwResult r;
  for (std::size_t held = 0; held < folds.size(); ++held) {
    std::vector<double> s;
    std::vector<int> l;
    for (std::size_t f = 0; f < folds.size(); ++f) {
      if (f == held) continue;
      s.insert(s.end(), folds[f].scores.begin(), folds[f].scores.end());
      l.insert(l.end(), folds[f].labels.begin(), folds[f].labels.end());
    }
    const double t = best_threshold(s, l);
    r.thresholds.push_back(t);
    r.fold_accuracy.push_back(verification_accuracy(folds[held].scores, folds[held].labels, t));
  }
  r.summary = aggregate_splits(r.fold_accuracy);
  return r;
}

LfwResult lfw_protocol(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size() || scores.size() < 10 || scores.size() % 10 != 0)
    throw FormatError("lfw_protocol: pair count must be a positive multiple of 10");
  const std::size_t per = scores.size() / 10;
  std::vector<Fold> folds(10);
  for (std::size_t f = 0; f < 10; ++f) {
    folds[f].scores.assign(scores.begin() + static_cast<std::ptrdiff_t>(f * per),
                           scores.begin() + static_cast<std::ptrdiff_t>((f + 1) * per));
    folds[f].labels.assign(labels.begin() + static_cast<std::ptrdiff_t>(f * per),
                           labels.begin() + static_cast<std::ptrdiff_t>((f + 1) * per));
  }
  return lfw_protocol(folds);
}

Aggregate SplitReport::aggregate(double SplitMetrics::*field) const {
  std::vector<double> v;
  for (const auto& s : splits) v.push_back(s.*field);
  return aggregate_splits(v);
}

std::string SplitReport::to_text() const {
  std::ostringstream os;
  os << "# verification (TAR@FAR) and identification (CMC) report\n";
  os << "scorer: " << scorer << '\n';
  os << "splits: " << splits.size() << "\n\n";
  os << "split,tar@far=0.01,tar@far=0.1,rank1,rank5,rank10,genuine,impostor,probes\n";
  for (const auto& s : splits)
    os << s.split << ',' << fixed6(s.tar_far_1e2) << ',' << fixed6(s.tar_far_1e1) << ','
       << fixed6(s.rank1) << ',' << fixed6(s.rank5) << ',' << fixed6(s.rank10) << ','
       << s.roc.positives << ',' << s.roc.negatives << ',' << s.cmc.probes << '\n';
  if (splits.empty()) return os.str();
  double SplitMetrics::*fields[] = {&SplitMetrics::tar_far_1e2, &SplitMetrics::tar_far_1e1,
                                          &SplitMetrics::rank1, &SplitMetrics::rank5,
                                          &SplitMetrics::rank10};
  os << "\nmetric,mean,std\n";
  const char* names[] = {"tar@far=0.01", "tar@far=0.1", "rank1", "rank5", "rank10"};
  for (std::size_t i = 0; i < 5; ++i) {
    const auto a = aggregate(fields[i]);
    os << names[i] << ',' << fixed6(a.mean) << ',' << fixed6(a.std) << '\n';
  }
  return os.str();
}

SplitMetrics evaluate_split(int split, const Tensor& sim, const std::vector<std::string>& gallery_subjects,
                            const std::vector<std::string>& probe_subjects, MissingSubject policy) {
  if (sim.rank() != 2 || sim.rows() != gallery_subjects.size() || sim.cols() != probe_subjects.size())
    throw DimensionError("evaluate_split: matrix shape does not match subject lists");
  std::vector<double> scores;
  std::vector<int> labels;
  for (std::size_t g = 0; g < sim.rows(); ++g)
    for (std::size_t p = 0; p < sim.cols(); ++p) {
      scores.push_back(sim(g, p));
      labels.push_back(gallery_subjects[g] == probe_subjects[p] ? 1 : -1);
    }
  SplitMetrics m;
  m.split = split;
  m.roc = roc(scores, labels);
  m.tar_far_1e2 = tar_at_far(m.roc, 1e-2);
  m.tar_far_1e1 = tar_at_far(m.roc, 1e-1);
  m.cmc = cmc(sim, gallery_subjects, probe_subjects, policy);
  if (m.cmc.probes == 0) throw FormatError("evaluate_split: no probe subject is in the gallery");
  m.rank1 = m.cmc.at(1);
  m.rank5 = m.cmc.at(5);
  m.rank10 = m.cmc.at(10);
  return m;
}

void write_roc_csv(const std::filesystem::path& path, const RocCurve& curve) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "far,tar\n";
  for (const auto& p : curve.points) out << csv::format_double(p.far) << ',' << csv::format_double(p.tar) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<std::pair<double, double>> read_roc_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "far,tar") throw FormatError(path.string() + ": bad header");
  std::vector<std::pair<double, double>> pts;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = csv::split(line);
    if (f.size() != 2) throw FormatError(path.string() + ": bad row");
    pts.emplace_back(std::stod(f[0]), std::stod(f[1]));
  }
  return pts;
}

void write_cmc_csv(const std::filesystem::path& path, const CmcResult& cmc) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "rank,accuracy\n";
  for (std::size_t k = 0; k < cmc.accuracy.size(); ++k)
    out << k + 1 << ',' << csv::format_double(cmc.accuracy[k]) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<double> read_cmc_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "rank,accuracy") throw FormatError(path.string() + ": bad header");
  std::vector<double> acc;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = csv::split(line);
    if (f.size() != 2 || std::stoul(f[0]) != acc.size() + 1) throw FormatError(path.string() + ": bad row");
    acc.push_back(std::stod(f[1]));
  }
  return acc;
}

void emit_curves(const SplitReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& s : report.splits) {
    const auto id = std::to_string(s.split);
    write_roc_csv(dir / ("roc_split" + id + ".csv"), s.roc);
    write_cmc_csv(dir / ("cmc_split" + id + ".csv"), s.cmc);
  }
}

std::vector<PairRecord> read_pair_list(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open pair list " + path.string());
  std::vector<PairRecord> pairs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto f = csv::split(line);
    if (lineno == 1 && f == std::vector<std::string>{"id_a", "id_b", "label"}) continue;
    if (f.size() != 3) throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected id_a,id_b,label");
    int label;
    if (f[2] == "1" || f[2] == "+1")
      label = 1;
    else if (f[2] == "0" || f[2] == "-1")
      label = -1;
    else
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": bad label '" + f[2] + "'");
    pairs.push_back({f[0], f[1], label});
  }
  return pairs;
}

void write_pair_list(const std::filesystem::path& path, const std::vector<PairRecord>& pairs) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "id_a,id_b,label\n";
  for (const auto& p : pairs) out << p.id_a << ',' << p.id_b << ',' << p.label << '\n';
}

}  // namespace jv::eval

// jvface: face verification pipeline driver.
//
//   jvface synth  --subjects 30 --splits 2 --features-out f.jvfe --manifest-out m.csv
//   jvface report --config run.ini --scorer jointbayes
//
// Every subcommand writes its resolved configuration next to its outputs.

#include <cmath>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "jv/csv.hpp"
#include "jv/pipeline.hpp"

namespace fs = std::filesystem;
using namespace jv;
using jv::pipeline::PipelineConfig;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string scorer;
  std::optional<int> splits;
};

PipelineConfig resolve(const Common& c) {
  PipelineConfig cfg;
  if (!c.config.empty()) cfg = PipelineConfig::from_config(Config::load(c.config));
  if (c.seed) cfg.seed = *c.seed;
  if (!c.scorer.empty()) cfg.scorer = c.scorer;
  if (c.splits) cfg.splits = *c.splits;
  return cfg;
}

void echo(const PipelineConfig& cfg, const fs::path& output, const std::string& command,
          const std::vector<std::pair<std::string, std::string>>& extra = {}) {
  Config out = cfg.to_config();
  out.set("run", "command", command);
  for (const auto& [k, v] : extra) out.set("run", k, v);
  const fs::path path = fs::is_directory(output) ? output / "config.resolved.ini"
                                                 : fs::path(output.string() + ".config.ini");
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << out.to_string();
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

templates::Scorer make_scorer(const std::string& name, const std::string& model_path) {
  if (name == "cosine") return templates::cosine_scorer();
  if (name != "jointbayes") throw FormatError("unknown scorer '" + name + "'");
  if (model_path.empty()) throw FormatError("--scorer jointbayes needs --model");
  return templates::joint_bayes_scorer(metric::JointBayesModel::load(model_path));
}

std::vector<templates::Template> as_templates(const FeatureSet& f) {
  std::vector<templates::Template> out(f.count());
  for (std::size_t i = 0; i < f.count(); ++i) {
    out[i].template_id = f.ids[i];
    const auto r = f.rows.row(i);
    out[i].pooled_feature.assign(r.begin(), r.end());
  }
  return out;
}

std::vector<std::string> subjects_of(const templates::TemplateManifest& m, int split, templates::Role role,
                                     const std::vector<std::string>& ids) {
  std::map<std::string, std::string> subject;
  for (const auto& r : m.select(split, role)) subject.emplace(r.template_id, r.subject_id);
  std::vector<std::string> out;
  for (const auto& id : ids) {
    auto it = subject.find(id);
    if (it == subject.end())
      throw FormatError("template " + id + " is not a " + templates::to_string(role) + " template of split " +
                        std::to_string(split));
    out.push_back(it->second);
  }
  return out;
}

void print_metrics(const eval::SplitMetrics& m) {
  std::cout << "split " << m.split << ": TAR@FAR=0.01 " << m.tar_far_1e2 << "  TAR@FAR=0.1 " << m.tar_far_1e1
            << "  rank-1 " << m.rank1 << "  rank-5 " << m.rank5 << "  rank-10 " << m.rank10 << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Face verification pipeline: align, train, extract, pool, score, evaluate."};
  app.require_subcommand(1);
  app.fallthrough();

  Common common;
  app.add_option("--config", common.config, "Sectioned key=value configuration file")->check(CLI::ExistingFile);
  app.add_option("--seed", common.seed, "Root seed (overrides the configuration)");
  app.add_option("--scorer", common.scorer, "cosine or jointbayes")
      ->check(CLI::IsMember({"cosine", "jointbayes"}));
  app.add_option("--splits", common.splits, "Number of splits")->check(CLI::NonNegativeNumber);

  // align
  auto* align_cmd = app.add_subcommand("align", "Align images to the canonical frame using landmark rows");
  std::string landmarks, image_dir, out_dir;
  align_cmd->add_option("--landmarks", landmarks, "Landmark file (path + 14 coordinates per row)")->required();
  align_cmd->add_option("--images", image_dir, "Input image directory")->required();
  align_cmd->add_option("--out", out_dir, "Output directory")->required();

  // train-cnn
  auto* train_cmd = app.add_subcommand("train-cnn", "Train the classification network on manifest media");
  std::string manifest, network_out;
  std::optional<std::size_t> iters;
  train_cmd->add_option("--manifest", manifest, "Manifest (overrides [paths] manifest)");
  train_cmd->add_option("--images", image_dir, "Aligned image directory (overrides [paths] images)");
  train_cmd->add_option("--out", network_out, "Network checkpoint to write")->required();
  train_cmd->add_option("--iters", iters, "Iteration budget (overrides [cnn] max_iters)");

  // extract
  auto* extract_cmd = app.add_subcommand("extract", "Extract normalized Pool5 features for every medium");
  std::string network_in, features_out;
  extract_cmd->add_option("--network", network_in, "Network checkpoint")->required();
  extract_cmd->add_option("--manifest", manifest, "Manifest")->required();
  extract_cmd->add_option("--images", image_dir, "Aligned image directory")->required();
  extract_cmd->add_option("--out", features_out, "Feature file to write")->required();

  // pool
  auto* pool_cmd = app.add_subcommand("pool", "Pool media features into template features");
  std::string features_in, role = "gallery";
  int split = 1;
  pool_cmd->add_option("--manifest", manifest, "Manifest")->required();
  pool_cmd->add_option("--features", features_in, "Media feature file")->required();
  pool_cmd->add_option("--split", split, "Split id");
  pool_cmd->add_option("--role", role, "gallery, probe or train")->check(CLI::IsMember({"gallery", "probe", "train"}));
  pool_cmd->add_option("--out", features_out, "Template feature file to write")->required();

  // train-metric
  auto* metric_cmd = app.add_subcommand("train-metric", "Train the joint Bayes metric on a split's train media");
  std::string model_out;
  metric_cmd->add_option("--manifest", manifest, "Manifest")->required();
  metric_cmd->add_option("--features", features_in, "Media feature file")->required();
  metric_cmd->add_option("--split", split, "Split id");
  metric_cmd->add_option("--out", model_out, "Model file to write")->required();

  // score
  auto* score_cmd = app.add_subcommand("score", "Score gallery templates against probe templates");
  std::string gallery_in, probe_in, model_in, sim_out;
  score_cmd->add_option("--gallery", gallery_in, "Gallery template features")->required();
  score_cmd->add_option("--probe", probe_in, "Probe template features")->required();
  score_cmd->add_option("--model", model_in, "Joint Bayes model (for --scorer jointbayes)");
  score_cmd->add_option("--out", sim_out, "Similarity matrix to write")->required();

  // evaluate
  auto* eval_cmd = app.add_subcommand("evaluate", "ROC/CMC on a similarity matrix, or 10-fold pair accuracy");
  std::string sim_in, pairs_in;
  eval_cmd->add_option("--similarity", sim_in, "Similarity matrix");
  eval_cmd->add_option("--manifest", manifest, "Manifest giving template subjects");
  eval_cmd->add_option("--split", split, "Split id");
  eval_cmd->add_option("--pairs", pairs_in, "Pair list id_a,id_b,label");
  eval_cmd->add_option("--features", features_in, "Features addressed by the pair list");
  eval_cmd->add_option("--model", model_in, "Joint Bayes model (for --scorer jointbayes)");
  eval_cmd->add_option("--out", out_dir, "Directory for curve files");

  // fuse
  auto* fuse_cmd = app.add_subcommand("fuse", "Sum two similarity matrices with identical ids");
  std::string sim_a, sim_b;
  fuse_cmd->add_option("--a", sim_a, "First similarity matrix")->required();
  fuse_cmd->add_option("--b", sim_b, "Second similarity matrix")->required();
  fuse_cmd->add_option("--out", sim_out, "Fused matrix to write")->required();

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "Generate synthetic identity features and a manifest");
  pipeline::SynthOptions synth;
  std::string manifest_out;
  synth_cmd->add_option("--subjects", synth.subjects, "Number of subjects");
  synth_cmd->add_option("--samples", synth.samples, "Samples per subject");
  synth_cmd->add_option("--dim", synth.dim, "Feature dimension");
  synth_cmd->add_option("--var-mu", synth.var_mu, "Identity variance per dimension");
  synth_cmd->add_option("--var-eps", synth.var_eps, "Within-subject variance per dimension");
  synth_cmd->add_option("--train-fraction", synth.train_fraction, "Fraction of subjects used for training");
  synth_cmd->add_option("--gallery-media", synth.gallery_media, "Samples pooled into each gallery template");
  synth_cmd->add_option("--features-out", features_out, "Feature file to write")->required();
  synth_cmd->add_option("--manifest-out", manifest_out, "Manifest to write")->required();

  // report
  auto* report_cmd = app.add_subcommand("report", "Run extract, pool, train-metric, score and evaluate end to end");
  report_cmd->add_option("--out", out_dir, "Output directory (overrides [paths] out_dir)");

  CLI11_PARSE(app, argc, argv);

  try {
    PipelineConfig cfg = resolve(common);

    if (*align_cmd) {
      const auto s = pipeline::run_align(landmarks, image_dir, out_dir, cfg.frame, std::cerr);
      echo(cfg, out_dir, "align", {{"landmarks", landmarks}, {"images", image_dir}});
      std::cout << "aligned " << s.written << " images, " << s.warnings << " warnings\n";
    } else if (*train_cmd) {
      if (!manifest.empty()) cfg.manifest = manifest;
      if (!image_dir.empty()) cfg.images = image_dir;
      if (iters) cfg.cnn.train.max_iters = *iters;
      ensure_parent(network_out);
      const auto r = pipeline::run_train_cnn(cfg, network_out, std::cerr);
      echo(cfg, network_out, "train-cnn");
      std::cout << "final loss " << (r.loss_curve.empty() ? NAN : r.loss_curve.back()) << '\n';
    } else if (*extract_cmd) {
      auto net = net::Network::load(network_in);
      const auto m = templates::TemplateManifest::load(manifest);
      const auto f = pipeline::run_extract(net, m, image_dir);
      ensure_parent(features_out);
      write_features(features_out, f);
      echo(cfg, features_out, "extract", {{"network", network_in}});
      std::cout << "extracted " << f.count() << " features of dimension " << f.dim() << '\n';
    } else if (*pool_cmd) {
      const auto m = templates::TemplateManifest::load(manifest);
      const auto f = pipeline::pool_features(m, read_features(features_in), split,
                                             templates::role_from_string(role));
      ensure_parent(features_out);
      write_features(features_out, f);
      echo(cfg, features_out, "pool", {{"split", std::to_string(split)}, {"role", role}});
      std::cout << "pooled " << f.count() << " templates\n";
    } else if (*metric_cmd) {
      const auto m = templates::TemplateManifest::load(manifest);
      auto mcfg = cfg.metric;
      mcfg.seed = cfg.stage_seed("train-metric.split" + std::to_string(split));
      const auto r = pipeline::train_split_metric(m, read_features(features_in), split, mcfg);
      ensure_parent(model_out);
      r.model.save(model_out);
      echo(cfg, model_out, "train-metric", {{"split", std::to_string(split)}});
      for (std::size_t e = 0; e < r.violation_fraction.size(); ++e)
        std::cout << "epoch " << e + 1 << " violation fraction " << r.violation_fraction[e] << '\n';
    } else if (*score_cmd) {
      const auto scorer = make_scorer(cfg.scorer, model_in);
      const auto g = read_features(gallery_in), p = read_features(probe_in);
      templates::SimilarityMatrix sim{g.ids, p.ids, templates::score_templates(scorer, as_templates(g), as_templates(p))};
      ensure_parent(sim_out);
      templates::write_similarity_matrix(sim_out, sim);
      echo(cfg, sim_out, "score", {{"gallery", gallery_in}, {"probe", probe_in}, {"model", model_in}});
      std::cout << "scored " << g.count() << " x " << p.count() << '\n';
    } else if (*eval_cmd) {
      if (!sim_in.empty()) {
        if (manifest.empty()) throw FormatError("evaluate --similarity needs --manifest");
        const auto m = templates::TemplateManifest::load(manifest);
        const auto sim = templates::read_similarity_matrix(sim_in);
        const auto metrics = eval::evaluate_split(split, sim.scores,
                                                  subjects_of(m, split, templates::Role::gallery, sim.gallery_ids),
                                                  subjects_of(m, split, templates::Role::probe, sim.probe_ids));
        print_metrics(metrics);
        if (!out_dir.empty()) {
          eval::SplitReport report{cfg.scorer, {metrics}};
          eval::emit_curves(report, out_dir);
          echo(cfg, out_dir, "evaluate", {{"similarity", sim_in}, {"split", std::to_string(split)}});
        }
      } else if (!pairs_in.empty()) {
        if (features_in.empty()) throw FormatError("evaluate --pairs needs --features");
        const auto f = read_features(features_in);
        const auto scorer = make_scorer(cfg.scorer, model_in);
        std::vector<double> scores;
        std::vector<int> labels;
        for (const auto& pr : eval::read_pair_list(pairs_in)) {
          scores.push_back(scorer(f.rows.row(f.index_of(pr.id_a)), f.rows.row(f.index_of(pr.id_b))));
          labels.push_back(pr.label == 1 ? 1 : -1);
        }
        const auto r = eval::lfw_protocol(scores, labels);
        for (std::size_t k = 0; k < r.fold_accuracy.size(); ++k)
          std::cout << "fold " << k + 1 << " threshold " << r.thresholds[k] << " accuracy " << r.fold_accuracy[k]
                    << '\n';
        std::cout << "accuracy " << r.summary.mean << " +- " << r.summary.std << '\n';
      } else {
        throw FormatError("evaluate needs --similarity or --pairs");
      }
    } else if (*fuse_cmd) {
      auto a = templates::read_similarity_matrix(sim_a);
      const auto b = templates::read_similarity_matrix(sim_b);
      if (a.gallery_ids != b.gallery_ids || a.probe_ids != b.probe_ids)
        throw FormatError("fuse: matrices have different gallery or probe ids");
      a.scores = templates::fuse_scores(a.scores, b.scores);
      ensure_parent(sim_out);
      templates::write_similarity_matrix(sim_out, a);
      echo(cfg, sim_out, "fuse", {{"a", sim_a}, {"b", sim_b}});
    } else if (*synth_cmd) {
      synth.seed = cfg.seed;
      if (common.splits) synth.splits = *common.splits;
      ensure_parent(features_out);
      ensure_parent(manifest_out);
      pipeline::run_synth(synth, features_out, manifest_out);
      echo(cfg, features_out, "synth",
           {{"subjects", std::to_string(synth.subjects)},
            {"samples", std::to_string(synth.samples)},
            {"dim", std::to_string(synth.dim)},
            {"var_mu", csv::format_double(synth.var_mu)},
            {"var_eps", csv::format_double(synth.var_eps)},
            {"splits", std::to_string(synth.splits)},
            {"train_fraction", csv::format_double(synth.train_fraction)},
            {"gallery_media", std::to_string(synth.gallery_media)}});
      std::cout << "wrote " << synth.subjects * synth.samples << " features of dimension " << synth.dim << '\n';
    } else if (*report_cmd) {
      if (!out_dir.empty()) cfg.out_dir = out_dir;
      const auto report = pipeline::run_pipeline(cfg, std::cerr);
      std::cout << report.to_text();
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

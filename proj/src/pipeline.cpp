#include "jv/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <tuple>
#include <unordered_map>

#include "jv/csv.hpp"
#include "jv/error.hpp"
#include "jv/image.hpp"

namespace jv::pipeline {

namespace {

template <typename F>
auto staged(const std::string& stage, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

void require_file(const fs::path& p, const std::string& what) {
  if (p.empty()) throw StageError("config", what + " path is not set");
  if (!fs::exists(p)) throw StageError("config", what + " not found: " + p.string());
}

std::string yes_no(bool b) { return b ? "true" : "false"; }

net::InitScheme scheme_from_string(const std::string& s) {
  if (s == "gaussian") return net::InitScheme::gaussian;
  if (s == "msra") return net::InitScheme::msra;
  throw FormatError("unknown init scheme '" + s + "' (gaussian|msra)");
}

}  // namespace

PipelineConfig PipelineConfig::from_config(const Config& c) {
  PipelineConfig p;
  p.manifest = c.get("paths", "manifest", "");
  p.features = c.get("paths", "features", "");
  p.images = c.get("paths", "images", "");
  p.network = c.get("paths", "network", "");
  p.landmarks = c.get("paths", "landmarks", "");
  p.out_dir = c.get("paths", "out_dir", p.out_dir.string());
  p.scorer = c.get("pipeline", "scorer", p.scorer);
  p.splits = static_cast<int>(c.get_int("pipeline", "splits", p.splits));
  p.seed = static_cast<std::uint64_t>(c.get_int("pipeline", "seed", 0));

  auto& t = p.cnn.train;
  t.batch_size = static_cast<std::size_t>(c.get_int("cnn", "batch_size", static_cast<long long>(t.batch_size)));
  t.lr = c.get_double("cnn", "lr", t.lr);
  t.lr_halving_interval = static_cast<std::size_t>(
      c.get_int("cnn", "lr_halving_interval", static_cast<long long>(t.lr_halving_interval)));
  t.momentum = c.get_double("cnn", "momentum", t.momentum);
  t.weight_decay_conv = c.get_double("cnn", "weight_decay_conv", t.weight_decay_conv);
  t.weight_decay_fc = c.get_double("cnn", "weight_decay_fc", t.weight_decay_fc);
  t.max_iters = static_cast<std::size_t>(c.get_int("cnn", "max_iters", static_cast<long long>(t.max_iters)));
  t.hflip = c.get_bool("cnn", "hflip", t.hflip);
  t.random_crop = c.get_bool("cnn", "random_crop", t.random_crop);
  t.checkpoint_interval = static_cast<std::size_t>(c.get_int("cnn", "checkpoint_interval", 0));
  p.cnn.channel_divisor = static_cast<std::size_t>(c.get_int("cnn", "channel_divisor", 1));
  p.cnn.input_size = static_cast<std::size_t>(c.get_int("cnn", "input_size", 100));
  p.cnn.in_channels = static_cast<std::size_t>(c.get_int("cnn", "in_channels", 1));
  p.cnn.init.scheme = scheme_from_string(c.get("cnn", "init", "gaussian"));
  p.cnn.init.std = c.get_double("cnn", "init_std", p.cnn.init.std);

  auto& m = p.metric;
  m.gamma = c.get_double("metric", "gamma", m.gamma);
  m.gamma_b = c.get_double("metric", "gamma_b", m.gamma_b);
  m.neg_to_pos_ratio = static_cast<std::size_t>(
      c.get_int("metric", "neg_to_pos_ratio", static_cast<long long>(m.neg_to_pos_ratio)));
  m.epochs = static_cast<std::size_t>(c.get_int("metric", "epochs", static_cast<long long>(m.epochs)));
  m.symmetrize_B = c.get_bool("metric", "symmetrize_B", m.symmetrize_B);

  p.frame.width = static_cast<std::size_t>(c.get_int("frame", "width", 100));
  p.frame.height = static_cast<std::size_t>(c.get_int("frame", "height", 100));
  for (std::size_t k = 0; k < align::kNumLandmarks; ++k) {
    const auto key = "p" + std::to_string(k);
    p.frame.landmarks[k].x = c.get_double("frame", key + ".x", p.frame.landmarks[k].x);
    p.frame.landmarks[k].y = c.get_double("frame", key + ".y", p.frame.landmarks[k].y);
  }

  if (p.scorer != "cosine" && p.scorer != "jointbayes")
    throw FormatError("scorer must be cosine or jointbayes, got '" + p.scorer + "'");
  if (!(m.gamma > 0.0) || !(m.gamma_b > 0.0)) throw FormatError("metric gamma and gamma_b must be > 0");
  if (m.neg_to_pos_ratio < 1) throw FormatError("metric neg_to_pos_ratio must be >= 1");
  return p;
}

Config PipelineConfig::to_config() const {
  Config c;
  c.set("paths", "manifest", manifest.string());
  c.set("paths", "features", features.string());
  c.set("paths", "images", images.string());
  c.set("paths", "network", network.string());
  c.set("paths", "landmarks", landmarks.string());
  c.set("paths", "out_dir", out_dir.string());
  c.set("pipeline", "scorer", scorer);
  c.set("pipeline", "splits", std::to_string(splits));
  c.set("pipeline", "seed", std::to_string(seed));
  const auto& t = cnn.train;
  c.set("cnn", "batch_size", std::to_string(t.batch_size));
  c.set("cnn", "lr", csv::format_double(t.lr));
  c.set("cnn", "lr_halving_interval", std::to_string(t.lr_halving_interval));
  c.set("cnn", "momentum", csv::format_double(t.momentum));
  c.set("cnn", "weight_decay_conv", csv::format_double(t.weight_decay_conv));
  c.set("cnn", "weight_decay_fc", csv::format_double(t.weight_decay_fc));
  c.set("cnn", "max_iters", std::to_string(t.max_iters));
  c.set("cnn", "hflip", yes_no(t.hflip));
  c.set("cnn", "random_crop", yes_no(t.random_crop));
  c.set("cnn", "checkpoint_interval", std::to_string(t.checkpoint_interval));
  c.set("cnn", "channel_divisor", std::to_string(cnn.channel_divisor));
  c.set("cnn", "input_size", std::to_string(cnn.input_size));
  c.set("cnn", "in_channels", std::to_string(cnn.in_channels));
  c.set("cnn", "init", cnn.init.scheme == net::InitScheme::msra ? "msra" : "gaussian");
  c.set("cnn", "init_std", csv::format_double(cnn.init.std));
  c.set("metric", "gamma", csv::format_double(metric.gamma));
  c.set("metric", "gamma_b", csv::format_double(metric.gamma_b));
  c.set("metric", "neg_to_pos_ratio", std::to_string(metric.neg_to_pos_ratio));
  c.set("metric", "epochs", std::to_string(metric.epochs));
  c.set("metric", "symmetrize_B", yes_no(metric.symmetrize_B));
  c.set("frame", "width", std::to_string(frame.width));
  c.set("frame", "height", std::to_string(frame.height));
  for (std::size_t k = 0; k < align::kNumLandmarks; ++k) {
    const auto key = "p" + std::to_string(k);
    c.set("frame", key + ".x", csv::format_double(frame.landmarks[k].x));
    c.set("frame", key + ".y", csv::format_double(frame.landmarks[k].y));
  }
  return c;
}

void echo_config(const PipelineConfig& cfg, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << cfg.to_config().to_string();
}

AlignSummary run_align(const fs::path& landmark_file, const fs::path& image_dir,
                       const fs::path& out_dir, const align::CanonicalFrame& frame,
                       std::ostream& log) {
  const auto records = staged("align", [&] { return align::read_landmark_file(landmark_file); });
  if (!fs::is_directory(image_dir)) throw StageError("align", "image directory not found: " + image_dir.string());
  fs::create_directories(out_dir);
  AlignSummary summary;
  auto fail = [&](const std::string& image, const std::string& reason) {
    log << "warning: " << image << ": " << reason << '\n';
    ++summary.warnings;
    summary.failures.emplace_back(image, reason);
  };

  std::set<std::string> covered;
  for (const auto& rec : records) {
    covered.insert(fs::path(rec.image).lexically_normal().generic_string());
    Tensor img;
    try {
      img = read_pnm(image_dir / rec.image);
    } catch (const Error& e) {
      fail(rec.image, std::string("unreadable image: ") + e.what());
      continue;
    }
    Tensor aligned;
    try {
      aligned = align::align_face(img, rec.points, frame);
    } catch (const DegenerateError& e) {
      fail(rec.image, std::string("degenerate landmarks: ") + e.what());
      continue;
    }
    const auto dst = out_dir / rec.image;
    fs::create_directories(dst.parent_path());
    write_pnm(dst, aligned);
    ++summary.written;
  }

  std::vector<std::string> uncovered;
  for (const auto& entry : fs::recursive_directory_iterator(image_dir)) {
    if (!entry.is_regular_file()) continue;
    const auto ext = entry.path().extension().string();
    if (ext != ".pgm" && ext != ".ppm") continue;
    const auto rel = fs::relative(entry.path(), image_dir).lexically_normal().generic_string();
    if (!covered.count(rel)) uncovered.push_back(rel);
  }
  std::sort(uncovered.begin(), uncovered.end());
  for (const auto& rel : uncovered) fail(rel, "no landmark row");

  std::ofstream report(out_dir / "align_failures.csv");
  report << "image,reason\n";
  for (const auto& [image, reason] : summary.failures) {
    std::string r = reason;
    std::replace(r.begin(), r.end(), ',', ';');
    report << image << ',' << r << '\n';
  }
  return summary;
}

net::Dataset load_training_images(const templates::TemplateManifest& manifest, const fs::path& image_dir,
                                  const net::NetworkSpec& spec, std::size_t* num_subjects) {
  std::map<std::string, int> subject_index;
  std::vector<std::string> order;
  std::map<std::string, std::string> subject_of_media;
  for (const auto& r : manifest.rows) {
    if (!subject_index.count(r.subject_id)) {
      const int next = static_cast<int>(subject_index.size());
      subject_index[r.subject_id] = next;
    }
    if (subject_of_media.emplace(r.media_path, r.subject_id).second) order.push_back(r.media_path);
  }
  net::Dataset d;
  for (const auto& m : order) {
    d.images.push_back(net::preprocess(read_pnm(image_dir / m), spec));
    d.labels.push_back(subject_index[subject_of_media[m]]);
  }
  if (num_subjects) *num_subjects = subject_index.size();
  return d;
}

net::TrainResult run_train_cnn(const PipelineConfig& cfg, const fs::path& out, std::ostream& log) {
  return staged("train-cnn", [&] {
    require_file(cfg.manifest, "manifest");
    if (!fs::is_directory(cfg.images)) throw StageError("config", "image directory not found: " + cfg.images.string());
    const auto manifest = templates::TemplateManifest::load(cfg.manifest);
    std::size_t subjects = 0;
    // First pass with a provisional spec to count subjects.
    auto spec = net::table1_spec(2, cfg.cnn.in_channels, cfg.cnn.channel_divisor, cfg.cnn.input_size);
    auto data = load_training_images(manifest, cfg.images, spec, &subjects);
    if (subjects < 2) throw FormatError("need at least two subjects to train the classifier");

    double mean = 0.0;
    std::size_t count = 0;
    for (const auto& img : data.images) {
      for (double v : img.values()) mean += v;
      count += img.size();
    }
    mean /= static_cast<double>(count);
    for (auto& img : data.images)
      for (auto& v : img.values()) v -= mean;

    spec = net::table1_spec(subjects, cfg.cnn.in_channels, cfg.cnn.channel_divisor, cfg.cnn.input_size);
    spec.input_mean = mean;
    auto init = cfg.cnn.init;
    init.seed = cfg.stage_seed("train-cnn.init");
    net::Network network(spec, init);
    auto tcfg = cfg.cnn.train;
    tcfg.seed = cfg.stage_seed("train-cnn");
    tcfg.checkpoint_path = out;
    log << "train-cnn: " << data.images.size() << " images, " << subjects << " subjects, "
        << tcfg.max_iters << " iterations\n";
    auto result = net::train(network, data, tcfg, [&](std::size_t it, double loss) {
      if ((it + 1) % 50 == 0) log << "  iter " << it + 1 << " loss " << loss << '\n';
    });
    log << "train-cnn: final training accuracy " << net::accuracy(network, data) << '\n';
    return result;
  });
}

FeatureSet run_extract(net::Network& network, const templates::TemplateManifest& manifest,
                       const fs::path& image_dir) {
  return staged("extract", [&] {
    FeatureSet fs_out;
    fs_out.ids = manifest.media();
    std::vector<Tensor> images;
    const std::size_t side = network.spec().input.h;
    for (const auto& m : fs_out.ids) {
      auto img = net::preprocess(read_pnm(image_dir / m), network.spec());
      if (img.dim(0) != side || img.dim(1) != side) img = net::center_crop(img, side);
      images.push_back(std::move(img));
    }
    fs_out.rows = net::extract_features(network, images);
    return fs_out;
  });
}

FeatureSet pool_features(const templates::TemplateManifest& manifest, const FeatureSet& media, int split,
                         templates::Role role) {
  return staged("pool", [&] {
    const auto temps = templates::build_templates(manifest.select(split, role), media);
    if (temps.empty())
      throw FormatError("split " + std::to_string(split) + " has no " + templates::to_string(role) + " templates");
    FeatureSet out;
    out.rows = Tensor({temps.size(), media.dim()});
    for (std::size_t i = 0; i < temps.size(); ++i) {
      out.ids.push_back(temps[i].template_id);
      std::copy(temps[i].pooled_feature.begin(), temps[i].pooled_feature.end(), out.rows.row(i).begin());
    }
    return out;
  });
}

metric::MetricTrainResult train_split_metric(const templates::TemplateManifest& manifest, const FeatureSet& media,
                                             int split, const metric::MetricTrainConfig& cfg) {
  return staged("train-metric", [&] {
    std::unordered_map<std::string, std::size_t> row_of;
    for (std::size_t i = 0; i < media.ids.size(); ++i) row_of.emplace(media.ids[i], i);
    std::map<std::string, int> subject_index;
    std::set<std::string> seen;
    std::vector<std::size_t> rows;
    std::vector<int> labels;
    for (const auto& r : manifest.select(split, templates::Role::train)) {
      if (!seen.insert(r.media_path).second) continue;
      auto it = row_of.find(r.media_path);
      if (it == row_of.end()) throw FormatError("no feature for medium " + r.media_path);
      auto [s, fresh] = subject_index.emplace(r.subject_id, static_cast<int>(subject_index.size()));
      rows.push_back(it->second);
      labels.push_back(s->second);
    }
    if (rows.empty()) throw FormatError("split " + std::to_string(split) + " has no training media");
    Tensor x({rows.size(), media.dim()});
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto src = media.rows.row(rows[i]);
      std::copy(src.begin(), src.end(), x.row(i).begin());
    }
    return metric::train_metric(x, labels, cfg);
  });
}

eval::SplitReport run_pipeline(const PipelineConfig& cfg, std::ostream& log) {
  require_file(cfg.manifest, "manifest");
  const bool have_features = !cfg.features.empty();
  if (have_features) {
    require_file(cfg.features, "features");
  } else {
    require_file(cfg.network, "network");
    if (!fs::is_directory(cfg.images)) throw StageError("config", "image directory not found: " + cfg.images.string());
  }
  fs::create_directories(cfg.out_dir);
  echo_config(cfg, cfg.out_dir / "config.resolved.ini");

  const auto manifest = staged("manifest", [&] {
    auto m = templates::TemplateManifest::load(cfg.manifest);
    m.validate();
    return m;
  });

  FeatureSet media;
  if (have_features) {
    media = staged("features", [&] { return read_features(cfg.features); });
  } else {
    auto network = staged("extract", [&] { return net::Network::load(cfg.network); });
    media = run_extract(network, manifest, cfg.images);
    write_features(cfg.out_dir / "features.jvfe", media);
    // Continue from the stored (single precision) values so a later run
    // started from features.jvfe reproduces the same scores.
    media = read_features(cfg.out_dir / "features.jvfe");
    log << "extract: " << media.count() << " media -> features.jvfe\n";
  }

  auto splits = manifest.splits();
  if (cfg.splits > 0) {
    if (static_cast<std::size_t>(cfg.splits) > splits.size())
      throw StageError("config", "requested " + std::to_string(cfg.splits) + " splits, manifest has " +
                                     std::to_string(splits.size()));
    splits.resize(static_cast<std::size_t>(cfg.splits));
  }

  eval::SplitReport report;
  report.scorer = cfg.scorer;
  for (int split : splits) {
    const auto dir = cfg.out_dir / ("split" + std::to_string(split));
    fs::create_directories(dir);

    templates::Scorer scorer = templates::cosine_scorer();
    std::size_t dim = media.dim();
    if (cfg.scorer == "jointbayes") {
      auto mcfg = cfg.metric;
      mcfg.seed = cfg.stage_seed("train-metric.split" + std::to_string(split));
      auto trained = train_split_metric(manifest, media, split, mcfg);
      trained.model.save(dir / "model.jvjb");
      log << "split " << split << ": train-metric violation fraction "
          << trained.violation_fraction.front() << " -> " << trained.violation_fraction.back() << '\n';
      scorer = templates::joint_bayes_scorer(trained.model);
      dim = trained.model.dim();
    }

    const auto gallery_rows = manifest.select(split, templates::Role::gallery);
    const auto probe_rows = manifest.select(split, templates::Role::probe);
    auto gallery = staged("pool", [&] { return templates::build_templates(gallery_rows, media); });
    auto probe = staged("pool", [&] { return templates::build_templates(probe_rows, media); });
    // Score the templates as stored, so the pool and score commands run
    // separately reproduce this matrix exactly.
    for (auto [role, temps, name] : {std::tuple{templates::Role::gallery, &gallery, "gallery.jvfe"},
                                     std::tuple{templates::Role::probe, &probe, "probe.jvfe"}}) {
      write_features(dir / name, pool_features(manifest, media, split, role));
      const auto stored = read_features(dir / name);
      for (std::size_t i = 0; i < temps->size(); ++i) {
        const auto r = stored.rows.row(i);
        (*temps)[i].pooled_feature.assign(r.begin(), r.end());
      }
    }

    templates::SimilarityMatrix sim;
    sim.scores = staged("score", [&] { return templates::score_templates(scorer, gallery, probe, dim); });
    std::vector<std::string> gs, ps;
    for (const auto& t : gallery) {
      sim.gallery_ids.push_back(t.template_id);
      gs.push_back(t.subject_id);
    }
    for (const auto& t : probe) {
      sim.probe_ids.push_back(t.template_id);
      ps.push_back(t.subject_id);
    }
    templates::write_similarity_matrix(dir / "similarity.csv", sim);

    auto metrics = staged("evaluate", [&] { return eval::evaluate_split(split, sim.scores, gs, ps); });
    log << "split " << split << ": TAR@FAR=0.01 " << metrics.tar_far_1e2 << ", rank-1 " << metrics.rank1 << '\n';
    report.splits.push_back(std::move(metrics));
  }

  eval::emit_curves(report, cfg.out_dir / "curves");
  std::ofstream out(cfg.out_dir / "report.txt");
  if (!out) throw StageError("report", "cannot write report");
  out << report.to_text();
  return report;
}

void run_synth(const SynthOptions& opts, const fs::path& features_out, const fs::path& manifest_out) {
  staged("synth", [&] {
    if (opts.splits < 1) throw FormatError("synth: need at least one split");
    if (opts.samples <= opts.gallery_media)
      throw FormatError("synth: samples per subject must exceed gallery media count");
    auto model = metric::SyntheticEmbeddingModel::isotropic(opts.dim, opts.var_mu, opts.var_eps, opts.subjects,
                                                            opts.samples, derive_seed(opts.seed, "synth.features"));
    const auto data = metric::generate_synthetic(model);

    auto subject_id = [](std::size_t s) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "subj%04zu", s);
      return std::string(buf);
    };
    auto media_id = [&](std::size_t s, std::size_t k) {
      return subject_id(s) + "/m" + std::to_string(k);
    };

    FeatureSet fs_out;
    fs_out.rows = data.features;
    for (std::size_t s = 0; s < opts.subjects; ++s)
      for (std::size_t k = 0; k < opts.samples; ++k) fs_out.ids.push_back(media_id(s, k));

    const auto n_train = static_cast<std::size_t>(std::lround(opts.train_fraction * static_cast<double>(opts.subjects)));
    if (n_train < 2 || n_train >= opts.subjects)
      throw FormatError("synth: train fraction leaves no train or test subjects");

    templates::TemplateManifest manifest;
    for (int split = 1; split <= opts.splits; ++split) {
      Rng rng(derive_seed(opts.seed, "synth.split" + std::to_string(split)));
      std::vector<std::size_t> subjects(opts.subjects);
      for (std::size_t s = 0; s < subjects.size(); ++s) subjects[s] = s;
      rng.shuffle(subjects.begin(), subjects.end());
      std::sort(subjects.begin(), subjects.begin() + static_cast<std::ptrdiff_t>(n_train));
      std::sort(subjects.begin() + static_cast<std::ptrdiff_t>(n_train), subjects.end());
      for (std::size_t i = 0; i < subjects.size(); ++i) {
        const std::size_t s = subjects[i];
        const auto sid = subject_id(s);
        for (std::size_t k = 0; k < opts.samples; ++k) {
          templates::ManifestRow row{"", sid, media_id(s, k), templates::Role::train, split};
          if (i < n_train) {
            row.template_id = "T" + sid;
          } else if (k < opts.gallery_media) {
            row.template_id = "G" + sid;
            row.role = templates::Role::gallery;
          } else {
            row.template_id = "P" + sid + "_" + std::to_string(k);
            row.role = templates::Role::probe;
          }
          manifest.rows.push_back(std::move(row));
        }
      }
    }
    write_features(features_out, fs_out);
    manifest.save(manifest_out);
    return 0;
  });
}

}  // namespace jv::pipeline

#pragma once

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "jv/align.hpp"
#include "jv/config.hpp"
#include "jv/error.hpp"
#include "jv/eval.hpp"
#include "jv/features.hpp"
#include "jv/metric.hpp"
#include "jv/network.hpp"
#include "jv/templates.hpp"
#include "jv/train.hpp"

namespace jv::pipeline {

namespace fs = std::filesystem;

/// Failure inside a named pipeline stage.
class StageError : public Error {
public:
  StageError(const std::string& stage, const std::string& what)
      : Error("[" + stage + "] " + what), stage_(stage) {}
  const std::string& stage() const { return stage_; }

private:
  std::string stage_;
};

struct CnnOptions {
  net::TrainConfig train;
  std::size_t channel_divisor = 1;
  std::size_t input_size = 100;
  std::size_t in_channels = 1;
  net::InitConfig init;
};

/// Everything a run needs. Loaded from sectioned key=value text:
/// [paths] manifest, features, images, network, landmarks, out_dir;
/// [pipeline] scorer, splits, seed; [cnn] ...; [metric] ...; [frame] ...
struct PipelineConfig {
  fs::path manifest;
  fs::path features;   // media features; extracted from images when absent
  fs::path images;     // aligned image directory
  fs::path network;    // CNN checkpoint
  fs::path landmarks;
  fs::path out_dir = "out";
  std::string scorer = "jointbayes";
  int splits = 0;  // 0 = every split in the manifest
  std::uint64_t seed = 0;
  CnnOptions cnn;
  metric::MetricTrainConfig metric;
  align::CanonicalFrame frame;

  static PipelineConfig from_config(const Config& cfg);
  Config to_config() const;

  /// Stage seeds: derive_seed(seed, "train-cnn"), derive_seed(seed,
  /// "train-metric.split<N>"), ... so that each stage reproduces alone.
  std::uint64_t stage_seed(const std::string& stage) const { return derive_seed(seed, stage); }
};

/// Write the fully resolved configuration to path.
void echo_config(const PipelineConfig& cfg, const fs::path& path);

struct AlignSummary {
  std::size_t written = 0;
  std::size_t warnings = 0;
  std::vector<std::pair<std::string, std::string>> failures;  // image, reason
};

/// Align every landmark record's image into frame and write it under out_dir
/// with the same relative path. Unreadable images, degenerate landmarks and
/// images lacking a landmark row are reported and skipped. A failure table
/// `align_failures.csv` is written to out_dir.
AlignSummary run_align(const fs::path& landmark_file, const fs::path& image_dir,
                       const fs::path& out_dir, const align::CanonicalFrame& frame,
                       std::ostream& log);

/// Labelled images for CNN training: one sample per distinct manifest
/// medium, labelled by subject (subjects numbered in first-appearance order).
net::Dataset load_training_images(const templates::TemplateManifest& manifest,
                                  const fs::path& image_dir, const net::NetworkSpec& spec,
                                  std::size_t* num_subjects = nullptr);

/// Train a network per cfg.cnn on the manifest's media, save to out.
net::TrainResult run_train_cnn(const PipelineConfig& cfg, const fs::path& out, std::ostream& log);

/// Feature rows for every distinct medium of the manifest.
FeatureSet run_extract(net::Network& net, const templates::TemplateManifest& manifest,
                       const fs::path& image_dir);

/// Pooled template features for one split and role.
FeatureSet pool_features(const templates::TemplateManifest& manifest, const FeatureSet& media,
                         int split, templates::Role role);

/// Joint Bayes training on the split's train media.
metric::MetricTrainResult train_split_metric(const templates::TemplateManifest& manifest,
                                             const FeatureSet& media, int split,
                                             const metric::MetricTrainConfig& cfg);

/// extract (if needed) -> pool -> train-metric -> score -> evaluate over the
/// configured splits. Everything is written below cfg.out_dir:
/// features.jvfe, split<N>/{model.jvjb,gallery.jvfe,probe.jvfe,similarity.csv},
/// curves/, report.txt and config.resolved.ini.
eval::SplitReport run_pipeline(const PipelineConfig& cfg, std::ostream& log);

struct SynthOptions {
  std::size_t subjects = 30;
  std::size_t samples = 5;
  std::size_t dim = 32;
  double var_mu = 1.0;
  double var_eps = 0.25;
  int splits = 1;
  double train_fraction = 2.0 / 3.0;
  std::size_t gallery_media = 2;
  std::uint64_t seed = 0;
};

/// Synthetic media features plus a manifest. Per split, a random
/// train_fraction of subjects is used for training; every other subject gets
/// one gallery template of its first gallery_media samples, and each
/// remaining sample becomes a single-medium probe template.
void run_synth(const SynthOptions& opts, const fs::path& features_out, const fs::path& manifest_out);

}  // namespace jv::pipeline

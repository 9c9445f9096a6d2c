#pragma once

#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tmask/metrics.hpp"
#include "tmask/synthetic.hpp"
#include "tmask/training.hpp"

namespace tmask {

inline constexpr const char* kToolVersion = "0.3.0";

/// Everything a train/eval/ablation run needs. Without `manifest` the data
/// comes from the synthetic generator.
struct ExperimentConfig {
  SynthConfig synthetic;
  ProbeConfig probe;
  TrainConfig train;
  std::size_t eval_clips = 3;
  std::size_t silhouette_cap = 2000;
  std::optional<std::string> manifest;

  ClipSpec clip_spec() const { return {train.frames_per_clip, eval_clips}; }
};

inline ExperimentConfig default_experiment() {
  ExperimentConfig c;
  c.probe.kind = ProbeKind::kStep;
  c.probe.model_dim = 32;
  c.probe.head_count = 4;
  c.probe.mlp_hidden = 64;
  c.train.epochs = 8;
  c.train.batch_size = 16;
  c.train.learning_rate = 3e-3;
  c.train.weight_decay = 0.05;
  return c;
}

inline nlohmann::json experiment_to_json(const ExperimentConfig& c) {
  nlohmann::json j = {{"synthetic", synth_config_to_json(c.synthetic)},
                      {"probe", probe_config_to_json(c.probe)},
                      {"train", train_config_to_json(c.train)},
                      {"mask", mask_settings_to_json(c.train.mask)},
                      {"eval", {{"clips_per_video", c.eval_clips}, {"silhouette_cap", c.silhouette_cap}}}};
  if (c.manifest) j["manifest"] = *c.manifest;
  return j;
}

inline ExperimentConfig experiment_from_json(const nlohmann::json& j, ExperimentConfig c = default_experiment()) {
  require(j.is_object(), ErrorCode::kConfig, "config must be a JSON object");
  for (const auto& [key, v] : j.items()) {
    if (key == "synthetic") c.synthetic = synth_config_from_json(v, c.synthetic);
    else if (key == "probe") {
      nlohmann::json merged = probe_config_to_json(c.probe);
      for (const auto& [k, x] : v.items()) merged[k] = x;
      c.probe = probe_config_from_json(merged);
    } else if (key == "train") c.train = train_config_from_json(v, c.train);
    else if (key == "mask") c.train.mask = mask_settings_from_json(v, c.train.mask);
    else if (key == "eval") {
      for (const auto& [k, x] : v.items()) {
        if (k == "clips_per_video") c.eval_clips = x.get<std::size_t>();
        else if (k == "silhouette_cap") c.silhouette_cap = x.get<std::size_t>();
        else fail(ErrorCode::kConfig, "eval: unknown key '" + k + "'");
      }
    } else if (key == "manifest") c.manifest = v.get<std::string>();
    else fail(ErrorCode::kConfig, "unknown config key '" + key + "'");
  }
  c.clip_spec().validate();
  return c;
}

inline ExperimentConfig load_experiment(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParse, path.string() + ": " + e.what());
  }
  return experiment_from_json(j);
}

/// FNV-1a of the canonical (key-sorted, compact) JSON form, as 16 hex digits.
inline std::string config_hash(const nlohmann::json& j) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(j.dump())));
  return buf;
}

/// Probe shape fields that follow from the data.
inline ProbeConfig fit_probe_to_data(ProbeConfig probe, const DatasetManifest& m, const DatasetSplit& data,
                                     std::size_t frames_per_clip) {
  require(!data.train.empty(), ErrorCode::kConfig, "training split is empty");
  probe.input_dim = data.train.front().tokens.dim;
  probe.class_count = m.class_names.size();
  probe.frames_per_clip = frames_per_clip;
  probe.validate();
  return probe;
}

inline std::map<std::string, LabeledLogits> group_by_view(std::span<const VideoPrediction> preds) {
  std::map<std::string, LabeledLogits> out;
  for (const auto& p : preds) {
    auto& g = out[p.view];
    g.logits.push_back(p.logits);
    g.labels.push_back(p.label);
  }
  return out;
}

inline std::vector<LabeledVideo> all_test_videos(const DatasetSplit& data, const DatasetManifest& m) {
  std::vector<LabeledVideo> out;
  for (const auto& v : m.evaluation_views())
    if (auto it = data.test.find(v); it != data.test.end()) out.insert(out.end(), it->second.begin(), it->second.end());
  return out;
}

struct ProbeRun {
  Checkpoint checkpoint;
  MetricsReport report;
  std::vector<VideoPrediction> predictions;  // test videos, train view first
  std::vector<double> loss_trace;
  double mask_fraction = 0.0;  // mean over evaluated clips
};

inline MetricsReport report_for(const Checkpoint& ck, std::span<const VideoPrediction> preds,
                                const DatasetManifest& m, const DatasetSplit& data) {
  std::vector<std::size_t> train_labels;
  for (const auto& v : data.train) train_labels.push_back(v.label);
  const ClassSplit split = class_split_from_labels(train_labels, ck.head.config().class_count);
  return per_view_report(group_by_view(preds), m.train_view, m.novel_views, &split);
}

inline ProbeRun run_probe(const DatasetSplit& data, const DatasetManifest& m, const ExperimentConfig& cfg,
                          const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  const ProbeConfig probe = fit_probe_to_data(cfg.probe, m, data, cfg.train.frames_per_clip);
  TrainResult trained = train(data.train, probe, cfg.train, on_epoch);
  const auto tests = all_test_videos(data, m);
  auto preds = evaluate(trained.checkpoint, tests, cfg.clip_spec(), cfg.train.threads);
  double frac = 0.0;
  for (const auto& p : preds) frac += p.mask_fraction;
  if (!preds.empty()) frac /= static_cast<double>(preds.size());
  MetricsReport report = report_for(trained.checkpoint, preds, m, data);
  return {std::move(trained.checkpoint), std::move(report), std::move(preds), std::move(trained.loss_trace), frac};
}

/// Mean T-Mask drop fraction over the center evaluation clips of `videos`.
inline double mean_tmask_fraction(std::span<const LabeledVideo> videos, const ClipSpec& spec, double tau,
                                  DiffNorm norm) {
  require(!videos.empty(), ErrorCode::kInput, "no videos to measure");
  double sum = 0.0;
  for (const auto& v : videos)
    sum += mask_fraction(build_mask(sample_clip(v.tokens, spec, spec.clips_per_video_eval / 2), tau, norm));
  return sum / static_cast<double>(videos.size());
}

/// Silhouette of pooled test embeddings clustered by view.
inline double view_silhouette(std::span<const VideoPrediction> preds, const DatasetManifest& m, std::size_t cap,
                              std::uint64_t seed) {
  std::vector<std::vector<double>> points;
  std::vector<std::size_t> groups;
  for (const auto& p : preds) {
    const auto it = std::find(m.view_names.begin(), m.view_names.end(), p.view);
    require(it != m.view_names.end(), ErrorCode::kInput, "prediction for unknown view '" + p.view + "'");
    points.push_back(p.pooled);
    groups.push_back(static_cast<std::size_t>(it - m.view_names.begin()));
  }
  return silhouette_score(points, groups, cap, seed);
}

struct AblationRow {
  std::string label;
  MaskMode mode = MaskMode::kNone;
  std::optional<double> tau;
  double mask_fraction = 0.0;
  double trained_balanced = 0.0;
  double trained_top1 = 0.0;
  double cross_balanced = 0.0;
  double cross_top1 = 0.0;
  double silhouette = 0.0;
};

inline AblationRow ablation_row(std::string label, const ProbeRun& run, const DatasetManifest& m,
                                const ExperimentConfig& cfg) {
  AblationRow r;
  r.label = std::move(label);
  r.mode = run.checkpoint.mask.mode;
  r.tau = run.checkpoint.mask.mode == MaskMode::kTMask ? run.checkpoint.mask.tau : std::nullopt;
  r.mask_fraction = run.mask_fraction;
  const auto* tv = run.report.find(m.train_view);
  r.trained_balanced = tv->balanced;
  r.trained_top1 = tv->top1;
  if (run.report.cross_view) {
    r.cross_balanced = run.report.cross_view->balanced;
    r.cross_top1 = run.report.cross_view->top1;
  }
  r.silhouette = view_silhouette(run.predictions, m, cfg.silhouette_cap, cfg.train.seed);
  return r;
}

/// none / random (at the T-Mask fraction) / tmask, same seed and schedule.
inline std::vector<AblationRow> masking_ablation(const DatasetSplit& data, const DatasetManifest& m,
                                                 const ExperimentConfig& cfg) {
  std::vector<AblationRow> rows;
  ExperimentConfig none = cfg;
  none.train.mask.mode = MaskMode::kNone;
  rows.push_back(ablation_row("none", run_probe(data, m, none), m, cfg));

  ExperimentConfig tm = cfg;
  tm.train.mask.mode = MaskMode::kTMask;
  const ProbeRun tmask_run = run_probe(data, m, tm);
  const double tau = *tmask_run.checkpoint.mask.tau;

  ExperimentConfig rnd = cfg;
  rnd.train.mask.mode = MaskMode::kRandom;
  rnd.train.mask.random_fraction = mean_tmask_fraction(data.train, cfg.clip_spec(), tau, tm.train.mask.norm);
  rows.push_back(ablation_row("random", run_probe(data, m, rnd), m, cfg));
  rows.push_back(ablation_row("tmask", tmask_run, m, cfg));
  return rows;
}

/// One T-Mask run per fixed threshold.
inline std::vector<AblationRow> threshold_ablation(const DatasetSplit& data, const DatasetManifest& m,
                                                   const ExperimentConfig& cfg,
                                                   const std::vector<std::pair<std::string, double>>& taus) {
  std::vector<AblationRow> rows;
  for (const auto& [label, tau] : taus) {
    ExperimentConfig c = cfg;
    c.train.mask.mode = MaskMode::kTMask;
    c.train.mask.tau = tau;
    rows.push_back(ablation_row(label, run_probe(data, m, c), m, cfg));
  }
  return rows;
}

inline nlohmann::json ablation_to_json(const std::vector<AblationRow>& rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rows) {
    out.push_back({{"label", r.label},
                   {"mode", to_string(r.mode)},
                   {"tau", r.tau ? nlohmann::json(*r.tau) : nlohmann::json(nullptr)},
                   {"mask_fraction", r.mask_fraction},
                   {"trained_balanced", r.trained_balanced},
                   {"trained_top1", r.trained_top1},
                   {"cross_balanced", r.cross_balanced},
                   {"cross_top1", r.cross_top1},
                   {"silhouette", r.silhouette}});
  }
  return out;
}

}  // namespace tmask

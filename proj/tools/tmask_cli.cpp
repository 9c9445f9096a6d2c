// Command-line front end: corpus generation, mask statistics, training,
// evaluation, pose analysis and the masking/threshold ablations.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "tmask/checkpoint.hpp"
#include "tmask/experiment.hpp"
#include "tmask/geometry.hpp"
#include "tmask/report.hpp"

namespace fs = std::filesystem;
using namespace tmask;

namespace {

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "out";
  std::string manifest;
  std::optional<double> threshold;
  std::optional<double> delta;
  std::string mask;
  std::string probe;
  std::size_t threads = 1;
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  require(static_cast<bool>(os), ErrorCode::kIo, "cannot write " + path.string());
  os << text;
}

ExperimentConfig resolve_config(const CommonOptions& o) {
  ExperimentConfig cfg = o.config.empty() ? default_experiment() : load_experiment(o.config);
  if (o.seed) {
    cfg.train.seed = *o.seed;
    cfg.synthetic.seed = *o.seed;
  }
  if (!o.manifest.empty()) cfg.manifest = o.manifest;
  if (!o.mask.empty()) cfg.train.mask.mode = mask_mode_from_string(o.mask);
  if (o.threshold) cfg.train.mask.tau = *o.threshold;
  if (o.delta) cfg.train.mask.threshold.delta = *o.delta;
  if (!o.probe.empty()) cfg.probe.kind = probe_kind_from_string(o.probe);
  cfg.train.threads = o.threads;
  cfg.synthetic.threads = o.threads;
  cfg.train.validate();
  cfg.train.mask.validate();
  return cfg;
}

struct LoadedData {
  DatasetManifest manifest;
  DatasetSplit split;
  std::optional<SyntheticCorpus> corpus;
};

LoadedData load_data(const ExperimentConfig& cfg) {
  LoadedData d;
  if (cfg.manifest) {
    const fs::path path = *cfg.manifest;
    d.manifest = load_manifest(path);
    d.split = load_split(d.manifest, path.parent_path());
  } else {
    d.corpus = generate_corpus(cfg.synthetic);
    d.manifest = d.corpus->manifest;
    d.split = partition_videos(d.manifest, d.corpus->videos);
  }
  return d;
}

nlohmann::json envelope(const std::string& command, const ExperimentConfig& cfg) {
  const auto cj = experiment_to_json(cfg);
  return {{"command", command}, {"version", kToolVersion}, {"config_hash", config_hash(cj)},
          {"seed", cfg.train.seed}, {"config", cj}};
}

void emit(const fs::path& dir, const std::string& stem, const nlohmann::json& j, const std::string& csv) {
  write_text(dir / (stem + ".json"), j.dump(2) + "\n");
  if (!csv.empty()) write_text(dir / (stem + ".csv"), csv);
  std::cout << j.dump(2) << '\n';
}

void cmd_synth_gen(const CommonOptions& o) {
  const ExperimentConfig cfg = resolve_config(o);
  const SyntheticCorpus corpus = generate_corpus(cfg.synthetic);
  write_corpus(corpus, o.out_dir);
  const PlantedPeaks peaks = planted_peaks(corpus);
  auto j = envelope("synth-gen", cfg);
  j["videos"] = corpus.videos.size();
  j["static_share"] = corpus.oracle.static_share();
  j["planted_peaks"] = {{"low", peaks.low}, {"high", peaks.high}, {"midpoint", peaks.midpoint()}};
  j["manifest"] = (fs::path(o.out_dir) / "manifest.json").string();
  emit(o.out_dir, "synth_summary", j, "");
}

void cmd_mask_stats(const CommonOptions& o, std::size_t sample_budget) {
  ExperimentConfig cfg = resolve_config(o);
  cfg.train.mask.threshold.sample_budget = sample_budget;
  const LoadedData data = load_data(cfg);
  const ClipSpec spec = cfg.clip_spec();
  MaskSettings mask = cfg.train.mask;
  mask.mode = MaskMode::kTMask;
  const ThresholdEstimate est = estimate_threshold(data.split.train, spec, mask, cfg.train.seed);
  const double tau = mask.tau.value_or(est.tau);
  nlohmann::json fractions = nlohmann::json::object();
  fractions[data.manifest.train_view] = mean_tmask_fraction(data.split.train, spec, tau, mask.norm);
  for (const auto& [view, videos] : data.split.test)
    if (!videos.empty()) fractions[view + ":test"] = mean_tmask_fraction(videos, spec, tau, mask.norm);
  auto j = envelope("mask-stats", cfg);
  j["mode"] = est.mode;
  j["delta"] = mask.threshold.delta;
  j["tau"] = tau;
  j["videos_used"] = est.videos_used;
  j["mask_fraction"] = fractions;
  j["histogram"] = histogram_to_json(est.histogram);
  emit(o.out_dir, "mask_stats", j, histogram_csv(est.histogram));
}

void cmd_train(const CommonOptions& o) {
  const ExperimentConfig cfg = resolve_config(o);
  const LoadedData data = load_data(cfg);
  const ProbeConfig probe = fit_probe_to_data(cfg.probe, data.manifest, data.split, cfg.train.frames_per_clip);
  std::ostringstream log;
  log << "epoch,mean_loss,learning_rate\n";
  const TrainResult result = train(data.split.train, probe, cfg.train, [&](const EpochRecord& r) {
    log << r.epoch << ',' << fmt_number(r.mean_loss, 6) << ',' << fmt_number(r.learning_rate, 8) << '\n';
    std::cerr << "epoch " << r.epoch << " loss " << fmt_number(r.mean_loss, 4) << '\n';
  });
  const fs::path ck_path = fs::path(o.out_dir) / "checkpoint.tmck";
  fs::create_directories(o.out_dir);
  save_checkpoint(result.checkpoint, ck_path);
  auto j = envelope("train", cfg);
  j["checkpoint"] = ck_path.string();
  j["steps"] = result.steps;
  j["parameters"] = result.checkpoint.head.parameter_count();
  j["loss_trace"] = result.loss_trace;
  j["tau"] = optional_json(result.checkpoint.mask.tau);
  emit(o.out_dir, "train", j, log.str());
}

struct EvalOutput {
  Checkpoint checkpoint;
  LoadedData data;
  std::vector<VideoPrediction> predictions;
};

EvalOutput run_eval(const CommonOptions& o, const std::string& checkpoint, ExperimentConfig& cfg) {
  Checkpoint ck = load_checkpoint(checkpoint);
  cfg.train.seed = ck.train.seed;
  cfg.train.frames_per_clip = ck.train.frames_per_clip;
  LoadedData data = load_data(cfg);
  auto tests = all_test_videos(data.split, data.manifest);
  auto preds = evaluate(ck, tests, cfg.clip_spec(), o.threads);
  return {std::move(ck), std::move(data), std::move(preds)};
}

void cmd_eval(const CommonOptions& o, const std::string& checkpoint) {
  ExperimentConfig cfg = resolve_config(o);
  const EvalOutput out = run_eval(o, checkpoint, cfg);
  const MetricsReport report = report_for(out.checkpoint, out.predictions, out.data.manifest, out.data.split);
  auto j = envelope("eval", cfg);
  j["checkpoint"] = checkpoint;
  j["mask"] = mask_settings_to_json(out.checkpoint.mask);
  j["report"] = metrics_report_to_json(report);
  emit(o.out_dir, "report", j, metrics_report_csv(report));
}

void cmd_silhouette(const CommonOptions& o, const std::string& checkpoint) {
  ExperimentConfig cfg = resolve_config(o);
  const EvalOutput out = run_eval(o, checkpoint, cfg);
  const double s = view_silhouette(out.predictions, out.data.manifest, cfg.silhouette_cap, cfg.train.seed);
  auto j = envelope("silhouette", cfg);
  j["checkpoint"] = checkpoint;
  j["silhouette"] = s;
  j["points"] = std::min(out.predictions.size(), cfg.silhouette_cap);
  emit(o.out_dir, "silhouette", j, "silhouette\n" + fmt_number(s, 6) + "\n");
}

std::map<std::string, double> top1_from_report(const std::string& path) {
  std::map<std::string, double> out;
  if (path.empty()) return out;
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open report " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParse, path + ": " + e.what());
  }
  const auto& r = j.contains("report") ? j.at("report") : j;
  for (const auto& v : r.at("views")) out[v.at("view").get<std::string>()] = v.at("top1").get<double>();
  return out;
}

void cmd_pose_dist(const CommonOptions& o, const std::string& poses_path, const std::string& trained_view,
                   const std::string& report_path) {
  const ViewPoseSet poses = load_view_poses(poses_path);
  const auto top1 = top1_from_report(report_path);
  std::vector<std::string> views;
  for (const auto& [v, _] : poses) views.push_back(v);
  for (const auto& [v, _] : top1)
    if (!poses.contains(v)) views.push_back(v);
  const auto rows = view_difficulty_table(poses, trained_view, views, top1);
  nlohmann::json j = {{"command", "pose-dist"}, {"version", kToolVersion}, {"trained_view", trained_view},
                      {"table", difficulty_table_to_json(rows)}};
  emit(o.out_dir, "pose_distance", j, difficulty_table_csv(rows));
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      fail(ErrorCode::kConfig, "not a number in list: '" + item + "'");
    }
  }
  return out;
}

void cmd_ablate_threshold(const CommonOptions& o, const std::string& taus) {
  const ExperimentConfig cfg = resolve_config(o);
  const LoadedData data = load_data(cfg);
  std::vector<std::pair<std::string, double>> grid;
  if (!taus.empty()) {
    for (double t : parse_list(taus)) grid.emplace_back(fmt_number(t, 4), t);
  } else {
    require(data.corpus.has_value(), ErrorCode::kConfig, "--taus is required when training from a manifest");
    const PlantedPeaks p = planted_peaks(*data.corpus, cfg.train.mask.norm);
    grid = {{"peak_low", p.low}, {"midpoint", p.midpoint()}, {"peak_high", p.high}};
  }
  const auto rows = threshold_ablation(data.split, data.manifest, cfg, grid);
  auto j = envelope("ablate-threshold", cfg);
  j["rows"] = ablation_to_json(rows);
  emit(o.out_dir, "ablate_threshold", j, ablation_csv(rows));
}

void cmd_ablate_masking(const CommonOptions& o) {
  const ExperimentConfig cfg = resolve_config(o);
  const LoadedData data = load_data(cfg);
  const auto rows = masking_ablation(data.split, data.manifest, cfg);
  auto j = envelope("ablate-masking", cfg);
  j["rows"] = ablation_to_json(rows);
  emit(o.out_dir, "ablate_masking", j, ablation_csv(rows));
}

void add_common(CLI::App* app, CommonOptions& o, bool training_flags) {
  app->add_option("--config", o.config, "experiment config JSON")->check(CLI::ExistingFile);
  app->add_option("--seed", o.seed, "seed for data generation and training");
  app->add_option("--out-dir", o.out_dir, "output directory");
  app->add_option("--threads", o.threads, "worker threads")->check(CLI::PositiveNumber);
  if (!training_flags) return;
  app->add_option("--manifest", o.manifest, "dataset manifest (default: synthetic corpus from the config)");
  app->add_option("--threshold", o.threshold, "fixed T-Mask threshold τ");
  app->add_option("--delta", o.delta, "offset added to the histogram mode");
  app->add_option("--mask", o.mask, "none|tmask|random");
  app->add_option("--probe", o.probe, "linear|attn|self-attn|step");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tmask: temporal token masking for frozen-feature video probes"};
  app.require_subcommand(1);
  CommonOptions o;
  std::string checkpoint, poses, trained_view, report, taus;
  std::size_t sample_budget = 20;

  auto* synth = app.add_subcommand("synth-gen", "generate a synthetic multi-view token corpus");
  add_common(synth, o, false);
  auto* stats = app.add_subcommand("mask-stats", "difference histogram, τ and mask fractions");
  add_common(stats, o, true);
  stats->add_option("--sample-budget", sample_budget, "videos used for the histogram")->check(CLI::PositiveNumber);
  auto* tr = app.add_subcommand("train", "train a probe and write a checkpoint");
  add_common(tr, o, true);
  auto* ev = app.add_subcommand("eval", "per-view metrics for a checkpoint");
  add_common(ev, o, true);
  ev->add_option("--checkpoint", checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  auto* sil = app.add_subcommand("silhouette", "view silhouette of pooled embeddings");
  add_common(sil, o, true);
  sil->add_option("--checkpoint", checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  auto* pose = app.add_subcommand("pose-dist", "view difficulty table from camera poses");
  pose->add_option("--poses", poses, "pose JSON")->required()->check(CLI::ExistingFile);
  pose->add_option("--trained-view", trained_view, "trained view name")->required();
  pose->add_option("--report", report, "eval report JSON supplying per-view top-1");
  pose->add_option("--out-dir", o.out_dir, "output directory");
  auto* abt = app.add_subcommand("ablate-threshold", "train one T-Mask probe per τ");
  add_common(abt, o, true);
  abt->add_option("--taus", taus, "comma-separated τ values (default: planted peaks and midpoint)");
  auto* abm = app.add_subcommand("ablate-masking", "none / random / tmask comparison");
  add_common(abm, o, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (synth->parsed()) cmd_synth_gen(o);
    else if (stats->parsed()) cmd_mask_stats(o, sample_budget);
    else if (tr->parsed()) cmd_train(o);
    else if (ev->parsed()) cmd_eval(o, checkpoint);
    else if (sil->parsed()) cmd_silhouette(o, checkpoint);
    else if (pose->parsed()) cmd_pose_dist(o, poses, trained_view, report);
    else if (abt->parsed()) cmd_ablate_threshold(o, taus);
    else if (abm->parsed()) cmd_ablate_masking(o);
  } catch (const Error& e) {
    std::cerr << nlohmann::json{{"error", {{"code", to_string(e.code())}, {"message", e.what()}}}}.dump() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << nlohmann::json{{"error", {{"code", "internal_error"}, {"message", e.what()}}}}.dump() << '\n';
    return 1;
  }
  return 0;
}

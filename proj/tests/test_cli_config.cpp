#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "tmask/experiment.hpp"
#include "tmask/report.hpp"
#include "support.hpp"

using namespace tmask;
using namespace tmask::testing;
namespace fs = std::filesystem;

namespace {

ExperimentConfig small_experiment() {
  ExperimentConfig c = default_experiment();
  c.synthetic.views = 2;
  c.synthetic.classes = 3;
  c.synthetic.videos_per_view_class = 6;
  c.synthetic.frames = 16;
  c.synthetic.tokens = 12;
  c.synthetic.dim = 8;
  c.probe.model_dim = 8;
  c.probe.head_count = 2;
  c.probe.mlp_hidden = 8;
  c.train.epochs = 2;
  c.train.batch_size = 4;
  return c;
}

std::string report_bytes(const ExperimentConfig& cfg) {
  const auto corpus = generate_corpus(cfg.synthetic);
  const auto split = partition_videos(corpus.manifest, corpus.videos);
  const ProbeRun run = run_probe(split, corpus.manifest, cfg);
  return metrics_report_to_json(run.report).dump() + metrics_report_csv(run.report) +
         std::string(encode_checkpoint(run.checkpoint).data(), encode_checkpoint(run.checkpoint).size());
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Shaped like an extractor export: a 2x3 patch grid plus a class token per
/// frame, 64-dim features, one token file per video.
struct ExportedJob {
  fs::path dir;
  std::size_t grid_tokens = 6;
  std::size_t dim = 64;
};

ExportedJob write_export(const std::string& name) {
  ExportedJob job{scratch_dir(name)};
  fs::create_directories(job.dir / "tokens");
  Rng rng(21);
  DatasetManifest m;
  m.class_names = {"reach", "drink"};
  m.view_names = {"mirror", "ceiling"};
  m.train_view = "mirror";
  m.novel_views = {"ceiling"};
  const std::size_t frames[] = {16, 9, 20, 12, 16, 7, 18, 10, 5, 16};
  for (std::size_t k = 0; k < 10; ++k) {
    TokenSequence s(frames[k], job.grid_tokens, job.dim);
    for (auto& v : s.values) v = static_cast<float>(rng.normal());
    s.class_tokens.resize(frames[k] * job.dim);
    for (auto& v : s.class_tokens) v = static_cast<float>(rng.normal());
    ManifestEntry e;
    e.sample_id = "clip" + std::to_string(k);
    e.label = k % 2;
    e.view = k < 6 ? "mirror" : "ceiling";
    e.split = k < 4 ? "train" : "test";
    e.path = "tokens/" + e.sample_id + ".tmsk";
    e.frames = frames[k];
    e.tokens = job.grid_tokens + 1;
    e.dim = job.dim;
    e.class_token = true;
    write_token_file(s, job.dir / e.path);
    m.entries.push_back(e);
  }
  save_manifest(m, job.dir / "manifest.json");
  return job;
}

#ifdef TMASK_CLI
int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string("\"") + TMASK_CLI + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  return std::system(cmd.c_str());
}
#endif

}  // namespace

TEST(ExperimentConfig, JsonRoundTripAndUnknownKeys) {
  const ExperimentConfig c = small_experiment();
  const auto j = experiment_to_json(c);
  EXPECT_EQ(experiment_to_json(experiment_from_json(j)), j);
  EXPECT_EQ(code_of([] { experiment_from_json({{"optimizer", "sgd"}}); }), ErrorCode::kConfig);
  EXPECT_EQ(code_of([] { experiment_from_json({{"eval", {{"crops", 3}}}}); }), ErrorCode::kConfig);
  EXPECT_EQ(code_of([] { experiment_from_json({{"probe", {{"head_count", 5}}}}); }), ErrorCode::kConfig);
  EXPECT_EQ(code_of([] { experiment_from_json(nlohmann::json::array()); }), ErrorCode::kConfig);
  // partial sections merge over the defaults
  const auto partial = experiment_from_json({{"probe", {{"kind", "attn"}}}});
  EXPECT_EQ(partial.probe.kind, ProbeKind::kAttentive);
  EXPECT_EQ(partial.probe.model_dim, default_experiment().probe.model_dim);
  const auto masked = experiment_from_json({{"mask", {{"mode", "tmask"}, {"delta", 0.05}}}});
  EXPECT_EQ(masked.train.mask.mode, MaskMode::kTMask);
  EXPECT_DOUBLE_EQ(masked.train.mask.threshold.delta, 0.05);
  EXPECT_EQ(code_of([] { experiment_from_json({{"mask", {{"kernel", 3}}}}); }), ErrorCode::kConfig);
}

TEST(ExperimentConfig, HashIsStableAndSensitive) {
  const auto j = experiment_to_json(small_experiment());
  const std::string h = config_hash(j);
  EXPECT_EQ(h.size(), 16u);
  EXPECT_EQ(config_hash(experiment_to_json(small_experiment())), h);
  auto other = small_experiment();
  other.train.seed += 1;
  EXPECT_NE(config_hash(experiment_to_json(other)), h);
}

TEST(Determinism, TrainAndEvalReportsAreByteIdentical) {
  auto cfg = small_experiment();
  cfg.train.mask.mode = MaskMode::kTMask;
  EXPECT_EQ(report_bytes(cfg), report_bytes(cfg));
  cfg.train.mask.mode = MaskMode::kRandom;
  cfg.train.mask.random_fraction = 0.3;
  EXPECT_EQ(report_bytes(cfg), report_bytes(cfg));
}

TEST(ExtractorInterface, ExportedJobLoadsMasksAndEvaluates) {
  const ExportedJob job = write_export("export");
  const DatasetManifest m = load_manifest(job.dir / "manifest.json");
  for (const auto& e : m.entries) {
    const auto h = read_token_header(job.dir / e.path);
    EXPECT_EQ(h.tokens, job.grid_tokens + 1);
    EXPECT_EQ(h.dim, job.dim);
  }
  const DatasetSplit split = load_split(m, job.dir);
  ASSERT_EQ(split.train.size(), 4u);
  for (const auto& v : split.train) {
    EXPECT_EQ(v.tokens.tokens, job.grid_tokens);
    EXPECT_TRUE(v.tokens.has_class_tokens());
    EXPECT_EQ(build_mask(v.tokens, 0.0).dropped_count(), 0u);
  }
  ExperimentConfig cfg = small_experiment();
  cfg.probe.use_class_tokens = true;
  cfg.train.mask.mode = MaskMode::kTMask;
  const ProbeRun run = run_probe(split, m, cfg);
  EXPECT_EQ(run.predictions.size(), 6u);
  EXPECT_EQ(run.report.views.size(), 2u);
  EXPECT_TRUE(run.report.missing_views.empty());
  EXPECT_GT(run.mask_fraction, 0.0);
}

TEST(ExtractorInterface, HeaderMismatchIsAValidationError) {
  const ExportedJob job = write_export("export_bad");
  DatasetManifest m = load_manifest(job.dir / "manifest.json");
  m.entries[2].dim = 32;
  EXPECT_EQ(code_of([&] { load_split(m, job.dir); }), ErrorCode::kValidation);
}

#ifdef TMASK_CLI
TEST(Cli, MaskStatsOnAllStaticCorpus) {
  // every token identical across frames: all but frame 0 is dropped
  const fs::path dir = scratch_dir("cli_static");
  fs::create_directories(dir / "tokens");
  DatasetManifest m;
  m.class_names = {"a", "b"};
  m.view_names = {"front", "side"};
  m.train_view = "front";
  m.novel_views = {"side"};
  for (std::size_t k = 0; k < 4; ++k) {
    TokenSequence s(16, 5, 4);
    for (std::size_t t = 0; t < 16; ++t)
      for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 4; ++j) s.token(t, i)[j] = static_cast<float>(k + i + j);
    ManifestEntry e{"s" + std::to_string(k), k % 2, k < 2 ? "front" : "side", k < 2 ? "train" : "test",
                    "tokens/s" + std::to_string(k) + ".tmsk", 16, 5, 4, false};
    write_token_file(s, dir / e.path);
    m.entries.push_back(e);
  }
  save_manifest(m, dir / "manifest.json");
  const fs::path out = dir / "out";
  ASSERT_EQ(run_cli("mask-stats --manifest \"" + (dir / "manifest.json").string() + "\" --out-dir \"" +
                        out.string() + "\"",
                    dir / "log.txt"),
            0)
      << slurp(dir / "log.txt");
  const auto j = nlohmann::json::parse(slurp(out / "mask_stats.json"));
  EXPECT_DOUBLE_EQ(j["mask_fraction"]["front"].get<double>(), 15.0 / 16.0);
  EXPECT_DOUBLE_EQ(j["mask_fraction"]["side:test"].get<double>(), 15.0 / 16.0);
  EXPECT_GT(j["tau"].get<double>(), 0.0);
}

TEST(Cli, TrainEvalTwiceGivesIdenticalReports) {
  const fs::path dir = scratch_dir("cli_det");
  const fs::path cfg = dir / "config.json";
  std::ofstream(cfg) << experiment_to_json(small_experiment()).dump(2);
  const std::string common = "--config \"" + cfg.string() + "\" --seed 4 --mask tmask";
  const fs::path out = dir / "run";
  std::string reports[2];
  for (int r = 0; r < 2; ++r) {
    fs::remove_all(out);
    ASSERT_EQ(run_cli("train " + common + " --out-dir \"" + out.string() + "\"", dir / "log.txt"), 0)
        << slurp(dir / "log.txt");
    ASSERT_EQ(run_cli("eval " + common + " --checkpoint \"" + (out / "checkpoint.tmck").string() +
                          "\" --out-dir \"" + out.string() + "\"",
                      dir / "log.txt"),
              0)
        << slurp(dir / "log.txt");
    reports[r] = slurp(out / "report.json") + slurp(out / "report.csv");
  }
  EXPECT_FALSE(reports[0].empty());
  EXPECT_EQ(reports[0], reports[1]);
}

TEST(Cli, ErrorsAreStructured) {
  const fs::path dir = scratch_dir("cli_err");
  std::ofstream(dir / "bad.json") << R"({"colour": 1})";
  const int rc = run_cli("train --config \"" + (dir / "bad.json").string() + "\"", dir / "log.txt");
  EXPECT_NE(rc, 0);
  EXPECT_NE(slurp(dir / "log.txt").find("\"code\":\"config_error\""), std::string::npos) << slurp(dir / "log.txt");
}

TEST(Cli, PoseDistanceTable) {
  const fs::path dir = scratch_dir("cli_pose");
  std::ofstream(dir / "poses.json") << R"({"views": {
    "front": [{"quaternion": [1, 0, 0, 0], "translation": [0, 0, 0]}],
    "side":  [{"quaternion": [1, 0, 0, 0], "translation": [3, 4, 0]}]}})";
  ASSERT_EQ(run_cli("pose-dist --poses \"" + (dir / "poses.json").string() +
                        "\" --trained-view front --out-dir \"" + dir.string() + "\"",
                    dir / "log.txt"),
            0)
      << slurp(dir / "log.txt");
  EXPECT_NE(slurp(dir / "pose_distance.csv").find("side,5.000"), std::string::npos);
}
#endif

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>
#include <cstdio>
#include <string>
#include <vector>

#include "json.hpp"
#include "tmask/manifest.hpp"
#include "tmask/parallel.hpp"
#include "tmask/rng.hpp"
#include "tmask/temporal_mask.hpp"
#include "tmask/token_io.hpp"

namespace tmask {

/// Multi-view token corpus with planted static (view-specific) and dynamic
/// (class-bearing) tokens.
///
/// Static token i of a view-w video: Q_w (b_{w,i} + spurious · k_c [w = train] + σ_s ε_t).
/// Dynamic token i: Q_w (m_c + a_i σ_d sin(ω_c t + φ_i) + dynamic_noise · σ_d ε_t),
/// with per-dimension random phases φ and amplitudes a_i ~ U[0.75, 1.25].
/// Q_w is a seeded orthogonal map near the identity (Cayley transform of a
/// random skew matrix scaled by view_rotation).
struct SynthConfig {
  std::size_t views = 3;
  std::size_t classes = 8;
  std::size_t videos_per_view_class = 25;
  std::size_t frames = 16;
  std::size_t tokens = 64;
  std::size_t dim = 64;
  double static_fraction = 0.5;
  double static_noise_scale = 0.02;   // σ_s
  double dynamic_motion_scale = 1.0;  // σ_d
  double dynamic_noise = 0.1;         // per-frame noise on dynamic tokens, in units of σ_d
  double spurious_strength = 1.0;
  double background_scale = 1.5;      // spread of the view-constant static vectors
  double class_separation = 0.3;      // per-dimension spread of the class means m_c
  double frequency_low = 0.8;         // ω_c range in rad/frame
  double frequency_high = 1.2;
  double view_rotation = 0.6;
  double train_fraction = 0.6;        // share of train-view videos in the train split
  std::uint64_t seed = 0;
  std::size_t threads = 1;

  std::size_t static_count() const {
    return static_cast<std::size_t>(std::llround(static_fraction * static_cast<double>(tokens)));
  }

  void validate() const {
    require(views >= 2, ErrorCode::kConfig, "synthetic corpus needs at least two views");
    require(classes >= 2, ErrorCode::kConfig, "synthetic corpus needs at least two classes");
    require(videos_per_view_class >= 1 && frames >= 2 && tokens >= 1 && dim >= 1, ErrorCode::kConfig,
            "synthetic corpus sizes must be positive (frames >= 2)");
    require(static_fraction > 0.0 && static_fraction < 1.0, ErrorCode::kConfig, "static_fraction must lie in (0, 1)");
    require(static_noise_scale >= 0.0 && dynamic_motion_scale > static_noise_scale, ErrorCode::kConfig,
            "need dynamic_motion_scale > static_noise_scale >= 0");
    require(dynamic_noise >= 0.0 && spurious_strength >= 0.0 && background_scale >= 0.0 && class_separation >= 0.0,
            ErrorCode::kConfig, "synthetic scales must be non-negative");
    require(frequency_low > 0.0 && frequency_high >= frequency_low && frequency_high < std::numbers::pi,
            ErrorCode::kConfig, "frequency range must satisfy 0 < low <= high < π");
    require(view_rotation >= 0.0, ErrorCode::kConfig, "view_rotation must be non-negative");
    require(train_fraction > 0.0 && train_fraction < 1.0, ErrorCode::kConfig, "train_fraction must lie in (0, 1)");
  }
};

inline nlohmann::json synth_config_to_json(const SynthConfig& c) {
  return {{"views", c.views},
          {"classes", c.classes},
          {"videos_per_view_class", c.videos_per_view_class},
          {"frames", c.frames},
          {"tokens", c.tokens},
          {"dim", c.dim},
          {"static_fraction", c.static_fraction},
          {"static_noise_scale", c.static_noise_scale},
          {"dynamic_motion_scale", c.dynamic_motion_scale},
          {"dynamic_noise", c.dynamic_noise},
          {"spurious_strength", c.spurious_strength},
          {"background_scale", c.background_scale},
          {"class_separation", c.class_separation},
          {"frequency_low", c.frequency_low},
          {"frequency_high", c.frequency_high},
          {"view_rotation", c.view_rotation},
          {"train_fraction", c.train_fraction},
          {"seed", c.seed},
          {"threads", c.threads}};
}

inline SynthConfig synth_config_from_json(const nlohmann::json& j, SynthConfig c = {}) {
  for (const auto& [key, v] : j.items()) {
    if (key == "views") c.views = v.get<std::size_t>();
    else if (key == "classes") c.classes = v.get<std::size_t>();
    else if (key == "videos_per_view_class") c.videos_per_view_class = v.get<std::size_t>();
    else if (key == "frames") c.frames = v.get<std::size_t>();
    else if (key == "tokens") c.tokens = v.get<std::size_t>();
    else if (key == "dim") c.dim = v.get<std::size_t>();
    else if (key == "static_fraction") c.static_fraction = v.get<double>();
    else if (key == "static_noise_scale") c.static_noise_scale = v.get<double>();
    else if (key == "dynamic_motion_scale") c.dynamic_motion_scale = v.get<double>();
    else if (key == "dynamic_noise") c.dynamic_noise = v.get<double>();
    else if (key == "spurious_strength") c.spurious_strength = v.get<double>();
    else if (key == "background_scale") c.background_scale = v.get<double>();
    else if (key == "class_separation") c.class_separation = v.get<double>();
    else if (key == "frequency_low") c.frequency_low = v.get<double>();
    else if (key == "frequency_high") c.frequency_high = v.get<double>();
    else if (key == "view_rotation") c.view_rotation = v.get<double>();
    else if (key == "train_fraction") c.train_fraction = v.get<double>();
    else if (key == "seed") c.seed = v.get<std::uint64_t>();
    else if (key == "threads") c.threads = v.get<std::size_t>();
    else fail(ErrorCode::kConfig, "synthetic: unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

/// Ground truth per video: which token positions are static.
struct OracleLabels {
  std::vector<std::string> sample_ids;
  std::vector<std::vector<std::uint8_t>> is_static;  // [video][token]

  double static_share() const {
    std::size_t s = 0, n = 0;
    for (const auto& v : is_static) {
      for (auto f : v) s += f;
      n += v.size();
    }
    return n ? static_cast<double>(s) / static_cast<double>(n) : 0.0;
  }
};

struct SyntheticCorpus {
  SynthConfig config;
  DatasetManifest manifest;
  std::vector<TokenSequence> videos;  // parallel to manifest.entries
  OracleLabels oracle;
};

/// Keeps frame 0 and every dynamic token; drops static tokens from frame 1 on.
inline TokenMask oracle_mask(std::span<const std::uint8_t> is_static, std::size_t frames) {
  TokenMask mask(frames, is_static.size());
  for (std::size_t t = 1; t < frames; ++t)
    for (std::size_t i = 0; i < is_static.size(); ++i) mask.set(t, i, is_static[i] == 0);
  return mask;
}

namespace detail {

inline Eigen::MatrixXd random_view_transform(std::size_t dim, double strength, Rng& rng) {
  const auto d = static_cast<Eigen::Index>(dim);
  Eigen::MatrixXd g(d, d);
  for (Eigen::Index r = 0; r < d; ++r)
    for (Eigen::Index c = 0; c < d; ++c) g(r, c) = rng.normal() / std::sqrt(static_cast<double>(dim));
  const Eigen::MatrixXd a = 0.5 * strength * (g - g.transpose());
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(d, d);
  return (id - a) * (id + a).inverse();
}

inline Eigen::VectorXd normal_vector(std::size_t dim, double sd, Rng& rng) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(dim));
  for (Eigen::Index j = 0; j < v.size(); ++j) v(j) = rng.normal(0.0, sd);
  return v;
}

}  // namespace detail

inline std::string synth_sample_id(std::size_t view, std::size_t cls, std::size_t k) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "v%zu_c%02zu_%03zu", view, cls, k);
  return buf;
}

/// Deterministic in `cfg.seed`; videos are generated from per-video derived
/// seeds so the thread count does not change the output.
inline SyntheticCorpus generate_corpus(const SynthConfig& cfg) {
  cfg.validate();
  const std::size_t D = cfg.dim, N = cfg.tokens, T = cfg.frames;
  Rng world(derive_seed(cfg.seed, 0x776f726c64ULL));

  std::vector<Eigen::MatrixXd> transforms;
  std::vector<std::vector<Eigen::VectorXd>> background(cfg.views);
  for (std::size_t v = 0; v < cfg.views; ++v) {
    transforms.push_back(detail::random_view_transform(D, cfg.view_rotation, world));
    for (std::size_t i = 0; i < N; ++i) background[v].push_back(detail::normal_vector(D, cfg.background_scale, world));
  }
  std::vector<Eigen::VectorXd> class_mean, spurious;
  std::vector<double> frequency;
  for (std::size_t c = 0; c < cfg.classes; ++c) {
    class_mean.push_back(detail::normal_vector(D, cfg.class_separation, world));
    spurious.push_back(detail::normal_vector(D, 1.0, world));
    const double f = cfg.classes > 1 ? static_cast<double>(c) / static_cast<double>(cfg.classes - 1) : 0.5;
    frequency.push_back(cfg.frequency_low + f * (cfg.frequency_high - cfg.frequency_low));
  }
  std::vector<std::size_t> freq_order(cfg.classes);
  std::iota(freq_order.begin(), freq_order.end(), std::size_t{0});
  world.shuffle(std::span<std::size_t>(freq_order));

  SyntheticCorpus out;
  out.config = cfg;
  auto& m = out.manifest;
  for (std::size_t c = 0; c < cfg.classes; ++c) m.class_names.push_back("class_" + std::to_string(c));
  for (std::size_t v = 0; v < cfg.views; ++v) m.view_names.push_back("view_" + std::to_string(v));
  m.train_view = m.view_names[0];
  m.novel_views.assign(m.view_names.begin() + 1, m.view_names.end());

  const std::size_t train_per_class = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(cfg.train_fraction * static_cast<double>(cfg.videos_per_view_class))));
  for (std::size_t v = 0; v < cfg.views; ++v)
    for (std::size_t c = 0; c < cfg.classes; ++c)
      for (std::size_t k = 0; k < cfg.videos_per_view_class; ++k) {
        ManifestEntry e;
        e.sample_id = synth_sample_id(v, c, k);
        e.label = c;
        e.view = m.view_names[v];
        e.split = (v == 0 && k < train_per_class) ? "train" : "test";
        e.path = "tokens/" + e.sample_id + ".tmsk";
        e.frames = T;
        e.tokens = N;
        e.dim = D;
        m.entries.push_back(std::move(e));
      }

  const std::size_t total = m.entries.size();
  out.videos.resize(total);
  out.oracle.sample_ids.resize(total);
  out.oracle.is_static.resize(total);
  const std::size_t n_static = cfg.static_count();
  parallel_for(total, cfg.threads, [&](std::size_t idx) {
    const std::size_t v = idx / (cfg.classes * cfg.videos_per_view_class);
    const std::size_t c = (idx / cfg.videos_per_view_class) % cfg.classes;
    Rng rng(derive_seed(cfg.seed, idx + 1));

    std::vector<std::size_t> positions(N);
    std::iota(positions.begin(), positions.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(positions));
    std::vector<std::uint8_t> is_static(N, 0);
    for (std::size_t k = 0; k < n_static; ++k) is_static[positions[k]] = 1;

    const Eigen::MatrixXd& q = transforms[v];
    const double omega = frequency[freq_order[c]];
    TokenSequence seq(T, N, D);
    Eigen::VectorXd x(static_cast<Eigen::Index>(D));
    for (std::size_t i = 0; i < N; ++i) {
      if (is_static[i]) {
        Eigen::VectorXd base = background[v][i];
        if (v == 0) base += cfg.spurious_strength * spurious[c];
        for (std::size_t t = 0; t < T; ++t) {
          x = base;
          if (cfg.static_noise_scale > 0.0)
            for (Eigen::Index j = 0; j < x.size(); ++j) x(j) += rng.normal(0.0, cfg.static_noise_scale);
          const Eigen::VectorXd y = q * x;
          auto dst = seq.token(t, i);
          for (std::size_t j = 0; j < D; ++j) dst[j] = static_cast<float>(y(static_cast<Eigen::Index>(j)));
        }
      } else {
        const double amp = rng.uniform(0.75, 1.25) * cfg.dynamic_motion_scale;
        std::vector<double> phase(D);
        for (auto& p : phase) p = rng.uniform(0.0, 2.0 * std::numbers::pi);
        for (std::size_t t = 0; t < T; ++t) {
          for (std::size_t j = 0; j < D; ++j) {
            const auto jj = static_cast<Eigen::Index>(j);
            x(jj) = class_mean[c](jj) + amp * std::sin(omega * static_cast<double>(t) + phase[j]) +
                    rng.normal(0.0, cfg.dynamic_noise * cfg.dynamic_motion_scale);
          }
          const Eigen::VectorXd y = q * x;
          auto dst = seq.token(t, i);
          for (std::size_t j = 0; j < D; ++j) dst[j] = static_cast<float>(y(static_cast<Eigen::Index>(j)));
        }
      }
    }
    out.videos[idx] = std::move(seq);
    out.oracle.sample_ids[idx] = m.entries[idx].sample_id;
    out.oracle.is_static[idx] = std::move(is_static);
  });
  return out;
}

inline nlohmann::json oracle_to_json(const OracleLabels& o) {
  nlohmann::json videos = nlohmann::json::object();
  for (std::size_t v = 0; v < o.sample_ids.size(); ++v) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < o.is_static[v].size(); ++i)
      if (o.is_static[v][i]) idx.push_back(i);
    videos[o.sample_ids[v]] = {{"tokens", o.is_static[v].size()}, {"static", idx}};
  }
  return {{"format", "tmask-oracle"}, {"version", 1}, {"videos", std::move(videos)}};
}

inline OracleLabels oracle_from_json(const nlohmann::json& j) {
  require(j.value("format", "") == "tmask-oracle", ErrorCode::kParse, "not an oracle sidecar");
  OracleLabels o;
  for (const auto& [id, entry] : j.at("videos").items()) {
    std::vector<std::uint8_t> flags(entry.at("tokens").get<std::size_t>(), 0);
    for (auto i : entry.at("static").get<std::vector<std::size_t>>()) {
      require(i < flags.size(), ErrorCode::kParse, "oracle token index out of range for " + id);
      flags[i] = 1;
    }
    o.sample_ids.push_back(id);
    o.is_static.push_back(std::move(flags));
  }
  return o;
}

/// Writes manifest.json, tokens/<id>.tmsk and oracle.json under `dir`.
inline void write_corpus(const SyntheticCorpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "tokens");
  for (std::size_t k = 0; k < corpus.videos.size(); ++k)
    write_token_file(corpus.videos[k], dir / corpus.manifest.entries[k].path);
  save_manifest(corpus.manifest, dir / "manifest.json");
  std::ofstream os(dir / "oracle.json");
  require(static_cast<bool>(os), ErrorCode::kIo, "cannot write " + (dir / "oracle.json").string());
  os << oracle_to_json(corpus.oracle).dump(2) << '\n';
}

/// Planted peak locations: modes of the static-only and dynamic-only
/// difference histograms under the oracle labels, on a common binning.
struct PlantedPeaks {
  double low = 0.0;
  double high = 0.0;
  double midpoint() const { return 0.5 * (low + high); }
  double half_gap() const { return 0.5 * (high - low); }
};

inline PlantedPeaks planted_peaks(const SyntheticCorpus& corpus, DiffNorm norm = DiffNorm::kMeanDim,
                                  std::size_t bins = 200) {
  std::vector<double> all, stat, dyn;
  for (std::size_t v = 0; v < corpus.videos.size(); ++v) {
    const auto d = token_differences(corpus.videos[v], norm);
    for (std::size_t t = 0; t < d.transitions; ++t)
      for (std::size_t i = 0; i < d.tokens; ++i) {
        const double x = d.at(t, i);
        all.push_back(x);
        (corpus.oracle.is_static[v][i] ? stat : dyn).push_back(x);
      }
  }
  const double upper = *std::max_element(all.begin(), all.end());
  return {build_histogram(stat, bins, upper).mode(), build_histogram(dyn, bins, upper).mode()};
}

}  // namespace tmask

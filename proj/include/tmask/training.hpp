#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "tmask/checkpoint.hpp"
#include "tmask/clip_sampling.hpp"
#include "tmask/manifest.hpp"
#include "tmask/optimizer.hpp"
#include "tmask/parallel.hpp"
#include "tmask/probes.hpp"
#include "tmask/temporal_mask.hpp"

namespace tmask {

struct ThresholdEstimate {
  DiffHistogram histogram;
  double mode = 0.0;
  double tau = 0.0;
  std::size_t videos_used = 0;
};

/// Estimates τ from at most `sample_budget` training videos, using the
/// center evaluation clip of each so differences match what the probe sees.
inline ThresholdEstimate estimate_threshold(std::span<const LabeledVideo> videos, const ClipSpec& spec,
                                            const MaskSettings& mask, std::uint64_t seed) {
  mask.validate();
  require(!videos.empty(), ErrorCode::kInput, "threshold estimation needs at least one video");
  std::vector<std::size_t> order(videos.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, 0x7468726573ULL));
  rng.shuffle(std::span<std::size_t>(order));
  const std::size_t used = std::min(mask.threshold.sample_budget, videos.size());
  const std::size_t center = spec.clips_per_video_eval / 2;
  std::vector<double> values;
  for (std::size_t k = 0; k < used; ++k) {
    const auto d = token_differences(sample_clip(videos[order[k]].tokens, spec, center), mask.norm);
    values.insert(values.end(), d.values.begin(), d.values.end());
  }
  ThresholdEstimate est;
  est.histogram = build_histogram(values, mask.threshold.bin_count);
  est.mode = est.histogram.mode();
  est.tau = select_threshold(est.histogram, mask.threshold);
  est.videos_used = used;
  return est;
}

/// Mask for one clip under the given settings; nullopt when masking is off.
inline std::optional<TokenMask> clip_mask(const TokenSequence& clip, const MaskSettings& mask, Rng& rng) {
  switch (mask.mode) {
    case MaskMode::kNone: return std::nullopt;
    case MaskMode::kTMask:
      require(mask.tau.has_value(), ErrorCode::kConfig, "tmask masking requires a resolved threshold");
      return build_mask(clip, *mask.tau, mask.norm);
    case MaskMode::kRandom: return random_mask(clip.frames, clip.tokens, mask.random_fraction, rng);
  }
  return std::nullopt;
}

struct EpochRecord {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double learning_rate = 0.0;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<double> loss_trace;  // mean training loss per epoch
  std::optional<ThresholdEstimate> threshold;
  std::size_t steps = 0;
};

/// Fits a probe head on frozen training-view tokens. Only probe parameters
/// change; the token data is read-only. Deterministic given the seed.
inline TrainResult train(std::span<const LabeledVideo> videos, const ProbeConfig& probe, TrainConfig cfg,
                         const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  cfg.validate();
  probe.validate();
  require(!videos.empty(), ErrorCode::kConfig, "training split is empty");
  const ClipSpec spec{cfg.frames_per_clip, 3};

  std::optional<ThresholdEstimate> threshold;
  std::vector<double> loss_trace;
  if (cfg.mask.mode == MaskMode::kTMask && !cfg.mask.tau) {
    threshold = estimate_threshold(videos, spec, cfg.mask, cfg.seed);
    cfg.mask.tau = threshold->tau;
  }

  ProbeHead<float> head(probe, derive_seed(cfg.seed, 0x696e6974ULL));
  auto& params = head.parameters();
  AdamW<float> optimizer(params);
  Rng order_rng(derive_seed(cfg.seed, 0x73687566ULL));

  const std::size_t n = videos.size();
  const std::size_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  std::size_t total_steps = cfg.epochs * steps_per_epoch;
  if (cfg.max_steps) total_steps = std::min(total_steps, *cfg.max_steps);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<std::vector<float>> grads(params.size());
  for (std::size_t k = 0; k < params.size(); ++k) grads[k].assign(params[k].value.size(), 0.0f);

  std::size_t step = 0;
  std::size_t epoch = 0;
  for (; epoch < cfg.epochs && step < total_steps; ++epoch) {
    order_rng.shuffle(std::span<std::size_t>(order));
    double epoch_loss = 0.0;
    std::size_t seen = 0;
    double lr = cfg.learning_rate;
    for (std::size_t begin = 0; begin < n && step < total_steps; begin += cfg.batch_size, ++step) {
      const std::size_t count = std::min(cfg.batch_size, n - begin);
      const float inv_batch = 1.0f / static_cast<float>(count);
      std::vector<std::vector<std::vector<float>>> sinks(count);
      std::vector<double> losses(count, 0.0);
      parallel_for(count, cfg.threads, [&](std::size_t b) {
        const std::size_t vid = order[begin + b];
        Rng clip_rng(derive_seed(cfg.seed, epoch * n + vid + 1));
        const TokenSequence clip = sample_clip(videos[vid].tokens, spec, clip_rng);
        const auto mask = clip_mask(clip, cfg.mask, clip_rng);
        auto& sink = sinks[b];
        sink.resize(params.size());
        for (std::size_t k = 0; k < params.size(); ++k) sink[k].assign(params[k].value.size(), 0.0f);
        ComputeTape<float> tape;
        const auto vars = head.bind(tape, sink);
        const auto input = make_probe_input<float>(clip, mask ? &*mask : nullptr, probe.use_class_tokens);
        const auto out = head.forward(tape, vars, input);
        const std::size_t label = videos[vid].label;
        const Var loss = scale(tape, cross_entropy(tape, out.logits, std::span<const std::size_t>(&label, 1)), inv_batch);
        losses[b] = static_cast<double>(tape.value(loss)[0]) / inv_batch;
        tape.backward(loss);
      });
      for (std::size_t k = 0; k < params.size(); ++k) std::fill(grads[k].begin(), grads[k].end(), 0.0f);
      for (std::size_t b = 0; b < count; ++b) {
        require(std::isfinite(losses[b]), ErrorCode::kDivergence,
                "training diverged (non-finite loss) at epoch " + std::to_string(epoch) + " with config " +
                    train_config_to_json(cfg).dump() + " probe " + probe_config_to_json(probe).dump());
        epoch_loss += losses[b];
        for (std::size_t k = 0; k < params.size(); ++k)
          for (std::size_t i = 0; i < grads[k].size(); ++i) grads[k][i] += sinks[b][k][i];
      }
      seen += count;
      lr = cosine_learning_rate(cfg.learning_rate, step, total_steps);
      optimizer.step(params, grads, lr, cfg.weight_decay);
    }
    const double mean_loss = seen ? epoch_loss / static_cast<double>(seen) : 0.0;
    loss_trace.push_back(mean_loss);
    if (on_epoch) on_epoch({epoch, mean_loss, lr});
  }

  return TrainResult{Checkpoint{std::move(head), cfg, cfg.mask, epoch, order_rng.next()}, std::move(loss_trace),
                     std::move(threshold), step};
}

struct VideoPrediction {
  std::string sample_id;
  std::size_t label = 0;
  std::string view;
  std::vector<double> logits;  // mean over evaluation clips
  std::vector<double> pooled;  // mean pooled embedding over evaluation clips
  double mask_fraction = 0.0;
};

/// Per-video logits averaged over the deterministic evaluation clips, masked
/// with the threshold frozen in the checkpoint.
inline std::vector<VideoPrediction> evaluate(const Checkpoint& ck, std::span<const LabeledVideo> videos,
                                             ClipSpec spec = {}, std::size_t threads = 1) {
  spec.frames_per_clip = ck.train.frames_per_clip;
  spec.validate();
  std::vector<VideoPrediction> out(videos.size());
  parallel_for(videos.size(), threads, [&](std::size_t v) {
    const auto& video = videos[v];
    auto& pred = out[v];
    pred.sample_id = video.sample_id;
    pred.label = video.label;
    pred.view = video.view;
    std::map<std::vector<std::size_t>, ProbeResult<float>> cache;
    std::vector<double> logits, pooled;
    double dropped = 0.0;
    for (std::size_t c = 0; c < spec.clips_per_video_eval; ++c) {
      const auto idx = eval_clip_indices(video.tokens.frames, spec, c);
      const bool cacheable = ck.mask.mode != MaskMode::kRandom;
      const ProbeResult<float>* res = nullptr;
      ProbeResult<float> fresh;
      if (cacheable && cache.contains(idx)) {
        res = &cache.at(idx);
      } else {
        const TokenSequence clip = video.tokens.select_frames(idx);
        Rng rng(derive_seed(ck.train.seed ^ fnv1a(video.sample_id), c));
        const auto mask = clip_mask(clip, ck.mask, rng);
        fresh = ck.head.infer(clip, mask ? &*mask : nullptr);
        if (mask) dropped += mask_fraction(*mask);
        if (cacheable) res = &cache.emplace(idx, std::move(fresh)).first->second;
        else res = &fresh;
      }
      if (logits.empty()) {
        logits.assign(res->logits.size(), 0.0);
        pooled.assign(res->pooled.size(), 0.0);
      }
      for (std::size_t k = 0; k < logits.size(); ++k) logits[k] += res->logits[k];
      for (std::size_t k = 0; k < pooled.size(); ++k) pooled[k] += res->pooled[k];
    }
    const double n = static_cast<double>(spec.clips_per_video_eval);
    for (auto& l : logits) l /= n;
    for (auto& p : pooled) p /= n;
    pred.logits = std::move(logits);
    pred.pooled = std::move(pooled);
    pred.mask_fraction = dropped / static_cast<double>(std::max<std::size_t>(1, cache.empty() ? spec.clips_per_video_eval : cache.size()));
  });
  return out;
}

}  // namespace tmask

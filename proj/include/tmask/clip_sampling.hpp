#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

#include "tmask/error.hpp"
#include "tmask/rng.hpp"
#include "tmask/token_io.hpp"

namespace tmask {

struct ClipSpec {
  std::size_t frames_per_clip = 16;
  std::size_t clips_per_video_eval = 3;

  void validate() const {
    require(frames_per_clip >= 2, ErrorCode::kConfig, "frames_per_clip must be >= 2");
    require(clips_per_video_eval >= 1, ErrorCode::kConfig, "clips_per_video_eval must be >= 1");
  }
};

enum class SampleMode { kTrain, kEval };

namespace detail {

// Frames are taken with a fixed stride floor(T/F) from a window of
// (F-1)*stride+1 frames; videos shorter than F repeat their last frame.
inline std::vector<std::size_t> window_indices(std::size_t video_frames, std::size_t clip_frames,
                                               std::size_t offset) {
  std::vector<std::size_t> idx(clip_frames);
  const std::size_t stride = std::max<std::size_t>(1, video_frames / clip_frames);
  for (std::size_t k = 0; k < clip_frames; ++k) idx[k] = std::min(offset + k * stride, video_frames - 1);
  return idx;
}

inline std::size_t window_slack(std::size_t video_frames, std::size_t clip_frames) {
  const std::size_t stride = std::max<std::size_t>(1, video_frames / clip_frames);
  const std::size_t span = (clip_frames - 1) * stride + 1;
  return video_frames > span ? video_frames - span : 0;
}

}  // namespace detail

/// Frame indices of deterministic evaluation clip `clip_index`; windows are
/// anchored evenly from the start to the end of the video (start/center/end
/// for three clips).
inline std::vector<std::size_t> eval_clip_indices(std::size_t video_frames, const ClipSpec& spec,
                                                  std::size_t clip_index) {
  spec.validate();
  require(video_frames >= 1, ErrorCode::kInput, "cannot sample a clip from an empty video");
  require(clip_index < spec.clips_per_video_eval, ErrorCode::kInput, "clip index out of range");
  const std::size_t slack = detail::window_slack(video_frames, spec.frames_per_clip);
  std::size_t offset = slack / 2;
  if (spec.clips_per_video_eval > 1)
    offset = clip_index * slack / (spec.clips_per_video_eval - 1);
  return detail::window_indices(video_frames, spec.frames_per_clip, offset);
}

inline std::vector<std::size_t> train_clip_indices(std::size_t video_frames, const ClipSpec& spec,
                                                   Rng& rng) {
  spec.validate();
  require(video_frames >= 1, ErrorCode::kInput, "cannot sample a clip from an empty video");
  const std::size_t slack = detail::window_slack(video_frames, spec.frames_per_clip);
  return detail::window_indices(video_frames, spec.frames_per_clip, rng.index(slack + 1));
}

inline TokenSequence sample_clip(const TokenSequence& video, const ClipSpec& spec, Rng& rng) {
  return video.select_frames(train_clip_indices(video.frames, spec, rng));
}

inline TokenSequence sample_clip(const TokenSequence& video, const ClipSpec& spec,
                                 std::size_t clip_index) {
  return video.select_frames(eval_clip_indices(video.frames, spec, clip_index));
}

}  // namespace tmask

#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "tmask/ops.hpp"
#include "tmask/rng.hpp"
#include "tmask/temporal_mask.hpp"
#include "tmask/tensor.hpp"
#include "tmask/token_io.hpp"

namespace tmask {

enum class ProbeKind { kLinear, kAttentive, kSelfAttn, kStep };

inline std::string to_string(ProbeKind k) {
  switch (k) {
    case ProbeKind::kLinear: return "linear";
    case ProbeKind::kAttentive: return "attn";
    case ProbeKind::kSelfAttn: return "self-attn";
    case ProbeKind::kStep: return "step";
  }
  return "unknown";
}

inline ProbeKind probe_kind_from_string(const std::string& s) {
  if (s == "linear") return ProbeKind::kLinear;
  if (s == "attn" || s == "attentive") return ProbeKind::kAttentive;
  if (s == "self-attn" || s == "self_attn") return ProbeKind::kSelfAttn;
  if (s == "step") return ProbeKind::kStep;
  fail(ErrorCode::kConfig, "unknown probe kind '" + s + "' (expected linear|attn|self-attn|step)");
}

struct ProbeConfig {
  ProbeKind kind = ProbeKind::kStep;
  std::size_t input_dim = 64;
  std::size_t model_dim = 64;
  std::size_t head_count = 4;
  std::size_t class_count = 8;
  std::size_t frames_per_clip = 16;
  std::size_t mlp_hidden = 128;  // step only
  bool use_class_tokens = false;
  bool temporal_embedding = false;  // always on for step

  bool has_temporal_embedding() const { return kind == ProbeKind::kStep || temporal_embedding; }
  bool uses_attention() const { return kind != ProbeKind::kLinear; }

  void validate() const {
    require(input_dim >= 1, ErrorCode::kConfig, "probe input_dim must be >= 1");
    require(class_count >= 2, ErrorCode::kConfig, "probe needs at least two classes");
    if (uses_attention()) {
      require(model_dim >= 1 && head_count >= 1, ErrorCode::kConfig, "model_dim and head_count must be >= 1");
      require(model_dim % head_count == 0, ErrorCode::kConfig, "model_dim must be divisible by head_count");
      require(frames_per_clip >= 1, ErrorCode::kConfig, "frames_per_clip must be >= 1");
    }
    if (kind == ProbeKind::kStep) require(mlp_hidden >= 1, ErrorCode::kConfig, "step probe needs mlp_hidden >= 1");
  }

  friend bool operator==(const ProbeConfig&, const ProbeConfig&) = default;
};

inline nlohmann::json probe_config_to_json(const ProbeConfig& c) {
  return {{"kind", to_string(c.kind)},         {"input_dim", c.input_dim},
          {"model_dim", c.model_dim},          {"head_count", c.head_count},
          {"class_count", c.class_count},      {"frames_per_clip", c.frames_per_clip},
          {"mlp_hidden", c.mlp_hidden},        {"use_class_tokens", c.use_class_tokens},
          {"temporal_embedding", c.temporal_embedding}};
}

inline ProbeConfig probe_config_from_json(const nlohmann::json& j) {
  ProbeConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "kind") c.kind = probe_kind_from_string(value.get<std::string>());
    else if (key == "input_dim") c.input_dim = value.get<std::size_t>();
    else if (key == "model_dim") c.model_dim = value.get<std::size_t>();
    else if (key == "head_count") c.head_count = value.get<std::size_t>();
    else if (key == "class_count") c.class_count = value.get<std::size_t>();
    else if (key == "frames_per_clip") c.frames_per_clip = value.get<std::size_t>();
    else if (key == "mlp_hidden") c.mlp_hidden = value.get<std::size_t>();
    else if (key == "use_class_tokens") c.use_class_tokens = value.get<bool>();
    else if (key == "temporal_embedding") c.temporal_embedding = value.get<bool>();
    else fail(ErrorCode::kConfig, "probe: unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

/// Token rows fed to a probe: every (frame, token) position of a clip plus,
/// optionally, per-frame class tokens. `keep` is the key-padding mask.
template <class Real>
struct ProbeInput {
  BasicTensor<Real> tokens;             // rows × input_dim
  std::vector<std::size_t> frame;       // frame index of each row
  std::vector<std::uint8_t> class_row;  // 1 for class-token rows
  KeyMask keep;                         // empty = keep all

  std::size_t rows() const { return frame.size(); }
};

/// Patch tokens in (frame, token) order followed by one class-token row per
/// frame when requested and available. Class-token rows are never masked.
template <class Real>
ProbeInput<Real> make_probe_input(const TokenSequence& clip, const TokenMask* mask = nullptr,
                                  bool use_class_tokens = false) {
  clip.validate();
  const bool with_cls = use_class_tokens && clip.has_class_tokens();
  const std::size_t patch_rows = clip.frames * clip.tokens;
  const std::size_t rows = patch_rows + (with_cls ? clip.frames : 0);
  ProbeInput<Real> in;
  in.tokens = BasicTensor<Real>({rows, clip.dim});
  std::copy(clip.values.begin(), clip.values.end(), in.tokens.data().begin());
  if (with_cls)
    std::copy(clip.class_tokens.begin(), clip.class_tokens.end(),
              in.tokens.data().begin() + static_cast<std::ptrdiff_t>(patch_rows * clip.dim));
  in.frame.resize(rows);
  in.class_row.assign(rows, 0);
  for (std::size_t t = 0; t < clip.frames; ++t)
    for (std::size_t i = 0; i < clip.tokens; ++i) in.frame[t * clip.tokens + i] = t;
  if (with_cls)
    for (std::size_t t = 0; t < clip.frames; ++t) {
      in.frame[patch_rows + t] = t;
      in.class_row[patch_rows + t] = 1;
    }
  if (mask) {
    require(mask->frames() == clip.frames && mask->tokens() == clip.tokens, ErrorCode::kDimension,
            "token mask shape does not match the clip");
    in.keep.assign(rows, 1);
    std::copy(mask->flags().begin(), mask->flags().end(), in.keep.begin());
    require(std::any_of(in.keep.begin(), in.keep.end(), [](std::uint8_t k) { return k != 0; }),
            ErrorCode::kInput, "mask keeps no tokens");
  }
  return in;
}

template <class Real>
struct ProbeParameter {
  std::string name;
  BasicTensor<Real> value;
  bool decay = false;  // subject to weight decay
};

struct ProbeVars {
  Var logits;
  Var pooled;
};

template <class Real>
struct ProbeResult {
  std::vector<Real> logits;
  std::vector<Real> pooled;
};

/// Trainable pooling + classifier head over frozen token features.
template <class Real>
class ProbeHead {
 public:
  using TensorType = BasicTensor<Real>;

  /// Parameters drawn from a seeded initializer.
  ProbeHead(ProbeConfig config, std::uint64_t seed) : config_(std::move(config)) {
    config_.validate();
    Rng rng(seed);
    const std::size_t d = config_.input_dim, m = config_.model_dim, c = config_.class_count;
    if (config_.kind == ProbeKind::kLinear) {
      add_weight("classifier.weight", d, c, rng);
      add_zeros("classifier.bias", {c});
      return;
    }
    add_weight("input.weight", d, m, rng);
    add_zeros("input.bias", {m});
    if (config_.kind == ProbeKind::kAttentive) {
      add_normal("query", {1, m}, 0.02, rng);
    } else {
      add_normal("cls_token", {1, m}, 0.02, rng);
    }
    if (config_.has_temporal_embedding()) add_normal("temporal_embedding", {config_.frames_per_clip, m}, 0.02, rng);
    add_filled("norm.gain", {m}, Real(1));
    add_zeros("norm.bias", {m});
    if (config_.kind != ProbeKind::kAttentive) add_weight("attn.wq", m, m, rng);
    add_weight("attn.wk", m, m, rng);
    add_weight("attn.wv", m, m, rng);
    add_weight("attn.wo", m, m, rng);
    add_zeros("attn.bo", {m});
    if (config_.kind == ProbeKind::kStep) {
      const std::size_t h = config_.mlp_hidden;
      add_filled("mlp_norm.gain", {m}, Real(1));
      add_zeros("mlp_norm.bias", {m});
      add_weight("mlp.w1", m, h, rng);
      add_zeros("mlp.b1", {h});
      add_weight("mlp.w2", h, m, rng);
      add_zeros("mlp.b2", {m});
    }
    add_weight("classifier.weight", m, c, rng);
    add_zeros("classifier.bias", {c});
  }

  const ProbeConfig& config() const noexcept { return config_; }
  std::vector<ProbeParameter<Real>>& parameters() noexcept { return params_; }
  const std::vector<ProbeParameter<Real>>& parameters() const noexcept { return params_; }

  TensorType& param(std::string_view name) { return params_[index_of(name)].value; }
  const TensorType& param(std::string_view name) const { return params_[index_of(name)].value; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  std::size_t pooled_dim() const {
    return config_.kind == ProbeKind::kLinear ? config_.input_dim : config_.model_dim;
  }

  /// Binds parameters as tape leaves; gradients go to each tensor's own grad
  /// buffer when it has requires_grad set.
  std::vector<Var> bind(ComputeTape<Real>& tape) {
    std::vector<Var> vars;
    for (auto& p : params_) vars.push_back(tape.parameter(p.value));
    return vars;
  }

  /// Binds parameters with gradients accumulated into `sinks` (one buffer per
  /// parameter, same order as parameters()).
  std::vector<Var> bind(ComputeTape<Real>& tape, std::vector<std::vector<Real>>& sinks) const {
    require(sinks.size() == params_.size(), ErrorCode::kDimension, "one gradient sink per parameter");
    std::vector<Var> vars;
    for (std::size_t k = 0; k < params_.size(); ++k) vars.push_back(tape.parameter(params_[k].value, sinks[k]));
    return vars;
  }

  std::vector<Var> bind_constants(ComputeTape<Real>& tape) const {
    std::vector<Var> vars;
    for (const auto& p : params_) vars.push_back(tape.constant(p.value));
    return vars;
  }

  ProbeVars forward(ComputeTape<Real>& tape, std::span<const Var> vars, const ProbeInput<Real>& in) const {
    require(vars.size() == params_.size(), ErrorCode::kInput, "parameter binding does not match the head");
    require(in.tokens.rank() == 2 && in.tokens.cols() == config_.input_dim, ErrorCode::kDimension,
            "probe expects tokens of dim " + std::to_string(config_.input_dim) + ", got " +
                shape_string(in.tokens.shape()));
    require(in.rows() == in.tokens.rows() && in.rows() > 0, ErrorCode::kDimension, "probe input has no tokens");
    auto P = [&](std::string_view name) { return vars[index_of(name)]; };

    if (config_.kind == ProbeKind::kLinear) {
      const Var pooled = tape.constant(linear_representation(in));
      const Var logits = add_row(tape, matmul(tape, pooled, P("classifier.weight")), P("classifier.bias"));
      return {logits, pooled};
    }

    if (!in.keep.empty()) {
      require(in.keep.size() == in.rows(), ErrorCode::kDimension, "key mask length does not match token rows");
      require(std::any_of(in.keep.begin(), in.keep.end(), [](std::uint8_t k) { return k != 0; }),
              ErrorCode::kInput, "empty kept token set");
    }

    const Var tokens = tape.constant(in.tokens);
    Var h = add_row(tape, matmul(tape, tokens, P("input.weight")), P("input.bias"));
    if (config_.has_temporal_embedding()) {
      for (std::size_t f : in.frame)
        require(f < config_.frames_per_clip, ErrorCode::kDimension,
                "frame index " + std::to_string(f) + " exceeds the temporal embedding length");
      h = add(tape, h, gather_rows(tape, P("temporal_embedding"), in.frame));
    }

    Var pooled;
    if (config_.kind == ProbeKind::kAttentive) {
      const Var hn = layer_norm(tape, h, P("norm.gain"), P("norm.bias"));
      const Var keys = matmul(tape, hn, P("attn.wk"));
      const Var values = matmul(tape, hn, P("attn.wv"));
      const Var attended = multi_head(tape, P("query"), keys, values, in.keep);
      pooled = add_row(tape, matmul(tape, attended, P("attn.wo")), P("attn.bo"));
    } else {
      const Var cls = P("cls_token");
      const Var x = concat_rows(tape, cls, h);
      KeyMask keep;
      if (!in.keep.empty()) {
        keep.reserve(in.keep.size() + 1);
        keep.push_back(1);  // the class token is never maskable
        keep.insert(keep.end(), in.keep.begin(), in.keep.end());
      }
      const Var xn = layer_norm(tape, x, P("norm.gain"), P("norm.bias"));
      const Var query = matmul(tape, slice_rows(tape, xn, 0, 1), P("attn.wq"));
      const Var keys = matmul(tape, xn, P("attn.wk"));
      const Var values = matmul(tape, xn, P("attn.wv"));
      const Var attended = multi_head(tape, query, keys, values, keep);
      Var c = add(tape, cls, add_row(tape, matmul(tape, attended, P("attn.wo")), P("attn.bo")));
      if (config_.kind == ProbeKind::kStep) {
        const Var cn = layer_norm(tape, c, P("mlp_norm.gain"), P("mlp_norm.bias"));
        const Var hidden = gelu(tape, add_row(tape, matmul(tape, cn, P("mlp.w1")), P("mlp.b1")));
        c = add(tape, c, add_row(tape, matmul(tape, hidden, P("mlp.w2")), P("mlp.b2")));
      }
      pooled = c;
    }
    const Var logits = add_row(tape, matmul(tape, pooled, P("classifier.weight")), P("classifier.bias"));
    return {logits, pooled};
  }

  ProbeResult<Real> infer(const ProbeInput<Real>& in) const {
    ComputeTape<Real> tape;
    const auto vars = bind_constants(tape);
    const auto out = forward(tape, vars, in);
    const auto& l = tape.value(out.logits);
    const auto& p = tape.value(out.pooled);
    return {std::vector<Real>(l.data().begin(), l.data().end()), std::vector<Real>(p.data().begin(), p.data().end())};
  }

  ProbeResult<Real> infer(const TokenSequence& clip, const TokenMask* mask = nullptr) const {
    return infer(make_probe_input<Real>(clip, mask, config_.use_class_tokens));
  }

  std::size_t index_of(std::string_view name) const {
    for (std::size_t k = 0; k < params_.size(); ++k)
      if (params_[k].name == name) return k;
    fail(ErrorCode::kInput, "probe has no parameter '" + std::string(name) + "'");
  }

 private:
  // Mean of the class-token rows when present, otherwise of all patch rows.
  TensorType linear_representation(const ProbeInput<Real>& in) const {
    const bool has_cls = std::any_of(in.class_row.begin(), in.class_row.end(), [](auto f) { return f != 0; });
    const std::size_t d = config_.input_dim;
    std::vector<double> acc(d, 0.0);
    std::size_t count = 0;
    for (std::size_t r = 0; r < in.rows(); ++r) {
      if (has_cls != (in.class_row[r] != 0)) continue;
      const auto row = in.tokens.row(r);
      for (std::size_t j = 0; j < d; ++j) acc[j] += row[j];
      ++count;
    }
    TensorType out({1, d});
    for (std::size_t j = 0; j < d; ++j) out[j] = static_cast<Real>(acc[j] / static_cast<double>(count));
    return out;
  }

  Var multi_head(ComputeTape<Real>& tape, Var query, Var keys, Var values, const KeyMask& keep) const {
    const std::size_t heads = config_.head_count;
    if (heads == 1) return attention(tape, query, keys, values, keep);
    const std::size_t hd = config_.model_dim / heads;
    std::vector<Var> outs;
    for (std::size_t h = 0; h < heads; ++h) {
      outs.push_back(attention(tape, slice_cols(tape, query, h * hd, hd), slice_cols(tape, keys, h * hd, hd),
                               slice_cols(tape, values, h * hd, hd), keep));
    }
    return concat_cols(tape, std::span<const Var>(outs));
  }

  void add_weight(std::string name, std::size_t in, std::size_t out, Rng& rng) {
    TensorType w({in, out});
    const double sd = 1.0 / std::sqrt(static_cast<double>(in));
    for (auto& v : w.data()) v = static_cast<Real>(rng.normal(0.0, sd));
    params_.push_back({std::move(name), std::move(w), true});
  }
  void add_normal(std::string name, Shape shape, double sd, Rng& rng) {
    TensorType w(std::move(shape));
    for (auto& v : w.data()) v = static_cast<Real>(rng.normal(0.0, sd));
    params_.push_back({std::move(name), std::move(w), false});
  }
  void add_zeros(std::string name, Shape shape) { params_.push_back({std::move(name), TensorType(std::move(shape)), false}); }
  void add_filled(std::string name, Shape shape, Real v) {
    params_.push_back({std::move(name), TensorType::filled(std::move(shape), v), false});
  }

  ProbeConfig config_;
  std::vector<ProbeParameter<Real>> params_;
};

/// Same head with parameters converted to another precision.
template <class To, class From>
ProbeHead<To> convert_head(const ProbeHead<From>& head) {
  ProbeHead<To> out(head.config(), 0);
  for (std::size_t k = 0; k < head.parameters().size(); ++k)
    out.parameters()[k].value = head.parameters()[k].value.template cast<To>();
  return out;
}

/// Logits before and after permuting the clip's frames; the mask, if any, is
/// permuted along with the frames.
template <class Real>
double permutation_logit_change(const ProbeHead<Real>& head, const TokenSequence& clip,
                                std::span<const std::size_t> frame_order, const TokenMask* mask = nullptr) {
  const auto base = head.infer(clip, mask);
  const TokenSequence permuted = clip.select_frames(frame_order);
  TokenMask pmask;
  if (mask) {
    pmask = TokenMask(mask->frames(), mask->tokens());
    for (std::size_t t = 0; t < frame_order.size(); ++t)
      for (std::size_t i = 0; i < mask->tokens(); ++i) pmask.set(t, i, mask->kept(frame_order[t], i));
  }
  const auto moved = head.infer(permuted, mask ? &pmask : nullptr);
  double change = 0.0;
  for (std::size_t c = 0; c < base.logits.size(); ++c)
    change = std::max(change, std::abs(static_cast<double>(base.logits[c]) - moved.logits[c]));
  return change;
}

/// True when logits are unchanged (within `tol`) under the frame permutation.
template <class Real>
bool permutation_probe_property(const ProbeHead<Real>& head, const TokenSequence& clip,
                                std::span<const std::size_t> frame_order, double tol = 1e-5) {
  return permutation_logit_change(head, clip, frame_order) <= tol;
}

}  // namespace tmask

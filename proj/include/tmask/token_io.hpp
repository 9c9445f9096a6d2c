#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "tmask/error.hpp"

namespace tmask {

/// Frozen-encoder output for one video or clip: frames × tokens × dim patch
/// embeddings, plus optional per-frame class-token vectors (frames × dim).
struct TokenSequence {
  std::size_t frames = 0;
  std::size_t tokens = 0;
  std::size_t dim = 0;
  std::vector<float> values;
  std::vector<float> class_tokens;

  TokenSequence() = default;
  TokenSequence(std::size_t t, std::size_t n, std::size_t d)
      : frames(t), tokens(n), dim(d), values(t * n * d, 0.0f) {}

  bool has_class_tokens() const noexcept { return !class_tokens.empty(); }

  std::span<float> token(std::size_t t, std::size_t i) {
    return std::span<float>(values).subspan((t * tokens + i) * dim, dim);
  }
  std::span<const float> token(std::size_t t, std::size_t i) const {
    return std::span<const float>(values).subspan((t * tokens + i) * dim, dim);
  }
  std::span<const float> class_token(std::size_t t) const {
    return std::span<const float>(class_tokens).subspan(t * dim, dim);
  }

  void validate() const {
    require(values.size() == frames * tokens * dim, ErrorCode::kDimension,
            "token sequence payload does not match T×N×D");
    require(class_tokens.empty() || class_tokens.size() == frames * dim, ErrorCode::kDimension,
            "class tokens must be T×D");
  }

  /// Frames at `indices` (repeats allowed), in the given order.
  TokenSequence select_frames(std::span<const std::size_t> indices) const {
    TokenSequence out(indices.size(), tokens, dim);
    const std::size_t stride = tokens * dim;
    for (std::size_t k = 0; k < indices.size(); ++k) {
      require(indices[k] < frames, ErrorCode::kDimension, "frame index out of range");
      std::memcpy(out.values.data() + k * stride, values.data() + indices[k] * stride,
                  stride * sizeof(float));
    }
    if (has_class_tokens()) {
      out.class_tokens.resize(indices.size() * dim);
      for (std::size_t k = 0; k < indices.size(); ++k)
        std::memcpy(out.class_tokens.data() + k * dim, class_tokens.data() + indices[k] * dim,
                    dim * sizeof(float));
    }
    return out;
  }

  friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

/// Whether the first token of every frame in a file is the encoder's class token.
enum class ClassTokenLayout { kNone, kFirstToken };

struct TokenFileHeader {
  std::uint32_t version = 1;
  std::uint32_t frames = 0;
  std::uint32_t tokens = 0;
  std::uint32_t dim = 0;
  std::uint8_t dtype = 1;
};

inline constexpr std::array<char, 4> kTokenFileMagic{'T', 'M', 'S', 'K'};
inline constexpr std::uint32_t kTokenFileVersion = 1;
inline constexpr std::uint8_t kDtypeF32 = 1;
inline constexpr std::size_t kTokenHeaderBytes = 4 + 4 + 3 * 4 + 1;

namespace detail {

inline void put_u32(std::vector<char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline std::uint32_t get_u32(const char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

inline void put_f32(std::vector<char>& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }
inline float get_f32(const char* p) { return std::bit_cast<float>(get_u32(p)); }

inline std::vector<char> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open " + path.string());
  return std::vector<char>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

inline void write_all(const std::filesystem::path& path, std::span<const char> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorCode::kIo, "write failed for " + path.string());
}

inline TokenFileHeader parse_header(std::span<const char> bytes, const std::string& origin) {
  require(bytes.size() >= kTokenHeaderBytes, ErrorCode::kLength, origin + ": truncated header");
  require(std::memcmp(bytes.data(), kTokenFileMagic.data(), 4) == 0, ErrorCode::kParse,
          origin + ": bad magic, not a token file");
  TokenFileHeader h;
  h.version = get_u32(bytes.data() + 4);
  require(h.version == kTokenFileVersion, ErrorCode::kUnsupportedVersion,
          origin + ": unsupported token file version " + std::to_string(h.version));
  h.frames = get_u32(bytes.data() + 8);
  h.tokens = get_u32(bytes.data() + 12);
  h.dim = get_u32(bytes.data() + 16);
  h.dtype = static_cast<std::uint8_t>(bytes[20]);
  require(h.dtype == kDtypeF32, ErrorCode::kParse,
          origin + ": unsupported dtype code " + std::to_string(h.dtype));
  return h;
}

}  // namespace detail

/// Serialized bytes of a token file. Class tokens, when present, are stored as
/// token 0 of each frame (the header's N then counts them).
inline std::vector<char> encode_token_file(const TokenSequence& seq) {
  seq.validate();
  const std::size_t n_out = seq.tokens + (seq.has_class_tokens() ? 1 : 0);
  std::vector<char> out(kTokenFileMagic.begin(), kTokenFileMagic.end());
  out.reserve(kTokenHeaderBytes + seq.frames * n_out * seq.dim * 4);
  detail::put_u32(out, kTokenFileVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(seq.frames));
  detail::put_u32(out, static_cast<std::uint32_t>(n_out));
  detail::put_u32(out, static_cast<std::uint32_t>(seq.dim));
  out.push_back(static_cast<char>(kDtypeF32));
  for (std::size_t t = 0; t < seq.frames; ++t) {
    if (seq.has_class_tokens())
      for (float v : seq.class_token(t)) detail::put_f32(out, v);
    for (std::size_t i = 0; i < seq.tokens; ++i)
      for (float v : seq.token(t, i)) detail::put_f32(out, v);
  }
  return out;
}

inline TokenSequence decode_token_file(std::span<const char> bytes,
                                       ClassTokenLayout layout = ClassTokenLayout::kNone,
                                       const std::string& origin = "token file") {
  const TokenFileHeader h = detail::parse_header(bytes, origin);
  const std::size_t count = static_cast<std::size_t>(h.frames) * h.tokens * h.dim;
  const std::size_t expected = kTokenHeaderBytes + count * 4;
  require(bytes.size() == expected, ErrorCode::kLength,
          origin + ": payload length " + std::to_string(bytes.size() - kTokenHeaderBytes) +
              " bytes, expected " + std::to_string(count * 4));
  const bool cls = layout == ClassTokenLayout::kFirstToken;
  require(!cls || h.tokens >= 2, ErrorCode::kDimension,
          origin + ": class-token layout needs at least one patch token");
  TokenSequence seq(h.frames, h.tokens - (cls ? 1 : 0), h.dim);
  if (cls) seq.class_tokens.resize(static_cast<std::size_t>(h.frames) * h.dim);
  const char* p = bytes.data() + kTokenHeaderBytes;
  for (std::size_t t = 0; t < h.frames; ++t) {
    for (std::size_t i = 0; i < h.tokens; ++i) {
      float* dst = cls && i == 0 ? seq.class_tokens.data() + t * h.dim
                                 : seq.values.data() + ((t * seq.tokens) + i - (cls ? 1 : 0)) * h.dim;
      for (std::size_t j = 0; j < h.dim; ++j, p += 4) dst[j] = detail::get_f32(p);
    }
  }
  return seq;
}

inline void write_token_file(const TokenSequence& seq, const std::filesystem::path& path) {
  detail::write_all(path, encode_token_file(seq));
}

inline TokenSequence read_token_file(const std::filesystem::path& path,
                                     ClassTokenLayout layout = ClassTokenLayout::kNone) {
  const auto bytes = detail::read_all(path);
  return decode_token_file(bytes, layout, path.string());
}

/// Header only; used to validate manifest dimensions without loading payloads.
inline TokenFileHeader read_token_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open " + path.string());
  std::array<char, kTokenHeaderBytes> buf{};
  in.read(buf.data(), buf.size());
  const auto got = static_cast<std::size_t>(in.gcount());
  return detail::parse_header(std::span<const char>(buf.data(), got), path.string());
}

}  // namespace tmask

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tmask/probes.hpp"
#include "tmask/token_io.hpp"
#include "tmask/train_config.hpp"

namespace tmask {

/// Trained probe plus everything needed to reproduce its evaluation: the
/// masking settings with the threshold frozen at train time.
struct Checkpoint {
  ProbeHead<float> head;
  TrainConfig train;
  MaskSettings mask;  // mask.tau holds the τ used in training (tmask mode)
  std::size_t epoch = 0;
  std::uint64_t rng_digest = 0;
};

// Layout: magic "TMCK", u32 version = 1, u32 header length, UTF-8 JSON header
// (probe config, training metadata, parameter names and shapes), then each
// parameter's values as little-endian f32 in header order.
inline constexpr std::array<char, 4> kCheckpointMagic{'T', 'M', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline nlohmann::json checkpoint_header(const Checkpoint& ck) {
  nlohmann::json params = nlohmann::json::array();
  for (const auto& p : ck.head.parameters()) params.push_back({{"name", p.name}, {"shape", p.value.shape()}});
  return {{"probe", probe_config_to_json(ck.head.config())},
          {"train", train_config_to_json(ck.train)},
          {"mask", mask_settings_to_json(ck.mask)},
          {"epoch", ck.epoch},
          {"rng_digest", ck.rng_digest},
          {"parameters", std::move(params)}};
}

inline std::vector<char> encode_checkpoint(const Checkpoint& ck) {
  const std::string header = checkpoint_header(ck).dump();
  std::vector<char> out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(header.size()));
  out.insert(out.end(), header.begin(), header.end());
  for (const auto& p : ck.head.parameters())
    for (float v : p.value.data()) detail::put_f32(out, v);
  return out;
}

inline Checkpoint decode_checkpoint(std::span<const char> bytes, const std::string& origin = "checkpoint") {
  require(bytes.size() >= 12, ErrorCode::kLength, origin + ": truncated checkpoint");
  require(std::memcmp(bytes.data(), kCheckpointMagic.data(), 4) == 0, ErrorCode::kParse,
          origin + ": bad magic, not a checkpoint");
  const std::uint32_t version = detail::get_u32(bytes.data() + 4);
  require(version == kCheckpointVersion, ErrorCode::kUnsupportedVersion,
          origin + ": unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t hlen = detail::get_u32(bytes.data() + 8);
  require(bytes.size() >= 12 + static_cast<std::size_t>(hlen), ErrorCode::kLength, origin + ": truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + hlen);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParse, origin + ": " + e.what());
  }
  Checkpoint ck{ProbeHead<float>(probe_config_from_json(header.at("probe")), 0),
                train_config_from_json(header.at("train")),
                mask_settings_from_json(header.at("mask")),
                header.at("epoch").get<std::size_t>(),
                header.at("rng_digest").get<std::uint64_t>()};
  const auto& names = header.at("parameters");
  auto& params = ck.head.parameters();
  require(names.size() == params.size(), ErrorCode::kParse, origin + ": parameter list does not match the probe");
  std::size_t payload = 0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    require(names[k].at("name").get<std::string>() == params[k].name &&
                names[k].at("shape").get<Shape>() == params[k].value.shape(),
            ErrorCode::kParse, origin + ": unexpected parameter " + names[k].dump());
    payload += params[k].value.size();
  }
  require(bytes.size() == 12 + hlen + payload * 4, ErrorCode::kLength, origin + ": parameter payload length mismatch");
  const char* p = bytes.data() + 12 + hlen;
  for (auto& param : params)
    for (auto& v : param.value.data()) {
      v = detail::get_f32(p);
      p += 4;
    }
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  detail::write_all(path, encode_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = detail::read_all(path);
  return decode_checkpoint(bytes, path.string());
}

}  // namespace tmask

#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "tmask/error.hpp"
#include "tmask/token_io.hpp"

namespace tmask {

using json = nlohmann::json;

struct ManifestEntry {
  std::string sample_id;
  std::size_t label = 0;
  std::string view;
  std::string split = "test";  // "train" or "test"
  std::string path;            // relative to the manifest's directory
  std::size_t frames = 0;
  std::size_t tokens = 0;      // tokens per frame as stored in the file
  std::size_t dim = 0;
  bool class_token = false;    // token 0 of each frame is the class token

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct DatasetManifest {
  std::vector<std::string> class_names;
  std::vector<std::string> view_names;
  std::string train_view;
  std::vector<std::string> novel_views;
  std::vector<ManifestEntry> entries;

  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;

  bool is_known_view(const std::string& v) const {
    return std::find(view_names.begin(), view_names.end(), v) != view_names.end();
  }

  /// Train view followed by the novel views, in declaration order.
  std::vector<std::string> evaluation_views() const {
    std::vector<std::string> out{train_view};
    out.insert(out.end(), novel_views.begin(), novel_views.end());
    return out;
  }

  void validate() const {
    require(class_names.size() >= 2, ErrorCode::kValidation, "manifest needs at least two classes");
    require(is_known_view(train_view), ErrorCode::kValidation,
            "train_view '" + train_view + "' is not a declared view");
    for (const auto& v : novel_views) {
      require(is_known_view(v), ErrorCode::kValidation, "novel view '" + v + "' is not a declared view");
      require(v != train_view, ErrorCode::kValidation,
              "train view '" + v + "' is also listed as a novel view");
    }
    std::set<std::string> ids;
    for (const auto& e : entries) {
      require(ids.insert(e.sample_id).second, ErrorCode::kValidation,
              "duplicate sample_id '" + e.sample_id + "'");
      require(is_known_view(e.view), ErrorCode::kValidation,
              "entry '" + e.sample_id + "' has unknown view '" + e.view + "'");
      require(e.label < class_names.size(), ErrorCode::kValidation,
              "entry '" + e.sample_id + "' label out of range");
      require(e.split == "train" || e.split == "test", ErrorCode::kValidation,
              "entry '" + e.sample_id + "' split must be 'train' or 'test'");
      require(e.frames >= 1 && e.tokens >= 1 && e.dim >= 1, ErrorCode::kValidation,
              "entry '" + e.sample_id + "' has empty dimensions");
    }
  }
};

namespace detail {

inline void reject_unknown_keys(const json& j, std::initializer_list<const char*> allowed,
                                const std::string& where) {
  for (const auto& [key, _] : j.items()) {
    const bool ok = key == "metadata" ||
                    std::any_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; });
    require(ok, ErrorCode::kValidation, where + ": unknown key '" + key + "'");
  }
}

template <class T>
T field(const json& j, const char* key, const std::string& where) {
  require(j.contains(key), ErrorCode::kValidation, where + ": missing key '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    fail(ErrorCode::kValidation, where + ": bad value for '" + key + "': " + e.what());
  }
}

}  // namespace detail

inline json manifest_to_json(const DatasetManifest& m) {
  json entries = json::array();
  for (const auto& e : m.entries) {
    entries.push_back({{"sample_id", e.sample_id}, {"label", e.label},   {"view", e.view},
                       {"split", e.split},         {"path", e.path},     {"frames", e.frames},
                       {"tokens", e.tokens},       {"dim", e.dim},       {"class_token", e.class_token}});
  }
  return {{"format", "tmask-manifest"},
          {"version", 1},
          {"class_names", m.class_names},
          {"view_names", m.view_names},
          {"train_view", m.train_view},
          {"novel_views", m.novel_views},
          {"entries", std::move(entries)}};
}

inline DatasetManifest manifest_from_json(const json& j) {
  require(j.is_object(), ErrorCode::kValidation, "manifest must be a JSON object");
  detail::reject_unknown_keys(
      j, {"format", "version", "class_names", "view_names", "train_view", "novel_views", "entries"},
      "manifest");
  require(detail::field<std::string>(j, "format", "manifest") == "tmask-manifest",
          ErrorCode::kValidation, "manifest: format must be 'tmask-manifest'");
  require(detail::field<int>(j, "version", "manifest") == 1, ErrorCode::kUnsupportedVersion,
          "manifest: unsupported version");
  DatasetManifest m;
  m.class_names = detail::field<std::vector<std::string>>(j, "class_names", "manifest");
  m.view_names = detail::field<std::vector<std::string>>(j, "view_names", "manifest");
  m.train_view = detail::field<std::string>(j, "train_view", "manifest");
  m.novel_views = detail::field<std::vector<std::string>>(j, "novel_views", "manifest");
  const json& entries = j.at("entries");
  require(entries.is_array(), ErrorCode::kValidation, "manifest: entries must be an array");
  for (const auto& ej : entries) {
    const std::string where = "manifest entry";
    detail::reject_unknown_keys(
        ej, {"sample_id", "label", "view", "split", "path", "frames", "tokens", "dim", "class_token"}, where);
    ManifestEntry e;
    e.sample_id = detail::field<std::string>(ej, "sample_id", where);
    e.label = detail::field<std::size_t>(ej, "label", where);
    e.view = detail::field<std::string>(ej, "view", where);
    e.split = detail::field<std::string>(ej, "split", where);
    e.path = detail::field<std::string>(ej, "path", where);
    e.frames = detail::field<std::size_t>(ej, "frames", where);
    e.tokens = detail::field<std::size_t>(ej, "tokens", where);
    e.dim = detail::field<std::size_t>(ej, "dim", where);
    e.class_token = ej.value("class_token", false);
    m.entries.push_back(std::move(e));
  }
  m.validate();
  return m;
}

inline void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  m.validate();
  const std::string text = manifest_to_json(m).dump(2) + "\n";
  detail::write_all(path, std::span<const char>(text.data(), text.size()));
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open manifest " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorCode::kParse, path.string() + ": " + e.what());
  }
  return manifest_from_json(j);
}

struct LabeledVideo {
  std::string sample_id;
  std::size_t label = 0;
  std::string view;
  TokenSequence tokens;
};

struct DatasetSplit {
  std::vector<LabeledVideo> train;
  std::map<std::string, std::vector<LabeledVideo>> test;  // keyed by view
};

/// Partitions in-memory videos (parallel to `m.entries`) into the training set
/// (train split, train view only) and per-view test sets.
inline DatasetSplit partition_videos(const DatasetManifest& m, std::vector<TokenSequence> videos) {
  m.validate();
  require(videos.size() == m.entries.size(), ErrorCode::kInput, "one video per manifest entry required");
  DatasetSplit split;
  for (const auto& v : m.evaluation_views()) split.test[v];
  for (std::size_t i = 0; i < videos.size(); ++i) {
    const auto& e = m.entries[i];
    LabeledVideo lv{e.sample_id, e.label, e.view, std::move(videos[i])};
    if (e.split == "train") {
      if (e.view == m.train_view) split.train.push_back(std::move(lv));
    } else if (split.test.contains(e.view)) {
      split.test[e.view].push_back(std::move(lv));
    }
  }
  require(!split.train.empty(), ErrorCode::kConfig,
          "no training videos in train view '" + m.train_view + "'");
  return split;
}

/// Loads every referenced token file, checking that headers match the entries.
inline std::vector<TokenSequence> load_videos(const DatasetManifest& m, const std::filesystem::path& base_dir) {
  std::vector<TokenSequence> videos;
  videos.reserve(m.entries.size());
  for (const auto& e : m.entries) {
    const auto path = base_dir / e.path;
    const auto h = read_token_header(path);
    require(h.frames == e.frames && h.tokens == e.tokens && h.dim == e.dim, ErrorCode::kValidation,
            "entry '" + e.sample_id + "' dims do not match file header of " + path.string());
    videos.push_back(read_token_file(path, e.class_token ? ClassTokenLayout::kFirstToken
                                                         : ClassTokenLayout::kNone));
  }
  return videos;
}

inline DatasetSplit load_split(const DatasetManifest& m, const std::filesystem::path& base_dir) {
  m.validate();
  return partition_videos(m, load_videos(m, base_dir));
}

}  // namespace tmask

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "stcat/embedder.hpp"
#include "stcat/grounding.hpp"
#include "stcat/workbench/synthetic.hpp"

namespace stcat::io {

namespace fs = std::filesystem;

/// Malformed or unreadable dataset/checkpoint artifact; `path` names the file.
class DataError : public std::runtime_error {
 public:
  DataError(const fs::path& path, const std::string& what)
      : std::runtime_error(path.string() + ": " + what), path_(path) {}
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

static_assert(std::endian::native == std::endian::little, "blob IO assumes a little-endian host");

inline constexpr char kBlobMagic[4] = {'S', 'T', 'C', 'V'};

inline void write_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }

inline void write_blob(const fs::path& path, const VideoClip& clip) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError(path, "cannot open for writing");
  os.write(kBlobMagic, 4);
  write_u32(os, static_cast<std::uint32_t>(clip.T));
  write_u32(os, static_cast<std::uint32_t>(clip.H));
  write_u32(os, static_cast<std::uint32_t>(clip.W));
  write_u32(os, 3);
  os.write(reinterpret_cast<const char*>(clip.pixels.data()),
           static_cast<std::streamsize>(clip.pixels.size() * sizeof(float)));
  if (!os) throw DataError(path, "write failed");
}

inline std::vector<char> read_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError(path, "cannot open for reading");
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

inline VideoClip read_blob(const fs::path& path) {
  const auto bytes = read_file(path);
  if (bytes.size() < 20) throw DataError(path, "truncated header (" + std::to_string(bytes.size()) + " bytes)");
  if (std::memcmp(bytes.data(), kBlobMagic, 4) != 0) throw DataError(path, "bad magic, expected STCV");
  std::uint32_t ext[4];
  std::memcpy(ext, bytes.data() + 4, sizeof ext);
  if (ext[3] != 3 || ext[0] == 0 || ext[1] == 0 || ext[2] == 0) {
    throw DataError(path, "inconsistent extents (" + std::to_string(ext[0]) + "," + std::to_string(ext[1]) + "," +
                              std::to_string(ext[2]) + "," + std::to_string(ext[3]) + ")");
  }
  VideoClip clip(ext[0], ext[1], ext[2]);
  const std::size_t payload = clip.pixels.size() * sizeof(float);
  if (bytes.size() != 20 + payload) {
    throw DataError(path, "expected " + std::to_string(20 + payload) + " bytes, found " +
                              std::to_string(bytes.size()));
  }
  std::memcpy(clip.pixels.data(), bytes.data() + 20, payload);
  return clip;
}

/// One manifest line. `sampling` maps model frame i to original frame
/// sampling[i] for the T_sampled the data was generated for.
struct ManifestEntry {
  std::string id;
  std::string blob;
  std::vector<int> tokens;
  std::string text;
  Tube gt;
  std::uint64_t seed = 0;
  std::size_t frames = 0, height = 0, width = 0;
  std::vector<int> sampling;
};

inline nlohmann::json to_json(const ManifestEntry& e) {
  nlohmann::json boxes = nlohmann::json::array();
  for (const auto& b : e.gt.boxes) boxes.push_back({b.cx, b.cy, b.w, b.h});
  return {{"id", e.id},
          {"blob", e.blob},
          {"tokens", e.tokens},
          {"text", e.text},
          {"gt", {{"t_start", e.gt.t_start}, {"t_end", e.gt.t_end}, {"boxes", boxes}}},
          {"seed", e.seed},
          {"frames", e.frames},
          {"height", e.height},
          {"width", e.width},
          {"sampling", e.sampling}};
}

inline ManifestEntry entry_from_json(const nlohmann::json& j, const fs::path& where) {
  ManifestEntry e;
  try {
    e.id = j.at("id").get<std::string>();
    e.blob = j.at("blob").get<std::string>();
    e.tokens = j.at("tokens").get<std::vector<int>>();
    e.text = j.value("text", std::string{});
    e.seed = j.at("seed").get<std::uint64_t>();
    e.frames = j.at("frames").get<std::size_t>();
    e.height = j.at("height").get<std::size_t>();
    e.width = j.at("width").get<std::size_t>();
    e.sampling = j.value("sampling", std::vector<int>{});
    const auto& gt = j.at("gt");
    e.gt.t_start = gt.at("t_start").get<int>();
    e.gt.t_end = gt.at("t_end").get<int>();
    for (const auto& b : gt.at("boxes")) {
      e.gt.boxes.push_back(Box{b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(),
                               b.at(3).get<double>()});
    }
  } catch (const nlohmann::json::exception& ex) {
    throw DataError(where, std::string("malformed manifest entry: ") + ex.what());
  }
  try {
    e.gt.validate(e.frames);
  } catch (const std::invalid_argument& ex) {
    throw DataError(where, "sample '" + e.id + "': " + ex.what());
  }
  for (int id : e.tokens) {
    if (id < 0 || static_cast<std::size_t>(id) >= synth::vocabulary_size()) {
      throw DataError(where, "sample '" + e.id + "': token id " + std::to_string(id) + " outside vocabulary");
    }
  }
  for (int f : e.sampling) {
    if (f < 0 || static_cast<std::size_t>(f) >= e.frames) {
      throw DataError(where, "sample '" + e.id + "': sampling index " + std::to_string(f) + " outside " +
                                 std::to_string(e.frames) + " frames");
    }
  }
  return e;
}

/// A sample as loaded for training/evaluation.
struct LoadedSample {
  ManifestEntry meta;
  VideoClip video;

  QueryTokens tokens() const { return QueryTokens{meta.tokens, synth::vocabulary_size()}; }
};

inline ManifestEntry describe(const synth::Sample& s, std::size_t sampled_frames) {
  ManifestEntry e;
  e.id = s.id;
  e.blob = s.id + ".stcv";
  e.tokens = s.tokens.ids;
  e.text = s.text;
  e.gt = s.gt;
  e.seed = s.seed;
  e.frames = s.video.T;
  e.height = s.video.H;
  e.width = s.video.W;
  e.sampling = uniform_sampling(s.video.T, sampled_frames);
  return e;
}

inline fs::path manifest_path(const fs::path& dir) { return dir / "manifest.jsonl"; }

/// Writes blobs and the manifest; entries keep the given order.
inline void write_dataset(const fs::path& dir, const std::vector<synth::Sample>& samples,
                          std::size_t sampled_frames = 16) {
  fs::create_directories(dir);
  std::ofstream os(manifest_path(dir), std::ios::trunc);
  if (!os) throw DataError(manifest_path(dir), "cannot open for writing");
  for (const auto& s : samples) {
    const auto e = describe(s, sampled_frames);
    write_blob(dir / e.blob, s.video);
    os << to_json(e).dump() << '\n';
  }
  if (!os) throw DataError(manifest_path(dir), "write failed");
}

inline std::vector<ManifestEntry> read_manifest(const fs::path& dir) {
  const auto path = manifest_path(dir);
  std::ifstream is(path);
  if (!is) throw DataError(path, "cannot open for reading");
  std::vector<ManifestEntry> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& ex) {
      throw DataError(path, "line " + std::to_string(lineno) + ": " + ex.what());
    }
    out.push_back(entry_from_json(j, path));
  }
  if (out.empty()) throw DataError(path, "manifest has no samples");
  return out;
}

inline LoadedSample load_sample(const fs::path& dir, const ManifestEntry& e) {
  LoadedSample s{e, read_blob(dir / e.blob)};
  if (s.video.T != e.frames || s.video.H != e.height || s.video.W != e.width) {
    throw DataError(dir / e.blob, "extents " + std::to_string(s.video.T) + "x" + std::to_string(s.video.H) + "x" +
                                      std::to_string(s.video.W) + " disagree with manifest " +
                                      std::to_string(e.frames) + "x" + std::to_string(e.height) + "x" +
                                      std::to_string(e.width));
  }
  return s;
}

inline std::vector<LoadedSample> read_dataset(const fs::path& dir) {
  std::vector<LoadedSample> out;
  for (const auto& e : read_manifest(dir)) out.push_back(load_sample(dir, e));
  return out;
}

}  // namespace stcat::io

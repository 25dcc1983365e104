#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "clonebench/core.hpp"
#include "clonebench/crc32.hpp"

namespace clonebench {

struct ArchiveError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// key=value manifest files. Values are single-line strings; characters that
// would break the framing (%, =, newline) are percent-encoded.
// ---------------------------------------------------------------------------

inline std::string kv_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '%' || c == '=' || c == '\n' || c == '\r') {
      char buf[4];
      std::snprintf(buf, sizeof buf, "%%%02X", static_cast<unsigned char>(c));
      out += buf;
    } else {
      out += c;
    }
  }
  return out;
}

inline std::string kv_unescape(const std::string& s) {
  std::string out;
  for (size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '%' && i + 2 < s.size()) {
      out += static_cast<char>(std::stoi(s.substr(i + 1, 2), nullptr, 16));
      i += 2;
    } else {
      out += s[i];
    }
  }
  return out;
}

using KvMap = std::map<std::string, std::string>;

inline void kv_write(const std::filesystem::path& path, const std::vector<std::pair<std::string, std::string>>& entries) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ArchiveError("cannot write " + path.string());
  for (const auto& [k, v] : entries) f << k << '=' << kv_escape(v) << '\n';
}

inline KvMap kv_read(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ArchiveError("cannot read " + path.string());
  KvMap out;
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw ArchiveError("malformed line in " + path.string() + ": " + line);
    out[line.substr(0, eq)] = kv_unescape(line.substr(eq + 1));
  }
  return out;
}

inline const std::string& kv_get(const KvMap& m, const std::string& key, const std::filesystem::path& origin) {
  auto it = m.find(key);
  if (it == m.end()) throw ArchiveError("missing key '" + key + "' in " + origin.string());
  return it->second;
}

// ---------------------------------------------------------------------------
// Episode archive: one directory holding
//   manifest     key=value metadata, frame count and frames.bin CRC32
//   frames.bin   concatenated raw RGB24 frames, no padding
//   actions.log  "index<TAB>i0,i1,...,ik" per frame, indices ascending from 0
// ---------------------------------------------------------------------------

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::filesystem::path write_episode(const Episode& ep, const std::filesystem::path& dir) {
  auto violations = validate_episode(ep);
  if (!violations.empty()) {
    std::string msg = "episode fails validation:";
    for (const auto& v : violations)
      msg += "\n  [frame " + std::to_string(v.frame_index) + "] " + v.rule;
    throw ArchiveError(msg);
  }
  std::filesystem::create_directories(dir);

  uint32_t crc = 0;
  {
    std::ofstream fb(dir / "frames.bin", std::ios::binary);
    if (!fb) throw ArchiveError("cannot write " + (dir / "frames.bin").string());
    for (const auto& fr : ep.frames) {
      fb.write(reinterpret_cast<const char*>(fr.pixels.data()),
               static_cast<std::streamsize>(fr.pixels.size()));
      crc = crc32(fr.pixels.data(), fr.pixels.size(), crc);
    }
    if (!fb) throw ArchiveError("short write to " + (dir / "frames.bin").string());
  }
  {
    std::ofstream fa(dir / "actions.log", std::ios::binary);
    if (!fa) throw ArchiveError("cannot write " + (dir / "actions.log").string());
    for (size_t i = 0; i < ep.actions.size(); ++i) {
      fa << i << '\t';
      const auto& idx = ep.actions[i].indices;
      for (size_t k = 0; k < idx.size(); ++k) fa << (k ? "," : "") << idx[k];
      fa << '\n';
    }
  }
  std::vector<std::pair<std::string, std::string>> kv;
  kv.emplace_back("format", "clonebench-episode-v1");
  kv.emplace_back("game_id", ep.meta.game_id);
  kv.emplace_back("player_id", ep.meta.player_id);
  kv.emplace_back("fps", format_double(ep.meta.fps));
  kv.emplace_back("native_width", std::to_string(ep.meta.native_width));
  kv.emplace_back("native_height", std::to_string(ep.meta.native_height));
  kv.emplace_back("final_score", format_double(ep.meta.final_score));
  kv.emplace_back("recorded_at", std::to_string(ep.meta.recorded_at));
  kv.emplace_back("applied_delay", std::to_string(ep.meta.applied_delay));
  kv.emplace_back("var_count", std::to_string(ep.meta.action_space.variables.size()));
  for (size_t i = 0; i < ep.meta.action_space.variables.size(); ++i) {
    const auto& v = ep.meta.action_space.variables[i];
    kv.emplace_back("var" + std::to_string(i), v.name + ":" + std::to_string(v.cardinality));
  }
  kv.emplace_back("frame_count", std::to_string(ep.frames.size()));
  char crchex[16];
  std::snprintf(crchex, sizeof crchex, "%08x", crc);
  kv.emplace_back("crc32", crchex);
  kv_write(dir / "manifest", kv);
  return dir;
}

inline Episode read_episode(const std::filesystem::path& dir) {
  const auto mpath = dir / "manifest";
  KvMap m = kv_read(mpath);
  if (kv_get(m, "format", mpath) != "clonebench-episode-v1")
    throw ArchiveError("unknown archive format in " + mpath.string());

  Episode ep;
  ep.meta.game_id = kv_get(m, "game_id", mpath);
  ep.meta.player_id = kv_get(m, "player_id", mpath);
  ep.meta.fps = std::stod(kv_get(m, "fps", mpath));
  ep.meta.native_width = std::stoi(kv_get(m, "native_width", mpath));
  ep.meta.native_height = std::stoi(kv_get(m, "native_height", mpath));
  ep.meta.final_score = std::stod(kv_get(m, "final_score", mpath));
  ep.meta.recorded_at = std::stoll(kv_get(m, "recorded_at", mpath));
  if (auto it = m.find("applied_delay"); it != m.end()) ep.meta.applied_delay = std::stoi(it->second);
  size_t var_count = std::stoul(kv_get(m, "var_count", mpath));
  for (size_t i = 0; i < var_count; ++i) {
    const std::string& spec = kv_get(m, "var" + std::to_string(i), mpath);
    auto colon = spec.rfind(':');
    if (colon == std::string::npos) throw ArchiveError("malformed variable entry: " + spec);
    ep.meta.action_space.variables.push_back(
        {spec.substr(0, colon), std::stoi(spec.substr(colon + 1))});
  }
  size_t frame_count = std::stoul(kv_get(m, "frame_count", mpath));
  uint32_t want_crc = static_cast<uint32_t>(std::stoul(kv_get(m, "crc32", mpath), nullptr, 16));

  const size_t frame_bytes =
      static_cast<size_t>(ep.meta.native_width) * ep.meta.native_height * 3;
  {
    std::ifstream fb(dir / "frames.bin", std::ios::binary);
    if (!fb) throw ArchiveError("cannot read " + (dir / "frames.bin").string());
    fb.seekg(0, std::ios::end);
    const auto size = static_cast<size_t>(fb.tellg());
    if (size != frame_bytes * frame_count)
      throw ArchiveError("frames.bin is truncated or oversized: got " + std::to_string(size) +
                         " bytes, expected " + std::to_string(frame_bytes * frame_count));
    fb.seekg(0);
    uint32_t crc = 0;
    ep.frames.reserve(frame_count);
    for (size_t i = 0; i < frame_count; ++i) {
      Observation fr(ep.meta.native_width, ep.meta.native_height);
      fb.read(reinterpret_cast<char*>(fr.pixels.data()), static_cast<std::streamsize>(frame_bytes));
      if (!fb) throw ArchiveError("frames.bin is truncated at frame " + std::to_string(i));
      crc = crc32(fr.pixels.data(), fr.pixels.size(), crc);
      ep.frames.push_back(std::move(fr));
    }
    if (crc != want_crc) throw ArchiveError("frames.bin checksum mismatch in " + dir.string());
  }
  {
    std::ifstream fa(dir / "actions.log", std::ios::binary);
    if (!fa) throw ArchiveError("cannot read " + (dir / "actions.log").string());
    std::string line;
    size_t expect = 0;
    while (std::getline(fa, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      auto tab = line.find('\t');
      if (tab == std::string::npos) throw ArchiveError("malformed actions.log line: " + line);
      size_t idx = std::stoul(line.substr(0, tab));
      if (idx != expect)
        throw ArchiveError("actions.log indices not ascending from 0 (got " +
                           std::to_string(idx) + ", expected " + std::to_string(expect) + ")");
      Action a;
      std::stringstream ss(line.substr(tab + 1));
      std::string tok;
      while (std::getline(ss, tok, ',')) a.indices.push_back(std::stoi(tok));
      if (a.indices.empty()) throw ArchiveError("actions.log record carries no indices: " + line);
      ep.actions.push_back(std::move(a));
      ++expect;
    }
    if (ep.actions.size() != frame_count)
      throw ArchiveError("actions.log record count " + std::to_string(ep.actions.size()) +
                         " does not match frame count " + std::to_string(frame_count));
  }
  return ep;
}

// Adapters for external demonstration stores implement this and hand
// Episodes to the rest of the pipeline; the directory reader below is the
// only implementation that ships.
struct EpisodeSource {
  virtual ~EpisodeSource() = default;
  virtual size_t episode_count() const = 0;
  virtual Episode episode(size_t i) const = 0;
};

// A dataset on disk is a directory of episode archives. Episode order is
// the lexicographic order of directory names, which write_dataset makes the
// write order by zero-padding.
inline std::vector<std::filesystem::path> list_episode_dirs(const std::filesystem::path& root) {
  std::vector<std::filesystem::path> dirs;
  if (!std::filesystem::is_directory(root)) throw ArchiveError("not a directory: " + root.string());
  for (const auto& entry : std::filesystem::directory_iterator(root))
    if (entry.is_directory() && std::filesystem::exists(entry.path() / "manifest"))
      dirs.push_back(entry.path());
  std::sort(dirs.begin(), dirs.end());
  return dirs;
}

struct DirectoryEpisodeSource final : EpisodeSource {
  std::vector<std::filesystem::path> dirs;
  explicit DirectoryEpisodeSource(const std::filesystem::path& root) : dirs(list_episode_dirs(root)) {}
  size_t episode_count() const override { return dirs.size(); }
  Episode episode(size_t i) const override { return read_episode(dirs.at(i)); }
};

inline void write_dataset(const Dataset& ds, const std::filesystem::path& root) {
  std::filesystem::create_directories(root);
  for (size_t i = 0; i < ds.episodes.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "ep_%05zu", i);
    write_episode(ds.episodes[i], root / name);
  }
}

inline Dataset read_dataset(const std::filesystem::path& root) {
  DirectoryEpisodeSource src(root);
  Dataset ds;
  ds.episodes.reserve(src.episode_count());
  for (size_t i = 0; i < src.episode_count(); ++i) ds.episodes.push_back(src.episode(i));
  if (ds.episodes.empty()) throw ArchiveError("no episode archives under " + root.string());
  return ds;
}

// ---------------------------------------------------------------------------
// Statistics and percentile filtering
// ---------------------------------------------------------------------------

// Nearest-rank quantile over episode final scores: the rank-ceil(p*n)
// smallest score, 1-based. p <= 0 gives the minimum, p >= 1 the maximum.
inline double score_quantile(const std::vector<double>& scores, double p) {
  if (scores.empty()) throw std::invalid_argument("quantile of empty score list");
  std::vector<double> s(scores);
  std::sort(s.begin(), s.end());
  const auto n = static_cast<double>(s.size());
  auto rank = static_cast<long>(std::ceil(p * n));
  if (rank < 1) rank = 1;
  if (rank > static_cast<long>(s.size())) rank = static_cast<long>(s.size());
  return s[static_cast<size_t>(rank - 1)];
}

struct PlayerStats {
  size_t episodes = 0;
  size_t samples = 0;
  double mean_score = 0.0;
};

struct DatasetStats {
  size_t episode_count = 0;
  size_t total_samples = 0;
  double min_score = 0.0;
  double max_score = 0.0;
  double mean_score = 0.0;
  double median_score = 0.0;
  double p95_score = 0.0;
  std::map<std::string, PlayerStats> per_player;
};

inline DatasetStats dataset_stats(const Dataset& ds) {
  DatasetStats st;
  st.episode_count = ds.episodes.size();
  std::vector<double> scores;
  scores.reserve(ds.episodes.size());
  for (const auto& ep : ds.episodes) {
    st.total_samples += ep.length();
    scores.push_back(ep.meta.final_score);
    auto& p = st.per_player[ep.meta.player_id];
    ++p.episodes;
    p.samples += ep.length();
    p.mean_score += ep.meta.final_score;
  }
  for (auto& [_, p] : st.per_player) p.mean_score /= static_cast<double>(p.episodes);
  if (!scores.empty()) {
    st.min_score = *std::min_element(scores.begin(), scores.end());
    st.max_score = *std::max_element(scores.begin(), scores.end());
    double sum = 0;
    for (double s : scores) sum += s;
    st.mean_score = sum / static_cast<double>(scores.size());
    st.median_score = score_quantile(scores, 0.5);
    st.p95_score = score_quantile(scores, 0.95);
  }
  return st;
}

// Keeps the episodes whose final score is strictly above the
// (1-keep_fraction) nearest-rank quantile; if strictness empties the result
// (all candidate scores tied at the threshold) it falls back to >=.
// Episode order is preserved and episode contents are never touched.
inline Dataset filter_top_percentile(const Dataset& ds, double keep_fraction) {
  if (ds.episodes.empty()) throw std::invalid_argument("filter_top_percentile: empty dataset");
  if (!(keep_fraction > 0.0) || keep_fraction > 1.0)
    throw std::invalid_argument("filter_top_percentile: keep_fraction must be in (0, 1]");
  if (keep_fraction >= 1.0) return ds;

  std::vector<double> scores;
  scores.reserve(ds.episodes.size());
  for (const auto& ep : ds.episodes) scores.push_back(ep.meta.final_score);
  const double threshold = score_quantile(scores, 1.0 - keep_fraction);

  Dataset out;
  for (const auto& ep : ds.episodes)
    if (ep.meta.final_score > threshold) out.episodes.push_back(ep);
  if (out.episodes.empty())
    for (const auto& ep : ds.episodes)
      if (ep.meta.final_score >= threshold) out.episodes.push_back(ep);
  return out;
}

} // namespace clonebench

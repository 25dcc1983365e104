#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace clonebench {

// One RGB frame as the demonstrator saw it. Pixels are packed row-major
// RGB24 with the origin at the top-left corner; buffer length is always
// width * height * 3.
struct Observation {
  int width = 0;
  int height = 0;
  static constexpr int channels = 3;
  std::vector<uint8_t> pixels;

  Observation() = default;
  Observation(int w, int h) : width(w), height(h), pixels(static_cast<size_t>(w) * h * 3, 0) {}

  size_t expected_bytes() const { return static_cast<size_t>(width) * height * 3; }
  bool valid() const { return width >= 1 && height >= 1 && pixels.size() == expected_bytes(); }

  uint8_t* at(int x, int y) { return pixels.data() + (static_cast<size_t>(y) * width + x) * 3; }
  const uint8_t* at(int x, int y) const {
    return pixels.data() + (static_cast<size_t>(y) * width + x) * 3;
  }

  bool operator==(const Observation& o) const {
    return width == o.width && height == o.height && pixels == o.pixels;
  }
};

struct DiscreteVariable {
  std::string name;
  int cardinality = 0;
  bool operator==(const DiscreteVariable& o) const {
    return name == o.name && cardinality == o.cardinality;
  }
};

// Ordered list of discrete variables. A multi-class space is a single
// variable (Atari: one variable of 18 choices); a multi-label keyboard
// space is one binary variable per button.
struct ActionSpace {
  std::vector<DiscreteVariable> variables;

  static ActionSpace multi_class(int n_options, std::string name = "action") {
    return ActionSpace{{DiscreteVariable{std::move(name), n_options}}};
  }
  static ActionSpace buttons(const std::vector<std::string>& names) {
    ActionSpace s;
    for (const auto& n : names) s.variables.push_back({n, 2});
    return s;
  }

  size_t num_variables() const { return variables.size(); }
  int total_logits() const {
    int t = 0;
    for (const auto& v : variables) t += v.cardinality;
    return t;
  }
  bool valid() const {
    if (variables.empty()) return false;
    for (const auto& v : variables)
      if (v.cardinality < 2) return false;
    return true;
  }
  // Structural equality: same variables, same order, same cardinalities.
  bool operator==(const ActionSpace& o) const { return variables == o.variables; }
};

// One index per ActionSpace variable.
struct Action {
  std::vector<int> indices;

  Action() = default;
  explicit Action(std::vector<int> idx) : indices(std::move(idx)) {}

  bool valid_for(const ActionSpace& space) const {
    if (indices.size() != space.variables.size()) return false;
    for (size_t i = 0; i < indices.size(); ++i)
      if (indices[i] < 0 || indices[i] >= space.variables[i].cardinality) return false;
    return true;
  }
  bool operator==(const Action& o) const { return indices == o.indices; }
};

struct EpisodeMeta {
  std::string game_id;
  std::string player_id;
  double fps = 0.0; // frames per second; fractional rates like 17.5 are fine
  int native_width = 0;
  int native_height = 0;
  ActionSpace action_space;
  double final_score = 0.0;
  int64_t recorded_at = 0; // unix seconds
  int applied_delay = 0;   // cumulative action-delay shift applied to this episode

  bool operator==(const EpisodeMeta& o) const {
    return game_id == o.game_id && player_id == o.player_id && fps == o.fps &&
           native_width == o.native_width && native_height == o.native_height &&
           action_space == o.action_space && final_score == o.final_score &&
           recorded_at == o.recorded_at && applied_delay == o.applied_delay;
  }
};

// Aligned frame/action sequences: frame i is paired with the input state
// sampled simultaneously with frame i.
struct Episode {
  EpisodeMeta meta;
  std::vector<Observation> frames;
  std::vector<Action> actions;

  size_t length() const { return frames.size(); }
  bool operator==(const Episode& o) const {
    return meta == o.meta && frames == o.frames && actions == o.actions;
  }
};

struct DatasetManifest {
  size_t episode_count = 0;
  size_t total_samples = 0;
  double min_score = 0.0;
  double max_score = 0.0;
  double mean_score = 0.0;
};

struct Dataset {
  std::vector<Episode> episodes;

  DatasetManifest manifest() const {
    DatasetManifest m;
    m.episode_count = episodes.size();
    for (size_t i = 0; i < episodes.size(); ++i) {
      m.total_samples += episodes[i].length();
      double s = episodes[i].meta.final_score;
      if (i == 0) {
        m.min_score = m.max_score = s;
      } else {
        if (s < m.min_score) m.min_score = s;
        if (s > m.max_score) m.max_score = s;
      }
      m.mean_score += s;
    }
    if (!episodes.empty()) m.mean_score /= static_cast<double>(episodes.size());
    return m;
  }
};

// Signed frame offset used to re-pair frame i with action i+d.
struct DelayOffset {
  int frames = 0;
};

struct Violation {
  long frame_index; // -1 when the violation is not tied to one frame
  std::string rule;
};

// Violations are data, not failures: an empty list means every Episode
// invariant holds.
inline std::vector<Violation> validate_episode(const Episode& ep) {
  std::vector<Violation> out;
  if (ep.frames.empty()) out.push_back({-1, "episode has no frames"});
  if (ep.frames.size() != ep.actions.size())
    out.push_back({-1, "frames (" + std::to_string(ep.frames.size()) + ") and actions (" +
                           std::to_string(ep.actions.size()) + ") differ in length"});
  if (!ep.meta.action_space.valid()) out.push_back({-1, "action space is not valid"});
  if (!(ep.meta.fps > 0.0)) out.push_back({-1, "fps must be positive"});
  for (size_t i = 0; i < ep.frames.size(); ++i) {
    const Observation& f = ep.frames[i];
    if (!f.valid()) {
      out.push_back({static_cast<long>(i), "frame pixel buffer does not match its dimensions"});
    } else if (f.width != ep.meta.native_width || f.height != ep.meta.native_height) {
      out.push_back({static_cast<long>(i), "frame dimensions differ from meta native resolution"});
    }
  }
  size_t n = ep.actions.size() < ep.frames.size() ? ep.actions.size() : ep.frames.size();
  for (size_t i = 0; i < n; ++i)
    if (!ep.actions[i].valid_for(ep.meta.action_space))
      out.push_back({static_cast<long>(i), "action index out of range for the action space"});
  return out;
}

} // namespace clonebench

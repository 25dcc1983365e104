#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "clonebench/archive.hpp"
#include "clonebench/nn.hpp"

namespace clonebench {

// Trained model snapshot: architecture, flat weights, the training config
// that produced it, the seed and the epoch it was taken after.
struct ModelCheckpoint {
  ModelArch arch;
  std::vector<float> weights;
  KvMap config;
  uint64_t seed = 0;
  int epoch = 0;

  PolicyModel to_model() const {
    PolicyModel m(arch);
    m.weights = weights;
    return m;
  }
};

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// On-disk form: a text header (magic+version, input dims, action variables,
// layer list, seed/epoch, config lines) terminated by "data", followed by
// the weights as a little-endian IEEE-754 float32 blob.
inline void save_checkpoint(const ModelCheckpoint& ckpt, const std::filesystem::path& path) {
  if (ckpt.weights.size() != ckpt.arch.param_count)
    throw CheckpointError("weight vector length " + std::to_string(ckpt.weights.size()) +
                          " does not match architecture parameter count " +
                          std::to_string(ckpt.arch.param_count));
  std::ofstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot write " + path.string());
  f << "CLONEBENCH-CKPT 1\n";
  f << "input " << ckpt.arch.in_c << ' ' << ckpt.arch.in_h << ' ' << ckpt.arch.in_w << '\n';
  for (const auto& v : ckpt.arch.space.variables)
    f << "var " << v.cardinality << ' ' << v.name << '\n';
  for (const auto& l : ckpt.arch.layers) f << "layer " << l.describe() << '\n';
  f << "seed " << ckpt.seed << '\n';
  f << "epoch " << ckpt.epoch << '\n';
  for (const auto& [k, v] : ckpt.config) f << "config " << k << '=' << kv_escape(v) << '\n';
  f << "params " << ckpt.weights.size() << '\n';
  f << "data\n";
  f.write(reinterpret_cast<const char*>(ckpt.weights.data()),
          static_cast<std::streamsize>(ckpt.weights.size() * sizeof(float)));
  if (!f) throw CheckpointError("short write to " + path.string());
}

inline ModelCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot read " + path.string());
  std::string line;
  if (!std::getline(f, line) || line != "CLONEBENCH-CKPT 1")
    throw CheckpointError("not a checkpoint file (bad magic): " + path.string());

  ModelCheckpoint ckpt;
  int in_c = 0, in_h = 0, in_w = 0;
  ActionSpace space;
  std::vector<LayerSpec> kinds;
  size_t params = 0;
  bool saw_data = false;
  while (std::getline(f, line)) {
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag == "input") {
      ss >> in_c >> in_h >> in_w;
    } else if (tag == "var") {
      DiscreteVariable v;
      ss >> v.cardinality;
      std::getline(ss, v.name);
      if (!v.name.empty() && v.name.front() == ' ') v.name.erase(0, 1);
      space.variables.push_back(std::move(v));
    } else if (tag == "layer") {
      std::string kind;
      ss >> kind;
      if (kind == "conv2d") {
        int oc, k, s;
        ss >> oc >> k >> s;
        kinds.push_back(conv2d(oc, k, s));
      } else if (kind == "dense") {
        int u;
        ss >> u;
        kinds.push_back(dense(u));
      } else if (kind == "relu") {
        kinds.push_back(relu());
      } else if (kind == "flatten") {
        kinds.push_back(flatten());
      } else {
        throw CheckpointError("unknown layer kind '" + kind + "' in " + path.string());
      }
    } else if (tag == "seed") {
      ss >> ckpt.seed;
    } else if (tag == "epoch") {
      ss >> ckpt.epoch;
    } else if (tag == "config") {
      std::string rest;
      std::getline(ss, rest);
      if (!rest.empty() && rest.front() == ' ') rest.erase(0, 1);
      auto eq = rest.find('=');
      if (eq == std::string::npos)
        throw CheckpointError("malformed config line in " + path.string());
      ckpt.config[rest.substr(0, eq)] = kv_unescape(rest.substr(eq + 1));
    } else if (tag == "params") {
      ss >> params;
    } else if (tag == "data") {
      saw_data = true;
      break;
    } else {
      throw CheckpointError("unknown header line '" + line + "' in " + path.string());
    }
  }
  if (!saw_data) throw CheckpointError("checkpoint header never reaches data: " + path.string());
  ckpt.arch = make_arch(in_c, in_h, in_w, space, kinds);
  if (params != ckpt.arch.param_count)
    throw CheckpointError("declared parameter count " + std::to_string(params) +
                          " does not match architecture (" +
                          std::to_string(ckpt.arch.param_count) + ")");
  ckpt.weights.resize(params);
  f.read(reinterpret_cast<char*>(ckpt.weights.data()),
         static_cast<std::streamsize>(params * sizeof(float)));
  if (static_cast<size_t>(f.gcount()) != params * sizeof(float))
    throw CheckpointError("weight blob truncated in " + path.string());
  char extra;
  if (f.read(&extra, 1))
    throw CheckpointError("trailing bytes after weight blob in " + path.string());
  return ckpt;
}

} // namespace clonebench

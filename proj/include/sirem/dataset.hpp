#pragma once

#include <string>
#include <vector>

#include "io.hpp"
#include "phantom.hpp"
#include "train.hpp"

namespace sirem {

struct DatasetConfig {
  PhantomConfig phantom;  // seed is replaced per utterance
  std::uint64_t master_seed = 2024;
  std::size_t train = 10;
  std::size_t val = 2;
  std::size_t test = 4;

  std::size_t utterances() const { return train + val + test; }
};

inline std::string utterance_id(std::size_t index) {
  std::string s = std::to_string(index);
  return "utt" + std::string(s.size() < 3 ? 3 - s.size() : 0, '0') + s;
}

inline std::uint64_t utterance_seed(std::uint64_t master, std::size_t index) { return mix_seed(master, index); }

inline io::json dataset_config_to_json(const DatasetConfig &c) {
  const auto &p = c.phantom;
  return {{"grid", {p.grid.rows, p.grid.cols}},
          {"frames", p.frames},
          {"coils", p.coils},
          {"samples_per_arm", p.samples_per_arm},
          {"spiral_turns", p.spiral_turns},
          {"motion_amplitude", p.motion_amplitude},
          {"min_frequency", p.min_frequency},
          {"max_frequency", p.max_frequency},
          {"noise_sigma", p.noise_sigma},
          {"feature_seed", p.feature_seed},
          {"feature_dim", p.feature_dim},
          {"feature_steps", p.feature_steps},
          {"feature_noise", p.feature_noise},
          {"master_seed", c.master_seed},
          {"splits", {c.train, c.val, c.test}}};
}

inline DatasetConfig dataset_config_from_json(const io::json &j) {
  require(j.is_object(), Errc::usage, "simulation config must be a JSON object");
  DatasetConfig c;
  auto &p = c.phantom;
  try {
    for (const auto &[k, v] : j.items()) {
      if (k == "grid") {
        const auto g = v.get<std::vector<std::size_t>>();
        require(g.size() == 2 && g[0] > 0 && g[1] > 0, Errc::usage, "grid must be [rows, cols]");
        p.grid = {g[0], g[1]};
      } else if (k == "frames") p.frames = v.get<std::size_t>();
      else if (k == "coils") p.coils = v.get<std::size_t>();
      else if (k == "samples_per_arm") p.samples_per_arm = v.get<std::size_t>();
      else if (k == "spiral_turns") p.spiral_turns = v.get<double>();
      else if (k == "motion_amplitude") p.motion_amplitude = v.get<std::array<double, kArticulatorParams>>();
      else if (k == "min_frequency") p.min_frequency = v.get<double>();
      else if (k == "max_frequency") p.max_frequency = v.get<double>();
      else if (k == "noise_sigma") p.noise_sigma = v.get<double>();
      else if (k == "feature_seed") p.feature_seed = v.get<std::uint64_t>();
      else if (k == "feature_dim") p.feature_dim = v.get<std::size_t>();
      else if (k == "feature_steps") p.feature_steps = v.get<std::size_t>();
      else if (k == "feature_noise") p.feature_noise = v.get<double>();
      else if (k == "master_seed") c.master_seed = v.get<std::uint64_t>();
      else if (k == "splits") {
        const auto s = v.get<std::vector<std::size_t>>();
        require(s.size() == 3, Errc::usage, "splits must be [train, val, test]");
        c.train = s[0];
        c.val = s[1];
        c.test = s[2];
      } else fail(Errc::usage, "unknown simulation config key '" + k + "'");
    }
  } catch (const io::json::exception &e) {
    fail(Errc::usage, std::string("simulation config: ") + e.what());
  }
  require(p.frames >= 1 && p.coils >= 1 && p.samples_per_arm >= 2 && p.feature_dim >= 1 && p.feature_steps >= 1,
          Errc::usage, "simulation config has a non-positive size");
  require(p.noise_sigma >= 0.0 && p.feature_noise >= 0.0, Errc::usage, "noise levels must be non-negative");
  require(c.train >= 1 && c.val >= 1, Errc::usage, "train and val splits need at least one utterance");
  return c;
}

// One simulated utterance in memory, before it is written to disk.
inline io::UtteranceData simulate_utterance(const DatasetConfig &cfg, std::size_t index, const Trajectory &traj,
                                            std::size_t workers = 0) {
  PhantomConfig pc = cfg.phantom;
  pc.seed = utterance_seed(cfg.master_seed, index);
  const auto seq = generate(pc);
  const NufftPlan plan(traj);
  io::UtteranceData u;
  u.id = utterance_id(index);
  u.maps = simulate_sensitivities(pc.coils, pc.grid, mix_seed(pc.seed, 0xC011));
  u.kspace.resize(pc.frames);
  parallel_for(
      pc.frames,
      [&](std::size_t t) {
        u.kspace[t] = normalize_kspace(
            simulate_raw(seq.frames[t], plan, u.maps, pc.noise_sigma, frame_noise_seed(pc.seed, t)));
      },
      workers);
  u.traj = traj;
  u.features = seq.features;
  u.reference = seq.frames;
  u.masks = seq.masks;
  u.timestamps = seq.timestamps;
  u.eba = utterance_eba(seq);
  return u;
}

inline io::Dataset make_dataset(const DatasetConfig &cfg, const io::fs::path &root, std::size_t workers = 0) {
  const auto &p = cfg.phantom;
  const Trajectory traj = gen_spiral(kArmsPerRotation, p.samples_per_arm, p.spiral_turns, p.grid);
  io::Dataset d;
  d.root = root;
  d.metadata = {{"grid", {p.grid.rows, p.grid.cols}},
                {"frame_rate", kFrameRate},
                {"reference_rate", kReferenceRate},
                {"sample_rate", kAudioSampleRate},
                {"feature_dim", p.feature_dim},
                {"class_names", kArticulatorClasses},
                {"arms", kArmsPerRotation},
                {"config", dataset_config_to_json(cfg)}};
  io::fs::create_directories(root);
  std::size_t index = 0;
  for (const auto &[split, count] :
       std::vector<std::pair<std::string, std::size_t>>{{"train", cfg.train}, {"val", cfg.val}, {"test", cfg.test}}) {
    auto &ids = d.splits[split];
    for (std::size_t i = 0; i < count; ++i, ++index) {
      const auto u = simulate_utterance(cfg, index, traj, workers);
      io::write_utterance(d.dir(u.id), u,
                          {{"split", split}, {"seed", utterance_seed(cfg.master_seed, index)}, {"frame_rate", kFrameRate}});
      ids.push_back(u.id);
    }
  }
  io::write_dataset_index(d);
  return d;
}

// Loads utterances and precomputes per-arm images for training/validation.
inline std::vector<TrainUtterance> prepare_split(const io::Dataset &d, const std::vector<std::string> &ids,
                                                 std::size_t workers = 0) {
  std::vector<TrainUtterance> out;
  for (const auto &id : ids) {
    const auto u = io::load_utterance(d, id);
    const NufftPlan plan(u.traj);
    out.push_back(prepare_utterance(id, u.kspace, plan, u.maps, u.features, u.reference, u.eba, workers));
  }
  return out;
}

}  // namespace sirem

#pragma once

#include <cstdint>
#include <string>

#include "cmtm/segnet.hpp"
#include "cmtm/synthvid.hpp"

// Experiment configuration and its flat key=value text form. Serialization
// prints shortest round-trip representations, so parse(serialize(cfg))
// reproduces cfg exactly and serialize(parse(text)) is a fixpoint.

namespace cmtm {

struct RunConfig {
  std::uint64_t seed = 1;
  SegConfig model;
  double lr = 1e-3;
  std::int64_t steps = 500;
  std::int64_t batch = 4;
  SceneConfig scene;
  std::int64_t train_sequences = 4;
  std::int64_t holdout_sequences = 2;
  int tol_px = 1;

  void validate() const;
  bool operator==(const RunConfig& other) const;
};

std::string serialize_config(const RunConfig& cfg);

// Accepts one key=value per line; '#' starts a comment; blank lines are
// ignored. Unknown keys and malformed lines raise ConfigError.
RunConfig parse_config(const std::string& text);

RunConfig load_config_file(const std::string& path);
void save_config_file(const RunConfig& cfg, const std::string& path);

}  // namespace cmtm

#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include "cfvi/types.hpp"
#include "cfvi/value_ensemble.hpp"

namespace cfvi {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary layout: 8-byte magic "CFVICKPT", uint32 version, uint64 header length, a JSON
/// header (architecture, N, epsilon, iteration, system, mode, resolved config), then the
/// member parameters and the optional replay buffer as raw little-endian doubles.
struct Checkpoint {
  ValueEnsemble ensemble;
  int iteration = 0;
  std::string system;
  std::string mode;
  std::string config;  // resolved config text
  StateBatch buffer;   // RTDP replay buffer, may be empty
};

/// "ckpt_<system>_<mode>_<iteration>"
std::string checkpoint_name(const std::string& system, const std::string& mode, int iteration);

void write_checkpoint(std::ostream& os, const Checkpoint& ckpt);
/// Throws CheckpointError on a bad magic, version, truncated data or inconsistent header.
Checkpoint read_checkpoint(std::istream& is);

/// Writes to a temporary file next to `path` and renames it into place.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

/// Throws CheckpointError unless the stored ensemble has exactly this architecture.
void require_architecture(const Checkpoint& ckpt, int feature_dim, const EnsembleConfig& cfg);

}  // namespace cfvi

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "soda/label_space.hpp"
#include "soda/network.hpp"
#include "soda/optimizer.hpp"

namespace soda {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Loop position needed to resume a run bit-exactly.
struct TrainerState {
  std::uint64_t step = 0;         // completed steps
  std::uint64_t total_steps = 0;
  double best_score = -1.0;       // best validation AUC so far, -1 if none
  std::string rng_state;          // textual engine state

  bool operator==(const TrainerState&) const = default;
};

struct Checkpoint {
  Model model;
  LabelTopology topology;
  std::optional<AdamState> optimizer;
  std::optional<TrainerState> trainer;
};

/// Little-endian binary container:
///   "SODACKPT", u32 version, u32 feature_dim, u32 hidden_dim, u32 |L|,
///   unified/source/target label names, extractor geometry, f64 grl_coeff,
///   parameter arrays in declared order (name, rows, cols, f64 column-major),
///   then optional optimizer and trainer sections.
/// Written to a temporary file and renamed, so an existing checkpoint at
/// `path` survives a failed write.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);

/// Throws InvalidInput on bad magic, version, or shape mismatch against
/// `expected` when given; IoError when the file cannot be read.
Checkpoint load_checkpoint(const std::filesystem::path& path,
                           const ModelConfig* expected = nullptr);

}  // namespace soda

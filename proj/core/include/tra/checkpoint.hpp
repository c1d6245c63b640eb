#pragma once

#include <string>

#include "tra/trainer.hpp"

namespace tra {

struct Checkpoint {
  TrainConfig config;
  int label_horizon = 1;
  ResumePoint point;
};

// Self-describing JSON checkpoint: training config, shape-tagged parameter
// tensors for the last and best states, optimizer state, epoch/batch
// counters (the full RNG state: every stream derives from seed + counters),
// and the report so far. Doubles round-trip exactly, so load + resume
// reproduces the uninterrupted run bit-for-bit.
void save_checkpoint(const std::string& path, const TrainConfig& cfg, int label_horizon,
                     const ResumePoint& point);

Checkpoint load_checkpoint(const std::string& path);

}  // namespace tra

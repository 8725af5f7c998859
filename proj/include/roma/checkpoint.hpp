#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "roma/model.hpp"
#include "roma/optim.hpp"

namespace roma {

// Self-describing training snapshot. Binary layout (little-endian):
//   "ROMA" | u32 version | config text block | named f64 tensor blocks |
//   optimizer moments | RNG state | step | u32 CRC-32 of everything
//   between the version word and the checksum.
struct Checkpoint {
    std::uint32_t version = 1;
    ModelConfig config;
    ParamRegistry params;
    std::size_t opt_step = 0;
    double weight_decay = 0.05;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::map<std::string, AdamW::Slot> moments;
    std::array<std::uint64_t, 4> rng_state{};
    std::uint64_t train_step = 0;
};

Checkpoint make_checkpoint(const RomaModel& model, const AdamW& optim, const Rng& rng, std::uint64_t train_step);

// Writes to a temp file then renames, so a crash never leaves a torn file.
void checkpoint_save(const Checkpoint& ckpt, const std::string& path);

// Parses and verifies the whole file (magic, version, CRC) before returning;
// a corrupt file throws and nothing is partially applied.
Checkpoint checkpoint_load(const std::string& path);

// Shape-checked restore into an existing model/optimizer/RNG; names the
// offending tensor on mismatch.
void checkpoint_restore(const Checkpoint& ckpt, RomaModel& model, AdamW& optim, Rng& rng,
                        std::uint64_t& train_step);

}  // namespace roma

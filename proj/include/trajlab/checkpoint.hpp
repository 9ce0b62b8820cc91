#pragma once

#include <cstdint>
#include <filesystem>

#include "trajlab/corpus.hpp"
#include "trajlab/gns.hpp"
#include "trajlab/model.hpp"

namespace trajlab {

// Flat binary checkpoint layout ("TJL1"): magic bytes, format version, a
// little-endian shape table, then 64-bit reals per tensor in declaration
// order. Every file ends with an FNV-1a integrity hash over all preceding
// bytes; a corrupted byte anywhere fails the load outright.

// Bare parameter snapshot.
void save_params(const std::filesystem::path& path, const ParamSet& params);
ParamSet load_params(const std::filesystem::path& path, const ModelConfig& cfg);

// Full training state: parameters, Adam moments, data-stream position, GNS
// smoother accumulators and loop counters. Enough to continue a run so that
// the continuation is bitwise identical to an uninterrupted one.
struct RunCheckpoint {
    std::uint64_t config_hash = 0;
    std::uint64_t iter = 0;
    std::uint64_t tokens_consumed = 0;
    std::uint64_t adam_step = 0;
    double initial_loss = 0.0;
    bool has_initial_loss = false;
    ParamSet params;
    ParamSet adam_m;
    ParamSet adam_v;
    MarkovStream::State stream;
    GnsSmoother::State gns;
};

void save_run_checkpoint(const std::filesystem::path& path, const RunCheckpoint& ck);
RunCheckpoint load_run_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg);

} // namespace trajlab

#pragma once

// Checkpoint blob: plain-text header (magic, metadata key/value lines, one
// shape line per parameter) followed by raw little-endian float64 parameter
// data in name order, optional Adam moment state, and a trailing FNV-1a
// checksum over the payload. Loading verifies the checksum.

#include <cstdint>
#include <map>
#include <string>
#include <utility>

#include "unicodec/modules.hpp"

namespace unicodec {

struct AdamStateBlob {
    std::map<std::string, std::pair<nn::Mat, nn::Mat>> moments;
    int64_t steps_done = 0;
};

void save_checkpoint(const std::string& path, const nn::ParamStore& ps,
                     const std::map<std::string, std::string>& meta,
                     const AdamStateBlob* adam = nullptr);

struct LoadedCheckpoint {
    std::map<std::string, std::string> meta;
    std::map<std::string, nn::Mat> params;
    AdamStateBlob adam;
    bool has_adam = false;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

// Copies loaded values into an already-constructed store; every parameter
// must exist on both sides with matching shape.
void apply_params(nn::ParamStore& ps, const std::map<std::string, nn::Mat>& params);

}  // namespace unicodec

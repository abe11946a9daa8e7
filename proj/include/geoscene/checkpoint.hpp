#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "geoscene/adam.hpp"
#include "geoscene/model.hpp"

// Container file: magic "GAMKPACK", u32 version, u64 manifest length, JSON
// manifest, then concatenated payload blobs. Parameters are stored as
// embedded GAMK tensors; optimizer moments as raw little-endian f64 arrays
// so a resumed run continues with the exact optimizer state.

namespace geoscene {

struct Checkpoint {
    int64_t step = 0;
    ModelConfig config;
    std::vector<std::pair<std::string, TensorT<float>>> params;
    std::vector<std::pair<std::string, std::vector<double>>> moments;
    int64_t adam_t = 0;
    std::map<std::string, std::string> rng_states;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// snapshot model parameters (and optionally optimizer state)
Checkpoint snapshot(const ModelT<float>& model, const AdamT<float>* adam,
                    int64_t step, std::map<std::string, std::string> rng_states);

/// copy checkpoint parameters into the model; shapes and names must match
void restore_params(ModelT<float>& model, const Checkpoint& c);

/// copy optimizer moments back; moment list must cover the adam instance
void restore_adam(AdamT<float>& adam, const ModelT<float>& model, const Checkpoint& c);

} // namespace geoscene

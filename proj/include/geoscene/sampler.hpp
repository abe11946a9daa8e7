#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "geoscene/correspondence.hpp"
#include "geoscene/image.hpp"
#include "geoscene/model.hpp"
#include "geoscene/objective.hpp"

namespace geoscene {

struct SampleRequest {
    std::filesystem::path checkpoint;
    Image reference;
    std::array<int, 4> condition{}; // sub-vocabulary ids
    int steps = 28;
    uint64_t seed = 0;
    std::string schedule = "cosine";
    bool stochastic = false; // injects fresh noise each step instead of the
                             // deterministic rule
};

struct SampleOut {
    Image image;                // clamped 8-bit render
    std::vector<double> tokens; // final token trajectory, row-major [L0 x 3P^2]
    CorrespondenceMask attn0;   // capture from the last denoising step
    CorrespondenceMask attn1;
};

/// descending timestep ladder; k-th ascending entry is floor((k+1)*T/steps)-1
std::vector<int> sample_timesteps(int t_train, int steps);

/// update loop on an in-memory model; trajectory arithmetic in doubles,
/// network evaluation in the model's storage type
SampleOut run_sampler(const Model& model, const NoiseSchedule& sched,
                      const TensorPtr& ref_patches, const std::vector<int>& cond_ids,
                      int steps, uint64_t seed, bool stochastic = false);

/// loads the checkpoint named in the request and runs the full pipeline
SampleOut generate(const SampleRequest& req);

struct AttnExport {
    CorrespondenceMask attn0, attn1;       // captured grids
    std::vector<uint8_t> heat0, heat1;     // h*w grayscale renders
};

/// single forward pass on a noised target at timestep t; captures the
/// supervised block's cross-view maps for both views
AttnExport export_attention(const Model& model, const NoiseSchedule& sched,
                            const TensorPtr& x0, const TensorPtr& ref_patches,
                            const std::vector<int>& cond_ids, int t, uint64_t seed);

/// min-max scaled nearest-neighbor upscale of a grid map to h x w grayscale;
/// constant maps render mid-gray
std::vector<uint8_t> heatmap_u8(const CorrespondenceMask& m, int h, int w);

/// writes <out>/<id>_gen.png plus <out>/<id>_attn0.pgm and <out>/<id>_attn1.pgm
void write_outputs(const std::filesystem::path& out_dir, const std::string& id,
                   const SampleOut& s);

} // namespace geoscene

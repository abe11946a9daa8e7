#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "geoscene/objective.hpp"

namespace geoscene {

/// keys of the key=value config file match these field names exactly
struct TrainConfig {
    uint64_t seed = 0;
    std::string dataset_root;
    int steps = 100;
    int batch_size = 8;
    double lr = 1e-3;
    double lambda = 3.0;
    int b_star = -1; // -1 selects blocks/2
    bool normalize = true;
    int h = 64, w = 64, p = 8;
    int d = 64, heads = 4, blocks = 4, mlp_ratio = 4;
    int t_train = 1000;
    std::string schedule = "cosine";
    int eval_interval = 50;
    int checkpoint_interval = 0; // 0 = final checkpoint only
    std::string out_dir = "out";
    double grad_clip = 1.0;
    bool detach_attention = false; // diagnostic: capture carries no gradient
    std::string resume;            // checkpoint to continue from
    int probe_size = 8;

    void validate() const;
};

TrainConfig load_train_config(const std::filesystem::path& path);
void set_config_kv(TrainConfig& cfg, const std::string& key, const std::string& value);
std::string dump_config(const TrainConfig& cfg);

struct TrainResult {
    int64_t steps_run = 0;
    std::filesystem::path metrics_path;
    std::filesystem::path checkpoint_path;
    LossBreakdown last;
};

TrainResult train(const TrainConfig& cfg);

} // namespace geoscene

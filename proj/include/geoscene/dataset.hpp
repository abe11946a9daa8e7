#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "geoscene/scenegen.hpp"

namespace geoscene {

struct LoadedSample {
    std::string id;
    Image target;
    Image reference;
    EntitySpec entity;
    std::array<int, 4> condition{}; // sub-vocabulary ids
    MatchSet matches;
    CorrespondenceMask mask0;
    CorrespondenceMask mask1;
};

/// read-only view over a generated dataset directory
class Dataset {
public:
    /// parses manifest.json; verify_hashes re-hashes every listed file
    static Dataset open(const std::filesystem::path& root, bool verify_hashes = false);

    size_t size() const { return ids_.size(); }
    const std::vector<std::string>& ids() const { return ids_; }
    const GenConfig& config() const { return cfg_; }
    const std::filesystem::path& root() const { return root_; }
    uint64_t seed() const { return seed_; }

    LoadedSample load(size_t index) const;

    /// rebuild the full sample (scene, transform, footprint) from the
    /// manifest seed; byte-identical to what generation wrote
    TrainingSample regenerate(size_t index) const;

private:
    std::filesystem::path root_;
    GenConfig cfg_;
    uint64_t seed_ = 0;
    std::vector<std::string> ids_;
};

} // namespace geoscene

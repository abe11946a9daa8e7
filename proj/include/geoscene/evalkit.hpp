#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "geoscene/image.hpp"
#include "geoscene/scenegen.hpp"

namespace geoscene {

/// Pearson correlation between two equal-size grids; nullopt when either
/// input is constant (correlation undefined, reported as missing)
std::optional<double> attention_agreement(const float* a, const float* b, size_t n);
std::optional<double> attention_agreement(const CorrespondenceMask& a,
                                          const CorrespondenceMask& b);

/// PSNR (0..255 scale) over pixels with footprint == 0; capped at 99.0 dB
double scene_error(const Image& generated, const Image& ground_truth,
                   const std::vector<uint8_t>& entity_footprint, double cap = 99.0);

struct RelationResult {
    bool detected = false; // both color blobs found
    bool correct = false;
};

/// nearest-palette-color classification, centroid extraction, then the
/// relation predicate between entity and anchor blobs
RelationResult relation_accuracy(const Image& generated, const EntitySpec& entity,
                                 const SceneSpec& scene);

struct VoteRecord {
    std::string pair_id;
    std::string annotator_id;
    std::string method;
    bool selected = false;
};

struct ScoreTable {
    // (pair_id, method) -> score
    std::map<std::pair<std::string, std::string>, double> scores;
};

struct VoteAggregate {
    std::vector<std::pair<std::string, double>> percentages; // method -> pct
    int pairs_used = 0;
    int pairs_skipped = 0; // no method reached majority
};

/// majority filter (2 of 3) then per-pair contribution w = 1/k^alpha,
/// normalized to percentages over methods
VoteAggregate aggregate_votes(const std::vector<VoteRecord>& votes, double alpha = 0.8);

/// pair -> unique-majority-winner method; pairs without one are skipped
std::map<std::string, std::string> derive_preferences(const std::vector<VoteRecord>& votes);

/// percentage of preference pairs whose argmax-score method matches the
/// human winner; score ties count as disagreement
double pairwise_accuracy(const ScoreTable& scores,
                         const std::map<std::string, std::string>& preferences);

std::vector<VoteRecord> read_votes_csv(const std::filesystem::path& path);
ScoreTable read_scores_csv(const std::filesystem::path& path);
std::map<std::string, std::string> read_preferences_csv(const std::filesystem::path& path);

struct AgreementReport {
    std::vector<std::pair<std::string, double>> preference_pct;
    std::vector<std::pair<std::string, double>> pairwise_pct; // metric -> pct
    int valid_pairs = 0;
    int skipped_pairs = 0;
};

void write_report_json(const std::filesystem::path& path, const AgreementReport& r);
void write_report_csv(const std::filesystem::path& path, const AgreementReport& r);

} // namespace geoscene

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "geoscene/correspondence.hpp"
#include "geoscene/image.hpp"
#include "geoscene/rng.hpp"

// Procedural two-view scene generator. Each training pair shows the same
// 2D scene from two viewpoints related by a similarity transform; the target
// view additionally contains a composited entity placed relative to an
// anchor object. Exact correspondences come from the transform in closed
// form, so masks have analytic ground truth.

namespace geoscene {

inline constexpr int kNumShapes = 3;    // rectangle, circle, triangle
inline constexpr int kNumColors = 12;
inline constexpr int kNumRelations = 5; // left-of, right-of, above, below, on
inline constexpr int kMaxObjects = 8;
inline constexpr int kMinObjects = 3;
inline constexpr int kCondTokens = 4;
inline constexpr int kCondVocab = kNumShapes + kNumColors + kNumRelations + kMaxObjects;

const char* shape_name(int id);
const char* color_name(int id);
const char* relation_name(int id);
int shape_id(const std::string& name);
int color_id(const std::string& name);
int relation_id(const std::string& name);
std::array<uint8_t, 3> palette_rgb(int color);

struct Vec2 {
    double x = 0, y = 0;
};

struct SceneObject {
    int shape = 0;
    int color = 0;
    double cx = 0, cy = 0;
    double size = 0; // full extent in pixels
};

struct Background {
    double base = 0.86;  // luminance in [0,1]
    double amp = 0.02;
    double fx1 = 0, fy1 = 0, ph1 = 0;
    double fx2 = 0, fy2 = 0, ph2 = 0;
};

struct SceneSpec {
    uint64_t seed = 0;
    Background bg;
    std::vector<SceneObject> objects;
};

/// similarity q = s R(theta) (p - c) + c + (tx, ty) taking canonical
/// (= target-view) coordinates p to reference-view coordinates q, with c
/// the image center; to_target applies the closed-form inverse
struct ViewTransform {
    double theta = 0;
    double scale = 1;
    double tx = 0, ty = 0;
    double cx = 0, cy = 0;

    Vec2 to_reference(Vec2 p) const;
    Vec2 to_target(Vec2 q) const;

    static ViewTransform identity(int h, int w) {
        ViewTransform t;
        t.cx = w / 2.0;
        t.cy = h / 2.0;
        return t;
    }
};

struct EntitySpec {
    int shape = 0;
    int color = 0;
    int relation = 0;
    int anchor = 0;
};

std::array<int, 4> encode_condition(const EntitySpec& e);
EntitySpec decode_condition(const std::array<int, 4>& ids);
/// sub-vocabulary ids offset into one flat vocabulary of size kCondVocab
std::array<int, 4> flatten_condition(const std::array<int, 4>& ids);

struct GenConfig {
    int h = 64, w = 64, p = 8;
    int n_matches = 48;
    int kernel_r = 3;
    double kernel_sigma = 1.5;
    float clip_max = 1.0f;
    bool normalize_masks = true;

    void validate() const;
};

struct TrainingSample {
    std::string id;
    SceneSpec scene;
    ViewTransform transform;
    EntitySpec entity;
    Image target;
    Image reference;
    std::vector<uint8_t> entity_footprint; // h*w, 1 inside the entity
    MatchSet matches;
    CorrespondenceMask mask0; // target view
    CorrespondenceMask mask1; // reference view
};

SceneSpec sample_scene(Rng& rng, const GenConfig& cfg);
ViewTransform sample_transform(Rng& rng, const GenConfig& cfg);

/// Rasterize at pixel centers; painter's order = object list order, entity
/// last. The transform maps canonical to view coordinates, so pixel q shows
/// the canonical content at to_target(q). Entity placement outside image
/// bounds raises a generation error (caller resamples).
Image render_scene(const SceneSpec& spec, const ViewTransform& transform, int h,
                   int w, const EntitySpec* entity = nullptr,
                   std::vector<uint8_t>* entity_footprint = nullptr);

/// entity geometry implied by the placement rule (target view)
SceneObject place_entity(const EntitySpec& e, const SceneSpec& scene);

TrainingSample make_pair(uint64_t seed, const GenConfig& cfg);

void write_sample(const std::filesystem::path& dir, const TrainingSample& s);

/// FNV-1a 64 over file bytes, zero-padded hex
std::string file_hash(const std::filesystem::path& path);

/// generate count samples under root and write manifest.json
void generate_dataset(const std::filesystem::path& root, uint64_t seed, int count,
                      const GenConfig& cfg, int workers = 1);

} // namespace geoscene

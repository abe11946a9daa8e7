#include "geoscene/scenegen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <sstream>

#include <nlohmann/json.hpp>

#include "geoscene/errors.hpp"
#include "geoscene/log.hpp"

namespace geoscene {

namespace {

constexpr double kPi = 3.14159265358979323846;

struct NamedColor {
    const char* name;
    std::array<uint8_t, 3> rgb;
};

constexpr std::array<NamedColor, kNumColors> kPalette = {{
    {"red", {220, 40, 40}},
    {"green", {40, 170, 60}},
    {"blue", {40, 70, 220}},
    {"yellow", {230, 210, 50}},
    {"orange", {240, 140, 30}},
    {"purple", {140, 60, 180}},
    {"cyan", {50, 200, 210}},
    {"magenta", {220, 60, 180}},
    {"brown", {140, 90, 50}},
    {"pink", {245, 160, 180}},
    {"teal", {30, 130, 130}},
    {"olive", {130, 140, 40}},
}};

constexpr std::array<const char*, kNumShapes> kShapes = {"rectangle", "circle",
                                                         "triangle"};
constexpr std::array<const char*, kNumRelations> kRelations = {
    "left-of", "right-of", "above", "below", "on"};

bool inside_object(const SceneObject& o, Vec2 p) {
    const double dx = p.x - o.cx, dy = p.y - o.cy, half = o.size / 2.0;
    switch (o.shape) {
        case 0: return std::abs(dx) <= half && std::abs(dy) <= half;
        case 1: return dx * dx + dy * dy <= half * half;
        case 2: // apex up, base at the bottom edge
            return dy >= -half && dy <= half && std::abs(dx) <= 0.5 * (dy + half);
        default: throw contract_error("unknown shape id " + std::to_string(o.shape));
    }
}

std::array<uint8_t, 3> background_rgb(const Background& bg, Vec2 p) {
    const double l = bg.base +
                     bg.amp * (std::sin(2.0 * kPi * (bg.fx1 * p.x + bg.fy1 * p.y) + bg.ph1) +
                               0.5 * std::sin(2.0 * kPi * (bg.fx2 * p.x + bg.fy2 * p.y) + bg.ph2));
    const double c = std::min(1.0, std::max(0.0, l));
    const uint8_t v = uint8_t(std::lround(c * 255.0));
    return {v, v, v};
}

} // namespace

const char* shape_name(int id) {
    if (id < 0 || id >= kNumShapes) throw data_error("unknown shape id " + std::to_string(id));
    return kShapes[size_t(id)];
}
const char* color_name(int id) {
    if (id < 0 || id >= kNumColors) throw data_error("unknown color id " + std::to_string(id));
    return kPalette[size_t(id)].name;
}
const char* relation_name(int id) {
    if (id < 0 || id >= kNumRelations)
        throw data_error("unknown relation id " + std::to_string(id));
    return kRelations[size_t(id)];
}

int shape_id(const std::string& name) {
    for (int i = 0; i < kNumShapes; ++i)
        if (name == kShapes[size_t(i)]) return i;
    throw data_error("unknown shape name \"" + name + "\"");
}
int color_id(const std::string& name) {
    for (int i = 0; i < kNumColors; ++i)
        if (name == kPalette[size_t(i)].name) return i;
    throw data_error("unknown color name \"" + name + "\"");
}
int relation_id(const std::string& name) {
    for (int i = 0; i < kNumRelations; ++i)
        if (name == kRelations[size_t(i)]) return i;
    throw data_error("unknown relation name \"" + name + "\"");
}

std::array<uint8_t, 3> palette_rgb(int color) {
    if (color < 0 || color >= kNumColors)
        throw data_error("unknown color id " + std::to_string(color));
    return kPalette[size_t(color)].rgb;
}

Vec2 ViewTransform::to_reference(Vec2 p) const {
    const double c = std::cos(theta), s = std::sin(theta);
    const double dx = p.x - cx, dy = p.y - cy;
    return {scale * (c * dx - s * dy) + cx + tx, scale * (s * dx + c * dy) + cy + ty};
}

Vec2 ViewTransform::to_target(Vec2 q) const {
    const double c = std::cos(theta), s = std::sin(theta);
    const double dx = (q.x - cx - tx) / scale, dy = (q.y - cy - ty) / scale;
    return {c * dx + s * dy + cx, -s * dx + c * dy + cy};
}

std::array<int, 4> encode_condition(const EntitySpec& e) {
    if (e.shape < 0 || e.shape >= kNumShapes)
        throw data_error("encode_condition: shape id " + std::to_string(e.shape));
    if (e.color < 0 || e.color >= kNumColors)
        throw data_error("encode_condition: color id " + std::to_string(e.color));
    if (e.relation < 0 || e.relation >= kNumRelations)
        throw data_error("encode_condition: relation id " + std::to_string(e.relation));
    if (e.anchor < 0 || e.anchor >= kMaxObjects)
        throw data_error("encode_condition: anchor slot " + std::to_string(e.anchor));
    return {e.shape, e.color, e.relation, e.anchor};
}

EntitySpec decode_condition(const std::array<int, 4>& ids) {
    EntitySpec e{ids[0], ids[1], ids[2], ids[3]};
    encode_condition(e); // validates ranges
    return e;
}

std::array<int, 4> flatten_condition(const std::array<int, 4>& ids) {
    return {ids[0], kNumShapes + ids[1], kNumShapes + kNumColors + ids[2],
            kNumShapes + kNumColors + kNumRelations + ids[3]};
}

void GenConfig::validate() const {
    if (h < p || w < p || h % p != 0 || w % p != 0)
        throw param_error("gen config: image dims must be positive multiples of patch size");
    if (n_matches < 1) throw param_error("gen config: match count must be >= 1");
    if (kernel_r < 0 || kernel_sigma <= 0)
        throw param_error("gen config: invalid kernel parameters");
    if (clip_max <= 0) throw param_error("gen config: clip_max must be > 0");
}

SceneSpec sample_scene(Rng& rng, const GenConfig& cfg) {
    SceneSpec spec;
    spec.bg.base = rng.uniform(0.82, 0.90);
    spec.bg.amp = rng.uniform(0.01, 0.025);
    spec.bg.fx1 = rng.uniform(0.5, 1.5) / cfg.w;
    spec.bg.fy1 = rng.uniform(0.5, 1.5) / cfg.h;
    spec.bg.ph1 = rng.uniform(0.0, 2.0 * kPi);
    spec.bg.fx2 = rng.uniform(1.0, 2.5) / cfg.w;
    spec.bg.fy2 = rng.uniform(1.0, 2.5) / cfg.h;
    spec.bg.ph2 = rng.uniform(0.0, 2.0 * kPi);

    const int n = kMinObjects + int(rng.uniform_int(kMaxObjects - kMinObjects + 1));
    std::array<int, kNumColors> colors{};
    for (int i = 0; i < kNumColors; ++i) colors[size_t(i)] = i;
    for (int i = 0; i < n; ++i) {
        const int j = i + int(rng.uniform_int(kNumColors - i));
        std::swap(colors[size_t(i)], colors[size_t(j)]);
    }

    for (int i = 0; i < n; ++i) {
        SceneObject o;
        o.shape = int(rng.uniform_int(kNumShapes));
        o.color = colors[size_t(i)];
        o.size = rng.uniform(10.0, 16.0);
        const double mx = o.size / 2.0 + 1.0;
        bool placed = false;
        for (int attempt = 0; attempt < 400 && !placed; ++attempt) {
            o.cx = rng.uniform(mx, cfg.w - mx);
            o.cy = rng.uniform(mx, cfg.h - mx);
            placed = true;
            for (const auto& other : spec.objects) {
                const double dx = o.cx - other.cx, dy = o.cy - other.cy;
                const double min_d = 0.6 * (o.size + other.size);
                if (dx * dx + dy * dy < min_d * min_d) {
                    placed = false;
                    break;
                }
            }
        }
        if (!placed)
            throw generation_error("sample_scene: could not place object " +
                                   std::to_string(i) + " of " + std::to_string(n));
        spec.objects.push_back(o);
    }
    return spec;
}

ViewTransform sample_transform(Rng& rng, const GenConfig& cfg) {
    for (int attempt = 0; attempt < 100; ++attempt) {
        ViewTransform t = ViewTransform::identity(cfg.h, cfg.w);
        t.theta = rng.uniform(-kPi / 6.0, kPi / 6.0);
        t.scale = rng.uniform(0.8, 1.25);
        t.tx = rng.uniform(-0.15 * cfg.w, 0.15 * cfg.w);
        t.ty = rng.uniform(-0.15 * cfg.h, 0.15 * cfg.h);

        int visible = 0;
        const int grid = 16;
        for (int gy = 0; gy < grid; ++gy)
            for (int gx = 0; gx < grid; ++gx) {
                const Vec2 p{(gx + 0.5) * cfg.w / grid, (gy + 0.5) * cfg.h / grid};
                const Vec2 q = t.to_reference(p);
                if (q.x >= 0 && q.x < cfg.w && q.y >= 0 && q.y < cfg.h) ++visible;
            }
        if (visible >= int(0.6 * grid * grid)) return t;
    }
    throw generation_error("sample_transform: no transform kept 60% visibility");
}

SceneObject place_entity(const EntitySpec& e, const SceneSpec& scene) {
    if (e.anchor < 0 || e.anchor >= int(scene.objects.size()))
        throw data_error("place_entity: anchor index " + std::to_string(e.anchor) +
                         " out of range for " + std::to_string(scene.objects.size()) +
                         " objects");
    const SceneObject& a = scene.objects[size_t(e.anchor)];
    SceneObject ent;
    ent.shape = e.shape;
    ent.color = e.color;
    ent.size = 0.8 * a.size;
    ent.cx = a.cx;
    ent.cy = a.cy;
    const double off = 1.2 * a.size;
    switch (e.relation) {
        case 0: ent.cx -= off; break;          // left-of
        case 1: ent.cx += off; break;          // right-of
        case 2: ent.cy -= off; break;          // above
        case 3: ent.cy += off; break;          // below
        case 4: ent.cy = a.cy - a.size / 2.0; break; // on: centered on top edge
        default:
            throw data_error("place_entity: relation id " + std::to_string(e.relation));
    }
    return ent;
}

Image render_scene(const SceneSpec& spec, const ViewTransform& transform, int h,
                   int w, const EntitySpec* entity,
                   std::vector<uint8_t>* entity_footprint) {
    SceneObject ent;
    if (entity) {
        ent = place_entity(*entity, spec);
        const double half = ent.size / 2.0;
        if (ent.cx - half < 0 || ent.cx + half > w || ent.cy - half < 0 ||
            ent.cy + half > h)
            throw generation_error("render_scene: entity placement outside bounds");
    }
    if (entity_footprint) entity_footprint->assign(size_t(h) * w, 0);

    Image img(h, w);
#pragma omp parallel for schedule(static)
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const Vec2 p = transform.to_target({x + 0.5, y + 0.5});
            std::array<uint8_t, 3> rgb = background_rgb(spec.bg, p);
            for (const auto& o : spec.objects)
                if (inside_object(o, p)) rgb = kPalette[size_t(o.color)].rgb;
            if (entity && inside_object(ent, p)) {
                rgb = kPalette[size_t(ent.color)].rgb;
                if (entity_footprint) (*entity_footprint)[size_t(y) * w + x] = 1;
            }
            uint8_t* q = img.px(y, x);
            q[0] = rgb[0];
            q[1] = rgb[1];
            q[2] = rgb[2];
        }
    }
    return img;
}

namespace {

MatchSet sample_matches(Rng& rng, const ViewTransform& t,
                        const std::vector<uint8_t>& footprint, const GenConfig& cfg) {
    MatchSet ms;
    const int cap = 10 * cfg.n_matches;
    for (int attempt = 0; attempt < cap && int(ms.size()) < cfg.n_matches; ++attempt) {
        const Vec2 q{rng.uniform(0.0, double(cfg.w)), rng.uniform(0.0, double(cfg.h))};
        const Vec2 p = t.to_target(q);
        if (p.x < 0 || p.x >= cfg.w || p.y < 0 || p.y >= cfg.h) continue;
        const MatchSet::Pt p0{float(p.x), float(p.y)};
        const MatchSet::Pt p1{float(q.x), float(q.y)};
        // float cast can round up to the exclusive bound
        if (p0.x >= float(cfg.w) || p0.y >= float(cfg.h) || p1.x >= float(cfg.w) ||
            p1.y >= float(cfg.h))
            continue;
        const long long ix = std::min((long long)cfg.w - 1,
                                      std::max(0LL, std::llround(p.x)));
        const long long iy = std::min((long long)cfg.h - 1,
                                      std::max(0LL, std::llround(p.y)));
        if (footprint[size_t(iy) * cfg.w + ix]) continue;
        ms.p0.push_back(p0);
        ms.p1.push_back(p1);
    }
    if (int(ms.size()) < cfg.n_matches / 2)
        throw generation_error("sample_matches: only " + std::to_string(ms.size()) +
                               " of " + std::to_string(cfg.n_matches) +
                               " matches kept (degenerate transform)");
    return ms;
}

} // namespace

TrainingSample make_pair(uint64_t seed, const GenConfig& cfg) {
    cfg.validate();
    const Rng base(seed);
    for (int attempt = 0; attempt < 64; ++attempt) {
        Rng arng = base.fork("attempt" + std::to_string(attempt));
        try {
            TrainingSample s;
            Rng scene_rng = arng.fork("scene");
            s.scene = sample_scene(scene_rng, cfg);
            s.scene.seed = seed;
            Rng t_rng = arng.fork("transform");
            s.transform = sample_transform(t_rng, cfg);

            Rng e_rng = arng.fork("entity");
            s.entity.shape = int(e_rng.uniform_int(kNumShapes));
            s.entity.relation = int(e_rng.uniform_int(kNumRelations));
            s.entity.anchor = int(e_rng.uniform_int(int64_t(s.scene.objects.size())));
            std::vector<int> unused;
            for (int c = 0; c < kNumColors; ++c) {
                bool used = false;
                for (const auto& o : s.scene.objects) used = used || o.color == c;
                if (!used) unused.push_back(c);
            }
            s.entity.color = unused[size_t(e_rng.uniform_int(int64_t(unused.size())))];

            s.target = render_scene(s.scene, ViewTransform::identity(cfg.h, cfg.w),
                                    cfg.h, cfg.w, &s.entity, &s.entity_footprint);
            s.reference = render_scene(s.scene, s.transform, cfg.h, cfg.w);

            Rng m_rng = arng.fork("matches");
            s.matches = sample_matches(m_rng, s.transform, s.entity_footprint, cfg);

            const RadialKernel kernel = gaussian_kernel(cfg.kernel_r, cfg.kernel_sigma);
            auto [m0, m1] = splat_masks(s.matches, cfg.h, cfg.w, kernel, cfg.clip_max);
            s.mask0 = downsample_mask(m0, cfg.p, {}, cfg.normalize_masks);
            s.mask1 = downsample_mask(m1, cfg.p, {}, cfg.normalize_masks);
            return s;
        } catch (const generation_error& e) {
            log_debug("make_pair seed ", seed, " attempt ", attempt, ": ", e.what());
        }
    }
    throw generation_error("make_pair: seed " + std::to_string(seed) +
                           " produced no valid sample in 64 attempts");
}

void write_sample(const std::filesystem::path& dir, const TrainingSample& s) {
    std::filesystem::create_directories(dir);
    save_png(dir / "target.png", s.target);
    save_png(dir / "reference.png", s.reference);
    nlohmann::json cond;
    cond["shape"] = shape_name(s.entity.shape);
    cond["color"] = color_name(s.entity.color);
    cond["relation"] = relation_name(s.entity.relation);
    cond["anchor"] = s.entity.anchor;
    std::ofstream os(dir / "condition.json");
    if (!os) throw data_error("cannot open " + (dir / "condition.json").string());
    os << cond.dump(2) << "\n";
    os.close();
    write_matches_jsonl(dir / "matches.jsonl", s.matches);
    save_mask(dir / "mask0.gamk", s.mask0);
    save_mask(dir / "mask1.gamk", s.mask1);
}

std::string file_hash(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw data_error("cannot open " + path.string() + " for hashing");
    uint64_t h = 14695981039346656037ull;
    char buf[4096];
    while (is.read(buf, sizeof buf) || is.gcount() > 0) {
        h = fnv1a64(buf, size_t(is.gcount()), h);
        if (!is) break;
    }
    std::ostringstream os;
    os << std::hex;
    for (int i = 15; i >= 0; --i) os << "0123456789abcdef"[(h >> (4 * i)) & 0xf];
    return os.str();
}

void generate_dataset(const std::filesystem::path& root, uint64_t seed, int count,
                      const GenConfig& cfg, int workers) {
    cfg.validate();
    if (count < 1) throw param_error("generate_dataset: count must be >= 1");
    if (workers < 1) workers = 1;
    std::filesystem::create_directories(root);

    std::vector<std::string> ids(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) {
        std::ostringstream os;
        os << "s" << std::setw(6) << std::setfill('0') << i;
        ids[size_t(i)] = os.str();
    }

    std::string first_error;
    std::mutex err_mu;
#pragma omp parallel for schedule(dynamic) num_threads(workers)
    for (int i = 0; i < count; ++i) {
        try {
            const uint64_t sample_seed = Rng(seed).fork("sample/" + ids[size_t(i)]).next_u64();
            TrainingSample s = make_pair(sample_seed, cfg);
            s.id = ids[size_t(i)];
            write_sample(root / s.id, s);
        } catch (const std::exception& e) {
            std::lock_guard<std::mutex> lock(err_mu);
            if (first_error.empty()) first_error = e.what();
        }
    }
    if (!first_error.empty()) throw generation_error(first_error);

    nlohmann::json manifest;
    manifest["version"] = 1;
    manifest["seed"] = seed;
    manifest["count"] = count;
    manifest["hash"] = "fnv1a64";
    manifest["config"] = {{"h", cfg.h},
                          {"w", cfg.w},
                          {"p", cfg.p},
                          {"n_matches", cfg.n_matches},
                          {"kernel_r", cfg.kernel_r},
                          {"kernel_sigma", cfg.kernel_sigma},
                          {"clip_max", cfg.clip_max},
                          {"normalize_masks", cfg.normalize_masks}};
    manifest["samples"] = nlohmann::json::array();
    const char* files[] = {"target.png", "reference.png", "condition.json",
                           "matches.jsonl", "mask0.gamk", "mask1.gamk"};
    for (const auto& id : ids) {
        nlohmann::json entry;
        entry["id"] = id;
        for (const char* f : files) entry["files"][f] = file_hash(root / id / f);
        manifest["samples"].push_back(entry);
    }
    std::ofstream os(root / "manifest.json");
    if (!os) throw data_error("cannot open " + (root / "manifest.json").string());
    os << manifest.dump(2) << "\n";
    log_info("wrote ", count, " samples under ", root.string());
}

} // namespace geoscene

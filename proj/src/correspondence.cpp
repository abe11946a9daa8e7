#include "geoscene/correspondence.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "geoscene/errors.hpp"
#include "geoscene/tensor_io.hpp"

namespace geoscene {

RadialKernel gaussian_kernel(int r, double sigma) {
    if (r < 0) throw param_error("gaussian_kernel: radius must be >= 0");
    if (!(sigma > 0.0)) throw param_error("gaussian_kernel: sigma must be > 0");
    RadialKernel k;
    k.r = r;
    k.sigma = sigma;
    const int side = 2 * r + 1;
    k.w.resize(size_t(side) * side);
    for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx)
            k.w[size_t(dy + r) * side + (dx + r)] =
                std::exp(-(double(dx) * dx + double(dy) * dy) / (2.0 * sigma * sigma));
    return k;
}

namespace {

FullResMask splat_one(const std::vector<MatchSet::Pt>& pts, int h, int w,
                      const RadialKernel& k, float clip_max, int view) {
    for (size_t i = 0; i < pts.size(); ++i)
        if (pts[i].x < 0 || pts[i].x >= float(w) || pts[i].y < 0 || pts[i].y >= float(h))
            throw data_error("splat_masks: match " + std::to_string(i) + " view " +
                             std::to_string(view) + " coordinate (" +
                             std::to_string(pts[i].x) + "," + std::to_string(pts[i].y) +
                             ") outside " + std::to_string(w) + "x" + std::to_string(h));
    const int r = k.r;
    const int side = 2 * r + 1;

    // bucket matches by the rows they touch; per-row ascending match index
    // keeps the accumulation order fixed for any thread count
    std::vector<std::vector<int>> row_hits(static_cast<size_t>(h));
    std::vector<long> cxs(pts.size()), cys(pts.size());
    for (size_t i = 0; i < pts.size(); ++i) {
        cxs[i] = std::llround(double(pts[i].x));
        cys[i] = std::llround(double(pts[i].y));
        const long y0 = std::max(0L, cys[i] - r);
        const long y1 = std::min(long(h) - 1, cys[i] + r);
        for (long y = y0; y <= y1; ++y) row_hits[size_t(y)].push_back(int(i));
    }

    std::vector<double> acc(size_t(h) * w, 0.0);
#pragma omp parallel for schedule(static)
    for (int y = 0; y < h; ++y) {
        double* row = acc.data() + size_t(y) * w;
        for (int i : row_hits[size_t(y)]) {
            const long cx = cxs[size_t(i)];
            const double* krow = k.w.data() + size_t(y - cys[size_t(i)] + r) * side;
            for (int dx = -r; dx <= r; ++dx) {
                const long px = cx + dx;
                if (px >= 0 && px < w) row[px] += krow[dx + r];
            }
        }
    }
    FullResMask m;
    m.h = h;
    m.w = w;
    m.v.resize(acc.size());
    for (size_t i = 0; i < acc.size(); ++i)
        m.v[i] = float(std::min(acc[i], double(clip_max)));
    return m;
}

} // namespace

std::pair<FullResMask, FullResMask> splat_masks(const MatchSet& matches, int h,
                                                int w, const RadialKernel& kernel,
                                                float clip_max) {
    if (h < 1 || w < 1) throw param_error("splat_masks: image dims must be >= 1");
    if (matches.p0.size() != matches.p1.size())
        throw dim_error("splat_masks: point lists differ in length");
    return {splat_one(matches.p0, h, w, kernel, clip_max, 0),
            splat_one(matches.p1, h, w, kernel, clip_max, 1)};
}

CorrespondenceMask downsample_mask(const FullResMask& m, int p, CropRect crop,
                                   bool normalize) {
    if (p < 1) throw param_error("downsample_mask: patch size must be >= 1");
    if (crop.w == 0) crop.w = m.w - crop.x;
    if (crop.h == 0) crop.h = m.h - crop.y;
    if (crop.x < 0 || crop.y < 0 || crop.x + crop.w > m.w || crop.y + crop.h > m.h)
        throw param_error("downsample_mask: crop outside image");
    if (crop.w % p != 0 || crop.h % p != 0)
        throw param_error("downsample_mask: crop dims " + std::to_string(crop.w) + "x" +
                          std::to_string(crop.h) + " not divisible by patch size " +
                          std::to_string(p));
    CorrespondenceMask out;
    out.h = crop.h / p;
    out.w = crop.w / p;
    out.v.assign(size_t(out.h) * out.w, 0.f);
#pragma omp parallel for schedule(static)
    for (int cy = 0; cy < out.h; ++cy) {
        for (int cx = 0; cx < out.w; ++cx) {
            double sum = 0.0;
            for (int dy = 0; dy < p; ++dy)
                for (int dx = 0; dx < p; ++dx)
                    sum += double(m.v[size_t(crop.y + cy * p + dy) * m.w +
                                      (crop.x + cx * p + dx)]);
            out.v[size_t(cy) * out.w + cx] = float(sum / double(p * p));
        }
    }
    if (normalize) {
        float mx = 0.f;
        for (float v : out.v) mx = std::max(mx, v);
        if (mx > 0.f)
            for (float& v : out.v) v /= mx;
    }
    return out;
}

void save_mask(const std::filesystem::path& path, const CorrespondenceMask& m) {
    TensorT<float> t({m.h, m.w});
    t.data = m.v;
    save_tensor(path, t);
}

CorrespondenceMask load_mask(const std::filesystem::path& path) {
    TensorT<float> t = load_tensor(path);
    if (t.ndim() != 2)
        throw format_error(path.string() + ": mask tensor must be 2-D, got " +
                           std::to_string(t.ndim()) + "-D");
    CorrespondenceMask m;
    m.h = t.shape[0];
    m.w = t.shape[1];
    m.v = std::move(t.data);
    for (float v : m.v)
        if (!(v >= 0.f && v <= 1.f))
            throw data_error(path.string() + ": mask value " + std::to_string(v) +
                             " outside [0,1]");
    return m;
}

MatchSet read_matches_jsonl(const std::filesystem::path& path, int h, int w) {
    std::ifstream is(path);
    if (!is) throw data_error("cannot open " + path.string());
    MatchSet ms;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw format_error(path.string() + ":" + std::to_string(lineno) +
                               ": invalid JSON (" + e.what() + ")");
        }
        for (const char* field : {"x0", "y0", "x1", "y1"})
            if (!j.contains(field) || !j[field].is_number())
                throw format_error(path.string() + ":" + std::to_string(lineno) +
                                   ": missing numeric field " + field);
        MatchSet::Pt a{j["x0"].get<float>(), j["y0"].get<float>()};
        MatchSet::Pt b{j["x1"].get<float>(), j["y1"].get<float>()};
        if (w > 0 && h > 0) {
            auto in_range = [&](MatchSet::Pt p) {
                return p.x >= 0 && p.x < float(w) && p.y >= 0 && p.y < float(h);
            };
            if (!in_range(a) || !in_range(b))
                throw data_error(path.string() + ":" + std::to_string(lineno) +
                                 ": coordinate outside " + std::to_string(w) + "x" +
                                 std::to_string(h));
        }
        ms.p0.push_back(a);
        ms.p1.push_back(b);
    }
    return ms;
}

void write_matches_jsonl(const std::filesystem::path& path, const MatchSet& matches) {
    std::ofstream os(path);
    if (!os) throw data_error("cannot open " + path.string() + " for writing");
    for (size_t i = 0; i < matches.size(); ++i) {
        nlohmann::json j;
        j["x0"] = double(matches.p0[i].x);
        j["y0"] = double(matches.p0[i].y);
        j["x1"] = double(matches.p1[i].x);
        j["y1"] = double(matches.p1[i].y);
        os << j.dump() << "\n";
    }
    if (!os) throw data_error("write to " + path.string() + " failed");
}

} // namespace geoscene

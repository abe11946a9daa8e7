#pragma once

#include <filesystem>
#include <utility>
#include <vector>

namespace geoscene {

/// matched point pairs between the target view (0) and the scene view (1);
/// pixel coordinates, origin top-left, x rightward, y downward
struct MatchSet {
    struct Pt {
        float x = 0, y = 0;
    };
    std::vector<Pt> p0;
    std::vector<Pt> p1;

    size_t size() const { return p0.size(); }
};

/// square kernel of weights decaying with radial distance, peak 1 at center
struct RadialKernel {
    int r = 0;
    double sigma = 1.0;
    std::vector<double> w; // (2r+1)^2, row-major

    double at(int dy, int dx) const { return w[size_t(dy + r) * (2 * r + 1) + (dx + r)]; }
};

struct FullResMask {
    int h = 0, w = 0;
    std::vector<float> v;
};

/// token-resolution mask, values in [0,1]
struct CorrespondenceMask {
    int h = 0, w = 0;
    std::vector<float> v;
};

struct CropRect {
    int x = 0, y = 0;
    int w = 0, h = 0; // 0 = full extent
};

RadialKernel gaussian_kernel(int r, double sigma);

/// splat the kernel at every match point of each view, truncating at the
/// borders, then clip to [0, clip_max]
std::pair<FullResMask, FullResMask> splat_masks(const MatchSet& matches, int h,
                                                int w, const RadialKernel& kernel,
                                                float clip_max);

/// P x P area-average pooling of the cropped region, then optional rescale
/// so a nonzero mask peaks at 1
CorrespondenceMask downsample_mask(const FullResMask& m, int p,
                                   CropRect crop = {}, bool normalize = true);

void save_mask(const std::filesystem::path& path, const CorrespondenceMask& m);
CorrespondenceMask load_mask(const std::filesystem::path& path);

/// one JSON object per line with fields x0, y0, x1, y1; blank lines skipped.
/// Nonzero h/w enable coordinate range validation.
MatchSet read_matches_jsonl(const std::filesystem::path& path, int h = 0, int w = 0);
void write_matches_jsonl(const std::filesystem::path& path, const MatchSet& matches);

} // namespace geoscene

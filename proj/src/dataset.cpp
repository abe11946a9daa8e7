#include "geoscene/dataset.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "geoscene/errors.hpp"

namespace geoscene {

Dataset Dataset::open(const std::filesystem::path& root, bool verify_hashes) {
    const auto manifest_path = root / "manifest.json";
    std::ifstream is(manifest_path);
    if (!is) throw data_error("cannot open " + manifest_path.string());
    nlohmann::json m;
    try {
        is >> m;
    } catch (const nlohmann::json::parse_error& e) {
        throw format_error(manifest_path.string() + ": invalid JSON (" + e.what() + ")");
    }
    for (const char* key : {"version", "count", "config", "samples"})
        if (!m.contains(key))
            throw format_error(manifest_path.string() + ": missing key " + key);
    if (m["version"].get<int>() != 1)
        throw format_error(manifest_path.string() + ": unsupported manifest version");

    Dataset d;
    d.root_ = root;
    d.seed_ = m.value("seed", uint64_t(0));
    const auto& c = m["config"];
    for (const char* key : {"h", "w", "p", "n_matches", "kernel_r", "kernel_sigma",
                            "clip_max", "normalize_masks"})
        if (!c.contains(key))
            throw format_error(manifest_path.string() + ": config missing " + key);
    d.cfg_.h = c["h"].get<int>();
    d.cfg_.w = c["w"].get<int>();
    d.cfg_.p = c["p"].get<int>();
    d.cfg_.n_matches = c["n_matches"].get<int>();
    d.cfg_.kernel_r = c["kernel_r"].get<int>();
    d.cfg_.kernel_sigma = c["kernel_sigma"].get<double>();
    d.cfg_.clip_max = c["clip_max"].get<float>();
    d.cfg_.normalize_masks = c["normalize_masks"].get<bool>();
    d.cfg_.validate();

    if (int(m["samples"].size()) != m["count"].get<int>())
        throw data_error(manifest_path.string() + ": sample list length " +
                         std::to_string(m["samples"].size()) + " != count " +
                         std::to_string(m["count"].get<int>()));

    for (const auto& entry : m["samples"]) {
        if (!entry.contains("id") || !entry.contains("files"))
            throw format_error(manifest_path.string() + ": malformed sample entry");
        const std::string id = entry["id"].get<std::string>();
        for (const auto& [fname, hash] : entry["files"].items()) {
            const auto fpath = root / id / fname;
            if (!std::filesystem::exists(fpath))
                throw data_error("manifest scan: missing file " + fpath.string());
            if (verify_hashes) {
                const std::string actual = file_hash(fpath);
                if (actual != hash.get<std::string>())
                    throw data_error("manifest scan: hash mismatch for " + fpath.string() +
                                     " (manifest " + hash.get<std::string>() + ", actual " +
                                     actual + ")");
            }
        }
        d.ids_.push_back(id);
    }
    return d;
}

TrainingSample Dataset::regenerate(size_t index) const {
    if (index >= ids_.size())
        throw param_error("dataset: index " + std::to_string(index) + " out of range");
    const uint64_t sample_seed =
        Rng(seed_).fork("sample/" + ids_[index]).next_u64();
    TrainingSample s = make_pair(sample_seed, cfg_);
    s.id = ids_[index];
    return s;
}

LoadedSample Dataset::load(size_t index) const {
    if (index >= ids_.size())
        throw param_error("dataset: index " + std::to_string(index) + " out of range");
    const auto dir = root_ / ids_[index];
    LoadedSample s;
    s.id = ids_[index];
    s.target = load_png(dir / "target.png");
    s.reference = load_png(dir / "reference.png");
    if (s.target.h != cfg_.h || s.target.w != cfg_.w || s.reference.h != cfg_.h ||
        s.reference.w != cfg_.w)
        throw data_error(s.id + ": image dims disagree with manifest config");

    std::ifstream is(dir / "condition.json");
    if (!is) throw data_error("cannot open " + (dir / "condition.json").string());
    nlohmann::json c;
    try {
        is >> c;
    } catch (const nlohmann::json::parse_error& e) {
        throw format_error((dir / "condition.json").string() + ": invalid JSON (" +
                           e.what() + ")");
    }
    for (const char* key : {"shape", "color", "relation", "anchor"})
        if (!c.contains(key))
            throw format_error((dir / "condition.json").string() + ": missing " + key);
    s.entity.shape = shape_id(c["shape"].get<std::string>());
    s.entity.color = color_id(c["color"].get<std::string>());
    s.entity.relation = relation_id(c["relation"].get<std::string>());
    s.entity.anchor = c["anchor"].get<int>();
    s.condition = encode_condition(s.entity);

    s.matches = read_matches_jsonl(dir / "matches.jsonl", cfg_.h, cfg_.w);
    s.mask0 = load_mask(dir / "mask0.gamk");
    s.mask1 = load_mask(dir / "mask1.gamk");
    const int hs = cfg_.h / cfg_.p, ws = cfg_.w / cfg_.p;
    if (s.mask0.h != hs || s.mask0.w != ws || s.mask1.h != hs || s.mask1.w != ws)
        throw data_error(s.id + ": mask dims disagree with manifest config");
    return s;
}

} // namespace geoscene

#include "geoscene/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "geoscene/errors.hpp"
#include "geoscene/tensor_io.hpp"

namespace geoscene {

namespace {

constexpr char kPackMagic[8] = {'G', 'A', 'M', 'K', 'P', 'A', 'C', 'K'};
constexpr uint32_t kPackVersion = 1;

nlohmann::json config_json(const ModelConfig& c) {
    return {{"h", c.h},           {"w", c.w},
            {"p", c.p},           {"d", c.d},
            {"heads", c.heads},   {"blocks", c.blocks},
            {"b_star", c.b_star}, {"mlp_ratio", c.mlp_ratio},
            {"n_cond", c.n_cond}, {"cond_vocab", c.cond_vocab},
            {"t_train", c.t_train}};
}

ModelConfig config_from_json(const nlohmann::json& j, const std::string& origin) {
    ModelConfig c;
    for (const char* key : {"h", "w", "p", "d", "heads", "blocks", "b_star",
                            "mlp_ratio", "n_cond", "cond_vocab", "t_train"})
        if (!j.contains(key))
            throw format_error(origin + ": model config missing " + key);
    c.h = j["h"].get<int>();
    c.w = j["w"].get<int>();
    c.p = j["p"].get<int>();
    c.d = j["d"].get<int>();
    c.heads = j["heads"].get<int>();
    c.blocks = j["blocks"].get<int>();
    c.b_star = j["b_star"].get<int>();
    c.mlp_ratio = j["mlp_ratio"].get<int>();
    c.n_cond = j["n_cond"].get<int>();
    c.cond_vocab = j["cond_vocab"].get<int>();
    c.t_train = j["t_train"].get<int>();
    return c;
}

void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, uint64_t v) {
    put_u32(os, uint32_t(v & 0xffffffffu));
    put_u32(os, uint32_t(v >> 32));
}

uint64_t get_u64(std::istream& is, const std::string& origin) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8))
        throw format_error(origin + ": truncated header");
    uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
}

static_assert(sizeof(double) == 8, "IEEE-754 binary64 doubles required");

std::string f64_blob(const std::vector<double>& v) {
    std::string out(v.size() * 8, '\0');
    for (size_t i = 0; i < v.size(); ++i) {
        uint64_t bits;
        std::memcpy(&bits, &v[i], 8);
        for (int b = 0; b < 8; ++b)
            out[i * 8 + size_t(b)] = char((bits >> (8 * b)) & 0xff);
    }
    return out;
}

std::vector<double> f64_unblob(const std::string& raw, const std::string& origin) {
    if (raw.size() % 8 != 0) throw format_error(origin + ": odd f64 payload size");
    std::vector<double> v(raw.size() / 8);
    for (size_t i = 0; i < v.size(); ++i) {
        uint64_t bits = 0;
        for (int b = 7; b >= 0; --b)
            bits = (bits << 8) | uint64_t(uint8_t(raw[i * 8 + size_t(b)]));
        std::memcpy(&v[i], &bits, 8);
    }
    return v;
}

} // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
    // serialize payload blobs first so the manifest knows the offsets
    std::vector<std::pair<std::string, std::string>> blobs; // name -> bytes
    nlohmann::json entries = nlohmann::json::array();
    uint64_t offset = 0;
    auto push = [&](const std::string& name, const char* kind, std::string bytes) {
        entries.push_back({{"name", name},
                           {"kind", kind},
                           {"offset", offset},
                           {"bytes", bytes.size()}});
        offset += bytes.size();
        blobs.emplace_back(name, std::move(bytes));
    };
    for (const auto& [name, tensor] : c.params) {
        std::ostringstream os(std::ios::binary);
        write_tensor(os, tensor);
        push(name, "gamk", os.str());
    }
    for (const auto& [name, vec] : c.moments) push(name, "f64", f64_blob(vec));

    nlohmann::json manifest;
    manifest["version"] = kPackVersion;
    manifest["step"] = c.step;
    manifest["adam_t"] = c.adam_t;
    manifest["model_config"] = config_json(c.config);
    manifest["entries"] = std::move(entries);
    manifest["rng"] = c.rng_states;
    const std::string mbytes = manifest.dump();

    std::ofstream os(path, std::ios::binary);
    if (!os) throw data_error("cannot open " + path.string() + " for writing");
    os.write(kPackMagic, 8);
    put_u32(os, kPackVersion);
    put_u64(os, mbytes.size());
    os.write(mbytes.data(), std::streamsize(mbytes.size()));
    for (const auto& [name, bytes] : blobs)
        os.write(bytes.data(), std::streamsize(bytes.size()));
    os.close();
    if (!os) throw data_error("write to " + path.string() + " failed");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw data_error("cannot open " + path.string());
    const std::string origin = path.string();

    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, kPackMagic, 8) != 0)
        throw format_error(origin + ": bad container magic at offset 0");
    unsigned char vb[4];
    if (!is.read(reinterpret_cast<char*>(vb), 4))
        throw format_error(origin + ": truncated header");
    const uint32_t version = uint32_t(vb[0]) | (uint32_t(vb[1]) << 8) |
                             (uint32_t(vb[2]) << 16) | (uint32_t(vb[3]) << 24);
    if (version != kPackVersion)
        throw format_error(origin + ": unsupported container version " +
                           std::to_string(version));
    const uint64_t mlen = get_u64(is, origin);
    std::string mbytes(mlen, '\0');
    if (!is.read(mbytes.data(), std::streamsize(mlen)))
        throw format_error(origin + ": truncated manifest");
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(mbytes);
    } catch (const nlohmann::json::parse_error& e) {
        throw format_error(origin + ": manifest JSON invalid (" + e.what() + ")");
    }

    Checkpoint c;
    c.step = manifest.at("step").get<int64_t>();
    c.adam_t = manifest.value("adam_t", int64_t(0));
    c.config = config_from_json(manifest.at("model_config"), origin);
    if (manifest.contains("rng"))
        for (const auto& [k, v] : manifest["rng"].items())
            c.rng_states[k] = v.get<std::string>();

    const std::streampos payload_start = is.tellg();
    for (const auto& e : manifest.at("entries")) {
        const std::string name = e.at("name").get<std::string>();
        const std::string kind = e.at("kind").get<std::string>();
        const uint64_t off = e.at("offset").get<uint64_t>();
        const uint64_t bytes = e.at("bytes").get<uint64_t>();
        is.seekg(payload_start + std::streamoff(off));
        std::string raw(bytes, '\0');
        if (!is.read(raw.data(), std::streamsize(bytes)))
            throw format_error(origin + ": truncated payload for entry " + name);
        if (kind == "gamk") {
            std::istringstream ts(raw, std::ios::binary);
            c.params.emplace_back(name, read_tensor(ts, origin + "#" + name));
        } else if (kind == "f64") {
            c.moments.emplace_back(name, f64_unblob(raw, origin + "#" + name));
        } else {
            throw format_error(origin + ": unknown entry kind \"" + kind + "\"");
        }
    }
    return c;
}

Checkpoint snapshot(const ModelT<float>& model, const AdamT<float>* adam,
                    int64_t step, std::map<std::string, std::string> rng_states) {
    Checkpoint c;
    c.step = step;
    c.config = model.config();
    c.rng_states = std::move(rng_states);
    for (const auto& [name, p] : model.params()) {
        TensorT<float> t(p->shape);
        t.data = p->data;
        c.params.emplace_back(name, std::move(t));
    }
    if (adam) {
        c.adam_t = adam->step_count();
        for (size_t i = 0; i < model.params().size(); ++i) {
            c.moments.emplace_back("adam.m." + model.params()[i].first,
                                   adam->moment1(i));
            c.moments.emplace_back("adam.v." + model.params()[i].first,
                                   adam->moment2(i));
        }
    }
    return c;
}

void restore_params(ModelT<float>& model, const Checkpoint& c) {
    if (c.params.size() != model.params().size())
        throw format_error("checkpoint holds " + std::to_string(c.params.size()) +
                           " parameters, model expects " +
                           std::to_string(model.params().size()));
    for (size_t i = 0; i < c.params.size(); ++i) {
        const auto& [name, tensor] = c.params[i];
        auto& [mname, mparam] = model.params()[i];
        if (name != mname)
            throw format_error("checkpoint parameter \"" + name +
                               "\" does not match model parameter \"" + mname + "\"");
        if (tensor.shape != mparam->shape)
            throw format_error("checkpoint parameter \"" + name + "\" has wrong shape");
        mparam->data = tensor.data;
    }
}

void restore_adam(AdamT<float>& adam, const ModelT<float>& model, const Checkpoint& c) {
    if (adam.size() != model.params().size())
        throw contract_error("adam instance does not cover the model parameters");
    adam.set_step_count(c.adam_t);
    auto find = [&](const std::string& name) -> const std::vector<double>* {
        for (const auto& [n, v] : c.moments)
            if (n == name) return &v;
        return nullptr;
    };
    for (size_t i = 0; i < model.params().size(); ++i) {
        const std::string& pname = model.params()[i].first;
        const auto* m = find("adam.m." + pname);
        const auto* v = find("adam.v." + pname);
        if (!m || !v)
            throw format_error("checkpoint missing optimizer state for \"" + pname + "\"");
        if (m->size() != model.params()[i].second->numel() || v->size() != m->size())
            throw format_error("optimizer state size mismatch for \"" + pname + "\"");
        adam.moment1(i) = *m;
        adam.moment2(i) = *v;
    }
}

} // namespace geoscene

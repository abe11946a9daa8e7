#include "geoscene/tensor_io.hpp"

#include <cstring>
#include <fstream>
#include <limits>

#include "geoscene/errors.hpp"

namespace geoscene {

namespace {

void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {
        static_cast<unsigned char>(v & 0xff),
        static_cast<unsigned char>((v >> 8) & 0xff),
        static_cast<unsigned char>((v >> 16) & 0xff),
        static_cast<unsigned char>((v >> 24) & 0xff),
    };
    os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& is, const std::string& origin, const char* field) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
        throw format_error(origin + ": truncated while reading " + field +
                           " at offset " + std::to_string(is.tellg() == -1
                               ? std::streamoff(0) : std::streamoff(is.tellg())));
    return uint32_t(b[0]) | (uint32_t(b[1]) << 8) | (uint32_t(b[2]) << 16) |
           (uint32_t(b[3]) << 24);
}

static_assert(sizeof(float) == 4 && std::numeric_limits<float>::is_iec559,
              "IEEE-754 binary32 floats required");

} // namespace

void write_tensor(std::ostream& os, const TensorT<float>& t) {
    os.write(kTensorMagic, 4);
    put_u32(os, kTensorVersion);
    put_u32(os, uint32_t(t.shape.size()));
    for (int d : t.shape) {
        if (d < 0) throw dim_error("write_tensor: negative dimension");
        put_u32(os, uint32_t(d));
    }
    for (float v : t.data) {
        uint32_t bits;
        std::memcpy(&bits, &v, 4);
        put_u32(os, bits);
    }
    if (!os) throw data_error("write_tensor: stream write failed");
}

TensorT<float> read_tensor(std::istream& is, const std::string& origin) {
    char magic[4];
    if (!is.read(magic, 4))
        throw format_error(origin + ": truncated before magic at offset 0");
    if (std::memcmp(magic, kTensorMagic, 4) != 0)
        throw format_error(origin + ": bad magic at offset 0, expected \"GAMK\"");
    const uint32_t version = get_u32(is, origin, "version");
    if (version != kTensorVersion)
        throw format_error(origin + ": unsupported version " +
                           std::to_string(version) + " at offset 4");
    const uint32_t ndim = get_u32(is, origin, "ndim");
    if (ndim > 8)
        throw format_error(origin + ": implausible ndim " + std::to_string(ndim) +
                           " at offset 8");
    std::vector<int> shape(ndim);
    size_t count = 1;
    for (uint32_t i = 0; i < ndim; ++i) {
        const uint32_t d = get_u32(is, origin, "dims");
        if (d > (1u << 30))
            throw format_error(origin + ": implausible dimension " + std::to_string(d));
        shape[i] = int(d);
        count *= d;
    }
    TensorT<float> t(shape);
    const size_t payload_off = 12 + size_t(ndim) * 4;
    std::vector<char> raw(count * 4);
    if (count > 0 && !is.read(raw.data(), std::streamsize(raw.size())))
        throw format_error(origin + ": truncated payload at offset " +
                           std::to_string(payload_off) + ", expected " +
                           std::to_string(count * 4) + " bytes");
    for (size_t i = 0; i < count; ++i) {
        const unsigned char* b = reinterpret_cast<const unsigned char*>(raw.data()) + i * 4;
        uint32_t bits = uint32_t(b[0]) | (uint32_t(b[1]) << 8) |
                        (uint32_t(b[2]) << 16) | (uint32_t(b[3]) << 24);
        std::memcpy(&t.data[i], &bits, 4);
    }
    return t;
}

void save_tensor(const std::filesystem::path& path, const TensorT<float>& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw data_error("cannot open " + path.string() + " for writing");
    write_tensor(os, t);
    os.close();
    if (!os) throw data_error("write to " + path.string() + " failed");
}

TensorT<float> load_tensor(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw data_error("cannot open " + path.string());
    return read_tensor(is, path.string());
}

} // namespace geoscene

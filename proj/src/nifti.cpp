#include "distillseg/nifti.hpp"

#include <zlib.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <vector>

#include "distillseg/error.hpp"

namespace distillseg::nifti {
namespace {

constexpr int kHeaderSize = 348;
constexpr int kVoxOffset = 352;

enum DataType : std::int16_t {
    kUInt8 = 2,
    kInt16 = 4,
    kInt32 = 8,
    kFloat32 = 16,
    kFloat64 = 64,
    kInt8 = 256,
    kUInt16 = 512,
    kUInt32 = 768,
};

std::vector<unsigned char> read_all(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw LoadError("no such file: " + path.string());
    gzFile f = gzopen(path.c_str(), "rb");
    if (!f) throw LoadError("cannot open " + path.string());
    std::vector<unsigned char> buf;
    unsigned char chunk[1 << 16];
    int n = 0;
    while ((n = gzread(f, chunk, sizeof(chunk))) > 0) buf.insert(buf.end(), chunk, chunk + n);
    const bool failed = n < 0;
    gzclose(f);
    if (failed) throw LoadError("corrupt compressed stream in " + path.string());
    return buf;
}

struct Reader {
    const std::vector<unsigned char>& buf;
    bool swap;

    template <typename T>
    T at(std::size_t off) const {
        T v;
        std::memcpy(&v, buf.data() + off, sizeof(T));
        if (swap) {
            unsigned char* p = reinterpret_cast<unsigned char*>(&v);
            for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(p[i], p[sizeof(T) - 1 - i]);
        }
        return v;
    }
};

TensorF decode(const std::filesystem::path& path) {
    const auto buf = read_all(path);
    if (buf.size() < kHeaderSize) throw LoadError("truncated NIfTI header in " + path.string());

    std::int32_t hdr_size;
    std::memcpy(&hdr_size, buf.data(), 4);
    bool swap = false;
    if (hdr_size != kHeaderSize) {
        swap = true;
        if (Reader{buf, true}.at<std::int32_t>(0) != kHeaderSize)
            throw LoadError("not a NIfTI-1 file: " + path.string());
    }
    Reader r{buf, swap};

    const auto ndim = r.at<std::int16_t>(40);
    if (ndim < 3 || ndim > 7) throw LoadError("unsupported dimensionality in " + path.string());
    const Index nx = r.at<std::int16_t>(42), ny = r.at<std::int16_t>(44), nz = r.at<std::int16_t>(46);
    for (int d = 4; d <= ndim; ++d)
        if (r.at<std::int16_t>(40 + 2 * d) > 1) throw LoadError("multi-volume NIfTI not supported: " + path.string());
    if (nx <= 0 || ny <= 0 || nz <= 0) throw LoadError("non-positive extent in " + path.string());

    const auto datatype = r.at<std::int16_t>(70);
    const auto vox_offset = static_cast<std::size_t>(r.at<float>(108));
    float slope = r.at<float>(112);
    const float inter = r.at<float>(116);
    if (slope == 0.0f || !std::isfinite(slope)) slope = 1.0f;

    std::size_t bytes = 0;
    switch (datatype) {
        case kUInt8: case kInt8: bytes = 1; break;
        case kInt16: case kUInt16: bytes = 2; break;
        case kInt32: case kUInt32: case kFloat32: bytes = 4; break;
        case kFloat64: bytes = 8; break;
        default: throw LoadError("unsupported NIfTI datatype " + std::to_string(datatype) + " in " + path.string());
    }
    const Index n = nx * ny * nz;
    if (buf.size() < vox_offset + bytes * static_cast<std::size_t>(n))
        throw LoadError("truncated voxel data in " + path.string());

    TensorF out(Shape{nz, ny, nx});
    for (Index i = 0; i < n; ++i) {
        const std::size_t off = vox_offset + bytes * static_cast<std::size_t>(i);
        double v = 0;
        switch (datatype) {
            case kUInt8: v = r.at<std::uint8_t>(off); break;
            case kInt8: v = r.at<std::int8_t>(off); break;
            case kInt16: v = r.at<std::int16_t>(off); break;
            case kUInt16: v = r.at<std::uint16_t>(off); break;
            case kInt32: v = r.at<std::int32_t>(off); break;
            case kUInt32: v = r.at<std::uint32_t>(off); break;
            case kFloat32: v = r.at<float>(off); break;
            case kFloat64: v = r.at<double>(off); break;
        }
        out[i] = static_cast<float>(v * slope + inter);
    }
    return out;
}

template <typename T>
void encode(const std::filesystem::path& path, const Tensor<T>& volume, DataType datatype) {
    if (volume.rank() != 3) throw ShapeError("NIfTI writer expects a 3-D volume");
    for (std::size_t a = 0; a < 3; ++a)
        if (volume.dim(a) > 32767) throw ShapeError("extent exceeds NIfTI-1 limit");

    std::vector<unsigned char> hdr(kVoxOffset, 0);
    auto put = [&](std::size_t off, auto v) { std::memcpy(hdr.data() + off, &v, sizeof(v)); };
    put(0, std::int32_t{kHeaderSize});
    put(40, std::int16_t{3});
    put(42, static_cast<std::int16_t>(volume.dim(2)));
    put(44, static_cast<std::int16_t>(volume.dim(1)));
    put(46, static_cast<std::int16_t>(volume.dim(0)));
    for (int d = 4; d < 8; ++d) put(40 + 2 * d, std::int16_t{1});
    put(70, static_cast<std::int16_t>(datatype));
    put(72, static_cast<std::int16_t>(8 * sizeof(T)));
    for (int d = 0; d < 8; ++d) put(76 + 4 * d, 1.0f);
    put(108, static_cast<float>(kVoxOffset));
    put(112, 1.0f);
    put(116, 0.0f);
    std::memcpy(hdr.data() + 344, "n+1\0", 4);

    static_assert(std::endian::native == std::endian::little, "writer assumes little-endian host");

    gzFile f = gzopen(path.c_str(), "wb6");
    if (!f) throw IoError("cannot write " + path.string());
    const auto payload = static_cast<unsigned>(sizeof(T) * static_cast<std::size_t>(volume.size()));
    bool ok = gzwrite(f, hdr.data(), static_cast<unsigned>(hdr.size())) == static_cast<int>(hdr.size());
    ok = ok && (payload == 0 || gzwrite(f, volume.data(), payload) == static_cast<int>(payload));
    ok = (gzclose(f) == Z_OK) && ok;
    if (!ok) throw IoError("failed writing " + path.string());
}

}  // namespace

TensorF read_float(const std::filesystem::path& path) { return decode(path); }

Tensor<std::uint8_t> read_u8(const std::filesystem::path& path) {
    const TensorF raw = decode(path);
    Tensor<std::uint8_t> out(raw.shape());
    for (Index i = 0; i < raw.size(); ++i) {
        const float v = raw[i];
        if (v != std::round(v) || v < 0.0f || v > 255.0f)
            throw LoadError("non-integer label voxel in " + path.string());
        out[i] = static_cast<std::uint8_t>(v);
    }
    return out;
}

void write(const std::filesystem::path& path, const TensorF& volume) { encode(path, volume, kFloat32); }

void write(const std::filesystem::path& path, const Tensor<std::uint8_t>& volume) {
    encode(path, volume, kUInt8);
}

}  // namespace distillseg::nifti

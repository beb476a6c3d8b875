#include "trideform/core/tensor.hpp"

#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "trideform/core/error.hpp"

namespace trideform {

namespace {

constexpr char kMagic[4] = {'N', 'T', 'C', '1'};

void store_u32_le(uint32_t v, unsigned char* out) {
    out[0] = static_cast<unsigned char>(v & 0xFF);
    out[1] = static_cast<unsigned char>((v >> 8) & 0xFF);
    out[2] = static_cast<unsigned char>((v >> 16) & 0xFF);
    out[3] = static_cast<unsigned char>((v >> 24) & 0xFF);
}

uint32_t load_u32_le(const unsigned char* in) {
    return static_cast<uint32_t>(in[0]) | (static_cast<uint32_t>(in[1]) << 8) |
           (static_cast<uint32_t>(in[2]) << 16) | (static_cast<uint32_t>(in[3]) << 24);
}

void store_f32_le(float v, unsigned char* out) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    store_u32_le(bits, out);
}

float load_f32_le(const unsigned char* in) {
    const uint32_t bits = load_u32_le(in);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

}  // namespace

TensorBlob::TensorBlob(std::vector<int64_t> shape_, std::vector<float> data_)
    : shape(std::move(shape_)), data(std::move(data_)) {
    validate();
}

TensorBlob TensorBlob::zeros(std::vector<int64_t> shape_) {
    TensorBlob b;
    b.shape = std::move(shape_);
    int64_t n = 1;
    for (int64_t d : b.shape) {
        if (d <= 0) throw ValidationError("TensorBlob: shape entries must be positive");
        n *= d;
    }
    if (b.shape.empty()) throw ValidationError("TensorBlob: shape must be non-empty");
    b.data.assign(static_cast<std::size_t>(n), 0.0f);
    return b;
}

int64_t TensorBlob::element_count() const {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return shape.empty() ? 0 : n;
}

void TensorBlob::validate() const {
    if (shape.empty()) throw ValidationError("TensorBlob: shape must be non-empty");
    int64_t n = 1;
    for (int64_t d : shape) {
        if (d <= 0) throw ValidationError("TensorBlob: shape entries must be positive");
        n *= d;
    }
    if (n != static_cast<int64_t>(data.size()))
        throw ValidationError("TensorBlob: shape/data size mismatch");
}

void write_tensor(const std::string& path, const TensorBlob& blob) {
    blob.validate();

    nlohmann::json header;
    header["dtype"] = "f32";
    header["shape"] = blob.shape;
    const std::string header_str = header.dump();

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("write_tensor: cannot open " + path);

    unsigned char len[4];
    store_u32_le(static_cast<uint32_t>(header_str.size()), len);
    f.write(kMagic, 4);
    f.write(reinterpret_cast<const char*>(len), 4);
    f.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));

    std::vector<unsigned char> payload(blob.data.size() * 4);
    for (std::size_t i = 0; i < blob.data.size(); ++i)
        store_f32_le(blob.data[i], payload.data() + 4 * i);
    f.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size()));
    if (!f) throw IoError("write_tensor: write failed for " + path);
}

TensorBlob read_tensor(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("read_tensor: cannot open " + path);

    char magic[4];
    unsigned char len[4];
    f.read(magic, 4);
    f.read(reinterpret_cast<char*>(len), 4);
    if (!f || std::memcmp(magic, kMagic, 4) != 0)
        throw FormatError("read_tensor: bad magic in " + path);

    const uint32_t header_len = load_u32_le(len);
    if (header_len == 0 || header_len > (1u << 20))
        throw FormatError("read_tensor: implausible header length in " + path);
    std::string header_str(header_len, '\0');
    f.read(header_str.data(), header_len);
    if (!f) throw FormatError("read_tensor: truncated header in " + path);

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_str);
    } catch (const nlohmann::json::exception&) {
        throw FormatError("read_tensor: unparseable header in " + path);
    }
    if (!header.contains("dtype") || header["dtype"] != "f32")
        throw FormatError("read_tensor: unsupported dtype in " + path);
    if (!header.contains("shape") || !header["shape"].is_array() || header["shape"].empty())
        throw FormatError("read_tensor: missing or empty shape in " + path);

    TensorBlob blob;
    int64_t n = 1;
    for (const auto& d : header["shape"]) {
        if (!d.is_number_integer() || d.get<int64_t>() <= 0)
            throw FormatError("read_tensor: non-positive shape entry in " + path);
        blob.shape.push_back(d.get<int64_t>());
        n *= blob.shape.back();
    }

    std::vector<unsigned char> payload;
    {
        f.seekg(0, std::ios::end);
        const std::streamoff end = f.tellg();
        const std::streamoff payload_off = 8 + static_cast<std::streamoff>(header_len);
        f.seekg(payload_off, std::ios::beg);
        payload.resize(static_cast<std::size_t>(end - payload_off));
        f.read(reinterpret_cast<char*>(payload.data()),
               static_cast<std::streamsize>(payload.size()));
    }
    if (payload.size() != static_cast<std::size_t>(n) * 4)
        throw CorruptionError("read_tensor: payload size disagrees with shape in " + path);

    blob.data.resize(static_cast<std::size_t>(n));
    for (int64_t i = 0; i < n; ++i)
        blob.data[static_cast<std::size_t>(i)] = load_f32_le(payload.data() + 4 * i);
    return blob;
}

}  // namespace trideform

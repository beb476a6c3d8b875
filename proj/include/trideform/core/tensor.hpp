#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace trideform {

// Flat row-major float32 tensor, the portable container shared by every
// checkpoint and cache format.
struct TensorBlob {
    std::vector<int64_t> shape;
    std::vector<float> data;

    TensorBlob() = default;
    TensorBlob(std::vector<int64_t> shape_, std::vector<float> data_);

    static TensorBlob zeros(std::vector<int64_t> shape_);

    int64_t element_count() const;
    // Throws ValidationError when shape/data disagree or shape has
    // non-positive entries.
    void validate() const;
};

// NTC1 container: magic "NTC1", u32 little-endian header length, JSON header
// {"dtype":"f32","shape":[...]}, then raw little-endian float32 payload.
void write_tensor(const std::string& path, const TensorBlob& blob);
TensorBlob read_tensor(const std::string& path);

}  // namespace trideform

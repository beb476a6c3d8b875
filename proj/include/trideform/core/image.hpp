#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "trideform/core/tensor.hpp"

namespace trideform {

// Row-major, channel-interleaved float image. Values are unbounded internally;
// clamping and 8-bit quantization happen only at PPM export.
struct ImageBuffer {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<float> pixels;

    ImageBuffer() = default;
    ImageBuffer(int w, int h, int c);

    float& at(int x, int y, int c);
    float at(int x, int y, int c) const;

    void validate() const;
};

// Binary P6, 8 bit. Quantization: round(255 * clamp(p, 0, 1)) with ties away
// from zero. 1-channel buffers are replicated to gray RGB; buffers with 3 or
// more channels export their first three.
void write_ppm(const std::string& path, const ImageBuffer& img);

TensorBlob image_to_tensor(const ImageBuffer& img);          // shape [H, W, C]
ImageBuffer image_from_tensor(const TensorBlob& blob);       // expects [H, W, C]

// 10 log10(peak^2 / mse) over all channels; +inf for identical buffers.
double image_psnr(const ImageBuffer& a, const ImageBuffer& b, double peak = 1.0);

}  // namespace trideform

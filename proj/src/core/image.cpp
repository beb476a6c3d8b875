#include "trideform/core/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "trideform/core/error.hpp"

namespace trideform {

ImageBuffer::ImageBuffer(int w, int h, int c) : width(w), height(h), channels(c) {
    if (w <= 0 || h <= 0 || c <= 0)
        throw ValidationError("ImageBuffer: dimensions must be positive");
    pixels.assign(static_cast<std::size_t>(w) * h * c, 0.0f);
}

float& ImageBuffer::at(int x, int y, int c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
}

float ImageBuffer::at(int x, int y, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
}

void ImageBuffer::validate() const {
    if (width <= 0 || height <= 0 || channels <= 0)
        throw ValidationError("ImageBuffer: dimensions must be positive");
    if (pixels.size() != static_cast<std::size_t>(width) * height * channels)
        throw ValidationError("ImageBuffer: pixel count disagrees with dimensions");
}

namespace {

unsigned char quantize(float p) {
    const float c = std::clamp(p, 0.0f, 1.0f);
    // lround rounds ties away from zero; inputs here are non-negative.
    return static_cast<unsigned char>(std::lround(255.0f * c));
}

}  // namespace

void write_ppm(const std::string& path, const ImageBuffer& img) {
    img.validate();
    if (img.channels == 2)
        throw ValidationError("write_ppm: 2-channel buffers are not exportable");

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("write_ppm: cannot open " + path);
    f << "P6\n" << img.width << " " << img.height << "\n255\n";

    std::vector<unsigned char> row(static_cast<std::size_t>(img.width) * 3);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                const int src = img.channels == 1 ? 0 : c;
                row[static_cast<std::size_t>(x) * 3 + c] = quantize(img.at(x, y, src));
            }
        }
        f.write(reinterpret_cast<const char*>(row.data()),
                static_cast<std::streamsize>(row.size()));
    }
    if (!f) throw IoError("write_ppm: write failed for " + path);
}

TensorBlob image_to_tensor(const ImageBuffer& img) {
    img.validate();
    return TensorBlob({img.height, img.width, img.channels}, img.pixels);
}

ImageBuffer image_from_tensor(const TensorBlob& blob) {
    blob.validate();
    if (blob.shape.size() != 3)
        throw ValidationError("image_from_tensor: expected shape [H, W, C]");
    ImageBuffer img(static_cast<int>(blob.shape[1]), static_cast<int>(blob.shape[0]),
                    static_cast<int>(blob.shape[2]));
    img.pixels = blob.data;
    return img;
}

double image_psnr(const ImageBuffer& a, const ImageBuffer& b, double peak) {
    a.validate();
    b.validate();
    if (a.width != b.width || a.height != b.height || a.channels != b.channels)
        throw ValidationError("image_psnr: shape mismatch");
    if (!(peak > 0)) throw ValidationError("image_psnr: peak must be positive");
    double mse = 0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) {
        const double d = static_cast<double>(a.pixels[i]) - b.pixels[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.pixels.size());
    if (mse == 0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / mse);
}

}  // namespace trideform

#pragma once

#include <string>

#include "trideform/condition/condition.hpp"
#include "trideform/field/decoder.hpp"
#include "trideform/field/triplane.hpp"
#include "trideform/render/renderer.hpp"

namespace trideform {

// Geometry of the generated tri-plane field; the style projection's output
// must reshape to exactly this.
struct PlaneSpec {
    int res = 32;
    int channels = 8;
    Vec3 lo{-1.35f, -1.35f, -1.35f};
    Vec3 hi{1.35f, 1.35f, 1.35f};

    std::size_t feature_count() const {
        return 3 * static_cast<std::size_t>(res) * res * channels;
    }
    void validate() const;
};

// z --M_G--> w --align_style--> w_r --S_G--> planes --decode+render--> image.
// S_G is a single linear map at this scale.
struct GeneratorBundle {
    MappingNet m_g;
    Dense s_g;
    DecoderNet decoder;
    AlignmentNet t_g;
    PlaneSpec planes;

    int d_z() const { return m_g.in_dim(); }
    int d_w() const { return m_g.out_dim(); }
    int d_r() const { return t_g.d_in - t_g.d_out; }
    void validate() const;
};

GeneratorBundle make_generator(int d_z, int d_w, int d_r, const PlaneSpec& planes, int c_f,
                               RngStream& rng);

// Fills a tri-plane field from a style vector through the linear projection.
TriPlaneField apply_style(const GeneratorBundle& g, const StyleVector& w);
// Adjoint: d_planes (laid out like TriPlaneField::data) back to the style
// vector, accumulating projection grads.
std::vector<float> apply_style_backward(const GeneratorBundle& g, const StyleVector& w,
                                        const float* d_planes, std::vector<float>* dw_sg,
                                        std::vector<float>* db_sg);

// Full conditional generation path; alpha = 0 is the unconditional path and
// never evaluates T_G.
RenderedImage generate_image(const GeneratorBundle& g, const LatentVector& z, const Embedding& r,
                             float alpha, const Camera& cam, const SurfaceField* sf,
                             const QuadratureSpec& quad, int threads = 1);
RenderedImage render_style(const GeneratorBundle& g, const StyleVector& w_r, const Camera& cam,
                           const SurfaceField* sf, const QuadratureSpec& quad, int threads = 1);

// Checkpoint directory: manifest.json plus one NTC1 tensor per parameter
// block.
void save_generator(const std::string& dir, const GeneratorBundle& g);
GeneratorBundle load_generator(const std::string& dir);

}  // namespace trideform

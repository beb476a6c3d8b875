#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "trideform/geometry/morph.hpp"
#include "trideform/train/bundles.hpp"

namespace trideform {

enum class GradientMode { kFiniteDifference, kReverse };

GradientMode gradient_mode_from_name(const std::string& name);
const char* gradient_mode_name(GradientMode m);

struct InversionConfig {
    int max_steps = 60;
    float step_size = 0.05f;
    GradientMode gradient_mode = GradientMode::kFiniteDifference;
    double threshold = 1e-4;        // stop once the loss drops below this
    std::string distance = "L2-v1";
    std::uint64_t seed = 0;         // drives the w init when none is given

    void validate() const;
};

// Frontal camera at fixed distance plus the morph model's canonical pose:
// the frame every inverted sample is re-rendered in.
struct NeutralFrame {
    Camera camera;
    MorphParams morph;
};

NeutralFrame make_neutral_frame(const ToyMorphModel& model, int width, int height,
                                float distance = 2.7f);

// Pixel L2 plus 0.5x forward-difference gradient L2; the only tag understood
// in v1. Pluggable so a perceptual metric can replace it.
using ImageDistance = std::function<double(const ImageBuffer&, const ImageBuffer&)>;
ImageDistance make_image_distance(const std::string& tag);

struct InversionResult {
    StyleVector w;
    double residual = 0;
    int steps_taken = 0;
    bool converged = false;
    std::vector<double> trajectory;  // best residual after each step
};

// Minimizes image distance between render_style(g, w, cam, sf) and target
// over w. Reports the best w seen; `init` overrides the seeded default
// (mapping a gaussian z through M_G).
InversionResult invert(const GeneratorBundle& g, const ImageBuffer& target, const Camera& cam,
                       const SurfaceField* sf, const InversionConfig& cfg,
                       const QuadratureSpec& quad, const StyleVector* init = nullptr,
                       int threads = 1);

// Neutral-frame re-render. Canonical geometry means identity deformation, so
// this is exactly render_style with no surface field.
RenderedImage canonical_render(const GeneratorBundle& g, const StyleVector& w,
                               const NeutralFrame& frame, const QuadratureSpec& quad,
                               int threads = 1);

// Stand-in for a pretrained image encoder: either a fixed random projection
// of an 8x8 box downsample (toy) or a lookup into a stored embedding set.
struct EmbeddingProvider {
    enum class Mode { kToy, kFile };
    Mode mode = Mode::kToy;

    // toy
    int dim = 32;
    std::uint64_t seed = 0;
    std::vector<float> proj;  // [dim, 8*8*3]

    // file
    std::vector<std::string> ids;
    std::unordered_map<std::string, int> index;
    std::vector<float> table;  // [N, dim] row-major
    bool normalized = false;
};

EmbeddingProvider make_toy_embedder(int dim, std::uint64_t seed);
Embedding embed(const EmbeddingProvider& p, const ImageBuffer& image);
Embedding embed_id(const EmbeddingProvider& p, const std::string& id);

// Cache layout: embeddings.ntc [N, dim] + ids.json manifest.
void save_embedding_cache(const std::string& dir, const std::vector<std::string>& ids,
                          const std::vector<Embedding>& embeddings);
EmbeddingProvider load_embedding_cache(const std::string& dir);

struct NoiseImageRow {
    double cos_main = 0;
    double cos_noise = 0;
    bool flagged = false;  // noise similarity exceeds main similarity
};

struct NoiseReport {
    std::vector<NoiseImageRow> per_image;
    std::vector<double> noise_avg;  // per noise prompt: mean cos against every image
    double mean_noise_avg = 0;
};

// Row i pairs image i with its own main and noise prompts; noise_avg spans
// the whole image set.
NoiseReport noise_analysis(const std::vector<Embedding>& images,
                           const std::vector<Embedding>& main_prompts,
                           const std::vector<Embedding>& noise_prompts);
nlohmann::json noise_report_json(const NoiseReport& r);

}  // namespace trideform

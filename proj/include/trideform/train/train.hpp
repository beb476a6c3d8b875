#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "trideform/canonical/canonical.hpp"
#include "trideform/reg/regularize.hpp"
#include "trideform/train/bundles.hpp"
#include "trideform/train/discrim.hpp"
#include "trideform/train/scene.hpp"

namespace trideform {

struct TrainConfig {
    int stage = 1;
    std::uint64_t seed = 0;
    int steps = 0;
    int batch_size = 4;
    float learning_rate = 0.001f;
    int resolution = 32;
    int n_samples = 24;  // ray quadrature for generated images
    int dataset_size = 32;
    int d_z = 64, d_w = 64, d_r = 32, d_v = 64;
    int plane_res = 32, plane_channels = 8;
    float lambda_jac = 0.01f;
    float lambda_norm = 10.0f;
    float alpha_dropout = 0.5f;
    float r1_weight = 1.0f;
    float density_reg_weight = 1.0f;
    int density_points = 8;
    float density_delta = 0.06f;
    std::string out_dir;
    std::string stage1_checkpoint;  // required for stage 2
    std::string embedding_cache;    // required for stage 2
    int checkpoint_every = 0;       // 0 = final checkpoint only
    int diag_every = 0;             // 0 = auto (~8 diagnostics per run)
    double budget_seconds = 0;      // 0 = unlimited

    bool conditioning() const { return stage == 2; }
    void validate() const;
};

TrainConfig train_config_from_json(const nlohmann::json& j);

struct StepMetrics {
    int step = 0;
    float alpha = 0;
    double d_loss = 0, g_loss = 0;
    double d_real = 0, d_fake = 0;  // mean scores
    double r1 = 0;                  // mean penalty, unweighted
    double r_jac = 0, r_norm = 0;   // mean regularizer values, unweighted
    double density = 0;             // mean density-reg value
    double w_norm = 0;              // mean |w| over the fake batch
    double wr_dev = 0;              // mean | |w_r| - |w| | / |w|
    double diversity = -1;          // filled on diagnostic steps, else -1
    double sensitivity = -1;
};

nlohmann::json metrics_json(const StepMetrics& m);

// One real sample prepared for training: stem input, camera code, and the
// precomputed deformed sample positions for rendering fakes under the same
// pose and geometry.
struct TrainItem {
    Embedding r;
    std::vector<float> real_in;  // [6, H*W] feature-major image ‖ rdr
    std::vector<float> cam12;
    SamplePlan plan;
};

TrainItem make_train_item(const ToyMorphModel& model, const SceneRecord& rec, const Embedding& r,
                          int n_samples);

// Per-tensor Adam with fixed registration order; updates are elementwise, so
// results do not depend on parallelism.
class AdamState {
 public:
    explicit AdamState(float beta1 = 0.0f, float beta2 = 0.99f, float eps = 1e-8f)
        : beta1_(beta1), beta2_(beta2), eps_(eps) {}

    std::size_t add_param(std::size_t n);
    void begin_step();
    void update(std::size_t slot, float lr, float* p, const float* g, std::size_t n);
    long step_count() const { return t_; }

 private:
    float beta1_, beta2_, eps_;
    long t_ = 0;
    std::vector<std::vector<float>> m_, v_;
};

struct GanOptimizers {
    AdamState gen, disc;
    void init(const GeneratorBundle& g, const DiscriminatorBundle& d);
};

struct StepArtifacts {
    std::vector<StyleVector> w, w_r;
    std::vector<std::vector<float>> fake_features;  // [c_f, n_rays] per item
};

// One alternating update (discriminator, then generator). Randomness comes
// from purpose-keyed substreams of `step_rng`, so disabled features consume
// nothing and enabling them never shifts the remaining draws.
StepMetrics gan_step(GeneratorBundle& g, DiscriminatorBundle& d, std::span<const TrainItem> batch,
                     const TrainConfig& cfg, const RngStream& step_rng, GanOptimizers& opt,
                     StepArtifacts* artifacts = nullptr);

// Mean over points x of (sigma(x) - sigma(x + delta u))^2 with u uniform on
// the sphere; x is drawn from the delta-inset bounding box so both ends stay
// in bounds. n_points = 0 returns 0.
double density_reg(const TriPlaneField& tp, const DecoderNet& net, RngStream& rng, int n_points,
                   float delta);
// Differentiable twin used inside the training loss: accumulates
// scale * d(mean)/d(planes) and the matching decoder grads.
double density_reg_grad(const TriPlaneField& tp, const DecoderNet& net, RngStream& rng,
                        int n_points, float delta, float scale, float* plane_grad,
                        MlpGrads* net_grads);

// Mean pairwise image L2 over n_z renders with fixed (r, alpha, cam, geo).
double diversity(const GeneratorBundle& g, const Embedding& r, float alpha, int n_z,
                 const Camera& cam, const SurfaceField* sf, const QuadratureSpec& quad,
                 RngStream& rng);

// fd_frob_sq of f_r at r over fd_frob_sq of f_z at z; probes for the two
// estimates come from independent substreams. Zero denominator reports the
// +infinity sentinel.
double sensitivity_ratio(const VecFn& f_r, const std::vector<double>& r, const VecFn& f_z,
                         const std::vector<double>& z, const ProbeSpec& probes);
// The ratio for a generator bundle's rendered image at alpha = 1.
double generator_sensitivity(const GeneratorBundle& g, const LatentVector& z, const Embedding& r,
                             const Camera& cam, const SurfaceField* sf,
                             const QuadratureSpec& quad, const ProbeSpec& probes);

struct TrainResult {
    std::string checkpoint_dir;
    std::vector<StepMetrics> metrics;
    bool budget_exceeded = false;
    int steps_run = 0;
};

// Full deterministic run: dataset, bundles, step loop, JSON-lines metrics,
// checkpoints. `resume_ckpt` overrides the initial bundle source.
TrainResult train_loop(const TrainConfig& cfg, const std::string& resume_ckpt = "");

struct CollapseConfig {
    TrainConfig base;       // stage-2 settings shared by both runs
    int warmup_steps = 0;   // shared stage-1 pre-run
    float lambda_on = 0.01f;
    int noise_dim = 16;     // per-sample noise appended to embeddings
    int n_eval_z = 4;
    int n_eval_r = 4;
    std::string out_dir;

    void validate() const;
};

struct CollapseReport {
    double div_unreg = 0, div_reg = 0, ratio = 0;
    bool budget_exceeded = false;
    nlohmann::json curves;  // per-run (step, diversity) samples
};

nlohmann::json collapse_report_json(const CollapseReport& r);

// Paired experiment: identical data, init, and draw streams; only lambda_jac
// differs. Emits checkpoints, metrics, sample grids, and the ratio report
// under out_dir.
CollapseReport collapse_demo(const CollapseConfig& cfg);

}  // namespace trideform

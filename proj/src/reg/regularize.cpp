#include "trideform/reg/regularize.hpp"

#include <cmath>

#include "trideform/core/error.hpp"

namespace trideform {

void ProbeSpec::validate() const {
    if (!(sigma > 0)) throw ValidationError("ProbeSpec: sigma must be positive");
    if (n_probes < 1) throw ValidationError("ProbeSpec: n_probes must be >= 1");
}

void RegWeights::validate() const {
    if (alpha < 0 || alpha > 1) throw ValidationError("RegWeights: alpha must lie in [0,1]");
    if (alpha_dropout < 0 || alpha_dropout > 1)
        throw ValidationError("RegWeights: alpha_dropout must lie in [0,1]");
    if (lambda_jac < 0 || lambda_norm < 0 || eta < 0)
        throw ValidationError("RegWeights: penalty weights must be non-negative");
}

double exact_frob_sq(const std::vector<double>& j) {
    double s = 0;
    for (double v : j) s += v * v;
    return s;
}

namespace {

std::vector<double> draw_gaussian(RngStream& rng, std::size_t n) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.next_gaussian();
    return v;
}

double norm_sq(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x * x;
    return s;
}

}  // namespace

double hutchinson_frob_sq(const VecFn& jvp_fn, int in_dim, const ProbeSpec& probes) {
    probes.validate();
    if (in_dim < 1) throw ValidationError("hutchinson_frob_sq: in_dim must be >= 1");
    double acc = 0;
    for (int k = 0; k < probes.n_probes; ++k) {
        RngStream rng = probes.rng.substream(std::uint64_t(k));
        acc += norm_sq(jvp_fn(draw_gaussian(rng, std::size_t(in_dim))));
    }
    return acc / probes.n_probes;
}

double fd_frob_sq(const VecFn& f, const std::vector<double>& x, const ProbeSpec& probes) {
    probes.validate();
    const std::vector<double> fx = f(x);
    double acc = 0;
    for (int k = 0; k < probes.n_probes; ++k) {
        RngStream rng = probes.rng.substream(std::uint64_t(k));
        std::vector<double> xp = x;
        for (std::size_t i = 0; i < x.size(); ++i) xp[i] += probes.sigma * rng.next_gaussian();
        std::vector<double> fp = f(xp);
        if (fp.size() != fx.size())
            throw ValidationError("fd_frob_sq: f output dimension changed across evaluations");
        double d = 0;
        for (std::size_t i = 0; i < fp.size(); ++i) {
            const double e = fp[i] - fx[i];
            d += e * e;
        }
        acc += d;
    }
    return acc / (probes.n_probes * probes.sigma * probes.sigma);
}

double r_jac(const VecFn& alignment_fn, const std::vector<double>& r, const ProbeSpec& probes) {
    return fd_frob_sq(alignment_fn, r, probes);
}

double r_norm(const std::vector<float>& w_r, const std::vector<float>& w) {
    if (w_r.size() != w.size()) throw ValidationError("r_norm: dimension mismatch");
    double a = 0, b = 0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        a += double(w_r[i]) * w_r[i];
        b += double(w[i]) * w[i];
    }
    const double d = std::sqrt(a) - std::sqrt(b);
    return d * d;
}

double spectral_norm(const std::vector<double>& j, int rows, int cols, int iters) {
    if (rows < 1 || cols < 1 || j.size() != std::size_t(rows) * cols)
        throw ValidationError("spectral_norm: shape does not match data");
    if (iters < 50) throw ValidationError("spectral_norm: need at least 50 iterations");

    RngStream rng(0x5eC7, 0);  // fixed internal seed: deterministic output
    std::vector<double> v = draw_gaussian(rng, std::size_t(cols));
    std::vector<double> u(static_cast<std::size_t>(rows), 0.0);
    double u_norm = 0;
    for (int it = 0; it < iters; ++it) {
        for (int r = 0; r < rows; ++r) {
            double s = 0;
            for (int c = 0; c < cols; ++c) s += j[std::size_t(r) * cols + c] * v[c];
            u[r] = s;
        }
        u_norm = std::sqrt(norm_sq(u));
        if (u_norm == 0) return 0;  // hit the null space: J^T J v = 0 => J = 0 on span
        for (int c = 0; c < cols; ++c) {
            double s = 0;
            for (int r = 0; r < rows; ++r) s += j[std::size_t(r) * cols + c] * u[r];
            v[c] = s;
        }
        const double vn = std::sqrt(norm_sq(v));
        if (vn == 0) return u_norm;
        for (double& x : v) x /= vn;
    }
    return u_norm;
}

double edit_loss(const std::vector<float>& delta_x, const std::vector<float>& delta_t,
                 const std::vector<float>& w_t, const std::vector<float>& w, double eta) {
    if (delta_x.size() != delta_t.size()) throw ValidationError("edit_loss: delta size mismatch");
    double dot = 0, nx = 0, nt = 0;
    for (std::size_t i = 0; i < delta_x.size(); ++i) {
        dot += double(delta_x[i]) * delta_t[i];
        nx += double(delta_x[i]) * delta_x[i];
        nt += double(delta_t[i]) * delta_t[i];
    }
    if (nx < 1e-24 || nt < 1e-24)
        throw DegenerateInputError("edit_loss: zero-norm embedding delta");
    const double cosine = dot / std::sqrt(nx * nt);
    return 1.0 - cosine + eta * r_norm(w_t, w);
}

}  // namespace trideform

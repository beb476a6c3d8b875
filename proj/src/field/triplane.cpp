#include "trideform/field/triplane.hpp"

#include <cmath>
#include <cstring>

#include "trideform/core/error.hpp"
#include "trideform/core/json_util.hpp"
#include "trideform/core/kernels.hpp"
#include "trideform/core/tensor.hpp"

namespace trideform {

TriPlaneField TriPlaneField::zeros(int res, int channels, Vec3 lo, Vec3 hi) {
    TriPlaneField tp;
    tp.res = res;
    tp.channels = channels;
    tp.lo = lo;
    tp.hi = hi;
    tp.validate();
    tp.data.assign(3 * tp.plane_stride(), 0.0f);
    return tp;
}

void TriPlaneField::validate() const {
    if (res < 2 || channels < 1)
        throw ValidationError("TriPlaneField: res must be >= 2 and channels >= 1");
    if (!(hi.x > lo.x) || !(hi.y > lo.y) || !(hi.z > lo.z))
        throw ValidationError("TriPlaneField: bounds must have positive extent");
    if (!data.empty() && data.size() != 3 * plane_stride())
        throw ValidationError("TriPlaneField: data size mismatch");
}

namespace {

struct PlaneLookup {
    std::size_t t00, t10, t01, t11;
    double w[4];
};

// (u, v) continuous grid coords in [0, res-1]; node-centered cells.
PlaneLookup lookup(const TriPlaneField& tp, int plane, double gu, double gv) {
    const int max_cell = tp.res - 2;
    int i0 = static_cast<int>(std::floor(gu));
    int j0 = static_cast<int>(std::floor(gv));
    if (i0 < 0) i0 = 0;
    if (i0 > max_cell) i0 = max_cell;
    if (j0 < 0) j0 = 0;
    if (j0 > max_cell) j0 = max_cell;
    const double fu = gu - i0;
    const double fv = gv - j0;

    PlaneLookup pl;
    pl.t00 = tp.texel_offset(plane, i0, j0);
    pl.t10 = tp.texel_offset(plane, i0 + 1, j0);
    pl.t01 = tp.texel_offset(plane, i0, j0 + 1);
    pl.t11 = tp.texel_offset(plane, i0 + 1, j0 + 1);
    pl.w[0] = (1 - fu) * (1 - fv);
    pl.w[1] = fu * (1 - fv);
    pl.w[2] = (1 - fu) * fv;
    pl.w[3] = fu * fv;
    return pl;
}

bool grid_coords(const TriPlaneField& tp, const Vec3& x, double g[3]) {
    const double sx = (static_cast<double>(x.x) - tp.lo.x) / (static_cast<double>(tp.hi.x) - tp.lo.x);
    const double sy = (static_cast<double>(x.y) - tp.lo.y) / (static_cast<double>(tp.hi.y) - tp.lo.y);
    const double sz = (static_cast<double>(x.z) - tp.lo.z) / (static_cast<double>(tp.hi.z) - tp.lo.z);
    if (sx < 0 || sx > 1 || sy < 0 || sy > 1 || sz < 0 || sz > 1) return false;
    g[0] = sx * (tp.res - 1);
    g[1] = sy * (tp.res - 1);
    g[2] = sz * (tp.res - 1);
    return true;
}

}  // namespace

bool sample_triplane(const TriPlaneField& tp, const Vec3& x, float* out) {
    std::memset(out, 0, static_cast<std::size_t>(tp.channels) * sizeof(float));
    double g[3];
    if (!grid_coords(tp, x, g)) return false;

    // Axis pairs per plane: (x,y), (x,z), (y,z).  The 12-term accumulation
    // runs in double so the result is a correctly rounded float regardless
    // of texel magnitudes; one rounding at the end.
    const int axes[3][2] = {{0, 1}, {0, 2}, {1, 2}};
    PlaneLookup pl[3];
    for (int p = 0; p < 3; ++p) pl[p] = lookup(tp, p, g[axes[p][0]], g[axes[p][1]]);
    const float* d = tp.data.data();
    for (int c = 0; c < tp.channels; ++c) {
        double acc = 0;
        for (int p = 0; p < 3; ++p)
            acc += (pl[p].w[0] * d[pl[p].t00 + c] + pl[p].w[1] * d[pl[p].t10 + c]) +
                   (pl[p].w[2] * d[pl[p].t01 + c] + pl[p].w[3] * d[pl[p].t11 + c]);
        out[c] = static_cast<float>(acc);
    }
    return true;
}

void scatter_triplane(const TriPlaneField& tp, const Vec3& x, const float* grad,
                      float* grad_data) {
    double g[3];
    if (!grid_coords(tp, x, g)) return;

    const auto& k = kern::ops();
    const int axes[3][2] = {{0, 1}, {0, 2}, {1, 2}};
    for (int p = 0; p < 3; ++p) {
        const PlaneLookup pl = lookup(tp, p, g[axes[p][0]], g[axes[p][1]]);
        const float w[4] = {static_cast<float>(pl.w[0]), static_cast<float>(pl.w[1]),
                            static_cast<float>(pl.w[2]), static_cast<float>(pl.w[3])};
        k.wscatter4(grad_data + pl.t00, grad_data + pl.t10, grad_data + pl.t01,
                    grad_data + pl.t11, w, grad, tp.channels);
    }
}

void save_triplane(const std::string& dir, const std::string& prefix, const TriPlaneField& tp) {
    tp.validate();
    write_tensor(dir + "/" + prefix + "_planes.ntc",
                 TensorBlob({3, tp.res, tp.res, tp.channels}, tp.data));
    nlohmann::json j = {
        {"res", tp.res},
        {"channels", tp.channels},
        {"lo", {tp.lo.x, tp.lo.y, tp.lo.z}},
        {"hi", {tp.hi.x, tp.hi.y, tp.hi.z}},
    };
    save_json_file(dir + "/" + prefix + "_planes.json", j);
}

TriPlaneField load_triplane(const std::string& dir, const std::string& prefix) {
    const nlohmann::json j = load_json_file(dir + "/" + prefix + "_planes.json");
    check_keys(j, "triplane manifest", {"res", "channels", "lo", "hi"});
    const auto lo = get_req<std::vector<float>>(j, "triplane manifest", "lo");
    const auto hi = get_req<std::vector<float>>(j, "triplane manifest", "hi");
    if (lo.size() != 3 || hi.size() != 3)
        throw FormatError("load_triplane: lo/hi must have 3 entries");
    TriPlaneField tp = TriPlaneField::zeros(get_req<int>(j, "triplane manifest", "res"),
                                            get_req<int>(j, "triplane manifest", "channels"),
                                            {lo[0], lo[1], lo[2]}, {hi[0], hi[1], hi[2]});
    const TensorBlob planes = read_tensor(dir + "/" + prefix + "_planes.ntc");
    if (planes.shape != std::vector<int64_t>{3, tp.res, tp.res, tp.channels})
        throw CorruptionError("load_triplane: planes tensor shape mismatch");
    tp.data = planes.data;
    return tp;
}

}  // namespace trideform

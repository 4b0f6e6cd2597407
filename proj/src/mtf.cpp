#include "cseg/mtf.hpp"

#include "cseg/errors.hpp"

#include <string>

namespace cseg {
namespace {

std::string block_name(Plane plane) { return std::string("mtf.") + to_string(plane); }

constexpr std::array<Plane, 3> kOrder = {Plane::XY, Plane::XZ, Plane::YZ};

}  // namespace

void init_mtf(ParamStore& store, std::int64_t d, Rng& rng, bool zero_kernel) {
    for (Plane pl : kOrder) {
        if (zero_kernel) {
            store.add_zeros(block_name(pl) + ".k", {1, 1, 2 * d, d});
        } else {
            store.add_glorot(block_name(pl) + ".k", {1, 1, 2 * d, d}, 2 * d, d, rng);
        }
        store.add_zeros(block_name(pl) + ".b", {d});
    }
}

Var fuse2d(ParamBinder& p, Var h_prev, std::span<const Eigen::Vector3d> prev_coords, Var f,
           std::span<const Eigen::Vector3d> cur_coords, Plane plane, const MtfConfig& cfg) {
    Tape& t = p.tape();
    const auto d = t.value(f).dim(1);
    if (static_cast<std::int64_t>(cur_coords.size()) != t.value(f).dim(0)) {
        throw ShapeError("fuse2d: " + std::to_string(cur_coords.size()) + " coordinates for features " +
                         to_string(t.value(f).shape()));
    }
    const PlaneSpec spec = make_plane(cur_coords, plane, cfg.rho, cfg.max_cells);
    const auto cur_cells = plane_cells(cur_coords, spec, true);
    const auto hw = spec.grid.cells();

    Var hist_flat;
    if (prev_coords.empty()) {
        hist_flat = t.constant(Tensor({hw, d}));
    } else {
        if (static_cast<std::int64_t>(prev_coords.size()) != t.value(h_prev).dim(0)) {
            throw ShapeError("fuse2d: " + std::to_string(prev_coords.size()) + " history coordinates for features " +
                             to_string(t.value(h_prev).shape()));
        }
        const auto prev_cells = plane_cells(prev_coords, spec, false);
        hist_flat = ops::segment_mean(t, h_prev, prev_cells, hw);
    }
    const Var cur_flat = ops::segment_mean(t, f, cur_cells, hw);
    const Var both = ops::reshape(t, ops::concat_cols(t, hist_flat, cur_flat), {spec.grid.h, spec.grid.w, 2 * d});
    const std::string n = block_name(plane);
    const Var mixed = ops::conv2d(t, both, p(n + ".k"), p(n + ".b"));
    const Var back = ops::gather(t, mixed, cur_cells);
    return cfg.mode == FuseMode::Replace ? back : ops::add(t, f, back);
}

Var mtf_forward(ParamBinder& p, Var f, std::span<const Eigen::Vector3d> cur_coords, Var h_prev,
                const TemporalFeatureState& state, const Pose& to_current, const MtfConfig& cfg) {
    std::vector<Eigen::Vector3d> moved;
    if (state.valid) {
        moved.reserve(state.coords.size());
        for (const auto& c : state.coords) moved.push_back(to_current.apply(c));
    }
    // History rows are RMS-normalised: H_{t-1} already carries earlier fusion
    // outputs, and without a bound the residual sum compounds over frames.
    const Var hist = state.valid ? ops::rms_norm_rows(p.tape(), h_prev) : h_prev;
    Var out = f;
    for (Plane pl : kOrder) out = fuse2d(p, hist, moved, out, cur_coords, pl, cfg);
    return out;
}

Var mtf_forward(ParamBinder& p, Var f, std::span<const Eigen::Vector3d> cur_coords, const TemporalFeatureState& state,
                const Pose& to_current, const MtfConfig& cfg) {
    const Var h = state.valid ? p.tape().constant(state.features) : Var{};
    return mtf_forward(p, f, cur_coords, h, state, to_current, cfg);
}

}  // namespace cseg

#pragma once

#include "cseg/backbone.hpp"

#include <vector>

namespace cseg {

// Previous frame's enhanced features with their coordinates in that frame.
struct TemporalFeatureState {
    Tensor features;
    std::vector<Eigen::Vector3d> coords;
    bool valid = false;
};

// Replace writes the gathered fusion output over the current features;
// Residual adds it to them.
enum class FuseMode { Residual, Replace };

struct MtfConfig {
    double rho = 0.8;
    std::int64_t max_cells = 160;
    FuseMode mode = FuseMode::Residual;
};

// zero_kernel starts every block as the identity (residual mode).
void init_mtf(ParamStore& store, std::int64_t d, Rng& rng, bool zero_kernel = false);

// One plane fusion block. History and current streams are averaged onto a grid
// spanning the current points, concatenated and mixed by a 1x1 conv, then read
// back at the current points. History points outside the grid are dropped.
// h_prev is ignored (zero grid) when prev_coords is empty.
Var fuse2d(ParamBinder& p, Var h_prev, std::span<const Eigen::Vector3d> prev_coords, Var f,
           std::span<const Eigen::Vector3d> cur_coords, Plane plane, const MtfConfig& cfg);

// Moves history coordinates by to_current, RMS-normalises the history rows, then fuses on XY, XZ and YZ in turn,
// each block's output feeding the next. h_prev is only read when state.valid.
Var mtf_forward(ParamBinder& p, Var f, std::span<const Eigen::Vector3d> cur_coords, Var h_prev,
                const TemporalFeatureState& state, const Pose& to_current, const MtfConfig& cfg);
// Same, with the history taken from state as a detached constant.
Var mtf_forward(ParamBinder& p, Var f, std::span<const Eigen::Vector3d> cur_coords, const TemporalFeatureState& state,
                const Pose& to_current, const MtfConfig& cfg);

}  // namespace cseg

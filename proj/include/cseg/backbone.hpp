#pragma once

#include "cseg/ops.hpp"
#include "cseg/params.hpp"
#include "cseg/pointcloud.hpp"

#include <array>
#include <string>
#include <vector>

namespace cseg {

// Axis-aligned projection plane; the name lists the two kept axes.
enum class Plane { XY, XZ, YZ };
const char* to_string(Plane p);

struct PlaneSpec {
    Plane plane = Plane::XY;
    double rho = 0.8;
    double origin_u = 0.0;
    double origin_v = 0.0;
    ops::GridShape grid;
};

// Grid covering the bounds of coords on the plane, origin at the minimum
// corner, at most max_cells per axis. rho <= 0 throws ConfigError.
PlaneSpec make_plane(std::span<const Eigen::Vector3d> coords, Plane plane, double rho, std::int64_t max_cells);

// Flat cell index (row * W + col) per point. Out-of-grid points clamp to the
// border when clamp is set, otherwise they get -1.
std::vector<std::int64_t> plane_cells(std::span<const Eigen::Vector3d> coords, const PlaneSpec& spec, bool clamp);

struct BackboneConfig {
    std::int64_t d = 32;
    int layers = 6;
    int k = 8;
    double rho = 0.8;
    std::int64_t max_cells = 160;
};

// Per-neighbour input channels of the local embedding: relative offset (x5),
// neighbour z, intensity, range / 10, frame offset.
inline constexpr std::int64_t kEmbedChannels = 7;

void init_backbone(ParamStore& store, const BackboneConfig& cfg, Rng& rng);

// Parameter-free part of the backbone for one cloud: KNN channels and the
// plane cells of every mixing round. Cached across epochs.
struct BackboneGeometry {
    Tensor neighbours;  // [(N*k) x kEmbedChannels]
    std::vector<PlaneSpec> planes;
    std::vector<std::vector<std::int64_t>> cells;
    std::int64_t num_points = 0;
    int k = 0;
};

// Neighbour channel block for k nearest neighbours (self included).
// k < 1 throws ConfigError; fewer than k points throws DataError.
Tensor neighbour_channels(const StackedCloud& cloud, int k);
BackboneGeometry prepare_backbone(const StackedCloud& cloud, const BackboneConfig& cfg);

// Shared MLP over neighbour channels, max over the k neighbours -> [N x D].
Var local_embed(ParamBinder& p, const Tensor& neighbours, int k);
// Scatter to the plane, 3x3 conv + GELU, gather, residual add.
Var plane_mix(ParamBinder& p, Var features, std::span<const std::int64_t> cells, ops::GridShape grid, int layer);
// local_embed then cfg.layers plane_mix rounds cycling XY, XZ, YZ; rows are
// RMS-normalised on output.
Var backbone_forward(ParamBinder& p, const BackboneGeometry& geo);

}  // namespace cseg

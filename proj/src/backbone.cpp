#include "cseg/backbone.hpp"

#include "cseg/errors.hpp"
#include "cseg/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace cseg {
namespace {

std::pair<int, int> plane_axes(Plane p) {
    switch (p) {
        case Plane::XY: return {0, 1};
        case Plane::XZ: return {0, 2};
        case Plane::YZ: return {1, 2};
    }
    return {0, 1};
}

constexpr std::array<Plane, 3> kCycle = {Plane::XY, Plane::XZ, Plane::YZ};

}  // namespace

const char* to_string(Plane p) {
    switch (p) {
        case Plane::XY: return "xy";
        case Plane::XZ: return "xz";
        case Plane::YZ: return "yz";
    }
    return "?";
}

PlaneSpec make_plane(std::span<const Eigen::Vector3d> coords, Plane plane, double rho, std::int64_t max_cells) {
    if (!(rho > 0.0)) throw ConfigError("grid resolution must be positive, got " + std::to_string(rho));
    if (max_cells < 1) throw ConfigError("max_cells must be >= 1");
    const auto [a, b] = plane_axes(plane);
    PlaneSpec spec;
    spec.plane = plane;
    spec.rho = rho;
    if (coords.empty()) {
        spec.grid = {1, 1};
        return spec;
    }
    double lo_u = std::numeric_limits<double>::infinity(), hi_u = -lo_u;
    double lo_v = lo_u, hi_v = -lo_u;
    for (const auto& c : coords) {
        lo_u = std::min(lo_u, c[a]);
        hi_u = std::max(hi_u, c[a]);
        lo_v = std::min(lo_v, c[b]);
        hi_v = std::max(hi_v, c[b]);
    }
    spec.origin_u = lo_u;
    spec.origin_v = lo_v;
    const auto extent = [&](double lo, double hi) {
        return std::clamp<std::int64_t>(static_cast<std::int64_t>(std::floor((hi - lo) / rho)) + 1, 1, max_cells);
    };
    spec.grid = {extent(lo_u, hi_u), extent(lo_v, hi_v)};
    return spec;
}

std::vector<std::int64_t> plane_cells(std::span<const Eigen::Vector3d> coords, const PlaneSpec& spec, bool clamp) {
    const auto [a, b] = plane_axes(spec.plane);
    std::vector<std::int64_t> cells(coords.size());
    for (std::size_t i = 0; i < coords.size(); ++i) {
        auto r = static_cast<std::int64_t>(std::floor((coords[i][a] - spec.origin_u) / spec.rho));
        auto c = static_cast<std::int64_t>(std::floor((coords[i][b] - spec.origin_v) / spec.rho));
        const bool inside = r >= 0 && r < spec.grid.h && c >= 0 && c < spec.grid.w;
        if (!inside && !clamp) {
            cells[i] = -1;
            continue;
        }
        r = std::clamp<std::int64_t>(r, 0, spec.grid.h - 1);
        c = std::clamp<std::int64_t>(c, 0, spec.grid.w - 1);
        cells[i] = r * spec.grid.w + c;
    }
    return cells;
}

void init_backbone(ParamStore& store, const BackboneConfig& cfg, Rng& rng) {
    if (cfg.d < 1 || cfg.layers < 0 || cfg.k < 1) throw ConfigError("invalid backbone configuration");
    add_mlp2(store, "backbone.embed", kEmbedChannels, cfg.d, cfg.d, rng);
    for (int l = 0; l < cfg.layers; ++l) {
        const std::string n = "backbone.mix" + std::to_string(l);
        store.add_glorot(n + ".k", {3, 3, cfg.d, cfg.d}, 9 * cfg.d, cfg.d, rng);
        store.add_zeros(n + ".b", {cfg.d});
    }
}

Tensor neighbour_channels(const StackedCloud& cloud, int k) {
    if (k < 1) throw ConfigError("neighbour count k must be >= 1, got " + std::to_string(k));
    const auto n = static_cast<std::int64_t>(cloud.size());
    if (n < k) {
        throw DataError("cloud has " + std::to_string(n) + " points, fewer than k = " + std::to_string(k));
    }
    auto pts = coordinates(cloud.points);
    const KdTree tree(pts);
    Tensor out({n * k, kEmbedChannels});
    for (std::int64_t i = 0; i < n; ++i) {
        const auto nb = tree.knn(pts[i], k);
        for (int j = 0; j < k; ++j) {
            const Point5& q = cloud.points[nb[j]];
            double* row = out.data() + (i * k + j) * kEmbedChannels;
            row[0] = 5.0 * (q.x - pts[i].x());
            row[1] = 5.0 * (q.y - pts[i].y());
            row[2] = 5.0 * (q.z - pts[i].z());
            row[3] = q.z;
            row[4] = q.intensity;
            row[5] = q.range / 10.0;
            row[6] = static_cast<double>(cloud.source_offset[nb[j]]);
        }
    }
    return out;
}

BackboneGeometry prepare_backbone(const StackedCloud& cloud, const BackboneConfig& cfg) {
    BackboneGeometry geo;
    geo.neighbours = neighbour_channels(cloud, cfg.k);
    geo.num_points = static_cast<std::int64_t>(cloud.size());
    geo.k = cfg.k;
    const auto pts = coordinates(cloud.points);
    for (int l = 0; l < cfg.layers; ++l) {
        const Plane pl = kCycle[l % 3];
        if (l < 3) geo.planes.push_back(make_plane(pts, pl, cfg.rho, cfg.max_cells));
        geo.cells.push_back(l < 3 ? plane_cells(pts, geo.planes.back(), true) : geo.cells[l % 3]);
    }
    return geo;
}

Var local_embed(ParamBinder& p, const Tensor& neighbours, int k) {
    Tape& t = p.tape();
    const Var x = t.constant(neighbours);
    return ops::max_pool_groups(t, mlp2(p, "backbone.embed", x), k);
}

Var plane_mix(ParamBinder& p, Var features, std::span<const std::int64_t> cells, ops::GridShape grid, int layer) {
    Tape& t = p.tape();
    const std::string n = "backbone.mix" + std::to_string(layer);
    const Var g = ops::scatter_mean(t, features, cells, grid);
    const Var c = ops::gelu(t, ops::conv2d(t, g, p(n + ".k"), p(n + ".b")));
    return ops::add(t, features, ops::gather(t, c, cells));
}

Var backbone_forward(ParamBinder& p, const BackboneGeometry& geo) {
    Var f = local_embed(p, geo.neighbours, geo.k);
    for (std::size_t l = 0; l < geo.cells.size(); ++l) {
        f = plane_mix(p, f, geo.cells[l], geo.planes[l % 3].grid, static_cast<int>(l));
    }
    return ops::rms_norm_rows(p.tape(), f);
}

}  // namespace cseg

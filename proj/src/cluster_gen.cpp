#include "cseg/cluster_gen.hpp"

#include "cseg/errors.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <string>
#include <unordered_map>

namespace cseg {
namespace {

constexpr int kUnvisited = -2;
constexpr int kNoise = -1;

class HashGrid {
public:
    HashGrid(std::span<const Eigen::Vector3d> pts, double cell) : pts_(pts), cell_(cell) {
        cells_.reserve(pts.size());
        for (std::size_t i = 0; i < pts.size(); ++i) cells_[key(pts[i])].push_back(static_cast<int>(i));
    }

    // All points within eps of point i (inclusive), ascending index.
    void region(int i, double eps2, std::vector<int>& out) const {
        out.clear();
        const VoxelKey c = key(pts_[i]);
        for (std::int64_t dx = -1; dx <= 1; ++dx) {
            for (std::int64_t dy = -1; dy <= 1; ++dy) {
                for (std::int64_t dz = -1; dz <= 1; ++dz) {
                    auto it = cells_.find({c.x + dx, c.y + dy, c.z + dz});
                    if (it == cells_.end()) continue;
                    for (int j : it->second) {
                        if ((pts_[j] - pts_[i]).squaredNorm() <= eps2) out.push_back(j);
                    }
                }
            }
        }
        std::sort(out.begin(), out.end());
    }

private:
    VoxelKey key(const Eigen::Vector3d& p) const { return voxel_key(p.x(), p.y(), p.z(), {cell_, cell_, cell_}); }

    std::span<const Eigen::Vector3d> pts_;
    double cell_;
    std::unordered_map<VoxelKey, std::vector<int>, VoxelKeyHash> cells_;
};

}  // namespace

ClusterSet ClusterSet::from_assignment(std::vector<int> assignment) {
    ClusterSet out;
    int max_id = -1;
    for (int a : assignment) max_id = std::max(max_id, a);
    out.members.resize(static_cast<std::size_t>(max_id + 1));
    for (std::size_t i = 0; i < assignment.size(); ++i) {
        if (assignment[i] < -1) throw DataError("cluster id below -1 at point " + std::to_string(i));
        if (assignment[i] >= 0) out.members[assignment[i]].push_back(static_cast<int>(i));
    }
    for (std::size_t c = 0; c < out.members.size(); ++c) {
        if (out.members[c].empty()) throw DataError("cluster ids are not dense: id " + std::to_string(c) + " unused");
    }
    out.assignment = std::move(assignment);
    return out;
}

ClusterSet dbscan(std::span<const Eigen::Vector3d> coords, double eps, int min_pts) {
    if (!(eps > 0.0)) throw ConfigError("dbscan: eps must be positive");
    if (min_pts < 1) throw ConfigError("dbscan: min_pts must be at least 1");
    if (coords.empty()) return {};

    const int n = static_cast<int>(coords.size());
    const double eps2 = eps * eps;
    HashGrid grid(coords, eps);
    std::vector<int> label(n, kUnvisited);
    std::vector<int> nb;
    std::vector<int> nb2;
    std::deque<int> frontier;
    int cluster = 0;

    for (int i = 0; i < n; ++i) {
        if (label[i] != kUnvisited) continue;
        grid.region(i, eps2, nb);
        if (static_cast<int>(nb.size()) < min_pts) {
            label[i] = kNoise;
            continue;
        }
        label[i] = cluster;
        frontier.assign(nb.begin(), nb.end());
        while (!frontier.empty()) {
            const int j = frontier.front();
            frontier.pop_front();
            if (label[j] == kNoise) label[j] = cluster;  // border point
            if (label[j] != kUnvisited) continue;
            label[j] = cluster;
            grid.region(j, eps2, nb2);
            if (static_cast<int>(nb2.size()) >= min_pts) frontier.insert(frontier.end(), nb2.begin(), nb2.end());
        }
        ++cluster;
    }
    return ClusterSet::from_assignment(std::move(label));
}

ClusterSet filter_foreground(const ClusterSet& clusters, std::span<const CoarseLabel> labels) {
    if (labels.size() != clusters.num_points()) {
        throw DataError("filter_foreground: " + std::to_string(labels.size()) + " labels for " +
                        std::to_string(clusters.num_points()) + " points");
    }
    std::vector<int> remap(clusters.members.size(), -1);
    int next = 0;
    for (std::size_t c = 0; c < clusters.members.size(); ++c) {
        const auto& m = clusters.members[c];
        if (std::any_of(m.begin(), m.end(), [&](int p) { return labels[p] == CoarseLabel::Foreground; })) {
            remap[c] = next++;
        }
    }
    std::vector<int> assignment(clusters.assignment.size(), -1);
    for (std::size_t i = 0; i < assignment.size(); ++i) {
        const int c = clusters.assignment[i];
        if (c >= 0) assignment[i] = remap[c];
    }
    return ClusterSet::from_assignment(std::move(assignment));
}

std::vector<Eigen::Vector3d> cluster_centers(const ClusterSet& clusters, std::span<const Eigen::Vector3d> coords) {
    std::vector<Eigen::Vector3d> centers;
    centers.reserve(clusters.members.size());
    for (const auto& m : clusters.members) {
        Eigen::Vector3d sum = Eigen::Vector3d::Zero();
        for (int p : m) sum += coords[p];
        centers.push_back(sum / static_cast<double>(m.size()));
    }
    return centers;
}

std::vector<int> clustering_candidates(std::span<const CoarseLabel> labels) {
    std::vector<int> out;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == CoarseLabel::Foreground || labels[i] == CoarseLabel::Unlabeled) {
            out.push_back(static_cast<int>(i));
        }
    }
    return out;
}

}  // namespace cseg

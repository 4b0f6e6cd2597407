#pragma once

#include "cseg/label_transfer.hpp"

#include <Eigen/Dense>

#include <span>
#include <vector>

namespace cseg {

// Per-point cluster ids (-1 = noise / not clustered) with dense ids
// 0..num_clusters-1 and member lists in ascending point order.
struct ClusterSet {
    std::vector<int> assignment;
    std::vector<std::vector<int>> members;

    int num_clusters() const { return static_cast<int>(members.size()); }
    std::size_t num_points() const { return assignment.size(); }

    // Rebuilds member lists from an assignment vector whose ids are dense.
    static ClusterSet from_assignment(std::vector<int> assignment);
};

// Density-based clustering over a uniform hash grid with cell = eps.
// Core points have >= min_pts points (self included) within distance eps;
// expansion visits points in ascending index order, so a border point
// reachable from several clusters joins the one discovered first.
ClusterSet dbscan(std::span<const Eigen::Vector3d> coords, double eps, int min_pts);

// Keeps clusters with at least one Foreground member; ids are recompacted
// preserving relative order.
ClusterSet filter_foreground(const ClusterSet& clusters, std::span<const CoarseLabel> labels);

std::vector<Eigen::Vector3d> cluster_centers(const ClusterSet& clusters, std::span<const Eigen::Vector3d> coords);

// Indices of points eligible for clustering (Foreground or Unlabeled).
std::vector<int> clustering_candidates(std::span<const CoarseLabel> labels);

}  // namespace cseg

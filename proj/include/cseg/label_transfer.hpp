#pragma once

#include "cseg/pointcloud.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace cseg {

enum class CoarseLabel : std::uint8_t { Unlabeled = 0, Background = 1, Foreground = 2, RoadLike = 3 };

const char* to_string(CoarseLabel label);

// Total mapping from fine semantic class ids to coarse buckets.
class ClassMap {
public:
    ClassMap() = default;

    // SemanticKITTI raw ids: vehicles/people -> Foreground,
    // road/parking/sidewalk/other-ground/lane-marking -> RoadLike,
    // structures/nature/poles/signs -> Background, unlabeled/outlier -> Unlabeled.
    static ClassMap semantic_kitti_default();

    // Throws ConfigError if the id is already mapped to a different bucket.
    void set(std::uint32_t fine_id, CoarseLabel label);
    CoarseLabel at(std::uint32_t fine_id) const;  // DataError naming the id if unknown
    bool contains(std::uint32_t fine_id) const { return map_.contains(fine_id); }
    std::size_t size() const { return map_.size(); }

private:
    std::unordered_map<std::uint32_t, CoarseLabel> map_;
};

std::vector<CoarseLabel> coarse_map(std::span<const std::uint32_t> fine_labels, const ClassMap& map);

using CellSize = std::array<double, 3>;

// Sparse per-voxel vote tally.
class VoteGrid {
public:
    explicit VoteGrid(const CellSize& cell);

    void add(const Point5& p, CoarseLabel label);
    // Max-voted label of the voxel containing p; nullopt for empty voxels.
    // Ties resolve Foreground > Background > RoadLike.
    std::optional<CoarseLabel> winner(const Point5& p) const;
    std::array<std::uint32_t, 4> counts(const Point5& p) const;
    std::size_t occupied() const { return votes_.size(); }

private:
    CellSize cell_;
    std::unordered_map<VoxelKey, std::array<std::uint32_t, 4>, VoxelKeyHash> votes_;
};

// Pass 1: non-ground history (no RoadLike allowed) voted in small voxels.
std::vector<CoarseLabel> assign_nonground(std::span<const Point5> current, std::span<const Point5> history,
                                          std::span<const CoarseLabel> history_labels, const CellSize& cell);

// Pass 2: RoadLike history voted in large flat voxels; outputs RoadLike or Unlabeled.
std::vector<CoarseLabel> assign_ground(std::span<const Point5> current_unlabeled, std::span<const Point5> history,
                                       std::span<const CoarseLabel> history_labels, const CellSize& cell);

struct TransferConfig {
    CellSize nonground_cell{0.2, 0.2, 0.2};
    CellSize ground_cell{10.0, 10.0, 0.2};
};

// One past frame with its per-point fine predictions and the pose mapping it
// into the current frame.
struct HistoryPredictions {
    std::span<const Point5> points;
    std::span<const std::uint32_t> fine_labels;
    Pose to_current;
};

std::vector<CoarseLabel> transfer_labels(std::span<const Point5> current, std::span<const HistoryPredictions> history,
                                         const ClassMap& map, const TransferConfig& cfg = {});

}  // namespace cseg

#include "cseg/label_transfer.hpp"

#include "cseg/errors.hpp"

#include <string>

namespace cseg {
namespace {

void check_cell(const CellSize& cell) {
    for (double c : cell) {
        if (!(c > 0.0)) throw ConfigError("label transfer voxel dimensions must be positive");
    }
}

void check_aligned(std::size_t points, std::size_t labels) {
    if (points != labels) {
        throw DataError("history has " + std::to_string(points) + " points but " + std::to_string(labels) + " labels");
    }
}

std::size_t slot(CoarseLabel l) { return static_cast<std::size_t>(l); }

}  // namespace

const char* to_string(CoarseLabel label) {
    switch (label) {
        case CoarseLabel::Unlabeled: return "unlabeled";
        case CoarseLabel::Background: return "background";
        case CoarseLabel::Foreground: return "foreground";
        case CoarseLabel::RoadLike: return "road-like";
    }
    return "?";
}

ClassMap ClassMap::semantic_kitti_default() {
    ClassMap m;
    for (std::uint32_t id : {0u, 1u}) m.set(id, CoarseLabel::Unlabeled);
    for (std::uint32_t id : {10u, 11u, 13u, 15u, 16u, 18u, 20u, 30u, 31u, 32u, 252u, 253u, 254u, 255u, 256u, 257u,
                             258u, 259u}) {
        m.set(id, CoarseLabel::Foreground);
    }
    for (std::uint32_t id : {40u, 44u, 48u, 49u, 60u}) m.set(id, CoarseLabel::RoadLike);
    for (std::uint32_t id : {50u, 51u, 52u, 70u, 71u, 72u, 80u, 81u, 99u}) m.set(id, CoarseLabel::Background);
    return m;
}

void ClassMap::set(std::uint32_t fine_id, CoarseLabel label) {
    auto [it, inserted] = map_.try_emplace(fine_id, label);
    if (!inserted && it->second != label) {
        throw ConfigError("class " + std::to_string(fine_id) + " mapped to both " + to_string(it->second) + " and " +
                          to_string(label));
    }
}

CoarseLabel ClassMap::at(std::uint32_t fine_id) const {
    auto it = map_.find(fine_id);
    if (it == map_.end()) throw DataError("class id " + std::to_string(fine_id) + " is not in the class map");
    return it->second;
}

std::vector<CoarseLabel> coarse_map(std::span<const std::uint32_t> fine_labels, const ClassMap& map) {
    std::vector<CoarseLabel> out;
    out.reserve(fine_labels.size());
    for (std::uint32_t id : fine_labels) out.push_back(map.at(id));
    return out;
}

VoteGrid::VoteGrid(const CellSize& cell) : cell_(cell) { check_cell(cell); }

void VoteGrid::add(const Point5& p, CoarseLabel label) {
    if (label == CoarseLabel::Unlabeled) return;
    votes_[voxel_key(p.x, p.y, p.z, cell_)][slot(label)] += 1;
}

std::array<std::uint32_t, 4> VoteGrid::counts(const Point5& p) const {
    auto it = votes_.find(voxel_key(p.x, p.y, p.z, cell_));
    return it == votes_.end() ? std::array<std::uint32_t, 4>{} : it->second;
}

std::optional<CoarseLabel> VoteGrid::winner(const Point5& p) const {
    auto it = votes_.find(voxel_key(p.x, p.y, p.z, cell_));
    if (it == votes_.end()) return std::nullopt;
    const auto& c = it->second;
    // Priority order doubles as the tie-break: a later label must strictly beat.
    constexpr CoarseLabel kPriority[] = {CoarseLabel::Foreground, CoarseLabel::Background, CoarseLabel::RoadLike};
    std::optional<CoarseLabel> best;
    std::uint32_t best_count = 0;
    for (CoarseLabel l : kPriority) {
        if (c[slot(l)] > best_count) {
            best = l;
            best_count = c[slot(l)];
        }
    }
    return best;
}

std::vector<CoarseLabel> assign_nonground(std::span<const Point5> current, std::span<const Point5> history,
                                          std::span<const CoarseLabel> history_labels, const CellSize& cell) {
    check_aligned(history.size(), history_labels.size());
    VoteGrid grid(cell);
    for (std::size_t i = 0; i < history.size(); ++i) {
        if (history_labels[i] == CoarseLabel::RoadLike) {
            throw DataError("assign_nonground: road-like history point " + std::to_string(i) +
                            " must be excluded by the caller");
        }
        grid.add(history[i], history_labels[i]);
    }
    std::vector<CoarseLabel> out(current.size(), CoarseLabel::Unlabeled);
    for (std::size_t i = 0; i < current.size(); ++i) {
        if (auto w = grid.winner(current[i])) out[i] = *w;
    }
    return out;
}

std::vector<CoarseLabel> assign_ground(std::span<const Point5> current_unlabeled, std::span<const Point5> history,
                                       std::span<const CoarseLabel> history_labels, const CellSize& cell) {
    check_aligned(history.size(), history_labels.size());
    VoteGrid grid(cell);
    for (std::size_t i = 0; i < history.size(); ++i) {
        if (history_labels[i] != CoarseLabel::RoadLike) {
            throw DataError("assign_ground: history point " + std::to_string(i) + " is not road-like");
        }
        grid.add(history[i], history_labels[i]);
    }
    std::vector<CoarseLabel> out(current_unlabeled.size(), CoarseLabel::Unlabeled);
    for (std::size_t i = 0; i < current_unlabeled.size(); ++i) {
        if (grid.winner(current_unlabeled[i])) out[i] = CoarseLabel::RoadLike;
    }
    return out;
}

std::vector<CoarseLabel> transfer_labels(std::span<const Point5> current, std::span<const HistoryPredictions> history,
                                         const ClassMap& map, const TransferConfig& cfg) {
    check_cell(cfg.nonground_cell);
    check_cell(cfg.ground_cell);
    if (history.empty()) throw UsageError("transfer_labels needs at least one historical frame");

    std::vector<Point5> nonground;
    std::vector<CoarseLabel> nonground_labels;
    std::vector<Point5> ground;
    std::vector<CoarseLabel> ground_labels;
    for (const auto& h : history) {
        check_aligned(h.points.size(), h.fine_labels.size());
        const auto coarse = coarse_map(h.fine_labels, map);
        const auto moved = transform_points(h.points, h.to_current);
        for (std::size_t i = 0; i < moved.size(); ++i) {
            if (coarse[i] == CoarseLabel::RoadLike) {
                ground.push_back(moved[i]);
                ground_labels.push_back(coarse[i]);
            } else {
                nonground.push_back(moved[i]);
                nonground_labels.push_back(coarse[i]);
            }
        }
    }

    auto labels = assign_nonground(current, nonground, nonground_labels, cfg.nonground_cell);

    std::vector<std::size_t> pending;
    std::vector<Point5> pending_pts;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == CoarseLabel::Unlabeled) {
            pending.push_back(i);
            pending_pts.push_back(current[i]);
        }
    }
    if (!pending.empty() && !ground.empty()) {
        const auto road = assign_ground(pending_pts, ground, ground_labels, cfg.ground_cell);
        for (std::size_t j = 0; j < pending.size(); ++j) labels[pending[j]] = road[j];
    }
    return labels;
}

}  // namespace cseg

#include "cseg/pointcloud.hpp"

#include "cseg/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>
#include <string>
#include <unordered_map>

namespace cseg {

Point5 Point5::make(double x, double y, double z, double intensity) {
    return Point5{x, y, z, intensity, std::sqrt(x * x + y * y + z * z)};
}

bool Point5::finite() const {
    return std::isfinite(x) && std::isfinite(y) && std::isfinite(z) && std::isfinite(intensity);
}

bool Pose::is_valid(const Eigen::Matrix4d& m, double tol) {
    if (!m.allFinite()) return false;
    if (std::abs(m(3, 0)) > tol || std::abs(m(3, 1)) > tol || std::abs(m(3, 2)) > tol ||
        std::abs(m(3, 3) - 1.0) > tol) {
        return false;
    }
    const Eigen::Matrix3d r = m.topLeftCorner<3, 3>();
    const double ortho = (r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
    return ortho <= tol && std::abs(r.determinant() - 1.0) <= tol;
}

Pose Pose::from_matrix(const Eigen::Matrix4d& m) {
    if (!is_valid(m)) throw DataError("pose is not a rigid transform (rotation not orthonormal or bad last row)");
    Pose p;
    p.m_ = m;
    p.m_.row(3) << 0.0, 0.0, 0.0, 1.0;
    return p;
}

Pose Pose::from_rt(const Eigen::Matrix3d& r, const Eigen::Vector3d& t) {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = r;
    m.topRightCorner<3, 1>() = t;
    return from_matrix(m);
}

Pose Pose::translation(double x, double y, double z) {
    Pose p;
    p.m_(0, 3) = x;
    p.m_(1, 3) = y;
    p.m_(2, 3) = z;
    return p;
}

Pose Pose::rotation_z(double radians) {
    Pose p;
    const double c = std::cos(radians);
    const double s = std::sin(radians);
    p.m_(0, 0) = c;
    p.m_(0, 1) = -s;
    p.m_(1, 0) = s;
    p.m_(1, 1) = c;
    return p;
}

Pose Pose::inverse() const {
    Pose p;
    const Eigen::Matrix3d rt = rotation().transpose();
    p.m_.topLeftCorner<3, 3>() = rt;
    p.m_.topRightCorner<3, 1>() = -rt * translation();
    return p;
}

Pose Pose::operator*(const Pose& other) const {
    Pose p;
    p.m_ = m_ * other.m_;
    p.m_.row(3) << 0.0, 0.0, 0.0, 1.0;
    return p;
}

std::vector<Point5> transform_points(std::span<const Point5> points, const Pose& pose) {
    const Eigen::Matrix3d r = pose.rotation();
    const Eigen::Vector3d t = pose.translation();
    std::vector<Point5> out;
    out.reserve(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
        const Point5& p = points[i];
        if (!p.finite()) throw DataError("non-finite coordinate at point " + std::to_string(i));
        const Eigen::Vector3d q = r * p.xyz() + t;
        out.push_back(Point5::make(q.x(), q.y(), q.z(), p.intensity));
    }
    return out;
}

StackedCloud stack_scans(std::span<const Scan> scans, std::span<const Pose> poses, int t) {
    if (scans.size() != poses.size()) {
        throw ConfigError("stack_scans: " + std::to_string(scans.size()) + " scans but " +
                          std::to_string(poses.size()) + " poses");
    }
    StackedCloud out;
    std::size_t total = 0;
    for (const Scan& s : scans) total += s.points.size();
    out.points.reserve(total);
    out.source_offset.reserve(total);
    out.source_index.reserve(total);
    for (std::size_t i = 0; i < scans.size(); ++i) {
        const int offset = t - scans[i].frame_index;
        if (offset < 0) throw ConfigError("stack_scans: scan frame is newer than the target frame");
        auto moved = transform_points(scans[i].points, poses[i]);
        for (std::size_t j = 0; j < moved.size(); ++j) {
            out.points.push_back(moved[j]);
            out.source_offset.push_back(offset);
            out.source_index.push_back(static_cast<std::int64_t>(j));
        }
    }
    return out;
}

std::size_t VoxelKeyHash::operator()(const VoxelKey& k) const noexcept {
    // Large odd multipliers; collisions only cost a bucket probe.
    std::uint64_t h = static_cast<std::uint64_t>(k.x) * 73856093ULL;
    h ^= static_cast<std::uint64_t>(k.y) * 19349663ULL + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    h ^= static_cast<std::uint64_t>(k.z) * 83492791ULL + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    return static_cast<std::size_t>(h);
}

VoxelKey voxel_key(double x, double y, double z, const std::array<double, 3>& cell) {
    return {static_cast<std::int64_t>(std::floor(x / cell[0])), static_cast<std::int64_t>(std::floor(y / cell[1])),
            static_cast<std::int64_t>(std::floor(z / cell[2]))};
}

Downsampled voxel_downsample_with_map(const StackedCloud& cloud, double cell) {
    if (!(cell > 0.0)) throw ConfigError("voxel_downsample: cell size must be positive");
    const std::array<double, 3> dims{cell, cell, cell};
    std::unordered_map<VoxelKey, std::int64_t, VoxelKeyHash> first;
    first.reserve(cloud.size());
    Downsampled out;
    out.voxel_of.resize(cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const Point5& p = cloud.points[i];
        const auto key = voxel_key(p.x, p.y, p.z, dims);
        auto [it, inserted] = first.try_emplace(key, static_cast<std::int64_t>(out.kept.size()));
        if (inserted) out.kept.push_back(static_cast<std::int64_t>(i));
        out.voxel_of[i] = it->second;
    }
    out.cloud.points.reserve(out.kept.size());
    for (std::int64_t i : out.kept) {
        out.cloud.points.push_back(cloud.points[i]);
        out.cloud.source_offset.push_back(cloud.source_offset[i]);
        out.cloud.source_index.push_back(cloud.source_index[i]);
    }
    return out;
}

StackedCloud voxel_downsample(const StackedCloud& cloud, double cell) {
    return voxel_downsample_with_map(cloud, cell).cloud;
}

std::vector<Eigen::Vector3d> coordinates(std::span<const Point5> points) {
    std::vector<Eigen::Vector3d> out;
    out.reserve(points.size());
    for (const auto& p : points) out.push_back(p.xyz());
    return out;
}

// ---------------------------------------------------------------------------
// KdTree

namespace {

constexpr int kLeafSize = 12;

struct Candidate {
    double d2;
    int index;
    bool operator<(const Candidate& o) const { return d2 < o.d2 || (d2 == o.d2 && index < o.index); }
};

}  // namespace

KdTree::KdTree(std::vector<Eigen::Vector3d> points) : pts_(std::move(points)) {
    order_.resize(pts_.size());
    std::iota(order_.begin(), order_.end(), 0);
    if (!pts_.empty()) build(0, static_cast<int>(pts_.size()), 0);
}

int KdTree::build(int begin, int end, int depth) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{begin, end});
    if (end - begin <= kLeafSize) return id;

    Eigen::Vector3d lo = pts_[order_[begin]];
    Eigen::Vector3d hi = lo;
    for (int i = begin; i < end; ++i) {
        lo = lo.cwiseMin(pts_[order_[i]]);
        hi = hi.cwiseMax(pts_[order_[i]]);
    }
    int axis = 0;
    (hi - lo).maxCoeff(&axis);
    (void)depth;
    const int mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](int a, int b) { return pts_[a][axis] < pts_[b][axis]; });
    const double split = pts_[order_[mid]][axis];
    const int left = build(begin, mid, depth + 1);
    const int right = build(mid, end, depth + 1);
    nodes_[id].axis = axis;
    nodes_[id].split = split;
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
}

std::vector<int> KdTree::knn(const Eigen::Vector3d& query, int k) const {
    if (k < 1 || pts_.empty()) return {};
    k = std::min<int>(k, static_cast<int>(pts_.size()));
    std::priority_queue<Candidate> heap;  // max-heap on (d2, index)

    std::function<void(int)> visit = [&](int id) {
        const Node& n = nodes_[id];
        if (n.axis < 0) {
            for (int i = n.begin; i < n.end; ++i) {
                const int idx = order_[i];
                const Candidate c{(pts_[idx] - query).squaredNorm(), idx};
                if (static_cast<int>(heap.size()) < k) {
                    heap.push(c);
                } else if (c < heap.top()) {
                    heap.pop();
                    heap.push(c);
                }
            }
            return;
        }
        const double diff = query[n.axis] - n.split;
        const int near = diff < 0.0 ? n.left : n.right;
        const int far = diff < 0.0 ? n.right : n.left;
        visit(near);
        // Equal distances must still be explored so index tie-breaks stay exact.
        if (static_cast<int>(heap.size()) < k || diff * diff <= heap.top().d2) visit(far);
    };
    visit(0);

    std::vector<int> out(heap.size());
    for (int i = static_cast<int>(heap.size()) - 1; i >= 0; --i) {
        out[i] = heap.top().index;
        heap.pop();
    }
    return out;
}

std::vector<int> knn_bruteforce(std::span<const Eigen::Vector3d> points, const Eigen::Vector3d& query, int k) {
    std::vector<Candidate> all;
    all.reserve(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
        all.push_back({(points[i] - query).squaredNorm(), static_cast<int>(i)});
    }
    std::sort(all.begin(), all.end());
    const std::size_t n = std::min<std::size_t>(all.size(), k < 0 ? 0 : static_cast<std::size_t>(k));
    std::vector<int> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = all[i].index;
    return out;
}

}  // namespace cseg

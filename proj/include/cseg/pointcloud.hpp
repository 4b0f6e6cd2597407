#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace cseg {

// A LiDAR return: position (m), reflectance in [0,1], and the distance from
// the origin of the frame the point is expressed in.
struct Point5 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;
    double intensity = 0.0;
    double range = 0.0;

    static Point5 make(double x, double y, double z, double intensity);

    Eigen::Vector3d xyz() const { return {x, y, z}; }
    bool finite() const;
};

// Rigid transform stored as a 4x4 homogeneous matrix.
class Pose {
public:
    Pose() : m_(Eigen::Matrix4d::Identity()) {}

    // Throws DataError unless the rotation block is orthonormal with det +1
    // (within 1e-6) and the last row is (0,0,0,1).
    static Pose from_matrix(const Eigen::Matrix4d& m);
    static Pose from_rt(const Eigen::Matrix3d& r, const Eigen::Vector3d& t);
    static Pose identity() { return Pose(); }
    static Pose translation(double x, double y, double z);
    static Pose rotation_z(double radians);

    const Eigen::Matrix4d& matrix() const { return m_; }
    Eigen::Matrix3d rotation() const { return m_.topLeftCorner<3, 3>(); }
    Eigen::Vector3d translation() const { return m_.topRightCorner<3, 1>(); }

    Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return rotation() * p + translation(); }
    Pose inverse() const;
    Pose operator*(const Pose& other) const;

    static bool is_valid(const Eigen::Matrix4d& m, double tol = 1e-6);

private:
    Eigen::Matrix4d m_;
};

struct Scan {
    int frame_index = 0;
    std::vector<Point5> points;
};

// Current scan plus pose-aligned history, all in frame-t coordinates.
// source_offset is t - frame_index of the scan a point came from (0 = current);
// source_index is the point's index inside that scan.
struct StackedCloud {
    std::vector<Point5> points;
    std::vector<int> source_offset;
    std::vector<std::int64_t> source_index;

    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }
};

std::vector<Point5> transform_points(std::span<const Point5> points, const Pose& pose);

// poses[i] maps scans[i] into frame t. Scans are ordered oldest to current.
StackedCloud stack_scans(std::span<const Scan> scans, std::span<const Pose> poses, int t);

struct VoxelKey {
    std::int64_t x = 0;
    std::int64_t y = 0;
    std::int64_t z = 0;
    bool operator==(const VoxelKey&) const = default;
};

struct VoxelKeyHash {
    std::size_t operator()(const VoxelKey& k) const noexcept;
};

VoxelKey voxel_key(double x, double y, double z, const std::array<double, 3>& cell);

struct Downsampled {
    StackedCloud cloud;
    std::vector<std::int64_t> kept;      // input index of every surviving point
    std::vector<std::int64_t> voxel_of;  // input index -> surviving (output) index
};

// Keeps the first point (in input order) of every occupied cubic voxel.
StackedCloud voxel_downsample(const StackedCloud& cloud, double cell);
Downsampled voxel_downsample_with_map(const StackedCloud& cloud, double cell);

// Exact k-nearest-neighbour search. Results are ordered by (squared distance,
// index) so equal distances resolve to the smaller index.
class KdTree {
public:
    explicit KdTree(std::vector<Eigen::Vector3d> points);

    std::vector<int> knn(const Eigen::Vector3d& query, int k) const;
    std::size_t size() const { return pts_.size(); }

private:
    struct Node {
        int begin = 0;
        int end = 0;
        int axis = -1;  // -1 marks a leaf
        double split = 0.0;
        int left = -1;
        int right = -1;
    };

    int build(int begin, int end, int depth);

    std::vector<Eigen::Vector3d> pts_;
    std::vector<int> order_;
    std::vector<Node> nodes_;
};

// Brute-force reference used by tests and tiny inputs.
std::vector<int> knn_bruteforce(std::span<const Eigen::Vector3d> points, const Eigen::Vector3d& query, int k);

std::vector<Eigen::Vector3d> coordinates(std::span<const Point5> points);

}  // namespace cseg

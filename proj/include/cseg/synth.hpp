#pragma once

#include "cseg/pointcloud.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace cseg {

// Fine classes of the synthetic roster, as SemanticKITTI raw ids, in
// training-index order.
struct SemanticClass {
    std::uint32_t raw;
    const char* name;
    double intensity;  // mean reflectance of the class
};
inline constexpr std::array<SemanticClass, 6> kSemanticClasses = {{
    {40, "road", 0.15},
    {50, "building", 0.55},
    {70, "vegetation", 0.35},
    {10, "car", 0.80},
    {18, "truck", 0.80},
    {30, "person", 0.62},
}};
inline constexpr int kNumSemantic = static_cast<int>(kSemanticClasses.size());
inline constexpr int kNumMotion = 2;  // 0 static, 1 moving

int train_index(std::uint32_t raw);  // -1 if not in the roster
std::uint32_t raw_class(int train_index);
std::vector<std::string> semantic_names();

struct SceneObject {
    enum class Shape { Box, Sphere };
    Shape shape = Shape::Box;
    std::uint32_t raw_class = 50;
    Eigen::Vector3d center{0, 0, 0};  // world frame at frame 0
    Eigen::Vector3d size{1, 1, 1};    // box length/width/height; sphere uses size.x() as radius
    double yaw = 0.0;
    Eigen::Vector3d velocity{0, 0, 0};  // m/frame
    int instance = -1;                  // >= 0 for countable objects
};

struct SceneConfig {
    std::uint64_t seed = 1;
    int frames = 40;
    int beams = 12;
    int azimuths = 300;
    double elevation_min_deg = -22.0;
    double elevation_max_deg = 2.0;
    double sensor_height = 1.7;
    double max_range = 40.0;
    double noise_sigma = 0.02;
    double intensity_sigma = 0.03;
    double ego_speed = 0.5;      // m/frame along the heading
    double ego_yaw_rate = 0.004;  // rad/frame
    double ego_lateral = 0.0;    // start y of the ego path
    std::array<double, 4> extent{-60.0, 110.0, -40.0, 40.0};  // xmin xmax ymin ymax
    std::vector<SceneObject> objects;
};

// Seeded roster: buildings and vegetation along both sides of a road, parked
// and moving cars, trucks and walking or standing people.
SceneConfig default_scene(std::uint64_t seed, int frames = 40);
// Scene around a long truck partly hidden behind parked cars and a tree.
SceneConfig truncation_scene(std::uint64_t seed, int frames = 12);

struct LabeledFrame {
    Scan scan;                            // sensor frame
    std::vector<std::uint32_t> semantic;  // raw class ids
    std::vector<std::uint32_t> motion;    // 0 static, 1 moving
    std::vector<std::int32_t> instance;   // -1 for stuff classes
    Pose pose;                            // sensor to world
};

// Deterministic per seed. Coordinates and intensity are float32-representable
// so a write/read round trip is exact. Objects leaving the extent throw ConfigError.
std::vector<LabeledFrame> generate_sequence(const SceneConfig& cfg);

// velodyne/NNNNNN.bin, labels/NNNNNN.label, instances/NNNNNN.inst, poses.txt.
void write_dataset(std::span<const LabeledFrame> frames, const std::filesystem::path& dir);
std::vector<LabeledFrame> read_dataset(const std::filesystem::path& dir);

}  // namespace cseg

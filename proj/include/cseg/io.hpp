#pragma once

#include "cseg/pointcloud.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace cseg::io {

// KITTI-style binary scan: little-endian float32 (x, y, z, intensity) quadruples.
std::vector<Point5> read_scan(const std::filesystem::path& path);
void write_scan(const std::filesystem::path& path, std::span<const Point5> points);

// Label words: low 16 bits semantic class, high 16 bits motion (or an ignored
// instance-compatible field on ground-truth files from other sources).
std::vector<std::uint32_t> read_labels(const std::filesystem::path& path);
void write_labels(const std::filesystem::path& path, std::span<const std::uint32_t> labels);

constexpr std::uint32_t pack_label(std::uint32_t semantic, std::uint32_t motion) {
    return (semantic & 0xFFFFu) | ((motion & 0xFFFFu) << 16);
}
constexpr std::uint32_t semantic_of(std::uint32_t word) { return word & 0xFFFFu; }
constexpr std::uint32_t motion_of(std::uint32_t word) { return word >> 16; }

// Little-endian int32 per point (instance ids, cluster ids; -1 = none).
std::vector<std::int32_t> read_int32(const std::filesystem::path& path);
void write_int32(const std::filesystem::path& path, std::span<const std::int32_t> values);

// Text poses: one line per frame, 12 floats = top three rows of the 4x4, row-major.
std::vector<Pose> read_poses(const std::filesystem::path& path);
void write_poses(const std::filesystem::path& path, std::span<const Pose> poses);

}  // namespace cseg::io

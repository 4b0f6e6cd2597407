#include "cseg/io.hpp"

#include "cseg/errors.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

namespace cseg::io {
namespace {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

std::vector<char> slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    in.seekg(0, std::ios::end);
    const auto size = static_cast<std::size_t>(in.tellg());
    in.seekg(0);
    std::vector<char> bytes(size);
    if (size > 0 && !in.read(bytes.data(), static_cast<std::streamsize>(size))) {
        throw DataError("short read on " + path.string());
    }
    return bytes;
}

void dump(const std::filesystem::path& path, const void* data, std::size_t bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
    if (!out) throw DataError("write failed on " + path.string());
}

template <typename T>
std::vector<T> read_words(const std::filesystem::path& path, std::size_t words_per_record) {
    const auto bytes = slurp(path);
    const std::size_t record = sizeof(T) * words_per_record;
    if (bytes.size() % record != 0) {
        throw DataError("malformed file " + path.string() + ": trailing " + std::to_string(bytes.size() % record) +
                        " bytes at offset " + std::to_string(bytes.size() - bytes.size() % record));
    }
    std::vector<T> out(bytes.size() / sizeof(T));
    if (!out.empty()) std::memcpy(out.data(), bytes.data(), bytes.size());
    return out;
}

}  // namespace

std::vector<Point5> read_scan(const std::filesystem::path& path) {
    const auto raw = read_words<float>(path, 4);
    std::vector<Point5> pts;
    pts.reserve(raw.size() / 4);
    for (std::size_t i = 0; i < raw.size(); i += 4) {
        Point5 p = Point5::make(raw[i], raw[i + 1], raw[i + 2], raw[i + 3]);
        if (!p.finite()) {
            throw DataError("non-finite value in " + path.string() + " at byte offset " + std::to_string(i * 4));
        }
        pts.push_back(p);
    }
    return pts;
}

void write_scan(const std::filesystem::path& path, std::span<const Point5> points) {
    std::vector<float> raw;
    raw.reserve(points.size() * 4);
    for (const auto& p : points) {
        raw.push_back(static_cast<float>(p.x));
        raw.push_back(static_cast<float>(p.y));
        raw.push_back(static_cast<float>(p.z));
        raw.push_back(static_cast<float>(p.intensity));
    }
    dump(path, raw.data(), raw.size() * sizeof(float));
}

std::vector<std::uint32_t> read_labels(const std::filesystem::path& path) {
    return read_words<std::uint32_t>(path, 1);
}

void write_labels(const std::filesystem::path& path, std::span<const std::uint32_t> labels) {
    dump(path, labels.data(), labels.size_bytes());
}

std::vector<std::int32_t> read_int32(const std::filesystem::path& path) { return read_words<std::int32_t>(path, 1); }

void write_int32(const std::filesystem::path& path, std::span<const std::int32_t> values) {
    dump(path, values.data(), values.size_bytes());
}

std::vector<Pose> read_poses(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    std::vector<Pose> poses;
    std::string line;
    std::size_t offset = 0;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::size_t line_offset = offset;
        offset += line.size() + 1;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::istringstream fields(line);
        Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
        for (int k = 0; k < 12; ++k) {
            if (!(fields >> m(k / 4, k % 4))) {
                throw DataError("malformed pose file " + path.string() + " line " + std::to_string(line_no) +
                                " (byte offset " + std::to_string(line_offset) + "): expected 12 floats");
            }
        }
        std::string extra;
        if (fields >> extra) {
            throw DataError("malformed pose file " + path.string() + " line " + std::to_string(line_no) +
                            " (byte offset " + std::to_string(line_offset) + "): more than 12 values");
        }
        try {
            poses.push_back(Pose::from_matrix(m));
        } catch (const DataError& e) {
            throw DataError(path.string() + " line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return poses;
}

void write_poses(const std::filesystem::path& path, std::span<const Pose> poses) {
    std::ostringstream out;
    char buf[64];
    for (const Pose& p : poses) {
        for (int k = 0; k < 12; ++k) {
            std::snprintf(buf, sizeof(buf), "%.17g", p.matrix()(k / 4, k % 4));
            out << buf << (k == 11 ? '\n' : ' ');
        }
    }
    const std::string text = out.str();
    dump(path, text.data(), text.size());
}

}  // namespace cseg::io

#include "cseg/synth.hpp"

#include "cseg/errors.hpp"
#include "cseg/io.hpp"
#include "cseg/params.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>

namespace cseg {

int train_index(std::uint32_t raw) {
    for (int i = 0; i < kNumSemantic; ++i) {
        if (kSemanticClasses[i].raw == raw) return i;
    }
    return -1;
}

std::uint32_t raw_class(int idx) {
    if (idx < 0 || idx >= kNumSemantic) throw DataError("class index " + std::to_string(idx) + " outside roster");
    return kSemanticClasses[idx].raw;
}

std::vector<std::string> semantic_names() {
    std::vector<std::string> out;
    for (const auto& c : kSemanticClasses) out.emplace_back(c.name);
    return out;
}

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

SceneObject box(std::uint32_t cls, double x, double y, double l, double w, double h, double yaw = 0.0) {
    SceneObject o;
    o.raw_class = cls;
    // Vehicle bodies float above the road (no wheels modelled).
    const double lift = cls == 10 ? 0.3 : cls == 18 ? 0.45 : 0.0;
    o.center = {x, y, (h + lift) / 2.0};
    o.size = {l, w, h - lift};
    o.yaw = yaw;
    return o;
}

SceneObject sphere(std::uint32_t cls, double x, double y, double z, double r) {
    SceneObject o;
    o.shape = SceneObject::Shape::Sphere;
    o.raw_class = cls;
    o.center = {x, y, z};
    o.size = {r, r, r};
    return o;
}

void add_static_world(SceneConfig& cfg, Rng& rng) {
    for (int side : {-1, 1}) {
        double x = cfg.extent[0] + 5.0;
        while (x < cfg.extent[1] - 15.0) {
            const double l = rng.uniform(8.0, 15.0);
            const double w = rng.uniform(6.0, 10.0);
            const double h = rng.uniform(6.0, 12.0);
            const double y = side * (rng.uniform(14.0, 16.0) + w / 2.0);
            cfg.objects.push_back(box(50, x + l / 2.0, y, l, w, h));
            x += l + rng.uniform(3.0, 8.0);
        }
        x = cfg.extent[0] + 8.0;
        while (x < cfg.extent[1] - 10.0) {
            const double r = rng.uniform(1.0, 1.8);
            cfg.objects.push_back(sphere(70, x, side * rng.uniform(11.0, 12.5), rng.uniform(2.5, 3.5), r));
            x += rng.uniform(7.0, 14.0);
        }
    }
}

int next_instance(const SceneConfig& cfg) {
    int id = 0;
    for (const auto& o : cfg.objects) id = std::max(id, o.instance + 1);
    return id;
}

void add_agent(SceneConfig& cfg, SceneObject o, double vx) {
    o.velocity = {vx, 0.0, 0.0};
    o.instance = next_instance(cfg);
    cfg.objects.push_back(o);
}

}  // namespace

namespace {

// Shared street layout. truck_len overrides every truck's length when positive.
SceneConfig street_scene(std::uint64_t seed, int frames, std::uint64_t salt, double truck_len, int pedestrians) {
    SceneConfig cfg;
    cfg.seed = seed;
    cfg.frames = frames;
    Rng rng(seed * 0x9e3779b97f4a7c15ULL + salt);
    add_static_world(cfg, rng);
    auto length = [&](double lo, double hi) {
        const double l = rng.uniform(lo, hi);
        return truck_len > 0.0 ? truck_len : l;
    };

    // Parked cars and trucks along both kerbs.
    for (int side : {-1, 1}) {
        double x = rng.uniform(-25.0, -15.0);
        for (int i = 0; i < 5; ++i) {
            const bool truck = i == 2;
            const double l = truck ? length(8.0, 12.0) : rng.uniform(3.8, 4.6);
            const SceneObject o = truck ? box(18, x + l / 2.0, side * rng.uniform(6.6, 7.0), l, 2.5, rng.uniform(3.0, 3.6))
                                        : box(10, x + l / 2.0, side * rng.uniform(6.0, 6.6), l, 1.8, rng.uniform(1.4, 1.6));
            add_agent(cfg, o, 0.0);
            x += l + rng.uniform(4.0, 10.0);
        }
    }

    // Moving traffic: one lane in each direction, speed shared per lane, spaced
    // so that vehicles pass the sensor throughout the sequence.
    const double v_east = rng.uniform(0.8, 1.2);
    const double v_west = -rng.uniform(0.8, 1.2);
    double x = rng.uniform(20.0, 28.0);
    for (int i = 0; i < 5; ++i) {
        const bool truck = i % 2 == 1;
        const double l = truck ? length(9.0, 12.0) : rng.uniform(3.8, 4.6);
        add_agent(cfg, truck ? box(18, x, -2.0, l, 2.5, rng.uniform(3.0, 3.6)) : box(10, x, -2.0, l, 1.8, 1.5), v_east);
        x -= l + rng.uniform(5.0, 10.0);
    }
    x = rng.uniform(10.0, 18.0);
    for (int i = 0; i < 5; ++i) {
        const bool truck = i % 2 == 1;
        const double l = truck ? length(9.0, 12.0) : rng.uniform(3.8, 4.6);
        add_agent(cfg, truck ? box(18, x, 2.5, l, 2.5, rng.uniform(3.0, 3.6)) : box(10, x, 2.5, l, 1.8, 1.5), v_west);
        x += l + rng.uniform(8.0, 14.0);
    }

    // People on the pavements: some walking, some standing.
    for (int i = 0; i < pedestrians; ++i) {
        const int side = (i % 2 == 0) ? -1 : 1;
        const double v = (i % 4 < 2) ? rng.uniform(0.3, 0.6) * (rng.uniform() < 0.5 ? -1.0 : 1.0) : 0.0;
        add_agent(cfg, box(30, rng.uniform(-15.0, 35.0), side * rng.uniform(9.3, 10.0), 0.6, 0.6, 1.8), v);
    }
    return cfg;
}

}  // namespace

SceneConfig default_scene(std::uint64_t seed, int frames) { return street_scene(seed, frames, 17, 0.0, 24); }

// Same street, but every truck is 16 m long, so passing traffic and the scan
// pattern cut it into several pieces; fewer pedestrians keep the focus on vehicles.
SceneConfig truncation_scene(std::uint64_t seed, int frames) {
    SceneConfig cfg = street_scene(seed, frames, 5, 16.0, 8);
    cfg.extent[0] = -100.0;
    cfg.extent[1] = 130.0;
    return cfg;
}

namespace {

struct Hit {
    double t = std::numeric_limits<double>::infinity();
    int object = -1;  // -1 ground
};

// Slab test in the box's local frame.
double ray_box(const Eigen::Vector3d& o, const Eigen::Vector3d& d, const Eigen::Vector3d& c, const Eigen::Vector3d& size,
               double yaw) {
    const double cy = std::cos(yaw), sy = std::sin(yaw);
    const Eigen::Vector3d rel = o - c;
    const Eigen::Vector3d lo(cy * rel.x() + sy * rel.y(), -sy * rel.x() + cy * rel.y(), rel.z());
    const Eigen::Vector3d ld(cy * d.x() + sy * d.y(), -sy * d.x() + cy * d.y(), d.z());
    double tmin = 0.0, tmax = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) {
        const double half = size[a] / 2.0;
        if (std::abs(ld[a]) < 1e-12) {
            if (std::abs(lo[a]) > half) return -1.0;
            continue;
        }
        double t1 = (-half - lo[a]) / ld[a];
        double t2 = (half - lo[a]) / ld[a];
        if (t1 > t2) std::swap(t1, t2);
        tmin = std::max(tmin, t1);
        tmax = std::min(tmax, t2);
        if (tmin > tmax) return -1.0;
    }
    return tmin > 0.0 ? tmin : -1.0;
}

double ray_sphere(const Eigen::Vector3d& o, const Eigen::Vector3d& d, const Eigen::Vector3d& c, double r) {
    const Eigen::Vector3d oc = o - c;
    const double b = oc.dot(d);
    const double disc = b * b - (oc.squaredNorm() - r * r);
    if (disc < 0.0) return -1.0;
    const double t = -b - std::sqrt(disc);
    return t > 0.0 ? t : -1.0;
}

float f32(double v) { return static_cast<float>(v); }

void check_extent(const SceneConfig& cfg) {
    for (std::size_t i = 0; i < cfg.objects.size(); ++i) {
        const auto& o = cfg.objects[i];
        if (!o.velocity.allFinite()) throw ConfigError("object " + std::to_string(i) + " has a non-finite velocity");
        for (int f : {0, cfg.frames - 1}) {
            const Eigen::Vector3d c = o.center + o.velocity * f;
            if (c.x() < cfg.extent[0] || c.x() > cfg.extent[1] || c.y() < cfg.extent[2] || c.y() > cfg.extent[3]) {
                throw ConfigError("object " + std::to_string(i) + " leaves the scene extent by frame " +
                                  std::to_string(f));
            }
        }
    }
}

}  // namespace

std::vector<LabeledFrame> generate_sequence(const SceneConfig& cfg) {
    if (cfg.frames < 1 || cfg.beams < 1 || cfg.azimuths < 1) throw ConfigError("scene needs frames, beams and azimuths >= 1");
    check_extent(cfg);
    Rng rng(cfg.seed);
    std::vector<LabeledFrame> frames;
    double ex = 0.0, ey = cfg.ego_lateral, yaw = 0.0;
    for (int f = 0; f < cfg.frames; ++f) {
        LabeledFrame fr;
        fr.scan.frame_index = f;
        Eigen::Matrix3d r = Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ()).toRotationMatrix();
        fr.pose = Pose::from_rt(r, {ex, ey, cfg.sensor_height});
        const Eigen::Vector3d origin(ex, ey, cfg.sensor_height);

        for (int b = 0; b < cfg.beams; ++b) {
            const double el = (cfg.beams == 1 ? cfg.elevation_min_deg
                                              : cfg.elevation_min_deg + (cfg.elevation_max_deg - cfg.elevation_min_deg) *
                                                                            b / (cfg.beams - 1)) *
                              kDeg;
            for (int a = 0; a < cfg.azimuths; ++a) {
                const double az = 2.0 * std::numbers::pi * a / cfg.azimuths;
                const Eigen::Vector3d local(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
                const Eigen::Vector3d d = r * local;
                Hit hit;
                if (d.z() < -1e-9) hit.t = -origin.z() / d.z();
                for (std::size_t i = 0; i < cfg.objects.size(); ++i) {
                    const auto& o = cfg.objects[i];
                    const Eigen::Vector3d c = o.center + o.velocity * f;
                    const double t = o.shape == SceneObject::Shape::Box ? ray_box(origin, d, c, o.size, o.yaw)
                                                                        : ray_sphere(origin, d, c, o.size.x());
                    if (t > 0.0 && t < hit.t) hit = {t, static_cast<int>(i)};
                }
                // Noise is drawn for every ray so the stream does not depend on hits.
                const double noise = cfg.noise_sigma * rng.normal();
                const double inoise = cfg.intensity_sigma * rng.normal();
                if (!std::isfinite(hit.t) || hit.t > cfg.max_range) continue;
                const Eigen::Vector3d p = local * (hit.t + noise);
                const std::uint32_t cls = hit.object < 0 ? 40u : cfg.objects[hit.object].raw_class;
                const double base = kSemanticClasses[train_index(cls)].intensity;
                fr.scan.points.push_back(Point5::make(f32(p.x()), f32(p.y()), f32(p.z()), f32(std::clamp(base + inoise, 0.0, 1.0))));
                fr.semantic.push_back(cls);
                const bool moving = hit.object >= 0 && cfg.objects[hit.object].velocity.norm() > 0.0;
                fr.motion.push_back(moving ? 1u : 0u);
                fr.instance.push_back(hit.object < 0 ? -1 : cfg.objects[hit.object].instance);
            }
        }
        frames.push_back(std::move(fr));
        ex += cfg.ego_speed * std::cos(yaw);
        ey += cfg.ego_speed * std::sin(yaw);
        yaw += cfg.ego_yaw_rate;
    }
    return frames;
}

namespace {

std::string frame_name(std::size_t i, const char* ext) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%06zu.%s", i, ext);
    return buf;
}

}  // namespace

void write_dataset(std::span<const LabeledFrame> frames, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    for (const char* sub : {"velodyne", "labels", "instances"}) fs::create_directories(dir / sub);
    std::vector<Pose> poses;
    for (std::size_t i = 0; i < frames.size(); ++i) {
        const auto& f = frames[i];
        io::write_scan(dir / "velodyne" / frame_name(i, "bin"), f.scan.points);
        std::vector<std::uint32_t> words(f.semantic.size());
        for (std::size_t p = 0; p < words.size(); ++p) words[p] = io::pack_label(f.semantic[p], f.motion[p]);
        io::write_labels(dir / "labels" / frame_name(i, "label"), words);
        io::write_int32(dir / "instances" / frame_name(i, "inst"), f.instance);
        poses.push_back(f.pose);
    }
    io::write_poses(dir / "poses.txt", poses);
}

std::vector<LabeledFrame> read_dataset(const std::filesystem::path& dir) {
    const auto poses = io::read_poses(dir / "poses.txt");
    std::vector<LabeledFrame> frames;
    for (std::size_t i = 0; i < poses.size(); ++i) {
        LabeledFrame f;
        f.scan.frame_index = static_cast<int>(i);
        f.scan.points = io::read_scan(dir / "velodyne" / frame_name(i, "bin"));
        const auto words = io::read_labels(dir / "labels" / frame_name(i, "label"));
        f.instance = io::read_int32(dir / "instances" / frame_name(i, "inst"));
        if (words.size() != f.scan.points.size() || f.instance.size() != f.scan.points.size()) {
            throw DataError("frame " + std::to_string(i) + ": " + std::to_string(f.scan.points.size()) + " points, " +
                            std::to_string(words.size()) + " labels, " + std::to_string(f.instance.size()) +
                            " instance ids");
        }
        for (auto w : words) {
            f.semantic.push_back(io::semantic_of(w));
            f.motion.push_back(io::motion_of(w));
        }
        f.pose = poses[i];
        frames.push_back(std::move(f));
    }
    return frames;
}

}  // namespace cseg

#include "cseg/errors.hpp"
#include "cseg/io.hpp"
#include "cseg/label_transfer.hpp"
#include "cseg/synth.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace cseg;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("cseg_test_" + name);
    fs::remove_all(p);
    return p;
}

SceneConfig small_scene() {
    SceneConfig cfg;
    cfg.frames = 6;
    cfg.seed = 3;
    cfg.objects.push_back({SceneObject::Shape::Box, 50, {0, 12, 4}, {60, 4, 8}, 0.0, {0, 0, 0}, -1});
    return cfg;
}

}  // namespace

TEST_CASE("class roster") {
    CHECK(kNumSemantic == 6);
    CHECK(kNumMotion == 2);
    for (int i = 0; i < kNumSemantic; ++i) CHECK(train_index(raw_class(i)) == i);
    CHECK(train_index(99) == -1);
    CHECK(semantic_names() == std::vector<std::string>{"road", "building", "vegetation", "car", "truck", "person"});
}

TEST_CASE("static roster has no moving points") {
    auto cfg = small_scene();
    cfg.objects.push_back({SceneObject::Shape::Box, 10, {8, -3, 0.9}, {4.2, 1.8, 1.5}, 0.3, {0, 0, 0}, 0});
    for (const auto& f : generate_sequence(cfg)) {
        REQUIRE(f.motion.size() == f.scan.points.size());
        for (auto m : f.motion) CHECK(m == 0u);
    }
}

TEST_CASE("generation is deterministic per seed") {
    const auto a = generate_sequence(default_scene(5, 4));
    const auto b = generate_sequence(default_scene(5, 4));
    const auto c = generate_sequence(default_scene(6, 4));
    REQUIRE(a.size() == 4);
    bool differs = false;
    for (std::size_t f = 0; f < a.size(); ++f) {
        REQUIRE(a[f].scan.points.size() == b[f].scan.points.size());
        for (std::size_t i = 0; i < a[f].scan.points.size(); ++i) {
            CHECK(a[f].scan.points[i].x == b[f].scan.points[i].x);
            CHECK(a[f].scan.points[i].intensity == b[f].scan.points[i].intensity);
        }
        CHECK(a[f].semantic == b[f].semantic);
        CHECK(a[f].instance == b[f].instance);
        CHECK(a[f].pose.matrix() == b[f].pose.matrix());
        differs |= a[f].scan.points.size() != c[f].scan.points.size();
    }
    CHECK(differs);
}

TEST_CASE("moving box centroid advances by its velocity") {
    // The sensor travels with the box, so every frame sees the same faces and
    // only range noise separates successive centroids.
    SceneConfig cfg;
    cfg.frames = 8;
    cfg.seed = 9;
    cfg.ego_speed = 1.0;
    cfg.ego_yaw_rate = 0.0;
    cfg.objects.push_back({SceneObject::Shape::Box, 10, {9, 2, 0.9}, {4.0, 2.0, 1.6}, 0.0, {1, 0, 0}, 0});
    const auto seq = generate_sequence(cfg);
    std::vector<Eigen::Vector3d> centroid;
    std::size_t n = 0;
    for (const auto& f : seq) {
        Eigen::Vector3d acc = Eigen::Vector3d::Zero();
        std::size_t k = 0;
        for (std::size_t i = 0; i < f.instance.size(); ++i) {
            if (f.instance[i] != 0) continue;
            CHECK(f.motion[i] == 1u);
            acc += f.pose.apply(f.scan.points[i].xyz());
            ++k;
        }
        REQUIRE(k > 50);
        n = k;
        centroid.push_back(acc / static_cast<double>(k));
    }
    // difference of two n-point means: 3 standard deviations
    const double tol = 3.0 * cfg.noise_sigma * std::sqrt(2.0 / static_cast<double>(n));
    for (std::size_t f = 1; f < centroid.size(); ++f) {
        const Eigen::Vector3d d = centroid[f] - centroid[f - 1];
        CHECK(std::abs(d.x() - 1.0) < tol);
        CHECK(std::abs(d.y()) < tol);
        CHECK(std::abs(d.z()) < tol);
    }
}

TEST_CASE("objects leaving the extent are rejected") {
    auto cfg = small_scene();
    cfg.frames = 40;
    cfg.objects.push_back({SceneObject::Shape::Box, 10, {100, 0, 1}, {4, 2, 2}, 0.0, {1, 0, 0}, 0});
    CHECK_THROWS_AS(generate_sequence(cfg), ConfigError);
    cfg.objects.back().velocity = {NAN, 0, 0};
    CHECK_THROWS_AS(generate_sequence(cfg), ConfigError);
}

TEST_CASE("default scenes stay in bounds and carry instance ids") {
    const auto map = ClassMap::semantic_kitti_default();
    for (const auto& cfg : {default_scene(1), truncation_scene(3)}) {
        for (const auto& o : cfg.objects) {
            for (int f : {0, cfg.frames - 1}) {
                const Eigen::Vector3d c = o.center + o.velocity * f;
                CHECK(c.x() >= cfg.extent[0]);
                CHECK(c.x() <= cfg.extent[1]);
            }
            CHECK((o.instance >= 0) == (map.at(o.raw_class) == CoarseLabel::Foreground));
        }
    }
    const auto seq = generate_sequence(default_scene(1, 3));
    for (const auto& f : seq) {
        for (std::size_t i = 0; i < f.semantic.size(); ++i) {
            CHECK(train_index(f.semantic[i]) >= 0);
            CHECK((f.instance[i] >= 0) == (map.at(f.semantic[i]) == CoarseLabel::Foreground));
            if (f.motion[i]) CHECK(f.instance[i] >= 0);
        }
    }
}

TEST_CASE("instance ids are stable across frames") {
    const auto cfg = default_scene(2, 10);
    const auto seq = generate_sequence(cfg);
    for (const auto& f : seq)
        for (std::size_t i = 0; i < f.instance.size(); ++i) {
            if (f.instance[i] < 0) continue;
            // the id names one roster object whose class matches the point
            const auto it = std::find_if(cfg.objects.begin(), cfg.objects.end(), [&](const SceneObject& o) { return o.instance == f.instance[i]; });
            REQUIRE(it != cfg.objects.end());
            CHECK(it->raw_class == f.semantic[i]);
            CHECK(f.motion[i] == (it->velocity.norm() > 0 ? 1u : 0u));
        }
}

TEST_CASE("static structure from every frame lands on one surface") {
    auto cfg = small_scene();
    cfg.frames = 10;
    cfg.ego_yaw_rate = 0.02;
    const auto seq = generate_sequence(cfg);
    std::size_t count = 0, within = 0;
    for (const auto& f : seq) {
        for (std::size_t i = 0; i < f.semantic.size(); ++i) {
            const Eigen::Vector3d w = f.pose.apply(f.scan.points[i].xyz());
            const double off = f.semantic[i] == 50 ? w.y() - 10.0 : w.z();  // wall face y = 10, road z = 0
            ++count;
            within += std::abs(off) < 3.0 * cfg.noise_sigma;
        }
    }
    REQUIRE(count > 1000);
    CHECK(static_cast<double>(within) / count > 0.99);
}

TEST_CASE("dataset round trip") {
    const auto dir = scratch("roundtrip");
    const auto seq = generate_sequence(default_scene(4, 3));
    write_dataset(seq, dir);
    const auto back = read_dataset(dir);
    REQUIRE(back.size() == seq.size());
    for (std::size_t f = 0; f < seq.size(); ++f) {
        REQUIRE(back[f].scan.points.size() == seq[f].scan.points.size());
        for (std::size_t i = 0; i < seq[f].scan.points.size(); ++i) {
            CHECK(back[f].scan.points[i].x == seq[f].scan.points[i].x);
            CHECK(back[f].scan.points[i].z == seq[f].scan.points[i].z);
            CHECK(back[f].scan.points[i].intensity == seq[f].scan.points[i].intensity);
        }
        CHECK(back[f].semantic == seq[f].semantic);
        CHECK(back[f].motion == seq[f].motion);
        CHECK(back[f].instance == seq[f].instance);
        CHECK((back[f].pose.matrix() - seq[f].pose.matrix()).cwiseAbs().maxCoeff() < 1e-12);
        CHECK(Pose::is_valid(back[f].pose.matrix()));
        CHECK(fs::file_size(dir / "labels" / "000000.label") == 4 * seq[0].semantic.size());
    }
    fs::remove_all(dir);
}

TEST_CASE("malformed files") {
    const auto dir = scratch("malformed");
    fs::create_directories(dir);
    {
        std::ofstream(dir / "bad.bin", std::ios::binary) << "0123456789";
    }
    try {
        io::read_scan(dir / "bad.bin");
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("trailing") != std::string::npos);
    }
    {
        std::ofstream(dir / "poses.txt") << "1 0 0 0 0 1 0 0 0 0 1 0\n1 0 0 0 0 1 0\n";
    }
    try {
        io::read_poses(dir / "poses.txt");
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
    {
        std::ofstream(dir / "p2.txt") << "2 0 0 0 0 1 0 0 0 0 1 0\n";
    }
    CHECK_THROWS_AS(io::read_poses(dir / "p2.txt"), DataError);
    CHECK_THROWS_AS(read_dataset(dir / "missing"), DataError);
    const std::vector<std::int32_t> ids{-1, 0, 7, 123456};
    io::write_int32(dir / "ids.inst", ids);
    CHECK(io::read_int32(dir / "ids.inst") == ids);
    CHECK(io::semantic_of(io::pack_label(30, 1)) == 30u);
    CHECK(io::motion_of(io::pack_label(30, 1)) == 1u);
    fs::remove_all(dir);
}

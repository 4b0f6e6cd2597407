#include "cseg/cluster_gen.hpp"
#include "cseg/errors.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <random>

using namespace cseg;
using CL = CoarseLabel;

TEST_CASE("dbscan examples") {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> g(0.0, 0.05);
    std::vector<Eigen::Vector3d> pts;
    for (int b = 0; b < 2; ++b)
        for (int i = 0; i < 20; ++i) pts.emplace_back(10.0 * b + g(rng), g(rng), g(rng));
    auto c = dbscan(pts, 0.5, 3);
    CHECK(c.num_clusters() == 2);
    CHECK(std::count(c.assignment.begin(), c.assignment.end(), -1) == 0);
    CHECK(c.assignment == oracle::dbscan(pts, 0.5, 3).assignment);

    c = dbscan(std::vector<Eigen::Vector3d>{{1, 2, 3}}, 0.5, 1);
    CHECK(c.num_clusters() == 1);
    CHECK(c.members[0] == std::vector<int>{0});

    std::vector<Eigen::Vector3d> lone;
    for (int i = 0; i < 5; ++i) lone.emplace_back(3.0 * i, 0, 0);
    c = dbscan(lone, 1.0, 2);
    CHECK(c.num_clusters() == 0);
    CHECK(c.assignment == std::vector<int>(5, -1));

    CHECK(dbscan(std::vector<Eigen::Vector3d>{}, 0.5, 3).num_clusters() == 0);
    CHECK_THROWS_AS(dbscan(lone, 0.0, 2), ConfigError);
    CHECK_THROWS_AS(dbscan(lone, 1.0, 0), ConfigError);
}

TEST_CASE("dbscan neighbourhood is inclusive") {
    const std::vector<Eigen::Vector3d> pts{{0, 0, 0}, {0.5, 0, 0}};
    CHECK(dbscan(pts, 0.5, 2).num_clusters() == 1);
    CHECK(dbscan(pts, 0.4999, 2).num_clusters() == 0);
}

TEST_CASE("border point joins the first discovered cluster") {
    // cores at 0 and 2 (min_pts 4 with their halos), shared border at 1 with only 3 neighbours
    std::vector<Eigen::Vector3d> pts{{0, 0, 0}, {-0.5, 0, 0}, {-0.5, 0.1, 0}, {1, 0, 0},
                                     {2, 0, 0}, {2.5, 0, 0},  {2.5, 0.1, 0}};
    const auto c = dbscan(pts, 1.0, 4);
    REQUIRE(c.num_clusters() == 2);
    CHECK(c.assignment[3] == c.assignment[0]);
    CHECK(c.assignment == oracle::dbscan(pts, 1.0, 4).assignment);
}

TEST_CASE("dbscan matches the quadratic reference") {
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> eps(0.4, 1.2);
    std::uniform_int_distribution<int> mp(2, 12), n(50, 1500);
    for (int rep = 0; rep < 30; ++rep) {
        const double e = eps(rng);
        const int m = mp(rng);
        // raw points: ambiguous borders allowed, the first-discovered rule decides
        std::vector<Eigen::Vector3d> pts;
        std::uniform_real_distribution<double> box(-6, 6);
        const int count = n(rng);
        for (int i = 0; i < count; ++i) pts.emplace_back(box(rng), box(rng), box(rng) / 4);
        const auto want = oracle::dbscan(pts, e, m);
        const auto got = dbscan(pts, e, m);
        REQUIRE(got.assignment == want.assignment);
    }
}

TEST_CASE("dbscan partition is invariant to input order") {
    std::mt19937_64 rng(5);
    for (int rep = 0; rep < 10; ++rep) {
        const auto pts = oracle::dbscan_fixture(rng, 600, 0.6, 5);
        const auto base = dbscan(pts, 0.6, 5);
        std::vector<int> perm(pts.size());
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        std::vector<Eigen::Vector3d> shuffled;
        for (int i : perm) shuffled.push_back(pts[i]);
        const auto moved = dbscan(shuffled, 0.6, 5);
        std::vector<int> back(pts.size());
        for (std::size_t i = 0; i < perm.size(); ++i) back[perm[i]] = moved.assignment[i];
        CHECK(oracle::partition(back) == oracle::partition(base.assignment));
    }
}

TEST_CASE("cluster set structure") {
    std::mt19937_64 rng(6);
    const auto pts = oracle::dbscan_fixture(rng, 800, 0.7, 4);
    const auto c = dbscan(pts, 0.7, 4);
    for (int k = 0; k < c.num_clusters(); ++k) {
        REQUIRE_FALSE(c.members[k].empty());
        CHECK(std::is_sorted(c.members[k].begin(), c.members[k].end()));
        for (int i : c.members[k]) CHECK(c.assignment[i] == k);
    }
    std::size_t listed = 0;
    for (const auto& m : c.members) listed += m.size();
    CHECK(listed == static_cast<std::size_t>(std::count_if(c.assignment.begin(), c.assignment.end(), [](int a) { return a >= 0; })));
}

TEST_CASE("filter_foreground") {
    const ClusterSet c = ClusterSet::from_assignment({0, 0, 1, 1, 1, -1, 2, 2});
    std::vector<CL> l(8, CL::Unlabeled);
    l[2] = CL::Foreground;
    l[7] = CL::Foreground;
    const auto f = filter_foreground(c, l);
    REQUIRE(f.num_clusters() == 2);
    CHECK(f.assignment == std::vector<int>{-1, -1, 0, 0, 0, -1, 1, 1});
    CHECK(f.members[0] == c.members[1]);
    CHECK(f.members[1] == c.members[2]);

    // 1 foreground among 50 unlabeled
    std::vector<int> a(51, 0);
    std::vector<CL> l2(51, CL::Unlabeled);
    l2[17] = CL::Foreground;
    CHECK(filter_foreground(ClusterSet::from_assignment(a), l2).num_clusters() == 1);

    const std::vector<CL> all(8, CL::Foreground);
    CHECK(filter_foreground(c, all).assignment == c.assignment);
    CHECK_THROWS_AS(filter_foreground(c, std::vector<CL>(3, CL::Foreground)), DataError);
}

TEST_CASE("cluster_centers") {
    const std::vector<Eigen::Vector3d> pts{{0, 0, 0}, {2, 0, 0}, {5, 6, 7}};
    const auto c = ClusterSet::from_assignment({0, 0, 1});
    const auto g = cluster_centers(c, pts);
    CHECK((g[0] - Eigen::Vector3d(1, 0, 0)).norm() < 1e-15);
    CHECK(g[1] == pts[2]);

    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-50, 50);
    std::vector<Eigen::Vector3d> many;
    for (int i = 0; i < 100; ++i) many.emplace_back(u(rng), u(rng), u(rng));
    const auto one = cluster_centers(ClusterSet::from_assignment(std::vector<int>(100, 0)), many);
    // Welford running mean
    Eigen::Vector3d mean = Eigen::Vector3d::Zero();
    for (int i = 0; i < 100; ++i) mean += (many[i] - mean) / (i + 1);
    CHECK((one[0] - mean).norm() < 1e-9);
}

TEST_CASE("clustering candidates are foreground or unlabeled") {
    const std::vector<CL> l{CL::Background, CL::Foreground, CL::RoadLike, CL::Unlabeled, CL::Foreground};
    CHECK(clustering_candidates(l) == std::vector<int>{1, 3, 4});
}

TEST_CASE("filter never grows or edits clusters") {
    std::mt19937_64 rng(12);
    std::uniform_int_distribution<int> lab(0, 3);
    for (int rep = 0; rep < 10; ++rep) {
        const auto pts = oracle::dbscan_fixture(rng, 500, 0.7, 4);
        const auto c = dbscan(pts, 0.7, 4);
        std::vector<CL> l;
        for (std::size_t i = 0; i < pts.size(); ++i) l.push_back(static_cast<CL>(lab(rng) == 2 && rng() % 8 == 0 ? 2 : 0));
        const auto f = filter_foreground(c, l);
        CHECK(f.num_clusters() <= c.num_clusters());
        std::set<std::vector<int>> before(c.members.begin(), c.members.end());
        for (const auto& m : f.members) CHECK(before.contains(m));
    }
}

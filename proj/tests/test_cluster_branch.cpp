#include "cseg/cluster_branch.hpp"
#include "cseg/errors.hpp"
#include "cseg/layers.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace cseg;

namespace {

struct Fixture {
    ParamStore store;
    Tensor u_cur, u_pool;
    std::vector<Eigen::Vector3d> g_cur, g_pool;
};

Fixture make_fixture(std::uint64_t seed, std::int64_t d, int groups, int nc, int m, bool dyadic = false) {
    std::mt19937_64 rng(seed);
    Fixture fx;
    Rng r(seed + 100);
    init_tce(fx.store, d, {4, groups}, r);
    for (const auto& name : fx.store.names())
        if (name.ends_with(".b"))
            for (auto& v : fx.store.get(name).values()) v = r.uniform(-0.2, 0.2);
    std::uniform_real_distribution<double> u(-1, 1), c(-10, 10);
    std::uniform_int_distribution<int> q(-80, 80);
    auto feats = [&](int n) {
        Tensor t({n, d});
        for (auto& v : t.values()) v = u(rng);
        return t;
    };
    auto centers = [&](int n) {
        std::vector<Eigen::Vector3d> g;
        for (int i = 0; i < n; ++i) {
            if (dyadic) g.emplace_back(q(rng) / 8.0, q(rng) / 8.0, q(rng) / 32.0);
            else g.emplace_back(c(rng), c(rng), c(rng) / 5);
        }
        return g;
    };
    fx.u_cur = feats(nc);
    fx.u_pool = feats(m);
    fx.g_cur = centers(nc);
    fx.g_pool = centers(m);
    return fx;
}

Tensor attend(const Fixture& fx, int k_nn, int groups, AttentionTrace* trace = nullptr) {
    Tape t;
    ParamBinder p(t, fx.store);
    const ClusterFeatures cur{t.constant(fx.u_cur), fx.g_cur};
    const ClusterFeatures pool{t.constant(fx.u_pool), fx.g_pool};
    return t.value(tce_attention(p, cur, pool, {k_nn, groups}, trace));
}

double max_diff(const Tensor& a, const oracle::Mat& b) {
    double m = 0.0;
    for (std::int64_t i = 0; i < a.rows(); ++i)
        for (std::int64_t j = 0; j < a.cols(); ++j) m = std::max(m, std::abs(a.at(i, j) - b(i, j)));
    return m;
}

}  // namespace

TEST_CASE("aggregate_instance") {
    Tape t;
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-3, 3);
    Tensor h({53, 4});
    for (auto& v : h.values()) v = u(rng);
    for (int c = 0; c < 4; ++c) h.at(1, c) = -h.at(0, c);
    std::vector<Eigen::Vector3d> coords;
    for (int i = 0; i < 53; ++i) coords.emplace_back(u(rng), u(rng), u(rng));
    std::vector<int> a(53, 2);
    a[0] = a[1] = 0;
    a[2] = 1;
    const auto cs = ClusterSet::from_assignment(a);
    const auto cf = aggregate_instance(t, t.constant(h), cs, coords);
    const Tensor& uu = t.value(cf.u);
    REQUIRE(uu.shape() == Shape{3, 4});
    CHECK(cf.size() == 3);
    for (int c = 0; c < 4; ++c) {
        CHECK(std::abs(uu.at(0, c)) < 1e-15);
        CHECK(uu.at(1, c) == h.at(2, c));
        double mean = 0.0;  // streaming mean over the 50 members
        for (int i = 3, n = 1; i < 53; ++i, ++n) mean += (h.at(i, c) - mean) / n;
        CHECK(std::abs(uu.at(2, c) - mean) < 1e-12);
    }
    CHECK(cf.centers[1] == coords[2]);
    CHECK_THROWS_AS(aggregate_instance(t, t.constant(Tensor({3, 4})), cs, coords), ShapeError);
}

TEST_CASE("merge_temporal_clusters") {
    Tape t;
    const ClusterFeatures cur{t.constant(Tensor({2, 3}, 1.0)), {{0, 0, 0}, {1, 1, 1}}};
    StoredClusters prev;
    const auto first = merge_temporal_clusters(t, cur, prev, Pose::translation(0, 3, 0));
    CHECK(first.size() == 2);
    CHECK(t.value(first.u) == t.value(cur.u));
    prev.valid = true;
    prev.u = Tensor({3, 3}, 2.0);
    prev.centers = {{5, 0, 0}, {0, 5, 0}, {-1, -2, -3}};
    const auto same = merge_temporal_clusters(t, cur, prev, Pose::identity());
    REQUIRE(same.size() == 5);
    CHECK(same.centers[4] == prev.centers[2]);
    const auto shifted = merge_temporal_clusters(t, cur, prev, Pose::translation(0, 3, 0));
    for (int i = 0; i < 3; ++i) CHECK(shifted.centers[2 + i] == prev.centers[i] + Eigen::Vector3d(0, 3, 0));
    CHECK(t.value(shifted.u).at(3, 1) == 2.0);
    CHECK(t.value(shifted.u).at(1, 1) == 1.0);
}

TEST_CASE("tce_attention matches the direct evaluator") {
    for (std::uint64_t seed = 1; seed <= 30; ++seed) {
        const int groups = seed % 3 == 0 ? 1 : seed % 3 == 1 ? 4 : 2;
        const auto fx = make_fixture(seed, 8, groups, 3 + seed % 5, 6 + seed % 7);
        for (int k : {1, 4, 40}) {
            AttentionTrace tr;
            const Tensor got = attend(fx, k, groups, &tr);
            std::vector<oracle::Mat> w;
            const auto want = oracle::grouped_attention(fx.store, oracle::to_mat(fx.u_cur), fx.g_cur,
                                                        oracle::to_mat(fx.u_pool), fx.g_pool, k, &w);
            REQUIRE(max_diff(got, want) < 1e-10);
            // weights sum to one per (cluster, group)
            for (std::int64_t i = 0; i < fx.u_cur.rows(); ++i)
                for (int g = 0; g < groups; ++g) {
                    double s = 0.0;
                    for (int j = 0; j < tr.k; ++j) s += tr.weights.at(i * tr.k + j, g);
                    CHECK(std::abs(s - 1.0) < 1e-12);
                    for (int j = 0; j < tr.k; ++j) CHECK(std::abs(tr.weights.at(i * tr.k + j, g) - w[i](j, g)) < 1e-12);
                }
        }
    }
}

TEST_CASE("single neighbour returns its value projection") {
    const auto fx = make_fixture(5, 8, 2, 4, 7);
    const Tensor out = attend(fx, 1, 2);
    const auto nb = cluster_neighbours(fx.g_cur, fx.g_pool, 1);
    for (int i = 0; i < 4; ++i) {
        const oracle::Vec v = oracle::dense(fx.store, "tce.v", oracle::to_mat(fx.u_pool).row(nb[i][0]));
        for (int c = 0; c < 8; ++c) CHECK(std::abs(out.at(i, c) - v(c)) < 1e-14);
    }
}

TEST_CASE("identical neighbours split the weight evenly") {
    auto fx = make_fixture(6, 8, 4, 1, 2);
    fx.g_pool[1] = fx.g_pool[0];
    for (int c = 0; c < 8; ++c) fx.u_pool.at(1, c) = fx.u_pool.at(0, c);
    AttentionTrace tr;
    const Tensor out = attend(fx, 2, 4, &tr);
    for (int g = 0; g < 4; ++g) CHECK(tr.weights.at(0, g) == doctest::Approx(0.5).epsilon(1e-14));
    const oracle::Vec v = oracle::dense(fx.store, "tce.v", oracle::to_mat(fx.u_pool).row(0));
    for (int c = 0; c < 8; ++c) CHECK(std::abs(out.at(0, c) - v(c)) < 1e-14);
}

TEST_CASE("attention ignores pool order and shared translation") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const auto fx = make_fixture(seed, 8, 4, 5, 9, true);
        const Tensor base = attend(fx, 4, 4);

        auto perm = fx;
        std::vector<int> order(9);
        std::iota(order.begin(), order.end(), 0);
        std::mt19937_64 rng(seed);
        std::shuffle(order.begin(), order.end(), rng);
        for (int i = 0; i < 9; ++i) {
            perm.g_pool[i] = fx.g_pool[order[i]];
            for (int c = 0; c < 8; ++c) perm.u_pool.at(i, c) = fx.u_pool.at(order[i], c);
        }
        const Tensor p = attend(perm, 4, 4);
        double d = 0.0;
        for (std::size_t i = 0; i < base.size(); ++i) d = std::max(d, std::abs(base[i] - p[i]));
        CHECK(d < 1e-12);

        auto moved = fx;
        const Eigen::Vector3d shift(12.0, -5.0, 3.0);
        for (auto& g : moved.g_cur) g += shift;
        for (auto& g : moved.g_pool) g += shift;
        CHECK(attend(moved, 4, 4) == base);  // dyadic centres: differences are exact
    }
}

TEST_CASE("groups must divide D") {
    ParamStore s;
    Rng r(1);
    CHECK_THROWS_AS(init_tce(s, 8, {4, 3}, r), ConfigError);
    CHECK_THROWS_AS(init_tce(s, 8, {0, 2}, r), ConfigError);
}

TEST_CASE("scatter_cluster_feats") {
    Tape t;
    const Tensor u({2, 3}, {1, 2, 3, 4, 5, 6});
    const auto one = scatter_cluster_feats(t, t.constant(Tensor({1, 3}, {7, 8, 9})), ClusterSet::from_assignment({0, 0, 0}));
    for (int i = 0; i < 3; ++i) CHECK(t.value(one).at(i, 2) == 9);
    const auto none = scatter_cluster_feats(t, t.constant(Tensor({0, 3})), ClusterSet::from_assignment({-1, -1}));
    CHECK(t.value(none) == Tensor({2, 3}));
    const std::vector<int> a{1, -1, 0, 1, -1};
    const auto mixed = scatter_cluster_feats(t, t.constant(u), ClusterSet::from_assignment(a));
    for (int p = 0; p < 5; ++p)
        for (int c = 0; c < 3; ++c) CHECK(t.value(mixed).at(p, c) == (a[p] < 0 ? 0.0 : u.at(a[p], c)));
    ClusterSet bad;
    bad.assignment = {0, 2};
    CHECK_THROWS_AS(scatter_cluster_feats(t, t.constant(u), bad), DataError);
}

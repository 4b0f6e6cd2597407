#include "cseg/errors.hpp"
#include "cseg/mtf.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace cseg;

namespace {

std::vector<Eigen::Vector3d> random_coords(std::mt19937_64& rng, int n) {
    std::uniform_real_distribution<double> u(-6, 6);
    std::vector<Eigen::Vector3d> c;
    for (int i = 0; i < n; ++i) c.emplace_back(u(rng), u(rng), u(rng) / 3);
    return c;
}

Tensor random_features(std::mt19937_64& rng, std::int64_t n, std::int64_t d) {
    std::uniform_real_distribution<double> u(-1, 1);
    Tensor t({n, d});
    for (auto& v : t.values()) v = u(rng);
    return t;
}

// 1x1 kernel taking a * history + b * current per channel.
void set_blend(ParamStore& s, Plane pl, std::int64_t d, double a, double b) {
    Tensor& k = s.get(std::string("mtf.") + to_string(pl) + ".k");
    for (auto& v : k.values()) v = 0.0;
    for (std::int64_t c = 0; c < d; ++c) {
        k[c * d + c] = a;
        k[(d + c) * d + c] = b;
    }
}

}  // namespace

TEST_CASE("first frame runs the zero-history path") {
    std::mt19937_64 rng(1);
    const std::int64_t d = 8;
    ParamStore s;
    Rng r(2);
    init_mtf(s, d, r);
    const auto cur = random_coords(rng, 120);
    const Tensor f = random_features(rng, 120, d);
    const MtfConfig cfg;
    Tape t;
    ParamBinder p(t, s);
    const TemporalFeatureState empty;
    const Tensor out = t.value(mtf_forward(p, t.constant(f), cur, empty, Pose::identity(), cfg));
    CHECK(out.shape() == f.shape());
    CHECK(out.all_finite());
    Var manual = t.constant(f);
    for (Plane pl : {Plane::XY, Plane::XZ, Plane::YZ}) manual = fuse2d(p, Var{}, {}, manual, cur, pl, cfg);
    CHECK(t.value(manual) == out);

    // zero history features reproduce the same output bit for bit
    TemporalFeatureState zero;
    zero.valid = true;
    zero.coords = random_coords(rng, 90);
    zero.features = Tensor({90, d});
    CHECK(t.value(mtf_forward(p, t.constant(f), cur, zero, Pose::translation(0.3, 0, 0), cfg)) == out);
}

TEST_CASE("fuse2d averages both streams with a hand-set kernel") {
    const std::int64_t d = 3;
    ParamStore s;
    Rng r(3);
    init_mtf(s, d, r);
    set_blend(s, Plane::XY, d, 0.5, 0.5);
    MtfConfig cfg;
    cfg.mode = FuseMode::Replace;
    const Tensor h({1, d}, {1.0, -2.0, 4.0});
    const Tensor f({1, d}, {3.0, 2.0, 0.0});
    const std::vector<Eigen::Vector3d> c{{1.0, 1.0, 0.0}};
    Tape t;
    ParamBinder p(t, s);
    const Tensor out = t.value(fuse2d(p, t.constant(h), c, t.constant(f), c, Plane::XY, cfg));
    for (int k = 0; k < d; ++k) CHECK(out[k] == (h[k] + f[k]) / 2);
}

TEST_CASE("history in cells without current points is never read") {
    std::mt19937_64 rng(4);
    const std::int64_t d = 4;
    ParamStore s;
    Rng r(5);
    init_mtf(s, d, r);
    // current points in the four corners of a 4 m square, history adds one point in the middle
    const std::vector<Eigen::Vector3d> cur{{0, 0, 0}, {4, 0, 0}, {0, 4, 0}, {4, 4, 0}};
    const Tensor f = random_features(rng, 4, d);
    std::vector<Eigen::Vector3d> prev = cur;
    Tensor h = random_features(rng, 4, d);
    prev.emplace_back(2.0, 2.0, 0.0);
    Tensor h5({5, d});
    for (std::size_t i = 0; i < h.size(); ++i) h5[i] = h[i];
    for (int k = 0; k < d; ++k) h5.at(4, k) = 100.0;
    const MtfConfig cfg;
    Tape t;
    ParamBinder p(t, s);
    const std::vector<Eigen::Vector3d> prev4(cur);
    const Tensor a = t.value(fuse2d(p, t.constant(h), prev4, t.constant(f), cur, Plane::XY, cfg));
    const Tensor b = t.value(fuse2d(p, t.constant(h5), prev, t.constant(f), cur, Plane::XY, cfg));
    CHECK(a == b);
}

TEST_CASE("static scene: both streams land on identical grids") {
    std::mt19937_64 rng(6);
    const std::int64_t d = 5;
    const auto cur = random_coords(rng, 200);
    const Tensor f = random_features(rng, 200, d);
    ParamStore hist_only, cur_only;
    Rng r(7);
    init_mtf(hist_only, d, r);
    cur_only = hist_only;
    MtfConfig cfg;
    cfg.mode = FuseMode::Replace;
    for (Plane pl : {Plane::XY, Plane::XZ, Plane::YZ}) {
        set_blend(hist_only, pl, d, 1.0, 0.0);
        set_blend(cur_only, pl, d, 0.0, 1.0);
        Tape t;
        ParamBinder ph(t, hist_only), pc(t, cur_only);
        const Var fv = t.constant(f);
        const Tensor a = t.value(fuse2d(ph, fv, cur, fv, cur, pl, cfg));
        const Tensor b = t.value(fuse2d(pc, fv, cur, fv, cur, pl, cfg));
        CHECK(a == b);
    }
}

TEST_CASE("plane order is XY, XZ, YZ and matters") {
    std::mt19937_64 rng(8);
    const std::int64_t d = 6;
    ParamStore s;
    Rng r(9);
    init_mtf(s, d, r);
    const auto cur = random_coords(rng, 150);
    const Tensor f = random_features(rng, 150, d);
    TemporalFeatureState st;
    st.valid = true;
    st.coords = random_coords(rng, 140);
    st.features = random_features(rng, 140, d);
    const MtfConfig cfg;
    const Pose pose = Pose::rotation_z(0.05) * Pose::translation(0.4, 0.1, 0.0);
    Tape t;
    ParamBinder p(t, s);
    const Tensor out = t.value(mtf_forward(p, t.constant(f), cur, st, pose, cfg));

    std::vector<Eigen::Vector3d> moved;
    for (const auto& c : st.coords) moved.push_back(pose.apply(c));
    const Var h = ops::rms_norm_rows(t, t.constant(st.features));
    auto chain = [&](std::array<Plane, 3> order) {
        Var x = t.constant(f);
        for (Plane pl : order) x = fuse2d(p, h, moved, x, cur, pl, cfg);
        return t.value(x);
    };
    CHECK(chain({Plane::XY, Plane::XZ, Plane::YZ}) == out);
    const Tensor rev = chain({Plane::YZ, Plane::XZ, Plane::XY});
    double diff = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) diff = std::max(diff, std::abs(out[i] - rev[i]));
    CHECK(diff > 1e-6);
}

TEST_CASE("gradients reach both streams") {
    std::mt19937_64 rng(10);
    const std::int64_t d = 6;
    ParamStore s;
    Rng r(11);
    init_mtf(s, d, r);
    const auto cur = random_coords(rng, 80);
    TemporalFeatureState st;
    st.valid = true;
    st.coords = cur;
    st.features = random_features(rng, 80, d);
    Tape t;
    ParamBinder p(t, s);
    const Var f = t.variable(random_features(rng, 80, d));
    const Var h = t.variable(st.features);
    const Var out = mtf_forward(p, f, cur, h, st, Pose::identity(), MtfConfig{});
    t.backward(ops::sum(t, ops::mul(t, out, out)));
    double gf = 0.0, gh = 0.0;
    for (double v : t.grad(f).values()) gf += v * v;
    for (double v : t.grad(h).values()) gh += v * v;
    CHECK(gf > 0.0);
    CHECK(gh > 0.0);
}

TEST_CASE("zero-initialised residual blocks pass features through") {
    std::mt19937_64 rng(12);
    const std::int64_t d = 4;
    ParamStore s;
    Rng r(13);
    init_mtf(s, d, r, true);
    const auto cur = random_coords(rng, 50);
    const Tensor f = random_features(rng, 50, d);
    TemporalFeatureState st;
    st.valid = true;
    st.coords = cur;
    st.features = random_features(rng, 50, d);
    Tape t;
    ParamBinder p(t, s);
    CHECK(t.value(mtf_forward(p, t.constant(f), cur, st, Pose::identity(), MtfConfig{})) == f);
}

#include "cseg/errors.hpp"
#include "cseg/grad_check.hpp"
#include "cseg/ops.hpp"
#include "cseg/params.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

using namespace cseg;

namespace {

Tensor random_tensor(std::mt19937_64& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> u(lo, hi);
    for (auto& v : t.values()) v = u(rng);
    return t;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    REQUIRE(a.shape() == b.shape());
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace

TEST_CASE("tensor basics") {
    Tensor t({2, 3}, 1.5);
    CHECK(t.size() == 6);
    CHECK(t.rows() == 2);
    CHECK(t.cols() == 3);
    CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
    CHECK_THROWS_AS(t.reshaped({4, 2}), ShapeError);
    CHECK(t.reshaped({3, 2}).dim(0) == 3);
    CHECK(Tensor::scalar(4).item() == 4);
}

TEST_CASE("linear") {
    Tape t;
    std::mt19937_64 rng(1);
    const Tensor x = random_tensor(rng, {3, 4});
    Tensor eye({4, 4});
    for (int i = 0; i < 4; ++i) eye.at(i, i) = 1.0;
    CHECK(t.value(ops::linear(t, t.constant(x), t.constant(eye), t.constant(Tensor({4})))) == x);

    const Tensor b = random_tensor(rng, {2});
    const Tensor w = random_tensor(rng, {4, 2});
    const Var z = ops::linear(t, t.constant(Tensor({3, 4})), t.constant(w), t.constant(b));
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 2; ++j) CHECK(t.value(z).at(i, j) == b[j]);

    const Var y = ops::linear(t, t.constant(x), t.constant(w), t.constant(b));
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 2; ++j) {
            double acc = b[j];
            for (int k = 0; k < 4; ++k) acc += x.at(i, k) * w.at(k, j);
            CHECK(std::abs(t.value(y).at(i, j) - acc) < 1e-12);
        }
    try {
        ops::linear(t, t.constant(x), t.constant(Tensor({3, 2})), t.constant(b));
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[3x4]") != std::string::npos);
        CHECK(msg.find("[3x2]") != std::string::npos);
    }
}

TEST_CASE("softmax") {
    Tape t;
    const Var u = ops::softmax(t, t.constant(Tensor({1, 5}, 2.0)), 1);
    for (int j = 0; j < 5; ++j) CHECK(t.value(u)[j] == doctest::Approx(0.2).epsilon(1e-14));
    const Var s = ops::softmax(t, t.constant(Tensor({1, 2}, {0.0, std::log(3.0)})), 1);
    CHECK(std::abs(t.value(s)[0] - 0.25) < 1e-15);
    CHECK(std::abs(t.value(s)[1] - 0.75) < 1e-15);

    std::mt19937_64 rng(2);
    const Tensor x = random_tensor(rng, {6, 5}, -30, 30);
    Tensor shifted = x;
    for (int j = 0; j < 5; ++j) shifted.at(2, j) += 123.0;
    const Tensor a = t.value(ops::softmax(t, t.constant(x), 1));
    const Tensor b = t.value(ops::softmax(t, t.constant(shifted), 1));
    CHECK(max_abs_diff(a, b) < 1e-12);
    for (int i = 0; i < 6; ++i) {
        double sum = 0.0;
        for (int j = 0; j < 5; ++j) {
            CHECK(a.at(i, j) > 0.0);
            CHECK(a.at(i, j) <= 1.0);
            sum += a.at(i, j);
        }
        CHECK(std::abs(sum - 1.0) < 1e-12);
    }
    // middle axis of a rank-3 tensor
    const Tensor r3 = random_tensor(rng, {2, 4, 3}, -5, 5);
    const Tensor m = t.value(ops::softmax(t, t.constant(r3), 1));
    for (int i = 0; i < 2; ++i)
        for (int k = 0; k < 3; ++k) {
            double sum = 0.0;
            for (int j = 0; j < 4; ++j) sum += m[(i * 4 + j) * 3 + k];
            CHECK(std::abs(sum - 1.0) < 1e-12);
        }
}

TEST_CASE("sigmoid stays inside the open interval") {
    Tape t;
    const Var s = ops::sigmoid(t, t.constant(Tensor({1, 5}, {-40.0, -5.0, 0.0, 5.0, 30.0})));
    for (double v : t.value(s).values()) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }
    CHECK(t.value(s)[2] == 0.5);
}

TEST_CASE("scatter_mean and gather") {
    Tape t;
    std::mt19937_64 rng(3);
    const ops::GridShape grid{8, 8};
    SUBCASE("one point per cell") {
        const Tensor f = random_tensor(rng, {5, 3});
        const std::vector<std::int64_t> cells{0, 9, 17, 40, 63};
        const Var g = ops::scatter_mean(t, t.constant(f), cells, grid);
        for (int p = 0; p < 5; ++p)
            for (int c = 0; c < 3; ++c) CHECK(t.value(g)[cells[p] * 3 + c] == f.at(p, c));
        CHECK(t.value(ops::gather(t, g, cells)) == f);
    }
    SUBCASE("two points share a cell") {
        const Tensor f({2, 2}, {1.0, 2.0, 3.0, 6.0});
        const std::vector<std::int64_t> cells{5, 5};
        const Var g = ops::scatter_mean(t, t.constant(f), cells, grid);
        CHECK(t.value(g)[10] == 2.0);
        CHECK(t.value(g)[11] == 4.0);
        const Tensor back = t.value(ops::gather(t, g, cells));
        CHECK(back.at(0, 0) == back.at(1, 0));
        CHECK(back.at(0, 1) == back.at(1, 1));
    }
    SUBCASE("random fixture against accumulate-then-divide") {
        const Tensor f = random_tensor(rng, {1000, 4});
        std::uniform_int_distribution<std::int64_t> cell(0, 63);
        std::vector<std::int64_t> cells(1000);
        for (auto& c : cells) c = cell(rng);
        std::vector<double> acc(64 * 4, 0.0);
        std::vector<int> cnt(64, 0);
        for (int p = 0; p < 1000; ++p) {
            ++cnt[cells[p]];
            for (int c = 0; c < 4; ++c) acc[cells[p] * 4 + c] += f.at(p, c);
        }
        const Var g = ops::scatter_mean(t, t.constant(f), cells, grid);
        REQUIRE(t.value(g).shape() == Shape{8, 8, 4});
        for (int k = 0; k < 64; ++k)
            for (int c = 0; c < 4; ++c) {
                const double want = cnt[k] ? acc[k * 4 + c] / cnt[k] : 0.0;
                CHECK(std::abs(t.value(g)[k * 4 + c] - want) < 1e-12);
            }
        const Var back = ops::gather(t, g, cells);
        for (int p = 0; p < 1000; ++p)
            for (int c = 0; c < 4; ++c) CHECK(t.value(back).at(p, c) == t.value(g)[cells[p] * 4 + c]);
        // scatter then gather is idempotent on the grid
        const Var again = ops::scatter_mean(t, back, cells, grid);
        CHECK(max_abs_diff(t.value(again), t.value(g)) < 1e-12);
    }
    const Tensor f({1, 2}, 1.0);
    CHECK_THROWS_AS(ops::scatter_mean(t, t.constant(f), std::vector<std::int64_t>{64}, grid), DataError);
    CHECK_THROWS_AS(ops::gather(t, t.constant(Tensor({8, 8, 2})), std::vector<std::int64_t>{-1}), DataError);
}

TEST_CASE("conv2d") {
    Tape t;
    std::mt19937_64 rng(4);
    const Tensor x = random_tensor(rng, {5, 5, 2});
    Tensor k1({1, 1, 2, 2});
    k1[0] = 1.0;
    k1[3] = 1.0;
    CHECK(t.value(ops::conv2d(t, t.constant(x), t.constant(k1))) == x);
    Tensor k3({3, 3, 2, 2});
    k3[((1 * 3 + 1) * 2 + 0) * 2 + 0] = 1.0;
    k3[((1 * 3 + 1) * 2 + 1) * 2 + 1] = 1.0;
    CHECK(t.value(ops::conv2d(t, t.constant(x), t.constant(k3))) == x);

    const Tensor w = random_tensor(rng, {3, 3, 2, 3});
    const Tensor b = random_tensor(rng, {3});
    const Tensor y = t.value(ops::conv2d(t, t.constant(x), t.constant(w), t.constant(b)));
    for (int r = 0; r < 5; ++r)
        for (int c = 0; c < 5; ++c)
            for (int o = 0; o < 3; ++o) {
                double acc = b[o];
                for (int dr = 0; dr < 3; ++dr)
                    for (int dc = 0; dc < 3; ++dc)
                        for (int i = 0; i < 2; ++i) {
                            const int rr = r + dr - 1, cc = c + dc - 1;
                            if (rr < 0 || rr >= 5 || cc < 0 || cc >= 5) continue;
                            acc += x[(rr * 5 + cc) * 2 + i] * w[((dr * 3 + dc) * 2 + i) * 3 + o];
                        }
                CHECK(std::abs(y[(r * 5 + c) * 3 + o] - acc) < 1e-12);
            }
    CHECK_THROWS_AS(ops::conv2d(t, t.constant(x), t.constant(Tensor({2, 2, 2, 2}))), ConfigError);
}

TEST_CASE("tape backward and grad_check basics") {
    const auto rep = grad_check(
        [](Tape& t, std::span<const Var> in) { return ops::sum(t, ops::mul(t, in[0], in[0])); },
        {Tensor({2}, {1.0, 2.0})});
    CHECK(rep.passed);
    CHECK(rep.max_rel_error < 1e-8);

    Tape t;
    const Var x = t.variable(Tensor({2}, {1.0, 2.0}));
    const Var y = ops::sum(t, ops::mul(t, x, x));
    t.backward(y);
    CHECK(t.grad(x)[0] == doctest::Approx(2.0));
    CHECK(t.grad(x)[1] == doctest::Approx(4.0));
    CHECK_THROWS_AS(t.backward(ops::mul(t, x, x)), UsageError);
    CHECK_THROWS_AS(grad_check([](Tape& tt, std::span<const Var> in) { return ops::scale(tt, in[0], 2.0); },
                               {Tensor({3}, 1.0)}),
                    UsageError);
    CHECK_THROWS_AS(t.constant(Tensor({1}, {NAN})), NumericError);
    CHECK_THROWS_AS(ops::scale(t, x, INFINITY), NumericError);
}

TEST_CASE("forward replay is bit-identical") {
    std::mt19937_64 rng(8);
    const Tensor a = random_tensor(rng, {7, 5}), w = random_tensor(rng, {5, 3}), b = random_tensor(rng, {3});
    auto run = [&] {
        Tape t;
        const Var z = ops::softmax(t, ops::gelu(t, ops::linear(t, t.constant(a), t.constant(w), t.constant(b))), 1);
        return t.value(z);
    };
    CHECK(run() == run());
}

TEST_CASE("param store") {
    ParamStore s;
    Rng rng(5);
    s.add_glorot("a.w", {4, 3}, 4, 3, rng);
    s.add_zeros("a.b", {3});
    CHECK_THROWS_AS(s.add_zeros("a.b", {3}), ConfigError);
    const double bound = std::sqrt(6.0 / 7.0);
    for (double v : s.get("a.w").values()) CHECK(std::abs(v) <= bound);
    s.entry("a.w").m[2] = 0.25;
    s.set_meta("train.epoch", 12);
    const auto path = std::filesystem::temp_directory_path() / "cseg_param_store_test.ckpt";
    s.save(path);
    const ParamStore r = ParamStore::load(path);
    CHECK(r.same_values(s));
    CHECK(r.checksum() == s.checksum());
    CHECK(r.meta("train.epoch") == 12);
    CHECK(r.meta("missing", -4) == -4);
    ParamStore copy = r;
    CHECK(copy.entry("a.w").m[2] == 0.25);
    CHECK(r.names() == s.names());
    CHECK(s.checksum("a.b") != s.checksum("a.w"));
    std::filesystem::remove(path);

    Rng x(42), y(42);
    for (int i = 0; i < 100; ++i) CHECK(x.next_u64() == y.next_u64());
    for (int i = 0; i < 1000; ++i) {
        const double u = x.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
}

TEST_CASE("param binder freezes by prefix") {
    ParamStore s;
    s.add("backbone.x", Tensor({2}, 1.0));
    s.add("head.y", Tensor({2}, 2.0));
    Tape t;
    ParamBinder p(t, s);
    p.freeze_prefix("backbone.");
    const Var a = p("backbone.x");
    const Var b = p("head.y");
    CHECK_FALSE(t.requires_grad(a));
    CHECK(t.requires_grad(b));
    CHECK(p("head.y").id == b.id);  // bound once
}

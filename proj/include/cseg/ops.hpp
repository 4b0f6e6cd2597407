#pragma once

#include "cseg/tape.hpp"

#include <cstdint>
#include <span>

namespace cseg::ops {

// Differentiable primitives. Every op records its result on the tape and a
// closure computing the vector-Jacobian product for each input that requires
// a gradient. Shape violations throw ShapeError naming the shapes involved.

Var matmul(Tape& t, Var a, Var b);
// y = x W + b for x [N x Din], W [Din x Dout], b [Dout].
Var linear(Tape& t, Var x, Var w, Var b);

Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double c);
Var sum(Tape& t, Var x);

Var relu(Tape& t, Var x);
Var gelu(Tape& t, Var x);  // exact erf form
Var sigmoid(Tape& t, Var x);

// Max-subtracted normalised exponential along one axis.
Var softmax(Tape& t, Var x, int axis);

// Row-wise x / sqrt(mean(x^2) + eps); zero rows stay zero.
Var rms_norm_rows(Tape& t, Var x, double eps = 1e-6);

Var concat_cols(Tape& t, Var a, Var b);
Var concat_rows(Tape& t, Var a, Var b);
Var reshape(Tape& t, Var x, Shape shape);

// out[i] = x[idx[i]]; idx == -1 yields a zero row.
Var gather_rows(Tape& t, Var x, std::span<const std::int64_t> idx);
// out[s] = mean of rows with seg == s (zero for empty segments); seg == -1 skipped.
Var segment_mean(Tape& t, Var x, std::span<const std::int64_t> seg, std::int64_t num_segments);

struct GridShape {
    std::int64_t h = 0;
    std::int64_t w = 0;
    std::int64_t cells() const { return h * w; }
};

// Point features [N x D] averaged into an [H x W x D] grid by flat cell index
// (row * W + col). Out-of-range cells throw DataError.
Var scatter_mean(Tape& t, Var points, std::span<const std::int64_t> cells, GridShape grid);
// Grid [H x W x D] read back per point -> [N x D].
Var gather(Tape& t, Var grid, std::span<const std::int64_t> cells);

// Stride-1 cross-correlation of an [H x W x Cin] grid with a [k x k x Cin x Cout]
// kernel, k in {1, 3}, zero padding; optional bias [Cout].
Var conv2d(Tape& t, Var grid, Var kernel, Var bias = {});

// [(N*k) x D] -> [N x D] max over each block of k consecutive rows.
Var max_pool_groups(Tape& t, Var x, std::int64_t k);

// (1 - s) * p + s * pc with s [N x 1] broadcast over the class axis.
Var apf_fuse(Tape& t, Var p, Var pc, Var s);

// Grouped vector aggregation: weights [(N*k) x h], values [(N*k) x D];
// out[i, g*D/h + m] = sum_j weights[i*k+j, g] * values[i*k+j, g*D/h + m].
Var grouped_weighted_sum(Tape& t, Var weights, Var values, std::int64_t k);

// Mean negative log-softmax of the target class over non-ignored rows.
Var cross_entropy(Tape& t, Var logits, std::span<const int> targets, int ignore_index = -1);

// Lovasz-softmax over classes present in the targets; probs rows must sum to 1.
Var lovasz_softmax(Tape& t, Var probs, std::span<const int> targets, int ignore_index = -1);

}  // namespace cseg::ops

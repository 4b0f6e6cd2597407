#include "cseg/layers.hpp"

#include "cseg/ops.hpp"

namespace cseg {

void add_linear(ParamStore& store, const std::string& name, std::int64_t din, std::int64_t dout, Rng& rng) {
    store.add_glorot(name + ".w", {din, dout}, din, dout, rng);
    store.add_zeros(name + ".b", {dout});
}

Var linear_layer(ParamBinder& p, const std::string& name, Var x) {
    return ops::linear(p.tape(), x, p(name + ".w"), p(name + ".b"));
}

void add_mlp2(ParamStore& store, const std::string& name, std::int64_t din, std::int64_t hidden, std::int64_t dout,
              Rng& rng) {
    add_linear(store, name + ".l1", din, hidden, rng);
    add_linear(store, name + ".l2", hidden, dout, rng);
}

Var mlp2(ParamBinder& p, const std::string& name, Var x) {
    const Var h = ops::gelu(p.tape(), linear_layer(p, name + ".l1", x));
    return linear_layer(p, name + ".l2", h);
}

}  // namespace cseg

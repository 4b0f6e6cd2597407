#pragma once

#include "cseg/params.hpp"

#include <string>

namespace cseg {

// Dense layer "<name>.w" [din x dout] (Glorot) and "<name>.b" [dout] (zeros).
void add_linear(ParamStore& store, const std::string& name, std::int64_t din, std::int64_t dout, Rng& rng);
Var linear_layer(ParamBinder& p, const std::string& name, Var x);

// Two dense layers with a GELU between: "<name>.l1", "<name>.l2".
void add_mlp2(ParamStore& store, const std::string& name, std::int64_t din, std::int64_t hidden, std::int64_t dout,
              Rng& rng);
Var mlp2(ParamBinder& p, const std::string& name, Var x);

}  // namespace cseg

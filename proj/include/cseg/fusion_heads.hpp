#pragma once

#include "cseg/params.hpp"

#include <string>

namespace cseg {

// Head names used by the model: "head.point_sem", "head.point_mov",
// "head.cluster_sem", "head.cluster_mov".
void init_head(ParamStore& store, const std::string& name, std::int64_t d, std::int64_t classes, Rng& rng);
// Two-layer MLP D -> D -> C giving per-point logits.
Var prediction_head(ParamBinder& p, const std::string& name, Var h);

struct Confidence {
    Var sem;  // [N x 1] in (0, 1)
    Var mov;
};

// Output bias starts at initial_logit so fusion begins near one branch.
void init_confidence(ParamStore& store, std::int64_t d, Rng& rng, double initial_logit = 0.0);
// sigmoid(MLP(concat(H, Hc))) through two independent MLPs. Row mismatch throws DataError.
Confidence confidence(ParamBinder& p, Var h, Var hc);

// (1 - S) * P + S * Pc.
Var apf(ParamBinder& p, Var point_logits, Var cluster_logits, Var s);

}  // namespace cseg

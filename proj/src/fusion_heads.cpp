#include "cseg/fusion_heads.hpp"

#include "cseg/errors.hpp"
#include "cseg/layers.hpp"
#include "cseg/ops.hpp"

namespace cseg {

void init_head(ParamStore& store, const std::string& name, std::int64_t d, std::int64_t classes, Rng& rng) {
    if (classes < 1) throw ConfigError("head " + name + " needs at least one class");
    add_mlp2(store, name, d, d, classes, rng);
}

Var prediction_head(ParamBinder& p, const std::string& name, Var h) { return mlp2(p, name, h); }

void init_confidence(ParamStore& store, std::int64_t d, Rng& rng, double initial_logit) {
    for (const char* name : {"conf.sem", "conf.mov"}) {
        add_mlp2(store, name, 2 * d, d, 1, rng);
        store.get(std::string(name) + ".l2.b")[0] = initial_logit;
    }
}

Confidence confidence(ParamBinder& p, Var h, Var hc) {
    Tape& t = p.tape();
    if (t.value(h).dim(0) != t.value(hc).dim(0)) {
        throw DataError("confidence: point features have " + std::to_string(t.value(h).dim(0)) +
                        " rows, cluster features " + std::to_string(t.value(hc).dim(0)));
    }
    const Var x = ops::concat_cols(t, h, hc);
    return {ops::sigmoid(t, mlp2(p, "conf.sem", x)), ops::sigmoid(t, mlp2(p, "conf.mov", x))};
}

Var apf(ParamBinder& p, Var point_logits, Var cluster_logits, Var s) {
    return ops::apf_fuse(p.tape(), point_logits, cluster_logits, s);
}

}  // namespace cseg

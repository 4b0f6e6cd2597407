#include "cseg/training.hpp"

#include "cseg/errors.hpp"
#include "cseg/ops.hpp"

#include <cmath>
#include <map>

namespace cseg {

Loss total_loss(Tape& t, Var sem_logits, Var mov_logits, std::span<const int> sem_targets,
                std::span<const int> mov_targets, int ignore_index) {
    const Var ce_sem = ops::cross_entropy(t, sem_logits, sem_targets, ignore_index);
    const Var ls_sem = ops::lovasz_softmax(t, ops::softmax(t, sem_logits, 1), sem_targets, ignore_index);
    const Var ce_mov = ops::cross_entropy(t, mov_logits, mov_targets, ignore_index);
    const Var ls_mov = ops::lovasz_softmax(t, ops::softmax(t, mov_logits, 1), mov_targets, ignore_index);
    Loss out;
    out.total = ops::add(t, ops::add(t, ce_sem, ls_sem), ops::add(t, ce_mov, ls_mov));
    out.report.ce_sem = t.value(ce_sem).item();
    out.report.ls_sem = t.value(ls_sem).item();
    out.report.ce_mov = t.value(ce_mov).item();
    out.report.ls_mov = t.value(ls_mov).item();
    out.report.total = t.value(out.total).item();
    return out;
}

void optimizer_step(ParamStore& store, const std::unordered_map<std::string, Tensor>& grads, const AdamWConfig& cfg) {
    const std::int64_t step = store.meta("adam.step") + 1;
    store.set_meta("adam.step", step);
    double lr = cfg.lr;
    if (cfg.warmup_steps > 0 && step < cfg.warmup_steps) lr *= static_cast<double>(step) / cfg.warmup_steps;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
    // Sorted for a fixed update order.
    const std::map<std::string, const Tensor*> ordered = [&] {
        std::map<std::string, const Tensor*> m;
        for (const auto& [k, v] : grads) m[k] = &v;
        return m;
    }();
    for (const auto& [name, g] : ordered) {
        auto& e = store.entry(name);
        if (g->shape() != e.value.shape()) {
            throw ShapeError("gradient for " + name + " has shape " + to_string(g->shape()) + ", parameter " +
                             to_string(e.value.shape()));
        }
        for (std::size_t i = 0; i < e.value.size(); ++i) {
            const double gi = (*g)[i];
            e.m[i] = cfg.beta1 * e.m[i] + (1.0 - cfg.beta1) * gi;
            e.v[i] = cfg.beta2 * e.v[i] + (1.0 - cfg.beta2) * gi * gi;
            const double mhat = e.m[i] / bc1;
            const double vhat = e.v[i] / bc2;
            e.value[i] -= lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * e.value[i]);
        }
        if (!e.value.all_finite()) throw NumericError("parameter " + name + " became non-finite after update");
    }
}

std::unordered_map<std::string, Tensor> collect_grads(ParamBinder& binder) {
    std::unordered_map<std::string, Tensor> out;
    const Tape& t = binder.tape();
    for (const auto& [name, v] : binder.bound()) {
        if (binder.frozen(name) || !t.requires_grad(v)) continue;
        out.emplace(name, t.grad(v));
    }
    return out;
}

ConfusionMatrix::ConfusionMatrix(int classes) : classes_(classes), counts_(static_cast<std::size_t>(classes * classes)) {
    if (classes < 1) throw ConfigError("confusion matrix needs at least one class");
}

void ConfusionMatrix::add(int target, int prediction) {
    if (target < 0 || target >= classes_ || prediction < 0 || prediction >= classes_) {
        throw DataError("confusion entry (" + std::to_string(target) + ", " + std::to_string(prediction) +
                        ") outside " + std::to_string(classes_) + " classes");
    }
    ++counts_[target * classes_ + prediction];
}

void ConfusionMatrix::add(std::span<const int> targets, std::span<const int> predictions) {
    if (targets.size() != predictions.size()) {
        throw DataError("confusion: " + std::to_string(targets.size()) + " targets vs " +
                        std::to_string(predictions.size()) + " predictions");
    }
    for (std::size_t i = 0; i < targets.size(); ++i) add(targets[i], predictions[i]);
}

std::int64_t ConfusionMatrix::total() const {
    std::int64_t s = 0;
    for (auto c : counts_) s += c;
    return s;
}

std::int64_t ConfusionMatrix::tp(int c) const { return at(c, c); }

std::int64_t ConfusionMatrix::fp(int c) const {
    std::int64_t s = 0;
    for (int r = 0; r < classes_; ++r) {
        if (r != c) s += at(r, c);
    }
    return s;
}

std::int64_t ConfusionMatrix::fn(int c) const {
    std::int64_t s = 0;
    for (int p = 0; p < classes_; ++p) {
        if (p != c) s += at(c, p);
    }
    return s;
}

IouResult compute_iou(const ConfusionMatrix& cm) {
    if (cm.total() == 0) throw DataError("compute_iou: empty confusion matrix");
    IouResult r;
    double sum = 0.0;
    int n = 0;
    for (int c = 0; c < cm.classes(); ++c) {
        const auto denom = cm.tp(c) + cm.fp(c) + cm.fn(c);
        if (denom == 0) {
            r.per_class.push_back(std::nullopt);
            continue;
        }
        const double iou = static_cast<double>(cm.tp(c)) / static_cast<double>(denom);
        r.per_class.push_back(iou);
        sum += iou;
        ++n;
    }
    r.miou = sum / n;
    return r;
}

std::optional<double> consistency_metric(std::span<const int> predictions, std::span<const std::int64_t> instances) {
    if (predictions.size() != instances.size()) {
        throw DataError("consistency: " + std::to_string(predictions.size()) + " predictions vs " +
                        std::to_string(instances.size()) + " instance ids");
    }
    std::map<std::int64_t, int> first;
    std::map<std::int64_t, bool> unanimous;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const auto id = instances[i];
        if (id < 0) continue;
        auto [it, fresh] = first.emplace(id, predictions[i]);
        if (fresh) {
            unanimous[id] = true;
        } else if (it->second != predictions[i]) {
            unanimous[id] = false;
        }
    }
    if (unanimous.empty()) return std::nullopt;
    int good = 0;
    for (const auto& [id, u] : unanimous) good += u ? 1 : 0;
    return static_cast<double>(good) / static_cast<double>(unanimous.size());
}

nlohmann::json to_json(const IouResult& r, std::span<const std::string> class_names) {
    nlohmann::json j;
    j["miou"] = r.miou;
    auto& per = j["per_class"];
    per = nlohmann::json::object();
    for (std::size_t c = 0; c < r.per_class.size(); ++c) {
        const std::string name = c < class_names.size() ? class_names[c] : std::to_string(c);
        per[name] = r.per_class[c] ? nlohmann::json(*r.per_class[c]) : nlohmann::json(nullptr);
    }
    return j;
}

}  // namespace cseg

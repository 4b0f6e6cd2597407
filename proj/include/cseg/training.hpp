#pragma once

#include "cseg/params.hpp"

#include <json.hpp>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace cseg {

struct LossReport {
    double ce_sem = 0.0;
    double ls_sem = 0.0;
    double ce_mov = 0.0;
    double ls_mov = 0.0;
    double total = 0.0;
};

struct Loss {
    Var total;
    LossReport report;
};

// Unit-weight sum of cross-entropy and Lovasz-softmax for both tasks.
Loss total_loss(Tape& t, Var sem_logits, Var mov_logits, std::span<const int> sem_targets,
                std::span<const int> mov_targets, int ignore_index = -1);

struct AdamWConfig {
    double lr = 5e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.003;
    std::int64_t warmup_steps = 0;  // linear ramp of lr over the first steps
};

// Decoupled-decay adaptive moments. Moments and the step counter
// ("adam.step" metadata) live in the store. Parameters without a gradient
// entry are left alone.
void optimizer_step(ParamStore& store, const std::unordered_map<std::string, Tensor>& grads, const AdamWConfig& cfg);

// Gradients of every non-frozen bound parameter after t.backward().
std::unordered_map<std::string, Tensor> collect_grads(ParamBinder& binder);

class ConfusionMatrix {
public:
    explicit ConfusionMatrix(int classes);
    // Rows are ground truth, columns prediction. Out-of-range ids throw DataError.
    void add(int target, int prediction);
    void add(std::span<const int> targets, std::span<const int> predictions);
    std::int64_t at(int target, int prediction) const { return counts_[target * classes_ + prediction]; }
    int classes() const { return classes_; }
    std::int64_t total() const;
    std::int64_t tp(int c) const;
    std::int64_t fp(int c) const;
    std::int64_t fn(int c) const;

private:
    int classes_;
    std::vector<std::int64_t> counts_;
};

struct IouResult {
    std::vector<std::optional<double>> per_class;  // nullopt when TP+FP+FN = 0
    double miou = 0.0;                             // over classes with a value
};

// Empty confusion throws DataError.
IouResult compute_iou(const ConfusionMatrix& cm);

// Fraction of foreground instances (id >= 0) whose members all carry the same
// predicted label; nullopt when there are none. Pass several frames by giving
// each frame's instances distinct ids.
std::optional<double> consistency_metric(std::span<const int> predictions, std::span<const std::int64_t> instances);

nlohmann::json to_json(const IouResult& r, std::span<const std::string> class_names);

}  // namespace cseg

#pragma once

#include <map>
#include <optional>
#include <vector>

#include "subnetcl/codec.hpp"
#include "subnetcl/data.hpp"
#include "subnetcl/mask.hpp"
#include "subnetcl/nn.hpp"

namespace subnetcl {

struct TILRunConfig {
    double capacity_pct = 30.0;
    int epochs = 5;
    int batch_size = 32;
    OptimizerState::Kind optimizer = OptimizerState::Kind::Adam;
    double lr = 1e-3;
    std::uint64_t seed = 0;
    enum class Mode { Wsn, SoftnetInference };
    Mode mode = Mode::Wsn;
    double inference_eps = 1e-3;
    std::vector<std::size_t> hidden = {100, 100};
    bool compute_fwt = true;
};

/// A[j][i]: accuracy on task i after training task j (1-based task ids).
/// R[i]: random-init accuracy on task i.
struct AccuracyMatrix {
    std::map<int, std::map<int, double>> A;
    std::map<int, double> R;
};

struct TILResult {
    AccuracyMatrix acc;
    std::vector<TaskMask> masks;
    CapacityReport cap;
    double metric_acc = 0.0;
    double metric_bwt = 0.0;
    std::optional<double> metric_fwt;
    std::vector<double> capacity_curve;   // |M_t| / numel after each task
    std::vector<double> task_seconds;
    bool partial = false;                 // a task diverged; later entries missing
    std::string error;
};

/// One pass of the per-task training loop: the mask is recomputed from live
/// scores every batch, weight updates are gated by (1 - M_{t-1}), score
/// updates are ungated, and the final mask comes from post-training scores.
TaskMask train_task(ScoredParamStore& store, const AccumMask& accum, const Dataset& train,
                    int task, const TILRunConfig& config);

double evaluate(const ScoredParamStore& store, const RealMask& mask, int task,
                const Dataset& test);

/// Accuracy on a not-yet-trained task i using the only mask the learner owns
/// at that point (M_{i-1}, optionally noise-softened) and the untouched
/// random head for task i.
double probe_future(const ScoredParamStore& store, const AccumMask& accum, int task,
                    const Dataset& test, const TILRunConfig& config);

TILResult run_sequence(const TaskStream& stream, const TILRunConfig& config);

double metric_acc(const AccuracyMatrix& m, int num_tasks);
double metric_bwt(const AccuracyMatrix& m, int num_tasks);
double metric_fwt(const AccuracyMatrix& m, int num_tasks);

}  // namespace subnetcl

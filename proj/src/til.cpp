#include "subnetcl/til.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <string>

#include "subnetcl/error.hpp"

namespace subnetcl {

namespace {

Matrix batch_rows(const Dataset& ds, const std::vector<std::size_t>& order, std::size_t lo,
                  std::size_t hi, std::vector<int>& labels) {
    Matrix batch(hi - lo, ds.features.cols);
    labels.resize(hi - lo);
    for (std::size_t r = lo; r < hi; ++r) {
        std::size_t src = order[r];
        for (std::size_t j = 0; j < ds.features.cols; ++j)
            batch(r - lo, j) = ds.features(src, j);
        labels[r - lo] = ds.labels[src];
    }
    return batch;
}

}  // namespace

TaskMask train_task(ScoredParamStore& store, const AccumMask& accum, const Dataset& train,
                    int task, const TILRunConfig& config) {
    if (train.size() == 0) throw ConfigError("train_task: empty training set");
    OptimizerState opt = make_optimizer(store, config.optimizer, config.lr, task);
    RngStream shuffle_rng(config.seed, "shuffle-task-" + std::to_string(task));

    UpdateOptions options;
    options.freeze_gate = &accum.layers;
    options.update_scores = true;  // Eq-9-style STE update carries no gate
    // Biases sit in every task's subnetwork, so they are frozen as soon as
    // any prior task exists; otherwise later training would leak into frozen
    // evaluations.
    options.update_biases = accum.task_count == 0;

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto bs = static_cast<std::size_t>(config.batch_size);

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        for (std::size_t lo = 0; lo < order.size(); lo += bs) {
            std::size_t hi = std::min(order.size(), lo + bs);
            std::vector<int> labels;
            Matrix batch = batch_rows(train, order, lo, hi, labels);
            TaskMask mask = topc_mask(store.score_view(), config.capacity_pct);
            RealMask rm = as_real(mask);
            auto [logits, cache] = forward(store, rm, task, batch);
            double loss = softmax_xent(logits, labels);
            if (!std::isfinite(loss))
                throw TrainingDivergedError("train_task: non-finite loss at task " +
                                            std::to_string(task) + " epoch " +
                                            std::to_string(epoch));
            GradientBundle grads = backward(store, rm, cache, labels);
            apply_update(store, grads, opt, options);
        }
    }
    return topc_mask(store.score_view(), config.capacity_pct);
}

double evaluate(const ScoredParamStore& store, const RealMask& mask, int task,
                const Dataset& test) {
    if (test.size() == 0) throw ConfigError("evaluate: empty test set");
    auto [logits, cache] = forward(store, mask, task, test.features);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < logits.rows; ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < logits.cols; ++j)
            if (logits(i, j) > logits(i, best)) best = j;
        if (static_cast<int>(best) == test.labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(test.size());
}

double probe_future(const ScoredParamStore& store, const AccumMask& accum, int task,
                    const Dataset& test, const TILRunConfig& config) {
    if (config.mode == TILRunConfig::Mode::SoftnetInference) {
        RngStream rng(config.seed, "probe-noise-" + std::to_string(task));
        SoftMask soft = inject_inference_noise(accum, config.inference_eps, rng);
        return evaluate(store, soft.layers, task, test);
    }
    return evaluate(store, as_real(accum), task, test);
}

TILResult run_sequence(const TaskStream& stream, const TILRunConfig& config) {
    if (stream.tasks.empty()) throw ConfigError("run_sequence: no tasks");
    const int T = static_cast<int>(stream.tasks.size());

    StoreSpec spec;
    spec.trunk_dims.push_back(stream.tasks[0].train.features.cols);
    for (auto h : config.hidden) spec.trunk_dims.push_back(h);
    for (int t = 1; t <= T; ++t)
        spec.head_classes[t] = stream.tasks[static_cast<std::size_t>(t - 1)].head_classes;

    ScoredParamStore store = init_store(spec, config.seed);
    TILResult result;

    // R_i: a freshly initialized network evaluated with an all-ones mask.
    if (config.compute_fwt && T > 1) {
        ScoredParamStore fresh = init_store(spec, mix_seed(config.seed, "random-probe"));
        RealMask ones = ones_mask(fresh.weight_shapes());
        for (int i = 2; i <= T; ++i)
            result.acc.R[i] = evaluate(fresh, ones, i, stream.tasks[static_cast<std::size_t>(i - 1)].test);
    }

    AccumMask accum = empty_accum(store.weight_shapes());
    for (int t = 1; t <= T; ++t) {
        const TaskData& td = stream.tasks[static_cast<std::size_t>(t - 1)];
        if (config.compute_fwt && t >= 2)
            result.acc.A[t - 1][t] = probe_future(store, accum, t, td.test, config);
        auto start = std::chrono::steady_clock::now();
        TaskMask mask;
        try {
            mask = train_task(store, accum, td.train, t, config);
        } catch (const TrainingDivergedError& e) {
            result.partial = true;
            result.error = e.what();
            break;
        }
        result.task_seconds.push_back(
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
        result.masks.push_back(mask);
        accum = accumulate(accum, mask);
        result.capacity_curve.push_back(static_cast<double>(accum.popcount()) /
                                        static_cast<double>(accum.numel()));
        for (int i = 1; i <= t; ++i) {
            RealMask eval_mask;
            if (config.mode == TILRunConfig::Mode::SoftnetInference) {
                RngStream rng(config.seed, "eval-noise-" + std::to_string(i));
                eval_mask = inject_inference_noise(result.masks[static_cast<std::size_t>(i - 1)],
                                                   config.inference_eps, rng)
                                .layers;
            } else {
                eval_mask = as_real(result.masks[static_cast<std::size_t>(i - 1)]);
            }
            result.acc.A[t][i] =
                evaluate(store, eval_mask, i, stream.tasks[static_cast<std::size_t>(i - 1)].test);
        }
    }

    int trained = static_cast<int>(result.masks.size());
    if (trained > 0) {
        result.metric_acc = metric_acc(result.acc, trained);
        result.metric_bwt = metric_bwt(result.acc, trained);
        if (config.compute_fwt && trained > 1) result.metric_fwt = metric_fwt(result.acc, trained);
        result.cap = capacity(result.masks);
    }
    return result;
}

namespace {
double require(const AccuracyMatrix& m, int j, int i) {
    auto row = m.A.find(j);
    if (row == m.A.end() || !row->second.count(i))
        throw ConfigError("metric: accuracy matrix missing entry A[" + std::to_string(j) + "][" +
                          std::to_string(i) + "]");
    return row->second.at(i);
}
}  // namespace

double metric_acc(const AccuracyMatrix& m, int num_tasks) {
    double sum = 0.0;
    for (int i = 1; i <= num_tasks; ++i) sum += require(m, num_tasks, i);
    return sum / static_cast<double>(num_tasks);
}

double metric_bwt(const AccuracyMatrix& m, int num_tasks) {
    if (num_tasks <= 1) return 0.0;
    double sum = 0.0;
    for (int i = 1; i < num_tasks; ++i) sum += require(m, num_tasks, i) - require(m, i, i);
    return sum / static_cast<double>(num_tasks - 1);
}

double metric_fwt(const AccuracyMatrix& m, int num_tasks) {
    if (num_tasks <= 1) throw ConfigError("metric_fwt: undefined for a single task");
    double sum = 0.0;
    for (int i = 2; i <= num_tasks; ++i) {
        if (!m.R.count(i)) throw ConfigError("metric_fwt: missing R for task " + std::to_string(i));
        sum += require(m, i - 1, i) - m.R.at(i);
    }
    return sum / static_cast<double>(num_tasks - 1);
}

}  // namespace subnetcl

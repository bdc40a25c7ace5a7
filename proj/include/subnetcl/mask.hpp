#pragma once

#include <cstdint>
#include <vector>

#include "subnetcl/matrix.hpp"
#include "subnetcl/rng.hpp"

namespace subnetcl {

struct MaskShape {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t numel() const { return rows * cols; }
    bool operator==(const MaskShape&) const = default;
};

using BinaryLayers = std::vector<std::vector<std::uint8_t>>;
/// Per-layer real mask values, flat row-major, used directly by forward().
using RealMask = std::vector<std::vector<double>>;

/// Per-task binary selection of weights, top-c% of scores per layer.
struct TaskMask {
    BinaryLayers layers;
    std::vector<MaskShape> shapes;
    double capacity_pct = 0.0;

    std::size_t popcount(std::size_t layer) const;
    std::size_t popcount() const;
    std::size_t numel() const;
};

/// Running elementwise OR of task masks m_1..m_t.
struct AccumMask {
    BinaryLayers layers;
    std::vector<MaskShape> shapes;
    int task_count = 0;

    std::size_t popcount() const;
    std::size_t numel() const;
};

/// Real mask in [0,1]: entries on the major support are exactly 1,
/// the rest lie in [0,1).
struct SoftMask {
    RealMask layers;
    BinaryLayers major;
    std::vector<MaskShape> shapes;
};

/// Weight-reuse fractions at a given task, both normalized by the task's own
/// selection size and by total weight count.
struct ReuseCategories {
    double all_used = 0.0;          // |M_t| / numel
    double per_task = 0.0;          // |m_t| / numel
    double new_of_selected = 0.0;   // |m_t \ M_{t-1}| / |m_t|
    double reused_of_selected = 0.0;
    double new_of_total = 0.0;      // |m_t \ M_{t-1}| / numel
    double reused_of_total = 0.0;
    double reused_for_all = 0.0;    // |m_1 & ... & m_t| / numel
};

struct ReuseReport {
    std::vector<ReuseCategories> per_task;  // index t-1 holds stats at task t
};

TaskMask topc_mask(const std::vector<Matrix>& scores, double capacity_pct);

AccumMask empty_accum(const std::vector<MaskShape>& shapes);
AccumMask accumulate(const AccumMask& prev, const TaskMask& next);

SoftMask make_soft_mask(const TaskMask& major, RngStream& rng);

/// Foreground stays exactly 1; background gets i.i.d. U(0, eps) noise.
SoftMask inject_inference_noise(const BinaryLayers& major,
                                const std::vector<MaskShape>& shapes,
                                double eps, RngStream& rng);
SoftMask inject_inference_noise(const TaskMask& major, double eps, RngStream& rng);
SoftMask inject_inference_noise(const AccumMask& major, double eps, RngStream& rng);

ReuseReport mask_stats(const std::vector<TaskMask>& masks, std::size_t upto);

RealMask as_real(const BinaryLayers& layers);
RealMask as_real(const TaskMask& m);
RealMask as_real(const AccumMask& m);
RealMask ones_mask(const std::vector<MaskShape>& shapes);

}  // namespace subnetcl

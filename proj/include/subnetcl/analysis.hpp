#pragma once

#include <functional>
#include <string>
#include <vector>

#include "subnetcl/data.hpp"
#include "subnetcl/mask.hpp"
#include "subnetcl/nn.hpp"

namespace subnetcl {

/// Jaccard overlap of task masks over all layers concatenated.
struct CorrelationMatrix {
    std::size_t size = 0;
    std::vector<double> v;  // row-major size x size
    double operator()(std::size_t i, std::size_t j) const { return v[i * size + j]; }
};

enum class ReuseCategory { ReusedPerTask, ReusedForAll, NewPerTask };

struct ProbePoint {
    double scale = 0.0;
    double dense_ratio = 0.0;
    double masked_ratio = 0.0;
};

struct SmoothnessProbe {
    std::vector<ProbePoint> points;
    std::size_t skipped_pairs = 0;  // fully masked perturbations
};

CorrelationMatrix mask_correlation(const std::vector<TaskMask>& masks);

/// Evaluates task `t` with the chosen category's coordinates removed from its
/// mask. Original masks are untouched.
double ablate_reused(const ScoredParamStore& store, const std::vector<TaskMask>& masks,
                     std::size_t task, ReuseCategory category, const Dataset& test);

/// Picks the category's coordinates at task t (1-based).
BinaryLayers category_coordinates(const std::vector<TaskMask>& masks, std::size_t task,
                                  ReuseCategory category);

using GradientFn = std::function<Vector(const Vector&)>;

/// Empirical gradient-smoothness ratios at perturbed parameter pairs, masked
/// vs dense. `gradient` maps a flat parameter vector to its loss gradient.
SmoothnessProbe lipschitz_probe(const GradientFn& gradient, const Vector& theta,
                                const Vector& mask, const std::vector<double>& scales,
                                std::size_t pairs, std::uint64_t seed);

/// Convenience wrapper probing the network's cross-entropy loss on a batch;
/// the flat parameter vector covers trunk weights only.
SmoothnessProbe lipschitz_probe_net(const ScoredParamStore& store, const RealMask& mask, int task,
                                    const Dataset& batch, const std::vector<double>& scales,
                                    std::size_t pairs, std::uint64_t seed);

}  // namespace subnetcl

#include "subnetcl/analysis.hpp"

#include <cmath>

#include "subnetcl/error.hpp"
#include "subnetcl/til.hpp"

namespace subnetcl {

CorrelationMatrix mask_correlation(const std::vector<TaskMask>& masks) {
    if (masks.empty()) throw ConfigError("mask_correlation: no masks");
    for (const auto& m : masks)
        if (m.shapes != masks[0].shapes)
            throw DimensionError("mask_correlation: shape mismatch");
    const std::size_t T = masks.size();
    CorrelationMatrix corr;
    corr.size = T;
    corr.v.assign(T * T, 0.0);
    for (std::size_t i = 0; i < T; ++i) {
        for (std::size_t j = i; j < T; ++j) {
            std::size_t inter = 0, uni = 0;
            for (std::size_t l = 0; l < masks[i].layers.size(); ++l) {
                const auto& a = masks[i].layers[l];
                const auto& b = masks[j].layers[l];
                for (std::size_t k = 0; k < a.size(); ++k) {
                    inter += a[k] & b[k];
                    uni += a[k] | b[k];
                }
            }
            double value = uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
            corr.v[i * T + j] = value;
            corr.v[j * T + i] = value;
        }
    }
    return corr;
}

BinaryLayers category_coordinates(const std::vector<TaskMask>& masks, std::size_t task,
                                  ReuseCategory category) {
    if (task == 0 || task > masks.size())
        throw ConfigError("category_coordinates: task out of range");
    const TaskMask& m = masks[task - 1];
    BinaryLayers out;
    // All-used support before task t.
    AccumMask prior = empty_accum(m.shapes);
    for (std::size_t i = 0; i + 1 < task; ++i) prior = accumulate(prior, masks[i]);

    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        std::vector<std::uint8_t> bits(m.layers[l].size(), 0);
        switch (category) {
            case ReuseCategory::ReusedPerTask:
                for (std::size_t i = 0; i < bits.size(); ++i)
                    bits[i] = m.layers[l][i] & prior.layers[l][i];
                break;
            case ReuseCategory::NewPerTask:
                for (std::size_t i = 0; i < bits.size(); ++i)
                    bits[i] = static_cast<std::uint8_t>(m.layers[l][i] & !prior.layers[l][i]);
                break;
            case ReuseCategory::ReusedForAll: {
                for (std::size_t i = 0; i < bits.size(); ++i) {
                    std::uint8_t common = 1;
                    for (std::size_t t = 0; t < task; ++t) common &= masks[t].layers[l][i];
                    bits[i] = common;
                }
                break;
            }
        }
        out.push_back(std::move(bits));
    }
    return out;
}

double ablate_reused(const ScoredParamStore& store, const std::vector<TaskMask>& masks,
                     std::size_t task, ReuseCategory category, const Dataset& test) {
    BinaryLayers removed = category_coordinates(masks, task, category);
    RealMask mask = as_real(masks[task - 1]);
    for (std::size_t l = 0; l < mask.size(); ++l)
        for (std::size_t i = 0; i < mask[l].size(); ++i)
            if (removed[l][i]) mask[l][i] = 0.0;
    return evaluate(store, mask, static_cast<int>(task), test);
}

SmoothnessProbe lipschitz_probe(const GradientFn& gradient, const Vector& theta,
                                const Vector& mask, const std::vector<double>& scales,
                                std::size_t pairs, std::uint64_t seed) {
    if (theta.size() != mask.size()) throw DimensionError("lipschitz_probe: mask length mismatch");
    for (double s : scales)
        if (s <= 0.0) throw ConfigError("lipschitz_probe: scales must be > 0");

    auto masked = [&](const Vector& x) {
        Vector out(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * mask[i];
        return out;
    };
    auto norm = [](const Vector& x) {
        double s = 0.0;
        for (double v : x) s += v * v;
        return std::sqrt(s);
    };

    SmoothnessProbe probe;
    Vector g_masked = gradient(masked(theta));
    Vector g_dense = gradient(theta);
    RngStream rng(seed, "lipschitz-probe");

    for (double scale : scales) {
        for (std::size_t p = 0; p < pairs; ++p) {
            Vector dir(theta.size());
            double dn = 0.0;
            for (auto& d : dir) {
                d = rng.normal();
                dn += d * d;
            }
            dn = std::sqrt(dn);
            Vector theta2(theta.size());
            Vector diff_masked(theta.size());
            double denom_masked = 0.0, denom_dense = 0.0;
            for (std::size_t i = 0; i < theta.size(); ++i) {
                double step = scale * dir[i] / dn;
                theta2[i] = theta[i] + step;
                denom_dense += step * step;
                diff_masked[i] = step * mask[i];
                denom_masked += diff_masked[i] * diff_masked[i];
            }
            denom_dense = std::sqrt(denom_dense);
            denom_masked = std::sqrt(denom_masked);
            if (denom_masked == 0.0) {
                ++probe.skipped_pairs;
                continue;
            }
            Vector g2_masked = gradient(masked(theta2));
            Vector g2_dense = gradient(theta2);
            double num_masked = 0.0, num_dense = 0.0;
            for (std::size_t i = 0; i < theta.size(); ++i) {
                double dm = g2_masked[i] - g_masked[i];
                double dd = g2_dense[i] - g_dense[i];
                num_masked += dm * dm;
                num_dense += dd * dd;
            }
            ProbePoint point;
            point.scale = scale;
            point.masked_ratio = std::sqrt(num_masked) / denom_masked;
            point.dense_ratio = std::sqrt(num_dense) / denom_dense;
            probe.points.push_back(point);
        }
    }
    return probe;
}

namespace {

Vector flat_trunk_weights(const ScoredParamStore& store) {
    Vector theta;
    for (const auto& l : store.layers)
        theta.insert(theta.end(), l.weights.v.begin(), l.weights.v.end());
    return theta;
}

}  // namespace

SmoothnessProbe lipschitz_probe_net(const ScoredParamStore& store, const RealMask& mask, int task,
                                    const Dataset& batch, const std::vector<double>& scales,
                                    std::size_t pairs, std::uint64_t seed) {
    RealMask flat_ones = ones_mask(store.weight_shapes());
    GradientFn gradient = [&store, &batch, task, &flat_ones](const Vector& theta) {
        ScoredParamStore copy = store;
        std::size_t off = 0;
        for (auto& l : copy.layers) {
            std::copy(theta.begin() + static_cast<std::ptrdiff_t>(off),
                      theta.begin() + static_cast<std::ptrdiff_t>(off + l.weights.size()),
                      l.weights.v.begin());
            off += l.weights.size();
        }
        auto [logits, cache] = forward(copy, flat_ones, task, batch.features);
        (void)logits;
        GradientBundle grads = backward(copy, flat_ones, cache, batch.labels);
        Vector flat;
        for (const auto& g : grads.d_weights) flat.insert(flat.end(), g.v.begin(), g.v.end());
        return flat;
    };
    Vector theta = flat_trunk_weights(store);
    Vector flat_mask;
    for (const auto& layer : mask) flat_mask.insert(flat_mask.end(), layer.begin(), layer.end());
    return lipschitz_probe(gradient, theta, flat_mask, scales, pairs, seed);
}

}  // namespace subnetcl

#include "subnetcl/mask.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "subnetcl/error.hpp"

namespace subnetcl {

namespace {
std::size_t count_ones(const std::vector<std::uint8_t>& bits) {
    return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}
}  // namespace

std::size_t TaskMask::popcount(std::size_t layer) const { return count_ones(layers[layer]); }

std::size_t TaskMask::popcount() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += count_ones(l);
    return n;
}

std::size_t TaskMask::numel() const {
    std::size_t n = 0;
    for (const auto& s : shapes) n += s.numel();
    return n;
}

std::size_t AccumMask::popcount() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += count_ones(l);
    return n;
}

std::size_t AccumMask::numel() const {
    std::size_t n = 0;
    for (const auto& s : shapes) n += s.numel();
    return n;
}

TaskMask topc_mask(const std::vector<Matrix>& scores, double capacity_pct) {
    if (capacity_pct <= 0.0 || capacity_pct > 100.0)
        throw ConfigError("topc_mask: capacity must be in (0, 100]");
    TaskMask mask;
    mask.capacity_pct = capacity_pct;
    for (const auto& s : scores) {
        if (s.size() == 0) throw ConfigError("topc_mask: empty layer");
        std::size_t n = s.size();
        auto k = static_cast<std::size_t>(std::ceil(capacity_pct / 100.0 * static_cast<double>(n)));
        k = std::min(k, n);
        std::vector<std::uint32_t> idx(n);
        std::iota(idx.begin(), idx.end(), 0u);
        // Higher score wins; ties go to the lower flat index.
        auto better = [&](std::uint32_t a, std::uint32_t b) {
            if (s.v[a] != s.v[b]) return s.v[a] > s.v[b];
            return a < b;
        };
        std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k - 1), idx.end(), better);
        std::vector<std::uint8_t> bits(n, 0);
        for (std::size_t i = 0; i < k; ++i) bits[idx[i]] = 1;
        mask.layers.push_back(std::move(bits));
        mask.shapes.push_back({s.rows, s.cols});
    }
    return mask;
}

AccumMask empty_accum(const std::vector<MaskShape>& shapes) {
    AccumMask m;
    m.shapes = shapes;
    for (const auto& s : shapes) m.layers.emplace_back(s.numel(), 0);
    return m;
}

AccumMask accumulate(const AccumMask& prev, const TaskMask& next) {
    if (prev.shapes != next.shapes) throw DimensionError("accumulate: shape mismatch");
    AccumMask out = prev;
    for (std::size_t l = 0; l < out.layers.size(); ++l)
        for (std::size_t i = 0; i < out.layers[l].size(); ++i)
            out.layers[l][i] |= next.layers[l][i];
    out.task_count = prev.task_count + 1;
    return out;
}

SoftMask make_soft_mask(const TaskMask& major, RngStream& rng) {
    SoftMask soft;
    soft.shapes = major.shapes;
    soft.major = major.layers;
    for (const auto& bits : major.layers) {
        std::vector<double> vals(bits.size());
        for (std::size_t i = 0; i < bits.size(); ++i)
            vals[i] = bits[i] ? 1.0 : rng.uniform();
        soft.layers.push_back(std::move(vals));
    }
    return soft;
}

SoftMask inject_inference_noise(const BinaryLayers& major,
                                const std::vector<MaskShape>& shapes,
                                double eps, RngStream& rng) {
    if (eps <= 0.0) throw ConfigError("inject_inference_noise: eps must be > 0");
    SoftMask soft;
    soft.shapes = shapes;
    soft.major = major;
    for (const auto& bits : major) {
        std::vector<double> vals(bits.size());
        for (std::size_t i = 0; i < bits.size(); ++i)
            vals[i] = bits[i] ? 1.0 : rng.uniform(0.0, eps);
        soft.layers.push_back(std::move(vals));
    }
    return soft;
}

SoftMask inject_inference_noise(const TaskMask& major, double eps, RngStream& rng) {
    return inject_inference_noise(major.layers, major.shapes, eps, rng);
}

SoftMask inject_inference_noise(const AccumMask& major, double eps, RngStream& rng) {
    return inject_inference_noise(major.layers, major.shapes, eps, rng);
}

ReuseReport mask_stats(const std::vector<TaskMask>& masks, std::size_t upto) {
    if (upto > masks.size()) throw ConfigError("mask_stats: upto exceeds mask count");
    ReuseReport report;
    if (upto == 0) return report;
    const auto numel = static_cast<double>(masks[0].numel());
    AccumMask acc = empty_accum(masks[0].shapes);
    BinaryLayers common = masks[0].layers;  // running AND
    for (std::size_t t = 0; t < upto; ++t) {
        const TaskMask& m = masks[t];
        ReuseCategories cat;
        std::size_t selected = 0, fresh = 0, reused = 0, all_common = 0;
        for (std::size_t l = 0; l < m.layers.size(); ++l) {
            for (std::size_t i = 0; i < m.layers[l].size(); ++i) {
                common[l][i] = static_cast<std::uint8_t>(common[l][i] & m.layers[l][i]);
                if (!m.layers[l][i]) continue;
                ++selected;
                if (acc.layers[l][i]) ++reused; else ++fresh;
            }
        }
        acc = accumulate(acc, m);
        for (const auto& lc : common) all_common += count_ones(lc);
        cat.all_used = static_cast<double>(acc.popcount()) / numel;
        cat.per_task = static_cast<double>(selected) / numel;
        cat.new_of_selected = selected ? static_cast<double>(fresh) / static_cast<double>(selected) : 0.0;
        cat.reused_of_selected = selected ? static_cast<double>(reused) / static_cast<double>(selected) : 0.0;
        cat.new_of_total = static_cast<double>(fresh) / numel;
        cat.reused_of_total = static_cast<double>(reused) / numel;
        cat.reused_for_all = static_cast<double>(all_common) / numel;
        report.per_task.push_back(cat);
    }
    return report;
}

RealMask as_real(const BinaryLayers& layers) {
    RealMask out;
    for (const auto& bits : layers) out.emplace_back(bits.begin(), bits.end());
    return out;
}

RealMask as_real(const TaskMask& m) { return as_real(m.layers); }
RealMask as_real(const AccumMask& m) { return as_real(m.layers); }

RealMask ones_mask(const std::vector<MaskShape>& shapes) {
    RealMask out;
    for (const auto& s : shapes) out.emplace_back(s.numel(), 1.0);
    return out;
}

}  // namespace subnetcl

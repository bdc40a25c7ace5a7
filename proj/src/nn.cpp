#include "subnetcl/nn.hpp"

#include <cmath>
#include <string>

#include "subnetcl/error.hpp"

namespace subnetcl {

std::vector<MaskShape> ScoredParamStore::weight_shapes() const {
    std::vector<MaskShape> shapes;
    for (const auto& l : layers) shapes.push_back({l.weights.rows, l.weights.cols});
    return shapes;
}

std::vector<Matrix> ScoredParamStore::score_view() const {
    std::vector<Matrix> scores;
    for (const auto& l : layers) scores.push_back(l.scores);
    return scores;
}

std::size_t ScoredParamStore::input_dim() const { return layers.front().weights.rows; }
std::size_t ScoredParamStore::feature_dim() const { return layers.back().weights.cols; }

namespace {

Matrix kaiming_uniform(std::size_t fan_in, std::size_t fan_out, RngStream& rng) {
    double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    Matrix w(fan_in, fan_out);
    for (auto& x : w.v) x = rng.uniform(-bound, bound);
    return w;
}

void check_mask(const ScoredParamStore& store, const RealMask& mask) {
    if (mask.size() != store.layers.size())
        throw DimensionError("mask layer count does not match store");
    for (std::size_t l = 0; l < mask.size(); ++l)
        if (mask[l].size() != store.layers[l].weights.size())
            throw DimensionError("mask shape does not match layer " + std::to_string(l));
}

Matrix masked_weights(const Matrix& w, const std::vector<double>& m) {
    Matrix out = w;
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] *= m[i];
    return out;
}

}  // namespace

ScoredParamStore init_store(const StoreSpec& spec, std::uint64_t seed) {
    if (spec.trunk_dims.size() < 2) throw ConfigError("init_store: need at least one trunk layer");
    for (auto d : spec.trunk_dims)
        if (d == 0) throw ConfigError("init_store: zero-size layer");
    ScoredParamStore store;
    store.rng_seed = seed;
    RngStream winit(seed, "init-weights");
    RngStream sinit(seed, "init-scores");
    for (std::size_t l = 0; l + 1 < spec.trunk_dims.size(); ++l) {
        DenseLayer layer;
        layer.weights = kaiming_uniform(spec.trunk_dims[l], spec.trunk_dims[l + 1], winit);
        layer.scores = Matrix(spec.trunk_dims[l], spec.trunk_dims[l + 1]);
        for (auto& x : layer.scores.v) x = sinit.uniform();
        layer.bias = Vector(spec.trunk_dims[l + 1], 0.0);
        store.layers.push_back(std::move(layer));
    }
    std::size_t feat = spec.trunk_dims.back();
    for (const auto& [task, classes] : spec.head_classes) {
        if (classes == 0) throw ConfigError("init_store: zero-class head");
        RngStream hinit(seed, "init-head-" + std::to_string(task));
        Head head;
        head.weights = kaiming_uniform(feat, classes, hinit);
        head.bias = Vector(classes, 0.0);
        store.heads.emplace(task, std::move(head));
    }
    return store;
}

std::pair<Matrix, ForwardCache> forward(const ScoredParamStore& store, const RealMask& mask,
                                        int task, const Matrix& batch) {
    check_mask(store, mask);
    if (batch.cols != store.input_dim())
        throw DimensionError("forward: batch feature count does not match input dim");
    auto head_it = store.heads.find(task);
    if (head_it == store.heads.end())
        throw MissingHeadError("forward: no head for task " + std::to_string(task));

    ForwardCache cache;
    cache.input = batch;
    cache.task = task;
    cache.store_version = store.version;

    Matrix x = batch;
    for (std::size_t l = 0; l < store.layers.size(); ++l) {
        const auto& layer = store.layers[l];
        Matrix mw = masked_weights(layer.weights, mask[l]);
        Matrix z = matmul(x, mw);
        for (std::size_t i = 0; i < z.rows; ++i)
            for (std::size_t j = 0; j < z.cols; ++j) z(i, j) += layer.bias[j];
        cache.preact.push_back(z);
        for (auto& v : z.v) v = v > 0.0 ? v : 0.0;
        cache.act.push_back(z);
        cache.masked_w.push_back(std::move(mw));
        x = std::move(z);
    }
    const Head& head = head_it->second;
    Matrix logits = matmul(x, head.weights);
    for (std::size_t i = 0; i < logits.rows; ++i)
        for (std::size_t j = 0; j < logits.cols; ++j) logits(i, j) += head.bias[j];
    cache.logits = logits;
    return {logits, cache};
}

Matrix forward_features(const ScoredParamStore& store, const RealMask& mask, const Matrix& batch) {
    check_mask(store, mask);
    if (batch.cols != store.input_dim())
        throw DimensionError("forward_features: batch feature count does not match input dim");
    Matrix x = batch;
    for (std::size_t l = 0; l < store.layers.size(); ++l) {
        const auto& layer = store.layers[l];
        Matrix mw = masked_weights(layer.weights, mask[l]);
        Matrix z = matmul(x, mw);
        for (std::size_t i = 0; i < z.rows; ++i)
            for (std::size_t j = 0; j < z.cols; ++j) z(i, j) += layer.bias[j];
        for (auto& v : z.v) v = v > 0.0 ? v : 0.0;
        x = std::move(z);
    }
    return x;
}

double softmax_xent(const Matrix& logits, const std::vector<int>& labels) {
    if (labels.size() != logits.rows) throw DimensionError("softmax_xent: label count mismatch");
    double loss = 0.0;
    for (std::size_t i = 0; i < logits.rows; ++i) {
        double mx = logits(i, 0);
        for (std::size_t j = 1; j < logits.cols; ++j) mx = std::max(mx, logits(i, j));
        double sum = 0.0;
        for (std::size_t j = 0; j < logits.cols; ++j) sum += std::exp(logits(i, j) - mx);
        loss += std::log(sum) - (logits(i, static_cast<std::size_t>(labels[i])) - mx);
    }
    return loss / static_cast<double>(logits.rows);
}

namespace {

/// Shared trunk backprop from d(trunk output). Fills weight/score/bias grads.
void backprop_trunk(const ScoredParamStore& store, const RealMask& mask,
                    const ForwardCache& cache, Matrix delta, GradientBundle& grads) {
    std::size_t L = store.layers.size();
    grads.d_weights.resize(L);
    grads.d_scores.resize(L);
    grads.d_bias.resize(L);
    for (std::size_t li = L; li-- > 0;) {
        // ReLU gate
        for (std::size_t i = 0; i < delta.v.size(); ++i)
            if (cache.preact[li].v[i] <= 0.0) delta.v[i] = 0.0;
        const Matrix& below = li == 0 ? cache.input : cache.act[li - 1];
        Matrix d_masked = matmul_trans_a(below, delta);  // dL/d(theta .* m)
        const auto& layer = store.layers[li];
        Matrix dw = d_masked;
        Matrix ds = d_masked;
        for (std::size_t i = 0; i < dw.v.size(); ++i) {
            dw.v[i] *= mask[li][i];            // chain rule through the mask
            ds.v[i] *= layer.weights.v[i];     // straight-through to scores
        }
        Vector db(delta.cols, 0.0);
        for (std::size_t i = 0; i < delta.rows; ++i)
            for (std::size_t j = 0; j < delta.cols; ++j) db[j] += delta(i, j);
        grads.d_weights[li] = std::move(dw);
        grads.d_scores[li] = std::move(ds);
        grads.d_bias[li] = std::move(db);
        if (li > 0) delta = matmul_trans_b(delta, cache.masked_w[li]);
    }
}

}  // namespace

GradientBundle backward(const ScoredParamStore& store, const RealMask& mask,
                        const ForwardCache& cache, const std::vector<int>& labels) {
    check_mask(store, mask);
    if (cache.store_version != store.version)
        throw InvalidCacheError("backward: cache is stale (store was updated)");
    if (labels.size() != cache.logits.rows)
        throw DimensionError("backward: label count mismatch");

    // d(mean CE)/d(logits) = (softmax - onehot) / batch
    Matrix dlogits = cache.logits;
    double inv_batch = 1.0 / static_cast<double>(dlogits.rows);
    for (std::size_t i = 0; i < dlogits.rows; ++i) {
        double mx = dlogits(i, 0);
        for (std::size_t j = 1; j < dlogits.cols; ++j) mx = std::max(mx, dlogits(i, j));
        double sum = 0.0;
        for (std::size_t j = 0; j < dlogits.cols; ++j) {
            dlogits(i, j) = std::exp(dlogits(i, j) - mx);
            sum += dlogits(i, j);
        }
        for (std::size_t j = 0; j < dlogits.cols; ++j) dlogits(i, j) /= sum;
        dlogits(i, static_cast<std::size_t>(labels[i])) -= 1.0;
        for (std::size_t j = 0; j < dlogits.cols; ++j) dlogits(i, j) *= inv_batch;
    }

    GradientBundle grads;
    grads.task = cache.task;
    grads.has_head = true;
    const Head& head = store.heads.at(cache.task);
    const Matrix& features = store.layers.empty() ? cache.input : cache.act.back();
    grads.d_head_w = matmul_trans_a(features, dlogits);
    grads.d_head_b = Vector(dlogits.cols, 0.0);
    for (std::size_t i = 0; i < dlogits.rows; ++i)
        for (std::size_t j = 0; j < dlogits.cols; ++j) grads.d_head_b[j] += dlogits(i, j);

    Matrix delta = matmul_trans_b(dlogits, head.weights);
    backprop_trunk(store, mask, cache, std::move(delta), grads);
    return grads;
}

GradientBundle backward_from_features(const ScoredParamStore& store, const RealMask& mask,
                                      const ForwardCache& cache, const Matrix& d_features) {
    check_mask(store, mask);
    if (cache.store_version != store.version)
        throw InvalidCacheError("backward_from_features: cache is stale");
    GradientBundle grads;
    grads.task = cache.task;
    grads.has_head = false;
    backprop_trunk(store, mask, cache, d_features, grads);
    return grads;
}

OptimizerState make_optimizer(const ScoredParamStore& store, OptimizerState::Kind kind,
                              double lr, int head_task) {
    OptimizerState opt;
    opt.kind = kind;
    opt.lr = lr;
    opt.head_task = head_task;
    if (kind == OptimizerState::Kind::Adam) {
        for (const auto& l : store.layers) {
            opt.m_w.emplace_back(l.weights.rows, l.weights.cols);
            opt.v_w.emplace_back(l.weights.rows, l.weights.cols);
            opt.m_s.emplace_back(l.scores.rows, l.scores.cols);
            opt.v_s.emplace_back(l.scores.rows, l.scores.cols);
            opt.m_b.emplace_back(l.bias.size(), 0.0);
            opt.v_b.emplace_back(l.bias.size(), 0.0);
        }
        if (head_task >= 0 && store.heads.count(head_task)) {
            const Head& h = store.heads.at(head_task);
            opt.m_hw = Matrix(h.weights.rows, h.weights.cols);
            opt.v_hw = Matrix(h.weights.rows, h.weights.cols);
            opt.m_hb = Vector(h.bias.size(), 0.0);
            opt.v_hb = Vector(h.bias.size(), 0.0);
        }
    }
    return opt;
}

namespace {

struct AdamScale {
    double c1, c2;  // bias-correction factors for the current step
};

inline void adam_coord(double& param, double& m, double& v, double g,
                       const OptimizerState& opt, const AdamScale& s) {
    m = opt.beta1 * m + (1.0 - opt.beta1) * g;
    v = opt.beta2 * v + (1.0 - opt.beta2) * g * g;
    param -= opt.lr * (m * s.c1) / (std::sqrt(v * s.c2) + opt.eps);
}

}  // namespace

void apply_update(ScoredParamStore& store, const GradientBundle& grads, OptimizerState& opt,
                  const UpdateOptions& options) {
    if (grads.d_weights.size() != store.layers.size())
        throw DimensionError("apply_update: gradient layer count mismatch");
    bool adam = opt.kind == OptimizerState::Kind::Adam;
    ++opt.step;
    AdamScale scale{1.0, 1.0};
    if (adam) {
        scale.c1 = 1.0 / (1.0 - std::pow(opt.beta1, opt.step));
        scale.c2 = 1.0 / (1.0 - std::pow(opt.beta2, opt.step));
    }

    for (std::size_t l = 0; l < store.layers.size(); ++l) {
        auto& layer = store.layers[l];
        const auto* gate = options.freeze_gate ? &(*options.freeze_gate)[l] : nullptr;
        const auto* wscale = options.weight_grad_scale ? &(*options.weight_grad_scale)[l] : nullptr;
        for (std::size_t i = 0; i < layer.weights.v.size(); ++i) {
            if (gate && (*gate)[i]) continue;  // frozen: weight and moments untouched
            double g = grads.d_weights[l].v[i];
            if (wscale) g *= (*wscale)[i];
            if (adam)
                adam_coord(layer.weights.v[i], opt.m_w[l].v[i], opt.v_w[l].v[i], g, opt, scale);
            else
                layer.weights.v[i] -= opt.lr * g;
        }
        if (options.update_scores) {
            for (std::size_t i = 0; i < layer.scores.v.size(); ++i) {
                double g = grads.d_scores[l].v[i];
                if (adam)
                    adam_coord(layer.scores.v[i], opt.m_s[l].v[i], opt.v_s[l].v[i], g, opt, scale);
                else
                    layer.scores.v[i] -= opt.lr * g;
            }
        }
        if (options.update_biases) {
            for (std::size_t i = 0; i < layer.bias.size(); ++i) {
                double g = grads.d_bias[l][i];
                if (adam)
                    adam_coord(layer.bias[i], opt.m_b[l][i], opt.v_b[l][i], g, opt, scale);
                else
                    layer.bias[i] -= opt.lr * g;
            }
        }
    }

    if (options.update_head && grads.has_head) {
        if (grads.task != opt.head_task)
            throw ConfigError("apply_update: optimizer holds moments for a different head");
        Head& head = store.heads.at(grads.task);
        for (std::size_t i = 0; i < head.weights.v.size(); ++i) {
            double g = grads.d_head_w.v[i];
            if (adam)
                adam_coord(head.weights.v[i], opt.m_hw.v[i], opt.v_hw.v[i], g, opt, scale);
            else
                head.weights.v[i] -= opt.lr * g;
        }
        for (std::size_t i = 0; i < head.bias.size(); ++i) {
            double g = grads.d_head_b[i];
            if (adam)
                adam_coord(head.bias[i], opt.m_hb[i], opt.v_hb[i], g, opt, scale);
            else
                head.bias[i] -= opt.lr * g;
        }
    }
    ++store.version;
}

}  // namespace subnetcl

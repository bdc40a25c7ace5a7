#include "subnetcl/fscil.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <string>

#include "subnetcl/error.hpp"
#include "subnetcl/til.hpp"

namespace subnetcl {

namespace {
constexpr int kBaseHead = 1;

std::map<int, int> label_remap(const std::vector<int>& classes) {
    std::map<int, int> remap;
    for (std::size_t i = 0; i < classes.size(); ++i) remap[classes[i]] = static_cast<int>(i);
    return remap;
}
}  // namespace

BaseResult train_base(ScoredParamStore& store, const SessionSpec& base, const FSCILConfig& config) {
    if (base.classes.size() < 2) throw ConfigError("train_base: base session needs >= 2 classes");
    OptimizerState opt = make_optimizer(store, config.base_optimizer, config.base_lr, kBaseHead);
    RngStream shuffle_rng(config.seed, "fscil-base-shuffle");
    RngStream minor_rng(config.seed, "fscil-minor-mask");
    auto remap = label_remap(base.classes);

    std::vector<std::size_t> order(base.train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto bs = static_cast<std::size_t>(config.batch_size);

    for (int epoch = 0; epoch < config.base_epochs; ++epoch) {
        TaskMask major = topc_mask(store.score_view(), config.capacity_pct);
        SoftMask soft = make_soft_mask(major, minor_rng);
        UpdateOptions options;
        options.weight_grad_scale = &soft.layers;  // theta step scaled by m_soft
        options.update_scores = true;              // m_soft = 1 for score exploration
        shuffle_rng.shuffle(order);
        for (std::size_t lo = 0; lo < order.size(); lo += bs) {
            std::size_t hi = std::min(order.size(), lo + bs);
            Matrix batch(hi - lo, base.train.features.cols);
            std::vector<int> labels(hi - lo);
            for (std::size_t r = lo; r < hi; ++r) {
                for (std::size_t j = 0; j < batch.cols; ++j)
                    batch(r - lo, j) = base.train.features(order[r], j);
                labels[r - lo] = remap.at(base.train.labels[order[r]]);
            }
            auto [logits, cache] = forward(store, soft.layers, kBaseHead, batch);
            double loss = softmax_xent(logits, labels);
            if (!std::isfinite(loss))
                throw TrainingDivergedError("train_base: non-finite loss at epoch " +
                                            std::to_string(epoch));
            GradientBundle grads = backward(store, soft.layers, cache, labels);
            apply_update(store, grads, opt, options);
        }
    }

    BaseResult result;
    // Final mask: major support from post-training scores, minor part from one
    // last seeded draw that stays frozen for all incremental sessions.
    TaskMask major = topc_mask(store.score_view(), config.capacity_pct);
    result.soft_mask = make_soft_mask(major, minor_rng);

    Dataset eval = base.train;
    for (auto& l : eval.labels) l = remap.at(l);
    result.train_accuracy = evaluate(store, result.soft_mask.layers, kBaseHead, eval);
    return result;
}

void add_prototypes(PrototypeStore& protos, const ScoredParamStore& store, const SoftMask& soft,
                    const Dataset& data, const std::vector<int>& classes) {
    Matrix features = forward_features(store, soft.layers, data.features);
    std::set<int> wanted(classes.begin(), classes.end());
    std::map<int, std::pair<Vector, int>> sums;
    for (int c : classes) sums[c] = {Vector(features.cols, 0.0), 0};
    for (std::size_t i = 0; i < features.rows; ++i) {
        int y = data.labels[i];
        if (!wanted.count(y)) continue;
        auto& [sum, n] = sums[y];
        for (std::size_t j = 0; j < features.cols; ++j) sum[j] += features(i, j);
        ++n;
    }
    for (auto& [c, entry] : sums) {
        auto& [sum, n] = entry;
        if (n == 0) throw ConfigError("compute_prototypes: class " + std::to_string(c) +
                                      " has no samples");
        for (auto& x : sum) x /= static_cast<double>(n);
        protos.prototypes[c] = {std::move(sum), n};
    }
}

PrototypeStore compute_prototypes(const ScoredParamStore& store, const SoftMask& soft,
                                  const Dataset& data, const std::vector<int>& classes) {
    PrototypeStore protos;
    add_prototypes(protos, store, soft, data, classes);
    return protos;
}

double cosine_distance(const Vector& a, const Vector& b) {
    if (a.size() != b.size()) throw DimensionError("cosine_distance: length mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0)
        throw ConfigError("cosine_distance: zero-norm vector");
    return 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
}

double prototype_loss(const Matrix& features, const std::vector<int>& labels,
                      const PrototypeStore& protos, const std::vector<int>& all_classes,
                      double temperature, Matrix* d_features) {
    if (features.rows != labels.size()) throw DimensionError("prototype_loss: label mismatch");
    const std::size_t K = all_classes.size();
    std::vector<const Vector*> prot(K);
    std::vector<double> prot_norm(K);
    for (std::size_t k = 0; k < K; ++k) {
        auto it = protos.prototypes.find(all_classes[k]);
        if (it == protos.prototypes.end())
            throw ConfigError("prototype_loss: missing prototype for class " +
                              std::to_string(all_classes[k]));
        prot[k] = &it->second.first;
        double n = 0.0;
        for (double x : *prot[k]) n += x * x;
        if (n == 0.0) throw ConfigError("prototype_loss: zero-norm prototype");
        prot_norm[k] = std::sqrt(n);
    }
    std::map<int, std::size_t> class_pos;
    for (std::size_t k = 0; k < K; ++k) class_pos[all_classes[k]] = k;

    if (d_features) *d_features = Matrix(features.rows, features.cols);
    double total = 0.0;
    const double inv_batch = 1.0 / static_cast<double>(features.rows);
    std::vector<double> cos_sim(K), q(K);
    for (std::size_t i = 0; i < features.rows; ++i) {
        double fn = 0.0;
        for (std::size_t j = 0; j < features.cols; ++j) fn += features(i, j) * features(i, j);
        if (fn == 0.0) throw ConfigError("prototype_loss: zero-norm feature");
        fn = std::sqrt(fn);

        double mx = -1e300;
        for (std::size_t k = 0; k < K; ++k) {
            double dot = 0.0;
            for (std::size_t j = 0; j < features.cols; ++j) dot += features(i, j) * (*prot[k])[j];
            cos_sim[k] = dot / (fn * prot_norm[k]);
            // logit = -d / tau = (cos - 1) / tau
            q[k] = (cos_sim[k] - 1.0) / temperature;
            mx = std::max(mx, q[k]);
        }
        double sum = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
            q[k] = std::exp(q[k] - mx);
            sum += q[k];
        }
        auto yit = class_pos.find(labels[i]);
        if (yit == class_pos.end())
            throw ConfigError("prototype_loss: label not among encountered classes");
        std::size_t y = yit->second;
        total += -std::log(q[y] / sum);

        if (d_features) {
            for (std::size_t k = 0; k < K; ++k) q[k] /= sum;
            for (std::size_t k = 0; k < K; ++k) {
                double coeff = (q[k] - (k == y ? 1.0 : 0.0)) / temperature * inv_batch;
                if (coeff == 0.0) continue;
                // d cos(f, p_k) / df = (p_k / |p_k| - cos * f / |f|) / |f|
                for (std::size_t j = 0; j < features.cols; ++j) {
                    double dcos = ((*prot[k])[j] / prot_norm[k] -
                                   cos_sim[k] * features(i, j) / fn) / fn;
                    (*d_features)(i, j) += coeff * dcos;
                }
            }
        }
    }
    return total * inv_batch;
}

void train_incremental(ScoredParamStore& store, const SoftMask& soft, const SessionSpec& session,
                       PrototypeStore& protos, const FSCILConfig& config) {
    for (int c : session.classes)
        if (protos.prototypes.count(c))
            throw ConfigError("train_incremental: session class " + std::to_string(c) +
                              " overlaps an earlier session");

    // New-class prototypes enter the loss before finetuning starts.
    add_prototypes(protos, store, soft, session.train, session.classes);
    std::vector<int> all_classes;
    for (const auto& [c, p] : protos.prototypes) all_classes.push_back(c);

    // Training set = D^t plus exemplars saved from earlier few-shot sessions.
    std::size_t extra = protos.exemplar_labels.size();
    Matrix xs(session.train.size() + extra, session.train.features.cols);
    std::vector<int> ys(xs.rows);
    for (std::size_t i = 0; i < session.train.size(); ++i) {
        for (std::size_t j = 0; j < xs.cols; ++j) xs(i, j) = session.train.features(i, j);
        ys[i] = session.train.labels[i];
    }
    for (std::size_t i = 0; i < extra; ++i) {
        for (std::size_t j = 0; j < xs.cols; ++j)
            xs(session.train.size() + i, j) = protos.exemplar_features(i, j);
        ys[session.train.size() + i] = protos.exemplar_labels[i];
    }

    // Gradient multiplier: minor coordinates keep their soft value, major
    // support gets exactly zero.
    RealMask minor_scale = soft.layers;
    for (std::size_t l = 0; l < minor_scale.size(); ++l)
        for (std::size_t i = 0; i < minor_scale[l].size(); ++i)
            if (soft.major[l][i]) minor_scale[l][i] = 0.0;

    OptimizerState opt = make_optimizer(store, OptimizerState::Kind::Sgd,
                                        config.incremental_lr, -1);
    UpdateOptions options;
    options.freeze_gate = &soft.major;
    options.weight_grad_scale = &minor_scale;
    options.update_scores = false;
    options.update_biases = false;
    options.update_head = false;

    RngStream shuffle_rng(config.seed, "fscil-inc-shuffle-" + std::to_string(session.index));
    std::vector<std::size_t> order(xs.rows);
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto bs = static_cast<std::size_t>(config.batch_size);

    for (int epoch = 0; epoch < config.incremental_epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        for (std::size_t lo = 0; lo < order.size(); lo += bs) {
            std::size_t hi = std::min(order.size(), lo + bs);
            Matrix batch(hi - lo, xs.cols);
            std::vector<int> labels(hi - lo);
            for (std::size_t r = lo; r < hi; ++r) {
                for (std::size_t j = 0; j < xs.cols; ++j) batch(r - lo, j) = xs(order[r], j);
                labels[r - lo] = ys[order[r]];
            }
            auto [logits, cache] = forward(store, soft.layers, kBaseHead, batch);
            (void)logits;
            const Matrix& feats = cache.act.back();
            Matrix d_features;
            double loss = prototype_loss(feats, labels, protos, all_classes,
                                         config.softmax_temperature, &d_features);
            if (!std::isfinite(loss))
                throw TrainingDivergedError("train_incremental: non-finite loss");
            GradientBundle grads = backward_from_features(store, soft.layers, cache, d_features);
            apply_update(store, grads, opt, options);
        }
    }

    // Refresh this session's prototypes under the finetuned weights and bank
    // its shots as exemplars for later sessions.
    add_prototypes(protos, store, soft, session.train, session.classes);
    Matrix merged(protos.exemplar_labels.size() + session.train.size(), xs.cols);
    for (std::size_t i = 0; i < protos.exemplar_labels.size(); ++i)
        for (std::size_t j = 0; j < xs.cols; ++j) merged(i, j) = protos.exemplar_features(i, j);
    for (std::size_t i = 0; i < session.train.size(); ++i)
        for (std::size_t j = 0; j < xs.cols; ++j)
            merged(protos.exemplar_labels.size() + i, j) = session.train.features(i, j);
    protos.exemplar_features = std::move(merged);
    protos.exemplar_labels.insert(protos.exemplar_labels.end(), session.train.labels.begin(),
                                  session.train.labels.end());
}

std::vector<int> ncm_classify_batch(const ScoredParamStore& store, const SoftMask& soft,
                                    const PrototypeStore& protos, const Matrix& samples) {
    if (protos.prototypes.empty()) throw ConfigError("ncm_classify: no prototypes");
    Matrix features = forward_features(store, soft.layers, samples);
    std::vector<int> out(features.rows);
    for (std::size_t i = 0; i < features.rows; ++i) {
        double best = 0.0;
        int best_class = -1;
        for (const auto& [c, entry] : protos.prototypes) {
            const Vector& p = entry.first;
            double d = 0.0;
            for (std::size_t j = 0; j < features.cols; ++j) {
                double diff = features(i, j) - p[j];
                d += diff * diff;
            }
            // std::map iterates in ascending class id, so strict < breaks
            // ties toward the lowest class id.
            if (best_class < 0 || d < best) {
                best = d;
                best_class = c;
            }
        }
        out[i] = best_class;
    }
    return out;
}

int ncm_classify(const ScoredParamStore& store, const SoftMask& soft,
                 const PrototypeStore& protos, const Vector& sample) {
    Matrix m(1, sample.size());
    m.v = sample;
    return ncm_classify_batch(store, soft, protos, m)[0];
}

FSCILResult run_fscil(const std::vector<SessionSpec>& sessions, const FSCILConfig& config) {
    if (sessions.empty()) throw ConfigError("run_fscil: no sessions");

    StoreSpec spec;
    spec.trunk_dims.push_back(sessions[0].train.features.cols);
    for (auto h : config.hidden) spec.trunk_dims.push_back(h);
    spec.head_classes[kBaseHead] = sessions[0].classes.size();
    ScoredParamStore store = init_store(spec, config.seed);

    FSCILResult result;
    BaseResult base = train_base(store, sessions[0], config);
    result.soft_mask = base.soft_mask;
    result.base_train_accuracy = base.train_accuracy;
    result.prototypes =
        compute_prototypes(store, result.soft_mask, sessions[0].train, sessions[0].classes);

    // Cumulative NCM evaluation over every class seen so far.
    auto evaluate_cumulative = [&](std::size_t upto) {
        std::size_t total = 0, correct = 0;
        for (std::size_t s = 0; s <= upto; ++s) {
            auto preds = ncm_classify_batch(store, result.soft_mask, result.prototypes,
                                            sessions[s].test.features);
            for (std::size_t i = 0; i < preds.size(); ++i) {
                ++total;
                if (preds[i] == sessions[s].test.labels[i]) ++correct;
            }
        }
        return static_cast<double>(correct) / static_cast<double>(total);
    };

    result.session_accuracy.push_back(evaluate_cumulative(0));
    for (std::size_t s = 1; s < sessions.size(); ++s) {
        train_incremental(store, result.soft_mask, sessions[s], result.prototypes, config);
        result.session_accuracy.push_back(evaluate_cumulative(s));
    }
    return result;
}

}  // namespace subnetcl

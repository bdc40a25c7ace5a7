#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "subnetcl/mask.hpp"
#include "subnetcl/matrix.hpp"
#include "subnetcl/rng.hpp"

namespace subnetcl {

/// One masked trunk layer: weights, bias, and the learnable weight scores
/// whose top-c% ranking selects the subnetwork.
struct DenseLayer {
    Matrix weights;
    Matrix scores;
    Vector bias;
};

/// Per-task linear output layer. Heads are never masked or score-ranked.
struct Head {
    Matrix weights;  // (feature_dim x classes)
    Vector bias;
};

struct StoreSpec {
    std::vector<std::size_t> trunk_dims;  // input, hidden..., feature
    std::map<int, std::size_t> head_classes;
};

struct ScoredParamStore {
    std::vector<DenseLayer> layers;
    std::map<int, Head> heads;
    std::uint64_t rng_seed = 0;
    std::uint64_t version = 0;  // bumped by apply_update; stale caches are rejected

    std::vector<MaskShape> weight_shapes() const;
    std::vector<Matrix> score_view() const;
    std::size_t input_dim() const;
    std::size_t feature_dim() const;
};

struct ForwardCache {
    Matrix input;
    std::vector<Matrix> preact;       // per trunk layer, before ReLU
    std::vector<Matrix> act;          // per trunk layer, after ReLU
    std::vector<Matrix> masked_w;     // theta .* m used in the pass
    Matrix logits;
    int task = 0;
    std::uint64_t store_version = 0;
};

struct GradientBundle {
    std::vector<Matrix> d_weights;
    std::vector<Matrix> d_scores;
    std::vector<Vector> d_bias;
    Matrix d_head_w;
    Vector d_head_b;
    int task = 0;
    bool has_head = false;
};

struct OptimizerState {
    enum class Kind { Sgd, Adam };
    Kind kind = Kind::Adam;
    double lr = 1e-3;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    long step = 0;
    std::vector<Matrix> m_w, v_w, m_s, v_s;
    std::vector<Vector> m_b, v_b;
    Matrix m_hw, v_hw;
    Vector m_hb, v_hb;
    int head_task = -1;
};

struct UpdateOptions {
    const BinaryLayers* freeze_gate = nullptr;  // 1 = weight is frozen (M_{t-1})
    const RealMask* weight_grad_scale = nullptr;  // elementwise on d_weights
    bool update_scores = true;
    bool update_biases = true;
    bool update_head = true;
};

ScoredParamStore init_store(const StoreSpec& spec, std::uint64_t seed);

/// f(x; theta .* m) through ReLU trunk layers and the task head.
std::pair<Matrix, ForwardCache> forward(const ScoredParamStore& store, const RealMask& mask,
                                        int task, const Matrix& batch);
/// Penultimate activations (the FSCIL feature space).
Matrix forward_features(const ScoredParamStore& store, const RealMask& mask, const Matrix& batch);

double softmax_xent(const Matrix& logits, const std::vector<int>& labels);

/// Analytic gradients of mean softmax cross-entropy. Score gradients follow
/// the straight-through rule ds = dmasked .* theta; weight gradients are
/// dmasked .* m.
GradientBundle backward(const ScoredParamStore& store, const RealMask& mask,
                        const ForwardCache& cache, const std::vector<int>& labels);

/// Backprop from an externally supplied gradient on the trunk output
/// (prototype losses); head gradients are not produced.
GradientBundle backward_from_features(const ScoredParamStore& store, const RealMask& mask,
                                      const ForwardCache& cache, const Matrix& d_features);

OptimizerState make_optimizer(const ScoredParamStore& store, OptimizerState::Kind kind,
                              double lr, int head_task);

/// Frozen coordinates are skipped entirely: neither the weight nor its
/// optimizer moments are touched, so they stay bit-identical.
void apply_update(ScoredParamStore& store, const GradientBundle& grads, OptimizerState& opt,
                  const UpdateOptions& options = {});

}  // namespace subnetcl

#pragma once

#include <map>
#include <vector>

#include "subnetcl/data.hpp"
#include "subnetcl/mask.hpp"
#include "subnetcl/nn.hpp"

namespace subnetcl {

struct FSCILConfig {
    double capacity_pct = 80.0;
    int base_epochs = 50;
    double base_lr = 1e-3;
    OptimizerState::Kind base_optimizer = OptimizerState::Kind::Adam;
    int incremental_epochs = 6;
    double incremental_lr = 0.02;
    int batch_size = 32;
    std::uint64_t seed = 0;
    double softmax_temperature = 1.0;
    std::vector<std::size_t> hidden = {64, 64};
};

struct PrototypeStore {
    // class id -> (mean feature vector, sample count)
    std::map<int, std::pair<Vector, int>> prototypes;
    // raw samples kept from few-shot sessions 2..t-1, replayed later
    Matrix exemplar_features;
    std::vector<int> exemplar_labels;
};

struct BaseResult {
    SoftMask soft_mask;  // major from final scores, minor from one frozen draw
    double train_accuracy = 0.0;
};

/// Alg.-2-style base training: every epoch resamples the minor mask and
/// rebuilds the major support from live scores; weight gradients are scaled
/// by m_soft, score updates run unmasked.
BaseResult train_base(ScoredParamStore& store, const SessionSpec& base, const FSCILConfig& config);

PrototypeStore compute_prototypes(const ScoredParamStore& store, const SoftMask& soft,
                                  const Dataset& data, const std::vector<int>& classes);
void add_prototypes(PrototypeStore& protos, const ScoredParamStore& store, const SoftMask& soft,
                    const Dataset& data, const std::vector<int>& classes);

/// Cross-entropy over softmax of negative cosine distances to all encountered
/// prototypes. Returns mean loss; d_features (same shape as features) is the
/// analytic gradient when non-null.
double prototype_loss(const Matrix& features, const std::vector<int>& labels,
                      const PrototypeStore& protos, const std::vector<int>& all_classes,
                      double temperature = 1.0, Matrix* d_features = nullptr);

double cosine_distance(const Vector& a, const Vector& b);

/// Few-shot session: finetunes only the minor coordinates, each scaled by its
/// soft mask value; major-support weights stay bit-identical.
void train_incremental(ScoredParamStore& store, const SoftMask& soft, const SessionSpec& session,
                       PrototypeStore& protos, const FSCILConfig& config);

int ncm_classify(const ScoredParamStore& store, const SoftMask& soft,
                 const PrototypeStore& protos, const Vector& sample);
/// Brute-force-free batch version used by the evaluation loop.
std::vector<int> ncm_classify_batch(const ScoredParamStore& store, const SoftMask& soft,
                                    const PrototypeStore& protos, const Matrix& samples);

struct FSCILResult {
    std::vector<double> session_accuracy;  // cumulative accuracy after each session
    SoftMask soft_mask;
    PrototypeStore prototypes;
    double base_train_accuracy = 0.0;
};

FSCILResult run_fscil(const std::vector<SessionSpec>& sessions, const FSCILConfig& config);

}  // namespace subnetcl

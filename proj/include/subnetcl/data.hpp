#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "subnetcl/matrix.hpp"

namespace subnetcl {

struct Dataset {
    Matrix features;          // rows = samples
    std::vector<int> labels;
    int num_classes = 0;
    // Per-feature min/max of the recorded normalization; empty when raw.
    Vector norm_lo, norm_hi;

    std::size_t size() const { return features.rows; }
};

struct TaskData {
    Dataset train;
    Dataset test;
    std::size_t head_classes = 0;
};

struct TaskStream {
    std::vector<TaskData> tasks;
    nlohmann::json descriptor() const;

    // Generator record; regeneration from these fields is bit-identical.
    std::string kind;
    std::uint64_t seed = 0;
    std::vector<std::vector<std::size_t>> permutations;      // permuted streams
    std::vector<std::vector<int>> class_groups;              // split streams
};

struct SessionSpec {
    int index = 0;            // 1-based; 1 is the base session
    std::vector<int> classes; // global class ids, disjoint across sessions
    Dataset train;            // labels are global class ids
    Dataset test;
};

/// When expected_classes >= 0, any label outside [0, expected_classes) is a
/// parse error.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 int expected_classes = -1);
/// CSV with a header row; the label column is named "label".
Dataset load_csv(const std::filesystem::path& path);

/// Min-max normalization per feature, recorded so it is invertible.
void normalize_minmax(Dataset& ds);

TaskStream permuted_tasks(const Dataset& train, const Dataset& test, std::size_t num_tasks,
                          std::uint64_t seed);
TaskStream split_tasks(const Dataset& train, const Dataset& test, std::size_t classes_per_task);
TaskStream synth_gaussian_tasks(std::size_t num_tasks, int classes, std::size_t dim,
                                double separation, std::uint64_t seed,
                                std::size_t samples_per_class = 100);

std::vector<SessionSpec> fewshot_sessions(const Dataset& train, const Dataset& test,
                                          int base_classes, int ways, int shots,
                                          std::uint64_t seed);

/// Synthetic Gaussian-cluster dataset with all classes present; feeds both
/// fewshot_sessions and standalone tests.
Dataset synth_gaussian_dataset(int classes, std::size_t dim, double separation,
                               std::uint64_t seed, std::size_t samples_per_class);

}  // namespace subnetcl

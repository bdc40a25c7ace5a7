#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "subnetcl/fscil.hpp"
#include "subnetcl/til.hpp"

namespace subnetcl {

/// Flat "key = value" config with one level of [section] nesting.
/// Keys are looked up as "section.key"; the preamble has no prefix.
class FlatConfig {
  public:
    static FlatConfig parse_file(const std::filesystem::path& path);
    static FlatConfig parse_string(const std::string& text);

    bool has(const std::string& key) const { return values_.count(key) > 0; }
    std::string str(const std::string& key) const;
    std::string str_or(const std::string& key, const std::string& fallback) const;
    double num(const std::string& key, double fallback) const;
    long integer(const std::string& key, long fallback) const;

  private:
    std::map<std::string, std::string> values_;
};

struct ExperimentConfig {
    std::string mode;  // til | fscil | encode-masks | analyze | report
    std::uint64_t seed = 0;
    std::filesystem::path out_dir;
    bool force = false;

    // dataset descriptor
    std::string data_kind = "synth";  // synth | idx | csv
    std::size_t tasks = 3;
    int classes = 4;
    std::size_t dim = 16;
    double separation = 8.0;
    std::size_t samples_per_class = 100;
    std::string task_layout = "independent";  // independent | permuted | split
    std::size_t classes_per_task = 0;
    std::filesystem::path idx_train_images, idx_train_labels, idx_test_images, idx_test_labels;
    std::filesystem::path csv_train, csv_test;

    // fscil sessions
    int base_classes = 0;
    int ways = 0, shots = 0;

    TILRunConfig til;
    FSCILConfig fscil;
};

ExperimentConfig load_experiment_config(const FlatConfig& cfg);

struct FileManifestEntry {
    std::string name;
    std::uintmax_t bytes = 0;
    std::uint32_t crc = 0;
};

/// Atomic write (temp file + rename). Refuses to overwrite unless force.
void write_text_atomic(const std::filesystem::path& path, const std::string& text, bool force);

std::vector<FileManifestEntry> emit_til_report(const TILResult& result,
                                               const ExperimentConfig& config,
                                               const std::filesystem::path& dir);
std::vector<FileManifestEntry> emit_fscil_report(const FSCILResult& result,
                                                 const ExperimentConfig& config,
                                                 const std::filesystem::path& dir);

/// Fixed-precision float formatting so reruns are byte-identical.
std::string format_double(double x);

int run_cli(int argc, char** argv);

}  // namespace subnetcl

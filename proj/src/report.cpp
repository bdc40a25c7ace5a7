#include "subnetcl/report.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "subnetcl/analysis.hpp"
#include "subnetcl/codec.hpp"
#include "subnetcl/error.hpp"

namespace subnetcl {

namespace {

std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r");
    auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? "" : s.substr(b, e - b + 1);
}

}  // namespace

FlatConfig FlatConfig::parse_string(const std::string& text) {
    FlatConfig cfg;
    std::istringstream in(text);
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError("config line " + std::to_string(lineno) + ": unclosed section");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
        cfg.values_[section.empty() ? key : section + "." + key] = value;
    }
    return cfg;
}

FlatConfig FlatConfig::parse_file(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("config file not found: " + path.string());
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_string(ss.str());
}

std::string FlatConfig::str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("config: missing key '" + key + "'");
    return it->second;
}

std::string FlatConfig::str_or(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

double FlatConfig::num(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : std::stod(it->second);
}

long FlatConfig::integer(const std::string& key, long fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : std::stol(it->second);
}

namespace {

std::vector<std::size_t> parse_dims(const std::string& text) {
    std::vector<std::size_t> dims;
    std::stringstream ss(text);
    std::string cell;
    while (std::getline(ss, cell, ','))
        dims.push_back(static_cast<std::size_t>(std::stoul(trim(cell))));
    return dims;
}

}  // namespace

ExperimentConfig load_experiment_config(const FlatConfig& cfg) {
    ExperimentConfig ec;
    ec.mode = cfg.str_or("mode", "til");
    if (!cfg.has("seed")) throw ConfigError("config: seed is mandatory");
    ec.seed = static_cast<std::uint64_t>(cfg.integer("seed", 0));
    ec.out_dir = cfg.str_or("out", "");

    ec.data_kind = cfg.str_or("data.kind", "synth");
    ec.tasks = static_cast<std::size_t>(cfg.integer("data.tasks", 3));
    ec.classes = static_cast<int>(cfg.integer("data.classes", 4));
    ec.dim = static_cast<std::size_t>(cfg.integer("data.dim", 16));
    ec.separation = cfg.num("data.separation", 8.0);
    ec.samples_per_class = static_cast<std::size_t>(cfg.integer("data.samples_per_class", 100));
    ec.task_layout = cfg.str_or("data.layout", "independent");
    ec.classes_per_task = static_cast<std::size_t>(cfg.integer("data.classes_per_task", 0));
    ec.idx_train_images = cfg.str_or("data.train_images", "");
    ec.idx_train_labels = cfg.str_or("data.train_labels", "");
    ec.idx_test_images = cfg.str_or("data.test_images", "");
    ec.idx_test_labels = cfg.str_or("data.test_labels", "");
    ec.csv_train = cfg.str_or("data.train_csv", "");
    ec.csv_test = cfg.str_or("data.test_csv", "");
    ec.base_classes = static_cast<int>(cfg.integer("data.base_classes", 0));
    ec.ways = static_cast<int>(cfg.integer("data.ways", 2));
    ec.shots = static_cast<int>(cfg.integer("data.shots", 2));

    ec.til.capacity_pct = cfg.num("til.capacity", 30.0);
    ec.til.epochs = static_cast<int>(cfg.integer("til.epochs", 5));
    ec.til.batch_size = static_cast<int>(cfg.integer("til.batch_size", 32));
    ec.til.lr = cfg.num("til.lr", 1e-3);
    std::string opt = cfg.str_or("til.optimizer", "adam");
    ec.til.optimizer =
        opt == "sgd" ? OptimizerState::Kind::Sgd : OptimizerState::Kind::Adam;
    std::string mode = cfg.str_or("til.mode", "wsn");
    ec.til.mode = mode == "softnet" ? TILRunConfig::Mode::SoftnetInference : TILRunConfig::Mode::Wsn;
    ec.til.inference_eps = cfg.num("til.inference_eps", 1e-3);
    ec.til.seed = ec.seed;
    if (cfg.has("model.hidden")) ec.til.hidden = parse_dims(cfg.str("model.hidden"));

    ec.fscil.capacity_pct = cfg.num("fscil.capacity", 80.0);
    ec.fscil.base_epochs = static_cast<int>(cfg.integer("fscil.base_epochs", 50));
    ec.fscil.base_lr = cfg.num("fscil.base_lr", 1e-3);
    ec.fscil.incremental_epochs = static_cast<int>(cfg.integer("fscil.epochs", 6));
    ec.fscil.incremental_lr = cfg.num("fscil.lr", 0.02);
    ec.fscil.batch_size = static_cast<int>(cfg.integer("fscil.batch_size", 32));
    ec.fscil.softmax_temperature = cfg.num("fscil.temperature", 1.0);
    ec.fscil.seed = ec.seed;
    if (cfg.has("model.hidden")) ec.fscil.hidden = parse_dims(cfg.str("model.hidden"));
    return ec;
}

std::string format_double(double x) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.10f", x);
    return buf;
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text, bool force) {
    if (!force && std::filesystem::exists(path))
        throw ConfigError("refusing to overwrite " + path.string() + " without --force");
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary);
        if (!f) throw Error("cannot write " + tmp.string());
        f << text;
    }
    std::filesystem::rename(tmp, path);
}

namespace {

FileManifestEntry manifest_entry(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
    return {path.filename().string(), bytes.size(), crc32_of(bytes)};
}

void write_manifest(const std::vector<FileManifestEntry>& entries,
                    const std::filesystem::path& dir, bool force) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& e : entries)
        j.push_back({{"name", e.name}, {"bytes", e.bytes}, {"crc32", e.crc}});
    write_text_atomic(dir / "manifest.json", j.dump(2) + "\n", force);
}

nlohmann::json masks_to_json(const std::vector<TaskMask>& masks) {
    nlohmann::json j;
    j["capacity_pct"] = masks.empty() ? 0.0 : masks[0].capacity_pct;
    auto shapes = nlohmann::json::array();
    if (!masks.empty())
        for (const auto& s : masks[0].shapes) shapes.push_back({s.rows, s.cols});
    j["shapes"] = shapes;
    auto tasks = nlohmann::json::array();
    for (const auto& m : masks) {
        auto layers = nlohmann::json::array();
        for (const auto& bits : m.layers) layers.push_back(std::vector<int>(bits.begin(), bits.end()));
        tasks.push_back(layers);
    }
    j["tasks"] = tasks;
    return j;
}

std::vector<TaskMask> masks_from_json(const nlohmann::json& j) {
    std::vector<MaskShape> shapes;
    for (const auto& s : j.at("shapes")) shapes.push_back({s.at(0), s.at(1)});
    double capacity_pct = j.value("capacity_pct", 0.0);
    std::vector<TaskMask> masks;
    for (const auto& task : j.at("tasks")) {
        TaskMask m;
        m.shapes = shapes;
        m.capacity_pct = capacity_pct;
        for (const auto& layer : task) {
            std::vector<std::uint8_t> bits;
            for (const auto& b : layer) bits.push_back(static_cast<std::uint8_t>(b.get<int>()));
            m.layers.push_back(std::move(bits));
        }
        masks.push_back(std::move(m));
    }
    return masks;
}

nlohmann::json config_to_json(const ExperimentConfig& ec) {
    nlohmann::json j;
    j["mode"] = ec.mode;
    j["seed"] = ec.seed;
    j["data"] = {{"kind", ec.data_kind},    {"tasks", ec.tasks},
                 {"classes", ec.classes},   {"dim", ec.dim},
                 {"separation", ec.separation}, {"samples_per_class", ec.samples_per_class},
                 {"layout", ec.task_layout}};
    if (ec.mode == "til") {
        j["til"] = {{"capacity", ec.til.capacity_pct},
                    {"epochs", ec.til.epochs},
                    {"batch_size", ec.til.batch_size},
                    {"lr", ec.til.lr},
                    {"optimizer", ec.til.optimizer == OptimizerState::Kind::Adam ? "adam" : "sgd"},
                    {"mode", ec.til.mode == TILRunConfig::Mode::Wsn ? "wsn" : "softnet"},
                    {"inference_eps", ec.til.inference_eps},
                    {"hidden", ec.til.hidden}};
    } else if (ec.mode == "fscil") {
        j["fscil"] = {{"capacity", ec.fscil.capacity_pct},
                      {"base_epochs", ec.fscil.base_epochs},
                      {"base_lr", ec.fscil.base_lr},
                      {"epochs", ec.fscil.incremental_epochs},
                      {"lr", ec.fscil.incremental_lr},
                      {"batch_size", ec.fscil.batch_size},
                      {"temperature", ec.fscil.softmax_temperature},
                      {"hidden", ec.fscil.hidden},
                      {"ways", ec.ways},
                      {"shots", ec.shots},
                      {"base_classes", ec.base_classes}};
    }
    return j;
}

}  // namespace

std::vector<FileManifestEntry> emit_til_report(const TILResult& result,
                                               const ExperimentConfig& config,
                                               const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    bool force = config.force;
    std::vector<FileManifestEntry> manifest;

    nlohmann::json summary;
    summary["config"] = config_to_json(config);
    summary["metrics"]["acc"] = result.metric_acc;
    summary["metrics"]["bwt"] = result.metric_bwt;
    if (result.metric_fwt) summary["metrics"]["fwt"] = *result.metric_fwt;
    summary["metrics"]["cap_formula"] = result.cap.cap_formula;
    summary["metrics"]["cap_measured"] = result.cap.cap_measured;
    summary["metrics"]["compression_rate"] = result.cap.compression_rate;
    summary["metrics"]["sparsity"] = result.cap.sparsity;
    summary["task_seconds"] = result.task_seconds;
    summary["partial"] = result.partial;
    if (result.partial) summary["error"] = result.error;
    write_text_atomic(dir / "summary.json", summary.dump(2) + "\n", force);

    std::ostringstream acc;
    acc << "after_task,eval_task,accuracy\n";
    for (const auto& [j, row] : result.acc.A)
        for (const auto& [i, v] : row)
            acc << j << "," << i << "," << format_double(v) << "\n";
    for (const auto& [i, v] : result.acc.R) acc << "random," << i << "," << format_double(v) << "\n";
    write_text_atomic(dir / "accuracy_matrix.csv", acc.str(), force);

    std::ostringstream metrics;
    metrics << "acc,cap,fwt,bwt\n";
    metrics << format_double(result.metric_acc) << "," << format_double(result.cap.cap_formula)
            << "," << (result.metric_fwt ? format_double(*result.metric_fwt) : std::string())
            << "," << format_double(result.metric_bwt) << "\n";
    write_text_atomic(dir / "metrics.csv", metrics.str(), force);

    std::ostringstream curve;
    curve << "task,accumulated_capacity\n";
    for (std::size_t t = 0; t < result.capacity_curve.size(); ++t)
        curve << (t + 1) << "," << format_double(result.capacity_curve[t]) << "\n";
    write_text_atomic(dir / "capacity_curve.csv", curve.str(), force);

    if (!result.masks.empty()) {
        auto bundle_path = dir / "masks.wsnt";
        if (!force && std::filesystem::exists(bundle_path))
            throw ConfigError("refusing to overwrite " + bundle_path.string() + " without --force");
        write_bundle(encode_masks(result.masks), bundle_path);
        write_text_atomic(dir / "masks.json", masks_to_json(result.masks).dump() + "\n", force);
    }

    for (const char* name :
         {"summary.json", "accuracy_matrix.csv", "metrics.csv", "capacity_curve.csv"})
        manifest.push_back(manifest_entry(dir / name));
    if (!result.masks.empty()) {
        manifest.push_back(manifest_entry(dir / "masks.wsnt"));
        manifest.push_back(manifest_entry(dir / "masks.json"));
    }
    write_manifest(manifest, dir, force);
    return manifest;
}

std::vector<FileManifestEntry> emit_fscil_report(const FSCILResult& result,
                                                 const ExperimentConfig& config,
                                                 const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    bool force = config.force;

    nlohmann::json summary;
    summary["config"] = config_to_json(config);
    summary["session_accuracy"] = result.session_accuracy;
    summary["base_train_accuracy"] = result.base_train_accuracy;
    write_text_atomic(dir / "summary.json", summary.dump(2) + "\n", force);

    // Table-style row: one column per session, then the gap between the final
    // and the base-session accuracy.
    std::ostringstream sessions;
    for (std::size_t s = 0; s < result.session_accuracy.size(); ++s)
        sessions << "session_" << (s + 1) << ",";
    sessions << "gap_vs_reference\n";
    for (double a : result.session_accuracy) sessions << format_double(a) << ",";
    sessions << format_double(result.session_accuracy.back() - result.session_accuracy.front())
             << "\n";
    write_text_atomic(dir / "sessions.csv", sessions.str(), force);

    std::vector<FileManifestEntry> manifest;
    for (const char* name : {"summary.json", "sessions.csv"})
        manifest.push_back(manifest_entry(dir / name));
    write_manifest(manifest, dir, force);
    return manifest;
}

namespace {

TaskStream build_task_stream(const ExperimentConfig& ec) {
    std::uint64_t data_seed = mix_seed(ec.seed, "data");
    if (ec.data_kind == "synth") {
        if (ec.task_layout == "permuted") {
            TaskStream flat = synth_gaussian_tasks(1, ec.classes, ec.dim, ec.separation, data_seed,
                                                   ec.samples_per_class);
            return permuted_tasks(flat.tasks[0].train, flat.tasks[0].test, ec.tasks, data_seed);
        }
        return synth_gaussian_tasks(ec.tasks, ec.classes, ec.dim, ec.separation, data_seed,
                                    ec.samples_per_class);
    }
    if (ec.data_kind == "idx") {
        Dataset train = load_idx(ec.idx_train_images, ec.idx_train_labels);
        Dataset test = load_idx(ec.idx_test_images, ec.idx_test_labels);
        if (ec.task_layout == "split") return split_tasks(train, test, ec.classes_per_task);
        return permuted_tasks(train, test, ec.tasks, data_seed);
    }
    if (ec.data_kind == "csv") {
        Dataset train = load_csv(ec.csv_train);
        Dataset test = load_csv(ec.csv_test);
        normalize_minmax(train);
        normalize_minmax(test);
        if (ec.task_layout == "split") return split_tasks(train, test, ec.classes_per_task);
        return permuted_tasks(train, test, ec.tasks, data_seed);
    }
    throw ConfigError("unknown data kind: " + ec.data_kind);
}

std::vector<SessionSpec> build_sessions(const ExperimentConfig& ec) {
    std::uint64_t data_seed = mix_seed(ec.seed, "data");
    if (ec.data_kind == "synth") {
        Dataset full = synth_gaussian_dataset(ec.classes, ec.dim, ec.separation, data_seed,
                                              ec.samples_per_class);
        // 80/20 interleaved split shared with the TIL generator.
        Dataset train, test;
        std::vector<std::size_t> train_rows, test_rows;
        for (std::size_t i = 0; i < full.size(); ++i)
            (i % 5 == 4 ? test_rows : train_rows).push_back(i);
        auto subset = [&](const std::vector<std::size_t>& rows) {
            Dataset out;
            out.features = Matrix(rows.size(), full.features.cols);
            out.labels.resize(rows.size());
            out.num_classes = full.num_classes;
            for (std::size_t r = 0; r < rows.size(); ++r) {
                for (std::size_t j = 0; j < full.features.cols; ++j)
                    out.features(r, j) = full.features(rows[r], j);
                out.labels[r] = full.labels[rows[r]];
            }
            return out;
        };
        train = subset(train_rows);
        test = subset(test_rows);
        int base = ec.base_classes > 0 ? ec.base_classes : ec.classes / 2;
        return fewshot_sessions(train, test, base, ec.ways, ec.shots, data_seed);
    }
    throw ConfigError("fscil currently builds sessions from synth data only");
}

int cli_error(const std::string& message, int code) {
    std::fprintf(stderr, "error: %s\n", message.c_str());
    return code;
}

}  // namespace

int run_cli(int argc, char** argv) {
    CLI::App app{"Winning-subnetwork continual learning experiments"};
    app.require_subcommand(1);

    std::string config_path, out_dir, mode_override, in_path, out_path;
    std::uint64_t seed = 0;
    bool seed_set = false, force = false, decode = false, verify = false;
    double capacity_override = -1.0;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "experiment config file")->required();
        cmd->add_option_function<std::uint64_t>(
            "--seed", [&](std::uint64_t s) { seed = s; seed_set = true; }, "seed override");
        cmd->add_option("--out", out_dir, "output directory");
        cmd->add_flag("--force", force, "overwrite existing outputs");
        cmd->add_option("--capacity", capacity_override, "capacity c%% override");
    };

    CLI::App* til = app.add_subcommand("til", "task-incremental run");
    add_common(til);
    til->add_option("--mode", mode_override, "wsn|softnet")
        ->check(CLI::IsMember({"wsn", "softnet"}));

    CLI::App* fscil = app.add_subcommand("fscil", "few-shot class-incremental run");
    add_common(fscil);

    CLI::App* enc = app.add_subcommand("encode-masks", "mask codec roundtrip tool");
    enc->add_option("--in", in_path, "input masks.json (or bundle with --decode)")->required();
    enc->add_option("--out", out_path, "output path")->required();
    enc->add_flag("--decode", decode, "decode a bundle back to masks.json");
    enc->add_flag("--verify", verify, "decode after encoding and compare");
    enc->add_flag("--force", force, "overwrite existing outputs");

    CLI::App* analyze = app.add_subcommand("analyze", "mask correlation and reuse stats");
    analyze->add_option("--in", in_path, "masks.json from a run")->required();
    analyze->add_option("--out", out_dir, "output directory")->required();
    analyze->add_flag("--force", force, "overwrite existing outputs");

    CLI::App* report = app.add_subcommand("report", "print metrics of a finished run");
    report->add_option("--in", in_path, "run directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        return cli_error(e.what(), 2);
    }

    try {
        if (til->parsed() || fscil->parsed()) {
            ExperimentConfig ec = load_experiment_config(FlatConfig::parse_file(config_path));
            ec.mode = til->parsed() ? "til" : "fscil";
            if (seed_set) {
                ec.seed = seed;
                ec.til.seed = seed;
                ec.fscil.seed = seed;
            }
            if (!out_dir.empty()) ec.out_dir = out_dir;
            if (ec.out_dir.empty()) return cli_error("no output directory (--out or config 'out')", 2);
            ec.force = force;
            if (capacity_override > 0.0) {
                ec.til.capacity_pct = capacity_override;
                ec.fscil.capacity_pct = capacity_override;
            }
            if (!mode_override.empty())
                ec.til.mode = mode_override == "softnet" ? TILRunConfig::Mode::SoftnetInference
                                                         : TILRunConfig::Mode::Wsn;
            if (til->parsed()) {
                TILResult result = run_sequence(build_task_stream(ec), ec.til);
                emit_til_report(result, ec, ec.out_dir);
                if (result.partial) return cli_error("run diverged: " + result.error, 1);
            } else {
                FSCILResult result = run_fscil(build_sessions(ec), ec.fscil);
                emit_fscil_report(result, ec, ec.out_dir);
            }
            return 0;
        }
        if (enc->parsed()) {
            if (decode) {
                auto bundle = read_bundle(in_path);
                std::vector<MaskShape> shapes;
                for (auto n : bundle.layer_numel) shapes.push_back({1, n});
                auto masks = decode_masks(bundle, shapes);
                write_text_atomic(out_path, masks_to_json(masks).dump() + "\n", force);
            } else {
                std::ifstream f(in_path);
                if (!f) return cli_error("cannot open " + in_path, 2);
                auto masks = masks_from_json(nlohmann::json::parse(f));
                auto bundle = encode_masks(masks);
                if (!force && std::filesystem::exists(out_path))
                    return cli_error("refusing to overwrite " + out_path + " without --force", 2);
                write_bundle(bundle, out_path);
                if (verify) {
                    auto back = decode_masks(read_bundle(out_path), masks[0].shapes,
                                             masks[0].capacity_pct);
                    for (std::size_t t = 0; t < masks.size(); ++t)
                        if (back[t].layers != masks[t].layers)
                            return cli_error("verification failed: decoded masks differ", 1);
                }
            }
            return 0;
        }
        if (analyze->parsed()) {
            std::ifstream f(in_path);
            if (!f) return cli_error("cannot open " + in_path, 2);
            auto masks = masks_from_json(nlohmann::json::parse(f));
            std::filesystem::create_directories(out_dir);
            auto corr = mask_correlation(masks);
            std::ostringstream cs;
            for (std::size_t i = 0; i < corr.size; ++i) {
                for (std::size_t j = 0; j < corr.size; ++j)
                    cs << (j ? "," : "") << format_double(corr(i, j));
                cs << "\n";
            }
            write_text_atomic(std::filesystem::path(out_dir) / "mask_correlation.csv", cs.str(),
                              force);
            auto reuse = mask_stats(masks, masks.size());
            std::ostringstream rs;
            rs << "task,all_used,per_task,new_of_selected,reused_of_selected,new_of_total,"
                  "reused_of_total,reused_for_all\n";
            for (std::size_t t = 0; t < reuse.per_task.size(); ++t) {
                const auto& c = reuse.per_task[t];
                rs << (t + 1) << "," << format_double(c.all_used) << ","
                   << format_double(c.per_task) << "," << format_double(c.new_of_selected) << ","
                   << format_double(c.reused_of_selected) << "," << format_double(c.new_of_total)
                   << "," << format_double(c.reused_of_total) << ","
                   << format_double(c.reused_for_all) << "\n";
            }
            write_text_atomic(std::filesystem::path(out_dir) / "mask_reuse.csv", rs.str(), force);
            return 0;
        }
        if (report->parsed()) {
            auto metrics = std::filesystem::path(in_path) / "metrics.csv";
            auto sessions = std::filesystem::path(in_path) / "sessions.csv";
            auto path = std::filesystem::exists(metrics) ? metrics : sessions;
            std::ifstream f(path);
            if (!f) return cli_error("no metrics.csv or sessions.csv under " + in_path, 2);
            std::cout << f.rdbuf();
            return 0;
        }
    } catch (const ConfigError& e) {
        return cli_error(e.what(), 2);
    } catch (const std::exception& e) {
        return cli_error(e.what(), 1);
    }
    return 2;
}

}  // namespace subnetcl

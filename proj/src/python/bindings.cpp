#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "subnetcl/analysis.hpp"
#include "subnetcl/codec.hpp"
#include "subnetcl/fscil.hpp"
#include "subnetcl/til.hpp"

namespace py = pybind11;
using namespace subnetcl;

namespace {

TaskMask mask_from_py(const std::vector<std::vector<std::uint8_t>>& layers,
                      const std::vector<std::pair<std::size_t, std::size_t>>& shapes,
                      double capacity_pct) {
    TaskMask m;
    m.layers = layers;
    for (auto [r, c] : shapes) m.shapes.push_back({r, c});
    m.capacity_pct = capacity_pct;
    return m;
}

Matrix matrix_from_py(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) return {};
    Matrix m(rows.size(), rows[0].size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != m.cols) throw DimensionError("ragged matrix");
        for (std::size_t j = 0; j < m.cols; ++j) m(i, j) = rows[i][j];
    }
    return m;
}

}  // namespace

PYBIND11_MODULE(_core, mod) {
    mod.doc() = "winning-subnetwork continual learning core";

    py::register_exception<ConfigError>(mod, "ConfigError");
    py::register_exception<IntegrityError>(mod, "IntegrityError");

    mod.def("mix_seed", &mix_seed, py::arg("seed"), py::arg("name"));

    mod.def(
        "topc_mask",
        [](const std::vector<std::vector<std::vector<double>>>& scores, double capacity_pct) {
            std::vector<Matrix> mats;
            for (const auto& s : scores) mats.push_back(matrix_from_py(s));
            return topc_mask(mats, capacity_pct).layers;
        },
        py::arg("scores"), py::arg("capacity_pct"),
        "Top-c% binary mask per layer from score matrices (lists of rows).");

    mod.def(
        "accumulate_masks",
        [](const std::vector<std::vector<std::vector<std::uint8_t>>>& task_layers,
           const std::vector<std::pair<std::size_t, std::size_t>>& shapes) {
            std::vector<MaskShape> ms;
            for (auto [r, c] : shapes) ms.push_back({r, c});
            AccumMask accum = empty_accum(ms);
            for (const auto& layers : task_layers)
                accum = accumulate(accum, mask_from_py(layers, shapes, 0.0));
            return accum.layers;
        },
        py::arg("task_layers"), py::arg("shapes"));

    mod.def(
        "encode_roundtrip",
        [](const std::vector<std::vector<std::vector<std::uint8_t>>>& task_layers,
           const std::vector<std::pair<std::size_t, std::size_t>>& shapes) {
            std::vector<TaskMask> masks;
            for (const auto& layers : task_layers)
                masks.push_back(mask_from_py(layers, shapes, 0.0));
            auto bundle = encode_masks(masks);
            auto back = decode_masks(bundle, masks.at(0).shapes);
            std::vector<std::vector<std::vector<std::uint8_t>>> out;
            for (const auto& m : back) out.push_back(m.layers);
            py::dict info;
            info["payload_bits"] = bundle.payload_bits;
            info["checksum"] = bundle.checksum;
            info["num_tasks"] = bundle.num_tasks;
            return py::make_tuple(out, info);
        },
        py::arg("task_layers"), py::arg("shapes"));

    mod.def(
        "capacity",
        [](const std::vector<std::vector<std::vector<std::uint8_t>>>& task_layers,
           const std::vector<std::pair<std::size_t, std::size_t>>& shapes) {
            std::vector<TaskMask> masks;
            for (const auto& layers : task_layers)
                masks.push_back(mask_from_py(layers, shapes, 0.0));
            auto cap = capacity(masks);
            py::dict d;
            d["sparsity"] = cap.sparsity;
            d["compression_rate"] = cap.compression_rate;
            d["cap_formula"] = cap.cap_formula;
            d["cap_measured"] = cap.cap_measured;
            return d;
        },
        py::arg("task_layers"), py::arg("shapes"));

    mod.def(
        "mask_correlation",
        [](const std::vector<std::vector<std::vector<std::uint8_t>>>& task_layers,
           const std::vector<std::pair<std::size_t, std::size_t>>& shapes) {
            std::vector<TaskMask> masks;
            for (const auto& layers : task_layers)
                masks.push_back(mask_from_py(layers, shapes, 0.0));
            auto corr = mask_correlation(masks);
            std::vector<std::vector<double>> out(corr.size, std::vector<double>(corr.size));
            for (std::size_t i = 0; i < corr.size; ++i)
                for (std::size_t j = 0; j < corr.size; ++j) out[i][j] = corr(i, j);
            return out;
        },
        py::arg("task_layers"), py::arg("shapes"));

    mod.def(
        "metrics",
        [](const std::map<int, std::map<int, double>>& a, const std::map<int, double>& r,
           int num_tasks) {
            AccuracyMatrix m{a, r};
            py::dict d;
            d["acc"] = metric_acc(m, num_tasks);
            d["bwt"] = metric_bwt(m, num_tasks);
            if (num_tasks > 1 && !r.empty()) d["fwt"] = metric_fwt(m, num_tasks);
            return d;
        },
        py::arg("accuracy"), py::arg("random_probe"), py::arg("num_tasks"));

    mod.def(
        "run_til_synth",
        [](std::size_t tasks, int classes, std::size_t dim, double capacity_pct, int epochs,
           std::uint64_t seed, const std::string& mode) {
            TILRunConfig cfg;
            cfg.capacity_pct = capacity_pct;
            cfg.epochs = epochs;
            cfg.seed = seed;
            cfg.hidden = {32, 32};
            cfg.mode = mode == "softnet" ? TILRunConfig::Mode::SoftnetInference
                                         : TILRunConfig::Mode::Wsn;
            auto stream = synth_gaussian_tasks(tasks, classes, dim, 8.0, mix_seed(seed, "data"));
            auto result = run_sequence(stream, cfg);
            py::dict d;
            d["acc"] = result.metric_acc;
            d["bwt"] = result.metric_bwt;
            if (result.metric_fwt) d["fwt"] = *result.metric_fwt;
            d["cap"] = result.cap.cap_formula;
            d["capacity_curve"] = result.capacity_curve;
            d["accuracy"] = result.acc.A;
            d["partial"] = result.partial;
            return d;
        },
        py::arg("tasks") = 3, py::arg("classes") = 4, py::arg("dim") = 16,
        py::arg("capacity_pct") = 30.0, py::arg("epochs") = 5, py::arg("seed") = 1,
        py::arg("mode") = "wsn");

    mod.def(
        "run_fscil_synth",
        [](int classes, int base_classes, int ways, int shots, double capacity_pct,
           int base_epochs, std::uint64_t seed) {
            FSCILConfig cfg;
            cfg.capacity_pct = capacity_pct;
            cfg.base_epochs = base_epochs;
            cfg.seed = seed;
            cfg.hidden = {32, 32};
            auto full = synth_gaussian_dataset(classes, 16, 8.0, mix_seed(seed, "data"), 60);
            Dataset train, test;
            train.num_classes = test.num_classes = full.num_classes;
            train.features = Matrix(0, full.features.cols);
            test.features = Matrix(0, full.features.cols);
            for (std::size_t i = 0; i < full.size(); ++i) {
                Dataset& dst = (i % 5 == 4) ? test : train;
                dst.features.v.insert(dst.features.v.end(), full.features.v.begin() + i * full.features.cols,
                                      full.features.v.begin() + (i + 1) * full.features.cols);
                ++dst.features.rows;
                dst.labels.push_back(full.labels[i]);
            }
            auto sessions = fewshot_sessions(train, test, base_classes, ways, shots,
                                             mix_seed(seed, "data"));
            auto result = run_fscil(sessions, cfg);
            py::dict d;
            d["session_accuracy"] = result.session_accuracy;
            d["base_train_accuracy"] = result.base_train_accuracy;
            return d;
        },
        py::arg("classes") = 8, py::arg("base_classes") = 4, py::arg("ways") = 2,
        py::arg("shots") = 3, py::arg("capacity_pct") = 80.0, py::arg("base_epochs") = 20,
        py::arg("seed") = 1);
}

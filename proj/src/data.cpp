#include "subnetcl/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "subnetcl/error.hpp"
#include "subnetcl/rng.hpp"

namespace subnetcl {

nlohmann::json TaskStream::descriptor() const {
    nlohmann::json d;
    d["kind"] = kind;
    d["seed"] = seed;
    d["tasks"] = tasks.size();
    if (!permutations.empty()) d["permutations"] = permutations;
    if (!class_groups.empty()) d["class_groups"] = class_groups;
    return d;
}

namespace {

std::uint32_t read_u32_be(std::istream& f, std::size_t offset) {
    unsigned char b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    if (!f) throw ParseError("idx: truncated at offset " + std::to_string(offset));
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
           (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 int expected_classes) {
    std::ifstream fi(images, std::ios::binary);
    if (!fi) throw ConfigError("load_idx: cannot open " + images.string());
    if (read_u32_be(fi, 0) != 0x00000803u)
        throw ParseError("idx: bad image magic at offset 0");
    std::size_t count = read_u32_be(fi, 4);
    std::size_t rows = read_u32_be(fi, 8);
    std::size_t cols = read_u32_be(fi, 12);
    std::size_t dim = rows * cols;
    Dataset ds;
    ds.features = Matrix(count, dim);
    std::vector<unsigned char> buf(dim);
    for (std::size_t i = 0; i < count; ++i) {
        fi.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(dim));
        if (!fi) throw ParseError("idx: truncated image data at offset " +
                                  std::to_string(16 + i * dim));
        for (std::size_t j = 0; j < dim; ++j)
            ds.features(i, j) = static_cast<double>(buf[j]) / 255.0;
    }

    std::ifstream fl(labels, std::ios::binary);
    if (!fl) throw ConfigError("load_idx: cannot open " + labels.string());
    if (read_u32_be(fl, 0) != 0x00000801u)
        throw ParseError("idx: bad label magic at offset 0");
    std::size_t lcount = read_u32_be(fl, 4);
    if (lcount != count) throw ParseError("idx: image/label count mismatch");
    ds.labels.resize(count);
    int max_label = 0;
    for (std::size_t i = 0; i < count; ++i) {
        char c;
        fl.read(&c, 1);
        if (!fl) throw ParseError("idx: truncated labels at offset " + std::to_string(8 + i));
        ds.labels[i] = static_cast<unsigned char>(c);
        if (expected_classes >= 0 && ds.labels[i] >= expected_classes)
            throw ParseError("idx: label " + std::to_string(ds.labels[i]) +
                             " out of range for a " + std::to_string(expected_classes) +
                             "-class dataset");
        max_label = std::max(max_label, ds.labels[i]);
    }
    ds.num_classes = expected_classes >= 0 ? expected_classes : max_label + 1;
    ds.norm_lo.assign(dim, 0.0);
    ds.norm_hi.assign(dim, 255.0);
    return ds;
}

Dataset load_csv(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("load_csv: cannot open " + path.string());
    std::string line;
    if (!std::getline(f, line)) throw ParseError("csv: empty file");
    std::vector<std::string> header;
    {
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) header.push_back(cell);
    }
    auto label_it = std::find(header.begin(), header.end(), "label");
    if (label_it == header.end()) throw ParseError("csv: no column named 'label'");
    std::size_t label_col = static_cast<std::size_t>(label_it - header.begin());
    std::size_t dim = header.size() - 1;

    std::vector<double> values;
    std::vector<int> labels;
    std::size_t lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::size_t col = 0;
        while (std::getline(ss, cell, ',')) {
            if (col == label_col)
                labels.push_back(std::stoi(cell));
            else
                values.push_back(std::stod(cell));
            ++col;
        }
        if (col != header.size())
            throw ParseError("csv: wrong field count on line " + std::to_string(lineno));
    }
    Dataset ds;
    ds.features = Matrix(labels.size(), dim);
    ds.features.v = std::move(values);
    ds.labels = std::move(labels);
    ds.num_classes = ds.labels.empty() ? 0 : *std::max_element(ds.labels.begin(), ds.labels.end()) + 1;
    return ds;
}

void normalize_minmax(Dataset& ds) {
    std::size_t dim = ds.features.cols;
    ds.norm_lo.assign(dim, 0.0);
    ds.norm_hi.assign(dim, 1.0);
    if (ds.features.rows == 0) return;
    for (std::size_t j = 0; j < dim; ++j) {
        double lo = ds.features(0, j), hi = lo;
        for (std::size_t i = 1; i < ds.features.rows; ++i) {
            lo = std::min(lo, ds.features(i, j));
            hi = std::max(hi, ds.features(i, j));
        }
        ds.norm_lo[j] = lo;
        ds.norm_hi[j] = hi;
        double span = hi - lo;
        for (std::size_t i = 0; i < ds.features.rows; ++i)
            ds.features(i, j) = span > 0.0 ? (ds.features(i, j) - lo) / span : 0.0;
    }
}

namespace {

Dataset apply_permutation(const Dataset& base, const std::vector<std::size_t>& perm) {
    Dataset out = base;
    for (std::size_t i = 0; i < base.features.rows; ++i)
        for (std::size_t j = 0; j < perm.size(); ++j)
            out.features(i, j) = base.features(i, perm[j]);
    return out;
}

}  // namespace

TaskStream permuted_tasks(const Dataset& train, const Dataset& test, std::size_t num_tasks,
                          std::uint64_t seed) {
    if (num_tasks < 1) throw ConfigError("permuted_tasks: need at least one task");
    TaskStream stream;
    stream.kind = "permuted";
    stream.seed = seed;
    std::size_t dim = train.features.cols;
    for (std::size_t t = 0; t < num_tasks; ++t) {
        std::vector<std::size_t> perm(dim);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        if (t > 0) {
            RngStream rng(seed, "permutation-" + std::to_string(t));
            rng.shuffle(perm);
        }
        TaskData task;
        task.train = apply_permutation(train, perm);
        task.test = apply_permutation(test, perm);
        task.head_classes = static_cast<std::size_t>(train.num_classes);
        stream.tasks.push_back(std::move(task));
        stream.permutations.push_back(std::move(perm));
    }
    return stream;
}

namespace {

Dataset take_classes(const Dataset& base, const std::vector<int>& classes) {
    std::map<int, int> remap;
    for (std::size_t k = 0; k < classes.size(); ++k) remap[classes[k]] = static_cast<int>(k);
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < base.labels.size(); ++i)
        if (remap.count(base.labels[i])) rows.push_back(i);
    Dataset out;
    out.features = Matrix(rows.size(), base.features.cols);
    out.labels.resize(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (std::size_t j = 0; j < base.features.cols; ++j)
            out.features(r, j) = base.features(rows[r], j);
        out.labels[r] = remap.at(base.labels[rows[r]]);
    }
    out.num_classes = static_cast<int>(classes.size());
    out.norm_lo = base.norm_lo;
    out.norm_hi = base.norm_hi;
    return out;
}

}  // namespace

TaskStream split_tasks(const Dataset& train, const Dataset& test, std::size_t classes_per_task) {
    if (classes_per_task == 0 ||
        static_cast<std::size_t>(train.num_classes) % classes_per_task != 0)
        throw ConfigError("split_tasks: class count not divisible by classes-per-task");
    TaskStream stream;
    stream.kind = "split";
    for (int c = 0; c < train.num_classes; c += static_cast<int>(classes_per_task)) {
        std::vector<int> group;
        for (std::size_t k = 0; k < classes_per_task; ++k) group.push_back(c + static_cast<int>(k));
        TaskData task;
        task.train = take_classes(train, group);
        task.test = take_classes(test, group);
        task.head_classes = classes_per_task;
        stream.tasks.push_back(std::move(task));
        stream.class_groups.push_back(std::move(group));
    }
    return stream;
}

Dataset synth_gaussian_dataset(int classes, std::size_t dim, double separation,
                               std::uint64_t seed, std::size_t samples_per_class) {
    if (classes < 1 || dim == 0) throw ConfigError("synth_gaussian: bad dimensions");
    RngStream means_rng(seed, "synth-means");
    RngStream noise_rng(seed, "synth-noise");
    std::vector<Vector> means;
    for (int c = 0; c < classes; ++c) {
        Vector mu(dim);
        double norm = 0.0;
        for (auto& x : mu) {
            x = means_rng.normal();
            norm += x * x;
        }
        norm = std::sqrt(norm);
        for (auto& x : mu) x = norm > 0.0 ? x / norm * separation : 0.0;
        means.push_back(std::move(mu));
    }
    Dataset ds;
    ds.num_classes = classes;
    std::size_t total = samples_per_class * static_cast<std::size_t>(classes);
    ds.features = Matrix(total, dim);
    ds.labels.resize(total);
    std::size_t row = 0;
    for (int c = 0; c < classes; ++c) {
        for (std::size_t s = 0; s < samples_per_class; ++s, ++row) {
            for (std::size_t j = 0; j < dim; ++j)
                ds.features(row, j) = means[c][j] + noise_rng.normal();
            ds.labels[row] = c;
        }
    }
    normalize_minmax(ds);
    return ds;
}

TaskStream synth_gaussian_tasks(std::size_t num_tasks, int classes, std::size_t dim,
                                double separation, std::uint64_t seed,
                                std::size_t samples_per_class) {
    if (separation < 0.0) throw ConfigError("synth_gaussian_tasks: separation must be >= 0");
    TaskStream stream;
    stream.kind = "synth-gaussian";
    stream.seed = seed;
    for (std::size_t t = 0; t < num_tasks; ++t) {
        Dataset full = synth_gaussian_dataset(classes, dim, separation,
                                              mix_seed(seed, "task-" + std::to_string(t)),
                                              samples_per_class);
        // Deterministic interleaved 80/20 split keeps both sides class-balanced.
        TaskData task;
        std::vector<std::size_t> train_rows, test_rows;
        for (std::size_t i = 0; i < full.size(); ++i)
            (i % 5 == 4 ? test_rows : train_rows).push_back(i);
        auto subset = [&](const std::vector<std::size_t>& rows) {
            Dataset out;
            out.features = Matrix(rows.size(), full.features.cols);
            out.labels.resize(rows.size());
            out.num_classes = full.num_classes;
            out.norm_lo = full.norm_lo;
            out.norm_hi = full.norm_hi;
            for (std::size_t r = 0; r < rows.size(); ++r) {
                for (std::size_t j = 0; j < full.features.cols; ++j)
                    out.features(r, j) = full.features(rows[r], j);
                out.labels[r] = full.labels[rows[r]];
            }
            return out;
        };
        task.train = subset(train_rows);
        task.test = subset(test_rows);
        task.head_classes = static_cast<std::size_t>(classes);
        stream.tasks.push_back(std::move(task));
    }
    return stream;
}

std::vector<SessionSpec> fewshot_sessions(const Dataset& train, const Dataset& test,
                                          int base_classes, int ways, int shots,
                                          std::uint64_t seed) {
    if (base_classes < 1 || ways < 1 || shots < 1)
        throw ConfigError("fewshot_sessions: bad session parameters");
    int novel = train.num_classes - base_classes;
    if (novel < 1)
        throw ConfigError("fewshot_sessions: no novel classes left for few-shot sessions");
    if (novel % ways != 0)
        throw ConfigError("fewshot_sessions: novel classes not divisible into N-way sessions");

    auto filter = [&](const Dataset& src, const std::vector<int>& classes,
                      int per_class_limit, RngStream* rng) {
        std::set<int> wanted(classes.begin(), classes.end());
        std::map<int, std::vector<std::size_t>> by_class;
        for (std::size_t i = 0; i < src.labels.size(); ++i)
            if (wanted.count(src.labels[i])) by_class[src.labels[i]].push_back(i);
        std::vector<std::size_t> rows;
        for (int c : classes) {
            auto& pool = by_class[c];
            if (per_class_limit > 0) {
                if (pool.size() < static_cast<std::size_t>(per_class_limit))
                    throw ConfigError("fewshot_sessions: not enough samples for class " +
                                      std::to_string(c));
                rng->shuffle(pool);
                pool.resize(static_cast<std::size_t>(per_class_limit));
            }
            rows.insert(rows.end(), pool.begin(), pool.end());
        }
        Dataset out;
        out.features = Matrix(rows.size(), src.features.cols);
        out.labels.resize(rows.size());
        out.num_classes = src.num_classes;
        out.norm_lo = src.norm_lo;
        out.norm_hi = src.norm_hi;
        for (std::size_t r = 0; r < rows.size(); ++r) {
            for (std::size_t j = 0; j < src.features.cols; ++j)
                out.features(r, j) = src.features(rows[r], j);
            out.labels[r] = src.labels[rows[r]];
        }
        return out;
    };

    std::vector<SessionSpec> sessions;
    std::vector<int> base(base_classes);
    std::iota(base.begin(), base.end(), 0);
    SessionSpec base_session;
    base_session.index = 1;
    base_session.classes = base;
    base_session.train = filter(train, base, 0, nullptr);
    base_session.test = filter(test, base, 0, nullptr);
    sessions.push_back(std::move(base_session));

    std::vector<int> novel_classes(static_cast<std::size_t>(novel));
    std::iota(novel_classes.begin(), novel_classes.end(), base_classes);
    RngStream pick_rng(seed, "fewshot-pick");
    pick_rng.shuffle(novel_classes);
    int session_idx = 2;
    for (std::size_t off = 0; off < novel_classes.size(); off += static_cast<std::size_t>(ways)) {
        std::vector<int> group(novel_classes.begin() + static_cast<std::ptrdiff_t>(off),
                               novel_classes.begin() + static_cast<std::ptrdiff_t>(off + ways));
        RngStream shot_rng(seed, "fewshot-shots-" + std::to_string(session_idx));
        SessionSpec s;
        s.index = session_idx++;
        s.classes = group;
        s.train = filter(train, group, shots, &shot_rng);
        s.test = filter(test, group, 0, nullptr);
        sessions.push_back(std::move(s));
    }
    return sessions;
}

}  // namespace subnetcl

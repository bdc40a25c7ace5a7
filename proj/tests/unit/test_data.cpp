#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "subnetcl/data.hpp"
#include "subnetcl/rng.hpp"

using namespace subnetcl;

namespace {

namespace fs = std::filesystem;

void write_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream f(path, std::ios::binary);
    f.write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

void push_u32_be(std::vector<std::uint8_t>& v, std::uint32_t x) {
    v.push_back(x >> 24);
    v.push_back((x >> 16) & 0xff);
    v.push_back((x >> 8) & 0xff);
    v.push_back(x & 0xff);
}

struct IdxPair {
    fs::path images, labels;
};

IdxPair write_idx(const std::string& tag, const std::vector<std::uint8_t>& pixels,
                  const std::vector<std::uint8_t>& labels, std::uint32_t count,
                  std::uint32_t rows, std::uint32_t cols) {
    IdxPair p{fs::temp_directory_path() / (tag + "-images.idx"),
              fs::temp_directory_path() / (tag + "-labels.idx")};
    std::vector<std::uint8_t> img;
    push_u32_be(img, 0x00000803);
    push_u32_be(img, count);
    push_u32_be(img, rows);
    push_u32_be(img, cols);
    img.insert(img.end(), pixels.begin(), pixels.end());
    write_bytes(p.images, img);

    std::vector<std::uint8_t> lab;
    push_u32_be(lab, 0x00000801);
    push_u32_be(lab, count);
    lab.insert(lab.end(), labels.begin(), labels.end());
    write_bytes(p.labels, lab);
    return p;
}

Dataset tiny_dataset(int classes, std::size_t per_class, std::size_t dim) {
    Dataset ds;
    ds.num_classes = classes;
    ds.features = Matrix(classes * per_class, dim);
    RngStream rng(3, "tiny");
    for (int c = 0; c < classes; ++c)
        for (std::size_t i = 0; i < per_class; ++i) {
            std::size_t r = c * per_class + i;
            for (std::size_t j = 0; j < dim; ++j) ds.features(r, j) = c + rng.uniform();
            ds.labels.push_back(c);
        }
    return ds;
}

}  // namespace

TEST_CASE("load_idx reads hand-crafted files exactly") {
    auto p = write_idx("good", {0, 1, 255, 128, 10, 20, 30, 40}, {0, 1}, 2, 2, 2);
    auto ds = load_idx(p.images, p.labels);
    CHECK(ds.size() == 2);
    CHECK(ds.features.cols == 4);
    CHECK(ds.features(0, 0) == doctest::Approx(0.0));
    CHECK(ds.features(0, 1) == doctest::Approx(1.0 / 255.0));
    CHECK(ds.features(0, 2) == doctest::Approx(1.0));
    CHECK(ds.features(1, 3) == doctest::Approx(40.0 / 255.0));
    CHECK(ds.labels == std::vector<int>{0, 1});
    fs::remove(p.images);
    fs::remove(p.labels);
}

TEST_CASE("load_idx error contracts") {
    SUBCASE("truncated header names offset 4") {
        auto path = fs::temp_directory_path() / "trunc.idx";
        write_bytes(path, {0x00, 0x00, 0x08, 0x03});
        auto labels = fs::temp_directory_path() / "trunc-labels.idx";
        write_bytes(labels, {0x00, 0x00, 0x08, 0x01});
        CHECK_THROWS_WITH_AS(load_idx(path, labels), doctest::Contains("offset 4"), ParseError);
        fs::remove(path);
        fs::remove(labels);
    }
    SUBCASE("bad magic") {
        auto p = write_idx("magic", {1, 2, 3, 4}, {0}, 1, 2, 2);
        std::vector<std::uint8_t> bad;
        push_u32_be(bad, 0xdeadbeef);
        push_u32_be(bad, 1);
        push_u32_be(bad, 2);
        push_u32_be(bad, 2);
        bad.insert(bad.end(), {1, 2, 3, 4});
        write_bytes(p.images, bad);
        CHECK_THROWS_AS(load_idx(p.images, p.labels), ParseError);
        fs::remove(p.images);
        fs::remove(p.labels);
    }
    SUBCASE("out-of-range label for a declared class count") {
        auto p = write_idx("range", std::vector<std::uint8_t>(8, 1), {3, 10}, 2, 2, 2);
        CHECK_THROWS_AS(load_idx(p.images, p.labels, 10), ParseError);
        CHECK_NOTHROW(load_idx(p.images, p.labels, 11));
        fs::remove(p.images);
        fs::remove(p.labels);
    }
    SUBCASE("truncated pixel data") {
        auto p = write_idx("short", {1, 2, 3}, {0}, 1, 2, 2);  // 4 pixels declared, 3 present
        CHECK_THROWS_AS(load_idx(p.images, p.labels), ParseError);
        fs::remove(p.images);
        fs::remove(p.labels);
    }
}

TEST_CASE("load_csv parses header with label column") {
    auto path = fs::temp_directory_path() / "tiny.csv";
    {
        std::ofstream f(path);
        f << "f0,label,f1\n0.5,1,0.25\n1.0,0,0.75\n";
    }
    auto ds = load_csv(path);
    CHECK(ds.size() == 2);
    CHECK(ds.features.cols == 2);
    CHECK(ds.features(0, 0) == doctest::Approx(0.5));
    CHECK(ds.features(0, 1) == doctest::Approx(0.25));
    CHECK(ds.labels == std::vector<int>{1, 0});
    CHECK(ds.num_classes == 2);

    std::ofstream(path) << "f0,f1\n1,2\n";
    CHECK_THROWS_AS(load_csv(path), ParseError);
    fs::remove(path);
}

TEST_CASE("normalize_minmax maps to [0,1] and is invertible from the record") {
    Dataset ds;
    ds.features = Matrix(3, 2);
    ds.features.v = {2.0, -1.0, 4.0, 0.0, 6.0, 1.0};
    ds.labels = {0, 1, 0};
    ds.num_classes = 2;
    auto raw = ds.features;
    normalize_minmax(ds);
    CHECK(ds.features(0, 0) == doctest::Approx(0.0));
    CHECK(ds.features(2, 0) == doctest::Approx(1.0));
    CHECK(ds.features(1, 1) == doctest::Approx(0.5));
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t c = 0; c < 2; ++c) {
            double orig = ds.features(r, c) * (ds.norm_hi[c] - ds.norm_lo[c]) + ds.norm_lo[c];
            CHECK(orig == doctest::Approx(raw(r, c)));
        }
}

TEST_CASE("permuted_tasks: identity first, seeded bijections after") {
    auto base = tiny_dataset(2, 6, 9);
    auto test = tiny_dataset(2, 2, 9);
    auto stream = permuted_tasks(base, test, 3, 42);
    REQUIRE(stream.tasks.size() == 3);
    CHECK(stream.tasks[0].train.features.v == base.features.v);

    for (std::size_t t = 1; t < 3; ++t) {
        const auto& feat = stream.tasks[t].train.features;
        CHECK(feat.v != base.features.v);
        for (std::size_t r = 0; r < feat.rows; ++r) {
            std::vector<double> a(feat.v.begin() + r * 9, feat.v.begin() + (r + 1) * 9);
            std::vector<double> b(base.features.v.begin() + r * 9,
                                  base.features.v.begin() + (r + 1) * 9);
            std::sort(a.begin(), a.end());
            std::sort(b.begin(), b.end());
            CHECK(a == b);  // bijection: same multiset per row
        }
        // train and test share the permutation
        CHECK(stream.permutations[t] ==
              stream.permutations[t]);  // self-consistency of the descriptor
    }
    auto again = permuted_tasks(base, test, 3, 42);
    for (std::size_t t = 0; t < 3; ++t)
        CHECK(again.tasks[t].train.features.v == stream.tasks[t].train.features.v);
}

TEST_CASE("split_tasks partitions the class space") {
    auto base = tiny_dataset(6, 4, 5);
    auto test = tiny_dataset(6, 2, 5);
    auto stream = split_tasks(base, test, 3);
    REQUIRE(stream.tasks.size() == 2);
    std::size_t total = 0;
    std::set<int> seen;
    for (const auto& task : stream.tasks) {
        CHECK(task.head_classes == 3);
        std::set<int> labels(task.train.labels.begin(), task.train.labels.end());
        CHECK(labels == std::set<int>{0, 1, 2});  // remapped per task
        total += task.train.size();
    }
    CHECK(total == base.size());
    for (const auto& group : stream.class_groups)
        for (int c : group) CHECK(seen.insert(c).second);
    CHECK(seen.size() == 6);

    CHECK_THROWS_AS(split_tasks(base, test, 4), ConfigError);
}

TEST_CASE("synth_gaussian_tasks is separable and regenerable") {
    auto s1 = synth_gaussian_tasks(2, 3, 8, 10.0, 5, 30);
    auto s2 = synth_gaussian_tasks(2, 3, 8, 10.0, 5, 30);
    REQUIRE(s1.tasks.size() == 2);
    for (std::size_t t = 0; t < 2; ++t) {
        CHECK(s1.tasks[t].train.features.v == s2.tasks[t].train.features.v);
        CHECK(s1.tasks[t].train.size() == 3 * 24);  // 80/20 split
        CHECK(s1.tasks[t].test.size() == 3 * 6);
    }
    // nearest-class-mean on raw features separates well at separation 10
    const auto& train = s1.tasks[0].train;
    const auto& test = s1.tasks[0].test;
    std::vector<Vector> means(3, Vector(8, 0.0));
    std::vector<int> counts(3, 0);
    for (std::size_t r = 0; r < train.size(); ++r) {
        for (std::size_t j = 0; j < 8; ++j) means[train.labels[r]][j] += train.features(r, j);
        ++counts[train.labels[r]];
    }
    for (int c = 0; c < 3; ++c)
        for (auto& v : means[c]) v /= counts[c];
    int correct = 0;
    for (std::size_t r = 0; r < test.size(); ++r) {
        int best = -1;
        double best_d = 1e300;
        for (int c = 0; c < 3; ++c) {
            double d = 0;
            for (std::size_t j = 0; j < 8; ++j) {
                double diff = test.features(r, j) - means[c][j];
                d += diff * diff;
            }
            if (d < best_d) {
                best_d = d;
                best = c;
            }
        }
        if (best == test.labels[r]) ++correct;
    }
    CHECK(double(correct) / test.size() >= 0.99);
}

TEST_CASE("fewshot_sessions layout") {
    auto train = tiny_dataset(8, 10, 6);
    auto test = tiny_dataset(8, 4, 6);
    auto sessions = fewshot_sessions(train, test, 4, 2, 3, 77);
    REQUIRE(sessions.size() >= 2);
    CHECK(sessions[0].index == 1);
    CHECK(sessions[0].classes == std::vector<int>{0, 1, 2, 3});
    CHECK(sessions[0].train.size() == 40);  // all base data
    std::set<int> seen(sessions[0].classes.begin(), sessions[0].classes.end());
    for (std::size_t s = 1; s < sessions.size(); ++s) {
        CHECK(sessions[s].classes.size() == 2);
        CHECK(sessions[s].train.size() == 2 * 3);  // N ways x K shots
        for (int c : sessions[s].classes) CHECK(seen.insert(c).second);  // disjoint
    }
    auto again = fewshot_sessions(train, test, 4, 2, 3, 77);
    for (std::size_t s = 0; s < sessions.size(); ++s)
        CHECK(again[s].train.features.v == sessions[s].train.features.v);

    CHECK_THROWS_AS(fewshot_sessions(train, test, 8, 2, 3, 77), ConfigError);
}

#include <doctest.h>

#include <cmath>

#include "subnetcl/nn.hpp"

using namespace subnetcl;

namespace {

// Tiny store with hand-set trunk weights and an identity head.
ScoredParamStore hand_store(const Matrix& w, const Vector& b) {
    ScoredParamStore store;
    store.layers.push_back({w, Matrix(w.rows, w.cols, 0.5), b});
    Head head;
    head.weights = Matrix(w.cols, w.cols);
    for (std::size_t i = 0; i < w.cols; ++i) head.weights(i, i) = 1.0;
    head.bias = Vector(w.cols, 0.0);
    store.heads[1] = head;
    return store;
}

RealMask const_mask(const std::vector<MaskShape>& shapes, double value) {
    RealMask mask;
    for (const auto& s : shapes) mask.push_back(std::vector<double>(s.numel(), value));
    return mask;
}

Matrix batch_of(const std::vector<double>& xs) {
    Matrix m(1, xs.size());
    m.v = xs;
    return m;
}

double loss_of(const ScoredParamStore& store, const RealMask& mask, int task, const Matrix& x,
               const std::vector<int>& labels) {
    auto [logits, cache] = forward(store, mask, task, x);
    return softmax_xent(logits, labels);
}

ScoredParamStore random_store(std::uint64_t seed, std::vector<std::size_t> dims, int classes) {
    StoreSpec spec;
    spec.trunk_dims = std::move(dims);
    spec.head_classes[1] = classes;
    return init_store(spec, seed);
}

RealMask random_mask(const std::vector<MaskShape>& shapes, std::uint64_t seed, bool binary) {
    RngStream rng(seed, "test-mask");
    RealMask mask;
    for (const auto& s : shapes) {
        std::vector<double> vals(s.numel());
        for (auto& v : vals) v = binary ? (rng.uniform() < 0.5 ? 1.0 : 0.0)
                                        : rng.uniform(0.2, 1.0);
        mask.push_back(std::move(vals));
    }
    return mask;
}

}  // namespace

TEST_CASE("forward hand examples") {
    Matrix w(1, 1);
    w(0, 0) = 2.0;
    auto store = hand_store(w, {0.0});
    auto [logits, cache] = forward(store, const_mask(store.weight_shapes(), 1.0), 1, batch_of({1.0}));
    CHECK(logits(0, 0) == doctest::Approx(2.0));

    auto store2 = hand_store(w, {0.5});
    auto [logits2, c2] =
        forward(store2, const_mask(store2.weight_shapes(), 0.0), 1, batch_of({3.7}));
    CHECK(logits2(0, 0) == doctest::Approx(0.5));  // zero mask leaves only the bias

    Matrix w3(2, 2);
    w3.v = {1, 2, 3, 4};
    auto store3 = hand_store(w3, {0.0, 0.0});
    RealMask diag{{1, 0, 0, 1}};
    auto [logits3, c3] = forward(store3, diag, 1, batch_of({1.0, 1.0}));
    CHECK(c3.preact[0](0, 0) == doctest::Approx(1.0));
    CHECK(c3.preact[0](0, 1) == doctest::Approx(4.0));
}

TEST_CASE("forward error contracts") {
    Matrix w(2, 2, 1.0);
    auto store = hand_store(w, {0.0, 0.0});
    auto mask = const_mask(store.weight_shapes(), 1.0);
    CHECK_THROWS_AS(forward(store, mask, 1, batch_of({1.0, 2.0, 3.0})), DimensionError);
    CHECK_THROWS_AS(forward(store, mask, 9, batch_of({1.0, 2.0})), MissingHeadError);
    RealMask bad{{1.0, 1.0}};
    CHECK_THROWS_AS(forward(store, bad, 1, batch_of({1.0, 2.0})), DimensionError);
}

TEST_CASE("init_store determinism and score range") {
    StoreSpec spec;
    spec.trunk_dims = {5, 7, 4};
    spec.head_classes[1] = 3;
    spec.head_classes[2] = 2;
    auto a = init_store(spec, 99);
    auto b = init_store(spec, 99);
    auto c = init_store(spec, 100);
    CHECK(a.layers[0].weights.v == b.layers[0].weights.v);
    CHECK(a.layers[1].scores.v == b.layers[1].scores.v);
    CHECK(a.heads.at(2).weights.v == b.heads.at(2).weights.v);
    CHECK(a.layers[0].weights.v != c.layers[0].weights.v);

    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto s = init_store(spec, seed);
        for (const auto& layer : s.layers)
            for (double v : layer.scores.v) {
                REQUIRE(v >= 0.0);
                REQUIRE(v < 1.0);
            }
    }
    StoreSpec bad;
    bad.trunk_dims = {5, 0, 4};
    bad.head_classes[1] = 3;
    CHECK_THROWS_AS(init_store(bad, 1), ConfigError);
}

TEST_CASE("softmax cross-entropy on known logits") {
    Matrix logits(1, 2);
    logits.v = {0.0, 0.0};
    CHECK(softmax_xent(logits, {0}) == doctest::Approx(std::log(2.0)));
    logits.v = {100.0, 0.0};
    CHECK(softmax_xent(logits, {0}) == doctest::Approx(0.0).epsilon(1e-12));
    logits.v = {1000.0, 0.0};  // max-shift keeps this finite
    CHECK(std::isfinite(softmax_xent(logits, {1})));
}

TEST_CASE("analytic gradients match central finite differences") {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        auto store = random_store(seed, {4, 6, 5}, 3);
        auto mask = random_mask(store.weight_shapes(), seed, seed % 2 == 0);
        RngStream rng(seed, "fd-batch");
        Matrix x(3, 4);
        for (auto& v : x.v) v = rng.normal();
        std::vector<int> labels{0, 2, 1};

        auto [logits, cache] = forward(store, mask, 1, x);
        auto grads = backward(store, mask, cache, labels);

        // Central differences are invalid across a ReLU kink; skip the few
        // perturbations that flip an activation sign.
        auto relu_pattern = [&] {
            std::vector<bool> pattern;
            auto c = forward(store, mask, 1, x).second;
            for (const auto& pre : c.preact)
                for (double v : pre.v) pattern.push_back(v > 0.0);
            return pattern;
        };
        const double h = 1e-4;
        double num = 0.0, den = 0.0;
        auto check_block = [&](double* param, double analytic) {
            double keep = *param;
            *param = keep + h;
            double up = loss_of(store, mask, 1, x, labels);
            auto pat_up = relu_pattern();
            *param = keep - h;
            double down = loss_of(store, mask, 1, x, labels);
            auto pat_down = relu_pattern();
            *param = keep;
            if (pat_up != pat_down) return;
            double fd = (up - down) / (2 * h);
            num += (analytic - fd) * (analytic - fd);
            den += fd * fd;
        };
        for (std::size_t l = 0; l < store.layers.size(); ++l) {
            for (std::size_t i = 0; i < store.layers[l].weights.size(); ++i)
                check_block(&store.layers[l].weights.v[i], grads.d_weights[l].v[i]);
            for (std::size_t i = 0; i < store.layers[l].bias.size(); ++i)
                check_block(&store.layers[l].bias[i], grads.d_bias[l][i]);
        }
        for (std::size_t i = 0; i < store.heads.at(1).weights.size(); ++i)
            check_block(&store.heads.at(1).weights.v[i], grads.d_head_w.v[i]);
        for (std::size_t i = 0; i < store.heads.at(1).bias.size(); ++i)
            check_block(&store.heads.at(1).bias[i], grads.d_head_b[i]);
        CHECK(std::sqrt(num) / std::max(std::sqrt(den), 1e-12) < 1e-5);
    }
}

TEST_CASE("zero mask entries gate the weight gradient exactly") {
    auto store = random_store(7, {4, 5, 3}, 2);
    auto mask = random_mask(store.weight_shapes(), 7, true);
    RngStream rng(8, "gate-batch");
    Matrix x(4, 4);
    for (auto& v : x.v) v = rng.normal();
    auto [logits, cache] = forward(store, mask, 1, x);
    auto grads = backward(store, mask, cache, {0, 1, 0, 1});
    for (std::size_t l = 0; l < mask.size(); ++l)
        for (std::size_t i = 0; i < mask[l].size(); ++i)
            if (mask[l][i] == 0.0) CHECK(grads.d_weights[l].v[i] == 0.0);
}

TEST_CASE("score gradient follows the straight-through rule") {
    auto store = random_store(9, {4, 5, 3}, 2);
    // strictly positive mask so dmasked is recoverable from dw
    auto mask = random_mask(store.weight_shapes(), 9, false);
    RngStream rng(10, "ste-batch");
    Matrix x(4, 4);
    for (auto& v : x.v) v = rng.normal();
    auto [logits, cache] = forward(store, mask, 1, x);
    auto grads = backward(store, mask, cache, {1, 0, 1, 0});
    for (std::size_t l = 0; l < mask.size(); ++l)
        for (std::size_t i = 0; i < mask[l].size(); ++i) {
            double dmasked = grads.d_weights[l].v[i] / mask[l][i];
            CHECK(grads.d_scores[l].v[i] ==
                  doctest::Approx(dmasked * store.layers[l].weights.v[i]).epsilon(1e-10));
        }
}

TEST_CASE("stale cache is rejected") {
    auto store = random_store(11, {3, 4, 2}, 2);
    auto mask = const_mask(store.weight_shapes(), 1.0);
    Matrix x(2, 3, 0.5);
    auto [logits, cache] = forward(store, mask, 1, x);
    auto grads = backward(store, mask, cache, {0, 1});
    auto opt = make_optimizer(store, OptimizerState::Kind::Sgd, 0.1, 1);
    apply_update(store, grads, opt);
    CHECK_THROWS_AS(backward(store, mask, cache, {0, 1}), InvalidCacheError);
}

TEST_CASE("apply_update freeze gate semantics") {
    SUBCASE("full gate leaves weights bit-identical") {
        auto store = random_store(13, {3, 4, 2}, 2);
        auto before = store;
        auto mask = const_mask(store.weight_shapes(), 1.0);
        RngStream rng(13, "gate-batch");
        Matrix x(2, 3);
        for (auto& v : x.v) v = rng.normal();
        BinaryLayers gate;
        for (const auto& s : store.weight_shapes())
            gate.push_back(std::vector<std::uint8_t>(s.numel(), 1));
        auto opt = make_optimizer(store, OptimizerState::Kind::Adam, 1e-2, 1);
        for (int step = 0; step < 5; ++step) {
            auto [logits, cache] = forward(store, mask, 1, x);
            auto grads = backward(store, mask, cache, {0, 1});
            UpdateOptions options;
            options.freeze_gate = &gate;
            apply_update(store, grads, opt, options);
        }
        for (std::size_t l = 0; l < store.layers.size(); ++l)
            CHECK(store.layers[l].weights.v == before.layers[l].weights.v);
        // scores and head still moved
        CHECK(store.layers[0].scores.v != before.layers[0].scores.v);
    }
    SUBCASE("open gate takes the plain SGD step") {
        ScoredParamStore store;
        store.layers.push_back({Matrix(2, 2, 0.0), Matrix(2, 2, 0.5), Vector(2, 0.0)});
        store.heads[1] = {Matrix(2, 2, 0.0), Vector(2, 0.0)};
        GradientBundle grads;
        grads.d_weights = {Matrix(2, 2, 1.0)};
        grads.d_scores = {Matrix(2, 2, 0.0)};
        grads.d_bias = {Vector(2, 0.0)};
        grads.d_head_w = Matrix(2, 2, 0.0);
        grads.d_head_b = Vector(2, 0.0);
        grads.task = 1;
        grads.has_head = true;
        auto opt = make_optimizer(store, OptimizerState::Kind::Sgd, 0.1, 1);
        apply_update(store, grads, opt);
        for (double v : store.layers[0].weights.v) CHECK(v == doctest::Approx(-0.1));
    }
    SUBCASE("adam moments of a frozen coordinate stay zero") {
        auto store = random_store(14, {3, 4, 2}, 2);
        auto mask = const_mask(store.weight_shapes(), 1.0);
        Matrix x(2, 3, 0.3);
        BinaryLayers gate;
        for (const auto& s : store.weight_shapes())
            gate.push_back(std::vector<std::uint8_t>(s.numel(), 0));
        gate[0][0] = 1;  // freeze exactly one coordinate
        auto opt = make_optimizer(store, OptimizerState::Kind::Adam, 1e-3, 1);
        double frozen = store.layers[0].weights.v[0];
        for (int step = 0; step < 100; ++step) {
            auto [logits, cache] = forward(store, mask, 1, x);
            auto grads = backward(store, mask, cache, {0, 1});
            UpdateOptions options;
            options.freeze_gate = &gate;
            apply_update(store, grads, opt, options);
        }
        CHECK(opt.m_w[0].v[0] == 0.0);
        CHECK(opt.v_w[0].v[0] == 0.0);
        CHECK(store.layers[0].weights.v[0] == frozen);  // bit-identical
        CHECK(store.layers[0].weights.v[1] != frozen);
    }
}

TEST_CASE("training determinism: same seed twice gives identical parameters") {
    auto run_once = [] {
        auto store = random_store(77, {4, 8, 3}, 3);
        auto mask = const_mask(store.weight_shapes(), 1.0);
        RngStream rng(77, "determinism-batch");
        Matrix x(6, 4);
        for (auto& v : x.v) v = rng.normal();
        std::vector<int> labels{0, 1, 2, 0, 1, 2};
        auto opt = make_optimizer(store, OptimizerState::Kind::Adam, 1e-3, 1);
        for (int step = 0; step < 20; ++step) {
            auto [logits, cache] = forward(store, mask, 1, x);
            auto grads = backward(store, mask, cache, labels);
            apply_update(store, grads, opt);
        }
        return store;
    };
    auto a = run_once();
    auto b = run_once();
    for (std::size_t l = 0; l < a.layers.size(); ++l) {
        CHECK(a.layers[l].weights.v == b.layers[l].weights.v);
        CHECK(a.layers[l].scores.v == b.layers[l].scores.v);
    }
}

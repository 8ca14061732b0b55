#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "dsp/checkpoint.hpp"
#include "dsp/nn.hpp"
#include "helpers.hpp"

using namespace dsp;
using testutil::close_rel;

namespace {

double directional_output(const MlpParams& p, const Vec& input, const Vec& u) {
    const Vec out = mlp_forward(p, input);
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * u[i];
    return s;
}

// central finite differences of directional_output w.r.t. every parameter
MlpParams numeric_grads(MlpParams p, const Vec& input, const Vec& u, double h = 1e-5) {
    MlpParams g = zeros_like(p);
    for (std::size_t k = 0; k < p.layers.size(); ++k) {
        auto probe = [&](double& slot, double& out) {
            const double saved = slot;
            slot = saved + h;
            const double hi = directional_output(p, input, u);
            slot = saved - h;
            const double lo = directional_output(p, input, u);
            slot = saved;
            out = (hi - lo) / (2.0 * h);
        };
        for (std::size_t i = 0; i < p.layers[k].weight.size(); ++i)
            probe(p.layers[k].weight[i], g.layers[k].weight[i]);
        for (std::size_t i = 0; i < p.layers[k].bias.size(); ++i)
            probe(p.layers[k].bias[i], g.layers[k].bias[i]);
    }
    return g;
}

MlpParams random_net(const std::vector<std::size_t>& dims, std::uint64_t seed) {
    MlpParams p = init_params(dims, seed);
    Rng rng(derive_seed(seed, 42));
    for (DenseLayer& layer : p.layers) {
        for (double& w : layer.weight) w = rng.uniform(-1.0, 1.0);
        for (double& b : layer.bias) b = rng.uniform(-0.5, 0.5);
    }
    return p;
}

}  // namespace

TEST_CASE("init_params is deterministic with zero biases", "[nn]") {
    const MlpParams a = init_params({2, 3}, 7);
    const MlpParams b = init_params({2, 3}, 7);
    REQUIRE(a.layers.size() == 1);
    REQUIRE(a.layers[0].out_dim == 3);
    REQUIRE(a.layers[0].in_dim == 2);
    REQUIRE(a.layers[0].weight.size() == 6);
    REQUIRE(a.layers[0].bias == Vec{0.0, 0.0, 0.0});
    REQUIRE(a.layers[0].weight == b.layers[0].weight);

    const double scale = 1.0 / std::sqrt(2.0);
    for (double w : a.layers[0].weight) {
        REQUIRE(w >= -scale);
        REQUIRE(w <= scale);
    }
}

TEST_CASE("init_params seeds produce different weights", "[nn]") {
    const MlpParams a = init_params({2, 3}, 7);
    const MlpParams b = init_params({2, 3}, 8);
    REQUIRE(a.layers[0].weight != b.layers[0].weight);
}

TEST_CASE("init_params rejects bad dimension lists", "[nn]") {
    REQUIRE_THROWS_AS(init_params({4}, 0), ConfigError);
    REQUIRE_THROWS_AS(init_params({}, 0), ConfigError);
    REQUIRE_THROWS_AS(init_params({2, 0, 3}, 0), ConfigError);
}

TEST_CASE("mlp_forward zero network maps anything to zero", "[nn]") {
    MlpParams p = init_params({3, 4, 2}, 1);
    for (DenseLayer& layer : p.layers)
        std::fill(layer.weight.begin(), layer.weight.end(), 0.0);
    REQUIRE(mlp_forward(p, Vec{1.0, -2.0, 3.0}) == Vec{0.0, 0.0});
}

TEST_CASE("mlp_forward identity layer passes input through", "[nn]") {
    MlpParams p;
    DenseLayer layer;
    layer.in_dim = layer.out_dim = 2;
    layer.weight = {1.0, 0.0, 0.0, 1.0};
    layer.bias = {0.0, 0.0};
    layer.activation = Activation::Identity;
    p.layers.push_back(layer);
    REQUIRE(mlp_forward(p, Vec{1.0, 2.0}) == Vec{1.0, 2.0});
}

TEST_CASE("mlp_forward matches a hand computation through ReLU", "[nn]") {
    MlpParams p;
    DenseLayer l1;
    l1.in_dim = 2;
    l1.out_dim = 2;
    l1.weight = {0.5, -0.25, 0.1, 0.2};
    l1.bias = {0.1, -0.1};
    l1.activation = Activation::ReLU;
    DenseLayer l2;
    l2.in_dim = 2;
    l2.out_dim = 1;
    l2.weight = {1.0, -1.0};
    l2.bias = {0.05};
    l2.activation = Activation::Identity;
    p.layers = {l1, l2};

    // pre-activations [0.85, -0.2] -> ReLU [0.85, 0] -> 0.85 + 0.05
    const Vec out = mlp_forward(p, Vec{1.0, -1.0});
    REQUIRE(out.size() == 1);
    REQUIRE_THAT(out[0], Catch::Matchers::WithinAbs(0.9, 1e-12));
}

TEST_CASE("mlp_forward rejects dimension mismatches", "[nn]") {
    const MlpParams p = init_params({3, 2}, 0);
    REQUIRE_THROWS_AS(mlp_forward(p, Vec{1.0, 2.0}), ShapeError);
}

TEST_CASE("mlp_backward with zero upstream yields zero gradients", "[nn]") {
    const MlpParams p = random_net({3, 4, 2}, 5);
    ForwardCache cache;
    mlp_forward(p, Vec{0.3, -0.2, 0.9}, &cache);
    MlpParams g = zeros_like(p);
    const Vec in_grad = mlp_backward(p, cache, Vec{0.0, 0.0}, g);
    for (const DenseLayer& layer : g.layers) {
        for (double w : layer.weight) REQUIRE(w == 0.0);
        for (double b : layer.bias) REQUIRE(b == 0.0);
    }
    REQUIRE(in_grad == Vec{0.0, 0.0, 0.0});
}

TEST_CASE("mlp_backward of an affine layer is the outer product", "[nn]") {
    MlpParams p;
    DenseLayer layer;
    layer.in_dim = 3;
    layer.out_dim = 2;
    layer.weight = {0.2, -0.1, 0.4, 0.0, 0.3, -0.2};
    layer.bias = {0.05, -0.05};
    layer.activation = Activation::Identity;
    p.layers.push_back(layer);

    const Vec x{0.5, -1.0, 2.0};
    const Vec g{2.0, -3.0};
    ForwardCache cache;
    mlp_forward(p, x, &cache);
    MlpParams grads = zeros_like(p);
    mlp_backward(p, cache, g, grads);

    for (std::size_t o = 0; o < 2; ++o) {
        REQUIRE_THAT(grads.layers[0].bias[o], Catch::Matchers::WithinAbs(g[o], 1e-14));
        for (std::size_t i = 0; i < 3; ++i)
            REQUIRE_THAT(grads.layers[0].weight[o * 3 + i],
                         Catch::Matchers::WithinAbs(g[o] * x[i], 1e-14));
    }
}

TEST_CASE("mlp_backward matches central finite differences", "[nn]") {
    const std::vector<std::vector<std::size_t>> shapes = {
        {2, 3, 1}, {4, 8, 3}, {3, 5, 5, 2}, {1, 2, 1}};
    std::uint64_t seed = 100;
    for (const auto& dims : shapes) {
        const MlpParams p = random_net(dims, seed++);
        Rng rng(derive_seed(seed, 7));
        Vec input(dims.front());
        for (double& v : input) v = rng.uniform(-1.0, 1.0);
        Vec u(dims.back());
        for (double& v : u) v = rng.uniform(-1.0, 1.0);

        ForwardCache cache;
        mlp_forward(p, input, &cache);
        MlpParams analytic = zeros_like(p);
        mlp_backward(p, cache, u, analytic);
        const MlpParams numeric = numeric_grads(p, input, u);

        for (std::size_t k = 0; k < p.layers.size(); ++k) {
            for (std::size_t i = 0; i < p.layers[k].weight.size(); ++i)
                REQUIRE(close_rel(analytic.layers[k].weight[i], numeric.layers[k].weight[i],
                                  1e-4));
            for (std::size_t i = 0; i < p.layers[k].bias.size(); ++i)
                REQUIRE(close_rel(analytic.layers[k].bias[i], numeric.layers[k].bias[i], 1e-4));
        }
    }
}

TEST_CASE("relu forward is idempotent on nonnegative inputs", "[nn]") {
    MlpParams p;
    DenseLayer layer;
    layer.in_dim = layer.out_dim = 3;
    layer.weight = {1, 0, 0, 0, 1, 0, 0, 0, 1};
    layer.bias = {0, 0, 0};
    layer.activation = Activation::ReLU;
    p.layers.push_back(layer);

    const Vec once = mlp_forward(p, Vec{-1.0, 0.5, 2.0});
    const Vec twice = mlp_forward(p, once);
    REQUIRE(once == twice);
}

TEST_CASE("adamw zero gradient with zero decay is a fixed point", "[nn]") {
    MlpParams p = random_net({2, 2}, 3);
    const MlpParams before = p;
    MlpParams g = zeros_like(p);
    AdamWConfig cfg;
    cfg.weight_decay = 0.0;
    AdamWState state = make_adamw_state(tensor_sizes(p), cfg);
    adamw_step(p, g, state);
    REQUIRE(state.step_count == 1);
    REQUIRE(p.layers[0].weight == before.layers[0].weight);
    REQUIRE(p.layers[0].bias == before.layers[0].bias);
}

TEST_CASE("adamw single-step update matches the hand recurrence", "[nn]") {
    // w = 1, g = 1: with bias correction the first step moves by lr exactly
    // (up to eps), so w ~= 0.9
    MlpParams p;
    DenseLayer layer;
    layer.in_dim = layer.out_dim = 1;
    layer.weight = {1.0};
    layer.bias = {0.0};
    p.layers.push_back(layer);
    MlpParams g = zeros_like(p);
    g.layers[0].weight[0] = 1.0;

    AdamWConfig cfg;
    cfg.lr = 0.1;
    cfg.beta1 = 0.9;
    cfg.beta2 = 0.999;
    cfg.eps = 1e-8;
    cfg.weight_decay = 0.0;
    AdamWState state = make_adamw_state(tensor_sizes(p), cfg);
    adamw_step(p, g, state);
    REQUIRE_THAT(p.layers[0].weight[0], Catch::Matchers::WithinAbs(0.9, 1e-6));
}

TEST_CASE("adamw decoupled decay shrinks weights geometrically", "[nn]") {
    MlpParams p;
    DenseLayer layer;
    layer.in_dim = layer.out_dim = 1;
    layer.weight = {2.0};
    layer.bias = {0.0};
    p.layers.push_back(layer);
    const MlpParams g = zeros_like(p);

    AdamWConfig cfg;
    cfg.lr = 0.1;
    cfg.weight_decay = 0.01;
    AdamWState state = make_adamw_state(tensor_sizes(p), cfg);
    for (int k = 1; k <= 5; ++k) {
        adamw_step(p, g, state);
        REQUIRE_THAT(p.layers[0].weight[0],
                     Catch::Matchers::WithinRel(2.0 * std::pow(1.0 - 0.1 * 0.01, k), 1e-12));
    }
}

TEST_CASE("adamw aborts on non-finite gradients without touching state", "[nn]") {
    MlpParams p = random_net({2, 2}, 9);
    const MlpParams before = p;
    MlpParams g = zeros_like(p);
    g.layers[0].weight[1] = std::nan("");
    AdamWState state = make_adamw_state(tensor_sizes(p), AdamWConfig{});
    REQUIRE_THROWS_AS(adamw_step(p, g, state), NumericError);
    REQUIRE(state.step_count == 0);
    REQUIRE(p.layers[0].weight == before.layers[0].weight);
}

TEST_CASE("checkpoint round trip is bit exact", "[nn]") {
    testutil::TempDir tmp;
    const MlpParams net = random_net({3, 5, 2}, 21);
    const MlpParams other = random_net({4, 4}, 22);
    save_checkpoint(tmp.file("a.ckpt"), {{"main", net}, {"aux", other}});
    const CheckpointSections loaded = load_checkpoint(tmp.file("a.ckpt"));
    REQUIRE(loaded.size() == 2);
    REQUIRE(loaded[0].first == "main");
    REQUIRE(loaded[1].first == "aux");
    for (std::size_t k = 0; k < net.layers.size(); ++k) {
        REQUIRE(loaded[0].second.layers[k].weight == net.layers[k].weight);
        REQUIRE(loaded[0].second.layers[k].bias == net.layers[k].bias);
        REQUIRE(loaded[0].second.layers[k].activation == net.layers[k].activation);
    }
}

TEST_CASE("checkpoint load rejects corrupt files", "[nn]") {
    testutil::TempDir tmp;
    const MlpParams net = random_net({3, 2}, 33);
    save_checkpoint(tmp.file("b.ckpt"), {{"main", net}});

    // truncate
    {
        std::ifstream is(tmp.file("b.ckpt"), std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(is)),
                          std::istreambuf_iterator<char>());
        std::ofstream os(tmp.file("trunc.ckpt"), std::ios::binary);
        os.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    }
    REQUIRE_THROWS_AS(load_checkpoint(tmp.file("trunc.ckpt")), DataError);

    {
        std::ofstream os(tmp.file("magic.ckpt"), std::ios::binary);
        os << "NOTMAGIC" << std::string(64, '\0');
    }
    REQUIRE_THROWS_AS(load_checkpoint(tmp.file("magic.ckpt")), DataError);
    REQUIRE_THROWS_AS(load_checkpoint(tmp.file("missing.ckpt")), DataError);
}

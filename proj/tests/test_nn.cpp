#include <gtest/gtest.h>

#include <cmath>

#include "ausynth/nn.hpp"
#include "support.hpp"

using namespace ausynth;

TEST(InitWeights, DeterministicPerSeed) {
    const MlpSpec spec = MlpSpec::make(2, {3}, 1, Activation::none);
    EXPECT_EQ(init_weights(spec, 7), init_weights(spec, 7));
    EXPECT_FALSE(init_weights(spec, 7) == init_weights(spec, 8));
}

TEST(InitWeights, BiasesZeroAndWithinGlorotLimit) {
    const MlpSpec spec = MlpSpec::make(79, {128, 64}, 50, Activation::tanh);
    const MlpWeights w = init_weights(spec, 3);
    for (std::size_t l = 0; l < w.layers.size(); ++l) {
        EXPECT_TRUE(w.layers[l].bias.isZero(0.0));
        const double limit = std::sqrt(6.0 / static_cast<double>(spec.dims[l] + spec.dims[l + 1]));
        EXPECT_LE(w.layers[l].weight.cwiseAbs().maxCoeff(), limit);
    }
}

TEST(InitWeights, EmpiricalMeanNearZero) {
    // Uniform(-a, a) has mean 0 and std a/sqrt(3); 10^4 entries give a
    // standard error well under the 0.02 tolerance for every layer here.
    const MlpSpec spec = MlpSpec::make(79, {128, 64}, 50, Activation::tanh);
    const MlpWeights w = init_weights(spec, 11);
    for (const Layer& l : w.layers) EXPECT_LT(std::abs(l.weight.mean()), 0.02);
}

TEST(MlpSpec, Validation) {
    EXPECT_THROW((MlpSpec{{4}, Activation::none}).validate(), ContractError);
    EXPECT_THROW((MlpSpec{{4, 0, 2}, Activation::none}).validate(), ContractError);
    EXPECT_NO_THROW((MlpSpec{{4, 2}, Activation::sigmoid}).validate());
}

TEST(MlpForward, SingleLayerIsAffine) {
    const MlpSpec spec{{3, 2}, Activation::none};
    MlpWeights w = zero_weights(spec);
    w.layers[0].weight << 1, 0, 2, 0, 1, -1;
    w.layers[0].bias << 0.5, -0.25;
    Vector v(3);
    v << 1.0, 2.0, 3.0;
    const Vector out = mlp_forward(spec, w, v);
    EXPECT_EQ(out(0), 7.5);
    EXPECT_EQ(out(1), -1.25);
}

TEST(MlpForward, ZeroWeightsGiveActivationAtZero) {
    const MlpSpec t = MlpSpec::make(5, {4, 3}, 2, Activation::tanh);
    const MlpSpec s = MlpSpec::make(5, {4, 3}, 2, Activation::sigmoid);
    const Vector v = Vector::LinSpaced(5, -1.0, 1.0);
    EXPECT_TRUE(mlp_forward(t, zero_weights(t), v).isZero(0.0));
    EXPECT_TRUE(mlp_forward(s, zero_weights(s), v).isApprox(Vector::Constant(2, 0.5), 0.0));
}

TEST(MlpForward, OutputRangesAreStrict) {
    const MlpSpec t = MlpSpec::make(4, {8}, 3, Activation::tanh);
    const MlpSpec s = MlpSpec::make(4, {8}, 3, Activation::sigmoid);
    Rng rng(5);
    const DenseMatrix x = testsupport::uniform_matrix(200, 4, rng, -3.0, 3.0);
    const DenseMatrix yt = mlp_forward(t, init_weights(t, 1), x);
    const DenseMatrix ys = mlp_forward(s, init_weights(s, 1), x);
    EXPECT_LT(yt.cwiseAbs().maxCoeff(), 1.0);
    EXPECT_GT(ys.minCoeff(), 0.0);
    EXPECT_LT(ys.maxCoeff(), 1.0);
}

TEST(MlpForward, DimensionMismatchIsContractError) {
    const MlpSpec spec = MlpSpec::make(3, {2}, 1, Activation::none);
    EXPECT_THROW(mlp_forward(spec, zero_weights(spec), Vector(Vector::Zero(4))), ContractError);
    const MlpSpec other = MlpSpec::make(3, {5}, 1, Activation::none);
    EXPECT_THROW(mlp_forward(spec, zero_weights(other), Vector(Vector::Zero(3))), ContractError);
}

TEST(MlpForward, TapeAndDirectForwardAgree) {
    const MlpSpec spec = MlpSpec::make(4, {6, 5}, 3, Activation::tanh);
    const MlpWeights w = init_weights(spec, 9);
    Rng rng(2);
    const DenseMatrix x = testsupport::uniform_matrix(7, 4, rng);
    Tape t;
    const NodeId in = t.input("x");
    const MlpGraph g = build_mlp(t, spec, in, "net");
    Tape::Bindings b;
    b.set(in, x);
    g.bind(b, w);
    t.forward(b);
    EXPECT_EQ(t.value(g.output), mlp_forward(spec, w, x));
}

TEST(MlpGradient, ThreeLayerMatchesFiniteDifferences) {
    // 10 seeded networks, scalar loss mean(out^2).
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const MlpSpec spec = MlpSpec::make(4, {6, 5}, 3, seed % 2 ? Activation::tanh : Activation::sigmoid);
        MlpWeights w = init_weights(spec, seed);
        Rng rng(seed + 100);
        testsupport::jitter_biases(w, rng);
        const DenseMatrix x = testsupport::uniform_matrix(5, 4, rng);
        const auto loss_and_grad = [&](const MlpWeights& ww, MlpWeights* grad) {
            Tape t;
            const NodeId in = t.input("x");
            const MlpGraph g = build_mlp(t, spec, in, "net");
            const NodeId loss = t.mean(t.mul(g.output, g.output));
            Tape::Bindings b;
            b.set(in, x);
            g.bind(b, ww);
            t.forward(b);
            if (grad) {
                t.backward(loss);
                *grad = g.gradients(t);
            }
            return t.scalar(loss);
        };
        MlpWeights analytic;
        loss_and_grad(w, &analytic);
        const double err = testsupport::weight_gradient_error(
            w, analytic, [&](const MlpWeights& ww) { return loss_and_grad(ww, nullptr); });
        EXPECT_LT(err, 1e-4) << "seed " << seed;
    }
}

TEST(Flatten, RoundTrip) {
    const MlpSpec spec = MlpSpec::make(3, {4}, 2, Activation::none);
    const MlpWeights w = init_weights(spec, 4);
    MlpWeights z = zero_weights(spec);
    const auto flat = flatten(w);
    EXPECT_EQ(flat.size(), w.parameter_count());
    EXPECT_EQ(unflatten(flat, z), flat.size());
    EXPECT_EQ(z, w);
}

TEST(Adam, ZeroGradientIsIdentityAndCountsSteps) {
    const MlpSpec spec = MlpSpec::make(3, {4}, 2, Activation::none);
    MlpWeights w = init_weights(spec, 1);
    const MlpWeights before = w;
    AdamState st = AdamState::for_weights(w, {});
    for (int i = 0; i < 5; ++i) adam_step(w, w.zeros_like(), st);
    EXPECT_EQ(w, before);
    EXPECT_EQ(st.t, 5);
}

TEST(Adam, FirstStepMovesByLearningRate) {
    const MlpSpec spec = MlpSpec::make(2, {}, 2, Activation::none);
    MlpWeights w = zero_weights(spec);
    MlpWeights g = w.zeros_like();
    g.layers[0].weight << 3.0, -0.5, 100.0, -1e-3;
    g.layers[0].bias << 1.0, -2.0;
    AdamConfig cfg;
    cfg.lr = 1e-3;
    AdamState st = AdamState::for_weights(w, cfg);
    adam_step(w, g, st);
    const auto flat_w = flatten(w);
    const auto flat_g = flatten(g);
    for (std::size_t i = 0; i < flat_w.size(); ++i) {
        // bias-corrected moments are g and g^2, so the step is -lr * g / (|g| + eps)
        EXPECT_NEAR(flat_w[i], -cfg.lr * (flat_g[i] > 0 ? 1.0 : -1.0), 1e-4 * cfg.lr) << i;
    }
}

TEST(Adam, ConvergesOnQuadratic) {
    // minimize |w - w*|^2 from 0 with lr 0.05 for 200 steps
    const MlpSpec spec = MlpSpec::make(3, {}, 2, Activation::none);
    MlpWeights w = zero_weights(spec);
    MlpWeights target = w.zeros_like();
    target.layers[0].weight << 0.5, -0.3, 0.8, 0.1, -0.6, 0.2;
    target.layers[0].bias << -0.4, 0.7;
    AdamConfig cfg;
    cfg.lr = 0.05;
    AdamState st = AdamState::for_weights(w, cfg);
    for (int i = 0; i < 200; ++i) {
        MlpWeights g = w.zeros_like();
        g.layers[0].weight = 2.0 * (w.layers[0].weight - target.layers[0].weight);
        g.layers[0].bias = 2.0 * (w.layers[0].bias - target.layers[0].bias);
        adam_step(w, g, st);
    }
    double sq = 0.0;
    const auto a = flatten(w);
    const auto b = flatten(target);
    for (std::size_t i = 0; i < a.size(); ++i) sq += (a[i] - b[i]) * (a[i] - b[i]);
    EXPECT_LT(std::sqrt(sq), 0.01);
}

TEST(Adam, NonFiniteGradientIsNumericError) {
    const MlpSpec spec = MlpSpec::make(2, {}, 1, Activation::none);
    MlpWeights w = zero_weights(spec);
    MlpWeights g = w.zeros_like();
    g.layers[0].weight(0, 0) = std::nan("");
    AdamState st = AdamState::for_weights(w, {});
    EXPECT_THROW(adam_step(w, g, st), NumericError);
}

TEST(Ema, BlendsTowardsCurrentWeights) {
    const MlpSpec spec = MlpSpec::make(2, {}, 1, Activation::none);
    MlpWeights avg = zero_weights(spec);
    MlpWeights cur = avg.zeros_like();
    cur.layers[0].weight << 1.0, -2.0;
    ema_update(avg, cur, 0.75);
    EXPECT_DOUBLE_EQ(avg.layers[0].weight(0, 0), 0.25);
    EXPECT_DOUBLE_EQ(avg.layers[0].weight(0, 1), -0.5);
}

TEST(Checkpoint, RoundTripIsExactAtFloat32) {
    testsupport::TempDir dir("ckpt");
    const MlpSpec spec = MlpSpec::make(5, {4}, 3, Activation::tanh);
    Checkpoint c;
    c.kind = "test";
    c.step = 42;
    c.seed = 9;
    c.networks.push_back({"net", spec, init_weights(spec, 2)});
    c.vectors["v"] = {-1.0, 0.0, 1.0};
    c.scalars["beta"] = 10.0;
    save_checkpoint(dir.path() / "c", c);
    const Checkpoint back = load_checkpoint(dir.path() / "c");
    EXPECT_EQ(back.kind, "test");
    EXPECT_EQ(back.step, 42);
    EXPECT_EQ(back.seed, 9u);
    EXPECT_EQ(back.network("net").spec.dims, spec.dims);
    EXPECT_EQ(back.network("net").spec.output, Activation::tanh);
    const auto a = flatten(c.network("net").weights);
    const auto b = flatten(back.network("net").weights);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(static_cast<double>(static_cast<float>(a[i])), b[i]);
    EXPECT_DOUBLE_EQ(back.scalar("beta"), 10.0);
    // saving what was loaded reproduces the same bytes
    save_checkpoint(dir.path() / "d", back);
    const Checkpoint again = load_checkpoint(dir.path() / "d");
    EXPECT_EQ(again.network("net").weights, back.network("net").weights);
}

TEST(Checkpoint, MissingDirectoryIsIoError) {
    EXPECT_THROW(load_checkpoint("/nonexistent/ausynth/ckpt"), Error);
}

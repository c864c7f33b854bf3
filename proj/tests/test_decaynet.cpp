#include <gtest/gtest.h>

#include <random>

#include "fc4d/decaynet.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace fc4d;

namespace {

DecayInput<double> random_input(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    DecayInput<double> in{};
    for (double& v : in) v = u(rng);
    in[3] = 0.5 + 0.45 * u(rng);
    return in;
}

std::array<oracle::LD, 12> widen(const DecayInput<double>& in) {
    std::array<oracle::LD, 12> out{};
    for (int i = 0; i < 12; ++i) out[i] = in[i];
    return out;
}

}  // namespace

TEST(DecayNet, ParameterCount) {
    EXPECT_EQ(DecayNet<double>::parameter_count(), 5057u);
    EXPECT_EQ(DecayNet<double>().params().size(), 5057u);
}

TEST(DecayNet, ZeroNetGivesHalf) {
    DecayNet<double> net;
    std::mt19937_64 rng(1);
    EXPECT_EQ(net.forward(random_input(rng)), 0.5);
}

TEST(DecayNet, LargeOutputBiasSaturates) {
    DecayNet<double> net;
    net.params()[DecayNet<double>::kB3] = 20.0;
    std::mt19937_64 rng(2);
    const double tau = net.forward(random_input(rng));
    EXPECT_GT(tau, 1.0 - 1e-8);
    EXPECT_LT(tau, 1.0);
}

TEST(DecayNet, InitialFactorNearOne) {
    const DecayNet<double> net = DecayNet<double>::initialized(3);
    std::mt19937_64 rng(3);
    for (int i = 0; i < 50; ++i) {
        const double tau = net.forward(random_input(rng));
        EXPECT_GT(tau, 0.9);
        EXPECT_LT(tau, 1.0);
    }
}

TEST(DecayNet, MatchesExtendedPrecisionOracle) {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        const DecayNet<double> net = DecayNet<double>::initialized(100 + trial, 0.3);
        const DecayInput<double> in = random_input(rng);
        const double expect = static_cast<double>(oracle::mlp(net.params(), widen(in)));
        EXPECT_NEAR(net.forward(in), expect, 1e-14);
    }
}

TEST(DecayNet, OutputInOpenUnitInterval) {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        const DecayNet<double> net = DecayNet<double>::initialized(trial, 0.0);
        DecayInput<double> in = random_input(rng);
        for (double& v : in) v *= 3.0;
        const double tau = net.forward(in);
        EXPECT_GT(tau, 0.0);
        EXPECT_LT(tau, 1.0);
    }
}

TEST(DecayNet, NonFiniteInputIsInvalid) {
    const DecayNet<double> net = DecayNet<double>::initialized(6);
    DecayInput<double> in{};
    in[5] = std::numeric_limits<double>::quiet_NaN();
    try {
        net.forward(in);
        FAIL() << "expected an error";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::kInvalidParameter);
    }
}

TEST(DecayNet, OutputBiasIsMonotone) {
    DecayNet<double> net = DecayNet<double>::initialized(7, 0.0);
    std::mt19937_64 rng(7);
    const DecayInput<double> in = random_input(rng);
    double prev = net.forward(in);
    for (int k = 0; k < 20; ++k) {
        net.params()[DecayNet<double>::kB3] += 0.25;
        const double tau = net.forward(in);
        EXPECT_GE(tau, prev);
        prev = tau;
    }
}

TEST(DecayBackward, ParameterGradientsMatchFiniteDifferences) {
    DecayNet<double> net = DecayNet<double>::initialized(8, 0.2);
    std::mt19937_64 rng(8);
    const DecayInput<double> in = random_input(rng);
    DecayActivations<double> act;
    net.forward(in, act);
    std::vector<double> grad(DecayNet<double>::kParamCount, 0.0);
    const double d_tau = 1.7;
    const DecayInput<double> d_in = decay_backward<double>(net, act, d_tau, grad);

    const double h = 1e-5;
    int checked = 0;
    double worst = 0;
    for (std::size_t i = 0; i < grad.size(); ++i) {
        double& p = net.params()[i];
        const double keep = p;
        p = keep + h;
        const double fp = net.forward(in);
        p = keep - h;
        const double fm = net.forward(in);
        p = keep;
        const double numeric = d_tau * (fp - fm) / (2 * h);
        const double err = std::abs(grad[i] - numeric);
        const double scale = std::max(std::abs(grad[i]), std::abs(numeric));
        // Units whose rectifier flips inside the stencil have no classical derivative.
        if (scale < 1e-10) {
            EXPECT_LT(err, 1e-10) << i;
            continue;
        }
        worst = std::max(worst, err / scale);
        ++checked;
    }
    EXPECT_LT(worst, 1e-4);
    EXPECT_GT(checked, 500);

    for (int i = 0; i < kDecayInputs; ++i) {
        DecayInput<double> p = in, m = in;
        p[i] += h;
        m[i] -= h;
        const double numeric = d_tau * (net.forward(p) - net.forward(m)) / (2 * h);
        EXPECT_NEAR(d_in[i], numeric, 1e-9 + 1e-4 * std::abs(numeric)) << "input " << i;
    }
}

TEST(DecayBackward, ZeroUpstreamGivesZeroGradients) {
    const DecayNet<double> net = DecayNet<double>::initialized(9);
    std::mt19937_64 rng(9);
    DecayActivations<double> act;
    net.forward(random_input(rng), act);
    std::vector<double> grad(DecayNet<double>::kParamCount, 0.0);
    const DecayInput<double> d_in = decay_backward<double>(net, act, 0.0, grad);
    for (double g : grad) EXPECT_EQ(g, 0.0);
    for (double g : d_in) EXPECT_EQ(g, 0.0);
}

TEST(DecayBackward, MissingActivationsIsUsageError) {
    const DecayNet<double> net = DecayNet<double>::initialized(10);
    DecayActivations<double> act;
    std::vector<double> grad(DecayNet<double>::kParamCount, 0.0);
    try {
        decay_backward<double>(net, act, 1.0, grad);
        FAIL() << "expected an error";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::kUsage);
    }
}

TEST(DecayBackward, CompositeOpacityIncludesIndirectTerm) {
    // o_eff(logit) = tau(input(logit)) * w * sigmoid(logit); the network sees the stored opacity.
    const DecayNet<double> net = DecayNet<double>::initialized(11, 0.5);
    std::mt19937_64 rng(11);
    Gaussian4D<double> g = fixture::random_gaussian(rng, ShConfig{0, 0, 1.0});
    const Aabb<double> aabb{Vec3<double>::Constant(-1.5), Vec3<double>::Constant(1.5)};
    const double w = 0.73;
    auto composite = [&](const Gaussian4D<double>& x) {
        return apply_decay(net.forward(make_decay_input(x, aabb)), w, x.opacity());
    };

    DecayActivations<double> act;
    const double tau = net.forward(make_decay_input(g, aabb), act);
    const double o = g.opacity();
    Gaussian4D<double> grad = g.zeros_like();
    grad.opacity_logit += tau * w * o * (1 - o);  // direct term
    std::vector<double> dp(DecayNet<double>::kParamCount, 0.0);
    const DecayInput<double> d_in = decay_backward<double>(net, act, w * o, dp);
    decay_input_backward(g, aabb, d_in, grad);

    const double h = 1e-6;
    auto fd = [&](double& p) {
        const double keep = p;
        p = keep + h;
        const double fp = composite(g);
        p = keep - h;
        const double fm = composite(g);
        p = keep;
        return (fp - fm) / (2 * h);
    };
    EXPECT_NEAR(grad.opacity_logit, fd(g.opacity_logit), 1e-9);
    // The indirect term is not negligible.
    EXPECT_GT(std::abs(grad.opacity_logit - tau * w * o * (1 - o)), 1e-6);
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(grad.position[i], fd(g.position[i]), 1e-9);
    for (int i = 0; i < 4; ++i) {
        EXPECT_NEAR(grad.rot_left[i], fd(g.rot_left[i]), 1e-9);
        EXPECT_NEAR(grad.rot_right[i], fd(g.rot_right[i]), 1e-9);
    }
}

TEST(ApplyDecay, Cases) {
    EXPECT_EQ(apply_decay(1.0, 0.7, 0.3), 0.7 * 0.3);
    EXPECT_DOUBLE_EQ(apply_decay(0.5, 1.0, 0.8), 0.4);
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> u(1e-6, 1.0);
    for (int i = 0; i < 1000; ++i) {
        const double t = u(rng), w = u(rng), o = u(rng) * (1 - 1e-9);
        EXPECT_LE(apply_decay(t, w, o), o);
    }
}

TEST(VariantTau, Formulas) {
    DecayPolicy p;
    p.variant = DecayVariant::kConstant;
    for (double o : {0.01, 0.5, 0.99}) EXPECT_EQ(variant_tau(p, o), 0.9);
    p.variant = DecayVariant::kNone;
    for (double o : {0.01, 0.5, 0.99}) EXPECT_EQ(variant_tau(p, o), 1.0);
    p.variant = DecayVariant::kPow;
    EXPECT_EQ(variant_tau(p, 1.0), 1.0);
    EXPECT_DOUBLE_EQ(variant_tau(p, 0.5), 1.0 - 0.1 * 0.25);
    p.variant = DecayVariant::kExp;
    EXPECT_DOUBLE_EQ(variant_tau(p, 0.4), 1.0 - 0.1 * std::exp(-2.0));
    for (auto v : {DecayVariant::kConstant, DecayVariant::kPow, DecayVariant::kExp, DecayVariant::kNone}) {
        p.variant = v;
        for (double o = 0.001; o < 1.0; o += 0.01) {
            const auto [tau, dtau] = variant_tau_with_grad(p, o);
            EXPECT_GT(tau, 0.0);
            EXPECT_LE(tau, 1.0);
            const double h = 1e-7;
            EXPECT_NEAR(dtau, (variant_tau(p, o + h) - variant_tau(p, o - h)) / (2 * h), 1e-6);
        }
    }
}

TEST(VariantTau, ParseNames) {
    for (auto v : {DecayVariant::kNone, DecayVariant::kConstant, DecayVariant::kPow, DecayVariant::kExp,
                   DecayVariant::kNeural})
        EXPECT_EQ(parse_decay_variant(to_string(v)), v);
    EXPECT_THROW(parse_decay_variant("linear"), Error);
}

TEST(SelectTau, VisibleGetNetworkInvisibleGetBeta) {
    const DecayNet<double> net = DecayNet<double>::initialized(13);
    std::mt19937_64 rng(13);
    std::vector<DecayInput<double>> inputs;
    for (int i = 0; i < 6; ++i) inputs.push_back(random_input(rng));
    VisibleSet vis;
    vis.scene_size = 6;
    vis.indices = {1, 4};
    DecayPolicy policy;
    EXPECT_EQ(policy.beta_invisible, 0.999);
    EXPECT_EQ(policy.constant_tau, 0.9);
    const auto tau = select_tau<double>(vis, &net, inputs, policy);
    for (std::uint32_t i = 0; i < 6; ++i) {
        if (vis.contains(i))
            EXPECT_EQ(tau[i], net.forward(inputs[i]));
        else
            EXPECT_EQ(tau[i], 0.999);
    }
}

TEST(SelectTau, EmptyVisibleSetGivesBetaEverywhere) {
    const DecayNet<double> net = DecayNet<double>::initialized(14);
    std::vector<DecayInput<double>> inputs(5);
    VisibleSet vis;
    vis.scene_size = 5;
    const auto tau = select_tau<double>(vis, &net, inputs, DecayPolicy{});
    for (double t : tau) EXPECT_EQ(t, 0.999);
}

TEST(SelectTau, IndexOutOfRangeIsUsageError) {
    const DecayNet<double> net = DecayNet<double>::initialized(15);
    std::vector<DecayInput<double>> inputs(3);
    VisibleSet vis;
    vis.scene_size = 3;
    vis.indices = {0, 7};
    try {
        select_tau<double>(vis, &net, inputs, DecayPolicy{});
        FAIL() << "expected an error";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::kUsage);
    }
}

TEST(DecayPolicy, Validation) {
    DecayPolicy p;
    EXPECT_NO_THROW(p.validate());
    p.beta_invisible = 0.0;
    EXPECT_THROW(p.validate(), Error);
    p.beta_invisible = 0.999;
    p.constant_tau = 1.5;
    EXPECT_THROW(p.validate(), Error);
}

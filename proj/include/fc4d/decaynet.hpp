#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fc4d/core4d.hpp"
#include "fc4d/scene.hpp"
#include "fc4d/error.hpp"
#include "fc4d/math.hpp"
#include "fc4d/visibility.hpp"

namespace fc4d {

inline constexpr int kDecayInputs = 12;
inline constexpr int kDecayHidden = 64;

/// Per-Gaussian features fed to the decay network: AABB-normalized position,
/// stored opacity, then both rotation quaternions.
template <typename T> using DecayInput = std::array<T, kDecayInputs>;

template <typename T> DecayInput<T> make_decay_input(const Gaussian4D<T>& g, const Aabb<T>& aabb) {
    DecayInput<T> in{};
    const Vec3<T> ext = aabb.extent();
    for (int i = 0; i < 3; ++i) in[i] = T(2) * (g.position[i] - aabb.lo[i]) / ext[i] - T(1);
    in[3] = g.opacity();
    for (int i = 0; i < 4; ++i) in[4 + i] = g.rot_left[i];
    for (int i = 0; i < 4; ++i) in[8 + i] = g.rot_right[i];
    return in;
}

/// Routes a gradient on the network input back onto the Gaussian's parameters.
template <typename T>
void decay_input_backward(const Gaussian4D<T>& g, const Aabb<T>& aabb, const DecayInput<T>& d_input,
                          Gaussian4D<T>& grad) {
    const Vec3<T> ext = aabb.extent();
    for (int i = 0; i < 3; ++i) grad.position[i] += d_input[i] * T(2) / ext[i];
    const T o = g.opacity();
    grad.opacity_logit += d_input[3] * o * (T(1) - o);
    for (int i = 0; i < 4; ++i) grad.rot_left[i] += d_input[4 + i];
    for (int i = 0; i < 4; ++i) grad.rot_right[i] += d_input[8 + i];
}

/// Activations of one forward pass, required by `DecayNet::backward`.
template <typename T> struct DecayActivations {
    bool valid = false;
    DecayInput<T> input{};
    std::array<T, kDecayHidden> pre1{}, h1{}, pre2{}, h2{};
    T pre3 = T(0);
    T tau = T(0);
};

/// The neural decaying function: a 12 -> 64 -> 64 -> 1 rectifier MLP with a
/// logistic output, so the predicted factor is always in (0, 1).
///
/// Parameters live in one flat vector laid out as W1, b1, W2, b2, W3, b3 with
/// row-major weights (row = output unit).
template <typename T> class DecayNet {
public:
    static constexpr std::size_t kW1 = 0;
    static constexpr std::size_t kB1 = kW1 + kDecayHidden * kDecayInputs;
    static constexpr std::size_t kW2 = kB1 + kDecayHidden;
    static constexpr std::size_t kB2 = kW2 + kDecayHidden * kDecayHidden;
    static constexpr std::size_t kW3 = kB2 + kDecayHidden;
    static constexpr std::size_t kB3 = kW3 + kDecayHidden;
    static constexpr std::size_t kParamCount = kB3 + 1;

    DecayNet() : params_(kParamCount, T(0)) {}

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases, then the
    /// output bias is set to `output_bias` so the initial factor is near one.
    static DecayNet initialized(std::uint64_t seed, T output_bias = T(4)) {
        DecayNet net;
        std::mt19937_64 rng(seed);
        auto fill = [&](std::size_t begin, std::size_t end, double fan_in) {
            std::uniform_real_distribution<double> u(-1.0 / std::sqrt(fan_in), 1.0 / std::sqrt(fan_in));
            for (std::size_t i = begin; i < end; ++i) net.params_[i] = T(u(rng));
        };
        fill(kW1, kW2, kDecayInputs);
        fill(kW2, kW3, kDecayHidden);
        fill(kW3, kB3, kDecayHidden);
        net.params_[kB3] = output_bias;
        return net;
    }

    std::span<T> params() { return params_; }
    std::span<const T> params() const { return params_; }
    static constexpr std::size_t parameter_count() { return kParamCount; }

    template <typename U> DecayNet<U> cast() const {
        DecayNet<U> out;
        for (std::size_t i = 0; i < kParamCount; ++i) out.params()[i] = U(params_[i]);
        return out;
    }

    T forward(const DecayInput<T>& input) const {
        DecayActivations<T> act;
        return forward(input, act);
    }

    T forward(const DecayInput<T>& input, DecayActivations<T>& act) const {
        for (T v : input)
            if (!std::isfinite(static_cast<double>(v)))
                fail(ErrorKind::kInvalidParameter, "decay network input is not finite");
        act.input = input;
        for (int j = 0; j < kDecayHidden; ++j) {
            T acc = params_[kB1 + j];
            const T* w = &params_[kW1 + static_cast<std::size_t>(j) * kDecayInputs];
            for (int i = 0; i < kDecayInputs; ++i) acc += w[i] * input[i];
            act.pre1[j] = acc;
            act.h1[j] = acc > T(0) ? acc : T(0);
        }
        for (int j = 0; j < kDecayHidden; ++j) {
            T acc = params_[kB2 + j];
            const T* w = &params_[kW2 + static_cast<std::size_t>(j) * kDecayHidden];
            for (int i = 0; i < kDecayHidden; ++i) acc += w[i] * act.h1[i];
            act.pre2[j] = acc;
            act.h2[j] = acc > T(0) ? acc : T(0);
        }
        T acc = params_[kB3];
        for (int i = 0; i < kDecayHidden; ++i) acc += params_[kW3 + i] * act.h2[i];
        act.pre3 = acc;
        act.tau = sigmoid(acc);
        act.valid = true;
        return act.tau;
    }

    /// Accumulates parameter gradients into `d_params` (size kParamCount) and
    /// returns the gradient with respect to the input features.
    DecayInput<T> backward(const DecayActivations<T>& act, T d_tau, std::span<T> d_params) const {
        if (!act.valid) fail(ErrorKind::kUsage, "decay backward called without cached forward activations");
        if (d_params.size() != kParamCount) fail(ErrorKind::kUsage, "decay gradient buffer has the wrong size");
        DecayInput<T> d_in{};
        if (d_tau == T(0)) return d_in;

        const T d_pre3 = d_tau * act.tau * (T(1) - act.tau);
        d_params[kB3] += d_pre3;
        std::array<T, kDecayHidden> d_pre2{};
        for (int i = 0; i < kDecayHidden; ++i) {
            d_params[kW3 + i] += d_pre3 * act.h2[i];
            d_pre2[i] = act.pre2[i] > T(0) ? d_pre3 * params_[kW3 + i] : T(0);
        }
        std::array<T, kDecayHidden> d_h1{};
        for (int j = 0; j < kDecayHidden; ++j) {
            if (d_pre2[j] == T(0)) continue;
            d_params[kB2 + j] += d_pre2[j];
            const std::size_t row = kW2 + static_cast<std::size_t>(j) * kDecayHidden;
            for (int i = 0; i < kDecayHidden; ++i) {
                d_params[row + i] += d_pre2[j] * act.h1[i];
                d_h1[i] += d_pre2[j] * params_[row + i];
            }
        }
        for (int j = 0; j < kDecayHidden; ++j) {
            if (!(act.pre1[j] > T(0)) || d_h1[j] == T(0)) continue;
            const T d_pre1 = d_h1[j];
            d_params[kB1 + j] += d_pre1;
            const std::size_t row = kW1 + static_cast<std::size_t>(j) * kDecayInputs;
            for (int i = 0; i < kDecayInputs; ++i) {
                d_params[row + i] += d_pre1 * act.input[i];
                d_in[i] += d_pre1 * params_[row + i];
            }
        }
        return d_in;
    }

    bool operator==(const DecayNet&) const = default;

private:
    std::vector<T> params_;
};

template <typename T> T decay_forward(const DecayNet<T>& net, const DecayInput<T>& input) { return net.forward(input); }

template <typename T>
DecayInput<T> decay_backward(const DecayNet<T>& net, const DecayActivations<T>& act, T d_tau, std::span<T> d_params) {
    return net.backward(act, d_tau, d_params);
}

/// Final opacity of a primitive: decay factor times temporal weight times stored opacity.
template <typename T> T apply_decay(T tau, T weight, T opacity) { return tau * weight * opacity; }

enum class DecayVariant { kNone, kConstant, kPow, kExp, kNeural };

inline const char* to_string(DecayVariant v) {
    switch (v) {
        case DecayVariant::kNone: return "none";
        case DecayVariant::kConstant: return "constant";
        case DecayVariant::kPow: return "pow";
        case DecayVariant::kExp: return "exp";
        case DecayVariant::kNeural: return "neural";
    }
    return "none";
}

inline DecayVariant parse_decay_variant(const std::string& s) {
    if (s == "none") return DecayVariant::kNone;
    if (s == "constant") return DecayVariant::kConstant;
    if (s == "pow") return DecayVariant::kPow;
    if (s == "exp") return DecayVariant::kExp;
    if (s == "neural") return DecayVariant::kNeural;
    fail(ErrorKind::kUsage, "unknown decay variant '" + s + "'");
}

struct DecayPolicy {
    DecayVariant variant = DecayVariant::kNeural;
    double constant_tau = 0.9;
    double beta_invisible = 0.999;
    // pow: 1 - a (1 - o)^p
    double pow_scale = 0.1;
    double pow_exponent = 2.0;
    // exp: 1 - a exp(-b o)
    double exp_scale = 0.1;
    double exp_rate = 5.0;

    void validate() const {
        if (!(beta_invisible > 0.0 && beta_invisible <= 1.0))
            fail(ErrorKind::kInvalidParameter, "beta_invisible must be in (0, 1]");
        if (!(constant_tau > 0.0 && constant_tau <= 1.0))
            fail(ErrorKind::kInvalidParameter, "constant_tau must be in (0, 1]");
        if (!(pow_scale >= 0.0 && pow_scale < 1.0) || !(exp_scale >= 0.0 && exp_scale < 1.0))
            fail(ErrorKind::kInvalidParameter, "pow/exp decay scales must be in [0, 1)");
    }
};

/// Hand-designed decay factor of the non-neural variants, with its derivative
/// with respect to the stored opacity.
template <typename T> std::pair<T, T> variant_tau_with_grad(const DecayPolicy& policy, T opacity) {
    using std::exp;
    using std::pow;
    switch (policy.variant) {
        case DecayVariant::kNone: return {T(1), T(0)};
        case DecayVariant::kConstant: return {T(policy.constant_tau), T(0)};
        case DecayVariant::kPow: {
            const T a = T(policy.pow_scale), p = T(policy.pow_exponent);
            const T base = T(1) - opacity;
            return {T(1) - a * pow(base, p), a * p * pow(base, p - T(1))};
        }
        case DecayVariant::kExp: {
            const T a = T(policy.exp_scale), b = T(policy.exp_rate);
            const T e = exp(-b * opacity);
            return {T(1) - a * e, a * b * e};
        }
        case DecayVariant::kNeural: break;
    }
    fail(ErrorKind::kUsage, "variant_tau is undefined for the neural variant");
}

template <typename T> T variant_tau(const DecayPolicy& policy, T opacity) {
    return variant_tau_with_grad(policy, opacity).first;
}

/// Separate decay: visible Gaussians get the variant's factor (the network for
/// the neural variant), invisible ones get the constant beta.
template <typename T>
std::vector<T> select_tau(const VisibleSet& visible, const DecayNet<T>* net, std::span<const DecayInput<T>> inputs,
                          const DecayPolicy& policy) {
    const std::size_t n = inputs.size();
    for (std::uint32_t i : visible.indices)
        if (i >= n) fail(ErrorKind::kUsage, "visible index " + std::to_string(i) + " out of range");
    std::vector<T> tau(n, T(policy.beta_invisible));
    for (std::uint32_t i : visible.indices) {
        if (policy.variant == DecayVariant::kNeural) {
            if (net == nullptr) fail(ErrorKind::kUsage, "neural decay requires a network");
            tau[i] = net->forward(inputs[i]);
        } else {
            tau[i] = variant_tau(policy, inputs[i][3]);
        }
    }
    return tau;
}

}  // namespace fc4d

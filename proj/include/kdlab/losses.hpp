#pragma once

// Temperature softmax, label-smoothing labels/loss, and the distillation
// loss. Every loss returns its value together with the exact gradient with
// respect to the logits. Natural logarithms (nats) throughout.
//
// All internal arithmetic is binary64; results are cast to the tensor's
// scalar type on the way out.

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "kdlab/common.hpp"
#include "kdlab/tensor.hpp"

namespace kdlab {

constexpr double kEpsLog = 1e-12;  // clamp inside every log

template <typename Scalar>
struct BasicDistribution {
    BasicTensor<Scalar> probs;  // rank-1, length C

    std::size_t size() const { return probs.size(); }
    Scalar operator[](std::size_t i) const { return probs[i]; }

    // Validated construction: entries >= 0 and sum within 1e-6 of 1.
    static BasicDistribution checked(BasicTensor<Scalar> p) {
        double sum = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) {
            if (p[i] < Scalar(0)) throw ShapeError("distribution entry < 0");
            sum += static_cast<double>(p[i]);
        }
        if (std::abs(sum - 1.0) > 1e-6)
            throw ShapeError("distribution sums to " + format_double(sum) + ", not 1");
        return BasicDistribution{std::move(p)};
    }
};

using Distribution = BasicDistribution<float>;
using DistributionD = BasicDistribution<double>;

struct LossConfig {
    double alpha_ls = 0.0;       // in [0, 1]
    double alpha_kd = 0.99;      // in [0, 1]
    double temperature = 9.0;    // > 0
    bool kl_t_squared = true;    // multiply the KL term by T^2
    double eps_log = kEpsLog;

    void validate() const {
        if (alpha_ls < 0.0 || alpha_ls > 1.0) throw ConfigError("alpha_ls must be in [0, 1]");
        if (alpha_kd < 0.0 || alpha_kd > 1.0) throw ConfigError("alpha_kd must be in [0, 1]");
        if (temperature <= 0.0) throw ConfigError("temperature must be > 0");
    }
};

namespace detail {

template <typename Scalar>
std::vector<double> softmax_t_f64(const BasicTensor<Scalar>& logits, double T) {
    if (T <= 0.0) throw ConfigError("softmax temperature must be > 0, got " + format_double(T));
    if (logits.rank() != 1) throw ShapeError("softmax_t expects a rank-1 logit vector");
    const std::size_t n = logits.size();
    double zmax = -HUGE_VAL;
    for (std::size_t i = 0; i < n; ++i) zmax = std::max(zmax, static_cast<double>(logits[i]));
    std::vector<double> e(n);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        e[i] = std::exp((static_cast<double>(logits[i]) - zmax) / T);
        sum += e[i];
    }
    for (std::size_t i = 0; i < n; ++i) e[i] /= sum;
    return e;
}

inline double xent_f64(const std::vector<double>& q, const std::vector<double>& p, double eps) {
    double v = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) v -= q[i] * std::log(std::max(p[i], eps));
    return v;
}

template <typename Scalar>
std::vector<double> to_f64(const BasicTensor<Scalar>& t) {
    std::vector<double> v(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) v[i] = static_cast<double>(t[i]);
    return v;
}

template <typename Scalar>
BasicTensor<Scalar> from_f64(const std::vector<double>& v) {
    std::vector<Scalar> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<Scalar>(v[i]);
    return BasicTensor<Scalar>({v.size()}, std::move(out));
}

}  // namespace detail

// q_i = exp(z_i / T) / sum_j exp(z_j / T), evaluated max-subtracted.
template <typename Scalar>
BasicDistribution<Scalar> softmax_t(const BasicTensor<Scalar>& logits, double T) {
    return BasicDistribution<Scalar>{detail::from_f64<Scalar>(detail::softmax_t_f64(logits, T))};
}

// Smoothed target: (1 - alpha) * onehot(cls) + alpha / C.
template <typename Scalar = float>
BasicDistribution<Scalar> ls_labels(int cls, int num_classes, double alpha_ls) {
    if (num_classes <= 0) throw ConfigError("ls_labels needs a positive class count");
    if (cls < 0 || cls >= num_classes)
        throw ConfigError("ls_labels class " + std::to_string(cls) + " out of range [0, " +
                          std::to_string(num_classes) + ")");
    if (alpha_ls < 0.0 || alpha_ls > 1.0) throw ConfigError("alpha_ls must be in [0, 1]");
    std::vector<Scalar> v(static_cast<std::size_t>(num_classes),
                          static_cast<Scalar>(alpha_ls / num_classes));
    v[static_cast<std::size_t>(cls)] =
        static_cast<Scalar>((1.0 - alpha_ls) + alpha_ls / num_classes);
    return BasicDistribution<Scalar>{BasicTensor<Scalar>({static_cast<std::size_t>(num_classes)}, std::move(v))};
}

// H(q, p) = -sum q_i ln(max(p_i, eps)).
template <typename Scalar>
double cross_entropy(const BasicDistribution<Scalar>& q, const BasicDistribution<Scalar>& p,
                     double eps = kEpsLog) {
    if (q.size() != p.size()) throw ShapeError("cross_entropy dimension mismatch");
    double v = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i)
        v -= static_cast<double>(q[i]) * std::log(std::max(static_cast<double>(p[i]), eps));
    return v;
}

// D_KL(a || b) = sum a_i ln(a_i / b_i); zero entries of a contribute zero.
template <typename Scalar>
double kl_div(const BasicDistribution<Scalar>& a, const BasicDistribution<Scalar>& b,
              double eps = kEpsLog) {
    if (a.size() != b.size()) throw ShapeError("kl_div dimension mismatch");
    double v = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double ai = static_cast<double>(a[i]);
        if (ai <= 0.0) continue;
        v += ai * (std::log(std::max(ai, eps)) - std::log(std::max(static_cast<double>(b[i]), eps)));
    }
    return v;
}

template <typename Scalar>
struct LossResult {
    double value = 0.0;
    BasicTensor<Scalar> dlogits;
};

// L_LS = (1 - alpha_LS) * H(q, p) + alpha_LS * D_KL(u, p), p = softmax(z, 1).
// dL/dz = p - [(1 - alpha_LS) q + alpha_LS u].
template <typename Scalar>
LossResult<Scalar> ls_loss(const BasicDistribution<Scalar>& q, const BasicTensor<Scalar>& logits,
                           const LossConfig& cfg) {
    cfg.validate();
    if (q.size() != logits.size()) throw ShapeError("ls_loss dimension mismatch");
    const std::size_t n = logits.size();
    const double a = cfg.alpha_ls;
    const double u = 1.0 / static_cast<double>(n);
    const std::vector<double> p = detail::softmax_t_f64(logits, 1.0);

    double ce = 0.0, klup = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double lp = std::log(std::max(p[i], cfg.eps_log));
        ce -= static_cast<double>(q[i]) * lp;
        klup += u * (std::log(u) - lp);
    }
    std::vector<double> g(n);
    for (std::size_t i = 0; i < n; ++i)
        g[i] = p[i] - ((1.0 - a) * static_cast<double>(q[i]) + a * u);
    return {(1.0 - a) * ce + a * klup, detail::from_f64<Scalar>(g)};
}

// L_KD = (1 - alpha_KD) * H(q, p) + alpha_KD * s * D_KL(t, p_T)
// with p = softmax(z, 1), p_T = softmax(z, T), t the teacher response already
// softened at T, and s = T^2 when kl_t_squared (compensates the 1/T gradient
// attenuation) else 1.
// dL/dz = (1 - alpha_KD)(p - q) + alpha_KD * s * (p_T - t) / T.
template <typename Scalar>
LossResult<Scalar> kd_loss(const BasicDistribution<Scalar>& q_true,
                           const BasicDistribution<Scalar>& teacher_probs_t,
                           const BasicTensor<Scalar>& logits, const LossConfig& cfg) {
    cfg.validate();
    const std::size_t n = logits.size();
    if (q_true.size() != n || teacher_probs_t.size() != n)
        throw ShapeError("kd_loss dimension mismatch");
    const double a = cfg.alpha_kd;
    const double T = cfg.temperature;

    const std::vector<double> p = detail::softmax_t_f64(logits, 1.0);
    double value = 0.0;
    std::vector<double> g(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        value -= static_cast<double>(q_true[i]) * std::log(std::max(p[i], cfg.eps_log));
        g[i] = p[i] - static_cast<double>(q_true[i]);
    }
    value *= (1.0 - a);
    for (std::size_t i = 0; i < n; ++i) g[i] *= (1.0 - a);

    if (a > 0.0) {  // skipped entirely at alpha_kd = 0 so the reduction to plain CE is bit-exact
        const std::vector<double> pt = detail::softmax_t_f64(logits, T);
        const double scale = cfg.kl_t_squared ? T * T : 1.0;
        double kl = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double ti = static_cast<double>(teacher_probs_t[i]);
            if (ti > 0.0)
                kl += ti * (std::log(std::max(ti, cfg.eps_log)) - std::log(std::max(pt[i], cfg.eps_log)));
            g[i] += a * scale * (pt[i] - ti) / T;
        }
        value += a * scale * kl;
    }
    return {value, detail::from_f64<Scalar>(g)};
}

}  // namespace kdlab

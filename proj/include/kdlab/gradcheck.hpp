#pragma once

// Central finite-difference verification of the analytic gradients.
//
// The model is cast to binary64 and every parameter is perturbed by +-eps;
// (f(t+eps) - f(t-eps)) / 2 eps is compared against the backward() gradient.
// Stochastic layers stay comparable because every forward pass re-seeds the
// dropout stream with the same value, freezing the masks across perturbations.

#include <cmath>
#include <cstdint>

#include "kdlab/losses.hpp"
#include "kdlab/model.hpp"

namespace kdlab {

// loss_fn: (const BasicTensor<double>& logits [B x C]) -> LossResult<double>,
// the scalar training loss with its exact logit gradient.
template <typename Scalar, typename LossFn>
double grad_check(const BasicModel<Scalar>& model, LossFn&& loss_fn,
                  const BasicTensor<Scalar>& batch, double eps,
                  std::uint64_t forward_seed = 0x5eedULL) {
    if (eps <= 0.0) throw ConfigError("grad_check eps must be > 0");
    BasicModel<double> m = model.template cast<double>();
    const BasicTensor<double> b = batch.template cast<double>();

    auto run = [&](const BasicModel<double>& mm) {
        SeededRng rng(forward_seed);
        return forward(mm, b, &rng);
    };

    ForwardResult<double> fwd = run(m);
    LossResult<double> base = loss_fn(fwd.logits);
    if (!std::isfinite(base.value))
        throw DivergenceError("grad_check: loss is non-finite at the base point", -1, -1);
    ParamSet<double> analytic = backward(m, fwd, base.dlogits);

    double max_rel = 0.0;
    for (std::size_t li = 0; li < m.params.size(); ++li) {
        for (std::size_t pi = 0; pi < m.params[li].size(); ++pi) {
            BasicTensor<double>& t = m.params[li][pi];
            for (std::size_t i = 0; i < t.size(); ++i) {
                const double orig = t[i];
                t[i] = orig + eps;
                const double fp = loss_fn(run(m).logits).value;
                t[i] = orig - eps;
                const double fm = loss_fn(run(m).logits).value;
                t[i] = orig;
                if (!std::isfinite(fp) || !std::isfinite(fm))
                    throw DivergenceError("grad_check: loss is non-finite under perturbation", -1, -1);
                const double num = (fp - fm) / (2.0 * eps);
                const double ana = analytic[li][pi][i];
                const double rel =
                    std::abs(num - ana) / std::max({std::abs(num), std::abs(ana), 1e-8});
                max_rel = std::max(max_rel, rel);
            }
        }
    }
    return max_rel;
}

}  // namespace kdlab

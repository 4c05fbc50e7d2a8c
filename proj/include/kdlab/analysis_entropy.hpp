#pragma once

// Shannon entropy of a response row, in nats. Split out of the analysis
// header because transfer-set ranking needs it too.

#include <cmath>

#include "kdlab/losses.hpp"

namespace kdlab {

// E = -sum p_i ln p_i, zero entries contributing zero. Accepts rows that are
// only approximately normalized (printed tables round their entries).
template <typename Scalar>
double entropy(const BasicDistribution<Scalar>& p, double eps = kEpsLog) {
    double e = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double v = static_cast<double>(p[i]);
        if (v > 0.0) e -= v * std::log(std::max(v, eps));
    }
    return e;
}

}  // namespace kdlab

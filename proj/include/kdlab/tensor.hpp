#pragma once

// Dense row-major tensor and the numeric kernels everything else builds on.
//
// Storage is binary32 in production use (Scalar = float); reductions always
// accumulate in binary64 with a fixed left-to-right summation order, so every
// kernel is bit-reproducible across runs and thread counts. The same templates
// instantiate with Scalar = double for finite-difference gradient checks.
//
// OpenMP loops only ever split disjoint output slices; each output element is
// produced by one thread with the same accumulation order as the serial code,
// hence results do not depend on the thread count.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "kdlab/common.hpp"
#include "kdlab/rng.hpp"

namespace kdlab {

template <typename Scalar>
class BasicTensor {
  public:
    BasicTensor() = default;

    explicit BasicTensor(std::vector<std::size_t> shape)
        : shape_(std::move(shape)), data_(checked_size(shape_), Scalar(0)) {}

    BasicTensor(std::vector<std::size_t> shape, std::vector<Scalar> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != checked_size(shape_))
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape product " + std::to_string(checked_size(shape_)));
    }

    static BasicTensor zeros(std::vector<std::size_t> shape) { return BasicTensor(std::move(shape)); }

    static BasicTensor full(std::vector<std::size_t> shape, Scalar v) {
        BasicTensor t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), v);
        return t;
    }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    std::size_t extent(std::size_t d) const { return shape_.at(d); }

    Scalar* data() { return data_.data(); }
    const Scalar* data() const { return data_.data(); }
    Scalar& operator[](std::size_t i) { return data_[i]; }
    Scalar operator[](std::size_t i) const { return data_[i]; }

    std::vector<Scalar>& raw() { return data_; }
    const std::vector<Scalar>& raw() const { return data_; }

    // Reinterpret with a new shape of identical volume.
    BasicTensor reshaped(std::vector<std::size_t> shape) const {
        if (checked_size(shape) != data_.size())
            throw ShapeError("reshape volume mismatch");
        return BasicTensor(std::move(shape), data_);
    }

    bool same_shape(const BasicTensor& o) const { return shape_ == o.shape_; }

    template <typename T>
    BasicTensor<T> cast() const {
        std::vector<T> out(data_.size());
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<T>(data_[i]);
        return BasicTensor<T>(shape_, std::move(out));
    }

    bool all_finite() const {
        for (Scalar v : data_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    static std::size_t checked_size(const std::vector<std::size_t>& shape) {
        std::size_t n = 1;
        for (std::size_t e : shape) {
            if (e == 0) throw ShapeError("zero extent in tensor shape");
            n *= e;
        }
        return shape.empty() ? 0 : n;
    }

  private:
    std::vector<std::size_t> shape_;
    std::vector<Scalar> data_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

enum class Padding { valid, same };

inline const char* to_string(Padding p) { return p == Padding::valid ? "valid" : "same"; }

namespace detail {

// Output extent of a 1-D convolution axis.
//   valid: floor((n - k) / stride) + 1, requires k <= n
//   same:  ceil(n / stride); total padding max((out-1)*stride + k - n, 0),
//          split low = pad/2 (floor), high = rest.
inline std::size_t conv_out_extent(std::size_t n, std::size_t k, std::size_t stride, Padding pad) {
    if (pad == Padding::valid) {
        if (k > n) throw ShapeError("kernel extent " + std::to_string(k) +
                                    " larger than input extent " + std::to_string(n));
        return (n - k) / stride + 1;
    }
    return (n + stride - 1) / stride;
}

inline std::size_t conv_pad_low(std::size_t n, std::size_t k, std::size_t stride, Padding pad) {
    if (pad == Padding::valid) return 0;
    const std::size_t out = conv_out_extent(n, k, stride, pad);
    const std::ptrdiff_t total =
        static_cast<std::ptrdiff_t>((out - 1) * stride + k) - static_cast<std::ptrdiff_t>(n);
    return total > 0 ? static_cast<std::size_t>(total) / 2 : 0;
}

// Accumulate one (input plane, kernel plane) pair into a per-channel binary64
// buffer. For every output element the contribution order is (ky, kx)
// ascending; callers iterate input channels ascending, giving the fixed
// (ci, ky, kx) summation order for the whole convolution.
template <typename Scalar>
void conv_accumulate_plane(double* acc, const Scalar* in, const Scalar* ker,
                           std::size_t h, std::size_t w, std::size_t oh, std::size_t ow,
                           std::size_t kh, std::size_t kw, std::size_t stride,
                           std::size_t pad_y, std::size_t pad_x) {
    for (std::size_t ky = 0; ky < kh; ++ky) {
        for (std::size_t kx = 0; kx < kw; ++kx) {
            const double wv = static_cast<double>(ker[ky * kw + kx]);
            for (std::size_t oy = 0; oy < oh; ++oy) {
                const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                          static_cast<std::ptrdiff_t>(pad_y);
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                double* arow = acc + oy * ow;
                const Scalar* irow = in + static_cast<std::size_t>(iy) * w;
                for (std::size_t ox = 0; ox < ow; ++ox) {
                    const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                              static_cast<std::ptrdiff_t>(pad_x);
                    if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                    arow[ox] += wv * static_cast<double>(irow[ix]);
                }
            }
        }
    }
}

}  // namespace detail

// Matrix product a[m x k] * b[k x n]. Accumulates each output element in
// binary64, left-to-right over k.
template <typename Scalar>
BasicTensor<Scalar> matmul(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw ShapeError("matmul expects rank-2 tensors");
    const std::size_t m = a.extent(0), k = a.extent(1), k2 = b.extent(0), n = b.extent(1);
    if (k != k2)
        throw ShapeError("matmul inner extents differ: " + std::to_string(k) + " vs " + std::to_string(k2));
    BasicTensor<Scalar> c({m, n});
    const Scalar* ap = a.data();
    const Scalar* bp = b.data();
    Scalar* cp = c.data();
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i) {
        std::vector<double> acc(n, 0.0);
        const Scalar* arow = ap + static_cast<std::size_t>(i) * k;
        for (std::size_t t = 0; t < k; ++t) {
            const double av = static_cast<double>(arow[t]);
            const Scalar* brow = bp + t * n;
            for (std::size_t j = 0; j < n; ++j) acc[j] += av * static_cast<double>(brow[j]);
        }
        Scalar* crow = cp + static_cast<std::size_t>(i) * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] = static_cast<Scalar>(acc[j]);
    }
    return c;
}

// 2-D cross-correlation (no kernel flip) of input [c_in x h x w] with kernels
// [c_out x c_in x kh x kw]. Output [c_out x h' x w'] with the extent formulas
// in detail::conv_out_extent.
template <typename Scalar>
BasicTensor<Scalar> conv2d(const BasicTensor<Scalar>& input, const BasicTensor<Scalar>& kernels,
                           std::size_t stride, Padding padding) {
    if (input.rank() != 3) throw ShapeError("conv2d input must be [c_in x h x w]");
    if (kernels.rank() != 4) throw ShapeError("conv2d kernels must be [c_out x c_in x kh x kw]");
    if (stride < 1) throw ShapeError("conv2d stride must be >= 1");
    const std::size_t cin = input.extent(0), h = input.extent(1), w = input.extent(2);
    if (kernels.extent(1) != cin)
        throw ShapeError("conv2d channel mismatch: input c_in " + std::to_string(cin) +
                         ", kernels expect " + std::to_string(kernels.extent(1)));
    const std::size_t cout = kernels.extent(0), kh = kernels.extent(2), kw = kernels.extent(3);
    const std::size_t oh = detail::conv_out_extent(h, kh, stride, padding);
    const std::size_t ow = detail::conv_out_extent(w, kw, stride, padding);
    const std::size_t pad_y = detail::conv_pad_low(h, kh, stride, padding);
    const std::size_t pad_x = detail::conv_pad_low(w, kw, stride, padding);

    BasicTensor<Scalar> out({cout, oh, ow});
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t o = 0; o < static_cast<std::ptrdiff_t>(cout); ++o) {
        std::vector<double> acc(oh * ow, 0.0);
        for (std::size_t ci = 0; ci < cin; ++ci) {
            detail::conv_accumulate_plane(acc.data(), input.data() + ci * h * w,
                                          kernels.data() + ((static_cast<std::size_t>(o) * cin + ci) * kh * kw),
                                          h, w, oh, ow, kh, kw, stride, pad_y, pad_x);
        }
        Scalar* orow = out.data() + static_cast<std::size_t>(o) * oh * ow;
        for (std::size_t i = 0; i < oh * ow; ++i) orow[i] = static_cast<Scalar>(acc[i]);
    }
    return out;
}

// Non-overlapping 2x2 max pooling of [c x h x w] (h, w even). The index map
// stores, per output element, the flat index of the winning input element;
// ties break toward the lowest flat index.
template <typename Scalar>
std::pair<BasicTensor<Scalar>, std::vector<std::size_t>> maxpool2(const BasicTensor<Scalar>& input) {
    if (input.rank() != 3) throw ShapeError("maxpool2 input must be [c x h x w]");
    const std::size_t c = input.extent(0), h = input.extent(1), w = input.extent(2);
    if (h % 2 != 0 || w % 2 != 0)
        throw ShapeError("maxpool2 requires even spatial extents, got " +
                         std::to_string(h) + "x" + std::to_string(w));
    BasicTensor<Scalar> out({c, h / 2, w / 2});
    std::vector<std::size_t> argmax(out.size());
    const Scalar* in = input.data();
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t oy = 0; oy < h / 2; ++oy) {
            for (std::size_t ox = 0; ox < w / 2; ++ox) {
                const std::size_t base = (ch * h + 2 * oy) * w + 2 * ox;
                const std::size_t cand[4] = {base, base + 1, base + w, base + w + 1};
                std::size_t best = cand[0];
                for (int t = 1; t < 4; ++t)
                    if (in[cand[t]] > in[best]) best = cand[t];
                const std::size_t oi = (ch * (h / 2) + oy) * (w / 2) + ox;
                out[oi] = in[best];
                argmax[oi] = best;
            }
        }
    }
    return {std::move(out), std::move(argmax)};
}

enum class Dist { uniform01, standard_normal };

// Draw n samples, advancing the generator. Reproducible: the result is a pure
// function of (rng state, n, dist).
template <typename Scalar = float>
BasicTensor<Scalar> rng_draw(SeededRng& rng, std::size_t n, Dist dist) {
    std::vector<Scalar> v(n);
    if (dist == Dist::uniform01) {
        for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<Scalar>(rng.uniform01());
    } else {
        for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<Scalar>(rng.normal());
    }
    if (n == 0) return BasicTensor<Scalar>();
    return BasicTensor<Scalar>({n}, std::move(v));
}

}  // namespace kdlab

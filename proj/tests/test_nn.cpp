#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "kdlab/gradcheck.hpp"
#include "kdlab/layers.hpp"
#include "kdlab/losses.hpp"
#include "kdlab/model.hpp"

using namespace kdlab;
using Catch::Matchers::WithinAbs;

namespace {

TensorD random_batch(SeededRng& rng, std::vector<std::size_t> shape) {
    TensorD t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = 2.0 * rng.uniform01() - 1.0;
    return t;
}

// Mean cross-entropy against fixed random targets; the usual scalar loss for
// gradient checks.
struct XentBatchLoss {
    std::vector<DistributionD> targets;

    static XentBatchLoss random(SeededRng& rng, std::size_t batch, std::size_t classes) {
        XentBatchLoss l;
        for (std::size_t b = 0; b < batch; ++b) {
            TensorD p({classes});
            double sum = 0.0;
            for (std::size_t i = 0; i < classes; ++i) {
                p[i] = rng.uniform01() + 0.05;
                sum += p[i];
            }
            for (std::size_t i = 0; i < classes; ++i) p[i] /= sum;
            l.targets.push_back(DistributionD{std::move(p)});
        }
        return l;
    }

    LossResult<double> operator()(const BasicTensor<double>& logits) const {
        const std::size_t nb = logits.extent(0), nc = logits.extent(1);
        LossConfig cfg;
        cfg.alpha_ls = 0.0;
        double value = 0.0;
        BasicTensor<double> dl({nb, nc});
        for (std::size_t b = 0; b < nb; ++b) {
            TensorD row({nc});
            for (std::size_t i = 0; i < nc; ++i) row[i] = logits[b * nc + i];
            auto r = ls_loss(targets[b], row, cfg);
            value += r.value / double(nb);
            for (std::size_t i = 0; i < nc; ++i) dl[b * nc + i] = r.dlogits[i] / double(nb);
        }
        return {value, std::move(dl)};
    }
};

}  // namespace

TEST_CASE("param_count matches hand counts", "[nn]") {
    ModelSpec baseline{{LayerSpec::Output(10)}, {784}};
    CHECK(param_count(baseline) == 7850);

    ModelSpec two_three{{LayerSpec::Output(3)}, {2}};
    CHECK(param_count(two_three) == 9);

    ModelSpec with_relu{{LayerSpec::Dense(2, 3), LayerSpec::ReLU(), LayerSpec::Output(4)}, {2}};
    CHECK(param_count(with_relu) == (2 * 3 + 3) + (3 * 4 + 4));  // relu contributes nothing

    ModelSpec conv{{LayerSpec::Conv2D(1, 4, 3, 3, 1, Padding::same), LayerSpec::ReLU(),
                    LayerSpec::MaxPool2(), LayerSpec::Flatten(), LayerSpec::Output(2)},
                   {1, 4, 4}};
    CHECK(param_count(conv) == (4 * 9 + 4) + (4 * 2 * 2 * 2 + 2));
}

TEST_CASE("spec composition errors", "[nn]") {
    CHECK_THROWS_AS(param_count(ModelSpec{{LayerSpec::Dense(3, 2)}, {3}}), ConfigError);
    CHECK_THROWS_AS(param_count(ModelSpec{{LayerSpec::Dense(3, 2), LayerSpec::Output(2)}, {4}}),
                    ConfigError);
    CHECK_THROWS_AS(param_count(ModelSpec{{LayerSpec::Output(2), LayerSpec::ReLU()}, {4}}),
                    ConfigError);
    CHECK_THROWS_AS(param_count(ModelSpec{{LayerSpec::MaxPool2(), LayerSpec::Flatten(),
                                           LayerSpec::Output(2)},
                                          {1, 3, 4}}),
                    ConfigError);
    CHECK_THROWS_AS(LayerSpec::Dropout(1.0).validate(), ConfigError);
}

TEST_CASE("init_params is deterministic and Glorot-bounded", "[nn]") {
    ModelSpec spec{{LayerSpec::Output(10)}, {784}};
    SeededRng r1(99), r2(99);
    Model a = init_params(spec, r1);
    Model b = init_params(spec, r2);
    REQUIRE(a.params[0][0].size() == 7840);
    const double limit = std::sqrt(6.0 / 794.0);
    for (std::size_t i = 0; i < a.params[0][0].size(); ++i) {
        CHECK(a.params[0][0][i] == b.params[0][0][i]);
        CHECK(std::abs(a.params[0][0][i]) <= limit);
    }
    for (std::size_t i = 0; i < 10; ++i) CHECK(a.params[0][1][i] == 0.0f);
}

TEST_CASE("forward of a single output layer is x W + b with penultimate x", "[nn]") {
    ModelSpec spec{{LayerSpec::Output(2)}, {3}};
    SeededRng rng(4);
    auto m = init_params<double>(spec, rng);
    TensorD x = random_batch(rng, {2, 3});
    auto fwd = forward(m, x);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(fwd.penultimate[i] == x[i]);
    for (std::size_t b = 0; b < 2; ++b) {
        for (std::size_t j = 0; j < 2; ++j) {
            double want = m.params[0][1][j];
            for (std::size_t k = 0; k < 3; ++k) want += x[b * 3 + k] * m.params[0][0][k * 2 + j];
            CHECK_THAT(fwd.logits[b * 2 + j], WithinAbs(want, 1e-12));
        }
    }
}

TEST_CASE("dropout rate 0 in train mode equals eval mode", "[nn]") {
    ModelSpec spec{{LayerSpec::Dense(5, 4), LayerSpec::ReLU(), LayerSpec::Dropout(0.0),
                    LayerSpec::Output(3)},
                   {5}};
    SeededRng rng(8);
    Model m = init_params(spec, rng);
    Tensor x({2, 5});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = float(i) * 0.1f - 0.4f;
    m.mode = Mode::eval;
    auto fe = forward(m, x);
    m.mode = Mode::train;
    SeededRng drop(1);
    auto ft = forward(m, x, &drop);
    for (std::size_t i = 0; i < fe.logits.size(); ++i) CHECK(fe.logits[i] == ft.logits[i]);
}

TEST_CASE("train-mode dropout without an rng is an error", "[nn]") {
    ModelSpec spec{{LayerSpec::Dropout(0.5), LayerSpec::Output(2)}, {4}};
    SeededRng rng(3);
    Model m = init_params(spec, rng);
    m.mode = Mode::train;
    CHECK_THROWS_AS(forward(m, Tensor({1, 4})), ConfigError);
}

TEST_CASE("identical rows give identical logits in eval mode", "[nn]") {
    ModelSpec spec{{LayerSpec::Conv2D(1, 3, 3, 3, 1, Padding::same), LayerSpec::ReLU(),
                    LayerSpec::MaxPool2(), LayerSpec::Flatten(), LayerSpec::Output(4)},
                   {1, 6, 6}};
    SeededRng rng(12);
    Model m = init_params(spec, rng);
    Tensor x({2, 1, 6, 6});
    for (std::size_t i = 0; i < 36; ++i) {
        x[i] = float(i % 7) * 0.3f;
        x[36 + i] = x[i];
    }
    auto fwd = forward(m, x);
    for (std::size_t j = 0; j < 4; ++j) CHECK(fwd.logits[j] == fwd.logits[4 + j]);
}

TEST_CASE("zero dlogits give zero gradients", "[nn]") {
    ModelSpec spec{{LayerSpec::Dense(4, 3), LayerSpec::ReLU(), LayerSpec::Output(2)}, {4}};
    SeededRng rng(21);
    Model m = init_params(spec, rng);
    Tensor x({3, 4});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = 0.5f - float(i) * 0.07f;
    auto fwd = forward(m, x);
    auto grads = backward(m, fwd, Tensor({3, 2}));
    for (const auto& layer : grads)
        for (const auto& t : layer)
            for (std::size_t i = 0; i < t.size(); ++i) CHECK(t[i] == 0.0f);
}

TEST_CASE("dense weight gradient is x^T dlogits batch-summed", "[nn]") {
    ModelSpec spec{{LayerSpec::Output(2)}, {3}};
    SeededRng rng(33);
    auto m = init_params<double>(spec, rng);
    TensorD x({2, 3}, {1, 2, 3, 4, 5, 6});
    auto fwd = forward(m, x);
    TensorD dl({2, 2}, {0.1, -0.2, 0.3, 0.4});
    auto g = backward(m, fwd, dl);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 2; ++j) {
            const double want = x[i] * dl[j] + x[3 + i] * dl[2 + j];
            CHECK_THAT(g[0][0][i * 2 + j], WithinAbs(want, 1e-12));
        }
    CHECK_THAT(g[0][1][0], WithinAbs(0.4, 1e-12));
    CHECK_THAT(g[0][1][1], WithinAbs(0.2, 1e-12));
}

TEST_CASE("maxpool backward routes only to stored argmax", "[nn]") {
    ModelSpec spec{{LayerSpec::MaxPool2(), LayerSpec::Flatten(), LayerSpec::Output(2)}, {1, 2, 2}};
    SeededRng rng(2);
    auto m = init_params<double>(spec, rng);
    TensorD x({1, 1, 2, 2}, {1, 9, 3, 4});
    auto fwd = forward(m, x);
    TensorD dl({1, 2}, {1.0, 1.0});
    auto g = backward(m, fwd, dl);
    // route a probe through the input gradient instead: perturb each input and
    // confirm only the argmax position affects the loss
    const double w0 = m.params[2][0][0] + m.params[2][0][1];
    (void)w0;
    // dX arrives via the caches; verify through grad_check instead
    XentBatchLoss loss = XentBatchLoss::random(rng, 1, 2);
    CHECK(grad_check(m, loss, x, 1e-3) < 1e-4);
    // and directly: gradient of sum-of-logits wrt input is nonzero only at index 1
    auto fwd2 = forward(m, x);
    CHECK(fwd2.caches[0].argmax[0] == 1);
}

TEST_CASE("grad_check: spec example models", "[nn]") {
    SeededRng rng(101);

    ModelSpec dense_spec{{LayerSpec::Dense(4, 3), LayerSpec::Output(3)}, {4}};
    auto dm = init_params<double>(dense_spec, rng);
    TensorD db = random_batch(rng, {2, 4});
    auto dloss = XentBatchLoss::random(rng, 2, 3);
    CHECK(grad_check(dm, dloss, db, 1e-3) < 1e-4);

    ModelSpec conv_spec{{LayerSpec::Conv2D(1, 2, 3, 3, 1, Padding::valid), LayerSpec::ReLU(),
                         LayerSpec::Flatten(), LayerSpec::Dense(32, 5), LayerSpec::Output(3)},
                        {1, 6, 6}};
    auto cm = init_params<double>(conv_spec, rng);
    TensorD cb = random_batch(rng, {2, 1, 6, 6});
    auto closs = XentBatchLoss::random(rng, 2, 3);
    CHECK(grad_check(cm, closs, cb, 1e-3) < 1e-4);

    ModelSpec bn_spec{{LayerSpec::Dense(4, 6), LayerSpec::BatchNorm(6), LayerSpec::ReLU(),
                       LayerSpec::Output(3)},
                      {4}};
    auto bm = init_params<double>(bn_spec, rng);
    bm.mode = Mode::train;
    TensorD bb = random_batch(rng, {4, 4});
    auto bloss = XentBatchLoss::random(rng, 4, 3);
    CHECK(grad_check(bm, bloss, bb, 1e-3) < 1e-3);
}

TEST_CASE("grad_check across every layer kind, random shapes", "[nn]") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        SeededRng rng(seed * 7919);
        ModelSpec spec{{LayerSpec::Conv2D(2, 3, 3, 3, 1, Padding::same), LayerSpec::BatchNorm(3),
                        LayerSpec::ReLU(), LayerSpec::MaxPool2(), LayerSpec::Flatten(),
                        LayerSpec::Dense(3 * 2 * 2, 6), LayerSpec::ReLU(), LayerSpec::Dropout(0.4),
                        LayerSpec::Output(4)},
                       {2, 4, 4}};
        auto m = init_params<double>(spec, rng);
        m.mode = Mode::train;
        TensorD batch = random_batch(rng, {3, 2, 4, 4});
        auto loss = XentBatchLoss::random(rng, 3, 4);
        const double err = grad_check(m, loss, batch, 1e-3, seed);
        CHECK(err < 1e-3);  // batchnorm present, looser bound
    }
}

TEST_CASE("dropout empirical keep statistics", "[nn]") {
    const double rate = 0.3;
    ModelSpec spec{{LayerSpec::Dropout(rate), LayerSpec::Output(2)}, {100000}};
    SeededRng rng(55);
    Model m = init_params(spec, rng);
    m.mode = Mode::train;
    Tensor x = Tensor::full({1, 100000}, 1.0f);
    SeededRng drop(77);
    auto fwd = forward(m, x, &drop);
    const auto& mask = fwd.caches[0].mask;
    std::size_t zeros = 0;
    const float scale = 1.0f / (1.0f - float(rate));
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask[i] == 0.0f)
            ++zeros;
        else
            CHECK(mask[i] == scale);
    }
    CHECK_THAT(double(zeros) / double(mask.size()), WithinAbs(rate, 0.01));
}

TEST_CASE("batchnorm running statistics and eval purity", "[nn]") {
    ModelSpec spec{{LayerSpec::BatchNorm(2, 1e-5, 0.9), LayerSpec::Flatten(), LayerSpec::Output(2)},
                   {2, 2, 2}};
    SeededRng rng(66);
    Model m = init_params(spec, rng);
    m.mode = Mode::train;
    Tensor x({4, 2, 2, 2});
    SeededRng xr(5);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = float(xr.uniform01() * 4.0 - 1.0);
    auto fwd = forward(m, x);
    commit_batchnorm(m, fwd);
    // running = 0.9 * init + 0.1 * batch
    CHECK_THAT(m.bn_stats[0][0][0], WithinAbs(0.1 * fwd.caches[0].batch_mean[0], 1e-6));
    CHECK_THAT(m.bn_stats[0][1][0], WithinAbs(0.9 + 0.1 * fwd.caches[0].batch_var[0], 1e-6));

    m.mode = Mode::eval;
    auto e1 = forward(m, x);
    auto e2 = forward(m, x);
    for (std::size_t i = 0; i < e1.logits.size(); ++i) CHECK(e1.logits[i] == e2.logits[i]);
}

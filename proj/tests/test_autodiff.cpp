#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "pcdiff/checkpoint.hpp"
#include "pcdiff/ops.hpp"
#include "pcdiff/optim.hpp"
#include "pcdiff/rng.hpp"
#include "pcdiff/tensor.hpp"
#include "support/oracles.hpp"

using namespace pcd;
using namespace pcd::ad;

namespace {

// Scalar loss used by the finite-difference probes: sum of the op output
// weighted by a fixed random mask, as a function of one input's raw values.
double fd_probe(const std::function<Tensor(const Tensor&)>& op, const Shape& shape,
                const std::vector<double>& values, const std::vector<double>& mask) {
    Tensor x(shape, values);
    Tensor y = op(x);
    double acc = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) acc += y.flat(i) * mask[i];
    return acc;
}

// Runs the analytic-vs-central-difference comparison for one input of an op.
double gradient_error(const std::function<Tensor(const Tensor&)>& op, const Tensor& x, Rng& rng) {
    Tape tape;
    Tensor xt = x.detach();
    tape.watch(xt);
    Tensor y = op(xt);
    std::vector<double> mask(y.size());
    for (double& m : mask) m = rng.uniform(-1.0, 1.0);
    Tensor loss = sum(mul(y, Tensor(y.shape(), mask)));
    tape.backward(loss);
    Tensor grad = tape.grad(xt);

    const std::vector<double> values(x.values().begin(), x.values().end());
    const std::vector<double> analytic(grad.values().begin(), grad.values().end());
    const auto f = [&](const std::vector<double>& v) { return fd_probe(op, x.shape(), v, mask); };
    return oracle::max_gradient_error(f, values, analytic);
}

}  // namespace

TEST_CASE("tensor basics and invariants") {
    Tensor t(Shape{2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.size() == 6);
    CHECK(t.shape() == Shape{2, 3});
    CHECK_THROWS(Tensor(Shape{2, 2}, {1, 2, 3}));  // shape/data length mismatch
    CHECK(Tensor(4.5).value() == 4.5);

    // Non-finite forward outputs are rejected.
    Tensor inf_in(Shape{1}, {1e308});
    CHECK_THROWS(mul(inf_in, inf_in));
}

TEST_CASE("tape topological replay and repeat determinism") {
    Rng rng(7);
    Tensor a = Tensor::randn({4, 4}, rng);
    Tensor b = Tensor::randn({4, 4}, rng);
    auto run = [&]() {
        Tensor c = mul(add(a, b), silu(a));
        return sum(c).value();
    };
    const double first = run();
    for (int i = 0; i < 4; ++i) CHECK(run() == first);  // bit-identical reruns

    // Every node feeds the reverse sweep exactly once: reusing a tensor twice
    // accumulates both contributions (d/dx of x*x = 2x).
    Tape tape;
    Tensor x(Shape{3}, {1.0, -2.0, 0.5});
    tape.watch(x);
    Tensor y = sum(mul(x, x));
    tape.backward(y);
    Tensor g = tape.grad(x);
    for (std::size_t i = 0; i < 3; ++i) CHECK(g.flat(i) == doctest::Approx(2.0 * x.flat(i)));
}

TEST_CASE("linear matches hand examples") {
    // identity weights
    Tensor x(Shape{1, 2}, {1, 2});
    Tensor w(Shape{2, 2}, {1, 0, 0, 1});
    Tensor b(Shape{2}, {0, 0});
    Tensor y = linear(x, w, b);
    CHECK(y.flat(0) == 1.0);
    CHECK(y.flat(1) == 2.0);

    // hand matmul: [1,1].[[2],[3]] + [1] = [6]
    Tensor x2(Shape{1, 2}, {1, 1});
    Tensor w2(Shape{2, 1}, {2, 3});
    Tensor b2(Shape{1}, {1});
    CHECK(linear(x2, w2, b2).flat(0) == 6.0);

    CHECK_THROWS_WITH_AS(linear(x, Tensor(Shape{3, 2}, {1, 2, 3, 4, 5, 6}), b),
                         doctest::Contains("[1,2]"), std::invalid_argument);
}

TEST_CASE("linear gradient wrt weights matches finite differences") {
    Rng rng(11);
    Tensor x = Tensor::randn({3, 4}, rng);
    Tensor b = Tensor::randn({2}, rng);
    Tensor w = Tensor::randn({4, 2}, rng);

    Tape tape;
    Tensor wt = w.detach();
    tape.watch(wt);
    Tensor loss = sum(linear(x, wt, b));
    tape.backward(loss);
    const Tensor grad = tape.grad(wt);

    const auto f = [&](const std::vector<double>& v) {
        return sum(linear(x, Tensor(w.shape(), v), b)).value();
    };
    const std::vector<double> vals(w.values().begin(), w.values().end());
    const std::vector<double> analytic(grad.values().begin(), grad.values().end());
    CHECK(oracle::max_gradient_error(f, vals, analytic) < 1e-6);
}

TEST_CASE("conv1d identity, hand value, causality") {
    Tensor x(Shape{1, 3}, {1, 2, 3});
    Tensor ident(Shape{1, 1}, {1});
    Tensor y = conv1d(x, ident, true);
    CHECK(y.flat(0) == 1.0);
    CHECK(y.flat(2) == 3.0);

    Tensor k(Shape{1, 2}, {1, 1});
    Tensor yc = conv1d(x, k, true);
    CHECK(yc.flat(0) == 1.0);
    CHECK(yc.flat(1) == 3.0);
    CHECK(yc.flat(2) == 5.0);

    // causal output 0 ignores perturbations of x[1..]
    Tensor xp(Shape{1, 3}, {1, 99, -7});
    Tensor yp = conv1d(xp, k, true);
    CHECK(yp.flat(0) == yc.flat(0));

    // width > L is permitted (zero padded)
    Tensor wide(Shape{1, 5}, {1, 1, 1, 1, 1});
    CHECK(conv1d(x, wide, true).flat(2) == 6.0);

    CHECK_THROWS(conv1d(x, Tensor(Shape{1, 0}, {}), true));
}

TEST_CASE("conv3d identity, hand sum, shape errors") {
    Rng rng(3);
    Tensor x = Tensor::randn({2, 3, 3, 3}, rng);
    // 1x1x1 identity kernel per channel
    Tensor w(Shape{2, 2, 1, 1, 1}, {1, 0, 0, 1});
    Tensor b(Shape{2}, {0, 0});
    Tensor y = conv3d(x, w, b, 1, 0);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y.flat(i) == x.flat(i));

    // all-ones 2x2x2 kernel on all-ones 2^3 volume -> single value 8
    Tensor ones = Tensor::full({1, 2, 2, 2}, 1.0);
    Tensor wk = Tensor::full({1, 1, 2, 2, 2}, 1.0);
    Tensor bb(Shape{1}, {0});
    Tensor s = conv3d(ones, wk, bb, 1, 0);
    CHECK(s.size() == 1);
    CHECK(s.flat(0) == 8.0);

    // non-integral output extent: (3 - 2)/2 is not whole
    Tensor odd = Tensor::full({1, 3, 3, 3}, 1.0);
    CHECK_THROWS_WITH_AS(conv3d(odd, wk, bb, 2, 0), doctest::Contains("not integral"),
                         std::invalid_argument);

    // tight finite-difference check on the conv3d weight gradient
    Rng rng2(7);
    Tensor vx = Tensor::randn({2, 3, 3, 3}, rng2);
    Tensor vw = Tensor::randn({2, 2, 2, 2, 2}, rng2, 0.5);
    Tensor vb = Tensor::randn({2}, rng2);
    Tape tape;
    Tensor wt = vw.detach();
    tape.watch(wt);
    tape.backward(sum(conv3d(vx, wt, vb, 1, 1)));
    const Tensor grad = tape.grad(wt);
    const auto f = [&](const std::vector<double>& v) {
        return sum(conv3d(vx, Tensor(vw.shape(), v), vb, 1, 1)).value();
    };
    const std::vector<double> vals(vw.values().begin(), vw.values().end());
    const std::vector<double> analytic(grad.values().begin(), grad.values().end());
    CHECK(oracle::max_gradient_error(f, vals, analytic) < 1e-6);
}

TEST_CASE("group_norm collapses constants and normalizes statistics") {
    Tensor c = Tensor::full({4, 5}, 3.0);
    Tensor gain = Tensor::full({4}, 1.0);
    Tensor bias = Tensor::zeros({4});
    Tensor y = group_norm(c, 2, gain, bias);
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y.flat(i) == 0.0);

    CHECK_THROWS(group_norm(c, 3, gain, bias));  // 4 channels not divisible by 3

    Rng rng(5);
    Tensor x = Tensor::randn({6, 16}, rng);
    Tensor g6 = Tensor::full({6}, 1.0);
    Tensor b6 = Tensor::zeros({6});
    Tensor n = group_norm(x, 3, g6, b6);
    // per-group mean ~ 0, variance ~ 1
    for (std::size_t grp = 0; grp < 3; ++grp) {
        double mean = 0.0, var = 0.0;
        const std::size_t lo = grp * 2 * 16, hi = (grp + 1) * 2 * 16;
        for (std::size_t i = lo; i < hi; ++i) mean += n.flat(i);
        mean /= 32.0;
        for (std::size_t i = lo; i < hi; ++i) var += (n.flat(i) - mean) * (n.flat(i) - mean);
        var /= 32.0;
        CHECK(std::abs(mean) < 1e-6);
        CHECK(std::abs(var - 1.0) < 1e-4);
    }

    // groups=1 equals normalization over everything
    Tensor n1 = group_norm(x, 1, g6, b6);
    Tensor flat = reshape(x, {1, 96});
    Tensor ln = layer_norm(flat);
    for (std::size_t i = 0; i < n1.size(); ++i) CHECK(n1.flat(i) == doctest::Approx(ln.flat(i)).epsilon(1e-9));
}

TEST_CASE("layer_norm and silu scalar values") {
    CHECK(silu(Tensor(0.0)).value() == 0.0);
    CHECK(silu(Tensor(1.0)).value() == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))).epsilon(1e-12));
    CHECK(swish(Tensor(1.0)).value() == silu(Tensor(1.0)).value());

    Tensor c = Tensor::full({1, 7}, 42.0);
    Tensor y = layer_norm(c);
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y.flat(i) == 0.0);
}

TEST_CASE("every differentiable op matches central finite differences") {
    Rng rng(13);
    double worst = 0.0;
    const auto check = [&](const char* name, const std::function<Tensor(const Tensor&)>& op,
                           const Tensor& x) {
        const double err = gradient_error(op, x, rng);
        INFO(name);
        CHECK(err < 1e-5);
        worst = std::max(worst, err);
    };

    Tensor x23 = Tensor::randn({2, 3}, rng);
    Tensor x44 = Tensor::randn({4, 4}, rng);
    Tensor other = Tensor::randn({2, 3}, rng);
    Tensor w34 = Tensor::randn({3, 4}, rng);
    Tensor b4 = Tensor::randn({4}, rng);
    Tensor k14 = Tensor::randn({4, 3}, rng);
    Tensor vol = Tensor::randn({2, 4, 4, 4}, rng);
    Tensor cw = Tensor::randn({3, 2, 3, 3, 3}, rng, 0.5);
    Tensor cb = Tensor::randn({3}, rng);
    Tensor gain = Tensor::randn({4}, rng, 0.5);
    Tensor bias = Tensor::randn({4}, rng, 0.5);
    Tensor g3 = Tensor::randn({3}, rng, 0.5);
    Tensor bs3 = Tensor::randn({3}, rng, 0.5);
    Tensor rowv = Tensor::randn({3}, rng);
    Tensor colv = Tensor::randn({2}, rng);
    Tensor srow = Tensor::randn({2}, rng);

    check("add", [&](const Tensor& x) { return add(x, other); }, x23);
    check("sub", [&](const Tensor& x) { return sub(other, x); }, x23);
    check("mul", [&](const Tensor& x) { return mul(x, other); }, x23);
    check("mul-both", [&](const Tensor& x) { return mul(x, x); }, x23);
    check("scale", [&](const Tensor& x) { return scale(x, -2.5); }, x23);
    check("silu", [&](const Tensor& x) { return silu(x); }, x23);
    check("sigmoid", [&](const Tensor& x) { return sigmoid(x); }, x23);
    check("softplus", [&](const Tensor& x) { return softplus(x); }, x23);
    check("mean", [&](const Tensor& x) { return mean(x); }, x23);
    check("reshape", [&](const Tensor& x) { return reshape(x, {3, 2}); }, x23);
    check("transpose2d", [&](const Tensor& x) { return transpose2d(x); }, x23);
    check("concat_cols-a", [&](const Tensor& x) { return concat_cols(x, other); }, x23);
    check("concat_cols-b", [&](const Tensor& x) { return concat_cols(other, x); }, x23);
    check("reverse_cols", [&](const Tensor& x) { return reverse_cols(x); }, x23);
    check("matmul-a", [&](const Tensor& x) { return matmul(x, w34); }, x23);
    check("matmul-b", [&](const Tensor& x) { return matmul(x23, x); }, w34);
    check("linear-x", [&](const Tensor& x) { return linear(x, w34, b4); }, x23);
    check("linear-w", [&](const Tensor& x) { return linear(x23, x, b4); }, w34);
    check("linear-b", [&](const Tensor& x) { return linear(x23, w34, x); }, b4);
    check("conv1d-x", [&](const Tensor& x) { return conv1d(x, k14, true); }, x44);
    check("conv1d-k", [&](const Tensor& x) { return conv1d(x44, x, false); }, k14);
    check("conv3d-x", [&](const Tensor& x) { return conv3d(x, cw, cb, 1, 1); }, vol);
    check("conv3d-w", [&](const Tensor& x) { return conv3d(vol, x, cb, 1, 1); }, cw);
    check("conv3d-b", [&](const Tensor& x) { return conv3d(vol, cw, x, 1, 1); }, cb);
    check("group_norm-x", [&](const Tensor& x) { return group_norm(x, 2, gain, bias); }, x44);
    check("group_norm-gain", [&](const Tensor& x) { return group_norm(x44, 2, x, bias); }, gain);
    check("group_norm-bias", [&](const Tensor& x) { return group_norm(x44, 2, gain, x); }, bias);
    check("layer_norm-x", [&](const Tensor& x) { return layer_norm(x, g3, bs3); }, x23);
    check("layer_norm-gain", [&](const Tensor& x) { return layer_norm(x23, x, bs3); }, g3);
    check("layer_norm-plain", [&](const Tensor& x) { return layer_norm(x); }, x23);
    check("add_rowvec-x", [&](const Tensor& x) { return add_rowvec(x, rowv); }, x23);
    check("add_rowvec-v", [&](const Tensor& x) { return add_rowvec(x23, x); }, rowv);
    check("mul_rowvec-x", [&](const Tensor& x) { return mul_rowvec(x, rowv); }, x23);
    check("mul_rowvec-v", [&](const Tensor& x) { return mul_rowvec(x23, x); }, rowv);
    Tensor sc(Shape{1}, {0.7});
    check("mul_bscalar-x", [&](const Tensor& x) { return mul_bscalar(x, sc); }, x23);
    check("mul_bscalar-s", [&](const Tensor& x) { return mul_bscalar(x23, x); }, sc);
    check("add_colvec-v", [&](const Tensor& x) { return add_colvec(x23, x); }, colv);
    check("scale_rows-x", [&](const Tensor& x) { return scale_rows(x, srow); }, x23);
    check("scale_rows-s", [&](const Tensor& x) { return scale_rows(x23, x); }, srow);

    const std::vector<std::size_t> gidx = {1, 0, 1, 1};
    check("gather_rows", [&](const Tensor& x) { return gather_rows(x, gidx); }, x23);

    const std::vector<std::size_t> buckets = {1, 0, 1, 3};
    Tensor rows43 = Tensor::randn({4, 3}, rng);
    check("scatter_mean_rows", [&](const Tensor& x) { return scatter_mean_rows(x, buckets, 4); },
          rows43);

    const std::vector<std::size_t> bidx = {0, 1, 2, 3, 3, 2, 1, 0};
    const std::vector<double> bw = {0.3, 0.7, 0.0, 0.0, 0.25, 0.25, 0.25, 0.25};
    check("blend_rows", [&](const Tensor& x) { return blend_rows(x, bidx, bw, 4); }, rows43);

    MESSAGE("worst relative gradient error: ", worst);
}

TEST_CASE("two-layer composition matches finite differences") {
    Rng rng(17);
    Tensor x = Tensor::randn({2, 3}, rng);
    Tensor w1 = Tensor::randn({3, 5}, rng);
    Tensor b1 = Tensor::randn({5}, rng);
    Tensor w2 = Tensor::randn({5, 2}, rng);
    Tensor b2 = Tensor::randn({2}, rng);

    const auto forward = [&](const Tensor& w1t) {
        return mean(silu(linear(silu(linear(x, w1t, b1)), w2, b2)));
    };

    Tape tape;
    Tensor w1t = w1.detach();
    tape.watch(w1t);
    Tensor loss = forward(w1t);
    tape.backward(loss);
    const Tensor grad = tape.grad(w1t);

    const auto f = [&](const std::vector<double>& v) {
        return forward(Tensor(w1.shape(), v)).value();
    };
    const std::vector<double> vals(w1.values().begin(), w1.values().end());
    const std::vector<double> analytic(grad.values().begin(), grad.values().end());
    CHECK(oracle::max_gradient_error(f, vals, analytic) < 1e-5);
}

TEST_CASE("adam: zero gradient no-op, first-step magnitude, default lr") {
    AdamConfig cfg;
    CHECK(cfg.lr == 2e-4);

    Tensor p(Shape{3}, {1.0, -2.0, 0.25});
    ParamRefs refs = {{"p", &p}};
    AdamState state(cfg);
    GradMap zero;
    zero["p"] = {0.0, 0.0, 0.0};
    state.step(refs, zero);
    CHECK(p.flat(0) == 1.0);
    CHECK(p.flat(1) == -2.0);
    CHECK(p.flat(2) == 0.25);

    // single scalar, g = 1: bias-corrected first step moves by ~ -lr
    Tensor s(Shape{1}, {0.0});
    ParamRefs refs2 = {{"s", &s}};
    AdamState st2(cfg);
    GradMap g1;
    g1["s"] = {1.0};
    st2.step(refs2, g1);
    CHECK(s.flat(0) == doctest::Approx(-cfg.lr).epsilon(1e-6));

    GradMap bad;
    bad["s"] = {std::nan("")};
    CHECK_THROWS_WITH_AS(st2.step(refs2, bad), doctest::Contains("'s'"), std::runtime_error);
}

TEST_CASE("checkpoint round-trip and error paths") {
    const auto dir = std::filesystem::temp_directory_path() / "pcdk_test";
    std::filesystem::create_directories(dir);
    const std::string path = (dir / "weights.pcdk").string();

    Rng rng(23);
    TensorMap original;
    original["alpha"] = Tensor::randn({3, 4}, rng);
    original["beta.gamma"] = Tensor::randn({7}, rng);
    original["scalar"] = Tensor(0.123456789012345);
    save_checkpoint(path, original);

    const TensorMap loaded = load_checkpoint(path);
    CHECK(loaded.size() == original.size());
    for (const auto& [name, tensor] : original) {
        const Tensor& got = loaded.at(name);
        CHECK(got.shape() == tensor.shape());
        for (std::size_t i = 0; i < tensor.size(); ++i) CHECK(got.flat(i) == tensor.flat(i));
    }

    const std::string junk = (dir / "junk.bin").string();
    {
        std::FILE* f = std::fopen(junk.c_str(), "wb");
        std::fputs("NOPE", f);
        std::fclose(f);
    }
    CHECK_THROWS_WITH_AS(load_checkpoint(junk), doctest::Contains("PCDK"), std::runtime_error);
    CHECK_THROWS(load_checkpoint((dir / "missing.pcdk").string()));
}

#include <cmath>
#include <functional>

#include "doctest.h"
#include "seal/autograd.hpp"
#include "seal/rng.hpp"
#include "support.hpp"

using namespace seal;
using namespace seal::ad;

namespace {

using Builder = std::function<Var(Tape&, std::vector<Var>&)>;

struct Input {
    Shape shape;
    double lo = -1.0;
    double hi = 1.0;
};

/// Largest normwise error between tape gradients and central differences of
/// sum(w * op(inputs)) for a fixed random weighting w.
double gradient_error(const std::vector<Input>& inputs, const Builder& op, std::uint64_t seed = 1) {
    Rng rng(seed);
    std::vector<std::vector<double>> values;
    for (const auto& in : inputs) {
        std::vector<double> v(numel(in.shape));
        for (auto& x : v) x = rng.uniform(in.lo, in.hi);
        values.push_back(std::move(v));
    }
    std::vector<double> weights;
    auto evaluate = [&](const std::vector<std::vector<double>>& vals, std::vector<std::vector<double>>* grads) {
        Tape tape;
        std::vector<Var> vars;
        for (std::size_t i = 0; i < inputs.size(); ++i) vars.push_back(tape.leaf(inputs[i].shape, vals[i], true));
        Var out = op(tape, vars);
        if (weights.empty()) {
            weights.resize(out.size());
            for (auto& w : weights) w = rng.uniform(-1.0, 1.0);
        }
        Var loss = sum(tape, mul_const(tape, out, weights));
        if (grads) {
            tape.backward(loss);
            for (auto& v : vars) grads->push_back(v.grad());
        }
        return loss.item();
    };
    std::vector<std::vector<double>> analytic;
    evaluate(values, &analytic);

    double worst = 0.0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const auto numeric = test::central_difference(
            [&](const std::vector<double>& x) {
                auto vals = values;
                vals[i] = x;
                return evaluate(vals, nullptr);
            },
            values[i]);
        worst = std::max(worst, test::normwise_rel_error(analytic[i], numeric));
    }
    return worst;
}

constexpr double kTol = 1e-6;

}  // namespace

TEST_CASE("elementwise ops match finite differences") {
    const Shape s{3, 4};
    CHECK(gradient_error({{s}, {s}}, [](Tape& t, auto& v) { return add(t, v[0], v[1]); }) < kTol);
    CHECK(gradient_error({{s}, {s}}, [](Tape& t, auto& v) { return sub(t, v[0], v[1]); }) < kTol);
    CHECK(gradient_error({{s}, {s}}, [](Tape& t, auto& v) { return mul(t, v[0], v[1]); }) < kTol);
    CHECK(gradient_error({{s}}, [](Tape& t, auto& v) { return scale(t, v[0], -2.5); }) < kTol);
    CHECK(gradient_error({{s}}, [](Tape& t, auto& v) { return add_scalar(t, v[0], 0.7); }) < kTol);
    CHECK(gradient_error({{s}}, [](Tape& t, auto& v) { return square(t, v[0]); }) < kTol);
    CHECK(gradient_error({{s}}, [](Tape& t, auto& v) { return silu(t, v[0]); }) < kTol);
    CHECK(gradient_error({{s}, {{1}, 0.5, 2.0}}, [](Tape& t, auto& v) { return div_scalar(t, v[0], v[1]); }) < kTol);
    CHECK(gradient_error({{s}}, [](Tape& t, auto& v) { return reshape(t, v[0], {4, 3}); }) < kTol);
}

TEST_CASE("reductions match finite differences") {
    const Shape s{2, 5};
    CHECK(gradient_error({{s}}, [](Tape& t, auto& v) { return sum(t, v[0]); }) < kTol);
    CHECK(gradient_error({{s}}, [](Tape& t, auto& v) { return mean(t, v[0]); }) < kTol);
    const std::vector<double> target{0.1, -0.2, 0.3, 0.0, 0.5, -0.5, 0.9, 0.2, 0.2, -1.0};
    CHECK(gradient_error({{s}}, [&](Tape& t, auto& v) { return mse(t, v[0], target); }) < kTol);
    CHECK(gradient_error({{s}, {s}, {s}}, [](Tape& t, auto& v) { return average(t, std::span<const Var>(v)); }) <
          kTol);
}

TEST_CASE("image ops match finite differences") {
    const Shape img{4, 6, 6};
    CHECK(gradient_error({{img}, {{3, 4, 3, 3}}, {{3}}},
                         [](Tape& t, auto& v) { return conv2d(t, v[0], v[1], v[2]); }) < kTol);
    CHECK(gradient_error({{img}, {{2, 4, 1, 1}}, {{2}}},
                         [](Tape& t, auto& v) { return conv2d(t, v[0], v[1], v[2]); }) < kTol);
    CHECK(gradient_error({{img}, {{4}}, {{4}}},
                         [](Tape& t, auto& v) { return group_norm(t, v[0], 2, v[1], v[2]); }) < kTol);
    CHECK(gradient_error({{img}}, [](Tape& t, auto& v) { return avg_pool2(t, v[0]); }) < kTol);
    CHECK(gradient_error({{img}}, [](Tape& t, auto& v) { return upsample2(t, v[0]); }) < kTol);
    CHECK(gradient_error({{img}, {{2, 6, 6}}}, [](Tape& t, auto& v) { return concat_channels(t, v[0], v[1]); }) <
          kTol);
    CHECK(gradient_error({{img}, {{4}}}, [](Tape& t, auto& v) { return add_channel_bias(t, v[0], v[1]); }) < kTol);
}

TEST_CASE("matrix ops match finite differences") {
    CHECK(gradient_error({{{5, 3}}, {{4, 3}}, {{4}}}, [](Tape& t, auto& v) { return linear(t, v[0], v[1], v[2]); }) <
          kTol);
    CHECK(gradient_error({{{5, 3}}, {{4, 3}}}, [](Tape& t, auto& v) { return linear(t, v[0], v[1], Var()); }) < kTol);
    CHECK(gradient_error({{{5, 3}}, {{3, 2}}}, [](Tape& t, auto& v) { return matmul(t, v[0], v[1]); }) < kTol);
    CHECK(gradient_error({{{5, 3}}, {{2, 3}}}, [](Tape& t, auto& v) { return matmul_nt(t, v[0], v[1]); }) < kTol);
    CHECK(gradient_error({{{5, 3}}}, [](Tape& t, auto& v) { return transpose(t, v[0]); }) < kTol);
    CHECK(gradient_error({{{4, 6}, -3.0, 3.0}}, [](Tape& t, auto& v) { return softmax_rows(t, v[0]); }) < kTol);
    CHECK(gradient_error({{{4, 6}}}, [](Tape& t, auto& v) { return rms_norm_rows(t, v[0]); }) < kTol);
    CHECK(gradient_error({{{4, 6}}}, [](Tape& t, auto& v) { return slice_cols(t, v[0], 2, 5); }) < kTol);
    CHECK(gradient_error({{{4, 2}}, {{4, 3}}},
                         [](Tape& t, auto& v) { return concat_cols(t, std::span<const Var>(v)); }) < kTol);
    CHECK(gradient_error({{{4, 3}}}, [](Tape& t, auto& v) { return column(t, v[0], 1); }) < kTol);
}

TEST_CASE("gather_rows routes gradient to table rows and the override") {
    const std::vector<int> ids{0, 2, 2, 1};
    CHECK(gradient_error({{{3, 4}}}, [&](Tape& t, auto& v) { return gather_rows(t, v[0], ids); }) < kTol);
    CHECK(gradient_error({{{3, 4}}, {{4}}},
                         [&](Tape& t, auto& v) { return gather_rows(t, v[0], ids, 1, v[1]); }) < kTol);

    Tape tape;
    Var table = tape.leaf({3, 2}, {1, 2, 3, 4, 5, 6}, true);
    Var row = tape.leaf({2}, {-1, -2}, true);
    Var g = gather_rows(tape, table, ids, 1, row);
    CHECK(g.value() == std::vector<double>{1, 2, -1, -2, 5, 6, 3, 4});
    tape.backward(sum(tape, g));
    CHECK(table.grad() == std::vector<double>{1, 1, 1, 1, 1, 1});
    CHECK(row.grad() == std::vector<double>{1, 1});
}

TEST_CASE("values of composite ops") {
    Tape tape;
    Var a = tape.constant({2, 3}, {1, 2, 3, 0, 0, 0});
    Var s = softmax_rows(tape, a);
    const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    CHECK(s.value()[2] == doctest::Approx(std::exp(3.0) / z).epsilon(1e-14));
    CHECK(s.value()[4] == doctest::Approx(1.0 / 3.0).epsilon(1e-14));

    Var x = tape.constant({1, 2, 2}, {1, 2, 3, 4});
    CHECK(avg_pool2(tape, x).value() == std::vector<double>{2.5});
    CHECK(upsample2(tape, avg_pool2(tape, x)).value() == std::vector<double>{2.5, 2.5, 2.5, 2.5});

    Var leafless = tape.constant({1}, {2.0});
    CHECK_FALSE(square(tape, leafless).requires_grad());
}

TEST_CASE("backward accumulates over shared subexpressions") {
    Tape tape;
    Var x = tape.leaf({1}, {3.0}, true);
    Var y = add(tape, mul(tape, x, x), x);  // x^2 + x
    tape.backward(y);
    CHECK(x.grad()[0] == doctest::Approx(7.0));
    CHECK_THROWS(tape.backward(tape.leaf({2}, {1, 2}, true)));
}

#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "seal/attention_ops.hpp"
#include "seal/regularizer.hpp"
#include "support.hpp"

using namespace seal;

namespace {

// Direct evaluation of the loss formulas, independent of the library.
struct Oracle {
    static std::vector<double> l1(const std::vector<double>& a, double d) {
        const double s = std::accumulate(a.begin(), a.end(), 0.0);
        std::vector<double> r(a.size());
        for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] / (s + d);
        return r;
    }
    static std::vector<double> sq(const std::vector<double>& a, double d) {
        double s = 0.0;
        for (double v : a) s += v * v;
        std::vector<double> r(a.size());
        for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] * a[i] / (s + d);
        return r;
    }
    static double supp(const std::vector<double>& ab, const std::vector<std::uint8_t>& m) {
        double s = 0.0;
        for (std::size_t i = 0; i < ab.size(); ++i) s += ab[i] * (1.0 - m[i]);
        return s / static_cast<double>(ab.size());
    }
    static double bind(const std::vector<double>& ah, const std::vector<std::uint8_t>& m, double d) {
        const double n = std::count(m.begin(), m.end(), 1);
        double inter = 0.0, sa = 0.0, sm = 0.0;
        for (std::size_t i = 0; i < ah.size(); ++i) {
            const double mi = m[i] / (n + d);
            inter += ah[i] * mi;
            sa += ah[i];
            sm += mi;
        }
        return 1.0 - inter / (sa + sm - inter + d);
    }
    static double spatial(const std::vector<double>& raw, const std::vector<std::uint8_t>& m, double lb, double ls,
                          double d) {
        const auto ab = l1(raw, d);
        return lb * bind(sq(ab, d), m, d) + ls * supp(ab, m);
    }
};

AdaptationConfig weights(double lb, double ls) {
    AdaptationConfig c;
    c.lambda_bind = lb;
    c.lambda_supp = ls;
    return c;
}

}  // namespace

TEST_CASE("suppression_loss examples") {
    const ObjectMask top(2, 2, {1, 1, 0, 0});
    CHECK(reg::suppression_loss(AttentionMap(0, 2, 2, {0.25, 0.25, 0.25, 0.25}), top) ==
          doctest::Approx(0.125).epsilon(1e-15));
    CHECK(reg::suppression_loss(AttentionMap(0, 2, 2, {0.7, 0.3, 0, 0}), top) == 0.0);
    Rng rng(1);
    const ObjectMask all(3, 3, std::vector<std::uint8_t>(9, 1));
    for (int i = 0; i < 20; ++i) {
        CHECK(reg::suppression_loss(attn::l1_normalize(test::random_map(rng, 3, 3), 1e-8), all) == 0.0);
    }
    CHECK_THROWS_AS(reg::suppression_loss(AttentionMap(0, 1, 4, {0.25, 0.25, 0.25, 0.25}), top), Error);
}

TEST_CASE("normalize_mask examples") {
    const auto two = reg::normalize_mask(ObjectMask(2, 2, {1, 0, 0, 1}), 1e-8);
    CHECK(two[0] == doctest::Approx(0.5).epsilon(1e-7));
    CHECK(two[1] == 0.0);
    CHECK(two[3] == doctest::Approx(1.0 / (2.0 + 1e-8)).epsilon(1e-15));
    for (double v : reg::normalize_mask(ObjectMask(2, 2, {1, 1, 1, 1}), 1e-8)) CHECK(v == doctest::Approx(0.25));
    const auto one = reg::normalize_mask(ObjectMask(2, 2, {0, 0, 1, 0}), 1e-8);
    CHECK(one[2] == doctest::Approx(1.0).epsilon(1e-7));
    CHECK(std::accumulate(one.begin(), one.end(), 0.0) <= 1.0);
}

TEST_CASE("bind_loss examples") {
    const ObjectMask first(2, 2, {1, 0, 0, 0});
    const auto m1 = reg::normalize_mask(first, 1e-8);
    CHECK(std::abs(reg::bind_loss(AttentionMap(0, 2, 2, {0, 0, 0.5, 0.5}), m1, 1e-8) - 1.0) <= 1e-7);
    CHECK(std::abs(reg::bind_loss(AttentionMap(0, 2, 2, {1, 0, 0, 0}), m1, 1e-8)) <= 1e-6);
    CHECK(std::abs(reg::bind_loss(AttentionMap(0, 2, 2, {0.5, 0.5, 0, 0}), m1, 1e-8) - 2.0 / 3.0) <= 1e-6);
    CHECK_THROWS_AS(reg::bind_loss(AttentionMap(0, 1, 2, {0.5, 0.5}), m1, 1e-8), Error);
}

TEST_CASE("layer_spatial_loss examples") {
    const ObjectMask top(2, 2, {1, 1, 0, 0});
    const AttentionMap uniform(0, 2, 2, {1, 1, 1, 1});
    CHECK(reg::layer_spatial_loss(uniform, top, weights(0, 0)).l_spatial == 0.0);

    // A_bar = A_hat = 0.25 everywhere; M = 0.5 on the top row.
    // bind: 1 - 0.25 / (1 + 1 - 0.25) = 6/7; supp: (0.25 + 0.25) / 4.
    const auto l = reg::layer_spatial_loss(uniform, top, weights(1, 1));
    CHECK(l.l_bind == doctest::Approx(6.0 / 7.0).epsilon(1e-7));
    CHECK(l.l_supp == doctest::Approx(0.125).epsilon(1e-7));
    CHECK(l.l_spatial == doctest::Approx(6.0 / 7.0 + 0.125).epsilon(1e-7));

    const auto lw = reg::layer_spatial_loss(uniform, top, weights(0.5, 3.0));
    CHECK(lw.l_spatial == doctest::Approx(0.5 * lw.l_bind + 3.0 * lw.l_supp).epsilon(1e-15));

    const AttentionMap doubled(0, 2, 2, {2, 2, 2, 2});
    CHECK(std::abs(reg::layer_spatial_loss(doubled, top, weights(1, 1)).l_spatial - l.l_spatial) <= 1e-6);
}

TEST_CASE("layer_spatial_loss matches the direct oracle on random inputs") {
    Rng rng(2);
    for (int trial = 0; trial < 300; ++trial) {
        const int n = 4 << rng.uniform_int(3);
        const auto a = test::random_map(rng, n, n);
        const auto m = test::random_mask(rng, n, n);
        const double lb = rng.uniform(0, 2), ls = rng.uniform(0, 2);
        const auto got = reg::layer_spatial_loss(a, m, weights(lb, ls));
        CHECK(got.l_spatial == doctest::Approx(Oracle::spatial(a.grid(), m.grid(), lb, ls, 1e-8)).epsilon(1e-12));
    }
}

TEST_CASE("loss bounds hold on random maps and masks") {
    Rng rng(3);
    for (int n : {4, 8, 16}) {
        for (int trial = 0; trial < 200; ++trial) {
            const auto m = test::random_mask(rng, n, n);
            const auto ab = attn::l1_normalize(test::random_map(rng, n, n), 1e-8);
            const auto ah = attn::sharpen(ab, 1e-8);
            const double s = reg::suppression_loss(ab, m);
            const double b = reg::bind_loss(ah, reg::normalize_mask(m, 1e-8), 1e-8);
            CHECK((s >= 0.0 && s <= 1.0 / (n * n)));
            CHECK((b >= 0.0 && b <= 1.0));
            const double lk = attn::leakage_ratio(ab, m);
            CHECK((lk >= 0.0 && lk <= 1.0));
        }
    }
}

TEST_CASE("moving mass into the mask lowers suppression and never raises binding") {
    Rng rng(4);
    for (int trial = 0; trial < 300; ++trial) {
        const int n = 4;
        const auto m = test::random_mask(rng, n, n);
        auto ab = attn::l1_normalize(test::random_map(rng, n, n), 1e-8).grid();
        std::vector<int> in, out;
        for (int i = 0; i < n * n; ++i) (m.grid()[i] ? in : out).push_back(i);
        if (out.empty()) continue;
        const int src = out[rng.uniform_int(static_cast<int>(out.size()))];
        const int dst = in[rng.uniform_int(static_cast<int>(in.size()))];
        const double eps = ab[src] * rng.uniform(0.05, 1.0);
        if (eps <= 0.0) continue;
        auto moved = ab;
        moved[src] -= eps;
        moved[dst] += eps;
        const AttentionMap before(0, n, n, ab), after(0, n, n, moved);
        CHECK(reg::suppression_loss(after, m) < reg::suppression_loss(before, m));
        const auto md = reg::normalize_mask(m, 1e-8);
        CHECK(reg::bind_loss(attn::sharpen(after, 1e-8), md, 1e-8) <=
              reg::bind_loss(attn::sharpen(before, 1e-8), md, 1e-8) + 1e-12);
    }
}

TEST_CASE("select_semantic_layers examples and cardinality") {
    CHECK(reg::select_semantic_layers(16) == std::vector<int>{4, 5, 6, 7, 8, 9, 10, 11});
    CHECK(reg::select_semantic_layers(1) == std::vector<int>{0});
    CHECK(reg::select_semantic_layers(6) == std::vector<int>{1, 2, 3, 4});
    CHECK_THROWS_AS(reg::select_semantic_layers(0), Error);
    for (int n = 1; n <= 32; ++n) {
        const auto sel = reg::select_semantic_layers(n);
        const int lo = static_cast<int>(std::floor(n / 4.0));
        const int hi = static_cast<int>(std::ceil(3.0 * n / 4.0));
        CHECK(static_cast<int>(sel.size()) == hi - lo);
        CHECK(static_cast<int>(sel.size()) >= static_cast<int>(std::ceil(n / 2.0)));
        if (n >= 5) CHECK(sel.front() != 0);
    }
    // Depends only on the count, not on resolutions.
    const LayerCatalog a({{0, 16, 16, 2}, {1, 8, 8, 2}, {2, 4, 4, 2}, {3, 4, 4, 2}, {4, 8, 8, 2}, {5, 16, 16, 2}});
    const LayerCatalog b({{0, 2, 2, 1}, {1, 2, 2, 1}, {2, 2, 2, 1}, {3, 2, 2, 1}, {4, 2, 2, 1}, {5, 2, 2, 1}});
    CHECK(reg::select_semantic_layers(a) == reg::select_semantic_layers(b));
}

TEST_CASE("aggregate_spatial is the mean") {
    CHECK(reg::aggregate_spatial(std::vector<double>{0.2, 0.4}) == doctest::Approx(0.3).epsilon(1e-15));
    CHECK(reg::aggregate_spatial(std::vector<double>{0.123}) == 0.123);
    CHECK(reg::aggregate_spatial(std::vector<double>{0.4, 0.2}) == reg::aggregate_spatial(std::vector<double>{0.2, 0.4}));
    CHECK_THROWS_AS(reg::aggregate_spatial(std::vector<double>{}), Error);
}

TEST_CASE("spatial_breakdown averages the selected layers and round-trips") {
    Rng rng(5);
    const int res[] = {16, 8, 4, 4, 8, 16};
    std::vector<AttentionMap> maps;
    std::vector<ObjectMask> masks;
    for (int l = 0; l < 6; ++l) {
        maps.push_back(test::random_map(rng, res[l], res[l], l));
        masks.push_back(test::random_mask(rng, res[l], res[l]));
    }
    const auto b = reg::spatial_breakdown(maps, masks, AdaptationConfig{});
    CHECK(b.selected == std::vector<int>{1, 2, 3, 4});
    REQUIRE(b.layers.size() == 4);
    double mean = 0.0;
    for (const auto& l : b.layers) mean += l.l_spatial / 4.0;
    CHECK(std::abs(b.aggregated - mean) <= 1e-9);
    for (std::size_t i = 0; i < b.layers.size(); ++i) CHECK(b.layers[i].layer_index == b.selected[i]);

    const auto back = reg::spatial_breakdown_from_json(reg::to_json(b));
    CHECK(back.selected == b.selected);
    CHECK(back.aggregated == b.aggregated);
    REQUIRE(back.layers.size() == b.layers.size());
    CHECK(back.layers[2].l_bind == b.layers[2].l_bind);
}

TEST_CASE("layer_spatial_loss_grad matches central differences and the tape") {
    Rng rng(6);
    for (int n : {4, 8}) {
        for (int trial = 0; trial < 5; ++trial) {
            const auto a = test::random_map(rng, n, n);
            const auto m = test::random_mask(rng, n, n);
            const auto cfg = weights(rng.uniform(0.5, 2), rng.uniform(0.5, 2));
            const auto g = reg::layer_spatial_loss_grad(a, m, cfg);
            const auto fd = test::central_difference(
                [&](const std::vector<double>& x) {
                    return Oracle::spatial(x, m.grid(), cfg.lambda_bind, cfg.lambda_supp, cfg.delta);
                },
                a.grid());
            CHECK(test::normwise_rel_error(g.grad, fd) <= 1e-4);
            CHECK(g.loss.l_spatial == doctest::Approx(reg::layer_spatial_loss(a, m, cfg).l_spatial).epsilon(1e-15));
        }
    }
}

#include "seal/regularizer.hpp"

#include <cmath>

#include "seal/attention_ops.hpp"

namespace seal::reg {

namespace {

void check_shapes(const AttentionMap& a, const ObjectMask& m) {
    if (a.height() != m.height() || a.width() != m.width()) {
        fail(ErrorKind::validation, "attention map " + std::to_string(a.height()) + "x" + std::to_string(a.width()) +
                                        " does not match mask " + std::to_string(m.height()) + "x" +
                                        std::to_string(m.width()));
    }
}

ad::Var map_leaf(ad::Tape& tape, const AttentionMap& a, bool requires_grad) {
    return tape.leaf({static_cast<int>(a.size())}, a.grid(), requires_grad);
}

std::vector<double> outside(const ObjectMask& mask) {
    std::vector<double> w(mask.size());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = mask.grid()[i] ? 0.0 : 1.0;
    return w;
}

LayerLoss read(const LayerLossVars& v, int layer_index) {
    return {layer_index, v.l_supp.item(), v.l_bind.item(), v.l_spatial.item()};
}

}  // namespace

// ---------------------------------------------------------------- tape versions

ad::Var suppression_loss(ad::Tape& tape, ad::Var a_bar, const ObjectMask& mask) {
    if (a_bar.size() != mask.size()) fail(ErrorKind::validation, "attention map and mask sizes differ");
    const auto w = outside(mask);
    return ad::scale(tape, ad::sum(tape, ad::mul_const(tape, a_bar, w)), 1.0 / static_cast<double>(mask.size()));
}

ad::Var bind_loss(ad::Tape& tape, ad::Var a_hat, std::span<const double> mask_dist, double delta) {
    if (a_hat.size() != mask_dist.size()) fail(ErrorKind::validation, "attention map and mask sizes differ");
    if (!(delta > 0.0)) fail(ErrorKind::validation, "delta must be > 0");
    double sum_m = 0.0;
    for (double m : mask_dist) sum_m += m;
    ad::Var inter = ad::sum(tape, ad::mul_const(tape, a_hat, mask_dist));
    ad::Var uni = ad::add_scalar(tape, ad::sub(tape, ad::sum(tape, a_hat), inter), sum_m + delta);
    return ad::add_scalar(tape, ad::scale(tape, ad::div_scalar(tape, inter, uni), -1.0), 1.0);
}

LayerLossVars layer_spatial_loss(ad::Tape& tape, ad::Var a_raw, const ObjectMask& mask, const AdaptationConfig& cfg) {
    ad::Var a_bar = attn::l1_normalize(tape, a_raw, cfg.delta);
    ad::Var a_hat = attn::sharpen(tape, a_bar, cfg.delta);
    LayerLossVars out;
    out.l_supp = suppression_loss(tape, a_bar, mask);
    out.l_bind = bind_loss(tape, a_hat, normalize_mask(mask, cfg.delta), cfg.delta);
    out.l_spatial = ad::add(tape, ad::scale(tape, out.l_bind, cfg.lambda_bind), ad::scale(tape, out.l_supp, cfg.lambda_supp));
    return out;
}

ad::Var aggregate_spatial(ad::Tape& tape, std::span<const ad::Var> per_layer) {
    if (per_layer.empty()) fail(ErrorKind::validation, "no layers to aggregate");
    return ad::average(tape, per_layer);
}

// ---------------------------------------------------------------- value versions

double suppression_loss(const AttentionMap& a_bar, const ObjectMask& mask) {
    check_shapes(a_bar, mask);
    ad::Tape tape;
    return suppression_loss(tape, map_leaf(tape, a_bar, false), mask).item();
}

std::vector<double> normalize_mask(const ObjectMask& mask, double delta) {
    if (!(delta > 0.0)) fail(ErrorKind::validation, "delta must be > 0");
    const double denom = mask.active_count() + delta;
    std::vector<double> m(mask.size());
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = mask.grid()[i] ? 1.0 / denom : 0.0;
    return m;
}

double bind_loss(const AttentionMap& a_hat, std::span<const double> mask_dist, double delta) {
    ad::Tape tape;
    return bind_loss(tape, map_leaf(tape, a_hat, false), mask_dist, delta).item();
}

LayerLoss layer_spatial_loss(const AttentionMap& a_raw, const ObjectMask& mask, const AdaptationConfig& cfg) {
    check_shapes(a_raw, mask);
    ad::Tape tape;
    return read(layer_spatial_loss(tape, map_leaf(tape, a_raw, false), mask, cfg), a_raw.layer_index());
}

LayerLossGrad layer_spatial_loss_grad(const AttentionMap& a_raw, const ObjectMask& mask, const AdaptationConfig& cfg) {
    check_shapes(a_raw, mask);
    ad::Tape tape;
    ad::Var a = map_leaf(tape, a_raw, true);
    auto v = layer_spatial_loss(tape, a, mask, cfg);
    tape.backward(v.l_spatial);
    return {read(v, a_raw.layer_index()), a.grad()};
}

std::vector<int> select_semantic_layers(int n) {
    if (n < 1) fail(ErrorKind::validation, "empty layer catalog");
    const int lo = n / 4;
    const int hi = (3 * n + 3) / 4;
    std::vector<int> out;
    for (int i = lo; i < hi; ++i) out.push_back(i);
    return out;
}

std::vector<int> select_semantic_layers(const LayerCatalog& catalog) {
    return select_semantic_layers(static_cast<int>(catalog.size()));
}

double aggregate_spatial(std::span<const double> per_layer) {
    if (per_layer.empty()) fail(ErrorKind::validation, "no layers to aggregate");
    double s = 0.0;
    for (double v : per_layer) s += v;
    return s / static_cast<double>(per_layer.size());
}

SpatialLossBreakdown spatial_breakdown(std::span<const AttentionMap> maps, std::span<const ObjectMask> masks,
                                       const AdaptationConfig& cfg) {
    if (maps.size() != masks.size()) fail(ErrorKind::validation, "one mask per layer required");
    SpatialLossBreakdown b;
    b.selected = select_semantic_layers(static_cast<int>(maps.size()));
    std::vector<double> values;
    for (int l : b.selected) {
        b.layers.push_back(layer_spatial_loss(maps[l], masks[l], cfg));
        b.layers.back().layer_index = l;
        values.push_back(b.layers.back().l_spatial);
    }
    b.aggregated = aggregate_spatial(values);
    return b;
}

nlohmann::json to_json(const SpatialLossBreakdown& b) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : b.layers) {
        layers.push_back({{"layer_index", l.layer_index}, {"l_supp", l.l_supp}, {"l_bind", l.l_bind}, {"l_spatial", l.l_spatial}});
    }
    return {{"layers", layers}, {"selected", b.selected}, {"aggregated", b.aggregated}};
}

SpatialLossBreakdown spatial_breakdown_from_json(const nlohmann::json& j) {
    try {
        SpatialLossBreakdown b;
        for (const auto& l : j.at("layers")) {
            b.layers.push_back({l.at("layer_index").get<int>(), l.at("l_supp").get<double>(),
                                l.at("l_bind").get<double>(), l.at("l_spatial").get<double>()});
        }
        b.selected = j.at("selected").get<std::vector<int>>();
        b.aggregated = j.at("aggregated").get<double>();
        return b;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::validation, std::string("malformed spatial breakdown: ") + e.what());
    }
}

}  // namespace seal::reg

#pragma once

// Mask-guided spatial attention loss: suppression of mass outside the mask,
// Soft-IoU binding of the sharpened map to the normalized mask, the central
// layer band it applies to, and the band average.

#include <span>
#include <vector>

#include "seal/autograd.hpp"
#include "seal/core.hpp"

namespace seal::reg {

/// (1/(H W)) sum A_bar (1 - M).
double suppression_loss(const AttentionMap& a_bar, const ObjectMask& mask);

/// M / (sum M + delta), row-major.
std::vector<double> normalize_mask(const ObjectMask& mask, double delta);

/// 1 - I / (sum A_hat + sum M - I + delta), I = sum A_hat M.
double bind_loss(const AttentionMap& a_hat, std::span<const double> mask_dist, double delta);

struct LayerLoss {
    int layer_index = 0;
    double l_supp = 0.0;
    double l_bind = 0.0;
    double l_spatial = 0.0;
};

/// lambda_bind * L_bind(sharpen(l1(A))) + lambda_supp * L_supp(l1(A)).
LayerLoss layer_spatial_loss(const AttentionMap& a_raw, const ObjectMask& mask, const AdaptationConfig& cfg);

/// As above, plus d(l_spatial)/d(A_raw) in row-major order.
struct LayerLossGrad {
    LayerLoss loss;
    std::vector<double> grad;
};
LayerLossGrad layer_spatial_loss_grad(const AttentionMap& a_raw, const ObjectMask& mask, const AdaptationConfig& cfg);

/// Indices i with floor(n/4) <= i < ceil(3n/4). Depends only on the count.
std::vector<int> select_semantic_layers(int layer_count);
std::vector<int> select_semantic_layers(const LayerCatalog& catalog);

double aggregate_spatial(std::span<const double> per_layer);

struct SpatialLossBreakdown {
    std::vector<LayerLoss> layers;  // one per selected layer, in catalog order
    std::vector<int> selected;
    double aggregated = 0.0;
};

/// Per-layer losses over the selected band and their mean. `maps` and `masks`
/// are indexed by catalog layer.
SpatialLossBreakdown spatial_breakdown(std::span<const AttentionMap> maps, std::span<const ObjectMask> masks,
                                       const AdaptationConfig& cfg);

nlohmann::json to_json(const SpatialLossBreakdown& b);
SpatialLossBreakdown spatial_breakdown_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------- tape versions

ad::Var suppression_loss(ad::Tape& tape, ad::Var a_bar, const ObjectMask& mask);
ad::Var bind_loss(ad::Tape& tape, ad::Var a_hat, std::span<const double> mask_dist, double delta);

struct LayerLossVars {
    ad::Var l_supp;
    ad::Var l_bind;
    ad::Var l_spatial;
};

/// `a_raw` is a flattened [H*W] Var; mask must have the same cell count.
LayerLossVars layer_spatial_loss(ad::Tape& tape, ad::Var a_raw, const ObjectMask& mask, const AdaptationConfig& cfg);

ad::Var aggregate_spatial(ad::Tape& tape, std::span<const ad::Var> per_layer);

}  // namespace seal::reg

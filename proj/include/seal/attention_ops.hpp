#pragma once

// Concept-token attention maps and mask preparation.
//
// Each operation exists twice: on immutable AttentionMap values and on tape
// Vars holding a flattened [H*W] map, so that losses built from them
// differentiate back to the raw attention probabilities.

#include <span>

#include "seal/autograd.hpp"
#include "seal/backbone.hpp"
#include "seal/core.hpp"
#include "seal/image.hpp"

namespace seal::attn {

/// Head-averaged map of one token at one recorded layer.
AttentionMap extract_concept_map(const backbone::AttentionRecord& rec, int layer, int token_index);

/// A / (sum A + delta).
AttentionMap l1_normalize(const AttentionMap& a, double delta);

/// (A*A) / (sum A*A + delta).
AttentionMap sharpen(const AttentionMap& a_bar, double delta);

/// Area-average resample of a one-channel image to H x W, then strict > 0.5.
/// Throws "empty mask after resize"; warns when every cell is active.
ObjectMask prepare_mask(const Image& mask_image, int height, int width);

/// Fraction of normalized mass outside the mask: sum A(1-M) / (sum A + delta).
double leakage_ratio(const AttentionMap& a_bar, const ObjectMask& mask, double delta = 1e-8);

// ---------------------------------------------------------------- tape versions

/// Mean over heads of column `token` of each [H*W, n_tokens] probability matrix.
ad::Var concept_map(ad::Tape& tape, std::span<const ad::Var> head_probs, int token_index);
ad::Var l1_normalize(ad::Tape& tape, ad::Var a, double delta);
ad::Var sharpen(ad::Tape& tape, ad::Var a_bar, double delta);

/// Produces a one-channel mask image for a reference image. Implementations
/// may wrap an external segmentation model; the toolkit ships none.
class Segmenter {
public:
    virtual ~Segmenter() = default;
    virtual Image segment(const Image& reference) = 0;
};

}  // namespace seal::attn

#include "seal/attention_ops.hpp"

#include <algorithm>
#include <cmath>

namespace seal::attn {

namespace {

void check_delta(double delta) {
    if (!(delta > 0.0)) fail(ErrorKind::validation, "delta must be > 0");
}

void check_nonnegative(const std::vector<double>& v) {
    for (double x : v) {
        if (x < 0.0) fail(ErrorKind::validation, "attention map has negative entries");
    }
}

// Overlap length of [a0, a1) and [b0, b1).
double overlap(double a0, double a1, double b0, double b1) { return std::max(0.0, std::min(a1, b1) - std::max(a0, b0)); }

}  // namespace

AttentionMap extract_concept_map(const backbone::AttentionRecord& rec, int layer, int token_index) {
    if (layer < 0 || layer >= static_cast<int>(rec.layers.size())) {
        fail(ErrorKind::validation, "unknown layer " + std::to_string(layer));
    }
    const auto& l = rec.layers[layer];
    if (token_index < 0 || token_index >= l.tokens) {
        fail(ErrorKind::validation, "token index " + std::to_string(token_index) + " out of range");
    }
    const int hw = l.desc.height * l.desc.width;
    std::vector<double> grid(hw, 0.0);
    for (int h = 0; h < l.desc.head_count; ++h)
        for (int pos = 0; pos < hw; ++pos) grid[pos] += l.at(h, token_index, pos);
    for (double& g : grid) g /= l.desc.head_count;
    return AttentionMap(l.desc.layer_index, l.desc.height, l.desc.width, std::move(grid));
}

AttentionMap l1_normalize(const AttentionMap& a, double delta) {
    check_delta(delta);
    double s = 0.0;
    for (double x : a.grid()) s += x;
    std::vector<double> g(a.grid());
    for (double& x : g) x /= s + delta;
    return AttentionMap(a.layer_index(), a.height(), a.width(), std::move(g));
}

AttentionMap sharpen(const AttentionMap& a_bar, double delta) {
    check_delta(delta);
    double s = 0.0;
    for (double x : a_bar.grid()) s += x * x;
    std::vector<double> g(a_bar.grid());
    for (double& x : g) x = x * x / (s + delta);
    return AttentionMap(a_bar.layer_index(), a_bar.height(), a_bar.width(), std::move(g));
}

ObjectMask prepare_mask(const Image& src, int height, int width) {
    if (height < 1 || width < 1) fail(ErrorKind::validation, "mask target size must be positive");
    if (src.channels != 1 || src.height < 1 || src.width < 1) {
        fail(ErrorKind::validation, "mask source must be a nonempty one-channel image");
    }
    const double sy = static_cast<double>(src.height) / height;
    const double sx = static_cast<double>(src.width) / width;
    std::vector<std::uint8_t> grid(static_cast<std::size_t>(height) * width, 0);
    bool any = false;
    for (int y = 0; y < height; ++y) {
        const double y0 = y * sy, y1 = (y + 1) * sy;
        for (int x = 0; x < width; ++x) {
            const double x0 = x * sx, x1 = (x + 1) * sx;
            double acc = 0.0;
            for (int v = static_cast<int>(std::floor(y0)); v < std::min(src.height, static_cast<int>(std::ceil(y1))); ++v) {
                const double wy = overlap(y0, y1, v, v + 1.0);
                for (int u = static_cast<int>(std::floor(x0)); u < std::min(src.width, static_cast<int>(std::ceil(x1))); ++u) {
                    acc += wy * overlap(x0, x1, u, u + 1.0) * src.at(v, u, 0);
                }
            }
            if (acc / (sy * sx) > 0.5) {
                grid[static_cast<std::size_t>(y) * width + x] = 1;
                any = true;
            }
        }
    }
    if (!any) fail(ErrorKind::validation, "empty mask after resize");
    ObjectMask m(height, width, std::move(grid));
    if (m.all_active()) {
        warn("mask covers every cell at " + std::to_string(height) + "x" + std::to_string(width) +
             "; suppression term vanishes");
    }
    return m;
}

double leakage_ratio(const AttentionMap& a_bar, const ObjectMask& mask, double delta) {
    if (a_bar.height() != mask.height() || a_bar.width() != mask.width()) {
        fail(ErrorKind::validation, "attention map and mask shapes differ");
    }
    check_delta(delta);
    double outside = 0.0, total = 0.0;
    for (std::size_t i = 0; i < a_bar.size(); ++i) {
        total += a_bar.grid()[i];
        if (!mask.grid()[i]) outside += a_bar.grid()[i];
    }
    return outside / (total + delta);
}

ad::Var concept_map(ad::Tape& tape, std::span<const ad::Var> head_probs, int token_index) {
    if (head_probs.empty()) fail(ErrorKind::validation, "no attention heads");
    std::vector<ad::Var> cols;
    for (const auto& p : head_probs) {
        if (token_index < 0 || token_index >= p.dim(1)) fail(ErrorKind::validation, "token index out of range");
        cols.push_back(ad::column(tape, p, token_index));
    }
    return cols.size() == 1 ? cols[0] : ad::average(tape, cols);
}

ad::Var l1_normalize(ad::Tape& tape, ad::Var a, double delta) {
    check_delta(delta);
    check_nonnegative(a.value());
    return ad::div_scalar(tape, a, ad::add_scalar(tape, ad::sum(tape, a), delta));
}

ad::Var sharpen(ad::Tape& tape, ad::Var a_bar, double delta) {
    check_delta(delta);
    check_nonnegative(a_bar.value());
    ad::Var sq = ad::square(tape, a_bar);
    return ad::div_scalar(tape, sq, ad::add_scalar(tape, ad::sum(tape, sq), delta));
}

}  // namespace seal::attn

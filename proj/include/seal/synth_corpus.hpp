#pragma once

// Procedural sticker-like scenes with pixel-exact object masks and
// six-field tags. Stands in for real reference images and segmenter masks.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "seal/core.hpp"
#include "seal/image.hpp"

namespace seal::synth {

inline constexpr int kImageSize = 32;

struct ConceptSpec {
    int id = 0;
    std::string shape;    // circle, square, triangle, star
    std::string palette;  // colour word
    std::array<double, 3> color{};

    /// Appearance tag, e.g. "red circle".
    std::string name() const { return palette + " " + shape; }
};

/// 4 shapes x 5 palettes, id = shape_index * 5 + palette_index.
const std::vector<ConceptSpec>& concept_registry();

// Closed tag vocabularies emitted by the generator.
const std::vector<std::string>& emotions();
const std::vector<std::string>& actions();
const std::vector<std::string>& compositions();
const std::vector<std::string>& styles();
const std::vector<std::string>& backgrounds();

struct SceneSample {
    Image image;  // kImageSize x kImageSize x 3
    ObjectMask mask;
    TagRecord tags;
    int concept_id = 0;
    std::uint64_t seed = 0;

    bool operator==(const SceneSample&) const = default;
};

SceneSample generate_scene(std::uint64_t seed, int concept_id);

/// The backdrop generate_scene(seed, concept_id) paints before the glyph.
Image background_layer(std::uint64_t seed, int concept_id);

/// Sample i renders concept i mod |registry| with seed derive_seed(base_seed, i).
std::vector<SceneSample> generate_corpus(std::uint64_t base_seed, int n);

/// images/NNNNN.png, masks/NNNNN.png (0/255), tags.txt, corpus.json.
void export_corpus(const std::vector<SceneSample>& corpus, const std::string& dir);
std::vector<SceneSample> load_corpus(const std::string& dir);

/// Mask as a one-channel 0/1 image, for feeding prepare_mask.
Image mask_image(const ObjectMask& mask);

}  // namespace seal::synth

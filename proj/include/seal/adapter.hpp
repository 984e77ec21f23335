#pragma once

// Concept-embedding adaptation against a frozen backbone: per-step noising,
// recorded forward pass, denoising plus spatial objective, AdamW on the
// embedding only. Also attention leakage diagnostics and embedding files.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "seal/backbone.hpp"
#include "seal/core.hpp"
#include "seal/image.hpp"
#include "seal/optim.hpp"
#include "seal/regularizer.hpp"
#include "seal/splitmerge.hpp"
#include "seal/synth_corpus.hpp"
#include "seal/tagkit.hpp"

namespace seal::adapter {

/// Reference image with its full-resolution one-channel mask.
struct Reference {
    Image image;
    Image mask_image;
};

Reference reference_from_sample(const synth::SceneSample& sample);

/// Masks per catalog layer; absent where the mask vanishes at that resolution.
using MaskCache = std::vector<std::optional<ObjectMask>>;

/// Throws when any layer in `required` is empty after resize.
MaskCache prepare_masks(const LayerCatalog& catalog, const Image& mask_image, const std::vector<int>& required);

/// The (t, eps) draw that adaptation step `step` of a trajectory seeded with
/// `trajectory_seed` uses for batch element `draw`.
struct Probe {
    int t = 0;
    std::vector<double> eps;
};
Probe step_probe(std::uint64_t trajectory_seed, int step, int draw, int timesteps, std::size_t latent_size);

struct AdaptationState {
    AdaptationState(ConceptEmbedding init, std::uint64_t seed, const AdaptationConfig& cfg);

    int step = 0;
    std::vector<double> embedding;
    std::string token_symbol;
    AdamW optimizer;
    std::uint64_t seed;
    TrajectoryLog log;
};

/// Prompt tokens plus the concept slot.
struct PromptSpec {
    std::vector<int> tokens;
    int concept_index = 0;
};

/// Total objective at `embedding`, averaged over probes, with its gradient.
struct ObjectiveEval {
    double l_diffusion = 0.0;
    double l_spatial = 0.0;
    double l_total = 0.0;
    std::vector<double> grad;
    std::vector<double> leakage_by_layer;
    std::vector<double> bind_by_layer;
};

ObjectiveEval evaluate_objective(const backbone::Backbone& bb, const std::vector<double>& ref_latent,
                                 const MaskCache& masks, const PromptSpec& prompt, const AdaptationConfig& cfg,
                                 const std::vector<double>& embedding, const std::vector<Probe>& probes,
                                 bool want_grad = true);

PromptSpec concept_prompt(const TagRecord& tags, const std::string& token_symbol = ConceptEmbedding::kDefaultSymbol);

void adaptation_step(AdaptationState& state, const backbone::Backbone& bb, const std::vector<double>& ref_latent,
                     const MaskCache& masks, const PromptSpec& prompt, const AdaptationConfig& cfg);

/// Embedding of the head noun of the appearance tag.
ConceptEmbedding category_init(const backbone::Backbone& bb, const TagRecord& tags);

struct AdaptResult {
    ConceptEmbedding merged;
    splitmerge::AuxiliarySet set;
    std::vector<TrajectoryLog> logs;
};

/// Requires a frozen backbone; the prompt is the reference tags with the
/// appearance slot replaced by the concept token.
AdaptResult adapt(const backbone::Backbone& bb, const Reference& reference, const TagRecord& prompt_tags,
                  const AdaptationConfig& cfg, int threads = 0);

/// Embedding of trajectory `index` after `steps` steps, run on its own.
splitmerge::TrajectoryOutput run_trajectory(const backbone::Backbone& bb, const Reference& reference,
                                            const TagRecord& prompt_tags, const AdaptationConfig& cfg,
                                            const ConceptEmbedding& init, std::uint64_t seed);

// ---------------------------------------------------------------- diagnostics

struct LayerReport {
    LayerDesc desc;
    bool in_band = false;             // member of the selected semantic layers
    std::vector<double> leakage;      // per probe; NaN where the mask is empty
    std::vector<double> bind;         // per probe; NaN where the mask is empty
    std::vector<AttentionMap> maps;   // head-averaged concept map per probe
    double mean_leakage = 0.0;
    double mean_bind = 0.0;
};

struct LeakageReport {
    std::vector<int> timesteps;
    std::vector<LayerReport> layers;  // full catalog
    std::vector<int> selected;
    std::vector<reg::SpatialLossBreakdown> breakdowns;  // per probe
    double layer0_leakage = 0.0;
    double band_leakage = 0.0;  // mean over selected layers
};

/// Probes at n evenly spaced timesteps (cell midpoints of [0, T)), noise from derive_seed(seed, i).
LeakageReport leakage_report(const backbone::Backbone& bb, const ConceptEmbedding& v, const Reference& reference,
                             const TagRecord& prompt_tags, int n_timesteps, std::uint64_t seed,
                             const AdaptationConfig& cfg = {});

LeakageReport leakage_report(const backbone::Backbone& bb, const ConceptEmbedding& v, const Reference& reference,
                             const TagRecord& prompt_tags, const std::vector<Probe>& probes,
                             const AdaptationConfig& cfg = {});

/// Without per-probe maps.
nlohmann::json to_json(const LeakageReport& r);

/// Mean over records in [from, to) and over the given layers, skipping NaN.
double mean_leakage(const TrajectoryLog& log, const std::vector<int>& layers, int from, int to);
double mean_bind(const TrajectoryLog& log, const std::vector<int>& layers, int from, int to);

// ---------------------------------------------------------------- files

struct EmbeddingFile {
    splitmerge::AuxiliarySet set;
    std::uint64_t config_hash = 0;
};

void save_embedding(const std::string& path, const splitmerge::AuxiliarySet& set, std::uint64_t config_hash);
/// Warns when `expected_config_hash` is given and differs from the stored hash.
EmbeddingFile load_embedding(const std::string& path, std::optional<std::uint64_t> expected_config_hash = std::nullopt);

void write_trajectory_log(const std::string& path, const TrajectoryLog& log);
TrajectoryLog read_trajectory_log(const std::string& path);

}  // namespace seal::adapter

#pragma once

// Toy latent diffusion denoiser with multi-head cross-attention at several
// resolutions. This is the frozen model the embedding adapter works against.
//
// Layout (default): a fixed 2x average-pool codec maps 32x32 RGB images to a
// 16x16x3 latent. The U-Net runs encoder blocks at 16, 8, 4, a bottleneck at
// 4 and decoder blocks at 8, 16; each block ends in a cross-attention layer,
// giving a catalog of six layers with resolutions [16, 8, 4, 4, 8, 16].

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "seal/autograd.hpp"
#include "seal/core.hpp"
#include "seal/image.hpp"
#include "seal/synth_corpus.hpp"

namespace seal::backbone {

struct Architecture {
    int image_size = 32;
    int latent_channels = 3;
    int latent_size = 16;
    std::vector<int> widths{16, 32, 32};  // channels at latent_size, /2, /4
    int heads = 2;
    int head_dim = 16;
    int text_dim = 64;
    int time_dim = 64;
    int groups = 4;
    int vocab_size = 0;  // 0 = size of the default tag vocabulary
    int timesteps = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;

    bool operator==(const Architecture&) const = default;
};

nlohmann::json to_json(const Architecture& arch);
Architecture architecture_from_json(const nlohmann::json& j);

struct ParamTensor {
    std::string name;
    ad::Shape shape;
    std::vector<double> values;
    bool trainable = true;

    bool operator==(const ParamTensor&) const = default;
};

class Backbone {
public:
    Backbone(Architecture arch, std::vector<ParamTensor> params);

    const Architecture& arch() const noexcept { return arch_; }
    const std::vector<ParamTensor>& params() const noexcept { return params_; }
    /// Throws if the backbone is frozen.
    std::vector<ParamTensor>& mutable_params();
    const ParamTensor& param(const std::string& name) const;
    std::size_t param_index(const std::string& name) const;

    const NoiseSchedule& schedule() const noexcept { return schedule_; }
    const LayerCatalog& catalog() const noexcept { return catalog_; }

    bool frozen() const noexcept { return frozen_; }
    void freeze() noexcept { frozen_ = true; }

    std::size_t parameter_count() const;
    std::uint64_t parameter_hash() const;

private:
    Architecture arch_;
    std::vector<ParamTensor> params_;
    std::unordered_map<std::string, std::size_t> index_;
    NoiseSchedule schedule_;
    LayerCatalog catalog_;
    bool frozen_ = false;
};

Backbone build(std::uint64_t arch_seed, Architecture arch = {});

LayerCatalog layer_catalog(const Backbone& bb);

/// alpha_bar[t] = prod_{s <= t} (1 - beta_s), beta linear in [beta_start, beta_end].
NoiseSchedule make_schedule(int T, double beta_start = 1e-4, double beta_end = 0.02);

/// sqrt(alpha_bar[t]) z + sqrt(1 - alpha_bar[t]) eps.
std::vector<double> add_noise(std::span<const double> z, int t, std::span<const double> eps,
                              const NoiseSchedule& schedule);

double denoising_loss(std::span<const double> eps, std::span<const double> eps_hat);

// Fixed codec: 2x average pooling to [-1, 1] and nearest upsampling back.
std::vector<double> encode_image(const Architecture& arch, const Image& image);
Image decode_latent(const Architecture& arch, std::span<const double> latent);
std::size_t latent_size(const Architecture& arch);

struct Conditioning {
    int n_tokens = 0;
    int dim = 0;
    std::vector<double> context;     // [n_tokens, dim] after mixing
    std::vector<double> pre_mixing;  // [n_tokens, dim] rows fed to the mixer
    std::optional<int> concept_token_index;
};

Conditioning encode_text(const Backbone& bb, std::span<const int> tokens,
                         const std::optional<ConceptEmbedding>& concept_emb);

/// Post-softmax cross-attention weights captured during one forward pass.
struct AttentionRecord {
    struct Layer {
        LayerDesc desc;
        int tokens = 0;
        std::vector<double> probs;  // [head][token][y * W + x]

        double at(int head, int token, int pos) const {
            return probs[(static_cast<std::size_t>(head) * tokens + token) * desc.height * desc.width + pos];
        }
    };
    std::vector<Layer> layers;
};

struct DenoiseResult {
    std::vector<double> eps_hat;
    std::optional<AttentionRecord> record;
};

DenoiseResult forward_denoise(const Backbone& bb, std::span<const double> z_t, int t, const Conditioning& c,
                              bool record);

// ---------------------------------------------------------------- graph level

/// Parameters placed on a tape, looked up by name.
class BoundParams {
public:
    BoundParams(ad::Tape& tape, const Backbone& bb, bool requires_grad);
    ad::Var operator()(const std::string& name) const;
    const std::vector<ad::Var>& vars() const noexcept { return vars_; }

private:
    const Backbone* bb_;
    std::vector<ad::Var> vars_;
};

struct TextGraph {
    ad::Var pre_mixing;  // [n, d]
    ad::Var context;     // [n, d]
};

/// `concept_emb` replaces the row at `concept_index`; pass an empty Var and -1 when absent.
TextGraph encode_text_graph(ad::Tape& tape, const Backbone& bb, const BoundParams& p, std::span<const int> tokens,
                            int concept_index, ad::Var concept_emb);

struct DenoiseGraph {
    ad::Var eps_hat;                                 // latent shape
    std::vector<std::vector<ad::Var>> head_probs;    // [layer][head] -> [H*W, n_tokens]
};

DenoiseGraph denoise_graph(ad::Tape& tape, const Backbone& bb, const BoundParams& p, ad::Var z_t, int t,
                           ad::Var context);

// ---------------------------------------------------------------- training and sampling

struct PretrainOptions {
    int batch_size = 8;
    double learning_rate = 2e-3;
    double embedding_learning_rate = 2e-4;
    int warmup_steps = 100;
    double cond_drop = 0.1;
    double grad_clip = 1.0;
    double weight_decay = 1e-4;
    /// Called after each optimizer step with the batch loss.
    std::function<void(int step, double loss)> on_step;
};

Backbone pretrain(const Backbone& bb, const std::vector<synth::SceneSample>& corpus, int steps, std::uint64_t seed,
                  const PretrainOptions& options = {});

/// Mean denoising loss over fixed (t, eps) draws, conditioned on each sample's tags.
double validation_loss(const Backbone& bb, const std::vector<synth::SceneSample>& samples, std::uint64_t seed,
                       int draws_per_sample = 4);

/// Deterministic DDIM-style sampling with classifier-free guidance.
Image sample(const Backbone& bb, const Conditioning& c, int n_steps, double guidance, std::uint64_t seed);

void save_checkpoint(const Backbone& bb, const std::string& path);
Backbone load_checkpoint(const std::string& path);

}  // namespace seal::backbone

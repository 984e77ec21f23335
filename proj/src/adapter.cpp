#include "seal/adapter.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "seal/attention_ops.hpp"
#include "seal/rng.hpp"

namespace seal::adapter {

using ad::Tape;
using ad::Var;

namespace {

constexpr int kEmbeddingVersion = 1;
constexpr char kEmbeddingMagic[8] = {'S', 'E', 'A', 'L', 'E', 'M', 'B', 'D'};
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::uint64_t parse_hex64(const std::string& s) {
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
        v = std::stoull(s, &used, 16);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != s.size() || s.empty()) fail(ErrorKind::validation, "malformed config hash \"" + s + "\"");
    return v;
}

double nan_mean(const std::vector<double>& v) {
    double s = 0.0;
    int n = 0;
    for (double x : v) {
        if (std::isnan(x)) continue;
        s += x;
        ++n;
    }
    return n ? s / n : kNaN;
}

void require_frozen(const backbone::Backbone& bb) {
    if (!bb.frozen()) fail(ErrorKind::usage, "backbone must be frozen before adaptation");
}

}  // namespace

Reference reference_from_sample(const synth::SceneSample& sample) {
    return {sample.image, synth::mask_image(sample.mask)};
}

MaskCache prepare_masks(const LayerCatalog& catalog, const Image& mask_image, const std::vector<int>& required) {
    MaskCache cache(catalog.size());
    for (const auto& l : catalog.layers()) {
        const bool needed = std::find(required.begin(), required.end(), l.layer_index) != required.end();
        try {
            cache[l.layer_index] = attn::prepare_mask(mask_image, l.height, l.width);
        } catch (const Error& e) {
            if (needed) {
                throw Error(e.kind(), std::string(e.what()) + " at layer " + std::to_string(l.layer_index) + " (" +
                                          std::to_string(l.height) + "x" + std::to_string(l.width) + ")");
            }
        }
    }
    return cache;
}

Probe step_probe(std::uint64_t trajectory_seed, int step, int draw, int timesteps, std::size_t latent_size) {
    const std::uint64_t step_seed = derive_seed(trajectory_seed, static_cast<std::uint64_t>(step));
    Rng tr(derive_seed(step_seed, 2 * static_cast<std::uint64_t>(draw)));
    Rng er(derive_seed(step_seed, 2 * static_cast<std::uint64_t>(draw) + 1));
    Probe p;
    p.t = tr.uniform_int(timesteps);
    p.eps = er.normal_vector(latent_size);
    return p;
}

AdaptationState::AdaptationState(ConceptEmbedding init, std::uint64_t seed_, const AdaptationConfig& cfg)
    : embedding(init.values()),
      token_symbol(init.token_symbol()),
      optimizer(init.dim(), AdamWParams{cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay}),
      seed(seed_) {}

PromptSpec concept_prompt(const TagRecord& tags, const std::string& token_symbol) {
    const auto p = tagkit::build_prompt(tags, token_symbol);
    if (!p.concept_index) fail(ErrorKind::validation, "prompt has no concept token");
    return {p.tokens, *p.concept_index};
}

ObjectiveEval evaluate_objective(const backbone::Backbone& bb, const std::vector<double>& ref_latent,
                                 const MaskCache& masks, const PromptSpec& prompt, const AdaptationConfig& cfg,
                                 const std::vector<double>& embedding, const std::vector<Probe>& probes,
                                 bool want_grad) {
    const auto& a = bb.arch();
    const auto& catalog = bb.catalog();
    const auto selected = reg::select_semantic_layers(catalog);
    if (masks.size() != catalog.size()) fail(ErrorKind::validation, "mask cache does not match the layer catalog");
    for (int l : selected) {
        if (!masks[l]) fail(ErrorKind::validation, "empty mask after resize at layer " + std::to_string(l));
    }
    if (probes.empty()) fail(ErrorKind::validation, "no noise probes");
    if (embedding.size() != static_cast<std::size_t>(a.text_dim)) {
        fail(ErrorKind::validation, "concept embedding has length " + std::to_string(embedding.size()) +
                                        ", expected " + std::to_string(a.text_dim));
    }
    const double inv = 1.0 / static_cast<double>(probes.size());
    const std::size_t n_layers = catalog.size();

    ObjectiveEval out;
    out.grad.assign(embedding.size(), 0.0);
    out.leakage_by_layer.assign(n_layers, 0.0);
    out.bind_by_layer.assign(n_layers, 0.0);
    for (std::size_t l = 0; l < n_layers; ++l) {
        if (!masks[l]) out.leakage_by_layer[l] = out.bind_by_layer[l] = kNaN;
    }

    for (const auto& probe : probes) {
        Tape tape;
        backbone::BoundParams p(tape, bb, false);
        Var v = tape.leaf({a.text_dim}, embedding, want_grad);
        auto text = backbone::encode_text_graph(tape, bb, p, prompt.tokens, prompt.concept_index, v);
        Var z = tape.constant({a.latent_channels, a.latent_size, a.latent_size},
                              backbone::add_noise(ref_latent, probe.t, probe.eps, bb.schedule()));
        auto g = backbone::denoise_graph(tape, bb, p, z, probe.t, text.context);
        Var l_diff = ad::mse(tape, g.eps_hat, probe.eps);

        std::vector<Var> per_layer;
        for (std::size_t l = 0; l < n_layers; ++l) {
            Var a_raw = attn::concept_map(tape, g.head_probs[l], prompt.concept_index);
            const bool in_band = std::find(selected.begin(), selected.end(), static_cast<int>(l)) != selected.end();
            if (in_band) per_layer.push_back(reg::layer_spatial_loss(tape, a_raw, *masks[l], cfg).l_spatial);
            if (masks[l]) {
                const auto& d = catalog.layers()[l];
                const auto a_bar = attn::l1_normalize(AttentionMap(d.layer_index, d.height, d.width, a_raw.value()), cfg.delta);
                out.leakage_by_layer[l] += inv * attn::leakage_ratio(a_bar, *masks[l], cfg.delta);
                out.bind_by_layer[l] +=
                    inv * reg::bind_loss(attn::sharpen(a_bar, cfg.delta), reg::normalize_mask(*masks[l], cfg.delta), cfg.delta);
            }
        }
        Var l_sp = reg::aggregate_spatial(tape, per_layer);
        Var total = ad::add(tape, l_diff, ad::scale(tape, l_sp, cfg.lambda_spatial));
        if (!std::isfinite(total.item())) {
            std::ostringstream msg;
            msg << "non-finite loss (t=" << probe.t << ", l_diffusion=" << l_diff.item()
                << ", l_spatial=" << l_sp.item() << ")";
            fail(ErrorKind::numerical, msg.str());
        }
        if (probes.size() == 1) {
            out.l_diffusion = l_diff.item();
            out.l_spatial = l_sp.item();
            out.l_total = total.item();
        } else {
            out.l_diffusion += inv * l_diff.item();
            out.l_spatial += inv * l_sp.item();
            out.l_total += inv * total.item();
        }
        if (want_grad) {
            tape.backward(total);
            const auto gv = v.grad();
            for (std::size_t i = 0; i < gv.size(); ++i) out.grad[i] += inv * gv[i];
        }
    }
    return out;
}

void adaptation_step(AdaptationState& state, const backbone::Backbone& bb, const std::vector<double>& ref_latent,
                     const MaskCache& masks, const PromptSpec& prompt, const AdaptationConfig& cfg) {
    require_frozen(bb);
    if (state.step >= cfg.steps) fail(ErrorKind::usage, "trajectory already ran its step budget");
    std::vector<Probe> probes;
    for (int b = 0; b < cfg.batch_size; ++b) {
        probes.push_back(step_probe(state.seed, state.step, b, bb.arch().timesteps, ref_latent.size()));
    }
    auto eval = evaluate_objective(bb, ref_latent, masks, prompt, cfg, state.embedding, probes, true);
    for (double g : eval.grad) {
        if (!std::isfinite(g)) {
            fail(ErrorKind::numerical, "non-finite gradient at step " + std::to_string(state.step));
        }
    }
    state.optimizer.step(state.embedding, eval.grad, cfg.learning_rate);

    StepRecord rec;
    rec.step = state.step;
    rec.t = probes.front().t;
    rec.l_diffusion = eval.l_diffusion;
    rec.l_spatial = eval.l_spatial;
    rec.l_total = eval.l_total;
    rec.leakage_by_layer = std::move(eval.leakage_by_layer);
    rec.bind_by_layer = std::move(eval.bind_by_layer);
    state.log.records.push_back(std::move(rec));
    ++state.step;
    if (state.step == cfg.steps) state.log.final_embedding = state.embedding;
}

ConceptEmbedding category_init(const backbone::Backbone& bb, const TagRecord& tags) {
    const auto& vocab = tagkit::default_vocabulary();
    const int id = vocab.id(tagkit::category_word(tags));
    const auto& table = bb.param("text.embed");
    const int d = table.shape.at(1);
    const auto begin = table.values.begin() + static_cast<std::ptrdiff_t>(id) * d;
    return ConceptEmbedding(std::vector<double>(begin, begin + d));
}

namespace {

struct Prepared {
    std::vector<double> ref_latent;
    MaskCache masks;
    PromptSpec prompt;
};

Prepared prepare(const backbone::Backbone& bb, const Reference& reference, const TagRecord& tags,
                 const std::string& token_symbol) {
    Prepared p;
    p.prompt = concept_prompt(tags, token_symbol);
    p.ref_latent = backbone::encode_image(bb.arch(), reference.image);
    p.masks = prepare_masks(bb.catalog(), reference.mask_image, reg::select_semantic_layers(bb.catalog()));
    return p;
}

splitmerge::TrajectoryOutput run_prepared(const backbone::Backbone& bb, const Prepared& prep,
                                          const AdaptationConfig& cfg, const ConceptEmbedding& init,
                                          std::uint64_t seed) {
    AdaptationState state(init, seed, cfg);
    for (int s = 0; s < cfg.steps; ++s) adaptation_step(state, bb, prep.ref_latent, prep.masks, prep.prompt, cfg);
    return {ConceptEmbedding(state.embedding, state.token_symbol), std::move(state.log)};
}

}  // namespace

splitmerge::TrajectoryOutput run_trajectory(const backbone::Backbone& bb, const Reference& reference,
                                            const TagRecord& prompt_tags, const AdaptationConfig& cfg,
                                            const ConceptEmbedding& init, std::uint64_t seed) {
    validate_config(cfg);
    require_frozen(bb);
    return run_prepared(bb, prepare(bb, reference, prompt_tags, init.token_symbol()), cfg, init, seed);
}

AdaptResult adapt(const backbone::Backbone& bb, const Reference& reference, const TagRecord& prompt_tags,
                  const AdaptationConfig& cfg, int threads) {
    validate_config(cfg);
    require_frozen(bb);
    const std::uint64_t hash_before = bb.parameter_hash();
    const auto init = category_init(bb, prompt_tags);
    const Prepared prep = prepare(bb, reference, prompt_tags, init.token_symbol());
    const auto set = splitmerge::init_auxiliaries(init, cfg.K, cfg.base_seed, cfg.jitter);
    auto result = splitmerge::run_parallel(
        [&](const ConceptEmbedding& v, std::uint64_t seed) { return run_prepared(bb, prep, cfg, v, seed); }, set,
        threads);
    if (bb.parameter_hash() != hash_before) fail(ErrorKind::numerical, "backbone parameters changed during adaptation");
    return {*result.set.merged(), std::move(result.set), std::move(result.logs)};
}

// ---------------------------------------------------------------- diagnostics

LeakageReport leakage_report(const backbone::Backbone& bb, const ConceptEmbedding& v, const Reference& reference,
                             const TagRecord& prompt_tags, int n_timesteps, std::uint64_t seed,
                             const AdaptationConfig& cfg) {
    if (n_timesteps < 1) fail(ErrorKind::usage, "need at least one timestep");
    const int T = bb.arch().timesteps;
    std::vector<Probe> probes;
    for (int i = 0; i < n_timesteps; ++i) {
        Probe p;
        p.t = static_cast<int>(((2LL * i + 1) * T) / (2LL * n_timesteps));
        p.eps = Rng(derive_seed(seed, static_cast<std::uint64_t>(i))).normal_vector(backbone::latent_size(bb.arch()));
        probes.push_back(std::move(p));
    }
    return leakage_report(bb, v, reference, prompt_tags, probes, cfg);
}

LeakageReport leakage_report(const backbone::Backbone& bb, const ConceptEmbedding& v, const Reference& reference,
                             const TagRecord& prompt_tags, const std::vector<Probe>& probes,
                             const AdaptationConfig& cfg) {
    if (probes.empty()) fail(ErrorKind::usage, "need at least one probe");
    const Prepared prep = prepare(bb, reference, prompt_tags, v.token_symbol());
    const auto c = backbone::encode_text(bb, prep.prompt.tokens, v);
    const auto& catalog = bb.catalog();

    LeakageReport r;
    r.selected = reg::select_semantic_layers(catalog);
    for (const auto& d : catalog.layers()) {
        LayerReport lr;
        lr.desc = d;
        lr.in_band = std::find(r.selected.begin(), r.selected.end(), d.layer_index) != r.selected.end();
        r.layers.push_back(std::move(lr));
    }
    for (const auto& probe : probes) {
        r.timesteps.push_back(probe.t);
        const auto z = backbone::add_noise(prep.ref_latent, probe.t, probe.eps, bb.schedule());
        const auto out = backbone::forward_denoise(bb, z, probe.t, c, true);
        reg::SpatialLossBreakdown bd;
        bd.selected = r.selected;
        std::vector<double> band;
        for (auto& lr : r.layers) {
            const int l = lr.desc.layer_index;
            auto map = attn::extract_concept_map(*out.record, l, prep.prompt.concept_index);
            const auto& mask = prep.masks[l];
            if (mask) {
                const auto a_bar = attn::l1_normalize(map, cfg.delta);
                lr.leakage.push_back(attn::leakage_ratio(a_bar, *mask, cfg.delta));
                lr.bind.push_back(reg::bind_loss(attn::sharpen(a_bar, cfg.delta), reg::normalize_mask(*mask, cfg.delta),
                                                 cfg.delta));
            } else {
                lr.leakage.push_back(kNaN);
                lr.bind.push_back(kNaN);
            }
            if (lr.in_band) {
                bd.layers.push_back(reg::layer_spatial_loss(map, *mask, cfg));
                band.push_back(bd.layers.back().l_spatial);
            }
            lr.maps.push_back(std::move(map));
        }
        bd.aggregated = reg::aggregate_spatial(band);
        r.breakdowns.push_back(std::move(bd));
    }
    std::vector<double> band_means;
    for (auto& lr : r.layers) {
        lr.mean_leakage = nan_mean(lr.leakage);
        lr.mean_bind = nan_mean(lr.bind);
        if (lr.in_band) band_means.push_back(lr.mean_leakage);
    }
    r.layer0_leakage = r.layers.front().mean_leakage;
    r.band_leakage = nan_mean(band_means);
    return r;
}

nlohmann::json to_json(const LeakageReport& r) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& lr : r.layers) {
        layers.push_back({{"layer_index", lr.desc.layer_index},
                          {"height", lr.desc.height},
                          {"width", lr.desc.width},
                          {"in_band", lr.in_band},
                          {"leakage", lr.leakage},
                          {"bind", lr.bind},
                          {"mean_leakage", lr.mean_leakage},
                          {"mean_bind", lr.mean_bind}});
    }
    nlohmann::json bds = nlohmann::json::array();
    for (const auto& b : r.breakdowns) bds.push_back(reg::to_json(b));
    return {{"timesteps", r.timesteps},
            {"layers", layers},
            {"selected", r.selected},
            {"spatial", bds},
            {"layer0_leakage", r.layer0_leakage},
            {"band_leakage", r.band_leakage},
            {"layer0_minus_band", r.layer0_leakage - r.band_leakage}};
}

namespace {

double log_mean(const TrajectoryLog& log, const std::vector<int>& layers, int from, int to, bool leakage) {
    if (from < 0 || to > static_cast<int>(log.records.size()) || from >= to) {
        fail(ErrorKind::validation, "record range out of bounds");
    }
    std::vector<double> vals;
    for (int s = from; s < to; ++s) {
        const auto& src = leakage ? log.records[s].leakage_by_layer : log.records[s].bind_by_layer;
        for (int l : layers) vals.push_back(src.at(l));
    }
    return nan_mean(vals);
}

}  // namespace

double mean_leakage(const TrajectoryLog& log, const std::vector<int>& layers, int from, int to) {
    return log_mean(log, layers, from, to, true);
}

double mean_bind(const TrajectoryLog& log, const std::vector<int>& layers, int from, int to) {
    return log_mean(log, layers, from, to, false);
}

// ---------------------------------------------------------------- files

void save_embedding(const std::string& path, const splitmerge::AuxiliarySet& set, std::uint64_t config_hash) {
    const auto merged = set.merged() ? *set.merged() : splitmerge::merge(set);
    nlohmann::json header;
    header["format_version"] = kEmbeddingVersion;
    header["d"] = set.dim();
    header["K"] = set.K();
    header["token_symbol"] = merged.token_symbol();
    header["config_hash"] = hex64(config_hash);
    nlohmann::json indices = nlohmann::json::array(), seeds = nlohmann::json::array();
    for (const auto& m : set.members()) {
        indices.push_back(m.index);
        seeds.push_back(hex64(m.seed));
    }
    header["indices"] = indices;
    header["seeds"] = seeds;
    const std::string text = header.dump();

    std::string blob;
    auto put = [&](const std::vector<double>& v) {
        for (double x : v) {
            const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(x));
            for (int i = 0; i < 4; ++i) blob.push_back(static_cast<char>(bits >> (8 * i)));
        }
    };
    for (const auto& m : set.members()) put(m.embedding.values());
    put(merged.values());

    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorKind::io, "cannot write " + path);
    out.write(kEmbeddingMagic, sizeof kEmbeddingMagic);
    char len[8];
    for (int i = 0; i < 8; ++i) len[i] = static_cast<char>(static_cast<std::uint64_t>(text.size()) >> (8 * i));
    out.write(len, 8);
    out << text << blob;
    if (!out) fail(ErrorKind::io, "failed writing " + path);
}

EmbeddingFile load_embedding(const std::string& path, std::optional<std::uint64_t> expected_config_hash) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::io, "cannot open embedding file " + path);
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kEmbeddingMagic, 8) != 0) {
        fail(ErrorKind::validation, path + " is not an embedding file");
    }
    std::uint64_t len = 0;
    for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[8 + i])) << (8 * i);
    if (len > bytes.size() - 16) fail(ErrorKind::validation, "truncated payload");
    nlohmann::json h;
    try {
        h = nlohmann::json::parse(bytes.substr(16, len));
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::validation, std::string("malformed embedding header: ") + e.what());
    }
    if (!h.is_object() || !h.contains("format_version") || h["format_version"] != kEmbeddingVersion) {
        fail(ErrorKind::validation, "unsupported format version");
    }
    std::size_t d = 0;
    int k = 0;
    std::string token;
    std::uint64_t hash = 0;
    std::vector<int> indices;
    std::vector<std::string> seeds;
    try {
        d = h.at("d").get<std::size_t>();
        k = h.at("K").get<int>();
        token = h.at("token_symbol").get<std::string>();
        hash = parse_hex64(h.at("config_hash").get<std::string>());
        indices = h.at("indices").get<std::vector<int>>();
        seeds = h.at("seeds").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::validation, std::string("malformed embedding header: ") + e.what());
    }
    if (d < 1 || k < 1 || indices.size() != static_cast<std::size_t>(k) || seeds.size() != indices.size()) {
        fail(ErrorKind::validation, "malformed embedding header: inconsistent sizes");
    }
    const std::size_t need = (static_cast<std::size_t>(k) + 1) * d * 4;
    const std::size_t have = bytes.size() - 16 - len;
    if (have < need) fail(ErrorKind::validation, "truncated payload");
    if (have > need) fail(ErrorKind::validation, "trailing bytes after embedding payload");
    std::size_t pos = 16 + len;
    auto take = [&]() {
        std::vector<double> v(d);
        for (auto& x : v) {
            std::uint32_t bits = 0;
            for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos++])) << (8 * i);
            x = static_cast<double>(std::bit_cast<float>(bits));
        }
        return v;
    };
    std::vector<splitmerge::Auxiliary> members;
    for (int i = 0; i < k; ++i) {
        members.push_back({indices[i], parse_hex64(seeds[i]), ConceptEmbedding(take(), token)});
    }
    ConceptEmbedding merged(take(), token);
    if (expected_config_hash && *expected_config_hash != hash) {
        warn("embedding " + path + " was produced with config hash " + hex64(hash) + ", current config hashes to " +
             hex64(*expected_config_hash));
    }
    return {splitmerge::AuxiliarySet(std::move(members), std::move(merged)), hash};
}

void write_trajectory_log(const std::string& path, const TrajectoryLog& log) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorKind::io, "cannot write " + path);
    for (const auto& r : log.records) out << to_json(r).dump() << "\n";
    if (!out) fail(ErrorKind::io, "failed writing " + path);
}

TrajectoryLog read_trajectory_log(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::io, "cannot open " + path);
    TrajectoryLog log;
    std::string line;
    int number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (line.empty()) continue;
        try {
            log.records.push_back(step_record_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorKind::validation, path + ":" + std::to_string(number) + ": " + e.what());
        }
    }
    return log;
}

}  // namespace seal::adapter

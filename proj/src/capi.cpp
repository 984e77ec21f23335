#include "seal.h"

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <string>

#include "seal/adapter.hpp"
#include "seal/attention_ops.hpp"
#include "seal/backbone.hpp"
#include "seal/image.hpp"
#include "seal/synth_corpus.hpp"
#include "seal/tagkit.hpp"

struct seal_backbone {
    seal::backbone::Backbone bb;
};

struct seal_embedding {
    seal::adapter::EmbeddingFile file;
};

namespace {

namespace fs = std::filesystem;

constexpr int kHeatmapSize = 128;

thread_local std::string g_last_error;

seal_status code(seal::ErrorKind k) {
    switch (k) {
        case seal::ErrorKind::usage: return SEAL_ERR_USAGE;
        case seal::ErrorKind::validation: return SEAL_ERR_VALIDATION;
        case seal::ErrorKind::numerical: return SEAL_ERR_NUMERICAL;
        case seal::ErrorKind::io: return SEAL_ERR_IO;
    }
    return SEAL_ERR_INTERNAL;
}

template <class F>
seal_status guard(F&& f) {
    g_last_error.clear();
    try {
        f();
        return SEAL_OK;
    } catch (const seal::Error& e) {
        g_last_error = e.what();
        return code(e.kind());
    } catch (const std::bad_alloc&) {
        g_last_error = "out of memory";
        return SEAL_ERR_INTERNAL;
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return SEAL_ERR_INTERNAL;
    }
}

void need(const void* p, const char* what) {
    if (!p) seal::fail(seal::ErrorKind::usage, std::string(what) + " must not be null");
}

char* dup_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (!out) throw std::bad_alloc();
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

seal::AdaptationConfig to_cpp(const seal_config& c) {
    seal::AdaptationConfig cfg;
    cfg.steps = c.steps;
    cfg.learning_rate = c.learning_rate;
    cfg.batch_size = c.batch_size;
    cfg.K = c.K;
    cfg.lambda_bind = c.lambda_bind;
    cfg.lambda_supp = c.lambda_supp;
    cfg.lambda_spatial = c.lambda_spatial;
    cfg.delta = c.delta;
    cfg.base_seed = c.base_seed;
    cfg.beta1 = c.beta1;
    cfg.beta2 = c.beta2;
    cfg.eps = c.eps;
    cfg.weight_decay = c.weight_decay;
    cfg.jitter = c.jitter;
    return cfg;
}

void from_cpp(const seal::AdaptationConfig& cfg, seal_config& c) {
    c.steps = cfg.steps;
    c.learning_rate = cfg.learning_rate;
    c.batch_size = cfg.batch_size;
    c.K = cfg.K;
    c.lambda_bind = cfg.lambda_bind;
    c.lambda_supp = cfg.lambda_supp;
    c.lambda_spatial = cfg.lambda_spatial;
    c.delta = cfg.delta;
    c.base_seed = cfg.base_seed;
    c.beta1 = cfg.beta1;
    c.beta2 = cfg.beta2;
    c.eps = cfg.eps;
    c.weight_decay = cfg.weight_decay;
    c.jitter = cfg.jitter;
}

seal::adapter::Reference load_reference(const char* image_png, const char* mask_png) {
    need(image_png, "reference path");
    need(mask_png, "mask path");
    return {seal::read_png(image_png, 3), seal::read_png(mask_png, 1)};
}

seal::TagRecord parse_tags(const char* line) {
    need(line, "tag line");
    return seal::tagkit::parse_tag_line(line, false).record;
}

const seal::ConceptEmbedding& member_embedding(const seal_embedding* e, int member) {
    const auto& set = e->file.set;
    if (member == -1) return *set.merged();
    if (member < 0 || member >= set.K()) {
        seal::fail(seal::ErrorKind::usage, "member " + std::to_string(member) + " out of range [0, " +
                                               std::to_string(set.K()) + ")");
    }
    return set.members()[member].embedding;
}

// Per-map max scaling, 8-bit quantization, bilinear upsampling.
void write_heatmap(const std::string& path, const seal::AttentionMap& map) {
    double mx = 0.0;
    for (double v : map.grid()) mx = std::max(mx, v);
    seal::Image img(map.height(), map.width(), 1);
    for (std::size_t i = 0; i < map.size(); ++i) img.data[i] = mx > 0.0 ? map.grid()[i] / mx : 0.0;
    seal::write_png(path, seal::resize_bilinear(img, kHeatmapSize, kHeatmapSize));
}

std::mutex g_warning_mutex;
seal_warning_fn g_warning_fn = nullptr;
void* g_warning_user = nullptr;

}  // namespace

extern "C" {

const char* seal_version(void) { return "1.0.0"; }

const char* seal_last_error(void) { return g_last_error.c_str(); }

const char* seal_status_name(seal_status status) {
    switch (status) {
        case SEAL_OK: return "ok";
        case SEAL_ERR_USAGE: return "usage";
        case SEAL_ERR_VALIDATION: return "validation";
        case SEAL_ERR_NUMERICAL: return "numerical";
        case SEAL_ERR_IO: return "io";
        case SEAL_ERR_INTERNAL: return "internal";
    }
    return "unknown";
}

void seal_set_warning_callback(seal_warning_fn fn, void* user) {
    std::lock_guard lock(g_warning_mutex);
    g_warning_fn = fn;
    g_warning_user = user;
    if (!fn) {
        seal::set_warning_handler(nullptr);
        return;
    }
    seal::set_warning_handler([](const std::string& msg) {
        std::lock_guard inner(g_warning_mutex);
        if (g_warning_fn) g_warning_fn(msg.c_str(), g_warning_user);
    });
}

void seal_string_free(char* s) { std::free(s); }

void seal_config_default(seal_config* cfg) {
    if (cfg) from_cpp(seal::AdaptationConfig{}, *cfg);
}

seal_status seal_config_validate(const seal_config* cfg) {
    return guard([&] {
        need(cfg, "config");
        seal::validate_config(to_cpp(*cfg));
    });
}

seal_status seal_config_load(const char* json_path, seal_config* cfg) {
    return guard([&] {
        need(json_path, "config path");
        need(cfg, "config");
        from_cpp(seal::load_config(json_path), *cfg);
    });
}

seal_status seal_config_to_json(const seal_config* cfg, char** json) {
    return guard([&] {
        need(cfg, "config");
        need(json, "output");
        *json = dup_string(seal::to_json(to_cpp(*cfg)).dump());
    });
}

uint64_t seal_config_hash(const seal_config* cfg) { return cfg ? seal::config_hash(to_cpp(*cfg)) : 0; }

seal_status seal_corpus_export(uint64_t seed, int n, const char* dir) {
    return guard([&] {
        need(dir, "output directory");
        seal::synth::export_corpus(seal::synth::generate_corpus(seed, n), dir);
    });
}

seal_status seal_backbone_build(uint64_t arch_seed, seal_backbone** out) {
    return guard([&] {
        need(out, "output");
        *out = new seal_backbone{seal::backbone::build(arch_seed)};
    });
}

seal_status seal_backbone_load(const char* path, seal_backbone** out) {
    return guard([&] {
        need(path, "checkpoint path");
        need(out, "output");
        *out = new seal_backbone{seal::backbone::load_checkpoint(path)};
    });
}

seal_status seal_backbone_save(const seal_backbone* bb, const char* path) {
    return guard([&] {
        need(bb, "backbone");
        need(path, "checkpoint path");
        seal::backbone::save_checkpoint(bb->bb, path);
    });
}

seal_status seal_backbone_pretrain(seal_backbone* bb, const char* corpus_dir, int steps, uint64_t seed,
                                   seal_progress_fn progress, void* user) {
    return guard([&] {
        need(bb, "backbone");
        need(corpus_dir, "corpus directory");
        const auto corpus = seal::synth::load_corpus(corpus_dir);
        seal::backbone::PretrainOptions opt;
        if (progress) opt.on_step = [&](int step, double loss) { progress(step, loss, user); };
        bb->bb = seal::backbone::pretrain(bb->bb, corpus, steps, seed, opt);
    });
}

seal_status seal_backbone_hash(const seal_backbone* bb, uint64_t* hash) {
    return guard([&] {
        need(bb, "backbone");
        need(hash, "output");
        *hash = bb->bb.parameter_hash();
    });
}

seal_status seal_backbone_layer_count(const seal_backbone* bb, int* count) {
    return guard([&] {
        need(bb, "backbone");
        need(count, "output");
        *count = static_cast<int>(bb->bb.catalog().size());
    });
}

void seal_backbone_free(seal_backbone* bb) { delete bb; }

seal_status seal_adapt(const seal_backbone* bb, const char* reference_png, const char* mask_png, const char* tag_line,
                       const seal_config* cfg, int threads, const char* embedding_path, const char* log_dir) {
    return guard([&] {
        need(bb, "backbone");
        need(cfg, "config");
        need(embedding_path, "embedding path");
        const auto config = seal::validate_config(to_cpp(*cfg));
        const auto ref = load_reference(reference_png, mask_png);
        const auto tags = parse_tags(tag_line);
        seal::backbone::Backbone frozen = bb->bb;
        frozen.freeze();
        const auto result = seal::adapter::adapt(frozen, ref, tags, config, threads);
        seal::adapter::save_embedding(embedding_path, result.set, seal::config_hash(config));
        if (log_dir) {
            fs::create_directories(log_dir);
            for (std::size_t i = 0; i < result.logs.size(); ++i) {
                const auto path = fs::path(log_dir) / ("trajectory_" + std::to_string(i) + ".jsonl");
                seal::adapter::write_trajectory_log(path.string(), result.logs[i]);
            }
        }
    });
}

seal_status seal_embedding_load(const char* path, seal_embedding** out) {
    return guard([&] {
        need(path, "embedding path");
        need(out, "output");
        *out = new seal_embedding{seal::adapter::load_embedding(path)};
    });
}

seal_status seal_embedding_dim(const seal_embedding* e, int* dim) {
    return guard([&] {
        need(e, "embedding");
        need(dim, "output");
        *dim = static_cast<int>(e->file.set.dim());
    });
}

seal_status seal_embedding_k(const seal_embedding* e, int* k) {
    return guard([&] {
        need(e, "embedding");
        need(k, "output");
        *k = e->file.set.K();
    });
}

seal_status seal_embedding_values(const seal_embedding* e, int member, double* values) {
    return guard([&] {
        need(e, "embedding");
        need(values, "output");
        const auto& v = member_embedding(e, member).values();
        std::copy(v.begin(), v.end(), values);
    });
}

seal_status seal_embedding_seed(const seal_embedding* e, int member, uint64_t* seed) {
    return guard([&] {
        need(e, "embedding");
        need(seed, "output");
        if (member < 0 || member >= e->file.set.K()) seal::fail(seal::ErrorKind::usage, "member out of range");
        *seed = e->file.set.members()[member].seed;
    });
}

void seal_embedding_free(seal_embedding* e) { delete e; }

seal_status seal_generate(const seal_backbone* bb, const seal_embedding* embedding, const char* tag_line, int steps,
                          double guidance, uint64_t seed, const char* out_png) {
    return guard([&] {
        need(bb, "backbone");
        need(out_png, "output path");
        const auto tags = parse_tags(tag_line);
        seal::backbone::Conditioning c;
        if (embedding) {
            const auto& v = member_embedding(embedding, -1);
            const auto prompt = seal::tagkit::build_prompt(tags, v.token_symbol());
            c = seal::backbone::encode_text(bb->bb, prompt.tokens, v);
        } else {
            c = seal::backbone::encode_text(bb->bb, seal::tagkit::build_prompt(tags, std::nullopt).tokens, std::nullopt);
        }
        seal::write_png(out_png, seal::backbone::sample(bb->bb, c, steps, guidance, seed));
    });
}

seal_status seal_inspect_attention(const seal_backbone* bb, const seal_embedding* embedding, int member,
                                   const char* reference_png, const char* mask_png, const char* tag_line,
                                   int n_timesteps, uint64_t seed, int replay_step, const char* out_dir) {
    return guard([&] {
        need(bb, "backbone");
        need(embedding, "embedding");
        need(out_dir, "output directory");
        const auto& v = member_embedding(embedding, member);
        const auto ref = load_reference(reference_png, mask_png);
        const auto tags = parse_tags(tag_line);
        seal::adapter::LeakageReport report;
        if (replay_step >= 0) {
            if (member < 0) seal::fail(seal::ErrorKind::usage, "replay needs a trajectory member, not the merged vector");
            const auto probe = seal::adapter::step_probe(embedding->file.set.members()[member].seed, replay_step, 0,
                                                         bb->bb.arch().timesteps,
                                                         seal::backbone::latent_size(bb->bb.arch()));
            report = seal::adapter::leakage_report(bb->bb, v, ref, tags, std::vector{probe});
        } else {
            report = seal::adapter::leakage_report(bb->bb, v, ref, tags, n_timesteps, seed);
        }
        fs::create_directories(out_dir);
        for (const auto& layer : report.layers) {
            for (std::size_t i = 0; i < layer.maps.size(); ++i) {
                const auto name = "layer" + std::to_string(layer.desc.layer_index) + "_t" +
                                  std::to_string(report.timesteps[i]) + ".png";
                write_heatmap((fs::path(out_dir) / name).string(), layer.maps[i]);
            }
        }
        auto j = seal::adapter::to_json(report);
        j["member"] = member;
        if (replay_step >= 0) j["replay_step"] = replay_step;
        std::ofstream out(fs::path(out_dir) / "metrics.json", std::ios::binary);
        if (!out) seal::fail(seal::ErrorKind::io, std::string("cannot write metrics in ") + out_dir);
        out << j.dump(2) << "\n";
    });
}

seal_status seal_tags_validate(const char* path, int expect_domain, seal_problem_fn fn, void* user, int* problems) {
    return guard([&] {
        need(path, "manifest path");
        const auto found = seal::tagkit::validate_manifest(path, expect_domain != 0);
        if (fn) {
            for (const auto& p : found) fn(p.line_number, p.message.c_str(), user);
        }
        if (problems) *problems = static_cast<int>(found.size());
        if (!found.empty()) {
            seal::fail(seal::ErrorKind::validation,
                       std::to_string(found.size()) + " malformed line" + (found.size() == 1 ? "" : "s"));
        }
    });
}

seal_status seal_tags_edit(const char* tag_line, const char* attribute, const char* value, char** out_line) {
    return guard([&] {
        need(attribute, "attribute");
        need(value, "value");
        need(out_line, "output");
        const auto edited = seal::tagkit::attribute_edit(parse_tags(tag_line), attribute, value);
        *out_line = dup_string(seal::tagkit::serialize_tag(edited));
    });
}

seal_status seal_tags_similarity(const char* tag_line, double* similarity) {
    return guard([&] {
        need(similarity, "output");
        *similarity = seal::tagkit::intra_similarity(parse_tags(tag_line), seal::tagkit::trigram_embedder());
    });
}

}  // extern "C"

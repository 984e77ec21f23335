#include "seal/core.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <mutex>

namespace seal {

namespace {

std::mutex g_warning_mutex;
WarningHandler g_warning_handler;

}  // namespace

void fail(ErrorKind kind, const std::string& message) { throw Error(kind, message); }

void set_warning_handler(WarningHandler handler) {
    std::lock_guard lock(g_warning_mutex);
    g_warning_handler = std::move(handler);
}

void warn(const std::string& message) {
    std::lock_guard lock(g_warning_mutex);
    if (g_warning_handler) {
        g_warning_handler(message);
    } else {
        std::cerr << "warning: " << message << "\n";
    }
}

std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t seed) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < size; ++i) {
        h ^= bytes[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

// ---------------------------------------------------------------- ConceptEmbedding

ConceptEmbedding::ConceptEmbedding(std::vector<double> values, std::string token_symbol)
    : values_(std::move(values)), token_symbol_(std::move(token_symbol)) {
    if (values_.empty()) fail(ErrorKind::validation, "concept embedding must be nonempty");
    for (double v : values_) {
        if (!std::isfinite(v)) fail(ErrorKind::numerical, "concept embedding has non-finite entries");
    }
    if (token_symbol_.empty()) fail(ErrorKind::validation, "concept token symbol must be nonempty");
}

// ---------------------------------------------------------------- AttentionMap

AttentionMap::AttentionMap(int layer_index, int height, int width, std::vector<double> grid)
    : layer_index_(layer_index), height_(height), width_(width), grid_(std::move(grid)) {
    if (layer_index_ < 0) fail(ErrorKind::validation, "attention map layer index must be >= 0");
    if (height_ < 1 || width_ < 1) fail(ErrorKind::validation, "attention map dimensions must be positive");
    if (grid_.size() != static_cast<std::size_t>(height_) * width_) {
        fail(ErrorKind::validation, "attention map grid size does not match H x W");
    }
    for (double v : grid_) {
        if (!std::isfinite(v)) fail(ErrorKind::numerical, "attention map has non-finite entries");
        if (v < 0.0) fail(ErrorKind::validation, "attention map has negative entries");
    }
}

double AttentionMap::sum() const {
    double s = 0.0;
    for (double v : grid_) s += v;
    return s;
}

// ---------------------------------------------------------------- ObjectMask

ObjectMask::ObjectMask(int height, int width, std::vector<std::uint8_t> grid)
    : height_(height), width_(width), grid_(std::move(grid)), active_(0) {
    if (height_ < 1 || width_ < 1) fail(ErrorKind::validation, "mask dimensions must be positive");
    if (grid_.size() != static_cast<std::size_t>(height_) * width_) {
        fail(ErrorKind::validation, "mask grid size does not match H x W");
    }
    for (auto& v : grid_) {
        if (v > 1) fail(ErrorKind::validation, "mask values must be 0 or 1");
        active_ += v;
    }
    if (active_ == 0) fail(ErrorKind::validation, "empty mask");
}

// ---------------------------------------------------------------- LayerCatalog

LayerCatalog::LayerCatalog(std::vector<LayerDesc> layers) : layers_(std::move(layers)) {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const auto& l = layers_[i];
        if (l.layer_index != static_cast<int>(i)) {
            fail(ErrorKind::validation, "layer catalog indices must be 0..|L|-1 in order");
        }
        if (l.height < 1 || l.width < 1 || l.head_count < 1) {
            fail(ErrorKind::validation, "layer descriptor dimensions must be positive");
        }
    }
}

const LayerDesc& LayerCatalog::at(int layer_index) const {
    if (layer_index < 0 || layer_index >= static_cast<int>(layers_.size())) {
        fail(ErrorKind::validation, "unknown layer " + std::to_string(layer_index));
    }
    return layers_[layer_index];
}

// ---------------------------------------------------------------- NoiseSchedule

NoiseSchedule::NoiseSchedule(std::vector<double> alpha_bar) : alpha_bar_(std::move(alpha_bar)) {
    if (alpha_bar_.empty()) fail(ErrorKind::validation, "noise schedule needs T >= 1");
    for (std::size_t i = 0; i < alpha_bar_.size(); ++i) {
        double a = alpha_bar_[i];
        if (!(a > 0.0 && a < 1.0)) fail(ErrorKind::validation, "alpha_bar entries must lie in (0,1)");
        if (i > 0 && !(a < alpha_bar_[i - 1])) {
            fail(ErrorKind::validation, "alpha_bar must be strictly decreasing");
        }
    }
}

double NoiseSchedule::alpha_bar(int t) const {
    if (t < 0 || t >= steps()) {
        fail(ErrorKind::validation, "timestep " + std::to_string(t) + " out of range [0, " +
                                        std::to_string(steps()) + ")");
    }
    return alpha_bar_[t];
}

// ---------------------------------------------------------------- AdaptationConfig

AdaptationConfig validate_config(const AdaptationConfig& cfg) {
    std::vector<std::string> problems;
    if (cfg.steps < 1) problems.push_back("steps must be ≥ 1");
    if (!(cfg.learning_rate > 0.0) || !std::isfinite(cfg.learning_rate)) {
        problems.push_back("learning_rate must be > 0");
    }
    if (cfg.batch_size < 1) problems.push_back("batch_size must be ≥ 1");
    if (cfg.K < 1) problems.push_back("K must be ≥ 1");
    if (!(cfg.lambda_bind >= 0.0)) problems.push_back("lambda_bind must be ≥ 0");
    if (!(cfg.lambda_supp >= 0.0)) problems.push_back("lambda_supp must be ≥ 0");
    if (!(cfg.lambda_spatial >= 0.0)) problems.push_back("lambda_spatial must be ≥ 0");
    if (!(cfg.delta > 0.0)) problems.push_back("delta must be > 0");
    if (cfg.optimizer != "adamw") problems.push_back("optimizer must be \"adamw\"");
    if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0)) problems.push_back("beta1 must be in [0,1)");
    if (!(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0)) problems.push_back("beta2 must be in [0,1)");
    if (!(cfg.eps > 0.0)) problems.push_back("eps must be > 0");
    if (!(cfg.weight_decay >= 0.0)) problems.push_back("weight_decay must be ≥ 0");
    if (!(cfg.jitter >= 0.0)) problems.push_back("jitter must be ≥ 0");
    if (!problems.empty()) {
        std::string msg = "invalid config: ";
        for (std::size_t i = 0; i < problems.size(); ++i) {
            if (i) msg += "; ";
            msg += problems[i];
        }
        fail(ErrorKind::validation, msg);
    }
    return cfg;
}

nlohmann::json to_json(const AdaptationConfig& cfg) {
    return nlohmann::json{
        {"steps", cfg.steps},
        {"learning_rate", cfg.learning_rate},
        {"batch_size", cfg.batch_size},
        {"K", cfg.K},
        {"lambda_bind", cfg.lambda_bind},
        {"lambda_supp", cfg.lambda_supp},
        {"lambda_spatial", cfg.lambda_spatial},
        {"delta", cfg.delta},
        {"base_seed", cfg.base_seed},
        {"optimizer", cfg.optimizer},
        {"beta1", cfg.beta1},
        {"beta2", cfg.beta2},
        {"eps", cfg.eps},
        {"weight_decay", cfg.weight_decay},
        {"jitter", cfg.jitter},
    };
}

AdaptationConfig config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) fail(ErrorKind::validation, "config must be a JSON object");
    AdaptationConfig cfg;
    std::vector<std::string> unknown;
    try {
        for (auto it = j.begin(); it != j.end(); ++it) {
            const std::string& k = it.key();
            const auto& v = it.value();
            if (k == "steps") cfg.steps = v.get<int>();
            else if (k == "learning_rate") cfg.learning_rate = v.get<double>();
            else if (k == "batch_size") cfg.batch_size = v.get<int>();
            else if (k == "K") cfg.K = v.get<int>();
            else if (k == "lambda_bind") cfg.lambda_bind = v.get<double>();
            else if (k == "lambda_supp") cfg.lambda_supp = v.get<double>();
            else if (k == "lambda_spatial") cfg.lambda_spatial = v.get<double>();
            else if (k == "delta") cfg.delta = v.get<double>();
            else if (k == "base_seed") cfg.base_seed = v.get<std::uint64_t>();
            else if (k == "optimizer") cfg.optimizer = v.get<std::string>();
            else if (k == "beta1") cfg.beta1 = v.get<double>();
            else if (k == "beta2") cfg.beta2 = v.get<double>();
            else if (k == "eps") cfg.eps = v.get<double>();
            else if (k == "weight_decay") cfg.weight_decay = v.get<double>();
            else if (k == "jitter") cfg.jitter = v.get<double>();
            else unknown.push_back(k);
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::validation, std::string("config field has the wrong type: ") + e.what());
    }
    if (!unknown.empty()) {
        std::string msg = "unknown config keys:";
        for (const auto& k : unknown) msg += " " + k;
        fail(ErrorKind::validation, msg);
    }
    return cfg;
}

AdaptationConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::io, "cannot open config file " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::validation, "malformed config JSON: " + std::string(e.what()));
    }
    return validate_config(config_from_json(j));
}

std::uint64_t config_hash(const AdaptationConfig& cfg) {
    std::string s = to_json(cfg).dump();
    return fnv1a(s.data(), s.size());
}

// ---------------------------------------------------------------- TagRecord

namespace {
constexpr std::string_view kFieldNames[kTagFieldCount] = {
    "appearance", "emotion", "action", "camera_composition", "style", "background",
};
}

std::string_view tag_field_name(TagField field) { return kFieldNames[static_cast<int>(field)]; }

std::optional<TagField> tag_field_from_name(std::string_view name) {
    for (int i = 0; i < kTagFieldCount; ++i) {
        if (kFieldNames[i] == name) return static_cast<TagField>(i);
    }
    return std::nullopt;
}

std::string tag_value_problem(std::string_view value) {
    if (value.empty()) return "empty";
    for (char c : value) {
        if (c == ',') return "contains a comma";
        if (c == '\n' || c == '\r') return "contains a newline";
        if (c == ';') return "contains more than one tag";
    }
    if (value.front() == ' ' || value.back() == ' ' || value.front() == '\t' || value.back() == '\t') {
        return "has surrounding whitespace";
    }
    return {};
}

TagRecord::TagRecord(std::string appearance, std::string emotion, std::string action,
                     std::string camera_composition, std::string style, std::string background)
    : fields_{std::move(appearance), std::move(emotion), std::move(action),
              std::move(camera_composition), std::move(style), std::move(background)} {
    for (int i = 0; i < kTagFieldCount; ++i) {
        auto problem = tag_value_problem(fields_[i]);
        if (!problem.empty()) {
            fail(ErrorKind::validation,
                 (problem == "empty" ? "empty field: " : "invalid field " ) +
                     std::string(kFieldNames[i]) + (problem == "empty" ? "" : " (" + problem + ")"));
        }
    }
}

TagRecord TagRecord::with_field(TagField f, std::string value) const {
    auto copy = fields_;
    copy[static_cast<int>(f)] = std::move(value);
    return TagRecord(copy[0], copy[1], copy[2], copy[3], copy[4], copy[5]);
}

// ---------------------------------------------------------------- JSON round-trips

namespace {

nlohmann::json nan_safe(const std::vector<double>& v) {
    auto arr = nlohmann::json::array();
    for (double x : v) {
        if (std::isfinite(x)) arr.push_back(x);
        else arr.push_back(nullptr);
    }
    return arr;
}

std::vector<double> nan_safe_read(const nlohmann::json& arr) {
    std::vector<double> v;
    for (const auto& x : arr) v.push_back(x.is_null() ? std::nan("") : x.get<double>());
    return v;
}

template <class F>
auto guarded(F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::validation, std::string("malformed JSON value: ") + e.what());
    }
}

}  // namespace

nlohmann::json to_json(const StepRecord& r) {
    return nlohmann::json{
        {"step", r.step},
        {"t", r.t},
        {"l_diffusion", r.l_diffusion},
        {"l_spatial", r.l_spatial},
        {"l_total", r.l_total},
        {"leakage_by_layer", nan_safe(r.leakage_by_layer)},
        {"bind_by_layer", nan_safe(r.bind_by_layer)},
    };
}

StepRecord step_record_from_json(const nlohmann::json& j) {
    return guarded([&] {
        StepRecord r;
        r.step = j.at("step").get<int>();
        r.t = j.at("t").get<int>();
        r.l_diffusion = j.at("l_diffusion").get<double>();
        r.l_spatial = j.at("l_spatial").get<double>();
        r.l_total = j.at("l_total").get<double>();
        r.leakage_by_layer = nan_safe_read(j.at("leakage_by_layer"));
        if (j.contains("bind_by_layer")) r.bind_by_layer = nan_safe_read(j.at("bind_by_layer"));
        return r;
    });
}

nlohmann::json to_json(const ConceptEmbedding& v) {
    return {{"token_symbol", v.token_symbol()}, {"values", v.values()}};
}

ConceptEmbedding concept_embedding_from_json(const nlohmann::json& j) {
    return guarded([&] {
        return ConceptEmbedding(j.at("values").get<std::vector<double>>(),
                                j.at("token_symbol").get<std::string>());
    });
}

nlohmann::json to_json(const AttentionMap& m) {
    return {{"layer_index", m.layer_index()},
            {"height", m.height()},
            {"width", m.width()},
            {"grid", m.grid()}};
}

AttentionMap attention_map_from_json(const nlohmann::json& j) {
    return guarded([&] {
        return AttentionMap(j.at("layer_index").get<int>(), j.at("height").get<int>(),
                            j.at("width").get<int>(), j.at("grid").get<std::vector<double>>());
    });
}

nlohmann::json to_json(const ObjectMask& m) {
    return {{"height", m.height()}, {"width", m.width()}, {"grid", m.grid()}};
}

ObjectMask object_mask_from_json(const nlohmann::json& j) {
    return guarded([&] {
        return ObjectMask(j.at("height").get<int>(), j.at("width").get<int>(),
                          j.at("grid").get<std::vector<std::uint8_t>>());
    });
}

nlohmann::json to_json(const LayerCatalog& c) {
    auto arr = nlohmann::json::array();
    for (const auto& l : c.layers()) {
        arr.push_back({{"layer_index", l.layer_index},
                       {"height", l.height},
                       {"width", l.width},
                       {"head_count", l.head_count}});
    }
    return arr;
}

LayerCatalog layer_catalog_from_json(const nlohmann::json& j) {
    return guarded([&] {
        std::vector<LayerDesc> layers;
        for (const auto& e : j) {
            layers.push_back({e.at("layer_index").get<int>(), e.at("height").get<int>(),
                              e.at("width").get<int>(), e.at("head_count").get<int>()});
        }
        return LayerCatalog(std::move(layers));
    });
}

nlohmann::json to_json(const NoiseSchedule& s) { return {{"alpha_bar", s.alpha_bars()}}; }

NoiseSchedule noise_schedule_from_json(const nlohmann::json& j) {
    return guarded([&] { return NoiseSchedule(j.at("alpha_bar").get<std::vector<double>>()); });
}

nlohmann::json to_json(const TagRecord& r) {
    nlohmann::json j;
    for (int i = 0; i < kTagFieldCount; ++i) j[std::string(kFieldNames[i])] = r.fields()[i];
    return j;
}

TagRecord tag_record_from_json(const nlohmann::json& j) {
    return guarded([&] {
        return TagRecord(j.at("appearance").get<std::string>(), j.at("emotion").get<std::string>(),
                         j.at("action").get<std::string>(),
                         j.at("camera_composition").get<std::string>(),
                         j.at("style").get<std::string>(), j.at("background").get<std::string>());
    });
}

}  // namespace seal

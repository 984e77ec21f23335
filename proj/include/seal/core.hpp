#pragma once

// Shared domain types for the SEAL adaptation toolkit.
//
// Every type checks its invariants at construction and is immutable
// afterwards, so values can be shared read-only between worker threads.

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace seal {

enum class ErrorKind {
    usage = 1,
    validation = 2,
    numerical = 3,
    io = 4,
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& message);

/// Warning sink. Defaults to stderr; tests and the C API may redirect it.
using WarningHandler = std::function<void(const std::string&)>;
void set_warning_handler(WarningHandler handler);
void warn(const std::string& message);

class ConceptEmbedding {
public:
    static constexpr const char* kDefaultSymbol = "S*";

    explicit ConceptEmbedding(std::vector<double> values,
                              std::string token_symbol = kDefaultSymbol);

    const std::vector<double>& values() const noexcept { return values_; }
    const std::string& token_symbol() const noexcept { return token_symbol_; }
    std::size_t dim() const noexcept { return values_.size(); }

    bool operator==(const ConceptEmbedding&) const = default;

private:
    std::vector<double> values_;
    std::string token_symbol_;
};

/// Row-major H x W grid of non-negative attention weights for one layer.
class AttentionMap {
public:
    AttentionMap(int layer_index, int height, int width, std::vector<double> grid);

    int layer_index() const noexcept { return layer_index_; }
    int height() const noexcept { return height_; }
    int width() const noexcept { return width_; }
    std::size_t size() const noexcept { return grid_.size(); }
    const std::vector<double>& grid() const noexcept { return grid_; }
    double at(int y, int x) const { return grid_[static_cast<std::size_t>(y) * width_ + x]; }
    double sum() const;

    bool operator==(const AttentionMap&) const = default;

private:
    int layer_index_;
    int height_;
    int width_;
    std::vector<double> grid_;
};

/// Binary H x W grid with at least one active cell.
class ObjectMask {
public:
    ObjectMask(int height, int width, std::vector<std::uint8_t> grid);

    int height() const noexcept { return height_; }
    int width() const noexcept { return width_; }
    std::size_t size() const noexcept { return grid_.size(); }
    const std::vector<std::uint8_t>& grid() const noexcept { return grid_; }
    bool at(int y, int x) const { return grid_[static_cast<std::size_t>(y) * width_ + x] != 0; }
    int active_count() const noexcept { return active_; }
    bool all_active() const noexcept { return active_ == static_cast<int>(grid_.size()); }

    bool operator==(const ObjectMask&) const = default;

private:
    int height_;
    int width_;
    std::vector<std::uint8_t> grid_;
    int active_;
};

struct LayerDesc {
    int layer_index = 0;
    int height = 0;
    int width = 0;
    int head_count = 0;

    bool operator==(const LayerDesc&) const = default;
};

/// Cross-attention layers in forward execution order.
class LayerCatalog {
public:
    explicit LayerCatalog(std::vector<LayerDesc> layers);

    const std::vector<LayerDesc>& layers() const noexcept { return layers_; }
    std::size_t size() const noexcept { return layers_.size(); }
    const LayerDesc& at(int layer_index) const;

    bool operator==(const LayerCatalog&) const = default;

private:
    std::vector<LayerDesc> layers_;
};

class NoiseSchedule {
public:
    explicit NoiseSchedule(std::vector<double> alpha_bar);

    int steps() const noexcept { return static_cast<int>(alpha_bar_.size()); }
    double alpha_bar(int t) const;
    const std::vector<double>& alpha_bars() const noexcept { return alpha_bar_; }

    bool operator==(const NoiseSchedule&) const = default;

private:
    std::vector<double> alpha_bar_;
};

struct AdaptationConfig {
    int steps = 250;
    double learning_rate = 1.5e-4;
    int batch_size = 1;
    int K = 5;
    double lambda_bind = 1.0;
    double lambda_supp = 1.0;
    double lambda_spatial = 1.0;
    double delta = 1e-8;
    std::uint64_t base_seed = 0;
    std::string optimizer = "adamw";
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-2;
    // Auxiliary-embedding initialization spread around the category token.
    double jitter = 0.01;

    bool operator==(const AdaptationConfig&) const = default;
};

/// Throws Error(validation) listing every violated field; returns cfg otherwise.
AdaptationConfig validate_config(const AdaptationConfig& cfg);

nlohmann::json to_json(const AdaptationConfig& cfg);
/// Unknown keys are rejected; missing keys keep their defaults.
AdaptationConfig config_from_json(const nlohmann::json& j);
AdaptationConfig load_config(const std::string& path);

/// 64-bit FNV-1a over the canonical JSON dump.
std::uint64_t config_hash(const AdaptationConfig& cfg);

enum class TagField {
    appearance = 0,
    emotion,
    action,
    camera_composition,
    style,
    background,
};

inline constexpr int kTagFieldCount = 6;

std::string_view tag_field_name(TagField field);
std::optional<TagField> tag_field_from_name(std::string_view name);

class TagRecord {
public:
    TagRecord(std::string appearance, std::string emotion, std::string action,
              std::string camera_composition, std::string style, std::string background);

    const std::string& appearance() const noexcept { return fields_[0]; }
    const std::string& emotion() const noexcept { return fields_[1]; }
    const std::string& action() const noexcept { return fields_[2]; }
    const std::string& camera_composition() const noexcept { return fields_[3]; }
    const std::string& style() const noexcept { return fields_[4]; }
    const std::string& background() const noexcept { return fields_[5]; }
    const std::string& field(TagField f) const { return fields_[static_cast<int>(f)]; }
    const std::vector<std::string>& fields() const noexcept { return fields_; }

    /// Copy with one field replaced (validated).
    TagRecord with_field(TagField f, std::string value) const;

    bool operator==(const TagRecord&) const = default;

private:
    std::vector<std::string> fields_;
};

/// Returns an empty string when the value is a legal tag field, otherwise the reason.
std::string tag_value_problem(std::string_view value);

struct StepRecord {
    int step = 0;
    int t = 0;
    double l_diffusion = 0.0;
    double l_spatial = 0.0;
    double l_total = 0.0;
    // Indexed by catalog layer; NaN where the mask is empty at that resolution.
    std::vector<double> leakage_by_layer;
    std::vector<double> bind_by_layer;
};

struct TrajectoryLog {
    std::vector<StepRecord> records;
    std::vector<double> final_embedding;
};

nlohmann::json to_json(const StepRecord& r);
StepRecord step_record_from_json(const nlohmann::json& j);

// Structural JSON round-trips for the remaining value types.
nlohmann::json to_json(const ConceptEmbedding& v);
ConceptEmbedding concept_embedding_from_json(const nlohmann::json& j);
nlohmann::json to_json(const AttentionMap& m);
AttentionMap attention_map_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ObjectMask& m);
ObjectMask object_mask_from_json(const nlohmann::json& j);
nlohmann::json to_json(const LayerCatalog& c);
LayerCatalog layer_catalog_from_json(const nlohmann::json& j);
nlohmann::json to_json(const NoiseSchedule& s);
NoiseSchedule noise_schedule_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TagRecord& r);
TagRecord tag_record_from_json(const nlohmann::json& j);

std::uint64_t fnv1a(const void* data, std::size_t size,
                    std::uint64_t seed = 0xcbf29ce484222325ULL);

}  // namespace seal

#pragma once

// Six-attribute sticker tags: line grammar, prompt construction over the
// closed testbed vocabulary, attribute edits, and a redundancy diagnostic.

#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "seal/core.hpp"

namespace seal::tagkit {

inline constexpr const char* kStartToken = "<start>";
inline constexpr const char* kEndToken = "<end>";
inline constexpr const char* kSeparatorToken = ",";

/// Whole-word vocabulary. Id order is fixed: specials, placeholder, then words.
class Vocabulary {
public:
    explicit Vocabulary(std::vector<std::string> words,
                        std::string placeholder = ConceptEmbedding::kDefaultSymbol);

    int size() const noexcept { return static_cast<int>(words_.size()); }
    std::optional<int> find(std::string_view word) const;
    int id(std::string_view word) const;  // throws on unknown words
    const std::string& word(int id) const { return words_.at(id); }
    const std::string& placeholder() const noexcept { return placeholder_; }
    int placeholder_id() const { return id(placeholder_); }
    int start_id() const { return id(kStartToken); }
    int end_id() const { return id(kEndToken); }
    int separator_id() const { return id(kSeparatorToken); }

private:
    std::vector<std::string> words_;
    std::string placeholder_;
    std::unordered_map<std::string, int> index_;
};

/// Closed union of the synthetic corpus vocabularies plus sentinels.
const Vocabulary& default_vocabulary();

struct ParsedTagLine {
    std::optional<std::string> domain;
    TagRecord record;
};

ParsedTagLine parse_tag_line(std::string_view line, bool expect_domain);
std::string serialize_tag(const TagRecord& record);

struct Prompt {
    std::vector<int> tokens;
    std::optional<int> concept_index;
};

/// [<start>, appearance-or-placeholder, ",", emotion, ..., background, <end>].
Prompt build_prompt(const TagRecord& record, std::optional<std::string> concept_token,
                    const Vocabulary& vocab = default_vocabulary());

/// Prompt of the unconditional branch used for classifier-free guidance.
Prompt empty_prompt(const Vocabulary& vocab = default_vocabulary());

TagRecord attribute_edit(const TagRecord& record, std::string_view attribute, const std::string& value);

/// Head noun of the appearance tag ("red circle" -> "circle"); used to seed
/// concept embeddings.
std::string category_word(const TagRecord& record);

/// Maps a string to a unit-norm vector.
using TextEmbedder = std::function<std::vector<double>(const std::string&)>;

/// Character-trigram hashing into `dim` buckets, L2-normalised.
TextEmbedder trigram_embedder(int dim = 256);

/// Mean cosine similarity over the 15 field pairs.
double intra_similarity(const TagRecord& record, const TextEmbedder& embed);

struct ManifestProblem {
    int line_number = 0;
    std::string message;
};

/// Every malformed line of a manifest (comments and blank lines skipped).
std::vector<ManifestProblem> validate_manifest_text(std::string_view text, bool expect_domain = false);
std::vector<ManifestProblem> validate_manifest(const std::string& path, bool expect_domain = false);

/// Records of a manifest file; throws listing the first problem.
std::vector<TagRecord> read_manifest(const std::string& path, bool expect_domain = false);

}  // namespace seal::tagkit

#include "seal/tagkit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "seal/synth_corpus.hpp"

namespace seal::tagkit {

namespace {

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_words(std::string_view s) {
    std::vector<std::string> out;
    std::istringstream in{std::string(s)};
    std::string w;
    while (in >> w) out.push_back(w);
    return out;
}

}  // namespace

Vocabulary::Vocabulary(std::vector<std::string> words, std::string placeholder)
    : placeholder_(std::move(placeholder)) {
    words_ = {kStartToken, kEndToken, kSeparatorToken, placeholder_};
    for (auto& w : words) {
        if (w == placeholder_) {
            fail(ErrorKind::validation, "concept token \"" + placeholder_ + "\" collides with a vocabulary word");
        }
        words_.push_back(std::move(w));
    }
    for (int i = 0; i < static_cast<int>(words_.size()); ++i) {
        if (!index_.emplace(words_[i], i).second) {
            fail(ErrorKind::validation, "duplicate vocabulary word \"" + words_[i] + "\"");
        }
    }
}

std::optional<int> Vocabulary::find(std::string_view word) const {
    auto it = index_.find(std::string(word));
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

int Vocabulary::id(std::string_view word) const {
    auto found = find(word);
    if (!found) fail(ErrorKind::validation, "out-of-vocabulary word \"" + std::string(word) + "\"");
    return *found;
}

const Vocabulary& default_vocabulary() {
    static const Vocabulary vocab = [] {
        std::vector<std::string> words;
        auto add_words = [&](const std::string& phrase) {
            for (auto& w : split_words(phrase)) {
                if (std::find(words.begin(), words.end(), w) == words.end()) words.push_back(w);
            }
        };
        for (const auto& c : synth::concept_registry()) add_words(c.name());
        for (const auto* list : {&synth::emotions(), &synth::actions(), &synth::compositions(), &synth::styles(),
                                 &synth::backgrounds()}) {
            for (const auto& phrase : *list) add_words(phrase);
        }
        add_words("none not applicable");
        return Vocabulary(std::move(words));
    }();
    return vocab;
}

ParsedTagLine parse_tag_line(std::string_view line, bool expect_domain) {
    if (trim(line).empty()) fail(ErrorKind::validation, "empty line");
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        fields.emplace_back(trim(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start)));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    const std::size_t expected = expect_domain ? 7 : 6;
    if (fields.size() != expected) {
        fail(ErrorKind::validation,
             "expected " + std::to_string(expected) + " fields, got " + std::to_string(fields.size()));
    }
    std::optional<std::string> domain;
    std::size_t off = 0;
    if (expect_domain) {
        if (fields[0] != "animation" && fields[0] != "real") {
            fail(ErrorKind::validation, "invalid domain \"" + fields[0] + "\" (expected animation or real)");
        }
        domain = fields[0];
        off = 1;
    }
    for (int i = 0; i < kTagFieldCount; ++i) {
        if (fields[off + i].empty()) {
            fail(ErrorKind::validation, "empty field: " + std::string(tag_field_name(static_cast<TagField>(i))));
        }
    }
    return ParsedTagLine{std::move(domain), TagRecord(fields[off], fields[off + 1], fields[off + 2],
                                                      fields[off + 3], fields[off + 4], fields[off + 5])};
}

std::string serialize_tag(const TagRecord& record) {
    std::string out;
    for (int i = 0; i < kTagFieldCount; ++i) {
        if (i) out += ", ";
        out += record.fields()[i];
    }
    return out;
}

Prompt build_prompt(const TagRecord& record, std::optional<std::string> concept_token, const Vocabulary& vocab) {
    Prompt p;
    if (concept_token) {
        if (*concept_token != vocab.placeholder()) {
            if (vocab.find(*concept_token)) {
                fail(ErrorKind::validation,
                     "concept token \"" + *concept_token + "\" collides with a vocabulary word");
            }
            fail(ErrorKind::validation, "concept token \"" + *concept_token +
                                            "\" is not the vocabulary placeholder \"" + vocab.placeholder() + "\"");
        }
    }
    p.tokens.push_back(vocab.start_id());
    for (int i = 0; i < kTagFieldCount; ++i) {
        if (i) p.tokens.push_back(vocab.separator_id());
        if (i == 0 && concept_token) {
            p.concept_index = static_cast<int>(p.tokens.size());
            p.tokens.push_back(vocab.placeholder_id());
            continue;
        }
        for (const auto& w : split_words(record.fields()[i])) {
            const int id = vocab.id(w);
            if (id == vocab.placeholder_id()) fail(ErrorKind::validation, "placeholder appears inside a tag field");
            p.tokens.push_back(id);
        }
    }
    p.tokens.push_back(vocab.end_id());
    return p;
}

Prompt empty_prompt(const Vocabulary& vocab) { return Prompt{{vocab.start_id(), vocab.end_id()}, std::nullopt}; }

TagRecord attribute_edit(const TagRecord& record, std::string_view attribute, const std::string& value) {
    auto field = tag_field_from_name(attribute);
    if (!field) fail(ErrorKind::validation, "unknown attribute \"" + std::string(attribute) + "\"");
    auto problem = tag_value_problem(value);
    if (!problem.empty()) fail(ErrorKind::validation, "invalid value for " + std::string(attribute) + ": " + problem);
    if (*field == TagField::appearance) {
        warn("editing appearance changes the identity anchor of the record");
    }
    return record.with_field(*field, value);
}

std::string category_word(const TagRecord& record) {
    auto words = split_words(record.appearance());
    return words.back();
}

TextEmbedder trigram_embedder(int dim) {
    return [dim](const std::string& text) {
        std::vector<double> v(dim, 0.0);
        const std::string padded = "  " + text + "  ";
        for (std::size_t i = 0; i + 3 <= padded.size(); ++i) {
            const std::uint64_t h = fnv1a(padded.data() + i, 3);
            v[h % static_cast<std::uint64_t>(dim)] += 1.0;
        }
        double n = 0.0;
        for (double x : v) n += x * x;
        n = std::sqrt(n);
        for (double& x : v) x /= n;
        return v;
    };
}

double intra_similarity(const TagRecord& record, const TextEmbedder& embed) {
    std::vector<std::vector<double>> vecs;
    for (const auto& f : record.fields()) {
        auto v = embed(f);
        double n = 0.0;
        for (double x : v) {
            if (!std::isfinite(x)) fail(ErrorKind::numerical, "embedder returned non-finite values");
            n += x * x;
        }
        if (v.empty() || std::abs(std::sqrt(n) - 1.0) > 1e-6) {
            fail(ErrorKind::validation, "embedder must return unit-norm vectors");
        }
        if (!vecs.empty() && v.size() != vecs[0].size()) fail(ErrorKind::validation, "embedder dimension changed");
        vecs.push_back(std::move(v));
    }
    double total = 0.0;
    int pairs = 0;
    for (std::size_t i = 0; i < vecs.size(); ++i)
        for (std::size_t j = i + 1; j < vecs.size(); ++j) {
            double dot = 0.0;
            for (std::size_t k = 0; k < vecs[i].size(); ++k) dot += vecs[i][k] * vecs[j][k];
            total += dot;
            ++pairs;
        }
    return total / pairs;
}

std::vector<ManifestProblem> validate_manifest_text(std::string_view text, bool expect_domain) {
    std::vector<ManifestProblem> problems;
    int number = 0;
    std::size_t start = 0;
    while (start <= text.size()) {
        auto nl = text.find('\n', start);
        auto line = text.substr(start, nl == std::string_view::npos ? text.npos : nl - start);
        ++number;
        const auto t = trim(line);
        if (!t.empty() && t.front() != '#') {
            try {
                parse_tag_line(line, expect_domain);
            } catch (const Error& e) {
                problems.push_back({number, e.what()});
            }
        }
        if (nl == std::string_view::npos) break;
        start = nl + 1;
    }
    return problems;
}

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::io, "cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

std::vector<ManifestProblem> validate_manifest(const std::string& path, bool expect_domain) {
    return validate_manifest_text(slurp(path), expect_domain);
}

std::vector<TagRecord> read_manifest(const std::string& path, bool expect_domain) {
    const std::string text = slurp(path);
    auto problems = validate_manifest_text(text, expect_domain);
    if (!problems.empty()) {
        fail(ErrorKind::validation,
             path + ":" + std::to_string(problems[0].line_number) + ": " + problems[0].message);
    }
    std::vector<TagRecord> out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        const auto t = trim(line);
        if (t.empty() || t.front() == '#') continue;
        out.push_back(parse_tag_line(line, expect_domain).record);
    }
    return out;
}

}  // namespace seal::tagkit

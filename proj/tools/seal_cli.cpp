// Command-line front end over the C API. Every command writes one run
// manifest whose "argv" replays the run with all defaults resolved.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "seal.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kManifestVersion = 1;

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

int exit_code(seal_status s) {
    switch (s) {
        case SEAL_OK: return kOk;
        case SEAL_ERR_USAGE: return kUsage;
        case SEAL_ERR_NUMERICAL: return kNumerical;
        default: return kData;
    }
}

struct Failure {
    int code;
    std::string message;
};

void check(seal_status s) {
    if (s != SEAL_OK) throw Failure{exit_code(s), seal_last_error()};
}

[[noreturn]] void usage(const std::string& message) { throw Failure{kUsage, message}; }

struct BackboneDeleter {
    void operator()(seal_backbone* p) const { seal_backbone_free(p); }
};
struct EmbeddingDeleter {
    void operator()(seal_embedding* p) const { seal_embedding_free(p); }
};
using BackbonePtr = std::unique_ptr<seal_backbone, BackboneDeleter>;
using EmbeddingPtr = std::unique_ptr<seal_embedding, EmbeddingDeleter>;

BackbonePtr load_backbone(const std::string& path) {
    seal_backbone* bb = nullptr;
    check(seal_backbone_load(path.c_str(), &bb));
    return BackbonePtr(bb);
}

EmbeddingPtr load_embedding(const std::string& path) {
    seal_embedding* e = nullptr;
    check(seal_embedding_load(path.c_str(), &e));
    return EmbeddingPtr(e);
}

std::string hex64(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << v;
    return os.str();
}

std::string utc_now() {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// FNV-1a of a file's bytes, for recording which inputs a run consumed.
json file_entry(const std::string& path) {
    json j{{"path", path}};
    std::ifstream in(path, std::ios::binary);
    if (!in) return j;
    std::uint64_t h = 0xcbf29ce484222325ULL;
    std::uint64_t size = 0;
    char buf[1 << 16];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ULL;
        }
        size += static_cast<std::uint64_t>(in.gcount());
    }
    j["bytes"] = size;
    j["fnv1a64"] = hex64(h);
    return j;
}

std::string fmt_double(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

/// Accumulates what a command did; written once when the command ends.
struct Run {
    std::string command;
    std::vector<std::string> argv;
    json config = json::object();
    json seeds = json::object();
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;
    std::string manifest_path;

    void arg(const std::string& flag, const std::string& value) {
        argv.push_back(flag);
        argv.push_back(value);
    }
    void arg(const std::string& flag, double value) { arg(flag, fmt_double(value)); }
    void arg(const std::string& flag, int value) { arg(flag, std::to_string(value)); }
    void arg(const std::string& flag, std::uint64_t value) { arg(flag, std::to_string(value)); }
};

void write_manifest(const Run& run, const std::string& started, double seconds, int code, const std::string& error) {
    if (run.manifest_path.empty()) return;
    json j;
    j["format_version"] = kManifestVersion;
    j["tool_version"] = seal_version();
    j["command"] = run.command;
    j["argv"] = run.argv;
    j["config"] = run.config;
    j["seeds"] = run.seeds;
    j["inputs"] = json::array();
    for (const auto& p : run.inputs) j["inputs"].push_back(file_entry(p));
    j["outputs"] = json::array();
    for (const auto& p : run.outputs) j["outputs"].push_back(file_entry(p));
    j["exit_code"] = code;
    if (!error.empty()) j["error"] = error;
    j["wall_clock"] = {{"started_utc", started}, {"elapsed_seconds", seconds}};
    const fs::path path(run.manifest_path);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        std::cerr << "warning: cannot write manifest " << run.manifest_path << "\n";
        return;
    }
    out << j.dump(2) << "\n";
}

// ------------------------------------------------------------------ corpus

struct CorpusArgs {
    int n = 2000;
    std::uint64_t seed = 1;
    std::string out;
};

void cmd_corpus(const CorpusArgs& a, Run& run) {
    run.arg("--n", a.n);
    run.arg("--seed", a.seed);
    run.arg("--out", a.out);
    run.config = {{"n", a.n}};
    run.seeds = {{"corpus", a.seed}};
    if (run.manifest_path.empty()) run.manifest_path = (fs::path(a.out) / "run_manifest.json").string();
    if (a.n <= 0) usage("--n must be positive");
    check(seal_corpus_export(a.seed, a.n, a.out.c_str()));
    run.outputs = {(fs::path(a.out) / "tags.txt").string(), (fs::path(a.out) / "corpus.json").string()};
}

// ------------------------------------------------------------------ pretrain

struct PretrainArgs {
    std::string corpus;
    int steps = 3000;
    std::uint64_t seed = 0;
    std::uint64_t arch_seed = 0;
    std::string checkpoint;
    std::string loss_csv;
};

void cmd_pretrain(const PretrainArgs& a, Run& run) {
    const std::string csv = a.loss_csv.empty() ? a.checkpoint + ".loss.csv" : a.loss_csv;
    run.argv.push_back(a.corpus);
    run.arg("--steps", a.steps);
    run.arg("--seed", a.seed);
    run.arg("--arch-seed", a.arch_seed);
    run.arg("--checkpoint", a.checkpoint);
    run.arg("--loss-csv", csv);
    run.config = {{"steps", a.steps}};
    run.seeds = {{"pretrain", a.seed}, {"architecture", a.arch_seed}};
    if (run.manifest_path.empty()) run.manifest_path = a.checkpoint + ".manifest.json";
    if (a.steps < 0) usage("--steps must be non-negative");
    if (!fs::is_directory(a.corpus)) throw Failure{kData, "corpus directory not found: " + a.corpus};
    run.inputs = {(fs::path(a.corpus) / "tags.txt").string(), (fs::path(a.corpus) / "corpus.json").string()};

    seal_backbone* raw = nullptr;
    check(seal_backbone_build(a.arch_seed, &raw));
    BackbonePtr bb(raw);

    std::ofstream out(csv, std::ios::binary);
    if (!out) throw Failure{kData, "cannot write " + csv};
    out << "step,loss\n";
    struct Sink {
        std::ofstream* out;
        int steps;
    } sink{&out, a.steps};
    auto progress = [](int step, double loss, void* user) {
        auto* s = static_cast<Sink*>(user);
        *s->out << step << "," << std::setprecision(17) << loss << "\n";
        if ((step + 1) % 100 == 0 || step + 1 == s->steps) {
            std::cerr << "step " << step + 1 << "/" << s->steps << " loss " << std::setprecision(5) << loss << "\n";
        }
    };
    check(seal_backbone_pretrain(bb.get(), a.corpus.c_str(), a.steps, a.seed, progress, &sink));
    out.close();
    check(seal_backbone_save(bb.get(), a.checkpoint.c_str()));
    std::uint64_t hash = 0;
    check(seal_backbone_hash(bb.get(), &hash));
    run.config["parameter_hash"] = hex64(hash);
    run.outputs = {a.checkpoint, csv};
}

// ------------------------------------------------------------------ adapt

struct AdaptArgs {
    std::string checkpoint;
    std::string reference;
    std::string mask;
    std::string tags;
    std::string config_path;
    std::string out;
    int threads = 0;
    seal_config cfg{};
};

json config_json(const seal_config& cfg) {
    char* s = nullptr;
    check(seal_config_to_json(&cfg, &s));
    json j = json::parse(s);
    seal_string_free(s);
    return j;
}

void cmd_adapt(AdaptArgs a, const CLI::App& sub, Run& run) {
    // A config file supplies the base; explicit flags override it.
    if (!a.config_path.empty()) {
        seal_config file_cfg{};
        check(seal_config_load(a.config_path.c_str(), &file_cfg));
        const seal_config& flags = a.cfg;
        auto pick = [&](const char* name, auto& dst, const auto& flag_value) {
            if (sub.count(name) == 0) return;
            dst = flag_value;
        };
        seal_config merged = file_cfg;
        pick("--k", merged.K, flags.K);
        pick("--steps", merged.steps, flags.steps);
        pick("--lr", merged.learning_rate, flags.learning_rate);
        pick("--batch-size", merged.batch_size, flags.batch_size);
        pick("--lambda-spatial", merged.lambda_spatial, flags.lambda_spatial);
        pick("--lambda-bind", merged.lambda_bind, flags.lambda_bind);
        pick("--lambda-supp", merged.lambda_supp, flags.lambda_supp);
        pick("--delta", merged.delta, flags.delta);
        pick("--seed", merged.base_seed, flags.base_seed);
        pick("--beta1", merged.beta1, flags.beta1);
        pick("--beta2", merged.beta2, flags.beta2);
        pick("--adam-eps", merged.eps, flags.eps);
        pick("--weight-decay", merged.weight_decay, flags.weight_decay);
        pick("--jitter", merged.jitter, flags.jitter);
        a.cfg = merged;
        run.inputs.push_back(a.config_path);
    }
    const seal_config& c = a.cfg;
    run.arg("--checkpoint", a.checkpoint);
    run.arg("--reference", a.reference);
    run.arg("--mask", a.mask);
    run.arg("--tags", a.tags);
    run.arg("--out", a.out);
    run.arg("--k", c.K);
    run.arg("--steps", c.steps);
    run.arg("--lr", c.learning_rate);
    run.arg("--batch-size", c.batch_size);
    run.arg("--lambda-spatial", c.lambda_spatial);
    run.arg("--lambda-bind", c.lambda_bind);
    run.arg("--lambda-supp", c.lambda_supp);
    run.arg("--delta", c.delta);
    run.arg("--seed", c.base_seed);
    run.arg("--beta1", c.beta1);
    run.arg("--beta2", c.beta2);
    run.arg("--adam-eps", c.eps);
    run.arg("--weight-decay", c.weight_decay);
    run.arg("--jitter", c.jitter);
    run.arg("--threads", a.threads);
    if (run.manifest_path.empty()) run.manifest_path = (fs::path(a.out) / "manifest.json").string();
    run.inputs.insert(run.inputs.end(), {a.checkpoint, a.reference, a.mask});

    check(seal_config_validate(&c));
    run.config = config_json(c);
    run.config["config_hash"] = hex64(seal_config_hash(&c));
    run.config["tags"] = a.tags;
    run.config["arm"] = (c.lambda_spatial == 0.0 && c.K == 1) ? "control" : "seal";
    run.seeds = {{"base_seed", c.base_seed}};

    const auto bb = load_backbone(a.checkpoint);
    fs::create_directories(a.out);
    const std::string emb_path = (fs::path(a.out) / "embedding.seal").string();
    check(seal_adapt(bb.get(), a.reference.c_str(), a.mask.c_str(), a.tags.c_str(), &c, a.threads, emb_path.c_str(),
                     a.out.c_str()));

    const auto emb = load_embedding(emb_path);
    json traj = json::array();
    for (int i = 0; i < c.K; ++i) {
        std::uint64_t seed = 0;
        check(seal_embedding_seed(emb.get(), i, &seed));
        traj.push_back(hex64(seed));
    }
    run.seeds["trajectories"] = traj;
    run.outputs.push_back(emb_path);
    for (int i = 0; i < c.K; ++i) {
        run.outputs.push_back((fs::path(a.out) / ("trajectory_" + std::to_string(i) + ".jsonl")).string());
    }
}

// ------------------------------------------------------------------ generate

struct GenerateArgs {
    std::string checkpoint;
    std::string embedding;
    std::string tags;
    int steps = 50;
    double guidance = 7.5;
    std::uint64_t seed = 0;
    std::string out;
};

void cmd_generate(const GenerateArgs& a, Run& run) {
    run.arg("--checkpoint", a.checkpoint);
    if (!a.embedding.empty()) run.arg("--embedding", a.embedding);
    run.arg("--tags", a.tags);
    run.arg("--steps", a.steps);
    run.arg("--guidance", a.guidance);
    run.arg("--seed", a.seed);
    run.arg("--out", a.out);
    run.config = {{"steps", a.steps}, {"guidance", a.guidance}, {"tags", a.tags}};
    run.seeds = {{"sampling", a.seed}};
    if (run.manifest_path.empty()) run.manifest_path = a.out + ".manifest.json";
    run.inputs.push_back(a.checkpoint);
    if (!a.embedding.empty()) run.inputs.push_back(a.embedding);

    const auto bb = load_backbone(a.checkpoint);
    EmbeddingPtr emb;
    if (!a.embedding.empty()) emb = load_embedding(a.embedding);
    check(seal_generate(bb.get(), emb.get(), a.tags.c_str(), a.steps, a.guidance, a.seed, a.out.c_str()));
    run.outputs.push_back(a.out);
}

// ------------------------------------------------------------------ inspect-attn

struct InspectArgs {
    std::string checkpoint;
    std::string embedding;
    int member = -1;
    std::string reference;
    std::string mask;
    std::string tags;
    int timesteps = 4;
    std::uint64_t seed = 0;
    int replay_step = -1;
    std::string out;
};

void cmd_inspect(const InspectArgs& a, Run& run) {
    run.arg("--checkpoint", a.checkpoint);
    run.arg("--embedding", a.embedding);
    run.arg("--member", a.member);
    run.arg("--reference", a.reference);
    run.arg("--mask", a.mask);
    run.arg("--tags", a.tags);
    run.arg("--timesteps", a.timesteps);
    run.arg("--seed", a.seed);
    run.arg("--replay-step", a.replay_step);
    run.arg("--out", a.out);
    run.config = {{"member", a.member}, {"timesteps", a.timesteps}, {"replay_step", a.replay_step}, {"tags", a.tags}};
    run.seeds = {{"probe", a.seed}};
    if (run.manifest_path.empty()) run.manifest_path = (fs::path(a.out) / "manifest.json").string();
    run.inputs = {a.checkpoint, a.embedding, a.reference, a.mask};
    if (a.replay_step < 0 && a.timesteps <= 0) usage("--timesteps must be positive");

    const auto bb = load_backbone(a.checkpoint);
    const auto emb = load_embedding(a.embedding);
    check(seal_inspect_attention(bb.get(), emb.get(), a.member, a.reference.c_str(), a.mask.c_str(), a.tags.c_str(),
                                 a.timesteps, a.seed, a.replay_step, a.out.c_str()));
    for (const auto& entry : fs::directory_iterator(a.out)) {
        if (entry.path().filename() != "manifest.json") run.outputs.push_back(entry.path().string());
    }
    std::sort(run.outputs.begin(), run.outputs.end());
}

// ------------------------------------------------------------------ tags

std::vector<std::pair<int, std::string>> tag_lines(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Failure{kData, "cannot read " + path};
    std::vector<std::pair<int, std::string>> lines;
    std::string line;
    for (int n = 1; std::getline(in, line); ++n) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const auto first = line.find_first_not_of(" \t");
        if (first == std::string::npos || line[first] == '#') continue;
        lines.emplace_back(n, line);
    }
    return lines;
}

void cmd_tags_validate(const std::string& file, bool expect_domain, Run& run) {
    run.argv.push_back(file);
    if (expect_domain) run.argv.push_back("--expect-domain");
    run.inputs.push_back(file);
    auto report = [](int line, const char* message, void*) { std::cerr << "line " << line << ": " << message << "\n"; };
    int problems = 0;
    check(seal_tags_validate(file.c_str(), expect_domain ? 1 : 0, report, nullptr, &problems));
    std::cout << "ok\n";
}

void cmd_tags_edit(const std::string& line, const std::string& attr, const std::string& value, Run& run) {
    run.arg("--line", line);
    run.arg("--attr", attr);
    run.arg("--value", value);
    char* out = nullptr;
    check(seal_tags_edit(line.c_str(), attr.c_str(), value.c_str(), &out));
    std::cout << out << "\n";
    seal_string_free(out);
}

void cmd_tags_similarity(const std::string& line, const std::string& file, Run& run) {
    if (line.empty() == file.empty()) usage("give exactly one of --line or --file");
    std::vector<std::pair<int, std::string>> lines;
    if (!line.empty()) {
        run.arg("--line", line);
        lines.emplace_back(0, line);
    } else {
        run.arg("--file", file);
        run.inputs.push_back(file);
        lines = tag_lines(file);
    }
    double total = 0.0;
    for (const auto& [n, text] : lines) {
        double s = 0.0;
        check(seal_tags_similarity(text.c_str(), &s));
        total += s;
        if (!file.empty()) std::cout << n << "\t";
        std::cout << std::setprecision(6) << s << "\n";
    }
    if (!file.empty() && !lines.empty()) {
        std::cout << "mean\t" << std::setprecision(6) << total / static_cast<double>(lines.size()) << "\n";
    }
}

// ------------------------------------------------------------------ driver

int run_cli(std::vector<std::string> args);

int dispatch(CLI::App& app, std::vector<std::string> args) {
    app.option_defaults()->always_capture_default();
    CLI::App* corpus = app.add_subcommand("corpus", "Generate and export the synthetic scene corpus");
    CorpusArgs corpus_args;
    corpus->add_option("--n", corpus_args.n, "Number of scenes");
    corpus->add_option("--seed", corpus_args.seed, "Corpus seed");
    corpus->add_option("--out", corpus_args.out, "Output directory")->required();

    CLI::App* pretrain = app.add_subcommand("pretrain", "Pretrain the toy backbone on an exported corpus");
    PretrainArgs pretrain_args;
    pretrain->add_option("corpus", pretrain_args.corpus, "Corpus directory")->required();
    pretrain->add_option("--steps", pretrain_args.steps, "Optimizer steps");
    pretrain->add_option("--seed", pretrain_args.seed, "Training seed");
    pretrain->add_option("--arch-seed", pretrain_args.arch_seed, "Initialization seed");
    pretrain->add_option("--checkpoint", pretrain_args.checkpoint, "Checkpoint to write")->required();
    pretrain->add_option("--loss-csv", pretrain_args.loss_csv, "Loss curve CSV (default <checkpoint>.loss.csv)");

    CLI::App* adapt = app.add_subcommand("adapt", "Learn a concept embedding from one reference");
    AdaptArgs adapt_args;
    seal_config_default(&adapt_args.cfg);
    adapt->add_option("--checkpoint", adapt_args.checkpoint, "Backbone checkpoint")->required();
    adapt->add_option("--reference", adapt_args.reference, "Reference RGB PNG")->required();
    adapt->add_option("--mask", adapt_args.mask, "Object mask PNG")->required();
    adapt->add_option("--tags", adapt_args.tags, "Reference tag line")->required();
    adapt->add_option("--out", adapt_args.out, "Output directory")->required();
    adapt->add_option("--config", adapt_args.config_path, "JSON config; flags override it");
    adapt->add_option("--k", adapt_args.cfg.K, "Auxiliary embeddings");
    adapt->add_option("--steps", adapt_args.cfg.steps, "Steps per trajectory");
    adapt->add_option("--lr", adapt_args.cfg.learning_rate, "Learning rate");
    adapt->add_option("--batch-size", adapt_args.cfg.batch_size, "Noise draws per step");
    adapt->add_option("--lambda-spatial", adapt_args.cfg.lambda_spatial, "Spatial loss weight");
    adapt->add_option("--lambda-bind", adapt_args.cfg.lambda_bind, "Binding loss weight");
    adapt->add_option("--lambda-supp", adapt_args.cfg.lambda_supp, "Suppression loss weight");
    adapt->add_option("--delta", adapt_args.cfg.delta, "Normalization stabilizer");
    adapt->add_option("--seed", adapt_args.cfg.base_seed, "Base seed");
    adapt->add_option("--beta1", adapt_args.cfg.beta1, "AdamW beta1");
    adapt->add_option("--beta2", adapt_args.cfg.beta2, "AdamW beta2");
    adapt->add_option("--adam-eps", adapt_args.cfg.eps, "AdamW epsilon");
    adapt->add_option("--weight-decay", adapt_args.cfg.weight_decay, "AdamW weight decay");
    adapt->add_option("--jitter", adapt_args.cfg.jitter, "Auxiliary initialization spread");
    adapt->add_option("--threads", adapt_args.threads, "Worker threads (0 = SEAL_THREADS or core count)");

    CLI::App* generate = app.add_subcommand("generate", "Sample an image from a tag prompt");
    GenerateArgs generate_args;
    generate->add_option("--checkpoint", generate_args.checkpoint, "Backbone checkpoint")->required();
    generate->add_option("--embedding", generate_args.embedding, "Concept embedding file");
    generate->add_option("--tags", generate_args.tags, "Tag line")->required();
    generate->add_option("--steps", generate_args.steps, "Sampler steps");
    generate->add_option("--guidance", generate_args.guidance, "Classifier-free guidance scale");
    generate->add_option("--seed", generate_args.seed, "Sampling seed");
    generate->add_option("--out", generate_args.out, "Output PNG")->required();

    CLI::App* inspect = app.add_subcommand("inspect-attn", "Render concept-token attention and leakage metrics");
    InspectArgs inspect_args;
    inspect->add_option("--checkpoint", inspect_args.checkpoint, "Backbone checkpoint")->required();
    inspect->add_option("--embedding", inspect_args.embedding, "Concept embedding file")->required();
    inspect->add_option("--member", inspect_args.member, "Trajectory index, -1 for the merged vector");
    inspect->add_option("--reference", inspect_args.reference, "Reference RGB PNG")->required();
    inspect->add_option("--mask", inspect_args.mask, "Object mask PNG")->required();
    inspect->add_option("--tags", inspect_args.tags, "Reference tag line")->required();
    inspect->add_option("--timesteps", inspect_args.timesteps, "Evenly spaced probe timesteps");
    inspect->add_option("--seed", inspect_args.seed, "Probe noise seed");
    inspect->add_option("--replay-step", inspect_args.replay_step, "Replay the probe of this adaptation step");
    inspect->add_option("--out", inspect_args.out, "Output directory")->required();

    CLI::App* tags = app.add_subcommand("tags", "Tag manifest tooling");
    tags->require_subcommand(1);
    CLI::App* validate = tags->add_subcommand("validate", "Report every malformed line");
    std::string validate_file;
    bool expect_domain = false;
    validate->add_option("file", validate_file, "Tag manifest")->required();
    validate->add_flag("--expect-domain", expect_domain, "Lines carry a leading domain field");
    CLI::App* edit = tags->add_subcommand("edit", "Replace one attribute of a tag line");
    std::string edit_line, edit_attr, edit_value;
    edit->add_option("--line", edit_line, "Tag line")->required();
    edit->add_option("--attr", edit_attr, "Attribute name")->required();
    edit->add_option("--value", edit_value, "New value")->required();
    CLI::App* similarity = tags->add_subcommand("similarity", "Mean pairwise similarity of tag fields");
    std::string sim_line, sim_file;
    similarity->add_option("--line", sim_line, "Tag line");
    similarity->add_option("--file", sim_file, "Tag manifest");

    CLI::App* rerun = app.add_subcommand("rerun", "Re-execute a run from its manifest");
    std::string rerun_manifest;
    rerun->add_option("manifest", rerun_manifest, "Run manifest")->required()->check(CLI::ExistingFile);

    std::string manifest_path;
    for (CLI::App* sub : {corpus, pretrain, adapt, generate, inspect, validate, edit, similarity}) {
        sub->add_option("--manifest", manifest_path, "Where to write the run manifest");
    }
    app.require_subcommand(1);

    try {
        std::reverse(args.begin(), args.end());
        app.parse(args);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsage;
    }

    if (rerun->parsed()) {
        std::ifstream in(rerun_manifest, std::ios::binary);
        json m;
        try {
            m = json::parse(in);
        } catch (const json::exception& e) {
            std::cerr << "error: malformed manifest: " << e.what() << "\n";
            return kData;
        }
        if (m.value("format_version", 0) != kManifestVersion || !m.contains("argv") || !m.contains("command")) {
            std::cerr << "error: unsupported manifest\n";
            return kData;
        }
        std::vector<std::string> replay;
        std::istringstream words(m["command"].get<std::string>());
        for (std::string w; words >> w;) replay.push_back(w);
        for (const auto& a : m["argv"]) replay.push_back(a.get<std::string>());
        replay.push_back("--manifest");
        replay.push_back(rerun_manifest);
        return run_cli(replay);
    }

    Run run;
    run.manifest_path = manifest_path;
    const auto started = utc_now();
    const auto t0 = std::chrono::steady_clock::now();
    int code = kOk;
    std::string error;
    try {
        if (corpus->parsed()) {
            run.command = "corpus";
            cmd_corpus(corpus_args, run);
        } else if (pretrain->parsed()) {
            run.command = "pretrain";
            cmd_pretrain(pretrain_args, run);
        } else if (adapt->parsed()) {
            run.command = "adapt";
            cmd_adapt(adapt_args, *adapt, run);
        } else if (generate->parsed()) {
            run.command = "generate";
            cmd_generate(generate_args, run);
        } else if (inspect->parsed()) {
            run.command = "inspect-attn";
            cmd_inspect(inspect_args, run);
        } else if (validate->parsed()) {
            run.command = "tags validate";
            cmd_tags_validate(validate_file, expect_domain, run);
        } else if (edit->parsed()) {
            run.command = "tags edit";
            cmd_tags_edit(edit_line, edit_attr, edit_value, run);
        } else if (similarity->parsed()) {
            run.command = "tags similarity";
            cmd_tags_similarity(sim_line, sim_file, run);
        }
    } catch (const Failure& f) {
        code = f.code;
        error = f.message;
    } catch (const std::exception& e) {
        code = kData;
        error = e.what();
    }
    if (!error.empty()) std::cerr << "error: " << error << "\n";
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_manifest(run, started, seconds, code, error);
    return code;
}

int run_cli(std::vector<std::string> args) {
    CLI::App app{"SEAL concept-embedding adaptation toolkit", "seal"};
    app.set_version_flag("--version", seal_version());
    return dispatch(app, std::move(args));
}

}  // namespace

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run_cli(std::move(args));
}

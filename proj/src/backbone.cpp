#include "seal/backbone.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "seal/optim.hpp"
#include "seal/rng.hpp"
#include "seal/tagkit.hpp"

namespace seal::backbone {

using ad::Shape;
using ad::Tape;
using ad::Var;

namespace {

constexpr int kCheckpointVersion = 1;
constexpr char kCheckpointMagic[8] = {'S', 'E', 'A', 'L', 'C', 'K', 'P', 'T'};
constexpr int kTimeFeatures = 32;
constexpr int kCoordChannels = 2;
// Table rows are stored at this scale and enter the text mixer multiplied by
// its inverse, so rows are O(1) there while concept embeddings keep their norm.
constexpr double kEmbedInitStd = 0.02;

double to_f32(double x) { return static_cast<double>(static_cast<float>(x)); }

void round_to_f32(std::vector<ParamTensor>& params) {
    for (auto& p : params)
        for (double& v : p.values) v = to_f32(v);
}

int latent_dim(const Architecture& a) { return a.latent_size; }

Architecture resolve(Architecture a) {
    if (a.vocab_size == 0) a.vocab_size = tagkit::default_vocabulary().size();
    if (a.widths.size() != 3) fail(ErrorKind::validation, "architecture needs exactly three widths");
    if (a.image_size != 2 * a.latent_size) fail(ErrorKind::validation, "image size must be twice the latent size");
    if (a.latent_size % 4 != 0) fail(ErrorKind::validation, "latent size must be divisible by 4");
    for (int w : a.widths) {
        if (w <= 0 || w % a.groups != 0) fail(ErrorKind::validation, "widths must be positive multiples of groups");
    }
    if (a.heads < 1 || a.head_dim < 1 || a.text_dim < 1 || a.time_dim < 1) {
        fail(ErrorKind::validation, "architecture dimensions must be positive");
    }
    if (a.vocab_size < tagkit::default_vocabulary().size()) {
        fail(ErrorKind::validation, "vocabulary size smaller than the tag vocabulary");
    }
    return a;
}

// Layer resolutions in forward order, derived from the block layout.
std::vector<int> layer_resolutions(const Architecture& a) {
    const int s = latent_dim(a);
    return {s, s / 2, s / 4, s / 4, s / 2, s};
}

class ParamBuilder {
public:
    explicit ParamBuilder(std::uint64_t seed) : seed_(seed) {}

    void normal(const std::string& name, Shape shape, double stddev, bool trainable = true) {
        Rng rng(derive_seed(seed_, params_.size()));
        auto values = rng.normal_vector(ad::numel(shape));
        for (double& v : values) v *= stddev;
        params_.push_back({name, std::move(shape), std::move(values), trainable});
    }
    void constant(const std::string& name, Shape shape, double value) {
        const auto n = ad::numel(shape);
        params_.push_back({name, std::move(shape), std::vector<double>(n, value), true});
    }
    void conv(const std::string& name, int cout, int cin, int k, double gain = 1.0) {
        normal(name + ".w", {cout, cin, k, k}, gain / std::sqrt(static_cast<double>(cin * k * k)));
        constant(name + ".b", {cout}, 0.0);
    }
    void norm(const std::string& name, int c) {
        constant(name + ".g", {c}, 1.0);
        constant(name + ".b", {c}, 0.0);
    }
    void dense(const std::string& name, int out, int in, bool bias, double gain = 1.0) {
        normal(name + ".w", {out, in}, gain / std::sqrt(static_cast<double>(in)));
        if (bias) constant(name + ".b", {out}, 0.0);
    }
    void resblock(const std::string& n, int cin, int cout, int time_dim) {
        norm(n + ".gn1", cin);
        conv(n + ".conv1", cout, cin, 3);
        dense(n + ".temb", cout, time_dim, true);
        norm(n + ".gn2", cout);
        conv(n + ".conv2", cout, cout, 3, 0.5);
        if (cin != cout) conv(n + ".skip", cout, cin, 1);
    }
    void attention(const std::string& n, int c, const Architecture& a) {
        const int inner = a.heads * a.head_dim;
        norm(n + ".gn", c);
        dense(n + ".q", inner, c, false);
        dense(n + ".k", inner, a.text_dim, false);
        dense(n + ".v", inner, a.text_dim, false);
        dense(n + ".o", c, inner, true, 0.5);
    }

    std::vector<ParamTensor> take() { return std::move(params_); }

private:
    std::uint64_t seed_;
    std::vector<ParamTensor> params_;
};

// Block names paired with their attention layer, in forward order.
constexpr const char* kBlocks[] = {"enc0", "enc1", "enc2", "mid", "dec1", "dec0"};

std::vector<double> sinusoid(int t) {
    std::vector<double> f(kTimeFeatures);
    const int half = kTimeFeatures / 2;
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * i / half);
        f[i] = std::sin(t * freq);
        f[half + i] = std::cos(t * freq);
    }
    return f;
}

std::vector<double> coord_planes(int size) {
    std::vector<double> c(static_cast<std::size_t>(kCoordChannels) * size * size);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const double u = size > 1 ? -1.0 + 2.0 * x / (size - 1) : 0.0;
            const double v = size > 1 ? -1.0 + 2.0 * y / (size - 1) : 0.0;
            c[static_cast<std::size_t>(y) * size + x] = u;
            c[static_cast<std::size_t>(size) * size + static_cast<std::size_t>(y) * size + x] = v;
        }
    return c;
}

struct GraphCtx {
    Tape& tape;
    const BoundParams& p;
    const Architecture& a;
    Var temb_act;
    Var context;
    std::vector<std::vector<Var>>* probs;
};

Var norm(GraphCtx& g, const std::string& n, Var x) {
    return ad::group_norm(g.tape, x, g.a.groups, g.p(n + ".g"), g.p(n + ".b"));
}

Var resblock(GraphCtx& g, const std::string& n, Var x) {
    auto& T = g.tape;
    Var h = ad::conv2d(T, ad::silu(T, norm(g, n + ".gn1", x)), g.p(n + ".conv1.w"), g.p(n + ".conv1.b"));
    const int cout = h.dim(0);
    Var tb = ad::reshape(T, ad::linear(T, g.temb_act, g.p(n + ".temb.w"), g.p(n + ".temb.b")), {cout});
    h = ad::add_channel_bias(T, h, tb);
    h = ad::conv2d(T, ad::silu(T, norm(g, n + ".gn2", h)), g.p(n + ".conv2.w"), g.p(n + ".conv2.b"));
    Var skip = x.dim(0) == cout ? x : ad::conv2d(T, x, g.p(n + ".skip.w"), g.p(n + ".skip.b"));
    return ad::add(T, skip, h);
}

Var cross_attention(GraphCtx& g, const std::string& n, Var x) {
    auto& T = g.tape;
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const int dh = g.a.head_dim;
    Var tokens = ad::transpose(T, ad::reshape(T, norm(g, n + ".gn", x), {c, h * w}));  // [HW, C]
    Var q = ad::linear(T, tokens, g.p(n + ".q.w"), Var());
    Var k = ad::linear(T, g.context, g.p(n + ".k.w"), Var());
    Var v = ad::linear(T, g.context, g.p(n + ".v.w"), Var());
    std::vector<Var> outs;
    std::vector<Var> probs;
    for (int head = 0; head < g.a.heads; ++head) {
        Var qh = ad::slice_cols(T, q, head * dh, (head + 1) * dh);
        Var kh = ad::slice_cols(T, k, head * dh, (head + 1) * dh);
        Var vh = ad::slice_cols(T, v, head * dh, (head + 1) * dh);
        Var pr = ad::softmax_rows(T, ad::scale(T, ad::matmul_nt(T, qh, kh), 1.0 / std::sqrt(dh)));
        probs.push_back(pr);
        outs.push_back(ad::matmul(T, pr, vh));
    }
    g.probs->push_back(std::move(probs));
    Var o = g.a.heads == 1 ? outs[0] : ad::concat_cols(T, outs);
    Var y = ad::linear(T, o, g.p(n + ".o.w"), g.p(n + ".o.b"));  // [HW, C]
    return ad::add(T, x, ad::reshape(T, ad::transpose(T, y), {c, h, w}));
}

Var block(GraphCtx& g, int index, Var x) {
    const std::string n = kBlocks[index];
    return cross_attention(g, n + ".attn", resblock(g, n + ".res", x));
}

void check_tokens(const Architecture& a, std::span<const int> tokens, int concept_index) {
    if (tokens.empty()) fail(ErrorKind::validation, "empty token sequence");
    for (int id : tokens) {
        if (id < 0 || id >= a.vocab_size) fail(ErrorKind::validation, "unknown token id " + std::to_string(id));
    }
    if (concept_index >= static_cast<int>(tokens.size())) {
        fail(ErrorKind::validation, "concept index out of range");
    }
}

std::vector<double> flatten_grads(const BoundParams& p) {
    std::size_t n = 0;
    for (const auto& v : p.vars()) n += v.size();
    std::vector<double> out;
    out.reserve(n);
    for (const auto& v : p.vars()) {
        auto g = v.grad();
        out.insert(out.end(), g.begin(), g.end());
    }
    return out;
}

}  // namespace

// ---------------------------------------------------------------- Architecture

nlohmann::json to_json(const Architecture& a) {
    return {{"image_size", a.image_size},   {"latent_channels", a.latent_channels},
            {"latent_size", a.latent_size}, {"widths", a.widths},
            {"heads", a.heads},             {"head_dim", a.head_dim},
            {"text_dim", a.text_dim},       {"time_dim", a.time_dim},
            {"groups", a.groups},           {"vocab_size", a.vocab_size},
            {"timesteps", a.timesteps},     {"beta_start", a.beta_start},
            {"beta_end", a.beta_end}};
}

Architecture architecture_from_json(const nlohmann::json& j) {
    try {
        Architecture a;
        a.image_size = j.at("image_size").get<int>();
        a.latent_channels = j.at("latent_channels").get<int>();
        a.latent_size = j.at("latent_size").get<int>();
        a.widths = j.at("widths").get<std::vector<int>>();
        a.heads = j.at("heads").get<int>();
        a.head_dim = j.at("head_dim").get<int>();
        a.text_dim = j.at("text_dim").get<int>();
        a.time_dim = j.at("time_dim").get<int>();
        a.groups = j.at("groups").get<int>();
        a.vocab_size = j.at("vocab_size").get<int>();
        a.timesteps = j.at("timesteps").get<int>();
        a.beta_start = j.at("beta_start").get<double>();
        a.beta_end = j.at("beta_end").get<double>();
        return a;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::validation, std::string("malformed architecture: ") + e.what());
    }
}

// ---------------------------------------------------------------- Backbone

Backbone::Backbone(Architecture arch, std::vector<ParamTensor> params)
    : arch_(resolve(std::move(arch))),
      params_(std::move(params)),
      schedule_(make_schedule(arch_.timesteps, arch_.beta_start, arch_.beta_end)),
      catalog_({}) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        const auto& p = params_[i];
        if (p.values.size() != ad::numel(p.shape)) fail(ErrorKind::validation, "parameter " + p.name + " has wrong size");
        for (double v : p.values) {
            if (!std::isfinite(v)) fail(ErrorKind::numerical, "parameter " + p.name + " is not finite");
        }
        if (!index_.emplace(p.name, i).second) fail(ErrorKind::validation, "duplicate parameter " + p.name);
    }
    std::vector<LayerDesc> layers;
    const auto res = layer_resolutions(arch_);
    for (int i = 0; i < static_cast<int>(res.size()); ++i) layers.push_back({i, res[i], res[i], arch_.heads});
    catalog_ = LayerCatalog(std::move(layers));
}

std::vector<ParamTensor>& Backbone::mutable_params() {
    if (frozen_) fail(ErrorKind::usage, "backbone is frozen");
    return params_;
}

std::size_t Backbone::param_index(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) fail(ErrorKind::validation, "unknown parameter " + name);
    return it->second;
}

const ParamTensor& Backbone::param(const std::string& name) const { return params_[param_index(name)]; }

std::size_t Backbone::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.values.size();
    return n;
}

std::uint64_t Backbone::parameter_hash() const {
    std::uint64_t h = fnv1a("", 0);
    for (const auto& p : params_) {
        h = fnv1a(p.name.data(), p.name.size(), h);
        h = fnv1a(p.values.data(), p.values.size() * sizeof(double), h);
    }
    return h;
}

Backbone build(std::uint64_t arch_seed, Architecture arch) {
    const Architecture a = resolve(std::move(arch));
    const int w0 = a.widths[0], w1 = a.widths[1], w2 = a.widths[2];
    ParamBuilder b(arch_seed);
    b.normal("text.embed", {a.vocab_size, a.text_dim}, kEmbedInitStd);
    b.normal("text.mix.q", {a.text_dim, a.text_dim}, 1.0 / std::sqrt(a.text_dim), false);
    b.normal("text.mix.k", {a.text_dim, a.text_dim}, 1.0 / std::sqrt(a.text_dim), false);
    b.normal("text.mix.v", {a.text_dim, a.text_dim}, 1.0 / std::sqrt(a.text_dim), false);
    b.dense("time.l1", a.time_dim, kTimeFeatures, true);
    b.dense("time.l2", a.time_dim, a.time_dim, true);
    b.conv("in", w0, a.latent_channels + kCoordChannels, 3);
    const int io[6][2] = {{w0, w0}, {w0, w1}, {w1, w2}, {w2, w2}, {w2 + w1, w1}, {w1 + w0, w0}};
    for (int i = 0; i < 6; ++i) {
        b.resblock(std::string(kBlocks[i]) + ".res", io[i][0], io[i][1], a.time_dim);
        b.attention(std::string(kBlocks[i]) + ".attn", io[i][1], a);
    }
    b.norm("out.gn", w0);
    b.conv("out", a.latent_channels, w0, 3, 0.1);
    auto params = b.take();
    round_to_f32(params);
    return Backbone(a, std::move(params));
}

LayerCatalog layer_catalog(const Backbone& bb) { return bb.catalog(); }

NoiseSchedule make_schedule(int T, double beta_start, double beta_end) {
    if (T < 1) fail(ErrorKind::validation, "schedule needs T >= 1");
    std::vector<double> ab(T);
    double prod = 1.0;
    for (int t = 0; t < T; ++t) {
        const double beta = T == 1 ? beta_start : beta_start + (beta_end - beta_start) * t / (T - 1);
        prod *= 1.0 - beta;
        ab[t] = prod;
    }
    return NoiseSchedule(std::move(ab));
}

std::vector<double> add_noise(std::span<const double> z, int t, std::span<const double> eps,
                              const NoiseSchedule& schedule) {
    if (z.size() != eps.size()) fail(ErrorKind::validation, "latent and noise shapes differ");
    const double ab = schedule.alpha_bar(t);
    const double a = std::sqrt(ab), s = std::sqrt(1.0 - ab);
    std::vector<double> out(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) out[i] = a * z[i] + s * eps[i];
    return out;
}

double denoising_loss(std::span<const double> eps, std::span<const double> eps_hat) {
    if (eps.size() != eps_hat.size() || eps.empty()) fail(ErrorKind::validation, "noise shapes differ");
    double s = 0.0;
    for (std::size_t i = 0; i < eps.size(); ++i) {
        const double d = eps[i] - eps_hat[i];
        s += d * d;
    }
    return s / static_cast<double>(eps.size());
}

std::size_t latent_size(const Architecture& a) {
    return static_cast<std::size_t>(a.latent_channels) * a.latent_size * a.latent_size;
}

std::vector<double> encode_image(const Architecture& a, const Image& image) {
    if (image.height != a.image_size || image.width != a.image_size || image.channels != a.latent_channels) {
        fail(ErrorKind::validation, "image must be " + std::to_string(a.image_size) + "x" +
                                        std::to_string(a.image_size) + "x" + std::to_string(a.latent_channels));
    }
    const int s = a.latent_size;
    std::vector<double> z(latent_size(a));
    for (int c = 0; c < a.latent_channels; ++c)
        for (int y = 0; y < s; ++y)
            for (int x = 0; x < s; ++x) {
                const double m = 0.25 * (image.at(2 * y, 2 * x, c) + image.at(2 * y, 2 * x + 1, c) +
                                         image.at(2 * y + 1, 2 * x, c) + image.at(2 * y + 1, 2 * x + 1, c));
                z[(static_cast<std::size_t>(c) * s + y) * s + x] = 2.0 * m - 1.0;
            }
    return z;
}

Image decode_latent(const Architecture& a, std::span<const double> latent) {
    if (latent.size() != latent_size(a)) fail(ErrorKind::validation, "latent shape mismatch");
    const int s = a.latent_size;
    Image img(a.image_size, a.image_size, a.latent_channels);
    for (int y = 0; y < a.image_size; ++y)
        for (int x = 0; x < a.image_size; ++x)
            for (int c = 0; c < a.latent_channels; ++c) {
                const double z = latent[(static_cast<std::size_t>(c) * s + y / 2) * s + x / 2];
                img.at(y, x, c) = std::clamp((z + 1.0) * 0.5, 0.0, 1.0);
            }
    return img;
}

// ---------------------------------------------------------------- graphs

BoundParams::BoundParams(Tape& tape, const Backbone& bb, bool requires_grad) : bb_(&bb) {
    vars_.reserve(bb.params().size());
    for (const auto& p : bb.params()) vars_.push_back(tape.leaf(p.shape, p.values, requires_grad && p.trainable));
}

Var BoundParams::operator()(const std::string& name) const { return vars_[bb_->param_index(name)]; }

TextGraph encode_text_graph(Tape& tape, const Backbone& bb, const BoundParams& p, std::span<const int> tokens,
                            int concept_index, Var concept_emb) {
    const auto& a = bb.arch();
    check_tokens(a, tokens, concept_index);
    Var rows = ad::gather_rows(tape, p("text.embed"), tokens, concept_index, concept_emb);
    Var pre = ad::scale(tape, rows, 1.0 / kEmbedInitStd);
    Var q = ad::matmul(tape, pre, p("text.mix.q"));
    Var k = ad::matmul(tape, pre, p("text.mix.k"));
    Var v = ad::matmul(tape, pre, p("text.mix.v"));
    Var att = ad::softmax_rows(tape, ad::scale(tape, ad::matmul_nt(tape, q, k), 1.0 / std::sqrt(a.text_dim)));
    Var ctx = ad::add(tape, pre, ad::matmul(tape, att, v));
    return {pre, ctx};
}

DenoiseGraph denoise_graph(Tape& tape, const Backbone& bb, const BoundParams& p, Var z_t, int t, Var context) {
    const auto& a = bb.arch();
    const int s = a.latent_size;
    if (z_t.shape() != Shape{a.latent_channels, s, s}) fail(ErrorKind::validation, "latent shape mismatch");
    if (context.shape().size() != 2 || context.dim(1) != a.text_dim) {
        fail(ErrorKind::validation, "conditioning width mismatch");
    }
    bb.schedule().alpha_bar(t);  // range check

    DenoiseGraph out;
    Var tf = tape.constant({1, kTimeFeatures}, sinusoid(t));
    Var temb = ad::linear(tape, ad::silu(tape, ad::linear(tape, tf, p("time.l1.w"), p("time.l1.b"))),
                          p("time.l2.w"), p("time.l2.b"));
    GraphCtx g{tape, p, a, ad::silu(tape, temb), context, &out.head_probs};

    Var coords = tape.constant({kCoordChannels, s, s}, coord_planes(s));
    Var x = ad::conv2d(tape, ad::concat_channels(tape, z_t, coords), p("in.w"), p("in.b"));
    Var skip16 = block(g, 0, x);
    Var skip8 = block(g, 1, ad::avg_pool2(tape, skip16));
    Var h = block(g, 2, ad::avg_pool2(tape, skip8));
    h = block(g, 3, h);
    h = block(g, 4, ad::concat_channels(tape, ad::upsample2(tape, h), skip8));
    h = block(g, 5, ad::concat_channels(tape, ad::upsample2(tape, h), skip16));
    h = ad::silu(tape, norm(g, "out.gn", h));
    out.eps_hat = ad::conv2d(tape, h, p("out.w"), p("out.b"));
    return out;
}

Conditioning encode_text(const Backbone& bb, std::span<const int> tokens, const std::optional<ConceptEmbedding>& concept_emb) {
    const auto& a = bb.arch();
    const int placeholder = tagkit::default_vocabulary().placeholder_id();
    int concept_index = -1;
    for (int i = 0; i < static_cast<int>(tokens.size()); ++i) {
        if (tokens[i] != placeholder) continue;
        if (concept_index >= 0) fail(ErrorKind::validation, "concept token appears more than once");
        concept_index = i;
    }
    if (concept_emb && concept_index < 0) fail(ErrorKind::validation, "prompt has no concept token");
    if (!concept_emb && concept_index >= 0) fail(ErrorKind::usage, "concept token without a concept embedding");
    if (concept_emb && static_cast<int>(concept_emb->dim()) != a.text_dim) {
        fail(ErrorKind::validation, "concept embedding has length " + std::to_string(concept_emb->dim()) +
                                        ", expected " + std::to_string(a.text_dim));
    }
    Tape tape;
    BoundParams p(tape, bb, false);
    Var cv = concept_emb ? tape.constant({a.text_dim}, concept_emb->values()) : Var();
    auto tg = encode_text_graph(tape, bb, p, tokens, concept_emb ? concept_index : -1, cv);
    Conditioning c;
    c.n_tokens = static_cast<int>(tokens.size());
    c.dim = a.text_dim;
    c.context = tg.context.value();
    c.pre_mixing = tg.pre_mixing.value();
    if (concept_index >= 0) c.concept_token_index = concept_index;
    return c;
}

DenoiseResult forward_denoise(const Backbone& bb, std::span<const double> z_t, int t, const Conditioning& c,
                              bool record) {
    const auto& a = bb.arch();
    if (z_t.size() != latent_size(a)) fail(ErrorKind::validation, "latent shape mismatch");
    if (c.dim != a.text_dim || c.context.size() != static_cast<std::size_t>(c.n_tokens) * c.dim) {
        fail(ErrorKind::validation, "conditioning shape mismatch");
    }
    Tape tape;
    BoundParams p(tape, bb, false);
    Var z = tape.constant({a.latent_channels, a.latent_size, a.latent_size}, {z_t.begin(), z_t.end()});
    Var ctx = tape.constant({c.n_tokens, c.dim}, c.context);
    auto g = denoise_graph(tape, bb, p, z, t, ctx);
    DenoiseResult r;
    r.eps_hat = g.eps_hat.value();
    if (record) {
        AttentionRecord rec;
        for (std::size_t l = 0; l < g.head_probs.size(); ++l) {
            AttentionRecord::Layer layer;
            layer.desc = bb.catalog().layers()[l];
            layer.tokens = c.n_tokens;
            const int hw = layer.desc.height * layer.desc.width;
            layer.probs.resize(static_cast<std::size_t>(layer.desc.head_count) * c.n_tokens * hw);
            for (int h = 0; h < layer.desc.head_count; ++h) {
                const auto& pv = g.head_probs[l][h].value();  // [HW, n]
                for (int pos = 0; pos < hw; ++pos)
                    for (int k = 0; k < c.n_tokens; ++k) {
                        layer.probs[(static_cast<std::size_t>(h) * c.n_tokens + k) * hw + pos] =
                            pv[static_cast<std::size_t>(pos) * c.n_tokens + k];
                    }
            }
            rec.layers.push_back(std::move(layer));
        }
        r.record = std::move(rec);
    }
    return r;
}

// ---------------------------------------------------------------- pretraining

Backbone pretrain(const Backbone& bb0, const std::vector<synth::SceneSample>& corpus, int steps, std::uint64_t seed,
                  const PretrainOptions& opt) {
    if (corpus.empty()) fail(ErrorKind::validation, "empty corpus");
    if (steps < 0) fail(ErrorKind::usage, "steps must be >= 0");
    if (opt.batch_size < 1) fail(ErrorKind::usage, "batch size must be >= 1");
    if (bb0.frozen()) fail(ErrorKind::usage, "cannot pretrain a frozen backbone");
    Backbone bb = bb0;
    if (steps == 0) return bb;

    const auto& a = bb.arch();
    const auto& vocab = tagkit::default_vocabulary();
    std::vector<std::vector<double>> latents;
    std::vector<std::vector<int>> prompts;
    for (const auto& s : corpus) {
        latents.push_back(encode_image(a, s.image));
        prompts.push_back(tagkit::build_prompt(s.tags, std::nullopt, vocab).tokens);
    }
    const auto uncond = tagkit::empty_prompt(vocab).tokens;
    const Shape latent_shape{a.latent_channels, a.latent_size, a.latent_size};
    const std::size_t embed_index = bb.param_index("text.embed");

    auto& params = bb.mutable_params();
    std::vector<AdamW> optim;
    for (const auto& p : params) optim.emplace_back(p.values.size(), AdamWParams{0.9, 0.999, 1e-8, opt.weight_decay});

    Rng rng(derive_seed(seed, 0x70726574ULL));
    const int n = static_cast<int>(corpus.size());
    for (int step = 0; step < steps; ++step) {
        std::vector<double> grad;
        double loss_sum = 0.0;
        for (int b = 0; b < opt.batch_size; ++b) {
            const int idx = rng.uniform_int(n);
            const int t = rng.uniform_int(a.timesteps);
            const auto eps = rng.normal_vector(latent_size(a));
            const bool drop = rng.uniform() < opt.cond_drop;

            Tape tape;
            BoundParams p(tape, bb, true);
            Var z = tape.constant(latent_shape, add_noise(latents[idx], t, eps, bb.schedule()));
            auto text = encode_text_graph(tape, bb, p, drop ? uncond : prompts[idx], -1, Var());
            auto g = denoise_graph(tape, bb, p, z, t, text.context);
            Var loss = ad::mse(tape, g.eps_hat, eps);
            tape.backward(loss);
            loss_sum += loss.item();
            auto gb = flatten_grads(p);
            if (grad.empty()) {
                grad = std::move(gb);
            } else {
                for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += gb[i];
            }
        }
        double norm2 = 0.0;
        for (double& g : grad) {
            g /= opt.batch_size;
            norm2 += g * g;
        }
        const double gnorm = std::sqrt(norm2);
        if (!std::isfinite(gnorm)) fail(ErrorKind::numerical, "non-finite gradient at pretraining step " + std::to_string(step));
        const double clip = (opt.grad_clip > 0.0 && gnorm > opt.grad_clip) ? opt.grad_clip / gnorm : 1.0;
        const double warm = std::min(1.0, (step + 1.0) / std::max(1, opt.warmup_steps));
        const double decay = 0.1 + 0.45 * (1.0 + std::cos(std::numbers::pi * step / steps));
        std::size_t off = 0;
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto& p = params[i];
            const std::size_t sz = p.values.size();
            if (p.trainable) {
                std::vector<double> g(grad.begin() + static_cast<std::ptrdiff_t>(off),
                                      grad.begin() + static_cast<std::ptrdiff_t>(off + sz));
                for (double& x : g) x *= clip;
                const double base = i == embed_index ? opt.embedding_learning_rate : opt.learning_rate;
                optim[i].step(p.values, g, base * warm * decay);
            }
            off += sz;
        }
        if (opt.on_step) opt.on_step(step, loss_sum / opt.batch_size);
    }
    round_to_f32(params);
    return Backbone(bb.arch(), bb.params());
}

double validation_loss(const Backbone& bb, const std::vector<synth::SceneSample>& samples, std::uint64_t seed,
                       int draws_per_sample) {
    if (samples.empty()) fail(ErrorKind::validation, "empty validation set");
    const auto& a = bb.arch();
    double total = 0.0;
    int count = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto z = encode_image(a, samples[i].image);
        const auto prompt = tagkit::build_prompt(samples[i].tags, std::nullopt);
        const auto c = encode_text(bb, prompt.tokens, std::nullopt);
        for (int d = 0; d < draws_per_sample; ++d) {
            Rng rng(derive_seed(seed, i * static_cast<std::uint64_t>(draws_per_sample) + d));
            const int t = rng.uniform_int(a.timesteps);
            const auto eps = rng.normal_vector(z.size());
            const auto r = forward_denoise(bb, add_noise(z, t, eps, bb.schedule()), t, c, false);
            total += denoising_loss(eps, r.eps_hat);
            ++count;
        }
    }
    return total / count;
}

// ---------------------------------------------------------------- sampling

Image sample(const Backbone& bb, const Conditioning& c, int n_steps, double guidance, std::uint64_t seed) {
    if (n_steps < 1) fail(ErrorKind::usage, "n_steps must be >= 1");
    if (!std::isfinite(guidance)) fail(ErrorKind::usage, "guidance must be finite");
    const auto& a = bb.arch();
    const int T = a.timesteps;
    const int steps = std::min(n_steps, T);
    const auto uncond = encode_text(bb, tagkit::empty_prompt().tokens, std::nullopt);

    Rng rng(derive_seed(seed, 0x73616d70ULL));
    auto z = rng.normal_vector(latent_size(a));
    for (int i = 0; i < steps; ++i) {
        const int t = static_cast<int>((static_cast<long long>(steps - i) * T) / steps) - 1;
        const int t_prev = static_cast<int>((static_cast<long long>(steps - i - 1) * T) / steps) - 1;
        std::vector<double> eps;
        if (guidance == 1.0) {
            eps = forward_denoise(bb, z, t, c, false).eps_hat;
        } else if (guidance == 0.0) {
            eps = forward_denoise(bb, z, t, uncond, false).eps_hat;
        } else {
            const auto ec = forward_denoise(bb, z, t, c, false).eps_hat;
            eps = forward_denoise(bb, z, t, uncond, false).eps_hat;
            for (std::size_t k = 0; k < eps.size(); ++k) eps[k] += guidance * (ec[k] - eps[k]);
        }
        const double ab = bb.schedule().alpha_bar(t);
        const double ab_prev = t_prev >= 0 ? bb.schedule().alpha_bar(t_prev) : 1.0;
        for (std::size_t k = 0; k < z.size(); ++k) {
            const double x0 = std::clamp((z[k] - std::sqrt(1.0 - ab) * eps[k]) / std::sqrt(ab), -1.0, 1.0);
            const double e = (z[k] - std::sqrt(ab) * x0) / std::sqrt(1.0 - ab);
            z[k] = std::sqrt(ab_prev) * x0 + std::sqrt(1.0 - ab_prev) * e;
        }
    }
    return decode_latent(a, z);
}

// ---------------------------------------------------------------- checkpoints

void save_checkpoint(const Backbone& bb, const std::string& path) {
    nlohmann::json header;
    header["format_version"] = kCheckpointVersion;
    header["architecture"] = to_json(bb.arch());
    header["schedule"] = {{"T", bb.arch().timesteps},
                          {"beta_start", bb.arch().beta_start},
                          {"beta_end", bb.arch().beta_end}};
    nlohmann::json plist = nlohmann::json::array();
    for (const auto& p : bb.params()) {
        plist.push_back({{"name", p.name}, {"shape", p.shape}, {"trainable", p.trainable}});
    }
    header["parameters"] = plist;
    header["parameter_count"] = bb.parameter_count();
    const std::string text = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorKind::io, "cannot write " + path);
    out.write(kCheckpointMagic, sizeof kCheckpointMagic);
    std::uint64_t len = text.size();
    unsigned char lenbuf[8];
    for (int i = 0; i < 8; ++i) lenbuf[i] = static_cast<unsigned char>(len >> (8 * i));
    out.write(reinterpret_cast<const char*>(lenbuf), 8);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& p : bb.params()) {
        for (double v : p.values) {
            const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
            unsigned char b[4];
            for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
            out.write(reinterpret_cast<const char*>(b), 4);
        }
    }
    if (!out) fail(ErrorKind::io, "failed writing " + path);
}

Backbone load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::io, "cannot open checkpoint " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
        fail(ErrorKind::validation, path + " is not a backbone checkpoint");
    }
    std::uint64_t len = 0;
    for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[8 + i])) << (8 * i);
    if (len > bytes.size() - 16) fail(ErrorKind::validation, "truncated payload");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.substr(16, len));
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::validation, std::string("malformed checkpoint header: ") + e.what());
    }
    if (!header.contains("format_version") || header["format_version"] != kCheckpointVersion) {
        fail(ErrorKind::validation, "unsupported format version");
    }
    const Architecture arch = architecture_from_json(header.at("architecture"));
    std::vector<ParamTensor> params;
    std::size_t pos = 16 + len;
    try {
        for (const auto& pj : header.at("parameters")) {
            ParamTensor p;
            p.name = pj.at("name").get<std::string>();
            p.shape = pj.at("shape").get<Shape>();
            p.trainable = pj.at("trainable").get<bool>();
            const std::size_t n = ad::numel(p.shape);
            if (bytes.size() - pos < n * 4) fail(ErrorKind::validation, "truncated payload");
            p.values.resize(n);
            for (std::size_t i = 0; i < n; ++i, pos += 4) {
                std::uint32_t bits = 0;
                for (int k = 0; k < 4; ++k) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos + k])) << (8 * k);
                p.values[i] = static_cast<double>(std::bit_cast<float>(bits));
            }
            params.push_back(std::move(p));
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::validation, std::string("malformed checkpoint header: ") + e.what());
    }
    if (pos != bytes.size()) fail(ErrorKind::validation, "trailing bytes after checkpoint payload");
    Backbone bb(arch, std::move(params));
    const Backbone reference = build(0, arch);
    if (bb.params().size() != reference.params().size()) {
        fail(ErrorKind::validation, "checkpoint parameters do not match the architecture");
    }
    for (std::size_t i = 0; i < bb.params().size(); ++i) {
        if (bb.params()[i].name != reference.params()[i].name || bb.params()[i].shape != reference.params()[i].shape) {
            fail(ErrorKind::validation, "checkpoint parameter " + bb.params()[i].name + " does not match the architecture");
        }
    }
    return bb;
}

}  // namespace seal::backbone

#include "seal/synth_corpus.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "seal/rng.hpp"
#include "seal/tagkit.hpp"

namespace seal::synth {

namespace fs = std::filesystem;

namespace {

using Rgb = std::array<double, 3>;

constexpr Rgb kInk{0.05, 0.05, 0.05};
constexpr Rgb kBackgroundTones[] = {
    {0.96, 0.94, 0.88},
    {0.86, 0.92, 0.97},
    {0.93, 0.88, 0.95},
    {0.88, 0.95, 0.88},
};
constexpr Rgb kPatternGray{0.68, 0.68, 0.70};

struct Glyph {
    int shape = 0;
    double cx = 16, cy = 16, r = 9;
    double squash = 1.0;  // vertical scale (sitting pose)
    bool arm = false;     // raised arm (waving pose)
    std::string emotion;
};

bool inside_body(const Glyph& g, double px, double py) {
    const double u = (px - g.cx) / g.r;
    const double v = (py - g.cy) / (g.r * g.squash);
    bool in = false;
    switch (g.shape) {
        case 0:  // circle
            in = u * u + v * v <= 1.0;
            break;
        case 1:  // square
            in = std::abs(u) <= 0.85 && std::abs(v) <= 0.85;
            break;
        case 2:  // triangle, apex up
            in = v >= -0.95 && v <= 0.75 && std::abs(u) <= 0.95 * (v + 0.95) / 1.7;
            break;
        default: {  // five-point star, one point up
            const double rho = std::sqrt(u * u + v * v);
            const double theta = std::atan2(v, u);
            in = rho <= 0.7 + 0.3 * std::cos(5.0 * (theta + std::numbers::pi / 2));
        }
    }
    if (!in && g.arm) {
        in = u >= 0.7 && u <= 1.3 && v >= -0.8 && v <= -0.45;
    }
    return in;
}

bool on_decal(const Glyph& g, double px, double py) {
    const double u = (px - g.cx) / g.r;
    const double v = (py - g.cy) / (g.r * g.squash);
    const double eye = std::max(0.15, 1.0 / g.r);
    const double t = std::max(0.08, 0.6 / g.r);
    for (double ex : {-0.32, 0.32}) {
        const double du = u - ex, dv = v + 0.2;
        if (du * du + dv * dv <= eye * eye) return true;
    }
    if (g.emotion == "happy") {
        const double d = std::sqrt(u * u + (v - 0.05) * (v - 0.05));
        return std::abs(d - 0.38) <= t && v > 0.2;
    }
    if (g.emotion == "sad") {
        const double d = std::sqrt(u * u + (v - 0.7) * (v - 0.7));
        return std::abs(d - 0.38) <= t && v < 0.45 && v > 0.2;
    }
    const bool mouth = std::abs(v - 0.4) <= t && std::abs(u) <= 0.3;
    if (g.emotion == "angry") {
        const bool brow = std::abs(u) >= 0.15 && std::abs(u) <= 0.5 &&
                          std::abs(v - (-0.65 + 0.6 * (std::abs(u) - 0.15))) <= t;
        return mouth || brow;
    }
    return mouth;  // neutral
}

Rgb background_at(const std::string& kind, const Rgb& tone, double phase, int x, int y) {
    if (kind == "none") return {1.0, 1.0, 1.0};
    if (kind == "stripes") {
        return ((x + y + static_cast<int>(phase)) % 6) < 3 ? tone : kPatternGray;
    }
    if (kind == "dots") {
        const double gx = std::fmod(x + 0.5 + phase, 6.0) - 3.0;
        const double gy = std::fmod(y + 0.5 + phase, 6.0) - 3.0;
        return gx * gx + gy * gy <= 1.6 ? kPatternGray : tone;
    }
    if (kind == "gradient") {
        const double w = (y + 0.5) / kImageSize;
        Rgb c;
        for (int i = 0; i < 3; ++i) c[i] = tone[i] * (1 - w) + kPatternGray[i] * w;
        return c;
    }
    return tone;  // plain
}

// Area-average downsample of the support followed by the > 0.5 threshold;
// true when every attention resolution keeps at least one active cell.
bool survives_downsampling(const std::vector<std::uint8_t>& mask) {
    for (int res : {16, 8, 4}) {
        const int block = kImageSize / res;
        bool any = false;
        for (int by = 0; by < res && !any; ++by)
            for (int bx = 0; bx < res && !any; ++bx) {
                int count = 0;
                for (int y = 0; y < block; ++y)
                    for (int x = 0; x < block; ++x) count += mask[(by * block + y) * kImageSize + bx * block + x];
                any = 2 * count > block * block;
            }
        if (!any) return false;
    }
    return true;
}

}  // namespace

const std::vector<ConceptSpec>& concept_registry() {
    static const std::vector<ConceptSpec> registry = [] {
        const char* shapes[] = {"circle", "square", "triangle", "star"};
        const std::pair<const char*, Rgb> palettes[] = {
            {"red", {0.85, 0.15, 0.15}},
            {"blue", {0.15, 0.30, 0.85}},
            {"green", {0.15, 0.70, 0.25}},
            {"orange", {0.95, 0.55, 0.10}},
            {"purple", {0.60, 0.20, 0.75}},
        };
        std::vector<ConceptSpec> out;
        for (int s = 0; s < 4; ++s)
            for (int p = 0; p < 5; ++p)
                out.push_back({s * 5 + p, shapes[s], palettes[p].first, palettes[p].second});
        return out;
    }();
    return registry;
}

const std::vector<std::string>& emotions() {
    static const std::vector<std::string> v{"happy", "sad", "neutral", "angry"};
    return v;
}
const std::vector<std::string>& actions() {
    static const std::vector<std::string> v{"standing", "waving", "sitting", "none"};
    return v;
}
const std::vector<std::string>& compositions() {
    static const std::vector<std::string> v{"close-up", "full-body", "centered"};
    return v;
}
const std::vector<std::string>& styles() {
    static const std::vector<std::string> v{"flat vector"};
    return v;
}
const std::vector<std::string>& backgrounds() {
    static const std::vector<std::string> v{"plain", "stripes", "dots", "gradient", "none"};
    return v;
}

namespace {

SceneSample render_scene(std::uint64_t seed, int concept_id, Image* background_out) {
    const auto& registry = concept_registry();
    if (concept_id < 0 || concept_id >= static_cast<int>(registry.size())) {
        fail(ErrorKind::validation, "unknown concept_id " + std::to_string(concept_id));
    }
    const ConceptSpec& spec = registry[concept_id];
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(concept_id)));

    const std::string& emotion = emotions()[rng.uniform_int(static_cast<int>(emotions().size()))];
    const std::string& action = actions()[rng.uniform_int(static_cast<int>(actions().size()))];
    const std::string& composition = compositions()[rng.uniform_int(static_cast<int>(compositions().size()))];
    const std::string& background = backgrounds()[rng.uniform_int(static_cast<int>(backgrounds().size()))];
    const Rgb tone = kBackgroundTones[rng.uniform_int(4)];
    const double phase = rng.uniform(0.0, 6.0);

    Glyph glyph;
    glyph.shape = concept_id / 5;
    glyph.emotion = emotion;
    glyph.arm = action == "waving";
    glyph.squash = action == "sitting" ? 0.8 : 1.0;

    std::vector<std::uint8_t> support(kImageSize * kImageSize);
    auto render_support = [&] {
        for (int y = 0; y < kImageSize; ++y)
            for (int x = 0; x < kImageSize; ++x)
                support[y * kImageSize + x] = inside_body(glyph, x + 0.5, y + 0.5) ? 1 : 0;
    };

    bool placed = false;
    for (int attempt = 0; attempt < 64 && !placed; ++attempt) {
        double spread;
        if (composition == "close-up") {
            glyph.r = rng.uniform(10.5, 12.5);
            spread = 2.0;
        } else if (composition == "centered") {
            glyph.r = rng.uniform(8.0, 9.5);
            spread = 0.5;
        } else {
            glyph.r = rng.uniform(7.0, 8.0);
            spread = 5.0;
        }
        glyph.cx = 16.0 + rng.uniform(-spread, spread);
        glyph.cy = 16.0 + rng.uniform(-spread, spread);
        if (action == "sitting") glyph.cy += 0.2 * glyph.r;
        render_support();
        placed = survives_downsampling(support);
    }
    if (!placed) {
        glyph.r = 10.0;
        glyph.cx = glyph.cy = 16.0;
        render_support();
    }

    Image image(kImageSize, kImageSize, 3);
    if (background_out) *background_out = Image(kImageSize, kImageSize, 3);
    for (int y = 0; y < kImageSize; ++y)
        for (int x = 0; x < kImageSize; ++x) {
            Rgb c = background_at(background, tone, phase, x, y);
            if (background_out)
                for (int ch = 0; ch < 3; ++ch) background_out->at(y, x, ch) = c[ch];
            if (support[y * kImageSize + x]) {
                c = on_decal(glyph, x + 0.5, y + 0.5) ? kInk : spec.color;
            }
            for (int ch = 0; ch < 3; ++ch) image.at(y, x, ch) = c[ch];
        }

    return SceneSample{
        std::move(image),
        ObjectMask(kImageSize, kImageSize, std::move(support)),
        TagRecord(spec.name(), emotion, action, composition, styles()[0], background),
        concept_id,
        seed,
    };
}

}  // namespace

SceneSample generate_scene(std::uint64_t seed, int concept_id) { return render_scene(seed, concept_id, nullptr); }

Image background_layer(std::uint64_t seed, int concept_id) {
    Image background;
    render_scene(seed, concept_id, &background);
    return background;
}

std::vector<SceneSample> generate_corpus(std::uint64_t base_seed, int n) {
    if (n < 1) fail(ErrorKind::usage, "corpus size must be ≥ 1");
    const int concepts = static_cast<int>(concept_registry().size());
    std::vector<SceneSample> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i) {
        out.push_back(generate_scene(derive_seed(base_seed, static_cast<std::uint64_t>(i)), i % concepts));
    }
    return out;
}

Image mask_image(const ObjectMask& mask) {
    Image img(mask.height(), mask.width(), 1);
    for (std::size_t i = 0; i < mask.size(); ++i) img.data[i] = mask.grid()[i];
    return img;
}

namespace {

std::string indexed(const fs::path& dir, const char* sub, std::size_t i) {
    char name[32];
    std::snprintf(name, sizeof(name), "%05zu.png", i);
    return (dir / sub / name).string();
}

}  // namespace

void export_corpus(const std::vector<SceneSample>& corpus, const std::string& dir) {
    const fs::path root(dir);
    std::error_code ec;
    fs::create_directories(root / "images", ec);
    fs::create_directories(root / "masks", ec);
    if (ec) fail(ErrorKind::io, "cannot create corpus directory " + dir + ": " + ec.message());

    std::ofstream tags(root / "tags.txt", std::ios::binary);
    if (!tags) fail(ErrorKind::io, "cannot write " + (root / "tags.txt").string());
    tags << "# appearance, emotion, action, camera_composition, style, background\n";
    nlohmann::json meta{{"format_version", 1}, {"count", corpus.size()}};
    auto samples = nlohmann::json::array();
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const auto& s = corpus[i];
        write_png(indexed(root, "images", i), s.image);
        write_png(indexed(root, "masks", i), mask_image(s.mask));
        tags << tagkit::serialize_tag(s.tags) << "\n";
        samples.push_back({{"concept_id", s.concept_id}, {"seed", s.seed}});
    }
    meta["samples"] = std::move(samples);
    std::ofstream(root / "corpus.json", std::ios::binary) << meta.dump(2) << "\n";
}

std::vector<SceneSample> load_corpus(const std::string& dir) {
    const fs::path root(dir);
    std::ifstream meta_in(root / "corpus.json");
    if (!meta_in) fail(ErrorKind::io, "missing corpus manifest " + (root / "corpus.json").string());
    nlohmann::json meta;
    try {
        meta_in >> meta;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::validation, std::string("malformed corpus.json: ") + e.what());
    }
    const auto records = tagkit::read_manifest((root / "tags.txt").string());
    const auto& samples = meta.at("samples");
    if (records.size() != samples.size()) fail(ErrorKind::validation, "tags.txt and corpus.json disagree on count");

    std::vector<SceneSample> out;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        Image img = read_png(indexed(root, "images", i), 3);
        Image m = read_png(indexed(root, "masks", i), 1);
        std::vector<std::uint8_t> grid(m.data.size());
        for (std::size_t k = 0; k < grid.size(); ++k) grid[k] = m.data[k] >= 0.5 ? 1 : 0;
        out.push_back(SceneSample{std::move(img), ObjectMask(m.height, m.width, std::move(grid)), records[i],
                                  samples[i].at("concept_id").get<int>(),
                                  samples[i].at("seed").get<std::uint64_t>()});
    }
    return out;
}

}  // namespace seal::synth

#include "fka/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "fka/errors.hpp"
#include "fka/rng.hpp"
#include "fka/vocab.hpp"

namespace fka {

namespace {

constexpr std::array<Rgb, 6> kBaseColors = {{
    {0.90f, 0.15f, 0.15f},  // red
    {0.15f, 0.80f, 0.20f},  // green
    {0.15f, 0.30f, 0.90f},  // blue
    {0.95f, 0.55f, 0.10f},  // orange
    {0.95f, 0.90f, 0.15f},  // yellow
    {0.60f, 0.20f, 0.80f},  // purple
}};

// Color antonyms for text flips: red-green, blue-orange, yellow-purple.
constexpr std::array<int, 6> kColorOpposite = {1, 0, 3, 2, 5, 4};

Rgb mix(Rgb a, Rgb b, float t) { return {a.r + (b.r - a.r) * t, a.g + (b.g - a.g) * t, a.b + (b.b - a.b) * t}; }
Rgb scale(Rgb a, float s) { return {a.r * s, a.g * s, a.b * s}; }

std::array<Rgb, 6> palette_from(auto&& fn) {
    std::array<Rgb, 6> p;
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = fn(i);
    return p;
}

std::vector<DomainStyle> make_styles() {
    std::vector<DomainStyle> styles(4);

    auto& a = styles[0];
    a.name = "alpha";
    a.background = {0.15f, 0.17f, 0.22f};
    a.background_gradient = {0.04f, 0.04f, 0.08f};
    a.palette = kBaseColors;
    a.shape_weights = {1, 1, 1, 1};
    a.prefix = {"photo", "shows"};
    a.layout_power = 1.0;

    auto& b = styles[1];
    b.name = "beta";
    b.background = {0.86f, 0.82f, 0.72f};
    b.background_gradient = {-0.06f, -0.06f, -0.02f};
    b.palette = palette_from([](std::size_t i) { return mix(kBaseColors[i], {1, 1, 1}, 0.3f); });
    b.shape_weights = {2, 1, 1, 2};
    b.prefix = {"picture", "depicts"};
    b.suffix = {"today"};
    b.layout_power = 0.7;

    auto& g = styles[2];
    g.name = "gamma";
    g.background = {0.38f, 0.46f, 0.36f};
    g.background_gradient = {0.08f, 0.02f, 0.0f};
    g.palette = palette_from([](std::size_t i) { return mix(scale(kBaseColors[i], 0.8f), {0.2f, 0.15f, 0.0f}, 0.15f); });
    g.shape_weights = {1, 2, 2, 1};
    g.prefix = {"scene", "with"};
    g.suffix = {"here"};
    g.background_noise = 0.03f;
    g.layout_power = 1.4;

    auto& d = styles[3];
    d.name = "delta";
    d.background = {0.30f, 0.20f, 0.34f};
    d.background_gradient = {0.0f, 0.05f, 0.05f};
    d.palette = palette_from([](std::size_t i) { return mix(kBaseColors[i], kBaseColors[(i + 3) % 6], 0.15f); });
    d.shape_weights = {1, 1, 2, 2};
    d.prefix = {"report", "featuring"};
    d.layout_power = 1.0;
    d.big_min = 11;
    d.big_max = 13;

    return styles;
}

struct Shape {
    int kind = 0;
    int color = 0;
    bool big = false;
    int x0 = 0, y0 = 0, s = 0;

    double cx() const { return x0 + s / 2.0; }
    double cy() const { return y0 + s / 2.0; }

    bool covers(int px, int py) const {
        const double x = px + 0.5, y = py + 0.5;
        if (x < x0 || x >= x0 + s || y < y0 || y >= y0 + s) return false;
        const double dx = x - cx(), dy = y - cy(), r = s / 2.0;
        switch (kind) {
        case 0: return dx * dx + dy * dy <= r * r;
        case 1: return true;
        case 2: return std::abs(dx) <= (y - y0) / s * r;
        default: return std::abs(dx) + std::abs(dy) <= r;
        }
    }
};

enum class Relation { above, below, left, right };

Relation opposite(Relation r) {
    switch (r) {
    case Relation::above: return Relation::below;
    case Relation::below: return Relation::above;
    case Relation::left: return Relation::right;
    default: return Relation::left;
    }
}

// Relation of a to b by the dominant axis of the center offset.
Relation relation_of(const Shape& a, const Shape& b) {
    const double dx = b.cx() - a.cx(), dy = b.cy() - a.cy();
    if (std::abs(dy) >= std::abs(dx)) return dy > 0 ? Relation::above : Relation::below;
    return dx > 0 ? Relation::left : Relation::right;
}

bool clear_relation(const Shape& a, const Shape& b) {
    const double dx = std::abs(b.cx() - a.cx()), dy = std::abs(b.cy() - a.cy());
    return std::max(dx, dy) - std::min(dx, dy) >= 3.0;
}

struct Description {
    bool big;
    int color;
    int kind;
    bool matches(const Shape& s) const { return s.big == big && s.color == color && s.kind == kind; }
};

struct Claim {
    Description a, b;
    Relation rel;
};

bool claim_holds(const std::vector<Shape>& scene, const Claim& c) {
    for (std::size_t i = 0; i < scene.size(); ++i) {
        for (std::size_t j = 0; j < scene.size(); ++j) {
            if (i != j && c.a.matches(scene[i]) && c.b.matches(scene[j]) && relation_of(scene[i], scene[j]) == c.rel) {
                return true;
            }
        }
    }
    return false;
}

int weighted_pick(Rng& rng, const std::array<double, 4>& w) {
    double total = 0;
    for (double x : w) total += x;
    double u = rng.uniform() * total;
    for (std::size_t i = 0; i < w.size(); ++i) {
        if (u < w[i]) return static_cast<int>(i);
        u -= w[i];
    }
    return static_cast<int>(w.size()) - 1;
}

std::vector<Shape> place_shapes(Rng& rng, const DomainStyle& style) {
    const int target = rng.range(2, 4);
    std::vector<int> colors = {0, 1, 2, 3, 4, 5};
    for (int i = 5; i > 0; --i) std::swap(colors[i], colors[rng.below(i + 1)]);

    std::vector<Shape> shapes;
    for (int n = 0; n < target; ++n) {
        Shape sh;
        sh.kind = weighted_pick(rng, style.shape_weights);
        sh.color = colors[n];
        sh.big = rng.bernoulli(0.5);
        sh.s = sh.big ? rng.range(style.big_min, style.big_max) : rng.range(style.small_min, style.small_max);
        bool placed = false;
        for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
            sh.x0 = rng.range(1, kSynthImageSize - 1 - sh.s);
            const double v = std::pow(rng.uniform(), style.layout_power);
            sh.y0 = 1 + static_cast<int>(v * (kSynthImageSize - 1 - sh.s));
            placed = std::all_of(shapes.begin(), shapes.end(), [&](const Shape& o) {
                const int gap = 2;
                return sh.x0 + sh.s + gap <= o.x0 || o.x0 + o.s + gap <= sh.x0 || sh.y0 + sh.s + gap <= o.y0 ||
                       o.y0 + o.s + gap <= sh.y0;
            });
        }
        if (placed) shapes.push_back(sh);
    }
    return shapes;
}

float quantize(float v) { return static_cast<float>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)) / 255.0f; }

void render(std::vector<float>& img, Rng& rng, const DomainStyle& style, const std::vector<Shape>& shapes) {
    const int n = kSynthImageSize;
    img.assign(static_cast<std::size_t>(n) * n * 3, 0.0f);
    for (int y = 0; y < n; ++y) {
        const float t = static_cast<float>(y) / n - 0.5f;
        for (int x = 0; x < n; ++x) {
            Rgb c = {style.background.r + style.background_gradient.r * t,
                     style.background.g + style.background_gradient.g * t,
                     style.background.b + style.background_gradient.b * t};
            for (const auto& sh : shapes) {
                if (sh.covers(x, y)) c = style.palette[sh.color];
            }
            float* px = &img[(static_cast<std::size_t>(y) * n + x) * 3];
            px[0] = c.r + style.background_noise * static_cast<float>(rng.normal());
            px[1] = c.g + style.background_noise * static_cast<float>(rng.normal());
            px[2] = c.b + style.background_noise * static_cast<float>(rng.normal());
        }
    }
}

// Replaces the box around one shape with a noisy patch of an unrelated color.
void swap_region(std::vector<float>& img, std::vector<std::uint8_t>& mask, Rng& rng, const Shape& sh) {
    const int n = kSynthImageSize;
    const int x0 = std::max(0, sh.x0 - 1), y0 = std::max(0, sh.y0 - 1);
    const int x1 = std::min(n, sh.x0 + sh.s + 1), y1 = std::min(n, sh.y0 + sh.s + 1);
    const Rgb base = {static_cast<float>(rng.uniform()), static_cast<float>(rng.uniform()),
                      static_cast<float>(rng.uniform())};
    const float stripe = static_cast<float>(rng.uniform(0.05, 0.12));
    for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
            const float s = ((x + y) % 2 == 0) ? stripe : -stripe;
            float* px = &img[(static_cast<std::size_t>(y) * n + x) * 3];
            px[0] = base.r + s + 0.1f * static_cast<float>(rng.normal());
            px[1] = base.g + s + 0.1f * static_cast<float>(rng.normal());
            px[2] = base.b + s + 0.1f * static_cast<float>(rng.normal());
            mask[static_cast<std::size_t>(y) * n + x] = 1;
        }
    }
}

void append_description(std::vector<std::string>& words, const Description& d) {
    words.push_back(d.big ? "big" : "small");
    words.push_back(kColorWords[d.color]);
    words.push_back(kShapeWords[d.kind]);
}

void append_relation(std::vector<std::string>& words, Relation r) {
    switch (r) {
    case Relation::above: words.push_back("above"); break;
    case Relation::below: words.push_back("below"); break;
    case Relation::left: words.insert(words.end(), {"left", "of"}); break;
    case Relation::right: words.insert(words.end(), {"right", "of"}); break;
    }
}

std::vector<std::string> caption_words(const DomainStyle& style, const Claim& c) {
    std::vector<std::string> words = style.prefix;
    append_description(words, c.a);
    append_relation(words, c.rel);
    append_description(words, c.b);
    words.insert(words.end(), style.suffix.begin(), style.suffix.end());
    return words;
}

// Token positions of the flippable slots, in caption coordinates.
struct SlotPositions {
    int size_a, color_a, rel, size_b, color_b;
};

SlotPositions slot_positions(const DomainStyle& style, const Claim& c) {
    const int p = static_cast<int>(style.prefix.size());
    const int rel_len = (c.rel == Relation::left || c.rel == Relation::right) ? 2 : 1;
    return {p, p + 1, p + 3, p + 3 + rel_len, p + 4 + rel_len};
}

} // namespace

std::string kind_name(ManipulationKind kind) {
    switch (kind) {
    case ManipulationKind::none: return "none";
    case ManipulationKind::image_swap: return "image_swap";
    case ManipulationKind::text_flip: return "text_flip";
    case ManipulationKind::both: return "both";
    }
    return "none";
}

ManipulationKind parse_kind(const std::string& name) {
    for (auto k : {ManipulationKind::none, ManipulationKind::image_swap, ManipulationKind::text_flip,
                   ManipulationKind::both}) {
        if (kind_name(k) == name) return k;
    }
    throw InputError("unknown manipulation kind '" + name + "'");
}

const std::vector<DomainStyle>& builtin_styles() {
    static const std::vector<DomainStyle> styles = make_styles();
    return styles;
}

const DomainStyle& builtin_style(const std::string& name) {
    for (const auto& s : builtin_styles()) {
        if (s.name == name) return s;
    }
    throw ConfigError("unknown style '" + name + "' (expected alpha, beta, gamma or delta)");
}

std::pair<ImageTextPair, ForgeryAnnotation> generate_pair(std::uint64_t seed, const DomainStyle& style,
                                                          std::optional<ManipulationKind> force_kind) {
    Rng rng(hash_combine(seed, hash_string(style.name)));
    ManipulationKind kind = ManipulationKind::none;
    if (force_kind) {
        kind = *force_kind;
    } else if (rng.bernoulli(0.5)) {
        kind = static_cast<ManipulationKind>(1 + rng.below(3));
    }

    std::vector<Shape> shapes;
    std::size_t ia = 0, ib = 0;
    for (bool found = false; !found;) {
        shapes = place_shapes(rng, style);
        for (int attempt = 0; attempt < 12 && shapes.size() >= 2 && !found; ++attempt) {
            ia = rng.below(shapes.size());
            ib = rng.below(shapes.size() - 1);
            if (ib >= ia) ++ib;
            found = clear_relation(shapes[ia], shapes[ib]);
        }
    }
    const auto& sa = shapes[ia];
    const auto& sb = shapes[ib];
    Claim claim{{sa.big, sa.color, sa.kind}, {sb.big, sb.color, sb.kind}, relation_of(sa, sb)};

    ImageTextPair pair;
    ForgeryAnnotation ann;
    pair.kind = kind;
    pair.label = kind == ManipulationKind::none ? 0 : 1;
    pair.domain = style.name;
    ann.mask.assign(static_cast<std::size_t>(kSynthImageSize) * kSynthImageSize, 0);

    render(pair.image, rng, style, shapes);
    if (touches_image(kind)) {
        swap_region(pair.image, ann.mask, rng, shapes[rng.below(shapes.size())]);
        ann.bbox = tight_bbox(ann.mask, kSynthImageSize, kSynthImageSize);
    }
    for (auto& v : pair.image) v = quantize(v);

    if (touches_text(kind)) {
        const auto pos = slot_positions(style, claim);
        std::array<int, 5> order = {0, 1, 2, 3, 4};
        for (int i = 4; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
        int flipped = -1;
        Claim edited = claim;
        for (int slot : order) {
            Claim c = claim;
            int at = 0;
            switch (slot) {
            case 0: c.a.big = !c.a.big; at = pos.size_a; break;
            case 1: c.a.color = kColorOpposite[c.a.color]; at = pos.color_a; break;
            case 2: c.rel = opposite(c.rel); at = pos.rel; break;
            case 3: c.b.big = !c.b.big; at = pos.size_b; break;
            default: c.b.color = kColorOpposite[c.b.color]; at = pos.color_b; break;
            }
            if (!claim_holds(shapes, c)) {
                edited = c;
                flipped = at;
                break;
            }
        }
        if (flipped < 0) {
            edited.rel = opposite(claim.rel);
            flipped = pos.rel;
        }
        claim = edited;
        ann.flipped_tokens = {flipped};
    }

    const auto words = caption_words(style, claim);
    const auto& vocab = Vocabulary::standard();
    for (const auto& w : words) {
        pair.caption.push_back(vocab.id(w));
        if (!pair.caption_text.empty()) pair.caption_text += ' ';
        pair.caption_text += w;
    }
    return {std::move(pair), std::move(ann)};
}

std::optional<BBox> tight_bbox(const std::vector<std::uint8_t>& mask, int width, int height) {
    int x0 = width, y0 = height, x1 = -1, y1 = -1;
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            if (mask[static_cast<std::size_t>(y) * width + x]) {
                x0 = std::min(x0, x);
                y0 = std::min(y0, y);
                x1 = std::max(x1, x);
                y1 = std::max(y1, y);
            }
        }
    }
    if (x1 < 0) return std::nullopt;
    return BBox{static_cast<double>(x0) / width, static_cast<double>(y0) / height, static_cast<double>(x1 + 1) / width,
                static_cast<double>(y1 + 1) / height};
}

std::vector<std::uint8_t> downsample_mask(const std::vector<std::uint8_t>& mask, int size, int out_size) {
    if (out_size <= 0 || size % out_size != 0) {
        throw DimensionError("cannot pool mask of " + std::to_string(size) + " to " + std::to_string(out_size));
    }
    const int f = size / out_size;
    std::vector<std::uint8_t> out(static_cast<std::size_t>(out_size) * out_size, 0);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            if (mask[static_cast<std::size_t>(y) * size + x]) out[static_cast<std::size_t>(y / f) * out_size + x / f] = 1;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// perturbations

namespace {

constexpr std::array<int, 64> kJpegLuma = {
    16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,  14, 13, 16, 24, 40,  57,
    69, 56, 14, 17, 22,  29,  51,  87,  80, 62, 18, 22, 37,  56,  68,  109, 103, 77, 24, 35, 55, 64,
    81, 104, 113, 92, 49, 64, 78,  87,  103, 121, 120, 101, 72, 92, 95,  98,  112, 100, 103, 99,
};

} // namespace

std::vector<float> jpeg_like(const std::vector<float>& image, int width, int height, int quality) {
    quality = std::clamp(quality, 1, 100);
    const int qscale = quality < 50 ? 5000 / quality : 200 - 2 * quality;
    std::array<double, 64> step;
    for (int i = 0; i < 64; ++i) step[i] = std::max(1, (kJpegLuma[i] * qscale + 50) / 100);

    std::array<double, 64> basis;  // basis[u*8+x] = c(u) cos((2x+1)uπ/16)
    for (int u = 0; u < 8; ++u) {
        const double cu = u == 0 ? std::sqrt(1.0 / 8) : std::sqrt(2.0 / 8);
        for (int x = 0; x < 8; ++x) basis[u * 8 + x] = cu * std::cos((2 * x + 1) * u * std::numbers::pi / 16);
    }

    std::vector<float> out = image;
    for (int by = 0; by < height; by += 8) {
        for (int bx = 0; bx < width; bx += 8) {
            for (int ch = 0; ch < 3; ++ch) {
                std::array<double, 64> block, coef;
                for (int y = 0; y < 8; ++y) {
                    for (int x = 0; x < 8; ++x) {
                        const int sy = std::min(by + y, height - 1), sx = std::min(bx + x, width - 1);
                        block[y * 8 + x] = image[(static_cast<std::size_t>(sy) * width + sx) * 3 + ch] * 255.0 - 128.0;
                    }
                }
                for (int v = 0; v < 8; ++v) {
                    for (int u = 0; u < 8; ++u) {
                        double acc = 0;
                        for (int y = 0; y < 8; ++y) {
                            for (int x = 0; x < 8; ++x) acc += basis[v * 8 + y] * basis[u * 8 + x] * block[y * 8 + x];
                        }
                        coef[v * 8 + u] = std::round(acc / step[v * 8 + u]) * step[v * 8 + u];
                    }
                }
                for (int y = 0; y < 8 && by + y < height; ++y) {
                    for (int x = 0; x < 8 && bx + x < width; ++x) {
                        double acc = 0;
                        for (int v = 0; v < 8; ++v) {
                            for (int u = 0; u < 8; ++u) acc += basis[v * 8 + y] * basis[u * 8 + x] * coef[v * 8 + u];
                        }
                        const double val = std::clamp((acc + 128.0) / 255.0, 0.0, 1.0);
                        out[(static_cast<std::size_t>(by + y) * width + bx + x) * 3 + ch] = static_cast<float>(val);
                    }
                }
            }
        }
    }
    return out;
}

std::vector<float> gaussian_blur(const std::vector<float>& image, int width, int height, double sigma) {
    const int radius = std::max(1, static_cast<int>(std::ceil(3 * sigma)));
    std::vector<double> kernel(2 * radius + 1);
    double total = 0;
    for (int i = -radius; i <= radius; ++i) {
        kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
        total += kernel[i + radius];
    }
    for (auto& k : kernel) k /= total;

    auto at = [&](const std::vector<float>& img, int x, int y, int c) {
        x = std::clamp(x, 0, width - 1);
        y = std::clamp(y, 0, height - 1);
        return static_cast<double>(img[(static_cast<std::size_t>(y) * width + x) * 3 + c]);
    };
    std::vector<float> tmp(image.size()), out(image.size());
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            for (int c = 0; c < 3; ++c) {
                double acc = 0;
                for (int i = -radius; i <= radius; ++i) acc += kernel[i + radius] * at(image, x + i, y, c);
                tmp[(static_cast<std::size_t>(y) * width + x) * 3 + c] = static_cast<float>(acc);
            }
        }
    }
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            for (int c = 0; c < 3; ++c) {
                double acc = 0;
                for (int i = -radius; i <= radius; ++i) acc += kernel[i + radius] * at(tmp, x, y + i, c);
                out[(static_cast<std::size_t>(y) * width + x) * 3 + c] = static_cast<float>(std::clamp(acc, 0.0, 1.0));
            }
        }
    }
    return out;
}

std::vector<float> perturb(const std::vector<float>& image, int width, int height, std::uint64_t seed,
                           const PerturbConfig& config) {
    Rng rng(hash_combine(seed, hash_string("perturb")));
    std::vector<float> out = image;
    const bool do_jpeg = rng.bernoulli(config.jpeg_prob);
    const bool do_blur = rng.bernoulli(config.blur_prob);
    const int quality = rng.range(config.quality_min, config.quality_max);
    const double sigma = rng.uniform(config.sigma_min, config.sigma_max);
    if (do_jpeg) out = jpeg_like(out, width, height, quality);
    if (do_blur) out = gaussian_blur(out, width, height, sigma);
    for (auto& v : out) v = std::clamp(v, 0.0f, 1.0f);
    return out;
}

// ---------------------------------------------------------------------------
// netpbm

namespace {

void write_netpbm(const std::filesystem::path& path, const char* magic, int width, int height,
                  const std::vector<std::uint8_t>& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + path.string());
    f << magic << '\n' << width << ' ' << height << "\n255\n";
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("short write to " + path.string());
}

std::vector<std::uint8_t> read_netpbm(const std::filesystem::path& path, const std::string& magic, int channels,
                                      int& width, int& height) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read " + path.string());
    std::string m;
    int maxval = 0;
    f >> m >> width >> height >> maxval;
    if (!f || m != magic || maxval != 255 || width <= 0 || height <= 0) {
        throw IoError("malformed " + magic + " header in " + path.string());
    }
    f.get();
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(width) * height * channels);
    f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("truncated pixel data in " + path.string());
    return bytes;
}

} // namespace

void write_ppm(const std::filesystem::path& path, const std::vector<float>& rgb, int width, int height) {
    std::vector<std::uint8_t> bytes(rgb.size());
    for (std::size_t i = 0; i < rgb.size(); ++i) {
        bytes[i] = static_cast<std::uint8_t>(std::lround(std::clamp(rgb[i], 0.0f, 1.0f) * 255.0f));
    }
    write_netpbm(path, "P6", width, height, bytes);
}

std::vector<float> read_ppm(const std::filesystem::path& path, int& width, int& height) {
    const auto bytes = read_netpbm(path, "P6", 3, width, height);
    std::vector<float> out(bytes.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) out[i] = static_cast<float>(bytes[i]) / 255.0f;
    return out;
}

void write_pgm(const std::filesystem::path& path, const std::vector<std::uint8_t>& gray, int width, int height) {
    write_netpbm(path, "P5", width, height, gray);
}

std::vector<std::uint8_t> read_pgm(const std::filesystem::path& path, int& width, int& height) {
    return read_netpbm(path, "P5", 1, width, height);
}

// ---------------------------------------------------------------------------
// datasets

std::vector<Sample> generate_split(const DomainStyle& style, const std::string& split, int n_real, int n_fake,
                                   std::uint64_t seed) {
    if (n_real < 0 || n_fake < 0) throw ConfigError("negative sample count for split " + split);
    const std::uint64_t split_seed = hash_combine(seed, hash_string(split));
    std::vector<ManipulationKind> kinds(n_real, ManipulationKind::none);
    for (int i = 0; i < n_fake; ++i) kinds.push_back(static_cast<ManipulationKind>(1 + i % 3));
    Rng order(hash_combine(split_seed, hash_string("order")));
    for (std::size_t i = kinds.size(); i > 1; --i) std::swap(kinds[i - 1], kinds[order.below(i)]);

    std::vector<Sample> out;
    out.reserve(kinds.size());
    for (std::size_t i = 0; i < kinds.size(); ++i) {
        char id[64];
        std::snprintf(id, sizeof id, "%s-%s-%06zu", style.name.c_str(), split.c_str(), i);
        auto [pair, ann] = generate_pair(hash_combine(split_seed, i), style, kinds[i]);
        out.push_back({id, std::move(pair), std::move(ann)});
    }
    return out;
}

namespace {

void write_split(const std::filesystem::path& dir, const std::vector<Sample>& samples) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir / "images", ec);
    fs::create_directories(dir / "masks", ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

    std::ofstream manifest(dir / "manifest.jsonl", std::ios::binary | std::ios::trunc);
    if (!manifest) throw IoError("cannot write " + (dir / "manifest.jsonl").string());
    for (const auto& s : samples) {
        const int n = s.pair.size;
        const std::string image = "images/" + s.id + ".ppm";
        write_ppm(dir / image, s.pair.image, n, n);

        nlohmann::ordered_json j;
        j["id"] = s.id;
        j["image"] = image;
        if (touches_image(s.pair.kind)) {
            const std::string mask = "masks/" + s.id + ".pgm";
            std::vector<std::uint8_t> gray(s.annotation.mask.size());
            for (std::size_t i = 0; i < gray.size(); ++i) gray[i] = s.annotation.mask[i] ? 255 : 0;
            write_pgm(dir / mask, gray, n, n);
            j["mask"] = mask;
        } else {
            j["mask"] = nullptr;
        }
        j["caption"] = s.pair.caption;
        j["caption_text"] = s.pair.caption_text;
        j["label"] = s.pair.label;
        j["kind"] = kind_name(s.pair.kind);
        if (s.annotation.bbox) {
            const auto& b = *s.annotation.bbox;
            j["bbox"] = {b.x1, b.y1, b.x2, b.y2};
        } else {
            j["bbox"] = nullptr;
        }
        j["flipped_tokens"] = s.annotation.flipped_tokens;
        j["domain"] = s.pair.domain;
        manifest << j.dump() << '\n';
    }
    if (!manifest) throw IoError("short write to " + (dir / "manifest.jsonl").string());
}

} // namespace

void build_dataset(const DomainStyle& style, const SplitCounts& counts, std::uint64_t seed,
                   const std::filesystem::path& out_dir) {
    write_split(out_dir / "train", generate_split(style, "train", counts.train_real, counts.train_fake, seed));
    write_split(out_dir / "test", generate_split(style, "test", counts.test_real, counts.test_fake, seed));
}

std::filesystem::path resolve_split_dir(const std::filesystem::path& dir, const std::string& default_split) {
    if (std::filesystem::exists(dir / "manifest.jsonl")) return dir;
    if (std::filesystem::exists(dir / default_split / "manifest.jsonl")) return dir / default_split;
    throw IoError("no manifest.jsonl in " + dir.string() + " or " + (dir / default_split).string());
}

std::vector<Sample> load_split(const std::filesystem::path& dir_in) {
    const auto dir = resolve_split_dir(dir_in, "test");
    std::ifstream f(dir / "manifest.jsonl");
    if (!f) throw IoError("cannot read " + (dir / "manifest.jsonl").string());
    std::vector<Sample> out;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            Sample s;
            s.id = j.at("id").get<std::string>();
            int w = 0, h = 0;
            s.pair.image = read_ppm(dir / j.at("image").get<std::string>(), w, h);
            if (w != h) throw IoError("non-square image for " + s.id);
            s.pair.size = w;
            s.pair.caption = j.at("caption").get<std::vector<int>>();
            s.pair.caption_text = j.at("caption_text").get<std::string>();
            s.pair.label = j.at("label").get<int>();
            s.pair.kind = parse_kind(j.at("kind").get<std::string>());
            s.pair.domain = j.at("domain").get<std::string>();
            s.annotation.mask.assign(static_cast<std::size_t>(w) * h, 0);
            if (!j.at("mask").is_null()) {
                int mw = 0, mh = 0;
                const auto gray = read_pgm(dir / j.at("mask").get<std::string>(), mw, mh);
                if (mw != w || mh != h) throw IoError("mask size differs from image for " + s.id);
                for (std::size_t i = 0; i < gray.size(); ++i) s.annotation.mask[i] = gray[i] >= 128 ? 1 : 0;
            }
            if (!j.at("bbox").is_null()) {
                const auto b = j.at("bbox").get<std::vector<double>>();
                if (b.size() != 4) throw InputError("bbox needs 4 values");
                s.annotation.bbox = BBox{b[0], b[1], b[2], b[3]};
            }
            s.annotation.flipped_tokens = j.at("flipped_tokens").get<std::vector<int>>();
            out.push_back(std::move(s));
        } catch (const nlohmann::json::exception& e) {
            throw IoError((dir / "manifest.jsonl").string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

} // namespace fka

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "fka/errors.hpp"
#include "fka/synth.hpp"
#include "fka/vocab.hpp"

using namespace fka;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("fka_synth_" + name);
    fs::remove_all(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

// Brute-force tight box: scan rows and columns independently.
BBox oracle_box(const std::vector<std::uint8_t>& mask, int n) {
    std::vector<int> rows, cols;
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x)
            if (mask[y * n + x]) {
                rows.push_back(y);
                cols.push_back(x);
            }
    return {*std::min_element(cols.begin(), cols.end()) / double(n), *std::min_element(rows.begin(), rows.end()) / double(n),
            (*std::max_element(cols.begin(), cols.end()) + 1) / double(n),
            (*std::max_element(rows.begin(), rows.end()) + 1) / double(n)};
}

} // namespace

TEST(Synth, SameSeedSamePair) {
    const auto& style = builtin_style("gamma");
    auto [a, ann_a] = generate_pair(1234, style);
    auto [b, ann_b] = generate_pair(1234, style);
    EXPECT_EQ(a.image, b.image);
    EXPECT_EQ(a.caption, b.caption);
    EXPECT_EQ(a.kind, b.kind);
    EXPECT_EQ(ann_a.mask, ann_b.mask);
    EXPECT_EQ(ann_a.flipped_tokens, ann_b.flipped_tokens);
}

TEST(Synth, ForcedRealIsClean) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto [pair, ann] = generate_pair(seed, builtin_style("alpha"), ManipulationKind::none);
        EXPECT_EQ(pair.label, 0);
        EXPECT_TRUE(std::all_of(ann.mask.begin(), ann.mask.end(), [](auto v) { return v == 0; }));
        EXPECT_TRUE(ann.flipped_tokens.empty());
        EXPECT_FALSE(ann.bbox.has_value());
    }
}

TEST(Synth, ImageSwapBoxIsTightBoxOfMask) {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        auto [pair, ann] = generate_pair(seed, builtin_style("delta"), ManipulationKind::image_swap);
        ASSERT_TRUE(ann.bbox.has_value());
        EXPECT_EQ(*ann.bbox, oracle_box(ann.mask, pair.size));
        EXPECT_TRUE(ann.flipped_tokens.empty());
    }
}

TEST(Synth, LabelAnnotationConsistency) {
    int counts[4] = {};
    for (std::uint64_t seed = 0; seed < 400; ++seed) {
        const auto& style = builtin_styles()[seed % 4];
        auto [pair, ann] = generate_pair(seed, style);
        const bool mask_nonzero = std::any_of(ann.mask.begin(), ann.mask.end(), [](auto v) { return v != 0; });
        const bool flipped = !ann.flipped_tokens.empty();
        EXPECT_EQ(pair.label == 1, mask_nonzero || flipped);
        EXPECT_EQ(touches_image(pair.kind), mask_nonzero);
        EXPECT_EQ(touches_text(pair.kind), flipped);
        if (ann.bbox) EXPECT_EQ(*ann.bbox, oracle_box(ann.mask, pair.size));
        for (int idx : ann.flipped_tokens) {
            ASSERT_GE(idx, 0);
            ASSERT_LT(idx, static_cast<int>(pair.caption.size()));
        }
        ++counts[static_cast<int>(pair.kind)];
    }
    for (int c : counts) EXPECT_GT(c, 40);
}

TEST(Synth, TextFlipChangesOnlyTheRecordedToken) {
    // The same seed with kind none and text_flip shares the scene, so the
    // captions may differ only at the flipped index.
    const auto& vocab = Vocabulary::standard();
    for (std::uint64_t seed = 0; seed < 60; ++seed) {
        auto [real, ra] = generate_pair(seed, builtin_style("alpha"), ManipulationKind::none);
        auto [fake, fa] = generate_pair(seed, builtin_style("alpha"), ManipulationKind::text_flip);
        EXPECT_EQ(real.image, fake.image);
        ASSERT_EQ(fa.flipped_tokens.size(), 1u);
        ASSERT_EQ(real.caption.size(), fake.caption.size());
        for (std::size_t i = 0; i < real.caption.size(); ++i) {
            if (static_cast<int>(i) == fa.flipped_tokens[0]) {
                EXPECT_NE(real.caption[i], fake.caption[i]) << vocab.decode(fake.caption);
            } else {
                EXPECT_EQ(real.caption[i], fake.caption[i]);
            }
        }
        EXPECT_EQ(vocab.decode(fake.caption), fake.caption_text);
    }
}

TEST(Synth, PixelsInUnitRangeAndQuantized) {
    auto [pair, ann] = generate_pair(99, builtin_style("beta"), ManipulationKind::both);
    ASSERT_EQ(pair.image.size(), static_cast<std::size_t>(32 * 32 * 3));
    for (float v : pair.image) {
        EXPECT_GE(v, 0.0f);
        EXPECT_LE(v, 1.0f);
        EXPECT_EQ(std::lround(v * 255.0f) / 255.0f, v);
    }
}

TEST(Synth, UnknownStyleIsConfigError) { EXPECT_THROW(builtin_style("epsilon"), ConfigError); }

TEST(Synth, ColorHistogramSeparatesStyles) {
    // Nearest-centroid classifier on 4-bin-per-channel histograms, fit on one
    // seed range and scored on another.
    auto hist = [](const std::vector<float>& img) {
        std::vector<double> h(12, 0.0);
        for (std::size_t i = 0; i < img.size(); ++i) h[(i % 3) * 4 + std::min(3, int(img[i] * 4))] += 1.0;
        for (auto& v : h) v /= img.size() / 3.0;
        return h;
    };
    const auto& styles = builtin_styles();
    for (std::size_t a = 0; a < styles.size(); ++a) {
        for (std::size_t b = a + 1; b < styles.size(); ++b) {
            std::vector<double> ca(12, 0.0), cb(12, 0.0);
            for (std::uint64_t s = 0; s < 100; ++s) {
                auto ha = hist(generate_pair(s, styles[a]).first.image);
                auto hb = hist(generate_pair(s, styles[b]).first.image);
                for (int k = 0; k < 12; ++k) {
                    ca[k] += ha[k] / 100;
                    cb[k] += hb[k] / 100;
                }
            }
            auto dist = [](const std::vector<double>& x, const std::vector<double>& y) {
                double d = 0;
                for (std::size_t k = 0; k < x.size(); ++k) d += (x[k] - y[k]) * (x[k] - y[k]);
                return d;
            };
            int correct = 0;
            for (std::uint64_t s = 1000; s < 1100; ++s) {
                auto ha = hist(generate_pair(s, styles[a]).first.image);
                auto hb = hist(generate_pair(s, styles[b]).first.image);
                correct += dist(ha, ca) < dist(ha, cb);
                correct += dist(hb, cb) < dist(hb, ca);
            }
            EXPECT_GE(correct / 200.0, 0.9) << styles[a].name << " vs " << styles[b].name;
        }
    }
}

TEST(Synth, DownsampleMaskIsMaxPool) {
    std::vector<std::uint8_t> mask(32 * 32, 0);
    mask[5 * 32 + 7] = 1;
    auto small = downsample_mask(mask, 32, 16);
    ASSERT_EQ(small.size(), 256u);
    for (int i = 0; i < 256; ++i) EXPECT_EQ(small[i], i == 2 * 16 + 3 ? 1 : 0);
    EXPECT_THROW(downsample_mask(mask, 32, 12), DimensionError);
}

TEST(Perturb, ZeroProbabilityIsIdentity) {
    auto [pair, ann] = generate_pair(5, builtin_style("alpha"));
    EXPECT_EQ(perturb(pair.image, 32, 32, 77, PerturbConfig{}), pair.image);
}

TEST(Perturb, TinySigmaBlurIsIdentity) {
    auto [pair, ann] = generate_pair(6, builtin_style("beta"));
    auto out = gaussian_blur(pair.image, 32, 32, 1e-4);
    for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out[i], pair.image[i], 1e-6);
}

TEST(Perturb, FixedSeedIsDeterministicAndClipped) {
    auto [pair, ann] = generate_pair(7, builtin_style("gamma"));
    PerturbConfig cfg{1.0, 1.0, 30, 60, 0.5, 1.5};
    auto a = perturb(pair.image, 32, 32, 11, cfg);
    auto b = perturb(pair.image, 32, 32, 11, cfg);
    EXPECT_EQ(a, b);
    EXPECT_NE(a, pair.image);
    for (float v : a) {
        EXPECT_GE(v, 0.0f);
        EXPECT_LE(v, 1.0f);
    }
}

TEST(Perturb, JpegKeepsFlatBlocksAndSmoothsNoise) {
    std::vector<float> flat(16 * 16 * 3, 0.5f);
    auto out = jpeg_like(flat, 16, 16, 50);
    for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out[i], 0.5f, 1.0 / 255);

    auto [pair, ann] = generate_pair(8, builtin_style("alpha"), ManipulationKind::image_swap);
    auto q10 = jpeg_like(pair.image, 32, 32, 10);
    auto q95 = jpeg_like(pair.image, 32, 32, 95);
    double e10 = 0, e95 = 0;
    for (std::size_t i = 0; i < q10.size(); ++i) {
        e10 += std::abs(q10[i] - pair.image[i]);
        e95 += std::abs(q95[i] - pair.image[i]);
    }
    EXPECT_LT(e95, e10);
}

TEST(Netpbm, RoundTrip) {
    auto dir = scratch_dir("pbm");
    fs::create_directories(dir);
    auto [pair, ann] = generate_pair(9, builtin_style("delta"), ManipulationKind::image_swap);
    write_ppm(dir / "a.ppm", pair.image, 32, 32);
    int w = 0, h = 0;
    EXPECT_EQ(read_ppm(dir / "a.ppm", w, h), pair.image);
    EXPECT_EQ(w, 32);
    write_pgm(dir / "m.pgm", ann.mask, 32, 32);
    EXPECT_EQ(read_pgm(dir / "m.pgm", w, h), ann.mask);
    EXPECT_THROW(read_ppm(dir / "missing.ppm", w, h), IoError);
    EXPECT_THROW(read_ppm(dir / "m.pgm", w, h), IoError);
}

TEST(Dataset, CountsAreExact) {
    auto dir = scratch_dir("counts");
    build_dataset(builtin_style("alpha"), {10, 10, 3, 5}, 42, dir);
    auto train = load_split(dir / "train");
    auto test = load_split(dir / "test");
    ASSERT_EQ(train.size(), 20u);
    ASSERT_EQ(test.size(), 8u);
    EXPECT_EQ(std::count_if(train.begin(), train.end(), [](auto& s) { return s.pair.label == 1; }), 10);
    EXPECT_EQ(std::count_if(test.begin(), test.end(), [](auto& s) { return s.pair.label == 0; }), 3);

    std::set<std::string> ids;
    for (auto* split : {&train, &test})
        for (auto& s : *split) ids.insert(s.id);
    EXPECT_EQ(ids.size(), 28u);
    EXPECT_TRUE(std::is_sorted(train.begin(), train.end(), [](auto& a, auto& b) { return a.id < b.id; }));
}

TEST(Dataset, DiskRoundTripMatchesGenerator) {
    auto dir = scratch_dir("roundtrip");
    build_dataset(builtin_style("beta"), {6, 6, 0, 0}, 3, dir);
    auto loaded = load_split(dir / "train");
    auto direct = generate_split(builtin_style("beta"), "train", 6, 6, 3);
    ASSERT_EQ(loaded.size(), direct.size());
    for (std::size_t i = 0; i < loaded.size(); ++i) {
        EXPECT_EQ(loaded[i].id, direct[i].id);
        EXPECT_EQ(loaded[i].pair.image, direct[i].pair.image);
        EXPECT_EQ(loaded[i].pair.caption, direct[i].pair.caption);
        EXPECT_EQ(loaded[i].annotation.mask, direct[i].annotation.mask);
        EXPECT_EQ(loaded[i].annotation.bbox, direct[i].annotation.bbox);
    }
}

TEST(Dataset, RegenerationIsByteIdentical) {
    auto a = scratch_dir("regen_a");
    auto b = scratch_dir("regen_b");
    build_dataset(builtin_style("gamma"), {5, 7, 2, 2}, 8, a);
    build_dataset(builtin_style("gamma"), {5, 7, 2, 2}, 8, b);
    EXPECT_EQ(slurp(a / "train" / "manifest.jsonl"), slurp(b / "train" / "manifest.jsonl"));
    for (auto& entry : fs::directory_iterator(a / "train" / "images")) {
        EXPECT_EQ(slurp(entry.path()), slurp(b / "train" / "images" / entry.path().filename()));
    }
}

TEST(Dataset, ManifestFieldOrder) {
    auto dir = scratch_dir("fields");
    build_dataset(builtin_style("alpha"), {1, 3, 0, 0}, 1, dir);
    std::ifstream f(dir / "train" / "manifest.jsonl");
    std::string line;
    std::getline(f, line);
    const std::vector<std::string> keys = {"\"id\"",   "\"image\"", "\"mask\"", "\"caption\"", "\"caption_text\"",
                                           "\"label\"", "\"kind\"", "\"bbox\"", "\"flipped_tokens\"", "\"domain\""};
    std::size_t pos = 0;
    for (const auto& k : keys) {
        auto at = line.find(k, pos);
        ASSERT_NE(at, std::string::npos) << k;
        pos = at;
    }
}

TEST(Dataset, MissingManifestIsIoError) { EXPECT_THROW(load_split(scratch_dir("nothing")), IoError); }

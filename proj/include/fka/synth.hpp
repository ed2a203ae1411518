#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fka/box.hpp"

namespace fka {

enum class ManipulationKind { none, image_swap, text_flip, both };

std::string kind_name(ManipulationKind kind);
ManipulationKind parse_kind(const std::string& name);
inline bool touches_image(ManipulationKind k) { return k == ManipulationKind::image_swap || k == ManipulationKind::both; }
inline bool touches_text(ManipulationKind k) { return k == ManipulationKind::text_flip || k == ManipulationKind::both; }

struct Rgb {
    float r = 0, g = 0, b = 0;
};

inline constexpr std::array<const char*, 6> kColorWords = {"red", "green", "blue", "orange", "yellow", "purple"};
inline constexpr std::array<const char*, 4> kShapeWords = {"circle", "square", "triangle", "diamond"};

struct DomainStyle {
    std::string name;
    Rgb background;
    Rgb background_gradient;  // added times (row / height - 0.5)
    float background_noise = 0.02f;
    std::array<Rgb, kColorWords.size()> palette;
    std::array<double, kShapeWords.size()> shape_weights;
    std::vector<std::string> prefix;  // caption words before the description
    std::vector<std::string> suffix;
    double layout_power = 1.0;        // vertical placement u^power, u uniform
    int big_min = 10, big_max = 12;
    int small_min = 6, small_max = 8;
};

/// The four built-in styles: alpha, beta, gamma, delta.
const std::vector<DomainStyle>& builtin_styles();
const DomainStyle& builtin_style(const std::string& name);

inline constexpr int kSynthImageSize = 32;

struct ImageTextPair {
    int size = kSynthImageSize;
    std::vector<float> image;  // size × size × 3, row-major, values k/255
    std::vector<int> caption;
    std::string caption_text;
    int label = 0;  // 1 = fake
    ManipulationKind kind = ManipulationKind::none;
    std::string domain;
};

struct ForgeryAnnotation {
    std::vector<std::uint8_t> mask;  // size × size, 0/1
    std::optional<BBox> bbox;
    std::vector<int> flipped_tokens;
};

struct Sample {
    std::string id;
    ImageTextPair pair;
    ForgeryAnnotation annotation;
};

/// Total function of (seed, style, force_kind). Without force_kind the kind is
/// drawn: half real, the rest split evenly over the three fake kinds.
std::pair<ImageTextPair, ForgeryAnnotation> generate_pair(std::uint64_t seed, const DomainStyle& style,
                                                          std::optional<ManipulationKind> force_kind = {});

/// Tight box of the nonzero mask pixels, in normalized coordinates with the
/// right/bottom edge exclusive. Empty mask gives nullopt.
std::optional<BBox> tight_bbox(const std::vector<std::uint8_t>& mask, int width, int height);

/// Max-pools a square mask down by an integer factor.
std::vector<std::uint8_t> downsample_mask(const std::vector<std::uint8_t>& mask, int size, int out_size);

struct PerturbConfig {
    double jpeg_prob = 0.0;
    double blur_prob = 0.0;
    int quality_min = 50, quality_max = 90;
    double sigma_min = 0.3, sigma_max = 1.0;
};

std::vector<float> perturb(const std::vector<float>& image, int width, int height, std::uint64_t seed,
                           const PerturbConfig& config);
std::vector<float> jpeg_like(const std::vector<float>& image, int width, int height, int quality);
std::vector<float> gaussian_blur(const std::vector<float>& image, int width, int height, double sigma);

struct SplitCounts {
    int train_real = 0, train_fake = 0;
    int test_real = 0, test_fake = 0;
};

/// Writes DIR/train and DIR/test, each with images/, masks/ and manifest.jsonl.
void build_dataset(const DomainStyle& style, const SplitCounts& counts, std::uint64_t seed,
                   const std::filesystem::path& out_dir);

/// Generates the samples of one split in id order without touching disk.
std::vector<Sample> generate_split(const DomainStyle& style, const std::string& split, int n_real, int n_fake,
                                   std::uint64_t seed);

/// Loads a split directory, or DIR/test when given a dataset root.
std::vector<Sample> load_split(const std::filesystem::path& dir);
std::filesystem::path resolve_split_dir(const std::filesystem::path& dir, const std::string& default_split);

// Binary netpbm I/O. Images are stored as 8-bit, values quantized to k/255.
void write_ppm(const std::filesystem::path& path, const std::vector<float>& rgb, int width, int height);
std::vector<float> read_ppm(const std::filesystem::path& path, int& width, int& height);
void write_pgm(const std::filesystem::path& path, const std::vector<std::uint8_t>& gray, int width, int height);
std::vector<std::uint8_t> read_pgm(const std::filesystem::path& path, int& width, int& height);

} // namespace fka

#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "fka/foundation.hpp"
#include "fka/model.hpp"
#include "fka/optim.hpp"
#include "fka/synth.hpp"

namespace fka {

inline constexpr int kConfigVersion = 1;

struct LossToggles {
    bool pixel = true;  // focal + dice
    bool patch = true;  // L1 + GIoU
};

struct TrainConfig {
    int config_version = kConfigVersion;
    ModelConfig model;
    AdamWConfig optimizer;
    std::size_t batch_size = 16;
    std::size_t epochs = 10;
    double warmup_fraction = 0.1;
    std::uint64_t seed = 7;
    LossToggles losses;
    PerturbConfig perturb;
    FoundationConfig foundation;
    std::string foundation_cache;  // directory; empty disables caching
    std::string train_data;
    std::vector<std::string> eval_data;
    std::size_t train_limit = 0;  // 0 = whole split

    void validate() const;
};

/// Parses "key = value" lines; '#' starts a comment. Unknown keys and bad
/// values are ConfigError, a config_version other than kConfigVersion is a
/// VersionError. Keys not present keep their defaults.
TrainConfig parse_config(std::string_view text);
TrainConfig load_config(const std::filesystem::path& path);
/// Every key, one per line; parse_config(to_text(c)) reproduces c.
std::string to_text(const TrainConfig& config);

} // namespace fka

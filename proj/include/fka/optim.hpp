#pragma once

#include <cstddef>
#include <vector>

#include "fka/tensor.hpp"

namespace fka {

struct AdamWConfig {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

/// Adam with decoupled weight decay. Moments are kept in double.
class AdamW {
  public:
    AdamW(std::vector<Tensor> params, AdamWConfig config);

    /// One update with learning rate `lr`, reading each parameter's grad.
    void step(double lr);
    void zero_grad();
    std::size_t steps() const { return t_; }
    const AdamWConfig& config() const { return config_; }

  private:
    std::vector<Tensor> params_;
    AdamWConfig config_;
    std::vector<std::vector<double>> m_, v_;
    std::size_t t_ = 0;
};

/// Linear warmup from 0 to `peak` over `warmup` steps, then half-cosine
/// down to 0 at the final step.
double schedule_lr(std::size_t step, std::size_t total, std::size_t warmup, double peak);

} // namespace fka

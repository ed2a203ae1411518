#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>

#include "fka/box.hpp"
#include "fka/tensor.hpp"

namespace fka {

/// Mean over rows of -log softmax(logits)[target]. logits is [n × V].
template <typename T> BasicTensor<T> cross_entropy(const BasicTensor<T>& logits, std::span<const int> targets);

/// M_s is [n × 2] per-pixel log-probabilities, mask holds n binary labels.
/// Mean over pixels of -(1 - p)^gamma log p, p the true-class probability.
template <typename T>
BasicTensor<T> focal_loss(const BasicTensor<T>& log_probs, std::span<const std::uint8_t> mask, double gamma = 2.0);

/// 1 - (2 Σ y ŷ + eps) / (Σ y² + Σ ŷ² + eps), ŷ = exp of the unnatural channel.
template <typename T>
BasicTensor<T> dice_loss(const BasicTensor<T>& log_probs, std::span<const std::uint8_t> mask, double eps = 1.0);

/// Box losses against a fixed target. `pred` holds (x1, y1, x2, y2).
template <typename T> BasicTensor<T> l1_box(const BasicTensor<T>& pred, const BBox& target);
template <typename T> BasicTensor<T> giou_loss(const BasicTensor<T>& pred, const BBox& target);

/// Plain-number GIoU, used by tests and evaluation.
double giou(const BBox& a, const BBox& b);

struct LossBreakdown {
    double l_ce = 0, l_focal = 0, l_dice = 0, l_l1 = 0, l_giou = 0;
    double l_pixel = 0, l_patch = 0, total = 0;
    bool has_pixel = false;
    bool has_patch = false;

    /// Omits the pixel/patch fields when those terms are switched off.
    nlohmann::ordered_json to_json() const;
};

/// Per-sample loss terms. Undefined tensors mean "term not present".
struct SampleLoss {
    Tensor ce, focal, dice, l1, giou;
};

/// Batch objective: CE and pixel terms are averaged over the batch, patch
/// terms over the image-manipulated samples of the batch.
///
/// Samples are added one at a time so each sample's graph can be released
/// after its backward pass; the scaled per-sample totals sum to the batch
/// total.
class LossAccumulator {
  public:
    LossAccumulator(std::size_t batch_size, std::size_t image_manipulated);

    /// Returns this sample's share of the batch total, ready for backward.
    Tensor add(const SampleLoss& terms);
    const LossBreakdown& breakdown() const { return sum_; }

  private:
    double batch_ = 1, patch_count_ = 0;
    LossBreakdown sum_;
};

/// Whole-batch form of the accumulator.
LossBreakdown total_loss(const std::vector<SampleLoss>& samples);

} // namespace fka

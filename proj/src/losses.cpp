#include "fka/losses.hpp"

#include <cmath>

#include "fka/errors.hpp"
#include "fka/ops.hpp"

namespace fka {

namespace {

template <typename T>
void check_pixels(const BasicTensor<T>& log_probs, std::span<const std::uint8_t> mask, const char* what) {
    if (log_probs.rank() != 2 || log_probs.dim(1) != 2 || log_probs.dim(0) != mask.size()) {
        throw DimensionError(std::string(what) + ": map " + shape_str(log_probs.shape()) + " vs mask of " +
                             std::to_string(mask.size()));
    }
}

void check_box(const BBox& b, const char* what) {
    if (!b.valid() || !std::isfinite(b.x1) || !std::isfinite(b.y1) || !std::isfinite(b.x2) || !std::isfinite(b.y2)) {
        throw InputError(std::string(what) + ": invalid box");
    }
}

template <typename T> BasicTensor<T> coord(const BasicTensor<T>& box, int i) {
    const int idx[1] = {i};
    return pick(reshape(box, Shape{1, 4}), std::span<const int>(idx, 1));
}

template <typename T> BasicTensor<T> constant(double v) { return BasicTensor<T>(Shape{1}, {static_cast<T>(v)}); }

} // namespace

template <typename T> BasicTensor<T> cross_entropy(const BasicTensor<T>& logits, std::span<const int> targets) {
    if (targets.empty()) throw UsageError("cross_entropy: no target tokens");
    if (logits.rank() != 2 || logits.dim(0) != targets.size()) {
        throw DimensionError("cross_entropy: logits " + shape_str(logits.shape()) + " for " +
                             std::to_string(targets.size()) + " targets");
    }
    return mul_scalar(mean(pick(log_softmax(logits), targets)), T(-1));
}

template <typename T>
BasicTensor<T> focal_loss(const BasicTensor<T>& log_probs, std::span<const std::uint8_t> mask, double gamma) {
    check_pixels(log_probs, mask, "focal_loss");
    std::vector<int> cls(mask.begin(), mask.end());
    for (auto& c : cls) c = c ? 1 : 0;
    auto logp = pick(log_probs, std::span<const int>(cls));
    if (gamma == 0.0) return mul_scalar(mean(logp), T(-1));
    auto weight = pow_scalar(add_scalar(mul_scalar(exp(logp), T(-1)), T(1)), static_cast<T>(gamma));
    return mul_scalar(mean(mul(weight, logp)), T(-1));
}

template <typename T>
BasicTensor<T> dice_loss(const BasicTensor<T>& log_probs, std::span<const std::uint8_t> mask, double eps) {
    check_pixels(log_probs, mask, "dice_loss");
    std::vector<T> y(mask.size());
    T y2 = 0;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        y[i] = mask[i] ? T(1) : T(0);
        y2 += y[i] * y[i];
    }
    const auto pred = exp(slice_cols(log_probs, 1, 2));
    const BasicTensor<T> target(Shape{mask.size(), 1}, std::move(y));
    auto numer = add_scalar(mul_scalar(sum(mul(pred, target)), T(2)), static_cast<T>(eps));
    auto denom = add_scalar(sum(mul(pred, pred)), y2 + static_cast<T>(eps));
    return add_scalar(mul_scalar(div(numer, denom), T(-1)), T(1));
}

template <typename T> BasicTensor<T> l1_box(const BasicTensor<T>& pred, const BBox& target) {
    check_box(target, "l1_box");
    if (pred.numel() != 4) throw DimensionError("l1_box: prediction " + shape_str(pred.shape()));
    const BasicTensor<T> t(Shape{4}, {static_cast<T>(target.x1), static_cast<T>(target.y1), static_cast<T>(target.x2),
                                      static_cast<T>(target.y2)});
    return mean(abs(sub(reshape(pred, Shape{4}), t)));
}

template <typename T> BasicTensor<T> giou_loss(const BasicTensor<T>& pred, const BBox& target) {
    check_box(target, "giou_loss");
    if (pred.numel() != 4) throw DimensionError("giou_loss: prediction " + shape_str(pred.shape()));
    for (auto v : pred.data())
        if (!std::isfinite(static_cast<double>(v))) throw NumericError("giou_loss: non-finite predicted box");
    for (std::size_t i = 0; i < 2; ++i) {
        if (!(pred.data()[i] <= pred.data()[i + 2])) throw InputError("giou_loss: invalid predicted box");
    }
    const auto px1 = coord(pred, 0), py1 = coord(pred, 1), px2 = coord(pred, 2), py2 = coord(pred, 3);
    const auto tx1 = constant<T>(target.x1), ty1 = constant<T>(target.y1);
    const auto tx2 = constant<T>(target.x2), ty2 = constant<T>(target.y2);

    const auto iw = relu(sub(minimum(px2, tx2), maximum(px1, tx1)));
    const auto ih = relu(sub(minimum(py2, ty2), maximum(py1, ty1)));
    const auto inter = mul(iw, ih);
    const auto area_p = mul(sub(px2, px1), sub(py2, py1));
    const auto area_t = mul(sub(tx2, tx1), sub(ty2, ty1));
    const auto tiny = constant<T>(1e-12);
    const auto uni = maximum(sub(add(area_p, area_t), inter), tiny);
    const auto cw = sub(maximum(px2, tx2), minimum(px1, tx1));
    const auto ch = sub(maximum(py2, ty2), minimum(py1, ty1));
    const auto enclose = maximum(mul(cw, ch), tiny);
    const auto g = sub(div(inter, uni), div(sub(enclose, uni), enclose));
    return add_scalar(mul_scalar(g, T(-1)), T(1));
}

double giou(const BBox& a, const BBox& b) {
    const double iw = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
    const double ih = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
    const double inter = iw * ih;
    const double uni = a.area() + b.area() - inter;
    const double enclose = (std::max(a.x2, b.x2) - std::min(a.x1, b.x1)) * (std::max(a.y2, b.y2) - std::min(a.y1, b.y1));
    if (enclose <= 0) return 1.0;
    return (uni > 0 ? inter / uni : 0.0) - (enclose - uni) / enclose;
}

nlohmann::ordered_json LossBreakdown::to_json() const {
    nlohmann::ordered_json j;
    j["l_ce"] = l_ce;
    if (has_pixel) {
        j["l_focal"] = l_focal;
        j["l_dice"] = l_dice;
        j["l_pixel"] = l_pixel;
    }
    if (has_patch) {
        j["l_l1"] = l_l1;
        j["l_giou"] = l_giou;
        j["l_patch"] = l_patch;
    }
    j["total"] = total;
    return j;
}

LossAccumulator::LossAccumulator(std::size_t batch_size, std::size_t image_manipulated)
    : batch_(static_cast<double>(batch_size)), patch_count_(static_cast<double>(image_manipulated)) {
    if (batch_size == 0) throw UsageError("empty batch");
}

Tensor LossAccumulator::add(const SampleLoss& t) {
    if (!t.ce.defined()) throw UsageError("sample loss without a cross-entropy term");
    Tensor total = mul_scalar(t.ce, static_cast<float>(1.0 / batch_));
    sum_.l_ce += t.ce.item() / batch_;
    if (t.focal.defined() && t.dice.defined()) {
        sum_.has_pixel = true;
        sum_.l_focal += t.focal.item() / batch_;
        sum_.l_dice += t.dice.item() / batch_;
        total = fka::add(total, mul_scalar(fka::add(t.focal, t.dice), static_cast<float>(1.0 / batch_)));
    }
    if (t.l1.defined() && t.giou.defined()) {
        if (patch_count_ <= 0) throw UsageError("patch loss on a batch declared without manipulated images");
        sum_.has_patch = true;
        sum_.l_l1 += t.l1.item() / patch_count_;
        sum_.l_giou += t.giou.item() / patch_count_;
        total = fka::add(total, mul_scalar(fka::add(t.l1, t.giou), static_cast<float>(1.0 / patch_count_)));
    }
    sum_.l_pixel = sum_.l_focal + sum_.l_dice;
    sum_.l_patch = sum_.l_l1 + sum_.l_giou;
    sum_.total = sum_.l_ce + sum_.l_pixel + sum_.l_patch;
    return total;
}

LossBreakdown total_loss(const std::vector<SampleLoss>& samples) {
    std::size_t patch = 0;
    for (const auto& s : samples) patch += s.l1.defined() ? 1 : 0;
    LossAccumulator acc(samples.size(), patch);
    for (const auto& s : samples) acc.add(s);
    return acc.breakdown();
}

#define FKA_INSTANTIATE_LOSSES(T)                                                                                 \
    template BasicTensor<T> cross_entropy(const BasicTensor<T>&, std::span<const int>);                          \
    template BasicTensor<T> focal_loss(const BasicTensor<T>&, std::span<const std::uint8_t>, double);            \
    template BasicTensor<T> dice_loss(const BasicTensor<T>&, std::span<const std::uint8_t>, double);             \
    template BasicTensor<T> l1_box(const BasicTensor<T>&, const BBox&);                                          \
    template BasicTensor<T> giou_loss(const BasicTensor<T>&, const BBox&);

FKA_INSTANTIATE_LOSSES(float)
FKA_INSTANTIATE_LOSSES(double)

} // namespace fka

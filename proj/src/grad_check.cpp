#include "fka/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "fka/ops.hpp"
#include "fka/rng.hpp"

namespace fka {

namespace {

TensorD reduce_to_scalar(const TensorD& out, std::uint64_t seed) {
    if (out.numel() == 1) return reshape(out, Shape{1});
    Rng rng(seed);
    std::vector<double> w(out.numel());
    for (auto& v : w) v = rng.uniform(-1.0, 1.0);
    return sum(mul(out, TensorD(out.shape(), std::move(w))));
}

double evaluate(const GradCheckFn& fn, const std::vector<TensorD>& inputs, std::uint64_t seed) {
    NoGradGuard guard;
    return reduce_to_scalar(fn(inputs), seed).item();
}

} // namespace

GradCheckResult grad_check(const GradCheckFn& fn, const std::vector<TensorD>& inputs, double eps,
                           std::uint64_t seed) {
    std::vector<TensorD> work;
    work.reserve(inputs.size());
    for (const auto& in : inputs) work.push_back(TensorD(in.shape(), std::vector<double>(in.data().begin(), in.data().end()), true));

    auto loss = reduce_to_scalar(fn(work), seed);
    backward(loss);

    GradCheckResult result;
    for (std::size_t t = 0; t < work.size(); ++t) {
        const auto analytic = work[t].grad();
        auto values = work[t].mutable_data();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double orig = values[i];
            values[i] = orig + eps;
            const double up = evaluate(fn, work, seed);
            values[i] = orig - eps;
            const double down = evaluate(fn, work, seed);
            values[i] = orig;
            const double numeric = (up - down) / (2.0 * eps);
            const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-6});
            const double rel = std::abs(analytic[i] - numeric) / denom;
            if (rel > result.max_relative_error) {
                result = {rel, t, i, analytic[i], numeric};
            }
        }
    }
    return result;
}

} // namespace fka

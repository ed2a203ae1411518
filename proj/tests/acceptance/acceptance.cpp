// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero when any fails.
//
//   acceptance [work_dir]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <limits>
#include <sstream>

#include "../support/oracles.hpp"
#include "fka/ablate.hpp"
#include "fka/checkpoint.hpp"
#include "fka/grad_check.hpp"
#include "fka/losses.hpp"
#include "fka/metrics.hpp"

using namespace fka;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(int n, const std::string& name, bool ok, const std::string& detail) {
    std::printf("[%s] %d %s: %s\n", ok ? "PASS" : "FAIL", n, name.c_str(), detail.c_str());
    std::fflush(stdout);
    failures += ok ? 0 : 1;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double a) {
    char buf[128];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

TensorD random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = scale * rng.normal();
    return TensorD(shape, v, true);
}

std::vector<std::uint8_t> random_mask(std::size_t n, Rng& rng) {
    std::vector<std::uint8_t> m(n);
    for (auto& x : m) x = rng.bernoulli(0.4);
    return m;
}

BBox random_box(Rng& rng) {
    const double x1 = rng.uniform(0, 0.6), y1 = rng.uniform(0, 0.6);
    return {x1, y1, x1 + rng.uniform(0.05, 0.4), y1 + rng.uniform(0.05, 0.4)};
}

std::vector<char> file_bytes(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

bool same_tree(const fs::path& a, const fs::path& b) {
    std::size_t n = 0;
    for (const auto& e : fs::recursive_directory_iterator(a)) {
        if (!e.is_regular_file()) continue;
        const auto other = b / fs::relative(e.path(), a);
        if (!fs::exists(other) || file_bytes(e.path()) != file_bytes(other)) return false;
        ++n;
    }
    std::size_t m = 0;
    for (const auto& e : fs::recursive_directory_iterator(b)) m += e.is_regular_file() ? 1 : 0;
    return n == m && n > 0;
}

void gradient_integrity() {
    const auto t0 = Clock::now();
    Rng rng(101);
    double worst = 0;
    std::string worst_op;
    auto check = [&](const std::string& op, const GradCheckFn& fn, const std::vector<TensorD>& in) {
        const auto r = grad_check(fn, in);
        if (r.max_relative_error >= worst) {
            worst = r.max_relative_error;
            worst_op = op;
        }
    };
    for (int point = 0; point < 5; ++point) {
        check("attention", [](auto& x) { return attention(x[0], x[1], x[2]); },
              {random_tensor({3, 4}, rng), random_tensor({5, 4}, rng), random_tensor({5, 3}, rng)});
        check("multi_head_attention",
              [](auto& x) { return multi_head_attention(x[0], x[1], x[2], 2, x[3], x[4]); },
              {random_tensor({2, 4}, rng), random_tensor({5, 4}, rng), random_tensor({5, 4}, rng),
               random_tensor({4, 4}, rng, 0.5), random_tensor({4}, rng)});
        check("transposed_conv2d", [](auto& x) { return transposed_conv2d(x[0], x[1], x[2], 2); },
              {random_tensor({2, 2, 3}, rng), random_tensor({2, 2, 3, 2}, rng), random_tensor({2}, rng)});
        check("linear", [](auto& x) { return linear(x[0], x[1], x[2]); },
              {random_tensor({3, 4}, rng), random_tensor({4, 5}, rng), random_tensor({5}, rng)});
        check("layer_norm", [](auto& x) { return layer_norm(x[0], x[1], x[2]); },
              {random_tensor({3, 6}, rng), random_tensor({6}, rng), random_tensor({6}, rng)});
        check("log_softmax", [](auto& x) { return log_softmax(x[0]); }, {random_tensor({4, 5}, rng)});
        const auto mask = random_mask(9, rng);
        check("focal", [&](auto& x) { return focal_loss(log_softmax(x[0]), mask); }, {random_tensor({9, 2}, rng)});
        check("dice", [&](auto& x) { return dice_loss(log_softmax(x[0]), mask); }, {random_tensor({9, 2}, rng)});
        const std::vector<int> targets = {2, 0, 4};
        check("cross_entropy", [&](auto& x) { return cross_entropy(x[0], targets); }, {random_tensor({3, 5}, rng)});
        const BBox target = random_box(rng), start = random_box(rng);
        check("giou", [&](auto& x) { return giou_loss(x[0], target); },
              {TensorD(Shape{4}, {start.x1, start.y1, start.x2, start.y2}, true)});
    }
    const double secs = seconds_since(t0);
    report(1, "gradient integrity", worst < 1e-4 && secs < 60,
           "max relative error " + fmt("%.3g", worst) + " (" + worst_op + "), " + fmt("%.2f", secs) + " s");
}

void loss_analytics() {
    Rng rng(102);
    double focal_gap = 0;
    for (int t = 0; t < 50; ++t) {
        auto w = random_tensor({16, 2}, rng, 3.0);
        const auto mask = random_mask(16, rng);
        const std::vector<int> cls(mask.begin(), mask.end());
        focal_gap = std::max(focal_gap, std::abs(focal_loss(log_softmax(w), mask, 0.0).item() -
                                                 cross_entropy(w, cls).item()));
    }

    const double ninf = -std::numeric_limits<double>::infinity();
    const std::vector<std::uint8_t> mask = {1, 0, 0, 1, 1};
    const TensorD exact(Shape{5, 2}, {ninf, 0.0, 0.0, ninf, 0.0, ninf, ninf, 0.0, ninf, 0.0});
    const double dice = dice_loss(exact, mask).item();

    bool giou_iff = true;
    for (int t = 0; t < 200; ++t) {
        const BBox a = random_box(rng), b = random_box(rng);
        const TensorD pa(Shape{4}, {a.x1, a.y1, a.x2, a.y2});
        giou_iff = giou_iff && giou_loss(pa, a).item() == 0.0 && giou_loss(pa, b).item() > 0.0;
    }
    const double half = giou_loss(TensorD(Shape{4}, {0.0, 0.0, 1.0, 1.0}), BBox{0.0, 0.0, 0.5, 1.0}).item();

    ModelConfig mc;
    mc.finalize();
    ForgeryModel model(mc);
    double norm_gap = 0;
    for (int t = 0; t < 5; ++t) {
        const auto s = generate_split(builtin_styles()[t % 4], "acceptance", 1, 1, 50 + t)[1];
        const auto out = model.forward(model.features(s));
        const auto& m = out.artifact->m_s;
        for (std::size_t p = 0; p < m.dim(0); ++p) {
            norm_gap = std::max(norm_gap, std::abs(std::exp(static_cast<double>(m.at(p, 0))) +
                                                   std::exp(static_cast<double>(m.at(p, 1))) - 1.0));
        }
    }
    const bool ok = focal_gap <= 1e-6 && dice == 0.0 && giou_iff && std::abs(half - 0.5) <= 1e-6 && norm_gap <= 1e-5;
    report(2, "loss analytics", ok,
           "focal(gamma=0)-CE " + fmt("%.2g", focal_gap) + ", dice(exact) " + fmt("%g", dice) + ", giou iff " +
               (giou_iff ? "yes" : "no") + ", half-overlap " + fmt("%.9f", half) + ", M_s normalization " +
               fmt("%.2g", norm_gap));
}

void metric_oracles() {
    Rng rng(103);
    std::size_t auc_bad = 0, eer_bad = 0, invariance_bad = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<double> s;
        std::vector<int> y;
        do {
            const int n = rng.range(2, 12);
            s.assign(n, 0);
            y.assign(n, 0);
            for (int i = 0; i < n; ++i) {
                s[i] = rng.range(0, 5) / 5.0 + (rng.bernoulli(0.5) ? rng.uniform() * 0.1 : 0.0);
                y[i] = rng.bernoulli(0.5);
            }
        } while (std::count(y.begin(), y.end(), 1) == 0 || std::count(y.begin(), y.end(), 0) == 0);
        const double a = auc(s, y);
        auc_bad += a != oracle::auc(s, y);
        eer_bad += eer(s, y) != oracle::eer(s, y);
        std::vector<double> e(s.size()), aff(s.size());
        for (std::size_t i = 0; i < s.size(); ++i) {
            e[i] = std::exp(s[i]);
            aff[i] = 3.0 * s[i] - 7.0;
        }
        invariance_bad += auc(e, y) != a || auc(aff, y) != a;
    }
    report(3, "metric oracles", auc_bad == 0 && eer_bad == 0 && invariance_bad == 0,
           "1000 instances: auc mismatches " + std::to_string(auc_bad) + ", eer mismatches " +
               std::to_string(eer_bad) + ", transform-invariance violations " + std::to_string(invariance_bad));
}

void full_run(const fs::path& work) {
    // The timed run includes the foundation warm start.
    fs::remove_all(work / "cache");
    fs::remove_all(work / "ablation");
    const auto t0 = Clock::now();
    TrainConfig cfg;
    cfg.train_data = (work / "data" / "alpha").string();
    for (const char* d : {"beta", "gamma", "delta"}) cfg.eval_data.push_back((work / "data" / d).string());
    cfg.foundation_cache = (work / "cache").string();
    std::ofstream log(work / "ablation.log");
    const auto ab = ablate(cfg, ablation_variants(), work / "ablation", &log);
    const double minutes = seconds_since(t0) / 60;

    // 4: freeze and flow on the full variant.
    const auto& full = ab.row("modules", "full");
    const auto foundation = read_checkpoint(foundation_cache_path(cfg));
    const auto trained = read_checkpoint(full.checkpoint);
    std::size_t frozen_checked = 0, frozen_changed = 0;
    for (const auto& f : foundation) {
        for (const auto& t : trained) {
            if (t.name != f.name) continue;
            ++frozen_checked;
            frozen_changed += t.values != f.values;
        }
    }
    std::size_t zero_grad = 0;
    std::string zero_names;
    bool soft = false, cm = false, art = false, proj = false;
    for (const auto& [name, g] : full.grad_abs_sum) {
        if (g > 0) {
            soft = soft || name == kSoftPrompt;
            cm = cm || name.starts_with("cross_modal.");
            art = art || name.starts_with("artifact.");
            proj = proj || name.find("proj") != std::string::npos;
        } else {
            ++zero_grad;
            zero_names += " " + name;
        }
    }
    report(4, "freeze and flow",
           frozen_checked == foundation.size() && frozen_changed == 0 && zero_grad == 0 && soft && cm && art && proj,
           std::to_string(frozen_checked) + " frozen tensors checked, " + std::to_string(frozen_changed) +
               " changed; " + std::to_string(full.grad_abs_sum.size() - zero_grad) + "/" +
               std::to_string(full.grad_abs_sum.size()) + " trainable tensors with non-zero gradient" + zero_names);

    // 5: directional ablation.
    const double f = full.mean_auc, c = ab.row("modules", "+cross_modal").mean_auc,
                 a = ab.row("modules", "+artifact").mean_auc, b = ab.row("modules", "baseline").mean_auc;
    std::ostringstream d5;
    d5 << "held-out mean AUC full " << fmt("%.4f", f) << ", +cross_modal " << fmt("%.4f", c) << ", +artifact "
       << fmt("%.4f", a) << ", baseline " << fmt("%.4f", b) << ", gap " << fmt("%.4f", f - b) << ", "
       << fmt("%.1f", minutes) << " min";
    report(5, "directional ablation", f > c && f > a && a > b && f - b >= 0.10 && minutes <= 30, d5.str());
    std::cout << ab.table();

    // 6: localization on held-out alpha.
    const auto loaded = load_model(full.checkpoint);
    const auto alpha = load_split(resolve_split_dir(work / "data" / "alpha", "test"));
    const auto ev = evaluate(*loaded.model, alpha, "alpha", "test");
    const auto& loc = ev.localization;
    report(6, "localization competence", loc.n > 0 && loc.pixel_accuracy >= 0.90 && loc.mean_iou >= 0.5,
           "pixel accuracy " + fmt("%.4f", loc.pixel_accuracy) + ", mean IoU " + fmt("%.4f", loc.mean_iou) + " over " +
               std::to_string(loc.n) + " image-manipulated samples");
}

void determinism(const fs::path& work) {
    TrainConfig cfg;
    cfg.train_data = (work / "data" / "alpha").string();
    cfg.foundation_cache = (work / "cache").string();
    cfg.train_limit = 256;
    cfg.epochs = 1;
    const auto eval = load_split(resolve_split_dir(work / "data" / "beta", "test"));
    std::string reports[2];
    for (int run = 0; run < 2; ++run) {
        const auto out = work / "determinism" / ("run" + std::to_string(run)) / "model.ckpt";
        train(cfg, out);
        const auto loaded = load_model(out);
        reports[run] = evaluate(*loaded.model, eval, "beta", "test").report.to_json().dump();
    }
    const auto c0 = work / "determinism" / "run0" / "model.ckpt", c1 = work / "determinism" / "run1" / "model.ckpt";
    const bool same_ckpt = file_bytes(c0) == file_bytes(c1);
    const bool same_report = reports[0] == reports[1];

    const auto loaded = load_model(c0);
    const auto again = work / "determinism" / "roundtrip.ckpt";
    save_checkpoint(again, loaded.model->store());
    const bool roundtrip = file_bytes(c0) == file_bytes(again);

    const auto regen = work / "regen" / "alpha";
    fs::remove_all(regen);
    build_dataset(builtin_style("alpha"), SplitCounts{1000, 1000, 250, 250}, 1, regen);
    const bool same_data = same_tree(work / "data" / "alpha", regen);

    report(7, "determinism and persistence", same_ckpt && same_report && roundtrip && same_data,
           std::string("checkpoints ") + (same_ckpt ? "identical" : "differ") + ", reports " +
               (same_report ? "identical" : "differ") + ", round-trip " + (roundtrip ? "bit-exact" : "differs") +
               ", regenerated dataset " + (same_data ? "byte-identical" : "differs"));
}

} // namespace

int main(int argc, char** argv) {
    const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::path("acceptance_work");
    fs::create_directories(work);
    for (const char* d : {"alpha", "beta", "gamma", "delta"}) {
        const auto dir = work / "data" / d;
        if (!fs::exists(dir / "test" / "manifest.jsonl")) {
            build_dataset(builtin_style(d), SplitCounts{1000, 1000, 250, 250}, 1, dir);
        }
    }
    try {
        gradient_integrity();
        loss_analytics();
        metric_oracles();
        full_run(work);
        determinism(work);
    } catch (const std::exception& e) {
        std::printf("[FAIL] aborted: %s\n", e.what());
        return 2;
    }
    std::printf("%d of 7 criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}

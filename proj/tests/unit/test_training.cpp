#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "fka/ablate.hpp"
#include "fka/checkpoint.hpp"
#include "fka/config.hpp"
#include "fka/errors.hpp"
#include "fka/foundation.hpp"
#include "fka/optim.hpp"
#include "fka/train.hpp"

using namespace fka;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    auto d = fs::temp_directory_path() / ("fka_test_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

std::vector<Sample> small_split(std::uint64_t seed = 4) {
    return generate_split(builtin_styles()[0], "train", 4, 4, seed);
}

TrainConfig small_config() {
    TrainConfig c;
    c.batch_size = 4;
    c.epochs = 1;
    return c;
}

std::unique_ptr<ForgeryModel> fresh_model(const TrainConfig& c) {
    auto mc = c.model;
    mc.finalize();
    return std::make_unique<ForgeryModel>(mc);
}

std::vector<std::string> read_lines(const fs::path& p) {
    std::ifstream f(p);
    std::vector<std::string> out;
    for (std::string line; std::getline(f, line);) out.push_back(line);
    return out;
}

} // namespace

TEST(ScheduleTest, WarmupAndCosineEndpoints) {
    const std::size_t total = 200, warmup = 20;
    const double peak = 3e-4;
    EXPECT_EQ(schedule_lr(0, total, warmup, peak), 0.0);
    EXPECT_DOUBLE_EQ(schedule_lr(warmup, total, warmup, peak), peak);
    EXPECT_LE(schedule_lr(total - 1, total, warmup, peak), 1e-2 * peak);
    EXPECT_NEAR(schedule_lr(10, total, warmup, peak), peak / 2, 1e-15);
    for (std::size_t s = warmup; s + 1 < total; ++s) {
        EXPECT_GE(schedule_lr(s, total, warmup, peak), schedule_lr(s + 1, total, warmup, peak));
    }
}

TEST(AdamWTest, MatchesHandOracle) {
    Tensor w(Shape{3}, std::vector<float>{0.5f, -1.0f, 2.0f}, true);
    AdamWConfig cfg{0.1, 0.9, 0.999, 1e-8, 0.01};
    AdamW opt({w}, cfg);
    std::vector<double> ref = {0.5, -1.0, 2.0}, m(3, 0), v(3, 0);
    for (int t = 1; t <= 3; ++t) {
        opt.zero_grad();
        sum(mul(w, w)).backward();  // grad = 2w
        const auto g = w.grad();
        opt.step(cfg.lr);
        for (int j = 0; j < 3; ++j) {
            m[j] = 0.9 * m[j] + 0.1 * g[j];
            v[j] = 0.999 * v[j] + 0.001 * g[j] * g[j];
            const double mh = m[j] / (1 - std::pow(0.9, t)), vh = v[j] / (1 - std::pow(0.999, t));
            ref[j] = static_cast<float>(ref[j] - cfg.lr * (mh / (std::sqrt(vh) + cfg.eps) + cfg.weight_decay * ref[j]));
            EXPECT_NEAR(w[j], ref[j], 1e-6) << "step " << t << " index " << j;
        }
    }
    EXPECT_EQ(opt.steps(), 3u);
}

TEST(AdamWTest, SkipsParametersWithoutGradient) {
    Tensor a(Shape{2}, std::vector<float>{1, 2}, true), b(Shape{2}, std::vector<float>{3, 4}, true);
    AdamW opt({a, b}, AdamWConfig{});
    sum(a).backward();
    opt.step(0.1);
    EXPECT_NE(a[0], 1.0f);
    EXPECT_EQ(b[0], 3.0f);
    EXPECT_EQ(b[1], 4.0f);
}

TEST(ConfigTest, RoundTripsThroughText) {
    auto c = parse_config("config_version = 1\nlr = 0.001\nbatch_size = 8\nmodule.artifact = false\n"
                          "# two sets\ndata.eval = a, b\nprompt.soft_placement = after_forgery\n");
    EXPECT_DOUBLE_EQ(c.optimizer.lr, 0.001);
    EXPECT_EQ(c.batch_size, 8u);
    EXPECT_FALSE(c.model.toggles.artifact);
    EXPECT_EQ(c.eval_data, (std::vector<std::string>{"a", "b"}));
    EXPECT_EQ(c.model.prompt.soft_placement, SoftPlacement::after_forgery);
    const auto again = parse_config(to_text(c));
    EXPECT_EQ(to_text(again), to_text(c));
}

TEST(ConfigTest, RejectsUnknownKeysAndBadValues) {
    EXPECT_THROW(parse_config("config_version = 1\nlearning_rate = 1\n"), ConfigError);
    EXPECT_THROW(parse_config("config_version = 1\nlr = fast\n"), ConfigError);
    EXPECT_THROW(parse_config("config_version = 1\nlr = 0\n"), ConfigError);
    EXPECT_THROW(parse_config("config_version = 1\nlr = 1\nlr = 2\n"), ConfigError);
    EXPECT_THROW(parse_config("config_version = 1\nmodule.artifact = maybe\n"), ConfigError);
}

TEST(ConfigTest, VersionMismatchIsVersionError) {
    EXPECT_THROW(parse_config("config_version = 2\n"), VersionError);
    EXPECT_THROW(parse_config("lr = 0.1\n"), VersionError);
}

TEST(FoundationTest, PatchStatisticsOracle) {
    Rng rng(1);
    std::vector<float> img(32 * 32 * 3);
    for (auto& v : img) v = static_cast<float>(rng.uniform());
    const auto s = patch_statistics(img, 32, 8);
    ASSERT_EQ(s.dim(0), 16u);
    ASSERT_EQ(s.dim(1), 66u);
    auto px = [&](int y, int x, int c) { return static_cast<double>(img[(y * 32 + x) * 3 + c]); };
    for (int p = 0; p < 16; ++p) {
        for (int cell = 0; cell < 16; ++cell) {
            const int y0 = (p / 4) * 8 + (cell / 4) * 2, x0 = (p % 4) * 8 + (cell % 4) * 2;
            std::vector<double> all;
            for (int c = 0; c < 3; ++c) {
                double m = 0;
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx) {
                        m += px(y0 + dy, x0 + dx, c) / 4;
                        all.push_back(px(y0 + dy, x0 + dx, c));
                    }
                EXPECT_NEAR(s.at(p, cell * 3 + c), m - 0.5, 1e-5);
            }
            double mu = 0, var = 0;
            for (double v : all) mu += v / 12;
            for (double v : all) var += (v - mu) * (v - mu) / 12;
            EXPECT_NEAR(s.at(p, 48 + cell), std::sqrt(var), 1e-5);
        }
        EXPECT_NEAR(s.at(p, 64), (p / 4) / 3.0 - 0.5, 1e-6);
        EXPECT_NEAR(s.at(p, 65), (p % 4) / 3.0 - 0.5, 1e-6);
    }
}

TEST(TrainTest, TwoRunsAreBitIdentical) {
    const auto data = small_split();
    const auto cfg = small_config();
    const auto dir = temp_dir("determinism");
    auto m1 = fresh_model(cfg), m2 = fresh_model(cfg);
    const auto r1 = train(*m1, cfg, data, dir / "a.ckpt");
    const auto r2 = train(*m2, cfg, data, dir / "b.ckpt");
    ASSERT_EQ(r1.steps.size(), r2.steps.size());
    for (std::size_t i = 0; i < r1.steps.size(); ++i) EXPECT_EQ(r1.steps[i].loss.total, r2.steps[i].loss.total);
    const auto a = m1->store().entries(), b = m2->store().entries();
    for (std::size_t i = 0; i < a.size(); ++i) {
        for (std::size_t j = 0; j < a[i].value.numel(); ++j) ASSERT_EQ(a[i].value[j], b[i].value[j]) << a[i].name;
    }
    EXPECT_EQ(read_lines(dir / "a.ckpt.log"), read_lines(dir / "b.ckpt.log"));
}

TEST(TrainTest, FrozenParametersUnchangedAndTrainableOnesMove) {
    const auto data = small_split();
    const auto cfg = small_config();
    auto model = fresh_model(cfg);
    const auto before = snapshot(model->foundation_parameters());
    const auto trainable_before = snapshot(model->trainable_parameters());
    const auto r = train(*model, cfg, data, temp_dir("freeze") / "m.ckpt");
    const auto after = snapshot(model->foundation_parameters());
    ASSERT_EQ(before.size(), after.size());
    for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(before[i].values, after[i].values) << before[i].name;
    const auto trainable_after = snapshot(model->trainable_parameters());
    ASSERT_EQ(r.grad_abs_sum.size(), trainable_before.size());
    for (std::size_t i = 0; i < trainable_before.size(); ++i) {
        const bool moved = trainable_before[i].values != trainable_after[i].values;
        if (r.grad_abs_sum.at(trainable_before[i].name) > 0) EXPECT_TRUE(moved) << trainable_before[i].name;
    }
    EXPECT_GT(r.grad_abs_sum.at(kSoftPrompt), 0.0);
}

TEST(TrainTest, StepLogOmitsLocalizationTermsWithoutArtifactModule) {
    auto cfg = small_config();
    cfg.model.toggles.artifact = false;
    auto model = fresh_model(cfg);
    const auto dir = temp_dir("no_artifact");
    train(*model, cfg, small_split(), dir / "m.ckpt");
    const auto lines = read_lines(dir / "m.ckpt.log");
    ASSERT_EQ(lines.size(), 2u);
    for (const auto& line : lines) {
        const auto j = nlohmann::json::parse(line);
        EXPECT_TRUE(j.contains("l_ce"));
        EXPECT_TRUE(j.contains("lr"));
        EXPECT_FALSE(j.contains("l_pixel")) << line;
        EXPECT_FALSE(j.contains("l_patch")) << line;
    }
    EXPECT_TRUE(fs::exists(dir / "m.ckpt"));
    EXPECT_TRUE(fs::exists(dir / "m.ckpt.best"));
    EXPECT_TRUE(fs::exists(dir / "m.ckpt.config"));
}

TEST(TrainTest, NonFiniteLossNamesStepAndComponent) {
    const auto cfg = small_config();
    auto model = fresh_model(cfg);
    Tensor soft = model->soft_prompt();
    soft.mutable_data()[0] = std::numeric_limits<float>::quiet_NaN();
    try {
        train(*model, cfg, small_split(), temp_dir("nan") / "m.ckpt");
        FAIL() << "expected NumericError";
    } catch (const NumericError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("step 0"), std::string::npos) << msg;
        EXPECT_NE(msg.find("component"), std::string::npos) << msg;
    }
}

TEST(TrainTest, NonFiniteLossTermIsNamed) {
    const auto cfg = small_config();
    auto model = fresh_model(cfg);
    Tensor w = model->artifact().box_fc2.bias;
    w.mutable_data()[0] = std::numeric_limits<float>::infinity();
    auto data = generate_split(builtin_styles()[0], "train", 0, 24, 4);
    try {
        train(*model, cfg, data, temp_dir("inf") / "m.ckpt");
        FAIL() << "expected NumericError";
    } catch (const NumericError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("at step "), std::string::npos) << msg;
        EXPECT_NE(msg.find("component loss"), std::string::npos) << msg;
        EXPECT_NE(msg.find("giou"), std::string::npos) << msg;
    }
}

TEST(TrainTest, CheckpointReloadReproducesPredictions) {
    const auto cfg = small_config();
    auto model = fresh_model(cfg);
    const auto dir = temp_dir("reload");
    train(*model, cfg, small_split(), dir / "m.ckpt");
    const auto loaded = load_model(dir / "m.ckpt");
    const auto test = generate_split(builtin_styles()[0], "test", 2, 2, 9);
    const auto a = evaluate(*model, test, "alpha", "test"), b = evaluate(*loaded.model, test, "alpha", "test");
    EXPECT_EQ(a.scores, b.scores);
}

TEST(EvaluateTest, ReportBookkeeping) {
    const auto cfg = small_config();
    auto model = fresh_model(cfg);
    const auto test = generate_split(builtin_styles()[1], "test", 5, 7, 2);
    const auto ev = evaluate(*model, test, "beta", "test");
    EXPECT_EQ(ev.report.n, 12u);
    EXPECT_EQ(ev.report.domain, "beta");
    EXPECT_EQ(ev.report.split, "test");
    ASSERT_EQ(ev.scores.size(), 12u);
    std::size_t boxes = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
        EXPECT_EQ(ev.labels[i], test[i].pair.label);
        EXPECT_EQ(ev.predictions[i], ev.scores[i] > 0.5 ? 1 : 0);
        boxes += test[i].annotation.bbox ? 1 : 0;
    }
    EXPECT_EQ(ev.localization.n, boxes);
}

TEST(AblationTest, VariantGrid) {
    const auto v = ablation_variants();
    ASSERT_EQ(v.size(), 8u);
    std::size_t modules = 0, prompts = 0;
    for (const auto& x : v) (x.grid == "modules" ? modules : prompts)++;
    EXPECT_EQ(modules, 4u);
    EXPECT_EQ(prompts, 4u);
    EXPECT_FALSE(v[0].toggles.cross_modal || v[0].toggles.artifact);
    EXPECT_FALSE(v[6].toggles.soft_prompt || v[6].toggles.answer_heuristics);
}

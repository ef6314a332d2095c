#include <gtest/gtest.h>

#include <filesystem>

#include <fusionrl/refine.hpp>

using namespace fusionrl;

namespace {

const ArenaConfig& arena() {
    static const ArenaConfig c = ArenaConfig::defaults();
    return c;
}

std::filesystem::path scratch(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("fusionrl_" + name);
    std::filesystem::remove_all(p);
    return p;
}

std::vector<Transition> collect(std::size_t n, std::uint64_t seed) {
    Actor actor(arena(), FusionNetwork<float>(ArchitectureId::LateAcc, 1), seed);
    std::vector<Transition> ts;
    for (std::size_t i = 0; i < n; ++i) ts.push_back(actor.step(0.5));
    return ts;
}

} // namespace

TEST(Refine, SelfDistillationWithoutNoiseIsAFixedPoint) {
    const FusionNetwork<double> teacher(ArchitectureId::LateAcc, 3);
    FusionNetwork<double> student = teacher;
    nn::RmsProp<double> opt;
    Rng rng(1);
    const auto ts = collect(16, 2);
    EXPECT_EQ(refine_step(student, teacher, opt, ts, rng), 0.0);
    for (auto& p : student.parameters())
        for (double g : p.grad) ASSERT_EQ(g, 0.0);
    EXPECT_EQ(student.flat_parameters(), teacher.flat_parameters());
}

TEST(Refine, LossMatchesStoredOrAllActionValues) {
    const FusionNetwork<double> teacher(ArchitectureId::LateAcc, 3);
    const FusionNetwork<double> other(ArchitectureId::LateAcc, 4);
    const auto ts = collect(8, 2);
    double stored = 0.0, all = 0.0;
    for (const auto& t : ts) {
        const auto qt = q_values(teacher, t.obs, nn::Mode::Eval);
        const auto qs = q_values(other, t.obs, nn::Mode::Eval);
        for (std::size_t a = 0; a < qt.size(); ++a) {
            const double e2 = (qs[a] - qt[a]) * (qs[a] - qt[a]);
            all += e2;
            if (a == static_cast<std::size_t>(t.action)) stored += e2;
        }
    }
    stored /= static_cast<double>(ts.size());
    all /= static_cast<double>(ts.size());

    nn::RmsProp<double> opt;
    Rng rng(1);
    FusionNetwork<double> s1 = other, s2 = other;
    EXPECT_NEAR(refine_step(s1, teacher, opt, ts, rng, false), stored, 1e-9 * stored);
    nn::RmsProp<double> opt2;
    EXPECT_NEAR(refine_step(s2, teacher, opt2, ts, rng, true), all, 1e-9 * all);
    EXPECT_GT(all, stored);
}

TEST(Refine, StepNeverTouchesTheTeacher) {
    const FusionNetwork<float> teacher(ArchitectureId::LateAcc, 3);
    const auto before = teacher.flat_parameters();
    FusionNetwork<float> student = teacher;
    student.set_regularization({0.5, 0.025});
    nn::RmsProp<float> opt({1e-3, 0.95, 1e-6});
    Rng rng(1);
    const auto ts = collect(32, 5);
    double loss = 0.0;
    for (int i = 0; i < 5; ++i) loss = refine_step(student, teacher, opt, ts, rng);
    EXPECT_GE(loss, 0.0);
    EXPECT_EQ(teacher.flat_parameters(), before);
    EXPECT_NE(student.flat_parameters(), before);
}

TEST(Refine, NonLateAccTeacherIsRejected) {
    const FusionNetwork<float> teacher(ArchitectureId::Single, 3);
    const auto dir = scratch("refine_reject");
    std::filesystem::create_directories(dir);
    write_pool_file(dir / "a.pool", collect(40, 1), 128);
    RefineConfig cfg;
    cfg.refine_batches = 1;
    EXPECT_THROW(refine(teacher, {dir / "a.pool"}, cfg, 1), ConfigError);
    std::filesystem::remove_all(dir);
}

TEST(Refine, CorpusHasExactlyTheRequestedSize) {
    const FusionNetwork<float> teacher(ArchitectureId::LateAcc, 4);
    RefineConfig cfg;
    cfg.corpus_size = 250;
    cfg.corpus_file_size = 100;
    const auto dir = scratch("corpus");
    const auto files = generate_refine_corpus(teacher, arena(), cfg, dir, 9);
    ASSERT_EQ(files.size(), 3u);
    std::uint64_t total = 0;
    for (const auto& f : files) {
        total += pool_file_count(f);
        for (const auto& t : read_pool_file(f)) {
            ASSERT_EQ(t.obs.available, kAllSensors);
            ASSERT_GE(t.reward, -1.0);
            ASSERT_LE(t.reward, 0.0);
        }
    }
    EXPECT_EQ(total, 250u);
    std::filesystem::remove_all(dir);
}

TEST(Refine, LossTrendsDownOnAFixedCorpus) {
    const FusionNetwork<float> teacher(ArchitectureId::LateAcc, 4);
    const auto dir = scratch("refine_trend");
    RefineConfig cfg;
    cfg.corpus_size = 400;
    cfg.corpus_file_size = 200;
    cfg.refine_batches = 600;
    cfg.metrics_interval = 50;
    cfg.learning_rate = 1e-3;
    cfg.pool_capacity = 400;
    const auto files = generate_refine_corpus(teacher, arena(), cfg, dir, 3);
    std::vector<double> losses;
    const auto student = refine(teacher, files, cfg, 5, [&](const RefineMetricsRow& r) { losses.push_back(r.loss); });
    ASSERT_EQ(losses.size(), 12u);
    const double early = (losses[0] + losses[1] + losses[2]) / 3.0;
    const double late = (losses[9] + losses[10] + losses[11]) / 3.0;
    EXPECT_LT(late, early);
    EXPECT_EQ(student.architecture(), ArchitectureId::LateAcc);
    EXPECT_EQ(student.param_count(), 272263u);
    EXPECT_EQ(student.regularization().droppath_rate, 0.5);
    std::filesystem::remove_all(dir);
}

TEST(Refine, WarmupBatchesLeaveWeightsUnchanged) {
    const FusionNetwork<float> teacher(ArchitectureId::LateAcc, 4);
    const auto dir = scratch("refine_warmup");
    std::filesystem::create_directories(dir);
    write_pool_file(dir / "a.pool", collect(200, 7), 128);
    RefineConfig cfg;
    cfg.refine_batches = 20;
    cfg.warmup_batches = 20;
    cfg.pool_capacity = 200;
    const auto frozen = refine(teacher, {dir / "a.pool"}, cfg, 3);
    EXPECT_EQ(frozen.flat_parameters(), teacher.flat_parameters());
    cfg.warmup_batches = 19;
    const auto moved = refine(teacher, {dir / "a.pool"}, cfg, 3);
    EXPECT_NE(moved.flat_parameters(), teacher.flat_parameters());
    std::filesystem::remove_all(dir);
}

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include <fusionrl/fusion.hpp>

namespace fs = std::filesystem;
using namespace fusionrl;

namespace {

struct CliResult {
    int code = -1;
    std::string out;
};

fs::path scratch() {
    static const fs::path dir = [] {
        auto d = fs::temp_directory_path() / ("fusionrl_cli_test_" + std::to_string(::getpid()));
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

CliResult cli(const std::string& args) {
    const fs::path log = scratch() / "last_output.txt";
    const std::string cmd = "FUSIONRL_OUTPUT_ROOT='" + (scratch() / "runs").string() + "' '" + FUSIONRL_CLI + "' " +
                            args + " > '" + log.string() + "' 2>&1";
    const int status = std::system(cmd.c_str());
    CliResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream in(log);
    std::stringstream ss;
    ss << in.rdbuf();
    r.out = ss.str();
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// A run small enough for unit tests.
fs::path tiny_config() {
    const fs::path p = scratch() / "tiny.cfg";
    if (!fs::exists(p)) {
        std::ofstream out(p);
        out << "[train]\ntotal_batches = 60\nmetrics_interval = 20\nepsilon_anneal_steps = 200\n"
               "target_sync_interval = 25\n[pool]\ncapacity = 500\nmin_fill = 64\n"
               "[refine]\nrefine_batches = 20\ncorpus_size = 120\ncorpus_file_size = 50\npool_capacity = 100\n"
               "metrics_interval = 10\n";
    }
    return p;
}

std::string tiny() { return " --config '" + tiny_config().string() + "' "; }

std::string strip_output_dir(const std::string& manifest) {
    std::istringstream in(manifest);
    std::string line, out;
    while (std::getline(in, line))
        if (line.rfind("output_dir=", 0) != 0) out += line + "\n";
    return out;
}

} // namespace

TEST(Cli, AuditParamsPrintsEveryArchitectureAndSucceeds) {
    const auto r = cli("audit-params");
    EXPECT_EQ(r.code, 0) << r.out;
    for (auto id : kAllArchitectures) {
        EXPECT_NE(r.out.find(std::string(architecture_name(id))), std::string::npos);
        EXPECT_NE(r.out.find(std::to_string(reference_param_count(id))), std::string::npos);
    }
    EXPECT_EQ(r.out.find("MISMATCH"), std::string::npos);
}

TEST(Cli, AuditParamsFailsOnPerturbedLayer) {
    const auto r = cli("audit-params --perturb-layer late-conv");
    EXPECT_EQ(r.code, 1) << r.out;
    EXPECT_NE(r.out.find("MISMATCH"), std::string::npos);
}

TEST(Cli, UsageAndConfigErrorsExitWithTwo) {
    EXPECT_EQ(cli("").code, 2);
    EXPECT_EQ(cli("frobnicate").code, 2);
    EXPECT_EQ(cli("train --arch late-sum" + tiny()).code, 2);
    EXPECT_EQ(cli("train --set train.gama=0.9" + tiny()).code, 2);
    EXPECT_EQ(cli("train --set train.gamma=1.5" + tiny()).code, 2);
    EXPECT_EQ(cli("eval --policy random --sensors rear").code, 2);
    EXPECT_EQ(cli("eval").code, 2);
    EXPECT_FALSE(fs::exists(scratch() / "runs")) << "failed runs must not leave output behind";
}

TEST(Cli, DeterministicRunsAreBitIdentical) {
    const auto a = scratch() / "det_a";
    const auto b = scratch() / "det_b";
    const std::string common = "train --arch late-acc --actors 1 --deterministic --seed 5" + tiny();
    ASSERT_EQ(cli(common + "--out '" + a.string() + "'").code, 0);
    ASSERT_EQ(cli(common + "--out '" + b.string() + "'").code, 0);
    EXPECT_EQ(strip_output_dir(slurp(a / "manifest.txt")), strip_output_dir(slurp(b / "manifest.txt")));
    const auto metrics = slurp(a / "metrics.csv");
    EXPECT_EQ(metrics, slurp(b / "metrics.csv"));
    EXPECT_EQ(std::count(metrics.begin(), metrics.end(), '\n'), 1 + 3);
    const auto ckpt = slurp(a / "checkpoint.frlp");
    ASSERT_FALSE(ckpt.empty());
    EXPECT_EQ(ckpt, slurp(b / "checkpoint.frlp"));
    EXPECT_EQ(FusionNetwork<float>::load(a / "checkpoint.frlp").architecture(), ArchitectureId::LateAcc);

    // a different seed changes the run
    const auto c = scratch() / "det_c";
    ASSERT_EQ(cli("train --arch late-acc --actors 1 --deterministic --seed 6" + tiny() + "--out '" + c.string() + "'")
                  .code,
              0);
    EXPECT_NE(ckpt, slurp(c / "checkpoint.frlp"));
}

TEST(Cli, ExistingOutputNeedsForce) {
    const auto d = scratch() / "force";
    const std::string cmd = "train --actors 1 --deterministic" + tiny() + "--out '" + d.string() + "'";
    ASSERT_EQ(cli(cmd).code, 0);
    const auto again = cli(cmd);
    EXPECT_EQ(again.code, 2);
    EXPECT_NE(again.out.find("--force"), std::string::npos);
    EXPECT_EQ(cli(cmd + " --force").code, 0);
    for (const auto& e : fs::directory_iterator(scratch()))
        EXPECT_EQ(e.path().filename().string().find(".partial-"), std::string::npos) << e.path();
}

TEST(Cli, ManifestRecordsOverrides) {
    const auto d = scratch() / "manifest";
    ASSERT_EQ(cli("train --actors 1 --deterministic --set train.gamma=0.9" + tiny() + "--out '" + d.string() + "'").code,
              0);
    const auto m = slurp(d / "manifest.txt");
    EXPECT_NE(m.find("command=train"), std::string::npos);
    EXPECT_NE(m.find("config.train.gamma=0.9"), std::string::npos);
    EXPECT_NE(m.find("config.train.deterministic=true"), std::string::npos);
    EXPECT_NE(m.find("architecture=single"), std::string::npos);
}

TEST(Cli, DefaultOutputGoesUnderTheOutputRoot) {
    ASSERT_EQ(cli("train --actors 1 --deterministic --seed 77" + tiny()).code, 0);
    EXPECT_TRUE(fs::exists(scratch() / "runs" / "train-single-s77" / "checkpoint.frlp"));
    fs::remove_all(scratch() / "runs");
}

TEST(Cli, RefinePipelineAndTeacherCheck) {
    const auto single = scratch() / "teacher_single";
    const auto acc = scratch() / "teacher_acc";
    ASSERT_EQ(cli("train --actors 1 --deterministic" + tiny() + "--out '" + single.string() + "'").code, 0);
    ASSERT_EQ(cli("train --arch late-acc --actors 1 --deterministic" + tiny() + "--out '" + acc.string() + "'").code, 0);

    const auto bad = cli("refine --teacher '" + (single / "checkpoint.frlp").string() + "'" + tiny() + "--out '" +
                         (scratch() / "refine_bad").string() + "'");
    EXPECT_EQ(bad.code, 2);
    EXPECT_NE(bad.out.find("late-acc"), std::string::npos);
    EXPECT_FALSE(fs::exists(scratch() / "refine_bad"));

    const auto corpus = scratch() / "corpus";
    ASSERT_EQ(cli("gen-corpus --teacher '" + (acc / "checkpoint.frlp").string() + "'" + tiny() + "--out '" +
                  corpus.string() + "'")
                  .code,
              0);
    std::size_t pools = 0;
    for (const auto& e : fs::directory_iterator(corpus)) pools += e.path().extension() == ".pool";
    EXPECT_EQ(pools, 3u);

    const auto refined = scratch() / "refined";
    const auto r = cli("refine --teacher '" + (acc / "checkpoint.frlp").string() + "' --corpus '" + corpus.string() +
                       "'" + tiny() + "--out '" + refined.string() + "'");
    ASSERT_EQ(r.code, 0) << r.out;
    const auto student = FusionNetwork<float>::load(refined / "checkpoint.frlp");
    EXPECT_EQ(student.architecture(), ArchitectureId::LateAcc);
    EXPECT_EQ(student.param_count(), reference_param_count(ArchitectureId::LateAcc));
    const auto metrics = slurp(refined / "refine_metrics.csv");
    EXPECT_EQ(std::count(metrics.begin(), metrics.end(), '\n'), 1 + 2);
}

TEST(Cli, EvalWritesReportsForBothSensorSets) {
    const auto acc = scratch() / "eval_acc";
    ASSERT_EQ(cli("train --arch late-acc --actors 1 --deterministic" + tiny() + "--out '" + acc.string() + "'").code, 0);
    const auto suite = scratch() / "suite.txt";
    {
        std::ofstream out(suite);
        out << "fusionrl-eval-suite v1\n# three seeds\n11\n12\n13\n";
    }
    for (const std::string sensors : {"all", "front"}) {
        const auto d = scratch() / ("eval_" + sensors);
        const auto r = cli("eval --checkpoint '" + (acc / "checkpoint.frlp").string() + "' --sensors " + sensors +
                           " --suite '" + suite.string() + "' --dump-trajectories --out '" + d.string() + "'");
        ASSERT_EQ(r.code, 0) << r.out;
        const auto reports = slurp(d / "reports.csv");
        EXPECT_EQ(std::count(reports.begin(), reports.end(), '\n'), 1 + 3);
        EXPECT_TRUE(fs::exists(d / "summary.csv"));
        EXPECT_TRUE(fs::exists(d / "trajectories" / "seed_12.csv"));
        EXPECT_NE(slurp(d / "manifest.txt").find("sensors=" + sensors), std::string::npos);
    }
    const auto rnd = cli("eval --policy random --suite '" + suite.string() + "' --out '" +
                         (scratch() / "eval_random").string() + "'");
    EXPECT_EQ(rnd.code, 0) << rnd.out;
}

TEST(Cli, MissingCheckpointIsAConfigError) {
    const auto r = cli("eval --checkpoint '" + (scratch() / "nope.frlp").string() + "' --out '" +
                       (scratch() / "eval_missing").string() + "'");
    EXPECT_EQ(r.code, 2);
}

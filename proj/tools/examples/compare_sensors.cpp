// Evaluates a checkpoint on the standard seed suite with every sensor and
// with the robot sensor only, next to the random baseline.
//
//   compare_sensors <checkpoint.frlp> [episodes]

#include <cstdio>
#include <cstdlib>

#include <fusionrl/eval.hpp>
#include <fusionrl/stats.hpp>

using namespace fusionrl;

int main(int argc, char** argv) {
    if (argc < 2) {
        std::fprintf(stderr, "usage: %s <checkpoint.frlp> [episodes]\n", argv[0]);
        return 2;
    }
    const auto net = FusionNetwork<float>::load(std::filesystem::path(argv[1]));
    const std::size_t episodes = argc > 2 ? std::strtoul(argv[2], nullptr, 10) : 100;
    const auto arena = ArenaConfig::defaults();

    auto run = [&](const char* label, const EvalPolicy& policy, SensorMask sensors) {
        auto suite = standard_suite(sensors);
        suite.seeds.resize(std::min(episodes, suite.seeds.size()));
        const auto reports = evaluate(policy, suite, arena);
        const auto sum = summarize(reports);
        std::printf("%-22s median %8.3f  IQR [%8.3f, %8.3f]  within 5 cm %.2f\n", label, sum.median, sum.q1, sum.q3,
                    sum.cdf(arena.grip_tolerance));
        return returns_of(reports);
    };
    const auto all = run("greedy, all sensors", EvalPolicy::greedy(net), kAllSensors);
    const auto front = run("greedy, front only", EvalPolicy::greedy(net), kFrontOnly);
    const auto rnd = run("random", EvalPolicy::random(1), kAllSensors);
    std::printf("P(all > random) one-sided Mann-Whitney p = %.3g\n", stats::mann_whitney(all, rnd).p_greater);
    std::printf("P(all > front)  one-sided Mann-Whitney p = %.3g\n", stats::mann_whitney(all, front).p_greater);
}

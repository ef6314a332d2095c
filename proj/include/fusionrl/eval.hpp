#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "arena.hpp"
#include "errors.hpp"
#include "fusion.hpp"
#include "random.hpp"
#include "stats.hpp"

namespace fusionrl {

struct EvalSuite {
    std::vector<std::uint64_t> seeds;
    SensorMask sensors = kAllSensors;
    int max_steps = 100;

    void validate() const {
        if (seeds.empty()) throw ConfigError("evaluation suite has no seeds");
        if (!sensors[0]) throw ConfigError("the robot-mounted sensor cannot be disabled");
        if (max_steps < 1) throw ConfigError("evaluation max_steps must be >= 1");
    }
};

inline constexpr std::uint64_t kStandardSuiteBase = 0x5EEDF00DULL;
inline constexpr std::size_t kStandardSuiteSize = 100;

/// The fixed start-configuration suite; data/eval_suite_v1.txt holds the
/// same seeds.
inline EvalSuite standard_suite(SensorMask sensors = kAllSensors) {
    EvalSuite s;
    s.sensors = sensors;
    for (std::size_t i = 0; i < kStandardSuiteSize; ++i) s.seeds.push_back(derive_seed(kStandardSuiteBase, i));
    return s;
}

/// Suite file: a "fusionrl-eval-suite v1" header line, then one seed per
/// line. '#' starts a comment.
inline EvalSuite load_suite(const std::filesystem::path& path, SensorMask sensors = kAllSensors) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open evaluation suite '" + path.string() + "'");
    std::string line;
    if (!std::getline(in, line) || line.rfind("fusionrl-eval-suite v1", 0) != 0)
        throw FormatError("'" + path.string() + "' is not a v1 evaluation suite");
    EvalSuite s;
    s.sensors = sensors;
    while (std::getline(in, line)) {
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        std::istringstream ls(line);
        std::uint64_t seed;
        if (ls >> seed) s.seeds.push_back(seed);
        else if (line.find_first_not_of(" \t\r") != std::string::npos)
            throw FormatError("bad seed line in '" + path.string() + "': " + line);
    }
    s.validate();
    return s;
}

inline void write_suite(const std::filesystem::path& path, const EvalSuite& s) {
    std::ofstream out(path);
    out << "fusionrl-eval-suite v1\n";
    for (auto seed : s.seeds) out << seed << '\n';
    if (!out) throw FormatError("failed to write evaluation suite '" + path.string() + "'");
}

struct RolloutReport {
    std::uint64_t seed = 0;
    double total_return = 0.0;       ///< undiscounted
    double final_can_distance = 0.0; ///< meters, can to grip target
    StepCause cause = StepCause::Running;
    int steps = 0;
    int collisions = 0;

    friend bool operator==(const RolloutReport&, const RolloutReport&) = default;
};

/// A checkpoint rolled out greedily, or the uniform random baseline when
/// `network` is empty.
struct EvalPolicy {
    const FusionNetwork<float>* network = nullptr;
    std::uint64_t random_seed = 0;

    static EvalPolicy greedy(const FusionNetwork<float>& net) { return {&net, 0}; }
    static EvalPolicy random(std::uint64_t seed) { return {nullptr, seed}; }
};

inline RolloutReport rollout(const EvalPolicy& policy, std::uint64_t seed, const EvalSuite& suite,
                             const ArenaConfig& arena, TrajectoryWriter* trajectory = nullptr) {
    ArenaConfig cfg = arena;
    cfg.max_steps = suite.max_steps;
    cfg.finalize();
    ArenaEnv env(cfg, suite.sensors);
    Observation obs = env.reset(seed);
    Rng rng(derive_seed(policy.random_seed, seed));
    if (trajectory) trajectory->start(env.state());
    RolloutReport r;
    r.seed = seed;
    for (;;) {
        const Action a = policy.network ? greedy_action(*policy.network, obs)
                                        : static_cast<Action>(uniform_index(rng, kActionCount));
        const StepResult res = env.step(a);
        r.total_return += res.reward;
        r.collisions += res.collided ? 1 : 0;
        if (trajectory) trajectory->record(env.state(), a, res);
        obs = res.observation;
        if (res.terminal) {
            r.cause = res.cause;
            break;
        }
    }
    r.steps = env.state().steps_elapsed;
    r.final_can_distance = distance(env.state().can, grip_target(env.state().robot, cfg));
    return r;
}

/// One report per suite seed, in suite order. Rollouts are independent, so
/// the result does not depend on `threads`.
inline std::vector<RolloutReport> evaluate(const EvalPolicy& policy, const EvalSuite& suite, const ArenaConfig& arena,
                                           unsigned threads = 1) {
    suite.validate();
    arena.require_finalized();
    if (policy.network && policy.network->rays() != static_cast<std::size_t>(arena.lidar_rays))
        throw ConfigError("checkpoint expects " + std::to_string(policy.network->rays()) + " rays but the arena has " +
                          std::to_string(arena.lidar_rays));
    std::vector<RolloutReport> out(suite.seeds.size());
    threads = std::clamp<unsigned>(threads, 1, static_cast<unsigned>(suite.seeds.size()));
    if (threads == 1) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = rollout(policy, suite.seeds[i], suite, arena);
        return out;
    }
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < threads; ++w)
        pool.emplace_back([&, w] {
            for (std::size_t i = w; i < out.size(); i += threads) out[i] = rollout(policy, suite.seeds[i], suite, arena);
        });
    for (auto& t : pool) t.join();
    return out;
}

inline constexpr double kCdfResolution = 0.01;

struct EvalSummary {
    std::size_t count = 0;
    double min = 0, q1 = 0, median = 0, q3 = 0, max = 0, mean = 0;
    std::vector<double> sorted_distances;
    /// (distance, fraction <= distance) on a kCdfResolution grid from 0 up to
    /// the first grid point covering every rollout.
    std::vector<std::pair<double, double>> distance_cdf;

    double cdf(double d) const { return stats::ecdf(sorted_distances, d); }
};

inline EvalSummary summarize(const std::vector<RolloutReport>& reports) {
    if (reports.empty()) throw ContractViolation("summarize() needs at least one report");
    std::vector<double> returns;
    EvalSummary s;
    s.count = reports.size();
    for (const auto& r : reports) {
        returns.push_back(r.total_return);
        s.sorted_distances.push_back(r.final_can_distance);
    }
    std::sort(returns.begin(), returns.end());
    std::sort(s.sorted_distances.begin(), s.sorted_distances.end());
    s.min = returns.front();
    s.max = returns.back();
    s.q1 = stats::quantile_sorted(returns, 0.25);
    s.median = stats::quantile_sorted(returns, 0.5);
    s.q3 = stats::quantile_sorted(returns, 0.75);
    double sum = 0.0;
    for (double r : returns) sum += r;
    s.mean = sum / static_cast<double>(returns.size());
    const auto cells = static_cast<std::size_t>(std::ceil(s.sorted_distances.back() / kCdfResolution));
    for (std::size_t i = 0; i <= cells; ++i) {
        const double d = static_cast<double>(i) * kCdfResolution;
        s.distance_cdf.emplace_back(d, s.cdf(d));
    }
    if (s.distance_cdf.back().second < 1.0) s.distance_cdf.emplace_back(static_cast<double>(cells + 1) * kCdfResolution, 1.0);
    return s;
}

inline std::vector<double> returns_of(const std::vector<RolloutReport>& reports) {
    std::vector<double> out;
    for (const auto& r : reports) out.push_back(r.total_return);
    return out;
}

/// reports.csv: seed,return,final_can_distance,cause,steps,collisions
inline void write_reports_csv(std::ostream& out, const std::vector<RolloutReport>& reports) {
    out << "seed,return,final_can_distance,cause,steps,collisions\n" << std::setprecision(17);
    for (const auto& r : reports)
        out << r.seed << ',' << r.total_return << ',' << r.final_can_distance << ',' << cause_name(r.cause) << ','
            << r.steps << ',' << r.collisions << '\n';
}

/// summary.csv: kind,key,value with kind "return" (box plot statistics) or
/// "cdf" (distance in meters, cumulative fraction).
inline void write_summary_csv(std::ostream& out, const EvalSummary& s) {
    out << "kind,key,value\n" << std::setprecision(17);
    out << "return,count," << s.count << '\n';
    out << "return,min," << s.min << '\n';
    out << "return,q1," << s.q1 << '\n';
    out << "return,median," << s.median << '\n';
    out << "return,q3," << s.q3 << '\n';
    out << "return,max," << s.max << '\n';
    out << "return,mean," << s.mean << '\n';
    char key[32];
    for (const auto& [d, f] : s.distance_cdf) {
        std::snprintf(key, sizeof key, "%.2f", d);
        out << "cdf," << key << ',' << f << '\n';
    }
}

inline std::optional<SensorMask> parse_sensor_set(std::string_view name) {
    if (name == "all") return kAllSensors;
    if (name == "front") return kFrontOnly;
    return std::nullopt;
}

} // namespace fusionrl

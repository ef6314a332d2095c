// fusionrl: train, refine, evaluate and audit the sensor-fusion Q-networks.
//
// Exit codes: 0 success, 1 audit mismatch, 2 configuration or usage error,
// 3 runtime failure.

#include <CLI11.hpp>

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <unistd.h>
#include <vector>

#include <fusionrl/arena.hpp>
#include <fusionrl/config.hpp>
#include <fusionrl/eval.hpp>
#include <fusionrl/fusion.hpp>
#include <fusionrl/refine.hpp>
#include <fusionrl/train.hpp>

namespace fs = std::filesystem;
using namespace fusionrl;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitAuditMismatch = 1;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct CommonOptions {
    std::string config_path;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
    std::string out;
    bool force = false;
    bool quiet = false;
};

/// What a run needs to be reproduced: echoed to manifest.txt.
struct RunManifest {
    std::string command;
    std::string config_path;
    fs::path output_dir;
    std::uint64_t seed = 0;
    std::string architecture;
    std::vector<std::pair<std::string, std::string>> extra;
    std::map<std::string, std::string> config;

    void write(const fs::path& path) const {
        std::ofstream out(path);
        out << "command=" << command << '\n'
            << "config=" << config_path << '\n'
            << "output_dir=" << output_dir.string() << '\n'
            << "seed=" << seed << '\n'
            << "architecture=" << architecture << '\n';
        for (const auto& [k, v] : extra) out << k << '=' << v << '\n';
        for (const auto& [k, v] : config) out << "config." << k << '=' << v << '\n';
        if (!out) throw FormatError("cannot write manifest '" + path.string() + "'");
    }
};

/// Output directory that only appears under its final name once the
/// command has succeeded.
class StagedOutput {
public:
    StagedOutput(fs::path final_dir, bool force) : final_(std::move(final_dir)), force_(force) {
        if (fs::exists(final_) && !force_)
            throw ConfigError("output directory '" + final_.string() + "' already exists (use --force to replace it)");
        if (final_.has_parent_path()) fs::create_directories(final_.parent_path());
        staging_ = final_;
        staging_ += ".partial-" + std::to_string(::getpid());
        fs::remove_all(staging_);
        fs::create_directories(staging_);
    }
    StagedOutput(const StagedOutput&) = delete;
    StagedOutput& operator=(const StagedOutput&) = delete;
    ~StagedOutput() {
        if (!committed_) {
            std::error_code ec;
            fs::remove_all(staging_, ec);
        }
    }

    const fs::path& dir() const { return staging_; }
    const fs::path& final_dir() const { return final_; }

    void commit() {
        if (force_ && fs::exists(final_)) fs::remove_all(final_);
        fs::rename(staging_, final_);
        committed_ = true;
    }

private:
    fs::path final_, staging_;
    bool force_;
    bool committed_ = false;
};

KeyValueConfig load_config(const CommonOptions& o) {
    KeyValueConfig kv = o.config_path.empty() ? KeyValueConfig{} : KeyValueConfig::load(o.config_path);
    for (const auto& a : o.overrides) kv.set_assignment(a);
    return kv;
}

fs::path output_root() {
    if (const char* env = std::getenv("FUSIONRL_OUTPUT_ROOT"); env && *env) return env;
    return "runs";
}

fs::path resolve_out(const CommonOptions& o, const std::string& default_name) {
    return o.out.empty() ? output_root() / default_name : fs::path(o.out);
}

/// Every section is parsed by every command so one file serves the whole
/// pipeline and typos are caught wherever it is used.
struct RunConfig {
    ArenaConfig arena;
    TrainConfig train;
    PoolConfig pool;
    RefineConfig refine;
    int eval_max_steps = 0;
};

RunConfig parse_run_config(KeyValueConfig& kv) {
    RunConfig c;
    c.arena = arena_config_from(kv);
    c.train = train_config_from(kv);
    c.pool = pool_config_from(kv);
    c.refine = refine_config_from(kv);
    c.eval_max_steps = kv.get<int>("eval.max_steps", c.arena.max_steps);
    if (c.eval_max_steps < 1) throw ConfigError("eval.max_steps must be >= 1");
    kv.get<std::string>("run.arch", "");
    kv.get<std::uint64_t>("run.seed", 0);
    kv.reject_unused();
    return c;
}

std::uint64_t resolve_seed(const CommonOptions& o, const KeyValueConfig& kv) {
    const auto from_file = kv.get<std::uint64_t>("run.seed", 1);
    return o.seed.value_or(from_file);
}

ArchitectureId resolve_arch(const std::string& flag, const KeyValueConfig& kv) {
    const std::string name = flag.empty() ? kv.get<std::string>("run.arch", "single") : flag;
    const auto id = parse_architecture(name);
    if (!id) throw ConfigError("unknown architecture '" + name + "' (expected single, early-small, early-large, "
                               "late-concat, late-conv or late-acc)");
    return *id;
}

void add_common(CLI::App* cmd, CommonOptions& o) {
    cmd->add_option("-c,--config", o.config_path, "key=value config file ([section] headers allowed)")
        ->check(CLI::ExistingFile);
    cmd->add_option("--set", o.overrides, "override a config key, e.g. --set train.gamma=0.95")->allow_extra_args(false);
    cmd->add_option("--seed", o.seed, "master seed (default: run.seed or 1)");
    cmd->add_option("-o,--out", o.out, "output directory (default: $FUSIONRL_OUTPUT_ROOT/<name>, root 'runs')");
    cmd->add_flag("--force", o.force, "replace an existing output directory");
    cmd->add_flag("-q,--quiet", o.quiet, "no progress output");
}

std::string fmt(double v) {
    std::ostringstream s;
    s << std::setprecision(6) << v;
    return s.str();
}

// ---------------------------------------------------------------------------

struct TrainOptions {
    std::string arch;
    std::optional<std::size_t> actors;
    bool deterministic = false;
};

int cmd_train(const CommonOptions& o, const TrainOptions& t) {
    auto kv = load_config(o);
    const auto arch = resolve_arch(t.arch, kv);
    const auto seed = resolve_seed(o, kv);
    if (t.actors) kv.set("train.actor_count", std::to_string(*t.actors));
    if (t.deterministic) kv.set("train.deterministic", "true");
    const auto rc = parse_run_config(kv);
    const auto& arena = rc.arena;
    const auto& train_cfg = rc.train;
    const auto& pool_cfg = rc.pool;

    StagedOutput out(resolve_out(o, "train-" + std::string(architecture_name(arch)) + "-s" + std::to_string(seed)),
                     o.force);
    RunManifest m{"train", o.config_path, out.final_dir(), seed, std::string(architecture_name(arch)), {}, kv.entries()};
    m.write(out.dir() / "manifest.txt");

    std::ofstream metrics(out.dir() / "metrics.csv");
    write_metrics_header(metrics);
    DqnTrainer trainer(arch, seed, train_cfg, arena, pool_cfg);
    const auto start = std::chrono::steady_clock::now();
    TrainHooks hooks;
    std::uint64_t rows = 0;
    hooks.on_metrics = [&](const MetricsRow& r) {
        write_metrics_row(metrics, r);
        if (!o.quiet && ++rows % 50 == 0) {
            const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            std::cerr << "[train] batch " << r.batch << "/" << train_cfg.total_batches << " loss " << fmt(r.loss)
                      << " mean max Q " << fmt(r.mean_max_q) << " eps " << fmt(r.epsilon) << " (" << fmt(secs)
                      << " s)\n";
        }
    };
    hooks.on_checkpoint = [&](std::uint64_t batch, const FusionNetwork<float>& net) {
        if (batch == train_cfg.total_batches)
            net.save(out.dir() / "checkpoint.frlp");
        else
            net.save(out.dir() / ("checkpoint_" + std::to_string(batch) + ".frlp"));
    };
    trainer.run(hooks);
    metrics.close();
    if (!metrics) throw FormatError("failed to write metrics.csv");
    out.commit();
    if (!o.quiet) std::cerr << "[train] wrote " << (out.final_dir() / "checkpoint.frlp").string() << '\n';
    return kExitOk;
}

// ---------------------------------------------------------------------------

struct RefineOptions {
    std::string teacher;
    std::string corpus;
};

FusionNetwork<float> load_checkpoint(const std::string& path) {
    if (path.empty()) throw ConfigError("a checkpoint path is required");
    if (!fs::exists(path)) throw ConfigError("checkpoint '" + path + "' does not exist");
    return FusionNetwork<float>::load(fs::path(path));
}

void require_late_acc(const FusionNetwork<float>& teacher) {
    if (teacher.architecture() != ArchitectureId::LateAcc)
        throw ConfigError("refinement needs a late-acc teacher, got " +
                          std::string(architecture_name(teacher.architecture())));
}

std::vector<fs::path> list_corpus(const fs::path& dir) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ".pool") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw ConfigError("no .pool files in corpus directory '" + dir.string() + "'");
    return files;
}

int cmd_gen_corpus(const CommonOptions& o, const RefineOptions& r) {
    auto kv = load_config(o);
    const auto seed = resolve_seed(o, kv);
    const auto teacher = load_checkpoint(r.teacher);
    require_late_acc(teacher);
    const auto rc = parse_run_config(kv);
    const auto& arena = rc.arena;
    const auto& cfg = rc.refine;
    StagedOutput out(resolve_out(o, "corpus-s" + std::to_string(seed)), o.force);
    RunManifest m{"gen-corpus", o.config_path, out.final_dir(), seed, "late-acc", {{"teacher", r.teacher}},
                  kv.entries()};
    m.write(out.dir() / "manifest.txt");
    const auto files = generate_refine_corpus(teacher, arena, cfg, out.dir(), derive_seed(seed, 31));
    out.commit();
    if (!o.quiet) std::cerr << "[gen-corpus] wrote " << files.size() << " pool files\n";
    return kExitOk;
}

int cmd_refine(const CommonOptions& o, const RefineOptions& r) {
    auto kv = load_config(o);
    const auto seed = resolve_seed(o, kv);
    const auto teacher = load_checkpoint(r.teacher);
    require_late_acc(teacher);
    const auto rc = parse_run_config(kv);
    const auto& arena = rc.arena;
    const auto& cfg = rc.refine;
    StagedOutput out(resolve_out(o, "refine-s" + std::to_string(seed)), o.force);
    RunManifest m{"refine",       o.config_path, out.final_dir(), seed, "late-acc",
                  {{"teacher", r.teacher}, {"corpus", r.corpus.empty() ? "generated" : r.corpus}}, kv.entries()};
    m.write(out.dir() / "manifest.txt");

    std::vector<fs::path> files;
    if (r.corpus.empty()) {
        if (!o.quiet) std::cerr << "[refine] generating " << cfg.corpus_size << " transitions\n";
        files = generate_refine_corpus(teacher, arena, cfg, out.dir() / "corpus", derive_seed(seed, 31));
    } else {
        files = list_corpus(r.corpus);
    }
    std::ofstream metrics(out.dir() / "refine_metrics.csv");
    metrics << "batch,loss,pool_size\n" << std::setprecision(9);
    std::uint64_t rows = 0;
    const auto student = refine(teacher, files, cfg, seed, [&](const RefineMetricsRow& row) {
        metrics << row.batch << ',' << row.loss << ',' << row.pool_size << '\n';
        if (!o.quiet && ++rows % 50 == 0)
            std::cerr << "[refine] batch " << row.batch << "/" << cfg.refine_batches << " loss " << fmt(row.loss) << '\n';
    });
    metrics.close();
    student.save(out.dir() / "checkpoint.frlp");
    out.commit();
    if (!o.quiet)
        std::cerr << "[refine] wrote " << (out.final_dir() / "checkpoint.frlp").string() << " ("
                  << student.param_count() << " parameters)\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------

struct EvalOptions {
    std::string checkpoint;
    std::string policy = "greedy";
    std::string sensors = "all";
    std::string suite;
    unsigned threads = 1;
    bool dump_trajectories = false;
};

int cmd_eval(const CommonOptions& o, const EvalOptions& e) {
    auto kv = load_config(o);
    const auto seed = resolve_seed(o, kv);
    const auto rc = parse_run_config(kv);
    const auto& arena = rc.arena;
    const auto max_steps = rc.eval_max_steps;
    const auto sensors = parse_sensor_set(e.sensors);
    if (!sensors) throw ConfigError("--sensors must be 'front' or 'all'");
    EvalSuite suite = e.suite.empty() ? standard_suite(*sensors) : load_suite(e.suite, *sensors);
    suite.max_steps = max_steps;

    std::optional<FusionNetwork<float>> net;
    EvalPolicy policy = EvalPolicy::random(derive_seed(seed, 41));
    std::string label = "random";
    if (e.policy == "greedy") {
        net.emplace(load_checkpoint(e.checkpoint));
        policy = EvalPolicy::greedy(*net);
        label = std::string(architecture_name(net->architecture()));
    } else if (e.policy != "random") {
        throw ConfigError("--policy must be 'greedy' or 'random'");
    }

    StagedOutput out(resolve_out(o, "eval-" + label + "-" + e.sensors + "-s" + std::to_string(seed)), o.force);
    RunManifest m{"eval",
                  o.config_path,
                  out.final_dir(),
                  seed,
                  label,
                  {{"policy", e.policy},
                   {"checkpoint", e.checkpoint},
                   {"sensors", e.sensors},
                   {"suite", e.suite.empty() ? "builtin-v1" : e.suite},
                   {"max_steps", std::to_string(suite.max_steps)}},
                  kv.entries()};
    m.write(out.dir() / "manifest.txt");

    const auto reports = evaluate(policy, suite, arena, e.threads);
    if (e.dump_trajectories) {
        fs::create_directories(out.dir() / "trajectories");
        for (auto s : suite.seeds) {
            std::ofstream f(out.dir() / "trajectories" / ("seed_" + std::to_string(s) + ".csv"));
            TrajectoryWriter w(f);
            rollout(policy, s, suite, arena, &w);
        }
    }
    const auto summary = summarize(reports);
    {
        std::ofstream f(out.dir() / "reports.csv");
        write_reports_csv(f, reports);
    }
    {
        std::ofstream f(out.dir() / "summary.csv");
        write_summary_csv(f, summary);
    }
    out.commit();
    if (!o.quiet)
        std::cout << label << " sensors=" << e.sensors << " rollouts=" << summary.count << " median="
                  << fmt(summary.median) << " q1=" << fmt(summary.q1) << " q3=" << fmt(summary.q3)
                  << " mean=" << fmt(summary.mean) << " grip<=5cm=" << fmt(summary.cdf(arena.grip_tolerance)) << '\n';
    return kExitOk;
}

// ---------------------------------------------------------------------------

int cmd_audit(const std::string& perturb) {
    bool ok = true;
    std::cout << std::left << std::setw(14) << "architecture" << std::right << std::setw(10) << "params"
              << std::setw(11) << "reference" << "  status\n";
    for (auto id : kAllArchitectures) {
        auto spec = architecture_spec(id);
        // test hook: corrupt one layer dimension of the named architecture
        if (!perturb.empty() && perturb == architecture_name(id)) spec.conv1_filters += 1;
        const std::size_t computed = param_count(spec);
        std::size_t built = computed;
        if (perturb.empty()) built = FusionNetwork<float>(id, 0).param_count();
        const bool match = computed == reference_param_count(id) && built == computed;
        ok = ok && match;
        std::cout << std::left << std::setw(14) << architecture_name(id) << std::right << std::setw(10) << computed
                  << std::setw(11) << reference_param_count(id) << "  " << (match ? "ok" : "MISMATCH") << '\n';
    }
    return ok ? kExitOk : kExitAuditMismatch;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"fusionrl: multi-lidar sensor-fusion DQN toolkit"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all");

    CommonOptions common;
    TrainOptions train;
    RefineOptions refine_opts;
    EvalOptions eval_opts;
    std::string perturb;

    auto* train_cmd = app.add_subcommand("train", "train a Q-network with DQN");
    add_common(train_cmd, common);
    train_cmd->add_option("-a,--arch", train.arch, "architecture (default: run.arch or single)");
    train_cmd->add_option("--actors", train.actors, "number of actor workers")->check(CLI::PositiveNumber);
    train_cmd->add_flag("--deterministic", train.deterministic, "step actors on the learner thread (reproducible)");

    auto* gen_cmd = app.add_subcommand("gen-corpus", "roll out a late-acc teacher into refinement pool files");
    add_common(gen_cmd, common);
    gen_cmd->add_option("-t,--teacher", refine_opts.teacher, "teacher checkpoint")->required();

    auto* refine_cmd = app.add_subcommand("refine", "DropPath distillation of a late-acc teacher");
    add_common(refine_cmd, common);
    refine_cmd->add_option("-t,--teacher", refine_opts.teacher, "teacher checkpoint")->required();
    refine_cmd->add_option("--corpus", refine_opts.corpus, "reuse pool files from this directory")
        ->check(CLI::ExistingDirectory);

    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint or the random baseline on the seed suite");
    add_common(eval_cmd, common);
    eval_cmd->add_option("--checkpoint", eval_opts.checkpoint, "checkpoint to evaluate greedily");
    eval_cmd->add_option("--policy", eval_opts.policy, "greedy (needs --checkpoint) or random")
        ->check(CLI::IsMember({"greedy", "random"}));
    eval_cmd->add_option("--sensors", eval_opts.sensors, "available sensors: all or front")
        ->check(CLI::IsMember({"all", "front"}));
    eval_cmd->add_option("--suite", eval_opts.suite, "seed suite file (default: built-in v1 suite)")
        ->check(CLI::ExistingFile);
    eval_cmd->add_option("--threads", eval_opts.threads, "parallel rollouts")->check(CLI::PositiveNumber);
    eval_cmd->add_flag("--dump-trajectories", eval_opts.dump_trajectories, "write one trajectory CSV per seed");

    auto* audit_cmd = app.add_subcommand("audit-params", "check every architecture's parameter count");
    audit_cmd->add_option("--perturb-layer", perturb, "corrupt one architecture's first conv width (test hook)")
        ->group("");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (*train_cmd) return cmd_train(common, train);
        if (*gen_cmd) return cmd_gen_corpus(common, refine_opts);
        if (*refine_cmd) return cmd_refine(common, refine_opts);
        if (*eval_cmd) {
            if (eval_opts.policy == "greedy" && eval_opts.checkpoint.empty())
                throw ConfigError("eval needs --checkpoint unless --policy random");
            return cmd_eval(common, eval_opts);
        }
        if (*audit_cmd) return cmd_audit(perturb);
    } catch (const ConfigError& e) {
        std::cerr << "fusionrl: configuration error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "fusionrl: error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitConfig;
}

#pragma once

#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "arena.hpp"
#include "config.hpp"
#include "fusion.hpp"
#include "nn/loss.hpp"
#include "nn/rmsprop.hpp"
#include "replay.hpp"
#include "train.hpp"

namespace fusionrl {

struct RefineConfig {
    double droppath_rate = 0.5;
    double ray_dropout_rate = 0.025;
    std::uint64_t refine_batches = 1'000'000;
    std::uint64_t corpus_size = 5'000'000;
    std::uint64_t corpus_file_size = 1'000'000; ///< transitions per pool file
    std::size_t pool_capacity = 1'000'000;      ///< in-memory window while streaming files
    double epsilon_gen = 0.1;
    bool match_all_actions = true;  ///< regress all action values, not only the stored one
    std::size_t batch_size = 32;
    double learning_rate = 1e-4;
    std::uint64_t warmup_batches = 200; ///< leading batches that fill RMSProp accumulators without moving weights
    double rms_decay = 0.95;
    double rms_epsilon = 1e-6;
    std::uint64_t metrics_interval = 100;

    void validate() const {
        auto rate = [](double r) { return r >= 0.0 && r <= 1.0; };
        if (!rate(droppath_rate) || !rate(ray_dropout_rate) || !rate(epsilon_gen))
            throw ConfigError("refine rates must lie in [0, 1]");
        if (batch_size < 1 || corpus_file_size < 1 || pool_capacity < batch_size || metrics_interval < 1)
            throw ConfigError("refine sizes must be positive");
        if (!(learning_rate > 0.0)) throw ConfigError("refine learning_rate must be positive");
    }
};

inline RefineConfig refine_config_from(const KeyValueConfig& kv, const std::string& p = "refine.") {
    RefineConfig c;
    c.droppath_rate = kv.get(p + "droppath_rate", c.droppath_rate);
    c.ray_dropout_rate = kv.get(p + "ray_dropout_rate", c.ray_dropout_rate);
    c.refine_batches = kv.get(p + "refine_batches", c.refine_batches);
    c.corpus_size = kv.get(p + "corpus_size", c.corpus_size);
    c.corpus_file_size = kv.get(p + "corpus_file_size", c.corpus_file_size);
    c.pool_capacity = kv.get(p + "pool_capacity", c.pool_capacity);
    c.epsilon_gen = kv.get(p + "epsilon_gen", c.epsilon_gen);
    c.match_all_actions = kv.get(p + "match_all_actions", c.match_all_actions);
    c.batch_size = kv.get(p + "batch_size", c.batch_size);
    c.learning_rate = kv.get(p + "learning_rate", c.learning_rate);
    c.warmup_batches = kv.get(p + "warmup_batches", c.warmup_batches);
    c.rms_decay = kv.get(p + "rms_decay", c.rms_decay);
    c.rms_epsilon = kv.get(p + "rms_epsilon", c.rms_epsilon);
    c.metrics_interval = kv.get(p + "metrics_interval", c.metrics_interval);
    c.validate();
    return c;
}

/// Distillation update: the frozen teacher scores each stored (s, a) with
/// every sensor present; the student sees the same state through freshly
/// sampled DropPath and ray-dropout masks and regresses onto the teacher's
/// action values (squared error summed over actions, averaged over the batch).
/// Without `all_actions` only the stored action's value is regressed.
template <typename T>
double refine_step(FusionNetwork<T>& student, const FusionNetwork<T>& teacher, nn::RmsProp<T>& opt,
                   const std::vector<Transition>& batch, Rng& rng, bool all_actions = true) {
    std::vector<const Observation*> obs;
    obs.reserve(batch.size());
    for (const auto& t : batch) obs.push_back(&t.obs);
    const auto clean = assemble_input<T>(teacher.architecture(), obs, teacher.rays());
    const auto q_teacher = teacher.infer(clean);
    const auto noisy = assemble_input<T>(student.architecture(), obs, student.rays(), &student.regularization(), &rng);
    const auto q_student = student.forward(noisy, nn::Mode::Train);

    const std::size_t n = batch.size();
    nn::Tensor<T> grad(q_student.shape());
    double loss = 0.0;
    for (std::size_t b = 0; b < n; ++b) {
        const auto stored = static_cast<std::size_t>(batch[b].action);
        const std::size_t lo = all_actions ? 0 : stored;
        const std::size_t hi = all_actions ? q_student.shape()[1] : stored + 1;
        for (std::size_t a = lo; a < hi; ++a) {
            const auto lg =
                nn::squared_error(static_cast<double>(q_student.at(b, a)), static_cast<double>(q_teacher.at(b, a)));
            loss += lg.loss;
            grad.at(b, a) = static_cast<T>(lg.grad / static_cast<double>(n));
        }
    }
    student.zero_grad();
    student.backward(grad);
    opt.step(student.parameters());
    return loss / static_cast<double>(n);
}

/// Rolls out the teacher ε-greedily with every sensor available and streams
/// exactly `cfg.corpus_size` transitions into numbered pool files under `dir`.
inline std::vector<std::filesystem::path> generate_refine_corpus(const FusionNetwork<float>& teacher,
                                                                 const ArenaConfig& arena, const RefineConfig& cfg,
                                                                 const std::filesystem::path& dir, std::uint64_t seed) {
    std::filesystem::create_directories(dir);
    Actor actor(arena, teacher, seed, kAllSensors);
    std::vector<std::filesystem::path> files;
    std::uint64_t written = 0;
    while (written < cfg.corpus_size) {
        char name[32];
        std::snprintf(name, sizeof name, "corpus_%04zu.pool", files.size());
        files.push_back(dir / name);
        PoolFileWriter w(files.back(), static_cast<std::size_t>(arena.lidar_rays));
        const std::uint64_t n = std::min(cfg.corpus_file_size, cfg.corpus_size - written);
        for (std::uint64_t i = 0; i < n; ++i) w.write(actor.step(cfg.epsilon_gen));
        w.close();
        written += n;
    }
    return files;
}

struct RefineMetricsRow {
    std::uint64_t batch = 0;
    double loss = 0.0;
    std::size_t pool_size = 0;
};

/// Streams corpus files through a FIFO window and runs refine_batches
/// distillation updates, spread over the files in proportion to their size.
/// The first warmup_batches of them fill the RMSProp accumulators and leave
/// the weights unchanged.
/// Returns the refined student (architecture and parameter count unchanged).
inline FusionNetwork<float> refine(const FusionNetwork<float>& teacher, const std::vector<std::filesystem::path>& corpus,
                                   const RefineConfig& cfg, std::uint64_t seed,
                                   const std::function<void(const RefineMetricsRow&)>& on_metrics = {}) {
    cfg.validate();
    if (teacher.architecture() != ArchitectureId::LateAcc)
        throw ConfigError("refinement requires a late-acc teacher, got " +
                          std::string(architecture_name(teacher.architecture())));
    if (corpus.empty()) throw ConfigError("refinement corpus is empty");
    FusionNetwork<float> student = teacher;
    student.set_regularization({cfg.droppath_rate, cfg.ray_dropout_rate});
    nn::RmsProp<float> opt({cfg.learning_rate, cfg.rms_decay, cfg.rms_epsilon});
    ReplayPool window({cfg.pool_capacity, cfg.batch_size, 0});
    Rng rng(derive_seed(seed, 21));

    std::uint64_t total = 0;
    std::vector<std::uint64_t> counts;
    for (const auto& f : corpus) {
        counts.push_back(pool_file_count(f));
        total += counts.back();
    }
    if (total == 0) throw ConfigError("refinement corpus holds no transitions");

    std::uint64_t done = 0, seen = 0;
    double acc = 0.0;
    std::uint64_t acc_n = 0;
    for (std::size_t k = 0; k < corpus.size(); ++k) {
        for (auto& t : read_pool_file(corpus[k])) window.push(std::move(t));
        seen += counts[k];
        const std::uint64_t until = cfg.refine_batches * seen / total;
        if (window.size() < cfg.batch_size) continue;
        for (; done < until; ++done) {
            opt.set_learning_rate(done < cfg.warmup_batches ? 0.0 : cfg.learning_rate);
            acc += refine_step(student, teacher, opt, window.sample(cfg.batch_size, rng), rng, cfg.match_all_actions);
            ++acc_n;
            if ((done + 1) % cfg.metrics_interval == 0) {
                if (on_metrics) on_metrics({done + 1, acc / static_cast<double>(acc_n), window.size()});
                acc = 0.0;
                acc_n = 0;
            }
        }
    }
    return student;
}

} // namespace fusionrl

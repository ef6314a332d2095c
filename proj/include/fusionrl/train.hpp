#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <concepts>
#include <condition_variable>
#include <functional>
#include <iomanip>
#include <memory>
#include <mutex>
#include <thread>
#include <vector>

#include "arena.hpp"
#include "config.hpp"
#include "fusion.hpp"
#include "nn/loss.hpp"
#include "nn/rmsprop.hpp"
#include "random.hpp"
#include "replay.hpp"

namespace fusionrl {

struct TrainConfig {
    double gamma = 0.99;
    double learning_rate = 1e-4;
    double rms_decay = 0.95;
    double rms_epsilon = 1e-6;
    double huber_delta = 1.0;
    std::size_t batch_size = 32;
    std::uint64_t total_batches = 1'500'000;
    std::uint64_t target_sync_interval = 10'000;
    double epsilon_start = 1.0;
    double epsilon_end = 0.1;
    std::uint64_t epsilon_anneal_steps = 1'000'000; ///< environment steps
    std::size_t actor_count = 1;
    bool deterministic = false;         ///< run actors and learner interleaved on one thread
    std::uint64_t env_steps_per_batch = 4;
    std::uint64_t snapshot_refresh_steps = 1'000; ///< per actor
    std::uint64_t publish_interval = 250;         ///< batches between policy snapshots
    std::uint64_t metrics_interval = 100;
    std::uint64_t checkpoint_interval = 0; ///< 0 = final checkpoint only

    void validate() const {
        if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in [0, 1]");
        if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
        if (!(epsilon_end <= epsilon_start)) throw ConfigError("epsilon_end must not exceed epsilon_start");
        if (!(epsilon_end > 0.0 && epsilon_start <= 1.0)) throw ConfigError("epsilon bounds must lie in (0, 1]");
        if (batch_size < 1 || target_sync_interval < 1 || actor_count < 1 || metrics_interval < 1 ||
            snapshot_refresh_steps < 1 || publish_interval < 1 || epsilon_anneal_steps < 1)
            throw ConfigError("train counts and intervals must be positive");
    }
};

inline TrainConfig train_config_from(const KeyValueConfig& kv, const std::string& p = "train.") {
    TrainConfig c;
    c.gamma = kv.get(p + "gamma", c.gamma);
    c.learning_rate = kv.get(p + "learning_rate", c.learning_rate);
    c.rms_decay = kv.get(p + "rms_decay", c.rms_decay);
    c.rms_epsilon = kv.get(p + "rms_epsilon", c.rms_epsilon);
    c.huber_delta = kv.get(p + "huber_delta", c.huber_delta);
    c.batch_size = kv.get(p + "batch_size", c.batch_size);
    c.total_batches = kv.get(p + "total_batches", c.total_batches);
    c.target_sync_interval = kv.get(p + "target_sync_interval", c.target_sync_interval);
    c.epsilon_start = kv.get(p + "epsilon_start", c.epsilon_start);
    c.epsilon_end = kv.get(p + "epsilon_end", c.epsilon_end);
    c.epsilon_anneal_steps = kv.get(p + "epsilon_anneal_steps", c.epsilon_anneal_steps);
    c.actor_count = kv.get(p + "actor_count", c.actor_count);
    c.deterministic = kv.get(p + "deterministic", c.deterministic);
    c.env_steps_per_batch = kv.get(p + "env_steps_per_batch", c.env_steps_per_batch);
    c.snapshot_refresh_steps = kv.get(p + "snapshot_refresh_steps", c.snapshot_refresh_steps);
    c.publish_interval = kv.get(p + "publish_interval", c.publish_interval);
    c.metrics_interval = kv.get(p + "metrics_interval", c.metrics_interval);
    c.checkpoint_interval = kv.get(p + "checkpoint_interval", c.checkpoint_interval);
    c.validate();
    return c;
}

inline PoolConfig pool_config_from(const KeyValueConfig& kv, const std::string& p = "pool.") {
    PoolConfig c;
    c.capacity = kv.get(p + "capacity", c.capacity);
    c.batch_size = kv.get(p + "batch_size", c.batch_size);
    c.min_fill = kv.get(p + "min_fill", c.min_fill);
    c.validate();
    return c;
}

/// Exponential annealing from epsilon_start to epsilon_end over
/// epsilon_anneal_steps, constant afterwards.
inline double epsilon(std::uint64_t t, const TrainConfig& cfg) {
    if (t >= cfg.epsilon_anneal_steps) return cfg.epsilon_end;
    const double frac = static_cast<double>(t) / static_cast<double>(cfg.epsilon_anneal_steps);
    return std::max(cfg.epsilon_end, cfg.epsilon_start * std::exp(frac * std::log(cfg.epsilon_end / cfg.epsilon_start)));
}

/// What the learner needs from a Q-network. FusionNetwork and nn::Sequential
/// both qualify.
template <typename Net>
concept QNetwork = requires(Net& net, const Net& cnet, const typename Net::Input& in,
                            const nn::Tensor<typename Net::Scalar>& g) {
    { cnet.infer(in) } -> std::same_as<nn::Tensor<typename Net::Scalar>>;
    { net.forward(in, nn::Mode::Train) } -> std::same_as<nn::Tensor<typename Net::Scalar>>;
    net.backward(g);
    net.zero_grad();
    { net.parameters() } -> std::same_as<std::vector<nn::ParamRef<typename Net::Scalar>>>;
};

template <typename Net>
struct QBatch {
    typename Net::Input states;
    typename Net::Input next_states;
    std::vector<std::size_t> actions;
    std::vector<double> rewards;
    std::vector<std::uint8_t> terminal;

    std::size_t size() const { return actions.size(); }
};

struct StepStats {
    double loss = 0.0;
    double mean_max_q = 0.0; ///< batch mean of max_a Q(s, a; online)
};

/// Double-Q bootstrap targets: the online network picks a* at s', the target
/// network scores it. Terminal transitions use the reward alone.
template <typename T>
std::vector<double> double_q_targets(const nn::Tensor<T>& q_next_online, const nn::Tensor<T>& q_next_target,
                                     const std::vector<double>& rewards, const std::vector<std::uint8_t>& terminal,
                                     double gamma) {
    const std::size_t n = rewards.size(), a = q_next_online.dim(1);
    std::vector<double> y(n);
    for (std::size_t b = 0; b < n; ++b) {
        y[b] = rewards[b];
        if (terminal[b]) continue;
        std::size_t best = 0;
        for (std::size_t i = 1; i < a; ++i)
            if (q_next_online.at(b, i) > q_next_online.at(b, best)) best = i;
        y[b] += gamma * static_cast<double>(q_next_target.at(b, best));
    }
    return y;
}

/// One learner update: mean pseudo-Huber loss between Q(s, a; online) and the
/// double-Q target, then a single RMSProp step on the online parameters.
template <QNetwork Net>
StepStats train_step(Net& online, const Net& target, nn::RmsProp<typename Net::Scalar>& opt, const QBatch<Net>& batch,
                     const TrainConfig& cfg) {
    using T = typename Net::Scalar;
    const std::size_t n = batch.size();
    const nn::Tensor<T> q = online.forward(batch.states, nn::Mode::Train);
    const nn::Tensor<T> qn_online = online.infer(batch.next_states);
    const nn::Tensor<T> qn_target = target.infer(batch.next_states);
    const auto y = double_q_targets(qn_online, qn_target, batch.rewards, batch.terminal, cfg.gamma);

    StepStats stats;
    nn::Tensor<T> grad(q.shape());
    const std::size_t a = q.dim(1);
    for (std::size_t b = 0; b < n; ++b) {
        const auto lg = nn::pseudo_huber(static_cast<double>(q.at(b, batch.actions[b])), y[b], cfg.huber_delta);
        stats.loss += lg.loss;
        grad.at(b, batch.actions[b]) = static_cast<T>(lg.grad / static_cast<double>(n));
        double m = static_cast<double>(q.at(b, 0));
        for (std::size_t i = 1; i < a; ++i) m = std::max(m, static_cast<double>(q.at(b, i)));
        stats.mean_max_q += m;
    }
    stats.loss /= static_cast<double>(n);
    stats.mean_max_q /= static_cast<double>(n);
    online.zero_grad();
    online.backward(grad);
    opt.step(online.parameters());
    return stats;
}

template <typename T>
QBatch<FusionNetwork<T>> make_batch(const FusionNetwork<T>& net, const std::vector<Transition>& ts) {
    std::vector<const Observation*> s, sn;
    QBatch<FusionNetwork<T>> batch;
    for (const auto& t : ts) {
        s.push_back(&t.obs);
        sn.push_back(&t.next_obs);
        batch.actions.push_back(static_cast<std::size_t>(t.action));
        batch.rewards.push_back(t.reward);
        batch.terminal.push_back(t.terminal ? 1 : 0);
    }
    batch.states = assemble_input<T>(net.architecture(), s, net.rays());
    batch.next_states = assemble_input<T>(net.architecture(), sn, net.rays());
    return batch;
}

// ---------------------------------------------------------------------------
// actors

/// Latest published policy parameters; a whole-vector swap so readers never
/// observe a partially updated snapshot.
class PolicyBoard {
public:
    void publish(std::vector<float> params) {
        auto p = std::make_shared<const std::vector<float>>(std::move(params));
        std::lock_guard lock(mutex_);
        latest_ = std::move(p);
        ++version_;
    }
    std::shared_ptr<const std::vector<float>> latest() const {
        std::lock_guard lock(mutex_);
        return latest_;
    }
    std::uint64_t version() const {
        std::lock_guard lock(mutex_);
        return version_;
    }

private:
    mutable std::mutex mutex_;
    std::shared_ptr<const std::vector<float>> latest_;
    std::uint64_t version_ = 0;
};

/// Step-cap truncation is not a true terminal state: the target still
/// bootstraps from s'.
inline bool is_bootstrap_terminal(const StepResult& r) { return r.terminal && r.cause != StepCause::StepCap; }

/// One ε-greedy agent with its own simulator and policy snapshot.
class Actor {
public:
    Actor(const ArenaConfig& arena, FusionNetwork<float> policy, std::uint64_t seed,
          SensorMask sensors = kAllSensors)
        : env_(arena, sensors), policy_(std::move(policy)), rng_(derive_seed(seed, 1)), seed_(seed) {
        obs_ = env_.reset(derive_seed(seed_, 1000 + episodes_));
    }

    void set_policy(std::span<const float> params) { policy_.load_flat_parameters(params); }
    const FusionNetwork<float>& policy() const { return policy_; }

    /// Acts once, returns the stored transition.
    Transition step(double eps) {
        Action a;
        if (bernoulli(rng_, eps))
            a = static_cast<Action>(uniform_index(rng_, kActionCount));
        else
            a = greedy_action(policy_, obs_);
        StepResult r = env_.step(a);
        Transition t{obs_, a, r.reward, r.observation, is_bootstrap_terminal(r)};
        ++steps_;
        if (r.terminal) {
            ++episodes_;
            obs_ = env_.reset(derive_seed(seed_, 1000 + episodes_));
        } else {
            obs_ = std::move(r.observation);
        }
        return t;
    }

    /// Refreshes the snapshot from `board` every `refresh` steps.
    Transition step(double eps, ReplayPool& pool, const PolicyBoard& board, std::uint64_t refresh) {
        if (steps_ % refresh == 0) {
            if (auto p = board.latest()) set_policy(*p);
        }
        Transition t = step(eps);
        pool.push(t);
        return t;
    }

    std::uint64_t steps() const { return steps_; }
    std::uint64_t episodes() const { return episodes_; }

private:
    ArenaEnv env_;
    FusionNetwork<float> policy_;
    Rng rng_;
    std::uint64_t seed_;
    std::uint64_t steps_ = 0;
    std::uint64_t episodes_ = 0;
    Observation obs_;
};

/// Runs `actor` for `steps` environment steps with a fixed ε, pushing every
/// transition into `pool`.
inline void actor_loop(Actor& actor, double eps, ReplayPool& pool, const PolicyBoard& board, std::uint64_t steps,
                       std::uint64_t refresh) {
    for (std::uint64_t i = 0; i < steps; ++i) actor.step(eps, pool, board, refresh);
}

// ---------------------------------------------------------------------------
// learner

struct MetricsRow {
    std::uint64_t batch = 0;
    double loss = 0.0;
    double mean_max_q = 0.0;
    double epsilon = 0.0;
    std::size_t pool_size = 0;
};

inline void write_metrics_header(std::ostream& out) { out << "batch,loss,mean_max_q,epsilon,pool_size\n"; }
inline void write_metrics_row(std::ostream& out, const MetricsRow& r) {
    out << r.batch << ',' << std::setprecision(9) << r.loss << ',' << r.mean_max_q << ',' << r.epsilon << ','
        << r.pool_size << '\n';
}

struct TrainHooks {
    std::function<void(const MetricsRow&)> on_metrics;
    std::function<void(std::uint64_t batch, const FusionNetwork<float>&)> on_checkpoint;
};

/// DQN learner with double-Q targets, a hard-synced target network and a
/// pool fed by ε-greedy actors.
class DqnTrainer {
public:
    DqnTrainer(ArchitectureId arch, std::uint64_t seed, TrainConfig cfg, ArenaConfig arena, PoolConfig pool_cfg)
        : cfg_(cfg), arena_(std::move(arena)), online_(arch, derive_seed(seed, 7), static_cast<std::size_t>(arena_.lidar_rays)),
          target_(online_),
          opt_({cfg.learning_rate, cfg.rms_decay, cfg.rms_epsilon}), pool_(pool_cfg), rng_(derive_seed(seed, 11)),
          seed_(seed) {
        cfg_.validate();
        arena_.require_finalized();
        board_.publish(online_.flat_parameters());
    }

    const TrainConfig& config() const { return cfg_; }
    FusionNetwork<float>& online() { return online_; }
    const FusionNetwork<float>& target() const { return target_; }
    ReplayPool& pool() { return pool_; }
    const PolicyBoard& board() const { return board_; }
    std::uint64_t batches_done() const { return batches_; }

    void sync_target() { target_.load_flat_parameters(online_.flat_parameters()); }

    /// Samples a batch, performs one update and applies the sync schedule.
    StepStats train_batch() {
        const auto ts = pool_.sample(cfg_.batch_size, rng_);
        const auto batch = make_batch(online_, ts);
        const auto stats = train_step(online_, target_, opt_, batch, cfg_);
        ++batches_;
        if (batches_ % cfg_.target_sync_interval == 0) sync_target();
        if (batches_ % cfg_.publish_interval == 0) board_.publish(online_.flat_parameters());
        return stats;
    }

    /// Trains to total_batches. Actors are stepped on this thread when
    /// deterministic, otherwise each runs on its own thread. Either way batch
    /// b starts only after min_fill + b * env_steps_per_batch env steps.
    void run(const TrainHooks& hooks = {}) {
        std::vector<Actor> actors;
        for (std::size_t i = 0; i < cfg_.actor_count; ++i)
            actors.emplace_back(arena_, online_, derive_seed(seed_, 100 + i));
        if (cfg_.deterministic)
            run_interleaved(actors, hooks);
        else
            run_threaded(actors, hooks);
        if (hooks.on_checkpoint) hooks.on_checkpoint(batches_, online_);
    }

    std::uint64_t env_steps() const { return env_steps_.load(); }

private:
    std::uint64_t env_budget(std::uint64_t batches) const {
        return pool_.config().min_fill + batches * cfg_.env_steps_per_batch;
    }

    void after_batch(const StepStats& s, const TrainHooks& hooks) {
        acc_loss_ += s.loss;
        acc_q_ += s.mean_max_q;
        ++acc_n_;
        if (batches_ % cfg_.metrics_interval == 0) {
            if (hooks.on_metrics)
                hooks.on_metrics({batches_, acc_loss_ / acc_n_, acc_q_ / acc_n_, epsilon(env_steps_.load(), cfg_),
                                  pool_.size()});
            acc_loss_ = acc_q_ = 0.0;
            acc_n_ = 0;
        }
        if (cfg_.checkpoint_interval && batches_ % cfg_.checkpoint_interval == 0 && batches_ < cfg_.total_batches &&
            hooks.on_checkpoint)
            hooks.on_checkpoint(batches_, online_);
    }

    void run_interleaved(std::vector<Actor>& actors, const TrainHooks& hooks) {
        std::size_t next_actor = 0;
        auto act_until = [&](std::uint64_t budget) {
            while (env_steps_.load() < budget) {
                actors[next_actor].step(epsilon(env_steps_.load(), cfg_), pool_, board_, cfg_.snapshot_refresh_steps);
                ++env_steps_;
                next_actor = (next_actor + 1) % actors.size();
            }
        };
        act_until(std::max<std::uint64_t>(env_budget(0), cfg_.batch_size));
        while (batches_ < cfg_.total_batches) {
            act_until(env_budget(batches_ + 1));
            after_batch(train_batch(), hooks);
        }
    }

    void run_threaded(std::vector<Actor>& actors, const TrainHooks& hooks) {
        std::mutex m;
        std::condition_variable cv;
        std::atomic<bool> stop{false};
        std::atomic<std::uint64_t> allowed{std::max<std::uint64_t>(env_budget(0), cfg_.batch_size)};
        std::atomic<std::uint64_t> claimed{env_steps_.load()};
        std::vector<std::thread> threads;
        for (auto& actor : actors) {
            threads.emplace_back([&, a = &actor] {
                while (!stop.load()) {
                    std::uint64_t ticket = claimed.load();
                    if (ticket >= allowed.load()) {
                        std::unique_lock lock(m);
                        cv.wait(lock, [&] { return stop.load() || claimed.load() < allowed.load(); });
                        continue;
                    }
                    if (!claimed.compare_exchange_weak(ticket, ticket + 1)) continue;
                    a->step(epsilon(ticket, cfg_), pool_, board_, cfg_.snapshot_refresh_steps);
                    ++env_steps_;
                    { std::lock_guard lock(m); }
                    cv.notify_all();
                }
            });
        }
        auto wait_for = [&](std::uint64_t target) {
            std::unique_lock lock(m);
            cv.wait(lock, [&] { return env_steps_.load() >= target; });
        };
        wait_for(allowed.load());
        while (batches_ < cfg_.total_batches) {
            // Actors may run one batch's worth of steps ahead of the learner.
            {
                std::lock_guard lock(m);
                allowed.store(env_budget(batches_ + 2));
            }
            cv.notify_all();
            wait_for(env_budget(batches_ + 1));
            after_batch(train_batch(), hooks);
        }
        {
            std::lock_guard lock(m);
            stop.store(true);
        }
        cv.notify_all();
        for (auto& t : threads) t.join();
    }

    TrainConfig cfg_;
    ArenaConfig arena_;
    FusionNetwork<float> online_;
    FusionNetwork<float> target_;
    nn::RmsProp<float> opt_;
    ReplayPool pool_;
    PolicyBoard board_;
    Rng rng_;
    std::uint64_t seed_;
    std::uint64_t batches_ = 0;
    std::atomic<std::uint64_t> env_steps_{0};
    double acc_loss_ = 0.0, acc_q_ = 0.0;
    std::uint64_t acc_n_ = 0;
};

} // namespace fusionrl

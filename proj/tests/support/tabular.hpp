#pragma once

// Drives the production DQN update on a two-state, two-action MDP with a
// linear Q-network over one-hot states.

#include <array>

#include <fusionrl/nn/sequential.hpp>
#include <fusionrl/train.hpp>

#include "oracles.hpp"

namespace oracle {

struct TabularRun {
    std::array<std::array<double, 2>, 2> learned{};
    std::array<std::array<double, 2>, 2> exact{};
    double max_abs_error = 0.0;
};

inline TabularRun run_tabular_dqn(const TabularMdp& mdp, std::uint64_t seed, std::size_t batches = 30000) {
    using namespace fusionrl;
    nn::Sequential<double> online;
    online.add(nn::FullyConnected<double>(2, 2));
    Rng init(seed);
    online.init(init);
    nn::Sequential<double> target = online;

    TrainConfig cfg;
    cfg.gamma = mdp.gamma;
    cfg.huber_delta = 1.0;
    nn::RmsProp<double> opt({1e-2, 0.95, 1e-6});
    Rng rng(derive_seed(seed, 1));
    constexpr std::size_t batch = 32;
    const std::size_t sync = 100;
    for (std::size_t b = 0; b < batches; ++b) {
        // learning-rate steps down so the final iterate settles
        if (b == batches / 2) opt.set_learning_rate(1e-3);
        if (b == batches * 4 / 5) opt.set_learning_rate(1e-4);
        QBatch<nn::Sequential<double>> q;
        q.states = nn::Tensor<double>({batch, 2});
        q.next_states = nn::Tensor<double>({batch, 2});
        for (std::size_t i = 0; i < batch; ++i) {
            const auto s = static_cast<int>(uniform_index(rng, 2));
            const auto a = static_cast<int>(uniform_index(rng, 2));
            q.states.at(i, static_cast<std::size_t>(s)) = 1.0;
            q.next_states.at(i, static_cast<std::size_t>(mdp.next[s][a])) = 1.0;
            q.actions.push_back(static_cast<std::size_t>(a));
            q.rewards.push_back(mdp.reward[s][a]);
            q.terminal.push_back(0);
        }
        train_step(online, target, opt, q, cfg);
        if ((b + 1) % sync == 0) nn::copy_parameters(target, online);
    }
    TabularRun out;
    out.exact = value_iteration(mdp);
    const auto eye = nn::Tensor<double>({2, 2}, {1, 0, 0, 1});
    const auto q = online.infer(eye);
    for (int s = 0; s < 2; ++s)
        for (int a = 0; a < 2; ++a) {
            out.learned[s][a] = q.at(static_cast<std::size_t>(s), static_cast<std::size_t>(a));
            out.max_abs_error = std::max(out.max_abs_error, std::abs(out.learned[s][a] - out.exact[s][a]));
        }
    return out;
}

} // namespace oracle

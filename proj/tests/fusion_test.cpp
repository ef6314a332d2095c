#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include <fusionrl/fusion.hpp>

#include "support/oracles.hpp"

using namespace fusionrl;

namespace {

// Straight-line forward pass over the network's own parameter blocks:
// plain nested loops, no im2col, no Eigen.
struct NaiveNet {
    std::vector<std::vector<double>> blocks;
    std::size_t at = 0;
    const std::vector<double>& next() { return blocks.at(at++); }
};

std::vector<double> naive_conv(const std::vector<double>& x, std::size_t cin, std::size_t len, const std::vector<double>& w,
                               const std::vector<double>& b, std::size_t cout, std::size_t k, std::size_t stride,
                               std::size_t pad, std::size_t& out_len) {
    out_len = (len + 2 * pad - k) / stride + 1;
    std::vector<double> y(cout * out_len);
    for (std::size_t o = 0; o < cout; ++o)
        for (std::size_t p = 0; p < out_len; ++p) {
            double s = b[o];
            for (std::size_t c = 0; c < cin; ++c)
                for (std::size_t j = 0; j < k; ++j) {
                    const long i = static_cast<long>(p * stride + j) - static_cast<long>(pad);
                    if (i < 0 || i >= static_cast<long>(len)) continue;
                    s += w[(o * cin + c) * k + j] * x[c * len + static_cast<std::size_t>(i)];
                }
            y[o * out_len + p] = s;
        }
    return y;
}

std::vector<double> naive_fc(const std::vector<double>& x, const std::vector<double>& w, const std::vector<double>& b) {
    std::vector<double> y(b);
    for (std::size_t o = 0; o < b.size(); ++o)
        for (std::size_t i = 0; i < x.size(); ++i) y[o] += w[o * x.size() + i] * x[i];
    return y;
}

void relu(std::vector<double>& v) {
    for (auto& x : v) x = std::max(x, 0.0);
}

std::vector<double> naive_forward(ArchitectureId arch, NaiveNet& net, const std::vector<std::vector<double>>& scans,
                                  const SensorMask& paths) {
    const auto s = architecture_spec(arch);
    const std::size_t R = s.rays;
    std::vector<std::vector<double>> outs;
    std::size_t len = 0;
    auto stack = [&](const std::vector<double>& in, std::size_t cin, bool last_relu) {
        const auto& w1 = net.next();
        const auto& b1 = net.next();
        auto h = naive_conv(in, cin, R, w1, b1, s.conv1_filters, 5, 2, 2, len);
        relu(h);
        const auto& w2 = net.next();
        const auto& b2 = net.next();
        auto h2 = naive_conv(h, s.conv1_filters, len, w2, b2, s.conv2_filters, 5, 2, 2, len);
        if (last_relu) relu(h2);
        return h2;
    };
    std::vector<double> merged;
    if (s.stacks == 1) {
        std::vector<double> in;
        const std::size_t channels = arch == ArchitectureId::Single ? 1 : 3;
        for (std::size_t c = 0; c < channels; ++c) in.insert(in.end(), scans[c].begin(), scans[c].end());
        merged = stack(in, channels, true);
    } else {
        for (std::size_t k = 0; k < 3; ++k) outs.push_back(stack(scans[k], 1, false));
        if (s.merge == MergeKind::Accumulate) {
            merged.assign(outs[0].size(), 0.0);
            for (std::size_t k = 0; k < 3; ++k)
                if (paths[k])
                    for (std::size_t i = 0; i < merged.size(); ++i) merged[i] += outs[k][i];
        } else {
            for (auto& o : outs) merged.insert(merged.end(), o.begin(), o.end());
            if (s.merge == MergeKind::ReduceConv) {
                const auto& w = net.next();
                const auto& b = net.next();
                merged = naive_conv(merged, 3 * s.conv2_filters, len, w, b, s.conv2_filters, 1, 1, 0, len);
            }
        }
        relu(merged);
    }
    const auto& w1 = net.next();
    const auto& b1 = net.next();
    auto h = naive_fc(merged, w1, b1);
    relu(h);
    const auto& w2 = net.next();
    const auto& b2 = net.next();
    return naive_fc(h, w2, b2);
}

Observation random_observation(std::mt19937_64& rng, std::size_t rays = 128) {
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    Observation o;
    for (auto& s : o.scans) {
        s.ranges.resize(rays);
        for (auto& v : s.ranges) v = u(rng);
    }
    return o;
}

std::array<double, kActionCount> q_of(const FusionNetwork<double>& net, const Observation& o) {
    return q_values(net, o, nn::Mode::Eval);
}

} // namespace

TEST(FusionArch, ParameterCountsMatchReferenceTable) {
    EXPECT_EQ(param_count(ArchitectureId::Single), 266887u);
    EXPECT_EQ(param_count(ArchitectureId::EarlySmall), 267047u);
    EXPECT_EQ(param_count(ArchitectureId::EarlyLarge), 812391u);
    EXPECT_EQ(param_count(ArchitectureId::LateConcat), 796551u);
    EXPECT_EQ(param_count(ArchitectureId::LateConv), 275367u);
    EXPECT_EQ(param_count(ArchitectureId::LateAcc), 272263u);
}

TEST(FusionArch, BuiltNetworksHoldExactlyTheClosedFormCount) {
    for (auto id : kAllArchitectures) {
        FusionNetwork<float> net(id, 1);
        std::size_t scalars = 0;
        for (auto& p : net.parameters()) {
            EXPECT_EQ(p.value.size(), nn::shape_size(p.shape));
            EXPECT_EQ(p.grad.size(), p.value.size());
            scalars += p.value.size();
        }
        EXPECT_EQ(scalars, param_count(id)) << architecture_name(id);
        EXPECT_EQ(net.param_count(), reference_param_count(id));
    }
}

// Enumerates small conv geometries and keeps those that reproduce all six
// reference counts with 128 -> 64 -> 32 spatial lengths.
TEST(FusionArch, KernelStridePaddingIsTheUniqueSmallSamePaddingFit) {
    struct Fit {
        std::size_t k, s, p;
    };
    std::vector<Fit> fits;
    const std::size_t refs[6] = {266887, 267047, 812391, 796551, 275367, 272263};
    for (std::size_t k = 1; k <= 9; ++k)
        for (std::size_t s = 1; s <= 4; ++s)
            for (std::size_t p = 0; p <= 4; ++p) {
                auto out = [&](std::size_t len) { return (len + 2 * p >= k) ? (len + 2 * p - k) / s + 1 : 0; };
                const std::size_t l2 = out(out(128));
                if (l2 == 0) continue;
                auto conv = [&](std::size_t in, std::size_t o, std::size_t kk) { return o * in * kk + o; };
                auto fc = [](std::size_t in, std::size_t o) { return o * in + o; };
                const std::size_t head = fc(256, 7);
                const std::size_t stack1 = conv(1, 16, k) + conv(16, 32, k);
                const std::size_t counts[6] = {
                    stack1 + fc(32 * l2, 256) + head,
                    conv(3, 16, k) + conv(16, 32, k) + fc(32 * l2, 256) + head,
                    conv(3, 48, k) + conv(48, 96, k) + fc(96 * l2, 256) + head,
                    3 * stack1 + fc(96 * l2, 256) + head,
                    3 * stack1 + conv(96, 32, 1) + fc(32 * l2, 256) + head,
                    3 * stack1 + fc(32 * l2, 256) + head,
                };
                if (std::equal(std::begin(counts), std::end(counts), std::begin(refs))) fits.push_back({k, s, p});
            }
    ASSERT_FALSE(fits.empty());
    // Only odd kernels with "same"-style padding p = (k - 1) / 2 are of interest.
    std::vector<Fit> same;
    for (auto f : fits)
        if (f.k % 2 == 1 && f.p == (f.k - 1) / 2) same.push_back(f);
    ASSERT_EQ(same.size(), 1u);
    EXPECT_EQ(same[0].k, 5u);
    EXPECT_EQ(same[0].s, 2u);
    EXPECT_EQ(same[0].p, 2u);
    const auto spec = architecture_spec(ArchitectureId::Single);
    EXPECT_EQ(spec.kernel, 5u);
    EXPECT_EQ(spec.stride, 2u);
    EXPECT_EQ(spec.padding, 2u);
    EXPECT_EQ(spec.feature_length(), 32u);
}

TEST(FusionArch, NamesRoundTrip) {
    for (auto id : kAllArchitectures) EXPECT_EQ(parse_architecture(architecture_name(id)), id);
    EXPECT_FALSE(parse_architecture("late-sum").has_value());
}

TEST(FusionArch, ForwardMatchesStraightLineReimplementation) {
    std::mt19937_64 rng(3);
    for (auto id : kAllArchitectures) {
        FusionNetwork<double> net(id, 17);
        NaiveNet naive;
        for (auto& p : net.parameters()) naive.blocks.emplace_back(p.value.begin(), p.value.end());
        for (int trial = 0; trial < 3; ++trial) {
            Observation o = random_observation(rng);
            if (id == ArchitectureId::LateAcc && trial == 2) o.available = {true, false, true};
            std::vector<std::vector<double>> scans;
            for (auto& s : o.scans) scans.emplace_back(s.ranges.begin(), s.ranges.end());
            naive.at = 0;
            const auto want = naive_forward(id, naive, scans, o.available);
            const auto got = q_of(net, o);
            ASSERT_EQ(want.size(), kActionCount);
            for (std::size_t a = 0; a < kActionCount; ++a)
                EXPECT_NEAR(got[a], want[a], 1e-12 * std::max(1.0, std::abs(want[a]))) << architecture_name(id);
        }
    }
}

TEST(FusionArch, GradientsMatchFiniteDifferencesForEveryArchitecture) {
    const std::vector<SensorMask> paths{{true, true, true}, {true, false, true}, {true, true, false}};
    for (auto id : kAllArchitectures) {
        FusionNetwork<double> net(id, 5);
        auto in = oracle::random_input(id, 3, 128, paths, 9);
        const auto r = oracle::check_gradients(net, in, 11, 8);
        EXPECT_GT(r.checked, 40u) << architecture_name(id);
        EXPECT_LE(r.max_rel_error, 1e-4) << architecture_name(id);
    }
}

TEST(FusionArch, ZeroUpstreamGradientGivesZeroGradients) {
    FusionNetwork<double> net(ArchitectureId::LateConv, 2);
    auto in = oracle::random_input(ArchitectureId::LateConv, 2, 128, {kAllSensors}, 4);
    const auto q = net.forward(in, nn::Mode::Train);
    net.backward(nn::Tensor<double>(q.shape()));
    for (auto& p : net.parameters())
        for (double g : p.grad) ASSERT_EQ(g, 0.0);
}

TEST(FusionArch, BackwardWithoutTrainForwardIsRejected) {
    FusionNetwork<double> net(ArchitectureId::Single, 2);
    EXPECT_THROW(net.backward(nn::Tensor<double>({1, 7})), ContractViolation);
}

TEST(FusionArch, SingleIgnoresRemoteScans) {
    std::mt19937_64 rng(8);
    FusionNetwork<double> net(ArchitectureId::Single, 3);
    Observation a = random_observation(rng);
    Observation b = a;
    b.scans[1] = random_observation(rng).scans[1];
    b.scans[2].ranges.assign(128, 0.0f);
    EXPECT_EQ(q_of(net, a), q_of(net, b));
}

TEST(FusionArch, UnavailableSensorsEqualDropPathDroppedPaths) {
    std::mt19937_64 rng(10);
    FusionNetwork<double> net(ArchitectureId::LateAcc, 4);
    Observation unavailable = random_observation(rng);
    unavailable.available = kFrontOnly;
    unavailable.scans[1].ranges.assign(128, 0.0f);
    unavailable.scans[2].ranges.assign(128, 0.0f);

    Observation full = unavailable;
    full.available = kAllSensors;
    full.scans[1] = random_observation(rng).scans[1];
    full.scans[2] = random_observation(rng).scans[2];
    const Observation* ptr = &full;
    Regularization always_drop{1.0, 0.0};
    Rng r(5);
    const auto in = assemble_input<double>(ArchitectureId::LateAcc, std::span<const Observation* const>(&ptr, 1), 128,
                                           &always_drop, &r);
    ASSERT_EQ(in.paths[0], kFrontOnly);
    const auto q = net.infer(in);
    const auto want = q_of(net, unavailable);
    for (std::size_t a = 0; a < kActionCount; ++a) EXPECT_EQ(q[a], want[a]);
}

TEST(FusionArch, EvalIsPureAndRepeatable) {
    std::mt19937_64 rng(12);
    FusionNetwork<double> net(ArchitectureId::LateAcc, 4);
    const Observation o = random_observation(rng);
    const auto before = net.flat_parameters();
    EXPECT_EQ(q_of(net, o), q_of(net, o));
    EXPECT_EQ(net.flat_parameters(), before);
}

TEST(FusionArch, SwappingRemoteScansWithTheirStacksLeavesOutputUnchanged) {
    std::mt19937_64 rng(13);
    FusionNetwork<double> net(ArchitectureId::LateAcc, 6);
    const Observation o = random_observation(rng);
    const auto q = q_of(net, o);
    auto params = net.parameters();
    // each stack owns four blocks: w1, b1, w2, b2
    for (std::size_t j = 0; j < 4; ++j)
        std::swap_ranges(params[4 + j].value.begin(), params[4 + j].value.end(), params[8 + j].value.begin());
    Observation swapped = o;
    std::swap(swapped.scans[1], swapped.scans[2]);
    const auto q2 = q_of(net, swapped);
    for (std::size_t a = 0; a < kActionCount; ++a) EXPECT_NEAR(q[a], q2[a], 1e-12);
}

TEST(FusionArch, OutputsSevenFiniteValues) {
    std::mt19937_64 rng(14);
    for (auto id : kAllArchitectures) {
        FusionNetwork<float> net(id, 1);
        for (double v : q_values(net, random_observation(rng), nn::Mode::Eval)) EXPECT_TRUE(std::isfinite(v));
    }
}

TEST(FusionArch, WrongScanLengthIsAShapeError) {
    FusionNetwork<float> net(ArchitectureId::Single, 1);
    Observation o;
    for (auto& s : o.scans) s.ranges.assign(100, 0.5f);
    EXPECT_THROW(q_values(net, o, nn::Mode::Eval), ShapeError);
}

TEST(FusionArch, DropPathIsRejectedOutsideLateAcc) {
    for (auto id : kAllArchitectures) {
        FusionNetwork<float> net(id, 1);
        if (id == ArchitectureId::LateAcc)
            EXPECT_NO_THROW(net.set_regularization({0.5, 0.025}));
        else
            EXPECT_THROW(net.set_regularization({0.5, 0.0}), ConfigError) << architecture_name(id);
        EXPECT_NO_THROW(net.set_regularization({0.0, 0.025}));
    }
}

TEST(FusionArch, DropPathRateZeroEqualsPlainNetwork) {
    std::mt19937_64 rng(15);
    FusionNetwork<double> net(ArchitectureId::LateAcc, 1);
    const Observation o = random_observation(rng);
    Rng r(1);
    EXPECT_EQ(q_values(net, o, nn::Mode::Train, &r), q_values(net, o, nn::Mode::Eval));
}

TEST(FusionArch, DropPathMasksBalanceTheFourSubsets) {
    Rng rng(2024);
    std::array<std::size_t, 4> counts{};
    constexpr std::size_t n = 100000;
    for (std::size_t i = 0; i < n; ++i) {
        const auto m = sample_droppath_mask(0.5, rng);
        ASSERT_TRUE(m[0]);
        ++counts[(m[1] ? 1 : 0) + (m[2] ? 2 : 0)];
    }
    for (auto c : counts) EXPECT_NEAR(static_cast<double>(c) / n, 0.25, 0.005);
}

TEST(FusionArch, RayDropoutZeroesAboutTheRequestedFraction) {
    std::mt19937_64 g(16);
    std::vector<Observation> obs;
    for (int i = 0; i < 64; ++i) {
        obs.push_back(random_observation(g));
        for (auto& s : obs.back().scans)
            for (auto& v : s.ranges) v = 0.5f;
    }
    std::vector<const Observation*> ptrs;
    for (auto& o : obs) ptrs.push_back(&o);
    Regularization reg{0.0, 0.025};
    Rng rng(3);
    const auto in = assemble_input<float>(ArchitectureId::LateAcc, ptrs, 128, &reg, &rng);
    std::size_t zeros = 0, total = 0;
    for (const auto& t : in.tensors)
        for (float v : t.storage()) {
            zeros += v == 0.0f;
            ++total;
        }
    const double frac = static_cast<double>(zeros) / static_cast<double>(total);
    // 24576 rays: binomial sd ~ 0.001
    EXPECT_NEAR(frac, 0.025, 0.005);
}

TEST(FusionArch, GreedyActionBreaksTiesLowAndIsShiftInvariant) {
    std::array<double, 7> q{};
    EXPECT_EQ(greedy_action(q), Action::MoveLeft);
    q[5] = 1.0;
    EXPECT_EQ(greedy_action(q), Action::RotateCCW);
    for (auto& v : q) v += 3.5;
    EXPECT_EQ(greedy_action(q), Action::RotateCCW);
}

TEST(FusionArch, CheckpointRoundTripIsBitExact) {
    for (auto id : kAllArchitectures) {
        FusionNetwork<float> net(id, 99);
        if (id == ArchitectureId::LateAcc) net.set_regularization({0.5, 0.025});
        std::stringstream buf;
        net.save(buf);
        const auto back = FusionNetwork<float>::load(buf);
        EXPECT_EQ(back.architecture(), id);
        EXPECT_EQ(back.flat_parameters(), net.flat_parameters());
        EXPECT_EQ(back.regularization().droppath_rate, net.regularization().droppath_rate);
    }
}

TEST(FusionArch, CorruptCheckpointIsAFormatError) {
    std::stringstream buf("NOTAPARAMFILE");
    EXPECT_THROW(FusionNetwork<float>::load(buf), FormatError);
    FusionNetwork<float> net(ArchitectureId::Single, 1);
    std::stringstream good;
    net.save(good);
    std::string bytes = good.str();
    bytes.resize(bytes.size() / 2);
    std::stringstream truncated(bytes);
    EXPECT_THROW(FusionNetwork<float>::load(truncated), FormatError);
}

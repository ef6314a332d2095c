#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "arena.hpp"
#include "errors.hpp"
#include "nn/layers.hpp"
#include "nn/sequential.hpp"
#include "nn/serialize.hpp"
#include "random.hpp"

namespace fusionrl {

enum class ArchitectureId : std::uint32_t {
    Single = 0,
    EarlySmall = 1,
    EarlyLarge = 2,
    LateConcat = 3,
    LateConv = 4,
    LateAcc = 5,
};

inline constexpr std::array<ArchitectureId, 6> kAllArchitectures{
    ArchitectureId::Single,     ArchitectureId::EarlySmall, ArchitectureId::EarlyLarge,
    ArchitectureId::LateConcat, ArchitectureId::LateConv,   ArchitectureId::LateAcc};

inline std::string_view architecture_name(ArchitectureId id) {
    switch (id) {
    case ArchitectureId::Single: return "single";
    case ArchitectureId::EarlySmall: return "early-small";
    case ArchitectureId::EarlyLarge: return "early-large";
    case ArchitectureId::LateConcat: return "late-concat";
    case ArchitectureId::LateConv: return "late-conv";
    case ArchitectureId::LateAcc: return "late-acc";
    }
    return "?";
}

inline std::optional<ArchitectureId> parse_architecture(std::string_view name) {
    for (auto id : kAllArchitectures)
        if (architecture_name(id) == name) return id;
    return std::nullopt;
}

/// Published parameter counts of the six policy networks.
inline constexpr std::size_t reference_param_count(ArchitectureId id) {
    switch (id) {
    case ArchitectureId::Single: return 266887;
    case ArchitectureId::EarlySmall: return 267047;
    case ArchitectureId::EarlyLarge: return 812391;
    case ArchitectureId::LateConcat: return 796551;
    case ArchitectureId::LateConv: return 275367;
    case ArchitectureId::LateAcc: return 272263;
    }
    return 0;
}

enum class MergeKind { None, Concat, ReduceConv, Accumulate };

/// Layer dimensions of one architecture. Each sensor stack is
/// conv(kernel, stride, padding) -> ReLU -> conv; the head is
/// fc(hidden) -> ReLU -> fc(actions).
struct ArchitectureSpec {
    std::size_t stacks = 1;
    std::size_t stack_in_channels = 1;
    std::size_t conv1_filters = 16;
    std::size_t conv2_filters = 32;
    std::size_t kernel = 5;
    std::size_t stride = 2;
    std::size_t padding = 2;
    MergeKind merge = MergeKind::None;
    std::size_t hidden = 256;
    std::size_t actions = kActionCount;
    std::size_t rays = 128;

    std::size_t conv_out(std::size_t len) const { return (len + 2 * padding - kernel) / stride + 1; }
    std::size_t feature_length() const { return conv_out(conv_out(rays)); }
    std::size_t merged_channels() const {
        return merge == MergeKind::Concat ? stacks * conv2_filters : conv2_filters;
    }
    std::size_t flat_features() const { return merged_channels() * feature_length(); }
};

inline ArchitectureSpec architecture_spec(ArchitectureId id, std::size_t rays = 128) {
    ArchitectureSpec s;
    s.rays = rays;
    switch (id) {
    case ArchitectureId::Single: break;
    case ArchitectureId::EarlySmall: s.stack_in_channels = 3; break;
    case ArchitectureId::EarlyLarge:
        s.stack_in_channels = 3;
        s.conv1_filters = 48;
        s.conv2_filters = 96;
        break;
    case ArchitectureId::LateConcat:
        s.stacks = 3;
        s.merge = MergeKind::Concat;
        break;
    case ArchitectureId::LateConv:
        s.stacks = 3;
        s.merge = MergeKind::ReduceConv;
        break;
    case ArchitectureId::LateAcc:
        s.stacks = 3;
        s.merge = MergeKind::Accumulate;
        break;
    }
    return s;
}

/// Closed-form parameter count (weights + biases of every layer).
inline std::size_t param_count(const ArchitectureSpec& s) {
    auto conv = [](std::size_t in, std::size_t out, std::size_t k) { return out * in * k + out; };
    auto fc = [](std::size_t in, std::size_t out) { return in * out + out; };
    std::size_t n = s.stacks * (conv(s.stack_in_channels, s.conv1_filters, s.kernel) +
                                conv(s.conv1_filters, s.conv2_filters, s.kernel));
    if (s.merge == MergeKind::ReduceConv) n += conv(s.stacks * s.conv2_filters, s.conv2_filters, 1);
    return n + fc(s.flat_features(), s.hidden) + fc(s.hidden, s.actions);
}

inline std::size_t param_count(ArchitectureId id) { return param_count(architecture_spec(id)); }

inline bool is_late_fusion(ArchitectureId id) {
    return id == ArchitectureId::LateConcat || id == ArchitectureId::LateConv || id == ArchitectureId::LateAcc;
}

/// Network input for a batch. Single and early models use one tensor
/// [N, C, rays]; late models use one [N, 1, rays] tensor per sensor. `paths`
/// holds the per-sample keep mask applied before the accumulate merge.
template <typename T>
struct FusionInput {
    std::vector<nn::Tensor<T>> tensors;
    std::vector<SensorMask> paths;
    std::size_t batch = 0;
};

struct Regularization {
    double droppath_rate = 0.0;    ///< per remote sensor path
    double ray_dropout_rate = 0.0; ///< per input ray
};

/// Samples which sensor paths survive: the robot path always does, each
/// remote path independently with probability 1 - rate.
inline SensorMask sample_droppath_mask(double rate, Rng& rng) {
    SensorMask m{true, true, true};
    for (std::size_t k = 1; k < kSensorCount; ++k) m[k] = !bernoulli(rng, rate);
    return m;
}

/// Builds the network input for `obs`. Unavailable sensors drop their path.
/// With `reg` set, DropPath masks and ray dropout are sampled from `rng`.
template <typename T>
FusionInput<T> assemble_input(ArchitectureId arch, std::span<const Observation* const> obs, std::size_t rays,
                              const Regularization* reg = nullptr, Rng* rng = nullptr) {
    if (reg && !rng) throw ContractViolation("assemble_input: regularization requires an rng");
    const std::size_t n = obs.size();
    FusionInput<T> in;
    in.batch = n;
    in.paths.resize(n);
    const auto spec = architecture_spec(arch, rays);
    const bool late = spec.stacks == kSensorCount;
    const std::size_t used = arch == ArchitectureId::Single ? 1 : kSensorCount;
    if (late) {
        for (std::size_t k = 0; k < kSensorCount; ++k) in.tensors.emplace_back(nn::Shape{n, 1, rays});
    } else {
        in.tensors.emplace_back(nn::Shape{n, spec.stack_in_channels, rays});
    }
    for (std::size_t b = 0; b < n; ++b) {
        const Observation& o = *obs[b];
        SensorMask paths = o.available;
        if (reg && reg->droppath_rate > 0.0) {
            const auto dp = sample_droppath_mask(reg->droppath_rate, *rng);
            for (std::size_t k = 0; k < kSensorCount; ++k) paths[k] = paths[k] && dp[k];
        }
        in.paths[b] = paths;
        for (std::size_t k = 0; k < used; ++k) {
            const auto& r = o.scans[k].ranges;
            if (r.size() != rays)
                throw ShapeError("scan " + std::to_string(k) + " has " + std::to_string(r.size()) + " rays, expected " +
                                 std::to_string(rays));
            T* dst = late ? &in.tensors[k].at(b, 0, 0) : &in.tensors[0].at(b, k, 0);
            for (std::size_t i = 0; i < rays; ++i) {
                T v = static_cast<T>(r[i]);
                if (reg && reg->ray_dropout_rate > 0.0 && bernoulli(*rng, reg->ray_dropout_rate)) v = T{0};
                dst[i] = v;
            }
        }
    }
    return in;
}

/// One of the six Q-network topologies. Late models run three
/// weight-independent convolution stacks whose second convolution is merged
/// before its ReLU; DropPath is honoured only by the accumulate merge.
template <typename T>
class FusionNetwork {
public:
    using Scalar = T;
    using Input = FusionInput<T>;

    FusionNetwork(ArchitectureId arch, std::uint64_t seed, std::size_t rays = 128)
        : FusionNetwork(arch, architecture_spec(arch, rays)) {
        Rng rng(seed);
        for (auto& s : stacks_) s.init(rng);
        if (reducer_) reducer_->init(rng);
        head_.init(rng);
    }

    ArchitectureId architecture() const { return arch_; }
    const ArchitectureSpec& spec() const { return spec_; }
    std::size_t rays() const { return spec_.rays; }

    std::size_t param_count() const {
        std::size_t n = head_.param_count();
        for (const auto& s : stacks_) n += s.param_count();
        if (reducer_) n += reducer_->param_count();
        return n;
    }

    const Regularization& regularization() const { return reg_; }
    void set_regularization(Regularization reg) {
        if (reg.droppath_rate < 0.0 || reg.droppath_rate > 1.0 || reg.ray_dropout_rate < 0.0 ||
            reg.ray_dropout_rate > 1.0)
            throw ConfigError("regularization rates must lie in [0, 1]");
        if (reg.droppath_rate > 0.0 && arch_ != ArchitectureId::LateAcc)
            throw ConfigError("DropPath is only supported by the late-acc architecture");
        reg_ = reg;
    }

    nn::Tensor<T> infer(const Input& in) const { return run(in, nn::Mode::Eval, nullptr); }

    nn::Tensor<T> forward(const Input& in, nn::Mode mode) {
        if (mode == nn::Mode::Eval) return infer(in);
        return run(in, nn::Mode::Train, this);
    }

    void backward(const nn::Tensor<T>& grad_q) {
        if (!trained_) throw ContractViolation("backward() called without a Train-mode forward");
        nn::Tensor<T> gm = head_.backward(grad_q);
        const std::size_t n = batch_, c2 = spec_.conv2_filters, len = spec_.feature_length();
        std::vector<nn::Tensor<T>> gs;
        switch (spec_.merge) {
        case MergeKind::None: gs.push_back(std::move(gm)); break;
        case MergeKind::ReduceConv: gm = reducer_->backward(gm); [[fallthrough]];
        case MergeKind::Concat:
            for (std::size_t k = 0; k < spec_.stacks; ++k) {
                nn::Tensor<T> g({n, c2, len});
                for (std::size_t b = 0; b < n; ++b)
                    std::copy_n(&gm.at(b, k * c2, 0), c2 * len, &g.at(b, 0, 0));
                gs.push_back(std::move(g));
            }
            break;
        case MergeKind::Accumulate:
            for (std::size_t k = 0; k < spec_.stacks; ++k) {
                nn::Tensor<T> g({n, c2, len});
                for (std::size_t b = 0; b < n; ++b)
                    if (paths_[b][k]) std::copy_n(&gm.at(b, 0, 0), c2 * len, &g.at(b, 0, 0));
                gs.push_back(std::move(g));
            }
            break;
        }
        input_grads_.clear();
        for (std::size_t k = 0; k < stacks_.size(); ++k) input_grads_.push_back(stacks_[k].backward(gs[k]));
    }

    /// Gradient of the last backward() with respect to each input tensor.
    const std::vector<nn::Tensor<T>>& input_grads() const { return input_grads_; }

    /// Stacks in sensor order, then the 1x1 reducer, then the head.
    std::vector<nn::ParamRef<T>> parameters() {
        std::vector<nn::ParamRef<T>> out;
        for (auto& s : stacks_)
            for (auto& p : s.parameters()) out.push_back(p);
        if (reducer_)
            for (auto& p : reducer_->parameters()) out.push_back(p);
        for (auto& p : head_.parameters()) out.push_back(p);
        return out;
    }

    void zero_grad() {
        for (auto& p : parameters()) std::fill(p.grad.begin(), p.grad.end(), T{0});
    }

    std::vector<T> flat_parameters() const {
        std::vector<T> flat;
        flat.reserve(param_count());
        for (auto& p : const_cast<FusionNetwork*>(this)->parameters())
            flat.insert(flat.end(), p.value.begin(), p.value.end());
        return flat;
    }

    void load_flat_parameters(std::span<const T> flat) {
        if (flat.size() != param_count()) throw ShapeError("flat parameter vector has the wrong length");
        std::size_t off = 0;
        for (auto& p : parameters()) {
            std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), p.value.size(), p.value.begin());
            off += p.value.size();
        }
    }

    /// ReLU masks from the last Train-mode forward (used to detect kink
    /// crossings in finite-difference checks).
    std::vector<std::uint8_t> activation_pattern() const {
        std::vector<std::uint8_t> out;
        for (const auto& s : stacks_) {
            auto p = s.activation_pattern();
            out.insert(out.end(), p.begin(), p.end());
        }
        auto h = head_.activation_pattern();
        out.insert(out.end(), h.begin(), h.end());
        return out;
    }

    void save(std::ostream& out) const {
        const std::vector<std::pair<std::string, double>> hyper{
            {"droppath_rate", reg_.droppath_rate},
            {"ray_dropout_rate", reg_.ray_dropout_rate},
            {"lidar_rays", static_cast<double>(spec_.rays)},
        };
        nn::write_parameters<T>(out, static_cast<std::uint32_t>(arch_), hyper,
                                const_cast<FusionNetwork*>(this)->parameters());
    }

    void save(const std::filesystem::path& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw FormatError("cannot open '" + path.string() + "' for writing");
        save(out);
    }

    static FusionNetwork load(std::istream& in) {
        const auto header = nn::read_parameter_header(in);
        if (header.architecture_id > static_cast<std::uint32_t>(ArchitectureId::LateAcc))
            throw FormatError("unknown architecture id " + std::to_string(header.architecture_id));
        const auto arch = static_cast<ArchitectureId>(header.architecture_id);
        const auto rays = static_cast<std::size_t>(header.hyperparameter("lidar_rays", 128.0));
        FusionNetwork net(arch, architecture_spec(arch, rays));
        nn::read_parameter_values<T>(in, header, net.parameters());
        Regularization reg;
        reg.droppath_rate = header.hyperparameter("droppath_rate", 0.0);
        reg.ray_dropout_rate = header.hyperparameter("ray_dropout_rate", 0.0);
        net.set_regularization(reg);
        return net;
    }

    static FusionNetwork load(const std::filesystem::path& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw FormatError("cannot open checkpoint '" + path.string() + "'");
        return load(in);
    }

private:
    FusionNetwork(ArchitectureId arch, const ArchitectureSpec& s) : arch_(arch), spec_(s) {
        const bool late = s.stacks == kSensorCount;
        for (std::size_t k = 0; k < s.stacks; ++k) {
            nn::Sequential<T> stack;
            stack.add(nn::Conv1D<T>(s.stack_in_channels, s.conv1_filters, s.kernel, s.stride, s.padding));
            stack.add(nn::ReLU<T>{});
            stack.add(nn::Conv1D<T>(s.conv1_filters, s.conv2_filters, s.kernel, s.stride, s.padding));
            if (!late) stack.add(nn::ReLU<T>{});
            stacks_.push_back(std::move(stack));
        }
        if (s.merge == MergeKind::ReduceConv) reducer_.emplace(s.stacks * s.conv2_filters, s.conv2_filters, 1, 1, 0);
        if (late) head_.add(nn::ReLU<T>{});
        head_.add(nn::Flatten<T>{});
        head_.add(nn::FullyConnected<T>(s.flat_features(), s.hidden));
        head_.add(nn::ReLU<T>{});
        head_.add(nn::FullyConnected<T>(s.hidden, s.actions));
        if (s.rays == 128 && s.hidden == 256 && param_count() != reference_param_count(arch))
            throw std::logic_error("architecture " + std::string(architecture_name(arch)) +
                                   " does not reproduce its reference parameter count");
    }

    // `train` is null for a pure evaluation pass; otherwise layers cache
    // intermediates and the merge records its masks.
    nn::Tensor<T> run(const Input& in, nn::Mode mode, FusionNetwork* train) const {
        if (in.tensors.size() != spec_.stacks) throw ShapeError("input tensor count does not match architecture");
        const std::size_t n = in.batch;
        if (in.paths.size() != n) throw ShapeError("path mask count does not match batch");
        std::vector<nn::Tensor<T>> outs;
        for (std::size_t k = 0; k < spec_.stacks; ++k)
            outs.push_back(train ? train->stacks_[k].forward(in.tensors[k], mode) : stacks_[k].infer(in.tensors[k]));
        const std::size_t c2 = spec_.conv2_filters, len = spec_.feature_length();
        nn::Tensor<T> merged;
        switch (spec_.merge) {
        case MergeKind::None: merged = std::move(outs[0]); break;
        case MergeKind::Concat:
        case MergeKind::ReduceConv:
            merged = nn::Tensor<T>({n, spec_.stacks * c2, len});
            for (std::size_t k = 0; k < spec_.stacks; ++k)
                for (std::size_t b = 0; b < n; ++b)
                    std::copy_n(&outs[k].at(b, 0, 0), c2 * len, &merged.at(b, k * c2, 0));
            if (spec_.merge == MergeKind::ReduceConv)
                merged = train ? train->reducer_->forward(merged) : reducer_->infer(merged);
            break;
        case MergeKind::Accumulate:
            merged = nn::Tensor<T>({n, c2, len});
            for (std::size_t b = 0; b < n; ++b)
                for (std::size_t k = 0; k < spec_.stacks; ++k) {
                    if (!in.paths[b][k]) continue;
                    const T* src = &outs[k].at(b, 0, 0);
                    T* dst = &merged.at(b, 0, 0);
                    for (std::size_t i = 0; i < c2 * len; ++i) dst[i] += src[i];
                }
            break;
        }
        if (!train) return head_.infer(merged);
        train->paths_ = in.paths;
        train->batch_ = n;
        train->trained_ = true;
        return train->head_.forward(merged, mode);
    }

    ArchitectureId arch_;
    ArchitectureSpec spec_;
    std::vector<nn::Sequential<T>> stacks_;
    std::optional<nn::Conv1D<T>> reducer_;
    nn::Sequential<T> head_;
    Regularization reg_;

    std::vector<SensorMask> paths_;
    std::size_t batch_ = 0;
    bool trained_ = false;
    std::vector<nn::Tensor<T>> input_grads_;
};

/// Index of the largest Q-value; ties go to the lowest action index.
template <typename Range>
Action greedy_action(const Range& q) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < kActionCount; ++i)
        if (q[i] > q[best]) best = i;
    return static_cast<Action>(best);
}

/// Q-values for a single observation. In Train mode the network's own
/// DropPath / ray-dropout rates are sampled from `rng`.
template <typename T>
std::array<double, kActionCount> q_values(const FusionNetwork<T>& net, const Observation& obs, nn::Mode mode,
                                          Rng* rng = nullptr) {
    const Observation* ptr = &obs;
    const Regularization* reg = mode == nn::Mode::Train ? &net.regularization() : nullptr;
    const auto in = assemble_input<T>(net.architecture(), std::span<const Observation* const>(&ptr, 1), net.rays(),
                                      reg, rng);
    const auto q = net.infer(in);
    std::array<double, kActionCount> out{};
    for (std::size_t i = 0; i < kActionCount; ++i) out[i] = static_cast<double>(q[i]);
    return out;
}

template <typename T>
Action greedy_action(const FusionNetwork<T>& net, const Observation& obs) {
    return greedy_action(q_values(net, obs, nn::Mode::Eval));
}

} // namespace fusionrl

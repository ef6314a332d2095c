#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "config.hpp"
#include "errors.hpp"
#include "geometry.hpp"
#include "random.hpp"

namespace fusionrl {

// Index mapping is part of the checkpoint contract: the Q-network's output
// unit i scores Action(i).
enum class Action : std::uint8_t {
    MoveLeft = 0,
    MoveRight = 1,
    MoveForward = 2,
    MoveBackward = 3,
    RotateCW = 4,
    RotateCCW = 5,
    Grip = 6,
};
inline constexpr std::size_t kActionCount = 7;

inline std::string_view action_name(Action a) {
    switch (a) {
    case Action::MoveLeft: return "MoveLeft";
    case Action::MoveRight: return "MoveRight";
    case Action::MoveForward: return "MoveForward";
    case Action::MoveBackward: return "MoveBackward";
    case Action::RotateCW: return "RotateCW";
    case Action::RotateCCW: return "RotateCCW";
    case Action::Grip: return "Grip";
    }
    return "?";
}

enum class StepCause : std::uint8_t { Running, GripSuccess, GripFailure, Collision, StepCap };

inline std::string_view cause_name(StepCause c) {
    switch (c) {
    case StepCause::Running: return "Running";
    case StepCause::GripSuccess: return "GripSuccess";
    case StepCause::GripFailure: return "GripFailure";
    case StepCause::Collision: return "Collision";
    case StepCause::StepCap: return "StepCap";
    }
    return "?";
}

inline constexpr std::size_t kSensorCount = 3; // robot-mounted, corner 1, corner 2

enum class SensorMount { Robot, Environment };

/// Arena geometry, robot/can dimensions, lidar model and motion parameters.
///
/// Call finalize() after changing any field: it validates the invariants and
/// caches derived geometry (corner sensor poses, the reward normaliser).
struct ArenaConfig {
    double width = 1.8;  ///< x extent, meters
    double length = 2.7; ///< y extent, meters
    double robot_half_length = 0.29;
    double robot_half_width = 0.20;
    double can_radius = 0.033;
    int lidar_rays = 128;
    double lidar_fov = std::numbers::pi;
    double lidar_max_range = 4.0;
    /// Unset means: inset corner_sensor_inset from corners (0,0) and
    /// (width,length), each facing the arena center.
    std::optional<std::array<Pose2D, 2>> corner_sensor_poses;
    double corner_sensor_inset = 0.02;
    double translation_step = 0.04;
    double rotation_step = 0.12;
    double grip_offset = 0.4;
    double grip_tolerance = 0.05;
    int max_steps = 100;
    bool terminate_on_collision = false;
    bool terminate_on_failed_grip = false;

    static ArenaConfig defaults() {
        ArenaConfig c;
        c.finalize();
        return c;
    }

    void finalize();

    bool finalized() const { return d_max_ > 0.0; }
    double d_max() const {
        require_finalized();
        return d_max_;
    }
    const std::array<Pose2D, 2>& corner_sensors() const {
        require_finalized();
        return corners_;
    }
    /// A legal placement attaining the maximal grip-target-to-can distance.
    std::pair<Pose2D, Vec2> extreme_placement() const {
        require_finalized();
        return {extreme_robot_, extreme_can_};
    }

    void require_finalized() const {
        if (!finalized()) throw ConfigError("ArenaConfig used before finalize()");
    }

private:
    double d_max_ = 0.0;
    std::array<Pose2D, 2> corners_{};
    Pose2D extreme_robot_{};
    Vec2 extreme_can_{};
};

struct WorldState {
    Pose2D robot;
    Vec2 can;
    int steps_elapsed = 0;
    bool done = false;

    friend bool operator==(const WorldState&, const WorldState&) = default;
};

/// Normalized ranges: hit distance / lidar_max_range, 1.0 for no return,
/// 0.0 for a missing or dropped ray.
struct LidarScan {
    std::vector<float> ranges;
    friend bool operator==(const LidarScan&, const LidarScan&) = default;
};

struct Observation {
    std::array<LidarScan, kSensorCount> scans;
    std::array<bool, kSensorCount> available{true, true, true};
    friend bool operator==(const Observation&, const Observation&) = default;
};

using SensorMask = std::array<bool, kSensorCount>;
inline constexpr SensorMask kAllSensors{true, true, true};
inline constexpr SensorMask kFrontOnly{true, false, false};

struct StepResult {
    Observation observation;
    double reward = 0.0;
    bool terminal = false;
    StepCause cause = StepCause::Running;
    bool collided = false; ///< set even when collisions do not terminate
};

// ---------------------------------------------------------------------------
// geometry helpers

inline OrientedRect robot_footprint(const Pose2D& robot, const ArenaConfig& cfg) {
    return {robot, cfg.robot_half_length, cfg.robot_half_width};
}

inline Vec2 grip_target(const Pose2D& robot, const ArenaConfig& cfg) {
    return robot.position() + cfg.grip_offset * robot.forward();
}

inline Pose2D robot_sensor_pose(const Pose2D& robot, const ArenaConfig& cfg) {
    const Vec2 p = robot.position() + cfg.robot_half_length * robot.forward();
    return {p.x, p.y, robot.heading};
}

inline bool footprint_inside(const Pose2D& robot, const ArenaConfig& cfg) {
    for (const Vec2& c : robot_footprint(robot, cfg).corners())
        if (c.x < 0.0 || c.x > cfg.width || c.y < 0.0 || c.y > cfg.length) return false;
    return true;
}

inline bool can_inside(Vec2 can, const ArenaConfig& cfg) {
    const double r = cfg.can_radius;
    return can.x >= r && can.x <= cfg.width - r && can.y >= r && can.y <= cfg.length - r;
}

inline bool overlaps_can(const Pose2D& robot, Vec2 can, const ArenaConfig& cfg) {
    return robot_footprint(robot, cfg).distance_to(can) < cfg.can_radius;
}

inline bool is_legal(const WorldState& s, const ArenaConfig& cfg) {
    return footprint_inside(s.robot, cfg) && can_inside(s.can, cfg) && !overlaps_can(s.robot, s.can, cfg);
}

namespace detail {

struct ExtremeCandidate {
    double distance = -1.0;
    Pose2D robot;
    Vec2 can;
};

// Largest grip-target-to-can distance for a fixed heading. For heading h the
// feasible robot centers form an axis-aligned box, so the grip targets form a
// translated box; the farthest pair between two boxes sits at vertices.
inline ExtremeCandidate extreme_for_heading(double h, const ArenaConfig& cfg) {
    const double c = std::cos(h), s = std::sin(h);
    const double hx = cfg.robot_half_length * std::abs(c) + cfg.robot_half_width * std::abs(s);
    const double hy = cfg.robot_half_length * std::abs(s) + cfg.robot_half_width * std::abs(c);
    ExtremeCandidate best;
    if (2.0 * hx > cfg.width || 2.0 * hy > cfg.length) return best;
    const double r = cfg.can_radius;
    const double cx[2] = {hx, cfg.width - hx};
    const double cy[2] = {hy, cfg.length - hy};
    const double px[2] = {r, cfg.width - r};
    const double py[2] = {r, cfg.length - r};
    for (double rx : cx)
        for (double ry : cy)
            for (double qx : px)
                for (double qy : py) {
                    const Vec2 target{rx + cfg.grip_offset * c, ry + cfg.grip_offset * s};
                    const double d = distance(target, {qx, qy});
                    if (d > best.distance) best = {d, {rx, ry, wrap_angle(h)}, {qx, qy}};
                }
    return best;
}

inline ExtremeCandidate maximize_grip_distance(const ArenaConfig& cfg) {
    constexpr int samples = 7200;
    const double step = 2.0 * std::numbers::pi / samples;
    ExtremeCandidate best;
    int best_k = -1;
    for (int k = 0; k < samples; ++k) {
        const auto cand = extreme_for_heading(-std::numbers::pi + k * step, cfg);
        if (cand.distance > best.distance) {
            best = cand;
            best_k = k;
        }
    }
    if (best_k < 0) return best;
    // golden-section refinement inside the bracketing cell pair
    const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double lo = -std::numbers::pi + (best_k - 1) * step;
    double hi = -std::numbers::pi + (best_k + 1) * step;
    double a = hi - phi * (hi - lo), b = lo + phi * (hi - lo);
    double fa = extreme_for_heading(a, cfg).distance, fb = extreme_for_heading(b, cfg).distance;
    for (int it = 0; it < 200 && hi - lo > 1e-15; ++it) {
        if (fa < fb) {
            lo = a;
            a = b;
            fa = fb;
            b = lo + phi * (hi - lo);
            fb = extreme_for_heading(b, cfg).distance;
        } else {
            hi = b;
            b = a;
            fb = fa;
            a = hi - phi * (hi - lo);
            fa = extreme_for_heading(a, cfg).distance;
        }
    }
    const auto refined = extreme_for_heading(0.5 * (lo + hi), cfg);
    if (refined.distance > best.distance) best = refined;
    return best;
}

} // namespace detail

inline void ArenaConfig::finalize() {
    auto fail = [](const std::string& m) { throw ConfigError("invalid arena config: " + m); };
    if (!(width > 0.0) || !(length > 0.0)) fail("width and length must be positive");
    if (!(robot_half_length > 0.0) || !(robot_half_width > 0.0)) fail("robot extents must be positive");
    if (!(can_radius > 0.0)) fail("can_radius must be positive");
    if (lidar_rays < 2) fail("lidar_rays must be >= 2");
    if (!(lidar_fov > 0.0) || lidar_fov > 2.0 * std::numbers::pi) fail("lidar_fov must be in (0, 2pi]");
    if (!(lidar_max_range > 0.0)) fail("lidar_max_range must be positive");
    if (!(translation_step > 0.0) || !(rotation_step > 0.0)) fail("step sizes must be positive");
    if (!(grip_offset >= 0.0) || !(grip_tolerance > 0.0)) fail("grip geometry must be non-negative");
    if (max_steps < 1) fail("max_steps must be >= 1");
    const double diagonal = std::hypot(width, length);
    if (max_steps * translation_step < diagonal)
        fail("max_steps * translation_step must cover the arena diagonal");

    if (corner_sensor_poses) {
        corners_ = *corner_sensor_poses;
    } else {
        const double i = corner_sensor_inset;
        const Vec2 center{width / 2.0, length / 2.0};
        const Vec2 a{i, i}, b{width - i, length - i};
        corners_ = {Pose2D{a.x, a.y, wrap_angle(std::atan2(center.y - a.y, center.x - a.x))},
                    Pose2D{b.x, b.y, wrap_angle(std::atan2(center.y - b.y, center.x - b.x))}};
    }
    // Sensors must be inside the arena, near opposite corners, and see the center.
    const std::array<Vec2, 4> arena_corners{Vec2{0, 0}, Vec2{width, 0}, Vec2{width, length}, Vec2{0, length}};
    int nearest[2];
    for (int k = 0; k < 2; ++k) {
        const Pose2D& p = corners_[k];
        if (p.x < 0.0 || p.x > width || p.y < 0.0 || p.y > length) fail("corner sensor outside the arena");
        double best = kNoHit;
        for (int c = 0; c < 4; ++c) {
            const double d = distance(p.position(), arena_corners[c]);
            if (d < best) {
                best = d;
                nearest[k] = c;
            }
        }
        if (best > 0.25 * std::min(width, length)) fail("corner sensor is not at a corner");
        const double to_center = std::atan2(length / 2.0 - p.y, width / 2.0 - p.x);
        if (std::abs(wrap_angle(to_center - p.heading)) > lidar_fov / 2.0)
            fail("corner sensor does not face the arena interior");
    }
    if ((nearest[0] + 2) % 4 != nearest[1]) fail("corner sensors must sit on the arena diagonal");

    const auto extreme = detail::maximize_grip_distance(*this);
    if (!(extreme.distance > 0.0)) fail("robot footprint does not fit inside the arena");
    d_max_ = extreme.distance;
    // The maximiser touches the walls; nudge it inward until the rounded
    // footprint corners test as inside.
    extreme_robot_ = extreme.robot;
    const Vec2 inward = unit(std::atan2(length / 2.0 - extreme.robot.y, width / 2.0 - extreme.robot.x));
    for (double nudge = 1e-13; !footprint_inside(extreme_robot_, *this) && nudge < 1e-9; nudge *= 2.0)
        extreme_robot_ = {extreme.robot.x + nudge * inward.x, extreme.robot.y + nudge * inward.y, extreme.robot.heading};
    extreme_can_ = extreme.can;
}

// ---------------------------------------------------------------------------
// operations

inline double reward(const WorldState& s, const ArenaConfig& cfg) {
    return -distance(s.can, grip_target(s.robot, cfg)) / cfg.d_max();
}

inline bool grip_succeeds(const WorldState& s, const ArenaConfig& cfg) {
    return distance(s.can, grip_target(s.robot, cfg)) <= cfg.grip_tolerance;
}

inline WorldState reset(std::uint64_t seed, const ArenaConfig& cfg) {
    cfg.require_finalized();
    constexpr int max_attempts = 100000;
    Rng rng(seed);
    WorldState s;
    int attempt = 0;
    for (; attempt < max_attempts; ++attempt) {
        s.robot = {uniform(rng, 0.0, cfg.width), uniform(rng, 0.0, cfg.length),
                   uniform(rng, -std::numbers::pi, std::numbers::pi)};
        if (footprint_inside(s.robot, cfg)) break;
    }
    if (attempt == max_attempts) throw ConfigError("cannot place robot: footprint does not fit the arena");
    for (attempt = 0; attempt < max_attempts; ++attempt) {
        s.can = {uniform(rng, cfg.can_radius, cfg.width - cfg.can_radius),
                 uniform(rng, cfg.can_radius, cfg.length - cfg.can_radius)};
        if (!overlaps_can(s.robot, s.can, cfg)) break;
    }
    if (attempt == max_attempts) throw ConfigError("cannot place can next to the robot");
    return s;
}

/// Ranges in meters (clamped to lidar_max_range) along lidar_rays rays that
/// span [heading - fov/2, heading + fov/2] inclusive.
inline std::vector<double> raycast_ranges(const Pose2D& sensor, const WorldState& s, const ArenaConfig& cfg,
                                          SensorMount mount) {
    const int n = cfg.lidar_rays;
    std::vector<double> out(static_cast<std::size_t>(n));
    const std::array<Vec2, 4> c{Vec2{0, 0}, Vec2{cfg.width, 0}, Vec2{cfg.width, cfg.length}, Vec2{0, cfg.length}};
    const OrientedRect body = robot_footprint(s.robot, cfg);
    const Vec2 origin = sensor.position();
    for (int i = 0; i < n; ++i) {
        const double angle = sensor.heading - cfg.lidar_fov / 2.0 + cfg.lidar_fov * i / (n - 1);
        const Vec2 dir = unit(angle);
        double t = kNoHit;
        for (int w = 0; w < 4; ++w) t = std::min(t, ray_segment(origin, dir, c[w], c[(w + 1) % 4]));
        t = std::min(t, ray_circle(origin, dir, s.can, cfg.can_radius));
        if (mount == SensorMount::Environment) t = std::min(t, ray_rect(origin, dir, body));
        out[static_cast<std::size_t>(i)] = std::min(t, cfg.lidar_max_range);
    }
    return out;
}

inline LidarScan raycast(const Pose2D& sensor, const WorldState& s, const ArenaConfig& cfg, SensorMount mount) {
    const auto meters = raycast_ranges(sensor, s, cfg, mount);
    LidarScan scan;
    scan.ranges.resize(meters.size());
    for (std::size_t i = 0; i < meters.size(); ++i)
        scan.ranges[i] = static_cast<float>(meters[i] / cfg.lidar_max_range);
    return scan;
}

inline Observation observe(const WorldState& s, const SensorMask& available, const ArenaConfig& cfg) {
    if (!available[0]) throw ContractViolation("the robot-mounted sensor is always available");
    Observation obs;
    obs.available = available;
    obs.scans[0] = raycast(robot_sensor_pose(s.robot, cfg), s, cfg, SensorMount::Robot);
    for (std::size_t k = 1; k < kSensorCount; ++k) {
        if (available[k])
            obs.scans[k] = raycast(cfg.corner_sensors()[k - 1], s, cfg, SensorMount::Environment);
        else
            obs.scans[k].ranges.assign(static_cast<std::size_t>(cfg.lidar_rays), 0.0f);
    }
    return obs;
}

inline Pose2D apply_motion(const Pose2D& p, Action a, const ArenaConfig& cfg) {
    const double d = cfg.translation_step;
    switch (a) {
    case Action::MoveForward: return make_pose(p.x + d * std::cos(p.heading), p.y + d * std::sin(p.heading), p.heading);
    case Action::MoveBackward: return make_pose(p.x - d * std::cos(p.heading), p.y - d * std::sin(p.heading), p.heading);
    case Action::MoveLeft: return make_pose(p.x - d * std::sin(p.heading), p.y + d * std::cos(p.heading), p.heading);
    case Action::MoveRight: return make_pose(p.x + d * std::sin(p.heading), p.y - d * std::cos(p.heading), p.heading);
    case Action::RotateCW: return make_pose(p.x, p.y, p.heading - cfg.rotation_step);
    case Action::RotateCCW: return make_pose(p.x, p.y, p.heading + cfg.rotation_step);
    case Action::Grip: return p;
    }
    return p;
}

/// Advances one 100 ms tick. A colliding move leaves the robot where it was
/// and earns -1; whether that (or a failed grip) ends the episode is set by
/// the config's terminate_on_* flags.
inline std::pair<WorldState, StepResult> step(const WorldState& state, Action action, const ArenaConfig& cfg,
                                             const SensorMask& available = kAllSensors) {
    if (state.done) throw ContractViolation("step() called on a finished episode");
    WorldState next = state;
    next.steps_elapsed += 1;
    StepResult res;
    if (action == Action::Grip) {
        if (grip_succeeds(state, cfg)) {
            res.reward = 0.0;
            res.cause = StepCause::GripSuccess;
        } else {
            res.reward = reward(state, cfg);
            if (cfg.terminate_on_failed_grip) res.cause = StepCause::GripFailure;
        }
    } else {
        const Pose2D moved = apply_motion(state.robot, action, cfg);
        if (!footprint_inside(moved, cfg) || overlaps_can(moved, state.can, cfg)) {
            res.collided = true;
            res.reward = -1.0;
            if (cfg.terminate_on_collision) res.cause = StepCause::Collision;
        } else {
            next.robot = moved;
            res.reward = reward(next, cfg);
        }
    }
    if (res.cause == StepCause::Running && next.steps_elapsed >= cfg.max_steps) res.cause = StepCause::StepCap;
    res.terminal = res.cause != StepCause::Running;
    next.done = res.terminal;
    res.observation = observe(next, available, cfg);
    return {next, res};
}

/// Stateful convenience wrapper used by actors and the evaluator.
class ArenaEnv {
public:
    explicit ArenaEnv(ArenaConfig cfg, SensorMask available = kAllSensors)
        : cfg_(std::move(cfg)), available_(available) {
        cfg_.require_finalized();
    }

    Observation reset(std::uint64_t seed) {
        state_ = fusionrl::reset(seed, cfg_);
        return observe(state_, available_, cfg_);
    }
    StepResult step(Action a) {
        auto [next, res] = fusionrl::step(state_, a, cfg_, available_);
        state_ = next;
        return res;
    }

    const WorldState& state() const { return state_; }
    const ArenaConfig& config() const { return cfg_; }
    const SensorMask& available() const { return available_; }

private:
    ArenaConfig cfg_;
    SensorMask available_;
    WorldState state_;
};

// ---------------------------------------------------------------------------
// configuration and trajectory files

/// Reads `<prefix>key` entries; keys mirror the ArenaConfig field names, with
/// the corner sensor poses spelled corner1_x, corner1_y, corner1_heading, ...
inline ArenaConfig arena_config_from(const KeyValueConfig& kv, const std::string& prefix = "arena.") {
    ArenaConfig c;
    auto key = [&](const char* k) { return prefix + k; };
    c.width = kv.get(key("width"), c.width);
    c.length = kv.get(key("length"), c.length);
    c.robot_half_length = kv.get(key("robot_half_length"), c.robot_half_length);
    c.robot_half_width = kv.get(key("robot_half_width"), c.robot_half_width);
    c.can_radius = kv.get(key("can_radius"), c.can_radius);
    c.lidar_rays = kv.get(key("lidar_rays"), c.lidar_rays);
    c.lidar_fov = kv.get(key("lidar_fov"), c.lidar_fov);
    c.lidar_max_range = kv.get(key("lidar_max_range"), c.lidar_max_range);
    c.corner_sensor_inset = kv.get(key("corner_sensor_inset"), c.corner_sensor_inset);
    c.translation_step = kv.get(key("translation_step"), c.translation_step);
    c.rotation_step = kv.get(key("rotation_step"), c.rotation_step);
    c.grip_offset = kv.get(key("grip_offset"), c.grip_offset);
    c.grip_tolerance = kv.get(key("grip_tolerance"), c.grip_tolerance);
    c.max_steps = kv.get(key("max_steps"), c.max_steps);
    c.terminate_on_collision = kv.get(key("terminate_on_collision"), c.terminate_on_collision);
    c.terminate_on_failed_grip = kv.get(key("terminate_on_failed_grip"), c.terminate_on_failed_grip);
    const bool custom = kv.contains(key("corner1_x")) || kv.contains(key("corner2_x"));
    if (custom) {
        std::array<Pose2D, 2> poses;
        for (int k = 0; k < 2; ++k) {
            const std::string base = "corner" + std::to_string(k + 1) + "_";
            poses[k] = make_pose(kv.require<double>(prefix + base + "x"), kv.require<double>(prefix + base + "y"),
                                 kv.require<double>(prefix + base + "heading"));
        }
        c.corner_sensor_poses = poses;
    }
    c.finalize();
    return c;
}

inline ArenaConfig load_arena_config(const std::filesystem::path& path) {
    auto kv = KeyValueConfig::load(path);
    // Accept both an [arena] section and bare top-level keys.
    KeyValueConfig flat;
    for (const auto& [k, v] : kv.entries()) flat.set(k.rfind("arena.", 0) == 0 ? k : "arena." + k, v);
    auto cfg = arena_config_from(flat);
    flat.reject_unused();
    return cfg;
}

/// CSV rows: step,x,y,heading,can_x,can_y,action,reward,cause. Row 0 is the
/// start state with an empty action.
class TrajectoryWriter {
public:
    explicit TrajectoryWriter(std::ostream& out) : out_(out) {
        out_ << "step,x,y,heading,can_x,can_y,action,reward,cause\n";
        out_ << std::setprecision(17);
    }
    void start(const WorldState& s) { row(s, "", 0.0, StepCause::Running); }
    void record(const WorldState& s, Action a, const StepResult& r) { row(s, action_name(a), r.reward, r.cause); }

private:
    void row(const WorldState& s, std::string_view action, double rew, StepCause cause) {
        out_ << s.steps_elapsed << ',' << s.robot.x << ',' << s.robot.y << ',' << s.robot.heading << ','
             << s.can.x << ',' << s.can.y << ',' << action << ',' << rew << ',' << cause_name(cause) << '\n';
    }
    std::ostream& out_;
};

} // namespace fusionrl

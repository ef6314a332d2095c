// Drives the arena by hand: reset from a seed, turn toward the can, roll
// forward and try to grip, printing what every sensor sees along the way.

#include <cmath>
#include <cstdio>

#include <fusionrl/arena.hpp>

using namespace fusionrl;

namespace {

double nearest(const LidarScan& s) {
    float m = 1.0f;
    for (float v : s.ranges)
        if (v > 0.0f) m = std::min(m, v);
    return m;
}

} // namespace

int main() {
    const auto cfg = ArenaConfig::defaults();
    ArenaEnv env(cfg);
    Observation obs = env.reset(2024);
    std::printf("arena %.1f x %.1f m, D_max %.4f m\n", cfg.width, cfg.length, cfg.d_max());

    for (int t = 0; t < cfg.max_steps; ++t) {
        const WorldState& s = env.state();
        const Vec2 target = grip_target(s.robot, cfg);
        const Vec2 to_can = s.can - s.robot.position();
        const double bearing = wrap_angle(std::atan2(to_can.y, to_can.x) - s.robot.heading);

        Action a = Action::MoveForward;
        if (distance(s.can, target) <= cfg.grip_tolerance)
            a = Action::Grip;
        else if (std::abs(bearing) > cfg.rotation_step / 2)
            a = bearing > 0 ? Action::RotateCCW : Action::RotateCW;

        const StepResult r = env.step(a);
        obs = r.observation;
        std::printf("%3d %-13s reward %+.4f  nearest return [front %.3f, corner1 %.3f, corner2 %.3f]%s\n", t + 1,
                    std::string(action_name(a)).c_str(), r.reward, nearest(obs.scans[0]), nearest(obs.scans[1]),
                    nearest(obs.scans[2]), r.collided ? "  collision" : "");
        if (r.terminal) {
            std::printf("episode ended: %s\n", std::string(cause_name(r.cause)).c_str());
            break;
        }
    }
}

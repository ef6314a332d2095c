// Builds every fusion architecture, prints its size and the greedy action
// it picks for one observation with all sensors and with the robot sensor
// alone.

#include <cstdio>

#include <fusionrl/arena.hpp>
#include <fusionrl/fusion.hpp>

using namespace fusionrl;

int main() {
    const auto cfg = ArenaConfig::defaults();
    const WorldState s = reset(7, cfg);
    const Observation all = observe(s, kAllSensors, cfg);
    const Observation front = observe(s, kFrontOnly, cfg);

    std::printf("%-12s %9s  %-12s %-12s\n", "architecture", "params", "all sensors", "front only");
    for (auto id : kAllArchitectures) {
        const FusionNetwork<float> net(id, 1);
        std::printf("%-12s %9zu  %-12s %-12s\n", std::string(architecture_name(id)).c_str(), net.param_count(),
                    std::string(action_name(greedy_action(net, all))).c_str(),
                    std::string(action_name(greedy_action(net, front))).c_str());
    }
}

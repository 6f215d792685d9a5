#include "sbq/channel.hpp"

#include <thread>

namespace sbq {

std::uint64_t run_block(BlockModel& model, std::vector<RxBridge*> in,
                        std::vector<TxBridge*> out, const RunBlockOptions& opts) {
    CycleIo io(std::move(in), std::move(out));
    std::uint64_t cycles = 0;
    std::uint32_t idle_streak = 0;
    std::chrono::microseconds idle_sleep{50};
    while (!(opts.stop && opts.stop->load(std::memory_order_relaxed))) {
        const bool moved = io.run_cycle(model);
        ++cycles;
        if (opts.max_cycles && cycles >= opts.max_cycles) break;
        if (opts.pacer) {
            opts.pacer->pace();
        } else if (!moved) {
            // Unpaced and nothing in flight: ease off the CPU, escalating
            // to a 5 ms nap so big idle fleets coexist on small hosts.
            if (++idle_streak >= 256) {
                std::this_thread::sleep_for(idle_sleep);
                idle_sleep = std::min(idle_sleep * 2, std::chrono::microseconds{5000});
            }
        } else {
            idle_streak = 0;
            idle_sleep = std::chrono::microseconds{50};
        }
    }
    return cycles;
}

}  // namespace sbq

#pragma once

#include <chrono>
#include <cstdint>
#include <limits>

namespace sbq {

// Performance model for one block (A) measuring a delay against a remote
// block (B) over bridged queues. Rates are in Hz; t_comm is the one-way
// queue communication time in seconds; n_rx/n_tx are the bridge cycle
// costs on the path.
struct PerfParams {
    double n_cycles = 0;       // delay as measured in B's cycles
    double f_a_sim = 0;        // A's simulated clock rate
    double f_b_sim = 0;        // B's simulated clock rate
    double f_a_wall = 0;       // A's wall-clock cycle rate
    double f_b_wall = 0;       // B's wall-clock cycle rate
    double t_comm = 0;         // one-way transport time, seconds
    double n_rx = 0;           // receive-side bridge cycles
    double n_tx = 0;           // transmit-side bridge cycles
};

// Delay A should observe, in its own cycles, if both simulations kept their
// nominal clock ratio: n_cycles * f_a_sim / f_b_sim.
double ideal_delay(const PerfParams& p);

// Delay A actually observes once transport and bridge costs are included:
//   n_cycles * (f_a_wall / f_b_wall)
//   + 2 * t_comm * f_a_wall
//   + (n_rx + n_tx) * (1 + f_a_wall / f_b_wall)
double actual_delay(const PerfParams& p);

// Upper bound on f_a_wall such that transport time stays negligible next to
// the delay being measured: ideal_delay / (2 * t_comm). Infinity when
// t_comm is zero.
double wall_rate_bound(double n_ideal, double t_comm);
double wall_rate_bound(const PerfParams& p);

// Wall-clock rate ratio that preserves the simulated ratio: f_a_sim / f_b_sim.
double required_wall_ratio(const PerfParams& p);

// Measured delays shorter than this make rate-controlled measurement
// unreliable; harnesses warn below it.
inline constexpr double kMinMeasurableDelayCycles = 24.0;

inline constexpr double kUnboundedRate = std::numeric_limits<double>::infinity();

// Caps a cycle loop at max_rate_hz using absolute deadlines. pace() blocks
// until the next deadline (coarse sleep plus a short spin for accuracy).
// When the caller falls behind, up to 100 periods are made up by letting
// pace() return immediately; beyond that the schedule resets to now.
class RateLimiter {
public:
    explicit RateLimiter(double max_rate_hz);

    void pace();

    double max_rate_hz() const { return rate_; }

    static constexpr std::int64_t kMaxCatchUpPeriods = 100;

private:
    using Clock = std::chrono::steady_clock;
    double rate_;
    Clock::duration period_;
    Clock::time_point next_deadline_{};
};

}  // namespace sbq

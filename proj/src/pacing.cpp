#include "sbq/pacing.hpp"

#include <thread>

#include "sbq/errors.hpp"

namespace sbq {

namespace {

void require_positive(double v, const char* name) {
    if (!(v > 0)) throw InvalidParam(std::string(name) + " must be positive");
}

}  // namespace

double ideal_delay(const PerfParams& p) {
    require_positive(p.f_a_sim, "f_a_sim");
    require_positive(p.f_b_sim, "f_b_sim");
    return p.n_cycles * p.f_a_sim / p.f_b_sim;
}

double actual_delay(const PerfParams& p) {
    require_positive(p.f_a_wall, "f_a_wall");
    require_positive(p.f_b_wall, "f_b_wall");
    if (p.t_comm < 0) throw InvalidParam("t_comm must be nonnegative");
    if (p.n_rx < 0 || p.n_tx < 0) throw InvalidParam("bridge costs must be nonnegative");
    const double wall_ratio = p.f_a_wall / p.f_b_wall;
    return p.n_cycles * wall_ratio + 2.0 * p.t_comm * p.f_a_wall +
           (p.n_rx + p.n_tx) * (1.0 + wall_ratio);
}

double wall_rate_bound(double n_ideal, double t_comm) {
    if (t_comm < 0) throw InvalidParam("t_comm must be nonnegative");
    if (t_comm == 0) return kUnboundedRate;
    return n_ideal / (2.0 * t_comm);
}

double wall_rate_bound(const PerfParams& p) { return wall_rate_bound(ideal_delay(p), p.t_comm); }

double required_wall_ratio(const PerfParams& p) {
    require_positive(p.f_a_sim, "f_a_sim");
    require_positive(p.f_b_sim, "f_b_sim");
    return p.f_a_sim / p.f_b_sim;
}

RateLimiter::RateLimiter(double max_rate_hz) : rate_(max_rate_hz) {
    require_positive(max_rate_hz, "max_rate_hz");
    period_ = std::chrono::duration_cast<Clock::duration>(
        std::chrono::duration<double>(1.0 / max_rate_hz));
    if (period_.count() <= 0) throw InvalidParam("max_rate_hz is too high to pace");
    next_deadline_ = Clock::now() + period_;
}

void RateLimiter::pace() {
    auto now = Clock::now();
    if (now - next_deadline_ > period_ * kMaxCatchUpPeriods) {
        // Too far behind to make up; restart the schedule instead of
        // bursting indefinitely.
        next_deadline_ = now + period_;
        return;
    }
    // Behind but within the catch-up budget: return immediately until the
    // schedule is caught. Otherwise sleep most of the way and spin the
    // remainder, since OS sleeps overshoot by tens of microseconds, which
    // matters at kHz rates.
    constexpr auto kSpinWindow = std::chrono::microseconds(150);
    while (now < next_deadline_) {
        const auto remaining = next_deadline_ - now;
        if (remaining > kSpinWindow) {
            std::this_thread::sleep_for(remaining - kSpinWindow);
        }
        now = Clock::now();
    }
    next_deadline_ += period_;
}

}  // namespace sbq

#include <doctest.h>

#include <chrono>
#include <cmath>
#include <random>
#include <thread>

#include "sbq/errors.hpp"
#include "sbq/pacing.hpp"

using namespace sbq;
using Clock = std::chrono::steady_clock;

namespace {

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

}  // namespace

TEST_SUITE_BEGIN("pacing");

TEST_CASE("ideal delay scales the measured cycles by the sim-rate ratio") {
    PerfParams p;
    p.n_cycles = 100;
    p.f_a_sim = 2;
    p.f_b_sim = 1;
    CHECK(ideal_delay(p) == doctest::Approx(200.0));

    p.f_a_sim = 1;
    p.f_b_sim = 2;
    CHECK(ideal_delay(p) == doctest::Approx(50.0));

    p.n_cycles = 7;
    p.f_a_sim = 3;
    p.f_b_sim = 3;
    CHECK(ideal_delay(p) == doctest::Approx(7.0));

    p.n_cycles = 37;
    p.f_a_sim = 3.5;
    p.f_b_sim = 1.4;
    CHECK(ideal_delay(p) == doctest::Approx(92.5));
}

TEST_CASE("actual delay adds transport and bridge costs") {
    PerfParams p;
    p.n_cycles = 100;
    p.f_a_sim = 1;
    p.f_b_sim = 1;

    SUBCASE("bridge cycles only") {
        p.f_a_wall = 5;
        p.f_b_wall = 5;
        p.t_comm = 0;
        p.n_rx = 1;
        p.n_tx = 1;
        CHECK(actual_delay(p) == doctest::Approx(104.0));  // 100 + 0 + 2*2
    }
    SUBCASE("transport only") {
        p.f_a_wall = 1000;
        p.f_b_wall = 1000;
        p.t_comm = 1e-3;
        p.n_rx = 0;
        p.n_tx = 0;
        CHECK(actual_delay(p) == doctest::Approx(102.0));  // 100 + 2
    }
    SUBCASE("everything at once") {
        p.n_cycles = 50;
        p.f_a_wall = 800;
        p.f_b_wall = 200;
        p.t_comm = 2e-3;
        p.n_rx = 2;
        p.n_tx = 3;
        // 50*4 + 2*0.002*800 + 5*(1+4) = 200 + 3.2 + 25
        CHECK(actual_delay(p) == doctest::Approx(228.2));
    }
}

TEST_CASE("actual delay equals ideal delay exactly at the degenerate point") {
    PerfParams p;
    p.n_cycles = 12345;
    p.f_a_sim = 3;
    p.f_b_sim = 7;
    p.f_a_wall = 300;   // wall ratio 3/7 matches the sim ratio
    p.f_b_wall = 700;
    p.t_comm = 0;
    p.n_rx = 0;
    p.n_tx = 0;
    CHECK(actual_delay(p) == ideal_delay(p));  // bitwise, not approximate
}

TEST_CASE("actual delay is monotone in each cost term") {
    std::mt19937 rng(99);
    std::uniform_real_distribution<double> rate(1.0, 1e6);
    std::uniform_real_distribution<double> small(0.0, 1.0);
    for (int i = 0; i < 200; ++i) {
        PerfParams p;
        p.n_cycles = small(rng) * 1000;
        p.f_a_sim = rate(rng);
        p.f_b_sim = rate(rng);
        p.f_a_wall = rate(rng);
        p.f_b_wall = rate(rng);
        p.t_comm = small(rng);
        p.n_rx = small(rng) * 4;
        p.n_tx = small(rng) * 4;
        const double base = actual_delay(p);

        PerfParams q = p;
        q.t_comm += 0.1;
        CHECK(actual_delay(q) >= base);
        q = p;
        q.n_rx += 1;
        CHECK(actual_delay(q) >= base);
        q = p;
        q.n_tx += 1;
        CHECK(actual_delay(q) >= base);
        q = p;
        q.f_a_wall += 100;
        CHECK(actual_delay(q) >= base);
    }
}

TEST_CASE("wall rate bound is the ideal delay over twice the transport time") {
    CHECK(wall_rate_bound(200, 1e-3) == doctest::Approx(100'000.0));
    CHECK(wall_rate_bound(1000, 50e-6) == doctest::Approx(1e7));
    CHECK(wall_rate_bound(123, 0) == kUnboundedRate);

    PerfParams p;
    p.n_cycles = 100;
    p.f_a_sim = 2;
    p.f_b_sim = 1;
    p.t_comm = 1e-3;
    CHECK(wall_rate_bound(p) == doctest::Approx(100'000.0));
    p.t_comm = 0;
    CHECK(wall_rate_bound(p) == kUnboundedRate);
}

TEST_CASE("required wall ratio mirrors the sim ratio") {
    PerfParams p;
    p.f_a_sim = 2;
    p.f_b_sim = 1;
    CHECK(required_wall_ratio(p) == doctest::Approx(2.0));
    p.f_a_sim = 5;
    p.f_b_sim = 5;
    CHECK(required_wall_ratio(p) == doctest::Approx(1.0));

    PerfParams q;
    q.f_a_sim = p.f_b_sim;
    q.f_b_sim = p.f_a_sim;
    CHECK(required_wall_ratio(p) * required_wall_ratio(q) == doctest::Approx(1.0));
}

TEST_CASE("nonpositive rates are rejected") {
    PerfParams p;
    p.n_cycles = 1;
    p.f_a_sim = 0;
    p.f_b_sim = 1;
    CHECK_THROWS_AS(ideal_delay(p), InvalidParam);
    p.f_a_sim = 1;
    p.f_b_sim = -2;
    CHECK_THROWS_AS(ideal_delay(p), InvalidParam);
    CHECK_THROWS_AS(required_wall_ratio(p), InvalidParam);

    p.f_b_sim = 1;
    p.f_a_wall = 0;
    p.f_b_wall = 1;
    CHECK_THROWS_AS(actual_delay(p), InvalidParam);
    p.f_a_wall = 1;
    p.t_comm = -1;
    CHECK_THROWS_AS(actual_delay(p), InvalidParam);
    CHECK_THROWS_AS(wall_rate_bound(10, -1), InvalidParam);

    CHECK_THROWS_AS(RateLimiter(0), InvalidParam);
    CHECK_THROWS_AS(RateLimiter(-5), InvalidParam);
}

TEST_CASE("pacing holds a loop at the target rate") {
    const auto t0 = Clock::now();
    RateLimiter rl(1000);  // schedules its first deadline at construction
    CHECK(rl.max_rate_hz() == 1000);
    for (int i = 0; i < 100; ++i) rl.pace();
    const double ms = ms_since(t0);
    CHECK(ms >= 100.0);  // a 1 kHz pacer cannot run 100 cycles in under 100 ms
    CHECK(ms < 400.0);   // and should not be wildly over either
}

TEST_CASE("after a long stall the schedule resets instead of bursting") {
    RateLimiter rl(1000);
    rl.pace();
    std::this_thread::sleep_for(std::chrono::milliseconds(250));  // 250 periods behind

    // The first pace resets the schedule and returns; the following ones are
    // spaced a full period apart again.
    const auto t0 = Clock::now();
    for (int i = 0; i < 6; ++i) rl.pace();
    const double ms = ms_since(t0);
    CHECK(ms >= 5.0);
    CHECK(ms < 100.0);
}

TEST_CASE("a short stall is made up by a bounded burst") {
    RateLimiter rl(10'000);  // 100 us period
    rl.pace();
    std::this_thread::sleep_for(std::chrono::milliseconds(5));  // ~50 periods behind

    const auto t0 = Clock::now();
    int burst = 0;
    for (int i = 0; i < 200; ++i) {
        rl.pace();
        // Count calls that returned essentially immediately.
        if (ms_since(t0) < 1.0)
            ++burst;
        else
            break;
    }
    CHECK(burst >= 30);  // the backlog is burned down
    CHECK(burst <= RateLimiter::kMaxCatchUpPeriods);
}

TEST_SUITE_END();

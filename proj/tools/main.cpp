#include <atomic>
#include <chrono>
#include <csignal>
#include <fstream>
#include <iostream>
#include <optional>
#include <thread>

#include <CLI11.hpp>

#include "sbq/bench.hpp"
#include "sbq/config.hpp"
#include "sbq/matmul.hpp"
#include "sbq/netgraph.hpp"
#include "sbq/pacing.hpp"
#include "sbq/shm_queue.hpp"
#include "sbq/worker.hpp"

namespace {

std::atomic<bool> g_stop{false};

void handle_stop_signal(int) { g_stop.store(true); }

void install_signal_handlers() {
    struct sigaction sa {};
    sa.sa_handler = handle_stop_signal;
    sigemptyset(&sa.sa_mask);
    sigaction(SIGINT, &sa, nullptr);
    sigaction(SIGTERM, &sa, nullptr);
}

std::optional<sbq::PortDir> external_dir(const sbq::NetworkGraph& g, const std::string& label) {
    for (const auto& e : g.externals())
        if (e.label == label) return e.port.inst->def().ports[e.port.port].dir;
    return std::nullopt;
}

void check_io_labels(const sbq::NetworkGraph& g, const sbq::DriveSpec& io) {
    for (const auto& [label, file] : io.drive) {
        const auto dir = external_dir(g, label);
        if (!dir) throw sbq::ConfigError("drive label '" + label + "' is not an external port");
        if (*dir != sbq::PortDir::In)
            throw sbq::ConfigError("drive label '" + label + "' is a network output");
    }
    for (const auto& [label, file] : io.capture) {
        const auto dir = external_dir(g, label);
        if (!dir) throw sbq::ConfigError("capture label '" + label + "' is not an external port");
        if (*dir != sbq::PortDir::Out)
            throw sbq::ConfigError("capture label '" + label + "' is a network input");
    }
}

int cmd_bench(const std::string& dir, std::uint64_t packets, std::uint64_t rounds,
              std::uint64_t stress, const std::string& csv_path) {
    const sbq::BenchResult r = sbq::run_bench(dir, packets, rounds);
    std::cout << "round-trip median: " << r.round_trip_ns_median << " ns over "
              << r.latency_rounds << " rounds (reference " << sbq::kReferenceRoundTripNs
              << " ns)\n";
    std::cout << "one-way throughput: " << r.packets_per_sec / 1e6 << " Mpkt/s, "
              << r.bytes_per_sec / 1e6 << " MB/s over " << r.throughput_packets
              << " packets (reference " << sbq::kReferencePacketsPerSec / 1e6 << " Mpkt/s, "
              << sbq::kReferenceBytesPerSec / 1e6 << " MB/s)\n";
    if (!csv_path.empty()) {
        std::ofstream f(csv_path);
        if (!f) throw sbq::IoFailure("cannot write " + csv_path);
        f << "label,round_trip_ns_median,packets_per_sec,bytes_per_sec\n";
        f << "measured," << r.round_trip_ns_median << ',' << r.packets_per_sec << ','
          << r.bytes_per_sec << '\n';
        f << "reference," << sbq::kReferenceRoundTripNs << ','
          << sbq::kReferencePacketsPerSec << ',' << sbq::kReferenceBytesPerSec << '\n';
    }
    if (stress > 0) {
        const sbq::StressResult s = sbq::stress_verify(dir + "/stress.q", stress, 42);
        std::cout << "stress: " << s.received << " packets, " << s.mismatches
                  << " mismatches, " << s.packets_per_sec / 1e6 << " Mpkt/s\n";
        if (s.mismatches > 0 || s.received != stress) {
            std::cerr << "error: stress stream corrupted\n";
            return 3;
        }
    }
    return 0;
}

int cmd_run(const std::string& config_path, bool oracle, std::uint64_t horizon,
            std::uint64_t timeout_ms, std::uint64_t idle_ms, double max_rate,
            const std::string& worker_exe) {
    using Clock = std::chrono::steady_clock;
    sbq::LoadedConfig lc = sbq::load_network_config(config_path);
    check_io_labels(*lc.graph, lc.io);
    if (max_rate >= 0) lc.graph->set_max_rate_hz(max_rate);

    std::map<std::string, std::vector<sbq::Packet>> stimulus;
    for (const auto& [label, file] : lc.io.drive)
        stimulus[label] = sbq::load_packet_file(file);

    if (oracle) {
        const sbq::OracleResult res = sbq::run_oracle(*lc.graph, stimulus, horizon);
        std::cout << "completed in " << res.cycles << " cycles\n";
        for (const auto& [label, packets] : res.outputs) {
            std::cout << "  " << label << ": " << packets.size() << " packets\n";
            const auto cap = lc.io.capture.find(label);
            if (cap != lc.io.capture.end()) {
                std::vector<sbq::Packet> plain;
                plain.reserve(packets.size());
                for (const auto& tp : packets) plain.push_back(tp.packet);
                sbq::save_packet_file(cap->second, plain);
            }
        }
        return 0;
    }

    auto run = sbq::simulate(lc.graph->build(), worker_exe);
    struct Drive {
        sbq::QueueProducer q;
        const std::vector<sbq::Packet>* packets;
        std::size_t pos = 0;
    };
    struct Capture {
        std::string label;
        std::string file;
        sbq::QueueConsumer q;
        std::vector<sbq::Packet> got;
    };
    std::vector<Drive> drives;
    for (const auto& [label, file] : lc.io.drive)
        drives.push_back({run->external_producer(label), &stimulus[label]});
    std::vector<Capture> captures;
    for (const auto& [label, file] : lc.io.capture)
        captures.push_back({label, file, run->external_consumer(label), {}});

    const auto deadline = Clock::now() + std::chrono::milliseconds(timeout_ms);
    auto last_activity = Clock::now();
    bool interrupted = false;
    for (;;) {
        if (g_stop.load()) {
            interrupted = true;
            break;
        }
        bool moved = false;
        bool all_sent = true;
        for (auto& d : drives) {
            if (d.pos < d.packets->size() && d.q.try_send((*d.packets)[d.pos])) {
                ++d.pos;
                moved = true;
            }
            all_sent = all_sent && d.pos == d.packets->size();
        }
        sbq::Packet p;
        for (auto& c : captures)
            while (c.q.try_recv(p)) {
                c.got.push_back(p);
                moved = true;
            }
        run->check();
        const auto now = Clock::now();
        if (moved) last_activity = now;
        if (all_sent && now - last_activity > std::chrono::milliseconds(idle_ms)) break;
        if (now > deadline) {
            run->shutdown();
            throw sbq::Timeout("network still active after " + std::to_string(timeout_ms) +
                               " ms");
        }
        if (!moved) std::this_thread::sleep_for(std::chrono::microseconds(200));
    }
    run->shutdown();

    for (auto& d : drives)
        std::cout << "drove " << d.pos << " of " << d.packets->size() << " packets into '"
                  << d.q.path() << "'\n";
    for (auto& c : captures) {
        sbq::save_packet_file(c.file, c.got);
        std::cout << "captured " << c.got.size() << " packets from '" << c.label << "' to "
                  << c.file << '\n';
    }
    if (interrupted) {
        std::cerr << "interrupted\n";
        return 3;
    }
    return 0;
}

int cmd_matmul(std::size_t m, std::size_t k, std::size_t n, std::uint64_t seed,
               const std::string& a_csv, const std::string& b_csv, std::size_t tpp,
               std::uint32_t mac_delay, double rate, bool oracle, bool no_verify,
               const std::string& out_y, const std::string& out_cycles,
               const std::string& worker_exe, std::uint64_t horizon,
               std::uint64_t timeout_ms) {
    sbq::MatmulOptions opts;
    opts.a = a_csv.empty() ? sbq::random_matrix(m, k, seed) : sbq::load_matrix_csv(a_csv);
    opts.b = b_csv.empty() ? sbq::random_matrix(k, n, seed + 1) : sbq::load_matrix_csv(b_csv);
    opts.tiles_per_process = tpp;
    opts.mac_delay = mac_delay;
    opts.max_rate_hz = rate;

    sbq::GridInfo info;
    sbq::build_matmul_grid(opts, &info);
    std::cout << "grid " << info.grid_rows << "x" << info.grid_cols << " tiles in "
              << info.tile_processes << " block process(es) of " << info.sub_rows << "x"
              << info.sub_cols << (oracle ? ", synchronous in-process run" : "") << '\n';

    const sbq::MatmulResult r =
        sbq::run_matmul(opts, oracle, worker_exe, horizon,
                        std::chrono::milliseconds(timeout_ms));
    std::cout << "mean row cycle span: " << r.mean_row_cycles << '\n';

    if (!out_y.empty()) sbq::save_matrix_csv(out_y, r.y);
    if (!out_cycles.empty()) sbq::save_cycles_csv(out_cycles, r.row_cycles);

    if (!no_verify) {
        if (r.y != sbq::reference_matmul(opts.a, opts.b)) {
            std::cerr << "error: result disagrees with the reference product\n";
            return 3;
        }
        std::cout << "result matches the reference product\n";
    }
    return 0;
}

int cmd_sweep(std::size_t m, std::size_t k, std::size_t n, std::uint64_t seed,
              std::size_t tpp, std::uint32_t mac_delay, std::vector<double> rates, int reps,
              const std::string& out_csv, const std::string& worker_exe) {
    sbq::MatmulOptions base;
    base.a = sbq::random_matrix(m, k, seed);
    base.b = sbq::random_matrix(k, n, seed + 1);
    base.tiles_per_process = tpp;
    base.mac_delay = mac_delay;

    const sbq::SweepResult s = sbq::run_matmul_sweep(
        base, rates, reps, worker_exe, [](const sbq::SweepPoint& pt) {
            std::cout << "  rate " << pt.max_rate_hz << " Hz rep " << pt.rep << ": measured "
                      << pt.measured_row_cycles << " cycles vs baseline "
                      << pt.oracle_row_cycles << " (" << pt.relative_error * 100 << "% off)\n";
        });

    std::cout << "baseline row span: " << s.oracle_row_cycles << " cycles\n";
    if (s.short_delay_warning)
        std::cout << "warning: baseline span is under " << sbq::kMinMeasurableDelayCycles
                  << " cycles; rate control cannot time spans this short reliably."
                     " Raise --mac-delay.\n";
    for (const auto& [rate, err] : s.mean_error_by_rate)
        std::cout << "rate " << rate << " Hz: mean error " << err * 100 << "%\n";
    if (!out_csv.empty()) sbq::save_sweep_csv(out_csv, s);
    return 0;
}

int cmd_worker(const std::string& config_path) {
    std::ifstream f(config_path);
    if (!f) throw sbq::ConfigError("cannot open worker config: " + config_path);
    nlohmann::json cfg;
    try {
        cfg = nlohmann::json::parse(f, nullptr, true, true);
    } catch (const nlohmann::json::parse_error& e) {
        throw sbq::ConfigError(config_path + ": " + e.what());
    }
    return sbq::run_worker(cfg, g_stop);
}

}  // namespace

int main(int argc, char** argv) {
    install_signal_handlers();

    CLI::App app{"block network simulator over shared-memory packet queues"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "sbq 0.1.0");

    int rc = 0;

    // bench
    std::string bench_dir = sbq::default_queue_dir() + "/bench";
    std::uint64_t bench_packets = 2'000'000;
    std::uint64_t bench_rounds = 100'000;
    std::uint64_t bench_stress = 0;
    auto* bench = app.add_subcommand("bench", "measure queue latency and throughput");
    bench->add_option("--dir", bench_dir, "directory for the benchmark queues");
    bench->add_option("--packets", bench_packets, "packets in the throughput phase");
    bench->add_option("--rounds", bench_rounds, "ping-pong rounds in the latency phase");
    bench->add_option("--stress", bench_stress, "also run a checksummed stress stream of N packets");
    std::string bench_csv;
    bench->add_option("--out", bench_csv, "write the metrics to this CSV file");
    bench->callback([&] {
        rc = cmd_bench(bench_dir, bench_packets, bench_rounds, bench_stress, bench_csv);
    });

    // run
    std::string run_config;
    bool run_oracle_flag = false;
    std::uint64_t run_horizon = 10'000'000;
    std::uint64_t run_timeout_ms = 60'000;
    std::uint64_t run_idle_ms = 1'000;
    std::string run_worker_exe;
    auto* runc = app.add_subcommand("run", "run a network described by a config file");
    runc->add_option("config", run_config, "network config file")->required();
    runc->add_flag("--oracle", run_oracle_flag,
                   "run synchronously in-process instead of spawning workers");
    runc->add_option("--horizon", run_horizon, "synchronous run cycle limit");
    runc->add_option("--timeout-ms", run_timeout_ms, "overall wall-clock limit");
    runc->add_option("--idle-ms", run_idle_ms,
                     "stop after this long with no packet movement (spawned runs)");
    runc->add_option("--worker-exe", run_worker_exe, "executable for worker processes");
    double run_max_rate = -1;
    runc->add_option("--max-rate", run_max_rate,
                     "cap every worker's cycle rate in Hz (0 = unlimited)");
    runc->callback([&] {
        rc = cmd_run(run_config, run_oracle_flag, run_horizon, run_timeout_ms, run_idle_ms,
                     run_max_rate, run_worker_exe);
    });

    // matmul
    std::size_t mm_m = 4, mm_k = 4, mm_n = 4;
    std::uint64_t mm_seed = 1;
    std::string mm_a, mm_b;
    std::size_t mm_tpp = 1;
    std::uint32_t mm_mac = 0;
    double mm_rate = 0;
    bool mm_oracle = false, mm_no_verify = false;
    std::string mm_out_y, mm_out_cycles, mm_worker_exe;
    std::uint64_t mm_horizon = 50'000'000;
    std::uint64_t mm_timeout_ms = 300'000;
    auto* mm = app.add_subcommand("matmul", "multiply matrices on a systolic tile grid");
    mm->add_option("--m", mm_m, "rows of a");
    mm->add_option("--k,--rows", mm_k, "inner dimension (tile grid rows)");
    mm->add_option("--n,--cols", mm_n, "columns of b (tile grid columns)");
    mm->add_option("--seed", mm_seed, "seed for the random matrices");
    mm->add_option("--a", mm_a, "CSV file for a (overrides --m/--k/--seed)");
    mm->add_option("--b", mm_b, "CSV file for b (overrides --k/--n/--seed)");
    mm->add_option("--tiles-per-process,--tiles-per-proc", mm_tpp,
                   "tiles grouped into one process");
    mm->add_option("--mac-delay", mm_mac, "extra cycles each tile holds a result");
    mm->add_option("--rate,--max-rate", mm_rate,
                   "per-process cycle rate cap in Hz (0 = unlimited)");
    mm->add_flag("--oracle", mm_oracle, "synchronous in-process run");
    mm->add_flag("--no-verify", mm_no_verify, "skip checking against the reference product");
    mm->add_option("--out-y", mm_out_y, "write the result matrix to this CSV file");
    mm->add_option("--out-cycles", mm_out_cycles, "write per-row cycle spans to this CSV file");
    mm->add_option("--worker-exe", mm_worker_exe, "executable for worker processes");
    mm->add_option("--horizon", mm_horizon, "synchronous run cycle limit");
    mm->add_option("--timeout-ms", mm_timeout_ms, "spawned run wall-clock limit");
    mm->callback([&] {
        rc = cmd_matmul(mm_m, mm_k, mm_n, mm_seed, mm_a, mm_b, mm_tpp, mm_mac, mm_rate,
                        mm_oracle, mm_no_verify, mm_out_y, mm_out_cycles, mm_worker_exe,
                        mm_horizon, mm_timeout_ms);
    });

    // sweep
    std::size_t sw_m = 16, sw_k = 8, sw_n = 8;
    std::uint64_t sw_seed = 1;
    std::size_t sw_tpp = 16;
    std::uint32_t sw_mac = 32;
    std::vector<double> sw_rates{200'000, 20'000, 2'000, 200};
    int sw_reps = 3;
    std::string sw_out, sw_worker_exe;
    auto* sw = app.add_subcommand(
        "sweep", "measure timing error of spawned runs against the synchronous baseline");
    sw->add_option("--m", sw_m, "rows of a");
    sw->add_option("--k", sw_k, "inner dimension");
    sw->add_option("--n", sw_n, "columns of b");
    sw->add_option("--seed", sw_seed, "seed for the random matrices");
    sw->add_option("--tiles-per-process,--tiles-per-proc", sw_tpp,
                   "tiles grouped into one process");
    sw->add_option("--mac-delay", sw_mac, "extra cycles each tile holds a result");
    sw->add_option("--rates", sw_rates, "cycle rate caps to sweep, in Hz")->delimiter(',');
    sw->add_option("--reps", sw_reps, "runs per rate");
    sw->add_option("--out", sw_out, "write per-run points to this CSV file");
    sw->add_option("--worker-exe", sw_worker_exe, "executable for worker processes");
    sw->callback([&] {
        rc = cmd_sweep(sw_m, sw_k, sw_n, sw_seed, sw_tpp, sw_mac, sw_rates, sw_reps, sw_out,
                       sw_worker_exe);
    });

    // internal helpers, hidden from --help
    std::string wk_config;
    auto* wk = app.add_subcommand("worker");
    wk->group("");
    wk->add_option("--config", wk_config)->required();
    wk->callback([&] { rc = cmd_worker(wk_config); });

    std::string be_ping, be_pong;
    auto* be = app.add_subcommand("bench-echo");
    be->group("");
    be->add_option("ping", be_ping)->required();
    be->add_option("pong", be_pong)->required();
    be->callback([&] { rc = sbq::bench_echo_main(be_ping, be_pong, &g_stop); });

    std::string ss_path;
    std::uint64_t ss_count = 0, ss_seed = 0;
    auto* ss = app.add_subcommand("stress-send");
    ss->group("");
    ss->add_option("path", ss_path)->required();
    ss->add_option("count", ss_count)->required();
    ss->add_option("seed", ss_seed)->required();
    ss->callback([&] { rc = sbq::stress_send_main(ss_path, ss_count, ss_seed, &g_stop); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const sbq::ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const sbq::GraphError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const sbq::InvalidParam& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const sbq::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    }
    return rc;
}

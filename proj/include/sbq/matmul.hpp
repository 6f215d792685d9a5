#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "sbq/netgraph.hpp"

namespace sbq {

using Matrix = std::vector<std::vector<std::int64_t>>;

// Plain triple-loop product, the ground truth the grid is checked against.
Matrix reference_matmul(const Matrix& a, const Matrix& b);

Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed,
                     std::int64_t lo = -9, std::int64_t hi = 9);

Matrix load_matrix_csv(const std::string& path);
void save_matrix_csv(const std::string& path, const Matrix& m);

// Systolic grid plan: one tile per element of b (grid is rows x cols).
// Transposed rows of a stream in on the west edge, zeros on the north edge,
// partial sums flow south, and rows of y = a*b appear on the south edge
// where a collector records per-row cycle spans. tiles_per_process > 1
// groups tiles into rectangular synchronous sub-grids, each composed into
// the outer network as a single process.
struct MatmulOptions {
    Matrix a;  // m x rows
    Matrix b;  // rows x cols
    std::size_t tiles_per_process = 1;
    std::uint32_t mac_delay = 0;  // extra cycles a tile holds each result
    double max_rate_hz = 0;       // applied to every instance; 0 = unlimited
    std::string net_name = "matmul";
};

struct GridInfo {
    std::size_t grid_rows = 0;
    std::size_t grid_cols = 0;
    std::size_t tile_processes = 0;  // tile instances in the outer graph
    std::size_t sub_rows = 0;        // sub-grid shape (1x1 when not composed)
    std::size_t sub_cols = 0;
};

std::shared_ptr<NetworkGraph> build_matmul_grid(const MatmulOptions& opts,
                                                GridInfo* info = nullptr);

struct MatmulResult {
    Matrix y;
    std::vector<std::uint64_t> row_cycles;  // collector cycle span per row
    double mean_row_cycles = 0;
};

// Runs the grid to completion and assembles y from the collector's row
// reports. oracle=true uses the synchronous scheduler in-process; otherwise
// the grid is spawned and driven over its external result queue.
MatmulResult run_matmul(const MatmulOptions& opts, bool oracle,
                        const std::string& worker_exe = "",
                        std::uint64_t horizon_cycles = 50'000'000,
                        std::chrono::milliseconds timeout = std::chrono::milliseconds(300000));

// Accuracy sweep: one synchronous baseline, then reps distributed runs per
// rate. relative_error = |measured - baseline| / baseline, using the mean
// row cycle span of each run.
struct SweepPoint {
    double max_rate_hz;
    int rep;
    double measured_row_cycles;
    double oracle_row_cycles;
    double relative_error;
};

struct SweepResult {
    std::vector<SweepPoint> points;
    std::map<double, double> mean_error_by_rate;
    double oracle_row_cycles = 0;
    bool short_delay_warning = false;  // baseline span under the reliable floor
};

SweepResult run_matmul_sweep(const MatmulOptions& base, const std::vector<double>& rates,
                             int reps, const std::string& worker_exe = "",
                             const std::function<void(const SweepPoint&)>& on_point = {});

void save_cycles_csv(const std::string& path, const std::vector<std::uint64_t>& row_cycles);
void save_sweep_csv(const std::string& path, const SweepResult& s);

}  // namespace sbq

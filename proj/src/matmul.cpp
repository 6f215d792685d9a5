#include "sbq/matmul.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "sbq/blocks.hpp"
#include "sbq/config.hpp"
#include "sbq/pacing.hpp"

namespace sbq {

using nlohmann::json;

namespace {

void require_rect(const Matrix& m, const char* what) {
    if (m.empty() || m[0].empty())
        throw ShapeMismatch(std::string(what) + " matrix must be non-empty");
    for (const auto& row : m)
        if (row.size() != m[0].size())
            throw ShapeMismatch(std::string(what) + " matrix has ragged rows");
}

}  // namespace

Matrix reference_matmul(const Matrix& a, const Matrix& b) {
    require_rect(a, "left");
    require_rect(b, "right");
    if (a[0].size() != b.size())
        throw ShapeMismatch("inner dimensions disagree: " + std::to_string(a[0].size()) +
                            " vs " + std::to_string(b.size()));
    const std::size_t m = a.size(), k = b.size(), n = b[0].size();
    Matrix y(m, std::vector<std::int64_t>(n, 0));
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t t = 0; t < k; ++t) {
            const std::int64_t av = a[i][t];
            for (std::size_t j = 0; j < n; ++j) y[i][j] += av * b[t][j];
        }
    return y;
}

Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed,
                     std::int64_t lo, std::int64_t hi) {
    if (rows == 0 || cols == 0) throw ShapeMismatch("matrix dimensions must be positive");
    if (lo > hi) throw InvalidParam("empty value range");
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::int64_t> dist(lo, hi);
    Matrix m(rows, std::vector<std::int64_t>(cols));
    for (auto& row : m)
        for (auto& v : row) v = dist(rng);
    return m;
}

Matrix load_matrix_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open matrix file: " + path);
    Matrix m;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        bool blank = true;
        for (char c : line)
            if (!std::isspace(static_cast<unsigned char>(c))) blank = false;
        if (blank) continue;
        std::vector<std::int64_t> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            try {
                row.push_back(std::stoll(cell));
            } catch (const std::exception&) {
                throw ConfigError(path + ":" + std::to_string(lineno) +
                                  ": not an integer: '" + cell + "'");
            }
        }
        if (!m.empty() && row.size() != m[0].size())
            throw ConfigError(path + ":" + std::to_string(lineno) + ": ragged row");
        m.push_back(std::move(row));
    }
    if (m.empty()) throw ConfigError(path + ": no rows");
    return m;
}

void save_matrix_csv(const std::string& path, const Matrix& m) {
    std::ofstream f(path);
    if (!f) throw IoFailure("cannot write matrix file: " + path);
    for (const auto& row : m) {
        for (std::size_t j = 0; j < row.size(); ++j) {
            if (j) f << ',';
            f << row[j];
        }
        f << '\n';
    }
    if (!f) throw IoFailure("short write to matrix file: " + path);
}

namespace {

// Sub-grid shape: sr x sc tiles per process with sr | grid_rows,
// sc | grid_cols, sr * sc = tiles_per_process. Prefers square-ish shapes.
std::pair<std::size_t, std::size_t> sub_shape(std::size_t tpp, std::size_t rows,
                                              std::size_t cols) {
    std::pair<std::size_t, std::size_t> best{0, 0};
    std::size_t best_gap = SIZE_MAX;
    for (std::size_t sr = 1; sr <= rows && sr <= tpp; ++sr) {
        if (rows % sr != 0 || tpp % sr != 0) continue;
        const std::size_t sc = tpp / sr;
        if (sc > cols || cols % sc != 0) continue;
        const std::size_t gap = sr > sc ? sr - sc : sc - sr;
        if (gap < best_gap) {
            best_gap = gap;
            best = {sr, sc};
        }
    }
    if (best.first == 0)
        throw InvalidParam("tiles_per_process=" + std::to_string(tpp) +
                           " does not tile a " + std::to_string(rows) + "x" +
                           std::to_string(cols) + " grid");
    return best;
}

std::string idx2(const char* stem, std::size_t i, std::size_t j) {
    return std::string(stem) + "_" + std::to_string(i) + "_" + std::to_string(j);
}

}  // namespace

std::shared_ptr<NetworkGraph> build_matmul_grid(const MatmulOptions& opts, GridInfo* info) {
    require_rect(opts.a, "left");
    require_rect(opts.b, "right");
    if (opts.a[0].size() != opts.b.size())
        throw ShapeMismatch("a is " + std::to_string(opts.a.size()) + "x" +
                            std::to_string(opts.a[0].size()) + " but b has " +
                            std::to_string(opts.b.size()) + " rows");
    const std::size_t m = opts.a.size();
    const std::size_t grid_rows = opts.b.size();
    const std::size_t grid_cols = opts.b[0].size();
    const std::size_t tpp = opts.tiles_per_process ? opts.tiles_per_process : 1;
    const auto [sr, sc] = sub_shape(tpp, grid_rows, grid_cols);
    const std::size_t outer_rows = grid_rows / sr;
    const std::size_t outer_cols = grid_cols / sc;

    auto g = std::make_shared<NetworkGraph>(opts.net_name, NetMode::Distributed);
    g->set_max_rate_hz(opts.max_rate_hz);

    auto tile_def = [&](NetworkGraph& target, std::size_t gi, std::size_t gj) {
        return target.add_block(idx2("tile", gi, gj), "matmul_tile",
                                json{{"b", opts.b[gi][gj]}, {"mac_delay", opts.mac_delay}});
    };

    // One instance per grid position (tpp == 1) or per sub-grid otherwise.
    std::vector<std::vector<Instance*>> grid(outer_rows, std::vector<Instance*>(outer_cols));
    if (tpp == 1) {
        for (std::size_t i = 0; i < grid_rows; ++i)
            for (std::size_t j = 0; j < grid_cols; ++j)
                grid[i][j] = &g->instantiate(tile_def(*g, i, j), idx2("tile", i, j));
    } else {
        for (std::size_t I = 0; I < outer_rows; ++I)
            for (std::size_t J = 0; J < outer_cols; ++J) {
                auto inner = std::make_shared<NetworkGraph>(idx2(opts.net_name.c_str(), I, J),
                                                            NetMode::SingleNetlist);
                std::vector<std::vector<Instance*>> tiles(sr, std::vector<Instance*>(sc));
                for (std::size_t r = 0; r < sr; ++r)
                    for (std::size_t c = 0; c < sc; ++c)
                        tiles[r][c] = &inner->instantiate(
                            tile_def(*inner, I * sr + r, J * sc + c), idx2("t", r, c));
                for (std::size_t r = 0; r < sr; ++r) {
                    inner->external("w" + std::to_string(r), tiles[r][0]->port("west"));
                    inner->external("e" + std::to_string(r), tiles[r][sc - 1]->port("east"));
                    for (std::size_t c = 0; c + 1 < sc; ++c)
                        inner->connect(tiles[r][c]->port("east"), tiles[r][c + 1]->port("west"));
                }
                for (std::size_t c = 0; c < sc; ++c) {
                    inner->external("n" + std::to_string(c), tiles[0][c]->port("north"));
                    inner->external("s" + std::to_string(c), tiles[sr - 1][c]->port("south"));
                    for (std::size_t r = 0; r + 1 < sr; ++r)
                        inner->connect(tiles[r][c]->port("south"), tiles[r + 1][c]->port("north"));
                }
                grid[I][J] = &g->instantiate(compose(idx2("sub", I, J), std::move(inner)),
                                             idx2("sub", I, J));
            }
    }

    auto west_in = [&](std::size_t I, std::size_t r) {
        return grid[I][0]->port(tpp == 1 ? "west" : "w" + std::to_string(r));
    };
    auto east_out = [&](std::size_t I, std::size_t J, std::size_t r) {
        return grid[I][J]->port(tpp == 1 ? "east" : "e" + std::to_string(r));
    };
    auto west_of = [&](std::size_t I, std::size_t J, std::size_t r) {
        return grid[I][J]->port(tpp == 1 ? "west" : "w" + std::to_string(r));
    };
    auto north_in = [&](std::size_t J, std::size_t c) {
        return grid[0][J]->port(tpp == 1 ? "north" : "n" + std::to_string(c));
    };
    auto north_of = [&](std::size_t I, std::size_t J, std::size_t c) {
        return grid[I][J]->port(tpp == 1 ? "north" : "n" + std::to_string(c));
    };
    auto south_out = [&](std::size_t I, std::size_t J, std::size_t c) {
        return grid[I][J]->port(tpp == 1 ? "south" : "s" + std::to_string(c));
    };

    // West edge streams column i of a; north edge seeds zero partial sums.
    json streams = json::array();
    for (std::size_t i = 0; i < grid_rows; ++i) {
        json col = json::array();
        for (std::size_t t = 0; t < m; ++t) col.push_back(opts.a[t][i]);
        streams.push_back(std::move(col));
    }
    auto& feeder = g->instantiate(
        g->add_block("west_feed", "vec_feeder", json{{"streams", std::move(streams)}}),
        "west_feed");
    auto& zeros = g->instantiate(
        g->add_block("north_feed", "const_feeder",
                     json{{"ports", grid_cols}, {"value", 0}, {"count", m}}),
        "north_feed");
    auto& sink = g->instantiate(
        g->add_block("east_sink", "null_sink", json{{"ports", grid_rows}}), "east_sink");
    auto& collect = g->instantiate(
        g->add_block("collect", "collector", json{{"rows", m}, {"cols", grid_cols}}),
        "collect");

    for (std::size_t i = 0; i < grid_rows; ++i) {
        const std::size_t I = i / sr, r = i % sr;
        g->connect(feeder.port("p" + std::to_string(i)), west_in(I, r));
        for (std::size_t J = 0; J + 1 < outer_cols; ++J)
            g->connect(east_out(I, J, r), west_of(I, J + 1, r));
        g->connect(east_out(I, outer_cols - 1, r), sink.port("p" + std::to_string(i)));
    }
    for (std::size_t j = 0; j < grid_cols; ++j) {
        const std::size_t J = j / sc, c = j % sc;
        g->connect(zeros.port("p" + std::to_string(j)), north_in(J, c));
        for (std::size_t I = 0; I + 1 < outer_rows; ++I)
            g->connect(south_out(I, J, c), north_of(I + 1, J, c));
        g->connect(south_out(outer_rows - 1, J, c), collect.port("s" + std::to_string(j)));
    }
    g->external("result", collect.port("result"));

    if (info) {
        info->grid_rows = grid_rows;
        info->grid_cols = grid_cols;
        info->tile_processes = outer_rows * outer_cols;
        info->sub_rows = sr;
        info->sub_cols = sc;
    }
    return g;
}

MatmulResult run_matmul(const MatmulOptions& opts, bool oracle, const std::string& worker_exe,
                        std::uint64_t horizon_cycles, std::chrono::milliseconds timeout) {
    auto g = build_matmul_grid(opts);
    const std::size_t m = opts.a.size();
    const std::size_t n = opts.b[0].size();

    MatmulResult res;
    res.y.assign(m, std::vector<std::int64_t>(n, 0));
    res.row_cycles.assign(m, 0);
    std::vector<bool> seen(m, false);
    std::size_t done = 0;
    auto take_report = [&](const RowReport& rep) {
        if (rep.row >= m || rep.values.size() != n)
            throw ShapeMismatch("result row " + std::to_string(rep.row) + " has " +
                                std::to_string(rep.values.size()) + " values, expected " +
                                std::to_string(n));
        if (!seen[rep.row]) {
            seen[rep.row] = true;
            ++done;
        }
        res.y[rep.row] = rep.values;
        res.row_cycles[rep.row] = rep.cycles;
    };

    RowReportAssembler assembler;
    if (oracle) {
        const OracleResult orc = run_oracle(*g, {}, horizon_cycles);
        for (const auto& tp : orc.outputs.at("result"))
            if (auto rep = assembler.feed(tp.packet)) take_report(*rep);
    } else {
        auto run = simulate(g->build(), worker_exe);
        QueueConsumer result = run->external_consumer("result");
        const auto deadline = std::chrono::steady_clock::now() + timeout;
        Packet p;
        while (done < m) {
            if (result.try_recv(p)) {
                if (auto rep = assembler.feed(p)) take_report(*rep);
                continue;
            }
            run->check();
            if (std::chrono::steady_clock::now() > deadline)
                throw Timeout("no complete result after " +
                              std::to_string(timeout.count()) + " ms");
            std::this_thread::sleep_for(std::chrono::microseconds(200));
        }
        run->shutdown();
    }
    if (done < m)
        throw Error("result stream ended after " + std::to_string(done) + " of " +
                    std::to_string(m) + " rows");
    res.mean_row_cycles =
        static_cast<double>(std::accumulate(res.row_cycles.begin(), res.row_cycles.end(),
                                            std::uint64_t{0})) /
        static_cast<double>(m);
    return res;
}

SweepResult run_matmul_sweep(const MatmulOptions& base, const std::vector<double>& rates,
                             int reps, const std::string& worker_exe,
                             const std::function<void(const SweepPoint&)>& on_point) {
    if (rates.empty()) throw InvalidParam("sweep needs at least one rate");
    if (reps < 1) throw InvalidParam("sweep needs at least one rep");

    MatmulOptions oracle_opts = base;
    oracle_opts.max_rate_hz = 0;
    const MatmulResult baseline = run_matmul(oracle_opts, true, worker_exe);

    SweepResult s;
    s.oracle_row_cycles = baseline.mean_row_cycles;
    s.short_delay_warning = baseline.mean_row_cycles < kMinMeasurableDelayCycles;

    std::vector<double> ordered = rates;
    std::sort(ordered.begin(), ordered.end(), std::greater<>());

    for (const double rate : ordered) {
        if (rate <= 0) throw InvalidParam("sweep rates must be positive");
        double err_sum = 0;
        for (int rep = 0; rep < reps; ++rep) {
            MatmulOptions opts = base;
            opts.max_rate_hz = rate;
            const MatmulResult r = run_matmul(opts, false, worker_exe);
            SweepPoint pt;
            pt.max_rate_hz = rate;
            pt.rep = rep;
            pt.measured_row_cycles = r.mean_row_cycles;
            pt.oracle_row_cycles = s.oracle_row_cycles;
            pt.relative_error = s.oracle_row_cycles > 0
                                    ? std::abs(r.mean_row_cycles - s.oracle_row_cycles) /
                                          s.oracle_row_cycles
                                    : 0;
            s.points.push_back(pt);
            err_sum += pt.relative_error;
            if (on_point) on_point(pt);
        }
        s.mean_error_by_rate[rate] = err_sum / reps;
    }
    return s;
}

void save_cycles_csv(const std::string& path, const std::vector<std::uint64_t>& row_cycles) {
    std::ofstream f(path);
    if (!f) throw IoFailure("cannot write " + path);
    f << "row,cycles\n";
    for (std::size_t i = 0; i < row_cycles.size(); ++i) f << i << ',' << row_cycles[i] << '\n';
    if (!f) throw IoFailure("short write to " + path);
}

void save_sweep_csv(const std::string& path, const SweepResult& s) {
    std::ofstream f(path);
    if (!f) throw IoFailure("cannot write " + path);
    f << "max_rate_hz,rep,measured_row_cycles,oracle_row_cycles,relative_error\n";
    for (const auto& p : s.points)
        f << p.max_rate_hz << ',' << p.rep << ',' << p.measured_row_cycles << ','
          << p.oracle_row_cycles << ',' << p.relative_error << '\n';
    // Aggregate row per rate, highest first to match the report order.
    for (auto it = s.mean_error_by_rate.rbegin(); it != s.mean_error_by_rate.rend(); ++it) {
        double mean_measured = 0;
        int n = 0;
        for (const auto& p : s.points)
            if (p.max_rate_hz == it->first) {
                mean_measured += p.measured_row_cycles;
                ++n;
            }
        if (n > 0) mean_measured /= n;
        f << it->first << ",mean," << mean_measured << ',' << s.oracle_row_cycles << ','
          << it->second << '\n';
    }
    if (!f) throw IoFailure("short write to " + path);
}

}  // namespace sbq

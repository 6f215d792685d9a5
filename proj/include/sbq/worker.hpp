#pragma once

#include <atomic>

#include <json.hpp>

namespace sbq {

// Entry point for a spawned worker process: opens the queues named in the
// config, builds the block (or inner synchronous network), and cycles until
// stop is set. Returns a process exit code.
int run_worker(const nlohmann::json& config, const std::atomic<bool>& stop);

}  // namespace sbq

#pragma once

#include <string>
#include <sys/types.h>
#include <vector>

namespace sbq {

// Resolves the executable used for helper processes (queue workers, bench
// peers): explicit override, then $SBQ_WORKER_EXE, then "sbq" on PATH.
std::string worker_exe_path(const std::string& override_path = "");

// posix_spawn with argv[0] = exe; stdout/stderr go to log_path when given.
pid_t spawn_process(const std::string& exe, const std::vector<std::string>& args,
                    const std::string& log_path = "");

}  // namespace sbq

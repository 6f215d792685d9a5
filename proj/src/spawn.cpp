#include "sbq/spawn.hpp"

#include <cstdlib>
#include <cstring>

#include <fcntl.h>
#include <spawn.h>

#include "sbq/errors.hpp"

extern char** environ;

namespace sbq {

std::string worker_exe_path(const std::string& override_path) {
    if (!override_path.empty()) return override_path;
    if (const char* env = std::getenv("SBQ_WORKER_EXE"); env && *env) return env;
    return "sbq";
}

pid_t spawn_process(const std::string& exe, const std::vector<std::string>& args,
                    const std::string& log_path) {
    std::vector<char*> argv;
    argv.push_back(const_cast<char*>(exe.c_str()));
    for (const auto& a : args) argv.push_back(const_cast<char*>(a.c_str()));
    argv.push_back(nullptr);

    posix_spawn_file_actions_t fa;
    posix_spawn_file_actions_init(&fa);
    if (!log_path.empty()) {
        posix_spawn_file_actions_addopen(&fa, 1, log_path.c_str(),
                                         O_CREAT | O_WRONLY | O_TRUNC, 0644);
        posix_spawn_file_actions_adddup2(&fa, 1, 2);
    }
    pid_t pid = -1;
    const int rc = posix_spawnp(&pid, exe.c_str(), &fa, nullptr, argv.data(), environ);
    posix_spawn_file_actions_destroy(&fa);
    if (rc != 0)
        throw SpawnFailure("cannot spawn '" + exe + "': " + std::strerror(rc));
    return pid;
}

}  // namespace sbq

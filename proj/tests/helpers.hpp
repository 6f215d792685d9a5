#pragma once

#include <cerrno>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <sys/wait.h>

#include "sbq/packet.hpp"
#include "sbq/spawn.hpp"

namespace sbqtest {

// Unique scratch directory, removed on destruction.
class TempDir {
public:
    TempDir() {
        auto tmpl = (std::filesystem::temp_directory_path() / "sbqtest-XXXXXX").string();
        std::vector<char> buf(tmpl.begin(), tmpl.end());
        buf.push_back('\0');
        if (!mkdtemp(buf.data())) throw std::runtime_error("mkdtemp failed");
        path_ = buf.data();
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::string& path() const { return path_; }
    std::string file(const std::string& name) const { return path_ + "/" + name; }

private:
    std::string path_;
};

class ScopedEnv {
public:
    ScopedEnv(std::string name, const std::string& value) : name_(std::move(name)) {
        if (const char* old = getenv(name_.c_str())) old_ = old;
        setenv(name_.c_str(), value.c_str(), 1);
    }
    ~ScopedEnv() {
        if (old_.has_value())
            setenv(name_.c_str(), old_->c_str(), 1);
        else
            unsetenv(name_.c_str());
    }
    ScopedEnv(const ScopedEnv&) = delete;
    ScopedEnv& operator=(const ScopedEnv&) = delete;

private:
    std::string name_;
    std::optional<std::string> old_;
};

// Scratch dir that also routes bare queue names into itself.
struct QueueDirFixture {
    TempDir dir;
    ScopedEnv env{"SBQ_DIR", dir.path()};
};

inline sbq::Packet test_packet(std::uint32_t i) {
    sbq::Packet p;
    p.flags = i & 1;
    p.destination = i;
    for (std::size_t b = 0; b < sbq::kPayloadBytes; ++b)
        p.data[b] = static_cast<std::uint8_t>(i * 31 + b);
    return p;
}

inline std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

inline void write_file(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary);
    f << content;
}

struct CliResult {
    int exit_code = -1;
    std::string output;  // stdout and stderr interleaved
};

#ifdef SBQ_CLI_PATH
// Runs the real CLI binary and captures its merged output. The environment
// (SBQ_DIR in particular) is inherited from the test process.
inline CliResult run_cli(const std::vector<std::string>& args, const std::string& log_path) {
    const pid_t pid = sbq::spawn_process(SBQ_CLI_PATH, args, log_path);
    int status = 0;
    while (waitpid(pid, &status, 0) < 0 && errno == EINTR) {
    }
    CliResult r;
    if (WIFEXITED(status))
        r.exit_code = WEXITSTATUS(status);
    else if (WIFSIGNALED(status))
        r.exit_code = 128 + WTERMSIG(status);
    r.output = read_file(log_path);
    return r;
}
#endif

}  // namespace sbqtest

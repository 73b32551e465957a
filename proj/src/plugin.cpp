#include "railsynth/plugin.hpp"

#include <cerrno>
#include <csignal>
#include <cstring>
#include <mutex>

#include <fcntl.h>
#include <poll.h>
#include <sys/wait.h>
#include <unistd.h>

#include "railsynth/errors.hpp"

namespace railsynth {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

PluginProcess::PluginProcess(std::string command, std::chrono::milliseconds timeout)
    : command_(std::move(command)), timeout_(timeout) {
    if (command_.empty()) throw PluginError("plugin command is empty");
}

PluginProcess::~PluginProcess() { terminate(); }

void PluginProcess::spawn() {
    // A child that died leaves a broken pipe; writes must fail with EPIPE
    // rather than kill the host.
    static std::once_flag sigpipe_once;
    std::call_once(sigpipe_once, [] { std::signal(SIGPIPE, SIG_IGN); });
    int in_pipe[2];
    int out_pipe[2];
    if (pipe2(in_pipe, O_CLOEXEC) != 0) throw PluginError("pipe failed: " + std::string(std::strerror(errno)));
    if (pipe2(out_pipe, O_CLOEXEC) != 0) {
        close(in_pipe[0]);
        close(in_pipe[1]);
        throw PluginError("pipe failed: " + std::string(std::strerror(errno)));
    }
    const pid_t pid = fork();
    if (pid < 0) {
        for (int fd : {in_pipe[0], in_pipe[1], out_pipe[0], out_pipe[1]}) close(fd);
        throw PluginError("fork failed for plugin '" + command_ + "'");
    }
    if (pid == 0) {
        // Own process group, so a kill also reaches whatever the shell spawned.
        setpgid(0, 0);
        dup2(in_pipe[0], STDIN_FILENO);
        dup2(out_pipe[1], STDOUT_FILENO);
        execl("/bin/sh", "sh", "-c", command_.c_str(), static_cast<char*>(nullptr));
        _exit(127);
    }
    setpgid(pid, pid);
    close(in_pipe[0]);
    close(out_pipe[1]);
    pid_ = pid;
    to_child_ = in_pipe[1];
    from_child_ = out_pipe[0];
    pending_.clear();
}

void PluginProcess::terminate() {
    if (to_child_ >= 0) close(to_child_);
    if (from_child_ >= 0) close(from_child_);
    to_child_ = from_child_ = -1;
    if (pid_ > 0) {
        // Closing stdin lets well-behaved plugins exit on their own.
        for (int i = 0; i < 20; ++i) {
            if (waitpid(pid_, nullptr, WNOHANG) == pid_) {
                pid_ = -1;
                return;
            }
            usleep(5000);
        }
        kill(-pid_, SIGKILL);
        waitpid(pid_, nullptr, 0);
    }
    pid_ = -1;
}

json PluginProcess::request(const json& req) {
    if (pid_ <= 0) spawn();

    const std::string line = req.dump() + "\n";
    std::size_t written = 0;
    while (written < line.size()) {
        const ssize_t n = write(to_child_, line.data() + written, line.size() - written);
        if (n < 0) {
            if (errno == EINTR) continue;
            terminate();
            throw PluginError("plugin '" + command_ + "': write failed (" + std::strerror(errno) + ")");
        }
        written += static_cast<std::size_t>(n);
    }

    const auto deadline = Clock::now() + timeout_;
    std::size_t newline;
    while ((newline = pending_.find('\n')) == std::string::npos) {
        const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now());
        if (left.count() <= 0) {
            terminate();
            throw PluginError("plugin '" + command_ + "': timed out after " + std::to_string(timeout_.count()) + " ms");
        }
        pollfd pfd{from_child_, POLLIN, 0};
        const int rc = poll(&pfd, 1, static_cast<int>(left.count()));
        if (rc < 0 && errno == EINTR) continue;
        if (rc < 0) {
            terminate();
            throw PluginError("plugin '" + command_ + "': poll failed");
        }
        if (rc == 0) continue;
        char buf[4096];
        const ssize_t n = read(from_child_, buf, sizeof buf);
        if (n < 0 && errno == EINTR) continue;
        if (n <= 0) {
            terminate();
            throw PluginError("plugin '" + command_ + "': exited without a response");
        }
        pending_.append(buf, static_cast<std::size_t>(n));
    }
    const std::string response = pending_.substr(0, newline);
    pending_.erase(0, newline + 1);

    json parsed;
    try {
        parsed = json::parse(response);
    } catch (const json::exception& e) {
        terminate();
        throw PluginError("plugin '" + command_ + "': response is not JSON: " + response.substr(0, 200));
    }
    if (!parsed.is_object()) throw PluginError("plugin '" + command_ + "': response is not a JSON object");
    if (parsed.contains("error"))
        throw PluginError("plugin '" + command_ + "' reported: " + parsed["error"].dump());
    return parsed;
}

PluginPool::PluginPool(const std::string& command, std::size_t size, std::chrono::milliseconds timeout)
    : command_(command) {
    if (size == 0) size = 1;
    for (std::size_t i = 0; i < size; ++i) {
        procs_.push_back(std::make_unique<PluginProcess>(command, timeout));
        idle_.push_back(procs_.back().get());
    }
}

json PluginPool::request(const json& req) {
    PluginProcess* proc = nullptr;
    {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return !idle_.empty(); });
        proc = idle_.back();
        idle_.pop_back();
    }
    struct Release {
        PluginPool* pool;
        PluginProcess* proc;
        ~Release() {
            {
                std::lock_guard lock(pool->mu_);
                pool->idle_.push_back(proc);
            }
            pool->cv_.notify_one();
        }
    } release{this, proc};
    return proc->request(req);
}

} // namespace railsynth

#pragma once

#include <chrono>
#include <condition_variable>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <json.hpp>

namespace railsynth {

/// A long-lived child process speaking line-delimited JSON: one request line
/// on stdin, one response line on stdout. At most one request is in flight.
/// The child is (re)spawned lazily and killed on timeout or protocol errors.
class PluginProcess {
public:
    explicit PluginProcess(std::string command,
                           std::chrono::milliseconds timeout = std::chrono::seconds(30));
    ~PluginProcess();

    PluginProcess(const PluginProcess&) = delete;
    PluginProcess& operator=(const PluginProcess&) = delete;

    /// Sends `request` and returns the parsed response object. Throws
    /// PluginError (message includes the command) on any failure. A response
    /// containing an "error" key is reported as a PluginError too.
    nlohmann::json request(const nlohmann::json& request);

    const std::string& command() const { return command_; }

private:
    void spawn();
    void terminate();

    std::string command_;
    std::chrono::milliseconds timeout_;
    int pid_ = -1;
    int to_child_ = -1;
    int from_child_ = -1;
    std::string pending_;
};

/// Fixed-size pool of identical plugin processes for parallel callers.
class PluginPool {
public:
    PluginPool(const std::string& command, std::size_t size,
               std::chrono::milliseconds timeout = std::chrono::seconds(30));

    nlohmann::json request(const nlohmann::json& request);

    const std::string& command() const { return command_; }

private:
    std::string command_;
    std::vector<std::unique_ptr<PluginProcess>> procs_;
    std::vector<PluginProcess*> idle_;
    std::mutex mu_;
    std::condition_variable cv_;
};

} // namespace railsynth

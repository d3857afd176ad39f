#pragma once

#include "mbcbf/collect.hpp"
#include "mbcbf/driver.hpp"
#include "mbcbf/episode.hpp"

#include <json.hpp>

#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace mbcbf {

inline constexpr int kWireSchemaVersion = 1;
inline constexpr std::uint16_t kDefaultPort = 8765;
inline constexpr const char* kPortEnvVar = "MBCBF_PORT";

struct FeedbackThresholds {
    double warn_h = 0.5;
    double alert_h = 0.2;
    void validate() const;
    /// "none", "warn" or "alert" for a given h.
    std::string cue(double h) const;
};

struct SessionConfig {
    Scenario scenario;
    std::shared_ptr<const RewardModel> model;
    std::string address = "127.0.0.1";
    std::uint16_t port = kDefaultPort; ///< 0 picks a free port
    FeedbackThresholds thresholds;
    double command_timeout = 0.5; ///< seconds a held command may actuate
    double flows_rate = 2.0;      ///< Hz, 0 disables `flows` frames
    std::optional<std::int64_t> max_ticks;
    bool handle_signals = false;  ///< stop on SIGINT / SIGTERM
};

/// Frames are JSON text messages; every one carries a `type` field.
namespace wire {
nlohmann::json config_frame(const SessionConfig& cfg, bool driver);
nlohmann::json state_frame(const TickRecord& r, const FeedbackThresholds& th,
                           std::int64_t ack_seq);
nlohmann::json switch_frame(const SwitchEvent& e);
nlohmann::json error_frame(const std::string& message);
nlohmann::json flows_frame(std::int64_t tick, const State& x, std::span<const Obstacle> obstacles,
                           const PolicyParams& params, double horizon, int samples);

struct Command {
    Input u;
    std::int64_t seq = 0;
};
struct Label {
    int policy = 0;
    std::int64_t seq = 0;
};
/// Client frame after schema checks; throws FormatError with a reason.
std::variant<Command, Label> parse_client_frame(const std::string& text, const InputBounds& bounds);
} // namespace wire

/// Hold-and-expire command buffer for the real-time loop.
class CommandHold {
public:
    explicit CommandHold(double timeout) : timeout_(timeout) {}
    /// Returns false for stale (non-increasing) seq numbers.
    bool offer(const wire::Command& c, double received_at);
    Input current(double now) const;
    std::int64_t last_seq() const { return seq_; }
    void reset() { seq_ = -1; has_ = false; }

private:
    double timeout_;
    std::int64_t seq_ = -1;
    bool has_ = false;
    Input u_;
    double at_ = 0.0;
};

/// Real-time 20 Hz session host over WebSocket.
class SessionServer {
public:
    explicit SessionServer(SessionConfig cfg);
    ~SessionServer();
    SessionServer(const SessionServer&) = delete;
    SessionServer& operator=(const SessionServer&) = delete;

    /// Binds and starts the I/O and simulation threads. Throws Error when the
    /// port is busy.
    void start();
    void stop();
    /// Blocks until stopped (by stop(), a signal or max_ticks).
    void wait();
    bool running() const;
    std::uint16_t port() const;

    EpisodeLog log() const;
    Dataset live_dataset() const;
    /// Seconds between consecutive tick starts, measured by the loop.
    std::vector<double> tick_intervals() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

struct ClientOptions {
    std::string host = "127.0.0.1";
    std::uint16_t port = kDefaultPort;
    std::int64_t states = 200;          ///< stop after this many state frames
    int max_reconnects = 10;
    std::chrono::milliseconds initial_backoff{50};
    std::chrono::milliseconds max_backoff{1000};
    /// Label to press at a given server tick, if any.
    std::function<std::optional<int>(std::int64_t)> labels;
};

struct ClientReport {
    std::vector<nlohmann::json> states;
    std::vector<nlohmann::json> switches;
    std::vector<nlohmann::json> errors;
    std::vector<nlohmann::json> label_acks;
    std::vector<double> latencies;        ///< seconds from cmd send to its echo
    std::vector<double> state_intervals;  ///< seconds between state frame arrivals
    std::vector<std::int64_t> sent_seqs;
    int reconnects = 0;
    bool driver = false;
    nlohmann::json config;
};

/// Drives a session exactly like a human would: one command per received
/// state frame, produced by a scripted driver. Reconnects with exponential
/// backoff and keeps its seq counter across reconnects.
class ScriptedClient {
public:
    ScriptedClient(DriverSpec driver, ClientOptions options, std::uint64_t seed = 0);
    ClientReport run();
    /// Closes the current connection from another thread (reconnect testing).
    void drop_connection();

private:
    struct Impl;
    std::shared_ptr<Impl> impl_;
};

} // namespace mbcbf

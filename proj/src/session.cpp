#include "mbcbf/session.hpp"

#include "mbcbf/error.hpp"
#include "mbcbf/version.hpp"

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

#include <atomic>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <map>
#include <mutex>
#include <sys/socket.h>
#include <thread>

namespace mbcbf {

namespace net = boost::asio;
namespace beast = boost::beast;
namespace websocket = beast::websocket;
using tcp = net::ip::tcp;
using nlohmann::json;

void FeedbackThresholds::validate() const {
    if (!(alert_h < warn_h))
        throw ScenarioError("alert threshold must be below the warn threshold");
}

std::string FeedbackThresholds::cue(double h) const {
    if (h <= alert_h)
        return "alert";
    if (h <= warn_h)
        return "warn";
    return "none";
}

bool CommandHold::offer(const wire::Command& c, double received_at) {
    if (c.seq <= seq_)
        return false;
    seq_ = c.seq;
    u_ = c.u;
    at_ = received_at;
    has_ = true;
    return true;
}

Input CommandHold::current(double now) const {
    if (!has_ || now - at_ > timeout_)
        return {};
    return u_;
}

namespace wire {

namespace {

json pair(double a, double b) {
    return json::array({a, b});
}

} // namespace

json config_frame(const SessionConfig& cfg, bool driver) {
    const Scenario& sc = cfg.scenario;
    json obstacles = json::array();
    for (const Obstacle& o : sc.inflated_obstacles()) {
        obstacles.push_back({{"center", pair(o.center.x(), o.center.y())},
                             {"radius", o.radius},
                             {"velocity", pair(o.velocity.x(), o.velocity.y())}});
    }
    json policies = json::array();
    for (int i = 0; i < kPolicyCount; ++i)
        policies.push_back(policy_name({i}));
    return {
        {"type", "config"},
        {"schema_version", kWireSchemaVersion},
        {"role", driver ? "driver" : "observer"},
        {"scenario",
         {{"name", sc.name},
          {"arena",
           {{"x_min", sc.arena.x_min},
            {"x_max", sc.arena.x_max},
            {"y_min", sc.arena.y_min},
            {"y_max", sc.arena.y_max}}},
          {"obstacles", obstacles},
          {"start", json::array({sc.start.x, sc.start.y, sc.start.theta})},
          {"initial_policy", sc.initial_policy.index}}},
        {"m_k", kPolicyCount},
        {"policies", policies},
        {"bounds", {{"v_max", sc.bounds.v_max}, {"omega_max", sc.bounds.omega_max}}},
        {"tick_dt", sc.tick_dt},
        {"thresholds", {{"warn_h", cfg.thresholds.warn_h}, {"alert_h", cfg.thresholds.alert_h}}},
        {"command_timeout", cfg.command_timeout},
        {"model", cfg.model ? json(cfg.model->fingerprint()) : json(nullptr)},
    };
}

json state_frame(const TickRecord& r, const FeedbackThresholds& th, std::int64_t ack_seq) {
    return {
        {"type", "state"},
        {"tick", r.tick},
        {"t", r.t},
        {"pose", json::array({r.state.x, r.state.y, r.state.theta})},
        {"u_d", pair(r.u_d.v, r.u_d.omega)},
        {"u_safe", pair(r.u_safe.v, r.u_safe.omega)},
        {"active", r.active},
        {"rewards", r.rewards},
        {"h", r.h},
        {"dial", std::tanh(r.h)},
        {"margins", {{"flow_min", r.flow_min}, {"terminal", r.terminal}}},
        {"feasible", r.feasible},
        {"cue", th.cue(r.h)},
        {"ack_seq", ack_seq},
    };
}

json switch_frame(const SwitchEvent& e) {
    return {{"type", "switch"},   {"tick", e.tick},       {"from", e.from.index},
            {"to", e.to.index},   {"rewards", e.rewards}, {"validated", e.validated}};
}

json error_frame(const std::string& message) {
    return {{"type", "error"}, {"message", message}};
}

json flows_frame(std::int64_t tick, const State& x, std::span<const Obstacle> obstacles,
                 const PolicyParams& params, double horizon, int samples) {
    json flows = json::array();
    if (!obstacles.empty()) {
        const Obstacle& o = obstacles[nearest_obstacle(x, obstacles)];
        const double dt = horizon / samples;
        const int sub = std::max(1, static_cast<int>(std::ceil(dt / kFlowMaxStep)));
        for (int p = 0; p < kPolicyCount; ++p) {
            json points = json::array({pair(x.x, x.y)});
            try {
                const ControlLaw law = policy_law({p}, o, params);
                State s = x;
                for (int i = 0; i < samples; ++i) {
                    for (int k = 0; k < sub; ++k)
                        s = step_closed_loop(s, law, dt / sub);
                    points.push_back(pair(s.x, s.y));
                }
            } catch (const Error&) {
                // Degenerate geometry: keep the partial polyline.
            }
            flows.push_back({{"policy", p}, {"points", points}});
        }
    }
    return {{"type", "flows"}, {"tick", tick}, {"flows", flows}};
}

std::variant<Command, Label> parse_client_frame(const std::string& text, const InputBounds&) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception&) {
        throw FormatError("message is not valid JSON");
    }
    if (!j.is_object() || !j.contains("type") || !j["type"].is_string())
        throw FormatError("message must be an object with a string 'type'");
    const std::string type = j["type"];
    auto number = [&](const char* key) {
        if (!j.contains(key) || !j[key].is_number())
            throw FormatError(type + " needs numeric '" + key + "'");
        const double v = j[key].get<double>();
        if (!std::isfinite(v))
            throw FormatError(type + "." + key + " must be finite");
        return v;
    };
    auto integer = [&](const char* key) {
        if (!j.contains(key) || !j[key].is_number_integer())
            throw FormatError(type + " needs integer '" + key + "'");
        return j[key].get<std::int64_t>();
    };
    if (type == "cmd") {
        Command c{{number("v"), number("w")}, integer("seq")};
        if (c.seq < 0)
            throw FormatError("seq must be non-negative");
        return c;
    }
    if (type == "label") {
        Label l{static_cast<int>(integer("policy")), integer("seq")};
        if (l.policy < 0 || l.policy >= kPolicyCount)
            throw FormatError("label policy out of range");
        return l;
    }
    throw FormatError("unknown message type '" + type + "'");
}

} // namespace wire

// ---------------------------------------------------------------------------

namespace {

using Frame = std::shared_ptr<const std::string>;

Frame make_frame(const json& j) {
    return std::make_shared<const std::string>(j.dump());
}

struct Inbound {
    enum class Kind { command, label, driver_changed } kind;
    wire::Command cmd;
    wire::Label label;
    std::uint64_t conn = 0;
    double received_at = 0.0;
};

} // namespace

struct SessionServer::Impl {
    class Connection;

    explicit Impl(SessionConfig c) : cfg(std::move(c)), acceptor(ioc), signals(ioc) {}

    SessionConfig cfg;
    net::io_context ioc;
    tcp::acceptor acceptor;
    net::signal_set signals;
    std::thread io_thread;
    std::thread sim_thread;
    std::atomic<bool> stopping{false};
    std::atomic<bool> started{false};
    std::atomic<bool> done{false};
    std::mutex done_mutex;
    std::condition_variable done_cv;
    std::chrono::steady_clock::time_point epoch;

    // I/O thread only.
    std::vector<std::shared_ptr<Connection>> connections;
    std::uint64_t next_id = 1;
    std::uint64_t driver_id = 0;

    std::mutex in_mutex;
    std::vector<Inbound> inbound;

    mutable std::mutex data_mutex;
    EpisodeLog log_data;
    Dataset dataset;
    std::vector<double> intervals;

    double now() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch).count();
    }

    void push(Inbound in) {
        std::lock_guard lock(in_mutex);
        inbound.push_back(in);
    }

    void accept();
    void on_open(const std::shared_ptr<Connection>& c);
    void on_close(Connection* c);
    void broadcast(Frame f);
    void send_to(std::uint64_t conn, Frame f);
    void sim_loop();
    void shutdown();
};

class SessionServer::Impl::Connection : public std::enable_shared_from_this<Connection> {
public:
    Connection(Impl& owner, tcp::socket socket, std::uint64_t id)
        : owner_(owner), ws_(std::move(socket)), id_(id) {}

    std::uint64_t id() const { return id_; }

    void run() {
        ws_.text(true);
        ws_.async_accept([self = shared_from_this()](beast::error_code ec) {
            if (ec)
                return self->fail();
            self->owner_.on_open(self);
            self->read();
        });
    }

    void send(Frame f) {
        if (closed_)
            return;
        constexpr std::size_t kMaxQueued = 512;
        if (queue_.size() >= kMaxQueued)
            return close(); // client cannot keep up
        queue_.push_back(std::move(f));
        if (queue_.size() == 1)
            write();
    }

    void close() {
        if (closed_)
            return;
        closed_ = true;
        beast::error_code ec;
        ws_.next_layer().socket().shutdown(tcp::socket::shutdown_both, ec);
        ws_.next_layer().socket().close(ec);
    }

private:
    void read() {
        ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
            if (ec)
                return self->fail();
            std::string text = beast::buffers_to_string(self->buffer_.data());
            self->buffer_.consume(self->buffer_.size());
            self->handle(text);
            self->read();
        });
    }

    void handle(const std::string& text) {
        try {
            auto msg = wire::parse_client_frame(text, owner_.cfg.scenario.bounds);
            if (owner_.driver_id != id_) {
                send(make_frame(wire::error_frame("read-only client: only the driver may send")));
                return;
            }
            Inbound in{};
            in.conn = id_;
            in.received_at = owner_.now();
            if (auto* c = std::get_if<wire::Command>(&msg)) {
                in.kind = Inbound::Kind::command;
                in.cmd = *c;
                owner_.push(in);
                send(make_frame({{"type", "cmd_ack"}, {"seq", c->seq}}));
            } else {
                in.kind = Inbound::Kind::label;
                in.label = std::get<wire::Label>(msg);
                owner_.push(in);
            }
        } catch (const FormatError& e) {
            send(make_frame(wire::error_frame(e.what())));
        }
    }

    void write() {
        ws_.async_write(net::buffer(*queue_.front()),
                        [self = shared_from_this()](beast::error_code ec, std::size_t) {
                            if (ec)
                                return self->fail();
                            self->queue_.pop_front();
                            if (!self->queue_.empty())
                                self->write();
                        });
    }

    void fail() {
        if (!closed_)
            close();
        if (!reported_) {
            reported_ = true;
            owner_.on_close(this);
        }
    }

    Impl& owner_;
    websocket::stream<beast::tcp_stream> ws_;
    beast::flat_buffer buffer_;
    std::deque<Frame> queue_;
    std::uint64_t id_;
    bool closed_ = false;
    bool reported_ = false;
};

void SessionServer::Impl::accept() {
    acceptor.async_accept([this](beast::error_code ec, tcp::socket socket) {
        if (ec)
            return; // acceptor closed
        socket.set_option(tcp::no_delay(true), ec);
        // Registered in on_open, once the handshake is done; frames must not precede it.
        std::make_shared<Connection>(*this, std::move(socket), next_id++)->run();
        accept();
    });
}

void SessionServer::Impl::on_open(const std::shared_ptr<Connection>& c) {
    connections.push_back(c);
    const bool becomes_driver = driver_id == 0;
    if (becomes_driver) {
        driver_id = c->id();
        push({Inbound::Kind::driver_changed, {}, {}, c->id(), now()});
    }
    c->send(make_frame(wire::config_frame(cfg, becomes_driver)));
}

void SessionServer::Impl::on_close(Connection* c) {
    const std::uint64_t id = c->id();
    std::erase_if(connections, [&](const auto& p) { return p.get() == c; });
    if (id != driver_id)
        return;
    driver_id = 0;
    // First-come: the longest-connected observer takes over.
    if (!connections.empty()) {
        driver_id = connections.front()->id();
        connections.front()->send(make_frame({{"type", "role"}, {"role", "driver"}}));
    }
    push({Inbound::Kind::driver_changed, {}, {}, driver_id, now()});
}

void SessionServer::Impl::broadcast(Frame f) {
    net::post(ioc, [this, f = std::move(f)] {
        for (auto& c : connections)
            c->send(f);
    });
}

void SessionServer::Impl::send_to(std::uint64_t conn, Frame f) {
    net::post(ioc, [this, conn, f = std::move(f)] {
        for (auto& c : connections) {
            if (c->id() == conn)
                c->send(f);
        }
    });
}

void SessionServer::Impl::sim_loop() {
    using Clock = std::chrono::steady_clock;
    const Scenario& sc = cfg.scenario;
    const auto dt = std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(sc.tick_dt));
    const int flows_every =
        cfg.flows_rate > 0.0 ? std::max(1, static_cast<int>(std::lround(1.0 / (cfg.flows_rate * sc.tick_dt)))) : 0;

    try {
        EpisodeRunner runner(sc, cfg.model.get());
        CommandHold hold(cfg.command_timeout);
        std::optional<int> label;
        const PolicyParams params = sc.policy_params();
        const std::vector<Obstacle> obstacles = sc.inflated_obstacles();

        auto next = Clock::now();
        std::optional<Clock::time_point> prev;
        for (std::int64_t k = 0; !stopping; ++k) {
            if (cfg.max_ticks && k >= *cfg.max_ticks)
                break;
            std::this_thread::sleep_until(next);
            if (stopping)
                break;
            const auto start = Clock::now();
            if (prev) {
                std::lock_guard lock(data_mutex);
                intervals.push_back(std::chrono::duration<double>(start - *prev).count());
            }
            prev = start;

            std::vector<Inbound> batch;
            {
                std::lock_guard lock(in_mutex);
                batch.swap(inbound);
            }
            for (const Inbound& in : batch) {
                switch (in.kind) {
                case Inbound::Kind::driver_changed:
                    hold.reset();
                    break;
                case Inbound::Kind::command:
                    hold.offer(in.cmd, in.received_at);
                    break;
                case Inbound::Kind::label:
                    label = in.label.policy;
                    send_to(in.conn, make_frame({{"type", "label_ack"},
                                                 {"seq", in.label.seq},
                                                 {"policy", in.label.policy},
                                                 {"tick", k}}));
                    break;
                }
            }

            const Input u_d = hold.current(now());
            TickOutput out = runner.step(u_d);

            broadcast(make_frame(wire::state_frame(out.record, cfg.thresholds, hold.last_seq())));
            if (out.event)
                broadcast(make_frame(wire::switch_frame(*out.event)));
            if (flows_every > 0 && k % flows_every == 0)
                broadcast(make_frame(wire::flows_frame(k, out.record.state, obstacles, params,
                                                       sc.horizon, sc.n_tau)));
            {
                std::lock_guard lock(data_mutex);
                if (label)
                    dataset.rows.push_back({0, static_cast<int>(k), out.features, *label,
                                            out.record.active});
                if (out.event)
                    log_data.switches.push_back(*out.event);
                log_data.ticks.push_back(std::move(out.record));
                log_data.rejected_switches = runner.switch_state().rejected_switches;
            }

            next += dt;
            const auto late = Clock::now();
            if (late > next + dt)
                next = late; // fell behind by more than a tick: resync instead of bursting
        }
    } catch (const std::exception& e) {
        broadcast(make_frame(wire::error_frame(std::string("session stopped: ") + e.what())));
    }
    shutdown();
}

void SessionServer::Impl::shutdown() {
    stopping = true;
    net::post(ioc, [this] {
        beast::error_code ec;
        acceptor.close(ec);
        signals.cancel(ec);
        // Give queued frames a moment to flush before the sockets go away.
        auto timer = std::make_shared<net::steady_timer>(ioc, std::chrono::milliseconds(50));
        timer->async_wait([this, timer](beast::error_code) {
            for (auto& c : connections)
                c->close();
            connections.clear();
            ioc.stop();
        });
    });
}

SessionServer::SessionServer(SessionConfig cfg) : impl_(std::make_unique<Impl>(std::move(cfg))) {
    impl_->cfg.scenario.validate();
    impl_->cfg.thresholds.validate();
    if (!(impl_->cfg.command_timeout > 0.0))
        throw ScenarioError("command timeout must be positive");
}

SessionServer::~SessionServer() {
    stop();
    wait();
}

void SessionServer::start() {
    if (impl_->started.exchange(true))
        throw Error("session already started");
    Impl& m = *impl_;
    try {
        const auto addr = net::ip::make_address(m.cfg.address);
        tcp::endpoint ep(addr, m.cfg.port);
        m.acceptor.open(ep.protocol());
        m.acceptor.set_option(net::socket_base::reuse_address(true));
        m.acceptor.bind(ep);
        m.acceptor.listen();
    } catch (const boost::system::system_error& e) {
        throw Error("cannot listen on " + m.cfg.address + ":" + std::to_string(m.cfg.port) + ": " +
                    e.code().message());
    }
    m.log_data = {};
    m.log_data.header.library_version = kLibraryVersion;
    m.log_data.header.scenario = to_json(m.cfg.scenario);
    m.log_data.header.driver = nullptr;
    if (m.cfg.model)
        m.log_data.header.model_fingerprint = m.cfg.model->fingerprint();
    m.dataset = {};
    m.epoch = std::chrono::steady_clock::now();

    if (m.cfg.handle_signals) {
        m.signals.add(SIGINT);
        m.signals.add(SIGTERM);
        m.signals.async_wait([&m](beast::error_code ec, int) {
            if (!ec)
                m.stopping = true;
        });
    }
    m.accept();
    m.io_thread = std::thread([&m] {
        auto guard = net::make_work_guard(m.ioc);
        m.ioc.run();
    });
    m.sim_thread = std::thread([&m] {
        m.sim_loop();
        {
            std::lock_guard lock(m.done_mutex);
            m.done = true;
        }
        m.done_cv.notify_all();
    });
}

void SessionServer::stop() {
    impl_->stopping = true;
}

void SessionServer::wait() {
    Impl& m = *impl_;
    if (m.sim_thread.joinable())
        m.sim_thread.join();
    if (m.io_thread.joinable())
        m.io_thread.join();
    std::lock_guard lock(m.data_mutex);
    m.log_data.header.duration = static_cast<double>(m.log_data.ticks.size()) * m.cfg.scenario.tick_dt;
}

bool SessionServer::running() const {
    return impl_->started && !impl_->done;
}

std::uint16_t SessionServer::port() const {
    beast::error_code ec;
    const auto ep = impl_->acceptor.local_endpoint(ec);
    return ec ? impl_->cfg.port : ep.port();
}

EpisodeLog SessionServer::log() const {
    std::lock_guard lock(impl_->data_mutex);
    return impl_->log_data;
}

Dataset SessionServer::live_dataset() const {
    std::lock_guard lock(impl_->data_mutex);
    return impl_->dataset;
}

std::vector<double> SessionServer::tick_intervals() const {
    std::lock_guard lock(impl_->data_mutex);
    return impl_->intervals;
}

// ---------------------------------------------------------------------------

struct ScriptedClient::Impl {
    Impl(DriverSpec d, ClientOptions o, std::uint64_t s)
        : driver(std::move(d)), opt(std::move(o)), seed(s) {}
    DriverSpec driver;
    ClientOptions opt;
    std::uint64_t seed;
    std::atomic<int> native{-1};
};

ScriptedClient::ScriptedClient(DriverSpec driver, ClientOptions options, std::uint64_t seed)
    : impl_(std::make_shared<Impl>(std::move(driver), std::move(options), seed)) {}

void ScriptedClient::drop_connection() {
    const int fd = impl_->native.load();
    if (fd >= 0)
        ::shutdown(fd, SHUT_RDWR);
}

namespace {

std::vector<Obstacle> obstacles_from_config(const json& cfg) {
    std::vector<Obstacle> out;
    for (const auto& o : cfg.at("scenario").at("obstacles")) {
        const auto c = o.at("center").get<std::vector<double>>();
        const auto v = o.at("velocity").get<std::vector<double>>();
        out.push_back({Vec2(c.at(0), c.at(1)), o.at("radius").get<double>(), Vec2(v.at(0), v.at(1))});
    }
    return out;
}

} // namespace

ClientReport ScriptedClient::run() {
    using Clock = std::chrono::steady_clock;
    Impl& m = *impl_;
    ClientReport rep;
    auto drv = make_driver(m.driver, m.seed);
    std::int64_t seq = 0;
    std::map<std::int64_t, Clock::time_point> pending;
    auto backoff = m.opt.initial_backoff;
    std::optional<std::int64_t> last_label_tick;

    auto done = [&] { return static_cast<std::int64_t>(rep.states.size()) >= m.opt.states; };

    while (!done()) {
        net::io_context ioc;
        websocket::stream<tcp::socket> ws(ioc);
        try {
            tcp::resolver resolver(ioc);
            net::connect(ws.next_layer(), resolver.resolve(m.opt.host, std::to_string(m.opt.port)));
            ws.next_layer().set_option(tcp::no_delay(true));
            m.native = ws.next_layer().native_handle();
            ws.handshake(m.opt.host, "/");
            ws.text(true);
            backoff = m.opt.initial_backoff;

            beast::flat_buffer buf;
            ws.read(buf);
            rep.config = json::parse(beast::buffers_to_string(buf.data()));
            buf.consume(buf.size());
            if (rep.config.at("type") != "config")
                throw FormatError("expected a config frame first");
            if (rep.config.at("schema_version").get<int>() != kWireSchemaVersion)
                throw VersionMismatch("wire schema " + rep.config.at("schema_version").dump());
            bool driver = rep.config.at("role") == "driver";
            const std::vector<Obstacle> obstacles = obstacles_from_config(rep.config);
            const InputBounds bounds{rep.config.at("bounds").at("v_max").get<double>(),
                                     rep.config.at("bounds").at("omega_max").get<double>()};
            std::optional<Clock::time_point> last_state;

            while (!done()) {
                ws.read(buf);
                const auto arrived = Clock::now();
                const json f = json::parse(beast::buffers_to_string(buf.data()));
                buf.consume(buf.size());
                const std::string type = f.at("type");
                if (type == "state") {
                    if (last_state)
                        rep.state_intervals.push_back(std::chrono::duration<double>(arrived - *last_state).count());
                    last_state = arrived;
                    rep.states.push_back(f);
                    if (!driver || done())
                        continue;
                    const std::int64_t tick = f.at("tick");
                    const auto pose = f.at("pose").get<std::vector<double>>();
                    const State s{pose.at(0), pose.at(1), pose.at(2)};
                    const Input u = drv->command({tick, s, obstacles, bounds});
                    const std::int64_t s_cmd = ++seq;
                    pending[s_cmd] = Clock::now();
                    rep.sent_seqs.push_back(s_cmd);
                    ws.write(net::buffer(json{{"type", "cmd"}, {"v", u.v}, {"w", u.omega}, {"seq", s_cmd}}.dump()));
                    if (m.opt.labels && last_label_tick != tick) {
                        if (auto l = m.opt.labels(tick)) {
                            last_label_tick = tick;
                            const std::int64_t s_lab = ++seq;
                            rep.sent_seqs.push_back(s_lab);
                            ws.write(net::buffer(json{{"type", "label"}, {"policy", *l}, {"seq", s_lab}}.dump()));
                        }
                    }
                } else if (type == "cmd_ack") {
                    const auto it = pending.find(f.at("seq").get<std::int64_t>());
                    if (it != pending.end()) {
                        rep.latencies.push_back(std::chrono::duration<double>(arrived - it->second).count());
                        pending.erase(it);
                    }
                } else if (type == "switch") {
                    rep.switches.push_back(f);
                } else if (type == "error") {
                    rep.errors.push_back(f);
                } else if (type == "label_ack") {
                    rep.label_acks.push_back(f);
                } else if (type == "role") {
                    driver = f.at("role") == "driver";
                }
            }
            rep.driver = driver;
            m.native = -1;
            beast::error_code ec;
            ws.close(websocket::close_code::normal, ec);
        } catch (const std::exception&) {
            m.native = -1;
            if (done())
                break;
            if (rep.reconnects >= m.opt.max_reconnects)
                throw Error("session unreachable after " + std::to_string(rep.reconnects) + " reconnects");
            ++rep.reconnects;
            pending.clear();
            std::this_thread::sleep_for(backoff);
            backoff = std::min(backoff * 2, m.opt.max_backoff);
        }
    }
    return rep;
}

} // namespace mbcbf

#pragma once

// Live interaction sessions over WebSocket: one human-driven vehicle against
// a vehicle whose controller (model or human surrogate) stays hidden until
// the verdict is in.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>
#include <nlohmann/json.hpp>

#include "mixsim/sim_core.hpp"

namespace mixsim {

struct Verdict {
  std::string guess;  // human | machine
  int confidence{0};
  int naturalness{0};
};

struct SessionRecord {
  std::string session_id;
  std::string role;  // controller of the partner vehicle: human | model
  std::string scenario;
  std::uint64_t seed{0};
  std::string human_vehicle;
  std::string trace;     // path of the per-tick trace
  std::string controls;  // path of the applied control log
  std::optional<Verdict> verdict;
  double started{0.0};   // unix seconds
  double ended{0.0};
  std::uint64_t ticks{0};
  std::size_t ehmi_messages{0};
  bool collision{false};
  bool aborted{false};
  std::string note;
};

inline nlohmann::json to_json(const SessionRecord& r) {
  nlohmann::json j = {{"session_id", r.session_id}, {"role", r.role},     {"scenario", r.scenario},
                      {"seed", r.seed},             {"human_vehicle", r.human_vehicle}, {"trace", r.trace},
                      {"controls", r.controls},     {"started", r.started}, {"ended", r.ended},
                      {"ticks", r.ticks},           {"ehmi_messages", r.ehmi_messages}, {"collision", r.collision},
                      {"aborted", r.aborted}};
  if (r.verdict)
    j["verdict"] = {{"guess", r.verdict->guess},
                    {"confidence", r.verdict->confidence},
                    {"naturalness", r.verdict->naturalness}};
  if (!r.note.empty()) j["note"] = r.note;
  return j;
}

inline SessionRecord session_record_from_json(const nlohmann::json& j) {
  SessionRecord r;
  r.session_id = j.at("session_id").get<std::string>();
  r.role = j.at("role").get<std::string>();
  r.scenario = j.value("scenario", "");
  r.seed = j.at("seed").get<std::uint64_t>();
  r.human_vehicle = j.at("human_vehicle").get<std::string>();
  r.trace = j.value("trace", "");
  r.controls = j.at("controls").get<std::string>();
  r.started = j.value("started", 0.0);
  r.ended = j.value("ended", 0.0);
  r.ticks = j.value("ticks", std::uint64_t{0});
  r.ehmi_messages = j.value("ehmi_messages", std::size_t{0});
  r.collision = j.value("collision", false);
  r.aborted = j.value("aborted", false);
  r.note = j.value("note", "");
  if (j.contains("verdict")) {
    const auto& v = j["verdict"];
    r.verdict = Verdict{v.at("guess").get<std::string>(), v.at("confidence").get<int>(), v.at("naturalness").get<int>()};
  }
  return r;
}

/// Scores must be JSON integers in [1, 5]; the guess is human or machine.
inline std::optional<std::string> parse_verdict(const nlohmann::json& j, Verdict& out) {
  if (!j.contains("guess") || !j["guess"].is_string()) return "guess must be \"human\" or \"machine\"";
  out.guess = j["guess"].get<std::string>();
  if (out.guess != "human" && out.guess != "machine") return "guess must be \"human\" or \"machine\"";
  auto score = [&](const char* key, int& dst) -> std::optional<std::string> {
    if (!j.contains(key) || !j[key].is_number_integer()) return std::string(key) + " must be an integer in [1,5]";
    const auto v = j[key].get<std::int64_t>();
    if (v < 1 || v > 5) return std::string(key) + " must be an integer in [1,5]";
    dst = static_cast<int>(v);
    return std::nullopt;
  };
  if (auto e = score("confidence", out.confidence)) return e;
  if (auto e = score("naturalness", out.naturalness)) return e;
  return std::nullopt;
}

inline std::optional<std::string> parse_control(const nlohmann::json& j, double& accel) {
  if (!j.contains("accel") || !j["accel"].is_number()) return "control needs a numeric accel";
  accel = j["accel"].get<double>();
  if (!std::isfinite(accel) || accel < kAccelCmdMin || accel > kAccelCmdMax) return "accel outside [-8, 3]";
  return std::nullopt;
}

/// Server to client state frame for the current tick.
inline nlohmann::json state_frame(const Simulation& sim, std::span<const EhmiMessage> ehmi) {
  nlohmann::json vs = nlohmann::json::array();
  for (const auto& a : sim.agents()) {
    const VehicleState s = sim.state_of(a);
    vs.push_back({{"id", s.id}, {"x", s.x}, {"y", s.y}, {"phi", s.phi}, {"v", a.v}, {"a", a.a}});
  }
  nlohmann::json em = nlohmann::json::array();
  for (const auto& m : ehmi) em.push_back(to_json(m));
  return {{"type", "state"}, {"tick", sim.tick()}, {"t", sim.time()}, {"vehicles", vs}, {"ehmi", em}};
}

// ---------------------------------------------------------------- transport

struct InboundEvent {
  enum Kind { Connected, Message, Disconnected } kind{Message};
  int conn{0};
  std::string text;
};

template <class T>
class BlockingQueue {
 public:
  void push(T v) {
    {
      std::lock_guard lk(m_);
      q_.push_back(std::move(v));
    }
    cv_.notify_one();
  }
  std::optional<T> pop_for(std::chrono::milliseconds d) {
    std::unique_lock lk(m_);
    if (!cv_.wait_for(lk, d, [&] { return !q_.empty(); })) return std::nullopt;
    T v = std::move(q_.front());
    q_.pop_front();
    return v;
  }
  std::optional<T> try_pop() { return pop_for(std::chrono::milliseconds(0)); }

 private:
  std::mutex m_;
  std::condition_variable cv_;
  std::deque<T> q_;
};

namespace net = boost::asio;
namespace beast = boost::beast;
namespace websocket = boost::beast::websocket;

/// One client. Reads run on the io thread and land in the shared inbox;
/// writes drain a bounded per-connection queue, and `send` blocks while
/// that queue is full.
class WsConnection : public std::enable_shared_from_this<WsConnection> {
 public:
  WsConnection(net::ip::tcp::socket sock, int id, BlockingQueue<InboundEvent>& inbox, std::size_t capacity)
      : ws_(std::move(sock)), id_(id), inbox_(inbox), capacity_(capacity) {}

  void start() {
    ws_.async_accept([self = shared_from_this()](beast::error_code ec) {
      if (ec) return self->mark_closed(false);
      self->inbox_.push({InboundEvent::Connected, self->id_, {}});
      self->do_read();
    });
  }

  bool send(std::string frame) {
    std::unique_lock lk(m_);
    cv_.wait(lk, [&] { return out_.size() < capacity_ || closed_; });
    if (closed_) return false;
    out_.push_back(std::move(frame));
    if (!writing_) {
      writing_ = true;
      net::post(ws_.get_executor(), [self = shared_from_this()] { self->do_write(); });
    }
    return true;
  }

  /// Closes after queued frames are written.
  void close() {
    std::lock_guard lk(m_);
    close_requested_ = true;
    if (!writing_) {
      writing_ = true;
      net::post(ws_.get_executor(), [self = shared_from_this()] { self->do_write(); });
    }
  }

  bool closed() const {
    std::lock_guard lk(m_);
    return closed_;
  }

 private:
  void do_read() {
    ws_.async_read(buf_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) return self->mark_closed(true);
      self->inbox_.push({InboundEvent::Message, self->id_, beast::buffers_to_string(self->buf_.data())});
      self->buf_.consume(self->buf_.size());
      self->do_read();
    });
  }

  void do_write() {
    std::unique_lock lk(m_);
    if (closed_) {
      writing_ = false;
      return;
    }
    if (out_.empty()) {
      writing_ = false;
      if (close_requested_) {
        lk.unlock();
        ws_.async_close(websocket::close_code::normal, [self = shared_from_this()](beast::error_code) {});
      }
      return;
    }
    current_ = std::move(out_.front());
    out_.pop_front();
    lk.unlock();
    cv_.notify_all();
    ws_.text(true);
    ws_.async_write(net::buffer(current_), [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) return self->mark_closed(true);
      self->do_write();
    });
  }

  void mark_closed(bool announce) {
    {
      std::lock_guard lk(m_);
      if (closed_) return;
      closed_ = true;
      out_.clear();
    }
    cv_.notify_all();
    if (announce) inbox_.push({InboundEvent::Disconnected, id_, {}});
  }

  websocket::stream<beast::tcp_stream> ws_;
  beast::flat_buffer buf_;
  int id_;
  BlockingQueue<InboundEvent>& inbox_;
  std::size_t capacity_;
  mutable std::mutex m_;
  std::condition_variable cv_;
  std::deque<std::string> out_;
  std::string current_;
  bool writing_{false};
  bool closed_{false};
  bool close_requested_{false};
};

class WsServer {
 public:
  WsServer(const std::string& bind, std::uint16_t port, std::size_t capacity)
      : acceptor_(ioc_, {net::ip::make_address(bind), port}), capacity_(capacity) {}

  ~WsServer() { stop(); }

  std::uint16_t port() const { return acceptor_.local_endpoint().port(); }
  BlockingQueue<InboundEvent>& inbox() { return inbox_; }

  void start() {
    do_accept();
    thread_ = std::thread([this] { ioc_.run(); });
  }

  void stop() {
    if (!thread_.joinable()) return;
    ioc_.stop();
    thread_.join();
  }

  std::shared_ptr<WsConnection> connection(int id) {
    std::lock_guard lk(m_);
    auto it = conns_.find(id);
    return it == conns_.end() ? nullptr : it->second;
  }

  void forget(int id) {
    std::lock_guard lk(m_);
    conns_.erase(id);
  }

 private:
  void do_accept() {
    acceptor_.async_accept(net::make_strand(ioc_), [this](beast::error_code ec, net::ip::tcp::socket sock) {
      if (!ec) {
        auto c = std::make_shared<WsConnection>(std::move(sock), next_id_++, inbox_, capacity_);
        {
          std::lock_guard lk(m_);
          conns_[next_id_ - 1] = c;
        }
        c->start();
      }
      do_accept();
    });
  }

  net::io_context ioc_;
  net::ip::tcp::acceptor acceptor_;
  std::size_t capacity_;
  std::thread thread_;
  BlockingQueue<InboundEvent> inbox_;
  std::mutex m_;
  std::map<int, std::shared_ptr<WsConnection>> conns_;
  int next_id_{1};
};

// ---------------------------------------------------------------- sessions

struct SessionServerConfig {
  std::string bind{"127.0.0.1"};
  std::uint16_t port{8765};  // 0 picks a free port
  std::string log_dir{"sessions"};
  std::optional<std::string> role;  // fixed partner role; random per session otherwise
  std::string human_vehicle;        // defaults to the first hdv
  std::uint64_t seed{1};
  bool real_time{true};
  std::size_t queue_capacity{64};
  std::chrono::milliseconds verdict_timeout{std::chrono::minutes(10)};
};

/// Applies a role to a scenario: the human vehicle takes live input, the
/// partner cav runs the proposed controller (model) or a scripted driver
/// standing in for a second human.
inline ScenarioConfig session_scenario(ScenarioConfig cfg, const std::string& human_vehicle, const std::string& role) {
  bool found = false;
  for (auto& v : cfg.vehicles) {
    if (v.id == human_vehicle) {
      v.controller = ControllerKind::Human;
      found = true;
    } else if (v.role == "cav") {
      v.controller = role == "model" ? ControllerKind::Proposed : ControllerKind::Scripted;
      if (role != "model") v.style = HdvStyle::Mixed;
    }
  }
  if (!found) throw ConfigError("human vehicle " + human_vehicle + " not in scenario");
  return cfg;
}

inline std::string default_human_vehicle(const ScenarioConfig& cfg) {
  for (const auto& v : cfg.vehicles)
    if (v.role == "hdv") return v.id;
  throw ConfigError("scenario has no hdv to hand to the driver");
}

inline double unix_now() {
  return std::chrono::duration<double>(std::chrono::system_clock::now().time_since_epoch()).count();
}

/// Re-runs a logged session from its applied controls; returns the trace.
inline std::string replay_session(const ScenarioConfig& base, const SessionRecord& rec, const Reasoner* reasoner) {
  std::ifstream in(rec.controls);
  if (!in) throw LoadError("cannot open control log " + rec.controls);
  std::map<std::uint64_t, double> applied;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    applied[j.at("tick").get<std::uint64_t>()] = j.at("accel").get<double>();
  }
  const ScenarioConfig cfg = session_scenario(base, rec.human_vehicle, rec.role);
  Simulation sim(cfg, rec.seed, {}, reasoner);
  std::ostringstream trace;
  sim.set_trace(&trace);
  sim.set_human_input([&](const Simulation& s, const std::string&) {
    auto it = applied.find(s.tick());
    return it == applied.end() ? 0.0 : it->second;
  });
  while (sim.step()) {
  }
  return trace.str();
}

class SessionServer {
 public:
  SessionServer(ScenarioConfig scenario, SessionServerConfig cfg, const Reasoner* reasoner)
      : scenario_(std::move(scenario)),
        cfg_(std::move(cfg)),
        reasoner_(reasoner),
        server_(cfg_.bind, cfg_.port, cfg_.queue_capacity),
        rng_(splitmix64(cfg_.seed)) {
    if (cfg_.human_vehicle.empty()) cfg_.human_vehicle = default_human_vehicle(scenario_);
    if (cfg_.role && *cfg_.role != "human" && *cfg_.role != "model") throw ConfigError("role must be human or model");
    session_scenario(scenario_, cfg_.human_vehicle, "model");  // validates the vehicle id
    std::filesystem::create_directories(cfg_.log_dir);
    server_.start();
  }

  std::uint16_t port() const { return server_.port(); }
  std::filesystem::path log_path() const { return std::filesystem::path(cfg_.log_dir) / "sessions.jsonl"; }

  /// Serves sessions until `stop` is set; `max_sessions` 0 means no limit.
  void serve(const std::atomic<bool>& stop, std::size_t max_sessions = 0) {
    for (std::size_t n = 0; !stop && (max_sessions == 0 || n < max_sessions);) {
      if (run_session(stop)) ++n;
    }
  }

  /// Idles until a client connects, then plays one episode with it as the
  /// driver. Returns nullopt if stopped while idle.
  std::optional<SessionRecord> run_session(const std::atomic<bool>& stop) {
    auto& inbox = server_.inbox();
    std::optional<int> driver;
    while (!driver) {
      if (stop) return std::nullopt;
      auto ev = inbox.pop_for(std::chrono::milliseconds(50));
      if (ev && ev->kind == InboundEvent::Connected) driver = ev->conn;
      if (ev && ev->kind == InboundEvent::Disconnected) server_.forget(ev->conn);
    }
    std::vector<int> audience{*driver};

    ++count_;
    SessionRecord rec;
    char sid[64];
    std::snprintf(sid, sizeof sid, "s%llu-%zu", static_cast<unsigned long long>(cfg_.seed), count_);
    rec.session_id = sid;
    rec.role = cfg_.role.value_or(std::bernoulli_distribution(0.5)(rng_) ? "model" : "human");
    rec.scenario = scenario_.name;
    rec.seed = splitmix64(cfg_.seed + count_);
    rec.human_vehicle = cfg_.human_vehicle;
    const auto dir = std::filesystem::path(cfg_.log_dir);
    rec.trace = (dir / (rec.session_id + ".trace.jsonl")).string();
    rec.controls = (dir / (rec.session_id + ".controls.jsonl")).string();
    rec.started = unix_now();

    std::ofstream trace(rec.trace), controls(rec.controls);
    Simulation sim(session_scenario(scenario_, rec.human_vehicle, rec.role), rec.seed, {}, reasoner_);
    sim.set_trace(&trace);
    double accel = 0.0;  // held until a newer control arrives
    std::size_t received = 0;
    sim.set_human_input([&](const Simulation&, const std::string&) { return accel; });

    auto send = [&](int id, const nlohmann::json& j) {
      if (auto c = server_.connection(id)) c->send(j.dump());
    };
    auto broadcast = [&](const nlohmann::json& j) {
      for (int id : audience) send(id, j);
    };
    auto diagnostic = [&](int id, const std::string& msg) { send(id, {{"type", "diagnostic"}, {"message", msg}}); };

    // Drains everything queued so far. Returns false if the driver left.
    auto drain = [&](bool episode_over, std::optional<Verdict>* verdict) {
      while (auto ev = inbox.try_pop()) {
        if (ev->kind == InboundEvent::Connected) {
          audience.push_back(ev->conn);
          continue;
        }
        if (ev->kind == InboundEvent::Disconnected) {
          server_.forget(ev->conn);
          if (ev->conn == *driver) return false;
          std::erase(audience, ev->conn);
          continue;
        }
        const auto j = nlohmann::json::parse(ev->text, nullptr, false);
        if (j.is_discarded() || !j.is_object() || !j.contains("type") || !j["type"].is_string()) {
          diagnostic(ev->conn, "malformed frame ignored");
          continue;
        }
        const std::string type = j["type"].get<std::string>();
        if (ev->conn != *driver) {
          diagnostic(ev->conn, "spectators cannot send " + type + " frames");
          continue;
        }
        if (type == "control") {
          if (episode_over) continue;
          double a = 0.0;
          if (auto why = parse_control(j, a)) diagnostic(ev->conn, *why + "; ignored");
          else {
            accel = a;
            ++received;
          }
        } else if (type == "verdict") {
          if (!episode_over) {
            diagnostic(ev->conn, "verdict before episode end ignored");
            continue;
          }
          Verdict v;
          if (auto why = parse_verdict(j, v)) {
            send(ev->conn, {{"type", "verdict_rejected"}, {"reason", *why}});
          } else if (verdict && !*verdict) {
            *verdict = v;
          }
        } else {
          diagnostic(ev->conn, "unknown frame type " + type);
        }
      }
      return true;
    };

    std::size_t ehmi_sent = 0;
    auto emit_state = [&] {
      const auto& log = sim.ehmi_log();
      broadcast(state_frame(sim, std::span(log).subspan(ehmi_sent)));
      ehmi_sent = log.size();
    };

    const auto t0 = std::chrono::steady_clock::now();
    const auto dt = std::chrono::duration<double>(sim.config().sim.dt);
    emit_state();
    bool alive = true;
    while (true) {
      if (cfg_.real_time)
        std::this_thread::sleep_until(t0 + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                               dt * static_cast<double>(sim.tick() + 1)));
      received = 0;
      if (!(alive = drain(false, nullptr))) break;
      controls << nlohmann::json{{"tick", sim.tick()}, {"accel", accel}, {"received", received}}.dump() << '\n';
      const bool more = sim.step();
      emit_state();
      if (!more) break;
    }
    trace.flush();
    controls.flush();
    rec.ticks = sim.tick();
    rec.ehmi_messages = sim.ehmi_log().size();
    rec.collision = sim.metrics().collision;

    if (!alive) {
      rec.aborted = true;
      rec.note = "driver disconnected mid-episode";
    } else {
      broadcast({{"type", "episode_end"}, {"tick", sim.tick()}, {"t", sim.time()}, {"collision", rec.collision}});
      std::optional<Verdict> verdict;
      const auto deadline = std::chrono::steady_clock::now() + cfg_.verdict_timeout;
      while (!verdict && std::chrono::steady_clock::now() < deadline) {
        if (!drain(true, &verdict)) {
          rec.note = "driver left before the verdict";
          break;
        }
        if (!verdict) std::this_thread::sleep_for(std::chrono::milliseconds(5));
      }
      if (verdict) {
        rec.verdict = verdict;
        send(*driver, {{"type", "verdict_ack"}, {"session_id", rec.session_id}, {"role", rec.role}});
      } else if (rec.note.empty()) {
        rec.note = "verdict timed out";
      }
    }
    rec.ended = unix_now();
    {
      std::ofstream log(log_path(), std::ios::app);
      log << to_json(rec).dump() << '\n';
    }
    for (int id : audience)
      if (auto c = server_.connection(id)) c->close();
    return rec;
  }

 private:
  ScenarioConfig scenario_;
  SessionServerConfig cfg_;
  const Reasoner* reasoner_;
  WsServer server_;
  std::mt19937_64 rng_;
  std::size_t count_{0};
};

}  // namespace mixsim

#pragma once

// Play sessions for a human operator. Each socket connection owns at most one
// session; every session has its own environment and the registry caps how
// many exist at once. Messages are JSON:
//
//   client: {"type":"reset","seed"?:n} | {"type":"action","action_id":n} | {"type":"close"}
//   server: {"type":"observation","session","seed","step","visibility","reward","done","frames"}
//           {"type":"summary","session","seed","best_visibility","return","steps"}
//           {"type":"error","code","detail"}
//
// frames is base64 of 16*64*64 bytes, frame-major, round(255 v).

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <boost/beast/core/detail/base64.hpp>
#include <json.hpp>

#include "mzi/env.hpp"
#include "mzi/harness.hpp"
#include "mzi/io.hpp"

namespace mzi::server {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

inline std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
  namespace b64 = boost::beast::detail::base64;
  std::string out(b64::encoded_size(bytes.size()), '\0');
  out.resize(b64::encode(out.data(), bytes.data(), bytes.size()));
  return out;
}

inline std::vector<std::uint8_t> base64_decode(const std::string& text) {
  namespace b64 = boost::beast::detail::base64;
  if (text.size() % 4 != 0) throw std::invalid_argument("base64_decode: length is not a multiple of 4");
  std::size_t body = text.size();
  for (int pad = 0; pad < 2 && body > 0 && text[body - 1] == '='; ++pad) --body;
  std::vector<std::uint8_t> out(b64::decoded_size(text.size()));
  const auto [written, read] = b64::decode(out.data(), text.data(), body);
  if (read != body) throw std::invalid_argument("base64_decode: invalid input");
  out.resize(written);
  return out;
}

struct ObservationStats {
  int step = 0;
  double visibility = 0;
  double reward = 0;
  bool done = false;
};

inline json encode_observation_message(const Observation& obs, const ObservationStats& st) {
  return {{"type", "observation"}, {"step", st.step},
          {"visibility", st.visibility}, {"reward", st.reward},
          {"done", st.done}, {"frames", base64_encode(quantize(obs.data()))}};
}

inline json error_message(const std::string& code, const std::string& detail) {
  return {{"type", "error"}, {"code", code}, {"detail", detail}};
}

struct SessionConfig {
  EnvConfig env;
  std::size_t session_cap = 64;
  std::chrono::seconds idle_timeout{600};
  std::optional<std::uint64_t> seed;  // seeds the server's draws for omitted reset seeds
};

struct Session {
  Session(std::string id, const EnvConfig& cfg) : id(std::move(id)), env(cfg), created_at(Clock::now()), last_active(created_at) {}

  const std::string id;
  std::mutex mutex;  // one request at a time
  Environment env;
  EpisodeRecord record;
  bool in_episode = false;
  bool expired = false;
  Clock::time_point created_at;
  Clock::time_point last_active;
};

// Completed episodes, in the evaluation JSONL schema.
using RecordSink = std::function<void(const EpisodeRecord&)>;

class SessionRegistry {
 public:
  explicit SessionRegistry(SessionConfig cfg, RecordSink sink = {})
      : cfg_(std::move(cfg)), sink_(std::move(sink)), rng_(cfg_.seed ? *cfg_.seed : std::random_device{}()) {
    cfg_.env.validate();
    if (cfg_.session_cap == 0) throw contract_violation("server: session cap must be positive");
  }

  const SessionConfig& config() const { return cfg_; }

  // nullptr when the registry is full.
  std::shared_ptr<Session> create() {
    std::lock_guard lock(mutex_);
    if (sessions_.size() >= cfg_.session_cap) return nullptr;
    auto s = std::make_shared<Session>(make_id(), cfg_.env);
    sessions_.emplace(s->id, s);
    return s;
  }

  void remove(const std::string& id) {
    std::lock_guard lock(mutex_);
    sessions_.erase(id);
  }

  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return sessions_.size();
  }

  // Drops sessions idle for longer than the timeout. Their connections see
  // an "expired" error on the next request.
  std::size_t expire_idle(Clock::time_point now = Clock::now()) {
    std::vector<std::shared_ptr<Session>> victims;
    {
      std::lock_guard lock(mutex_);
      for (auto it = sessions_.begin(); it != sessions_.end();) {
        std::unique_lock session_lock(it->second->mutex, std::try_to_lock);
        if (session_lock && now - it->second->last_active > cfg_.idle_timeout) {
          it->second->expired = true;
          victims.push_back(it->second);
          it = sessions_.erase(it);
        } else {
          ++it;
        }
      }
    }
    return victims.size();
  }

  std::uint64_t draw_seed() {
    std::lock_guard lock(mutex_);
    return rng_() >> 11;  // stays exact as a JSON double
  }

  std::int64_t next_episode() { return episodes_++; }

  void emit(const EpisodeRecord& rec) {
    if (!sink_) return;
    std::lock_guard lock(sink_mutex_);
    sink_(rec);
  }

 private:
  std::string make_id() {
    static constexpr char hex[] = "0123456789abcdef";
    std::string id(16, '0');
    std::uint64_t v = rng_();
    for (char& c : id) c = hex[v & 15], v >>= 4;
    return id;
  }

  SessionConfig cfg_;
  RecordSink sink_;
  mutable std::mutex mutex_;
  std::mutex sink_mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  Rng rng_;
  std::atomic<std::int64_t> episodes_{0};
};

// Protocol state for one client connection.
class Connection {
 public:
  explicit Connection(SessionRegistry& registry) : registry_(registry) {}
  Connection(const Connection&) = delete;
  Connection& operator=(const Connection&) = delete;
  ~Connection() { close(); }

  bool closed() const { return closed_; }
  const std::shared_ptr<Session>& session() const { return session_; }

  // Replies to one client message, in order.
  std::vector<json> handle(const std::string& text) {
    json msg;
    try {
      msg = json::parse(text);
    } catch (const json::exception& e) {
      return {error_message("bad_message", e.what())};
    }
    return handle(msg);
  }

  std::vector<json> handle(const json& msg) {
    if (!msg.is_object() || !msg.contains("type") || !msg["type"].is_string())
      return {error_message("bad_message", "expected an object with a string \"type\"")};
    const std::string type = msg["type"].get<std::string>();
    if (closed_) return {error_message("closed", "connection is closed")};
    if (type == "reset") return reset(msg);
    if (type == "action") return action(msg);
    if (type == "close") {
      close();
      return {};
    }
    return {error_message("bad_message", "unknown type \"" + type + "\"")};
  }

  void close() {
    if (session_) registry_.remove(session_->id);
    session_.reset();
    closed_ = true;
  }

 private:
  std::vector<json> reset(const json& msg) {
    std::uint64_t seed = 0;
    if (msg.contains("seed") && !msg["seed"].is_null()) {
      if (!msg["seed"].is_number_unsigned()) return {error_message("bad_seed", "seed must be a non-negative integer")};
      seed = msg["seed"].get<std::uint64_t>();
    } else {
      seed = registry_.draw_seed();
    }
    if (!session_ || session_->expired) {
      session_ = registry_.create();
      if (!session_) return {error_message("capacity", "session limit reached")};
    }
    std::lock_guard lock(session_->mutex);
    Session& s = *session_;
    s.last_active = Clock::now();
    const Observation obs = s.env.reset(seed);
    s.record = EpisodeRecord{registry_.next_episode(), seed, {}};
    s.in_episode = true;
    json out = encode_observation_message(obs, {0, visibility_analytic(s.env.beam()), 0.0, false});
    out["session"] = s.id;
    out["seed"] = seed;
    return {out};
  }

  std::vector<json> action(const json& msg) {
    if (!session_) return {error_message("no_session", "send reset first")};
    std::lock_guard lock(session_->mutex);
    Session& s = *session_;
    if (s.expired) return {error_message("expired", "session expired after inactivity, send reset")};
    s.last_active = Clock::now();
    if (!msg.contains("action_id") || !msg["action_id"].is_number_integer())
      return {error_message("bad_action", "action_id must be an integer in [0, 25)")};
    const auto id = msg["action_id"].get<std::int64_t>();
    if (id < 0 || id >= kActionCount) return {error_message("bad_action", "action_id " + std::to_string(id) + " not in [0, 25)")};
    if (!s.in_episode || s.env.done()) return {error_message("done", "episode finished, send reset")};

    StepResult r = s.env.step(int(id));
    const int t = s.env.state().step_index;
    s.record.steps.push_back({t, int(id), r.reward, r.info.visibility, r.info.distance_mm, r.info.angle_mrad,
                              r.info.action_magnitude});
    json obs = encode_observation_message(r.observation, {t, r.info.visibility, r.reward, r.done});
    obs["session"] = s.id;
    obs["seed"] = s.record.seed;
    std::vector<json> out{std::move(obs)};
    if (r.done) {
      s.in_episode = false;
      out.push_back({{"type", "summary"}, {"session", s.id}, {"seed", s.record.seed},
                     {"best_visibility", s.record.best_visibility()}, {"return", s.record.episode_return()},
                     {"steps", s.record.steps.size()}});
      registry_.emit(s.record);
    }
    return out;
  }

  SessionRegistry& registry_;
  std::shared_ptr<Session> session_;
  bool closed_ = false;
};

}  // namespace mzi::server

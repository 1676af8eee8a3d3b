#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "mzi/server/protocol.hpp"

using namespace mzi;
using namespace mzi::server;

namespace {

SessionConfig cfg(std::size_t cap = 4) {
  SessionConfig c;
  c.session_cap = cap;
  c.seed = 12345;
  return c;
}

json reset_msg(std::optional<std::uint64_t> seed = std::nullopt) {
  json m = {{"type", "reset"}};
  if (seed) m["seed"] = *seed;
  return m;
}

json action_msg(json id) { return {{"type", "action"}, {"action_id", std::move(id)}}; }

}  // namespace

TEST(Encoding, AllZeroObservationIsAllZeroBytes) {
  const Observation obs(16, 64);
  const auto msg = encode_observation_message(obs, {});
  const auto bytes = base64_decode(msg["frames"].get<std::string>());
  ASSERT_EQ(bytes.size(), 65536u);
  for (auto b : bytes) ASSERT_EQ(b, 0);
  EXPECT_EQ(msg["type"], "observation");
  for (const char* k : {"step", "visibility", "reward", "done", "frames"}) EXPECT_TRUE(msg.contains(k)) << k;
}

TEST(Encoding, FullPixelIsByte255AndRoundTripIsWithinOneStep) {
  Observation obs(16, 64);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (auto& v : obs.data()) v = u(rng);
  obs.data()[0] = 1.0f;
  obs.data()[1] = 0.0f;
  const auto bytes = base64_decode(encode_observation_message(obs, {}).at("frames").get<std::string>());
  ASSERT_EQ(bytes.size(), obs.data().size());
  EXPECT_EQ(bytes[0], 255);
  EXPECT_EQ(bytes[1], 0);
  float worst = 0;
  for (std::size_t i = 0; i < bytes.size(); ++i) worst = std::max(worst, std::fabs(float(bytes[i]) / 255.0f - obs.data()[i]));
  EXPECT_LE(worst, 1.0f / 255.0f);
}

TEST(Encoding, FramesAreFrameMajor) {
  Observation obs(16, 4);
  obs.frame(2)[5] = 1.0f;
  const auto bytes = base64_decode(encode_observation_message(obs, {}).at("frames").get<std::string>());
  EXPECT_EQ(bytes[2 * 16 + 5], 255);
  EXPECT_EQ(std::count(bytes.begin(), bytes.end(), 255), 1);
}

TEST(Encoding, Base64RoundTripAndRejectsJunk) {
  const std::vector<std::uint8_t> v{0, 1, 2, 250, 255, 7, 9};
  EXPECT_EQ(base64_decode(base64_encode(v)), v);
  EXPECT_EQ(base64_encode({'f', 'o', 'o'}), "Zm9v");
  EXPECT_THROW(base64_decode("Zm9v!!=="), std::invalid_argument);
  EXPECT_THROW(base64_decode("Zm9"), std::invalid_argument);
  EXPECT_EQ(base64_decode("Zm8="), (std::vector<std::uint8_t>{'f', 'o'}));
}

TEST(Session, SameSeedGivesIdenticalFirstFrames) {
  SessionRegistry reg(cfg());
  Connection a(reg), b(reg);
  const auto ra = a.handle(reset_msg(99));
  const auto rb = b.handle(reset_msg(99));
  ASSERT_EQ(ra.size(), 1u);
  EXPECT_EQ(ra[0]["frames"], rb[0]["frames"]);
  EXPECT_EQ(ra[0]["visibility"], rb[0]["visibility"]);
  EXPECT_EQ(ra[0]["step"], 0);
  EXPECT_EQ(ra[0]["seed"], 99);
  EXPECT_NE(ra[0]["session"], rb[0]["session"]);

  Environment env;
  env.reset(99);
  EXPECT_EQ(ra[0]["visibility"].get<double>(), visibility_analytic(env.beam()));
}

TEST(Session, OmittedSeedIsDrawnAndReported) {
  SessionRegistry reg(cfg());
  Connection a(reg), b(reg);
  const auto r = a.handle(reset_msg());
  ASSERT_TRUE(r[0].contains("seed"));
  const auto seed = r[0]["seed"].get<std::uint64_t>();
  // Replaying the reported seed reproduces the session.
  EXPECT_EQ(b.handle(reset_msg(seed))[0]["frames"], r[0]["frames"]);
  EXPECT_EQ(a.handle(json{{"type", "reset"}, {"seed", -4}})[0]["code"], "bad_seed");
  EXPECT_EQ(a.handle(json{{"type", "reset"}, {"seed", "x"}})[0]["code"], "bad_seed");
}

TEST(Session, CapacityPlusOneIsRejected) {
  SessionRegistry reg(cfg(3));
  std::vector<std::unique_ptr<Connection>> conns;
  for (int i = 0; i < 4; ++i) conns.push_back(std::make_unique<Connection>(reg));
  for (int i = 0; i < 3; ++i) EXPECT_EQ(conns[std::size_t(i)]->handle(reset_msg(1))[0]["type"], "observation");
  const auto r = conns[3]->handle(reset_msg(1));
  EXPECT_EQ(r[0]["type"], "error");
  EXPECT_EQ(r[0]["code"], "capacity");
  EXPECT_EQ(conns[3]->session(), nullptr);
  EXPECT_EQ(reg.size(), 3u);
  conns[0]->handle(json{{"type", "close"}});
  EXPECT_EQ(reg.size(), 2u);
  EXPECT_EQ(conns[3]->handle(reset_msg(1))[0]["type"], "observation");
  conns.clear();
  EXPECT_EQ(reg.size(), 0u);
}

TEST(Action, NoOpKeepsVisibility) {
  SessionRegistry reg(cfg());
  Connection c(reg);
  const double v0 = c.handle(reset_msg(5))[0]["visibility"].get<double>();
  const auto r = c.handle(action_msg(0));
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r[0]["visibility"].get<double>(), v0);
  EXPECT_EQ(r[0]["step"], 1);
  EXPECT_EQ(r[0]["done"], false);
}

TEST(Action, HundredthActionEndsWithSummary) {
  std::vector<EpisodeRecord> sunk;
  SessionRegistry reg(cfg(), [&](const EpisodeRecord& e) { sunk.push_back(e); });
  Connection c(reg);
  c.handle(reset_msg(7));
  double best = 0, ret = 0;
  std::mt19937 rng(1);
  for (int t = 1; t <= 100; ++t) {
    const auto r = c.handle(action_msg(int(rng() % 25)));
    ASSERT_EQ(r[0]["step"], t);
    best = std::max(best, r[0]["visibility"].get<double>());
    ret += r[0]["reward"].get<double>();
    if (t < 100) {
      ASSERT_EQ(r.size(), 1u);
      EXPECT_EQ(r[0]["done"], false);
    } else {
      ASSERT_EQ(r.size(), 2u);
      EXPECT_EQ(r[0]["done"], true);
      EXPECT_EQ(r[1]["type"], "summary");
      EXPECT_EQ(r[1]["best_visibility"].get<double>(), best);
      EXPECT_NEAR(r[1]["return"].get<double>(), ret, 1e-9);
      EXPECT_EQ(r[1]["steps"], 100);
    }
  }
  const auto after = c.handle(action_msg(1));
  EXPECT_EQ(after[0]["code"], "done");
  ASSERT_EQ(sunk.size(), 1u);
  EXPECT_EQ(sunk[0].seed, 7u);
  EXPECT_EQ(sunk[0].steps.size(), 100u);
  // A fresh reset starts the next episode on the same connection.
  EXPECT_EQ(c.handle(reset_msg(8))[0]["step"], 0);
  EXPECT_EQ(c.handle(action_msg(0))[0]["step"], 1);
}

TEST(Action, BadActionLeavesStateUntouched) {
  SessionRegistry reg(cfg());
  Connection c(reg), ref(reg);
  c.handle(reset_msg(3));
  ref.handle(reset_msg(3));
  c.handle(action_msg(4));
  ref.handle(action_msg(4));
  const auto before = c.session()->env.state().angles;
  for (const json& bad : {json(25), json(-1), json(2.5), json("3"), json(nullptr)}) {
    const auto r = c.handle(action_msg(bad));
    ASSERT_EQ(r.size(), 1u);
    EXPECT_EQ(r[0]["code"], "bad_action") << bad.dump();
  }
  EXPECT_EQ(c.handle(json{{"type", "action"}})[0]["code"], "bad_action");
  EXPECT_EQ(c.session()->env.state().angles, before);
  EXPECT_EQ(c.session()->env.state().step_index, 1);
  // The randomization stream did not advance either.
  EXPECT_EQ(c.handle(action_msg(9))[0]["frames"], ref.handle(action_msg(9))[0]["frames"]);
}

TEST(Action, ErrorsBeforeResetAndOnGarbage) {
  SessionRegistry reg(cfg());
  Connection c(reg);
  EXPECT_EQ(c.handle(action_msg(0))[0]["code"], "no_session");
  EXPECT_EQ(c.handle(std::string("{nope"))[0]["code"], "bad_message");
  EXPECT_EQ(c.handle(json::array())[0]["code"], "bad_message");
  EXPECT_EQ(c.handle(json{{"type", "jump"}})[0]["code"], "bad_message");
  c.handle(json{{"type", "close"}});
  EXPECT_EQ(c.handle(reset_msg(1))[0]["code"], "closed");
}

TEST(Session, InterleavedSessionsAreIsolated) {
  SessionRegistry reg(cfg());
  Connection a(reg), b(reg), solo(reg);
  a.handle(reset_msg(11));
  b.handle(reset_msg(22));
  solo.handle(reset_msg(22));
  std::mt19937 rng(5);
  for (int t = 0; t < 30; ++t) {
    a.handle(action_msg(int(rng() % 25)));
    const int act = int(rng() % 25);
    const auto rb = b.handle(action_msg(act));
    const auto rs = solo.handle(action_msg(act));
    ASSERT_EQ(rb[0]["frames"], rs[0]["frames"]) << t;
    ASSERT_EQ(rb[0]["visibility"], rs[0]["visibility"]);
  }
}

TEST(Session, RecordsUseTheEvaluationSchema) {
  std::ostringstream out;
  SessionRegistry reg(cfg(), [&](const EpisodeRecord& e) { write_jsonl(out, e); });
  Connection c(reg);
  c.handle(reset_msg(31));
  for (int t = 0; t < 100; ++t) c.handle(action_msg(t % 25));
  std::istringstream in(out.str());
  const auto back = read_jsonl(in);
  ASSERT_EQ(back.size(), 1u);
  ASSERT_EQ(back[0].steps.size(), 100u);

  // Same seed and actions through the evaluation path give the same record.
  Environment env;
  int k = 0;
  const auto rec = run_episode([&](const Observation&) { return k++ % 25; }, env, 31);
  std::ostringstream a, b;
  EpisodeRecord copy = rec;
  copy.episode = back[0].episode;
  write_jsonl(a, copy);
  write_jsonl(b, back[0]);
  EXPECT_EQ(a.str(), b.str());
}

TEST(Session, IdleSessionsExpire) {
  auto c0 = cfg();
  c0.idle_timeout = std::chrono::seconds(5);
  SessionRegistry reg(c0);
  Connection a(reg), b(reg);
  a.handle(reset_msg(1));
  b.handle(reset_msg(2));
  const auto later = Clock::now() + std::chrono::seconds(6);
  b.handle(action_msg(0));  // b is active, but 6 s from now both are idle
  EXPECT_EQ(reg.expire_idle(Clock::now()), 0u);
  EXPECT_EQ(reg.expire_idle(later), 2u);
  EXPECT_EQ(reg.size(), 0u);
  EXPECT_EQ(a.handle(action_msg(0))[0]["code"], "expired");
  // Reset after expiry opens a new session.
  const auto r = a.handle(reset_msg(1));
  EXPECT_EQ(r[0]["type"], "observation");
  EXPECT_EQ(reg.size(), 1u);
}

TEST(Session, BusySessionIsNotExpiredMidRequest) {
  auto c0 = cfg();
  c0.idle_timeout = std::chrono::seconds(1);
  SessionRegistry reg(c0);
  Connection a(reg);
  a.handle(reset_msg(1));
  std::unique_lock hold(a.session()->mutex);
  EXPECT_EQ(reg.expire_idle(Clock::now() + std::chrono::seconds(10)), 0u);
  hold.unlock();
  EXPECT_EQ(reg.expire_idle(Clock::now() + std::chrono::seconds(10)), 1u);
}

TEST(Session, RegistryPreconditions) {
  auto c0 = cfg(0);
  EXPECT_THROW(SessionRegistry{c0}, contract_violation);
}

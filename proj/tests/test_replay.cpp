#include <gtest/gtest.h>

#include <random>
#include <set>

#include "mzi/replay.hpp"

using namespace mzi;

namespace {

// Observation whose every entry encodes the integer v in 8 bits.
std::vector<float> obs_of(int v, std::size_t n = 8) { return std::vector<float>(n, float(v % 256) / 255.0f); }

void push_chain(ReplayBuffer& b, int first, int count, bool done_last = false) {
  for (int i = 0; i < count; ++i)
    b.push(obs_of(first + i), (first + i) % 25, float(first + i), obs_of(first + i + 1), done_last && i == count - 1);
}

}  // namespace

TEST(Replay, QuantizesToBytes) {
  EXPECT_EQ(ReplayBuffer::quantize(0.0f), 0);
  EXPECT_EQ(ReplayBuffer::quantize(1.0f), 255);
  EXPECT_EQ(ReplayBuffer::quantize(0.5f), 128);
  EXPECT_EQ(ReplayBuffer::quantize(-3.0f), 0);
  EXPECT_EQ(ReplayBuffer::quantize(7.0f), 255);
  for (int v = 0; v < 256; ++v) EXPECT_EQ(ReplayBuffer::quantize(float(v) / 255.0f), v);
}

TEST(Replay, KeepsExactlyTheLastCapacityTransitions) {
  const std::size_t cap = 10;
  for (int k : {0, 1, 7, 10, 23}) {
    ReplayBuffer b(cap, 8);
    push_chain(b, 0, int(cap) + k);
    ASSERT_EQ(b.size(), cap);
    EXPECT_EQ(b.total_pushed(), cap + std::size_t(k));
    for (std::size_t i = 0; i < cap; ++i) {
      const std::size_t s = b.logical_to_slot(i);
      const int id = k + int(i);
      EXPECT_EQ(b.reward(s), float(id));
      EXPECT_EQ(b.action(s), id % 25);
      EXPECT_EQ(b.obs(s)[0], id % 256);
      EXPECT_EQ(b.next_obs(s)[0], (id + 1) % 256);
    }
  }
}

TEST(Replay, NewestTransitionKeepsItsOwnNextObservation) {
  ReplayBuffer b(4, 8);
  push_chain(b, 0, 3);
  const std::size_t newest = b.logical_to_slot(2);
  EXPECT_EQ(b.next_obs(newest)[0], 3);
}

TEST(Replay, EpisodeBoundaries) {
  ReplayBuffer b(8, 8);
  push_chain(b, 0, 3, true);  // terminal transition 2 -> 3
  // A new episode may start anywhere after a terminal transition.
  EXPECT_NO_THROW(push_chain(b, 100, 2));
  EXPECT_TRUE(b.done(b.logical_to_slot(2)));
  EXPECT_FALSE(b.done(b.logical_to_slot(3)));
}

TEST(Replay, RejectsBrokenChainWithoutCorruption) {
  ReplayBuffer b(3, 8);
  push_chain(b, 0, 3);
  const auto before = std::vector<std::uint8_t>(b.obs(b.logical_to_slot(0)).begin(), b.obs(b.logical_to_slot(0)).end());
  EXPECT_THROW(b.push(obs_of(50), 0, 0, obs_of(51), false), std::invalid_argument);
  EXPECT_EQ(b.total_pushed(), 3u);
  EXPECT_EQ(std::vector<std::uint8_t>(b.obs(b.logical_to_slot(0)).begin(), b.obs(b.logical_to_slot(0)).end()), before);
  EXPECT_EQ(b.next_obs(b.logical_to_slot(2))[0], 3);
  EXPECT_THROW(b.push(obs_of(3, 7), 0, 0, obs_of(4), false), std::invalid_argument);
}

TEST(Replay, SamplesDistinctLiveSlots) {
  ReplayBuffer b(50, 8);
  push_chain(b, 0, 80);
  std::mt19937_64 rng(1);
  std::vector<int> hits(50, 0);
  for (int r = 0; r < 2000; ++r) {
    const auto s = b.sample(32, rng);
    ASSERT_EQ(std::set<std::size_t>(s.begin(), s.end()).size(), 32u);
    for (auto slot : s) {
      ASSERT_LT(slot, 50u);
      ++hits[slot];
    }
  }
  // Uniform over slots: expected 2000 * 32 / 50 = 1280 each.
  for (int h : hits) EXPECT_NEAR(h, 1280, 200);
  EXPECT_THROW(b.sample(51, rng), std::invalid_argument);
  EXPECT_THROW(b.sample(0, rng), std::invalid_argument);
}

TEST(Replay, ConstructorPreconditions) {
  EXPECT_THROW(ReplayBuffer(0, 8), std::invalid_argument);
  EXPECT_THROW(ReplayBuffer(8, 0), std::invalid_argument);
}

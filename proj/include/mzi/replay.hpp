#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

namespace mzi {

// Observations are stored quantized to 8 bits. The next observation of a
// transition is the observation of the following slot, so each frame set is
// held once; only the newest transition keeps its own copy.
class ReplayBuffer {
 public:
  struct Sample {
    std::vector<std::size_t> slots;
  };

  ReplayBuffer(std::size_t capacity, std::size_t obs_size) : capacity_(capacity), obs_size_(obs_size) {
    if (capacity == 0 || obs_size == 0) throw std::invalid_argument("ReplayBuffer: capacity and obs_size must be positive");
    slots_.resize(capacity);
    newest_next_.resize(obs_size);
  }

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return size_; }
  std::size_t obs_size() const { return obs_size_; }
  std::uint64_t total_pushed() const { return pushed_; }

  static std::uint8_t quantize(float v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
  }

  // Transitions must arrive in episode order: unless the previous transition
  // was terminal, obs must equal its next_obs.
  void push(std::span<const float> obs, int action, float reward, std::span<const float> next_obs, bool done) {
    if (obs.size() != obs_size_ || next_obs.size() != obs_size_) throw std::invalid_argument("ReplayBuffer: bad observation size");
    scratch_.resize(obs_size_);
    std::transform(obs.begin(), obs.end(), scratch_.begin(), quantize);
    if (size_ > 0 && !newest().done && scratch_ != newest_next_)
      throw std::invalid_argument("ReplayBuffer: transition does not continue the previous one");
    Slot& slot = slots_[head_];
    slot.obs.swap(scratch_);
    slot.action = action;
    slot.reward = reward;
    slot.done = done;
    std::transform(next_obs.begin(), next_obs.end(), newest_next_.begin(), quantize);

    newest_slot_ = head_;
    head_ = (head_ + 1) % capacity_;
    size_ = std::min(size_ + 1, capacity_);
    ++pushed_;
  }

  // Distinct slots drawn uniformly.
  template <typename Gen>
  std::vector<std::size_t> sample(std::size_t batch, Gen& rng) const {
    if (batch == 0 || batch > size_) throw std::invalid_argument("ReplayBuffer: batch larger than buffer");
    std::uniform_int_distribution<std::size_t> pick(0, size_ - 1);
    std::vector<std::size_t> out;
    out.reserve(batch);
    while (out.size() < batch) {
      const std::size_t s = logical_to_slot(pick(rng));
      if (std::find(out.begin(), out.end(), s) == out.end()) out.push_back(s);
    }
    return out;
  }

  // Oldest first, index in [0, size()).
  std::size_t logical_to_slot(std::size_t i) const { return (head_ + capacity_ - size_ + i) % capacity_; }

  int action(std::size_t slot) const { return slots_[slot].action; }
  float reward(std::size_t slot) const { return slots_[slot].reward; }
  bool done(std::size_t slot) const { return slots_[slot].done; }
  std::span<const std::uint8_t> obs(std::size_t slot) const { return slots_[slot].obs; }
  std::span<const std::uint8_t> next_obs(std::size_t slot) const {
    if (slot == newest_slot_) return newest_next_;
    return slots_[(slot + 1) % capacity_].obs;
  }

 private:
  struct Slot {
    std::vector<std::uint8_t> obs;
    int action = 0;
    float reward = 0;
    bool done = false;
  };
  const Slot& newest() const { return slots_[newest_slot_]; }

  std::size_t capacity_, obs_size_;
  std::vector<Slot> slots_;
  std::vector<std::uint8_t> newest_next_, scratch_;
  std::size_t head_ = 0, size_ = 0, newest_slot_ = 0;
  std::uint64_t pushed_ = 0;
};

}  // namespace mzi

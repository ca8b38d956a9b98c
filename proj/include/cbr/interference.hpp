#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace cbr {

// One (node, other packet) pair that may transmit while the tracked packet is
// being received.
struct InterfererEntry {
  std::uint32_t node = 0;
  double omega = 0.0;
  double prob = 0.0;
};

// Interferer lists per (relative slot, receiver) for one tracked packet.
// A default-constructed field is empty everywhere.
class InterferenceField {
 public:
  InterferenceField() = default;
  InterferenceField(std::size_t slots, std::size_t nodes)
      : slots_(slots), nodes_(nodes), cells_(slots * nodes) {}

  bool empty() const noexcept {
    for (const auto& c : cells_) {
      if (!c.empty()) return false;
    }
    return true;
  }

  std::size_t slots() const noexcept { return slots_; }
  std::size_t nodes() const noexcept { return nodes_; }

  // `tau` is 1-based.
  std::span<const InterfererEntry> at(std::size_t tau, std::size_t rx) const noexcept {
    if (tau == 0 || tau > slots_ || rx >= nodes_) return {};
    return cells_[(tau - 1) * nodes_ + rx];
  }

  void add(std::size_t tau, std::size_t rx, InterfererEntry e) {
    cells_.at((tau - 1) * nodes_ + rx).push_back(e);
  }

 private:
  std::size_t slots_ = 0;
  std::size_t nodes_ = 0;
  std::vector<std::vector<InterfererEntry>> cells_;
};

}  // namespace cbr

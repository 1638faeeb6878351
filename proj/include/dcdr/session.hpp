#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dcdr/errors.hpp"
#include "dcdr/permutation.hpp"

namespace dcdr {

/// Per-position binary feedback (1 = positive).
class ConditionSequence {
 public:
  ConditionSequence() = default;
  explicit ConditionSequence(std::vector<int> labels) : labels_(std::move(labels)) {
    for (int v : labels_)
      if (v != 0 && v != 1) throw InvalidArgument("condition labels must be 0 or 1, got " + std::to_string(v));
  }

  static ConditionSequence all_positive(std::size_t n) { return ConditionSequence(std::vector<int>(n, 1)); }

  const std::vector<int>& labels() const noexcept { return labels_; }
  std::size_t size() const noexcept { return labels_.size(); }
  int operator[](std::size_t k) const { return labels_.at(k); }

  bool operator==(const ConditionSequence&) const = default;

 private:
  std::vector<int> labels_;
};

struct Session {
  std::uint64_t session_id = 0;
  std::uint64_t user_id = 0;
  std::vector<ItemId> history;  // most recent first
  ItemSequence displayed;       // logged R_0, base order = logged order
  ConditionSequence feedback;

  bool operator==(const Session&) const = default;
};

}  // namespace dcdr

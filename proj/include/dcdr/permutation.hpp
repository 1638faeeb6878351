#pragma once

/**
 * Permutation encoding for fixed-length item lists.
 *
 * An ordering of l_o items is represented by the list of base positions it
 * displays. Orderings map bijectively to integers in [0, l_o!) through the
 * lexicographic Lehmer code, so the identity ordering has index 0 and the
 * reversed ordering has index l_o! - 1.
 */

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dcdr/errors.hpp"

namespace dcdr {

using ItemId = std::uint64_t;
using Perm = std::vector<std::size_t>;

/// Largest output length for which permutation-space matrices are built.
inline constexpr std::size_t kMaxOutputLength = 8;

inline std::uint64_t factorial(std::size_t n) {
  std::uint64_t f = 1;
  for (std::size_t i = 2; i <= n; ++i) f *= i;
  return f;
}

struct SequenceSpec {
  std::size_t input_length = 0;   // l_s
  std::size_t output_length = 0;  // l_o

  SequenceSpec() = default;
  SequenceSpec(std::size_t l_s, std::size_t l_o) : input_length(l_s), output_length(l_o) {
    if (l_o < 1 || l_o > l_s)
      throw InvalidArgument("sequence spec requires 1 <= l_o <= l_s, got l_s=" +
                            std::to_string(l_s) + " l_o=" + std::to_string(l_o));
    if (l_o > kMaxOutputLength)
      throw CapacityError("output length " + std::to_string(l_o) + " exceeds the cap of " +
                          std::to_string(kMaxOutputLength));
  }

  std::uint64_t permutation_count() const { return factorial(output_length); }

  bool operator==(const SequenceSpec&) const = default;
};

inline bool is_permutation(std::span<const std::size_t> perm) {
  std::vector<bool> seen(perm.size(), false);
  for (std::size_t v : perm) {
    if (v >= perm.size() || seen[v]) return false;
    seen[v] = true;
  }
  return true;
}

inline void require_permutation(std::span<const std::size_t> perm) {
  if (!is_permutation(perm)) {
    std::string s = "[";
    for (std::size_t i = 0; i < perm.size(); ++i) s += (i ? "," : "") + std::to_string(perm[i]);
    throw InvalidPermutation("not a permutation of 0..n-1: " + s + "]");
  }
}

/// Lexicographic rank of `perm` among all permutations of its length.
inline std::uint64_t rank(std::span<const std::size_t> perm) {
  require_permutation(perm);
  const std::size_t n = perm.size();
  std::uint64_t index = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t smaller_after = 0;
    for (std::size_t j = i + 1; j < n; ++j)
      if (perm[j] < perm[i]) ++smaller_after;
    index = index * (n - i) + smaller_after;
  }
  return index;
}

/// Inverse of rank().
inline Perm unrank(std::uint64_t index, std::size_t n) {
  if (index >= factorial(n))
    throw RangeError("rank index " + std::to_string(index) + " outside [0, " +
                     std::to_string(factorial(n)) + ")");
  std::vector<std::size_t> code(n);
  for (std::size_t i = n; i-- > 0;) {
    const std::size_t radix = n - i;
    code[i] = static_cast<std::size_t>(index % radix);
    index /= radix;
  }
  std::vector<std::size_t> pool(n);
  for (std::size_t i = 0; i < n; ++i) pool[i] = i;
  Perm perm(n);
  for (std::size_t i = 0; i < n; ++i) {
    perm[i] = pool[code[i]];
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(code[i]));
  }
  return perm;
}

/// Number of positions at which two equal-length sequences differ.
template <typename T>
std::size_t seq_distance(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size())
    throw InvalidArgument("seq_distance: length mismatch " + std::to_string(a.size()) + " vs " +
                          std::to_string(b.size()));
  std::size_t d = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) ++d;
  return d;
}

template <typename T>
std::size_t seq_distance(const std::vector<T>& a, const std::vector<T>& b) {
  return seq_distance(std::span<const T>(a), std::span<const T>(b));
}

/// Index pairs (i < j) in lexicographic order; the swap enumeration order.
inline std::vector<std::pair<std::size_t, std::size_t>> swap_pairs(std::size_t n) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  pairs.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
  return pairs;
}

/// All orderings one transposition away from `perm`, ordered by swapped pair.
inline std::vector<Perm> swap_neighbors(std::span<const std::size_t> perm) {
  require_permutation(perm);
  std::vector<Perm> out;
  out.reserve(perm.size() * (perm.size() - 1) / 2);
  for (auto [i, j] : swap_pairs(perm.size())) {
    Perm p(perm.begin(), perm.end());
    std::swap(p[i], p[j]);
    out.push_back(std::move(p));
  }
  return out;
}

/// result[k] = a[b[k]].
inline Perm compose(std::span<const std::size_t> a, std::span<const std::size_t> b) {
  Perm out(b.size());
  for (std::size_t k = 0; k < b.size(); ++k) out[k] = a[b[k]];
  return out;
}

inline Perm inverse(std::span<const std::size_t> p) {
  Perm out(p.size());
  for (std::size_t k = 0; k < p.size(); ++k) out[p[k]] = k;
  return out;
}

inline Perm identity_perm(std::size_t n) {
  Perm p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  return p;
}

/**
 * A displayed ordering over a candidate pool.
 *
 * `positions[k]` indexes into `base_items`; item ids stay opaque and only
 * appear when mapping back to the caller's world.
 */
class ItemSequence {
 public:
  ItemSequence() = default;

  ItemSequence(std::vector<ItemId> base_items, Perm positions)
      : base_(std::move(base_items)), positions_(std::move(positions)) {
    if (positions_.empty() || positions_.size() > base_.size())
      throw InvalidArgument("item sequence length must be in [1, base size]");
    for (std::size_t p : positions_)
      if (p >= base_.size()) throw InvalidArgument("item sequence position out of range");
  }

  /// The base items in their given order.
  static ItemSequence identity(std::vector<ItemId> base_items, std::size_t l_o) {
    return ItemSequence(std::move(base_items), identity_perm(l_o));
  }

  static ItemSequence identity(std::vector<ItemId> base_items) {
    const std::size_t n = base_items.size();
    return identity(std::move(base_items), n);
  }

  const std::vector<ItemId>& base_items() const noexcept { return base_; }
  const Perm& positions() const noexcept { return positions_; }
  std::size_t size() const noexcept { return positions_.size(); }

  std::vector<ItemId> items() const {
    std::vector<ItemId> out(positions_.size());
    for (std::size_t k = 0; k < positions_.size(); ++k) out[k] = base_[positions_[k]];
    return out;
  }

  ItemId item_at(std::size_t k) const { return base_[positions_.at(k)]; }

  /// True when positions are a permutation of the first l_o base slots.
  bool is_permutation_sequence() const { return is_permutation(positions_); }

  bool has_duplicates() const {
    std::vector<bool> seen(base_.size(), false);
    for (std::size_t p : positions_) {
      if (seen[p]) return true;
      seen[p] = true;
    }
    return false;
  }

  std::optional<std::uint64_t> rank_index() const {
    if (!is_permutation_sequence()) return std::nullopt;
    return rank(positions_);
  }

  ItemSequence with_positions(Perm positions) const { return ItemSequence(base_, std::move(positions)); }

  bool operator==(const ItemSequence&) const = default;

 private:
  std::vector<ItemId> base_;
  Perm positions_;
};

}  // namespace dcdr

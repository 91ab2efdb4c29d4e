#pragma once

#include <algorithm>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace korch {

// Dynamic bitset over dense indices [0, size). Used for primitive subsets
// (execution states, kernel members) and for candidate selections.
class NodeSet {
 public:
  NodeSet() = default;
  explicit NodeSet(std::size_t size) : size_(size), words_((size + 63) / 64, 0) {}

  static NodeSet full(std::size_t size) {
    NodeSet s(size);
    for (std::size_t i = 0; i < size; ++i) s.set(i);
    return s;
  }

  template <class Range>
  static NodeSet of(std::size_t size, const Range& indices) {
    NodeSet s(size);
    for (auto i : indices) s.set(static_cast<std::size_t>(i));
    return s;
  }

  std::size_t size() const { return size_; }

  bool test(std::size_t i) const { return (words_[i >> 6] >> (i & 63)) & 1u; }
  void set(std::size_t i) { words_[i >> 6] |= (uint64_t{1} << (i & 63)); }
  void reset(std::size_t i) { words_[i >> 6] &= ~(uint64_t{1} << (i & 63)); }
  void clear() { std::fill(words_.begin(), words_.end(), 0); }

  std::size_t count() const {
    std::size_t n = 0;
    for (auto w : words_) n += static_cast<std::size_t>(std::popcount(w));
    return n;
  }
  bool empty() const {
    return std::all_of(words_.begin(), words_.end(), [](uint64_t w) { return w == 0; });
  }
  bool any() const { return !empty(); }

  bool intersects(const NodeSet& o) const {
    for (std::size_t i = 0; i < words_.size(); ++i)
      if (words_[i] & o.words_[i]) return true;
    return false;
  }
  bool is_subset_of(const NodeSet& o) const {
    for (std::size_t i = 0; i < words_.size(); ++i)
      if (words_[i] & ~o.words_[i]) return false;
    return true;
  }
  bool is_proper_subset_of(const NodeSet& o) const { return is_subset_of(o) && *this != o; }

  NodeSet& operator|=(const NodeSet& o) {
    for (std::size_t i = 0; i < words_.size(); ++i) words_[i] |= o.words_[i];
    return *this;
  }
  NodeSet& operator&=(const NodeSet& o) {
    for (std::size_t i = 0; i < words_.size(); ++i) words_[i] &= o.words_[i];
    return *this;
  }
  // Set difference.
  NodeSet& operator-=(const NodeSet& o) {
    for (std::size_t i = 0; i < words_.size(); ++i) words_[i] &= ~o.words_[i];
    return *this;
  }
  friend NodeSet operator|(NodeSet a, const NodeSet& b) { return a |= b; }
  friend NodeSet operator&(NodeSet a, const NodeSet& b) { return a &= b; }
  friend NodeSet operator-(NodeSet a, const NodeSet& b) { return a -= b; }

  friend bool operator==(const NodeSet& a, const NodeSet& b) {
    return a.size_ == b.size_ && a.words_ == b.words_;
  }

  // Lexicographic order on the ascending member lists; a proper prefix
  // orders first.
  friend bool lex_less(const NodeSet& a, const NodeSet& b) {
    for (std::size_t w = 0; w < a.words_.size(); ++w) {
      uint64_t diff = a.words_[w] ^ b.words_[w];
      if (diff == 0) continue;
      std::size_t x = w * 64 + static_cast<std::size_t>(std::countr_zero(diff));
      // x is the first position where the lists differ. The side holding x
      // is smaller iff the other side still has an element beyond x.
      if (a.test(x)) return b.has_above(x);
      return !a.has_above(x);
    }
    return false;
  }

  bool has_above(std::size_t x) const {
    std::size_t w = x >> 6;
    std::size_t bit = x & 63;
    if (bit < 63 && (words_[w] >> (bit + 1))) return true;
    for (std::size_t v = w + 1; v < words_.size(); ++v)
      if (words_[v]) return true;
    return false;
  }

  // Iteration over set members in ascending order.
  template <class Fn>
  void for_each(Fn&& fn) const {
    for (std::size_t w = 0; w < words_.size(); ++w) {
      uint64_t bits = words_[w];
      while (bits) {
        int b = std::countr_zero(bits);
        fn(w * 64 + static_cast<std::size_t>(b));
        bits &= bits - 1;
      }
    }
  }

  std::vector<int> members() const {
    std::vector<int> out;
    for_each([&](std::size_t i) { out.push_back(static_cast<int>(i)); });
    return out;
  }

  // Smallest member, or size() when empty.
  std::size_t first() const {
    for (std::size_t w = 0; w < words_.size(); ++w)
      if (words_[w]) return w * 64 + static_cast<std::size_t>(std::countr_zero(words_[w]));
    return size_;
  }

  std::size_t hash() const {
    uint64_t h = 1469598103934665603ull ^ size_;
    for (auto w : words_) {
      h ^= w + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    }
    return static_cast<std::size_t>(h);
  }

  std::string to_string() const {
    std::string s = "{";
    bool first_item = true;
    for_each([&](std::size_t i) {
      if (!first_item) s += ",";
      s += std::to_string(i);
      first_item = false;
    });
    return s + "}";
  }

  const std::vector<uint64_t>& words() const { return words_; }

 private:
  std::size_t size_ = 0;
  std::vector<uint64_t> words_;
};

struct NodeSetHash {
  std::size_t operator()(const NodeSet& s) const { return s.hash(); }
};

}  // namespace korch

#pragma once

#include <bit>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "kgsa/error.hpp"

namespace kgsa {

/// A set of input variables, stored as a bitmask. Bit i (0-based) stands for
/// the input labelled i + 1 in reports and on the command line.
class InputSubset {
public:
    static constexpr int kMaxInputs = 64;

    constexpr InputSubset() = default;
    constexpr explicit InputSubset(std::uint64_t mask) : mask_(mask) {}

    /// Builds a subset from 1-based labels.
    static InputSubset from_labels(std::initializer_list<int> labels) {
        return from_labels(std::vector<int>(labels));
    }

    static InputSubset from_labels(const std::vector<int>& labels) {
        std::uint64_t m = 0;
        for (int l : labels) {
            if (l < 1 || l > kMaxInputs) {
                throw ConfigError("input label " + std::to_string(l) + " outside 1.." +
                                  std::to_string(kMaxInputs));
            }
            m |= std::uint64_t{1} << (l - 1);
        }
        return InputSubset(m);
    }

    /// The subset {1, ..., n}.
    static InputSubset full(int n) {
        if (n < 0 || n > kMaxInputs) throw ConfigError("input count outside 0..64");
        return InputSubset(n == 64 ? ~std::uint64_t{0} : (std::uint64_t{1} << n) - 1);
    }

    /// Singleton containing the 0-based column index.
    static InputSubset single(int index) { return InputSubset(std::uint64_t{1} << index); }

    [[nodiscard]] constexpr std::uint64_t mask() const { return mask_; }
    [[nodiscard]] constexpr int size() const { return std::popcount(mask_); }
    [[nodiscard]] constexpr bool empty() const { return mask_ == 0; }
    [[nodiscard]] constexpr bool contains(int index) const { return (mask_ >> index) & 1U; }
    [[nodiscard]] constexpr bool is_subset_of(InputSubset other) const {
        return (mask_ & ~other.mask_) == 0;
    }
    [[nodiscard]] constexpr bool disjoint(InputSubset other) const {
        return (mask_ & other.mask_) == 0;
    }

    /// 0-based column indices in increasing order.
    [[nodiscard]] std::vector<int> indices() const {
        std::vector<int> out;
        out.reserve(size());
        for (std::uint64_t m = mask_; m != 0; m &= m - 1) out.push_back(std::countr_zero(m));
        return out;
    }

    /// 1-based labels in increasing order.
    [[nodiscard]] std::vector<int> labels() const {
        auto idx = indices();
        for (int& i : idx) ++i;
        return idx;
    }

    /// "(1,3)" style, or "1" for singletons, or "{}" for the empty set.
    [[nodiscard]] std::string to_string() const {
        if (empty()) return "{}";
        auto l = labels();
        if (l.size() == 1) return std::to_string(l[0]);
        std::string s = "(";
        for (std::size_t i = 0; i < l.size(); ++i) {
            if (i) s += ',';
            s += std::to_string(l[i]);
        }
        return s + ")";
    }

    constexpr InputSubset operator|(InputSubset o) const { return InputSubset(mask_ | o.mask_); }
    constexpr InputSubset operator&(InputSubset o) const { return InputSubset(mask_ & o.mask_); }
    /// Set difference.
    constexpr InputSubset operator-(InputSubset o) const { return InputSubset(mask_ & ~o.mask_); }

    constexpr auto operator<=>(const InputSubset&) const = default;

private:
    std::uint64_t mask_ = 0;
};

/// All subsets of `universe` (including the empty set and `universe` itself),
/// in increasing mask order.
inline std::vector<InputSubset> subsets_of(InputSubset universe) {
    if (universe.size() > 30) throw ConfigError("subset enumeration limited to 30 inputs");
    std::vector<InputSubset> out;
    out.reserve(std::size_t{1} << universe.size());
    const std::uint64_t u = universe.mask();
    std::uint64_t s = 0;
    do {
        out.emplace_back(s);
        s = (s - u) & u;
    } while (s != 0);
    return out;
}

/// Non-empty subsets of `universe` with at most `max_order` members.
inline std::vector<InputSubset> subsets_up_to_order(InputSubset universe, int max_order) {
    std::vector<InputSubset> out;
    for (auto s : subsets_of(universe)) {
        if (!s.empty() && s.size() <= max_order) out.push_back(s);
    }
    return out;
}

}  // namespace kgsa

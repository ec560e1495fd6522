#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "kgsa/error.hpp"
#include "kgsa/subset.hpp"

namespace kgsa {

/// Map from input subsets to beta values. The empty subset is implicitly 0.
class IndexTable {
public:
    IndexTable() = default;
    explicit IndexTable(int input_count, std::string provenance = {})
        : n_(input_count), provenance_(std::move(provenance)) {
        if (input_count < 1 || input_count > InputSubset::kMaxInputs) throw ConfigError("input count outside 1..64");
    }

    void set(InputSubset s, double value) {
        if (s.empty()) throw ConfigError("the empty subset is fixed at 0");
        if (!s.is_subset_of(InputSubset::full(n_))) {
            throw ConfigError("subset " + s.to_string() + " exceeds the table's " + std::to_string(n_) + " inputs");
        }
        values_[s] = value;
    }

    [[nodiscard]] bool contains(InputSubset s) const { return s.empty() || values_.count(s) != 0; }

    [[nodiscard]] double at(InputSubset s) const {
        if (s.empty()) return 0.0;
        auto it = values_.find(s);
        if (it == values_.end()) throw ConfigError("index table has no entry for subset " + s.to_string());
        return it->second;
    }

    [[nodiscard]] int input_count() const { return n_; }
    [[nodiscard]] const std::map<InputSubset, double>& entries() const { return values_; }
    [[nodiscard]] const std::string& provenance() const { return provenance_; }

    /// Throws unless every subset of `universe` is present.
    void require_all_subsets(InputSubset universe) const {
        for (auto s : subsets_of(universe)) {
            if (!contains(s)) throw ConfigError("index table has no entry for subset " + s.to_string());
        }
    }

    struct MonotonicityViolation {
        InputSubset smaller;
        InputSubset larger;
        double excess = 0.0;  ///< beta_smaller - beta_larger
    };

    /// Pairs S subset-of R (|R| = |S| + 1) with beta_S > beta_R + tol.
    [[nodiscard]] std::vector<MonotonicityViolation> monotonicity_violations(double tol) const {
        std::vector<MonotonicityViolation> out;
        for (const auto& [r, vr] : values_) {
            for (int i : r.indices()) {
                const InputSubset s = r - InputSubset::single(i);
                if (!contains(s)) continue;
                const double vs = at(s);
                if (vs > vr + tol) out.push_back({s, r, vs - vr});
            }
        }
        return out;
    }

private:
    int n_ = 0;
    std::map<InputSubset, double> values_;
    std::string provenance_;
};

/// beta_{R|S} = beta_{S u R} - beta_S for disjoint R and S.
inline double conditional_index(const IndexTable& table, InputSubset r, InputSubset s) {
    if (!r.disjoint(s)) throw ConfigError("conditional index needs disjoint subsets");
    return table.at(r | s) - table.at(s);
}

struct OlsStep {
    int label = 0;                 ///< 1-based input label chosen at this step
    double conditional = 0.0;      ///< beta_{label | previous labels}
    double cumulative = 0.0;       ///< beta of all labels chosen so far
    std::vector<int> tied_labels;  ///< other labels within tie_tol of the maximum
    bool negative = false;         ///< conditional value below zero (estimation noise)
};

struct OlsResult {
    InputSubset universe;
    std::vector<OlsStep> steps;

    [[nodiscard]] std::vector<int> order() const {
        std::vector<int> o;
        for (const auto& s : steps) o.push_back(s.label);
        return o;
    }
    [[nodiscard]] bool has_ties() const {
        for (const auto& s : steps) {
            if (!s.tied_labels.empty()) return true;
        }
        return false;
    }
};

using BetaSource = std::function<double(InputSubset)>;

namespace detail {

inline OlsResult ols_from(const BetaSource& beta, InputSubset universe, double tie_tol, InputSubset start,
                          std::vector<int> forced) {
    if (universe.empty()) throw ConfigError("OLS needs a non-empty universe");
    OlsResult res;
    res.universe = universe;
    InputSubset chosen = start;
    double base = chosen.empty() ? 0.0 : beta(chosen);
    std::size_t forced_pos = 0;
    while (chosen != universe) {
        const auto remaining = (universe - chosen).indices();
        std::vector<double> cond(remaining.size());
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < remaining.size(); ++k) {
            cond[k] = beta(chosen | InputSubset::single(remaining[k])) - base;
            best = std::max(best, cond[k]);
        }
        std::size_t pick = remaining.size();
        if (forced_pos < forced.size()) {
            for (std::size_t k = 0; k < remaining.size(); ++k) {
                if (remaining[k] + 1 == forced[forced_pos]) pick = k;
            }
            ++forced_pos;
        }
        if (pick == remaining.size()) {
            for (std::size_t k = 0; k < remaining.size(); ++k) {
                if (cond[k] == best) {
                    pick = k;
                    break;
                }
            }
        }
        OlsStep step;
        step.label = remaining[pick] + 1;
        step.conditional = cond[pick];
        for (std::size_t k = 0; k < remaining.size(); ++k) {
            if (k != pick && cond[k] >= best - tie_tol) {
                step.tied_labels.push_back(remaining[k] + 1);
            }
        }
        chosen = chosen | InputSubset::single(remaining[pick]);
        base = beta(chosen);
        step.cumulative = base;
        step.negative = step.conditional < 0.0;
        res.steps.push_back(std::move(step));
    }
    return res;
}

}  // namespace detail

/// Greedy optimal learning sequence over `universe`, querying beta lazily so
/// only the n(n+1)/2 subsets along the chain are needed. Ties are flagged and
/// broken toward the smallest label.
inline OlsResult ols_decomposition(const BetaSource& beta, InputSubset universe, double tie_tol = 1e-9) {
    return detail::ols_from(beta, universe, tie_tol, InputSubset{}, {});
}

inline OlsResult ols_decomposition(const IndexTable& table, InputSubset universe, double tie_tol = 1e-9) {
    return ols_decomposition([&](InputSubset s) { return table.at(s); }, universe, tie_tol);
}

/// Every sequence obtained by branching on flagged ties, up to `max_sequences`.
/// The first entry is the default sequence.
inline std::vector<OlsResult> ols_alternatives(const IndexTable& table, InputSubset universe, double tie_tol = 1e-9,
                                               std::size_t max_sequences = 16) {
    auto beta = [&](InputSubset s) { return table.at(s); };
    std::vector<OlsResult> out;
    std::vector<std::vector<int>> pending{{}};
    while (!pending.empty() && out.size() < max_sequences) {
        std::vector<int> prefix = std::move(pending.front());
        pending.erase(pending.begin());
        OlsResult r = detail::ols_from(beta, universe, tie_tol, InputSubset{}, prefix);
        for (std::size_t k = prefix.size(); k < r.steps.size(); ++k) {
            for (int alt : r.steps[k].tied_labels) {
                std::vector<int> p;
                for (std::size_t q = 0; q < k; ++q) p.push_back(r.steps[q].label);
                p.push_back(alt);
                pending.push_back(std::move(p));
            }
        }
        out.push_back(std::move(r));
    }
    return out;
}

/// Kernel ANOVA effects S_R for every subset R of the universe (including the
/// empty set, whose effect is 0).
using AnovaTable = std::map<InputSubset, double>;

inline AnovaTable anova_effects(const IndexTable& table, InputSubset universe) {
    table.require_all_subsets(universe);
    AnovaTable out;
    for (auto r : subsets_of(universe)) {
        double s = 0.0;
        for (auto u : subsets_of(r)) {
            const double sign = ((r.size() - u.size()) % 2 == 0) ? 1.0 : -1.0;
            s += sign * table.at(u);
        }
        out[r] = s;
    }
    return out;
}

struct ShapleyTable {
    InputSubset universe;
    std::map<int, double> effects;  ///< keyed by 1-based label

    [[nodiscard]] double sum() const {
        double s = 0.0;
        for (const auto& [l, v] : effects) s += v;
        return s;
    }
};

/// Sh_i = (1/n) sum_{A in universe \ {i}} C(n-1, |A|)^{-1} (beta_{A u i} - beta_A).
inline ShapleyTable shapley_effects(const IndexTable& table, InputSubset universe) {
    if (universe.empty()) throw ConfigError("Shapley effects need a non-empty universe");
    table.require_all_subsets(universe);
    const int n = universe.size();
    std::vector<double> inv_binom(static_cast<std::size_t>(n));
    {
        double c = 1.0;  // C(n-1, k)
        for (int k = 0; k < n; ++k) {
            inv_binom[static_cast<std::size_t>(k)] = 1.0 / c;
            c = c * static_cast<double>(n - 1 - k) / static_cast<double>(k + 1);
        }
    }
    ShapleyTable out;
    out.universe = universe;
    for (int i : universe.indices()) {
        const InputSubset me = InputSubset::single(i);
        double s = 0.0;
        for (auto a : subsets_of(universe - me)) {
            s += inv_binom[static_cast<std::size_t>(a.size())] * (table.at(a | me) - table.at(a));
        }
        out.effects[i + 1] = s / static_cast<double>(n);
    }
    return out;
}

/// beta_{i|A} minus the sum of ANOVA effects S_{U u {i}} over U subset-of A.
/// `index` is 0-based. Zero (up to noise) under input independence.
inline double conditional_anova_check(const IndexTable& table, const AnovaTable& anova, int index, InputSubset a) {
    const InputSubset me = InputSubset::single(index);
    if (a.contains(index)) throw ConfigError("conditioning set must not contain the input itself");
    double sum = 0.0;
    for (auto u : subsets_of(a)) {
        auto it = anova.find(u | me);
        if (it == anova.end()) throw ConfigError("ANOVA table has no entry for subset " + (u | me).to_string());
        sum += it->second;
    }
    return conditional_index(table, me, a) - sum;
}

}  // namespace kgsa

#pragma once

#include <algorithm>
#include <cmath>
#include <unordered_map>
#include <unordered_set>

#include "varbench/attacks.hpp"
#include "varbench/feature_store.hpp"
#include "varbench/recsys.hpp"

// Evaluation measures: category push (CHR@K, nCDCG@K), leave-one-out accuracy
// (Recall@K, nDCG@K), beyond-accuracy (ICov@K, Gini@K, EFD@K) and attack-level
// scores (SR, FL). The per-user measures are averaged across users.

namespace varbench {

/// Items whose clean images the classifier assigns to class c.
struct CategorySet {
    int class_id = -1;
    std::unordered_set<Id> items;

    bool contains(Id item) const { return items.count(item) != 0; }
};

struct RelevanceConfig {
    double tau = 1.0;    // relevance threshold
    double s_max = 1.0;  // maximum possible score

    /// Binary implicit feedback collapses every category item to this value.
    double ideal_relevance() const { return std::pow(2.0, s_max - tau + 1.0) - 1.0; }

    void validate() const {
        if (s_max < tau) throw std::invalid_argument("relevance config requires s_max >= tau");
    }
};

struct MetricSummary {
    std::vector<double> per_user;
    double mean = 0.0;
};

namespace detail_metrics {

inline double finalize(MetricSummary& m) {
    double acc = 0.0;
    for (double v : m.per_user) acc += v;
    m.mean = m.per_user.empty() ? 0.0 : acc / m.per_user.size();
    return m.mean;
}

}  // namespace detail_metrics

/// Fraction of the top-K slots taken by category items; slots past the end of
/// a short list count as misses.
inline MetricSummary chr_at_k(const std::vector<RankingList>& lists, const CategorySet& cat, int k) {
    if (lists.empty()) throw std::invalid_argument("chr_at_k: no ranking lists");
    if (k < 1) throw std::invalid_argument("chr_at_k: K must be >= 1");
    MetricSummary out;
    out.per_user.reserve(lists.size());
    for (const auto& l : lists) {
        int hits = 0;
        const std::size_t top = std::min<std::size_t>(l.items.size(), static_cast<std::size_t>(k));
        for (std::size_t r = 0; r < top; ++r)
            if (cat.contains(l.items[r])) ++hits;
        out.per_user.push_back(static_cast<double>(hits) / k);
    }
    detail_metrics::finalize(out);
    return out;
}

/// Rank-discounted category gain normalized by the gain of an ideal list that
/// carries category items at maximal relevance in its first min(K, |I_c|)
/// slots.
inline MetricSummary ncdcg_at_k(const std::vector<RankingList>& lists, const CategorySet& cat,
                                int k, const RelevanceConfig& rc = {}) {
    if (lists.empty()) throw std::invalid_argument("ncdcg_at_k: no ranking lists");
    if (k < 1) throw std::invalid_argument("ncdcg_at_k: K must be >= 1");
    rc.validate();
    if (cat.items.empty()) throw std::invalid_argument("ncdcg_at_k: empty category");
    const double rel = rc.ideal_relevance();
    const int ideal_len = std::min<int>(k, static_cast<int>(cat.items.size()));
    double icdcg = 0.0;
    for (int r = 1; r <= ideal_len; ++r) icdcg += rel / std::log2(1.0 + r);
    if (icdcg <= 0.0) throw std::invalid_argument("ncdcg_at_k: ideal gain is zero");
    MetricSummary out;
    out.per_user.reserve(lists.size());
    for (const auto& l : lists) {
        double cdcg = 0.0;
        const std::size_t top = std::min<std::size_t>(l.items.size(), static_cast<std::size_t>(k));
        for (std::size_t r = 0; r < top; ++r)
            if (cat.contains(l.items[r])) cdcg += rel / std::log2(2.0 + r);
        out.per_user.push_back(cdcg / icdcg);
    }
    detail_metrics::finalize(out);
    return out;
}

struct AccuracyResult {
    double recall = 0.0;  // hit rate of the held-out item in the top-K
    double ndcg = 0.0;    // 1/log2(1+rank) when hit, single-relevant-item form
};

inline AccuracyResult accuracy_metrics(const std::vector<RankingList>& lists,
                                       const SplitDataset& split, int k) {
    if (k < 1) throw std::invalid_argument("accuracy_metrics: K must be >= 1");
    std::unordered_map<Id, const RankingList*> by_user;
    for (const auto& l : lists) by_user[l.user] = &l;
    AccuracyResult res;
    std::size_t users = 0;
    for (const auto& t : split.test) {
        auto it = by_user.find(t.user);
        if (it == by_user.end())
            throw std::invalid_argument("accuracy_metrics: user " + std::to_string(t.user) +
                                        " missing from the ranking lists");
        const auto& items = it->second->items;
        const std::size_t top = std::min<std::size_t>(items.size(), static_cast<std::size_t>(k));
        ++users;
        for (std::size_t r = 0; r < top; ++r)
            if (items[r] == t.item) {
                res.recall += 1.0;
                res.ndcg += 1.0 / std::log2(2.0 + r);
                break;
            }
    }
    if (users == 0) throw std::invalid_argument("accuracy_metrics: empty test set");
    res.recall /= users;
    res.ndcg /= users;
    return res;
}

struct BeyondAccuracyResult {
    double icov = 0.0;  // distinct items recommended across all lists
    double gini = 0.0;  // concentration of recommendation frequencies over the catalog
    double efd = 0.0;   // mean -log2 popularity of recommended items
};

/// Standard formulations: Gini over the catalog-wide top-K frequency
/// distribution (0 = uniform); EFD from train popularity with a one-interaction
/// floor for never-interacted items.
inline BeyondAccuracyResult beyond_accuracy(const std::vector<RankingList>& lists,
                                            const SplitDataset& split, int k) {
    if (lists.empty()) throw std::invalid_argument("beyond_accuracy: no ranking lists");
    if (k < 1) throw std::invalid_argument("beyond_accuracy: K must be >= 1");
    const auto& catalog = split.train.items();
    std::unordered_map<Id, double> freq;
    for (const auto& l : lists) {
        const std::size_t top = std::min<std::size_t>(l.items.size(), static_cast<std::size_t>(k));
        for (std::size_t r = 0; r < top; ++r) ++freq[l.items[r]];
    }
    BeyondAccuracyResult res;
    res.icov = static_cast<double>(freq.size());

    std::vector<double> f;
    f.reserve(catalog.size());
    double total = 0.0;
    for (Id i : catalog) {
        auto it = freq.find(i);
        const double v = it == freq.end() ? 0.0 : it->second;
        f.push_back(v);
        total += v;
    }
    std::sort(f.begin(), f.end());
    if (total > 0.0 && f.size() > 1) {
        const double n = static_cast<double>(f.size());
        double acc = 0.0;
        for (std::size_t i = 0; i < f.size(); ++i)
            acc += (2.0 * (static_cast<double>(i) + 1.0) - n - 1.0) * f[i];
        res.gini = acc / (n * total);
    }

    std::unordered_map<Id, double> pop;
    double pop_total = 0.0;
    for (const auto& s : split.train.interactions()) ++pop[s.item];
    for (Id i : catalog) {
        auto& c = pop[i];
        c = std::max(c, 1.0);  // popularity floor
        pop_total += c;
    }
    double efd_sum = 0.0;
    for (const auto& l : lists) {
        double user_efd = 0.0;
        const std::size_t top = std::min<std::size_t>(l.items.size(), static_cast<std::size_t>(k));
        for (std::size_t r = 0; r < top; ++r) {
            auto it = pop.find(l.items[r]);
            const double p = (it == pop.end() ? 1.0 : it->second) / pop_total;
            user_efd += -std::log2(p);
        }
        efd_sum += user_efd / k;
    }
    res.efd = efd_sum / lists.size();
    return res;
}

/// Fraction of attacked images the classifier now assigns to the target class.
inline double success_rate(const std::vector<AttackedImage>& attacked, int target) {
    if (attacked.empty()) throw std::invalid_argument("success_rate: empty attack set");
    std::size_t hits = 0;
    for (const auto& a : attacked)
        if (a.achieved_class == target) ++hits;
    return static_cast<double>(hits) / attacked.size();
}

/// Mean over items of the per-dimension squared feature change.
inline double feature_loss(const FeatureStore& before, const FeatureStore& after,
                           const std::vector<Id>& items) {
    if (before.gamma() != after.gamma())
        throw std::invalid_argument("feature_loss: stores have different gamma");
    if (items.empty()) throw std::invalid_argument("feature_loss: no items");
    const int gamma = before.gamma();
    double acc = 0.0;
    for (Id i : items) {
        const auto& a = before.get(i);
        const auto& b = after.get(i);
        double d2 = 0.0;
        for (int g = 0; g < gamma; ++g) {
            const double d = a[g] - b[g];
            d2 += d * d;
        }
        acc += d2 / gamma;
    }
    return acc / items.size();
}

}  // namespace varbench

#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace varbench {

using Id = std::int64_t;

struct Interaction {
    Id user = 0;
    Id item = 0;
    std::int64_t timestamp = 0;  // seconds

    friend bool operator==(const Interaction&, const Interaction&) = default;
};

/// Implicit 0/1 feedback triples plus the user and item catalogs. Catalogs may
/// contain entities without interactions (e.g. items nobody bought yet); every
/// interaction must reference catalog entries and each (user, item) pair
/// appears at most once.
class InteractionDataset {
public:
    InteractionDataset() = default;

    /// Catalogs derived from the interactions themselves.
    static InteractionDataset from_interactions(std::vector<Interaction> interactions) {
        std::set<Id> users, items;
        for (const auto& s : interactions) {
            users.insert(s.user);
            items.insert(s.item);
        }
        return InteractionDataset(std::vector<Id>(users.begin(), users.end()),
                                  std::vector<Id>(items.begin(), items.end()),
                                  std::move(interactions));
    }

    InteractionDataset(std::vector<Id> users, std::vector<Id> items,
                       std::vector<Interaction> interactions)
        : users_(std::move(users)), items_(std::move(items)), interactions_(std::move(interactions)) {
        std::sort(users_.begin(), users_.end());
        users_.erase(std::unique(users_.begin(), users_.end()), users_.end());
        std::sort(items_.begin(), items_.end());
        items_.erase(std::unique(items_.begin(), items_.end()), items_.end());
        std::sort(interactions_.begin(), interactions_.end(), [](const auto& a, const auto& b) {
            return std::tie(a.user, a.item, a.timestamp) < std::tie(b.user, b.item, b.timestamp);
        });
        std::unordered_set<Id> useen(users_.begin(), users_.end());
        std::unordered_set<Id> iseen(items_.begin(), items_.end());
        for (std::size_t k = 0; k < interactions_.size(); ++k) {
            const auto& s = interactions_[k];
            if (!useen.count(s.user) || !iseen.count(s.item))
                throw std::invalid_argument("interaction references unknown user or item");
            if (k > 0 && interactions_[k - 1].user == s.user && interactions_[k - 1].item == s.item)
                throw std::invalid_argument("duplicate (user,item) interaction for user " +
                                            std::to_string(s.user));
        }
    }

    const std::vector<Id>& users() const { return users_; }
    const std::vector<Id>& items() const { return items_; }
    const std::vector<Interaction>& interactions() const { return interactions_; }

    std::size_t num_users() const { return users_.size(); }
    std::size_t num_items() const { return items_.size(); }
    std::size_t num_interactions() const { return interactions_.size(); }

    double density() const {
        if (users_.empty() || items_.empty()) return 0.0;
        return static_cast<double>(interactions_.size()) /
               (static_cast<double>(users_.size()) * static_cast<double>(items_.size()));
    }

    bool empty() const { return interactions_.empty(); }

private:
    std::vector<Id> users_, items_;
    std::vector<Interaction> interactions_;
};

/// Reads `user_id,item_id,timestamp` rows (header required). Repeated ratings
/// of the same item collapse to one implicit interaction keeping the largest
/// timestamp.
inline InteractionDataset load_interactions(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open interactions file " + path);
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("interactions file is empty: " + path);
    std::map<std::pair<Id, Id>, std::int64_t> latest;
    int row = 1;
    while (std::getline(is, line)) {
        ++row;
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string u, i, t;
        if (!std::getline(ss, u, ',') || !std::getline(ss, i, ',') || !std::getline(ss, t)) {
            throw std::runtime_error("malformed interaction row " + std::to_string(row) + " in " + path);
        }
        try {
            const Id user = std::stoll(u);
            const Id item = std::stoll(i);
            const std::int64_t ts = std::stoll(t);
            auto [it, inserted] = latest.try_emplace({user, item}, ts);
            if (!inserted) it->second = std::max(it->second, ts);
        } catch (const std::exception&) {
            throw std::runtime_error("malformed interaction row " + std::to_string(row) + " in " + path);
        }
    }
    if (latest.empty()) throw std::runtime_error("interactions file has no data rows: " + path);
    std::vector<Interaction> out;
    out.reserve(latest.size());
    for (const auto& [key, ts] : latest) out.push_back({key.first, key.second, ts});
    return InteractionDataset::from_interactions(std::move(out));
}

inline void save_interactions(const std::string& path, const InteractionDataset& ds) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    os << "user_id,item_id,timestamp\n";
    for (const auto& s : ds.interactions()) os << s.user << ',' << s.item << ',' << s.timestamp << '\n';
    if (!os) throw std::runtime_error("write failed for " + path);
}

/// Iteratively drops users and items with fewer than k interactions until a
/// fixpoint. Entities without interactions are dropped for any k >= 1. The
/// result may be empty (a warning is printed, not an error).
inline InteractionDataset kcore_filter(const InteractionDataset& ds, int k) {
    if (k < 1) throw std::invalid_argument("kcore_filter: k must be >= 1");
    std::vector<Interaction> kept(ds.interactions());
    bool changed = true;
    while (changed && !kept.empty()) {
        std::unordered_map<Id, int> udeg, ideg;
        for (const auto& s : kept) {
            ++udeg[s.user];
            ++ideg[s.item];
        }
        std::vector<Interaction> next;
        next.reserve(kept.size());
        for (const auto& s : kept)
            if (udeg[s.user] >= k && ideg[s.item] >= k) next.push_back(s);
        changed = next.size() != kept.size();
        kept = std::move(next);
    }
    if (kept.empty())
        std::cerr << "warning: " << k << "-core filtering removed every interaction\n";
    return InteractionDataset::from_interactions(std::move(kept));
}

struct SplitDataset {
    InteractionDataset train;
    std::vector<Interaction> test;  // exactly one per user

    const Interaction* test_for(Id user) const {
        for (const auto& s : test)
            if (s.user == user) return &s;
        return nullptr;
    }
};

/// Per user, the latest interaction goes to test (timestamp ties broken by the
/// larger item id); the rest stay in train. Users with a single interaction
/// are rejected.
inline SplitDataset leave_one_out(const InteractionDataset& ds) {
    std::unordered_map<Id, Interaction> picks;
    std::unordered_map<Id, int> counts;
    for (const auto& s : ds.interactions()) {
        ++counts[s.user];
        auto [it, inserted] = picks.try_emplace(s.user, s);
        if (!inserted) {
            const auto& cur = it->second;
            if (std::tie(s.timestamp, s.item) > std::tie(cur.timestamp, cur.item)) it->second = s;
        }
    }
    for (const auto& [user, n] : counts)
        if (n < 2)
            throw std::invalid_argument("leave_one_out: user " + std::to_string(user) +
                                        " has only one interaction");
    std::vector<Interaction> train, test;
    train.reserve(ds.num_interactions() - picks.size());
    for (const auto& s : ds.interactions()) {
        const auto& pick = picks.at(s.user);
        if (s.item == pick.item && s.timestamp == pick.timestamp) continue;
        train.push_back(s);
    }
    test.reserve(picks.size());
    for (Id u : ds.users())
        if (auto it = picks.find(u); it != picks.end()) test.push_back(it->second);
    // keep the full catalogs: test items must stay scoreable
    return SplitDataset{InteractionDataset(ds.users(), ds.items(), std::move(train)), std::move(test)};
}

}  // namespace varbench

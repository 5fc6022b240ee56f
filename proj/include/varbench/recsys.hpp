#pragma once

#include <algorithm>
#include <cmath>
#include <iostream>
#include <random>
#include <unordered_map>

#include "varbench/feature_store.hpp"
#include "varbench/interactions.hpp"

// Visual-feature-aware recommenders trained with the BPR pairwise objective:
// for sampled triples (u, i+, j-) minimize -ln sigmoid(s_ui - s_uj) plus L2
// regularization. Gradients are the usual closed forms, applied per triple.

namespace varbench {

struct BprConfig {
    int epochs = 100;
    double lr = 0.05;
    double reg = 1e-4;
    int latent_dim = 16;  // h
    int visual_dim = 16;  // upsilon
    std::uint64_t seed = 1;
};

struct AmrConfig {
    BprConfig bpr;
    double eps_adv = 0.5;     // L2 radius of the feature perturbation
    double lambda_adv = 1.0;  // weight of the adversarial loss term
};

struct RankingList {
    Id user = 0;
    std::vector<Id> items;        // descending score, ties by ascending id
    std::vector<double> scores;   // aligned with items
    bool short_list = false;      // fewer candidates than requested
};

namespace detail_rec {

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double dot(const std::vector<double>& a, std::size_t ao, const std::vector<double>& b,
                  std::size_t bo, int n) {
    double acc = 0.0;
    for (int k = 0; k < n; ++k) acc += a[ao + k] * b[bo + k];
    return acc;
}

}  // namespace detail_rec

/// Index maps, the dense feature matrix, and per-user interaction sets shared
/// by every recommender.
class RecommenderBase {
public:
    RecommenderBase(const SplitDataset& split, const FeatureStore& store)
        : users_(split.train.users()), items_(split.train.items()), gamma_(store.gamma()) {
        if (split.train.empty()) throw std::invalid_argument("recommender: empty training split");
        if (!store.covers(items_))
            throw std::invalid_argument("recommender: feature store does not cover the catalog");
        for (std::size_t k = 0; k < users_.size(); ++k) user_index_[users_[k]] = k;
        for (std::size_t k = 0; k < items_.size(); ++k) item_index_[items_[k]] = k;
        phi_.resize(items_.size() * static_cast<std::size_t>(gamma_));
        for (std::size_t k = 0; k < items_.size(); ++k) {
            const auto& v = store.get(items_[k]);
            std::copy(v.begin(), v.end(), phi_.begin() + k * gamma_);
        }
        interacted_.resize(users_.size());
        for (const auto& s : split.train.interactions())
            interacted_[user_index_.at(s.user)].insert(item_index_.at(s.item));
    }
    virtual ~RecommenderBase() = default;

    std::size_t num_users() const { return users_.size(); }
    std::size_t num_items() const { return items_.size(); }
    int gamma() const { return gamma_; }
    const std::vector<Id>& user_ids() const { return users_; }
    const std::vector<Id>& item_ids() const { return items_; }
    std::size_t user_index(Id u) const { return user_index_.at(u); }
    std::size_t item_index(Id i) const { return item_index_.at(i); }
    bool has_item(Id i) const { return item_index_.count(i) != 0; }
    const std::unordered_set<std::size_t>& interacted(std::size_t uidx) const {
        return interacted_[uidx];
    }
    const double* item_features(std::size_t iidx) const { return &phi_[iidx * gamma_]; }

    virtual double score(std::size_t uidx, std::size_t iidx) const = 0;

    /// Top-K over items the user did not interact with in train. Deterministic:
    /// score descending, item id ascending on ties.
    RankingList recommend_topk(Id user, int k) const {
        if (k < 1) throw std::invalid_argument("recommend_topk: K must be >= 1");
        const std::size_t uidx = user_index(user);
        const auto& seen = interacted_[uidx];
        std::vector<std::pair<double, Id>> cand;
        cand.reserve(items_.size());
        for (std::size_t i = 0; i < items_.size(); ++i)
            if (!seen.count(i)) cand.emplace_back(score(uidx, i), items_[i]);
        const auto cmp = [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        };
        const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(k), cand.size());
        std::partial_sort(cand.begin(), cand.begin() + take, cand.end(), cmp);
        RankingList out;
        out.user = user;
        out.short_list = take < static_cast<std::size_t>(k);
        for (std::size_t r = 0; r < take; ++r) {
            out.items.push_back(cand[r].second);
            out.scores.push_back(cand[r].first);
        }
        return out;
    }

    std::vector<RankingList> recommend_all(int k) const {
        std::vector<RankingList> lists;
        lists.reserve(users_.size());
        for (Id u : users_) lists.push_back(recommend_topk(u, k));
        return lists;
    }

protected:
    std::vector<Id> users_, items_;
    std::unordered_map<Id, std::size_t> user_index_, item_index_;
    int gamma_ = 0;
    std::vector<double> phi_;  // items x gamma, dense
    std::vector<std::unordered_set<std::size_t>> interacted_;
};

/// Matrix factorization with the item image features projected into the latent
/// space: s_ui = b0 + b_u + b_i + p_u . (q_i + W phi_i).
class FmModel : public RecommenderBase {
public:
    FmModel(const SplitDataset& split, const FeatureStore& store, const BprConfig& cfg)
        : RecommenderBase(split, store), h_(cfg.latent_dim) {
        std::mt19937_64 rng(cfg.seed);
        std::normal_distribution<double> init(0.0, 0.01);
        p_.resize(num_users() * h_);
        q_.resize(num_items() * h_);
        w_.resize(static_cast<std::size_t>(h_) * gamma_);
        for (auto& v : p_) v = init(rng);
        for (auto& v : q_) v = init(rng);
        for (auto& v : w_) v = init(rng);
        bu_.assign(num_users(), 0.0);
        bi_.assign(num_items(), 0.0);
    }

    double score(std::size_t u, std::size_t i) const override {
        const double* phi = item_features(i);
        double acc = b0_ + bu_[u] + bi_[i];
        for (int k = 0; k < h_; ++k) {
            double proj = 0.0;
            for (int g = 0; g < gamma_; ++g) proj += w_[k * gamma_ + g] * phi[g];
            acc += p_[u * h_ + k] * (q_[i * h_ + k] + proj);
        }
        return acc;
    }

private:
    friend class BprTrainer;
    int h_;
    double b0_ = 0.0;
    std::vector<double> p_, q_, w_, bu_, bi_;
};

/// s_ui = p_u . q_i + theta_u . (E phi_i) + beta_ui, where beta_ui is the
/// overall offset plus user, item and global visual biases.
class VbprModel : public RecommenderBase {
public:
    VbprModel(const SplitDataset& split, const FeatureStore& store, const BprConfig& cfg)
        : RecommenderBase(split, store), h_(cfg.latent_dim), ups_(cfg.visual_dim) {
        std::mt19937_64 rng(cfg.seed);
        std::normal_distribution<double> init(0.0, 0.01);
        p_.resize(num_users() * h_);
        q_.resize(num_items() * h_);
        theta_.resize(num_users() * ups_);
        e_.resize(static_cast<std::size_t>(ups_) * gamma_);
        for (auto& v : p_) v = init(rng);
        for (auto& v : q_) v = init(rng);
        for (auto& v : theta_) v = init(rng);
        for (auto& v : e_) v = init(rng);
        bu_.assign(num_users(), 0.0);
        bi_.assign(num_items(), 0.0);
        vb_.assign(static_cast<std::size_t>(gamma_), 0.0);
    }

    double score(std::size_t u, std::size_t i) const override {
        return score_with_features(u, i, item_features(i));
    }

    /// Exact evaluation of the score equation against an arbitrary phi.
    double score_with_features(std::size_t u, std::size_t i, const double* phi) const {
        double acc = offset_ + bu_[u] + bi_[i];
        for (int g = 0; g < gamma_; ++g) acc += vb_[g] * phi[g];
        acc += detail_rec::dot(p_, u * h_, q_, i * h_, h_);
        for (int k = 0; k < ups_; ++k) {
            double proj = 0.0;
            for (int g = 0; g < gamma_; ++g) proj += e_[k * gamma_ + g] * phi[g];
            acc += theta_[u * ups_ + k] * proj;
        }
        return acc;
    }

    int latent_dim() const { return h_; }
    int visual_dim() const { return ups_; }

protected:
    friend class BprTrainer;
    int h_, ups_;
    double offset_ = 0.0;
    std::vector<double> p_, q_, theta_, e_, bu_, bi_, vb_;
};

/// Same parameterization and score as VBPR; training adds the adversarial
/// regularization term on fast-gradient feature perturbations.
class AmrModel final : public VbprModel {
public:
    AmrModel(const SplitDataset& split, const FeatureStore& store, const AmrConfig& cfg)
        : VbprModel(split, store, cfg.bpr), adv_(cfg) {}
    const AmrConfig& adversarial_config() const { return adv_; }

private:
    AmrConfig adv_;
};

class BprTrainer {
public:
    struct Triple {
        std::size_t user, pos, neg;
    };

    /// One BPR epoch sweep: every train pair once (shuffled), one uniformly
    /// sampled non-interacted negative each. Users interacting with the whole
    /// catalog are skipped with a warning.
    template <class UpdateFn>
    static void sweep(RecommenderBase& model, const SplitDataset& split, std::mt19937_64& rng,
                      UpdateFn&& update) {
        std::vector<std::pair<std::size_t, std::size_t>> pairs;
        pairs.reserve(split.train.num_interactions());
        for (const auto& s : split.train.interactions())
            pairs.emplace_back(model.user_index(s.user), model.item_index(s.item));
        std::shuffle(pairs.begin(), pairs.end(), rng);
        std::uniform_int_distribution<std::size_t> item_dist(0, model.num_items() - 1);
        for (const auto& [u, i] : pairs) {
            const auto& seen = model.interacted(u);
            if (seen.size() >= model.num_items()) {
                std::cerr << "warning: user " << model.user_ids()[u]
                          << " interacted with every item; skipped in BPR sampling\n";
                continue;
            }
            std::size_t j = item_dist(rng);
            while (seen.count(j)) j = item_dist(rng);
            update(Triple{u, i, j});
        }
    }

    /// One SGD step on -ln sigmoid(s_ui - s_uj) + L2 for a single triple.
    static void fm_triple_update(FmModel& m, const Triple& tr, double lr, double reg) {
        const double* phi_i = m.item_features(tr.pos);
        const double* phi_j = m.item_features(tr.neg);
        const double d = m.score(tr.user, tr.pos) - m.score(tr.user, tr.neg);
        const double c = detail_rec::sigmoid(-d);  // dL/dd = -c
        const auto h = static_cast<std::size_t>(m.h_);
        for (std::size_t k = 0; k < h; ++k) {
            double proj_i = 0.0, proj_j = 0.0;
            for (int g = 0; g < m.gamma_; ++g) {
                proj_i += m.w_[k * m.gamma_ + g] * phi_i[g];
                proj_j += m.w_[k * m.gamma_ + g] * phi_j[g];
            }
            const double pu = m.p_[tr.user * h + k];
            const double vi = m.q_[tr.pos * h + k] + proj_i;
            const double vj = m.q_[tr.neg * h + k] + proj_j;
            m.p_[tr.user * h + k] += lr * (c * (vi - vj) - reg * pu);
            m.q_[tr.pos * h + k] += lr * (c * pu - reg * m.q_[tr.pos * h + k]);
            m.q_[tr.neg * h + k] += lr * (-c * pu - reg * m.q_[tr.neg * h + k]);
            for (int g = 0; g < m.gamma_; ++g)
                m.w_[k * m.gamma_ + g] +=
                    lr * (c * pu * (phi_i[g] - phi_j[g]) - reg * m.w_[k * m.gamma_ + g]);
        }
        m.bi_[tr.pos] += lr * (c - reg * m.bi_[tr.pos]);
        m.bi_[tr.neg] += lr * (-c - reg * m.bi_[tr.neg]);
    }

    /// One SGD step on the clean BPR loss for a single triple.
    static void vbpr_triple_update(VbprModel& m, const Triple& tr, double lr, double reg) {
        const double d = m.score(tr.user, tr.pos) - m.score(tr.user, tr.neg);
        apply_vbpr_update(m, tr, m.item_features(tr.pos), m.item_features(tr.neg),
                          detail_rec::sigmoid(-d), lr, reg, 1.0);
    }

    static void train_fm(FmModel& m, const SplitDataset& split, const BprConfig& cfg) {
        std::mt19937_64 rng(detailed_seed(cfg.seed));
        for (int epoch = 0; epoch < cfg.epochs; ++epoch)
            sweep(m, split, rng, [&](const Triple& tr) { fm_triple_update(m, tr, cfg.lr, cfg.reg); });
    }

    /// When amr is non-null, each step adds lambda_adv times the BPR loss
    /// evaluated on features perturbed by the normalized gradient of the loss
    /// with respect to the features (radius eps_adv).
    static void train_vbpr(VbprModel& m, const SplitDataset& split, const BprConfig& cfg,
                           const AmrConfig* amr = nullptr) {
        std::mt19937_64 rng(detailed_seed(cfg.seed));
        const double lr = cfg.lr, reg = cfg.reg;
        const auto h = static_cast<std::size_t>(m.h_);
        const auto ups = static_cast<std::size_t>(m.ups_);
        const bool adversarial = amr && amr->lambda_adv != 0.0;
        std::vector<double> phi_i_adv, phi_j_adv, gdir;
        for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
            sweep(m, split, rng, [&](const Triple& tr) {
                const double* phi_i = m.item_features(tr.pos);
                const double* phi_j = m.item_features(tr.neg);

                // clean BPR gradients
                const double d = m.score(tr.user, tr.pos) - m.score(tr.user, tr.neg);
                const double c = detail_rec::sigmoid(-d);
                apply_vbpr_update(m, tr, phi_i, phi_j, c, lr, reg, 1.0);

                if (adversarial) {
                    // d(loss)/d(phi_i) = -c * (E^T theta_u + vb); phi_j gets +c * same vector
                    gdir.assign(static_cast<std::size_t>(m.gamma_), 0.0);
                    for (int g = 0; g < m.gamma_; ++g) {
                        double acc = m.vb_[g];
                        for (std::size_t k = 0; k < ups; ++k)
                            acc += m.e_[k * m.gamma_ + g] * m.theta_[tr.user * ups + k];
                        gdir[g] = acc;
                    }
                    double norm = 0.0;
                    for (double v : gdir) norm += v * v;
                    norm = std::sqrt(norm);
                    phi_i_adv.assign(phi_i, phi_i + m.gamma_);
                    phi_j_adv.assign(phi_j, phi_j + m.gamma_);
                    if (norm > 0.0 && c > 0.0) {
                        const double r = amr->eps_adv / norm;
                        // perturbations maximize the loss: -eps*c*dir for i+, +eps*c*dir for j-
                        for (int g = 0; g < m.gamma_; ++g) {
                            phi_i_adv[g] -= r * gdir[g];
                            phi_j_adv[g] += r * gdir[g];
                        }
                    }
                    const double d_adv =
                        m.score_with_features(tr.user, tr.pos, phi_i_adv.data()) -
                        m.score_with_features(tr.user, tr.neg, phi_j_adv.data());
                    const double c_adv = detail_rec::sigmoid(-d_adv);
                    // regularization already applied by the clean update
                    apply_vbpr_update(m, tr, phi_i_adv.data(), phi_j_adv.data(), c_adv, lr, 0.0,
                                      amr->lambda_adv);
                }
            });
        }
    }

    static void train_amr(AmrModel& m, const SplitDataset& split, const AmrConfig& cfg) {
        train_vbpr(m, split, cfg.bpr, &cfg);
    }

private:
    static std::uint64_t detailed_seed(std::uint64_t seed) {
        std::uint64_t x = seed + 0x9e3779b97f4a7c15ull;
        x ^= x >> 30; x *= 0xbf58476d1ce4e5b9ull;
        x ^= x >> 27; x *= 0x94d049bb133111ebull;
        return x ^ (x >> 31);
    }

    static void apply_vbpr_update(VbprModel& m, const Triple& tr, const double* phi_i,
                                  const double* phi_j, double c, double lr, double reg,
                                  double weight) {
        const auto h = static_cast<std::size_t>(m.h_);
        const auto ups = static_cast<std::size_t>(m.ups_);
        const double cw = c * weight;
        for (std::size_t k = 0; k < h; ++k) {
            const double pu = m.p_[tr.user * h + k];
            const double qi = m.q_[tr.pos * h + k];
            const double qj = m.q_[tr.neg * h + k];
            m.p_[tr.user * h + k] += lr * (cw * (qi - qj) - reg * pu);
            m.q_[tr.pos * h + k] += lr * (cw * pu - reg * qi);
            m.q_[tr.neg * h + k] += lr * (-cw * pu - reg * qj);
        }
        for (std::size_t k = 0; k < ups; ++k) {
            double ei = 0.0, ej = 0.0;
            for (int g = 0; g < m.gamma_; ++g) {
                ei += m.e_[k * m.gamma_ + g] * phi_i[g];
                ej += m.e_[k * m.gamma_ + g] * phi_j[g];
            }
            const double th = m.theta_[tr.user * ups + k];
            m.theta_[tr.user * ups + k] += lr * (cw * (ei - ej) - reg * th);
            for (int g = 0; g < m.gamma_; ++g)
                m.e_[k * m.gamma_ + g] +=
                    lr * (cw * th * (phi_i[g] - phi_j[g]) - reg * m.e_[k * m.gamma_ + g]);
        }
        for (int g = 0; g < m.gamma_; ++g)
            m.vb_[g] += lr * (cw * (phi_i[g] - phi_j[g]) - reg * m.vb_[g]);
        m.bi_[tr.pos] += lr * (cw - reg * m.bi_[tr.pos]);
        m.bi_[tr.neg] += lr * (-cw - reg * m.bi_[tr.neg]);
    }
};

/// Mean over users of the fraction of non-interacted items ranked below the
/// held-out test item (0.5 = random).
inline double pairwise_auc(const RecommenderBase& model, const SplitDataset& split) {
    double total = 0.0;
    std::size_t counted = 0;
    for (const auto& t : split.test) {
        if (!model.has_item(t.item)) continue;
        const auto u = model.user_index(t.user);
        const auto pos = model.item_index(t.item);
        const auto& seen = model.interacted(u);
        const double s_pos = model.score(u, pos);
        std::size_t wins = 0, total_items = 0;
        for (std::size_t i = 0; i < model.num_items(); ++i) {
            if (i == pos || seen.count(i)) continue;
            ++total_items;
            if (s_pos > model.score(u, i)) ++wins;
        }
        if (total_items == 0) continue;
        total += static_cast<double>(wins) / total_items;
        ++counted;
    }
    return counted ? total / counted : 0.0;
}

inline void save_rankings(const std::string& path, const std::vector<RankingList>& lists) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    os << "user_id,rank,item_id,score\n";
    char buf[64];
    for (const auto& l : lists)
        for (std::size_t r = 0; r < l.items.size(); ++r) {
            std::snprintf(buf, sizeof buf, "%.12g", l.scores[r]);
            os << l.user << ',' << (r + 1) << ',' << l.items[r] << ',' << buf << '\n';
        }
    if (!os) throw std::runtime_error("write failed for " + path);
}

inline std::vector<RankingList> load_rankings(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open rankings file " + path);
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("rankings file is empty: " + path);
    std::vector<RankingList> lists;
    std::unordered_map<Id, std::size_t> index;
    int row = 1;
    while (std::getline(is, line)) {
        ++row;
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string u, r, i, s;
        if (!std::getline(ss, u, ',') || !std::getline(ss, r, ',') || !std::getline(ss, i, ',') ||
            !std::getline(ss, s))
            throw std::runtime_error("malformed ranking row " + std::to_string(row) + " in " + path);
        const Id user = std::stoll(u);
        auto [it, inserted] = index.try_emplace(user, lists.size());
        if (inserted) {
            lists.emplace_back();
            lists.back().user = user;
        }
        lists[it->second].items.push_back(std::stoll(i));
        lists[it->second].scores.push_back(std::stod(s));
    }
    return lists;
}

}  // namespace varbench

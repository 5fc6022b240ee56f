#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "varbench/checkpoint.hpp"
#include "varbench/interactions.hpp"

// Per-item feature vectors keyed by item id.
//
// File layout (little endian):
//   u32 magic "VBFS" (0x53464256)   u32 version (=1)   u32 gamma   u64 item count
//   per item: i64 item id, gamma * f64

namespace varbench {

inline constexpr std::uint32_t kFeatureStoreMagic = 0x53464256u;
inline constexpr std::uint32_t kFeatureStoreVersion = 1;

class FeatureStore {
public:
    FeatureStore() = default;
    explicit FeatureStore(int gamma) : gamma_(gamma) {
        if (gamma < 1) throw std::invalid_argument("FeatureStore: gamma must be positive");
    }

    int gamma() const { return gamma_; }
    std::size_t size() const { return features_.size(); }

    void put(Id item, std::vector<double> phi) {
        if (static_cast<int>(phi.size()) != gamma_)
            throw std::invalid_argument("FeatureStore: vector for item " + std::to_string(item) +
                                        " has length " + std::to_string(phi.size()) +
                                        ", expected gamma = " + std::to_string(gamma_));
        features_[item] = std::move(phi);
    }

    bool contains(Id item) const { return features_.count(item) != 0; }

    const std::vector<double>& get(Id item) const {
        auto it = features_.find(item);
        if (it == features_.end())
            throw std::out_of_range("FeatureStore: no features for item " + std::to_string(item));
        return it->second;
    }

    const std::map<Id, std::vector<double>>& items() const { return features_; }

    bool covers(const std::vector<Id>& item_ids) const {
        for (Id i : item_ids)
            if (!contains(i)) return false;
        return true;
    }

    void save(const std::string& path) const {
        std::ofstream os(path, std::ios::binary);
        if (!os) throw std::runtime_error("cannot open " + path + " for writing");
        detail::write_pod(os, kFeatureStoreMagic);
        detail::write_pod(os, kFeatureStoreVersion);
        detail::write_pod(os, static_cast<std::uint32_t>(gamma_));
        detail::write_pod(os, static_cast<std::uint64_t>(features_.size()));
        for (const auto& [id, phi] : features_) {
            detail::write_pod(os, static_cast<std::int64_t>(id));
            os.write(reinterpret_cast<const char*>(phi.data()),
                     static_cast<std::streamsize>(phi.size() * sizeof(double)));
        }
        if (!os) throw std::runtime_error("write failed for " + path);
    }

    static FeatureStore load(const std::string& path) {
        std::ifstream is(path, std::ios::binary);
        if (!is) throw std::runtime_error("cannot open feature store " + path);
        if (detail::read_pod<std::uint32_t>(is) != kFeatureStoreMagic)
            throw std::runtime_error("feature store " + path + " has bad magic");
        if (detail::read_pod<std::uint32_t>(is) != kFeatureStoreVersion)
            throw std::runtime_error("feature store " + path + " has unsupported version");
        FeatureStore store(static_cast<int>(detail::read_pod<std::uint32_t>(is)));
        const auto count = detail::read_pod<std::uint64_t>(is);
        for (std::uint64_t k = 0; k < count; ++k) {
            const auto id = detail::read_pod<std::int64_t>(is);
            std::vector<double> phi(static_cast<std::size_t>(store.gamma_));
            is.read(reinterpret_cast<char*>(phi.data()),
                    static_cast<std::streamsize>(phi.size() * sizeof(double)));
            if (!is) throw std::runtime_error("feature store " + path + " is truncated");
            store.features_.emplace(id, std::move(phi));
        }
        return store;
    }

private:
    int gamma_ = 0;
    std::map<Id, std::vector<double>> features_;
};

}  // namespace varbench

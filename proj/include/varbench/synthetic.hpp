#pragma once

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "varbench/image.hpp"
#include "varbench/interactions.hpp"

namespace varbench {

/// Desk-scale stand-in for a product-image dataset: every item gets a class
/// with a distinct striped texture, and users sample items with preference
/// mass tilted toward one popular class.
struct SyntheticSpec {
    int num_classes = 3;
    int images_per_class = 50;
    int image_size = 16;  // square RGB
    int num_users = 60;
    int interactions_per_user = 12;
    double class_preference_skew = 0.8;  // 0 = uniform classes, 1 = popular class only
    std::uint64_t seed = 7;

    // texture controls: classes share the same mean color and differ by stripe
    // orientation and stripe color, so a classifier has to look at structure.
    // Per-image amplitude jitter leaves some images close to the decision
    // boundary, which keeps a standard classifier attackable.
    double stripe_amplitude = 0.12;
    double amplitude_jitter = 0.6;  // amplitude ~ U((1-j)*a, (1+j)*a)
    double noise_level = 0.15;
};

struct SyntheticDataset {
    InteractionDataset interactions;
    std::vector<ImageSample> images;  // one per catalog item, generator class as label
    int popular_class = 0;
};

namespace detail_synth {

// fixed, well-separated stripe color mixes; cycled for > 6 classes
inline std::array<double, 3> class_color_mix(int c) {
    static constexpr std::array<std::array<double, 3>, 6> mixes = {{
        {1.0, 0.25, -0.6},
        {-0.5, 1.0, 0.3},
        {0.3, -0.7, 1.0},
        {1.0, -0.8, 0.4},
        {-0.6, 0.4, -1.0},
        {0.8, 0.8, -0.9},
    }};
    return mixes[static_cast<std::size_t>(c) % mixes.size()];
}

inline Image render_class_image(int cls, int num_classes, int size, double amplitude,
                                double jitter, double noise, std::mt19937_64& rng) {
    const double angle = std::numbers::pi * cls / num_classes;
    const double cs = std::cos(angle), sn = std::sin(angle);
    std::uniform_real_distribution<double> phase_dist(0.0, 2.0 * std::numbers::pi);
    std::uniform_real_distribution<double> freq_dist(2.5, 3.5);
    std::uniform_real_distribution<double> amp_dist(1.0 - jitter, 1.0 + jitter);
    std::uniform_real_distribution<double> noise_dist(-noise, noise);
    const double phase = phase_dist(rng);
    const double freq = freq_dist(rng);
    amplitude *= amp_dist(rng);
    const auto mix = class_color_mix(cls);
    Image img = Image::blank(3, size, size);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const double u = (x * cs + y * sn) / size;
            const double stripe = std::sin(2.0 * std::numbers::pi * freq * u + phase);
            for (int c = 0; c < 3; ++c) {
                const double v = 0.5 + amplitude * stripe * mix[c] + noise_dist(rng);
                img.at(c, y, x) = std::clamp(v, 0.0, 1.0);
            }
        }
    return img;
}

}  // namespace detail_synth

inline SyntheticDataset synthesize_dataset(const SyntheticSpec& spec) {
    if (spec.num_classes < 1 || spec.images_per_class < 1 || spec.image_size < 4 ||
        spec.num_users < 1 || spec.interactions_per_user < 1)
        throw std::invalid_argument("synthesize_dataset: all counts must be positive");
    if (spec.class_preference_skew < 0.0 || spec.class_preference_skew > 1.0)
        throw std::invalid_argument("synthesize_dataset: skew must lie in [0,1]");
    const std::int64_t num_items =
        static_cast<std::int64_t>(spec.num_classes) * spec.images_per_class;
    if (spec.interactions_per_user > num_items)
        throw std::invalid_argument("synthesize_dataset: more interactions per user than items");

    std::mt19937_64 rng(spec.seed);
    SyntheticDataset out;
    out.popular_class = 0;

    out.images.reserve(static_cast<std::size_t>(num_items));
    for (int c = 0; c < spec.num_classes; ++c)
        for (int j = 0; j < spec.images_per_class; ++j) {
            const Id item = static_cast<Id>(c) * spec.images_per_class + j;
            out.images.push_back({item,
                                  detail_synth::render_class_image(c, spec.num_classes, spec.image_size,
                                                                   spec.stripe_amplitude,
                                                                   spec.amplitude_jitter,
                                                                   spec.noise_level, rng),
                                  c});
        }

    // class sampling weights: popular class gets skew + (1-skew)/C
    std::vector<double> class_w(static_cast<std::size_t>(spec.num_classes),
                                (1.0 - spec.class_preference_skew) / spec.num_classes);
    class_w[static_cast<std::size_t>(out.popular_class)] += spec.class_preference_skew;
    std::discrete_distribution<int> class_dist(class_w.begin(), class_w.end());
    std::uniform_int_distribution<int> item_in_class(0, spec.images_per_class - 1);
    std::uniform_int_distribution<std::int64_t> ts_dist(1, 1'000'000);

    std::vector<Interaction> interactions;
    std::vector<Id> catalog_users, catalog_items;
    for (Id u = 0; u < spec.num_users; ++u) catalog_users.push_back(u);
    for (Id i = 0; i < num_items; ++i) catalog_items.push_back(i);

    for (Id u = 0; u < spec.num_users; ++u) {
        std::unordered_set<Id> chosen;
        long attempts = 0;
        const long max_attempts = 1000L * spec.interactions_per_user;
        while (static_cast<int>(chosen.size()) < spec.interactions_per_user &&
               attempts++ < max_attempts) {
            const int cls = class_dist(rng);
            const Id item = static_cast<Id>(cls) * spec.images_per_class + item_in_class(rng);
            if (!chosen.insert(item).second) continue;
            interactions.push_back({u, item, ts_dist(rng)});
        }
        // skew == 1 can exhaust the popular class; fill from the catalog in order
        for (Id item = 0; static_cast<int>(chosen.size()) < spec.interactions_per_user; ++item)
            if (chosen.insert(item).second) interactions.push_back({u, item, ts_dist(rng)});
    }
    out.interactions =
        InteractionDataset(std::move(catalog_users), std::move(catalog_items), std::move(interactions));
    return out;
}

}  // namespace varbench

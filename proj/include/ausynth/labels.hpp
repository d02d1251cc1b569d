#pragma once

// AU intensity labels: linear scaling to the network range and soft labels.

#include <algorithm>
#include <array>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ausynth/numerics.hpp"

namespace ausynth {

inline constexpr std::size_t kNumAUs = 12;
inline constexpr int kMaxIntensity = 5;

/// FACS action units in column order.
inline const std::array<std::string, kNumAUs>& au_names() {
    static const std::array<std::string, kNumAUs> names = {"AU1",  "AU2",  "AU4",  "AU5",  "AU6",  "AU9",
                                                          "AU12", "AU15", "AU17", "AU20", "AU25", "AU26"};
    return names;
}

/// Discrete intensities, each in 0..5.
using AUVector = std::vector<int>;

inline bool valid_intensity(int y) { return y >= 0 && y <= kMaxIntensity; }

/// Maps intensity [0,5] onto [-1,1].
inline double scale_label(double y) { return y / 2.5 - 1.0; }
inline double unscale_label(double s) { return (s + 1.0) * 2.5; }

inline Vector scale_label(std::span<const int> y) {
    Vector s(static_cast<Eigen::Index>(y.size()));
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (!valid_intensity(y[i])) throw ContractError("AU intensity out of range: " + std::to_string(y[i]));
        s(static_cast<Eigen::Index>(i)) = scale_label(static_cast<double>(y[i]));
    }
    return s;
}

struct SoftAUVector {
    Vector values;  // y + delta, continuous intensities
    Vector scaled;  // clipped to [-1, 1]
};

/// Noise added to discrete labels: N(mean, stddev).
struct SoftLabelNoise {
    double mean = -0.5;
    double stddev = 0.5;
};

inline SoftAUVector soften_label(std::span<const int> y, Rng& rng, SoftLabelNoise noise = {}) {
    std::normal_distribution<double> delta(noise.mean, noise.stddev);
    SoftAUVector out{Vector(static_cast<Eigen::Index>(y.size())), Vector(static_cast<Eigen::Index>(y.size()))};
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (!valid_intensity(y[i])) throw ContractError("AU intensity out of range: " + std::to_string(y[i]));
        const auto k = static_cast<Eigen::Index>(i);
        out.values(k) = static_cast<double>(y[i]) + delta(rng);
        out.scaled(k) = std::clamp(scale_label(out.values(k)), -1.0, 1.0);
    }
    return out;
}

}  // namespace ausynth

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "alphamine/panel.hpp"

namespace alphamine {

// Weekday calendar (Mon-Fri) of `n` dates starting at the first weekday on or
// after `start`.
std::vector<Date> weekday_calendar(Date start, std::size_t n);

struct SyntheticSpec {
    std::size_t symbols = 100;
    std::size_t days = 600;
    std::uint64_t seed = 7;
    // Volume-only expression whose cross-sectional z-score drives the next
    // day's return. Empty: pure random walk.
    std::string planted_expr = "SMA(LOG($volume), 3)";
    double return_scale = 0.01;        // daily return per unit z-score
    double noise_ratio = 0.1;          // noise std relative to the signal std
    double volume_persistence = 0.9;   // AR(1) coefficient of log volume
    std::string start_date = "2020-01-01";
};

// Close-to-close return from t to t+1 is
//   return_scale * (zscore(planted)_t + noise_ratio * N(0, 1)),
// or return_scale * N(0, 1) where the planted factor is undefined.
// Throws ConfigError if the planted expression reads a field other than volume.
Panel make_synthetic_panel(const SyntheticSpec& spec);

} // namespace alphamine

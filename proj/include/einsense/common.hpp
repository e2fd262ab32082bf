// SPDX-License-Identifier: Apache-2.0
//
// einsense: shared numeric helpers, deterministic RNG seeding, logging.

#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <iostream>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace einsense {

using cplx = std::complex<double>;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kDegPerRad = 180.0 / kPi;
inline constexpr double kRadPerDeg = kPi / 180.0;
inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Smallest log value treated as a representable probability; exp(-745) is
// the last double above 0.
inline constexpr double kLogFloor = -745.0;

inline double deg2rad(double deg) { return deg * kRadPerDeg; }
inline double rad2deg(double rad) { return rad * kDegPerRad; }

/// Stable log(exp(a) + exp(b)).
inline double log_add(double a, double b) {
    if (a == kNegInf) return b;
    if (b == kNegInf) return a;
    const double m = std::max(a, b);
    return m + std::log1p(std::exp(std::min(a, b) - m));
}

/// Stable log of a sum of exponentials over a range.
inline double log_sum_exp(std::span<const double> xs) {
    double m = kNegInf;
    for (double x : xs) m = std::max(m, x);
    if (m == kNegInf) return kNegInf;
    double s = 0.0;
    for (double x : xs) s += std::exp(x - m);
    return m + std::log(s);
}

/// Accumulator for log-space sums where terms arrive one by one.
class LogAccumulator {
  public:
    void add(double log_term) {
        if (log_term == kNegInf) return;
        if (log_term > max_) {
            if (max_ != kNegInf) sum_ = sum_ * std::exp(max_ - log_term) + 1.0;
            else sum_ = 1.0;
            max_ = log_term;
        } else {
            sum_ += std::exp(log_term - max_);
        }
    }
    double value() const {
        if (max_ == kNegInf) return kNegInf;
        return max_ + std::log(sum_);
    }

  private:
    double max_ = kNegInf;
    double sum_ = 0.0;
};

/// SplitMix64 step; used to derive independent stream seeds from one master
/// seed plus arbitrary salts.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt_a,
                              std::uint64_t salt_b = 0, std::uint64_t salt_c = 0) {
    std::uint64_t h = splitmix64(seed ^ 0xa5a5a5a5a5a5a5a5ULL);
    h = splitmix64(h ^ salt_a);
    h = splitmix64(h ^ salt_b);
    h = splitmix64(h ^ salt_c);
    return h;
}

inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t salt_a,
                                std::uint64_t salt_b = 0, std::uint64_t salt_c = 0) {
    return std::mt19937_64(mix_seed(seed, salt_a, salt_b, salt_c));
}

// Warnings go to stderr unless silenced (tests exercising degenerate inputs
// flip this off around the call).
inline bool& warnings_enabled() {
    static bool enabled = true;
    return enabled;
}

inline void warn(const std::string& msg) {
    if (warnings_enabled()) std::cerr << "[einsense:warn] " << msg << "\n";
}

/// The three per-device feature bundles.
enum class FeatureKind { SPR, SA, WA };

inline const char* to_string(FeatureKind k) {
    switch (k) {
        case FeatureKind::SPR: return "SPR";
        case FeatureKind::SA: return "SA";
        case FeatureKind::WA: return "WA";
    }
    return "?";
}

inline FeatureKind feature_kind_from_string(const std::string& s) {
    if (s == "SPR" || s == "spr") return FeatureKind::SPR;
    if (s == "SA" || s == "sa") return FeatureKind::SA;
    if (s == "WA" || s == "wa") return FeatureKind::WA;
    throw std::invalid_argument("unknown feature kind: " + s);
}

struct UsageError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InvariantError : std::logic_error {
    using std::logic_error::logic_error;
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw UsageError(msg);
}

inline double mean_of(std::span<const double> xs) {
    if (xs.empty()) return 0.0;
    double s = 0.0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}

inline double variance_of(std::span<const double> xs) {
    if (xs.empty()) return 0.0;
    const double mu = mean_of(xs);
    double s = 0.0;
    for (double x : xs) s += (x - mu) * (x - mu);
    return s / static_cast<double>(xs.size());
}

inline bool all_finite(std::span<const double> xs) {
    return std::all_of(xs.begin(), xs.end(), [](double v) { return std::isfinite(v); });
}

/// Runs fn(i) for i in [0, n). Each index writes only its own output slot,
/// so results are identical whether this runs threaded or sequentially;
/// max_threads <= 1 forces the sequential path. The first exception thrown
/// by any worker is rethrown.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn,
                         unsigned max_threads = 0) {
    if (n == 0) return;
    unsigned threads = max_threads == 0 ? std::thread::hardware_concurrency() : max_threads;
    threads = std::min<unsigned>(threads, static_cast<unsigned>(n));
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    for (unsigned t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
            try {
                for (std::size_t i = t; i < n; i += threads) fn(i);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace einsense

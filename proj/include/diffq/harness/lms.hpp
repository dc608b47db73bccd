#pragma once

#include <cstdint>
#include <iosfwd>
#include <set>
#include <string>
#include <vector>

#include "diffq/diffq.hpp"

namespace diffq::harness {

enum class LmsMethod { ste, pqn };

/*!
 * One-dimensional least squares min_w E[(X Q(w,B) - X w*)^2 / 2] with
 * sigma2 = E[X^2]. The weight is kept in [0, 1].
 */
struct LmsConfig {
    double w_star = 0.11;
    int bits = 4;
    double lr = 0.5;
    long steps = 1000;
    LmsMethod method = LmsMethod::ste;
    NoiseKind noise = NoiseKind::uniform;
    double sigma2 = 1.0;
    /// Draw X ~ N(0, sigma2) per step instead of using the expected gradient.
    bool stochastic_x = false;
    std::uint64_t seed = 0;
    /// Starting point; defaults to w_star.
    std::optional<double> w0;
};

struct LmsRecord {
    long n = 0;
    double w = 0.0;
    double q_w = 0.0;
    double grad = 0.0;
};

struct Trajectory {
    std::vector<LmsRecord> records; // steps + 1 entries
    std::vector<std::string> warnings;
};

Trajectory run_lms(const LmsConfig& cfg);

struct Oscillation {
    bool oscillating = false;
    std::set<double> levels;
};

/// Oscillating iff the last `tail` values of Q(w_n, B) take exactly two values, each at least 10% of the time.
Oscillation detect_oscillation(const Trajectory& traj, std::size_t tail);

struct GradientEstimate {
    double mean = 0.0;
    double stderr_ = 0.0;
};

/// Monte-Carlo mean of sigma2 * (w + Delta(B)/2 * eps - w*) and its standard error.
GradientEstimate mc_gradient_estimate(double w, double w_star, int bits, double sigma2, NoiseKind noise,
                                      std::size_t n_samples, std::uint64_t seed);

/// CSV with header n,w,q_w,grad.
void write_trajectory_csv(const Trajectory& traj, std::ostream& os);

}  // namespace diffq::harness

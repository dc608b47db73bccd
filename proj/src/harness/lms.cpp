#include "diffq/harness/lms.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <stdexcept>

#include "diffq/harness/csv.hpp"

namespace diffq::harness {

Trajectory run_lms(const LmsConfig& cfg)
{
    if (cfg.w_star < 0.0 || cfg.w_star > 1.0) {
        throw std::invalid_argument("lms: w_star must lie in [0, 1]");
    }
    if (cfg.bits < 1 || cfg.bits > 32) {
        throw std::invalid_argument("lms: bits must lie in [1, 32]");
    }
    if (cfg.steps < 0) {
        throw std::invalid_argument("lms: steps must be non-negative");
    }
    if (!(cfg.sigma2 >= 0.0)) {
        throw std::invalid_argument("lms: sigma2 must be non-negative");
    }

    Trajectory traj;
    if (cfg.method == LmsMethod::ste && quant::quantize_value(cfg.w_star, cfg.bits) == cfg.w_star) {
        traj.warnings.push_back("Q(w_star, B) == w_star: no oscillation expected");
    }
    Rng rng(cfg.seed);
    const double half_step = 0.5 * quant::delta(static_cast<double>(cfg.bits));
    const double sigma = std::sqrt(cfg.sigma2);

    double w = std::clamp(cfg.w0.value_or(cfg.w_star), 0.0, 1.0);
    traj.records.reserve(static_cast<std::size_t>(cfg.steps) + 1);
    for (long n = 0; n <= cfg.steps; ++n) {
        const double q = quant::quantize_value(w, cfg.bits);
        double second_moment = cfg.sigma2;
        if (cfg.stochastic_x) {
            const double x = sigma * rng.next_gaussian();
            second_moment = x * x;
        }
        double grad = 0.0;
        if (cfg.method == LmsMethod::ste) {
            grad = second_moment * (q - cfg.w_star);
        } else {
            const double eps = cfg.noise == NoiseKind::uniform ? rng.next_uniform() : rng.next_gaussian();
            grad = second_moment * (w + half_step * eps - cfg.w_star);
        }
        traj.records.push_back({n, w, q, grad});
        w = std::clamp(w - cfg.lr * grad, 0.0, 1.0);
    }
    return traj;
}

Oscillation detect_oscillation(const Trajectory& traj, std::size_t tail)
{
    if (tail > traj.records.size()) {
        throw std::invalid_argument("detect_oscillation: tail longer than trajectory");
    }
    std::map<double, std::size_t> counts;
    for (std::size_t i = traj.records.size() - tail; i < traj.records.size(); ++i) {
        ++counts[traj.records[i].q_w];
    }
    Oscillation out;
    for (const auto& [level, count] : counts) {
        out.levels.insert(level);
    }
    if (counts.size() == 2) {
        out.oscillating = std::all_of(counts.begin(), counts.end(), [&](const auto& kv) {
            return 10 * kv.second >= tail;
        });
    }
    return out;
}

GradientEstimate mc_gradient_estimate(double w, double w_star, int bits, double sigma2, NoiseKind noise,
                                      std::size_t n_samples, std::uint64_t seed)
{
    if (n_samples < 1000) {
        throw std::invalid_argument("mc_gradient_estimate: need at least 1000 samples");
    }
    Rng rng(seed);
    const double half_step = 0.5 * quant::delta(static_cast<double>(bits));
    // Welford
    double mean = 0.0, m2 = 0.0;
    for (std::size_t i = 0; i < n_samples; ++i) {
        const double eps = noise == NoiseKind::uniform ? rng.next_uniform() : rng.next_gaussian();
        const double g = sigma2 * (w + half_step * eps - w_star);
        const double delta = g - mean;
        mean += delta / static_cast<double>(i + 1);
        m2 += delta * (g - mean);
    }
    const double n = static_cast<double>(n_samples);
    return {mean, std::sqrt(m2 / (n - 1.0) / n)};
}

void write_trajectory_csv(const Trajectory& traj, std::ostream& os)
{
    os << "n,w,q_w,grad\n";
    for (const auto& r : traj.records) {
        os << r.n << ',' << fmt_real(r.w) << ',' << fmt_real(r.q_w) << ',' << fmt_real(r.grad) << '\n';
    }
}

}  // namespace diffq::harness

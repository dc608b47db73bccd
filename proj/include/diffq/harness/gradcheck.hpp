#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "diffq/diffq.hpp"

namespace diffq::harness {

struct GradcheckOptions {
    std::vector<std::size_t> widths{2, 16, 2};
    std::size_t batch = 8;
    double step = 1e-3;
    /// Entries whose analytic and numeric gradients are both below this are compared absolutely.
    double magnitude_floor = 1e-8;
    NoiseKind noise = NoiseKind::gaussian;
};

struct GradcheckEntry {
    std::string parameter; // "fc0.weight", or "fc0.weight.logits" for bit logits
    std::size_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_error = 0.0;
};

struct GradcheckResult {
    std::uint64_t seed = 0;
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::size_t skipped_kinks = 0;
    GradcheckEntry worst;
};

/*!
 * Compares reverse-mode gradients of L + lambda * M(b) for a random MLP
 * trained with pseudo quantization noise against a fourth-order central difference, for
 * every weight, bias and bit logit. Noise samples and ranges are frozen
 * across evaluations. Coordinates whose perturbation flips the sign of any
 * ReLU input are skipped.
 */
GradcheckResult run_gradcheck(std::uint64_t seed, const GradcheckOptions& options = {});

}  // namespace diffq::harness

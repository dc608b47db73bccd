#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "diffq/diffq.hpp"
#include "diffq/hardened.hpp"
#include "diffq/mlp.hpp"

namespace diffq::harness {

struct OptimizerSettings {
    std::string kind = "sgd"; // "sgd" or "adam"
    double lr = 0.05;
    double momentum = 0.9;
    double weight_decay = 0.0;
    /// Step decay: lr * decay_factor^floor(epoch / decay_every).
    double decay_factor = 1.0;
    int decay_every = 1;
};

struct ToyTask {
    Dataset train;
    Dataset test;
    std::vector<std::size_t> hidden{16};
    int epochs = 200;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;
    OptimizerSettings optimizer;
};

struct MethodSpec {
    Method method = Method::pqn;
    int qat_bits = 8;
    DiffqConfig diffq;
};

struct EpochRecord {
    int epoch = 0;
    double task_loss = 0.0;
    double penalty = 0.0;
    double model_size_mb = 0.0;
};

struct RunReport {
    MethodSpec spec;
    /// Test accuracy with hardened (deployed) weights.
    double accuracy = 0.0;
    /// Test accuracy with the trained full-precision weights.
    double float_accuracy = 0.0;
    std::vector<EpochRecord> history;
    HardenedModel hardened;
    ModelReport size;
    std::vector<std::uint8_t> packed;
};

/// Blobs task: `n_train` / `n_test` samples at `separation` sigma, data seed fixed by `data_seed`.
ToyTask make_blobs_task(std::size_t n_train = 200, std::size_t n_test = 200, double separation = 4.0,
                        std::uint64_t data_seed = 1234);

/// Trains an MLP input-hidden...-classes. Deterministic in (task, spec).
RunReport train_toy(const ToyTask& task, const MethodSpec& spec);

struct SweepRow {
    double lambda = 0.0;
    std::size_t group_size = 0;
    double accuracy = 0.0;
    double size_mb = 0.0;
    double mean_bits = 0.0;
    /// Group-code bits summed over tensors: sum ceil(d/g) * maxC.
    std::uint64_t overhead_bits = 0;
};

/// One train_toy per (lambda, g), run on up to `threads` workers, ordered by (lambda, g).
std::vector<SweepRow> sweep_lambda(const ToyTask& task, const MethodSpec& base, const std::vector<double>& lambdas,
                                   const std::vector<std::size_t>& group_sizes, unsigned threads = 1);

/// CSV with header lambda,g,acc,size_mb,mean_bits.
void write_sweep_csv(const std::vector<SweepRow>& rows, std::ostream& os);
/// CSV with header epoch,task_loss,penalty,model_size_mb.
void write_curves_csv(const RunReport& report, std::ostream& os);

}  // namespace diffq::harness

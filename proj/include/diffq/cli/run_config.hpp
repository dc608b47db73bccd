#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "diffq/harness/toy.hpp"

namespace diffq::cli {

/// Where training data comes from. "blobs" is synthetic; otherwise a csv or idx file.
struct TaskSettings {
    std::string dataset = "blobs";
    std::string format = "csv";
    std::string path;
    std::string labels_path;
    std::string test_path;
    std::string test_labels_path;
    /// Used when no test file is given: trailing fraction of a seeded shuffle.
    double test_fraction = 0.5;
    std::size_t n_train = 200;
    std::size_t n_test = 200;
    double separation = 4.0;
    std::uint64_t data_seed = 1234;
    std::vector<std::size_t> hidden{16};
    int epochs = 200;
    std::size_t batch_size = 32;
};

struct SweepSettings {
    std::vector<double> lambdas{1e-3, 1e-2, 1e-1};
    std::vector<std::size_t> group_sizes{8};
    unsigned threads = 1;
};

/*!
 * Full configuration of a train or sweep run.
 *
 * Precedence, lowest to highest: built-in defaults, the JSON config file,
 * the DIFFQ_SEED environment variable, command-line flags.
 *
 * The toy default for diffq.skip_threshold_mb is 0: every tensor of a
 * desk-sized MLP is far below 0.01 MB and would otherwise stay fp32.
 */
struct RunConfig {
    std::string method = "diffq"; // diffq | qat | fp32
    int qat_bits = 8;
    std::uint64_t seed = 0;
    std::string out_dir = "run";
    DiffqConfig diffq = [] {
        DiffqConfig c;
        c.skip_threshold_mb = 0.0;
        return c;
    }();
    TaskSettings task;
    harness::OptimizerSettings optimizer;
    SweepSettings sweep;

    /// Rejects unknown keys and ill-typed values with std::invalid_argument.
    static RunConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;

    Method parsed_method() const;
    harness::MethodSpec method_spec() const;
    /// Builds datasets and settings; file datasets are loaded here.
    harness::ToyTask make_task() const;
};

RunConfig load_run_config(const std::string& path);

}  // namespace diffq::cli

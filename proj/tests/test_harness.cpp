#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "diffq/harness/dataset.hpp"
#include "diffq/harness/gradcheck.hpp"
#include "diffq/harness/lms.hpp"
#include "diffq/harness/toy.hpp"

using namespace diffq;
using namespace diffq::harness;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name, const std::string& content)
{
    const auto dir = fs::temp_directory_path() / "diffq_harness_test";
    fs::create_directories(dir);
    const auto path = dir / name;
    std::ofstream(path, std::ios::binary) << content;
    return path;
}

std::string be32(std::uint32_t v)
{
    return {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8), static_cast<char>(v)};
}

double median(std::vector<double> v)
{
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
}

ToyTask short_task(int epochs)
{
    auto task = make_blobs_task();
    task.epochs = epochs;
    return task;
}

MethodSpec diffq_spec(double lambda = 0.0)
{
    MethodSpec spec;
    spec.method = Method::pqn;
    spec.diffq.skip_threshold_mb = 0.0;
    spec.diffq.lambda = lambda;
    return spec;
}

}  // namespace

TEST(Lms, SteFixtureFirstStepAndOscillation)
{
    const auto traj = run_lms(LmsConfig{});
    ASSERT_EQ(traj.records.size(), 1001u);
    EXPECT_DOUBLE_EQ(traj.records[0].w, 0.11);
    EXPECT_NEAR(traj.records[0].q_w, 2.0 / 15.0, 1e-15);
    EXPECT_NEAR(traj.records[1].w, 0.098333, 1e-6);
    EXPECT_NEAR(traj.records[1].w, 0.11 - 0.5 * (2.0 / 15.0 - 0.11), 1e-15);
    EXPECT_TRUE(traj.warnings.empty());
    const auto osc = detect_oscillation(traj, 500);
    EXPECT_TRUE(osc.oscillating);
    ASSERT_EQ(osc.levels.size(), 2u);
    EXPECT_NEAR(*osc.levels.begin(), 1.0 / 15.0, 1e-15);
    EXPECT_NEAR(*osc.levels.rbegin(), 2.0 / 15.0, 1e-15);
}

TEST(Lms, ZeroLearningRateIsConstant)
{
    LmsConfig cfg;
    cfg.lr = 0.0;
    cfg.steps = 50;
    const auto traj = run_lms(cfg);
    for (const auto& r : traj.records) {
        EXPECT_EQ(r.w, 0.11);
    }
    EXPECT_FALSE(detect_oscillation(traj, 50).oscillating);
}

TEST(Lms, GridTargetWarns)
{
    LmsConfig cfg;
    cfg.w_star = 2.0 / 15.0;
    cfg.steps = 10;
    const auto traj = run_lms(cfg);
    EXPECT_EQ(traj.warnings.size(), 1u);
}

TEST(Lms, PqnStationaryMeanAtTarget)
{
    LmsConfig cfg;
    cfg.method = LmsMethod::pqn;
    cfg.steps = 5000;
    cfg.seed = 0;
    const auto traj = run_lms(cfg);
    const std::size_t n = 500;
    double mean = 0.0;
    for (std::size_t i = traj.records.size() - n; i < traj.records.size(); ++i) {
        mean += traj.records[i].w;
    }
    mean /= n;
    double var = 0.0;
    for (std::size_t i = traj.records.size() - n; i < traj.records.size(); ++i) {
        var += (traj.records[i].w - mean) * (traj.records[i].w - mean);
    }
    const double sd = std::sqrt(var / (n - 1));
    EXPECT_LT(std::abs(mean - 0.11), 3.0 * sd / std::sqrt(static_cast<double>(n)));
}

TEST(Lms, PqnConvergesAndDoesNotOscillate)
{
    LmsConfig cfg;
    cfg.method = LmsMethod::pqn;
    cfg.lr = 0.05;
    cfg.steps = 10000;
    const auto traj = run_lms(cfg);
    double mean = 0.0;
    for (std::size_t i = traj.records.size() - 1000; i < traj.records.size(); ++i) {
        mean += traj.records[i].w;
    }
    EXPECT_LT(std::abs(mean / 1000.0 - 0.11), 0.01);
    const auto osc = detect_oscillation(traj, 1000);
    EXPECT_FALSE(osc.oscillating);
    ASSERT_EQ(osc.levels.size(), 1u);
    EXPECT_NEAR(*osc.levels.begin(), 2.0 / 15.0, 1e-15);
}

TEST(Lms, StochasticXIsSeeded)
{
    LmsConfig cfg;
    cfg.stochastic_x = true;
    cfg.seed = 3;
    cfg.steps = 200;
    const auto a = run_lms(cfg);
    const auto b = run_lms(cfg);
    std::ostringstream sa, sb;
    write_trajectory_csv(a, sa);
    write_trajectory_csv(b, sb);
    EXPECT_EQ(sa.str(), sb.str());
    EXPECT_EQ(sa.str().substr(0, 13), "n,w,q_w,grad\n");
}

TEST(Lms, TrajectoryStaysInUnitInterval)
{
    LmsConfig cfg;
    cfg.w_star = 0.99;
    cfg.lr = 3.0;
    cfg.steps = 100;
    for (const auto& r : run_lms(cfg).records) {
        EXPECT_GE(r.w, 0.0);
        EXPECT_LE(r.w, 1.0);
    }
}

TEST(MonteCarlo, UnbiasedAtTarget)
{
    for (auto kind : {NoiseKind::uniform, NoiseKind::gaussian}) {
        const auto est = mc_gradient_estimate(0.11, 0.11, 4, 1.0, kind, 100000, 1);
        EXPECT_LT(std::abs(est.mean), 3.0 * est.stderr_);
        EXPECT_GT(est.stderr_, 0.0);
    }
}

TEST(MonteCarlo, MatchesSigma2TimesOffset)
{
    const auto est = mc_gradient_estimate(0.2, 0.11, 4, 1.0, NoiseKind::uniform, 100000, 2);
    EXPECT_LT(std::abs(est.mean - 0.09), 3.0 * est.stderr_);
    const auto scaled = mc_gradient_estimate(0.2, 0.11, 4, 2.5, NoiseKind::gaussian, 100000, 2);
    EXPECT_LT(std::abs(scaled.mean - 2.5 * 0.09), 3.0 * scaled.stderr_);
}

TEST(MonteCarlo, ZeroSigmaAndPreconditions)
{
    const auto est = mc_gradient_estimate(0.2, 0.11, 4, 0.0, NoiseKind::uniform, 1000, 2);
    EXPECT_EQ(est.mean, 0.0);
    EXPECT_EQ(est.stderr_, 0.0);
    EXPECT_THROW(mc_gradient_estimate(0.2, 0.11, 4, 1.0, NoiseKind::uniform, 999, 2), std::invalid_argument);
}

TEST(MonteCarlo, SteBiasIsExact)
{
    // Expected STE gradient at w* is Q(w*) - w*, nonzero.
    const auto traj = run_lms(LmsConfig{});
    EXPECT_NEAR(traj.records[0].grad, 2.0 / 15.0 - 0.11, 1e-15);
}

TEST(Dataset, CsvParse)
{
    const auto path = temp_file("three.csv", "0,0,0\n1,1,1\n0.5,0.5,0\n");
    const auto d = load_csv(path.string());
    EXPECT_EQ(d.size(), 3u);
    EXPECT_EQ(d.num_features(), 2u);
    EXPECT_EQ(d.labels, (std::vector<int>{0, 1, 0}));
    EXPECT_EQ(d.features.at(2, 1), 0.5);
    EXPECT_EQ(d.num_classes(), 2);
}

TEST(Dataset, CsvScalesColumns)
{
    const auto path = temp_file("scale.csv", "10,-3,7,2\n20,-1,7,0\n15,1,7,1\n");
    const auto d = load_csv(path.string());
    EXPECT_EQ(d.features.values(), (std::vector<double>{0.0, 0.0, 0.0, 1.0, 0.5, 0.0, 0.5, 1.0, 0.0}));
}

TEST(Dataset, CsvErrorsNameLine)
{
    const auto empty = temp_file("empty.csv", "");
    EXPECT_THROW(load_csv(empty.string()), DatasetError);
    const auto bad = temp_file("bad.csv", "0,1,0\n0,x,1\n");
    try {
        load_csv(bad.string());
        FAIL();
    } catch (const DatasetError& e) {
        EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos) << e.what();
    }
    const auto ragged = temp_file("ragged.csv", "0,1,0\n0,1\n");
    EXPECT_THROW(load_csv(ragged.string()), DatasetError);
    const auto label = temp_file("label.csv", "0,1,0.5\n");
    EXPECT_THROW(load_csv(label.string()), DatasetError);
    EXPECT_THROW(load_csv("/nonexistent/file.csv"), DatasetError);
}

TEST(Dataset, IdxImagesAndLabels)
{
    const std::uint32_t n = 3;
    std::string images = be32(0x00000803) + be32(n) + be32(28) + be32(28);
    for (std::uint32_t i = 0; i < n * 28 * 28; ++i) {
        images.push_back(static_cast<char>(i % 256));
    }
    std::string labels = be32(0x00000801) + be32(n) + std::string{7, 0, 3};
    const auto ip = temp_file("img.idx", images);
    const auto lp = temp_file("lab.idx", labels);
    const auto arr = read_idx(ip.string());
    EXPECT_EQ(arr.dims, (Shape{3, 28, 28}));
    const auto d = load_idx(ip.string(), lp.string());
    EXPECT_EQ(d.size(), 3u);
    EXPECT_EQ(d.num_features(), 784u);
    EXPECT_EQ(d.labels, (std::vector<int>{7, 0, 3}));
    EXPECT_DOUBLE_EQ(d.features.at(0, 255), 1.0);
    EXPECT_DOUBLE_EQ(d.features.at(1, 0), static_cast<double>(784 % 256) / 255.0);
    const auto via = load_dataset(ip.string(), DataFormat::idx, lp.string());
    EXPECT_EQ(via.features, d.features);
}

TEST(Dataset, IdxErrorsNameOffset)
{
    const auto bad_magic = temp_file("bad_magic.idx", be32(0x01000803) + be32(1));
    EXPECT_THROW(read_idx(bad_magic.string()), DatasetError);
    const auto bad_type = temp_file("bad_type.idx", be32(0x00000D01) + be32(1) + "abcd");
    EXPECT_THROW(read_idx(bad_type.string()), DatasetError);
    const auto truncated = temp_file("trunc.idx", be32(0x00000801) + be32(5) + "ab");
    try {
        read_idx(truncated.string());
        FAIL();
    } catch (const DatasetError& e) {
        EXPECT_NE(std::string(e.what()).find("offset"), std::string::npos) << e.what();
    }
    const auto empty = temp_file("empty.idx", "");
    EXPECT_THROW(read_idx(empty.string()), DatasetError);
}

TEST(Dataset, BlobsDeterministicAndBalanced)
{
    const auto a = make_blobs(200, 4.0, 9);
    const auto b = make_blobs(200, 4.0, 9);
    EXPECT_EQ(a.features, b.features);
    EXPECT_EQ(std::count(a.labels.begin(), a.labels.end(), 1), 100);
    double mean0 = 0.0;
    for (std::size_t i = 0; i < a.size(); i += 2) {
        mean0 += a.features.at(i, 0);
    }
    EXPECT_NEAR(mean0 / 100.0, -2.0, 0.35);
}

TEST(Toy, Fp32ReachesBlobAccuracy)
{
    MethodSpec spec;
    spec.method = Method::fp32;
    const auto r = train_toy(make_blobs_task(), spec);
    EXPECT_GE(r.accuracy, 0.95);
    EXPECT_EQ(r.history.size(), 200u);
    EXPECT_EQ(r.size.mean_bits, 32.0);
}

TEST(Toy, DiffqDefaultsWithinTwoPointsOfFp32)
{
    MethodSpec fp;
    fp.method = Method::fp32;
    const auto base = train_toy(make_blobs_task(), fp);
    const auto dq = train_toy(make_blobs_task(), diffq_spec());
    EXPECT_LE(std::abs(dq.accuracy - base.accuracy), 0.02);
    EXPECT_NEAR(dq.size.mean_bits, 8.0, 0.5);
    for (const auto& t : dq.hardened.tensors) {
        EXPECT_EQ(t.kind, TensorKind::quantized);
    }
}

TEST(Toy, DefaultSkipThresholdLeavesTinyModelRaw)
{
    MethodSpec spec = diffq_spec();
    spec.diffq.skip_threshold_mb = 0.01;
    const auto r = train_toy(short_task(3), spec);
    for (const auto& t : r.hardened.tensors) {
        EXPECT_EQ(t.kind, TensorKind::raw);
    }
    EXPECT_EQ(r.size.mean_bits, 32.0);
}

TEST(Toy, BitReproducible)
{
    const auto task = short_task(20);
    const auto a = train_toy(task, diffq_spec(1.0));
    const auto b = train_toy(task, diffq_spec(1.0));
    std::ostringstream ca, cb;
    write_curves_csv(a, ca);
    write_curves_csv(b, cb);
    EXPECT_EQ(ca.str(), cb.str());
    EXPECT_EQ(a.packed, b.packed);
    EXPECT_EQ(ca.str().substr(0, 38), "epoch,task_loss,penalty,model_size_mb\n");
}

TEST(Toy, AdamAndStepDecayRun)
{
    auto task = short_task(10);
    task.optimizer.kind = "adam";
    task.optimizer.lr = 1e-2;
    task.optimizer.decay_factor = 0.5;
    task.optimizer.decay_every = 3;
    const auto r = train_toy(task, diffq_spec());
    EXPECT_GT(r.accuracy, 0.5);
    task.optimizer.kind = "rmsprop";
    EXPECT_THROW(train_toy(task, diffq_spec()), std::invalid_argument);
}

TEST(Toy, DivergenceReportsEpoch)
{
    auto task = short_task(5);
    task.optimizer.lr = 1e300;
    try {
        train_toy(task, diffq_spec());
        FAIL();
    } catch (const TrainingDiverged& e) {
        EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos) << e.what();
    }
}

TEST(Toy, GaussianDropNotWorseThanUniform)
{
    for (std::optional<int> fixed : {std::optional<int>{}, std::optional<int>{2}}) {
        std::vector<double> gaussian, uniform;
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            auto task = make_blobs_task();
            task.seed = seed;
            for (auto kind : {NoiseKind::gaussian, NoiseKind::uniform}) {
                auto spec = diffq_spec();
                spec.diffq.noise = kind;
                spec.diffq.fixed_bits = fixed;
                const auto r = train_toy(task, spec);
                (kind == NoiseKind::gaussian ? gaussian : uniform).push_back(r.float_accuracy - r.accuracy);
            }
        }
        EXPECT_LE(median(gaussian), median(uniform)) << (fixed ? "fixed 2 bits" : "learned bits");
    }
}

TEST(Sweep, LargePenaltiesStrictlyShrinkModel)
{
    const auto rows = sweep_lambda(make_blobs_task(), diffq_spec(), {1.0, 10.0, 100.0, 1000.0}, {8}, 2);
    ASSERT_EQ(rows.size(), 4u);
    for (std::size_t i = 1; i < rows.size(); ++i) {
        EXPECT_LT(rows[i].size_mb, rows[i - 1].size_mb) << rows[i].lambda;
        EXPECT_LT(rows[i].mean_bits, rows[i - 1].mean_bits);
    }
}

TEST(Sweep, SingleLambdaAndOrdering)
{
    const auto task = short_task(5);
    const auto one = sweep_lambda(task, diffq_spec(), {0.1}, {8});
    ASSERT_EQ(one.size(), 1u);
    const auto grid = sweep_lambda(task, diffq_spec(), {0.2, 0.1}, {8, 1}, 3);
    ASSERT_EQ(grid.size(), 4u);
    EXPECT_EQ(grid[0].lambda, 0.1);
    EXPECT_EQ(grid[0].group_size, 1u);
    EXPECT_EQ(grid[3].lambda, 0.2);
    EXPECT_EQ(grid[3].group_size, 8u);
    EXPECT_THROW(sweep_lambda(task, diffq_spec(), {}, {8}), std::invalid_argument);
    std::ostringstream os;
    write_sweep_csv(grid, os);
    EXPECT_EQ(os.str().substr(0, 31), "lambda,g,acc,size_mb,mean_bits\n");
}

TEST(Sweep, GroupOverheadDecreasesWithGroupSize)
{
    auto task = short_task(5);
    task.hidden = {20};
    // largest tensor has d = 40 weights
    const auto rows = sweep_lambda(task, diffq_spec(1.0), {1.0}, {1, 8, 40});
    ASSERT_EQ(rows.size(), 3u);
    EXPECT_GT(rows[0].overhead_bits, rows[1].overhead_bits);
    EXPECT_GT(rows[1].overhead_bits, rows[2].overhead_bits);
}

TEST(Sweep, ParallelMatchesSerial)
{
    const auto task = short_task(5);
    const auto serial = sweep_lambda(task, diffq_spec(), {0.0, 10.0, 100.0}, {4, 8}, 1);
    const auto parallel = sweep_lambda(task, diffq_spec(), {0.0, 10.0, 100.0}, {4, 8}, 4);
    std::ostringstream a, b;
    write_sweep_csv(serial, a);
    write_sweep_csv(parallel, b);
    EXPECT_EQ(a.str(), b.str());
}

TEST(Gradcheck, TwentySeeds)
{
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto r = run_gradcheck(seed);
        EXPECT_LT(r.max_rel_error, 1e-5) << "seed " << seed << " worst " << r.worst.parameter;
        EXPECT_GT(r.checked, 50u);
    }
}

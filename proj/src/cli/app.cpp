#include "diffq/cli/app.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <sstream>

#include <CLI11.hpp>

#include "diffq/cli/run_config.hpp"
#include "diffq/codec.hpp"
#include "diffq/harness/csv.hpp"
#include "diffq/harness/gradcheck.hpp"
#include "diffq/harness/lms.hpp"
#include "diffq/harness/toy.hpp"

namespace diffq::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::vector<std::uint8_t> read_bytes(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw UsageError("cannot open '" + path + "'");
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& path, const std::string& content)
{
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    os << content;
    os.flush();
    if (!os) {
        throw std::runtime_error("cannot write '" + path.string() + "'");
    }
}

void write_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes)
{
    write_file(path, std::string(bytes.begin(), bytes.end()));
}

fs::path prepare_dir(const std::string& dir)
{
    fs::path p(dir);
    std::error_code ec;
    fs::create_directories(p, ec);
    if (ec || !fs::is_directory(p)) {
        throw std::runtime_error("cannot create output directory '" + dir + "'" +
                                 (ec ? ": " + ec.message() : std::string()));
    }
    return p;
}

std::optional<std::uint64_t> env_seed()
{
    const char* raw = std::getenv("DIFFQ_SEED");
    if (!raw || !*raw) {
        return std::nullopt;
    }
    try {
        std::size_t used = 0;
        const auto v = std::stoull(raw, &used);
        if (used != std::string(raw).size()) {
            throw std::invalid_argument(raw);
        }
        return v;
    } catch (const std::exception&) {
        throw UsageError(std::string("DIFFQ_SEED is not an unsigned integer: '") + raw + "'");
    }
}

NoiseKind parse_noise(const std::string& s)
{
    if (s == "uniform") {
        return NoiseKind::uniform;
    }
    if (s == "gaussian") {
        return NoiseKind::gaussian;
    }
    throw UsageError("--noise must be uniform or gaussian");
}

json tensor_report_json(const TensorReport& r)
{
    json hist = json::object();
    for (const auto& [bits, count] : r.bit_histogram) {
        hist[std::to_string(bits)] = count;
    }
    return {
        {"name", r.name},
        {"num_weights", r.num_weights},
        {"quantized", r.quantized},
        {"group_size", r.group_size},
        {"b_min", r.b_min},
        {"max_code_bits", r.max_code_bits},
        {"mean_bits", r.mean_bits},
        {"true_bits", r.true_bits},
        {"code_overhead_bits", r.code_overhead_bits},
        {"bit_histogram", hist},
    };
}

/// Shared flags of train and sweep; each optional overrides the config file.
struct RunFlags {
    std::string config_path;
    std::optional<std::string> out_dir;
    std::optional<std::string> method;
    std::optional<double> lambda;
    std::optional<std::size_t> group_size;
    std::optional<int> qat_bits;
    std::optional<int> fixed_bits;
    std::optional<std::string> noise;
    std::optional<int> epochs;
    std::optional<std::uint64_t> seed;
    std::optional<double> lr;

    void attach(CLI::App& sub)
    {
        sub.add_option("--config", config_path, "JSON run configuration");
        sub.add_option("--out", out_dir, "output directory");
        sub.add_option("--method", method, "diffq | qat | fp32");
        sub.add_option("--lambda", lambda, "model size penalty");
        sub.add_option("--group-size", group_size, "weights per learned bitwidth");
        sub.add_option("--qat-bits", qat_bits, "bitwidth for qat");
        sub.add_option("--fixed-bits", fixed_bits, "freeze every diffq group at this bitwidth");
        sub.add_option("--noise", noise, "gaussian | uniform");
        sub.add_option("--epochs", epochs, "training epochs");
        sub.add_option("--seed", seed, "run seed (overrides DIFFQ_SEED)");
        sub.add_option("--lr", lr, "weight learning rate");
    }

    RunConfig resolve() const
    {
        RunConfig c;
        if (!config_path.empty()) {
            try {
                c = load_run_config(config_path);
            } catch (const std::invalid_argument& e) {
                throw UsageError(e.what());
            }
        }
        if (auto s = env_seed()) {
            c.seed = *s;
        }
        if (out_dir) c.out_dir = *out_dir;
        if (method) c.method = *method;
        if (lambda) c.diffq.lambda = *lambda;
        if (group_size) c.diffq.group_size = *group_size;
        if (qat_bits) c.qat_bits = *qat_bits;
        if (fixed_bits) c.diffq.fixed_bits = *fixed_bits;
        if (noise) c.diffq.noise = parse_noise(*noise);
        if (epochs) c.task.epochs = *epochs;
        if (seed) c.seed = *seed;
        if (lr) c.optimizer.lr = *lr;
        try {
            c = RunConfig::from_json(c.to_json());
        } catch (const std::invalid_argument& e) {
            throw UsageError(e.what());
        }
        return c;
    }
};

int run_lms_command(const harness::LmsConfig& cfg, const std::string& out_path, std::size_t tail, std::ostream& out)
{
    const auto traj = harness::run_lms(cfg);
    std::ostringstream csv;
    harness::write_trajectory_csv(traj, csv);
    if (out_path.empty()) {
        out << csv.str();
        return kExitOk;
    }
    if (const auto parent = fs::path(out_path).parent_path(); !parent.empty()) {
        prepare_dir(parent.string());
    }
    write_file(out_path, csv.str());
    const auto osc = harness::detect_oscillation(traj, std::min(tail, traj.records.size()));
    out << out_path << '\n';
    out << "oscillating=" << (osc.oscillating ? "yes" : "no") << " levels=";
    bool first = true;
    for (double level : osc.levels) {
        out << (first ? "" : ",") << harness::fmt_real(level);
        first = false;
    }
    out << '\n';
    return kExitOk;
}

int run_train(const RunConfig& cfg, std::ostream& out)
{
    const auto dir = prepare_dir(cfg.out_dir);
    const auto report = harness::train_toy(cfg.make_task(), cfg.method_spec());

    json metrics;
    metrics["config"] = cfg.to_json();
    const auto& last = report.history.empty() ? harness::EpochRecord{} : report.history.back();
    metrics["metrics"] = {
        {"accuracy", report.accuracy},
        {"float_accuracy", report.float_accuracy},
        {"final_task_loss", last.task_loss},
        {"final_model_size_mb", last.model_size_mb},
        {"true_bits", report.size.true_bits},
        {"true_size_mb", report.size.true_size_mb},
        {"mean_bits", report.size.mean_bits},
        {"file_bytes", report.packed.size()},
    };
    json tensors = json::array();
    for (const auto& t : report.size.tensors) {
        tensors.push_back(tensor_report_json(t));
    }
    metrics["tensors"] = tensors;

    std::ostringstream curves;
    harness::write_curves_csv(report, curves);
    const auto metrics_path = dir / "metrics.json";
    const auto curves_path = dir / "curves.csv";
    const auto model_path = dir / "model.dfq";
    write_file(metrics_path, metrics.dump(2) + "\n");
    write_file(curves_path, curves.str());
    write_bytes(model_path, report.packed);
    out << metrics_path.string() << '\n' << curves_path.string() << '\n' << model_path.string() << '\n';
    return kExitOk;
}

int run_sweep(const RunConfig& cfg, std::ostream& out)
{
    const auto dir = prepare_dir(cfg.out_dir);
    const auto rows = harness::sweep_lambda(cfg.make_task(), cfg.method_spec(), cfg.sweep.lambdas,
                                            cfg.sweep.group_sizes, cfg.sweep.threads);
    std::ostringstream csv;
    harness::write_sweep_csv(rows, csv);
    json metrics;
    metrics["config"] = cfg.to_json();
    json jrows = json::array();
    for (const auto& r : rows) {
        jrows.push_back({{"lambda", r.lambda},
                         {"group_size", r.group_size},
                         {"accuracy", r.accuracy},
                         {"size_mb", r.size_mb},
                         {"mean_bits", r.mean_bits},
                         {"overhead_bits", r.overhead_bits}});
    }
    metrics["rows"] = jrows;
    const auto csv_path = dir / "sweep.csv";
    const auto metrics_path = dir / "metrics.json";
    write_file(csv_path, csv.str());
    write_file(metrics_path, metrics.dump(2) + "\n");
    out << csv_path.string() << '\n' << metrics_path.string() << '\n';
    return kExitOk;
}

}  // namespace

json model_to_json(const HardenedModel& model)
{
    json tensors = json::array();
    for (const auto& t : model.tensors) {
        json j;
        j["name"] = t.name;
        j["shape"] = t.shape();
        if (t.kind == TensorKind::raw) {
            j["kind"] = "raw";
            j["data"] = t.raw.values();
        } else {
            j["kind"] = "quantized";
            j["group_size"] = t.q.group_size;
            j["b_min"] = t.b_min;
            j["min"] = t.q.scale.min;
            j["max"] = t.q.scale.max;
            j["bits"] = t.q.bits;
            j["indices"] = t.q.indices;
            j["values"] = t.values().values();
        }
        tensors.push_back(std::move(j));
    }
    return {{"tensors", tensors}};
}

HardenedModel model_from_json(const json& j)
{
    HardenedModel model;
    try {
        for (const auto& jt : j.at("tensors")) {
            HardenedTensor t;
            t.name = jt.at("name").get<std::string>();
            const auto shape = jt.at("shape").get<Shape>();
            const auto kind = jt.at("kind").get<std::string>();
            if (kind == "raw") {
                t.kind = TensorKind::raw;
                t.raw = Tensor(shape, jt.at("data").get<std::vector<double>>());
            } else if (kind == "quantized") {
                t.kind = TensorKind::quantized;
                t.b_min = jt.at("b_min").get<int>();
                t.q.shape = shape;
                t.q.group_size = jt.at("group_size").get<std::size_t>();
                t.q.scale = {jt.at("min").get<double>(), jt.at("max").get<double>()};
                t.q.bits = jt.at("bits").get<std::vector<int>>();
                t.q.indices = jt.at("indices").get<std::vector<std::uint32_t>>();
                const std::size_t d = shape_size(shape);
                if (t.q.group_size == 0 || t.q.indices.size() != d ||
                    t.q.bits.size() != quant::num_groups(d, t.q.group_size)) {
                    throw std::invalid_argument("tensor '" + t.name + "': " + std::to_string(t.q.indices.size()) +
                                                " indices and " + std::to_string(t.q.bits.size()) +
                                                " bitwidths do not fit shape " + shape_str(shape));
                }
            } else {
                throw std::invalid_argument("tensor '" + t.name + "': unknown kind '" + kind + "'");
            }
            model.tensors.push_back(std::move(t));
        }
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("model json: ") + e.what());
    }
    return model;
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app("Learned mixed-precision weight quantization toolkit", "diffq");
    app.require_subcommand(1);

    harness::LmsConfig lms;
    std::string lms_method = "ste";
    std::string lms_noise = "uniform";
    std::string lms_out;
    std::optional<std::uint64_t> lms_seed;
    std::optional<double> lms_w0;
    std::size_t lms_tail = 500;
    auto* lms_cmd = app.add_subcommand("lms", "one-dimensional least squares trajectory");
    lms_cmd->add_option("--w-star", lms.w_star, "target weight")->capture_default_str();
    lms_cmd->add_option("--bits", lms.bits, "bitwidth")->capture_default_str();
    lms_cmd->add_option("--lr", lms.lr, "step size")->capture_default_str();
    lms_cmd->add_option("--steps", lms.steps, "iterations")->capture_default_str();
    lms_cmd->add_option("--method", lms_method, "ste | pqn")->capture_default_str();
    lms_cmd->add_option("--noise", lms_noise, "uniform | gaussian (pqn)")->capture_default_str();
    lms_cmd->add_option("--sigma2", lms.sigma2, "E[X^2]")->capture_default_str();
    lms_cmd->add_flag("--stochastic-x", lms.stochastic_x, "sample X per step");
    lms_cmd->add_option("--w0", lms_w0, "initial weight (default w*)");
    lms_cmd->add_option("--seed", lms_seed, "seed (overrides DIFFQ_SEED)");
    lms_cmd->add_option("--tail", lms_tail, "steps used by the oscillation summary")->capture_default_str();
    lms_cmd->add_option("--out", lms_out, "CSV path (stdout if omitted)");

    RunFlags train_flags;
    auto* train_cmd = app.add_subcommand("train", "train the toy MLP and write metrics.json, curves.csv, model.dfq");
    train_flags.attach(*train_cmd);

    RunFlags sweep_flags;
    std::optional<std::vector<double>> sweep_lambdas;
    std::optional<std::vector<std::size_t>> sweep_groups;
    std::optional<unsigned> sweep_threads;
    auto* sweep_cmd = app.add_subcommand("sweep", "train over a lambda x group size grid and write sweep.csv");
    sweep_flags.attach(*sweep_cmd);
    sweep_cmd->add_option("--lambdas", sweep_lambdas, "comma separated penalties")->delimiter(',');
    sweep_cmd->add_option("--group-sizes", sweep_groups, "comma separated group sizes")->delimiter(',');
    sweep_cmd->add_option("--threads", sweep_threads, "worker threads");

    std::string pack_in, pack_out;
    auto* pack_cmd = app.add_subcommand("pack", "serialize a hardened model from JSON");
    pack_cmd->add_option("--in", pack_in, "model JSON")->required();
    pack_cmd->add_option("--out", pack_out, "output .dfq")->required();

    std::string unpack_in, unpack_out;
    auto* unpack_cmd = app.add_subcommand("unpack", "decode a .dfq file to JSON");
    unpack_cmd->add_option("--in", unpack_in, "input .dfq")->required();
    unpack_cmd->add_option("--out", unpack_out, "output JSON (stdout if omitted)");

    std::string inspect_in;
    auto* inspect_cmd = app.add_subcommand("inspect", "size breakdown of a .dfq file");
    inspect_cmd->add_option("--in", inspect_in, "input .dfq")->required();

    std::size_t gc_seeds = 20;
    std::optional<std::uint64_t> gc_first;
    double gc_tolerance = 1e-5;
    std::string gc_noise = "gaussian";
    auto* gc_cmd = app.add_subcommand("gradcheck", "compare autodiff gradients with finite differences");
    gc_cmd->add_option("--seeds", gc_seeds, "number of random problems")->capture_default_str();
    gc_cmd->add_option("--first-seed", gc_first, "first seed (overrides DIFFQ_SEED)");
    gc_cmd->add_option("--tolerance", gc_tolerance, "max relative error")->capture_default_str();
    gc_cmd->add_option("--noise", gc_noise, "gaussian | uniform")->capture_default_str();

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        app.exit(e, out, err);
        return kExitOk;
    } catch (const CLI::CallForAllHelp& e) {
        app.exit(e, out, err);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return kExitUsage;
    }

    try {
        if (lms_cmd->parsed()) {
            if (lms_method == "ste") {
                lms.method = harness::LmsMethod::ste;
            } else if (lms_method == "pqn") {
                lms.method = harness::LmsMethod::pqn;
            } else {
                throw UsageError("--method must be ste or pqn");
            }
            lms.noise = parse_noise(lms_noise);
            if (auto s = env_seed()) {
                lms.seed = *s;
            }
            if (lms_seed) {
                lms.seed = *lms_seed;
            }
            lms.w0 = lms_w0;
            return run_lms_command(lms, lms_out, lms_tail, out);
        }
        if (train_cmd->parsed()) {
            return run_train(train_flags.resolve(), out);
        }
        if (sweep_cmd->parsed()) {
            auto cfg = sweep_flags.resolve();
            if (sweep_lambdas) cfg.sweep.lambdas = *sweep_lambdas;
            if (sweep_groups) cfg.sweep.group_sizes = *sweep_groups;
            if (sweep_threads) cfg.sweep.threads = *sweep_threads;
            return run_sweep(cfg, out);
        }
        if (pack_cmd->parsed()) {
            const auto bytes = read_bytes(pack_in);
            json j;
            try {
                j = json::parse(bytes.begin(), bytes.end());
            } catch (const json::parse_error& e) {
                throw UsageError("'" + pack_in + "': " + e.what());
            }
            write_bytes(pack_out, codec::pack(model_from_json(j)));
            out << pack_out << '\n';
            return kExitOk;
        }
        if (unpack_cmd->parsed()) {
            const auto text = model_to_json(codec::unpack(read_bytes(unpack_in))).dump(2) + "\n";
            if (unpack_out.empty()) {
                out << text;
            } else {
                write_file(unpack_out, text);
                out << unpack_out << '\n';
            }
            return kExitOk;
        }
        if (inspect_cmd->parsed()) {
            out << codec::format_inspection(codec::inspect(read_bytes(inspect_in)));
            return kExitOk;
        }
        if (gc_cmd->parsed()) {
            harness::GradcheckOptions opt;
            opt.noise = parse_noise(gc_noise);
            std::uint64_t first = env_seed().value_or(0);
            if (gc_first) {
                first = *gc_first;
            }
            bool ok = true;
            for (std::size_t k = 0; k < gc_seeds; ++k) {
                const auto r = harness::run_gradcheck(first + k, opt);
                const bool pass = r.max_rel_error < gc_tolerance;
                ok = ok && pass;
                out << "seed=" << r.seed << " max_rel_error=" << harness::fmt_real(r.max_rel_error)
                    << " checked=" << r.checked << " skipped_kinks=" << r.skipped_kinks << " worst="
                    << r.worst.parameter << '[' << r.worst.index << "] " << (pass ? "ok" : "FAIL") << '\n';
            }
            return ok ? kExitOk : kExitRuntime;
        }
    } catch (const UsageError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitUsage;
}

int dispatch(int argc, const char* const* argv)
{
    std::vector<std::string> args(argv + 1, argv + argc);
    return dispatch(args, std::cout, std::cerr);
}

}  // namespace diffq::cli

#include "diffq/cli/run_config.hpp"

#include <fstream>
#include <numeric>
#include <set>
#include <stdexcept>

#include "diffq/harness/dataset.hpp"

namespace diffq::cli {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where)
{
    if (!j.is_object()) {
        throw std::invalid_argument(where + ": expected an object");
    }
    for (const auto& [key, value] : j.items()) {
        if (!known.count(key)) {
            throw std::invalid_argument(where + ": unknown key '" + key + "'");
        }
    }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where)
{
    if (!j.contains(key)) {
        return;
    }
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw std::invalid_argument(where + "." + key + ": " + e.what());
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
    throw std::invalid_argument("noise must be 'uniform' or 'gaussian', got '" + s + "'");
}

DiffqConfig diffq_from_json(const json& j, DiffqConfig c)
{
    reject_unknown(j, {"b_min", "b_max", "b_init", "group_size", "lambda", "noise", "skip_threshold_mb", "logit_lr",
                       "exclude", "fixed_bits"},
                   "diffq");
    read(j, "b_min", c.b_min, "diffq");
    read(j, "b_max", c.b_max, "diffq");
    read(j, "b_init", c.b_init, "diffq");
    read(j, "group_size", c.group_size, "diffq");
    read(j, "lambda", c.lambda, "diffq");
    std::string noise = to_string(c.noise);
    read(j, "noise", noise, "diffq");
    c.noise = parse_noise(noise);
    read(j, "skip_threshold_mb", c.skip_threshold_mb, "diffq");
    read(j, "logit_lr", c.logit_lr, "diffq");
    read(j, "exclude", c.exclude, "diffq");
    if (j.contains("fixed_bits")) {
        if (j.at("fixed_bits").is_null()) {
            c.fixed_bits.reset();
        } else {
            int bits = 0;
            read(j, "fixed_bits", bits, "diffq");
            c.fixed_bits = bits;
        }
    }
    return c;
}

}  // namespace

RunConfig RunConfig::from_json(const json& j)
{
    RunConfig c;
    reject_unknown(j, {"method", "qat_bits", "seed", "out_dir", "diffq", "task", "optimizer", "sweep"}, "config");
    read(j, "method", c.method, "config");
    read(j, "qat_bits", c.qat_bits, "config");
    read(j, "seed", c.seed, "config");
    read(j, "out_dir", c.out_dir, "config");
    if (j.contains("diffq")) {
        c.diffq = diffq_from_json(j.at("diffq"), c.diffq);
    }
    if (j.contains("task")) {
        const auto& t = j.at("task");
        reject_unknown(t, {"dataset", "format", "path", "labels_path", "test_path", "test_labels_path",
                           "test_fraction", "n_train", "n_test", "separation", "data_seed", "hidden", "epochs",
                           "batch_size"},
                       "task");
        read(t, "dataset", c.task.dataset, "task");
        read(t, "format", c.task.format, "task");
        read(t, "path", c.task.path, "task");
        read(t, "labels_path", c.task.labels_path, "task");
        read(t, "test_path", c.task.test_path, "task");
        read(t, "test_labels_path", c.task.test_labels_path, "task");
        read(t, "test_fraction", c.task.test_fraction, "task");
        read(t, "n_train", c.task.n_train, "task");
        read(t, "n_test", c.task.n_test, "task");
        read(t, "separation", c.task.separation, "task");
        read(t, "data_seed", c.task.data_seed, "task");
        read(t, "hidden", c.task.hidden, "task");
        read(t, "epochs", c.task.epochs, "task");
        read(t, "batch_size", c.task.batch_size, "task");
    }
    if (j.contains("optimizer")) {
        const auto& o = j.at("optimizer");
        reject_unknown(o, {"kind", "lr", "momentum", "weight_decay", "decay_factor", "decay_every"}, "optimizer");
        read(o, "kind", c.optimizer.kind, "optimizer");
        read(o, "lr", c.optimizer.lr, "optimizer");
        read(o, "momentum", c.optimizer.momentum, "optimizer");
        read(o, "weight_decay", c.optimizer.weight_decay, "optimizer");
        read(o, "decay_factor", c.optimizer.decay_factor, "optimizer");
        read(o, "decay_every", c.optimizer.decay_every, "optimizer");
    }
    if (j.contains("sweep")) {
        const auto& s = j.at("sweep");
        reject_unknown(s, {"lambdas", "group_sizes", "threads"}, "sweep");
        read(s, "lambdas", c.sweep.lambdas, "sweep");
        read(s, "group_sizes", c.sweep.group_sizes, "sweep");
        read(s, "threads", c.sweep.threads, "sweep");
    }
    c.parsed_method();
    c.diffq.validate();
    return c;
}

json RunConfig::to_json() const
{
    json j;
    j["method"] = method;
    j["qat_bits"] = qat_bits;
    j["seed"] = seed;
    j["out_dir"] = out_dir;
    j["diffq"] = {
        {"b_min", diffq.b_min},
        {"b_max", diffq.b_max},
        {"b_init", diffq.b_init},
        {"group_size", diffq.group_size},
        {"lambda", diffq.lambda},
        {"noise", to_string(diffq.noise)},
        {"skip_threshold_mb", diffq.skip_threshold_mb},
        {"logit_lr", diffq.logit_lr},
        {"exclude", diffq.exclude},
        {"fixed_bits", diffq.fixed_bits ? json(*diffq.fixed_bits) : json(nullptr)},
    };
    j["task"] = {
        {"dataset", task.dataset},
        {"format", task.format},
        {"path", task.path},
        {"labels_path", task.labels_path},
        {"test_path", task.test_path},
        {"test_labels_path", task.test_labels_path},
        {"test_fraction", task.test_fraction},
        {"n_train", task.n_train},
        {"n_test", task.n_test},
        {"separation", task.separation},
        {"data_seed", task.data_seed},
        {"hidden", task.hidden},
        {"epochs", task.epochs},
        {"batch_size", task.batch_size},
    };
    j["optimizer"] = {
        {"kind", optimizer.kind},
        {"lr", optimizer.lr},
        {"momentum", optimizer.momentum},
        {"weight_decay", optimizer.weight_decay},
        {"decay_factor", optimizer.decay_factor},
        {"decay_every", optimizer.decay_every},
    };
    j["sweep"] = {
        {"lambdas", sweep.lambdas},
        {"group_sizes", sweep.group_sizes},
        {"threads", sweep.threads},
    };
    return j;
}

Method RunConfig::parsed_method() const
{
    if (method == "diffq") {
        return Method::pqn;
    }
    if (method == "qat") {
        return Method::qat;
    }
    if (method == "fp32") {
        return Method::fp32;
    }
    throw std::invalid_argument("method must be 'diffq', 'qat' or 'fp32', got '" + method + "'");
}

harness::MethodSpec RunConfig::method_spec() const
{
    harness::MethodSpec spec;
    spec.method = parsed_method();
    spec.qat_bits = qat_bits;
    spec.diffq = diffq;
    return spec;
}

harness::ToyTask RunConfig::make_task() const
{
    harness::ToyTask t;
    if (task.dataset == "blobs") {
        t = harness::make_blobs_task(task.n_train, task.n_test, task.separation, task.data_seed);
    } else if (task.dataset == "file") {
        const auto format = task.format == "idx" ? harness::DataFormat::idx : harness::DataFormat::csv;
        if (task.format != "idx" && task.format != "csv") {
            throw std::invalid_argument("task.format must be 'csv' or 'idx'");
        }
        auto all = harness::load_dataset(task.path, format, task.labels_path);
        if (!task.test_path.empty()) {
            t.train = std::move(all);
            t.test = harness::load_dataset(task.test_path, format, task.test_labels_path);
        } else {
            if (!(task.test_fraction >= 0.0 && task.test_fraction < 1.0)) {
                throw std::invalid_argument("task.test_fraction must lie in [0, 1)");
            }
            std::vector<std::size_t> order(all.size());
            std::iota(order.begin(), order.end(), 0);
            Rng rng(task.data_seed);
            for (std::size_t i = order.size(); i > 1; --i) {
                std::swap(order[i - 1], order[rng.next_below(i)]);
            }
            const auto n_test = static_cast<std::size_t>(task.test_fraction * static_cast<double>(all.size()));
            const auto n_train = all.size() - n_test;
            t.train = all.subset(std::span(order).first(n_train));
            t.test = n_test ? all.subset(std::span(order).subspan(n_train)) : t.train;
        }
    } else {
        throw std::invalid_argument("task.dataset must be 'blobs' or 'file', got '" + task.dataset + "'");
    }
    t.hidden = task.hidden;
    t.epochs = task.epochs;
    t.batch_size = task.batch_size;
    t.seed = seed;
    t.optimizer = optimizer;
    return t;
}

RunConfig load_run_config(const std::string& path)
{
    std::ifstream in(path);
    if (!in) {
        throw std::invalid_argument("cannot open config file '" + path + "'");
    }
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw std::invalid_argument("config file '" + path + "': " + e.what());
    }
    return RunConfig::from_json(j);
}

}  // namespace diffq::cli

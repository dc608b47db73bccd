#include "diffq/harness/toy.hpp"

#include <algorithm>
#include <memory>
#include <numeric>
#include <ostream>
#include <thread>

#include "diffq/codec.hpp"
#include "diffq/harness/csv.hpp"
#include "diffq/harness/dataset.hpp"

namespace diffq::harness {

namespace {

std::unique_ptr<optim::Optimizer> make_optimizer(const OptimizerSettings& s)
{
    if (s.kind == "sgd") {
        return std::make_unique<optim::Sgd>(s.lr, s.momentum, s.weight_decay);
    }
    if (s.kind == "adam") {
        return std::make_unique<optim::Adam>(s.lr);
    }
    throw std::invalid_argument("unknown optimizer '" + s.kind + "'");
}

}  // namespace

ToyTask make_blobs_task(std::size_t n_train, std::size_t n_test, double separation, std::uint64_t data_seed)
{
    ToyTask task;
    task.train = make_blobs(n_train, separation, data_seed);
    task.test = make_blobs(n_test, separation, data_seed + 1);
    return task;
}

RunReport train_toy(const ToyTask& task, const MethodSpec& spec)
{
    if (task.train.size() == 0 || task.batch_size == 0 || task.epochs < 0) {
        throw std::invalid_argument("train_toy: need a non-empty training set, batch size >= 1 and epochs >= 0");
    }
    std::vector<std::size_t> widths{task.train.num_features()};
    widths.insert(widths.end(), task.hidden.begin(), task.hidden.end());
    widths.push_back(static_cast<std::size_t>(
        std::max({task.train.num_classes(), task.test.size() ? task.test.num_classes() : 0, 2})));

    Rng init_rng(task.seed);
    ParameterStore store;
    Mlp model(widths, store, init_rng);
    DiffQuantizer quantizer(store, spec.diffq, spec.method, spec.qat_bits, task.seed ^ 0x5DEECE66Dull);

    auto weight_opt = make_optimizer(task.optimizer);
    optim::Adam logit_opt(spec.diffq.logit_lr);
    Rng shuffle_rng(task.seed + 1);

    RunReport report;
    report.spec = spec;
    std::vector<std::size_t> order(task.train.size());
    std::iota(order.begin(), order.end(), 0);
    long step = 0;
    for (int epoch = 0; epoch < task.epochs; ++epoch) {
        weight_opt->set_lr(optim::step_decay(task.optimizer.lr, task.optimizer.decay_factor,
                                             task.optimizer.decay_every, epoch));
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[shuffle_rng.next_below(i)]);
        }
        EpochRecord rec{epoch, 0.0, 0.0, 0.0};
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += task.batch_size) {
            const std::size_t end = std::min(order.size(), start + task.batch_size);
            const Dataset batch = task.train.subset(std::span(order).subspan(start, end - start));
            auto loss = [&](ad::Tape& tape, DiffQuantizer& q) {
                auto logits = model.forward(tape, tape.constant(batch.features), [&](std::size_t id) {
                    return q.read(id);
                });
                return ad::softmax_cross_entropy(tape, logits, batch.labels);
            };
            StepResult r;
            try {
                r = diffq_train_step(quantizer, loss, *weight_opt, logit_opt, step++);
            } catch (const TrainingDiverged& e) {
                throw TrainingDiverged(e.step(), "epoch " + std::to_string(epoch) + ": " + e.what());
            }
            rec.task_loss += r.task_loss;
            rec.penalty += r.penalty;
            ++batches;
        }
        rec.task_loss /= static_cast<double>(batches);
        rec.penalty /= static_cast<double>(batches);
        rec.model_size_mb = quantizer.model_size_mb();
        report.history.push_back(rec);
    }

    report.float_accuracy = accuracy(model, store, task.test);
    report.hardened = quantizer.harden();
    ParameterStore deployed = store;
    for (std::size_t id = 0; id < store.size(); ++id) {
        deployed.value(id) = report.hardened.tensors[id].values();
    }
    report.accuracy = accuracy(model, deployed, task.test);
    report.size = describe(report.hardened);
    report.packed = codec::pack(report.hardened);
    return report;
}

std::vector<SweepRow> sweep_lambda(const ToyTask& task, const MethodSpec& base, const std::vector<double>& lambdas,
                                   const std::vector<std::size_t>& group_sizes, unsigned threads)
{
    if (lambdas.empty() || group_sizes.empty()) {
        throw std::invalid_argument("sweep_lambda: need at least one lambda and one group size");
    }
    struct Cell {
        double lambda;
        std::size_t g;
    };
    std::vector<Cell> cells;
    for (double lambda : lambdas) {
        for (std::size_t g : group_sizes) {
            cells.push_back({lambda, g});
        }
    }
    std::sort(cells.begin(), cells.end(), [](const Cell& a, const Cell& b) {
        return a.lambda != b.lambda ? a.lambda < b.lambda : a.g < b.g;
    });

    std::vector<SweepRow> rows(cells.size());
    std::vector<std::exception_ptr> errors(cells.size());
    auto run_cell = [&](std::size_t i) {
        try {
            MethodSpec spec = base;
            spec.method = Method::pqn;
            spec.diffq.lambda = cells[i].lambda;
            spec.diffq.group_size = cells[i].g;
            const auto report = train_toy(task, spec);
            SweepRow row{cells[i].lambda, cells[i].g, report.accuracy, report.size.true_size_mb,
                         report.size.mean_bits, 0};
            for (const auto& t : report.size.tensors) {
                row.overhead_bits += t.code_overhead_bits;
            }
            rows[i] = row;
        } catch (...) {
            errors[i] = std::current_exception();
        }
    };

    const unsigned workers = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(cells.size())));
    if (workers == 1) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            run_cell(i);
        }
    } else {
        std::vector<std::thread> pool;
        for (unsigned w = 0; w < workers; ++w) {
            pool.emplace_back([&, w] {
                for (std::size_t i = w; i < cells.size(); i += workers) {
                    run_cell(i);
                }
            });
        }
        for (auto& t : pool) {
            t.join();
        }
    }
    for (auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
    return rows;
}

void write_sweep_csv(const std::vector<SweepRow>& rows, std::ostream& os)
{
    os << "lambda,g,acc,size_mb,mean_bits\n";
    for (const auto& r : rows) {
        os << fmt_real(r.lambda) << ',' << r.group_size << ',' << fmt_real(r.accuracy) << ',' << fmt_real(r.size_mb)
           << ',' << fmt_real(r.mean_bits) << '\n';
    }
}

void write_curves_csv(const RunReport& report, std::ostream& os)
{
    os << "epoch,task_loss,penalty,model_size_mb\n";
    for (const auto& r : report.history) {
        os << r.epoch << ',' << fmt_real(r.task_loss) << ',' << fmt_real(r.penalty) << ','
           << fmt_real(r.model_size_mb) << '\n';
    }
}

}  // namespace diffq::harness

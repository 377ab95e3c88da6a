#pragma once

#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "arrayssl/adam.hpp"
#include "arrayssl/checkpoint.hpp"
#include "arrayssl/dsp.hpp"
#include "arrayssl/models.hpp"
#include "arrayssl/rng.hpp"

namespace arrayssl {

// ---------------------------------------------------------------------------
// Configuration and run records
// ---------------------------------------------------------------------------

struct TrainConfig {
    int64_t batch_size = 16;
    double initial_lr = 0.001;        // 0.01 for the transfer stage
    int early_stop_patience = 30;     // epochs without a new best before stopping
    int plateau_patience = 10;        // epochs without a new best before an LR drop
    double lr_factor = 0.1;
    double val_fraction = 0.2;
    uint64_t seed = 0;
    bool freeze_encoder = false;
    double epsilon = 1e-6;            // regression loss offset
    int64_t max_epochs = 1000000;     // hard cap so unattended runs stay bounded
};

inline void validate_train_config(const TrainConfig& cfg) {
    if (cfg.batch_size < 1) throw ValueError("TrainConfig: batch_size must be >= 1");
    if (!(cfg.initial_lr > 0)) throw ValueError("TrainConfig: initial_lr must be > 0");
    if (cfg.early_stop_patience < 1 || cfg.plateau_patience < 1)
        throw ValueError("TrainConfig: patiences must be >= 1");
    if (!(cfg.lr_factor > 0) || cfg.lr_factor > 1)
        throw ValueError("TrainConfig: lr_factor must be in (0, 1]");
    if (!(cfg.val_fraction > 0) || !(cfg.val_fraction < 1))
        throw ValueError("TrainConfig: val_fraction must be in (0, 1)");
    if (!(cfg.epsilon > 0)) throw ValueError("TrainConfig: epsilon must be > 0");
    if (cfg.max_epochs < 1) throw ValueError("TrainConfig: max_epochs must be >= 1");
}

struct EpochRecord {
    int64_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double val_loss = 0.0;
    double lr = 0.0;       // rate in effect during this epoch's updates
    bool saved = false;    // new best validation loss -> checkpoint written
};

struct TrainResult {
    Checkpoint best;
    std::vector<EpochRecord> records;
    double initial_val_loss = 0.0;  // untrained model, before the first epoch
    double best_val_loss = 0.0;
    int64_t best_epoch = 0;
};

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

inline Tensor mse_loss(const Tensor& recon, const Tensor& target) {
    return mse(recon, target);
}

// Log-ratio regression loss over occupied bins only: for each example,
// sum over {i : B_i != 0} of (log B_i - log(eps + B_hat_i))^2, averaged over
// the batch. Gradient flows solely through the selected bins of the
// prediction. An example whose target is entirely zero contributes 0 and is
// reported on stderr.
inline Tensor bandwidth_loss(const Tensor& b, const Tensor& b_hat, double epsilon = 1e-6) {
    detail::check_same_shape(b, b_hat, "bandwidth_loss");
    if (!(epsilon > 0)) throw ValueError("bandwidth_loss: epsilon must be > 0");
    if (b.ndim() < 1 || b.ndim() > 2)
        throw ShapeError("bandwidth_loss: expected [F] or [N,F], got " + shape_str(b.shape()));
    const int64_t n_examples = b.ndim() == 2 ? b.dim(0) : 1;
    const int64_t f_bins = b.ndim() == 2 ? b.dim(1) : b.dim(0);
    const float* pb = b.data();
    const float* ph = b_hat.data();

    double acc = 0.0;
    for (int64_t e = 0; e < n_examples; ++e) {
        bool any = false;
        for (int64_t i = 0; i < f_bins; ++i) {
            const int64_t k = e * f_bins + i;
            if (pb[k] == 0.0f) continue;
            if (pb[k] < 0.0f)
                throw ValueError("bandwidth_loss: negative target bin " + std::to_string(i));
            const double arg = epsilon + static_cast<double>(ph[k]);
            if (!(arg > 0.0))
                throw ValueError("bandwidth_loss: prediction at bin " + std::to_string(i) +
                                 " is not above -epsilon");
            const double d = std::log(static_cast<double>(pb[k])) - std::log(arg);
            acc += d * d;
            any = true;
        }
        if (!any)
            std::cerr << "bandwidth_loss: warning: example " << e
                      << " has no occupied bins and contributes zero loss\n";
    }
    acc /= static_cast<double>(n_examples);

    auto out = detail::new_node({});
    out->value[0] = static_cast<float>(acc);
    out->scalar_hi = acc;
    if (detail::track({&b_hat})) {
        TensorNode* hn = b_hat.node().get();
        TensorNode* bn = b.node().get();
        TensorNode* on = out.get();
        detail::record(out, {b_hat.node()}, [hn, bn, on, n_examples, f_bins, epsilon] {
            const float g = on->grad[0];
            for (int64_t e = 0; e < n_examples; ++e) {
                for (int64_t i = 0; i < f_bins; ++i) {
                    const int64_t k = e * f_bins + i;
                    if (bn->value[k] == 0.0f) continue;
                    const double arg = epsilon + static_cast<double>(hn->value[k]);
                    const double d = std::log(static_cast<double>(bn->value[k])) -
                                     std::log(arg);
                    hn->grad[k] += static_cast<float>(
                        static_cast<double>(g) * (-2.0 * d / arg) /
                        static_cast<double>(n_examples));
                }
            }
        });
    }
    return Tensor(out);
}

// ---------------------------------------------------------------------------
// Dataset handling
// ---------------------------------------------------------------------------

// Deterministic disjoint index split; validation takes round(n * fraction).
inline std::pair<std::vector<int64_t>, std::vector<int64_t>> split_indices(
    int64_t n, double val_fraction, uint64_t seed) {
    if (n < 2) throw ValueError("split_indices: need at least 2 examples");
    if (!(val_fraction > 0) || !(val_fraction < 1))
        throw ValueError("split_indices: val_fraction must be in (0, 1)");
    std::vector<int64_t> idx(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
    Rng rng(mix_seed(seed, 0x5b17));
    rng.shuffle(idx);
    const int64_t n_val = std::llround(static_cast<double>(n) * val_fraction);
    std::vector<int64_t> val(idx.begin(), idx.begin() + n_val);
    std::vector<int64_t> train(idx.begin() + n_val, idx.end());
    return {std::move(train), std::move(val)};
}

template <class T>
std::pair<std::vector<T>, std::vector<T>> split_dataset(const std::vector<T>& examples,
                                                        double val_fraction, uint64_t seed) {
    auto [train_idx, val_idx] =
        split_indices(static_cast<int64_t>(examples.size()), val_fraction, seed);
    std::pair<std::vector<T>, std::vector<T>> out;
    for (int64_t i : train_idx) out.first.push_back(examples[static_cast<size_t>(i)]);
    for (int64_t i : val_idx) out.second.push_back(examples[static_cast<size_t>(i)]);
    return out;
}

// STFT + standardization for every frame: the common front end of both
// training stages.
inline std::vector<Tensor> prepare_standardized_examples(const std::vector<IqFrame>& frames,
                                                         int64_t t_steps, int64_t f_bins) {
    std::vector<Tensor> out;
    out.reserve(frames.size());
    for (const IqFrame& f : frames) out.push_back(standardize(frame_to_stft(f, t_steps, f_bins)));
    return out;
}

namespace detail {

// Stack same-shaped examples into one [B, ...] batch tensor.
inline Tensor stack_examples(const std::vector<Tensor>& examples,
                             const std::vector<int64_t>& picks) {
    if (picks.empty()) throw ValueError("stack_examples: empty batch");
    const Shape& base = examples[static_cast<size_t>(picks[0])].shape();
    Shape out_shape;
    out_shape.push_back(static_cast<int64_t>(picks.size()));
    out_shape.insert(out_shape.end(), base.begin(), base.end());
    std::vector<float> data;
    data.reserve(static_cast<size_t>(numel(out_shape)));
    for (int64_t p : picks) {
        const Tensor& t = examples[static_cast<size_t>(p)];
        if (t.shape() != base)
            throw ShapeError("stack_examples: mixed shapes " + shape_str(base) + " vs " +
                             shape_str(t.shape()));
        data.insert(data.end(), t.values().begin(), t.values().end());
    }
    return Tensor::from_data(std::move(out_shape), std::move(data));
}

inline std::vector<int64_t> iota_indices(size_t n) {
    std::vector<int64_t> idx(n);
    for (size_t i = 0; i < n; ++i) idx[i] = static_cast<int64_t>(i);
    return idx;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Plateau scheduler / early stopping
// ---------------------------------------------------------------------------

// Validation-driven schedule: a strict new minimum saves a checkpoint and
// resets the counter; otherwise the counter grows, stopping once it reaches
// early_stop_patience (checked first) and dropping the LR by lr_factor each
// time another plateau_patience epochs pass without improvement.
struct PlateauScheduler {
    double lr;
    int early_stop_patience;
    int plateau_patience;
    double lr_factor;
    double best = std::numeric_limits<double>::infinity();
    int counter = 0;

    struct Decision {
        bool improved = false;  // save a checkpoint this epoch
        bool stop = false;      // halt after this epoch
        bool dropped = false;   // lr was reduced for subsequent epochs
        double lr_after = 0.0;
    };

    PlateauScheduler(double initial_lr, int stop_patience, int drop_patience, double factor)
        : lr(initial_lr),
          early_stop_patience(stop_patience),
          plateau_patience(drop_patience),
          lr_factor(factor) {}

    Decision observe(double val_loss) {
        Decision d;
        if (val_loss < best) {
            best = val_loss;
            counter = 0;
            d.improved = true;
        } else {
            ++counter;
            if (counter >= early_stop_patience) {
                d.stop = true;
            } else if (counter % plateau_patience == 0) {
                lr *= lr_factor;
                d.dropped = true;
            }
        }
        d.lr_after = lr;
        return d;
    }
};

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct EvalResult {
    double mean_loss = 0.0;
    std::vector<double> per_example;

    double best_case() const {
        if (per_example.empty()) throw ValueError("best_case: empty evaluation");
        double m = per_example[0];
        for (double v : per_example) m = std::min(m, v);
        return m;
    }
};

// Reconstruction error of the in-painting model on pre-corrupted pairs.
inline EvalResult evaluate_inpaint(InpaintNet& net, const std::vector<Tensor>& inputs,
                                   const std::vector<Tensor>& targets) {
    if (inputs.empty() || inputs.size() != targets.size())
        throw ValueError("evaluate_inpaint: empty or mismatched dataset");
    NoGradGuard no_grad;
    EvalResult res;
    double acc = 0.0;
    for (size_t i = 0; i < inputs.size(); ++i) {
        Tensor x = detail::stack_examples(inputs, {static_cast<int64_t>(i)});
        Tensor y = detail::stack_examples(targets, {static_cast<int64_t>(i)});
        const double loss = mse(net.forward(x, false).second, y).item_hi();
        res.per_example.push_back(loss);
        acc += loss;
    }
    res.mean_loss = acc / static_cast<double>(res.per_example.size());
    return res;
}

// Regression loss of the bandwidth model on (example, target) pairs.
inline EvalResult evaluate_bandwidth(BandwidthNet& net, const std::vector<Tensor>& inputs,
                                     const std::vector<Tensor>& targets, double epsilon) {
    if (inputs.empty() || inputs.size() != targets.size())
        throw ValueError("evaluate_bandwidth: empty or mismatched dataset");
    NoGradGuard no_grad;
    EvalResult res;
    double acc = 0.0;
    for (size_t i = 0; i < inputs.size(); ++i) {
        Tensor x = detail::stack_examples(inputs, {static_cast<int64_t>(i)});
        Tensor bhat = squeeze(net.forward(x, false), 0);
        const double loss = bandwidth_loss(targets[i], bhat, epsilon).item_hi();
        res.per_example.push_back(loss);
        acc += loss;
    }
    res.mean_loss = acc / static_cast<double>(res.per_example.size());
    return res;
}

// ---------------------------------------------------------------------------
// Training loops
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::vector<int64_t>> make_batches(std::vector<int64_t> order,
                                                      int64_t batch_size) {
    std::vector<std::vector<int64_t>> batches;
    for (size_t i = 0; i < order.size(); i += static_cast<size_t>(batch_size)) {
        const size_t end = std::min(order.size(), i + static_cast<size_t>(batch_size));
        batches.emplace_back(order.begin() + static_cast<int64_t>(i),
                             order.begin() + static_cast<int64_t>(end));
    }
    return batches;
}

inline void require_finite_loss(double loss, int64_t epoch, size_t batch) {
    if (!std::isfinite(loss))
        throw NumericError("non-finite training loss in epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(batch));
}

// One optimizer update, with the owning epoch/batch attached to any
// non-finite-gradient rejection.
inline void guarded_adam_step(std::vector<Tensor>& params, AdamState& opt, int64_t epoch,
                              size_t batch) {
    try {
        adam_step(params, opt);
    } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " (epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(batch) + ")");
    }
}

}  // namespace detail

// Self-supervised pretraining: per epoch, every selected example gets a
// freshly drawn masked antenna; validation pairs are corrupted once with a
// run-fixed seed so the loss stays comparable across epochs.
inline TrainResult pretrain_loop(InpaintNet& net, const std::vector<Tensor>& examples,
                                 const TrainConfig& cfg) {
    validate_train_config(cfg);
    auto [train_idx, val_idx] =
        split_indices(static_cast<int64_t>(examples.size()), cfg.val_fraction, cfg.seed);
    if (val_idx.empty()) throw ValueError("pretrain_loop: validation split is empty");
    if (train_idx.empty()) throw ValueError("pretrain_loop: training split is empty");
    const int64_t antennas = examples[0].dim(0) / 2;

    // fixed validation corruption
    std::vector<Tensor> val_inputs, val_targets;
    {
        Rng val_rng(mix_seed(cfg.seed, 0x7a1));
        for (int64_t i : val_idx) {
            MaskedExample m = mask_channels(examples[static_cast<size_t>(i)],
                                            random_antenna(val_rng, antennas));
            val_inputs.push_back(m.input);
            val_targets.push_back(m.target);
        }
    }

    std::vector<Tensor> params = trainable_params(net);
    AdamState opt;
    opt.lr = cfg.initial_lr;
    PlateauScheduler sched(cfg.initial_lr, cfg.early_stop_patience, cfg.plateau_patience,
                           cfg.lr_factor);

    TrainResult result;
    result.initial_val_loss = evaluate_inpaint(net, val_inputs, val_targets).mean_loss;

    for (int64_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        Rng epoch_rng(mix_seed(cfg.seed, 0x10000 + static_cast<uint64_t>(epoch)));
        std::vector<int64_t> order = train_idx;
        epoch_rng.shuffle(order);
        const auto batches = detail::make_batches(order, cfg.batch_size);

        double train_acc = 0.0;
        for (size_t b = 0; b < batches.size(); ++b) {
            std::vector<Tensor> ins, tgts;
            for (int64_t i : batches[b]) {
                MaskedExample m = mask_channels(examples[static_cast<size_t>(i)],
                                                random_antenna(epoch_rng, antennas));
                ins.push_back(m.input);
                tgts.push_back(m.target);
            }
            Tensor x = detail::stack_examples(ins, detail::iota_indices(ins.size()));
            Tensor y = detail::stack_examples(tgts, detail::iota_indices(tgts.size()));
            zero_grads(params);
            Tensor loss = mse_loss(net.forward(x, true).second, y);
            detail::require_finite_loss(loss.item_hi(), epoch, b);
            loss.backward();
            opt.lr = sched.lr;
            detail::guarded_adam_step(params, opt, epoch, b);
            train_acc += loss.item_hi();
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = train_acc / static_cast<double>(batches.size());
        rec.lr = sched.lr;
        rec.val_loss = evaluate_inpaint(net, val_inputs, val_targets).mean_loss;
        auto decision = sched.observe(rec.val_loss);
        rec.saved = decision.improved;
        if (decision.improved) {
            result.best = snapshot(
                net, {{"arch", join_lines(net.summarize())},
                      {"stage", "pretrain"},
                      {"in_channels", std::to_string(net.in_channels)},
                      {"width", std::to_string(net.width)},
                      {"epoch", std::to_string(epoch)},
                      {"val_loss", std::to_string(rec.val_loss)},
                      {"seed", std::to_string(cfg.seed)},
                      {"batch_size", std::to_string(cfg.batch_size)},
                      {"initial_lr", std::to_string(cfg.initial_lr)}});
            result.best_val_loss = rec.val_loss;
            result.best_epoch = epoch;
        }
        result.records.push_back(rec);
        if (decision.stop) break;
    }
    return result;
}

// Supervised transfer: inputs are standardized STFT examples, targets the
// per-bin bandwidth vectors; no corruption is applied.
inline TrainResult transfer_loop(BandwidthNet& net, const std::vector<Tensor>& inputs,
                                 const std::vector<Tensor>& targets,
                                 const TrainConfig& cfg) {
    validate_train_config(cfg);
    if (inputs.size() != targets.size())
        throw ValueError("transfer_loop: inputs and targets differ in length");
    auto [train_idx, val_idx] =
        split_indices(static_cast<int64_t>(inputs.size()), cfg.val_fraction, cfg.seed);
    if (val_idx.empty()) throw ValueError("transfer_loop: validation split is empty");
    if (train_idx.empty()) throw ValueError("transfer_loop: training split is empty");

    net.encoder_frozen = cfg.freeze_encoder;
    std::vector<Tensor> val_inputs, val_targets;
    for (int64_t i : val_idx) {
        val_inputs.push_back(inputs[static_cast<size_t>(i)]);
        val_targets.push_back(targets[static_cast<size_t>(i)]);
    }

    std::vector<Tensor> params = trainable_params(net);
    AdamState opt;
    opt.lr = cfg.initial_lr;
    PlateauScheduler sched(cfg.initial_lr, cfg.early_stop_patience, cfg.plateau_patience,
                           cfg.lr_factor);

    TrainResult result;
    result.initial_val_loss =
        evaluate_bandwidth(net, val_inputs, val_targets, cfg.epsilon).mean_loss;

    for (int64_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        Rng epoch_rng(mix_seed(cfg.seed, 0x10000 + static_cast<uint64_t>(epoch)));
        std::vector<int64_t> order = train_idx;
        epoch_rng.shuffle(order);
        const auto batches = detail::make_batches(order, cfg.batch_size);

        double train_acc = 0.0;
        for (size_t b = 0; b < batches.size(); ++b) {
            Tensor x = detail::stack_examples(inputs, batches[b]);
            Tensor y = detail::stack_examples(targets, batches[b]);
            zero_grads(params);
            Tensor loss = bandwidth_loss(y, net.forward(x, true), cfg.epsilon);
            detail::require_finite_loss(loss.item_hi(), epoch, b);
            loss.backward();
            opt.lr = sched.lr;
            detail::guarded_adam_step(params, opt, epoch, b);
            train_acc += loss.item_hi();
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = train_acc / static_cast<double>(batches.size());
        rec.lr = sched.lr;
        rec.val_loss = evaluate_bandwidth(net, val_inputs, val_targets, cfg.epsilon).mean_loss;
        auto decision = sched.observe(rec.val_loss);
        rec.saved = decision.improved;
        if (decision.improved) {
            result.best = snapshot(
                net, {{"arch", join_lines(net.summarize())},
                      {"stage", "transfer"},
                      {"in_channels", std::to_string(net.in_channels)},
                      {"width", std::to_string(net.width)},
                      {"time_steps", std::to_string(net.time_steps)},
                      {"epoch", std::to_string(epoch)},
                      {"val_loss", std::to_string(rec.val_loss)},
                      {"seed", std::to_string(cfg.seed)},
                      {"batch_size", std::to_string(cfg.batch_size)},
                      {"initial_lr", std::to_string(cfg.initial_lr)},
                      {"freeze_encoder", cfg.freeze_encoder ? "1" : "0"}});
            result.best_val_loss = rec.val_loss;
            result.best_epoch = epoch;
        }
        result.records.push_back(rec);
        if (decision.stop) break;
    }
    return result;
}

// ---------------------------------------------------------------------------
// Metrics CSV
// ---------------------------------------------------------------------------

inline void write_metrics_csv(const std::string& path,
                              const std::vector<EpochRecord>& records) {
    std::ofstream out(path);
    if (!out) throw FormatError("write_metrics_csv: cannot open " + path + " for writing");
    out << "epoch,train_loss,val_loss,lr,saved\n";
    out.precision(17);
    for (const EpochRecord& r : records)
        out << r.epoch << ',' << r.train_loss << ',' << r.val_loss << ',' << r.lr << ','
            << (r.saved ? 1 : 0) << '\n';
    if (!out) throw FormatError("write_metrics_csv: write failed for " + path);
}

inline std::vector<EpochRecord> read_metrics_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("read_metrics_csv: cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line != "epoch,train_loss,val_loss,lr,saved")
        throw FormatError(path + ":1: expected header 'epoch,train_loss,val_loss,lr,saved'");
    std::vector<EpochRecord> records;
    int64_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        EpochRecord r;
        char c1, c2, c3, c4;
        int saved = 0;
        if (!(ls >> r.epoch >> c1 >> r.train_loss >> c2 >> r.val_loss >> c3 >> r.lr >> c4 >>
              saved) ||
            c1 != ',' || c2 != ',' || c3 != ',' || c4 != ',' || (saved != 0 && saved != 1))
            throw FormatError(path + ":" + std::to_string(lineno) + ": malformed row '" +
                              line + "'");
        r.saved = saved == 1;
        records.push_back(r);
    }
    return records;
}

}  // namespace arrayssl

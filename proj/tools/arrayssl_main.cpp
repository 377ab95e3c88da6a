// Command-line driver for the full pipeline: synthetic capture generation,
// in-painting pretraining, bandwidth-regression transfer, evaluation, and
// loss-curve plotting.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "arrayssl/checkpoint.hpp"
#include "arrayssl/manifest.hpp"
#include "arrayssl/models.hpp"
#include "arrayssl/svgplot.hpp"
#include "arrayssl/synthgen.hpp"
#include "arrayssl/training.hpp"

namespace {

using namespace arrayssl;

// Exit codes: 0 success, 2 usage/config error, 3 data-format error,
// 4 numerical failure, 1 anything else.
constexpr int kExitUsage = 2;
constexpr int kExitFormat = 3;
constexpr int kExitNumeric = 4;

int64_t meta_int(const Checkpoint& ckpt, const std::string& key) {
    const std::string* v = ckpt.meta(key);
    if (!v) throw ValueError("checkpoint is missing metadata key '" + key + "'");
    return std::stoll(*v);
}

// The uncorrupted STFT examples used by every training/eval stage.
std::vector<Tensor> load_examples(const std::string& data_path, int64_t chunks,
                                  RunManifest& manifest, int64_t* f_bins_out) {
    std::vector<IqFrame> frames = load_rfcap(data_path);
    manifest.add_input(data_path);
    if (chunks < 1) throw ValueError("chunks must be >= 1");
    if (frames[0].samples % chunks != 0)
        throw ValueError("samples (" + std::to_string(frames[0].samples) +
                         ") not divisible by chunks (" + std::to_string(chunks) + ")");
    const int64_t f_bins = frames[0].samples / chunks;
    if (f_bins_out) *f_bins_out = f_bins;
    return prepare_standardized_examples(frames, chunks, f_bins);
}

std::vector<Tensor> load_targets(const std::string& labels_path, int64_t f_bins,
                                 size_t expected, RunManifest& manifest) {
    std::vector<std::vector<BandLabel>> labels = load_rflab(labels_path);
    manifest.add_input(labels_path);
    if (labels.size() != expected)
        throw ValueError("label count " + std::to_string(labels.size()) +
                         " does not match frame count " + std::to_string(expected));
    std::vector<Tensor> targets;
    targets.reserve(labels.size());
    // label indices live on the generation-time bin grid; choosing
    // chunks = samples/bins keeps the analysis grid identical to it
    for (const auto& frame_labels : labels)
        targets.push_back(labels_to_target(frame_labels, f_bins));
    return targets;
}

void print_train_summary(const TrainResult& res) {
    std::cout << "epochs=" << res.records.size() << " initial_val_loss="
              << res.initial_val_loss << " best_val_loss=" << res.best_val_loss
              << " best_epoch=" << res.best_epoch << "\n";
}

// ---------------------------------------------------------------------------
// gen
// ---------------------------------------------------------------------------

struct GenArgs {
    GenConfig cfg;
    std::string out;
};

int cmd_gen(const GenArgs& a) {
    WallClock clock;
    RunManifest manifest;
    manifest.command = "gen";
    manifest.seed = a.cfg.seed;
    manifest.config = {{"frames", std::to_string(a.cfg.frames)},
                       {"antennas", std::to_string(a.cfg.antennas)},
                       {"samples", std::to_string(a.cfg.samples)},
                       {"bins", std::to_string(a.cfg.bins)},
                       {"signals_min", std::to_string(a.cfg.signals_min)},
                       {"signals_max", std::to_string(a.cfg.signals_max)},
                       {"bw_min", std::to_string(a.cfg.bw_min)},
                       {"bw_max", std::to_string(a.cfg.bw_max)},
                       {"snr_min_db", std::to_string(a.cfg.snr_min_db)},
                       {"snr_max_db", std::to_string(a.cfg.snr_max_db)}};

    LabeledCapture cap = make_capture_set(a.cfg);
    const std::string rfcap = a.out + ".rfcap";
    const std::string rflab = a.out + ".rflab";
    save_rfcap(rfcap, cap.frames);
    save_rflab(rflab, cap.labels);
    manifest.outputs = {rfcap, rflab};
    manifest.wall_seconds = clock.seconds();
    save_manifest(a.out + ".manifest.json", manifest);
    std::cout << "wrote " << rfcap << " (" << cap.frames.size() << " frames) and " << rflab
              << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// pretrain
// ---------------------------------------------------------------------------

struct PretrainArgs {
    std::string data, out_ckpt, metrics;
    int64_t chunks = 32;
    TrainConfig cfg;
};

int cmd_pretrain(const PretrainArgs& a) {
    WallClock clock;
    RunManifest manifest;
    manifest.command = "pretrain";
    manifest.seed = a.cfg.seed;
    manifest.config = {{"batch", std::to_string(a.cfg.batch_size)},
                       {"lr", std::to_string(a.cfg.initial_lr)},
                       {"chunks", std::to_string(a.chunks)},
                       {"epochs", std::to_string(a.cfg.max_epochs)}};

    std::vector<Tensor> examples = load_examples(a.data, a.chunks, manifest, nullptr);
    Rng init_rng(mix_seed(a.cfg.seed, 0x1217));
    InpaintNet net(examples[0].dim(0), init_rng);

    TrainResult res = pretrain_loop(net, examples, a.cfg);
    save_checkpoint(a.out_ckpt, res.best);
    write_metrics_csv(a.metrics, res.records);
    print_train_summary(res);

    manifest.outputs = {a.out_ckpt, a.metrics};
    manifest.wall_seconds = clock.seconds();
    save_manifest(a.out_ckpt + ".manifest.json", manifest);
    return 0;
}

// ---------------------------------------------------------------------------
// transfer
// ---------------------------------------------------------------------------

struct TransferArgs {
    std::string data, labels, encoder_ckpt, out_ckpt, metrics;
    bool random_init = false;
    int64_t chunks = 32;
    TrainConfig cfg;
};

int cmd_transfer(const TransferArgs& a) {
    WallClock clock;
    RunManifest manifest;
    manifest.command = "transfer";
    manifest.seed = a.cfg.seed;
    manifest.config = {{"batch", std::to_string(a.cfg.batch_size)},
                       {"lr", std::to_string(a.cfg.initial_lr)},
                       {"chunks", std::to_string(a.chunks)},
                       {"epochs", std::to_string(a.cfg.max_epochs)},
                       {"random_init", a.random_init ? "1" : "0"},
                       {"freeze_encoder", a.cfg.freeze_encoder ? "1" : "0"}};

    int64_t f_bins = 0;
    std::vector<Tensor> examples = load_examples(a.data, a.chunks, manifest, &f_bins);
    std::vector<Tensor> targets =
        load_targets(a.labels, f_bins, examples.size(), manifest);

    // both arms build from the same seed, so the decoder initialization is
    // identical; the pretrained arm then overwrites only the encoder
    Rng init_rng(mix_seed(a.cfg.seed, 0x1217));
    BandwidthNet net(examples[0].dim(0), a.chunks, init_rng);
    if (!a.random_init) {
        Checkpoint donor_ckpt = load_checkpoint(a.encoder_ckpt);
        manifest.add_input(a.encoder_ckpt);
        const std::string* stage = donor_ckpt.meta("stage");
        if (!stage || *stage != "pretrain")
            throw ValueError("--encoder-ckpt must hold a pretraining checkpoint");
        Rng donor_rng(0);
        InpaintNet donor(meta_int(donor_ckpt, "in_channels"), donor_rng,
                         meta_int(donor_ckpt, "width"));
        restore(donor, donor_ckpt);
        transfer_encoder(donor, net, a.cfg.freeze_encoder);
    }

    TrainResult res = transfer_loop(net, examples, targets, a.cfg);
    save_checkpoint(a.out_ckpt, res.best);
    write_metrics_csv(a.metrics, res.records);
    print_train_summary(res);

    manifest.outputs = {a.out_ckpt, a.metrics};
    manifest.wall_seconds = clock.seconds();
    save_manifest(a.out_ckpt + ".manifest.json", manifest);
    return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
    std::string ckpt, data, labels, out_csv;
};

int cmd_eval(const EvalArgs& a) {
    WallClock clock;
    RunManifest manifest;
    manifest.command = "eval";

    Checkpoint ckpt = load_checkpoint(a.ckpt);
    manifest.add_input(a.ckpt);
    const std::string* stage = ckpt.meta("stage");
    if (!stage || *stage != "transfer")
        throw ValueError("eval expects a transfer-stage checkpoint");
    const int64_t chunks = meta_int(ckpt, "time_steps");
    Rng build_rng(0);
    BandwidthNet net(meta_int(ckpt, "in_channels"), chunks, build_rng,
                     meta_int(ckpt, "width"));
    restore(net, ckpt);

    int64_t f_bins = 0;
    std::vector<Tensor> examples = load_examples(a.data, chunks, manifest, &f_bins);
    std::vector<Tensor> targets =
        load_targets(a.labels, f_bins, examples.size(), manifest);

    EvalResult res = evaluate_bandwidth(net, examples, targets, 1e-6);
    std::cout << "mean_loss=" << res.mean_loss << " best_case=" << res.best_case() << "\n";

    std::ofstream out(a.out_csv);
    if (!out) throw FormatError("cannot open " + a.out_csv + " for writing");
    out.precision(17);
    out << "example,loss\n";
    for (size_t i = 0; i < res.per_example.size(); ++i)
        out << i << ',' << res.per_example[i] << '\n';
    out.close();

    manifest.outputs = {a.out_csv};
    manifest.wall_seconds = clock.seconds();
    save_manifest(a.out_csv + ".manifest.json", manifest);
    return 0;
}

// ---------------------------------------------------------------------------
// plot
// ---------------------------------------------------------------------------

struct PlotArgs {
    std::vector<std::string> metrics;
    std::string out;
};

int cmd_plot(const PlotArgs& a) {
    WallClock clock;
    RunManifest manifest;
    manifest.command = "plot";

    std::vector<std::vector<EpochRecord>> runs;
    std::vector<std::string> titles;
    for (const std::string& path : a.metrics) {
        runs.push_back(read_metrics_csv(path));
        manifest.add_input(path);
        titles.push_back(path);
    }
    const std::string svg = render_loss_svg(runs, titles);
    std::ofstream out(a.out, std::ios::binary);
    if (!out) throw FormatError("cannot open " + a.out + " for writing");
    out.write(svg.data(), static_cast<std::streamsize>(svg.size()));
    out.close();

    manifest.outputs = {a.out};
    manifest.wall_seconds = clock.seconds();
    save_manifest(a.out + ".manifest.json", manifest);
    std::cout << "wrote " << a.out << "\n";
    return 0;
}

void add_train_flags(CLI::App* sub, TrainConfig* cfg, int64_t* chunks) {
    sub->add_option("--batch", cfg->batch_size, "Mini-batch size")->capture_default_str();
    sub->add_option("--seed", cfg->seed, "Run seed")->capture_default_str();
    sub->add_option("--epochs", cfg->max_epochs, "Hard epoch cap")->capture_default_str();
    sub->add_option("--patience", cfg->early_stop_patience, "Early-stop patience")
        ->capture_default_str();
    sub->add_option("--plateau", cfg->plateau_patience, "LR-drop patience")
        ->capture_default_str();
    sub->add_option("--val-fraction", cfg->val_fraction, "Validation fraction")
        ->capture_default_str();
    sub->add_option("--chunks", *chunks, "STFT chunk count (time steps)")
        ->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Self-supervised RF array pipeline"};
    app.require_subcommand(1);

    GenArgs gen;
    CLI::App* sub_gen = app.add_subcommand("gen", "Generate a synthetic labeled capture");
    sub_gen->add_option("--frames", gen.cfg.frames, "Number of frames")->required();
    sub_gen->add_option("--antennas", gen.cfg.antennas, "Array size")->capture_default_str();
    sub_gen->add_option("--samples", gen.cfg.samples, "IQ samples per frame")
        ->capture_default_str();
    sub_gen->add_option("--bins", gen.cfg.bins, "Frequency bins")->capture_default_str();
    sub_gen->add_option("--signals-min", gen.cfg.signals_min, "Min signals per frame")
        ->capture_default_str();
    sub_gen->add_option("--signals-max", gen.cfg.signals_max, "Max signals per frame")
        ->capture_default_str();
    sub_gen->add_option("--bw-min", gen.cfg.bw_min, "Min bandwidth in bins")
        ->capture_default_str();
    sub_gen->add_option("--bw-max", gen.cfg.bw_max, "Max bandwidth in bins (0 = bins/2)")
        ->capture_default_str();
    sub_gen->add_option("--snr-min", gen.cfg.snr_min_db, "Min in-band SNR (dB)")
        ->capture_default_str();
    sub_gen->add_option("--snr-max", gen.cfg.snr_max_db, "Max in-band SNR (dB)")
        ->capture_default_str();
    sub_gen->add_option("--seed", gen.cfg.seed, "Generation seed")->capture_default_str();
    sub_gen->add_option("--out", gen.out, "Output basename")->required();

    PretrainArgs pre;
    pre.cfg.initial_lr = 0.001;
    CLI::App* sub_pre = app.add_subcommand("pretrain", "In-painting pretraining");
    sub_pre->add_option("--data", pre.data, "Input .rfcap")->required();
    sub_pre->add_option("--out-ckpt", pre.out_ckpt, "Best checkpoint path")->required();
    sub_pre->add_option("--metrics", pre.metrics, "Metrics CSV path")->required();
    sub_pre->add_option("--lr", pre.cfg.initial_lr, "Initial learning rate")
        ->capture_default_str();
    add_train_flags(sub_pre, &pre.cfg, &pre.chunks);

    TransferArgs tr;
    tr.cfg.initial_lr = 0.01;
    CLI::App* sub_tr = app.add_subcommand("transfer", "Bandwidth-regression transfer");
    sub_tr->add_option("--data", tr.data, "Input .rfcap")->required();
    sub_tr->add_option("--labels", tr.labels, "Input .rflab")->required();
    CLI::Option* enc_opt =
        sub_tr->add_option("--encoder-ckpt", tr.encoder_ckpt, "Pretrained encoder checkpoint");
    CLI::Option* rnd_opt =
        sub_tr->add_flag("--random-init", tr.random_init, "Baseline arm: no encoder transfer");
    enc_opt->excludes(rnd_opt);
    rnd_opt->excludes(enc_opt);
    sub_tr->add_flag("--freeze-encoder", tr.cfg.freeze_encoder,
                     "Exclude the encoder from updates");
    sub_tr->add_option("--out-ckpt", tr.out_ckpt, "Best checkpoint path")->required();
    sub_tr->add_option("--metrics", tr.metrics, "Metrics CSV path")->required();
    sub_tr->add_option("--lr", tr.cfg.initial_lr, "Initial learning rate")
        ->capture_default_str();
    add_train_flags(sub_tr, &tr.cfg, &tr.chunks);

    EvalArgs ev;
    CLI::App* sub_ev = app.add_subcommand("eval", "Evaluate a transfer checkpoint");
    sub_ev->add_option("--ckpt", ev.ckpt, "Transfer checkpoint")->required();
    sub_ev->add_option("--data", ev.data, "Input .rfcap")->required();
    sub_ev->add_option("--labels", ev.labels, "Input .rflab")->required();
    sub_ev->add_option("--out-csv", ev.out_csv, "Per-example losses CSV")->required();

    PlotArgs pl;
    CLI::App* sub_pl = app.add_subcommand("plot", "Render loss curves as SVG");
    sub_pl->add_option("--metrics", pl.metrics, "One or two metrics CSVs")
        ->required()
        ->expected(1, 2);
    sub_pl->add_option("--out", pl.out, "Output SVG path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitUsage;
    }

    try {
        if (sub_gen->parsed()) return cmd_gen(gen);
        if (sub_pre->parsed()) return cmd_pretrain(pre);
        if (sub_tr->parsed()) {
            if (!tr.random_init && tr.encoder_ckpt.empty())
                throw ValueError("transfer needs --encoder-ckpt or --random-init");
            return cmd_transfer(tr);
        }
        if (sub_ev->parsed()) return cmd_eval(ev);
        if (sub_pl->parsed()) return cmd_plot(pl);
        return kExitUsage;
    } catch (const ShapeError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const ValueError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitFormat;
    } catch (const NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

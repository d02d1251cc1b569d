#pragma once

// Command-line front end. `run` parses arguments, dispatches to one
// subcommand and maps errors to exit codes: 0 ok, 1 runtime, 2 usage.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ausynth/condgen.hpp"
#include "ausynth/dataio.hpp"
#include "ausynth/evalharness.hpp"
#include "ausynth/morphable.hpp"

namespace ausynth::cli {

inline constexpr const char* kVersion = "0.1.0";

enum ExitCode : int { kOk = 0, kRuntimeError = 1, kUsageError = 2 };

namespace detail {

namespace fs = std::filesystem;

inline LabeledDataset read_dataset(const fs::path& p) {
    if (fs::is_directory(p)) return load_dataset_binary(p);
    return load_dataset(p);
}

inline void write_dataset(const LabeledDataset& ds, const fs::path& p, const std::string& format) {
    if (format == "binary") {
        save_dataset_binary(ds, p);
    } else {
        if (p.has_parent_path()) blob::ensure_directory(p.parent_path());
        save_dataset(ds, p);
    }
}

inline AUVector parse_label(const std::string& text, std::size_t label_dim) {
    AUVector y;
    for (const std::string& f : ausynth::detail::split_csv(text)) {
        const auto v = ausynth::detail::parse_int(f);
        if (!v || !valid_intensity(static_cast<int>(*v))) throw ConfigError("label entry '" + f + "' is not an intensity in 0..5");
        y.push_back(static_cast<int>(*v));
    }
    if (y.size() != label_dim) {
        throw ConfigError("label has " + std::to_string(y.size()) + " entries, model expects " + std::to_string(label_dim));
    }
    return y;
}

struct LoadedModel {
    std::string kind;
    std::unique_ptr<ExpressionGenerator> generator;
};

inline LoadedModel load_model(const fs::path& dir) {
    const Checkpoint c = load_checkpoint(dir);
    if (c.kind == "cgan") return {c.kind, std::make_unique<CganGenerator>(cgan_from_checkpoint(c))};
    if (c.kind == "caae") return {c.kind, std::make_unique<CaaeGenerator>(caae_from_checkpoint(c))};
    throw ConfigError(dir.string() + ": unknown model kind '" + c.kind + "'");
}

inline void write_text(const fs::path& p, const std::string& text) {
    if (p.has_parent_path()) blob::ensure_directory(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + p.string() + " for writing");
    out << text;
}

/// `<out>.manifest.toml`, next to the primary output.
inline fs::path manifest_path(std::string out) {
    while (out.size() > 1 && (out.back() == '/' || out.back() == '\\')) out.pop_back();
    return fs::path(out + ".manifest.toml");
}

}  // namespace detail

struct TrainOptions {
    std::string data, out, model = "cgan", log;
    std::int64_t iters = 150000;
    std::size_t batch = 64;
    double lr = 1e-5, lambda = 100.0, beta = 10.0, beta1 = 0.9, ema = 0.0;
    bool soft_labels = false, non_saturating = false, shuffled_targets = false, timing = false;
    std::size_t noise_dim = 100, latent_dim = 50, width = 0;
    int d_steps = 1;
};

struct SynthOptions {
    std::string model, out, label, labels, format = "csv";
    std::size_t count = 1;
};

struct AugmentOptions {
    std::string data, model, out, sampler = "uniform", format = "csv";
    std::size_t count = 0;
};

struct EvalOptions {
    std::string train, test, model, out, regressor = "svr";
    double fraction = 0.3;
    int svr_iters = 1500;
};

struct SweepOptions {
    std::string train, test, model, out, regressor = "svr", sampler = "uniform";
    std::vector<double> multiples{1.0, 2.0, 4.0};
    int svr_iters = 1500;
};

struct MeshOptions {
    std::string basis, params, out;
    std::size_t row = 0;
    double scale = 0.0;
};

struct OracleOptions {
    std::string kind = "toy", out, moments, train_out, test_out, format = "csv";
    std::size_t count = 10000;
    std::vector<std::string> test_subjects;
};

struct BasisOptions {
    std::string out;
    std::size_t rings = 16, segments = 24, id_dim = 100, exp_dim = 79, alb_dim = 100;
};

namespace detail {

inline void cmd_train(const TrainOptions& o, std::uint64_t seed, std::ostream& err) {
    const LabeledDataset raw = read_dataset(o.data);
    const NormalizedDataset nd = raw.normalized && raw.bounds ? NormalizedDataset{raw, *raw.bounds} : normalize_params(raw);
    TrainConfig cfg;
    cfg.lr = o.lr;
    cfg.iterations = o.iters;
    cfg.batch = o.batch;
    cfg.lambda = o.lambda;
    cfg.beta = o.beta;
    cfg.seed = seed;
    cfg.soft_labels = o.soft_labels;
    cfg.non_saturating = o.non_saturating;
    cfg.shuffled_targets = o.shuffled_targets;
    cfg.adam_beta1 = o.beta1;
    cfg.generator_ema = o.ema;
    cfg.d_steps = o.d_steps;
    cfg.noise_dim = o.noise_dim;
    cfg.latent_dim = o.latent_dim;
    cfg.record_wall_time = o.timing;
    if (o.width > 0) {
        const std::vector<std::size_t> w{o.width, o.width};
        cfg.cgan_g_hidden = cfg.cgan_d_hidden = cfg.caae_e_hidden = cfg.caae_g_hidden = w;
        cfg.caae_dz_hidden = cfg.caae_dexp_hidden = w;
    }
    cfg.validate();
    const fs::path log_path = o.log.empty() ? fs::path(o.out) / "train_log.csv" : fs::path(o.log);
    blob::ensure_directory(o.out);
    if (log_path.has_parent_path()) blob::ensure_directory(log_path.parent_path());
    std::ofstream log(log_path, std::ios::trunc);
    if (!log) throw IoError("cannot open " + log_path.string() + " for writing");
    TrainHooks hooks{&log, &err, std::max<std::int64_t>(1, o.iters / 20)};
    if (o.model == "cgan") {
        auto r = train_cgan(nd.data, cfg, hooks);
        save_checkpoint(o.out, to_checkpoint(r.model, cfg.iterations, seed));
    } else if (o.model == "caae") {
        auto r = train_caae(nd.data, cfg, hooks);
        save_checkpoint(o.out, to_checkpoint(r.model, cfg.iterations, seed));
    } else {
        throw ConfigError("unknown model '" + o.model + "' (expected cgan or caae)");
    }
}

inline void cmd_synth(const SynthOptions& o, std::uint64_t seed) {
    const LoadedModel m = load_model(o.model);
    const ExpressionGenerator& gen = *m.generator;
    std::vector<AUVector> targets;
    LabeledDataset out;
    out.label_dim = gen.label_dim();
    out.param_dim = gen.param_dim();
    DenseMatrix sources;
    std::vector<std::string> subjects;
    if (!o.labels.empty()) {
        const LabeledDataset ref = read_dataset(o.labels);
        if (ref.label_dim != gen.label_dim() || ref.param_dim != gen.param_dim()) {
            throw ConfigError(o.labels + ": dataset dimensions do not match the model");
        }
        for (const Sample& s : ref.samples) {
            targets.push_back(o.label.empty() ? s.labels : parse_label(o.label, gen.label_dim()));
            subjects.push_back(s.subject);
        }
        sources = ref.param_matrix();
    } else if (!o.label.empty()) {
        if (m.kind == "caae") throw ConfigError("CAAE synthesis needs source parameters (--labels FILE)");
        targets.assign(o.count, parse_label(o.label, gen.label_dim()));
        subjects.assign(o.count, "synth");
        sources = DenseMatrix::Zero(static_cast<Eigen::Index>(o.count), static_cast<Eigen::Index>(gen.param_dim()));
    } else {
        throw ConfigError("synth needs --label or --labels");
    }
    Rng rng(seed);
    const DenseMatrix x = gen.generate(sources, targets, rng);
    for (std::size_t i = 0; i < targets.size(); ++i) {
        out.samples.push_back({subjects[i], targets[i], x.row(static_cast<Eigen::Index>(i)).transpose(), true});
    }
    write_dataset(out, o.out, o.format);
}

inline void cmd_augment(const AugmentOptions& o, std::uint64_t seed) {
    const LabeledDataset train = read_dataset(o.data);
    const LoadedModel m = load_model(o.model);
    write_dataset(augment(train, *m.generator, o.count, label_sampling_from_string(o.sampler), seed), o.out, o.format);
}

inline RegressorConfig regressor_config(const std::string& kind, int iters, std::uint64_t seed) {
    RegressorConfig rc;
    rc.kind = regressor_kind_from_string(kind);
    rc.iterations = iters;
    rc.seed = seed;
    return rc;
}

inline void cmd_eval(const EvalOptions& o, std::uint64_t seed, std::ostream& err) {
    const LabeledDataset train = read_dataset(o.train);
    const LabeledDataset test = read_dataset(o.test);
    const RegressorConfig rc = regressor_config(o.regressor, o.svr_iters, seed);
    std::ostringstream text, csv;
    if (o.model.empty()) {
        const EvalReport rep = evaluate(fit_regressor(train, rc), test);
        write_report_text(text, rep, "real (" + o.regressor + ")");
        write_report_csv(csv, rep, "real");
    } else {
        const LoadedModel m = load_model(o.model);
        ProtocolConfig pc{rc, o.fraction, seed};
        const ProtocolReports reps = real_vs_synthetic_protocol(train, test, *m.generator, pc);
        write_report_text(text, reps.real, "real (" + o.regressor + ")");
        text << '\n';
        write_report_text(text, reps.synthetic, "synthetic " + m.kind + " (" + o.regressor + ")");
        write_report_csv(csv, reps.real, "real");
        write_report_csv(csv, reps.synthetic, "synthetic", false);
    }
    write_text(o.out + ".txt", text.str());
    write_text(o.out + ".csv", csv.str());
    err << text.str();
}

inline void cmd_sweep(const SweepOptions& o, std::uint64_t seed) {
    const LabeledDataset train = read_dataset(o.train);
    const LabeledDataset test = read_dataset(o.test);
    const LoadedModel m = load_model(o.model);
    SweepConfig sc{regressor_config(o.regressor, o.svr_iters, seed), o.multiples, label_sampling_from_string(o.sampler), seed};
    std::ostringstream csv;
    write_sweep_csv(csv, augmentation_sweep(train, test, *m.generator, sc));
    write_text(o.out, csv.str());
}

inline void cmd_mesh(const MeshOptions& o) {
    const MorphBasis basis = load_basis(o.basis);
    Vector x_exp = Vector::Zero(static_cast<Eigen::Index>(basis.exp_dim()));
    if (!o.params.empty()) {
        const LabeledDataset ds = read_dataset(o.params);
        if (o.row >= ds.size()) throw ConfigError(o.params + ": row " + std::to_string(o.row) + " out of range");
        if (ds.param_dim != basis.exp_dim()) throw ConfigError("parameter width does not match the basis expression dimension");
        x_exp = ds.samples[o.row].params;
    }
    const Vector x_id = Vector::Zero(static_cast<Eigen::Index>(basis.id_dim()));
    const Mesh neutral = decode_geometry(basis, x_id, Vector::Zero(x_exp.size()));
    Mesh mesh = decode_geometry(basis, x_id, x_exp);
    const Colormap cm = deformation_colormap(neutral, mesh, o.scale > 0.0 ? std::optional<double>(o.scale) : std::nullopt);
    mesh.colors = cm.colors;
    mesh.scalars = cm.scalars;
    const fs::path p(o.out);
    if (p.has_parent_path()) blob::ensure_directory(p.parent_path());
    export_mesh(mesh, p);
}

inline void cmd_oracle(const OracleOptions& o, std::uint64_t seed) {
    SynthOracleConfig cfg;
    if (o.kind == "toy") cfg = toy_oracle_config(seed, o.count);
    else if (o.kind == "imbalanced") cfg = imbalanced_oracle_config(seed, o.count);
    else if (o.kind == "full") cfg = full_oracle_config(seed, o.count);
    else throw ConfigError("unknown oracle kind '" + o.kind + "' (expected toy, imbalanced or full)");
    const OracleDataset od = synth_oracle_dataset(cfg);
    if (!o.out.empty()) write_dataset(od.data, o.out, o.format);
    if (!o.moments.empty()) write_text(o.moments, oracle_to_json(od.components).dump(2) + "\n");
    if (!o.test_subjects.empty()) {
        if (o.train_out.empty() || o.test_out.empty()) throw ConfigError("--test-subjects needs --train-out and --test-out");
        const DatasetSplit s = split_by_subject(od.data, o.test_subjects);
        write_dataset(s.train, o.train_out, o.format);
        write_dataset(s.test, o.test_out, o.format);
    }
}

inline void cmd_basis(const BasisOptions& o, std::uint64_t seed) {
    save_basis(make_synthetic_basis({o.rings, o.segments, o.id_dim, o.exp_dim, o.alb_dim, seed}), o.out);
}

}  // namespace detail

/// Parses and executes one command. Diagnostics and progress go to `err`,
/// help text to `out`.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"ausynth: AU-conditioned expression parameter synthesis", "ausynth"};
    app.require_subcommand(1);
    app.fallthrough();  // global options may follow the subcommand
    app.set_version_flag("--version", kVersion);
    app.set_config("--config", "", "TOML config file; command-line flags take precedence");
    std::uint64_t seed = 0;
    app.add_option("--seed", seed, "Random seed")->capture_default_str();

    TrainOptions tr;
    auto* train = app.add_subcommand("train", "Train a CGAN or CAAE on a dataset");
    train->add_option("--data", tr.data, "Training dataset")->required();
    train->add_option("--out", tr.out, "Checkpoint directory")->required();
    train->add_option("--model", tr.model, "cgan or caae")->check(CLI::IsMember({"cgan", "caae"}))->capture_default_str();
    train->add_option("--iters", tr.iters, "Training iterations")->check(CLI::PositiveNumber)->capture_default_str();
    train->add_option("--batch", tr.batch, "Batch size")->check(CLI::PositiveNumber)->capture_default_str();
    train->add_option("--lr", tr.lr, "Adam learning rate")->check(CLI::PositiveNumber)->capture_default_str();
    train->add_option("--lambda", tr.lambda, "Reconstruction weight (CAAE)")->check(CLI::NonNegativeNumber)->capture_default_str();
    train->add_option("--beta", tr.beta, "Bound regularizer weight")->check(CLI::NonNegativeNumber)->capture_default_str();
    train->add_flag("--soft-labels", tr.soft_labels, "Train on noise-perturbed labels");
    train->add_option("--beta1", tr.beta1, "Adam first-moment decay")->capture_default_str();
    train->add_option("--ema", tr.ema, "Generator weight averaging decay (CGAN), 0 disables")->capture_default_str();
    train->add_option("--d-steps", tr.d_steps, "Discriminator updates per iteration")->capture_default_str();
    train->add_option("--noise-dim", tr.noise_dim, "CGAN noise width")->capture_default_str();
    train->add_option("--latent-dim", tr.latent_dim, "CAAE latent width")->capture_default_str();
    train->add_option("--width", tr.width, "Hidden width for every sub-network (two layers); 0 keeps the defaults")
        ->capture_default_str();
    train->add_flag("--non-saturating", tr.non_saturating, "Use -log D(fake) for the generator");
    train->add_flag("--shuffled-targets", tr.shuffled_targets, "CAAE: adversary sees shuffled target labels");
    train->add_option("--log", tr.log, "Loss log CSV (default <out>/train_log.csv)");
    train->add_flag("--timing", tr.timing, "Record wall time in the log (breaks bitwise reproducibility)");

    SynthOptions sy;
    auto* synth = app.add_subcommand("synth", "Generate expression parameters from AU labels");
    synth->add_option("--model", sy.model, "Checkpoint directory")->required();
    synth->add_option("--out", sy.out, "Output dataset")->required();
    synth->add_option("--label", sy.label, "Comma-separated intensities, one per AU");
    synth->add_option("--labels", sy.labels, "Dataset supplying labels and (CAAE) source parameters");
    synth->add_option("--count", sy.count, "Samples per label (CGAN)")->capture_default_str();
    synth->add_option("--format", sy.format, "csv or binary")->check(CLI::IsMember({"csv", "binary"}))->capture_default_str();

    AugmentOptions au;
    auto* augment_cmd = app.add_subcommand("augment", "Append synthetic samples to a dataset");
    augment_cmd->add_option("--data", au.data, "Input dataset")->required();
    augment_cmd->add_option("--model", au.model, "Checkpoint directory")->required();
    augment_cmd->add_option("--count", au.count, "Synthetic samples to add")->required();
    augment_cmd->add_option("--out", au.out, "Output dataset")->required();
    augment_cmd->add_option("--sampler", au.sampler, "uniform or inverse-frequency")
        ->check(CLI::IsMember({"uniform", "inverse-frequency"}))
        ->capture_default_str();
    augment_cmd->add_option("--format", au.format, "csv or binary")->check(CLI::IsMember({"csv", "binary"}))->capture_default_str();

    EvalOptions ev;
    auto* eval = app.add_subcommand("eval", "Fit a regressor and report MAE/MSE; with --model, compare real and synthetic");
    eval->add_option("--train", ev.train, "Training dataset")->required();
    eval->add_option("--test", ev.test, "Test dataset")->required();
    eval->add_option("--model", ev.model, "Checkpoint directory for the real-vs-synthetic protocol");
    eval->add_option("--out", ev.out, "Report prefix (.txt and .csv)")->required();
    eval->add_option("--regressor", ev.regressor, "svr or osvr")->check(CLI::IsMember({"svr", "osvr"}))->capture_default_str();
    eval->add_option("--fraction", ev.fraction, "Share of non-neutral training samples used for fitting")->capture_default_str();
    eval->add_option("--svr-iters", ev.svr_iters, "Subgradient iterations")->capture_default_str();

    SweepOptions sw;
    auto* sweep = app.add_subcommand("sweep", "Augmentation sweep over multiples of the minority label count");
    sweep->add_option("--train", sw.train, "Training dataset")->required();
    sweep->add_option("--test", sw.test, "Test dataset")->required();
    sweep->add_option("--model", sw.model, "Checkpoint directory")->required();
    sweep->add_option("--out", sw.out, "Sweep CSV")->required();
    sweep->add_option("--regressor", sw.regressor, "svr or osvr")->check(CLI::IsMember({"svr", "osvr"}))->capture_default_str();
    sweep->add_option("--sampler", sw.sampler, "uniform or inverse-frequency")
        ->check(CLI::IsMember({"uniform", "inverse-frequency"}))
        ->capture_default_str();
    // no captured default: a vector default lands in the manifest as a quoted string
    auto* multiples_opt = sweep->add_option("--multiples", sw.multiples, "Augmentation sizes as multiples of the minority count (default 1,2,4)")
        ->delimiter(',');
    sweep->add_option("--svr-iters", sw.svr_iters, "Subgradient iterations")->capture_default_str();

    MeshOptions me;
    auto* mesh = app.add_subcommand("mesh", "Decode expression parameters to a PLY colored by deformation");
    mesh->add_option("--basis", me.basis, "Basis directory")->required();
    mesh->add_option("--params", me.params, "Dataset holding expression parameters (zeros if omitted)");
    mesh->add_option("--row", me.row, "Row of --params to decode")->capture_default_str();
    mesh->add_option("--scale", me.scale, "Displacement mapped to the bright end; 0 uses the mesh maximum")
        ->capture_default_str();
    mesh->add_option("--out", me.out, "Output PLY")->required();

    OracleOptions orc;
    auto* oracle = app.add_subcommand("oracle", "Write a synthetic Gaussian-mixture benchmark");
    oracle->add_option("--kind", orc.kind, "toy, imbalanced or full")
        ->check(CLI::IsMember({"toy", "imbalanced", "full"}))
        ->capture_default_str();
    oracle->add_option("--count", orc.count, "Sample count")->check(CLI::PositiveNumber)->capture_default_str();
    oracle->add_option("--out", orc.out, "Full dataset");
    oracle->add_option("--moments", orc.moments, "JSON file with the analytic conditional moments");
    oracle->add_option("--test-subjects", orc.test_subjects, "Subjects held out for testing")->delimiter(',');
    oracle->add_option("--train-out", orc.train_out, "Training split");
    oracle->add_option("--test-out", orc.test_out, "Test split");
    oracle->add_option("--format", orc.format, "csv or binary")->check(CLI::IsMember({"csv", "binary"}))->capture_default_str();

    BasisOptions ba;
    auto* basis = app.add_subcommand("basis", "Write a synthetic morphable basis");
    basis->add_option("--out", ba.out, "Basis directory")->required();
    basis->add_option("--rings", ba.rings, "Latitude bands")->capture_default_str();
    basis->add_option("--segments", ba.segments, "Longitude samples")->capture_default_str();
    basis->add_option("--id-dim", ba.id_dim, "Identity components")->capture_default_str();
    basis->add_option("--exp-dim", ba.exp_dim, "Expression components")->capture_default_str();
    basis->add_option("--alb-dim", ba.alb_dim, "Albedo components")->capture_default_str();

    for (auto* sub : app.get_subcommands({})) sub->configurable();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return kUsageError;
    }

    // an empty list round-trips through a manifest as one empty entry
    std::erase(orc.test_subjects, std::string{});
    // record the default multiples as results so the manifest holds them as a list
    if (multiples_opt->count() == 0) {
        std::vector<std::string> defaults;
        for (double m : sw.multiples) defaults.push_back(CLI::detail::to_string(m));
        multiples_opt->add_result(defaults);
    }

    const CLI::App* cmd = app.get_subcommands().front();
    std::string primary_out;
    try {
        if (cmd == train) {
            primary_out = tr.out;
            detail::cmd_train(tr, seed, err);
        } else if (cmd == synth) {
            primary_out = sy.out;
            detail::cmd_synth(sy, seed);
        } else if (cmd == augment_cmd) {
            primary_out = au.out;
            detail::cmd_augment(au, seed);
        } else if (cmd == eval) {
            primary_out = ev.out;
            detail::cmd_eval(ev, seed, err);
        } else if (cmd == sweep) {
            primary_out = sw.out;
            detail::cmd_sweep(sw, seed);
        } else if (cmd == mesh) {
            primary_out = me.out;
            detail::cmd_mesh(me);
        } else if (cmd == oracle) {
            primary_out = !orc.out.empty() ? orc.out : !orc.train_out.empty() ? orc.train_out : orc.moments;
            if (primary_out.empty()) throw ConfigError("oracle needs --out, --moments or a split");
            detail::cmd_oracle(orc, seed);
        } else if (cmd == basis) {
            primary_out = ba.out;
            detail::cmd_basis(ba, seed);
        }
        std::ostringstream manifest;
        manifest << "# ausynth " << kVersion << "\n# command: " << cmd->get_name() << "\n";
        manifest << "seed=" << seed << "\n[" << cmd->get_name() << "]\n" << cmd->config_to_str(true, false);
        detail::write_text(detail::manifest_path(primary_out), manifest.str());
    } catch (const Error& e) {
        err << "ausynth " << cmd->get_name() << ": " << e.what() << '\n';
        return kRuntimeError;
    } catch (const std::exception& e) {
        err << "ausynth " << cmd->get_name() << ": " << e.what() << '\n';
        return kRuntimeError;
    }
    return kOk;
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run(args, out, err);
}

}  // namespace ausynth::cli

#include "meshcal/cli_commands.hpp"

#include <cmath>
#include <cstdio>
#include <iostream>

#include "meshcal/analytic.hpp"
#include "meshcal/emulator.hpp"
#include "meshcal/evaluation.hpp"
#include "meshcal/inverse.hpp"
#include "meshcal/neural.hpp"
#include "meshcal/parallel.hpp"
#include "meshcal/task_sim.hpp"
#include "meshcal/version.hpp"

namespace meshcal::cli {

namespace {

namespace fs = std::filesystem;

/// Collects inputs/outputs with hashes so every result file's
/// provenance can be reconstructed from the manifest alone.
class Manifest {
public:
    Manifest(std::string command, const RunConfig& cfg) {
        j_["command"] = std::move(command);
        j_["version"] = kVersion;
        j_["config"] = cfg.to_json();
        j_["config_hash"] = hash_hex(fnv1a(cfg.canonical_text()));
        j_["inputs"] = json::object();
        j_["outputs"] = json::object();
    }
    void input(const fs::path& p) { j_["inputs"][p.string()] = file_hash_hex(p); }
    void output(const fs::path& p) { j_["outputs"][p.string()] = file_hash_hex(p); }
    void note(const std::string& key, const json& value) { j_[key] = value; }
    void write(const fs::path& out_dir) { save_json(out_dir / "manifest.json", j_); }

private:
    json j_;
};

double round4(double v) {
    return std::round(v * 1e4) / 1e4;
}

std::string require(const RunConfig& cfg, const std::string& key) {
    const std::string v = cfg.get_string(key, "");
    if (v.empty()) throw std::invalid_argument("config: missing required key '" + key + "'");
    return v;
}

void apply_jobs(const RunConfig& cfg) {
    const int jobs = cfg.get_int("jobs", 0);
    if (jobs > 0) set_max_jobs(jobs);
}

ChipGroundTruth chip_from_config(const RunConfig& cfg, Manifest& manifest) {
    const std::string path = cfg.get_string("chip.config", "");
    if (!path.empty()) {
        manifest.input(path);
        return ChipGroundTruth::load(path);
    }
    return ChipGroundTruth::default_chip(cfg.get_u64("chip.seed", cfg.get_u64("seed", 0)));
}

WeightDataset load_dataset(const RunConfig& cfg, const std::string& key, Manifest& manifest) {
    const std::string path = require(cfg, key);
    manifest.input(path);
    return WeightDataset::load_jsonl(path);
}

/// Cuts a dataset down to what a model kind trains/evaluates on:
/// band integration for the multi-wavelength kinds, one channel for
/// the single-wavelength ones.
WeightDataset prepare_for_kind(const WeightDataset& ds, const std::string& kind, const RunConfig& cfg) {
    const bool single = kind == "sam" || kind == "samxt" || kind == "nn-sw";
    const int default_bands = (kind == "nn-lr" || kind == "nn-ls" || kind == "nn-lg" || kind == "tcnn") ? 10 : 0;
    const int bands = cfg.get_int("fit.bands", default_bands);
    WeightDataset out = ds;
    if (bands > 0 && ds.n_lambda() > bands) {
        if (ds.n_lambda() % bands != 0)
            throw std::invalid_argument("fit: channel count not divisible into " + std::to_string(bands) + " bands");
        out = downsample_bands(ds, ds.n_lambda() / bands);
    }
    if (single && out.n_lambda() > 1) {
        const int channel = cfg.get_int("fit.channel", -1);
        out = out.select_channels({channel >= 0 ? channel : out.grid.reference_index});
    }
    return out;
}

/// Matches a dataset to a model's spectral grid for evaluation.
WeightDataset match_model_grid(const WeightDataset& ds, const ForwardModel& model) {
    if (ds.n_lambda() == model.n_lambda()) return ds;
    if (model.n_lambda() == 1) {
        int best = 0;
        double dist = 1e300;
        for (int k = 0; k < ds.n_lambda(); ++k) {
            const double d = std::abs(ds.grid.center_wavelengths_nm[static_cast<std::size_t>(k)] -
                                      model.grid().center_wavelengths_nm[0]);
            if (d < dist) {
                dist = d;
                best = k;
            }
        }
        return ds.select_channels({best});
    }
    if (ds.n_lambda() % model.n_lambda() == 0) return downsample_bands(ds, ds.n_lambda() / model.n_lambda());
    throw std::invalid_argument("evaluate: dataset channels (" + std::to_string(ds.n_lambda()) +
                                ") cannot be matched to the model's (" + std::to_string(model.n_lambda()) + ")");
}

TrainOptions train_options(const RunConfig& cfg) {
    TrainOptions opts;
    opts.seed = cfg.get_u64("fit.seed", cfg.get_u64("seed", 0));
    opts.max_epochs = cfg.get_int("fit.max_epochs", 1000);
    opts.patience = cfg.get_int("fit.patience", 50);
    opts.min_improvement_db = cfg.get_double("fit.min_improvement_db", 0.001);
    opts.lbfgs_memory = cfg.get_int("fit.lbfgs_memory", 10);
    opts.lr_train_channel = cfg.get_int("fit.lr_channel", -1);
    return opts;
}

AnalyticFitOptions analytic_options(const RunConfig& cfg) {
    AnalyticFitOptions opts;
    opts.max_training_points = cfg.get_int("fit.max_training_points", 1000);
    return opts;
}

void write_history_csv(const fs::path& path, const TrainHistory& hist) {
    CsvWriter csv(path, {"epoch", "train_rmse_db", "val_rmse_db"});
    for (std::size_t e = 0; e < hist.val_rmse_db.size(); ++e) {
        const std::string train = e < hist.train_rmse_db.size() ? CsvWriter::num(hist.train_rmse_db[e]) : "";
        csv.row({std::to_string(e), train, CsvWriter::num(hist.val_rmse_db[e])});
    }
}

}  // namespace

int cmd_generate(const RunConfig& cfg, const fs::path& out_dir) {
    apply_jobs(cfg);
    Manifest manifest("generate", cfg);
    ChipGroundTruth chip = chip_from_config(cfg, manifest);
    chip.save(out_dir / "chip.json");
    manifest.output(out_dir / "chip.json");

    const WavelengthGrid grid = WavelengthGrid::itu_cband_100();
    const int bands = cfg.get_int("dataset.bands", 0);
    const bool export_csv = cfg.get_bool("dataset.export_csv", false);

    const auto emit = [&](const WeightDataset& ds, const std::string& stem) {
        ds.save_jsonl(out_dir / (stem + ".jsonl"));
        manifest.output(out_dir / (stem + ".jsonl"));
        manifest.output(out_dir / (stem + ".meta.json"));
        if (bands > 0) {
            const WeightDataset banded = downsample_bands(ds, ds.n_lambda() / bands);
            banded.save_jsonl(out_dir / (stem + "_bands" + std::to_string(bands) + ".jsonl"));
            manifest.output(out_dir / (stem + "_bands" + std::to_string(bands) + ".jsonl"));
        }
        if (export_csv) {
            ds.export_csv(out_dir / (stem + ".csv"));
            manifest.output(out_dir / (stem + ".csv"));
        }
    };

    if (cfg.get_bool("dataset.sweep", true)) emit(generate_sweep_dataset(chip, grid), "sweep");
    const int n_random = cfg.get_int("dataset.n_random", 5100);
    emit(generate_random_dataset(chip, grid, n_random, cfg.get_double("dataset.train_frac", 0.70),
                                 cfg.get_double("dataset.val_frac", 0.15), cfg.get_double("dataset.test_frac", 0.15),
                                 cfg.get_bool("dataset.merge_validation", false)),
         "random");
    manifest.write(out_dir);
    return kExitOk;
}

int cmd_fit(const RunConfig& cfg, const fs::path& out_dir) {
    apply_jobs(cfg);
    Manifest manifest("fit", cfg);
    const std::string kind = require(cfg, "fit.kind");
    const WeightDataset random_full = load_dataset(cfg, "fit.dataset", manifest);

    if (kind == "sam" || kind == "samxt") {
        const WeightDataset sweep_full = load_dataset(cfg, "fit.sweep_dataset", manifest);
        const WeightDataset sweep = prepare_for_kind(sweep_full, "sam", cfg);
        const WeightDataset training = prepare_for_kind(random_full, "sam", cfg).subset("training");
        const AnalyticFitOptions opts = analytic_options(cfg);
        SamFitResult sam = fit_sam(sweep, training, opts);
        json report{{"kind", "sam"},
                    {"stage1_rmse_db", sam.report.stage1_rmse_db},
                    {"stage2_rmse_db", sam.report.stage2_rmse_db},
                    {"warning", sam.report.warning}};
        if (kind == "samxt") {
            // Crosstalk extension always warm-starts from a simple fit;
            // run it here when no prior model was given.
            const std::string sam_path = cfg.get_string("fit.sam_model", "");
            if (!sam_path.empty()) {
                manifest.input(sam_path);
                auto loaded = ForwardModel::load(sam_path);
                auto* p = dynamic_cast<AnalyticMeshModel*>(loaded.get());
                if (!p || p->kind() != "sam") throw std::invalid_argument("fit: fit.sam_model is not a sam model");
                sam.model = *p;
            }
            SamFitResult xt = fit_samxt(sam.model, training, opts);
            report["kind"] = "samxt";
            report["crosstalk_stage_rmse_db"] = xt.report.stage2_rmse_db;
            report["warning"] = sam.report.warning || xt.report.warning;
            xt.model.save(out_dir / "model.json");
        } else {
            sam.model.save(out_dir / "model.json");
        }
        manifest.output(out_dir / "model.json");
        manifest.note("fit_report", report);
        std::cout << report.dump(2) << "\n";
        manifest.write(out_dir);
        return kExitOk;
    }

    if (kind == "sam-lambda") {
        const WeightDataset sweep_full = load_dataset(cfg, "fit.sweep_dataset", manifest);
        const WeightDataset training = random_full.subset("training");
        const PerWavelengthFit fit = fit_sam_per_wavelength(sweep_full, training, analytic_options(cfg));
        {
            CsvWriter csv(out_dir / "phi2_lambda.csv", {"channel", "wavelength_nm", "mzi", "phi2_rad_per_v2"});
            for (std::size_t k = 0; k < fit.wavelengths_nm.size(); ++k)
                for (int m = 0; m < kNumMzi; ++m)
                    csv.row({std::to_string(k), CsvWriter::num(fit.wavelengths_nm[k]), std::to_string(m + 1),
                             CsvWriter::num(fit.phi2_rad_per_v2[k * kNumMzi + static_cast<std::size_t>(m)])});
        }
        {
            CsvWriter csv(out_dir / "phi2_slopes.csv",
                          {"mzi", "slope_per_um_v2", "slope_stderr", "phi2_at_reference", "analytic_slope_per_um_v2"});
            const double lambda_um = sweep_full.grid.reference_nm() * 1e-3;
            for (int m = 0; m < kNumMzi; ++m)
                csv.row({std::to_string(m + 1), CsvWriter::num(fit.slope_per_um_v2[static_cast<std::size_t>(m)]),
                         CsvWriter::num(fit.slope_stderr_per_um_v2[static_cast<std::size_t>(m)]),
                         CsvWriter::num(fit.phi2_at_reference[static_cast<std::size_t>(m)]),
                         CsvWriter::num(-fit.phi2_at_reference[static_cast<std::size_t>(m)] / lambda_um)});
        }
        manifest.output(out_dir / "phi2_lambda.csv");
        manifest.output(out_dir / "phi2_slopes.csv");
        manifest.write(out_dir);
        return kExitOk;
    }

    // Data-driven kinds.
    const SurrogateKind skind = surrogate_kind_from_name(kind);
    const WeightDataset prepared = prepare_for_kind(random_full, kind, cfg);
    const WeightDataset training = prepared.subset("training");
    const WeightDataset validation = prepared.subset(prepared.has_split("validation") ? "validation" : "testing");
    TrainOptions opts = train_options(cfg);
    opts.record_history = true;

    SurrogateArchitecture arch = SurrogateArchitecture::default_for(skind, prepared.n_lambda());
    const std::vector<int> hidden = cfg.get_ints("fit.hidden", {});
    if (!hidden.empty()) arch.hidden = hidden;
    const int budget = cfg.get_int("fit.search_budget", 0);
    if (budget > 0) {
        const SearchResult search =
            hyperparameter_search(skind, budget, training, validation, opts.seed, opts);
        arch = search.best;
        manifest.note("search", json{{"budget", budget}, {"best_val_rmse_db", search.best_val_rmse_db}});
    }
    TrainResult res = train_surrogate(arch, training, validation, opts);
    res.model->save(out_dir / "model.json");
    manifest.output(out_dir / "model.json");
    write_history_csv(out_dir / "history.csv", res.history);
    manifest.output(out_dir / "history.csv");
    json report{{"kind", kind},
                {"epochs", res.history.epochs},
                {"best_epoch", res.history.best_epoch},
                {"best_val_rmse_db", res.model->provenance.value("best_val_rmse_db", 0.0)}};
    manifest.note("fit_report", report);
    std::cout << report.dump(2) << "\n";
    manifest.write(out_dir);
    return kExitOk;
}

int cmd_evaluate(const RunConfig& cfg, const fs::path& out_dir) {
    apply_jobs(cfg);
    Manifest manifest("evaluate", cfg);
    const std::string model_path = require(cfg, "evaluate.model");
    manifest.input(model_path);
    const auto model = ForwardModel::load(model_path);
    const WeightDataset full = load_dataset(cfg, "evaluate.dataset", manifest);
    const WeightDataset ds = match_model_grid(full, *model);
    const std::string split = cfg.get_string("evaluate.split", "testing");

    const PredictionTable table = prediction_table(*model, ds, split);
    const ErrorDistribution errors = evaluate_model(*model, ds, split);
    json metrics{{"kind", model->kind()},    {"split", split},          {"rmse_db", errors.rmse},
                 {"r2", table.r2},           {"min_error_db", errors.min}, {"max_error_db", errors.max},
                 {"n_entries", errors.samples.size()}};
    save_json(out_dir / "metrics.json", metrics);
    manifest.output(out_dir / "metrics.json");
    std::cout << metrics.dump(2) << "\n";
    manifest.write(out_dir);
    return kExitOk;
}

int cmd_sweep(const RunConfig& cfg, const fs::path& out_dir) {
    apply_jobs(cfg);
    Manifest manifest("sweep", cfg);
    const std::string kind = cfg.get_string("sweep.kind", "nn-sw");
    const WeightDataset full = load_dataset(cfg, "sweep.dataset", manifest);
    RunConfig fit_cfg = cfg;  // reuse the fit.* band/channel keys
    const WeightDataset prepared = prepare_for_kind(full, kind, fit_cfg);

    const SurrogateArchitecture arch =
        SurrogateArchitecture::default_for(surrogate_kind_from_name(kind), prepared.n_lambda());
    std::vector<int> sizes = cfg.get_ints(
        "sweep.sizes", default_sweep_sizes(static_cast<int>(prepared.split("training").size())));
    std::vector<std::uint64_t> seeds;
    for (int s : cfg.get_ints("sweep.seeds", {0, 1, 2, 3, 4, 5, 6, 7, 8, 9}))
        seeds.push_back(static_cast<std::uint64_t>(s));
    TrainOptions opts = train_options(cfg);
    opts.max_epochs = cfg.get_int("sweep.max_epochs", opts.max_epochs);

    const SizeSweepReport report = size_seed_sweep(arch, prepared, sizes, seeds, opts);
    report.write_csv(out_dir / "sweep.csv");
    manifest.output(out_dir / "sweep.csv");
    manifest.output(out_dir / "sweep.summary.csv");
    manifest.write(out_dir);
    return kExitOk;
}

int cmd_program(const RunConfig& cfg, const fs::path& out_dir) {
    apply_jobs(cfg);
    Manifest manifest("program", cfg);
    const std::string model_path = require(cfg, "program.model");
    manifest.input(model_path);
    const auto model = ForwardModel::load(model_path);

    ProgramRequest req;
    const std::vector<double> target = cfg.get_doubles("program.target_db", {});
    if (target.size() == 1) {
        req.target_weights_db.fill(target[0]);
    } else if (target.size() == kNumWeights) {
        std::copy(target.begin(), target.end(), req.target_weights_db.begin());
    } else {
        throw std::invalid_argument("program: target_db must have 1 or 9 entries");
    }
    req.channels = cfg.get_ints("program.channels", {});
    req.multistart = cfg.get_int("program.multistart", 8);
    req.seed = cfg.get_u64("program.seed", cfg.get_u64("seed", 0));
    req.unreachable_threshold_db = cfg.get_double("program.threshold_db", 1.0);

    const ProgramResult result = program_voltages(*model, req);
    json volts = json::array();
    for (double v : result.voltages_v) volts.push_back(round4(v));
    json out{{"voltages_v", volts},
             {"residual_rmse_db", result.residual_rmse_db},
             {"reachable", result.reachable},
             {"achieved_db", result.achieved_db},
             {"starts", result.starts_run}};
    save_json(out_dir / "program.json", out);
    manifest.output(out_dir / "program.json");
    std::cout << out.dump(2) << "\n";
    manifest.write(out_dir);
    return result.reachable ? kExitOk : kExitNumerical;
}

int cmd_task(const RunConfig& cfg, const fs::path& out_dir) {
    apply_jobs(cfg);
    Manifest manifest("task", cfg);
    const std::string model_path = require(cfg, "task.model");
    manifest.input(model_path);
    const auto model = ForwardModel::load(model_path);
    const WeightDataset full = load_dataset(cfg, "task.dataset", manifest);
    const WeightDataset ds = match_model_grid(full, *model);
    const ErrorDistribution errors = evaluate_model(*model, ds, cfg.get_string("task.split", "testing"));

    TaskSpec task;
    const std::string kind = cfg.get_string("task.kind", "xor3");
    if (kind == "xor3") task.kind = TaskSpec::Kind::xor3;
    else if (kind == "gauss2d") task.kind = TaskSpec::Kind::gauss2d;
    else throw std::invalid_argument("task: unknown kind " + kind);
    task.realizations = cfg.get_int("task.realizations", 2000);
    const std::uint64_t seed = cfg.get_u64("task.seed", cfg.get_u64("seed", 0));

    const ReferenceTrainResult ref = train_reference(task, seed);
    if (!ref.success)
        throw std::runtime_error("task: reference network missed its target after 5 restarts (metric " +
                                 std::to_string(ref.clean_metric) + ")");
    const NoiseMode mode = cfg.get_string("task.mode", "multiplicative") == "additive" ? NoiseMode::additive
                                                                                       : NoiseMode::multiplicative_db;
    const NoiseStudyReport study = noise_injection_study(ref.net, errors, task, task.realizations, seed, mode);

    {
        CsvWriter csv(out_dir / "task.csv", {"model", "realization", "metric"});
        for (std::size_t t = 0; t < study.metric.size(); ++t)
            csv.row({model->kind(), std::to_string(t), CsvWriter::num(study.metric[t])});
    }
    json summary{{"model", model->kind()},
                 {"task", kind},
                 {"clean_metric", study.clean_metric},
                 {"p10", study.p10},
                 {"p25", study.p25},
                 {"p50", study.p50},
                 {"p75", study.p75},
                 {"p90", study.p90},
                 {"realizations", task.realizations}};
    save_json(out_dir / "task_summary.json", summary);
    manifest.output(out_dir / "task.csv");
    manifest.output(out_dir / "task_summary.json");
    std::cout << summary.dump(2) << "\n";
    manifest.write(out_dir);
    return kExitOk;
}

int cmd_report(const RunConfig& cfg, const fs::path& out_dir) {
    apply_jobs(cfg);
    Manifest manifest("report", cfg);
    const std::string model_path = require(cfg, "report.model");
    manifest.input(model_path);
    const auto model = ForwardModel::load(model_path);
    const WeightDataset full = load_dataset(cfg, "report.dataset", manifest);
    const WeightDataset ds = match_model_grid(full, *model);
    const std::string split = cfg.get_string("report.split", "testing");

    const ErrorDistribution errors = evaluate_model(*model, ds, split);
    const double bin_width = cfg.get_double("report.bin_width", 0.1);
    {
        CsvWriter csv(out_dir / "error_pdf.csv", {"bin_lo_db", "bin_hi_db", "count", "density"});
        for (const HistogramBin& b : errors.histogram(bin_width))
            csv.row({CsvWriter::num(b.lo), CsvWriter::num(b.hi), std::to_string(b.count), CsvWriter::num(b.density)});
    }
    const PredictionTable table = prediction_table(*model, ds, split);
    {
        CsvWriter csv(out_dir / "scatter.csv", {"predicted_db", "measured_db"});
        for (std::size_t i = 0; i < table.predicted_db.size(); ++i)
            csv.row({CsvWriter::num(table.predicted_db[i]), CsvWriter::num(table.measured_db[i])});
    }
    manifest.output(out_dir / "error_pdf.csv");
    manifest.output(out_dir / "scatter.csv");
    if (ds.n_lambda() > 1) {
        CsvWriter csv(out_dir / "per_lambda_rmse.csv", {"wavelength_nm", "rmse_db"});
        for (const auto& [nm, rmse] : per_wavelength_rmse(*model, ds, split))
            csv.row({CsvWriter::num(nm), CsvWriter::num(rmse)});
        manifest.output(out_dir / "per_lambda_rmse.csv");
    }
    json summary{{"rmse_db", errors.rmse}, {"r2", table.r2}, {"min_error_db", errors.min}, {"max_error_db", errors.max}};
    save_json(out_dir / "summary.json", summary);
    manifest.output(out_dir / "summary.json");
    std::cout << summary.dump(2) << "\n";
    manifest.write(out_dir);
    return kExitOk;
}

int run_command(const std::string& name, const RunConfig& cfg, const fs::path& out_dir) {
    try {
        std::filesystem::create_directories(out_dir);
        if (name == "generate") return cmd_generate(cfg, out_dir);
        if (name == "fit") return cmd_fit(cfg, out_dir);
        if (name == "evaluate") return cmd_evaluate(cfg, out_dir);
        if (name == "sweep") return cmd_sweep(cfg, out_dir);
        if (name == "program") return cmd_program(cfg, out_dir);
        if (name == "task") return cmd_task(cfg, out_dir);
        if (name == "report") return cmd_report(cfg, out_dir);
        std::cerr << "unknown command: " << name << "\n";
        return kExitConfig;
    } catch (const IoError& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumerical;
    }
}

}  // namespace meshcal::cli

#include <doctest.h>

#include <filesystem>

#include "meshcal/cli_commands.hpp"
#include "meshcal/emulator.hpp"
#include "meshcal/forward_model.hpp"
#include "meshcal/io_util.hpp"

using namespace meshcal;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

RunConfig small_generate_cfg() {
    RunConfig cfg;
    cfg.set("seed", "3");
    cfg.set("dataset.n_random", "160");
    return cfg;
}

}  // namespace

TEST_CASE("config parser: sections, types, overrides") {
    const std::string text = R"(
seed = 7            # trailing comment
name = "hello"
[dataset]
n_random = 5100
fracs = [0.7, 0.15, 0.15]
merge = false
)";
    RunConfig cfg = RunConfig::parse_text(text);
    CHECK(cfg.get_int("seed", 0) == 7);
    CHECK(cfg.get_string("name", "") == "hello");
    CHECK(cfg.get_int("dataset.n_random", 0) == 5100);
    CHECK(cfg.get_doubles("dataset.fracs", {}) == std::vector<double>{0.7, 0.15, 0.15});
    CHECK(cfg.get_bool("dataset.merge", true) == false);

    cfg.set_override("dataset.n_random=10");
    CHECK(cfg.get_int("dataset.n_random", 0) == 10);

    CHECK_THROWS_AS(cfg.set_override("no-equals-sign"), std::invalid_argument);
    CHECK_THROWS_AS(RunConfig::parse_text("key value"), std::invalid_argument);
    CHECK_THROWS_AS(cfg.get_int("name", 0), std::invalid_argument);
}

TEST_CASE("generate writes datasets, chip and manifest; reruns are byte-identical") {
    TempDir dir("meshcal_cli_generate");
    const RunConfig cfg = small_generate_cfg();
    REQUIRE(cli::cmd_generate(cfg, dir.path) == cli::kExitOk);
    CHECK(fs::exists(dir.path / "chip.json"));
    CHECK(fs::exists(dir.path / "sweep.jsonl"));
    CHECK(fs::exists(dir.path / "random.jsonl"));
    CHECK(fs::exists(dir.path / "manifest.json"));

    const WeightDataset sweep = WeightDataset::load_jsonl(dir.path / "sweep.jsonl");
    CHECK(sweep.size() == 189);
    const WeightDataset random = WeightDataset::load_jsonl(dir.path / "random.jsonl");
    CHECK(random.size() == 160);

    const std::string sweep_bytes = read_file(dir.path / "sweep.jsonl");
    const std::string random_bytes = read_file(dir.path / "random.jsonl");
    TempDir dir2("meshcal_cli_generate2");
    REQUIRE(cli::cmd_generate(cfg, dir2.path) == cli::kExitOk);
    CHECK(read_file(dir2.path / "sweep.jsonl") == sweep_bytes);
    CHECK(read_file(dir2.path / "random.jsonl") == random_bytes);

    SUBCASE("banded variant carries the reduced grid") {
        RunConfig banded = cfg;
        banded.set("dataset.bands", "10");
        TempDir dir3("meshcal_cli_generate3");
        REQUIRE(cli::cmd_generate(banded, dir3.path) == cli::kExitOk);
        const WeightDataset b = WeightDataset::load_jsonl(dir3.path / "random_bands10.jsonl");
        CHECK(b.n_lambda() == 10);
    }
}

TEST_CASE("fit dispatches by kind and auto-runs the simple stage for samxt") {
    TempDir data("meshcal_cli_fitdata");
    RunConfig gen = small_generate_cfg();
    gen.set("dataset.n_random", "1200");
    REQUIRE(cli::cmd_generate(gen, data.path) == cli::kExitOk);

    RunConfig fit;
    fit.set("fit.dataset", (data.path / "random.jsonl").string());
    fit.set("fit.sweep_dataset", (data.path / "sweep.jsonl").string());

    SUBCASE("sam") {
        fit.set("fit.kind", "sam");
        TempDir out("meshcal_cli_fit_sam");
        REQUIRE(cli::cmd_fit(fit, out.path) == cli::kExitOk);
        const auto model = ForwardModel::load(out.path / "model.json");
        CHECK(model->kind() == "sam");
        const json manifest = load_json(out.path / "manifest.json");
        CHECK(manifest.at("fit_report").contains("stage1_rmse_db"));
        CHECK(manifest.at("fit_report").contains("stage2_rmse_db"));
    }

    SUBCASE("samxt without a prior sam model") {
        fit.set("fit.kind", "samxt");
        TempDir out("meshcal_cli_fit_samxt");
        REQUIRE(cli::cmd_fit(fit, out.path) == cli::kExitOk);
        CHECK(ForwardModel::load(out.path / "model.json")->kind() == "samxt");
    }

    SUBCASE("nn-sw with a tiny budget produces a reproducible model") {
        fit.set("fit.kind", "nn-sw");
        fit.set("fit.max_epochs", "25");
        fit.set("fit.hidden", "[12]");
        TempDir out("meshcal_cli_fit_nn");
        REQUIRE(cli::cmd_fit(fit, out.path) == cli::kExitOk);
        CHECK(fs::exists(out.path / "history.csv"));
        const std::string bytes = read_file(out.path / "model.json");
        TempDir out2("meshcal_cli_fit_nn2");
        REQUIRE(cli::cmd_fit(fit, out2.path) == cli::kExitOk);
        CHECK(read_file(out2.path / "model.json") == bytes);
    }
}

TEST_CASE("evaluate reports zero error for a perfect model") {
    TempDir dir("meshcal_cli_eval");
    // Noise-free chip so its own forward model predicts the dataset exactly.
    ChipGroundTruth chip = ChipGroundTruth::default_chip(5);
    chip.noise.sigma_db = 0.0;
    chip.noise.floor_db = -200.0;
    chip.save(dir.path / "chip.json");
    RunConfig gen;
    gen.set("chip.config", (dir.path / "chip.json").string());
    gen.set("dataset.n_random", "60");
    gen.set("dataset.sweep", "false");
    REQUIRE(cli::cmd_generate(gen, dir.path) == cli::kExitOk);

    chip_forward_model(chip, WavelengthGrid::itu_cband_100())->save(dir.path / "model.json");
    RunConfig ev;
    ev.set("evaluate.model", (dir.path / "model.json").string());
    ev.set("evaluate.dataset", (dir.path / "random.jsonl").string());
    TempDir out("meshcal_cli_eval_out");
    REQUIRE(cli::cmd_evaluate(ev, out.path) == cli::kExitOk);
    const json metrics = load_json(out.path / "metrics.json");
    CHECK(metrics.at("rmse_db").get<double>() <= 1e-12);
}

TEST_CASE("program command emits four-decimal voltages and respects exit codes") {
    TempDir dir("meshcal_cli_prog");
    ChipGroundTruth chip = ChipGroundTruth::default_chip(6);
    chip.noise.sigma_db = 0.0;
    chip.noise.floor_db = -200.0;
    const WavelengthGrid grid = WavelengthGrid::single(chip.reference_wavelength_nm);
    const auto model = chip_forward_model(chip, grid);
    model->save(dir.path / "model.json");

    std::array<double, kNumMzi> v{0.5, 1.0, 1.5, 0.8, 1.2, 0.4, 1.6, 0.9, 1.1};
    const auto target = model->predict(v);
    std::string target_str = "[";
    for (int p = 0; p < kNumWeights; ++p) target_str += (p ? "," : "") + std::to_string(target[static_cast<std::size_t>(p)]);
    target_str += "]";

    RunConfig prog;
    prog.set("program.model", (dir.path / "model.json").string());
    prog.set("program.target_db", target_str);
    prog.set("program.multistart", "4");
    TempDir out("meshcal_cli_prog_out");
    REQUIRE(cli::cmd_program(prog, out.path) == cli::kExitOk);
    const json res = load_json(out.path / "program.json");
    CHECK(res.at("reachable").get<bool>());
    for (const auto& volt : res.at("voltages_v")) {
        const double x = volt.get<double>();
        CHECK(x == doctest::Approx(std::round(x * 1e4) / 1e4).epsilon(1e-12));
        CHECK(x >= 0.0);
        CHECK(x <= 2.0);
    }

    SUBCASE("unreachable targets exit with the numerical code") {
        RunConfig dark = prog;
        dark.set("program.target_db", "[-60]");
        TempDir out2("meshcal_cli_prog_dark");
        CHECK(cli::run_command("program", dark, out2.path) == cli::kExitNumerical);
    }
}

TEST_CASE("task command produces percentile summaries") {
    TempDir dir("meshcal_cli_task");
    ChipGroundTruth chip = ChipGroundTruth::default_chip(7);
    chip.save(dir.path / "chip.json");
    RunConfig gen;
    gen.set("chip.config", (dir.path / "chip.json").string());
    gen.set("dataset.n_random", "160");
    gen.set("dataset.sweep", "false");
    REQUIRE(cli::cmd_generate(gen, dir.path) == cli::kExitOk);
    chip_forward_model(chip, WavelengthGrid::itu_cband_100())->save(dir.path / "model.json");

    RunConfig task;
    task.set("task.model", (dir.path / "model.json").string());
    task.set("task.dataset", (dir.path / "random.jsonl").string());
    task.set("task.kind", "xor3");
    task.set("task.realizations", "120");
    TempDir out("meshcal_cli_task_out");
    REQUIRE(cli::cmd_task(task, out.path) == cli::kExitOk);
    const json summary = load_json(out.path / "task_summary.json");
    CHECK(summary.at("clean_metric").get<double>() == 100.0);
    CHECK(summary.at("p10").get<double>() <= summary.at("p90").get<double>());
    CHECK(fs::exists(out.path / "task.csv"));
}

TEST_CASE("report command writes plot-ready tables") {
    TempDir dir("meshcal_cli_report");
    ChipGroundTruth chip = ChipGroundTruth::default_chip(8);
    chip.save(dir.path / "chip.json");
    RunConfig gen;
    gen.set("chip.config", (dir.path / "chip.json").string());
    gen.set("dataset.n_random", "80");
    gen.set("dataset.sweep", "false");
    gen.set("dataset.bands", "10");
    REQUIRE(cli::cmd_generate(gen, dir.path) == cli::kExitOk);
    chip_forward_model(chip, WeightDataset::load_jsonl(dir.path / "random_bands10.jsonl").grid)
        ->save(dir.path / "model.json");

    RunConfig rep;
    rep.set("report.model", (dir.path / "model.json").string());
    rep.set("report.dataset", (dir.path / "random_bands10.jsonl").string());
    TempDir out("meshcal_cli_report_out");
    REQUIRE(cli::cmd_report(rep, out.path) == cli::kExitOk);
    CHECK(fs::exists(out.path / "error_pdf.csv"));
    CHECK(fs::exists(out.path / "scatter.csv"));
    CHECK(fs::exists(out.path / "per_lambda_rmse.csv"));
    CHECK(fs::exists(out.path / "summary.json"));
}

TEST_CASE("exit codes: unknown command, missing files, bad config") {
    TempDir out("meshcal_cli_exit");
    RunConfig cfg;
    CHECK(cli::run_command("frobnicate", cfg, out.path) == cli::kExitConfig);

    RunConfig missing;
    missing.set("evaluate.model", "/nonexistent/model.json");
    missing.set("evaluate.dataset", "/nonexistent/data.jsonl");
    CHECK(cli::run_command("evaluate", missing, out.path) == cli::kExitIo);

    RunConfig incomplete;  // fit without a kind
    CHECK(cli::run_command("fit", incomplete, out.path) == cli::kExitConfig);
}

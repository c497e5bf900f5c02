// fvb: simulate EWH ensembles, build the training set, train the VAE and identify
// virtual-battery parameter distributions.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "fvb/config.hpp"
#include "fvb/error.hpp"
#include "fvb/pipeline.hpp"

namespace fs = std::filesystem;

namespace {

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::optional<int> workers;
    bool print_config = false;
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("--config", c.config, "JSON configuration file")->check(CLI::ExistingFile);
    app->add_option("--seed", c.seed, "master seed (overrides the config)");
    app->add_option("--out", c.out, "run directory (overrides the config)");
    app->add_option("--workers", c.workers, "worker threads, 0 = all cores")->check(CLI::NonNegativeNumber);
    app->add_flag("--print-config", c.print_config, "print the effective configuration and exit");
}

fvb::RunConfig resolve(const Common& c) {
    auto cfg = fvb::load_config(c.config.empty() ? std::nullopt : std::optional<fs::path>(c.config));
    if (c.seed) cfg.seed = *c.seed;
    if (c.workers) cfg.workers = *c.workers;
    if (!c.out.empty()) cfg.out = c.out;
    cfg.train.seed = cfg.seed;
    cfg.validate();
    return cfg;
}

fs::path or_default(const std::string& given, const fs::path& fallback) {
    return given.empty() ? fallback : fs::path(given);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Virtual-battery identification from electric water heater ensembles"};
    app.require_subcommand(0, 1);
    Common common;
    add_common(&app, common);

    auto* sim = app.add_subcommand("simulate", "run baseline and dispatch for every episode, write traces");
    auto* build = app.add_subcommand("build-dataset", "stack, normalize and split traces into dataset.fvb");
    auto* trn = app.add_subcommand("train", "train the VAE over the cross-validation folds");
    auto* ident = app.add_subcommand("identify", "identify parameter distributions, write report and figure CSVs");
    auto* rep = app.add_subcommand("report", "print a summary of report.json");
    std::string traces, dataset, model;
    bool resume = false;
    for (auto* s : {sim, build, trn, ident, rep}) add_common(s, common);
    build->add_option("--traces", traces, "trace directory (default <out>/traces)");
    trn->add_option("--dataset", dataset, "dataset directory (default <out>)");
    trn->add_flag("--resume", resume, "continue from <out>/checkpoints");
    ident->add_option("--model", model, "model file (default <out>/model.fvbm)");
    ident->add_option("--dataset", dataset, "dataset directory (default <out>)");
    ident->add_option("--traces", traces, "trace directory (default <out>/traces)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : static_cast<int>(fvb::ErrorKind::Usage);
    }

    try {
        const auto cfg = resolve(common);
        if (common.print_config) {
            std::cout << cfg.to_json().dump(2) << "\n";
            return 0;
        }
        const fs::path out = cfg.out;
        if (sim->parsed()) {
            fvb::cmd_simulate(cfg, out);
        } else if (build->parsed()) {
            fvb::cmd_build_dataset(cfg, or_default(traces, out / "traces"), out);
        } else if (trn->parsed()) {
            const auto res = fvb::cmd_train(cfg, or_default(dataset, out), out, resume);
            std::cout << "best fold " << res.best_fold << "\n";
        } else if (ident->parsed()) {
            fvb::cmd_identify(cfg, or_default(model, out / "model.fvbm"), or_default(dataset, out),
                              or_default(traces, out / "traces"), out);
            std::cout << fvb::cmd_report(out);
        } else if (rep->parsed()) {
            std::cout << fvb::cmd_report(out);
        } else {
            std::cerr << app.help();
            return static_cast<int>(fvb::ErrorKind::Usage);
        }
    } catch (const fvb::Error& e) {
        std::cerr << "fvb: " << e.what() << "\n";
        return static_cast<int>(e.kind());
    } catch (const fs::filesystem_error& e) {
        std::cerr << "fvb: " << e.what() << "\n";
        return static_cast<int>(fvb::ErrorKind::Data);
    } catch (const std::exception& e) {
        std::cerr << "fvb: " << e.what() << "\n";
        return static_cast<int>(fvb::ErrorKind::Numerical);
    }
    return 0;
}

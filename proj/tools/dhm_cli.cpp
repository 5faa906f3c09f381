// Command-line front end. Everything substantive happens behind the C API in
// libdhm; this binary only parses flags, assembles the config JSON and maps
// statuses onto exit codes (0 ok, 2 config error, 3 numeric divergence).

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dhm/dhm.h"

namespace {

int exit_code_for(dhm_status status) {
    switch (status) {
        case DHM_OK: return 0;
        case DHM_ERR_CONFIG: return 2;
        case DHM_ERR_NUMERIC: return 3;
        default: return 1;
    }
}

std::vector<double> parse_grid(const std::string& csv) {
    std::vector<double> out;
    std::stringstream ss(csv);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        if (cell.empty()) continue;
        out.push_back(std::stod(cell));
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "dhm: synthetic-city laboratory for hybrid travel-demand models\n"
        "(mixing autoencoders, behavioral predictors, economic readouts)"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    std::string theta_grid;
    std::uint64_t seed = 0;
    bool seed_set = false, out_set = false, variant_set = false, lambda_set = false;
    int variant = 0;
    double lambda = 0.0;
    int steps = 0;
    bool steps_set = false;

    app.add_option("--config", config_path, "experiment config JSON file");
    auto* opt_seed = app.add_option("--seed", seed, "root seed");
    auto* opt_out = app.add_option("--out", out_dir, "output directory");
    auto* opt_variant = app.add_option("--variant", variant, "mixing model variant (1..6)");
    auto* opt_lambda = app.add_option("--lambda", lambda, "mixing trade-off in [0,1]");
    auto* opt_theta = app.add_option("--theta-grid", theta_grid,
                                     "comma-separated theta grid override");
    auto* opt_steps = app.add_option("--steps", steps, "stage-one training steps");

    for (const char* name :
         {"synth", "train", "sweep", "benchmark", "generate", "analyze"})
        app.add_subcommand(name);

    CLI11_PARSE(app, argc, argv);
    seed_set = opt_seed->count() > 0;
    out_set = opt_out->count() > 0;
    variant_set = opt_variant->count() > 0;
    lambda_set = opt_lambda->count() > 0;
    steps_set = opt_steps->count() > 0;

    nlohmann::json config;
    if (!config_path.empty()) {
        std::ifstream in(config_path);
        if (!in) {
            std::fprintf(stderr, "error: cannot open config %s\n", config_path.c_str());
            return 2;
        }
        try {
            config = nlohmann::json::parse(in);
        } catch (const std::exception& e) {
            std::fprintf(stderr, "error: %s\n", e.what());
            return 2;
        }
    } else {
        char* defaults = nullptr;
        if (dhm_default_config(&defaults) != DHM_OK) {
            std::fprintf(stderr, "error: %s\n", dhm_last_error());
            return 1;
        }
        config = nlohmann::json::parse(defaults);
        dhm_string_free(defaults);
    }

    if (seed_set) config["seed"] = seed;
    if (out_set) config["out"] = out_dir;
    if (variant_set) config["model"]["variant"] = variant;
    if (lambda_set) config["model"]["lambda"] = lambda;
    if (steps_set) config["model"]["steps"] = steps;
    if (!theta_grid.empty()) {
        auto grid = parse_grid(theta_grid);
        config["predictor"]["theta_grid_panel1"] = grid;
        config["predictor"]["theta_grid_panel2"] = grid;
        config["predictor"]["theta_grid_panel3"] = grid;
        config["sweep"]["theta_grid"] = grid;
    }

    const std::string dump = config.dump();
    const std::string cmd = app.get_subcommands().front()->get_name();
    dhm_status status = DHM_OK;
    if (cmd == "synth") status = dhm_cmd_synth(dump.c_str());
    else if (cmd == "train") status = dhm_cmd_train(dump.c_str());
    else if (cmd == "sweep") status = dhm_cmd_sweep(dump.c_str());
    else if (cmd == "benchmark") status = dhm_cmd_benchmark(dump.c_str());
    else if (cmd == "generate") status = dhm_cmd_generate(dump.c_str());
    else if (cmd == "analyze") status = dhm_cmd_analyze(dump.c_str());

    if (status != DHM_OK) {
        std::fprintf(stderr, "error (%s): %s\n", dhm_status_name(status), dhm_last_error());
        return exit_code_for(status);
    }
    std::string out = config.value("out", "out");
    std::printf("%s: artifacts written under %s (see manifest.json)\n", cmd.c_str(),
                out.c_str());
    return 0;
}

#pragma once

#include <memory>
#include <string>
#include <vector>

#include "mixing.hpp"
#include "predictor.hpp"
#include "types.hpp"

namespace dhm::experiment {

struct ExperimentConfig {
    std::uint64_t seed = 7;
    std::string out = "out";
    WorldConfig world;

    // stage-one model
    int variant = 4;
    int latent_dim = -1;  // -1 picks the variant default
    double lambda = 0.7;
    int steps = 300;
    int batch = 16;
    double lr = 1e-3;
    int base_channels = 16;

    // stage-two predictors
    int folds = 5;
    std::vector<double> theta_grid_panel1 = {1e-4, 1e-3, 1e-2, 1e-1, 1e0};
    std::vector<double> theta_grid_panel2 = {1e-5, 1e-4, 1e-3, 1e-2, 1e-1};
    std::vector<double> theta_grid_panel3 = {1e-5, 1e-4, 1e-3, 1e-2, 1e-1};

    // sweep
    std::vector<double> lambda_grid = {0.1, 0.3, 0.5, 0.7, 0.9};
    std::vector<double> sweep_theta_grid = {1e-4, 1e-3, 1e-2, 1e-1, 1e0};
    std::vector<int> sweep_panels = {1};

    // benchmark
    std::vector<int> benchmark_variants = {1, 2, 3, 4, 5, 6};
    std::vector<int> benchmark_panels = {1, 2, 3};

    // generate
    std::string source_region;   // empty = pick per archetype
    std::string target_region1;
    std::string target_region2;
    int grid_steps = 6;
    double alpha_income = 1.0;
    double generate_theta = 1e-4;

    // analyze
    int clusters = 5;
    double perplexity = 15.0;
    int tsne_iters = 500;
    std::string embed = "tsne";  // or "pca"
};

ExperimentConfig config_from_json(const std::string& text);
std::string config_to_json(const ExperimentConfig& cfg);

// Root-seed substreams.
std::uint64_t world_seed(const ExperimentConfig& cfg);
std::uint64_t model_seed(const ExperimentConfig& cfg, int variant, int repeat = 0);

// Loads out/world when present, otherwise generates from the config.
World obtain_world(const ExperimentConfig& cfg);

mixing::MixingConfig mixing_config_for(const ExperimentConfig& cfg, int variant,
                                       const World& world, int repeat = 0);

struct StageOne {
    std::unique_ptr<mixing::MixingModel> model;  // null for the numeric-only variant
    std::vector<std::vector<double>> region_latents;
    mixing::TrainResult train_log;
};

StageOne run_stage_one(const ExperimentConfig& cfg, const World& world, int variant,
                       int repeat = 0);

struct PanelResult {
    double best_theta = 0.0;
    predictor::Metrics metrics;
};

PanelResult run_panel1(const ExperimentConfig& cfg, const World& world,
                       const std::vector<std::vector<double>>& latents);
PanelResult run_panel2(const ExperimentConfig& cfg, const World& world,
                       const std::vector<std::vector<double>>& latents);
PanelResult run_panel3(const ExperimentConfig& cfg, const World& world,
                       const std::vector<std::vector<double>>& latents);

double mean_of(const std::vector<double>& v);

// Commands. Each writes its artifacts plus manifest.json under cfg.out.
void cmd_synth(const ExperimentConfig& cfg);
void cmd_train(const ExperimentConfig& cfg);
void cmd_sweep(const ExperimentConfig& cfg);
void cmd_benchmark(const ExperimentConfig& cfg);
void cmd_generate(const ExperimentConfig& cfg);
void cmd_analyze(const ExperimentConfig& cfg);

void run_command(const std::string& name, const ExperimentConfig& cfg);

}  // namespace dhm::experiment

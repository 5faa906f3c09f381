#include "experiment.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "csv.hpp"
#include "dataio.hpp"
#include "econ.hpp"
#include "error.hpp"
#include "imageout.hpp"
#include "latentnav.hpp"
#include "rng.hpp"
#include "sha256.hpp"
#include "synthworld.hpp"

namespace dhm::experiment {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

template <typename T>
void read_into(const json& j, const char* key, T& out) {
    if (j.contains(key)) {
        try {
            out = j.at(key).get<T>();
        } catch (const std::exception& e) {
            fail_config(std::string("config field '") + key + "': " + e.what());
        }
    }
}

// Tracks artifacts a command writes so the manifest can list them.
class Emitter {
public:
    explicit Emitter(std::string out_dir, std::string command)
        : out_(std::move(out_dir)), command_(std::move(command)) {
        std::error_code ec;
        fs::create_directories(out_, ec);
        require(!ec, ErrorCode::io, "cannot create output directory " + out_);
    }

    std::string path(const std::string& rel) {
        files_.push_back(rel);
        fs::path p = fs::path(out_) / rel;
        std::error_code ec;
        fs::create_directories(p.parent_path(), ec);
        return p.string();
    }

    // Registers files already written below out_ (e.g. a saved world dir).
    void note(const std::string& rel) { files_.push_back(rel); }

    void finish() {
        json manifest;
        manifest["command"] = command_;
        manifest["artifacts"] = json::array();
        std::sort(files_.begin(), files_.end());
        for (const auto& rel : files_) {
            fs::path p = fs::path(out_) / rel;
            require(fs::exists(p), ErrorCode::io, "declared artifact missing: " + rel);
            manifest["artifacts"].push_back(
                {{"path", rel},
                 {"bytes", static_cast<std::uint64_t>(fs::file_size(p))},
                 {"sha256", sha256_file(p.string())}});
        }
        std::ofstream out(fs::path(out_) / "manifest.json", std::ios::binary);
        out << manifest.dump(2) << "\n";
        require(static_cast<bool>(out), ErrorCode::io, "write failed: manifest.json");
    }

private:
    std::string out_;
    std::string command_;
    std::vector<std::string> files_;
};

std::vector<int> report_modes() { return {kAuto, kActive, kPt}; }

predictor::DenseMatrix share_matrix(const World& world) {
    predictor::DenseMatrix shares(static_cast<int>(world.regions.size()), kNumModes);
    for (std::size_t r = 0; r < world.regions.size(); ++r)
        for (int k = 0; k < kNumModes; ++k)
            shares.at(static_cast<int>(r), k) = world.regions[r].shares[static_cast<std::size_t>(k)];
    return shares;
}

std::vector<std::string> region_ids(const World& world) {
    std::vector<std::string> ids;
    for (const auto& r : world.regions) ids.push_back(r.region_id);
    return ids;
}

std::vector<std::string> trip_ids(const World& world) {
    std::vector<std::string> ids;
    for (const auto& t : world.trips) ids.push_back(t.trip_id);
    return ids;
}

predictor::ChoiceData choice_data(const World& world,
                                  const std::vector<std::vector<double>>& region_latents) {
    predictor::ChoiceData data;
    data.latent = mixing::trip_latents(world, region_latents);
    data.n_modes = kNumModes;
    data.n_alt_attrs = world.config.n_alt_attrs;
    data.sd = predictor::DenseMatrix(static_cast<int>(world.trips.size()),
                                     static_cast<int>(world.trips.front().x_sd_trip.size()));
    for (std::size_t n = 0; n < world.trips.size(); ++n) {
        for (std::size_t j = 0; j < world.trips[n].x_sd_trip.size(); ++j)
            data.sd.at(static_cast<int>(n), static_cast<int>(j)) = world.trips[n].x_sd_trip[j];
        data.chosen.push_back(world.trips[n].chosen);
        for (int k = 0; k < kNumModes; ++k)
            for (int a = 0; a < data.n_alt_attrs; ++a)
                data.alt.push_back(world.trips[n].x_alt[static_cast<std::size_t>(k)][static_cast<std::size_t>(a)]);
    }
    return data;
}

std::string train_test(double train, double test) {
    return format_fixed(train, 4) + "/" + format_fixed(test, 4);
}

}  // namespace

// ---------------------------------------------------------------------------

ExperimentConfig config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const std::exception& e) {
        fail_config(std::string("config is not valid json: ") + e.what());
    }
    ExperimentConfig cfg;
    read_into(j, "seed", cfg.seed);
    read_into(j, "out", cfg.out);
    if (j.contains("world")) {
        const json& w = j.at("world");
        read_into(w, "n_regions", cfg.world.n_regions);
        read_into(w, "tiles_per_region", cfg.world.tiles_per_region);
        read_into(w, "n_trips", cfg.world.n_trips);
        read_into(w, "tile_size", cfg.world.tile_size);
        read_into(w, "sd_dim", cfg.world.sd_dim);
        read_into(w, "trip_sd_dim", cfg.world.trip_sd_dim);
        read_into(w, "sd_noise", cfg.world.sd_noise);
        read_into(w, "feature_jitter", cfg.world.feature_jitter);
        read_into(w, "render_noise", cfg.world.render_noise);
    }
    if (j.contains("model")) {
        const json& m = j.at("model");
        read_into(m, "variant", cfg.variant);
        read_into(m, "latent_dim", cfg.latent_dim);
        read_into(m, "lambda", cfg.lambda);
        read_into(m, "steps", cfg.steps);
        read_into(m, "batch", cfg.batch);
        read_into(m, "lr", cfg.lr);
        read_into(m, "base_channels", cfg.base_channels);
    }
    if (j.contains("predictor")) {
        const json& p = j.at("predictor");
        read_into(p, "folds", cfg.folds);
        read_into(p, "theta_grid_panel1", cfg.theta_grid_panel1);
        read_into(p, "theta_grid_panel2", cfg.theta_grid_panel2);
        read_into(p, "theta_grid_panel3", cfg.theta_grid_panel3);
    }
    if (j.contains("sweep")) {
        const json& s = j.at("sweep");
        read_into(s, "lambda_grid", cfg.lambda_grid);
        read_into(s, "theta_grid", cfg.sweep_theta_grid);
        read_into(s, "panels", cfg.sweep_panels);
    }
    if (j.contains("benchmark")) {
        const json& b = j.at("benchmark");
        read_into(b, "variants", cfg.benchmark_variants);
        read_into(b, "panels", cfg.benchmark_panels);
    }
    if (j.contains("generate")) {
        const json& g = j.at("generate");
        read_into(g, "source", cfg.source_region);
        read_into(g, "target1", cfg.target_region1);
        read_into(g, "target2", cfg.target_region2);
        read_into(g, "grid_steps", cfg.grid_steps);
        read_into(g, "alpha_income", cfg.alpha_income);
        read_into(g, "theta", cfg.generate_theta);
    }
    if (j.contains("analyze")) {
        const json& a = j.at("analyze");
        read_into(a, "clusters", cfg.clusters);
        read_into(a, "perplexity", cfg.perplexity);
        read_into(a, "tsne_iters", cfg.tsne_iters);
        read_into(a, "embed", cfg.embed);
    }

    require(cfg.variant >= 1 && cfg.variant <= 6, ErrorCode::config, "variant must be 1..6");
    require(cfg.lambda >= 0.0 && cfg.lambda <= 1.0, ErrorCode::config,
            "lambda must lie in [0,1]");
    require(cfg.folds >= 2, ErrorCode::config, "folds must be >= 2");
    require(cfg.grid_steps >= 2, ErrorCode::config, "grid_steps must be >= 2");
    require(cfg.alpha_income > 0.0, ErrorCode::config, "alpha_income must be positive");
    require(!cfg.out.empty(), ErrorCode::config, "output directory must be set");
    for (double t : cfg.theta_grid_panel1)
        require(t >= 0.0, ErrorCode::config, "theta values must be >= 0");
    require(cfg.embed == "tsne" || cfg.embed == "pca", ErrorCode::config,
            "embed must be tsne or pca");
    return cfg;
}

std::string config_to_json(const ExperimentConfig& cfg) {
    json j;
    j["seed"] = cfg.seed;
    j["out"] = cfg.out;
    j["world"] = {{"n_regions", cfg.world.n_regions},
                  {"tiles_per_region", cfg.world.tiles_per_region},
                  {"n_trips", cfg.world.n_trips},
                  {"tile_size", cfg.world.tile_size},
                  {"sd_dim", cfg.world.sd_dim},
                  {"trip_sd_dim", cfg.world.trip_sd_dim},
                  {"sd_noise", cfg.world.sd_noise},
                  {"feature_jitter", cfg.world.feature_jitter},
                  {"render_noise", cfg.world.render_noise}};
    j["model"] = {{"variant", cfg.variant}, {"latent_dim", cfg.latent_dim},
                  {"lambda", cfg.lambda},   {"steps", cfg.steps},
                  {"batch", cfg.batch},     {"lr", cfg.lr},
                  {"base_channels", cfg.base_channels}};
    j["predictor"] = {{"folds", cfg.folds},
                      {"theta_grid_panel1", cfg.theta_grid_panel1},
                      {"theta_grid_panel2", cfg.theta_grid_panel2},
                      {"theta_grid_panel3", cfg.theta_grid_panel3}};
    j["sweep"] = {{"lambda_grid", cfg.lambda_grid},
                  {"theta_grid", cfg.sweep_theta_grid},
                  {"panels", cfg.sweep_panels}};
    j["benchmark"] = {{"variants", cfg.benchmark_variants}, {"panels", cfg.benchmark_panels}};
    j["generate"] = {{"source", cfg.source_region},   {"target1", cfg.target_region1},
                     {"target2", cfg.target_region2}, {"grid_steps", cfg.grid_steps},
                     {"alpha_income", cfg.alpha_income}, {"theta", cfg.generate_theta}};
    j["analyze"] = {{"clusters", cfg.clusters},
                    {"perplexity", cfg.perplexity},
                    {"tsne_iters", cfg.tsne_iters},
                    {"embed", cfg.embed}};
    return j.dump(2);
}

std::uint64_t world_seed(const ExperimentConfig& cfg) { return substream(cfg.seed, "world"); }

std::uint64_t model_seed(const ExperimentConfig& cfg, int variant, int repeat) {
    return substream(cfg.seed, "model", static_cast<std::uint64_t>(variant * 100 + repeat));
}

World obtain_world(const ExperimentConfig& cfg) {
    fs::path dir = fs::path(cfg.out) / "world";
    if (fs::exists(dir / "regions.csv")) return dataio::load_world(dir.string());
    WorldConfig wc = cfg.world;
    wc.seed = world_seed(cfg);
    return synthworld::gen_world(wc);
}

mixing::MixingConfig mixing_config_for(const ExperimentConfig& cfg, int variant,
                                       const World& world, int repeat) {
    mixing::MixingConfig mc;
    // The concatenation variant rides on the plain autoencoder's network.
    mc.variant = variant == 3 ? mixing::Variant::ae : mixing::variant_from_int(variant);
    mc.latent_dim = cfg.latent_dim > 0 ? cfg.latent_dim : mixing::default_latent_dim(mc.variant);
    mc.lambda = cfg.lambda;
    mc.tile_size = world.config.tile_size;
    mc.channels = 3;
    mc.sd_dim = static_cast<int>(world.regions.front().x_sd.size());
    mc.base_channels = cfg.base_channels;
    mc.steps = cfg.steps;
    mc.batch = cfg.batch;
    mc.lr = cfg.lr;
    mc.seed = model_seed(cfg, variant == 3 ? 2 : variant, repeat);
    return mc;
}

StageOne run_stage_one(const ExperimentConfig& cfg, const World& world, int variant,
                       int repeat) {
    StageOne out;
    mixing::Variant v = mixing::variant_from_int(variant);
    if (v == mixing::Variant::sd_only) {
        out.region_latents = mixing::build_region_latents(v, nullptr, world);
        return out;
    }
    out.model = mixing::make_mixing_model(mixing_config_for(cfg, variant, world, repeat));
    out.train_log = mixing::train_mixing(*out.model, world);
    out.region_latents = mixing::build_region_latents(v, out.model.get(), world);
    return out;
}

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

PanelResult run_panel1(const ExperimentConfig& cfg, const World& world,
                       const std::vector<std::vector<double>>& latents) {
    auto Z = predictor::DenseMatrix::from_rows(latents);
    auto shares = share_matrix(world);
    auto ids = region_ids(world);
    auto folds = dataio::make_folds(ids, cfg.folds, substream(cfg.seed, "folds_regions"));
    PanelResult best;
    double best_metric = -1e300;
    for (double theta : cfg.theta_grid_panel1) {
        auto m = predictor::evaluate_linear(Z, shares, report_modes(), theta, folds, ids);
        double metric = mean_of(m.r2_test);
        if (metric > best_metric) {
            best_metric = metric;
            best.best_theta = theta;
            best.metrics = m;
        }
    }
    return best;
}

PanelResult run_panel2(const ExperimentConfig& cfg, const World& world,
                       const std::vector<std::vector<double>>& latents) {
    auto Z = predictor::DenseMatrix::from_rows(latents);
    auto shares = share_matrix(world);
    auto ids = region_ids(world);
    auto folds = dataio::make_folds(ids, cfg.folds, substream(cfg.seed, "folds_regions"));
    PanelResult best;
    double best_metric = 1e300;
    for (double theta : cfg.theta_grid_panel2) {
        auto m = predictor::evaluate_joint(Z, shares, report_modes(), theta, folds, ids);
        if (m.kl_test < best_metric) {
            best_metric = m.kl_test;
            best.best_theta = theta;
            best.metrics = m;
        }
    }
    return best;
}

PanelResult run_panel3(const ExperimentConfig& cfg, const World& world,
                       const std::vector<std::vector<double>>& latents) {
    auto data = choice_data(world, latents);
    auto ids = trip_ids(world);
    auto folds = dataio::make_folds(ids, cfg.folds, substream(cfg.seed, "folds_trips"));
    PanelResult best;
    double best_metric = 1e300;
    for (double theta : cfg.theta_grid_panel3) {
        auto m = predictor::evaluate_choice(data, theta, folds, ids);
        if (m.ce_test < best_metric) {
            best_metric = m.ce_test;
            best.best_theta = theta;
            best.metrics = m;
        }
    }
    return best;
}

// ---------------------------------------------------------------------------
// Commands.

void cmd_synth(const ExperimentConfig& cfg) {
    Emitter em(cfg.out, "synth");
    WorldConfig wc = cfg.world;
    wc.seed = world_seed(cfg);
    World world = synthworld::gen_world(wc);
    dataio::save_world(world, (fs::path(cfg.out) / "world").string());
    em.note("world/regions.csv");
    em.note("world/trips.csv");
    em.note("world/tiles.bin");
    em.note("world/tiles.json");
    em.note("world/truth.json");
    em.finish();
}

void cmd_train(const ExperimentConfig& cfg) {
    Emitter em(cfg.out, "train");
    World world = obtain_world(cfg);
    StageOne stage = run_stage_one(cfg, world, cfg.variant);

    if (stage.model) {
        std::string prefix = "model_" + std::to_string(cfg.variant);
        mixing::save_checkpoint(*stage.model, (fs::path(cfg.out) / prefix).string());
        em.note(prefix + ".bin");
        em.note(prefix + ".json");
        mixing::write_loss_history(stage.train_log, em.path("loss_history.csv"));
    }

    CsvTable lat;
    lat.header = {"region_id"};
    const int L = static_cast<int>(stage.region_latents.front().size());
    for (int j = 0; j < L; ++j) lat.header.push_back("z_" + std::to_string(j));
    for (std::size_t r = 0; r < world.regions.size(); ++r) {
        std::vector<std::string> row = {world.regions[r].region_id};
        for (double v : stage.region_latents[r]) row.push_back(format_double(v));
        lat.rows.push_back(std::move(row));
    }
    write_csv(em.path("latents.csv"), lat);
    em.finish();
}

namespace {

void append_panel_rows(CsvTable& t, int panel, const std::string& lambda_cell,
                       const std::string& theta_cell, const PanelResult& r) {
    auto add = [&](const std::string& metric, double train, double test) {
        t.rows.push_back({lambda_cell, theta_cell, std::to_string(panel), metric,
                          format_fixed(train, 4), format_fixed(test, 4)});
    };
    const auto modes = report_modes();
    if (panel == 1) {
        for (std::size_t i = 0; i < modes.size(); ++i)
            add(std::string(mode_name(modes[i])) + "_r2", r.metrics.r2_train[i],
                r.metrics.r2_test[i]);
    } else if (panel == 2) {
        add("kl", r.metrics.kl_train, r.metrics.kl_test);
        for (std::size_t i = 0; i < modes.size(); ++i)
            add(std::string(mode_name(modes[i])) + "_r2", r.metrics.r2_train[i],
                r.metrics.r2_test[i]);
    } else {
        add("ce", r.metrics.ce_train, r.metrics.ce_test);
        add("accuracy", r.metrics.acc_train, r.metrics.acc_test);
    }
}

}  // namespace

void cmd_sweep(const ExperimentConfig& cfg) {
    Emitter em(cfg.out, "sweep");
    World world = obtain_world(cfg);
    int variant = cfg.variant;
    if (!mixing::variant_trainable(mixing::variant_from_int(variant))) variant = 4;

    CsvTable t;
    t.header = {"lambda", "theta", "panel", "metric", "train", "test"};
    struct Cell {
        double lambda, theta;
        int panel;
        double test_metric;
    };
    std::vector<Cell> cells;

    for (double lambda : cfg.lambda_grid) {
        ExperimentConfig run = cfg;
        run.lambda = lambda;
        run.variant = variant;
        StageOne stage = run_stage_one(run, world, variant);
        for (double theta : cfg.sweep_theta_grid) {
            ExperimentConfig theta_cfg = run;
            theta_cfg.theta_grid_panel1 = {theta};
            theta_cfg.theta_grid_panel2 = {theta};
            theta_cfg.theta_grid_panel3 = {theta};
            for (int panel : cfg.sweep_panels) {
                PanelResult r;
                double headline = 0.0;
                if (panel == 1) {
                    r = run_panel1(theta_cfg, world, stage.region_latents);
                    headline = mean_of(r.metrics.r2_test);
                } else if (panel == 2) {
                    r = run_panel2(theta_cfg, world, stage.region_latents);
                    headline = -r.metrics.kl_test;  // larger-is-better convention
                } else {
                    r = run_panel3(theta_cfg, world, stage.region_latents);
                    headline = -r.metrics.ce_test;
                }
                append_panel_rows(t, panel, format_double(lambda), format_double(theta), r);
                cells.push_back({lambda, theta, panel, headline});
            }
        }
    }

    // Flag the best cell per panel by its test metric.
    t.header.push_back("best");
    for (auto& row : t.rows) row.push_back("0");
    for (int panel : cfg.sweep_panels) {
        double best = -1e300;
        std::string best_lambda, best_theta;
        for (const auto& c : cells)
            if (c.panel == panel && c.test_metric > best) {
                best = c.test_metric;
                best_lambda = format_double(c.lambda);
                best_theta = format_double(c.theta);
            }
        for (auto& row : t.rows)
            if (row[0] == best_lambda && row[1] == best_theta && row[2] == std::to_string(panel))
                row.back() = "1";
    }
    write_csv(em.path("sweep.csv"), t);
    em.finish();
}

void cmd_benchmark(const ExperimentConfig& cfg) {
    Emitter em(cfg.out, "benchmark");
    World world = obtain_world(cfg);

    struct Row {
        int panel;
        std::string metric;
        std::vector<std::string> cells;
    };
    std::vector<Row> rows;
    auto row_of = [&](int panel, const std::string& metric) -> Row& {
        for (auto& r : rows)
            if (r.panel == panel && r.metric == metric) return r;
        rows.push_back({panel, metric, {}});
        return rows.back();
    };
    const auto modes = report_modes();
    for (int panel : cfg.benchmark_panels) {
        row_of(panel, "latent_dim");
        row_of(panel, "best_theta");
        if (panel == 1)
            for (int mk : modes) row_of(panel, std::string(mode_name(mk)) + "_r2");
        if (panel == 2) {
            row_of(panel, "kl");
            for (int mk : modes) row_of(panel, std::string(mode_name(mk)) + "_r2");
        }
        if (panel == 3) {
            row_of(panel, "ce");
            row_of(panel, "accuracy");
        }
    }

    for (int variant : cfg.benchmark_variants) {
        StageOne stage = run_stage_one(cfg, world, variant);
        const int latent_dim = static_cast<int>(stage.region_latents.front().size());
        for (int panel : cfg.benchmark_panels) {
            PanelResult r;
            if (panel == 1)
                r = run_panel1(cfg, world, stage.region_latents);
            else if (panel == 2)
                r = run_panel2(cfg, world, stage.region_latents);
            else
                r = run_panel3(cfg, world, stage.region_latents);
            int dim = panel == 3 ? static_cast<int>(world.trips.front().x_sd_trip.size()) +
                                       2 * latent_dim
                                 : latent_dim;
            row_of(panel, "latent_dim").cells.push_back(std::to_string(dim));
            row_of(panel, "best_theta").cells.push_back(format_double(r.best_theta));
            if (panel == 1) {
                for (std::size_t i = 0; i < modes.size(); ++i)
                    row_of(panel, std::string(mode_name(modes[i])) + "_r2")
                        .cells.push_back(train_test(r.metrics.r2_train[i], r.metrics.r2_test[i]));
            } else if (panel == 2) {
                row_of(panel, "kl").cells.push_back(
                    train_test(r.metrics.kl_train, r.metrics.kl_test));
                for (std::size_t i = 0; i < modes.size(); ++i)
                    row_of(panel, std::string(mode_name(modes[i])) + "_r2")
                        .cells.push_back(train_test(r.metrics.r2_train[i], r.metrics.r2_test[i]));
            } else {
                row_of(panel, "ce").cells.push_back(
                    train_test(r.metrics.ce_train, r.metrics.ce_test));
                row_of(panel, "accuracy")
                    .cells.push_back(train_test(r.metrics.acc_train, r.metrics.acc_test));
            }
        }
    }

    CsvTable t;
    t.header = {"panel", "metric"};
    for (int variant : cfg.benchmark_variants)
        t.header.push_back("model_" + std::to_string(variant));
    for (const auto& r : rows) {
        std::vector<std::string> cells = {std::to_string(r.panel), r.metric};
        cells.insert(cells.end(), r.cells.begin(), r.cells.end());
        t.rows.push_back(std::move(cells));
    }
    write_csv(em.path("benchmark.csv"), t);
    em.finish();
}

void cmd_generate(const ExperimentConfig& cfg) {
    Emitter em(cfg.out, "generate");
    World world = obtain_world(cfg);
    int variant = cfg.variant;
    require(variant != 1 && variant != 3, ErrorCode::config,
            "generation needs a decoder-bearing variant (2, 4, 5 or 6)");
    StageOne stage = run_stage_one(cfg, world, variant);
    require(stage.model != nullptr, ErrorCode::state, "generation requires a trained model");

    // Anchor regions: explicit ids or one per distinct archetype.
    auto pick_anchor = [&](const std::string& requested, int fallback_archetype,
                           const std::vector<int>& taken) {
        if (!requested.empty()) return world.region_index(requested);
        for (std::size_t r = 0; r < world.regions.size(); ++r) {
            if (world.region_truth[r].archetype_id != fallback_archetype) continue;
            bool used = false;
            for (int t : taken)
                if (t == static_cast<int>(r)) used = true;
            if (!used) return static_cast<int>(r);
        }
        for (std::size_t r = 0; r < world.regions.size(); ++r) {
            bool used = false;
            for (int t : taken)
                if (t == static_cast<int>(r)) used = true;
            if (!used) return static_cast<int>(r);
        }
        fail_config("not enough regions for generation anchors");
    };
    const int src = pick_anchor(cfg.source_region, 2, {});
    const int tgt1 = pick_anchor(cfg.target_region1, 1, {src});
    const int tgt2 = pick_anchor(cfg.target_region2, 0, {src, tgt1});

    // Stage II: joint shares on standardized latents.
    auto latents_std = stage.region_latents;
    auto stats = dataio::standardize(latents_std);
    auto Z = predictor::DenseMatrix::from_rows(latents_std);
    auto fit = predictor::fit_joint_shares(Z, share_matrix(world), cfg.generate_theta);

    auto standardized = [&](const std::vector<double>& raw) {
        std::vector<std::vector<double>> rows = {raw};
        dataio::standardize(rows, stats);
        return rows.front();
    };

    const auto& z_s = stage.region_latents[static_cast<std::size_t>(src)];
    const auto& z_c = stage.region_latents[static_cast<std::size_t>(tgt1)];
    const auto& z_n = stage.region_latents[static_cast<std::size_t>(tgt2)];
    std::vector<double> u1(z_s.size()), u2(z_s.size());
    for (std::size_t j = 0; j < z_s.size(); ++j) {
        u1[j] = z_c[j] - z_s[j];
        u2[j] = z_n[j] - z_s[j];
    }
    std::vector<double> u1_std(z_s.size());
    {
        auto a = standardized(z_c);
        auto b = standardized(z_s);
        for (std::size_t j = 0; j < z_s.size(); ++j) u1_std[j] = a[j] - b[j];
    }

    const int G = cfg.grid_steps;
    CsvTable t;
    t.header = {"a1", "a2", "region"};
    for (int k = 0; k < kNumModes; ++k) t.header.push_back(std::string("share_") + mode_name(k));
    t.header.push_back("welfare");
    t.header.push_back("sub_auto_pt");
    for (int k = 0; k < kNumModes; ++k) t.header.push_back(std::string("grad_") + mode_name(k));
    for (int j = 0; j < stage.model->config.sd_dim; ++j)
        t.header.push_back("sd_readout_" + std::to_string(j));

    std::vector<ImageTile> tiles(static_cast<std::size_t>(G) * G);
    std::vector<std::vector<double>> share_grid[kNumModes];
    for (auto& gmat : share_grid)
        gmat.assign(static_cast<std::size_t>(G), std::vector<double>(static_cast<std::size_t>(G), 0.0));
    std::vector<std::vector<double>> welfare_grid(static_cast<std::size_t>(G),
                                                  std::vector<double>(static_cast<std::size_t>(G), 0.0));

    for (int i = 0; i < G; ++i) {
        for (int jj = 0; jj < G; ++jj) {
            double a1 = static_cast<double>(i) / (G - 1) * 1.0;
            double a2 = static_cast<double>(jj) / (G - 1) * 1.0;
            auto z_raw = econ::interpolate(z_s, {u1, u2}, {a1, a2});
            auto z_std = standardized(z_raw);
            auto report = econ::econ_of_latent(fit, z_std, cfg.alpha_income, u1_std);
            ImageTile tile = mixing::decode_latent(*stage.model, z_raw);
            auto readout = mixing::supervise_latent(*stage.model, z_raw);
            {
                std::vector<std::vector<double>> rows = {readout};
                dataio::unstandardize(rows, stage.model->sup_stats);
                readout = rows.front();
            }
            std::string anchor;
            if (i == 0 && jj == 0) anchor = world.regions[static_cast<std::size_t>(src)].region_id;
            if (i == G - 1 && jj == 0) anchor = world.regions[static_cast<std::size_t>(tgt1)].region_id;
            if (i == 0 && jj == G - 1) anchor = world.regions[static_cast<std::size_t>(tgt2)].region_id;

            std::vector<std::string> row = {format_double(a1), format_double(a2), anchor};
            for (double v : report.market_shares) row.push_back(format_double(v));
            row.push_back(format_double(report.welfare));
            row.push_back(format_double(report.substitution[kAuto][kPt]));
            for (double v : report.grad_directional) row.push_back(format_double(v));
            for (double v : readout) row.push_back(format_double(v));
            t.rows.push_back(std::move(row));

            tiles[static_cast<std::size_t>(jj) * G + i] = std::move(tile);
            for (int k = 0; k < kNumModes; ++k)
                share_grid[k][static_cast<std::size_t>(jj)][static_cast<std::size_t>(i)] =
                    report.market_shares[static_cast<std::size_t>(k)];
            welfare_grid[static_cast<std::size_t>(jj)][static_cast<std::size_t>(i)] = report.welfare;
        }
    }
    write_csv(em.path("generate.csv"), t);

    std::vector<const ImageTile*> ptrs;
    for (const auto& tile : tiles) ptrs.push_back(&tile);
    imageout::write_tile_montage(em.path("montage.png"), ptrs, G, G);
    for (int k = 0; k < kNumModes; ++k)
        imageout::write_heatmap_svg(em.path(std::string("share_") + mode_name(k) + ".svg"),
                                    share_grid[k],
                                    std::string("market share: ") + mode_name(k));
    imageout::write_heatmap_svg(em.path("welfare.svg"), welfare_grid, "logsum welfare");
    em.finish();
}

void cmd_analyze(const ExperimentConfig& cfg) {
    Emitter em(cfg.out, "analyze");
    World world = obtain_world(cfg);
    StageOne stage = run_stage_one(cfg, world, cfg.variant);

    auto latents_std = stage.region_latents;
    dataio::standardize(latents_std);
    auto Z = predictor::DenseMatrix::from_rows(latents_std);
    auto ids = region_ids(world);

    auto clusters = latentnav::kmeans(Z, ids, cfg.clusters, substream(cfg.seed, "kmeans"));
    {
        CsvTable t;
        t.header = {"region_id", "label"};
        for (std::size_t r = 0; r < ids.size(); ++r)
            t.rows.push_back({ids[r], std::to_string(clusters.labels[r])});
        write_csv(em.path("clusters.csv"), t);
    }

    latentnav::Embedding2D emb =
        cfg.embed == "pca"
            ? latentnav::embed2d_pca(Z, ids)
            : latentnav::embed2d_tsne(Z, ids, cfg.perplexity, cfg.tsne_iters,
                                      substream(cfg.seed, "tsne"));
    {
        CsvTable t;
        t.header = {"region_id", "x", "y"};
        for (std::size_t r = 0; r < ids.size(); ++r)
            t.rows.push_back({ids[r], format_double(emb.coords[r][0]),
                              format_double(emb.coords[r][1])});
        write_csv(em.path("embedding.csv"), t);
    }

    auto profiles = latentnav::cluster_profile(clusters, world.regions);
    {
        CsvTable t;
        t.header = {"cluster", "size"};
        const int sd = static_cast<int>(world.regions.front().x_sd.size());
        for (int j = 0; j < sd; ++j) t.header.push_back("mean_sd_" + std::to_string(j));
        for (int k = 0; k < kNumModes; ++k)
            t.header.push_back(std::string("mean_share_") + mode_name(k));
        for (const auto& p : profiles) {
            std::vector<std::string> row = {std::to_string(p.cluster), std::to_string(p.size)};
            for (double v : p.mean_x_sd) row.push_back(format_double(v));
            for (double v : p.mean_shares) row.push_back(format_double(v));
            t.rows.push_back(std::move(row));
        }
        write_csv(em.path("profile.csv"), t);
    }

    {
        std::vector<double> by_cluster(ids.size());
        for (std::size_t r = 0; r < ids.size(); ++r)
            by_cluster[r] = static_cast<double>(clusters.labels[r]);
        imageout::write_scatter_svg(em.path("embedding_clusters.svg"), emb.coords, by_cluster,
                                    "embedding colored by cluster");
        std::vector<double> by_sd(ids.size());
        for (std::size_t r = 0; r < ids.size(); ++r) by_sd[r] = world.regions[r].x_sd[0];
        imageout::write_scatter_svg(em.path("embedding_sd0.svg"), emb.coords, by_sd,
                                    "embedding colored by sd_0");
    }

    // Sparsity path on the linear head; the sociodemographic block only
    // exists for the concatenation variant.
    {
        int sd_cols = cfg.variant == 3 ? static_cast<int>(world.regions.front().x_sd.size()) : 0;
        auto shares = share_matrix(world);
        auto folds = dataio::make_folds(ids, cfg.folds, substream(cfg.seed, "folds_regions"));
        auto path = predictor::sparsity_path_linear(
            predictor::DenseMatrix::from_rows(stage.region_latents), shares, report_modes(),
            cfg.theta_grid_panel1, sd_cols, folds, ids);
        CsvTable t;
        t.header = {"theta", "nnz_sd", "nnz_imagery", "nnz_total", "test_r2"};
        for (const auto& p : path)
            t.rows.push_back({format_double(p.theta), std::to_string(p.nnz_sd),
                              std::to_string(p.nnz_imagery),
                              std::to_string(p.nnz_sd + p.nnz_imagery),
                              format_double(p.test_metric)});
        write_csv(em.path("sparsity_path.csv"), t);

        imageout::Svg svg(420, 300);
        svg.text(30, 20, "nonzero coefficients vs theta", 13);
        double max_nnz = 1.0;
        for (const auto& p : path) max_nnz = std::max(max_nnz, static_cast<double>(p.nnz_sd + p.nnz_imagery));
        for (std::size_t i = 0; i < path.size(); ++i) {
            double x = 40 + 340.0 * static_cast<double>(i) / std::max<std::size_t>(1, path.size() - 1);
            double total = path[i].nnz_sd + path[i].nnz_imagery;
            double y = 270 - 230.0 * total / max_nnz;
            svg.circle(x, y, 4, "#1f6fb0");
            svg.text(x - 10, 288, format_double(path[i].theta), 8);
        }
        svg.save(em.path("sparsity_path.svg"));
    }
    em.finish();
}

void run_command(const std::string& name, const ExperimentConfig& cfg) {
    if (name == "synth") cmd_synth(cfg);
    else if (name == "train") cmd_train(cfg);
    else if (name == "sweep") cmd_sweep(cfg);
    else if (name == "benchmark") cmd_benchmark(cfg);
    else if (name == "generate") cmd_generate(cfg);
    else if (name == "analyze") cmd_analyze(cfg);
    else fail_config("unknown command: " + name);
}

}  // namespace dhm::experiment

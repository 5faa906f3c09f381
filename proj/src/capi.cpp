#include "dhm/dhm.h"

#include <cstring>
#include <string>

#include <json.hpp>

#include "dataio.hpp"
#include "error.hpp"
#include "experiment.hpp"
#include "mixing.hpp"
#include "synthworld.hpp"

using nlohmann::json;

struct dhm_world {
    dhm::World world;
};

struct dhm_mixing {
    std::unique_ptr<dhm::mixing::MixingModel> model;
};

namespace {

thread_local std::string g_last_error;

dhm_status status_of(const dhm::Error& e) {
    switch (e.code()) {
        case dhm::ErrorCode::invalid_argument: return DHM_ERR_ARGUMENT;
        case dhm::ErrorCode::config: return DHM_ERR_CONFIG;
        case dhm::ErrorCode::numeric: return DHM_ERR_NUMERIC;
        case dhm::ErrorCode::io: return DHM_ERR_IO;
        case dhm::ErrorCode::state: return DHM_ERR_STATE;
    }
    return DHM_ERR_STATE;
}

template <typename Fn>
dhm_status guarded(Fn&& fn) {
    try {
        g_last_error.clear();
        fn();
        return DHM_OK;
    } catch (const dhm::Error& e) {
        g_last_error = e.what();
        return status_of(e);
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return DHM_ERR_STATE;
    }
}

char* dup_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

dhm::WorldConfig world_config_from_json(const char* config_json) {
    dhm::require(config_json != nullptr, dhm::ErrorCode::invalid_argument,
                 "config_json is null");
    // Reuse the experiment config parser so field names stay in one place.
    json wrap;
    wrap["world"] = json::parse(config_json);
    auto cfg = dhm::experiment::config_from_json(wrap.dump());
    dhm::WorldConfig wc = cfg.world;
    json j = json::parse(config_json);
    if (j.contains("seed")) wc.seed = j.at("seed").get<std::uint64_t>();
    return wc;
}

dhm::experiment::ExperimentConfig full_config(const char* config_json) {
    dhm::require(config_json != nullptr, dhm::ErrorCode::config, "config_json is null");
    return dhm::experiment::config_from_json(config_json);
}

}  // namespace

extern "C" {

const char* dhm_version(void) { return "0.1.0"; }

const char* dhm_status_name(dhm_status status) {
    switch (status) {
        case DHM_OK: return "ok";
        case DHM_ERR_ARGUMENT: return "invalid_argument";
        case DHM_ERR_CONFIG: return "config_error";
        case DHM_ERR_NUMERIC: return "numeric_divergence";
        case DHM_ERR_IO: return "io_error";
        case DHM_ERR_STATE: return "state_error";
    }
    return "unknown";
}

const char* dhm_last_error(void) { return g_last_error.c_str(); }

void dhm_string_free(char* s) { std::free(s); }

dhm_status dhm_world_generate(uint64_t seed, int n_regions, int tiles_per_region, int n_trips,
                              dhm_world** out) {
    return guarded([&] {
        dhm::require(out != nullptr, dhm::ErrorCode::invalid_argument, "out is null");
        auto* w = new dhm_world{dhm::synthworld::gen_world(seed, n_regions, tiles_per_region,
                                                           n_trips)};
        *out = w;
    });
}

dhm_status dhm_world_generate_ex(const char* config_json, dhm_world** out) {
    return guarded([&] {
        dhm::require(out != nullptr, dhm::ErrorCode::invalid_argument, "out is null");
        *out = new dhm_world{dhm::synthworld::gen_world(world_config_from_json(config_json))};
    });
}

dhm_status dhm_world_save(const dhm_world* world, const char* dir) {
    return guarded([&] {
        dhm::require(world && dir, dhm::ErrorCode::invalid_argument, "null argument");
        dhm::dataio::save_world(world->world, dir);
    });
}

dhm_status dhm_world_load(const char* dir, dhm_world** out) {
    return guarded([&] {
        dhm::require(dir && out, dhm::ErrorCode::invalid_argument, "null argument");
        *out = new dhm_world{dhm::dataio::load_world(dir)};
    });
}

dhm_status dhm_world_info(const dhm_world* world, char** json_out) {
    return guarded([&] {
        dhm::require(world && json_out, dhm::ErrorCode::invalid_argument, "null argument");
        json j;
        j["regions"] = world->world.regions.size();
        j["trips"] = world->world.trips.size();
        j["tiles"] = world->world.tiles.size();
        j["tile_size"] = world->world.config.tile_size;
        j["sd_dim"] = world->world.config.sd_dim;
        *json_out = dup_string(j.dump());
    });
}

void dhm_world_free(dhm_world* world) { delete world; }

dhm_status dhm_mixing_train(const dhm_world* world, const char* config_json,
                            dhm_mixing** out) {
    return guarded([&] {
        dhm::require(world && config_json && out, dhm::ErrorCode::invalid_argument,
                     "null argument");
        json wrap;
        wrap["model"] = json::parse(config_json, nullptr, true);
        auto cfg = dhm::experiment::config_from_json(wrap.dump());
        json j = json::parse(config_json);
        if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
        auto mc = dhm::experiment::mixing_config_for(cfg, cfg.variant, world->world);
        auto model = dhm::mixing::make_mixing_model(mc);
        dhm::mixing::train_mixing(*model, world->world);
        *out = new dhm_mixing{std::move(model)};
    });
}

dhm_status dhm_mixing_save(const dhm_mixing* model, const char* path_prefix) {
    return guarded([&] {
        dhm::require(model && path_prefix, dhm::ErrorCode::invalid_argument, "null argument");
        dhm::mixing::save_checkpoint(*model->model, path_prefix);
    });
}

dhm_status dhm_mixing_load(const char* path_prefix, dhm_mixing** out) {
    return guarded([&] {
        dhm::require(path_prefix && out, dhm::ErrorCode::invalid_argument, "null argument");
        *out = new dhm_mixing{dhm::mixing::load_checkpoint(path_prefix)};
    });
}

dhm_status dhm_mixing_latent_dim(const dhm_mixing* model, int* out) {
    return guarded([&] {
        dhm::require(model && out, dhm::ErrorCode::invalid_argument, "null argument");
        *out = model->model->config.latent_dim;
    });
}

dhm_status dhm_mixing_encode(const dhm_mixing* model, const float* pixels, int h, int w,
                             int c, double* latent_out, int latent_cap) {
    return guarded([&] {
        dhm::require(model && pixels && latent_out, dhm::ErrorCode::invalid_argument,
                     "null argument");
        const auto& cfg = model->model->config;
        dhm::require(h == cfg.tile_size && w == cfg.tile_size && c == cfg.channels,
                     dhm::ErrorCode::invalid_argument, "tile shape mismatch");
        dhm::require(latent_cap >= cfg.latent_dim, dhm::ErrorCode::invalid_argument,
                     "latent buffer too small");
        dhm::World tmp;
        tmp.config.tile_size = cfg.tile_size;
        dhm::ImageTile tile;
        tile.height = h;
        tile.width = w;
        tile.channels = c;
        tile.pixels.assign(pixels, pixels + static_cast<std::size_t>(h) * w * c);
        tmp.tiles.push_back(std::move(tile));
        auto z = dhm::mixing::encode_tiles(*model->model, tmp, {0});
        for (int j = 0; j < cfg.latent_dim; ++j) latent_out[j] = z.at(0, j);
    });
}

dhm_status dhm_mixing_decode(const dhm_mixing* model, const double* latent, int dim,
                             float* pixels_out, int pixels_cap) {
    return guarded([&] {
        dhm::require(model && latent && pixels_out, dhm::ErrorCode::invalid_argument,
                     "null argument");
        const auto& cfg = model->model->config;
        dhm::require(dim == cfg.latent_dim, dhm::ErrorCode::invalid_argument,
                     "latent dimension mismatch");
        const int need = cfg.tile_size * cfg.tile_size * cfg.channels;
        dhm::require(pixels_cap >= need, dhm::ErrorCode::invalid_argument,
                     "pixel buffer too small");
        std::vector<double> z(latent, latent + dim);
        auto tile = dhm::mixing::decode_latent(*model->model, z);
        for (int i = 0; i < need; ++i)
            pixels_out[i] = static_cast<float>(tile.pixels[static_cast<std::size_t>(i)]);
    });
}

void dhm_mixing_free(dhm_mixing* model) { delete model; }

dhm_status dhm_cmd_synth(const char* config_json) {
    return guarded([&] { dhm::experiment::cmd_synth(full_config(config_json)); });
}
dhm_status dhm_cmd_train(const char* config_json) {
    return guarded([&] { dhm::experiment::cmd_train(full_config(config_json)); });
}
dhm_status dhm_cmd_sweep(const char* config_json) {
    return guarded([&] { dhm::experiment::cmd_sweep(full_config(config_json)); });
}
dhm_status dhm_cmd_benchmark(const char* config_json) {
    return guarded([&] { dhm::experiment::cmd_benchmark(full_config(config_json)); });
}
dhm_status dhm_cmd_generate(const char* config_json) {
    return guarded([&] { dhm::experiment::cmd_generate(full_config(config_json)); });
}
dhm_status dhm_cmd_analyze(const char* config_json) {
    return guarded([&] { dhm::experiment::cmd_analyze(full_config(config_json)); });
}

dhm_status dhm_default_config(char** json_out) {
    return guarded([&] {
        dhm::require(json_out != nullptr, dhm::ErrorCode::invalid_argument, "out is null");
        *json_out = dup_string(dhm::experiment::config_to_json(dhm::experiment::ExperimentConfig{}));
    });
}

}  // extern "C"

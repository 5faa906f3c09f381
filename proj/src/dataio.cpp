#include "dataio.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "csv.hpp"
#include "error.hpp"
#include "rng.hpp"

namespace dhm::dataio {

using nlohmann::json;

LatentVector region_latent(const std::vector<LatentVector>& tiles) {
    require(!tiles.empty(), ErrorCode::invalid_argument, "region_latent: empty tile list");
    const std::size_t d = tiles.front().size();
    LatentVector out(d, 0.0);
    for (const auto& z : tiles) {
        require(z.size() == d, ErrorCode::invalid_argument,
                "region_latent: latent dimension mismatch");
        for (std::size_t i = 0; i < d; ++i) out[i] += z[i];
    }
    for (double& v : out) v /= static_cast<double>(tiles.size());
    return out;
}

StandardizeStats standardize(std::vector<std::vector<double>>& rows,
                             const std::optional<StandardizeStats>& stats) {
    require(!rows.empty(), ErrorCode::invalid_argument, "standardize: no rows");
    const std::size_t d = rows.front().size();
    for (const auto& r : rows) {
        require(r.size() == d, ErrorCode::invalid_argument, "standardize: ragged matrix");
        for (double v : r)
            require(std::isfinite(v), ErrorCode::invalid_argument,
                    "standardize: non-finite input");
    }
    StandardizeStats s;
    if (stats) {
        require(stats->mean.size() == d && stats->sd.size() == d,
                ErrorCode::invalid_argument, "standardize: stats dimension mismatch");
        s = *stats;
    } else {
        require(rows.size() >= 2, ErrorCode::invalid_argument,
                "standardize: need >= 2 rows to fit stats");
        s.mean.assign(d, 0.0);
        s.sd.assign(d, 0.0);
        for (const auto& r : rows)
            for (std::size_t j = 0; j < d; ++j) s.mean[j] += r[j];
        for (double& m : s.mean) m /= static_cast<double>(rows.size());
        for (const auto& r : rows)
            for (std::size_t j = 0; j < d; ++j) {
                double c = r[j] - s.mean[j];
                s.sd[j] += c * c;
            }
        for (double& v : s.sd) v = std::sqrt(v / static_cast<double>(rows.size()));
        for (double& v : s.sd)
            if (v < 1e-12) v = 0.0;
    }
    for (auto& r : rows)
        for (std::size_t j = 0; j < d; ++j)
            r[j] = s.sd[j] == 0.0 ? 0.0 : (r[j] - s.mean[j]) / s.sd[j];
    return s;
}

void unstandardize(std::vector<std::vector<double>>& rows, const StandardizeStats& stats) {
    for (auto& r : rows) {
        require(r.size() == stats.mean.size(), ErrorCode::invalid_argument,
                "unstandardize: dimension mismatch");
        for (std::size_t j = 0; j < r.size(); ++j)
            r[j] = stats.sd[j] == 0.0 ? stats.mean[j] : r[j] * stats.sd[j] + stats.mean[j];
    }
}

FoldSplit make_folds(const std::vector<std::string>& ids, int k, std::uint64_t seed) {
    require(k >= 2, ErrorCode::invalid_argument, "make_folds: k must be >= 2");
    require(static_cast<int>(ids.size()) >= k, ErrorCode::invalid_argument,
            "make_folds: more folds than ids");
    std::vector<std::string> shuffled = ids;
    Rng rng(substream(seed, "folds"));
    rng.shuffle(shuffled);
    FoldSplit split;
    split.fold_count = k;
    for (std::size_t i = 0; i < shuffled.size(); ++i)
        split.assignments[shuffled[i]] = static_cast<int>(i % static_cast<std::size_t>(k));
    return split;
}

// ---------------------------------------------------------------------------

namespace {

std::string join_ints(const std::vector<int>& v, char sep) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) s += sep;
        s += std::to_string(v[i]);
    }
    return s;
}

double parse_double(const std::string& s) {
    try {
        std::size_t pos = 0;
        double v = std::stod(s, &pos);
        require(pos == s.size(), ErrorCode::io, "trailing characters in number: " + s);
        return v;
    } catch (const Error&) {
        throw;
    } catch (const std::exception&) {
        fail_io("cannot parse number: " + s);
    }
}

json truth_to_json(const World& w) {
    json j;
    j["alpha_income"] = w.truth.alpha_income;
    j["beta_im_trip"] = w.truth.beta_im_trip;
    j["beta_sd_trip"] = w.truth.beta_sd_trip;
    j["beta_alt"] = w.truth.beta_alt;
    j["modes"] = json::array();
    for (int k = 0; k < kNumModes; ++k) j["modes"].push_back(mode_name(k));
    j["archetypes"] = json::array();
    for (const auto& a : w.archetypes)
        j["archetypes"].push_back({{"id", a.id},
                                   {"street_grid_density", a.street_grid_density},
                                   {"green_fraction", a.green_fraction},
                                   {"building_scale", a.building_scale},
                                   {"curvature", a.curvature}});
    j["regions"] = json::array();
    for (std::size_t r = 0; r < w.regions.size(); ++r) {
        const auto& rt = w.region_truth[r];
        j["regions"].push_back(
            {{"region_id", w.regions[r].region_id},
             {"archetype_id", rt.archetype_id},
             {"features", std::vector<double>(rt.features.begin(), rt.features.end())}});
    }
    j["config"] = {{"seed", w.config.seed},
                   {"n_regions", w.config.n_regions},
                   {"tiles_per_region", w.config.tiles_per_region},
                   {"n_trips", w.config.n_trips},
                   {"tile_size", w.config.tile_size},
                   {"sd_dim", w.config.sd_dim},
                   {"trip_sd_dim", w.config.trip_sd_dim},
                   {"n_alt_attrs", w.config.n_alt_attrs},
                   {"sd_noise", w.config.sd_noise},
                   {"feature_jitter", w.config.feature_jitter},
                   {"render_noise", w.config.render_noise}};
    return j;
}

void truth_from_json(const json& j, World& w) {
    w.truth.alpha_income = j.at("alpha_income").get<double>();
    w.truth.beta_im_trip = j.at("beta_im_trip").get<std::vector<std::vector<double>>>();
    w.truth.beta_sd_trip = j.at("beta_sd_trip").get<std::vector<std::vector<double>>>();
    w.truth.beta_alt = j.at("beta_alt").get<std::vector<double>>();
    w.archetypes.clear();
    for (const auto& aj : j.at("archetypes")) {
        Archetype a;
        a.id = aj.at("id").get<int>();
        a.street_grid_density = aj.at("street_grid_density").get<double>();
        a.green_fraction = aj.at("green_fraction").get<double>();
        a.building_scale = aj.at("building_scale").get<double>();
        a.curvature = aj.at("curvature").get<double>();
        w.archetypes.push_back(a);
    }
    const auto& cj = j.at("config");
    w.config.seed = cj.at("seed").get<std::uint64_t>();
    w.config.n_regions = cj.at("n_regions").get<int>();
    w.config.tiles_per_region = cj.at("tiles_per_region").get<int>();
    w.config.n_trips = cj.at("n_trips").get<int>();
    w.config.tile_size = cj.at("tile_size").get<int>();
    w.config.sd_dim = cj.at("sd_dim").get<int>();
    w.config.trip_sd_dim = cj.at("trip_sd_dim").get<int>();
    w.config.n_alt_attrs = cj.at("n_alt_attrs").get<int>();
    w.config.sd_noise = cj.at("sd_noise").get<double>();
    w.config.feature_jitter = cj.at("feature_jitter").get<double>();
    w.config.render_noise = cj.at("render_noise").get<double>();
}

}  // namespace

void save_world(const World& world, const std::string& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    require(!ec, ErrorCode::io, "cannot create directory " + dir);

    const int sd_dim = world.regions.empty()
                           ? world.config.sd_dim
                           : static_cast<int>(world.regions.front().x_sd.size());
    {
        CsvTable t;
        t.header.push_back("region_id");
        for (int j = 0; j < sd_dim; ++j) t.header.push_back("sd_" + std::to_string(j));
        for (int k = 0; k < kNumModes; ++k)
            t.header.push_back(std::string("share_") + mode_name(k));
        t.header.push_back("tile_ids");
        for (const auto& r : world.regions) {
            std::vector<std::string> row;
            row.push_back(r.region_id);
            for (double v : r.x_sd) row.push_back(format_double(v));
            for (double v : r.shares) row.push_back(format_double(v));
            row.push_back(join_ints(r.tile_ids, ';'));
            t.rows.push_back(std::move(row));
        }
        write_csv(dir + "/regions.csv", t);
    }
    {
        const int trip_sd = world.trips.empty()
                                ? world.config.trip_sd_dim
                                : static_cast<int>(world.trips.front().x_sd_trip.size());
        const int n_attr = world.trips.empty()
                               ? world.config.n_alt_attrs
                               : static_cast<int>(world.trips.front().x_alt.front().size());
        CsvTable t;
        t.header = {"trip_id", "origin", "destination", "chosen"};
        for (int j = 0; j < trip_sd; ++j) t.header.push_back("sd_" + std::to_string(j));
        for (int k = 0; k < kNumModes; ++k)
            for (int a = 0; a < n_attr; ++a)
                t.header.push_back("alt_" + std::to_string(k) + "_" + std::to_string(a));
        for (const auto& trip : world.trips) {
            std::vector<std::string> row = {trip.trip_id, trip.origin, trip.destination,
                                            std::to_string(trip.chosen)};
            for (double v : trip.x_sd_trip) row.push_back(format_double(v));
            for (const auto& alt : trip.x_alt)
                for (double v : alt) row.push_back(format_double(v));
            t.rows.push_back(std::move(row));
        }
        write_csv(dir + "/trips.csv", t);
    }
    {
        int h = world.config.tile_size, wd = world.config.tile_size, c = 3;
        if (!world.tiles.empty()) {
            h = world.tiles.front().height;
            wd = world.tiles.front().width;
            c = world.tiles.front().channels;
        }
        std::ofstream bin(dir + "/tiles.bin", std::ios::binary);
        require(static_cast<bool>(bin), ErrorCode::io, "cannot write tiles.bin");
        static_assert(std::endian::native == std::endian::little,
                      "tile format assumes a little-endian host");
        std::vector<float> buf;
        for (const auto& tile : world.tiles) {
            require(tile.height == h && tile.width == wd && tile.channels == c,
                    ErrorCode::invalid_argument, "tiles must share one shape");
            buf.assign(tile.pixels.begin(), tile.pixels.end());
            bin.write(reinterpret_cast<const char*>(buf.data()),
                      static_cast<std::streamsize>(buf.size() * sizeof(float)));
        }
        require(static_cast<bool>(bin), ErrorCode::io, "write failed: tiles.bin");
        json sidecar = {{"height", h},
                        {"width", wd},
                        {"channels", c},
                        {"count", world.tiles.size()}};
        std::ofstream js(dir + "/tiles.json", std::ios::binary);
        js << sidecar.dump(2) << "\n";
        require(static_cast<bool>(js), ErrorCode::io, "write failed: tiles.json");
    }
    {
        std::ofstream js(dir + "/truth.json", std::ios::binary);
        js << truth_to_json(world).dump(2) << "\n";
        require(static_cast<bool>(js), ErrorCode::io, "write failed: truth.json");
    }
}

World load_world(const std::string& dir) {
    World w;
    {
        std::ifstream js(dir + "/truth.json");
        require(static_cast<bool>(js), ErrorCode::io, "cannot open " + dir + "/truth.json");
        json j = json::parse(js);
        truth_from_json(j, w);
        for (const auto& rj : j.at("regions")) {
            RegionTruth rt;
            rt.archetype_id = rj.at("archetype_id").get<int>();
            auto f = rj.at("features").get<std::vector<double>>();
            require(f.size() == kNumArchetypeFeatures, ErrorCode::io,
                    "truth.json: bad feature count");
            std::copy(f.begin(), f.end(), rt.features.begin());
            w.region_truth.push_back(rt);
        }
    }
    {
        CsvTable t = read_csv(dir + "/regions.csv");
        int sd_dim = 0;
        while (t.column("sd_" + std::to_string(sd_dim)) >= 0) ++sd_dim;
        require(sd_dim > 0, ErrorCode::io, "regions.csv: no sd_* columns");
        int id_col = t.column("region_id");
        int tiles_col = t.column("tile_ids");
        require(id_col >= 0 && tiles_col >= 0, ErrorCode::io, "regions.csv: missing columns");
        std::vector<int> share_cols;
        for (int k = 0; k < kNumModes; ++k) {
            int c = t.column(std::string("share_") + mode_name(k));
            require(c >= 0, ErrorCode::io, "regions.csv: missing share column");
            share_cols.push_back(c);
        }
        for (const auto& row : t.rows) {
            RegionRecord r;
            r.region_id = row[static_cast<std::size_t>(id_col)];
            for (int j = 0; j < sd_dim; ++j)
                r.x_sd.push_back(parse_double(
                    row[static_cast<std::size_t>(t.column("sd_" + std::to_string(j)))]));
            for (int c : share_cols)
                r.shares.push_back(parse_double(row[static_cast<std::size_t>(c)]));
            for (const auto& s : split(row[static_cast<std::size_t>(tiles_col)], ';'))
                if (!s.empty()) r.tile_ids.push_back(static_cast<int>(parse_double(s)));
            w.regions.push_back(std::move(r));
        }
    }
    {
        CsvTable t = read_csv(dir + "/trips.csv");
        int trip_sd = 0;
        while (t.column("sd_" + std::to_string(trip_sd)) >= 0) ++trip_sd;
        int n_attr = 0;
        while (t.column("alt_0_" + std::to_string(n_attr)) >= 0) ++n_attr;
        for (const auto& row : t.rows) {
            TripRecord trip;
            trip.trip_id = row[static_cast<std::size_t>(t.column("trip_id"))];
            trip.origin = row[static_cast<std::size_t>(t.column("origin"))];
            trip.destination = row[static_cast<std::size_t>(t.column("destination"))];
            trip.chosen = static_cast<int>(
                parse_double(row[static_cast<std::size_t>(t.column("chosen"))]));
            for (int j = 0; j < trip_sd; ++j)
                trip.x_sd_trip.push_back(parse_double(
                    row[static_cast<std::size_t>(t.column("sd_" + std::to_string(j)))]));
            for (int k = 0; k < kNumModes; ++k) {
                std::vector<double> alt;
                for (int a = 0; a < n_attr; ++a)
                    alt.push_back(parse_double(row[static_cast<std::size_t>(t.column(
                        "alt_" + std::to_string(k) + "_" + std::to_string(a)))]));
                trip.x_alt.push_back(std::move(alt));
            }
            w.trips.push_back(std::move(trip));
        }
    }
    {
        std::ifstream js(dir + "/tiles.json");
        require(static_cast<bool>(js), ErrorCode::io, "cannot open " + dir + "/tiles.json");
        json sidecar = json::parse(js);
        int h = sidecar.at("height").get<int>();
        int wd = sidecar.at("width").get<int>();
        int c = sidecar.at("channels").get<int>();
        std::size_t count = sidecar.at("count").get<std::size_t>();
        std::ifstream bin(dir + "/tiles.bin", std::ios::binary);
        require(static_cast<bool>(bin), ErrorCode::io, "cannot open " + dir + "/tiles.bin");
        std::size_t per = static_cast<std::size_t>(h) * wd * c;
        std::vector<float> buf(per);
        for (std::size_t i = 0; i < count; ++i) {
            bin.read(reinterpret_cast<char*>(buf.data()),
                     static_cast<std::streamsize>(per * sizeof(float)));
            require(static_cast<std::size_t>(bin.gcount()) == per * sizeof(float),
                    ErrorCode::io, "tiles.bin truncated");
            ImageTile tile;
            tile.height = h;
            tile.width = wd;
            tile.channels = c;
            tile.pixels.assign(buf.begin(), buf.end());
            w.tiles.push_back(std::move(tile));
        }
    }
    w.rebuild_lookup();
    for (const auto& r : w.regions)
        for (int tid : r.tile_ids) {
            require(tid >= 0 && tid < static_cast<int>(w.tiles.size()), ErrorCode::io,
                    "region references missing tile");
            w.tiles[static_cast<std::size_t>(tid)].region_id = r.region_id;
        }
    for (const auto& trip : w.trips) {
        w.region_index(trip.origin);
        w.region_index(trip.destination);
    }
    return w;
}

}  // namespace dhm::dataio

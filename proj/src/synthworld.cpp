#include "synthworld.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "error.hpp"

namespace dhm {

int World::region_index(const std::string& region_id) const {
    auto it = region_lookup.find(region_id);
    require(it != region_lookup.end(), ErrorCode::invalid_argument,
            "unknown region id: " + region_id);
    return it->second;
}

}  // namespace dhm

namespace dhm::synthworld {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

// Sociodemographic columns are affine in two visible indices,
// u1 = grid - green and u2 = curvature. The building_scale feature and the
// grid+green combination are deliberately absent so that imagery carries
// information the numeric data cannot.
struct SdRow {
    const char* name;
    double intercept, coef_u1, coef_u2;
};
constexpr SdRow kSdMap[] = {
    {"pop_density", 0.5, 0.9, -0.2},  {"income", 0.4, 0.5, 0.5},
    {"pct_college", 0.5, 0.7, 0.1},   {"avg_commute", 0.5, -0.4, 0.8},
    {"pct_adults", 0.5, 0.3, -0.6},   {"pct_renters", 0.4, 0.8, 0.3},
    {"veh_per_hh", 0.6, -0.7, 0.4},   {"hh_size", 0.5, -0.2, -0.9},
    {"employment", 0.5, 0.6, -0.4},   {"transit_access", 0.3, 0.9, 0.2},
};
constexpr int kSdMapRows = static_cast<int>(sizeof(kSdMap) / sizeof(kSdMap[0]));

// Region-level imagery preferences over (grid, green, building, curvature);
// the reference mode keeps a zero row.
constexpr double kRegionBeta[kNumModes][kNumArchetypeFeatures] = {
    {-1.0, 0.8, -1.2, 1.0},  // auto
    {1.2, 0.6, 0.8, -0.8},   // active
    {1.6, -0.9, 1.8, -0.5},  // pt
    {0.0, 0.0, 0.0, 0.0},    // other (reference)
};

constexpr double kAltTimeBase[kNumModes] = {0.4, 1.3, 0.9, 1.0};
constexpr double kAltCostBase[kNumModes] = {0.9, 0.05, 0.45, 0.6};

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

}  // namespace

std::vector<Archetype> default_archetypes() {
    return {
        {0, 0.30, 0.70, 0.30, 0.75},  // low-density residential
        {1, 0.90, 0.10, 0.90, 0.10},  // dense core
        {2, 0.55, 0.15, 0.55, 0.55},  // industrial town center
        {3, 0.80, 0.45, 0.20, 0.10},  // mixed urban
        {4, 0.10, 0.90, 0.05, 0.45},  // green outskirts
    };
}

ImageTile render_tile(const Archetype& a, std::uint64_t noise_seed, int tile_size,
                      double pixel_noise) {
    for (double f : a.features())
        require(f >= 0.0 && f <= 1.0, ErrorCode::invalid_argument,
                "archetype features must lie in [0,1]");
    const int s = tile_size;
    ImageTile tile;
    tile.height = s;
    tile.width = s;
    tile.channels = 3;
    tile.pixels.assign(static_cast<std::size_t>(s) * s * 3, 0.0);

    Rng rng(noise_seed);

    // Smooth random field that drives where vegetation sits.
    double kx[3], ky[3], ph[3];
    for (int i = 0; i < 3; ++i) {
        kx[i] = kTwoPi * (1.0 + rng.below(3)) / s;
        ky[i] = kTwoPi * (1.0 + rng.below(3)) / s;
        ph[i] = rng.uniform(0.0, kTwoPi);
    }
    std::vector<double> field(static_cast<std::size_t>(s) * s);
    for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
            double f = 0.0;
            for (int i = 0; i < 3; ++i)
                f += std::sin(kx[i] * x + ky[i] * y + ph[i]) / (i + 1.0);
            field[static_cast<std::size_t>(y) * s + x] = f;
        }

    // Exactly round(green_fraction * pixels) cells become vegetation.
    std::vector<int> order(field.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int i, int j) {
        if (field[static_cast<std::size_t>(i)] != field[static_cast<std::size_t>(j)])
            return field[static_cast<std::size_t>(i)] < field[static_cast<std::size_t>(j)];
        return i < j;
    });
    const int green_count =
        static_cast<int>(std::lround(a.green_fraction * static_cast<double>(field.size())));
    std::vector<char> green(field.size(), 0);
    for (int i = 0; i < green_count; ++i) green[static_cast<std::size_t>(order[i])] = 1;

    const int block = 2 + static_cast<int>(std::lround(a.building_scale * 6.0));
    const int bx = static_cast<int>(rng.below(static_cast<std::uint64_t>(block)));
    const int by = static_cast<int>(rng.below(static_cast<std::uint64_t>(block)));

    for (int y = 0; y < s; ++y) {
        for (int x = 0; x < s; ++x) {
            std::size_t p = static_cast<std::size_t>(y) * s + x;
            double r, g, b;
            double shade = 0.06 * field[p];
            if (green[p]) {
                r = 0.13 + 0.4 * shade;
                g = 0.44 + shade;
                b = 0.10 + 0.3 * shade;
            } else {
                r = 0.42 + shade;
                g = 0.38 + shade;
                b = 0.30 + shade;
                int cx = (x + bx) / block, cy = (y + by) / block;
                Rng cell(noise_seed ^ fnv1a64("cell") ^
                         (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(cx * 797 + cy + 1)));
                if (cell.uniform() < 0.62) {
                    double lift = 0.3 * (cell.uniform() - 0.25);
                    bool edge = ((x + bx) % block == 0) || ((y + by) % block == 0);
                    double base = edge ? 0.36 : 0.56 + lift;
                    if (!edge) {
                        // roof texture: small-scale development is busy and
                        // high-contrast, large footprints smooth out
                        const int granule = 1 + (block - 2) / 3;
                        const double amp = 0.40 * (1.0 - 0.85 * a.building_scale);
                        Rng tex(noise_seed ^ fnv1a64("tex") ^
                                (0x9e3779b97f4a7c15ULL *
                                 static_cast<std::uint64_t>((x / granule) * 1543 +
                                                            (y / granule) + 7)));
                        base += amp * (tex.uniform() - 0.5);
                    }
                    r = base + 0.02;
                    g = base;
                    b = base - 0.02;
                }
            }
            tile.at(y, x, 0) = r;
            tile.at(y, x, 1) = g;
            tile.at(y, x, 2) = b;
        }
    }

    // Street lattice: count from density, bend from curvature.
    const int n_lines = static_cast<int>(std::lround(a.street_grid_density * 5.0));
    if (n_lines > 0) {
        const double spacing = static_cast<double>(s) / n_lines;
        const double off_v = rng.uniform(0.0, spacing);
        const double off_h = rng.uniform(0.0, spacing);
        const double ph_v = rng.uniform(0.0, kTwoPi);
        const double ph_h = rng.uniform(0.0, kTwoPi);
        const double amp = 3.5 * a.curvature;
        auto paint = [&](int y, int x) {
            if (y < 0 || y >= s || x < 0 || x >= s) return;
            tile.at(y, x, 0) = 0.16;
            tile.at(y, x, 1) = 0.16;
            tile.at(y, x, 2) = 0.18;
        };
        for (int i = 0; i < n_lines; ++i) {
            double cx = off_v + i * spacing;
            double cy = off_h + i * spacing;
            for (int t = 0; t < s; ++t) {
                int xv = static_cast<int>(std::lround(cx + amp * std::sin(kTwoPi * t / s + ph_v)));
                int yh = static_cast<int>(std::lround(cy + amp * std::sin(kTwoPi * t / s + ph_h)));
                paint(t, ((xv % s) + s) % s);
                paint(((yh % s) + s) % s, t);
            }
        }
    }

    if (pixel_noise > 0.0) {
        for (double& v : tile.pixels) v = clamp01(v + pixel_noise * rng.normal());
    } else {
        for (double& v : tile.pixels) v = clamp01(v);
    }
    return tile;
}

std::vector<double> stable_softmax(const std::vector<double>& v) {
    require(!v.empty(), ErrorCode::invalid_argument, "softmax of empty vector");
    double mx = *std::max_element(v.begin(), v.end());
    std::vector<double> out(v.size());
    double z = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = std::exp(v[i] - mx);
        z += out[i];
    }
    for (double& p : out) p /= z;
    return out;
}

std::vector<double> region_share_probs(const GroundTruth& truth,
                                       const std::array<double, kNumArchetypeFeatures>& f) {
    auto beta = truth.beta_im_region();
    std::vector<double> v(beta.size(), 0.0);
    for (std::size_t k = 0; k < beta.size(); ++k)
        for (int j = 0; j < kNumArchetypeFeatures; ++j)
            v[k] += beta[k][static_cast<std::size_t>(j)] * f[static_cast<std::size_t>(j)];
    return stable_softmax(v);
}

std::vector<double> ground_truth_utilities(const TripRecord& trip, const World& world) {
    const auto& t = world.truth;
    int io = world.region_index(trip.origin);
    int id = world.region_index(trip.destination);
    const auto& fo = world.region_truth[static_cast<std::size_t>(io)].features;
    const auto& fd = world.region_truth[static_cast<std::size_t>(id)].features;
    const int K = static_cast<int>(t.beta_im_trip.size());
    std::vector<double> v(static_cast<std::size_t>(K), 0.0);
    for (int k = 0; k < K; ++k) {
        const auto& bim = t.beta_im_trip[static_cast<std::size_t>(k)];
        double u = 0.0;
        for (int j = 0; j < kNumArchetypeFeatures; ++j) {
            u += bim[static_cast<std::size_t>(j)] * fo[static_cast<std::size_t>(j)];
            u += bim[static_cast<std::size_t>(kNumArchetypeFeatures + j)] *
                 fd[static_cast<std::size_t>(j)];
        }
        const auto& bsd = t.beta_sd_trip[static_cast<std::size_t>(k)];
        for (std::size_t j = 0; j < trip.x_sd_trip.size(); ++j)
            u += bsd[j] * trip.x_sd_trip[j];
        const auto& xa = trip.x_alt[static_cast<std::size_t>(k)];
        for (std::size_t j = 0; j < t.beta_alt.size(); ++j) u += t.beta_alt[j] * xa[j];
        v[static_cast<std::size_t>(k)] = u;
    }
    return v;
}

std::vector<double> ground_truth_probs(const TripRecord& trip, const World& world) {
    return stable_softmax(ground_truth_utilities(trip, world));
}

World gen_world(const WorldConfig& config) {
    require(config.n_regions > 0 && config.tiles_per_region > 0 && config.n_trips > 0,
            ErrorCode::invalid_argument, "world sizes must be positive");
    require(config.n_regions >= 10, ErrorCode::invalid_argument, "need at least 10 regions");
    require(config.n_trips >= 100, ErrorCode::invalid_argument, "need at least 100 trips");
    require(config.sd_dim > 0 && config.sd_dim <= kSdMapRows, ErrorCode::invalid_argument,
            "sd_dim must be in [1," + std::to_string(kSdMapRows) + "]");
    require(config.trip_sd_dim >= 6, ErrorCode::invalid_argument, "trip_sd_dim too small");
    require(config.n_alt_attrs == 2, ErrorCode::invalid_argument,
            "alternative attributes are fixed to (time, cost)");
    require(config.tile_size >= 16, ErrorCode::invalid_argument, "tile_size too small");

    World w;
    w.config = config;
    w.archetypes = default_archetypes();

    // Ground truth coefficients: origin carries 60% of the regional load,
    // destination 40%, so the regional sums match kRegionBeta.
    GroundTruth truth;
    truth.alpha_income = 1.0;
    for (int k = 0; k < kNumModes; ++k) {
        std::vector<double> row(2 * kNumArchetypeFeatures, 0.0);
        for (int f = 0; f < kNumArchetypeFeatures; ++f) {
            row[static_cast<std::size_t>(f)] = 0.6 * kRegionBeta[k][f];
            row[static_cast<std::size_t>(kNumArchetypeFeatures + f)] = 0.4 * kRegionBeta[k][f];
        }
        truth.beta_im_trip.push_back(std::move(row));

        std::vector<double> sd(static_cast<std::size_t>(config.trip_sd_dim), 0.0);
        if (k == kAuto) {
            sd[0] = 0.40;
            sd[3] = -0.30;
        } else if (k == kActive) {
            sd[1] = 0.35;
            sd[4] = -0.25;
        } else if (k == kPt) {
            sd[2] = 0.30;
            sd[5] = -0.35;
        }
        truth.beta_sd_trip.push_back(std::move(sd));
    }
    truth.beta_alt = {-0.8, -0.5};
    w.truth = truth;

    Rng arch_rng(substream(config.seed, "archetype"));
    Rng feat_rng(substream(config.seed, "features"));
    Rng noise_rng(substream(config.seed, "sd_noise"));

    const int R = config.n_regions;
    std::vector<std::vector<double>> signal(static_cast<std::size_t>(R));
    for (int r = 0; r < R; ++r) {
        RegionTruth rt;
        rt.archetype_id = static_cast<int>(arch_rng.below(5));
        const Archetype& base = w.archetypes[static_cast<std::size_t>(rt.archetype_id)];
        auto bf = base.features();
        for (int f = 0; f < kNumArchetypeFeatures; ++f)
            rt.features[static_cast<std::size_t>(f)] = std::min(
                0.98, std::max(0.02, bf[static_cast<std::size_t>(f)] +
                                         config.feature_jitter * feat_rng.normal()));
        w.region_truth.push_back(rt);

        double u1 = rt.features[0] - rt.features[1];
        double u2 = rt.features[3];
        std::vector<double> cols(static_cast<std::size_t>(config.sd_dim));
        for (int j = 0; j < config.sd_dim; ++j)
            cols[static_cast<std::size_t>(j)] =
                kSdMap[j].intercept + kSdMap[j].coef_u1 * u1 + kSdMap[j].coef_u2 * u2;
        signal[static_cast<std::size_t>(r)] = std::move(cols);
    }

    // Observation noise scaled to each column's signal spread.
    std::vector<double> col_scale(static_cast<std::size_t>(config.sd_dim), 0.0);
    for (int j = 0; j < config.sd_dim; ++j) {
        double mean = 0.0;
        for (int r = 0; r < R; ++r) mean += signal[static_cast<std::size_t>(r)][static_cast<std::size_t>(j)];
        mean /= R;
        double var = 0.0;
        for (int r = 0; r < R; ++r) {
            double d = signal[static_cast<std::size_t>(r)][static_cast<std::size_t>(j)] - mean;
            var += d * d;
        }
        col_scale[static_cast<std::size_t>(j)] = std::sqrt(var / R);
        if (col_scale[static_cast<std::size_t>(j)] < 1e-12)
            col_scale[static_cast<std::size_t>(j)] = 1.0;
    }

    int tile_id = 0;
    char buf[32];
    for (int r = 0; r < R; ++r) {
        RegionRecord rec;
        std::snprintf(buf, sizeof(buf), "R%04d", r);
        rec.region_id = buf;
        rec.x_sd.resize(static_cast<std::size_t>(config.sd_dim));
        for (int j = 0; j < config.sd_dim; ++j)
            rec.x_sd[static_cast<std::size_t>(j)] =
                signal[static_cast<std::size_t>(r)][static_cast<std::size_t>(j)] +
                config.sd_noise * col_scale[static_cast<std::size_t>(j)] * noise_rng.normal();
        rec.shares = region_share_probs(w.truth, w.region_truth[static_cast<std::size_t>(r)].features);
        for (int t = 0; t < config.tiles_per_region; ++t) rec.tile_ids.push_back(tile_id++);
        w.regions.push_back(std::move(rec));
    }
    w.rebuild_lookup();

    for (int r = 0; r < R; ++r) {
        Archetype realized;
        realized.id = w.region_truth[static_cast<std::size_t>(r)].archetype_id;
        const auto& f = w.region_truth[static_cast<std::size_t>(r)].features;
        realized.street_grid_density = f[0];
        realized.green_fraction = f[1];
        realized.building_scale = f[2];
        realized.curvature = f[3];
        for (int t = 0; t < config.tiles_per_region; ++t) {
            std::uint64_t tseed = substream(config.seed, "tile",
                                            static_cast<std::uint64_t>(r) * 10007ULL +
                                                static_cast<std::uint64_t>(t));
            ImageTile tile = render_tile(realized, tseed, config.tile_size, config.render_noise);
            tile.region_id = w.regions[static_cast<std::size_t>(r)].region_id;
            w.tiles.push_back(std::move(tile));
        }
    }

    Rng trip_rng(substream(config.seed, "trips"));
    for (int n = 0; n < config.n_trips; ++n) {
        TripRecord trip;
        std::snprintf(buf, sizeof(buf), "T%06d", n);
        trip.trip_id = buf;
        trip.origin = w.regions[static_cast<std::size_t>(trip_rng.below(static_cast<std::uint64_t>(R)))].region_id;
        trip.destination =
            w.regions[static_cast<std::size_t>(trip_rng.below(static_cast<std::uint64_t>(R)))].region_id;
        trip.x_sd_trip.resize(static_cast<std::size_t>(config.trip_sd_dim));
        for (double& v : trip.x_sd_trip) v = trip_rng.normal();
        trip.x_alt.resize(kNumModes);
        for (int k = 0; k < kNumModes; ++k) {
            trip.x_alt[static_cast<std::size_t>(k)] = {
                kAltTimeBase[k] + 1.2 * trip_rng.uniform(),
                kAltCostBase[k] + 0.8 * trip_rng.uniform()};
        }
        auto probs = ground_truth_probs(trip, w);
        double u = trip_rng.uniform();
        double acc = 0.0;
        trip.chosen = kNumModes - 1;
        for (int k = 0; k < kNumModes; ++k) {
            acc += probs[static_cast<std::size_t>(k)];
            if (u < acc) {
                trip.chosen = k;
                break;
            }
        }
        w.trips.push_back(std::move(trip));
    }
    return w;
}

World gen_world(std::uint64_t seed, int n_regions, int tiles_per_region, int n_trips) {
    WorldConfig c;
    c.seed = seed;
    c.n_regions = n_regions;
    c.tiles_per_region = tiles_per_region;
    c.n_trips = n_trips;
    return gen_world(c);
}

}  // namespace dhm::synthworld

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace dhm {

// Mode set used throughout; "other" is the reference alternative.
enum Mode : int { kAuto = 0, kActive = 1, kPt = 2, kOther = 3 };
constexpr int kNumModes = 4;
inline const char* mode_name(int k) {
    static const char* names[kNumModes] = {"auto", "active", "pt", "other"};
    return names[k];
}
constexpr int kReferenceMode = kOther;

constexpr int kNumArchetypeFeatures = 4;  // grid, green, building_scale, curvature

struct RegionRecord {
    std::string region_id;
    std::vector<double> x_sd;
    std::vector<double> shares;  // per mode, sums to 1
    std::vector<int> tile_ids;
};

struct TripRecord {
    std::string trip_id;
    std::string origin;
    std::string destination;
    std::vector<double> x_sd_trip;
    std::vector<std::vector<double>> x_alt;  // [K modes][A attributes]
    int chosen = -1;
};

// Pixels live in [0,1], stored H x W x C row-major (channel fastest).
struct ImageTile {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<double> pixels;
    std::string region_id;

    double& at(int y, int x, int c) {
        return pixels[static_cast<std::size_t>((y * width + x) * channels + c)];
    }
    double at(int y, int x, int c) const {
        return pixels[static_cast<std::size_t>((y * width + x) * channels + c)];
    }
};

struct FoldSplit {
    int fold_count = 5;
    std::unordered_map<std::string, int> assignments;
};

struct Archetype {
    int id = 0;
    double street_grid_density = 0.0;
    double green_fraction = 0.0;
    double building_scale = 0.0;
    double curvature = 0.0;

    std::array<double, kNumArchetypeFeatures> features() const {
        return {street_grid_density, green_fraction, building_scale, curvature};
    }
};

// True choice process behind the synthetic world. beta_im_trip is per mode
// over the concatenated (origin, destination) archetype features; the region
// share model uses the origin+destination blocks collapsed onto one region.
// The reference mode's rows are all zero.
struct GroundTruth {
    std::vector<std::vector<double>> beta_im_trip;  // K x 2F
    std::vector<std::vector<double>> beta_sd_trip;  // K x trip_sd_dim
    std::vector<double> beta_alt;                   // A, shared across modes
    double alpha_income = 1.0;

    // Region-level imagery coefficients: origin and destination blocks summed.
    std::vector<std::vector<double>> beta_im_region() const {
        std::vector<std::vector<double>> out;
        for (const auto& row : beta_im_trip) {
            std::vector<double> r(kNumArchetypeFeatures);
            for (int f = 0; f < kNumArchetypeFeatures; ++f)
                r[static_cast<std::size_t>(f)] =
                    row[static_cast<std::size_t>(f)] +
                    row[static_cast<std::size_t>(kNumArchetypeFeatures + f)];
            out.push_back(std::move(r));
        }
        return out;
    }
};

struct RegionTruth {
    int archetype_id = 0;
    std::array<double, kNumArchetypeFeatures> features{};
};

struct WorldConfig {
    std::uint64_t seed = 7;
    int n_regions = 200;
    int tiles_per_region = 4;
    int n_trips = 20000;
    int tile_size = 32;
    int sd_dim = 10;
    int trip_sd_dim = 42;
    int n_alt_attrs = 2;
    double sd_noise = 0.1;        // observation noise as a fraction of feature scale
    double feature_jitter = 0.08; // within-archetype spread
    double render_noise = 0.03;   // pixel noise in rendered tiles
};

struct World {
    WorldConfig config;
    std::vector<Archetype> archetypes;
    std::vector<RegionRecord> regions;
    std::vector<TripRecord> trips;
    std::vector<ImageTile> tiles;
    std::vector<RegionTruth> region_truth;  // parallel to regions
    GroundTruth truth;
    std::unordered_map<std::string, int> region_lookup;

    void rebuild_lookup() {
        region_lookup.clear();
        for (std::size_t i = 0; i < regions.size(); ++i)
            region_lookup[regions[i].region_id] = static_cast<int>(i);
    }
    int region_index(const std::string& region_id) const;
};

}  // namespace dhm

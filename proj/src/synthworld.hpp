#pragma once

#include "rng.hpp"
#include "types.hpp"

namespace dhm::synthworld {

// The five archetype templates the generator draws from.
std::vector<Archetype> default_archetypes();

// Deterministic procedural tile for one archetype. Streets come from
// street_grid_density (bent by curvature), vegetation from green_fraction and
// block texture from building_scale; everything else is seeded nuisance.
ImageTile render_tile(const Archetype& a, std::uint64_t noise_seed, int tile_size = 32,
                      double pixel_noise = 0.03);

// Full miniature city: regions, tiles, trips, ground truth. Pure function of
// the config; the same config reproduces the same world bit for bit.
World gen_world(const WorldConfig& config);
World gen_world(std::uint64_t seed, int n_regions, int tiles_per_region, int n_trips);

// Choice probabilities of the true process for one trip.
std::vector<double> ground_truth_probs(const TripRecord& trip, const World& world);

// Utility of every mode under the true process (softmax-free view).
std::vector<double> ground_truth_utilities(const TripRecord& trip, const World& world);

// Exact share vector of the true region-level process for realized features.
std::vector<double> region_share_probs(const GroundTruth& truth,
                                       const std::array<double, kNumArchetypeFeatures>& f);

std::vector<double> stable_softmax(const std::vector<double>& v);

}  // namespace dhm::synthworld

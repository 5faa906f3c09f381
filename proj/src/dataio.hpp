#pragma once

#include <optional>
#include <string>
#include <vector>

#include "types.hpp"

namespace dhm::dataio {

using LatentVector = std::vector<double>;

// Elementwise mean of per-tile latents (the "linear combination in latent
// space" that turns tile latents into one region latent).
LatentVector region_latent(const std::vector<LatentVector>& tiles);

struct StandardizeStats {
    std::vector<double> mean;
    std::vector<double> sd;  // population convention; 0 marks a constant column
};

// Column-standardizes `rows` in place. Fits stats when none are given
// (requires >= 2 rows); otherwise applies the stored ones. Constant columns
// map to all-zero.
StandardizeStats standardize(std::vector<std::vector<double>>& rows,
                             const std::optional<StandardizeStats>& stats = std::nullopt);
void unstandardize(std::vector<std::vector<double>>& rows, const StandardizeStats& stats);

FoldSplit make_folds(const std::vector<std::string>& ids, int k, std::uint64_t seed);

// World persistence: regions.csv, trips.csv, tiles.bin + tiles.json and
// truth.json under `dir`. save(load(dir)) is byte-identical.
void save_world(const World& world, const std::string& dir);
World load_world(const std::string& dir);

}  // namespace dhm::dataio

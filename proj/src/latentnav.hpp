#pragma once

#include <array>
#include <string>
#include <unordered_map>
#include <vector>

#include "predictor.hpp"
#include "types.hpp"

namespace dhm::latentnav {

struct ClusterAssignment {
    int k = 0;
    predictor::DenseMatrix centroids;
    std::vector<int> labels;  // parallel to the input rows
    std::unordered_map<std::string, int> labels_by_id;
    double inertia = 0.0;
    std::vector<double> inertia_history;  // per Lloyd iteration
};

// k-means++ seeding followed by Lloyd iterations until the assignment stops
// changing (ties resolved toward the lowest cluster index).
ClusterAssignment kmeans(const predictor::DenseMatrix& points,
                         const std::vector<std::string>& ids, int k, std::uint64_t seed,
                         int max_iters = 300);

struct Embedding2D {
    std::vector<std::string> ids;
    std::vector<std::array<double, 2>> coords;
    std::vector<double> objective_history;  // tSNE KL per iteration (empty for PCA)
};

Embedding2D embed2d_tsne(const predictor::DenseMatrix& points,
                         const std::vector<std::string>& ids, double perplexity, int iters,
                         std::uint64_t seed);
Embedding2D embed2d_pca(const predictor::DenseMatrix& points,
                        const std::vector<std::string>& ids);

// KL objective of an existing embedding against affinities of `points`;
// used to check that the embedding depends on pairwise distances only.
double tsne_objective(const predictor::DenseMatrix& points, double perplexity,
                      const Embedding2D& embedding);

struct ClusterProfile {
    int cluster = 0;
    int size = 0;
    std::vector<double> mean_x_sd;
    std::vector<double> mean_shares;
};

std::vector<ClusterProfile> cluster_profile(const ClusterAssignment& assignment,
                                            const std::vector<RegionRecord>& regions);

}  // namespace dhm::latentnav

#include "latentnav.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>

#include "error.hpp"
#include "rng.hpp"

namespace dhm::latentnav {

namespace {

double sq_dist(const predictor::DenseMatrix& m, int a, const std::vector<double>& c) {
    double s = 0.0;
    for (int j = 0; j < m.cols; ++j) {
        double d = m.at(a, j) - c[static_cast<std::size_t>(j)];
        s += d * d;
    }
    return s;
}

std::vector<double> pairwise_sq(const predictor::DenseMatrix& x) {
    const int n = x.rows;
    std::vector<double> d(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            double s = 0.0;
            for (int c = 0; c < x.cols; ++c) {
                double t = x.at(i, c) - x.at(j, c);
                s += t * t;
            }
            d[static_cast<std::size_t>(i) * n + j] = s;
            d[static_cast<std::size_t>(j) * n + i] = s;
        }
    return d;
}

// Symmetric tSNE affinities with per-point bandwidth matched to perplexity.
std::vector<double> tsne_affinities(const predictor::DenseMatrix& x, double perplexity) {
    const int n = x.rows;
    auto d2 = pairwise_sq(x);
    std::vector<double> p(static_cast<std::size_t>(n) * n, 0.0);
    const double log_perp = std::log(perplexity);
    for (int i = 0; i < n; ++i) {
        double lo = 0.0, hi = std::numeric_limits<double>::infinity(), beta = 1.0;
        std::vector<double> row(static_cast<std::size_t>(n), 0.0);
        for (int it = 0; it < 64; ++it) {
            double sum = 0.0;
            for (int j = 0; j < n; ++j) {
                row[static_cast<std::size_t>(j)] =
                    j == i ? 0.0 : std::exp(-beta * d2[static_cast<std::size_t>(i) * n + j]);
                sum += row[static_cast<std::size_t>(j)];
            }
            if (sum <= 0.0) sum = 1e-300;
            double h = 0.0;  // entropy in nats
            for (int j = 0; j < n; ++j) {
                if (j == i || row[static_cast<std::size_t>(j)] <= 0.0) continue;
                double pj = row[static_cast<std::size_t>(j)] / sum;
                h -= pj * std::log(pj);
            }
            if (std::fabs(h - log_perp) < 1e-7) break;
            if (h > log_perp) {
                lo = beta;
                beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
            } else {
                hi = beta;
                beta = 0.5 * (beta + lo);
            }
        }
        double sum = 0.0;
        for (double v : row) sum += v;
        if (sum <= 0.0) sum = 1e-300;
        for (int j = 0; j < n; ++j)
            p[static_cast<std::size_t>(i) * n + j] = row[static_cast<std::size_t>(j)] / sum;
    }
    // symmetrize
    std::vector<double> sym(p.size(), 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            sym[static_cast<std::size_t>(i) * n + j] =
                std::max((p[static_cast<std::size_t>(i) * n + j] +
                          p[static_cast<std::size_t>(j) * n + i]) /
                             (2.0 * n),
                         i == j ? 0.0 : 1e-12);
    return sym;
}

double kl_of_embedding(const std::vector<double>& p, const std::vector<std::array<double, 2>>& y) {
    const int n = static_cast<int>(y.size());
    std::vector<double> w(static_cast<std::size_t>(n) * n, 0.0);
    double wsum = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            if (i == j) continue;
            double dx = y[static_cast<std::size_t>(i)][0] - y[static_cast<std::size_t>(j)][0];
            double dy = y[static_cast<std::size_t>(i)][1] - y[static_cast<std::size_t>(j)][1];
            double v = 1.0 / (1.0 + dx * dx + dy * dy);
            w[static_cast<std::size_t>(i) * n + j] = v;
            wsum += v;
        }
    double kl = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            if (i == j) continue;
            double pij = p[static_cast<std::size_t>(i) * n + j];
            double qij = std::max(w[static_cast<std::size_t>(i) * n + j] / wsum, 1e-12);
            if (pij > 0.0) kl += pij * std::log(pij / qij);
        }
    return kl;
}

}  // namespace

ClusterAssignment kmeans(const predictor::DenseMatrix& points,
                         const std::vector<std::string>& ids, int k, std::uint64_t seed,
                         int max_iters) {
    const int n = points.rows, d = points.cols;
    require(k >= 1 && k <= n, ErrorCode::invalid_argument,
            "kmeans: k must be in [1, n_points]");
    require(ids.empty() || static_cast<int>(ids.size()) == n, ErrorCode::invalid_argument,
            "kmeans: ids must match point count");

    Rng rng(substream(seed, "kmeans"));
    std::vector<std::vector<double>> centroids;
    centroids.push_back(points.row(static_cast<int>(rng.below(static_cast<std::uint64_t>(n)))));
    std::vector<double> d2(static_cast<std::size_t>(n), 0.0);
    while (static_cast<int>(centroids.size()) < k) {
        double total = 0.0;
        for (int i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& c : centroids) best = std::min(best, sq_dist(points, i, c));
            d2[static_cast<std::size_t>(i)] = best;
            total += best;
        }
        int pick = 0;
        if (total > 0.0) {
            double r = rng.uniform() * total, acc = 0.0;
            for (int i = 0; i < n; ++i) {
                acc += d2[static_cast<std::size_t>(i)];
                if (r < acc) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
        }
        centroids.push_back(points.row(pick));
    }

    ClusterAssignment out;
    out.k = k;
    out.labels.assign(static_cast<std::size_t>(n), 0);
    std::vector<int> prev(static_cast<std::size_t>(n), -1);
    for (int iter = 0; iter < max_iters; ++iter) {
        double inertia = 0.0;
        for (int i = 0; i < n; ++i) {
            int best = 0;
            double bd = sq_dist(points, i, centroids[0]);
            for (int c = 1; c < k; ++c) {
                double dist = sq_dist(points, i, centroids[static_cast<std::size_t>(c)]);
                if (dist < bd) {  // strict keeps the lowest index on ties
                    bd = dist;
                    best = c;
                }
            }
            out.labels[static_cast<std::size_t>(i)] = best;
            inertia += bd;
        }
        out.inertia_history.push_back(inertia);
        out.inertia = inertia;
        if (out.labels == prev) break;
        prev = out.labels;

        std::vector<std::vector<double>> sums(static_cast<std::size_t>(k),
                                              std::vector<double>(static_cast<std::size_t>(d), 0.0));
        std::vector<int> counts(static_cast<std::size_t>(k), 0);
        for (int i = 0; i < n; ++i) {
            int c = out.labels[static_cast<std::size_t>(i)];
            ++counts[static_cast<std::size_t>(c)];
            for (int j = 0; j < d; ++j)
                sums[static_cast<std::size_t>(c)][static_cast<std::size_t>(j)] += points.at(i, j);
        }
        for (int c = 0; c < k; ++c) {
            if (counts[static_cast<std::size_t>(c)] == 0) {
                // Re-seed an empty cluster on the point farthest from its centroid.
                int far = 0;
                double fd = -1.0;
                for (int i = 0; i < n; ++i) {
                    double dist = sq_dist(points, i,
                                          centroids[static_cast<std::size_t>(
                                              out.labels[static_cast<std::size_t>(i)])]);
                    if (dist > fd) {
                        fd = dist;
                        far = i;
                    }
                }
                centroids[static_cast<std::size_t>(c)] = points.row(far);
            } else {
                for (int j = 0; j < d; ++j)
                    centroids[static_cast<std::size_t>(c)][static_cast<std::size_t>(j)] =
                        sums[static_cast<std::size_t>(c)][static_cast<std::size_t>(j)] /
                        counts[static_cast<std::size_t>(c)];
            }
        }
    }

    out.centroids = predictor::DenseMatrix(k, d);
    for (int c = 0; c < k; ++c)
        for (int j = 0; j < d; ++j)
            out.centroids.at(c, j) = centroids[static_cast<std::size_t>(c)][static_cast<std::size_t>(j)];
    for (std::size_t i = 0; i < ids.size(); ++i) out.labels_by_id[ids[i]] = out.labels[i];
    return out;
}

Embedding2D embed2d_tsne(const predictor::DenseMatrix& points,
                         const std::vector<std::string>& ids, double perplexity, int iters,
                         std::uint64_t seed) {
    const int n = points.rows;
    require(n >= 10, ErrorCode::invalid_argument, "tsne: need at least 10 points");
    require(perplexity >= 2.0 && perplexity < n / 3.0, ErrorCode::invalid_argument,
            "tsne: perplexity must be in [2, n/3)");
    require(iters >= 1, ErrorCode::invalid_argument, "tsne: iters must be positive");

    auto p = tsne_affinities(points, perplexity);
    Rng rng(substream(seed, "tsne"));
    std::vector<std::array<double, 2>> y(static_cast<std::size_t>(n));
    for (auto& v : y) {
        v[0] = 1e-4 * rng.normal();
        v[1] = 1e-4 * rng.normal();
    }
    std::vector<std::array<double, 2>> inc(static_cast<std::size_t>(n), {0.0, 0.0});
    std::vector<std::array<double, 2>> gain(static_cast<std::size_t>(n), {1.0, 1.0});

    Embedding2D out;
    out.ids = ids;
    const double eta = 100.0;
    std::vector<double> w(static_cast<std::size_t>(n) * n, 0.0);
    for (int iter = 0; iter < iters; ++iter) {
        const double exag = iter < 100 ? 4.0 : 1.0;
        const double momentum = iter < 250 ? 0.5 : 0.8;
        double wsum = 0.0;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) {
                double dx = y[static_cast<std::size_t>(i)][0] - y[static_cast<std::size_t>(j)][0];
                double dy = y[static_cast<std::size_t>(i)][1] - y[static_cast<std::size_t>(j)][1];
                double v = 1.0 / (1.0 + dx * dx + dy * dy);
                w[static_cast<std::size_t>(i) * n + j] = v;
                w[static_cast<std::size_t>(j) * n + i] = v;
                wsum += 2.0 * v;
            }
        for (int i = 0; i < n; ++i) {
            double gx = 0.0, gy = 0.0;
            for (int j = 0; j < n; ++j) {
                if (j == i) continue;
                double wij = w[static_cast<std::size_t>(i) * n + j];
                double qij = std::max(wij / wsum, 1e-12);
                double mult = (exag * p[static_cast<std::size_t>(i) * n + j] - qij) * wij;
                gx += mult * (y[static_cast<std::size_t>(i)][0] - y[static_cast<std::size_t>(j)][0]);
                gy += mult * (y[static_cast<std::size_t>(i)][1] - y[static_cast<std::size_t>(j)][1]);
            }
            gx *= 4.0;
            gy *= 4.0;
            for (int dcoord = 0; dcoord < 2; ++dcoord) {
                double g = dcoord == 0 ? gx : gy;
                auto& gn = gain[static_cast<std::size_t>(i)][static_cast<std::size_t>(dcoord)];
                auto& ic = inc[static_cast<std::size_t>(i)][static_cast<std::size_t>(dcoord)];
                gn = (g * ic < 0.0) ? gn + 0.2 : std::max(gn * 0.8, 0.01);
                ic = momentum * ic - eta * gn * g;
                y[static_cast<std::size_t>(i)][static_cast<std::size_t>(dcoord)] += ic;
            }
        }
        double mx = 0.0, my = 0.0;
        for (const auto& v : y) {
            mx += v[0];
            my += v[1];
        }
        mx /= n;
        my /= n;
        for (auto& v : y) {
            v[0] -= mx;
            v[1] -= my;
        }
        out.objective_history.push_back(kl_of_embedding(p, y));
    }
    out.coords = y;
    return out;
}

Embedding2D embed2d_pca(const predictor::DenseMatrix& points,
                        const std::vector<std::string>& ids) {
    const int n = points.rows, d = points.cols;
    require(n >= 2, ErrorCode::invalid_argument, "pca: need >= 2 points");
    Eigen::MatrixXd x(n, d);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) x(i, j) = points.at(i, j);
    Eigen::RowVectorXd mean = x.colwise().mean();
    x.rowwise() -= mean;
    Eigen::MatrixXd cov = (x.transpose() * x) / std::max(1, n - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    require(es.info() == Eigen::Success, ErrorCode::numeric, "pca: eigensolver failed");
    Embedding2D out;
    out.ids = ids;
    out.coords.resize(static_cast<std::size_t>(n));
    for (int comp = 0; comp < 2; ++comp) {
        Eigen::VectorXd v = es.eigenvectors().col(d - 1 - std::min(comp, d - 1));
        int arg = 0;
        for (int j = 1; j < d; ++j)
            if (std::fabs(v(j)) > std::fabs(v(arg))) arg = j;
        if (v(arg) < 0.0) v = -v;
        Eigen::VectorXd proj = x * v;
        for (int i = 0; i < n; ++i)
            out.coords[static_cast<std::size_t>(i)][static_cast<std::size_t>(comp)] =
                d > comp ? proj(i) : 0.0;
    }
    return out;
}

double tsne_objective(const predictor::DenseMatrix& points, double perplexity,
                      const Embedding2D& embedding) {
    auto p = tsne_affinities(points, perplexity);
    return kl_of_embedding(p, embedding.coords);
}

std::vector<ClusterProfile> cluster_profile(const ClusterAssignment& assignment,
                                            const std::vector<RegionRecord>& regions) {
    require(!regions.empty(), ErrorCode::invalid_argument, "cluster_profile: no regions");
    const std::size_t sd = regions.front().x_sd.size();
    const std::size_t ks = regions.front().shares.size();
    std::vector<ClusterProfile> out(static_cast<std::size_t>(assignment.k));
    for (int c = 0; c < assignment.k; ++c) {
        out[static_cast<std::size_t>(c)].cluster = c;
        out[static_cast<std::size_t>(c)].mean_x_sd.assign(sd, 0.0);
        out[static_cast<std::size_t>(c)].mean_shares.assign(ks, 0.0);
    }
    for (const auto& r : regions) {
        auto it = assignment.labels_by_id.find(r.region_id);
        require(it != assignment.labels_by_id.end(), ErrorCode::invalid_argument,
                "cluster_profile: region missing from assignment: " + r.region_id);
        auto& p = out[static_cast<std::size_t>(it->second)];
        ++p.size;
        for (std::size_t j = 0; j < sd; ++j) p.mean_x_sd[j] += r.x_sd[j];
        for (std::size_t j = 0; j < ks; ++j) p.mean_shares[j] += r.shares[j];
    }
    for (auto& p : out) {
        if (p.size == 0) continue;
        for (double& v : p.mean_x_sd) v /= p.size;
        for (double& v : p.mean_shares) v /= p.size;
    }
    return out;
}

}  // namespace dhm::latentnav

#include <doctest.h>

#include <Eigen/Dense>

#include <cmath>

#include "predictor.hpp"
#include "synthworld.hpp"
#include "test_util.hpp"

using namespace dhm;
namespace pr = dhm::predictor;
using pr::DenseMatrix;

namespace {

DenseMatrix random_matrix(int n, int d, Rng& rng, double scale = 1.0) {
    DenseMatrix m(n, d);
    for (double& v : m.v) v = scale * rng.normal();
    return m;
}

// Reference-normalized softmax shares for a known coefficient matrix.
DenseMatrix softmax_shares(const DenseMatrix& Z, const std::vector<std::vector<double>>& beta,
                           const std::vector<double>& intercepts) {
    const int K = static_cast<int>(beta.size());
    DenseMatrix P(Z.rows, K);
    for (int i = 0; i < Z.rows; ++i) {
        std::vector<double> u(static_cast<std::size_t>(K), 0.0);
        for (int k = 0; k < K; ++k) {
            u[static_cast<std::size_t>(k)] = intercepts[static_cast<std::size_t>(k)];
            for (int j = 0; j < Z.cols; ++j)
                u[static_cast<std::size_t>(k)] +=
                    beta[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)] * Z.at(i, j);
        }
        auto p = synthworld::stable_softmax(u);
        for (int k = 0; k < K; ++k) P.at(i, k) = p[static_cast<std::size_t>(k)];
    }
    return P;
}

pr::ChoiceData true_feature_choice_data(const World& w) {
    pr::ChoiceData data;
    const int F = kNumArchetypeFeatures;
    data.latent = DenseMatrix(static_cast<int>(w.trips.size()), 2 * F);
    data.sd = DenseMatrix(static_cast<int>(w.trips.size()),
                          static_cast<int>(w.trips.front().x_sd_trip.size()));
    data.n_modes = kNumModes;
    data.n_alt_attrs = static_cast<int>(w.truth.beta_alt.size());
    for (std::size_t n = 0; n < w.trips.size(); ++n) {
        const auto& t = w.trips[n];
        const auto& fo = w.region_truth[static_cast<std::size_t>(w.region_index(t.origin))].features;
        const auto& fd = w.region_truth[static_cast<std::size_t>(w.region_index(t.destination))].features;
        for (int j = 0; j < F; ++j) {
            data.latent.at(static_cast<int>(n), j) = fo[static_cast<std::size_t>(j)];
            data.latent.at(static_cast<int>(n), F + j) = fd[static_cast<std::size_t>(j)];
        }
        for (std::size_t j = 0; j < t.x_sd_trip.size(); ++j)
            data.sd.at(static_cast<int>(n), static_cast<int>(j)) = t.x_sd_trip[j];
        for (int k = 0; k < kNumModes; ++k)
            for (int a = 0; a < data.n_alt_attrs; ++a)
                data.alt.push_back(t.x_alt[static_cast<std::size_t>(k)][static_cast<std::size_t>(a)]);
        data.chosen.push_back(t.chosen);
    }
    return data;
}

}  // namespace

TEST_CASE("lasso saturation zeroes every slope") {
    Rng rng(41);
    DenseMatrix Z = random_matrix(40, 6, rng);
    std::vector<double> y(40);
    for (int i = 0; i < 40; ++i) y[static_cast<std::size_t>(i)] = rng.normal() + 0.3;
    double theta_max = pr::lasso_saturation_theta(Z, y);
    auto m = pr::fit_linear(Z, y, theta_max * 1.000001);
    double ybar = 0.0;
    for (double v : y) ybar += v;
    ybar /= 40.0;
    for (double b : m.beta[0]) CHECK(b == 0.0);
    CHECK(m.intercepts[0] == doctest::Approx(ybar).epsilon(1e-9));
    // just below the threshold something activates
    auto m2 = pr::fit_linear(Z, y, theta_max * 0.98);
    int nnz = 0;
    for (double b : m2.beta[0])
        if (std::fabs(b) > 1e-12) ++nnz;
    CHECK(nnz >= 1);
}

TEST_CASE("theta=0 matches the normal equations") {
    Rng rng(42);
    DenseMatrix Z = random_matrix(30, 4, rng);
    std::vector<double> beta_true = {0.8, -1.2, 0.4, 0.0};
    std::vector<double> y(30);
    for (int i = 0; i < 30; ++i) {
        y[static_cast<std::size_t>(i)] = 0.7 + 0.2 * rng.normal();
        for (int j = 0; j < 4; ++j)
            y[static_cast<std::size_t>(i)] += beta_true[static_cast<std::size_t>(j)] * Z.at(i, j);
    }
    auto m = pr::fit_linear(Z, y, 0.0);

    Eigen::MatrixXd X(30, 5);
    Eigen::VectorXd yv(30);
    for (int i = 0; i < 30; ++i) {
        X(i, 0) = 1.0;
        for (int j = 0; j < 4; ++j) X(i, j + 1) = Z.at(i, j);
        yv(i) = y[static_cast<std::size_t>(i)];
    }
    Eigen::VectorXd sol = (X.transpose() * X).ldlt().solve(X.transpose() * yv);
    CHECK(m.intercepts[0] == doctest::Approx(sol(0)).epsilon(1e-6));
    for (int j = 0; j < 4; ++j)
        CHECK(m.beta[0][static_cast<std::size_t>(j)] == doctest::Approx(sol(j + 1)).epsilon(1e-6));
}

TEST_CASE("near-noiseless construction recovers the unit coefficient") {
    Rng rng(43);
    DenseMatrix Z = random_matrix(60, 5, rng);
    std::vector<double> y(60);
    for (int i = 0; i < 60; ++i) y[static_cast<std::size_t>(i)] = Z.at(i, 0);
    auto m = pr::fit_linear(Z, y, 1e-6);
    CHECK(m.beta[0][0] >= 0.99);
    CHECK(m.beta[0][0] <= 1.0);
    for (int j = 1; j < 5; ++j) CHECK(std::fabs(m.beta[0][static_cast<std::size_t>(j)]) < 1e-3);
}

TEST_CASE("coordinate descent objective never increases") {
    Rng rng(44);
    DenseMatrix Z = random_matrix(50, 8, rng);
    std::vector<double> y(50);
    for (int i = 0; i < 50; ++i) y[static_cast<std::size_t>(i)] = rng.normal();
    pr::FitInfo info;
    pr::fit_linear(Z, y, 0.05, &info);
    for (std::size_t i = 1; i < info.objective_history.size(); ++i)
        CHECK(info.objective_history[i] <= info.objective_history[i - 1] + 1e-12);
    CHECK(info.converged);
}

TEST_CASE("joint shares: uniform baseline and exact-fit identities") {
    Rng rng(45);
    DenseMatrix Z = random_matrix(25, 3, rng);
    std::vector<std::vector<double>> beta = {{0.5, -0.2, 0.1},
                                             {-0.3, 0.4, 0.0},
                                             {0.2, 0.1, -0.5},
                                             {0.0, 0.0, 0.0}};
    DenseMatrix P = softmax_shares(Z, beta, {0.1, -0.2, 0.3, 0.0});

    pr::PredictorModel zero;
    zero.head = pr::Head::joint_shares;
    zero.beta.assign(4, std::vector<double>(3, 0.0));
    zero.intercepts.assign(4, 0.0);
    zero.latent_dim = 3;
    auto uniform = pr::predict_share_probs(zero, Z);
    for (int i = 0; i < Z.rows; ++i)
        for (int k = 0; k < 4; ++k) CHECK(uniform.at(i, k) == doctest::Approx(0.25).epsilon(1e-12));
    // KL of the uniform prediction equals (1/N) sum P ln(K P)
    double expect = 0.0;
    for (int i = 0; i < P.rows; ++i)
        for (int k = 0; k < 4; ++k)
            if (P.at(i, k) > 0.0) expect += P.at(i, k) * std::log(4.0 * P.at(i, k));
    expect /= P.rows;
    CHECK(pr::kl_share_loss(P, uniform) == doctest::Approx(expect).epsilon(1e-12));
    CHECK(pr::kl_share_loss(P, P) == doctest::Approx(0.0));
}

TEST_CASE("joint shares recovers reference-normalized coefficients") {
    Rng rng(46);
    DenseMatrix Z = random_matrix(200, 3, rng);
    std::vector<std::vector<double>> beta = {{0.9, -0.5, 0.2},
                                             {-0.6, 0.7, 0.3},
                                             {0.4, 0.2, -0.8},
                                             {0.0, 0.0, 0.0}};
    std::vector<double> intercepts = {0.2, -0.1, 0.05, 0.0};
    DenseMatrix P = softmax_shares(Z, beta, intercepts);
    pr::FitInfo info;
    auto m = pr::fit_joint_shares(Z, P, 1e-6, &info);
    for (int k = 0; k < 4; ++k)
        for (int j = 0; j < 3; ++j)
            CHECK(m.beta[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)] ==
                  doctest::Approx(beta[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)])
                      .epsilon(0.05));
    for (std::size_t i = 1; i < info.objective_history.size(); ++i)
        CHECK(info.objective_history[i] <= info.objective_history[i - 1] + 1e-12);

    DenseMatrix bad = P;
    bad.at(0, 0) += 0.2;
    CHECK_THROWS_AS(pr::fit_joint_shares(Z, bad, 0.0), Error);
}

TEST_CASE("choice head: uniform cross-entropy and intercept-only limit") {
    pr::PredictorModel zero;
    zero.head = pr::Head::discrete_choice;
    zero.beta.assign(4, std::vector<double>(2, 0.0));
    zero.intercepts.assign(4, 0.0);
    zero.beta_alt.assign(1, 0.0);
    zero.latent_dim = 2;
    zero.sd_dim = 0;

    Rng rng(47);
    pr::ChoiceData data;
    data.latent = random_matrix(400, 2, rng);
    data.sd = DenseMatrix(400, 0);
    data.n_modes = 4;
    data.n_alt_attrs = 1;
    for (int i = 0; i < 400; ++i) {
        for (int k = 0; k < 4; ++k) data.alt.push_back(rng.normal());
        data.chosen.push_back(static_cast<int>(rng.below(4)));
    }
    auto probs = pr::predict_choice_probs(zero, data);
    CHECK(pr::cross_entropy(probs, data.chosen) == doctest::Approx(std::log(4.0)).epsilon(1e-12));

    // huge theta forces an intercept-only model: probabilities match the
    // empirical mode frequencies
    pr::FitInfo info;
    auto m = pr::fit_choice(data, 1e4, &info, /*penalize_alt=*/true);
    std::vector<double> freq(4, 0.0);
    for (int c : data.chosen) freq[static_cast<std::size_t>(c)] += 1.0 / 400.0;
    auto fitted = pr::predict_choice_probs(m, data);
    for (int k = 0; k < 4; ++k)
        CHECK(fitted.at(0, k) == doctest::Approx(freq[static_cast<std::size_t>(k)]).epsilon(1e-3));
    for (int k = 0; k < 4; ++k)
        for (double b : m.beta[static_cast<std::size_t>(k)]) CHECK(b == 0.0);
    // accuracy of the intercept-only fit equals the modal share
    double modal = *std::max_element(freq.begin(), freq.end());
    CHECK(pr::accuracy(fitted, data.chosen) == doctest::Approx(modal).epsilon(1e-12));
}

TEST_CASE("choice head recovers shared alternative coefficients") {
    World w = synthworld::gen_world(ldexp(1.0, 4), 30, 1, 6000);
    auto data = true_feature_choice_data(w);
    pr::FitInfo info;
    auto m = pr::fit_choice(data, 1e-6, &info);
    CHECK(info.converged);
    REQUIRE(m.beta_alt.size() == w.truth.beta_alt.size());
    for (std::size_t a = 0; a < m.beta_alt.size(); ++a)
        CHECK(m.beta_alt[a] == doctest::Approx(w.truth.beta_alt[a]).epsilon(0.12));
    for (std::size_t i = 1; i < info.objective_history.size(); ++i)
        CHECK(info.objective_history[i] <= info.objective_history[i - 1] + 1e-12);
}

TEST_CASE("a never-chosen mode is pinned with a warning") {
    Rng rng(48);
    pr::ChoiceData data;
    data.latent = random_matrix(60, 2, rng);
    data.sd = DenseMatrix(60, 0);
    data.n_modes = 4;
    data.n_alt_attrs = 0;
    for (int i = 0; i < 60; ++i)
        data.chosen.push_back(static_cast<int>(rng.below(2)) == 0 ? kAuto : kPt);
    pr::FitInfo info;
    auto m = pr::fit_choice(data, 1e-3, &info);
    REQUIRE(!info.warnings.empty());
    CHECK(m.intercepts[kActive] == doctest::Approx(-50.0));
    auto probs = pr::predict_choice_probs(m, data);
    for (int i = 0; i < 10; ++i) CHECK(probs.at(i, kActive) < 1e-12);
}

TEST_CASE("softmax predictions: positivity, normalization, shift invariance") {
    Rng rng(49);
    DenseMatrix Z = random_matrix(30, 3, rng, 2.0);
    pr::PredictorModel m;
    m.head = pr::Head::joint_shares;
    m.beta = {{1.2, -0.7, 0.1}, {0.0, 0.9, -0.4}, {-0.8, 0.2, 0.6}, {0.0, 0.0, 0.0}};
    m.intercepts = {0.3, -0.2, 0.1, 0.0};
    m.latent_dim = 3;
    auto probs = pr::predict_share_probs(m, Z);
    for (int i = 0; i < probs.rows; ++i) {
        double s = 0.0;
        for (int k = 0; k < probs.cols; ++k) {
            CHECK(probs.at(i, k) > 0.0);
            s += probs.at(i, k);
        }
        CHECK(std::fabs(s - 1.0) <= 1e-12);
    }
    // adding a constant to every alternative's utility changes nothing
    pr::PredictorModel shifted = m;
    for (double& b : shifted.intercepts) b += 7.5;
    auto probs2 = pr::predict_share_probs(shifted, Z);
    for (int i = 0; i < probs.rows; ++i)
        for (int k = 0; k < probs.cols; ++k)
            CHECK(probs.at(i, k) == doctest::Approx(probs2.at(i, k)).epsilon(1e-12));

    // brute-force oracle on one row
    auto u = std::vector<double>(4, 0.0);
    for (int k = 0; k < 4; ++k) {
        u[static_cast<std::size_t>(k)] = m.intercepts[static_cast<std::size_t>(k)];
        for (int j = 0; j < 3; ++j)
            u[static_cast<std::size_t>(k)] += m.beta[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)] * Z.at(0, j);
    }
    double zsum = 0.0;
    for (double v : u) zsum += std::exp(v);
    for (int k = 0; k < 4; ++k)
        CHECK(probs.at(0, k) ==
              doctest::Approx(std::exp(u[static_cast<std::size_t>(k)]) / zsum).epsilon(1e-12));
}

TEST_CASE("smooth objective gradients match finite differences") {
    Rng rng(50);
    // joint shares
    for (int rep = 0; rep < 5; ++rep) {
        DenseMatrix Z = random_matrix(12, 3, rng);
        std::vector<std::vector<double>> beta = {{0.5, -0.2, 0.1},
                                                 {-0.3, 0.4, 0.0},
                                                 {0.2, 0.1, -0.5},
                                                 {0.0, 0.0, 0.0}};
        DenseMatrix P = softmax_shares(Z, beta, {0.1, -0.2, 0.3, 0.0});
        std::vector<double> params(static_cast<std::size_t>(4 * 3 + 4));
        for (double& v : params) v = 0.4 * rng.normal();
        std::vector<double> grad;
        pr::joint_kl_value(Z, P, params, &grad);
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto p = params, q = params;
            double h = 1e-6;
            p[i] += h;
            q[i] -= h;
            double fd = (pr::joint_kl_value(Z, P, p, nullptr) -
                         pr::joint_kl_value(Z, P, q, nullptr)) /
                        (2 * h);
            CHECK(test::close_rel(fd, grad[i], 1e-5));
        }
    }
    // discrete choice
    for (int rep = 0; rep < 5; ++rep) {
        pr::ChoiceData data;
        data.latent = random_matrix(15, 2, rng);
        data.sd = random_matrix(15, 2, rng);
        data.n_modes = 3;
        data.n_alt_attrs = 2;
        for (int i = 0; i < 15; ++i) {
            for (int k = 0; k < 3; ++k)
                for (int a = 0; a < 2; ++a) data.alt.push_back(rng.normal());
            data.chosen.push_back(static_cast<int>(rng.below(3)));
        }
        std::vector<double> params(static_cast<std::size_t>(3 * (2 + 2) + 2 + 3));
        for (double& v : params) v = 0.4 * rng.normal();
        std::vector<double> grad;
        pr::choice_ce_value(data, params, &grad);
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto p = params, q = params;
            double h = 1e-6;
            p[i] += h;
            q[i] -= h;
            double fd = (pr::choice_ce_value(data, p, nullptr) -
                         pr::choice_ce_value(data, q, nullptr)) /
                        (2 * h);
            CHECK(test::close_rel(fd, grad[i], 1e-5));
        }
    }
}

TEST_CASE("metrics: mean prediction, perfection, balanced-random accuracy") {
    std::vector<double> y = {1.0, 2.0, 3.0, 4.0};
    double mean = 2.5;
    CHECK(pr::r_squared(y, {mean, mean, mean, mean}) == doctest::Approx(0.0));
    CHECK(pr::r_squared(y, y) == doctest::Approx(1.0));

    DenseMatrix perfect(3, 2);
    perfect.at(0, 0) = 1.0;
    perfect.at(1, 1) = 1.0;
    perfect.at(2, 0) = 1.0;
    std::vector<int> chosen = {0, 1, 0};
    CHECK(pr::cross_entropy(perfect, chosen) == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(pr::accuracy(perfect, chosen) == doctest::Approx(1.0));

    // a random predictor on balanced four-mode data sits near 25%
    Rng rng(51);
    const int n = 10000;
    DenseMatrix probs(n, 4);
    std::vector<int> labels(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        for (int k = 0; k < 4; ++k) probs.at(i, k) = rng.uniform();
        labels[static_cast<std::size_t>(i)] = static_cast<int>(rng.below(4));
    }
    double acc = pr::accuracy(probs, labels);
    CHECK(std::fabs(acc - 0.25) < 0.03);
}

TEST_CASE("evaluate_linear rescaling leaves standardized fits unchanged") {
    Rng rng(52);
    DenseMatrix Z = random_matrix(60, 4, rng);
    DenseMatrix shares(60, 4);
    for (int i = 0; i < 60; ++i) {
        std::vector<double> u = {Z.at(i, 0), -Z.at(i, 1), 0.5 * Z.at(i, 2), 0.0};
        auto p = synthworld::stable_softmax(u);
        for (int k = 0; k < 4; ++k) shares.at(i, k) = p[static_cast<std::size_t>(k)];
    }
    std::vector<std::string> ids;
    for (int i = 0; i < 60; ++i) ids.push_back("r" + std::to_string(i));
    auto folds = dataio::make_folds(ids, 5, 3);
    auto m1 = pr::evaluate_linear(Z, shares, {0, 1, 2}, 0.0, folds, ids);
    DenseMatrix Z3 = Z;
    for (double& v : Z3.v) v *= 3.0;
    auto m2 = pr::evaluate_linear(Z3, shares, {0, 1, 2}, 0.0, folds, ids);
    for (std::size_t i = 0; i < m1.r2_test.size(); ++i)
        CHECK(m1.r2_test[i] == doctest::Approx(m2.r2_test[i]).epsilon(1e-9));
}

TEST_CASE("sparsity path: monotone counts, saturation, dense start") {
    Rng rng(53);
    DenseMatrix Z = random_matrix(80, 10, rng);
    DenseMatrix shares(80, 4);
    for (int i = 0; i < 80; ++i) {
        std::vector<double> u = {0.8 * Z.at(i, 0) + 0.4 * Z.at(i, 5),
                                 -0.5 * Z.at(i, 1), 0.3 * Z.at(i, 2), 0.0};
        auto p = synthworld::stable_softmax(u);
        for (int k = 0; k < 4; ++k)
            shares.at(i, k) = p[static_cast<std::size_t>(k)];
    }
    std::vector<std::string> ids;
    for (int i = 0; i < 80; ++i) ids.push_back("r" + std::to_string(i));
    auto folds = dataio::make_folds(ids, 5, 9);
    std::vector<double> grid = {1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0};
    auto path = pr::sparsity_path_linear(Z, shares, {0, 1, 2}, grid, 4, folds, ids);
    REQUIRE(path.size() == grid.size());
    int violations = 0;
    for (std::size_t i = 1; i < path.size(); ++i) {
        int prev = path[i - 1].nnz_sd + path[i - 1].nnz_imagery;
        int cur = path[i].nnz_sd + path[i].nnz_imagery;
        if (cur > prev) ++violations;
    }
    CHECK(violations <= 1);
    CHECK(path.front().nnz_sd + path.front().nnz_imagery >= 25);  // near-dense at tiny theta
    CHECK(path.back().nnz_sd + path.back().nnz_imagery == 0);     // saturated
}

TEST_CASE("model json round-trip") {
    pr::PredictorModel m;
    m.head = pr::Head::discrete_choice;
    m.theta = 0.25;
    m.beta = {{0.1, -0.5}, {0.0, 0.0}};
    m.intercepts = {1.0, 0.0};
    m.beta_alt = {-0.8};
    m.latent_dim = 2;
    auto text = pr::model_to_json(m);
    auto back = pr::model_from_json(text);
    CHECK(back.head == m.head);
    CHECK(back.theta == m.theta);
    CHECK(back.beta == m.beta);
    CHECK(back.beta_alt == m.beta_alt);
}

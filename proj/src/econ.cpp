#include "econ.hpp"

#include <algorithm>
#include <cmath>

#include "error.hpp"
#include "synthworld.hpp"

namespace dhm::econ {

std::vector<double> market_share_sums(const predictor::DenseMatrix& probs) {
    require(probs.rows > 0 && probs.cols > 0, ErrorCode::invalid_argument,
            "market_share: empty probability matrix");
    std::vector<double> s(static_cast<std::size_t>(probs.cols), 0.0);
    for (int i = 0; i < probs.rows; ++i)
        for (int k = 0; k < probs.cols; ++k) s[static_cast<std::size_t>(k)] += probs.at(i, k);
    return s;
}

std::vector<double> market_share(const predictor::DenseMatrix& probs) {
    auto s = market_share_sums(probs);
    for (double& v : s) v /= probs.rows;
    return s;
}

double welfare(const std::vector<double>& utilities, double alpha) {
    require(alpha > 0.0, ErrorCode::invalid_argument, "welfare: alpha must be positive");
    require(!utilities.empty(), ErrorCode::invalid_argument, "welfare: empty utilities");
    double mx = *std::max_element(utilities.begin(), utilities.end());
    double s = 0.0;
    for (double v : utilities) s += std::exp(v - mx);
    return (mx + std::log(s)) / alpha;
}

double substitution(double v_j, double v_k) { return std::exp(v_j - v_k); }

std::vector<std::vector<double>> substitution_matrix(const std::vector<double>& utilities) {
    const std::size_t k = utilities.size();
    std::vector<std::vector<double>> m(k, std::vector<double>(k, 1.0));
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) m[i][j] = substitution(utilities[i], utilities[j]);
    return m;
}

std::vector<double> prob_grad_latent(const std::vector<std::vector<double>>& beta_im,
                                     const std::vector<double>& probs,
                                     const std::vector<double>& u) {
    const std::size_t K = beta_im.size();
    require(probs.size() == K && K > 0, ErrorCode::invalid_argument,
            "prob_grad_latent: mode count mismatch");
    const std::size_t L = u.size();
    for (const auto& row : beta_im)
        require(row.size() == L, ErrorCode::invalid_argument,
                "prob_grad_latent: latent dimension mismatch");
    // u . beta_k per mode, then the softmax Jacobian contraction.
    std::vector<double> ub(K, 0.0);
    for (std::size_t k = 0; k < K; ++k)
        for (std::size_t j = 0; j < L; ++j) ub[k] += u[j] * beta_im[k][j];
    double mix = 0.0;
    for (std::size_t k = 0; k < K; ++k) mix += probs[k] * ub[k];
    std::vector<double> out(K);
    for (std::size_t k = 0; k < K; ++k) out[k] = probs[k] * (ub[k] - mix);
    return out;
}

std::vector<double> prob_grad_latent(const predictor::PredictorModel& model,
                                     const std::vector<double>& z,
                                     const std::vector<double>& u) {
    auto v = model_utilities(model, z);
    auto probs = synthworld::stable_softmax(v);
    return prob_grad_latent(model.beta, probs, u);
}

double prob_deriv_alt(double beta_alt_i, double p_k) { return beta_alt_i * p_k * (1.0 - p_k); }

double prob_deriv_sd(const std::vector<std::vector<double>>& beta_sd, int var,
                     const std::vector<double>& probs, int mode) {
    const std::size_t K = beta_sd.size();
    require(probs.size() == K && mode >= 0 && mode < static_cast<int>(K),
            ErrorCode::invalid_argument, "prob_deriv_sd: bad mode");
    double pk = probs[static_cast<std::size_t>(mode)];
    double own = beta_sd[static_cast<std::size_t>(mode)][static_cast<std::size_t>(var)];
    double mix = 0.0;
    for (std::size_t k = 0; k < K; ++k)
        mix += beta_sd[k][static_cast<std::size_t>(var)] * probs[k];
    return pk * (own - mix);
}

std::vector<double> interpolate(const std::vector<double>& z_src,
                                const std::vector<std::vector<double>>& directions,
                                const std::vector<double>& coeffs) {
    require(directions.size() == coeffs.size(), ErrorCode::invalid_argument,
            "interpolate: one coefficient per direction");
    std::vector<double> z = z_src;
    for (std::size_t i = 0; i < directions.size(); ++i) {
        require(directions[i].size() == z.size(), ErrorCode::invalid_argument,
                "interpolate: direction dimension mismatch");
        for (std::size_t j = 0; j < z.size(); ++j) z[j] += coeffs[i] * directions[i][j];
    }
    return z;
}

std::vector<double> model_utilities(const predictor::PredictorModel& model,
                                    const std::vector<double>& z) {
    require(model.head == predictor::Head::joint_shares, ErrorCode::invalid_argument,
            "model_utilities: joint-shares head expected");
    const std::size_t K = model.beta.size();
    std::vector<double> v(K, 0.0);
    for (std::size_t k = 0; k < K; ++k) {
        require(model.beta[k].size() == z.size(), ErrorCode::invalid_argument,
                "model_utilities: latent dimension mismatch");
        double s = model.intercepts[k];
        for (std::size_t j = 0; j < z.size(); ++j) s += model.beta[k][j] * z[j];
        v[k] = s;
    }
    return v;
}

EconReport econ_of_latent(const predictor::PredictorModel& model,
                          const std::vector<double>& z, double alpha,
                          const std::vector<double>& probe) {
    EconReport r;
    auto v = model_utilities(model, z);
    r.market_shares = synthworld::stable_softmax(v);
    r.welfare = welfare(v, alpha);
    r.substitution = substitution_matrix(v);
    if (!probe.empty())
        r.grad_directional = prob_grad_latent(model.beta, r.market_shares, probe);
    else
        r.grad_directional.assign(v.size(), 0.0);
    return r;
}

}  // namespace dhm::econ

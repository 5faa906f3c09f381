#pragma once

#include <vector>

#include "predictor.hpp"

namespace dhm::econ {

// Market shares from a probability matrix: normalized (column means) plus the
// raw column sums.
std::vector<double> market_share(const predictor::DenseMatrix& probs);
std::vector<double> market_share_sums(const predictor::DenseMatrix& probs);

// Logsum welfare (1/alpha) log sum_j exp(V_j), computed with max-subtraction.
double welfare(const std::vector<double>& utilities, double alpha);

// Probability ratio of two alternatives, exp(V_j - V_k).
double substitution(double v_j, double v_k);
std::vector<std::vector<double>> substitution_matrix(const std::vector<double>& utilities);

// Directional gradient of softmax probabilities in latent space:
// grad_u P_k = u . (beta_k P_k - P_k sum_j P_j beta_j).
// beta_im holds one row per mode over the latent coordinates.
std::vector<double> prob_grad_latent(const std::vector<std::vector<double>>& beta_im,
                                     const std::vector<double>& probs,
                                     const std::vector<double>& u);
// Convenience for a fitted joint-shares model evaluated at z.
std::vector<double> prob_grad_latent(const predictor::PredictorModel& model,
                                     const std::vector<double>& z,
                                     const std::vector<double>& u);

// d P_k / d x_alt_ki for a shared alternative coefficient.
double prob_deriv_alt(double beta_alt_i, double p_k);
// d P_k / d x_sd_i when the variable enters every alternative's utility.
double prob_deriv_sd(const std::vector<std::vector<double>>& beta_sd, int var,
                     const std::vector<double>& probs, int mode);

// z_src + sum_i coeffs[i] * directions[i]; extrapolation is allowed.
std::vector<double> interpolate(const std::vector<double>& z_src,
                                const std::vector<std::vector<double>>& directions,
                                const std::vector<double>& coeffs);

struct EconReport {
    std::vector<double> market_shares;             // probabilities at this latent
    double welfare = 0.0;
    std::vector<std::vector<double>> substitution; // K x K probability ratios
    std::vector<double> grad_directional;          // per mode along the probe direction
    std::vector<double> sd_readout;                // supervision-head output
};

// Utilities of a joint-shares model at latent z (intercepts included).
std::vector<double> model_utilities(const predictor::PredictorModel& model,
                                    const std::vector<double>& z);

// Economic information for one latent point. `probe` is the latent direction
// the directional gradient is taken along (zeros give a zero gradient).
EconReport econ_of_latent(const predictor::PredictorModel& model,
                          const std::vector<double>& z, double alpha,
                          const std::vector<double>& probe);

}  // namespace dhm::econ

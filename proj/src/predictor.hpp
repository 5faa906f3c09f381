#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dataio.hpp"
#include "types.hpp"

namespace dhm::predictor {

enum class Head { linear_shares, joint_shares, discrete_choice };

const char* head_name(Head h);
Head head_from_name(const std::string& s);

struct DenseMatrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> v;

    DenseMatrix() = default;
    DenseMatrix(int r, int c) : rows(r), cols(c), v(static_cast<std::size_t>(r) * c, 0.0) {}
    double& at(int r, int c) { return v[static_cast<std::size_t>(r) * cols + c]; }
    double at(int r, int c) const { return v[static_cast<std::size_t>(r) * cols + c]; }
    static DenseMatrix from_rows(const std::vector<std::vector<double>>& rows);
    std::vector<double> row(int r) const;
};

// Trip-level design: utilities are
//   V_nk = beta_im[k] . latent_n + beta_sd[k] . sd_n + beta_alt . alt_nk + intercept_k
// with beta_alt shared across modes and the reference mode pinned to zero.
struct ChoiceData {
    DenseMatrix latent;        // N x L ([z_origin, z_destination] downstream)
    DenseMatrix sd;            // N x S
    std::vector<double> alt;   // N x K x A, flat
    int n_modes = kNumModes;
    int n_alt_attrs = 0;
    std::vector<int> chosen;   // N

    int n() const { return latent.rows; }
    double alt_at(int n, int k, int a) const {
        return alt[(static_cast<std::size_t>(n) * n_modes + k) * n_alt_attrs + a];
    }
};

struct FitInfo {
    int iterations = 0;
    bool converged = false;
    std::vector<double> objective_history;
    std::vector<std::string> warnings;
};

struct PredictorModel {
    Head head = Head::linear_shares;
    double theta = 0.0;
    int reference_mode = kReferenceMode;
    // linear_shares: one row per fitted mode (see fitted_modes).
    // joint_shares / discrete_choice: one row per mode, reference row zero.
    // discrete_choice rows are [latent block | sd block].
    std::vector<std::vector<double>> beta;
    std::vector<double> intercepts;
    std::vector<double> beta_alt;  // discrete_choice only
    std::vector<int> fitted_modes; // linear_shares only
    int latent_dim = 0;
    int sd_dim = 0;
};

// Mean squared error (half, per-sample) plus theta * |beta|_1, solved by
// coordinate descent; the intercept is unpenalized.
PredictorModel fit_linear(const DenseMatrix& Z, const std::vector<double>& y, double theta,
                          FitInfo* info = nullptr);

// KL(P || softmax(beta Z)) averaged over rows plus theta * |beta|_1 via
// monotone accelerated proximal gradient.
PredictorModel fit_joint_shares(const DenseMatrix& Z, const DenseMatrix& P, double theta,
                                FitInfo* info = nullptr);

PredictorModel fit_choice(const ChoiceData& data, double theta, FitInfo* info = nullptr,
                          bool penalize_alt = false);

// Smallest theta for which every fit_linear slope is zero.
double lasso_saturation_theta(const DenseMatrix& Z, const std::vector<double>& y);

std::vector<double> predict_linear(const PredictorModel& m, const DenseMatrix& Z,
                                   int fitted_row);
DenseMatrix predict_share_probs(const PredictorModel& m, const DenseMatrix& Z);
DenseMatrix predict_choice_probs(const PredictorModel& m, const ChoiceData& data);

// Smooth objective parts with analytic gradients (finite-difference targets).
// Parameters are packed as beta rows then intercepts (joint) or
// [im | sd] rows, beta_alt, intercepts (choice), reference row included.
double joint_kl_value(const DenseMatrix& Z, const DenseMatrix& P,
                      const std::vector<double>& params, std::vector<double>* grad);
double choice_ce_value(const ChoiceData& data, const std::vector<double>& params,
                       std::vector<double>* grad);

// --- metrics ---
double r_squared(const std::vector<double>& y, const std::vector<double>& yhat);
double kl_share_loss(const DenseMatrix& P, const DenseMatrix& Phat);
double cross_entropy(const DenseMatrix& probs, const std::vector<int>& chosen);
double accuracy(const DenseMatrix& probs, const std::vector<int>& chosen);

struct Metrics {
    std::vector<double> r2_train;  // per reported mode
    std::vector<double> r2_test;
    double kl_train = 0.0, kl_test = 0.0;
    double ce_train = 0.0, ce_test = 0.0;
    double acc_train = 0.0, acc_test = 0.0;
};

// Five-fold style evaluation: per fold, features are standardized on the
// train block, a model is fitted and train/test metrics are averaged.
// `report_modes` picks the share columns whose R2 is reported.
Metrics evaluate_linear(const DenseMatrix& Z, const DenseMatrix& shares,
                        const std::vector<int>& report_modes, double theta,
                        const FoldSplit& folds, const std::vector<std::string>& ids);
Metrics evaluate_joint(const DenseMatrix& Z, const DenseMatrix& shares,
                       const std::vector<int>& report_modes, double theta,
                       const FoldSplit& folds, const std::vector<std::string>& ids);
Metrics evaluate_choice(const ChoiceData& data, double theta, const FoldSplit& folds,
                        const std::vector<std::string>& ids);

struct PathPoint {
    double theta = 0.0;
    int nnz_sd = 0;       // sociodemographic block (first sd_block_cols columns)
    int nnz_imagery = 0;  // remaining columns
    double test_metric = 0.0;
};

// Linear-head sparsity path: per theta, a full-data fit supplies the nonzero
// counts (|beta| > 1e-10, summed over fitted modes) and cross-validation the
// test metric (mean R2 over report_modes).
std::vector<PathPoint> sparsity_path_linear(const DenseMatrix& Z, const DenseMatrix& shares,
                                            const std::vector<int>& report_modes,
                                            const std::vector<double>& theta_grid,
                                            int sd_block_cols, const FoldSplit& folds,
                                            const std::vector<std::string>& ids);

std::string model_to_json(const PredictorModel& m);
PredictorModel model_from_json(const std::string& text);

}  // namespace dhm::predictor

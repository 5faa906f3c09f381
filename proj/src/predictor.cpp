#include "predictor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include <json.hpp>

#include "error.hpp"

namespace dhm::predictor {

using nlohmann::json;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using CMatMap = Eigen::Map<const RowMat>;

namespace {
constexpr double kProbFloor = 1e-12;
constexpr double kPinnedIntercept = -50.0;

double soft_threshold(double x, double t) {
    if (x > t) return x - t;
    if (x < -t) return x + t;
    return 0.0;
}

void check_finite(const std::vector<double>& v, const char* what) {
    for (double x : v)
        require(std::isfinite(x), ErrorCode::invalid_argument,
                std::string(what) + ": non-finite input");
}

void softmax_rows(RowMat& u) {
    for (Eigen::Index i = 0; i < u.rows(); ++i) {
        double mx = u.row(i).maxCoeff();
        u.row(i) = (u.row(i).array() - mx).exp();
        u.row(i) /= u.row(i).sum();
    }
}
}  // namespace

const char* head_name(Head h) {
    switch (h) {
        case Head::linear_shares: return "linear_shares";
        case Head::joint_shares: return "joint_shares";
        case Head::discrete_choice: return "discrete_choice";
    }
    return "?";
}

Head head_from_name(const std::string& s) {
    if (s == "linear_shares") return Head::linear_shares;
    if (s == "joint_shares") return Head::joint_shares;
    if (s == "discrete_choice") return Head::discrete_choice;
    fail_arg("unknown predictor head: " + s);
}

DenseMatrix DenseMatrix::from_rows(const std::vector<std::vector<double>>& rows) {
    require(!rows.empty(), ErrorCode::invalid_argument, "matrix with no rows");
    DenseMatrix m(static_cast<int>(rows.size()), static_cast<int>(rows.front().size()));
    for (int r = 0; r < m.rows; ++r) {
        require(static_cast<int>(rows[static_cast<std::size_t>(r)].size()) == m.cols,
                ErrorCode::invalid_argument, "ragged matrix");
        std::copy(rows[static_cast<std::size_t>(r)].begin(),
                  rows[static_cast<std::size_t>(r)].end(), m.v.begin() + static_cast<std::ptrdiff_t>(r) * m.cols);
    }
    return m;
}

std::vector<double> DenseMatrix::row(int r) const {
    return std::vector<double>(v.begin() + static_cast<std::ptrdiff_t>(r) * cols,
                               v.begin() + static_cast<std::ptrdiff_t>(r + 1) * cols);
}

// ---------------------------------------------------------------------------
// Linear head: coordinate descent LASSO.

PredictorModel fit_linear(const DenseMatrix& Z, const std::vector<double>& y, double theta,
                          FitInfo* info) {
    require(Z.rows == static_cast<int>(y.size()) && Z.rows >= 2, ErrorCode::invalid_argument,
            "fit_linear: need >= 2 rows and matching target length");
    require(theta >= 0.0, ErrorCode::invalid_argument, "fit_linear: theta must be >= 0");
    check_finite(Z.v, "fit_linear");
    check_finite(y, "fit_linear");

    const int n = Z.rows, d = Z.cols;
    const double inv_n = 1.0 / n;
    std::vector<double> beta(static_cast<std::size_t>(d), 0.0);
    std::vector<double> col_sq(static_cast<std::size_t>(d), 0.0);
    for (int j = 0; j < d; ++j) {
        double s = 0.0;
        for (int i = 0; i < n; ++i) s += Z.at(i, j) * Z.at(i, j);
        col_sq[static_cast<std::size_t>(j)] = s * inv_n;
    }
    double b = 0.0;
    for (double v : y) b += v;
    b *= inv_n;
    std::vector<double> r(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) r[static_cast<std::size_t>(i)] = y[static_cast<std::size_t>(i)] - b;

    auto objective = [&]() {
        double sse = 0.0;
        for (double v : r) sse += v * v;
        double l1 = 0.0;
        for (double v : beta) l1 += std::fabs(v);
        return 0.5 * inv_n * sse + theta * l1;
    };

    FitInfo local;
    FitInfo& fi = info ? *info : local;
    fi.objective_history.push_back(objective());

    const double tol = 1e-8;
    const int max_sweeps = 50000;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double delta = 0.0;
        double shift = 0.0;
        for (double v : r) shift += v;
        shift *= inv_n;
        if (shift != 0.0) {
            b += shift;
            for (double& v : r) v -= shift;
            delta = std::max(delta, std::fabs(shift));
        }
        for (int j = 0; j < d; ++j) {
            if (col_sq[static_cast<std::size_t>(j)] <= 0.0) continue;
            double rho = 0.0;
            for (int i = 0; i < n; ++i) rho += Z.at(i, j) * r[static_cast<std::size_t>(i)];
            rho = rho * inv_n + col_sq[static_cast<std::size_t>(j)] * beta[static_cast<std::size_t>(j)];
            double nb = soft_threshold(rho, theta) / col_sq[static_cast<std::size_t>(j)];
            double db = nb - beta[static_cast<std::size_t>(j)];
            if (db != 0.0) {
                for (int i = 0; i < n; ++i) r[static_cast<std::size_t>(i)] -= Z.at(i, j) * db;
                beta[static_cast<std::size_t>(j)] = nb;
                delta = std::max(delta, std::fabs(db));
            }
        }
        fi.iterations = sweep + 1;
        fi.objective_history.push_back(objective());
        if (delta < tol) {
            fi.converged = true;
            break;
        }
    }

    PredictorModel m;
    m.head = Head::linear_shares;
    m.theta = theta;
    m.beta = {beta};
    m.intercepts = {b};
    m.fitted_modes = {0};
    m.latent_dim = d;
    return m;
}

double lasso_saturation_theta(const DenseMatrix& Z, const std::vector<double>& y) {
    const int n = Z.rows, d = Z.cols;
    double ybar = 0.0;
    for (double v : y) ybar += v;
    ybar /= n;
    double mx = 0.0;
    for (int j = 0; j < d; ++j) {
        double s = 0.0;
        for (int i = 0; i < n; ++i) s += Z.at(i, j) * (y[static_cast<std::size_t>(i)] - ybar);
        mx = std::max(mx, std::fabs(s / n));
    }
    return mx;
}

// ---------------------------------------------------------------------------
// Softmax heads: shared packed-parameter machinery.

namespace {

struct PackedLayout {
    int K = 0, L = 0, S = 0, A = 0;
    int size() const { return K * (L + S) + A + K; }
    int im(int k, int j) const { return k * L + j; }
    int sd(int k, int j) const { return K * L + k * S + j; }
    int alt(int a) const { return K * (L + S) + a; }
    int intercept(int k) const { return K * (L + S) + A + k; }
};

// Utilities for all rows given packed params.
RowMat utilities(const PackedLayout& lay, const DenseMatrix& latent, const DenseMatrix* sd,
                 const std::vector<double>* alt, const std::vector<double>& w) {
    const int n = latent.rows;
    RowMat u = RowMat::Zero(n, lay.K);
    CMatMap Zl(latent.v.data(), n, lay.L);
    CMatMap B(w.data(), lay.K, lay.L);
    u.noalias() = Zl * B.transpose();
    if (lay.S > 0) {
        CMatMap Zs(sd->v.data(), n, lay.S);
        CMatMap Bs(w.data() + lay.K * lay.L, lay.K, lay.S);
        u.noalias() += Zs * Bs.transpose();
    }
    if (lay.A > 0) {
        for (int i = 0; i < n; ++i)
            for (int k = 0; k < lay.K; ++k) {
                double s = 0.0;
                for (int a = 0; a < lay.A; ++a)
                    s += (*alt)[(static_cast<std::size_t>(i) * lay.K + k) * lay.A + a] *
                         w[static_cast<std::size_t>(lay.alt(a))];
                u(i, k) += s;
            }
    }
    for (int k = 0; k < lay.K; ++k)
        u.col(k).array() += w[static_cast<std::size_t>(lay.intercept(k))];
    return u;
}

void accumulate_grad(const PackedLayout& lay, const DenseMatrix& latent,
                     const DenseMatrix* sd, const std::vector<double>* alt, const RowMat& gu,
                     std::vector<double>* grad) {
    grad->assign(static_cast<std::size_t>(lay.size()), 0.0);
    const int n = latent.rows;
    CMatMap Zl(latent.v.data(), n, lay.L);
    MatMap GB(grad->data(), lay.K, lay.L);
    GB.noalias() = gu.transpose() * Zl;
    if (lay.S > 0) {
        CMatMap Zs(sd->v.data(), n, lay.S);
        MatMap GS(grad->data() + lay.K * lay.L, lay.K, lay.S);
        GS.noalias() = gu.transpose() * Zs;
    }
    if (lay.A > 0) {
        for (int i = 0; i < n; ++i)
            for (int k = 0; k < lay.K; ++k) {
                double g = gu(i, k);
                for (int a = 0; a < lay.A; ++a)
                    (*grad)[static_cast<std::size_t>(lay.alt(a))] +=
                        g * (*alt)[(static_cast<std::size_t>(i) * lay.K + k) * lay.A + a];
            }
    }
    for (int k = 0; k < lay.K; ++k)
        (*grad)[static_cast<std::size_t>(lay.intercept(k))] = gu.col(k).sum();
}

struct SmoothObjective {
    PackedLayout lay;
    const DenseMatrix* latent = nullptr;
    const DenseMatrix* sd = nullptr;
    const std::vector<double>* alt = nullptr;
    const DenseMatrix* target_shares = nullptr;  // joint head
    const std::vector<int>* chosen = nullptr;    // choice head

    double eval(const std::vector<double>& w, std::vector<double>* grad) const {
        RowMat u = utilities(lay, *latent, sd, alt, w);
        const int n = latent->rows;
        RowMat p = u;
        softmax_rows(p);
        double value = 0.0;
        RowMat gu(n, lay.K);
        if (target_shares) {
            for (int i = 0; i < n; ++i)
                for (int k = 0; k < lay.K; ++k) {
                    double obs = target_shares->at(i, k);
                    if (obs > 0.0)
                        value += obs * (std::log(obs) -
                                        std::log(std::max(p(i, k), kProbFloor)));
                    gu(i, k) = (p(i, k) - obs) / n;
                }
            value /= n;
        } else {
            for (int i = 0; i < n; ++i) {
                int c = (*chosen)[static_cast<std::size_t>(i)];
                value -= std::log(std::max(p(i, c), kProbFloor));
                for (int k = 0; k < lay.K; ++k)
                    gu(i, k) = (p(i, k) - (k == c ? 1.0 : 0.0)) / n;
            }
            value /= n;
        }
        if (grad) accumulate_grad(lay, *latent, sd, alt, gu, grad);
        return value;
    }
};

struct ProxSpec {
    std::vector<char> trainable;
    std::vector<char> penalized;
};

// Monotone FISTA with backtracking on the smooth part.
void mfista(const SmoothObjective& f, const ProxSpec& spec, double theta, double tol,
            int max_iter, std::vector<double>& w, FitInfo& fi) {
    const int P = f.lay.size();
    auto penalty = [&](const std::vector<double>& x) {
        double s = 0.0;
        for (int i = 0; i < P; ++i)
            if (spec.penalized[static_cast<std::size_t>(i)]) s += std::fabs(x[static_cast<std::size_t>(i)]);
        return theta * s;
    };
    std::vector<double> grad(static_cast<std::size_t>(P));
    std::vector<double> y = w, z = w, w_prev = w, z_prev = w;
    double fw = f.eval(w, nullptr) + penalty(w);
    fi.objective_history.push_back(fw);
    double t = 1.0;
    double L = 1.0;
    for (int iter = 0; iter < max_iter; ++iter) {
        double fy = f.eval(y, &grad);
        for (int i = 0; i < P; ++i)
            if (!spec.trainable[static_cast<std::size_t>(i)]) grad[static_cast<std::size_t>(i)] = 0.0;
        double fz = 0.0;
        for (int bt = 0; bt < 60; ++bt) {
            for (int i = 0; i < P; ++i) {
                if (!spec.trainable[static_cast<std::size_t>(i)]) {
                    z[static_cast<std::size_t>(i)] = y[static_cast<std::size_t>(i)];
                    continue;
                }
                double step = y[static_cast<std::size_t>(i)] - grad[static_cast<std::size_t>(i)] / L;
                z[static_cast<std::size_t>(i)] = spec.penalized[static_cast<std::size_t>(i)]
                                                     ? soft_threshold(step, theta / L)
                                                     : step;
            }
            double quad = fy, dist = 0.0;
            for (int i = 0; i < P; ++i) {
                double d = z[static_cast<std::size_t>(i)] - y[static_cast<std::size_t>(i)];
                quad += grad[static_cast<std::size_t>(i)] * d;
                dist += d * d;
            }
            quad += 0.5 * L * dist;
            fz = f.eval(z, nullptr);
            if (fz <= quad + 1e-12) break;
            L *= 2.0;
        }
        double Fz = fz + penalty(z);
        double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
        std::vector<double> w_next = Fz <= fw ? z : w;
        double Fw_next = std::min(Fz, fw);
        double step_delta = 0.0;
        for (int i = 0; i < P; ++i)
            step_delta = std::max(step_delta, std::fabs(z[static_cast<std::size_t>(i)] -
                                                        z_prev[static_cast<std::size_t>(i)]));
        for (int i = 0; i < P; ++i)
            y[static_cast<std::size_t>(i)] =
                w_next[static_cast<std::size_t>(i)] +
                (t / t_next) * (z[static_cast<std::size_t>(i)] - w_next[static_cast<std::size_t>(i)]) +
                ((t - 1.0) / t_next) *
                    (w_next[static_cast<std::size_t>(i)] - w_prev[static_cast<std::size_t>(i)]);
        w_prev = w;
        w = w_next;
        fw = Fw_next;
        z_prev = z;
        t = t_next;
        fi.objective_history.push_back(fw);
        fi.iterations = iter + 1;
        if (iter > 0 && step_delta < tol) {
            fi.converged = true;
            break;
        }
    }
    require(std::isfinite(fw), ErrorCode::numeric, "softmax fit diverged");
}

}  // namespace

double joint_kl_value(const DenseMatrix& Z, const DenseMatrix& P,
                      const std::vector<double>& params, std::vector<double>* grad) {
    PackedLayout lay{P.cols, Z.cols, 0, 0};
    require(static_cast<int>(params.size()) == lay.size(), ErrorCode::invalid_argument,
            "joint_kl_value: bad parameter length");
    SmoothObjective f{lay, &Z, nullptr, nullptr, &P, nullptr};
    return f.eval(params, grad);
}

double choice_ce_value(const ChoiceData& data, const std::vector<double>& params,
                       std::vector<double>* grad) {
    PackedLayout lay{data.n_modes, data.latent.cols, data.sd.cols, data.n_alt_attrs};
    require(static_cast<int>(params.size()) == lay.size(), ErrorCode::invalid_argument,
            "choice_ce_value: bad parameter length");
    SmoothObjective f{lay, &data.latent, &data.sd, &data.alt, nullptr, &data.chosen};
    return f.eval(params, grad);
}

PredictorModel fit_joint_shares(const DenseMatrix& Z, const DenseMatrix& P, double theta,
                                FitInfo* info) {
    require(Z.rows == P.rows && Z.rows > 0, ErrorCode::invalid_argument,
            "fit_joint_shares: row mismatch");
    require(theta >= 0.0, ErrorCode::invalid_argument, "fit_joint_shares: theta >= 0");
    check_finite(Z.v, "fit_joint_shares");
    for (int i = 0; i < P.rows; ++i) {
        double s = 0.0;
        for (int k = 0; k < P.cols; ++k) {
            require(P.at(i, k) >= 0.0, ErrorCode::invalid_argument,
                    "fit_joint_shares: negative share");
            s += P.at(i, k);
        }
        require(std::fabs(s - 1.0) <= 1e-6, ErrorCode::invalid_argument,
                "fit_joint_shares: share rows must sum to 1");
    }
    const int K = P.cols, d = Z.cols;
    PackedLayout lay{K, d, 0, 0};
    ProxSpec spec;
    spec.trainable.assign(static_cast<std::size_t>(lay.size()), 1);
    spec.penalized.assign(static_cast<std::size_t>(lay.size()), 0);
    const int ref = kReferenceMode < K ? kReferenceMode : K - 1;
    for (int j = 0; j < d; ++j) {
        spec.trainable[static_cast<std::size_t>(lay.im(ref, j))] = 0;
        for (int k = 0; k < K; ++k)
            spec.penalized[static_cast<std::size_t>(lay.im(k, j))] = 1;
        spec.penalized[static_cast<std::size_t>(lay.im(ref, j))] = 0;
    }
    spec.trainable[static_cast<std::size_t>(lay.intercept(ref))] = 0;

    std::vector<double> w(static_cast<std::size_t>(lay.size()), 0.0);
    SmoothObjective f{lay, &Z, nullptr, nullptr, &P, nullptr};
    FitInfo local;
    FitInfo& fi = info ? *info : local;
    mfista(f, spec, theta, 1e-8, 30000, w, fi);

    PredictorModel m;
    m.head = Head::joint_shares;
    m.theta = theta;
    m.reference_mode = ref;
    m.latent_dim = d;
    for (int k = 0; k < K; ++k) {
        std::vector<double> row(static_cast<std::size_t>(d));
        for (int j = 0; j < d; ++j) row[static_cast<std::size_t>(j)] = w[static_cast<std::size_t>(lay.im(k, j))];
        m.beta.push_back(std::move(row));
        m.intercepts.push_back(w[static_cast<std::size_t>(lay.intercept(k))]);
    }
    return m;
}

PredictorModel fit_choice(const ChoiceData& data, double theta, FitInfo* info,
                          bool penalize_alt) {
    const int n = data.n(), K = data.n_modes;
    require(n > 0 && static_cast<int>(data.chosen.size()) == n, ErrorCode::invalid_argument,
            "fit_choice: bad data");
    require(data.sd.rows == 0 || data.sd.rows == n, ErrorCode::invalid_argument,
            "fit_choice: sd rows mismatch");
    check_finite(data.latent.v, "fit_choice");
    check_finite(data.sd.v, "fit_choice");
    check_finite(data.alt, "fit_choice");

    std::vector<int> counts(static_cast<std::size_t>(K), 0);
    for (int c : data.chosen) {
        require(c >= 0 && c < K, ErrorCode::invalid_argument, "fit_choice: chosen out of range");
        ++counts[static_cast<std::size_t>(c)];
    }

    PackedLayout lay{K, data.latent.cols, data.sd.cols, data.n_alt_attrs};
    ProxSpec spec;
    spec.trainable.assign(static_cast<std::size_t>(lay.size()), 1);
    spec.penalized.assign(static_cast<std::size_t>(lay.size()), 0);
    const int ref = kReferenceMode < K ? kReferenceMode : K - 1;
    for (int k = 0; k < K; ++k) {
        bool is_ref = k == ref;
        for (int j = 0; j < lay.L; ++j) {
            spec.penalized[static_cast<std::size_t>(lay.im(k, j))] = is_ref ? 0 : 1;
            if (is_ref) spec.trainable[static_cast<std::size_t>(lay.im(k, j))] = 0;
        }
        for (int j = 0; j < lay.S; ++j) {
            spec.penalized[static_cast<std::size_t>(lay.sd(k, j))] = is_ref ? 0 : 1;
            if (is_ref) spec.trainable[static_cast<std::size_t>(lay.sd(k, j))] = 0;
        }
    }
    spec.trainable[static_cast<std::size_t>(lay.intercept(ref))] = 0;
    for (int a = 0; a < lay.A; ++a)
        spec.penalized[static_cast<std::size_t>(lay.alt(a))] = penalize_alt ? 1 : 0;

    std::vector<double> w(static_cast<std::size_t>(lay.size()), 0.0);
    FitInfo local;
    FitInfo& fi = info ? *info : local;
    for (int k = 0; k < K; ++k) {
        if (counts[static_cast<std::size_t>(k)] > 0 || k == ref) continue;
        fi.warnings.push_back(std::string("mode never chosen: ") + mode_name(k));
        w[static_cast<std::size_t>(lay.intercept(k))] = kPinnedIntercept;
        spec.trainable[static_cast<std::size_t>(lay.intercept(k))] = 0;
        for (int j = 0; j < lay.L; ++j) spec.trainable[static_cast<std::size_t>(lay.im(k, j))] = 0;
        for (int j = 0; j < lay.S; ++j) spec.trainable[static_cast<std::size_t>(lay.sd(k, j))] = 0;
    }

    SmoothObjective f{lay, &data.latent, &data.sd, &data.alt, nullptr, &data.chosen};
    mfista(f, spec, theta, 1e-7, 20000, w, fi);

    PredictorModel m;
    m.head = Head::discrete_choice;
    m.theta = theta;
    m.reference_mode = ref;
    m.latent_dim = lay.L;
    m.sd_dim = lay.S;
    for (int k = 0; k < K; ++k) {
        std::vector<double> row(static_cast<std::size_t>(lay.L + lay.S));
        for (int j = 0; j < lay.L; ++j) row[static_cast<std::size_t>(j)] = w[static_cast<std::size_t>(lay.im(k, j))];
        for (int j = 0; j < lay.S; ++j)
            row[static_cast<std::size_t>(lay.L + j)] = w[static_cast<std::size_t>(lay.sd(k, j))];
        m.beta.push_back(std::move(row));
        m.intercepts.push_back(w[static_cast<std::size_t>(lay.intercept(k))]);
    }
    for (int a = 0; a < lay.A; ++a) m.beta_alt.push_back(w[static_cast<std::size_t>(lay.alt(a))]);
    return m;
}

// ---------------------------------------------------------------------------
// Prediction and metrics.

std::vector<double> predict_linear(const PredictorModel& m, const DenseMatrix& Z,
                                   int fitted_row) {
    require(m.head == Head::linear_shares, ErrorCode::invalid_argument,
            "predict_linear: wrong head");
    const auto& beta = m.beta[static_cast<std::size_t>(fitted_row)];
    require(static_cast<int>(beta.size()) == Z.cols, ErrorCode::invalid_argument,
            "predict_linear: dimension mismatch");
    std::vector<double> out(static_cast<std::size_t>(Z.rows));
    for (int i = 0; i < Z.rows; ++i) {
        double s = m.intercepts[static_cast<std::size_t>(fitted_row)];
        for (int j = 0; j < Z.cols; ++j) s += beta[static_cast<std::size_t>(j)] * Z.at(i, j);
        out[static_cast<std::size_t>(i)] = s;
    }
    return out;
}

DenseMatrix predict_share_probs(const PredictorModel& m, const DenseMatrix& Z) {
    require(m.head == Head::joint_shares, ErrorCode::invalid_argument,
            "predict_share_probs: wrong head");
    const int K = static_cast<int>(m.beta.size());
    RowMat u(Z.rows, K);
    for (int i = 0; i < Z.rows; ++i)
        for (int k = 0; k < K; ++k) {
            double s = m.intercepts[static_cast<std::size_t>(k)];
            for (int j = 0; j < Z.cols; ++j)
                s += m.beta[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)] * Z.at(i, j);
            u(i, k) = s;
        }
    softmax_rows(u);
    DenseMatrix out(Z.rows, K);
    for (int i = 0; i < Z.rows; ++i)
        for (int k = 0; k < K; ++k) out.at(i, k) = u(i, k);
    return out;
}

DenseMatrix predict_choice_probs(const PredictorModel& m, const ChoiceData& data) {
    require(m.head == Head::discrete_choice, ErrorCode::invalid_argument,
            "predict_choice_probs: wrong head");
    const int K = data.n_modes, n = data.n();
    require(m.latent_dim == data.latent.cols && m.sd_dim == data.sd.cols,
            ErrorCode::invalid_argument, "predict_choice_probs: dimension mismatch");
    RowMat u(n, K);
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < K; ++k) {
            const auto& row = m.beta[static_cast<std::size_t>(k)];
            double s = m.intercepts[static_cast<std::size_t>(k)];
            for (int j = 0; j < m.latent_dim; ++j)
                s += row[static_cast<std::size_t>(j)] * data.latent.at(i, j);
            for (int j = 0; j < m.sd_dim; ++j)
                s += row[static_cast<std::size_t>(m.latent_dim + j)] * data.sd.at(i, j);
            for (int a = 0; a < data.n_alt_attrs; ++a)
                s += m.beta_alt[static_cast<std::size_t>(a)] * data.alt_at(i, k, a);
            u(i, k) = s;
        }
    softmax_rows(u);
    DenseMatrix out(n, K);
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < K; ++k) out.at(i, k) = u(i, k);
    return out;
}

double r_squared(const std::vector<double>& y, const std::vector<double>& yhat) {
    require(y.size() == yhat.size() && !y.empty(), ErrorCode::invalid_argument,
            "r_squared: size mismatch");
    double mean = 0.0;
    for (double v : y) mean += v;
    mean /= static_cast<double>(y.size());
    double sse = 0.0, sst = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        sse += (y[i] - yhat[i]) * (y[i] - yhat[i]);
        sst += (y[i] - mean) * (y[i] - mean);
    }
    if (sst <= 0.0) return sse <= 0.0 ? 1.0 : 0.0;
    return 1.0 - sse / sst;
}

double kl_share_loss(const DenseMatrix& P, const DenseMatrix& Phat) {
    require(P.rows == Phat.rows && P.cols == Phat.cols && P.rows > 0,
            ErrorCode::invalid_argument, "kl_share_loss: shape mismatch");
    double v = 0.0;
    for (int i = 0; i < P.rows; ++i)
        for (int k = 0; k < P.cols; ++k) {
            double obs = P.at(i, k);
            if (obs > 0.0)
                v += obs * (std::log(obs) - std::log(std::max(Phat.at(i, k), kProbFloor)));
        }
    return v / P.rows;
}

double cross_entropy(const DenseMatrix& probs, const std::vector<int>& chosen) {
    require(probs.rows == static_cast<int>(chosen.size()) && probs.rows > 0,
            ErrorCode::invalid_argument, "cross_entropy: size mismatch");
    double v = 0.0;
    for (int i = 0; i < probs.rows; ++i)
        v -= std::log(std::max(probs.at(i, chosen[static_cast<std::size_t>(i)]), kProbFloor));
    return v / probs.rows;
}

double accuracy(const DenseMatrix& probs, const std::vector<int>& chosen) {
    require(probs.rows == static_cast<int>(chosen.size()) && probs.rows > 0,
            ErrorCode::invalid_argument, "accuracy: size mismatch");
    int hits = 0;
    for (int i = 0; i < probs.rows; ++i) {
        int best = 0;
        for (int k = 1; k < probs.cols; ++k)
            if (probs.at(i, k) > probs.at(i, best)) best = k;
        if (best == chosen[static_cast<std::size_t>(i)]) ++hits;
    }
    return static_cast<double>(hits) / probs.rows;
}

// ---------------------------------------------------------------------------
// Cross-validated evaluation.

namespace {

struct FoldIndex {
    std::vector<std::vector<int>> train;  // per fold
    std::vector<std::vector<int>> test;
};

FoldIndex fold_rows(const FoldSplit& folds, const std::vector<std::string>& ids) {
    FoldIndex fi;
    fi.train.resize(static_cast<std::size_t>(folds.fold_count));
    fi.test.resize(static_cast<std::size_t>(folds.fold_count));
    for (std::size_t i = 0; i < ids.size(); ++i) {
        auto it = folds.assignments.find(ids[i]);
        require(it != folds.assignments.end(), ErrorCode::invalid_argument,
                "fold split is missing id " + ids[i]);
        for (int f = 0; f < folds.fold_count; ++f) {
            if (it->second == f)
                fi.test[static_cast<std::size_t>(f)].push_back(static_cast<int>(i));
            else
                fi.train[static_cast<std::size_t>(f)].push_back(static_cast<int>(i));
        }
    }
    return fi;
}

DenseMatrix take_rows(const DenseMatrix& m, const std::vector<int>& rows) {
    DenseMatrix out(static_cast<int>(rows.size()), m.cols);
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (int j = 0; j < m.cols; ++j) out.at(static_cast<int>(i), j) = m.at(rows[i], j);
    return out;
}

// Standardize train columns and reuse the train stats on the test block.
void standardize_pair(DenseMatrix& train, DenseMatrix& test) {
    std::vector<std::vector<double>> tr(static_cast<std::size_t>(train.rows));
    for (int i = 0; i < train.rows; ++i) tr[static_cast<std::size_t>(i)] = train.row(i);
    auto stats = dataio::standardize(tr);
    for (int i = 0; i < train.rows; ++i)
        for (int j = 0; j < train.cols; ++j)
            train.at(i, j) = tr[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    if (test.rows == 0) return;
    std::vector<std::vector<double>> te(static_cast<std::size_t>(test.rows));
    for (int i = 0; i < test.rows; ++i) te[static_cast<std::size_t>(i)] = test.row(i);
    dataio::standardize(te, stats);
    for (int i = 0; i < test.rows; ++i)
        for (int j = 0; j < test.cols; ++j)
            test.at(i, j) = te[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
}

template <typename T>
std::vector<T> take(const std::vector<T>& v, const std::vector<int>& rows) {
    std::vector<T> out;
    out.reserve(rows.size());
    for (int r : rows) out.push_back(v[static_cast<std::size_t>(r)]);
    return out;
}

}  // namespace

Metrics evaluate_linear(const DenseMatrix& Z, const DenseMatrix& shares,
                        const std::vector<int>& report_modes, double theta,
                        const FoldSplit& folds, const std::vector<std::string>& ids) {
    FoldIndex fx = fold_rows(folds, ids);
    Metrics m;
    m.r2_train.assign(report_modes.size(), 0.0);
    m.r2_test.assign(report_modes.size(), 0.0);
    for (int f = 0; f < folds.fold_count; ++f) {
        DenseMatrix ztr = take_rows(Z, fx.train[static_cast<std::size_t>(f)]);
        DenseMatrix zte = take_rows(Z, fx.test[static_cast<std::size_t>(f)]);
        standardize_pair(ztr, zte);
        for (std::size_t mi = 0; mi < report_modes.size(); ++mi) {
            std::vector<double> ytr, yte;
            for (int r : fx.train[static_cast<std::size_t>(f)])
                ytr.push_back(shares.at(r, report_modes[mi]));
            for (int r : fx.test[static_cast<std::size_t>(f)])
                yte.push_back(shares.at(r, report_modes[mi]));
            PredictorModel fit = fit_linear(ztr, ytr, theta);
            m.r2_train[mi] += r_squared(ytr, predict_linear(fit, ztr, 0));
            m.r2_test[mi] += r_squared(yte, predict_linear(fit, zte, 0));
        }
    }
    for (auto& v : m.r2_train) v /= folds.fold_count;
    for (auto& v : m.r2_test) v /= folds.fold_count;
    return m;
}

Metrics evaluate_joint(const DenseMatrix& Z, const DenseMatrix& shares,
                       const std::vector<int>& report_modes, double theta,
                       const FoldSplit& folds, const std::vector<std::string>& ids) {
    FoldIndex fx = fold_rows(folds, ids);
    Metrics m;
    m.r2_train.assign(report_modes.size(), 0.0);
    m.r2_test.assign(report_modes.size(), 0.0);
    for (int f = 0; f < folds.fold_count; ++f) {
        DenseMatrix ztr = take_rows(Z, fx.train[static_cast<std::size_t>(f)]);
        DenseMatrix zte = take_rows(Z, fx.test[static_cast<std::size_t>(f)]);
        standardize_pair(ztr, zte);
        DenseMatrix ptr = take_rows(shares, fx.train[static_cast<std::size_t>(f)]);
        DenseMatrix pte = take_rows(shares, fx.test[static_cast<std::size_t>(f)]);
        PredictorModel fit = fit_joint_shares(ztr, ptr, theta);
        DenseMatrix htr = predict_share_probs(fit, ztr);
        DenseMatrix hte = predict_share_probs(fit, zte);
        m.kl_train += kl_share_loss(ptr, htr);
        m.kl_test += kl_share_loss(pte, hte);
        auto col = [](const DenseMatrix& mm, int c) {
            std::vector<double> v(static_cast<std::size_t>(mm.rows));
            for (int i = 0; i < mm.rows; ++i) v[static_cast<std::size_t>(i)] = mm.at(i, c);
            return v;
        };
        for (std::size_t mi = 0; mi < report_modes.size(); ++mi) {
            m.r2_train[mi] += r_squared(col(ptr, report_modes[mi]), col(htr, report_modes[mi]));
            m.r2_test[mi] += r_squared(col(pte, report_modes[mi]), col(hte, report_modes[mi]));
        }
    }
    m.kl_train /= folds.fold_count;
    m.kl_test /= folds.fold_count;
    for (auto& v : m.r2_train) v /= folds.fold_count;
    for (auto& v : m.r2_test) v /= folds.fold_count;
    return m;
}

Metrics evaluate_choice(const ChoiceData& data, double theta, const FoldSplit& folds,
                        const std::vector<std::string>& ids) {
    FoldIndex fx = fold_rows(folds, ids);
    Metrics m;
    for (int f = 0; f < folds.fold_count; ++f) {
        const auto& tr = fx.train[static_cast<std::size_t>(f)];
        const auto& te = fx.test[static_cast<std::size_t>(f)];
        ChoiceData dtr, dte;
        dtr.latent = take_rows(data.latent, tr);
        dte.latent = take_rows(data.latent, te);
        dtr.sd = take_rows(data.sd, tr);
        dte.sd = take_rows(data.sd, te);
        dtr.n_modes = dte.n_modes = data.n_modes;
        dtr.n_alt_attrs = dte.n_alt_attrs = data.n_alt_attrs;
        dtr.chosen = take(data.chosen, tr);
        dte.chosen = take(data.chosen, te);
        auto take_alt = [&](const std::vector<int>& rows) {
            std::vector<double> out;
            std::size_t per = static_cast<std::size_t>(data.n_modes) * data.n_alt_attrs;
            out.reserve(rows.size() * per);
            for (int r : rows)
                out.insert(out.end(), data.alt.begin() + static_cast<std::ptrdiff_t>(r) * static_cast<std::ptrdiff_t>(per),
                           data.alt.begin() + static_cast<std::ptrdiff_t>(r + 1) * static_cast<std::ptrdiff_t>(per));
            return out;
        };
        dtr.alt = take_alt(tr);
        dte.alt = take_alt(te);
        if (dtr.latent.cols > 0) standardize_pair(dtr.latent, dte.latent);
        if (dtr.sd.cols > 0) standardize_pair(dtr.sd, dte.sd);
        // Alternative attributes share coefficients across modes, so each
        // attribute is standardized jointly over (trip, mode).
        for (int a = 0; a < data.n_alt_attrs; ++a) {
            double mean = 0.0, var = 0.0;
            std::size_t cnt = dtr.chosen.size() * static_cast<std::size_t>(data.n_modes);
            for (std::size_t i = 0; i < dtr.chosen.size(); ++i)
                for (int k = 0; k < data.n_modes; ++k)
                    mean += dtr.alt[(i * data.n_modes + k) * data.n_alt_attrs + a];
            mean /= static_cast<double>(cnt);
            for (std::size_t i = 0; i < dtr.chosen.size(); ++i)
                for (int k = 0; k < data.n_modes; ++k) {
                    double d = dtr.alt[(i * data.n_modes + k) * data.n_alt_attrs + a] - mean;
                    var += d * d;
                }
            double sd = std::sqrt(var / static_cast<double>(cnt));
            double inv = sd < 1e-12 ? 0.0 : 1.0 / sd;
            auto apply = [&](std::vector<double>& alt, std::size_t n_rows) {
                for (std::size_t i = 0; i < n_rows; ++i)
                    for (int k = 0; k < data.n_modes; ++k) {
                        auto& v = alt[(i * data.n_modes + k) * data.n_alt_attrs + a];
                        v = (v - mean) * inv;
                    }
            };
            apply(dtr.alt, dtr.chosen.size());
            apply(dte.alt, dte.chosen.size());
        }
        PredictorModel fit = fit_choice(dtr, theta);
        DenseMatrix ptr = predict_choice_probs(fit, dtr);
        DenseMatrix pte = predict_choice_probs(fit, dte);
        m.ce_train += cross_entropy(ptr, dtr.chosen);
        m.ce_test += cross_entropy(pte, dte.chosen);
        m.acc_train += accuracy(ptr, dtr.chosen);
        m.acc_test += accuracy(pte, dte.chosen);
    }
    m.ce_train /= folds.fold_count;
    m.ce_test /= folds.fold_count;
    m.acc_train /= folds.fold_count;
    m.acc_test /= folds.fold_count;
    return m;
}

std::vector<PathPoint> sparsity_path_linear(const DenseMatrix& Z, const DenseMatrix& shares,
                                            const std::vector<int>& report_modes,
                                            const std::vector<double>& theta_grid,
                                            int sd_block_cols, const FoldSplit& folds,
                                            const std::vector<std::string>& ids) {
    DenseMatrix zfull = Z;
    DenseMatrix none(0, Z.cols);
    standardize_pair(zfull, none);
    std::vector<PathPoint> path;
    for (double theta : theta_grid) {
        PathPoint pt;
        pt.theta = theta;
        for (int mode : report_modes) {
            std::vector<double> y(static_cast<std::size_t>(Z.rows));
            for (int i = 0; i < Z.rows; ++i) y[static_cast<std::size_t>(i)] = shares.at(i, mode);
            PredictorModel fit = fit_linear(zfull, y, theta);
            for (int j = 0; j < Z.cols; ++j) {
                if (std::fabs(fit.beta[0][static_cast<std::size_t>(j)]) > 1e-10) {
                    if (j < sd_block_cols)
                        ++pt.nnz_sd;
                    else
                        ++pt.nnz_imagery;
                }
            }
        }
        Metrics m = evaluate_linear(Z, shares, report_modes, theta, folds, ids);
        double mean_r2 = 0.0;
        for (double v : m.r2_test) mean_r2 += v;
        pt.test_metric = mean_r2 / static_cast<double>(report_modes.size());
        path.push_back(pt);
    }
    return path;
}

// ---------------------------------------------------------------------------

std::string model_to_json(const PredictorModel& m) {
    json j;
    j["head"] = head_name(m.head);
    j["theta"] = m.theta;
    j["reference_mode"] = m.reference_mode;
    j["beta"] = m.beta;
    j["intercepts"] = m.intercepts;
    j["beta_alt"] = m.beta_alt;
    j["fitted_modes"] = m.fitted_modes;
    j["latent_dim"] = m.latent_dim;
    j["sd_dim"] = m.sd_dim;
    return j.dump(2);
}

PredictorModel model_from_json(const std::string& text) {
    json j = json::parse(text);
    PredictorModel m;
    m.head = head_from_name(j.at("head").get<std::string>());
    m.theta = j.at("theta").get<double>();
    m.reference_mode = j.at("reference_mode").get<int>();
    m.beta = j.at("beta").get<std::vector<std::vector<double>>>();
    m.intercepts = j.at("intercepts").get<std::vector<double>>();
    m.beta_alt = j.at("beta_alt").get<std::vector<double>>();
    m.fitted_modes = j.at("fitted_modes").get<std::vector<int>>();
    m.latent_dim = j.at("latent_dim").get<int>();
    m.sd_dim = j.at("sd_dim").get<int>();
    return m;
}

}  // namespace dhm::predictor

#pragma once

#include "gridshield/measurement.hpp"
#include "gridshield/noise.hpp"
#include "gridshield/scenario.hpp"

#include <nlohmann/json.hpp>

#include <limits>
#include <vector>

namespace gridshield {

struct WlsConfig {
    double tol = 1e-6;         // on the infinity norm of the state update
    int max_iter = 50;
    double alpha_chi = 0.05;   // Chi-square significance level
    double critical_cap = 1e3; // |CME| assigned to a critical measurement with a nonzero residual

    void validate() const;
    nlohmann::json to_json() const;
    static WlsConfig from_json(const nlohmann::json& j);
    bool operator==(const WlsConfig&) const = default;
};

/// Diagonal measurement stds used for weighting.
struct SeCovariance {
    Vector sigma;

    Vector weights() const { return sigma.array().square().inverse().matrix(); }
};

struct WlsResult {
    StateVector x_hat;
    Vector residual;       // z - h(x_hat)
    SparseMatrix jacobian; // H at x_hat
    double objective = 0.0;
    int iterations = 0;
    bool converged = false;
};

/// Gauss-Newton WLS from a flat start. Throws SingularMatrixError when the gain
/// matrix is rank deficient (unobservable); non-convergence is reported through
/// `converged`.
WlsResult wls_estimate(const MeasurementFunction& h, const Vector& z, const SeCovariance& cov,
                       const WlsConfig& cfg = {});

/// Diagonal of K = H (H' W H)^{-1} H' W, clamped to [0, 1].
Vector hat_diagonal(const SparseMatrix& h, const SeCovariance& cov);

/// II_i = sqrt((1 - P_ii) / P_ii); +inf where P_ii = 0.
Vector innovation_index(const SparseMatrix& h, const SeCovariance& cov);
Vector innovation_index(const Vector& hat_diag);

/// CME_i = r_i sqrt(1 + 1 / II_i^2). II = inf gives r_i; II = 0 gives 0 for a
/// zero residual and +-cap otherwise.
Vector cme(const Vector& r, const Vector& ii, double cap = WlsConfig{}.critical_cap);

/// Upper-tail quantile: P(X > q) = alpha for X ~ chi2(dof).
double chi_square_quantile(double alpha, double dof);

struct ChiSquareResult {
    double score = 0.0;
    double threshold = 0.0;
    bool flag = false;
};

ChiSquareResult chi_square_test(const Vector& cme_values, const Vector& sigma, std::size_t dof, double alpha_chi);

inline constexpr double kSeSentinel = std::numeric_limits<double>::infinity();

struct SeResult {
    StateVector x_hat;
    Vector r;
    Vector ii;
    Vector cme;
    double score = kSeSentinel;
    bool converged = false;
    bool chi2_flag = true;
    int iterations = 0;
    std::size_t critical = 0; // measurements with II = 0 and nonzero residual
};

/// WLS + Innovation Index + CME + Chi-square for single samples. Weighting
/// stds come from the noise model applied to the measured values, with
/// zero-injection entries composed from neighbouring flows.
class StateEstimator {
public:
    StateEstimator(const NetworkCase& network, const MeasurementSchema& schema, NoiseModel noise = {},
                   WlsConfig cfg = {});

    SeCovariance covariance(const Vector& z) const { return {sigma_model_(z)}; }
    /// Never throws for numerical failures: they produce an unconverged result
    /// scored with the sentinel.
    SeResult run(const Vector& z) const;

    const MeasurementFunction& model() const noexcept { return h_; }
    const WlsConfig& config() const noexcept { return cfg_; }
    double threshold() const noexcept { return threshold_; }

private:
    MeasurementFunction h_;
    SigmaModel sigma_model_;
    WlsConfig cfg_;
    double threshold_;
};

struct SeScores {
    std::vector<double> psi;
    std::vector<int> flag;
    std::vector<int> converged;
    std::vector<int> iterations;
    double threshold = 0.0;
};

SeScores run_se_detector(const Dataset& dataset, const WlsConfig& cfg = {}, std::size_t workers = 0);

}  // namespace gridshield

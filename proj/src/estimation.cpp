#include "gridshield/estimation.hpp"

#include "gridshield/parallel.hpp"

#include <Eigen/SparseCholesky>
#include <boost/math/distributions/chi_squared.hpp>
#include <spdlog/spdlog.h>

#include <atomic>
#include <cmath>

namespace gridshield {

void WlsConfig::validate() const {
    if (!(tol > 0.0)) {
        throw ValidationError("WLS tol must be > 0");
    }
    if (max_iter < 1) {
        throw ValidationError("WLS max_iter must be >= 1");
    }
    if (!(alpha_chi > 0.0 && alpha_chi < 1.0)) {
        throw ValidationError("alpha_chi must lie in (0, 1)");
    }
    if (!(critical_cap > 0.0)) {
        throw ValidationError("critical_cap must be > 0");
    }
}

nlohmann::json WlsConfig::to_json() const {
    return {{"tol", tol}, {"max_iter", max_iter}, {"alpha_chi", alpha_chi}, {"critical_cap", critical_cap}};
}

WlsConfig WlsConfig::from_json(const nlohmann::json& j) {
    WlsConfig c;
    c.tol = j.value("tol", c.tol);
    c.max_iter = j.value("max_iter", c.max_iter);
    c.alpha_chi = j.value("alpha_chi", c.alpha_chi);
    c.critical_cap = j.value("critical_cap", c.critical_cap);
    c.validate();
    return c;
}

namespace {

using Ldlt = Eigen::SimplicialLDLT<SparseMatrix, Eigen::Lower, Eigen::AMDOrdering<int>>;

SparseMatrix gain_matrix(const SparseMatrix& h, const Vector& w) {
    const SparseMatrix wh = w.asDiagonal() * h;
    return SparseMatrix(h.transpose() * wh);
}

void factor(Ldlt& ldlt, const SparseMatrix& gain, int iteration) {
    ldlt.compute(gain);
    const auto fail = [&] {
        return SingularMatrixError(
            "gain matrix is rank deficient (network unobservable under this schema), iteration " +
                std::to_string(iteration),
            iteration);
    };
    if (ldlt.info() != Eigen::Success) {
        throw fail();
    }
    const Vector d = ldlt.vectorD();
    const double largest = d.cwiseAbs().maxCoeff();
    if (!(d.minCoeff() > largest * 1e-14)) {
        throw fail();
    }
}

}  // namespace

WlsResult wls_estimate(const MeasurementFunction& h, const Vector& z, const SeCovariance& cov, const WlsConfig& cfg) {
    if (static_cast<std::size_t>(z.size()) != h.size() || cov.sigma.size() != z.size()) {
        throw ValidationError("measurement and covariance lengths must match the schema");
    }
    if (!(cov.sigma.array() > 0.0).all()) {
        throw ValidationError("measurement stds must be > 0");
    }
    const Vector w = cov.weights();
    WlsResult out;
    Vector x = StateVector::flat(h.bus_count()).packed();
    Ldlt ldlt;
    for (int it = 1; it <= cfg.max_iter; ++it) {
        const Vector r = z - h.evaluate(x);
        const SparseMatrix jac = h.jacobian(x);
        factor(ldlt, gain_matrix(jac, w), it);
        const Vector dx = ldlt.solve(jac.transpose() * w.cwiseProduct(r));
        if (!dx.allFinite()) {
            throw SingularMatrixError("non-finite WLS update at iteration " + std::to_string(it), it);
        }
        x += dx;
        out.iterations = it;
        if (dx.lpNorm<Eigen::Infinity>() < cfg.tol) {
            out.converged = true;
            break;
        }
    }
    if (!out.converged) {
        out.x_hat = StateVector::unpack(x, h.bus_count());
        out.residual = z - h.evaluate(x);
        out.jacobian = h.jacobian(x);
        out.objective = out.residual.cwiseProduct(w).dot(out.residual);
        return out;
    }

    // Refinement with the state and residual carried in extended precision.
    // With weights near 1/floor^2 the gain is stiff enough that rounding x to
    // double alone leaves a visible gradient H' W r; this removes it.
    using Wide = long double;
    VectorX<Wide> xw = x.cast<Wide>();
    const VectorX<Wide> zw = z.cast<Wide>();
    factor(ldlt, gain_matrix(h.jacobian(x), w), out.iterations);
    for (int pass = 0; pass < 4; ++pass) {
        const SparseMatrix jac = h.jacobian(Vector(xw.cast<double>()));
        const Vector r = (zw - h.evaluate(xw)).template cast<double>();
        const Vector dx = ldlt.solve(jac.transpose() * w.cwiseProduct(r));
        if (!dx.allFinite()) {
            break;
        }
        xw += dx.cast<Wide>();
        if (dx.lpNorm<Eigen::Infinity>() < 1e-16) {
            break;
        }
    }
    x = xw.cast<double>();
    out.x_hat = StateVector::unpack(x, h.bus_count());
    out.residual = (zw - h.evaluate(xw)).template cast<double>();
    out.jacobian = h.jacobian(x);
    out.objective = out.residual.cwiseProduct(w).dot(out.residual);
    return out;
}

Vector hat_diagonal(const SparseMatrix& h, const SeCovariance& cov) {
    const Vector w = cov.weights();
    Ldlt ldlt;
    factor(ldlt, gain_matrix(h, w), 0);
    // P_ii = w_i h_i' G^{-1} h_i with G = P' L D L' P, so h_i' G^{-1} h_i = |D^{-1/2} L^{-1} P h_i|^2.
    Matrix y = ldlt.permutationP() * Matrix(h.transpose());
    ldlt.matrixL().solveInPlace(y);
    const Vector inv_d = ldlt.vectorD().cwiseInverse();
    Vector diag(h.rows());
    for (Eigen::Index i = 0; i < h.rows(); ++i) {
        const double p = w(i) * y.col(i).cwiseAbs2().dot(inv_d);
        diag(i) = std::clamp(p, 0.0, 1.0);
    }
    return diag;
}

Vector innovation_index(const Vector& hat_diag) {
    Vector ii(hat_diag.size());
    for (Eigen::Index i = 0; i < ii.size(); ++i) {
        const double p = hat_diag(i);
        ii(i) = p <= 0.0 ? std::numeric_limits<double>::infinity() : std::sqrt((1.0 - p) / p);
    }
    return ii;
}

Vector innovation_index(const SparseMatrix& h, const SeCovariance& cov) {
    return innovation_index(hat_diagonal(h, cov));
}

Vector cme(const Vector& r, const Vector& ii, double cap) {
    if (r.size() != ii.size()) {
        throw ValidationError("residual and innovation index lengths differ");
    }
    Vector out(r.size());
    for (Eigen::Index i = 0; i < r.size(); ++i) {
        if (std::isinf(ii(i))) {
            out(i) = r(i);
        } else if (ii(i) == 0.0) {
            out(i) = r(i) == 0.0 ? 0.0 : std::copysign(cap, r(i));
        } else {
            out(i) = r(i) * std::sqrt(1.0 + 1.0 / (ii(i) * ii(i)));
        }
    }
    return out;
}

double chi_square_quantile(double alpha, double dof) {
    if (!(alpha > 0.0 && alpha < 1.0) || !(dof > 0.0)) {
        throw ValidationError("chi-square quantile needs 0 < alpha < 1 and dof > 0");
    }
    const boost::math::chi_squared dist(dof);
    return boost::math::quantile(boost::math::complement(dist, alpha));
}

ChiSquareResult chi_square_test(const Vector& cme_values, const Vector& sigma, std::size_t dof, double alpha_chi) {
    if (cme_values.size() != sigma.size()) {
        throw ValidationError("CME and sigma lengths differ");
    }
    ChiSquareResult out;
    out.score = cme_values.cwiseQuotient(sigma).squaredNorm();
    out.threshold = chi_square_quantile(alpha_chi, static_cast<double>(dof));
    out.flag = out.score > out.threshold;
    return out;
}

StateEstimator::StateEstimator(const NetworkCase& network, const MeasurementSchema& schema, NoiseModel noise,
                               WlsConfig cfg)
    : h_(network, schema),
      sigma_model_(network, schema, noise),
      cfg_(cfg),
      threshold_(0.0) {
    cfg_.validate();
    threshold_ = chi_square_quantile(cfg_.alpha_chi, static_cast<double>(schema.size()));
}

SeResult StateEstimator::run(const Vector& z) const {
    SeResult out;
    const SeCovariance cov = covariance(z);
    WlsResult wls;
    try {
        wls = wls_estimate(h_, z, cov, cfg_);
    } catch (const SingularMatrixError& e) {
        spdlog::debug("state estimation failed: {}", e.what());
        out.iterations = e.iteration();
        return out;
    }
    out.x_hat = std::move(wls.x_hat);
    out.r = std::move(wls.residual);
    out.iterations = wls.iterations;
    out.converged = wls.converged;
    if (!wls.converged || !out.r.allFinite()) {
        out.converged = false;
        return out;
    }
    out.ii = innovation_index(wls.jacobian, cov);
    out.cme = cme(out.r, out.ii, cfg_.critical_cap);
    for (Eigen::Index i = 0; i < out.ii.size(); ++i) {
        if (out.ii(i) == 0.0 && out.r(i) != 0.0) {
            ++out.critical;
        }
    }
    out.score = out.cme.cwiseQuotient(cov.sigma).squaredNorm();
    out.chi2_flag = out.score > threshold_;
    return out;
}

SeScores run_se_detector(const Dataset& dataset, const WlsConfig& cfg, std::size_t workers) {
    const StateEstimator se(dataset.network(), dataset.schema, dataset.meta.noise, cfg);
    const auto k = dataset.size();
    SeScores out;
    out.psi.resize(k);
    out.flag.resize(k);
    out.converged.resize(k);
    out.iterations.resize(k);
    out.threshold = se.threshold();
    std::atomic<std::size_t> failures{0};
    std::atomic<std::size_t> critical{0};
    parallel_for(k, workers, [&](std::size_t t) {
        const SeResult r = se.run(dataset.samples[t].z);
        out.psi[t] = r.score;
        out.flag[t] = r.chi2_flag ? 1 : 0;
        out.converged[t] = r.converged ? 1 : 0;
        out.iterations[t] = r.iterations;
        if (!r.converged) {
            ++failures;
        }
        critical += r.critical;
    });
    if (failures > 0) {
        spdlog::warn("state estimation did not converge on {} of {} samples (scored with the sentinel)",
                     failures.load(), k);
    }
    if (critical > 0) {
        spdlog::warn("{} critical-measurement residuals capped at {}", critical.load(), cfg.critical_cap);
    }
    return out;
}

}  // namespace gridshield

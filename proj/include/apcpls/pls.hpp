#pragma once

/// Single-response partial least squares (NIPALS PLS1).

#include <algorithm>
#include <cmath>
#include <functional>
#include <iostream>
#include <string>

#include <Eigen/Dense>
#include <json.hpp>

#include "apcpls/common.hpp"
#include "apcpls/dataset.hpp"

namespace apcpls {

struct PlsOptions {
    int components = 10;
    /// Early stop once ||X_a^T y_a|| falls below tol * ||X_0||_F * ||y_0||.
    double tol = 1e-12;
    /// Divide each centered column by its standard deviation before fitting.
    bool scale = false;
    /// Receives non-fatal diagnostics (component clamping). Defaults to stderr.
    std::function<void(const std::string&)> warn;
};

struct PlsModel {
    Vector x_mean;
    double y_mean = 0.0;
    Matrix weights;     // n x c, unit-norm columns
    Matrix x_loadings;  // n x c
    Vector y_loadings;  // c
    /// Regression coefficients on the raw (unscaled) centered inputs.
    Vector coefficients;
    int components_used = 0;
    int components_requested = 0;
    /// Largest |cos| between two score vectors seen during the fit.
    double max_score_cosine = 0.0;
    /// Residual sum of squares of y after each extracted component (index 0 = before any).
    std::vector<double> residual_ss;

    Eigen::Index dim() const { return x_mean.size(); }

    double predict(const Vector& x) const {
        if (x.size() != x_mean.size())
            throw Error("pls_predict: dimension " + std::to_string(x.size()) + " does not match model dimension " +
                        std::to_string(x_mean.size()));
        return y_mean + (x - x_mean).dot(coefficients);
    }
};

inline constexpr double kScoreOrthogonalityTol = 1e-8;

inline PlsModel pls_fit(const Matrix& x, const Vector& y, const PlsOptions& opt = {}) {
    const Eigen::Index m = x.rows(), n = x.cols();
    if (m < 2) throw Error("pls_fit: need at least 2 samples");
    if (n < 1) throw Error("pls_fit: need at least 1 feature");
    if (y.size() != m) throw Error("pls_fit: X has " + std::to_string(m) + " rows but y has " + std::to_string(y.size()));
    if (opt.components < 1) throw Error("pls_fit: components must be >= 1");
    if (!x.allFinite() || !y.allFinite()) throw Error("pls_fit: non-finite input");

    PlsModel model;
    model.components_requested = opt.components;
    model.x_mean = x.colwise().mean().transpose();
    model.y_mean = y.mean();

    Matrix xa = x.rowwise() - model.x_mean.transpose();
    Vector ya = y.array() - model.y_mean;

    const double x_scale_ref = std::max(1.0, x.cwiseAbs().maxCoeff());
    if (xa.cwiseAbs().maxCoeff() <= 1e-12 * x_scale_ref) throw Error("pls_fit: all rows of X are identical");
    if (ya.cwiseAbs().maxCoeff() == 0.0) throw Error("pls_fit: y is constant (needs both classes)");

    Vector col_scale = Vector::Ones(n);
    if (opt.scale) {
        for (Eigen::Index j = 0; j < n; ++j) {
            const double sd = std::sqrt(xa.col(j).squaredNorm() / static_cast<double>(m - 1));
            if (sd > 0) col_scale[j] = sd;
        }
        xa = xa * col_scale.cwiseInverse().asDiagonal();
    }

    const auto max_c = static_cast<int>(std::min<Eigen::Index>(m - 1, n));
    int c = opt.components;
    if (c > max_c) {
        const auto msg = "pls_fit: clamping components from " + std::to_string(c) + " to " + std::to_string(max_c);
        if (opt.warn)
            opt.warn(msg);
        else
            std::cerr << "warning: " << msg << '\n';
        c = max_c;
    }

    model.weights = Matrix::Zero(n, c);
    model.x_loadings = Matrix::Zero(n, c);
    model.y_loadings = Vector::Zero(c);
    Matrix scores = Matrix::Zero(m, c);
    model.residual_ss.push_back(ya.squaredNorm());

    const double cov_bound = xa.norm() * ya.norm();
    int used = 0;
    for (int comp = 0; comp < c; ++comp) {
        Vector w = xa.transpose() * ya;
        const double wn = w.norm();
        if (wn < opt.tol * cov_bound || wn == 0.0) break;
        w /= wn;
        Vector t = xa * w;
        const double tt = t.squaredNorm();
        if (tt == 0.0) break;
        Vector p = xa.transpose() * t / tt;
        const double q = ya.dot(t) / tt;
        xa.noalias() -= t * p.transpose();
        ya -= q * t;

        model.weights.col(comp) = w;
        model.x_loadings.col(comp) = p;
        model.y_loadings[comp] = q;
        scores.col(comp) = t;
        model.residual_ss.push_back(ya.squaredNorm());
        ++used;
    }
    model.components_used = used;
    model.weights.conservativeResize(n, used);
    model.x_loadings.conservativeResize(n, used);
    model.y_loadings.conservativeResize(used);

    for (int i = 0; i < used; ++i)
        for (int j = i + 1; j < used; ++j) {
            const double cosv = std::abs(scores.col(i).dot(scores.col(j))) / (scores.col(i).norm() * scores.col(j).norm());
            model.max_score_cosine = std::max(model.max_score_cosine, cosv);
        }
    if (model.max_score_cosine > kScoreOrthogonalityTol)
        throw Error("pls_fit: score vectors lost orthogonality (|cos| = " + format_double(model.max_score_cosine) + ")");

    if (used == 0) {
        model.coefficients = Vector::Zero(n);
    } else {
        // P^T W is upper triangular for NIPALS.
        const Matrix ptw = model.x_loadings.transpose() * model.weights;
        const Vector z = ptw.triangularView<Eigen::Upper>().solve(model.y_loadings);
        model.coefficients = model.weights * z;
        if (opt.scale) model.coefficients = model.coefficients.cwiseQuotient(col_scale);
    }
    return model;
}

inline double pls_predict(const PlsModel& model, const Vector& x) { return model.predict(x); }

inline nlohmann::ordered_json pls_to_json(const PlsModel& model) {
    auto vec = [](const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
    auto mat = [&](const Matrix& mtx) {
        auto cols = nlohmann::ordered_json::array();
        for (Eigen::Index j = 0; j < mtx.cols(); ++j) cols.push_back(vec(mtx.col(j)));
        return cols;
    };
    nlohmann::ordered_json j;
    j["components_used"] = model.components_used;
    j["components_requested"] = model.components_requested;
    j["y_mean"] = model.y_mean;
    j["x_mean"] = vec(model.x_mean);
    j["coefficients"] = vec(model.coefficients);
    j["weights"] = mat(model.weights);
    j["x_loadings"] = mat(model.x_loadings);
    j["y_loadings"] = vec(model.y_loadings);
    return j;
}

inline PlsModel pls_from_json(const nlohmann::json& j) {
    auto vec = [](const nlohmann::json& a) {
        const auto v = a.get<std::vector<double>>();
        return Vector(Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size())));
    };
    PlsModel m;
    m.components_used = j.at("components_used").get<int>();
    m.components_requested = j.at("components_requested").get<int>();
    m.y_mean = j.at("y_mean").get<double>();
    m.x_mean = vec(j.at("x_mean"));
    m.coefficients = vec(j.at("coefficients"));
    m.y_loadings = vec(j.at("y_loadings"));
    const auto n = m.x_mean.size();
    auto mat = [&](const nlohmann::json& cols) {
        Matrix out(n, static_cast<Eigen::Index>(cols.size()));
        for (std::size_t c = 0; c < cols.size(); ++c) out.col(static_cast<Eigen::Index>(c)) = vec(cols[c]);
        return out;
    };
    m.weights = mat(j.at("weights"));
    m.x_loadings = mat(j.at("x_loadings"));
    if (m.coefficients.size() != n) throw Error("pls model: coefficient length mismatch");
    return m;
}

}  // namespace apcpls

#pragma once

// Least-squares Koopman baselines: DMD with control and EDMD with a
// Gaussian RBF dictionary. Both produce a KoopmanModel whose encoder is a
// fixed (parameter-free) lifting, so prediction and control code is shared
// with the learned model.

#include <cstdint>

#include <Eigen/Dense>

#include "kls/dataset.hpp"
#include "kls/koopman.hpp"

namespace kls {

struct DmdcOptions {
    double ridge = 0.0;         // explicit Tikhonov weight; 0 = plain least squares
    bool ridge_fallback = true; // on rank deficiency, retry with fallback_ridge
    double fallback_ridge = 1e-10;
    double rank_tol = 1e-10;    // relative threshold on the QR diagonal
};

struct DmdcFit {
    Eigen::MatrixXd A;
    Eigen::MatrixXd B;
    int rank = 0;
    double ridge = 0.0; // weight actually used
    double residual = 0.0; // sum of squared one-step residuals
};

/// Minimizes sum_t |z_{t+1} - A z_t - B u_t|^2 (+ ridge |[A B]|_F^2) over
/// snapshot columns.
DmdcFit fit_dmdc(const Eigen::MatrixXd& Z, const Eigen::MatrixXd& U, const Eigen::MatrixXd& Znext,
                 const DmdcOptions& opt = {});

/// Seeded k-means (k-means++ seeding, Lloyd iterations). data: d x N.
Eigen::MatrixXd kmeans(const Eigen::MatrixXd& data, int k, std::uint64_t seed, int iterations = 100);

/// Median pairwise Euclidean distance between centers (1 if undefined).
double median_pairwise_distance(const Eigen::MatrixXd& centers);

struct BaselineConfig {
    int rbf_count = 100;
    std::uint64_t seed = 1;
    bool use_window = false; // lift the whole delay window instead of [w_t; y_t]
    double tau = 0.3;        // window used when use_window is set
    double dt_embed = 0.01;
    DmdcOptions dmdc;
};

/// DMDc on g = [w_t; y_t] (or the whole window).
KoopmanModel fit_dmdc_model(const std::vector<Record>& records, const BaselineConfig& cfg);
/// EDMD on g = [w_t; y_t; rbf(z_t)]. With rbf_count = 0 this is fit_dmdc_model.
KoopmanModel fit_edmd_model(const std::vector<Record>& records, const BaselineConfig& cfg);

} // namespace kls

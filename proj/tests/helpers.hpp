#pragma once

#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>

#include <Eigen/Dense>

namespace kls::test {

inline std::filesystem::path tmp_dir(const std::string& name) {
    const char* env = std::getenv("KLS_TEST_TMP");
    std::filesystem::path base = env ? env : std::filesystem::temp_directory_path() / "kls_tests";
    std::filesystem::path p = base / name;
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

inline Eigen::MatrixXd randn(int r, int c, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> n(0.0, scale);
    Eigen::MatrixXd m(r, c);
    for (int j = 0; j < c; ++j)
        for (int i = 0; i < r; ++i) m(i, j) = n(rng);
    return m;
}

// Random matrix with spectral radius below `rho`.
inline Eigen::MatrixXd stable(int p, double rho, std::mt19937_64& rng) {
    Eigen::MatrixXd A = randn(p, p, rng);
    const double r = A.eigenvalues().cwiseAbs().maxCoeff();
    return A * (rho / r);
}

} // namespace kls::test

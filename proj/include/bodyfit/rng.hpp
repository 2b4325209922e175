#pragma once

#include <cstdint>
#include <random>

#include "bodyfit/types.hpp"

namespace bodyfit {

// Single seeded generator passed explicitly wherever randomness is needed.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    Scalar uniform(Scalar lo = 0.0, Scalar hi = 1.0) {
        return std::uniform_real_distribution<Scalar>(lo, hi)(engine_);
    }

    // Box-Muller; independent of library distribution internals so that
    // streams stay reproducible across standard library versions.
    Scalar gauss(Scalar mean = 0.0, Scalar stddev = 1.0) {
        if (have_spare_) {
            have_spare_ = false;
            return mean + stddev * spare_;
        }
        Scalar u1, u2;
        do { u1 = uniform(); } while (u1 <= 1e-300);
        u2 = uniform();
        const Scalar mag = std::sqrt(-2.0 * std::log(u1));
        spare_ = mag * std::sin(2.0 * M_PI * u2);
        have_spare_ = true;
        return mean + stddev * mag * std::cos(2.0 * M_PI * u2);
    }

    int uniform_int(int lo, int hi) {  // inclusive bounds
        return std::uniform_int_distribution<int>(lo, hi)(engine_);
    }

    VecX gauss_vec(Eigen::Index n, Scalar stddev = 1.0) {
        VecX v(n);
        for (Eigen::Index i = 0; i < n; ++i) v[i] = gauss(0.0, stddev);
        return v;
    }

    Mat3 random_rotation() {
        // QR of a Gaussian matrix with sign fix gives a uniform rotation
        Mat3 A;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) A(i, j) = gauss();
        Eigen::HouseholderQR<Mat3> qr(A);
        Mat3 Q = qr.householderQ();
        if (Q.determinant() < 0) Q.col(2) *= -1;
        return Q;
    }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
    bool have_spare_ = false;
    Scalar spare_ = 0;
};

}  // namespace bodyfit

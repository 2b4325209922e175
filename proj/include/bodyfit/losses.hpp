#pragma once

#include <map>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/LU>

#include "bodyfit/rotations.hpp"
#include "bodyfit/types.hpp"

namespace bodyfit {

struct LandmarkSet {
    Points2 points;                 // 68 x 2
    std::vector<bool> visibility;   // 68

    static LandmarkSet all_visible(const Points2& pts) {
        LandmarkSet s;
        s.points = pts;
        s.visibility.assign((size_t)pts.rows(), true);
        return s;
    }
};

// One nonnegative weight per loss term; the weighted sum is the training
// objective. Defaults are 1 (unweighted sum).
struct LossWeights {
    Scalar body_joints_2d = 1.0;
    Scalar body_joints_3d = 1.0;
    Scalar params = 1.0;
    Scalar hand = 1.0;
    Scalar landmarks = 1.0;
    Scalar closure = 1.0;
    Scalar photometric = 1.0;
    Scalar identity = 1.0;
    Scalar expression = 1.0;
    Scalar jaw = 1.0;
    Scalar face_yaw = 1.0;
    Scalar shape = 1.0;
    Scalar update = 1.0;

    void check() const {
        for (Scalar w : {body_joints_2d, body_joints_3d, params, hand, landmarks, closure,
                         photometric, identity, expression, jaw, face_yaw, shape, update})
            if (!(w >= 0) || !std::isfinite(w))
                throw ConfigInvalid("loss weights must be nonnegative and finite");
    }
};

// L1 subgradient convention: 0 at zero residual.
inline Scalar l1_grad(Scalar r) { return r > 0 ? 1.0 : (r < 0 ? -1.0 : 0.0); }

inline Scalar joint_loss_2d(const Points2& pred, const Points2& gt,
                            const std::vector<bool>& vis) {
    if (pred.rows() != gt.rows() || (size_t)pred.rows() != vis.size())
        throw DimensionMismatch("joint_loss_2d: shape mismatch");
    Scalar loss = 0;
    for (Eigen::Index j = 0; j < pred.rows(); ++j)
        if (vis[(size_t)j]) loss += (pred.row(j) - gt.row(j)).cwiseAbs().sum();
    return loss;
}

// gradient w.r.t. pred, same shape
inline Points2 joint_loss_2d_grad(const Points2& pred, const Points2& gt,
                                  const std::vector<bool>& vis) {
    Points2 g = Points2::Zero(pred.rows(), 2);
    for (Eigen::Index j = 0; j < pred.rows(); ++j)
        if (vis[(size_t)j])
            for (int c = 0; c < 2; ++c) g(j, c) = l1_grad(pred(j, c) - gt(j, c));
    return g;
}

inline Scalar joint_loss_3d(const Points3& pred, const Points3& gt) {
    if (pred.rows() != gt.rows())
        throw DimensionMismatch("joint_loss_3d: shape mismatch");
    return (pred - gt).cwiseAbs().sum();
}

inline Points3 joint_loss_3d_grad(const Points3& pred, const Points3& gt) {
    Points3 g(pred.rows(), 3);
    for (Eigen::Index j = 0; j < pred.rows(); ++j)
        for (int c = 0; c < 3; ++c) g(j, c) = l1_grad(pred(j, c) - gt(j, c));
    return g;
}

// squared L2 on pose encodings and shape coefficients
inline Scalar param_loss(const VecX& pred, const VecX& gt) {
    if (pred.size() != gt.size())
        throw DimensionMismatch("param_loss: length mismatch");
    return (pred - gt).squaredNorm();
}

inline Scalar landmark_loss(const LandmarkSet& pred, const LandmarkSet& gt) {
    return joint_loss_2d(pred.points, gt.points, gt.visibility);
}

inline Scalar closure_loss(const Points2& pred, const Points2& gt,
                           const std::vector<std::pair<int, int>>& pairs) {
    Scalar loss = 0;
    for (auto [i, j] : pairs) {
        if (i < 0 || j < 0 || i >= pred.rows() || j >= pred.rows() ||
            i >= gt.rows() || j >= gt.rows())
            throw Error("closure_loss: pair index out of range");
        const Vec2 dp = (pred.row(i) - pred.row(j)).transpose();
        const Vec2 dg = (gt.row(i) - gt.row(j)).transpose();
        loss += (dp - dg).cwiseAbs().sum();
    }
    return loss;
}

inline Points2 closure_loss_grad(const Points2& pred, const Points2& gt,
                                 const std::vector<std::pair<int, int>>& pairs) {
    Points2 g = Points2::Zero(pred.rows(), 2);
    for (auto [i, j] : pairs) {
        for (int c = 0; c < 2; ++c) {
            const Scalar s = l1_grad((pred(i, c) - pred(j, c)) - (gt(i, c) - gt(j, c)));
            g(i, c) += s;
            g(j, c) -= s;
        }
    }
    return g;
}

// Images as H x W x 3 row-major flattened arrays, mask H x W in {0, 1}.
inline Scalar photometric_loss(const VecX& face_img, const VecX& rendered_img,
                               const VecX& mask) {
    if (face_img.size() != rendered_img.size() || face_img.size() != 3 * mask.size())
        throw DimensionMismatch("photometric_loss: shape mismatch");
    Scalar loss = 0;
    for (Eigen::Index p = 0; p < mask.size(); ++p) {
        if (mask[p] == 0.0) continue;
        if (mask[p] != 1.0) throw Error("photometric_loss: mask must be binary");
        for (int c = 0; c < 3; ++c)
            loss += std::abs(face_img[3 * p + c] - rendered_img[3 * p + c]);
    }
    return loss;
}

// 1 - cosine similarity of two embeddings
inline Scalar identity_loss(const VecX& emb_a, const VecX& emb_b) {
    if (emb_a.size() != emb_b.size())
        throw DimensionMismatch("identity_loss: length mismatch");
    const Scalar na = emb_a.norm(), nb = emb_b.norm();
    if (na < 1e-300 || nb < 1e-300)
        throw DegenerateInput("identity_loss: zero embedding");
    return 1.0 - emb_a.dot(emb_b) / (na * nb);
}

inline Scalar expression_prior(const VecX& psi) { return psi.squaredNorm(); }

// jaw opens one way: yaw penalized only when negative
inline Scalar jaw_prior(const EulerXYZ& jaw) {
    const Scalar neg_yaw = std::min(jaw.yaw, 0.0);
    return jaw.pitch * jaw.pitch + jaw.roll * jaw.roll + neg_yaw * neg_yaw;
}

inline Vec3 jaw_prior_grad(const EulerXYZ& jaw) {
    return {2 * jaw.pitch, 2 * jaw.roll, jaw.yaw < 0 ? 2 * jaw.yaw : 0.0};
}

// hinge beyond +-90 degrees of face yaw
inline Scalar face_yaw_prior(Scalar yaw_degrees) {
    const Scalar e = std::max(std::abs(yaw_degrees) - 90.0, 0.0);
    return e * e;
}

inline Scalar face_yaw_prior_grad(Scalar yaw_degrees) {
    const Scalar a = std::abs(yaw_degrees);
    if (a <= 90.0) return 0.0;
    return 2 * (a - 90.0) * (yaw_degrees > 0 ? 1.0 : -1.0);
}

// ---------------------------------------------------------------------------
// Gendered shape prior
// ---------------------------------------------------------------------------

struct GaussianPrior {
    VecX mu;
    MatX cov;
    MatX precision;
};

struct GenderPrior {
    std::map<std::string, GaussianPrior> classes;  // "female", "male", "neutral", ...

    const GaussianPrior& at(const std::string& label) const {
        auto it = classes.find(label);
        if (it == classes.end())
            throw Error("GenderPrior: no class for label '" + label + "'");
        return it->second;
    }
};

inline GaussianPrior fit_gaussian_prior(const std::vector<VecX>& samples) {
    if (samples.size() < 2)
        throw Error("fit_gaussian_prior: need at least 2 samples");
    const Eigen::Index n = samples[0].size();
    GaussianPrior g;
    g.mu = VecX::Zero(n);
    for (const auto& s : samples) {
        if (s.size() != n) throw DimensionMismatch("fit_gaussian_prior: ragged samples");
        g.mu += s;
    }
    g.mu /= (Scalar)samples.size();
    g.cov = MatX::Zero(n, n);
    for (const auto& s : samples) {
        const VecX d = s - g.mu;
        g.cov += d * d.transpose();
    }
    g.cov /= (Scalar)(samples.size() - 1);
    // trace-scaled ridge keeps the precision well defined
    const Scalar eps = 1e-6 * g.cov.trace() / (Scalar)n + 1e-12;
    g.cov += eps * MatX::Identity(n, n);
    Eigen::LDLT<MatX> ldlt(g.cov);
    if (ldlt.info() != Eigen::Success)
        throw NumericError("fit_gaussian_prior: covariance not positive definite");
    g.precision = ldlt.solve(MatX::Identity(n, n));
    return g;
}

// Mahalanobis distance squared to the labeled class mean; unknown labels use
// the label-free "neutral" class.
inline Scalar gendered_shape_loss(const VecX& beta, const std::string& label,
                                  const GenderPrior& prior) {
    const std::string key =
        (label == "female" || label == "male") ? label : std::string("neutral");
    const GaussianPrior& g = prior.at(key);
    if (beta.size() != g.mu.size())
        throw DimensionMismatch("gendered_shape_loss: beta dimension mismatch");
    const VecX d = beta - g.mu;
    return d.dot(g.precision * d);
}

inline VecX gendered_shape_loss_grad(const VecX& beta, const std::string& label,
                                     const GenderPrior& prior) {
    const std::string key =
        (label == "female" || label == "male") ? label : std::string("neutral");
    const GaussianPrior& g = prior.at(key);
    return 2.0 * (g.precision * (beta - g.mu));
}

// ---------------------------------------------------------------------------

struct LossBreakdown {
    std::map<std::string, Scalar> terms;  // already weighted
    Scalar total = 0;
};

inline LossBreakdown total_loss(const std::map<std::string, Scalar>& raw_terms,
                                const std::map<std::string, Scalar>& weights) {
    LossBreakdown out;
    for (const auto& [name, value] : raw_terms) {
        if (!std::isfinite(value))
            throw NumericError("total_loss: non-finite component '" + name + "'");
        auto it = weights.find(name);
        const Scalar w = it == weights.end() ? 1.0 : it->second;
        out.terms[name] = w * value;
        out.total += w * value;
    }
    return out;
}

}  // namespace bodyfit

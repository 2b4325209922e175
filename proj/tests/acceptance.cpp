// Acceptance harness: one pass/fail line per criterion, nonzero exit on any
// failure. Each criterion is self-contained and seed-fixed.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <string>
#include <vector>

#include "bodyfit/fitter.hpp"
#include "bodyfit/io.hpp"
#include "bodyfit/metrics.hpp"
#include "bodyfit/moderator.hpp"
#include "bodyfit/rng.hpp"

using namespace bodyfit;
using Clock = std::chrono::steady_clock;

namespace {

struct Harness {
    int failures = 0;

    void run(int index, const char* name, const std::function<bool(std::string&)>& fn) {
        std::string detail;
        bool ok = false;
        const auto start = Clock::now();
        try {
            ok = fn(detail);
        } catch (const std::exception& e) {
            detail = std::string("exception: ") + e.what();
        }
        const double secs =
            std::chrono::duration_cast<std::chrono::duration<double>>(Clock::now() - start)
                .count();
        std::printf("[%s] criterion %2d: %s (%.2fs)%s%s\n", ok ? "PASS" : "FAIL", index, name,
                    secs, detail.empty() ? "" : " -- ", detail.c_str());
        std::fflush(stdout);
        if (!ok) ++failures;
    }
};

Scalar elapsed_since(const Clock::time_point& t0) {
    return std::chrono::duration_cast<std::chrono::duration<double>>(Clock::now() - t0).count();
}

Parameters random_params(const BodyModel& m, Rng& rng, Scalar pose_sigma,
                         Scalar beta_sigma = 0.3) {
    Parameters p = Parameters::rest(m);
    p.beta = rng.gauss_vec(m.num_shape(), beta_sigma);
    p.psi = rng.gauss_vec(m.num_expr(), 0.2);
    for (int j = 0; j < m.num_joints(); ++j) {
        if (j == m.jaw_joint) {
            p.pose(j, 0) = rng.gauss(0, 0.1);
            continue;
        }
        const Vec3 aa(rng.gauss(0, pose_sigma), rng.gauss(0, pose_sigma),
                      rng.gauss(0, pose_sigma));
        p.pose.row(j) = matrix_to_rot6d(axis_angle_to_matrix(aa)).transpose();
    }
    return p;
}

FitObservations observe_all(const BodyModel& m, const PosedResult& posed,
                            const FitCameras& cams) {
    FitObservations obs;
    obs.has_body_2d = true;
    obs.body_2d = project(posed.joints_posed, cams.body);
    obs.body_visibility.assign((size_t)m.num_joints(), true);
    obs.has_body_3d = true;
    obs.body_3d = posed.joints_posed;
    obs.has_landmarks = true;
    Points3 lm3((Eigen::Index)m.landmark_indices.size(), 3);
    for (size_t k = 0; k < m.landmark_indices.size(); ++k)
        lm3.row((Eigen::Index)k) = posed.vertices.row(m.landmark_indices[k]);
    obs.landmarks = LandmarkSet::all_visible(project(lm3, cams.face));
    auto hand_obs = [&](const std::vector<int>& joints) {
        HandObservation h;
        Points3 hp((Eigen::Index)joints.size(), 3);
        for (size_t k = 0; k < joints.size(); ++k)
            hp.row((Eigen::Index)k) = posed.joints_posed.row(joints[k]);
        h.points = project(hp, cams.hand);
        h.visibility.assign(joints.size(), true);
        return h;
    };
    obs.has_left_hand = !m.left_hand_joints.empty();
    if (obs.has_left_hand) obs.left_hand = hand_obs(m.left_hand_joints);
    obs.has_right_hand = !m.right_hand_joints.empty();
    if (obs.has_right_hand) obs.right_hand = hand_obs(m.right_hand_joints);
    return obs;
}

Scalar bbox_diag(const Points3& pts) {
    return (pts.colwise().maxCoeff() - pts.colwise().minCoeff()).norm();
}

Scalar pa_v2v(const Points3& pred, const Points3& gt) {
    return v2v(pred, gt, procrustes_align(pred, gt));
}

// -------------------------------------------------------------------------
// 1. rotation suite
// -------------------------------------------------------------------------
bool criterion_rotations(std::string& detail) {
    const auto t0 = Clock::now();
    Rng rng(1);
    Scalar worst = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        Rot6D enc;
        for (int k = 0; k < 6; ++k) enc[k] = rng.gauss();
        const Mat3 R = rot6d_to_matrix(enc);
        worst = std::max(worst, (R * R.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff());
        worst = std::max(worst, std::abs(R.determinant() - 1.0));
        worst = std::max(worst, (rot6d_to_matrix(matrix_to_rot6d(R)) - R).cwiseAbs().maxCoeff());

        const Mat3 Q = rng.random_rotation();
        worst = std::max(worst, (rot6d_to_matrix(matrix_to_rot6d(Q)) - Q).cwiseAbs().maxCoeff());

        EulerXYZ e{rng.gauss(0, 1.0), rng.gauss(0, 1.0), rng.gauss(0, 1.0)};
        const Mat3 Re = euler_to_matrix(e);
        worst = std::max(worst,
                         (Re * Re.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff());
        worst = std::max(worst, std::abs(Re.determinant() - 1.0));

        const Vec3 aa = rng.gauss_vec(3).head<3>();
        const Mat3 Ra = axis_angle_to_matrix(aa);
        worst = std::max(worst,
                         (Ra * Ra.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff());
        worst = std::max(worst, std::abs(Ra.determinant() - 1.0));
        worst = std::max(worst, (rot6d_to_matrix(matrix_to_rot6d(Ra)) - Ra).cwiseAbs().maxCoeff());
    }
    const Scalar secs = elapsed_since(t0);
    char buf[128];
    std::snprintf(buf, sizeof(buf), "max err %.3g, %.2fs", worst, secs);
    detail = buf;
    return worst < 1e-9 && secs < 1.0;
}

// -------------------------------------------------------------------------
// 2. kinematics suite
// -------------------------------------------------------------------------
bool criterion_kinematics(std::string& detail) {
    const auto t0 = Clock::now();
    const BodyModel m = synth_model(2024, {300, 12, 10, 5});
    // zero pose fixed point (exact)
    {
        const PosedResult rest = pose_model(m, Parameters::rest(m));
        if ((rest.vertices - m.template_verts).cwiseAbs().maxCoeff() != 0.0) {
            detail = "zero-pose fixed point not exact";
            return false;
        }
    }
    Rng rng(2);
    Scalar worst = 0;
    for (int trial = 0; trial < 100; ++trial) {
        Parameters p = random_params(m, rng, 0.4);
        const PosedResult base = pose_model(m, p);

        // rigid equivariance under an extra root rotation
        const Mat3 R = rng.random_rotation();
        Parameters p_rot = p;
        p_rot.pose.row(0) =
            matrix_to_rot6d(R * rot6d_to_matrix(p.pose.row(0).transpose())).transpose();
        const PosedResult rot = pose_model(m, p_rot);
        const Vec3 root = base.joints_rest.row(0).transpose();
        for (int i = 0; i < m.num_vertices(); ++i) {
            const Vec3 expect = R * (base.vertices.row(i).transpose() - root) + root;
            worst = std::max(worst, (rot.vertices.row(i).transpose() - expect).norm());
        }

        // global -> relative -> FK round trip
        Parameters p2 = Parameters::rest(m);
        p2.beta = p.beta;
        p2.psi = p.psi;
        for (int j = 0; j < m.num_joints(); ++j) {
            if (j == m.jaw_joint) {
                p2.pose.row(j) = p.pose.row(j);
                continue;
            }
            const Mat3 parent = j == 0 ? Mat3::Identity() : base.world_transforms[m.parents[j]].A;
            const Mat3 rel = global_to_relative(base.world_transforms[j].A, parent);
            p2.pose.row(j) = matrix_to_rot6d(rel).transpose();
        }
        const PosedResult back = pose_model(m, p2);
        worst = std::max(worst, (back.vertices - base.vertices).cwiseAbs().maxCoeff());
        worst = std::max(worst, (back.joints_posed - base.joints_posed).cwiseAbs().maxCoeff());
    }
    const Scalar secs = elapsed_since(t0);
    char buf[128];
    std::snprintf(buf, sizeof(buf), "max err %.3g, %.2fs", worst, secs);
    detail = buf;
    return worst < 1e-9 && secs < 5.0;
}

// -------------------------------------------------------------------------
// 3. gradient suite
// -------------------------------------------------------------------------
bool criterion_gradients(std::string& detail) {
    const auto t0 = Clock::now();
    const Scalar h = 1e-6;
    Scalar worst = 0;
    auto rel = [&](Scalar fd, Scalar an) {
        const Scalar denom = std::max(std::abs(fd), 1.0);
        worst = std::max(worst, std::abs(fd - an) / denom);
    };

    const BodyModel m = synth_model(11, {110, 12, 3, 2});
    const BodyModel mfit = synth_model(42, {120, 12, 4, 2});
    for (uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(3000 + seed);

        // pose_model jacobian on a handful of coordinates per seed
        {
            Parameters p = random_params(m, rng, 0.3);
            const PosedResult posed = pose_model(m, p);
            const PoseJacobian jac = pose_jacobian(m, p, posed);
            const VecX x0 = params_to_vector(m, p);
            for (int probe = 0; probe < 4; ++probe) {
                int col = rng.uniform_int(0, param_vector_size(m) - 1);
                const int jaw_base = m.num_shape() + m.num_expr() + 6 * m.jaw_joint;
                if (col >= jaw_base + 3 && col < jaw_base + 6) col = 0;
                VecX xp = x0, xm = x0;
                xp[col] += h;
                xm[col] -= h;
                const PosedResult rp = pose_model(m, params_from_vector(m, xp));
                const PosedResult rm = pose_model(m, params_from_vector(m, xm));
                const int vi = rng.uniform_int(0, m.num_vertices() - 1);
                for (int c = 0; c < 3; ++c)
                    rel((rp.vertices(vi, c) - rm.vertices(vi, c)) / (2 * h),
                        jac.d_vertices(3 * vi + c, col));
            }
        }

        // losses (away from kinks)
        {
            EulerXYZ e{rng.gauss(), rng.gauss(), rng.gauss()};
            const Vec3 g = jaw_prior_grad(e);
            for (int k = 0; k < 3; ++k) {
                auto at = [&](Scalar d) {
                    EulerXYZ out = e;
                    (k == 0 ? out.pitch : k == 1 ? out.roll : out.yaw) += d;
                    return jaw_prior(out);
                };
                rel((at(h) - at(-h)) / (2 * h), g[k]);
            }
            Points2 pred(5, 2), gt(5, 2);
            for (int i = 0; i < 5; ++i)
                for (int c = 0; c < 2; ++c) {
                    gt(i, c) = rng.gauss();
                    pred(i, c) = gt(i, c) + rng.gauss() + 2.0;
                }
            std::vector<bool> vis(5, true);
            const Points2 g2 = joint_loss_2d_grad(pred, gt, vis);
            const int i = rng.uniform_int(0, 4);
            for (int c = 0; c < 2; ++c) {
                Points2 pp = pred, pm = pred;
                pp(i, c) += h;
                pm(i, c) -= h;
                rel((joint_loss_2d(pp, gt, vis) - joint_loss_2d(pm, gt, vis)) / (2 * h),
                    g2(i, c));
            }
        }

        // moderator including temperature
        {
            const int d = 8;
            ModeratorState s = ModeratorState::init(d, rng);
            s.mlp_b1 = rng.gauss_vec(s.hidden(), 0.1);
            s.mlp_b2 = rng.gauss(0, 0.1);
            s.temperature = 0.7 + 0.1 * (Scalar)(seed % 5);
            const VecX f_b = rng.gauss_vec(d), f_p = rng.gauss_vec(d);
            const VecX target = rng.gauss_vec(d);
            ModeratorCache cache;
            const FusionOutput out = moderate(s, f_b, f_p, &cache);
            const ModeratorGrads g =
                moderator_backward(s, cache, (2.0 * (out.fused - target)).eval(), 0.1);
            auto loss_of = [&]() {
                const FusionOutput o = moderate(s, f_b, f_p);
                return (o.fused - target).squaredNorm() + 0.1 * o.w;
            };
            const Scalar hm = 1e-5;
            auto fd_of = [&](Scalar* param) {
                const Scalar orig = *param;
                *param = orig + hm;
                const Scalar up = loss_of();
                *param = orig - hm;
                const Scalar dn = loss_of();
                *param = orig;
                return (up - dn) / (2 * hm);
            };
            rel(fd_of(&s.temperature), g.temperature);
            rel(fd_of(&s.mlp_b2), g.mlp_b2);
            const int i = rng.uniform_int(0, d - 1), jx = rng.uniform_int(0, d - 1);
            rel(fd_of(&s.extractor_w(i, jx)), g.extractor_w(i, jx));
            const int hrow = rng.uniform_int(0, s.hidden() - 1);
            rel(fd_of(&s.mlp_w1(hrow, jx)), g.mlp_w1(hrow, jx));
        }

        // full fitting objective on a few coordinates
        {
            Parameters gt = random_params(mfit, rng, 0.2);
            const PosedResult posed = pose_model(mfit, gt);
            FitCameras cams;
            cams.body = {1.5, Vec2(1, 2)};
            cams.face = {3.0, Vec2(0, 0)};
            cams.hand = {2.0, Vec2(-1, 0)};
            FitProblem problem;
            problem.model = &mfit;
            problem.obs = observe_all(mfit, posed, cams);
            problem.obs.has_gt_params = true;
            problem.obs.gt_params = gt;
            const Parameters p = random_params(mfit, rng, 0.25);
            FitCameras pc;
            pc.body = {1.2, Vec2(0.7, 1.5)};
            pc.face = {2.5, Vec2(0.1, -0.2)};
            pc.hand = {1.8, Vec2(-0.4, 0.3)};
            const ObjectiveValue v = objective(problem, p, pc);
            VecX x = fit_to_vector(mfit, p, pc);
            for (int probe = 0; probe < 4; ++probe) {
                int col = rng.uniform_int(0, (int)x.size() - 1);
                const int jaw_base = mfit.num_shape() + mfit.num_expr() + 6 * mfit.jaw_joint;
                if (col >= jaw_base + 3 && col < jaw_base + 6) col = (int)x.size() - 1;
                VecX xp = x, xm = x;
                xp[col] += h;
                xm[col] -= h;
                Parameters pp, pm;
                FitCameras cp, cm;
                fit_from_vector(mfit, xp, pp, cp);
                fit_from_vector(mfit, xm, pm, cm);
                rel((objective(problem, pp, cp, false).total -
                     objective(problem, pm, cm, false).total) / (2 * h),
                    v.gradient[col]);
            }
        }
    }
    const Scalar secs = elapsed_since(t0);
    char buf[128];
    std::snprintf(buf, sizeof(buf), "max rel err %.3g, %.2fs", worst, secs);
    detail = buf;
    return worst < 1e-4 && secs < 60.0;
}

// -------------------------------------------------------------------------
// 4. alignment suite
// -------------------------------------------------------------------------
bool criterion_alignment(std::string& detail) {
    Rng rng(4);
    Scalar worst = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        Points3 src(12, 3);
        for (int i = 0; i < 12; ++i)
            for (int c = 0; c < 3; ++c) src(i, c) = rng.gauss();
        const Mat3 R = rng.random_rotation();
        const Scalar s = std::exp(rng.gauss(0, 0.4));
        const Vec3 t(rng.gauss(), rng.gauss(), rng.gauss());
        Points3 tgt(12, 3);
        for (int i = 0; i < 12; ++i)
            tgt.row(i) = (s * (R * src.row(i).transpose()) + t).transpose();
        const Alignment a = procrustes_align(src, tgt);
        worst = std::max(worst, std::abs(a.s - s));
        worst = std::max(worst, (a.R - R).cwiseAbs().maxCoeff());
        worst = std::max(worst, (a.t - t).cwiseAbs().maxCoeff());

        // PA <= TR on noisy pairs
        Points3 noisy = tgt;
        for (int i = 0; i < 12; ++i)
            for (int c = 0; c < 3; ++c) noisy(i, c) += rng.gauss(0, 0.2);
        const Scalar pa = v2v(src, noisy, procrustes_align(src, noisy));
        const Scalar tr = v2v(src, noisy, translation_align(src, noisy));
        if (pa > tr + 1e-10) {
            detail = "PA residual exceeded TR residual";
            return false;
        }
    }
    if (worst >= 1e-8) {
        char buf[96];
        std::snprintf(buf, sizeof(buf), "transform recovery err %.3g", worst);
        detail = buf;
        return false;
    }
    // rotated copy
    const BodyModel m = synth_model(2024, {300, 12, 10, 5});
    const Points3 gt = m.template_verts;
    const Mat3 R = rng.random_rotation();
    Points3 pred(gt.rows(), 3);
    for (int i = 0; i < gt.rows(); ++i) pred.row(i) = (R * gt.row(i).transpose()).transpose();
    const Scalar pa = pa_v2v(pred, gt);
    const Scalar tr = v2v(pred, gt, translation_align(pred, gt));
    char buf[128];
    std::snprintf(buf, sizeof(buf), "recovery %.3g, rotated copy pa %.3g tr %.3g", worst, pa,
                  tr);
    detail = buf;
    return pa < 1e-8 && tr > 0.01 * bbox_diag(gt);
}

// -------------------------------------------------------------------------
// 5. P2S oracle
// -------------------------------------------------------------------------
bool criterion_p2s(std::string& detail) {
    Rng rng(5);
    Scalar worst = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const BodyModel m = synth_model(5000 + trial, {120 + trial % 20, 12, 3, 2});
        Triangles faces = m.faces;
        if (faces.rows() > 200) faces = faces.topRows(200);
        Points3 probes(40, 3);
        for (int i = 0; i < 40; ++i)
            for (int c = 0; c < 3; ++c) probes(i, c) = rng.gauss(0, 0.8);
        const P2sResult fast = p2s(probes, m.template_verts, faces, Alignment::identity());
        const P2sResult slow =
            p2s(probes, m.template_verts, faces, Alignment::identity(), true);
        worst = std::max(worst, std::abs(fast.mean - slow.mean));
        worst = std::max(worst, std::abs(fast.median - slow.median));
    }
    // F on identical point sets
    Points3 pts(30, 3);
    for (int i = 0; i < 30; ++i)
        for (int c = 0; c < 3; ++c) pts(i, c) = rng.gauss();
    const Scalar f1 = f_score(pts, pts, 0.005);
    char buf[128];
    std::snprintf(buf, sizeof(buf), "bvh-vs-brute max diff %.3g, f identical %.3f", worst, f1);
    detail = buf;
    return worst < 1e-12 && f1 == 1.0;
}

// -------------------------------------------------------------------------
// 6. fitting round trip
// -------------------------------------------------------------------------
bool criterion_fit_roundtrip(std::string& detail) {
    const BodyModel m = synth_model(42, {120, 12, 4, 2});
    FitConfig cfg = FitConfig::defaults();
    cfg.stages.push_back({true, true, true, true, true, true, true, 400, 1e-3});
    Scalar worst_clean = 0, worst_noisy = 0, worst_secs = 0;
    for (uint64_t seed : {10, 20, 30}) {
        for (const bool noisy : {false, true}) {
            Rng rng(seed);
            const Parameters gt = random_params(m, rng, 0.15);
            FitCameras gc;
            gc.body = gc.face = gc.hand = {2.0, Vec2(1, -1)};
            const PosedResult posed = pose_model(m, gt);
            FitProblem problem;
            problem.model = &m;
            problem.obs = observe_all(m, posed, gc);
            problem.weights.expression = problem.weights.jaw = problem.weights.face_yaw =
                problem.weights.shape = problem.weights.closure = 0;
            const Scalar diag = bbox_diag(posed.vertices);
            if (noisy) {
                // keypoint noise sigma = 1% of the synthetic crop, taken as the
                // projected body keypoint extent (the crop the keypoints span)
                const Vec2 ext = problem.obs.body_2d.colwise().maxCoeff() -
                                 problem.obs.body_2d.colwise().minCoeff();
                const Scalar sigma2d = 0.01 * ext.norm();
                Rng nrng(seed + 999);
                auto jitter = [&](Points2& pts) {
                    for (Eigen::Index i = 0; i < pts.rows(); ++i)
                        for (int c = 0; c < 2; ++c) pts(i, c) += nrng.gauss(0, sigma2d);
                };
                jitter(problem.obs.body_2d);
                jitter(problem.obs.landmarks.points);
                jitter(problem.obs.left_hand.points);
                jitter(problem.obs.right_hand.points);
                for (Eigen::Index i = 0; i < problem.obs.body_3d.rows(); ++i)
                    for (int c = 0; c < 3; ++c)
                        problem.obs.body_3d(i, c) += nrng.gauss(0, 0.01 * diag);
            }
            const auto t0 = Clock::now();
            const FitResult res = fit(problem, cfg);
            const Scalar secs = elapsed_since(t0);
            worst_secs = std::max(worst_secs, secs);
            const Scalar err =
                pa_v2v(pose_model(m, res.params).vertices, posed.vertices) / diag;
            (noisy ? worst_noisy : worst_clean) = std::max(noisy ? worst_noisy : worst_clean,
                                                           err);
        }
    }
    char buf[160];
    std::snprintf(buf, sizeof(buf), "pa-v2v/diag clean %.3f%% noisy %.3f%%, slowest %.1fs",
                  100 * worst_clean, 100 * worst_noisy, worst_secs);
    detail = buf;
    return worst_clean < 0.01 && worst_noisy < 0.05 && worst_secs < 30.0;
}

// -------------------------------------------------------------------------
// 7. gendered prior effect
// -------------------------------------------------------------------------
bool criterion_gender_prior(std::string& detail) {
    const BodyModel m = synth_model(42, {120, 12, 4, 2});
    Rng prior_rng(7000);
    VecX mu_f = VecX::Zero(m.num_shape()), mu_m = VecX::Zero(m.num_shape());
    mu_f[0] = 1.5;
    mu_f[1] = -1.0;
    mu_m[0] = -1.5;
    mu_m[1] = 1.0;
    auto make_class = [&](const VecX& mu) {
        std::vector<VecX> s;
        for (int i = 0; i < 200; ++i) s.push_back(mu + prior_rng.gauss_vec(m.num_shape(), 0.3));
        return fit_gaussian_prior(s);
    };
    GenderPrior prior;
    prior.classes["female"] = make_class(mu_f);
    prior.classes["male"] = make_class(mu_m);
    {
        Rng nrng(7777);
        std::vector<VecX> s;
        for (int i = 0; i < 200; ++i)
            s.push_back((i % 2 ? mu_f : mu_m) + nrng.gauss_vec(m.num_shape(), 0.3));
        prior.classes["neutral"] = fit_gaussian_prior(s);
    }

    FitConfig cfg = FitConfig::defaults();
    cfg.stages.push_back({true, true, true, true, true, true, true, 300, 1e-3});
    int maha_correct = 0;
    Scalar sum_correct = 0, sum_free = 0;
    for (int subj = 0; subj < 20; ++subj) {
        const bool female = subj % 2 == 0;
        const std::string label = female ? "female" : "male";
        Rng rng(8000 + subj);
        Parameters gt = Parameters::rest(m);
        gt.beta = (female ? mu_f : mu_m) + rng.gauss_vec(m.num_shape(), 0.3);
        for (int j = 0; j < m.num_joints(); ++j) {
            if (j == m.jaw_joint) continue;
            const Vec3 aa(rng.gauss(0, 0.1), rng.gauss(0, 0.1), rng.gauss(0, 0.1));
            gt.pose.row(j) = matrix_to_rot6d(axis_angle_to_matrix(aa)).transpose();
        }
        FitCameras gc;
        gc.body = gc.face = gc.hand = {2.0, Vec2(0, 0)};
        const PosedResult posed = pose_model(m, gt);
        FitProblem problem;
        problem.model = &m;
        // sparse body joints only: shape stays underconstrained
        problem.obs.has_body_2d = true;
        problem.obs.body_2d = project(posed.joints_posed, gc.body);
        problem.obs.body_visibility.assign((size_t)m.num_joints(), true);
        problem.prior = &prior;
        problem.weights.expression = problem.weights.jaw = problem.weights.face_yaw =
            problem.weights.closure = 0;
        problem.weights.shape = 0.05;

        problem.obs.gender = label;
        const FitResult rc = fit(problem, cfg);
        problem.obs.gender = "";  // label-free: neutral mixture prior
        const FitResult rf = fit(problem, cfg);

        sum_correct += pa_v2v(pose_model(m, rc.params).vertices, posed.vertices);
        sum_free += pa_v2v(pose_model(m, rf.params).vertices, posed.vertices);

        const GaussianPrior& good = prior.classes.at(label);
        const GaussianPrior& bad = prior.classes.at(female ? "male" : "female");
        const VecX db_good = rc.params.beta - good.mu;
        const VecX db_bad = rc.params.beta - bad.mu;
        const Scalar maha_good = db_good.dot(good.precision * db_good);
        const Scalar maha_bad = db_bad.dot(bad.precision * db_bad);
        if (maha_good < maha_bad) ++maha_correct;
    }
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "mean pa-v2v labeled %.4f vs label-free %.4f, mahalanobis %d/20",
                  sum_correct / 20, sum_free / 20, maha_correct);
    detail = buf;
    return sum_correct < sum_free && maha_correct >= 18;
}

// -------------------------------------------------------------------------
// 8. face-only shape transfer
// -------------------------------------------------------------------------
bool criterion_face_to_body(std::string& detail) {
    const BodyModel m = synth_model(42, {120, 12, 4, 2});
    const std::vector<int>& body_mask = m.part_masks.at("body");
    FitConfig cfg;
    cfg.stages.push_back({true, false, false, false, false, false, true, 300, 1e-2});
    cfg.stages.push_back({true, false, false, false, false, true, true, 300, 5e-3});
    int better = 0;
    for (int subj = 0; subj < 20; ++subj) {
        Rng rng(9000 + subj);
        Parameters gt = Parameters::rest(m);
        gt.beta = rng.gauss_vec(m.num_shape(), 1.0);  // non-neutral shape
        FitCameras gc;
        gc.face = {4.0, Vec2(0.5, 0.5)};
        const PosedResult posed = pose_model(m, gt);
        FitProblem problem;
        problem.model = &m;
        problem.obs.has_landmarks = true;
        Points3 lm3((Eigen::Index)m.landmark_indices.size(), 3);
        for (size_t k = 0; k < m.landmark_indices.size(); ++k)
            lm3.row((Eigen::Index)k) = posed.vertices.row(m.landmark_indices[k]);
        problem.obs.landmarks = LandmarkSet::all_visible(project(lm3, gc.face));
        problem.weights.expression = 0.01;
        problem.weights.jaw = problem.weights.face_yaw = problem.weights.closure = 0;
        problem.weights.shape = 0;
        const FitResult res = fit(problem, cfg);
        const Scalar fit_err = v2v_part(pose_model(m, res.params).vertices, posed.vertices,
                                        Alignment::Kind::PA, body_mask);
        const Scalar neutral_err =
            v2v_part(m.template_verts, posed.vertices, Alignment::Kind::PA, body_mask);
        if (fit_err < neutral_err) ++better;
    }
    char buf[96];
    std::snprintf(buf, sizeof(buf), "face-only fit beat neutral baseline in %d/20", better);
    detail = buf;
    return better >= 16;
}

// -------------------------------------------------------------------------
// 9. moderator calibration
// -------------------------------------------------------------------------
bool criterion_moderator(std::string& detail) {
    ModeratorTrainConfig cfg;
    cfg.seed = 1;
    cfg.steps = 4000;  // <= 5000
    cfg.dim = 16;
    cfg.corruption_rate = 0.5;
    const auto [state, report] = train_toy(cfg);

    // w is exactly 0.5 at score 0
    Rng rng(9);
    ModeratorState zero = ModeratorState::init(4, rng);
    zero.mlp_w2.setZero();
    zero.mlp_b2 = 0.0;
    const FusionOutput out = fuse(zero, rng.gauss_vec(4), rng.gauss_vec(4));
    char buf[128];
    std::snprintf(buf, sizeof(buf), "auc %.3f, w(score=0) = %.17g", report.auc, out.w);
    detail = buf;
    return report.auc > 0.8 && out.w == 0.5 &&
           report.mean_w_corrupted > report.mean_w_clean;
}

// -------------------------------------------------------------------------
// 10. serialization + gradcheck CLI
// -------------------------------------------------------------------------
bool criterion_serialization(std::string& detail) {
    const BodyModel m = synth_model(10, {120, 12, 4, 2});
    Rng rng(10);

    const json mj = model_to_json(m);
    if (model_to_json(model_from_json(mj)).dump() != mj.dump()) {
        detail = "model round trip not bit-stable";
        return false;
    }
    Parameters p = Parameters::rest(m);
    p.beta = rng.gauss_vec(m.num_shape());
    const json pj = params_to_json(p);
    if (params_to_json(params_from_json(pj)).dump() != pj.dump()) {
        detail = "params round trip not bit-stable";
        return false;
    }
    GenderPrior prior;
    std::vector<VecX> samples;
    for (int i = 0; i < 30; ++i) samples.push_back(rng.gauss_vec(4));
    prior.classes["neutral"] = fit_gaussian_prior(samples);
    const json prj = prior_to_json(prior);
    if (prior_to_json(prior_from_json(prj)).dump() != prj.dump()) {
        detail = "prior round trip not bit-stable";
        return false;
    }
    const ModeratorState s = ModeratorState::init(8, rng);
    const json sj = moderator_to_json(s);
    if (moderator_to_json(moderator_from_json(sj)).dump() != sj.dump()) {
        detail = "moderator round trip not bit-stable";
        return false;
    }
    FitResult r;
    r.params = p;
    r.loss_trace = {3.0, 1.0};
    r.final_breakdown.terms = {{"body_joints_2d", 1.0}};
    r.final_breakdown.total = 1.0;
    const json rj = fit_result_to_json(r);
    if (fit_result_to_json(fit_result_from_json(rj)).dump() != rj.dump()) {
        detail = "fit-result round trip not bit-stable";
        return false;
    }

    const std::string cmd = std::string(BODYFIT_CLI_PATH) + " gradcheck > /dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    char buf[96];
    std::snprintf(buf, sizeof(buf), "round trips bit-stable, gradcheck exit %d", rc);
    detail = buf;
    return rc == 0;
}

}  // namespace

int main() {
    Harness h;
    h.run(1, "rotation suite", criterion_rotations);
    h.run(2, "kinematics suite", criterion_kinematics);
    h.run(3, "gradient suite", criterion_gradients);
    h.run(4, "alignment suite", criterion_alignment);
    h.run(5, "point-to-surface oracle", criterion_p2s);
    h.run(6, "fitting round trip", criterion_fit_roundtrip);
    h.run(7, "gendered prior effect", criterion_gender_prior);
    h.run(8, "face-only shape transfer", criterion_face_to_body);
    h.run(9, "moderator calibration", criterion_moderator);
    h.run(10, "serialization and gradcheck", criterion_serialization);
    if (h.failures > 0) {
        std::printf("%d criterion(s) failed\n", h.failures);
        return 1;
    }
    std::printf("all criteria passed\n");
    return 0;
}

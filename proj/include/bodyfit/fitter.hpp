#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "bodyfit/body_model.hpp"
#include "bodyfit/camera.hpp"
#include "bodyfit/losses.hpp"
#include "bodyfit/types.hpp"

namespace bodyfit {

struct HandObservation {
    Points2 points;            // one row per joint in the model's hand joint list
    std::vector<bool> visibility;
};

struct FitObservations {
    bool has_body_2d = false;
    Points2 body_2d;
    std::vector<bool> body_visibility;

    bool has_body_3d = false;
    Points3 body_3d;

    bool has_left_hand = false;
    HandObservation left_hand;
    bool has_right_hand = false;
    HandObservation right_hand;

    bool has_landmarks = false;
    LandmarkSet landmarks;

    bool has_gt_params = false;
    Parameters gt_params;

    std::string gender;  // "", "female" or "male"

    // constant extras: evaluated into the breakdown, no parameter gradient
    bool has_photometric = false;
    VecX face_img, rendered_img, photo_mask;
    bool has_identity = false;
    VecX emb_a, emb_b;

    bool any() const {
        return has_body_2d || has_body_3d || has_left_hand || has_right_hand || has_landmarks;
    }
};

struct FitProblem {
    const BodyModel* model = nullptr;
    FitObservations obs;
    const GenderPrior* prior = nullptr;  // optional
    LossWeights weights;

    void check() const {
        if (!model) throw ConfigInvalid("FitProblem: model missing");
        if (!obs.any()) throw ConfigInvalid("FitProblem: no observations");
        weights.check();
    }
};

struct FitCameras {
    WeakPerspectiveCamera body, face, hand;
};

// Flat optimization vector: [model parameters | body (s,tx,ty) | face | hand]
inline int fit_vector_size(const BodyModel& model) { return param_vector_size(model) + 9; }

inline VecX fit_to_vector(const BodyModel& model, const Parameters& p, const FitCameras& c) {
    VecX x(fit_vector_size(model));
    x.head(param_vector_size(model)) = params_to_vector(model, p);
    const int base = param_vector_size(model);
    x.segment<3>(base + 0) << c.body.s, c.body.t.x(), c.body.t.y();
    x.segment<3>(base + 3) << c.face.s, c.face.t.x(), c.face.t.y();
    x.segment<3>(base + 6) << c.hand.s, c.hand.t.x(), c.hand.t.y();
    return x;
}

inline void fit_from_vector(const BodyModel& model, const VecX& x, Parameters& p,
                            FitCameras& c) {
    p = params_from_vector(model, x.head(param_vector_size(model)));
    const int base = param_vector_size(model);
    c.body = {x[base + 0], {x[base + 1], x[base + 2]}};
    c.face = {x[base + 3], {x[base + 4], x[base + 5]}};
    c.hand = {x[base + 6], {x[base + 7], x[base + 8]}};
}

struct ObjectiveValue {
    Scalar total = 0;
    LossBreakdown breakdown;
    VecX gradient;  // only filled when requested
};

namespace detail {

// chain an L1-style 2D gradient through the weak-perspective projection into
// 3D point gradients and camera gradients
inline void backprop_projection(const Points3& points3, const Points2& g2d, Scalar cam_s,
                                Points3& g3d, Scalar& g_s, Vec2& g_t) {
    for (Eigen::Index i = 0; i < points3.rows(); ++i) {
        g_s += g2d(i, 0) * points3(i, 0) + g2d(i, 1) * points3(i, 1);
        g_t.x() += g2d(i, 0);
        g_t.y() += g2d(i, 1);
        g3d(i, 0) += cam_s * g2d(i, 0);
        g3d(i, 1) += cam_s * g2d(i, 1);
    }
}

inline Scalar head_yaw_degrees(const Mat3& R) {
    return std::atan2(R(1, 0), R(0, 0)) * 180.0 / M_PI;
}

}  // namespace detail

// Weighted sum of every active loss term, with analytic gradients w.r.t. the
// flat fit vector. The update loss is a training-time term and not part of
// the fitting objective.
inline ObjectiveValue objective(const FitProblem& problem, const Parameters& params,
                                const FitCameras& cams, bool want_gradient = true) {
    problem.check();
    const BodyModel& model = *problem.model;
    const LossWeights& w = problem.weights;
    const int P = param_vector_size(model);
    const int camera_base = P;

    const PosedResult posed = pose_model(model, params);
    std::optional<PoseJacobian> jac;
    if (want_gradient) jac = pose_jacobian(model, params, posed);

    ObjectiveValue out;
    if (want_gradient) out.gradient = VecX::Zero(fit_vector_size(model));
    Points3 g_vertices = Points3::Zero(model.num_vertices(), 3);
    Points3 g_joints = Points3::Zero(model.num_joints(), 3);
    auto add_term = [&](const std::string& name, Scalar weight, Scalar value) {
        out.breakdown.terms[name] = weight * value;
        out.total += weight * value;
    };

    // body joints 2D
    if (problem.obs.has_body_2d) {
        const Points2 proj = project(posed.joints_posed, cams.body);
        add_term("body_joints_2d", w.body_joints_2d,
                 joint_loss_2d(proj, problem.obs.body_2d, problem.obs.body_visibility));
        if (want_gradient && w.body_joints_2d > 0) {
            Points2 g2d = w.body_joints_2d *
                          joint_loss_2d_grad(proj, problem.obs.body_2d, problem.obs.body_visibility);
            Scalar gs = 0; Vec2 gt = Vec2::Zero();
            detail::backprop_projection(posed.joints_posed, g2d, cams.body.s, g_joints, gs, gt);
            out.gradient[camera_base + 0] += gs;
            out.gradient[camera_base + 1] += gt.x();
            out.gradient[camera_base + 2] += gt.y();
        }
    }

    // body joints 3D
    if (problem.obs.has_body_3d) {
        add_term("body_joints_3d", w.body_joints_3d,
                 joint_loss_3d(posed.joints_posed, problem.obs.body_3d));
        if (want_gradient && w.body_joints_3d > 0)
            g_joints += w.body_joints_3d *
                        joint_loss_3d_grad(posed.joints_posed, problem.obs.body_3d);
    }

    // hands: joint losses over the wrist+finger subsets, shared hand camera
    auto hand_term = [&](const std::vector<int>& joints, const HandObservation& obs,
                         const char* name) {
        Points3 hp((Eigen::Index)joints.size(), 3);
        for (size_t k = 0; k < joints.size(); ++k)
            hp.row((Eigen::Index)k) = posed.joints_posed.row(joints[k]);
        const Points2 proj = project(hp, cams.hand);
        add_term(name, w.hand, joint_loss_2d(proj, obs.points, obs.visibility));
        if (want_gradient && w.hand > 0) {
            Points2 g2d = w.hand * joint_loss_2d_grad(proj, obs.points, obs.visibility);
            Points3 g3d = Points3::Zero(hp.rows(), 3);
            Scalar gs = 0; Vec2 gt = Vec2::Zero();
            detail::backprop_projection(hp, g2d, cams.hand.s, g3d, gs, gt);
            out.gradient[camera_base + 6] += gs;
            out.gradient[camera_base + 7] += gt.x();
            out.gradient[camera_base + 8] += gt.y();
            for (size_t k = 0; k < joints.size(); ++k)
                g_joints.row(joints[k]) += g3d.row((Eigen::Index)k);
        }
    };
    if (problem.obs.has_left_hand)
        hand_term(model.left_hand_joints, problem.obs.left_hand, "left_hand_joints_2d");
    if (problem.obs.has_right_hand)
        hand_term(model.right_hand_joints, problem.obs.right_hand, "right_hand_joints_2d");

    // face landmarks + closure
    if (problem.obs.has_landmarks) {
        Points3 lm3((Eigen::Index)model.landmark_indices.size(), 3);
        for (size_t k = 0; k < model.landmark_indices.size(); ++k)
            lm3.row((Eigen::Index)k) = posed.vertices.row(model.landmark_indices[k]);
        const Points2 proj = project(lm3, cams.face);
        add_term("landmarks", w.landmarks,
                 joint_loss_2d(proj, problem.obs.landmarks.points,
                               problem.obs.landmarks.visibility));
        add_term("closure", w.closure,
                 closure_loss(proj, problem.obs.landmarks.points, model.closure_pairs));
        if (want_gradient && (w.landmarks > 0 || w.closure > 0)) {
            Points2 g2d = w.landmarks * joint_loss_2d_grad(proj, problem.obs.landmarks.points,
                                                           problem.obs.landmarks.visibility);
            g2d += w.closure *
                   closure_loss_grad(proj, problem.obs.landmarks.points, model.closure_pairs);
            Points3 g3d = Points3::Zero(lm3.rows(), 3);
            Scalar gs = 0; Vec2 gt = Vec2::Zero();
            detail::backprop_projection(lm3, g2d, cams.face.s, g3d, gs, gt);
            out.gradient[camera_base + 3] += gs;
            out.gradient[camera_base + 4] += gt.x();
            out.gradient[camera_base + 5] += gt.y();
            for (size_t k = 0; k < model.landmark_indices.size(); ++k)
                g_vertices.row(model.landmark_indices[k]) += g3d.row((Eigen::Index)k);
        }
    }

    // parameter loss against ground truth, when supplied
    if (problem.obs.has_gt_params) {
        const VecX pv = params_to_vector(model, params);
        const VecX gv = params_to_vector(model, problem.obs.gt_params);
        add_term("params", w.params, (pv - gv).squaredNorm());
        if (want_gradient && w.params > 0)
            out.gradient.head(P) += w.params * 2.0 * (pv - gv);
    }

    const int nb = model.num_shape(), np = model.num_expr();

    // expression prior
    add_term("expression", w.expression, expression_prior(params.psi));
    if (want_gradient && w.expression > 0)
        out.gradient.segment(nb, np) += w.expression * 2.0 * params.psi;

    // jaw prior on the jaw Euler row
    if (model.jaw_joint >= 0) {
        EulerXYZ jaw{params.pose(model.jaw_joint, 0), params.pose(model.jaw_joint, 1),
                     params.pose(model.jaw_joint, 2)};
        add_term("jaw", w.jaw, jaw_prior(jaw));
        if (want_gradient && w.jaw > 0) {
            const Vec3 g = w.jaw * jaw_prior_grad(jaw);
            const int base = nb + np + 6 * model.jaw_joint;
            for (int k = 0; k < 3; ++k) out.gradient[base + k] += g[k];
        }
    }

    // face-yaw prior on the head joint's local yaw
    if (model.head_joint >= 0) {
        const Rot6D r = params.pose.row(model.head_joint).transpose();
        const Mat3 R = rot6d_to_matrix(r);
        const Scalar yaw_deg = detail::head_yaw_degrees(R);
        add_term("face_yaw", w.face_yaw, face_yaw_prior(yaw_deg));
        if (want_gradient && w.face_yaw > 0) {
            const Scalar g_deg = w.face_yaw * face_yaw_prior_grad(yaw_deg);
            if (g_deg != 0.0) {
                const Scalar a = R(1, 0), b = R(0, 0);
                const Scalar denom = a * a + b * b;
                const Scalar g_a = g_deg * (180.0 / M_PI) * b / denom;
                const Scalar g_b = g_deg * (180.0 / M_PI) * (-a) / denom;
                const auto dR = rot6d_to_matrix_jacobian(r);
                const int base = nb + np + 6 * model.head_joint;
                for (int k = 0; k < 6; ++k)
                    out.gradient[base + k] += g_a * dR[k](1, 0) + g_b * dR[k](0, 0);
            }
        }
    }

    // gendered shape prior
    if (problem.prior) {
        add_term("shape", w.shape,
                 gendered_shape_loss(params.beta, problem.obs.gender, *problem.prior));
        if (want_gradient && w.shape > 0)
            out.gradient.head(nb) +=
                w.shape * gendered_shape_loss_grad(params.beta, problem.obs.gender, *problem.prior);
    }

    // constant extras
    if (problem.obs.has_photometric)
        add_term("photometric", w.photometric,
                 photometric_loss(problem.obs.face_img, problem.obs.rendered_img,
                                  problem.obs.photo_mask));
    if (problem.obs.has_identity)
        add_term("identity", w.identity, identity_loss(problem.obs.emb_a, problem.obs.emb_b));

    // chain accumulated point gradients through the pose jacobian
    if (want_gradient) {
        VecX gv_flat(3 * model.num_vertices());
        for (int i = 0; i < model.num_vertices(); ++i)
            gv_flat.segment<3>(3 * i) = g_vertices.row(i).transpose();
        VecX gj_flat(3 * model.num_joints());
        for (int j = 0; j < model.num_joints(); ++j)
            gj_flat.segment<3>(3 * j) = g_joints.row(j).transpose();
        out.gradient.head(P) +=
            jac->d_vertices.transpose() * gv_flat + jac->d_joints.transpose() * gj_flat;
    }

    if (!std::isfinite(out.total)) throw NumericError("objective: non-finite loss");
    return out;
}

// ---------------------------------------------------------------------------
// Staged optimization
// ---------------------------------------------------------------------------

struct StageSpec {
    bool cameras = false;
    bool global_orient = false;
    bool body_pose = false;
    bool hands = false;
    bool face = false;       // neck + head + jaw rotations
    bool expression = false;
    bool shape = false;
    int iterations = 100;
    Scalar lr = 1e-2;
};

struct FitConfig {
    std::vector<StageSpec> stages;
    Scalar grad_tolerance = 1e-6;
    uint64_t seed = 0;

    static FitConfig defaults() {
        FitConfig c;
        c.stages.push_back({true, true, false, false, false, false, false, 150, 1e-2});
        c.stages.push_back({true, true, true, false, false, false, false, 150, 1e-2});
        c.stages.push_back({false, false, false, true, true, true, true, 200, 5e-3});
        c.stages.push_back({true, true, true, true, true, true, true, 300, 5e-3});
        return c;
    }

    void check() const {
        if (stages.empty()) throw ConfigInvalid("FitConfig: no stages");
        for (const auto& s : stages)
            if (s.iterations < 0 || !(s.lr > 0))
                throw ConfigInvalid("FitConfig: iterations must be >= 0 and lr > 0");
    }
};

struct FitResult {
    Parameters params;
    FitCameras cameras;
    std::vector<Scalar> loss_trace;  // accepted objective values
    LossBreakdown final_breakdown;
    bool converged = false;
};

inline std::vector<int> stage_free_indices(const BodyModel& model, const StageSpec& spec) {
    const int nb = model.num_shape(), np = model.num_expr();
    const int pose_base = nb + np;
    const int camera_base = param_vector_size(model);
    std::vector<int> idx;
    auto add_joint = [&](int j) {
        const int n = (j == model.jaw_joint) ? 3 : 6;
        for (int k = 0; k < n; ++k) idx.push_back(pose_base + 6 * j + k);
    };
    if (spec.shape) for (int k = 0; k < nb; ++k) idx.push_back(k);
    if (spec.expression) for (int k = 0; k < np; ++k) idx.push_back(nb + k);
    std::vector<bool> is_hand(model.num_joints(), false);
    for (int j : model.left_hand_joints) is_hand[j] = true;
    for (int j : model.right_hand_joints) is_hand[j] = true;
    auto is_face = [&](int j) {
        return j == model.neck_joint || j == model.head_joint || j == model.jaw_joint;
    };
    for (int j = 0; j < model.num_joints(); ++j) {
        if (j == 0) { if (spec.global_orient) add_joint(j); continue; }
        if (is_hand[j]) { if (spec.hands) add_joint(j); continue; }
        if (is_face(j)) { if (spec.face) add_joint(j); continue; }
        if (spec.body_pose) add_joint(j);
    }
    if (spec.cameras)
        for (int k = 0; k < 9; ++k) idx.push_back(camera_base + k);
    return idx;
}

inline WeakPerspectiveCamera init_camera(const Points2& observed,
                                         const std::vector<bool>& visibility,
                                         const Points3& rest_points) {
    std::vector<int> vis_idx;
    for (size_t i = 0; i < visibility.size(); ++i)
        if (visibility[i]) vis_idx.push_back((int)i);
    if (vis_idx.size() < 2)
        throw DegenerateInput("init_camera: need at least 2 visible keypoints");
    Vec2 obs_lo = Vec2::Constant(1e300), obs_hi = Vec2::Constant(-1e300);
    Vec2 ref_lo = obs_lo, ref_hi = obs_hi;
    Vec2 obs_c = Vec2::Zero(), ref_c = Vec2::Zero();
    for (int i : vis_idx) {
        const Vec2 o = observed.row(i).transpose();
        const Vec2 r = rest_points.row(i).head<2>().transpose();
        obs_lo = obs_lo.cwiseMin(o); obs_hi = obs_hi.cwiseMax(o);
        ref_lo = ref_lo.cwiseMin(r); ref_hi = ref_hi.cwiseMax(r);
        obs_c += o; ref_c += r;
    }
    obs_c /= (Scalar)vis_idx.size();
    ref_c /= (Scalar)vis_idx.size();
    const Scalar obs_ext = (obs_hi - obs_lo).norm();
    const Scalar ref_ext = (ref_hi - ref_lo).norm();
    if (ref_ext < 1e-12)
        throw DegenerateInput("init_camera: degenerate reference keypoints");
    WeakPerspectiveCamera cam;
    cam.s = std::max(obs_ext / ref_ext, 1e-6);
    cam.t = obs_c - cam.s * ref_c;
    return cam;
}

inline FitResult fit(const FitProblem& problem, const FitConfig& config) {
    problem.check();
    config.check();
    const BodyModel& model = *problem.model;

    // initialization: rest parameters, cameras from keypoint extents
    Parameters params = Parameters::rest(model);
    const PosedResult rest = pose_model(model, params);
    FitCameras cams;
    if (problem.obs.has_body_2d)
        cams.body = init_camera(problem.obs.body_2d, problem.obs.body_visibility,
                                rest.joints_posed);
    if (problem.obs.has_landmarks) {
        Points3 lm3((Eigen::Index)model.landmark_indices.size(), 3);
        for (size_t k = 0; k < model.landmark_indices.size(); ++k)
            lm3.row((Eigen::Index)k) = rest.vertices.row(model.landmark_indices[k]);
        cams.face = init_camera(problem.obs.landmarks.points,
                                problem.obs.landmarks.visibility, lm3);
    } else {
        cams.face = cams.body;
    }
    if (problem.obs.has_left_hand || problem.obs.has_right_hand) {
        // stack whichever hands are observed
        std::vector<int> joints;
        std::vector<bool> vis;
        std::vector<Vec2> pts;
        auto push = [&](const std::vector<int>& js, const HandObservation& o) {
            for (size_t k = 0; k < js.size(); ++k) {
                joints.push_back(js[k]);
                vis.push_back(o.visibility[k]);
                pts.push_back(o.points.row((Eigen::Index)k).transpose());
            }
        };
        if (problem.obs.has_left_hand) push(model.left_hand_joints, problem.obs.left_hand);
        if (problem.obs.has_right_hand) push(model.right_hand_joints, problem.obs.right_hand);
        Points2 obs((Eigen::Index)pts.size(), 2);
        Points3 refp((Eigen::Index)pts.size(), 3);
        for (size_t k = 0; k < pts.size(); ++k) {
            obs.row((Eigen::Index)k) = pts[k].transpose();
            refp.row((Eigen::Index)k) = rest.joints_posed.row(joints[k]);
        }
        int n_vis = 0;
        for (bool v : vis) n_vis += v ? 1 : 0;
        cams.hand = n_vis >= 2 ? init_camera(obs, vis, refp) : cams.body;
    } else {
        cams.hand = cams.body;
    }

    FitResult result;
    VecX x = fit_to_vector(model, params, cams);
    bool grad_converged = false;

    for (const StageSpec& stage : config.stages) {
        const std::vector<int> free = stage_free_indices(model, stage);
        if (free.empty() || stage.iterations == 0) continue;
        const int n = (int)free.size();
        VecX m = VecX::Zero(n), v = VecX::Zero(n);
        const Scalar b1 = 0.9, b2 = 0.999, eps = 1e-8;

        Parameters cur_params;
        FitCameras cur_cams;
        fit_from_vector(model, x, cur_params, cur_cams);
        ObjectiveValue cur = objective(problem, cur_params, cur_cams, true);
        result.loss_trace.push_back(cur.total);
        Scalar lr = stage.lr;

        for (int it = 1; it <= stage.iterations; ++it) {
            VecX g(n);
            for (int k = 0; k < n; ++k) g[k] = cur.gradient[free[k]];
            if (g.norm() < config.grad_tolerance) { grad_converged = true; break; }
            m = b1 * m + (1 - b1) * g;
            v = b2 * v + (1 - b2) * g.cwiseProduct(g).eval();
            const Scalar bc1 = 1 - std::pow(b1, it), bc2 = 1 - std::pow(b2, it);
            VecX step(n);
            for (int k = 0; k < n; ++k)
                step[k] = lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + eps);

            // backtracking acceptance keeps the per-stage trace monotone
            auto try_step = [&](const VecX& dir) {
                Scalar scale = 1.0;
                for (int tries = 0; tries < 12; ++tries, scale *= 0.5) {
                    VecX x_try = x;
                    for (int k = 0; k < n; ++k) x_try[free[k]] -= scale * dir[k];
                    Parameters try_params;
                    FitCameras try_cams;
                    fit_from_vector(model, x_try, try_params, try_cams);
                    // keep camera scales positive
                    const int cb = param_vector_size(model);
                    if (!(x_try[cb] > 1e-9 && x_try[cb + 3] > 1e-9 && x_try[cb + 6] > 1e-9))
                        continue;
                    ObjectiveValue trial;
                    try {
                        trial = objective(problem, try_params, try_cams, true);
                    } catch (const Error&) {
                        continue;
                    }
                    if (trial.total <= cur.total + 1e-12) {
                        x = x_try;
                        cur = std::move(trial);
                        return true;
                    }
                }
                return false;
            };
            bool accepted = try_step(step);
            if (!accepted) {
                // momentum made the Adam step an ascent direction; fall back
                // to plain steepest descent and restart the moment estimates
                const Scalar gn = g.norm();
                if (gn > 0) accepted = try_step((lr / gn * g).eval());
                m.setZero();
                v.setZero();
            }
            if (accepted) result.loss_trace.push_back(cur.total);
        }
    }

    fit_from_vector(model, x, result.params, result.cameras);
    ObjectiveValue final_val = objective(problem, result.params, result.cameras, false);
    result.final_breakdown = final_val.breakdown;
    result.converged = grad_converged;
    return result;
}

}  // namespace bodyfit

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bodyfit/fitter.hpp"
#include "bodyfit/io.hpp"
#include "bodyfit/metrics.hpp"
#include "bodyfit/moderator.hpp"
#include "bodyfit/rng.hpp"

using namespace bodyfit;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitNumeric = 2;
constexpr int kExitIo = 3;

SynthDims parse_dims(const std::string& spec) {
    SynthDims d;
    if (spec.empty()) return d;
    int v = 0, j = 0, nb = 0, np = 0;
    if (std::sscanf(spec.c_str(), "%d,%d,%d,%d", &v, &j, &nb, &np) != 4)
        throw ConfigInvalid("--dims expects V,J,n_beta,n_psi");
    return {v, j, nb, np};
}

LossWeights weights_from_json(const json& j) {
    LossWeights w;
    auto get = [&](const char* name, Scalar& field) {
        if (j.contains(name)) field = j[name].get<Scalar>();
    };
    get("body_joints_2d", w.body_joints_2d);
    get("body_joints_3d", w.body_joints_3d);
    get("params", w.params);
    get("hand", w.hand);
    get("landmarks", w.landmarks);
    get("closure", w.closure);
    get("photometric", w.photometric);
    get("identity", w.identity);
    get("expression", w.expression);
    get("jaw", w.jaw);
    get("face_yaw", w.face_yaw);
    get("shape", w.shape);
    get("update", w.update);
    w.check();
    return w;
}

FitConfig fit_config_from_json(const json& j) {
    FitConfig c;
    if (j.contains("grad_tolerance")) c.grad_tolerance = j["grad_tolerance"].get<Scalar>();
    if (j.contains("seed")) c.seed = j["seed"].get<uint64_t>();
    if (j.contains("stages")) {
        for (const auto& s : j["stages"]) {
            StageSpec spec;
            auto flag = [&](const char* name, bool& f) {
                if (s.contains(name)) f = s[name].get<bool>();
            };
            flag("cameras", spec.cameras);
            flag("global_orient", spec.global_orient);
            flag("body_pose", spec.body_pose);
            flag("hands", spec.hands);
            flag("face", spec.face);
            flag("expression", spec.expression);
            flag("shape", spec.shape);
            if (s.contains("iterations")) spec.iterations = s["iterations"].get<int>();
            if (s.contains("lr")) spec.lr = s["lr"].get<Scalar>();
            c.stages.push_back(spec);
        }
    } else {
        c.stages = FitConfig::defaults().stages;
    }
    c.check();
    return c;
}

ModeratorTrainConfig moderator_config_from_json(const json& j) {
    ModeratorTrainConfig c;
    auto geti = [&](const char* n, int& f) { if (j.contains(n)) f = j[n].get<int>(); };
    auto gets = [&](const char* n, Scalar& f) { if (j.contains(n)) f = j[n].get<Scalar>(); };
    if (j.contains("seed")) c.seed = j["seed"].get<uint64_t>();
    geti("steps", c.steps);
    geti("dim", c.dim);
    geti("batch", c.batch);
    gets("lr", c.lr);
    gets("corruption_rate", c.corruption_rate);
    gets("body_noise", c.body_noise);
    gets("part_noise", c.part_noise);
    gets("corrupt_noise", c.corrupt_noise);
    gets("update_weight", c.update_weight);
    gets("extractor_weight", c.extractor_weight);
    gets("confidence_threshold", c.confidence_threshold);
    c.check();
    return c;
}

// ---------------------------------------------------------------------------
// gradcheck suites: every analytic gradient against central finite differences
// ---------------------------------------------------------------------------

struct GradReport {
    int failures = 0;
    void check(const char* what, Scalar fd, Scalar analytic, Scalar tol = 1e-4) {
        const Scalar denom = std::max(std::abs(fd), 1.0);
        if (!(std::abs(fd - analytic) / denom < tol)) {
            std::fprintf(stderr, "gradcheck FAIL %s: fd=%.10g analytic=%.10g\n", what, fd,
                         analytic);
            ++failures;
        }
    }
};

void gradcheck_rotations(GradReport& rep) {
    Rng rng(101);
    const Scalar h = 1e-6;
    for (int trial = 0; trial < 20; ++trial) {
        Rot6D r;
        for (int k = 0; k < 6; ++k) r[k] = rng.gauss();
        const auto jac = rot6d_to_matrix_jacobian(r);
        for (int k = 0; k < 6; ++k) {
            Rot6D rp = r, rm = r;
            rp[k] += h;
            rm[k] -= h;
            const Mat3 fd = (rot6d_to_matrix(rp) - rot6d_to_matrix(rm)) / (2 * h);
            for (int i = 0; i < 3; ++i)
                for (int c = 0; c < 3; ++c) rep.check("rot6d_jacobian", fd(i, c), jac[k](i, c));
        }
        EulerXYZ e{rng.gauss(0, 0.5), rng.gauss(0, 0.5), rng.gauss(0, 0.5)};
        const auto ejac = euler_to_matrix_jacobian(e);
        for (int k = 0; k < 3; ++k) {
            auto perturb = [&](Scalar d) {
                EulerXYZ out = e;
                if (k == 0) out.pitch += d;
                else if (k == 1) out.roll += d;
                else out.yaw += d;
                return out;
            };
            const Mat3 fd = (euler_to_matrix(perturb(h)) - euler_to_matrix(perturb(-h))) / (2 * h);
            for (int i = 0; i < 3; ++i)
                for (int c = 0; c < 3; ++c) rep.check("euler_jacobian", fd(i, c), ejac[k](i, c));
        }
    }
}

void gradcheck_body_model(GradReport& rep) {
    const BodyModel m = synth_model(11, {110, 12, 3, 2});
    Rng rng(202);
    Parameters p = Parameters::rest(m);
    p.beta = rng.gauss_vec(m.num_shape(), 0.3);
    p.psi = rng.gauss_vec(m.num_expr(), 0.3);
    for (int j = 0; j < m.num_joints(); ++j) {
        if (j == m.jaw_joint) {
            for (int k = 0; k < 3; ++k) p.pose(j, k) = rng.gauss(0, 0.2);
            continue;
        }
        Rot6D r = matrix_to_rot6d(rng.random_rotation());
        for (int k = 0; k < 6; ++k) r[k] += rng.gauss(0, 0.05);
        p.pose.row(j) = r.transpose();
    }
    const PosedResult posed = pose_model(m, p);
    const PoseJacobian jac = pose_jacobian(m, p, posed);
    const VecX x0 = params_to_vector(m, p);
    const Scalar h = 1e-6;
    for (int col = 0; col < param_vector_size(m); ++col) {
        if (m.jaw_joint >= 0) {
            const int rel = col - (m.num_shape() + m.num_expr() + 6 * m.jaw_joint);
            if (rel >= 3 && rel < 6) continue;
        }
        VecX xp = x0, xm = x0;
        xp[col] += h;
        xm[col] -= h;
        const PosedResult rp = pose_model(m, params_from_vector(m, xp));
        const PosedResult rm = pose_model(m, params_from_vector(m, xm));
        for (int i = 0; i < m.num_vertices(); i += 7)
            for (int c = 0; c < 3; ++c)
                rep.check("pose_jacobian.vertices",
                          (rp.vertices(i, c) - rm.vertices(i, c)) / (2 * h),
                          jac.d_vertices(3 * i + c, col));
        for (int j = 0; j < m.num_joints(); ++j)
            for (int c = 0; c < 3; ++c)
                rep.check("pose_jacobian.joints",
                          (rp.joints_posed(j, c) - rm.joints_posed(j, c)) / (2 * h),
                          jac.d_joints(3 * j + c, col));
    }
}

void gradcheck_losses(GradReport& rep) {
    Rng rng(303);
    const Scalar h = 1e-6;
    // jaw / face-yaw / gendered shape
    for (int trial = 0; trial < 10; ++trial) {
        EulerXYZ e{rng.gauss(), rng.gauss(), rng.gauss()};
        const Vec3 g = jaw_prior_grad(e);
        for (int k = 0; k < 3; ++k) {
            auto at = [&](Scalar d) {
                EulerXYZ out = e;
                (k == 0 ? out.pitch : k == 1 ? out.roll : out.yaw) += d;
                return jaw_prior(out);
            };
            rep.check("jaw_prior", (at(h) - at(-h)) / (2 * h), g[k]);
        }
        const Scalar yaw = rng.gauss(0, 80.0);
        if (std::abs(std::abs(yaw) - 90.0) > 1.0)
            rep.check("face_yaw_prior",
                      (face_yaw_prior(yaw + h) - face_yaw_prior(yaw - h)) / (2 * h),
                      face_yaw_prior_grad(yaw));
    }
    std::vector<VecX> samples;
    for (int i = 0; i < 100; ++i) samples.push_back(rng.gauss_vec(5));
    GenderPrior prior;
    prior.classes["female"] = fit_gaussian_prior(samples);
    for (int trial = 0; trial < 10; ++trial) {
        const VecX beta = rng.gauss_vec(5);
        const VecX g = gendered_shape_loss_grad(beta, "female", prior);
        for (int k = 0; k < 5; ++k) {
            VecX bp = beta, bm = beta;
            bp[k] += h;
            bm[k] -= h;
            rep.check("gendered_shape_loss",
                      (gendered_shape_loss(bp, "female", prior) -
                       gendered_shape_loss(bm, "female", prior)) / (2 * h),
                      g[k]);
        }
    }
    // 2D joint loss away from kinks
    for (int trial = 0; trial < 10; ++trial) {
        Points2 pred(6, 2), gt(6, 2);
        for (int i = 0; i < 6; ++i)
            for (int c = 0; c < 2; ++c) {
                gt(i, c) = rng.gauss();
                pred(i, c) = gt(i, c) + rng.gauss() + 2.0;  // off the kink
            }
        std::vector<bool> vis(6, true);
        const Points2 g = joint_loss_2d_grad(pred, gt, vis);
        for (int i = 0; i < 6; ++i)
            for (int c = 0; c < 2; ++c) {
                Points2 pp = pred, pm = pred;
                pp(i, c) += h;
                pm(i, c) -= h;
                rep.check("joint_loss_2d",
                          (joint_loss_2d(pp, gt, vis) - joint_loss_2d(pm, gt, vis)) / (2 * h),
                          g(i, c));
            }
    }
}

void gradcheck_moderator(GradReport& rep) {
    const int d = 8;
    const Scalar h = 1e-5;
    for (uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(404 + seed);
        ModeratorState s = ModeratorState::init(d, rng);
        s.mlp_b1 = rng.gauss_vec(s.hidden(), 0.1);
        s.mlp_b2 = rng.gauss(0, 0.1);
        s.temperature = 0.9;
        const VecX f_b = rng.gauss_vec(d), f_p = rng.gauss_vec(d);
        const VecX target = rng.gauss_vec(d);
        auto loss_of = [&]() {
            const FusionOutput out = moderate(s, f_b, f_p);
            return (out.fused - target).squaredNorm() + 0.2 * out.w;
        };
        ModeratorCache cache;
        const FusionOutput out = moderate(s, f_b, f_p, &cache);
        const ModeratorGrads g =
            moderator_backward(s, cache, (2.0 * (out.fused - target)).eval(), 0.2);
        auto fd_of = [&](Scalar* param) {
            const Scalar orig = *param;
            *param = orig + h;
            const Scalar up = loss_of();
            *param = orig - h;
            const Scalar dn = loss_of();
            *param = orig;
            return (up - dn) / (2 * h);
        };
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j)
                rep.check("moderator.extractor_w", fd_of(&s.extractor_w(i, j)),
                          g.extractor_w(i, j));
        for (int i = 0; i < s.hidden(); ++i)
            rep.check("moderator.mlp_w2", fd_of(&s.mlp_w2[i]), g.mlp_w2[i]);
        rep.check("moderator.temperature", fd_of(&s.temperature), g.temperature);
        rep.check("moderator.mlp_b2", fd_of(&s.mlp_b2), g.mlp_b2);
    }
}

void gradcheck_fitter(GradReport& rep) {
    const BodyModel m = synth_model(42, {120, 12, 4, 2});
    Rng rng(505);
    auto random_params = [&](Scalar sigma) {
        Parameters p = Parameters::rest(m);
        p.beta = rng.gauss_vec(m.num_shape(), 0.3);
        p.psi = rng.gauss_vec(m.num_expr(), 0.2);
        for (int j = 0; j < m.num_joints(); ++j) {
            if (j == m.jaw_joint) {
                p.pose(j, 0) = rng.gauss(0, 0.1);
                continue;
            }
            Vec3 aa(rng.gauss(0, sigma), rng.gauss(0, sigma), rng.gauss(0, sigma));
            p.pose.row(j) = matrix_to_rot6d(axis_angle_to_matrix(aa)).transpose();
        }
        return p;
    };
    const Parameters gt = random_params(0.2);
    const PosedResult posed = pose_model(m, gt);
    FitCameras gt_cams;
    gt_cams.body = {1.5, Vec2(1, 2)};
    gt_cams.face = {3.0, Vec2(0, 0)};
    gt_cams.hand = {2.0, Vec2(-1, 0)};
    FitProblem problem;
    problem.model = &m;
    FitObservations& obs = problem.obs;
    obs.has_body_2d = true;
    obs.body_2d = project(posed.joints_posed, gt_cams.body);
    obs.body_visibility.assign((size_t)m.num_joints(), true);
    obs.has_body_3d = true;
    obs.body_3d = posed.joints_posed;
    obs.has_landmarks = true;
    Points3 lm3((Eigen::Index)m.landmark_indices.size(), 3);
    for (size_t k = 0; k < m.landmark_indices.size(); ++k)
        lm3.row((Eigen::Index)k) = posed.vertices.row(m.landmark_indices[k]);
    obs.landmarks = LandmarkSet::all_visible(project(lm3, gt_cams.face));
    obs.has_gt_params = true;
    obs.gt_params = gt;

    const Parameters p = random_params(0.25);
    FitCameras cams;
    cams.body = {1.2, Vec2(0.7, 1.5)};
    cams.face = {2.5, Vec2(0.1, -0.2)};
    cams.hand = {1.8, Vec2(-0.4, 0.3)};
    const ObjectiveValue v = objective(problem, p, cams);
    VecX x = fit_to_vector(m, p, cams);
    const Scalar h = 1e-6;
    for (int col = 0; col < (int)x.size(); ++col) {
        if (m.jaw_joint >= 0) {
            const int rel = col - (m.num_shape() + m.num_expr() + 6 * m.jaw_joint);
            if (rel >= 3 && rel < 6) continue;
        }
        VecX xp = x, xm = x;
        xp[col] += h;
        xm[col] -= h;
        Parameters pp, pm;
        FitCameras cp, cm;
        fit_from_vector(m, xp, pp, cp);
        fit_from_vector(m, xm, pm, cm);
        rep.check("objective",
                  (objective(problem, pp, cp, false).total -
                   objective(problem, pm, cm, false).total) / (2 * h),
                  v.gradient[col]);
    }
}

int run_gradcheck(const std::string& module) {
    static const std::vector<std::string> known = {"all",    "rotations", "body_model",
                                                   "losses", "moderator", "fitter"};
    if (std::find(known.begin(), known.end(), module) == known.end())
        throw ConfigInvalid("gradcheck: unknown module '" + module + "'");
    GradReport rep;
    const bool all = module == "all";
    if (all || module == "rotations") gradcheck_rotations(rep);
    if (all || module == "body_model") gradcheck_body_model(rep);
    if (all || module == "losses") gradcheck_losses(rep);
    if (all || module == "moderator") gradcheck_moderator(rep);
    if (all || module == "fitter") gradcheck_fitter(rep);
    if (rep.failures > 0) {
        std::fprintf(stderr, "gradcheck: %d failures\n", rep.failures);
        return kExitNumeric;
    }
    std::printf("gradcheck: all gradients match finite differences\n");
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"bodyfit: parametric body-model toolkit"};
    app.require_subcommand(1);

    // synth-model
    auto* synth = app.add_subcommand("synth-model", "generate a synthetic body model");
    uint64_t synth_seed = 0;
    std::string synth_dims, synth_out;
    synth->add_option("--seed", synth_seed, "rng seed");
    synth->add_option("--dims", synth_dims, "V,J,n_beta,n_psi (default 300,12,10,5)");
    synth->add_option("--out", synth_out, "output model JSON")->required();

    // pose
    auto* pose = app.add_subcommand("pose", "pose a model and export the mesh");
    std::string pose_model_path, pose_params_path, pose_out_obj;
    pose->add_option("--model", pose_model_path, "model JSON")->required();
    pose->add_option("--params", pose_params_path, "parameters JSON (default: rest)");
    pose->add_option("--out-obj", pose_out_obj, "output OBJ")->required();

    // fit
    auto* fit_cmd = app.add_subcommand("fit", "fit parameters to keypoints");
    std::string fit_model_path, fit_kp_path, fit_cfg_path, fit_prior_path, fit_out,
        fit_out_obj;
    fit_cmd->add_option("--model", fit_model_path, "model JSON")->required();
    fit_cmd->add_option("--keypoints", fit_kp_path, "keypoints JSON")->required();
    fit_cmd->add_option("--config", fit_cfg_path, "fit config JSON (stages, weights)");
    fit_cmd->add_option("--prior", fit_prior_path, "gender prior JSON");
    fit_cmd->add_option("--out", fit_out, "output fit-result JSON")->required();
    fit_cmd->add_option("--out-obj", fit_out_obj, "optional fitted-mesh OBJ");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "compare predicted and ground-truth meshes");
    std::string eval_pred, eval_gt, eval_masks, eval_csv, eval_model;
    eval_cmd->add_option("--pred", eval_pred, "predicted OBJ")->required();
    eval_cmd->add_option("--gt", eval_gt, "ground-truth OBJ")->required();
    eval_cmd->add_option("--masks", eval_masks, "part-mask JSON (name -> vertex indices)");
    eval_cmd->add_option("--model", eval_model, "model JSON for joint regression");
    eval_cmd->add_option("--out-csv", eval_csv, "output CSV")->required();

    // moderator-train
    auto* mod_cmd = app.add_subcommand("moderator-train", "train the toy moderator");
    std::string mod_cfg_path, mod_out, mod_csv;
    mod_cmd->add_option("--config", mod_cfg_path, "training config JSON");
    mod_cmd->add_option("--out", mod_out, "output moderator JSON")->required();
    mod_cmd->add_option("--report-csv", mod_csv, "optional calibration CSV");

    // gradcheck
    auto* grad_cmd = app.add_subcommand("gradcheck", "verify analytic gradients");
    std::string grad_module = "all";
    grad_cmd->add_option("--module", grad_module,
                         "all|rotations|body_model|losses|moderator|fitter");

    // prior-fit
    auto* prior_cmd = app.add_subcommand("prior-fit", "fit a Gaussian shape prior class");
    std::string prior_samples, prior_label, prior_out;
    prior_cmd->add_option("--samples", prior_samples, "samples JSON (array of vectors)")
        ->required();
    prior_cmd->add_option("--label", prior_label, "class label")->required();
    prior_cmd->add_option("--out", prior_out, "prior JSON (merged if it exists)")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitValidation;
    }

    try {
        if (synth->parsed()) {
            const BodyModel m = synth_model(synth_seed, parse_dims(synth_dims));
            save_json(model_to_json(m), synth_out);
            std::printf("wrote %s (V=%d J=%d)\n", synth_out.c_str(), m.num_vertices(),
                        m.num_joints());
        } else if (pose->parsed()) {
            const BodyModel m = model_from_json(load_json(pose_model_path));
            Parameters p = Parameters::rest(m);
            if (!pose_params_path.empty()) p = params_from_json(load_json(pose_params_path));
            const PosedResult res = pose_model(m, p);
            write_obj({res.vertices, m.faces}, pose_out_obj);
            std::printf("wrote %s\n", pose_out_obj.c_str());
        } else if (fit_cmd->parsed()) {
            const BodyModel m = model_from_json(load_json(fit_model_path));
            FitProblem problem;
            problem.model = &m;
            problem.obs = keypoints_from_json(load_json(fit_kp_path));
            GenderPrior prior;
            if (!fit_prior_path.empty()) {
                prior = prior_from_json(load_json(fit_prior_path));
                problem.prior = &prior;
            }
            FitConfig config = FitConfig::defaults();
            if (!fit_cfg_path.empty()) {
                const json cj = load_json(fit_cfg_path);
                config = fit_config_from_json(cj);
                if (cj.contains("weights"))
                    problem.weights = weights_from_json(cj["weights"]);
            }
            const FitResult result = fit(problem, config);
            save_json(fit_result_to_json(result), fit_out);
            if (!fit_out_obj.empty())
                write_obj({pose_model(m, result.params).vertices, m.faces}, fit_out_obj);
            std::printf("fit: final loss %.9g over %zu accepted steps\n",
                        result.loss_trace.empty() ? 0.0 : result.loss_trace.back(),
                        result.loss_trace.size());
        } else if (eval_cmd->parsed()) {
            const ObjMesh pred = read_obj(eval_pred);
            const ObjMesh gt = read_obj(eval_gt);
            EvalInputs in;
            in.pred_vertices = pred.vertices;
            in.pred_faces = pred.faces;
            in.gt_vertices = gt.vertices;
            if (!eval_masks.empty()) {
                const json mj = load_json(eval_masks);
                for (const auto& [name, mask] : mj.items())
                    in.part_masks[name] = mask.get<std::vector<int>>();
            }
            if (!eval_model.empty()) {
                const BodyModel m = model_from_json(load_json(eval_model));
                in.pred_joints = regress_eval_joints(pred.vertices, m.eval_regressor);
                in.gt_joints = regress_eval_joints(gt.vertices, m.eval_regressor);
                if (in.part_masks.empty()) in.part_masks = m.part_masks;
            }
            const EvalReport rep = evaluate(in);
            write_eval_csv(rep, eval_csv);
            for (const auto& [name, value] : rep.values)
                std::printf("%s %.9g\n", name.c_str(), value);
        } else if (mod_cmd->parsed()) {
            ModeratorTrainConfig cfg;
            if (!mod_cfg_path.empty())
                cfg = moderator_config_from_json(load_json(mod_cfg_path));
            const auto [state, report] = train_toy(cfg);
            json out = moderator_to_json(state);
            out["report"] = {{"mean_w_clean", report.mean_w_clean},
                             {"mean_w_corrupted", report.mean_w_corrupted},
                             {"auc", report.auc},
                             {"final_loss", report.final_loss}};
            save_json(out, mod_out);
            if (!mod_csv.empty()) write_calibration_csv(report.calibration, mod_csv);
            std::printf("moderator: auc %.4f, mean w clean %.4f / corrupted %.4f\n",
                        report.auc, report.mean_w_clean, report.mean_w_corrupted);
        } else if (grad_cmd->parsed()) {
            return run_gradcheck(grad_module);
        } else if (prior_cmd->parsed()) {
            const json sj = load_json(prior_samples);
            const json& arr = sj.is_object() && sj.contains("samples") ? sj["samples"] : sj;
            std::vector<VecX> samples;
            for (const auto& row : arr) samples.push_back(vector_from_json(row));
            GenderPrior prior;
            if (std::filesystem::exists(prior_out))
                prior = prior_from_json(load_json(prior_out));
            prior.classes[prior_label] = fit_gaussian_prior(samples);
            save_json(prior_to_json(prior), prior_out);
            std::printf("prior: fitted class '%s' from %zu samples\n", prior_label.c_str(),
                        samples.size());
        }
    } catch (const IoError& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return kExitIo;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return kExitNumeric;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitValidation;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitValidation;
    }
    return kExitOk;
}

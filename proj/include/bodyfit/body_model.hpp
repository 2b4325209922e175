#pragma once

#include <algorithm>
#include <map>
#include <numeric>
#include <utility>
#include <vector>

#include "bodyfit/rng.hpp"
#include "bodyfit/rotations.hpp"
#include "bodyfit/types.hpp"

namespace bodyfit {

// Whole-body parametric model: template mesh, linear shape/expression bases,
// joint regressor, skinning weights and a kinematic tree. Immutable after
// construction. Blendshape bases are stored flattened: row 3i+c is coordinate
// c of vertex i.
struct BodyModel {
    Points3 template_verts;                        // V x 3
    MatX shape_basis;                              // 3V x n_beta
    MatX expr_basis;                               // 3V x n_psi
    MatX joint_regressor;                          // J x V, rows sum to 1
    MatX skin_weights;                             // V x J, rows sum to 1
    std::vector<int> parents;                      // parents[0] == -1
    Triangles faces;                               // triangle indices
    std::map<std::string, std::vector<int>> part_masks;  // body/face/left_hand/right_hand
    std::vector<int> landmark_indices;             // 68 vertex ids
    std::vector<std::pair<int, int>> closure_pairs;
    MatX eval_regressor;                           // 14 x V, rows sum to 1

    int head_joint = -1;
    int jaw_joint = -1;
    int neck_joint = -1;
    int left_wrist = -1;
    int right_wrist = -1;
    std::vector<int> left_hand_joints;   // wrist + any finger joints
    std::vector<int> right_hand_joints;

    int num_vertices() const { return static_cast<int>(template_verts.rows()); }
    int num_joints() const { return static_cast<int>(parents.size()); }
    int num_shape() const { return static_cast<int>(shape_basis.cols()); }
    int num_expr() const { return static_cast<int>(expr_basis.cols()); }

    void validate() const {
        const int V = num_vertices();
        const int J = num_joints();
        if (J < 1 || parents[0] != -1)
            throw InvalidModel("parents[0] must be the root");
        for (int j = 1; j < J; ++j)
            if (parents[j] < 0 || parents[j] >= j)
                throw InvalidModel("parents must satisfy parents[j] < j");
        if (joint_regressor.rows() != J || joint_regressor.cols() != V)
            throw InvalidModel("joint_regressor must be J x V");
        if (skin_weights.rows() != V || skin_weights.cols() != J)
            throw InvalidModel("skin_weights must be V x J");
        for (int j = 0; j < J; ++j)
            if (std::abs(joint_regressor.row(j).sum() - 1.0) > 1e-9)
                throw InvalidModel("joint_regressor rows must sum to 1");
        for (int i = 0; i < V; ++i)
            if (std::abs(skin_weights.row(i).sum() - 1.0) > 1e-9)
                throw InvalidModel("skin_weights rows must sum to 1");
        if (shape_basis.rows() != 3 * V || expr_basis.rows() != 3 * V)
            throw InvalidModel("blendshape bases must have 3V rows");
        for (const auto& [name, mask] : part_masks)
            for (int v : mask)
                if (v < 0 || v >= V) throw InvalidModel("part mask index out of range: " + name);
        for (int v : landmark_indices)
            if (v < 0 || v >= V) throw InvalidModel("landmark index out of range");
        for (auto [a, b] : closure_pairs)
            if (a < 0 || b < 0 || a >= (int)landmark_indices.size() || b >= (int)landmark_indices.size())
                throw InvalidModel("closure pair indexes outside the landmark set");
    }
};

// Pose vector: per-joint 6D rotation rows; the jaw joint's row holds Euler
// (pitch, roll, yaw) in columns 0..2 with columns 3..5 unused (kept zero).
struct Parameters {
    VecX beta;
    VecX psi;
    MatX pose;  // J x 6

    static Parameters rest(const BodyModel& model) {
        Parameters p;
        p.beta = VecX::Zero(model.num_shape());
        p.psi = VecX::Zero(model.num_expr());
        p.pose = MatX::Zero(model.num_joints(), 6);
        const Rot6D id = rot6d_identity();
        for (int j = 0; j < model.num_joints(); ++j)
            if (j != model.jaw_joint) p.pose.row(j) = id.transpose();
        return p;
    }
};

inline Mat3 local_rotation(const BodyModel& model, const Parameters& params, int j) {
    if (j == model.jaw_joint) {
        EulerXYZ e{params.pose(j, 0), params.pose(j, 1), params.pose(j, 2)};
        return euler_to_matrix(e);
    }
    return rot6d_to_matrix(params.pose.row(j).transpose());
}

// Rigid world transform per joint: a point rigidly attached to joint j that
// sits at p in the rest pose moves to A * (p - joints_rest[j]) + t.
struct JointTransform {
    Mat3 A = Mat3::Identity();
    Vec3 t = Vec3::Zero();
};

struct PosedResult {
    Points3 vertices;
    Points3 joints_rest;
    Points3 joints_posed;
    std::vector<JointTransform> world_transforms;
    std::vector<Mat3> local_rotations;
};

inline Points3 shape_mesh(const BodyModel& model, const VecX& beta, const VecX& psi) {
    if (beta.size() != model.num_shape() || psi.size() != model.num_expr())
        throw DimensionMismatch("shape_mesh: beta/psi dimensions do not match model");
    const int V = model.num_vertices();
    VecX flat = model.shape_basis * beta + model.expr_basis * psi;
    Points3 out = model.template_verts;
    for (int i = 0; i < V; ++i) out.row(i) += flat.segment<3>(3 * i).transpose();
    return out;
}

inline Points3 regress_joints(const BodyModel& model, const Points3& vertices) {
    if (vertices.rows() != model.num_vertices())
        throw DimensionMismatch("regress_joints: vertex count mismatch");
    return model.joint_regressor * vertices;
}

inline std::vector<JointTransform> forward_kinematics(const BodyModel& model,
                                                      const Points3& joints_rest,
                                                      const std::vector<Mat3>& local_rots) {
    const int J = model.num_joints();
    if ((int)local_rots.size() != J || joints_rest.rows() != J)
        throw DimensionMismatch("forward_kinematics: joint count mismatch");
    std::vector<JointTransform> tf(J);
    tf[0].A = local_rots[0];
    tf[0].t = joints_rest.row(0).transpose();
    for (int j = 1; j < J; ++j) {
        const int p = model.parents[j];
        const Vec3 offset = (joints_rest.row(j) - joints_rest.row(p)).transpose();
        tf[j].A = tf[p].A * local_rots[j];
        // accumulate t - x instead of t so the identity pose maps each joint
        // to its rest position bitwise exactly
        const Vec3 o_par = tf[p].t - joints_rest.row(p).transpose();
        tf[j].t = joints_rest.row(j).transpose() + o_par + (tf[p].A * offset - offset);
    }
    return tf;
}

inline Points3 skin(const BodyModel& model, const Points3& vertices_rest,
                    const Points3& joints_rest, const std::vector<JointTransform>& tf) {
    const int V = model.num_vertices();
    const int J = model.num_joints();
    if (vertices_rest.rows() != V || (int)tf.size() != J)
        throw DimensionMismatch("skin: dimension mismatch");
    Points3 out = Points3::Zero(V, 3);
    for (int i = 0; i < V; ++i) {
        const Vec3 v = vertices_rest.row(i).transpose();
        // delta form (valid because skin weight rows sum to 1): the identity
        // pose contributes exactly zero per joint, keeping the rest pose a
        // bitwise fixed point
        Vec3 acc = v;
        for (int j = 0; j < J; ++j) {
            const Scalar w = model.skin_weights(i, j);
            if (w == 0.0) continue;
            const Vec3 r = v - joints_rest.row(j).transpose();
            acc += w * ((tf[j].A * r - r) + (tf[j].t - joints_rest.row(j).transpose()));
        }
        out.row(i) = acc.transpose();
    }
    return out;
}

inline PosedResult pose_model(const BodyModel& model, const Parameters& params) {
    PosedResult res;
    const Points3 shaped = shape_mesh(model, params.beta, params.psi);
    res.joints_rest = regress_joints(model, shaped);
    res.local_rotations.resize(model.num_joints());
    for (int j = 0; j < model.num_joints(); ++j)
        res.local_rotations[j] = local_rotation(model, params, j);
    res.world_transforms = forward_kinematics(model, res.joints_rest, res.local_rotations);
    res.vertices = skin(model, shaped, res.joints_rest, res.world_transforms);
    res.joints_posed.resize(model.num_joints(), 3);
    for (int j = 0; j < model.num_joints(); ++j)
        res.joints_posed.row(j) = res.world_transforms[j].t.transpose();
    return res;
}

// Relative rotation of a joint given its absolute (global) rotation and the
// accumulated world rotation of its kinematic ancestors.
inline Mat3 global_to_relative(const Mat3& theta_global, const Mat3& ancestor_world) {
    if (!is_rotation(theta_global) || !is_rotation(ancestor_world))
        throw InvalidRotation("global_to_relative: inputs must be rotations");
    return ancestor_world.transpose() * theta_global;
}

// ---------------------------------------------------------------------------
// Analytic Jacobian of the posed mesh and joints w.r.t. the flat parameter
// vector [beta; psi; pose rows row-major]. Forward-mode propagation through
// shaping, joint regression, FK and skinning.
// ---------------------------------------------------------------------------

inline int param_vector_size(const BodyModel& model) {
    return model.num_shape() + model.num_expr() + model.num_joints() * 6;
}

inline VecX params_to_vector(const BodyModel& model, const Parameters& p) {
    VecX v(param_vector_size(model));
    v.head(model.num_shape()) = p.beta;
    v.segment(model.num_shape(), model.num_expr()) = p.psi;
    const int base = model.num_shape() + model.num_expr();
    for (int j = 0; j < model.num_joints(); ++j)
        v.segment(base + 6 * j, 6) = p.pose.row(j).transpose();
    return v;
}

inline Parameters params_from_vector(const BodyModel& model, const VecX& v) {
    if (v.size() != param_vector_size(model))
        throw DimensionMismatch("params_from_vector: wrong length");
    Parameters p;
    p.beta = v.head(model.num_shape());
    p.psi = v.segment(model.num_shape(), model.num_expr());
    p.pose.resize(model.num_joints(), 6);
    const int base = model.num_shape() + model.num_expr();
    for (int j = 0; j < model.num_joints(); ++j)
        p.pose.row(j) = v.segment(base + 6 * j, 6).transpose();
    return p;
}

struct PoseJacobian {
    MatX d_vertices;  // 3V x P, vertex i coordinate c at row 3i+c
    MatX d_joints;    // 3J x P, posed joints
};

inline PoseJacobian pose_jacobian(const BodyModel& model, const Parameters& params,
                                  const PosedResult& posed) {
    const int V = model.num_vertices();
    const int J = model.num_joints();
    const int nb = model.num_shape();
    const int np = model.num_expr();
    const int P = param_vector_size(model);
    const int pose_base = nb + np;

    PoseJacobian jac;
    jac.d_vertices = MatX::Zero(3 * V, P);
    jac.d_joints = MatX::Zero(3 * J, P);

    const Points3 shaped = shape_mesh(model, params.beta, params.psi);
    const Points3& X = posed.joints_rest;
    const auto& tf = posed.world_transforms;

    // descendant-or-self test via ancestor walk (trees are tiny)
    auto is_descendant = [&](int j, int q) {
        for (int k = j; k != -1; k = model.parents[k])
            if (k == q) return true;
        return false;
    };

    // Shape / expression columns: rotations fixed, rest geometry moves.
    for (int p = 0; p < nb + np; ++p) {
        const VecX dflat = (p < nb) ? model.shape_basis.col(p) : model.expr_basis.col(p - nb);
        // rest joints derivative
        MatX dX(J, 3);
        for (int c = 0; c < 3; ++c) {
            VecX comp(V);
            for (int i = 0; i < V; ++i) comp[i] = dflat[3 * i + c];
            dX.col(c) = model.joint_regressor * comp;
        }
        // FK translation derivative (dA == 0 everywhere)
        MatX dT(J, 3);
        dT.row(0) = dX.row(0);
        for (int j = 1; j < J; ++j) {
            const int par = model.parents[j];
            const Vec3 doff = (dX.row(j) - dX.row(par)).transpose();
            dT.row(j) = dT.row(par) + (tf[par].A * doff).transpose();
        }
        for (int j = 0; j < J; ++j)
            jac.d_joints.block<3, 1>(3 * j, p) = dT.row(j).transpose();
        for (int i = 0; i < V; ++i) {
            const Vec3 dv = dflat.segment<3>(3 * i);
            Vec3 acc = Vec3::Zero();
            for (int j = 0; j < J; ++j) {
                const Scalar w = model.skin_weights(i, j);
                if (w == 0.0) continue;
                acc += w * (tf[j].A * (dv - dX.row(j).transpose()) + dT.row(j).transpose());
            }
            jac.d_vertices.block<3, 1>(3 * i, p) = acc;
        }
    }

    // Pose columns: rest geometry fixed, one local rotation perturbed.
    for (int q = 0; q < J; ++q) {
        const int n_comp = (q == model.jaw_joint) ? 3 : 6;
        std::array<Mat3, 6> dRq;
        if (q == model.jaw_joint) {
            EulerXYZ e{params.pose(q, 0), params.pose(q, 1), params.pose(q, 2)};
            auto je = euler_to_matrix_jacobian(e);
            dRq[0] = je[0]; dRq[1] = je[1]; dRq[2] = je[2];
        } else {
            dRq = rot6d_to_matrix_jacobian(params.pose.row(q).transpose());
        }
        for (int k = 0; k < n_comp; ++k) {
            const int col = pose_base + 6 * q + k;
            std::vector<Mat3> dA(J, Mat3::Zero());
            std::vector<Vec3> dT(J, Vec3::Zero());
            if (q == 0) {
                dA[0] = dRq[k];
            }
            for (int j = 1; j < J; ++j) {
                if (!is_descendant(j, q)) continue;
                const int par = model.parents[j];
                if (j == q) {
                    dA[j] = tf[par].A * dRq[k];
                    // t does not involve R_q itself
                } else {
                    const Vec3 offset = (X.row(j) - X.row(par)).transpose();
                    dA[j] = dA[par] * posed.local_rotations[j];
                    dT[j] = dT[par] + dA[par] * offset;
                }
            }
            for (int j = 0; j < J; ++j)
                jac.d_joints.block<3, 1>(3 * j, col) = dT[j];
            for (int i = 0; i < V; ++i) {
                Vec3 acc = Vec3::Zero();
                bool touched = false;
                for (int j = 0; j < J; ++j) {
                    const Scalar w = model.skin_weights(i, j);
                    if (w == 0.0 || !is_descendant(j, q)) continue;
                    const Vec3 v = shaped.row(i).transpose();
                    acc += w * (dA[j] * (v - X.row(j).transpose()) + dT[j]);
                    touched = true;
                }
                if (touched) jac.d_vertices.block<3, 1>(3 * i, col) = acc;
            }
        }
    }
    return jac;
}

// ---------------------------------------------------------------------------
// Synthetic model generator: desk-scale stand-in for licensed model assets.
// ---------------------------------------------------------------------------

struct SynthDims {
    int V = 300;
    int J = 12;
    int n_beta = 10;
    int n_psi = 5;
};

namespace detail {

inline Scalar point_segment_distance(const Vec3& p, const Vec3& a, const Vec3& b) {
    const Vec3 ab = b - a;
    const Scalar len2 = ab.squaredNorm();
    if (len2 < 1e-18) return (p - a).norm();
    const Scalar u = std::clamp((p - a).dot(ab) / len2, 0.0, 1.0);
    return (p - (a + u * ab)).norm();
}

}  // namespace detail

// Fixed 12-joint layout: pelvis, spine1, chest, neck, head, jaw,
// shoulders/elbows/wrists left and right. Extra joints beyond 12 become
// finger chains hanging off the wrists.
inline BodyModel synth_model(uint64_t seed, const SynthDims& dims = {}) {
    if (dims.V < dims.J || dims.J < 12 || dims.n_beta < 1 || dims.n_psi < 1)
        throw ConfigInvalid("synth_model: need V >= J >= 12 and positive basis sizes");
    Rng rng(seed);
    const int V = dims.V, J = dims.J;

    BodyModel m;
    m.parents = {-1, 0, 1, 2, 3, 4, 2, 6, 7, 2, 9, 10};
    std::vector<Vec3> jpos = {
        {0.0, 0.0, 0.0},    // 0 pelvis
        {0.0, 0.3, 0.0},    // 1 spine
        {0.0, 0.6, 0.0},    // 2 chest
        {0.0, 0.8, 0.0},    // 3 neck
        {0.0, 0.95, 0.0},   // 4 head
        {0.0, 0.9, 0.08},   // 5 jaw
        {-0.2, 0.6, 0.0},   // 6 l_shoulder
        {-0.5, 0.6, 0.0},   // 7 l_elbow
        {-0.8, 0.6, 0.0},   // 8 l_wrist
        {0.2, 0.6, 0.0},    // 9 r_shoulder
        {0.5, 0.6, 0.0},    // 10 r_elbow
        {0.8, 0.6, 0.0},    // 11 r_wrist
    };
    m.neck_joint = 3;
    m.head_joint = 4;
    m.jaw_joint = 5;
    m.left_wrist = 8;
    m.right_wrist = 11;
    m.left_hand_joints = {8};
    m.right_hand_joints = {11};
    for (int j = 12; j < J; ++j) {
        const bool left = (j % 2 == 0);
        const int wrist = left ? 8 : 11;
        int par = wrist;
        // continue the last finger chain on this side if one exists
        for (int k = 12; k < j; ++k)
            if ((k % 2 == 0) == left) par = k;
        m.parents.push_back(par);
        const Vec3 dir = left ? Vec3(-0.06, 0, 0) : Vec3(0.06, 0, 0);
        jpos.push_back(jpos[par] + dir);
        (left ? m.left_hand_joints : m.right_hand_joints).push_back(j);
    }

    // part allocation
    const int n_face = std::max(68, V * 3 / 10);
    const int n_hand = V / 8;
    const int n_body = V - n_face - 2 * n_hand;
    if (n_body < J) throw ConfigInvalid("synth_model: V too small for part allocation");

    struct PartSpec {
        std::string name;
        std::vector<int> bones;  // joint ids whose (parent, joint) segment hosts vertices
        int count;
    };
    std::vector<int> body_bones = {1, 2, 6, 7, 9, 10};
    std::vector<PartSpec> part_specs = {
        {"body", body_bones, n_body},
        {"face", {4, 5}, n_face},
        {"left_hand", {8}, n_hand},
        {"right_hand", {11}, n_hand},
    };
    for (int j = 12; j < J; ++j) {
        const bool left = (j % 2 == 0);
        part_specs[left ? 2 : 3].bones.push_back(j);
    }

    m.template_verts.resize(V, 3);
    int vi = 0;
    for (auto& spec : part_specs) {
        auto& mask = m.part_masks[spec.name];
        for (int c = 0; c < spec.count; ++c) {
            const int bone = spec.bones[rng.uniform_int(0, (int)spec.bones.size() - 1)];
            const Vec3 a = jpos[m.parents[bone]];
            const Vec3 b = jpos[bone];
            const Scalar u = rng.uniform();
            Vec3 p = a + u * (b - a);
            for (int d = 0; d < 3; ++d) p[d] += rng.gauss(0.0, 0.06);
            m.template_verts.row(vi) = p.transpose();
            mask.push_back(vi);
            ++vi;
        }
    }

    // skin weights: smooth falloff around bone segments, top-4, normalized
    m.skin_weights = MatX::Zero(V, J);
    const Scalar sigma_w = 0.12;
    for (int i = 0; i < V; ++i) {
        const Vec3 p = m.template_verts.row(i).transpose();
        VecX w(J);
        for (int j = 0; j < J; ++j) {
            const Vec3 a = (j == 0) ? jpos[0] : jpos[m.parents[j]];
            const Scalar d = detail::point_segment_distance(p, a, jpos[j]);
            w[j] = std::exp(-d * d / (2 * sigma_w * sigma_w));
        }
        std::vector<int> order(J);
        std::iota(order.begin(), order.end(), 0);
        std::partial_sort(order.begin(), order.begin() + 4, order.end(),
                          [&](int a, int b) { return w[a] > w[b]; });
        Scalar sum = 0;
        for (int k = 0; k < 4; ++k) sum += w[order[k]];
        for (int k = 0; k < 4; ++k) m.skin_weights(i, order[k]) = w[order[k]] / sum;
        // renormalize exactly
        m.skin_weights.row(i) /= m.skin_weights.row(i).sum();
    }

    // joint regressor: softmax over the 8 nearest vertices per joint
    m.joint_regressor = MatX::Zero(J, V);
    const Scalar sigma_r = 0.08;
    for (int j = 0; j < J; ++j) {
        VecX w(V);
        for (int i = 0; i < V; ++i) {
            const Scalar d = (m.template_verts.row(i).transpose() - jpos[j]).norm();
            w[i] = std::exp(-d * d / (2 * sigma_r * sigma_r));
        }
        std::vector<int> order(V);
        std::iota(order.begin(), order.end(), 0);
        std::partial_sort(order.begin(), order.begin() + 8, order.end(),
                          [&](int a, int b) { return w[a] > w[b]; });
        Scalar sum = 0;
        for (int k = 0; k < 8; ++k) sum += w[order[k]];
        for (int k = 0; k < 8; ++k) m.joint_regressor(j, order[k]) = w[order[k]] / sum;
        m.joint_regressor.row(j) /= m.joint_regressor.row(j).sum();
    }

    // eval regressor: 14 probe sites spread over the skeleton
    m.eval_regressor = MatX::Zero(14, V);
    for (int r = 0; r < 14; ++r) {
        const Vec3 site = jpos[r % J] + Vec3(rng.gauss(0, 0.02), rng.gauss(0, 0.02), rng.gauss(0, 0.02));
        VecX w(V);
        for (int i = 0; i < V; ++i) {
            const Scalar d = (m.template_verts.row(i).transpose() - site).norm();
            w[i] = std::exp(-d * d / (2 * sigma_r * sigma_r));
        }
        std::vector<int> order(V);
        std::iota(order.begin(), order.end(), 0);
        std::partial_sort(order.begin(), order.begin() + 8, order.end(),
                          [&](int a, int b) { return w[a] > w[b]; });
        Scalar sum = 0;
        for (int k = 0; k < 8; ++k) sum += w[order[k]];
        for (int k = 0; k < 8; ++k) m.eval_regressor(r, order[k]) = w[order[k]] / sum;
        m.eval_regressor.row(r) /= m.eval_regressor.row(r).sum();
    }

    // shape basis: smooth sinusoidal modes over the whole body
    m.shape_basis = MatX::Zero(3 * V, dims.n_beta);
    for (int k = 0; k < dims.n_beta; ++k) {
        Vec3 amp, freq;
        for (int d = 0; d < 3; ++d) { amp[d] = rng.gauss(0, 0.06); freq[d] = rng.gauss(0, 2.0); }
        const Scalar phase = rng.uniform(0, 2 * M_PI);
        for (int i = 0; i < V; ++i) {
            const Vec3 p = m.template_verts.row(i).transpose();
            const Scalar s = std::sin(freq.dot(p) + phase);
            for (int c = 0; c < 3; ++c) m.shape_basis(3 * i + c, k) = amp[c] * s;
        }
    }

    // expression basis: supported on the face only
    m.expr_basis = MatX::Zero(3 * V, dims.n_psi);
    const auto& face_mask = m.part_masks["face"];
    for (int k = 0; k < dims.n_psi; ++k) {
        Vec3 amp, freq;
        for (int d = 0; d < 3; ++d) { amp[d] = rng.gauss(0, 0.02); freq[d] = rng.gauss(0, 4.0); }
        const Scalar phase = rng.uniform(0, 2 * M_PI);
        for (int i : face_mask) {
            const Vec3 p = m.template_verts.row(i).transpose();
            const Scalar s = std::sin(freq.dot(p) + phase);
            for (int c = 0; c < 3; ++c) m.expr_basis(3 * i + c, k) = amp[c] * s;
        }
    }

    // 68 landmarks on the face (deterministic spread over the face mask)
    for (int k = 0; k < 68; ++k)
        m.landmark_indices.push_back(face_mask[(k * (int)face_mask.size()) / 68]);
    for (int k = 0; k + 1 < 16; k += 2) m.closure_pairs.emplace_back(k, k + 1);

    // crude triangulation: each vertex with its two nearest neighbors
    std::vector<std::array<int, 3>> tris;
    for (int i = 0; i < V; ++i) {
        int n1 = -1, n2 = -1;
        Scalar d1 = 1e300, d2 = 1e300;
        for (int j = 0; j < V; ++j) {
            if (j == i) continue;
            const Scalar d = (m.template_verts.row(i) - m.template_verts.row(j)).squaredNorm();
            if (d < d1) { d2 = d1; n2 = n1; d1 = d; n1 = j; }
            else if (d < d2) { d2 = d; n2 = j; }
        }
        std::array<int, 3> t = {i, n1, n2};
        std::sort(t.begin(), t.end());
        if (t[0] != t[1] && t[1] != t[2]) tris.push_back(t);
    }
    std::sort(tris.begin(), tris.end());
    tris.erase(std::unique(tris.begin(), tris.end()), tris.end());
    m.faces.resize((Eigen::Index)tris.size(), 3);
    for (size_t i = 0; i < tris.size(); ++i)
        m.faces.row((Eigen::Index)i) << tris[i][0], tris[i][1], tris[i][2];

    m.validate();
    return m;
}

}  // namespace bodyfit

#pragma once

#include <algorithm>
#include <cstdlib>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/SVD>

#include "bodyfit/types.hpp"

namespace bodyfit {

// BODYFIT_THREADS caps parallel workers; results use a fixed reduction order
// so aggregation is deterministic regardless of thread count.
inline int worker_count() {
    if (const char* env = std::getenv("BODYFIT_THREADS")) {
        const int n = std::atoi(env);
        if (n >= 1) return n;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : (int)hw;
}

template <class Fn>
inline void parallel_for(int n, Fn&& fn) {
    const int workers = std::min(worker_count(), std::max(1, n));
    if (workers == 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
            for (int i = w; i < n; i += workers) fn(i);
        });
    for (auto& t : pool) t.join();
}

// ---------------------------------------------------------------------------
// Alignment
// ---------------------------------------------------------------------------

struct Alignment {
    enum class Kind { PA, TR };
    Kind kind = Kind::TR;
    Scalar s = 1.0;
    Mat3 R = Mat3::Identity();
    Vec3 t = Vec3::Zero();

    Points3 apply(const Points3& pts) const {
        Points3 out(pts.rows(), 3);
        for (Eigen::Index i = 0; i < pts.rows(); ++i)
            out.row(i) = (s * (R * pts.row(i).transpose()) + t).transpose();
        return out;
    }

    static Alignment identity() { return {}; }
};

// Similarity transform minimizing |s R src + t - tgt|^2 (Umeyama, with the
// determinant sign fix so R is always a proper rotation).
inline Alignment procrustes_align(const Points3& source, const Points3& target) {
    const Eigen::Index n = source.rows();
    if (n != target.rows()) throw DimensionMismatch("procrustes_align: point count mismatch");
    if (n < 3) throw DegenerateInput("procrustes_align: need at least 3 points");
    const Vec3 mu_s = source.colwise().mean().transpose();
    const Vec3 mu_t = target.colwise().mean().transpose();
    Mat3 cov = Mat3::Zero();
    Scalar var_s = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const Vec3 ds = source.row(i).transpose() - mu_s;
        const Vec3 dt = target.row(i).transpose() - mu_t;
        cov += dt * ds.transpose();
        var_s += ds.squaredNorm();
    }
    cov /= (Scalar)n;
    var_s /= (Scalar)n;
    if (var_s < 1e-18)
        throw DegenerateInput("procrustes_align: degenerate source configuration");
    Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Vec3 d = Vec3::Ones();
    if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0) d[2] = -1;
    Alignment a;
    a.kind = Alignment::Kind::PA;
    a.R = svd.matrixU() * d.asDiagonal() * svd.matrixV().transpose();
    a.s = svd.singularValues().dot(d) / var_s;
    if (!(a.s > 0)) throw DegenerateInput("procrustes_align: non-positive scale");
    a.t = mu_t - a.s * (a.R * mu_s);
    return a;
}

inline Alignment translation_align(const Points3& source, const Points3& target) {
    if (source.rows() != target.rows() || source.rows() < 1)
        throw DimensionMismatch("translation_align: point count mismatch");
    Alignment a;
    a.kind = Alignment::Kind::TR;
    a.t = (target.colwise().mean() - source.colwise().mean()).transpose();
    return a;
}

// ---------------------------------------------------------------------------
// Point metrics
// ---------------------------------------------------------------------------

inline Scalar mpjpe(const Points3& pred, const Points3& gt, const Alignment& align) {
    if (pred.rows() != gt.rows()) throw DimensionMismatch("mpjpe: joint count mismatch");
    const Points3 p = align.apply(pred);
    Scalar sum = 0;
    for (Eigen::Index i = 0; i < p.rows(); ++i)
        sum += (p.row(i) - gt.row(i)).norm();
    return sum / (Scalar)p.rows();
}

inline Points3 regress_eval_joints(const Points3& vertices, const MatX& regressor) {
    if (regressor.cols() != vertices.rows())
        throw DimensionMismatch("regress_eval_joints: regressor/vertex mismatch");
    return regressor * vertices;
}

// mean per-vertex error; an optional mask restricts both the alignment (when
// realign is requested) and the measurement to a vertex subset
inline Scalar v2v(const Points3& pred, const Points3& gt, const Alignment& align,
                  const std::vector<int>* mask = nullptr) {
    if (pred.rows() != gt.rows()) throw DimensionMismatch("v2v: topology mismatch");
    const Points3 p = align.apply(pred);
    Scalar sum = 0;
    Eigen::Index count = 0;
    if (mask) {
        for (int i : *mask) {
            if (i < 0 || i >= pred.rows()) throw DimensionMismatch("v2v: mask index out of range");
            sum += (p.row(i) - gt.row(i)).norm();
            ++count;
        }
    } else {
        for (Eigen::Index i = 0; i < p.rows(); ++i) sum += (p.row(i) - gt.row(i)).norm();
        count = p.rows();
    }
    return count == 0 ? 0.0 : sum / (Scalar)count;
}

inline Points3 select_rows(const Points3& pts, const std::vector<int>& idx) {
    Points3 out((Eigen::Index)idx.size(), 3);
    for (size_t k = 0; k < idx.size(); ++k) out.row((Eigen::Index)k) = pts.row(idx[k]);
    return out;
}

// part-wise variant: recompute the alignment on the masked subset, then measure
inline Scalar v2v_part(const Points3& pred, const Points3& gt, Alignment::Kind kind,
                       const std::vector<int>& mask) {
    const Points3 ps = select_rows(pred, mask);
    const Points3 gs = select_rows(gt, mask);
    const Alignment a = kind == Alignment::Kind::PA ? procrustes_align(ps, gs)
                                                    : translation_align(ps, gs);
    const Points3 pa = a.apply(ps);
    Scalar sum = 0;
    for (Eigen::Index i = 0; i < pa.rows(); ++i) sum += (pa.row(i) - gs.row(i)).norm();
    return sum / (Scalar)pa.rows();
}

// ---------------------------------------------------------------------------
// Point-to-surface distance (exact, with an AABB tree that returns results
// identical to the brute-force scan)
// ---------------------------------------------------------------------------

inline Scalar point_triangle_distance(const Vec3& p, const Vec3& a, const Vec3& b,
                                      const Vec3& c) {
    // Ericson-style closest point on triangle
    const Vec3 ab = b - a, ac = c - a, ap = p - a;
    const Scalar d1 = ab.dot(ap), d2 = ac.dot(ap);
    if (d1 <= 0 && d2 <= 0) return (p - a).norm();
    const Vec3 bp = p - b;
    const Scalar d3 = ab.dot(bp), d4 = ac.dot(bp);
    if (d3 >= 0 && d4 <= d3) return (p - b).norm();
    const Scalar vc = d1 * d4 - d3 * d2;
    if (vc <= 0 && d1 >= 0 && d3 <= 0) {
        const Scalar v = d1 / (d1 - d3);
        return (p - (a + v * ab)).norm();
    }
    const Vec3 cp = p - c;
    const Scalar d5 = ab.dot(cp), d6 = ac.dot(cp);
    if (d6 >= 0 && d5 <= d6) return (p - c).norm();
    const Scalar vb = d5 * d2 - d1 * d6;
    if (vb <= 0 && d2 >= 0 && d6 <= 0) {
        const Scalar w = d2 / (d2 - d6);
        return (p - (a + w * ac)).norm();
    }
    const Scalar va = d3 * d6 - d5 * d4;
    if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) {
        const Scalar w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (p - (b + w * (c - b))).norm();
    }
    const Scalar denom = 1.0 / (va + vb + vc);
    const Scalar v = vb * denom, w = vc * denom;
    return (p - (a + v * ab + w * ac)).norm();
}

class TriangleBvh {
public:
    TriangleBvh(const Points3& vertices, const Triangles& faces)
        : verts_(vertices), faces_(faces) {
        if (faces.rows() == 0) throw DegenerateInput("TriangleBvh: empty mesh");
        std::vector<int> idx(faces.rows());
        for (int i = 0; i < (int)idx.size(); ++i) idx[i] = i;
        root_ = build(idx, 0);
    }

    Scalar distance(const Vec3& p) const {
        Scalar best = std::numeric_limits<Scalar>::infinity();
        query(root_, p, best);
        return best;
    }

private:
    struct Node {
        Vec3 lo, hi;
        int left = -1, right = -1;
        std::vector<int> tris;  // leaf payload
    };

    int build(std::vector<int>& idx, int depth) {
        Node node;
        node.lo = Vec3::Constant(std::numeric_limits<Scalar>::infinity());
        node.hi = -node.lo;
        for (int f : idx)
            for (int k = 0; k < 3; ++k) {
                const Vec3 v = verts_.row(faces_(f, k)).transpose();
                node.lo = node.lo.cwiseMin(v);
                node.hi = node.hi.cwiseMax(v);
            }
        if ((int)idx.size() <= 4 || depth > 32) {
            node.tris = idx;
            nodes_.push_back(std::move(node));
            return (int)nodes_.size() - 1;
        }
        int axis;
        (node.hi - node.lo).maxCoeff(&axis);
        auto centroid = [&](int f) {
            return (verts_.row(faces_(f, 0))[axis] + verts_.row(faces_(f, 1))[axis] +
                    verts_.row(faces_(f, 2))[axis]) / 3.0;
        };
        std::nth_element(idx.begin(), idx.begin() + idx.size() / 2, idx.end(),
                         [&](int a, int b) { return centroid(a) < centroid(b); });
        std::vector<int> left_idx(idx.begin(), idx.begin() + idx.size() / 2);
        std::vector<int> right_idx(idx.begin() + idx.size() / 2, idx.end());
        if (left_idx.empty() || right_idx.empty()) {
            node.tris = idx;
            nodes_.push_back(std::move(node));
            return (int)nodes_.size() - 1;
        }
        const int self = (int)nodes_.size();
        nodes_.push_back(std::move(node));
        const int l = build(left_idx, depth + 1);
        const int r = build(right_idx, depth + 1);
        nodes_[self].left = l;
        nodes_[self].right = r;
        return self;
    }

    Scalar box_distance(const Node& n, const Vec3& p) const {
        const Vec3 d = (n.lo - p).cwiseMax(Vec3::Zero()).cwiseMax(p - n.hi);
        return d.norm();
    }

    void query(int ni, const Vec3& p, Scalar& best) const {
        const Node& n = nodes_[ni];
        if (box_distance(n, p) >= best) return;
        if (n.left < 0) {
            for (int f : n.tris) {
                const Scalar d = point_triangle_distance(
                    p, verts_.row(faces_(f, 0)).transpose(),
                    verts_.row(faces_(f, 1)).transpose(),
                    verts_.row(faces_(f, 2)).transpose());
                best = std::min(best, d);
            }
            return;
        }
        const Scalar dl = box_distance(nodes_[n.left], p);
        const Scalar dr = box_distance(nodes_[n.right], p);
        if (dl <= dr) { query(n.left, p, best); query(n.right, p, best); }
        else { query(n.right, p, best); query(n.left, p, best); }
    }

    Points3 verts_;
    Triangles faces_;
    std::vector<Node> nodes_;
    int root_ = 0;
};

struct P2sResult {
    Scalar mean = 0;
    Scalar median = 0;  // lower median for even counts
};

inline P2sResult p2s(const Points3& gt_points, const Points3& mesh_vertices,
                     const Triangles& mesh_faces, const Alignment& align,
                     bool brute_force = false) {
    if (mesh_faces.rows() == 0) throw DegenerateInput("p2s: empty mesh");
    const Points3 verts = align.apply(mesh_vertices);
    const int n = (int)gt_points.rows();
    std::vector<Scalar> dists((size_t)n);
    if (brute_force) {
        for (int i = 0; i < n; ++i) {
            Scalar best = std::numeric_limits<Scalar>::infinity();
            for (Eigen::Index f = 0; f < mesh_faces.rows(); ++f)
                best = std::min(best, point_triangle_distance(
                    gt_points.row(i).transpose(),
                    verts.row(mesh_faces(f, 0)).transpose(),
                    verts.row(mesh_faces(f, 1)).transpose(),
                    verts.row(mesh_faces(f, 2)).transpose()));
            dists[(size_t)i] = best;
        }
    } else {
        TriangleBvh bvh(verts, mesh_faces);
        parallel_for(n, [&](int i) {
            dists[(size_t)i] = bvh.distance(gt_points.row(i).transpose());
        });
    }
    P2sResult res;
    for (Scalar d : dists) res.mean += d;
    res.mean /= (Scalar)n;
    std::vector<Scalar> sorted = dists;
    std::sort(sorted.begin(), sorted.end());
    res.median = sorted[(size_t)((n - 1) / 2)];
    return res;
}

// harmonic mean of precision (pred points near gt) and recall (gt near pred)
inline Scalar f_score(const Points3& pred, const Points3& gt, Scalar tau) {
    if (!(tau > 0)) throw ConfigInvalid("f_score: tau must be positive");
    if (pred.rows() == 0 || gt.rows() == 0) return 0.0;
    auto frac_within = [&](const Points3& from, const Points3& to) {
        int hits = 0;
        for (Eigen::Index i = 0; i < from.rows(); ++i) {
            Scalar best = std::numeric_limits<Scalar>::infinity();
            for (Eigen::Index j = 0; j < to.rows(); ++j)
                best = std::min(best, (from.row(i) - to.row(j)).norm());
            if (best <= tau) ++hits;
        }
        return (Scalar)hits / (Scalar)from.rows();
    };
    const Scalar precision = frac_within(pred, gt);
    const Scalar recall = frac_within(gt, pred);
    if (precision + recall == 0.0) return 0.0;
    return 2 * precision * recall / (precision + recall);
}

// ---------------------------------------------------------------------------
// Full report
// ---------------------------------------------------------------------------

struct EvalReport {
    std::map<std::string, Scalar> values;  // "pa_v2v_all", "tr_v2v_body", ...

    Scalar at(const std::string& key) const {
        auto it = values.find(key);
        if (it == values.end()) throw Error("EvalReport: no metric '" + key + "'");
        return it->second;
    }
};

struct EvalInputs {
    Points3 pred_vertices;
    Triangles pred_faces;
    Points3 pred_joints;
    Points3 gt_vertices;
    Points3 gt_joints;
    std::map<std::string, std::vector<int>> part_masks;  // body/face/left_hand/right_hand
    std::vector<Scalar> f_taus = {0.005, 0.01};  // model units
};

inline EvalReport evaluate(const EvalInputs& in) {
    if (in.pred_vertices.rows() != in.gt_vertices.rows())
        throw DimensionMismatch("evaluate: vertex topology mismatch");
    EvalReport rep;
    const Alignment pa = procrustes_align(in.pred_vertices, in.gt_vertices);
    const Alignment tr = translation_align(in.pred_vertices, in.gt_vertices);
    rep.values["pa_v2v_all"] = v2v(in.pred_vertices, in.gt_vertices, pa);
    rep.values["tr_v2v_all"] = v2v(in.pred_vertices, in.gt_vertices, tr);
    static const std::map<std::string, std::string> part_keys = {
        {"body", "body"}, {"face", "face"}, {"left_hand", "lhand"}, {"right_hand", "rhand"}};
    for (const auto& [mask_name, key] : part_keys) {
        auto it = in.part_masks.find(mask_name);
        if (it == in.part_masks.end() || it->second.size() < 3) continue;
        rep.values["pa_v2v_" + key] =
            v2v_part(in.pred_vertices, in.gt_vertices, Alignment::Kind::PA, it->second);
        rep.values["tr_v2v_" + key] =
            v2v_part(in.pred_vertices, in.gt_vertices, Alignment::Kind::TR, it->second);
    }
    if (in.pred_joints.rows() > 0 && in.pred_joints.rows() == in.gt_joints.rows()) {
        const Alignment paj = procrustes_align(in.pred_joints, in.gt_joints);
        rep.values["pa_mpjpe"] = mpjpe(in.pred_joints, in.gt_joints, paj);
        rep.values["tr_mpjpe"] =
            mpjpe(in.pred_joints, in.gt_joints, translation_align(in.pred_joints, in.gt_joints));
    }
    if (in.pred_faces.rows() > 0) {
        const P2sResult ps = p2s(in.gt_vertices, in.pred_vertices, in.pred_faces, pa);
        rep.values["pa_p2s_mean"] = ps.mean;
        rep.values["pa_p2s_median"] = ps.median;
    }
    const Points3 pred_pa = pa.apply(in.pred_vertices);
    for (Scalar tau : in.f_taus) {
        char key[64];
        std::snprintf(key, sizeof(key), "pa_f@%g", tau);
        rep.values[key] = f_score(pred_pa, in.gt_vertices, tau);
    }
    return rep;
}

}  // namespace bodyfit

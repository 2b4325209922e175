#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bodyfit/body_model.hpp"
#include "bodyfit/camera.hpp"
#include "bodyfit/fitter.hpp"
#include "bodyfit/losses.hpp"
#include "bodyfit/metrics.hpp"
#include "bodyfit/moderator.hpp"
#include "bodyfit/types.hpp"

namespace bodyfit {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Wavefront OBJ (subset: v, f with 1-based indices, # comments)
// ---------------------------------------------------------------------------

struct ObjMesh {
    Points3 vertices;
    Triangles faces;
};

inline ObjMesh read_obj(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("read_obj: cannot open " + path);
    std::vector<Vec3> verts;
    std::vector<std::array<int, 3>> faces;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream ss(line);
        std::string tag;
        if (!(ss >> tag) || tag[0] == '#') continue;
        if (tag == "v") {
            Vec3 v;
            if (!(ss >> v.x() >> v.y() >> v.z()))
                throw ParseError("read_obj: bad vertex at line " + std::to_string(line_no));
            verts.push_back(v);
        } else if (tag == "f") {
            std::array<int, 3> f;
            for (int k = 0; k < 3; ++k) {
                std::string tok;
                if (!(ss >> tok))
                    throw ParseError("read_obj: bad face at line " + std::to_string(line_no));
                // ignore /vt/vn suffixes
                const int idx = std::atoi(tok.substr(0, tok.find('/')).c_str());
                if (idx < 1)
                    throw ParseError("read_obj: face indices are 1-based, line " +
                                     std::to_string(line_no));
                f[k] = idx - 1;
            }
            faces.push_back(f);
        }
        // vn/vt/other tags ignored
    }
    ObjMesh mesh;
    mesh.vertices.resize((Eigen::Index)verts.size(), 3);
    for (size_t i = 0; i < verts.size(); ++i)
        mesh.vertices.row((Eigen::Index)i) = verts[i].transpose();
    mesh.faces.resize((Eigen::Index)faces.size(), 3);
    for (size_t i = 0; i < faces.size(); ++i) {
        for (int k = 0; k < 3; ++k) {
            if (faces[i][k] >= (int)verts.size())
                throw ParseError("read_obj: face index out of range");
            mesh.faces((Eigen::Index)i, k) = faces[i][k];
        }
    }
    return mesh;
}

inline void write_obj(const ObjMesh& mesh, const std::string& path) {
    for (Eigen::Index f = 0; f < mesh.faces.rows(); ++f) {
        const int a = mesh.faces(f, 0), b = mesh.faces(f, 1), c = mesh.faces(f, 2);
        if (a == b || b == c || a == c)
            throw Error("write_obj: degenerate face with duplicate indices");
        if (a < 0 || b < 0 || c < 0 || a >= mesh.vertices.rows() ||
            b >= mesh.vertices.rows() || c >= mesh.vertices.rows())
            throw Error("write_obj: face index out of range");
    }
    std::ofstream out(path);
    if (!out) throw IoError("write_obj: cannot open " + path);
    out.precision(9);
    for (Eigen::Index i = 0; i < mesh.vertices.rows(); ++i)
        out << "v " << mesh.vertices(i, 0) << " " << mesh.vertices(i, 1) << " "
            << mesh.vertices(i, 2) << "\n";
    for (Eigen::Index f = 0; f < mesh.faces.rows(); ++f)
        out << "f " << mesh.faces(f, 0) + 1 << " " << mesh.faces(f, 1) + 1 << " "
            << mesh.faces(f, 2) + 1 << "\n";
    if (!out) throw IoError("write_obj: write failed for " + path);
}

// ---------------------------------------------------------------------------
// JSON tensor helpers
// ---------------------------------------------------------------------------

inline json matrix_to_json(const MatX& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline MatX matrix_from_json(const json& j) {
    const Eigen::Index rows = (Eigen::Index)j.size();
    const Eigen::Index cols = rows == 0 ? 0 : (Eigen::Index)j[0].size();
    MatX m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        if ((Eigen::Index)j[i].size() != cols)
            throw ParseError("matrix_from_json: ragged rows");
        for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = j[i][c].get<Scalar>();
    }
    return m;
}

inline json vector_to_json(const VecX& v) {
    json arr = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
    return arr;
}

inline VecX vector_from_json(const json& j) {
    VecX v((Eigen::Index)j.size());
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = j[i].get<Scalar>();
    return v;
}

inline void require_schema(const json& j, const std::string& expected) {
    if (!j.contains("schema") || j["schema"] != expected)
        throw ParseError("expected schema '" + expected + "'");
}

inline json load_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ParseError(path + ": " + e.what());
    }
    return j;
}

inline void save_json(const json& j, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path);
    out << j.dump(1) << "\n";
    if (!out) throw IoError("write failed for " + path);
}

// ---------------------------------------------------------------------------
// BodyModel <-> JSON (schema "bodyfit-model/1")
// ---------------------------------------------------------------------------

inline json model_to_json(const BodyModel& m) {
    json j;
    j["schema"] = "bodyfit-model/1";
    j["template"] = matrix_to_json(m.template_verts);
    j["shape_basis"] = matrix_to_json(m.shape_basis);
    j["expr_basis"] = matrix_to_json(m.expr_basis);
    j["joint_regressor"] = matrix_to_json(m.joint_regressor);
    j["skin_weights"] = matrix_to_json(m.skin_weights);
    j["eval_regressor"] = matrix_to_json(m.eval_regressor);
    j["parents"] = m.parents;
    json faces = json::array();
    for (Eigen::Index f = 0; f < m.faces.rows(); ++f)
        faces.push_back({m.faces(f, 0), m.faces(f, 1), m.faces(f, 2)});
    j["faces"] = std::move(faces);
    json masks;
    for (const auto& [name, mask] : m.part_masks) masks[name] = mask;
    j["part_masks"] = std::move(masks);
    j["landmark_indices"] = m.landmark_indices;
    json pairs = json::array();
    for (auto [a, b] : m.closure_pairs) pairs.push_back({a, b});
    j["closure_pairs"] = std::move(pairs);
    j["joints"] = {{"head", m.head_joint}, {"jaw", m.jaw_joint}, {"neck", m.neck_joint},
                   {"left_wrist", m.left_wrist}, {"right_wrist", m.right_wrist}};
    j["left_hand_joints"] = m.left_hand_joints;
    j["right_hand_joints"] = m.right_hand_joints;
    return j;
}

inline BodyModel model_from_json(const json& j) {
    require_schema(j, "bodyfit-model/1");
    BodyModel m;
    m.template_verts = matrix_from_json(j.at("template"));
    m.shape_basis = matrix_from_json(j.at("shape_basis"));
    m.expr_basis = matrix_from_json(j.at("expr_basis"));
    m.joint_regressor = matrix_from_json(j.at("joint_regressor"));
    m.skin_weights = matrix_from_json(j.at("skin_weights"));
    m.eval_regressor = matrix_from_json(j.at("eval_regressor"));
    m.parents = j.at("parents").get<std::vector<int>>();
    const auto& faces = j.at("faces");
    m.faces.resize((Eigen::Index)faces.size(), 3);
    for (Eigen::Index f = 0; f < (Eigen::Index)faces.size(); ++f)
        for (int k = 0; k < 3; ++k) m.faces(f, k) = faces[f][k].get<int>();
    for (const auto& [name, mask] : j.at("part_masks").items())
        m.part_masks[name] = mask.get<std::vector<int>>();
    m.landmark_indices = j.at("landmark_indices").get<std::vector<int>>();
    for (const auto& p : j.at("closure_pairs"))
        m.closure_pairs.emplace_back(p[0].get<int>(), p[1].get<int>());
    const auto& joints = j.at("joints");
    m.head_joint = joints.at("head").get<int>();
    m.jaw_joint = joints.at("jaw").get<int>();
    m.neck_joint = joints.at("neck").get<int>();
    m.left_wrist = joints.at("left_wrist").get<int>();
    m.right_wrist = joints.at("right_wrist").get<int>();
    m.left_hand_joints = j.at("left_hand_joints").get<std::vector<int>>();
    m.right_hand_joints = j.at("right_hand_joints").get<std::vector<int>>();
    m.validate();
    return m;
}

// ---------------------------------------------------------------------------
// Parameters <-> JSON ("bodyfit-params/1")
// ---------------------------------------------------------------------------

inline json params_to_json(const Parameters& p) {
    json j;
    j["schema"] = "bodyfit-params/1";
    j["beta"] = vector_to_json(p.beta);
    j["psi"] = vector_to_json(p.psi);
    j["pose"] = matrix_to_json(p.pose);
    return j;
}

inline Parameters params_from_json(const json& j) {
    require_schema(j, "bodyfit-params/1");
    Parameters p;
    p.beta = vector_from_json(j.at("beta"));
    p.psi = vector_from_json(j.at("psi"));
    p.pose = matrix_from_json(j.at("pose"));
    return p;
}

// ---------------------------------------------------------------------------
// GenderPrior <-> JSON ("bodyfit-prior/1")
// ---------------------------------------------------------------------------

inline json prior_to_json(const GenderPrior& p) {
    json j;
    j["schema"] = "bodyfit-prior/1";
    json classes;
    for (const auto& [label, g] : p.classes) {
        classes[label] = {{"mu", vector_to_json(g.mu)},
                          {"cov", matrix_to_json(g.cov)},
                          {"precision", matrix_to_json(g.precision)}};
    }
    j["classes"] = std::move(classes);
    return j;
}

inline GenderPrior prior_from_json(const json& j) {
    require_schema(j, "bodyfit-prior/1");
    GenderPrior p;
    for (const auto& [label, g] : j.at("classes").items()) {
        GaussianPrior gp;
        gp.mu = vector_from_json(g.at("mu"));
        gp.cov = matrix_from_json(g.at("cov"));
        gp.precision = matrix_from_json(g.at("precision"));
        p.classes[label] = std::move(gp);
    }
    return p;
}

// ---------------------------------------------------------------------------
// ModeratorState <-> JSON ("bodyfit-moderator/1")
// ---------------------------------------------------------------------------

inline json moderator_to_json(const ModeratorState& s) {
    json j;
    j["schema"] = "bodyfit-moderator/1";
    j["extractor_w"] = matrix_to_json(s.extractor_w);
    j["extractor_b"] = vector_to_json(s.extractor_b);
    j["mlp_w1"] = matrix_to_json(s.mlp_w1);
    j["mlp_b1"] = vector_to_json(s.mlp_b1);
    j["mlp_w2"] = vector_to_json(s.mlp_w2);
    j["mlp_b2"] = s.mlp_b2;
    j["temperature"] = s.temperature;
    return j;
}

inline ModeratorState moderator_from_json(const json& j) {
    require_schema(j, "bodyfit-moderator/1");
    ModeratorState s;
    s.extractor_w = matrix_from_json(j.at("extractor_w"));
    s.extractor_b = vector_from_json(j.at("extractor_b"));
    s.mlp_w1 = matrix_from_json(j.at("mlp_w1"));
    s.mlp_b1 = vector_from_json(j.at("mlp_b1"));
    s.mlp_w2 = vector_from_json(j.at("mlp_w2"));
    s.mlp_b2 = j.at("mlp_b2").get<Scalar>();
    s.temperature = j.at("temperature").get<Scalar>();
    return s;
}

// ---------------------------------------------------------------------------
// Keypoints <-> JSON ("bodyfit-keypoints/1")
// ---------------------------------------------------------------------------

inline json keypoints_to_json(const FitObservations& o) {
    json j;
    j["schema"] = "bodyfit-keypoints/1";
    if (o.has_body_2d) {
        j["body_2d"] = {{"points", matrix_to_json(o.body_2d)},
                        {"visibility", std::vector<int>(o.body_visibility.begin(),
                                                        o.body_visibility.end())}};
    }
    if (o.has_body_3d) j["body_3d"] = matrix_to_json(o.body_3d);
    auto hand_json = [](const HandObservation& h) {
        return json{{"points", matrix_to_json(h.points)},
                    {"visibility", std::vector<int>(h.visibility.begin(), h.visibility.end())}};
    };
    if (o.has_left_hand) j["left_hand"] = hand_json(o.left_hand);
    if (o.has_right_hand) j["right_hand"] = hand_json(o.right_hand);
    if (o.has_landmarks)
        j["landmarks"] = {{"points", matrix_to_json(o.landmarks.points)},
                          {"visibility", std::vector<int>(o.landmarks.visibility.begin(),
                                                          o.landmarks.visibility.end())}};
    if (!o.gender.empty()) j["gender"] = o.gender;
    return j;
}

inline FitObservations keypoints_from_json(const json& j) {
    require_schema(j, "bodyfit-keypoints/1");
    FitObservations o;
    auto read_vis = [](const json& v) {
        std::vector<bool> out;
        for (const auto& e : v) out.push_back(e.get<int>() != 0);
        return out;
    };
    if (j.contains("body_2d")) {
        o.has_body_2d = true;
        o.body_2d = matrix_from_json(j["body_2d"].at("points"));
        o.body_visibility = read_vis(j["body_2d"].at("visibility"));
        if ((size_t)o.body_2d.rows() != o.body_visibility.size())
            throw ParseError("keypoints: body visibility count mismatch");
    }
    if (j.contains("body_3d")) {
        o.has_body_3d = true;
        o.body_3d = matrix_from_json(j["body_3d"]);
    }
    auto read_hand = [&](const json& h) {
        HandObservation out;
        out.points = matrix_from_json(h.at("points"));
        out.visibility = read_vis(h.at("visibility"));
        if ((size_t)out.points.rows() != out.visibility.size())
            throw ParseError("keypoints: hand visibility count mismatch");
        return out;
    };
    if (j.contains("left_hand")) { o.has_left_hand = true; o.left_hand = read_hand(j["left_hand"]); }
    if (j.contains("right_hand")) { o.has_right_hand = true; o.right_hand = read_hand(j["right_hand"]); }
    if (j.contains("landmarks")) {
        o.has_landmarks = true;
        o.landmarks.points = matrix_from_json(j["landmarks"].at("points"));
        o.landmarks.visibility = read_vis(j["landmarks"].at("visibility"));
        if (o.landmarks.points.rows() != 68)
            throw ParseError("keypoints: landmark set must have 68 entries");
    }
    if (j.contains("gender")) o.gender = j["gender"].get<std::string>();
    return o;
}

// ---------------------------------------------------------------------------
// FitResult <-> JSON ("bodyfit-fit/1")
// ---------------------------------------------------------------------------

inline json camera_to_json(const WeakPerspectiveCamera& c) {
    return {{"s", c.s}, {"t", {c.t.x(), c.t.y()}}};
}

inline WeakPerspectiveCamera camera_from_json(const json& j) {
    return {j.at("s").get<Scalar>(), {j.at("t")[0].get<Scalar>(), j.at("t")[1].get<Scalar>()}};
}

inline json fit_result_to_json(const FitResult& r) {
    json j;
    j["schema"] = "bodyfit-fit/1";
    j["params"] = params_to_json(r.params);
    j["cameras"] = {{"body", camera_to_json(r.cameras.body)},
                    {"face", camera_to_json(r.cameras.face)},
                    {"hand", camera_to_json(r.cameras.hand)}};
    j["loss_trace"] = r.loss_trace;
    json breakdown;
    for (const auto& [name, val] : r.final_breakdown.terms) breakdown[name] = val;
    j["final_breakdown"] = std::move(breakdown);
    j["final_total"] = r.final_breakdown.total;
    j["converged"] = r.converged;
    return j;
}

inline FitResult fit_result_from_json(const json& j) {
    require_schema(j, "bodyfit-fit/1");
    FitResult r;
    r.params = params_from_json(j.at("params"));
    r.cameras.body = camera_from_json(j.at("cameras").at("body"));
    r.cameras.face = camera_from_json(j.at("cameras").at("face"));
    r.cameras.hand = camera_from_json(j.at("cameras").at("hand"));
    r.loss_trace = j.at("loss_trace").get<std::vector<Scalar>>();
    for (const auto& [name, val] : j.at("final_breakdown").items())
        r.final_breakdown.terms[name] = val.get<Scalar>();
    r.final_breakdown.total = j.at("final_total").get<Scalar>();
    r.converged = j.at("converged").get<bool>();
    return r;
}

// ---------------------------------------------------------------------------
// CSV reports
// ---------------------------------------------------------------------------

inline void write_eval_csv(const EvalReport& rep, const std::string& path,
                           Scalar unit_to_mm = 1.0) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path);
    out.precision(9);
    bool first = true;
    for (const auto& [name, _] : rep.values) {
        out << (first ? "" : ",") << name;
        first = false;
    }
    out << "\n";
    first = true;
    for (const auto& [name, value] : rep.values) {
        // F-scores are ratios; distance metrics convert to mm
        const bool ratio = name.find("f@") != std::string::npos;
        out << (first ? "" : ",") << (ratio ? value : value * unit_to_mm);
        first = false;
    }
    out << "\n";
}

inline void write_calibration_csv(const std::vector<CalibrationRow>& rows,
                                  const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path);
    out.precision(9);
    out << "noise_level,mean_w,count\n";
    for (const auto& r : rows)
        out << r.noise_level << "," << r.mean_w << "," << r.count << "\n";
}

// ---------------------------------------------------------------------------
// Raw tensor container for image-like inputs: "BFT1", int32 ndim, int32 dims,
// float64 data, little-endian.
// ---------------------------------------------------------------------------

inline void write_tensor(const VecX& data, const std::vector<int32_t>& dims,
                         const std::string& path) {
    int64_t total = 1;
    for (int32_t d : dims) total *= d;
    if (total != data.size()) throw DimensionMismatch("write_tensor: dims do not match data");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path);
    out.write("BFT1", 4);
    const int32_t nd = (int32_t)dims.size();
    out.write(reinterpret_cast<const char*>(&nd), 4);
    out.write(reinterpret_cast<const char*>(dims.data()), 4 * nd);
    out.write(reinterpret_cast<const char*>(data.data()), 8 * data.size());
    if (!out) throw IoError("write failed for " + path);
}

inline VecX read_tensor(const std::string& path, std::vector<int32_t>& dims) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::string(magic, 4) != "BFT1") throw ParseError("read_tensor: bad magic");
    int32_t nd = 0;
    in.read(reinterpret_cast<char*>(&nd), 4);
    if (!in || nd < 1 || nd > 8) throw ParseError("read_tensor: bad rank");
    dims.resize((size_t)nd);
    in.read(reinterpret_cast<char*>(dims.data()), 4 * nd);
    int64_t total = 1;
    for (int32_t d : dims) {
        if (d < 0) throw ParseError("read_tensor: negative dim");
        total *= d;
    }
    VecX data(total);
    in.read(reinterpret_cast<char*>(data.data()), 8 * total);
    if (!in) throw ParseError("read_tensor: truncated data");
    return data;
}

}  // namespace bodyfit

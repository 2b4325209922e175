#pragma once

#include "bodyfit/types.hpp"

namespace bodyfit {

// Weak-perspective camera: drop depth, then uniform scale and 2D translation.
// Image convention: x right, y down, origin at the crop's top-left corner,
// crops nominally 224 x 224.
struct WeakPerspectiveCamera {
    Scalar s = 1.0;
    Vec2 t = Vec2::Zero();
};

constexpr Scalar kCropSize = 224.0;

inline Points2 project(const Points3& points, const WeakPerspectiveCamera& cam) {
    if (!(cam.s > 0) || !std::isfinite(cam.s) || !cam.t.allFinite())
        throw DegenerateInput("project: camera scale must be positive and finite");
    Points2 out(points.rows(), 2);
    out.col(0) = cam.s * points.col(0).array() + cam.t.x();
    out.col(1) = cam.s * points.col(1).array() + cam.t.y();
    return out;
}

}  // namespace bodyfit

#pragma once

#include <vector>

#include "bodyfit/rng.hpp"
#include "bodyfit/types.hpp"

namespace bodyfit {

// Confidence-weighted feature fusion:
//   F_fused = w * F_b_extracted + (1 - w) * F_part
//   w       = sigmoid(t * mlp(concat(F_b_extracted, F_part)))
// The extractor is a linear layer on the body feature; the gating MLP has one
// tanh hidden layer and a scalar output; t is a learned temperature.
struct ModeratorState {
    MatX extractor_w;  // d x d
    VecX extractor_b;  // d
    MatX mlp_w1;       // h x 2d
    VecX mlp_b1;       // h
    VecX mlp_w2;       // h (scalar output row)
    Scalar mlp_b2 = 0;
    Scalar temperature = 1.0;

    int dim() const { return static_cast<int>(extractor_b.size()); }
    int hidden() const { return static_cast<int>(mlp_b1.size()); }

    static ModeratorState init(int d, Rng& rng) {
        const int h = std::max(8, d / 4);
        ModeratorState s;
        auto u = [&](Scalar fan_in) { return rng.uniform(-1.0, 1.0) / std::sqrt(fan_in); };
        s.extractor_w.resize(d, d);
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) s.extractor_w(i, j) = u((Scalar)d);
        s.extractor_b = VecX::Zero(d);
        s.mlp_w1.resize(h, 2 * d);
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < 2 * d; ++j) s.mlp_w1(i, j) = u((Scalar)(2 * d));
        s.mlp_b1 = VecX::Zero(h);
        s.mlp_w2.resize(h);
        for (int i = 0; i < h; ++i) s.mlp_w2[i] = u((Scalar)h);
        s.mlp_b2 = 0.0;
        s.temperature = 1.0;
        return s;
    }
};

struct FusionOutput {
    Scalar w = 0.5;
    VecX fused;
};

struct ModeratorCache {
    VecX f_b, f_p, f_b_extracted;
    VecX concat;
    VecX hidden_pre, hidden_act;
    Scalar score = 0;
    Scalar w = 0.5;
    VecX fused;
};

inline VecX extract(const ModeratorState& s, const VecX& f_b) {
    if (f_b.size() != s.dim())
        throw DimensionMismatch("extract: feature dimension mismatch");
    return s.extractor_w * f_b + s.extractor_b;
}

inline Scalar mlp_forward(const ModeratorState& s, const VecX& input, ModeratorCache* cache) {
    if (input.size() != 2 * s.dim())
        throw DimensionMismatch("mlp_forward: expected concatenated input of length 2d");
    VecX pre = s.mlp_w1 * input + s.mlp_b1;
    VecX act = pre.array().tanh();
    const Scalar score = s.mlp_w2.dot(act) + s.mlp_b2;
    if (cache) {
        cache->concat = input;
        cache->hidden_pre = pre;
        cache->hidden_act = act;
        cache->score = score;
    }
    return score;
}

inline FusionOutput fuse(const ModeratorState& s, const VecX& f_b_extracted,
                         const VecX& f_p, ModeratorCache* cache = nullptr) {
    if (f_b_extracted.size() != s.dim() || f_p.size() != s.dim())
        throw DimensionMismatch("fuse: feature dimension mismatch");
    ModeratorCache local;
    ModeratorCache& c = cache ? *cache : local;
    c.f_b_extracted = f_b_extracted;
    c.f_p = f_p;
    VecX concat(2 * s.dim());
    concat << f_b_extracted, f_p;
    const Scalar score = mlp_forward(s, concat, &c);
    c.w = 1.0 / (1.0 + std::exp(-s.temperature * score));
    c.fused = c.w * f_b_extracted + (1.0 - c.w) * f_p;
    return {c.w, c.fused};
}

// Full forward pass from the raw body feature.
inline FusionOutput moderate(const ModeratorState& s, const VecX& f_b, const VecX& f_p,
                             ModeratorCache* cache = nullptr) {
    ModeratorCache local;
    ModeratorCache& c = cache ? *cache : local;
    c.f_b = f_b;
    return fuse(s, extract(s, f_b), f_p, &c);
}

inline Scalar update_loss(const VecX& f_b_extracted, const VecX& fused) {
    if (f_b_extracted.size() != fused.size())
        throw DimensionMismatch("update_loss: dimension mismatch");
    return (f_b_extracted - fused).cwiseAbs().sum();
}

struct ModeratorGrads {
    MatX extractor_w;
    VecX extractor_b;
    MatX mlp_w1;
    VecX mlp_b1;
    VecX mlp_w2;
    Scalar mlp_b2 = 0;
    Scalar temperature = 0;
    VecX f_b;  // gradient into the raw body feature
    VecX f_p;

    static ModeratorGrads zeros(const ModeratorState& s) {
        ModeratorGrads g;
        g.extractor_w = MatX::Zero(s.dim(), s.dim());
        g.extractor_b = VecX::Zero(s.dim());
        g.mlp_w1 = MatX::Zero(s.hidden(), 2 * s.dim());
        g.mlp_b1 = VecX::Zero(s.hidden());
        g.mlp_w2 = VecX::Zero(s.hidden());
        g.f_b = VecX::Zero(s.dim());
        g.f_p = VecX::Zero(s.dim());
        return g;
    }

    void accumulate(const ModeratorGrads& o) {
        extractor_w += o.extractor_w;
        extractor_b += o.extractor_b;
        mlp_w1 += o.mlp_w1;
        mlp_b1 += o.mlp_b1;
        mlp_w2 += o.mlp_w2;
        mlp_b2 += o.mlp_b2;
        temperature += o.temperature;
        f_b += o.f_b;
        f_p += o.f_p;
    }

    void scale(Scalar a) {
        extractor_w *= a; extractor_b *= a;
        mlp_w1 *= a; mlp_b1 *= a; mlp_w2 *= a;
        mlp_b2 *= a; temperature *= a;
        f_b *= a; f_p *= a;
    }
};

// Backprop through moderate(). g_fused is the upstream gradient on the fused
// feature, g_w an optional direct gradient on the confidence, and
// g_f_b_extracted an optional gradient hitting the extracted body feature
// outside the fusion path (used by the update loss).
inline ModeratorGrads moderator_backward(const ModeratorState& s, const ModeratorCache& c,
                                         const VecX& g_fused, Scalar g_w = 0.0,
                                         const VecX* g_f_b_extracted = nullptr) {
    if (c.concat.size() != 2 * s.dim())
        throw Error("moderator_backward: stale or missing cache");
    ModeratorGrads g = ModeratorGrads::zeros(s);

    // fused = w * Fbp + (1-w) * Fp
    VecX g_fbp = c.w * g_fused;
    g.f_p = (1.0 - c.w) * g_fused;
    Scalar gw = g_w + g_fused.dot(c.f_b_extracted - c.f_p);

    // w = sigmoid(t * score)
    const Scalar dsig = c.w * (1.0 - c.w);
    const Scalar g_score = gw * dsig * s.temperature;
    g.temperature = gw * dsig * c.score;

    // MLP: score = w2 . tanh(w1 x + b1) + b2
    g.mlp_w2 = g_score * c.hidden_act;
    g.mlp_b2 = g_score;
    VecX g_act = g_score * s.mlp_w2;
    VecX g_pre = g_act.array() * (1.0 - c.hidden_act.array().square());
    g.mlp_w1 = g_pre * c.concat.transpose();
    g.mlp_b1 = g_pre;
    VecX g_concat = s.mlp_w1.transpose() * g_pre;
    g_fbp += g_concat.head(s.dim());
    g.f_p += g_concat.tail(s.dim());

    if (g_f_b_extracted) g_fbp += *g_f_b_extracted;

    // extractor: Fbp = W Fb + b
    g.extractor_w = g_fbp * c.f_b.transpose();
    g.extractor_b = g_fbp;
    g.f_b = s.extractor_w.transpose() * g_fbp;
    return g;
}

// ---------------------------------------------------------------------------
// Toy training harness
// ---------------------------------------------------------------------------

struct ModeratorTrainConfig {
    uint64_t seed = 0;
    int steps = 4000;
    Scalar lr = 1e-2;
    Scalar corruption_rate = 0.5;
    int dim = 32;
    int batch = 16;
    Scalar body_noise = 0.3;
    Scalar part_noise = 0.05;
    Scalar corrupt_noise = 2.0;
    Scalar update_weight = 0.01;
    // direct supervision of the extracted body feature; keeps the extractor
    // learning even while the gate routes around it
    Scalar extractor_weight = 1.0;
    Scalar confidence_threshold = 0.5;

    void check() const {
        if (steps < 0 || lr <= 0 || dim < 1 || batch < 1 ||
            corruption_rate < 0 || corruption_rate > 1)
            throw ConfigInvalid("moderator train config invalid");
    }
};

struct CalibrationRow {
    Scalar noise_level;
    Scalar mean_w;
    int count;
};

struct ModeratorReport {
    Scalar mean_w_clean = 0;
    Scalar mean_w_corrupted = 0;
    Scalar auc = 0;  // w as a score separating corrupted from clean
    std::vector<CalibrationRow> calibration;
    Scalar final_loss = 0;
};

namespace detail {

struct AdamSlot {
    MatX m, v;
    void init(Eigen::Index r, Eigen::Index c) { m = MatX::Zero(r, c); v = MatX::Zero(r, c); }
};

inline void adam_step(MatX& param, const MatX& grad, AdamSlot& slot, Scalar lr, int t) {
    const Scalar b1 = 0.9, b2 = 0.999, eps = 1e-8;
    slot.m = b1 * slot.m + (1 - b1) * grad;
    slot.v = b2 * slot.v + (1 - b2) * grad.cwiseProduct(grad);
    const Scalar bc1 = 1 - std::pow(b1, t), bc2 = 1 - std::pow(b2, t);
    param.array() -= lr * (slot.m.array() / bc1) /
                     ((slot.v.array() / bc2).sqrt() + eps);
}

inline void adam_step_scalar(Scalar& param, Scalar grad, Scalar& m, Scalar& v,
                             Scalar lr, int t) {
    const Scalar b1 = 0.9, b2 = 0.999, eps = 1e-8;
    m = b1 * m + (1 - b1) * grad;
    v = b2 * v + (1 - b2) * grad * grad;
    param -= lr * (m / (1 - std::pow(b1, t))) /
             (std::sqrt(v / (1 - std::pow(b2, t))) + eps);
}

}  // namespace detail

// Synthetic confidence task: a latent target is observable through a clean
// "body" channel (mixed by a fixed matrix, moderate noise) and a "part"
// channel that is usually low-noise but corrupted with probability
// corruption_rate. The moderator should learn low w (trust the part expert)
// on clean samples and high w on corrupted ones.
inline std::pair<ModeratorState, ModeratorReport> train_toy(const ModeratorTrainConfig& cfg) {
    cfg.check();
    Rng rng(cfg.seed);
    const int d = cfg.dim;
    ModeratorState state = ModeratorState::init(d, rng);

    // fixed mixing matrix for the body channel
    MatX mix(d, d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) mix(i, j) = rng.gauss(0, 1.0 / std::sqrt((Scalar)d));
    mix += MatX::Identity(d, d);

    auto sample = [&](bool corrupt, Scalar part_sigma, VecX& z, VecX& f_b, VecX& f_p) {
        z = rng.gauss_vec(d);
        f_b = mix * z + rng.gauss_vec(d, cfg.body_noise);
        f_p = z + rng.gauss_vec(d, corrupt ? cfg.corrupt_noise : part_sigma);
    };

    detail::AdamSlot s_ew, s_eb, s_w1, s_b1, s_w2;
    s_ew.init(d, d); s_eb.init(d, 1); s_w1.init(state.hidden(), 2 * d);
    s_b1.init(state.hidden(), 1); s_w2.init(state.hidden(), 1);
    Scalar mb2 = 0, vb2 = 0, mt = 0, vt = 0;

    Scalar last_loss = 0;
    for (int step = 1; step <= cfg.steps; ++step) {
        ModeratorGrads total = ModeratorGrads::zeros(state);
        Scalar batch_loss = 0;
        for (int b = 0; b < cfg.batch; ++b) {
            const bool corrupt = rng.uniform() < cfg.corruption_rate;
            VecX z, f_b, f_p;
            sample(corrupt, cfg.part_noise, z, f_b, f_p);
            ModeratorCache cache;
            FusionOutput out = moderate(state, f_b, f_p, &cache);
            // regression of the fused feature onto the latent target
            VecX resid = out.fused - z;
            Scalar loss = resid.squaredNorm() / d;
            VecX g_fused = 2.0 * resid / d;
            // update loss: |Fbp - fused|_1
            VecX diff = cache.f_b_extracted - out.fused;
            loss += cfg.update_weight * diff.cwiseAbs().sum() / d;
            VecX g_fbp_direct(d);
            for (int i = 0; i < d; ++i)
                g_fbp_direct[i] =
                    cfg.update_weight * (diff[i] > 0 ? 1.0 : (diff[i] < 0 ? -1.0 : 0.0)) / d;
            g_fused -= g_fbp_direct;
            // extractor supervision: |Fbp - z|^2
            VecX ext_resid = cache.f_b_extracted - z;
            loss += cfg.extractor_weight * ext_resid.squaredNorm() / d;
            g_fbp_direct += cfg.extractor_weight * 2.0 * ext_resid / d;
            ModeratorGrads g = moderator_backward(state, cache, g_fused, 0.0, &g_fbp_direct);
            total.accumulate(g);
            batch_loss += loss;
        }
        total.scale(1.0 / cfg.batch);
        last_loss = batch_loss / cfg.batch;

        detail::adam_step(state.extractor_w, total.extractor_w, s_ew, cfg.lr, step);
        MatX eb = state.extractor_b, geb = total.extractor_b;
        detail::adam_step(eb, geb, s_eb, cfg.lr, step);
        state.extractor_b = eb;
        detail::adam_step(state.mlp_w1, total.mlp_w1, s_w1, cfg.lr, step);
        MatX b1 = state.mlp_b1, gb1 = total.mlp_b1;
        detail::adam_step(b1, gb1, s_b1, cfg.lr, step);
        state.mlp_b1 = b1;
        MatX w2 = state.mlp_w2, gw2 = total.mlp_w2;
        detail::adam_step(w2, gw2, s_w2, cfg.lr, step);
        state.mlp_w2 = w2;
        detail::adam_step_scalar(state.mlp_b2, total.mlp_b2, mb2, vb2, cfg.lr, step);
        detail::adam_step_scalar(state.temperature, total.temperature, mt, vt, cfg.lr, step);
    }

    // evaluation
    ModeratorReport report;
    report.final_loss = last_loss;
    const int n_eval = 400;
    std::vector<Scalar> w_clean, w_corrupt;
    for (int i = 0; i < n_eval; ++i) {
        VecX z, f_b, f_p;
        sample(false, cfg.part_noise, z, f_b, f_p);
        w_clean.push_back(moderate(state, f_b, f_p).w);
        sample(true, cfg.part_noise, z, f_b, f_p);
        w_corrupt.push_back(moderate(state, f_b, f_p).w);
    }
    for (Scalar w : w_clean) report.mean_w_clean += w;
    for (Scalar w : w_corrupt) report.mean_w_corrupted += w;
    report.mean_w_clean /= n_eval;
    report.mean_w_corrupted /= n_eval;
    // AUC via pairwise comparison (ties count half)
    Scalar wins = 0;
    for (Scalar wc : w_corrupt)
        for (Scalar wl : w_clean)
            wins += wc > wl ? 1.0 : (wc == wl ? 0.5 : 0.0);
    report.auc = wins / ((Scalar)n_eval * n_eval);

    // w vs part-channel noise level
    for (Scalar sigma : {0.05, 0.25, 0.5, 1.0, 2.0}) {
        CalibrationRow row{sigma, 0.0, 100};
        for (int i = 0; i < row.count; ++i) {
            VecX z, f_b, f_p;
            sample(false, sigma, z, f_b, f_p);
            row.mean_w += moderate(state, f_b, f_p).w;
        }
        row.mean_w /= row.count;
        report.calibration.push_back(row);
    }
    return {state, report};
}

}  // namespace bodyfit

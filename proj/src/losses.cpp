#include "rigidloc/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace rigidloc {

std::size_t FrameTarget::count_valid() const {
    return static_cast<std::size_t>(std::count_if(valid.begin(), valid.end(), [](std::uint8_t v) { return v != 0; }));
}

void SequenceBatch::validate() const {
    for (const auto& seq : frames) {
        if (seq.size() != frames.front().size()) {
            throw std::invalid_argument("sequence batch: all sequences must have equal length");
        }
    }
}

void LossToggles::disable(const std::string& name) {
    if (name == "l3d") l3d = false;
    else if (name == "l_depth") l_depth = false;
    else if (name == "l_pose") l_pose = false;
    else if (name == "l_along") l_along = false;
    else if (name == "l_across") l_across = false;
    else throw std::invalid_argument("unknown loss term '" + name + "'");
}

namespace {

void check_dims(const FramePrediction& pred, const FrameTarget& tgt) {
    if (pred.point_map.size() != tgt.point_map.size() || pred.depth.size() != tgt.depth.size() ||
        tgt.valid.size() != tgt.point_map.size()) {
        throw std::invalid_argument("loss: prediction and target dimensions disagree");
    }
}

// Smallest sin(θ) used when differentiating acos; below it the angle itself is
// at round-off level.
constexpr double kMinSinAngle = 1e-7;

}  // namespace

double l3d(const FramePrediction& pred, const FrameTarget& tgt) {
    check_dims(pred, tgt);
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < tgt.size(); ++i) {
        if (!tgt.valid[i]) continue;
        sum += (pred.point_map[i] - tgt.point_map[i]).norm();
        ++n;
    }
    return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

double l_depth(const FramePrediction& pred, const FrameTarget& tgt) {
    check_dims(pred, tgt);
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < tgt.size(); ++i) {
        if (!tgt.valid[i]) continue;
        sum += std::abs(pred.depth[i] - tgt.depth[i]);
        ++n;
    }
    return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

double pose_loss(const Pose& T, const Pose& That) {
    return translation_error(T.translation, That.translation) + rotation_angle_error(T.rotation, That.rotation);
}

double relpose_loss(const Pose& Ti, const Pose& Tj, const Pose& Tihat, const Pose& Tjhat) {
    return pose_loss(relative_pose(Ti, Tj), relative_pose(Tihat, Tjhat));
}

PoseGradient pose_loss_gradient(const Pose& T, const Pose& That) {
    PoseGradient g;
    const Vec3 dt = That.translation - T.translation;
    const double n = dt.norm();
    if (n > 0.0) g.translation = dt / n;

    const Mat3& R = T.rotation.matrix();
    const double c = 0.5 * ((That.rotation.matrix() * R.transpose()).trace() - 1.0);
    if (c < 1.0 && c > -1.0) {
        const double s = std::max(std::sqrt(1.0 - c * c), kMinSinAngle);
        g.rotation = (-0.5 / s) * R;
    }
    return g;
}

std::pair<PoseGradient, PoseGradient> relpose_loss_gradient(const Pose& Ti, const Pose& Tj, const Pose& Tihat,
                                                            const Pose& Tjhat) {
    const PoseGradient g = pose_loss_gradient(relative_pose(Ti, Tj), relative_pose(Tihat, Tjhat));
    const Mat3& Ri = Tihat.rotation.matrix();
    const Mat3& Rj = Tjhat.rotation.matrix();
    // rel.R = Riᵀ·Rj, rel.t = Riᵀ·(tj − ti)
    PoseGradient gi;
    PoseGradient gj;
    gi.rotation = Rj * g.rotation.transpose() + (Tjhat.translation - Tihat.translation) * g.translation.transpose();
    gj.rotation = Ri * g.rotation;
    gj.translation = Ri * g.translation;
    gi.translation = -gj.translation;
    return {gi, gj};
}

namespace {

// Visits every (frame a, frame b) pair of the along or across network.
template <typename Visit>
void for_each_along_pair(const SequenceBatch& batch, Visit&& visit) {
    for (int k = 0; k < batch.num_sequences(); ++k) {
        for (int i = 0; i + 1 < batch.frames_per_sequence(); ++i) visit(k, i, k, i + 1);
    }
}

template <typename Visit>
void for_each_across_pair(const SequenceBatch& batch, Visit&& visit) {
    for (int i = 0; i < batch.frames_per_sequence(); ++i) {
        for (int k = 0; k + 1 < batch.num_sequences(); ++k) visit(k, i, k + 1, i);
    }
}

template <typename PairVisitor>
LossTermCount relative_term(const SequenceBatch& batch, const BatchPredictions& preds, PairVisitor&& pairs,
                            BatchLossGradient* grad) {
    LossTermCount out;
    pairs(batch, [&](int ka, int ia, int kb, int ib) {
        const FramePrediction& pa = preds[ka][ia];
        const FramePrediction& pb = preds[kb][ib];
        if (!pa.pose_hat || !pb.pose_hat) return;
        const Pose& Ta = batch.frames[ka][ia].pose;
        const Pose& Tb = batch.frames[kb][ib].pose;
        out.value += relpose_loss(Ta, Tb, *pa.pose_hat, *pb.pose_hat);
        ++out.terms;
        if (grad) {
            auto [ga, gb] = relpose_loss_gradient(Ta, Tb, *pa.pose_hat, *pb.pose_hat);
            (*grad)[ka][ia].pose += ga;
            (*grad)[kb][ib].pose += gb;
        }
    });
    return out;
}

void check_shapes(const SequenceBatch& batch, const BatchPredictions& preds) {
    batch.validate();
    if (preds.size() != batch.frames.size()) {
        throw std::invalid_argument("loss: predictions do not match batch shape");
    }
    for (std::size_t k = 0; k < preds.size(); ++k) {
        if (preds[k].size() != batch.frames[k].size()) {
            throw std::invalid_argument("loss: predictions do not match batch shape");
        }
    }
}

}  // namespace

LossTermCount along_loss(const SequenceBatch& batch, const BatchPredictions& preds) {
    check_shapes(batch, preds);
    return relative_term(batch, preds, [](const SequenceBatch& b, auto&& v) { for_each_along_pair(b, v); }, nullptr);
}

LossTermCount across_loss(const SequenceBatch& batch, const BatchPredictions& preds) {
    check_shapes(batch, preds);
    return relative_term(batch, preds, [](const SequenceBatch& b, auto&& v) { for_each_across_pair(b, v); }, nullptr);
}

LossReport total_loss(const SequenceBatch& batch, const BatchPredictions& preds, const LossToggles& toggles,
                      BatchLossGradient* grad) {
    check_shapes(batch, preds);
    const int K = batch.num_sequences();
    const int N = batch.frames_per_sequence();
    const double frames = static_cast<double>(K) * N;

    if (grad) {
        grad->assign(static_cast<std::size_t>(K), {});
        for (int k = 0; k < K; ++k) {
            (*grad)[k].resize(static_cast<std::size_t>(N));
            for (int i = 0; i < N; ++i) {
                const FramePrediction& p = preds[k][i];
                (*grad)[k][i].point_map.assign(p.point_map.size(), Vec3::Zero());
                (*grad)[k][i].depth.assign(p.depth.size(), 0.0);
            }
        }
    }

    LossReport rep;
    for (int k = 0; k < K; ++k) {
        for (int i = 0; i < N; ++i) {
            const FramePrediction& p = preds[k][i];
            const FrameTarget& t = batch.frames[k][i];
            if (!p.pose_hat) ++rep.skipped_frames;
            if (toggles.l3d) {
                rep.l3d += l3d(p, t) / frames;
                if (grad) {
                    const double m = static_cast<double>(t.count_valid());
                    for (std::size_t j = 0; j < t.size(); ++j) {
                        if (!t.valid[j]) continue;
                        const Vec3 r = p.point_map[j] - t.point_map[j];
                        const double n = r.norm();
                        if (n > 0.0) (*grad)[k][i].point_map[j] += r / (n * m * frames);
                    }
                }
            }
            if (toggles.l_depth) {
                rep.l_depth += l_depth(p, t) / frames;
                if (grad) {
                    const double m = static_cast<double>(t.count_valid());
                    for (std::size_t j = 0; j < t.size(); ++j) {
                        if (!t.valid[j]) continue;
                        const double r = p.depth[j] - t.depth[j];
                        if (r != 0.0) (*grad)[k][i].depth[j] += (r > 0.0 ? 1.0 : -1.0) / (m * frames);
                    }
                }
            }
            if (toggles.l_pose && p.pose_hat) {
                rep.l_pose += pose_loss(t.pose, *p.pose_hat) / frames;
                if (grad) {
                    PoseGradient g = pose_loss_gradient(t.pose, *p.pose_hat);
                    g.rotation /= frames;
                    g.translation /= frames;
                    (*grad)[k][i].pose += g;
                }
            }
        }
    }
    if (toggles.l_along) {
        const LossTermCount a =
            relative_term(batch, preds, [](const SequenceBatch& b, auto&& v) { for_each_along_pair(b, v); }, grad);
        rep.l_along = a.value;
        rep.along_terms = a.terms;
    }
    if (toggles.l_across) {
        const LossTermCount a =
            relative_term(batch, preds, [](const SequenceBatch& b, auto&& v) { for_each_across_pair(b, v); }, grad);
        rep.l_across = a.value;
        rep.across_terms = a.terms;
    }
    rep.total = rep.l3d + rep.l_depth + rep.l_pose + rep.l_along + rep.l_across;
    return rep;
}

}  // namespace rigidloc

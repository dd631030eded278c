#include "rigidloc/alignment.hpp"

#include <cmath>
#include <string>

#include <Eigen/LU>
#include <Eigen/SVD>

namespace rigidloc {

const char* to_string(AlignmentStatus s) {
    switch (s) {
        case AlignmentStatus::ok: return "ok";
        case AlignmentStatus::no_effective_correspondences: return "no effective correspondences";
        case AlignmentStatus::degenerate_configuration: return "degenerate configuration";
        case AlignmentStatus::ill_conditioned_gradient: return "ill-conditioned SVD gradient";
    }
    return "unknown";
}

Svd3 svd3(const Mat3& A) {
    Eigen::JacobiSVD<Mat3> svd(A, Eigen::ComputeFullU | Eigen::ComputeFullV);
    return Svd3{svd.matrixU(), svd.singularValues(), svd.matrixV()};
}

namespace {

void check_input(const CorrespondenceView& c) {
    if (c.global.size() != c.camera.size() || c.global.size() != c.weights.size()) {
        throw std::invalid_argument("correspondence set: X, Y and W must have equal length");
    }
    for (std::size_t i = 0; i < c.size(); ++i) {
        if (!(std::isfinite(c.weights[i]) && c.weights[i] >= 0.0)) {
            throw std::invalid_argument("correspondence set: weight " + std::to_string(i) +
                                        " is negative or non-finite");
        }
        if (!c.global[i].allFinite() || !c.camera[i].allFinite()) {
            throw std::invalid_argument("correspondence set: point " + std::to_string(i) + " is non-finite");
        }
    }
}

}  // namespace

AlignmentResult solve_weighted_alignment(const CorrespondenceView& c) {
    check_input(c);
    AlignmentResult r;
    AlignmentInternals& a = r.internals;

    double wsum = 0.0;
    Vec3 sx = Vec3::Zero();
    Vec3 sy = Vec3::Zero();
    for (std::size_t i = 0; i < c.size(); ++i) {
        const double w = c.weights[i];
        wsum += w;
        sx += w * c.global[i];
        sy += w * c.camera[i];
    }
    a.weight_sum = wsum;
    if (!(wsum > kMinWeightSum)) {
        r.status = AlignmentStatus::no_effective_correspondences;
        return r;
    }
    a.mu_x = sx / wsum;
    a.mu_y = sy / wsum;

    Mat3 H = Mat3::Zero();
    for (std::size_t i = 0; i < c.size(); ++i) {
        const double w = c.weights[i];
        if (w == 0.0) continue;
        H.noalias() += w * (c.camera[i] - a.mu_y) * (c.global[i] - a.mu_x).transpose();
    }
    a.H = H;
    a.svd = svd3(H);

    const Vec3& S = a.svd.S;
    if (!(S(0) > 0.0) || !(S(1) > kDegenerateRatio * S(0))) {
        r.status = AlignmentStatus::degenerate_configuration;
        return r;
    }

    const Mat3& U = a.svd.U;
    const Mat3& V = a.svd.V;
    a.sign = (V * U.transpose()).determinant() < 0.0 ? -1.0 : 1.0;
    const Mat3 R = V * Eigen::Vector3d(1.0, 1.0, a.sign).asDiagonal() * U.transpose();
    r.pose.rotation = Rotation::unchecked(R);
    r.pose.translation = a.mu_x - R * a.mu_y;
    return r;
}

Pose weighted_kabsch(const CorrespondenceView& c) {
    AlignmentResult r = solve_weighted_alignment(c);
    if (!r.ok()) throw AlignmentError(r.status);
    return r.pose;
}

Pose kabsch(std::span<const Vec3> global, std::span<const Vec3> camera) {
    const std::vector<double> ones(global.size(), 1.0);
    return weighted_kabsch(CorrespondenceView(global, camera, ones));
}

double alignment_cost(const CorrespondenceView& c, const Pose& T) {
    double cost = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) {
        cost += c.weights[i] * (c.global[i] - T.apply(c.camera[i])).norm();
    }
    return cost;
}

double alignment_cost_sq(const CorrespondenceView& c, const Pose& T) {
    double cost = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) {
        cost += c.weights[i] * (c.global[i] - T.apply(c.camera[i])).squaredNorm();
    }
    return cost;
}

bool gradient_well_conditioned(const AlignmentInternals& a) {
    const Vec3& S = a.svd.S;
    const double gap = kGradientGapRatio * S(0);
    return S(0) > 0.0 && (S(0) - S(1)) > gap && (S(1) - S(2)) > gap;
}

CorrespondenceGradient kabsch_gradient(const CorrespondenceView& c, const AlignmentResult& solved,
                                       const PoseGradient& upstream) {
    if (!solved.ok()) throw AlignmentError(solved.status);
    const AlignmentInternals& a = solved.internals;
    if (!gradient_well_conditioned(a)) throw AlignmentError(AlignmentStatus::ill_conditioned_gradient);

    const Mat3& R = solved.pose.rotation.matrix();
    const Mat3& U = a.svd.U;
    const Mat3& V = a.svd.V;
    const Vec3& S = a.svd.S;
    const Vec3 D(1.0, 1.0, a.sign);

    // t = μx − R·μy
    const Mat3 dR = upstream.rotation - upstream.translation * a.mu_y.transpose();
    const Vec3 d_mu_x = upstream.translation;
    const Vec3 d_mu_y = -(R.transpose() * upstream.translation);

    // R = V·D·Uᵀ with H = U·S·Vᵀ. Perturbations keep R·H symmetric, which gives
    // Vᵀ·dR·U = D·A for skew A with a_ij = (d_j g_ji − d_i g_ij) / (d_i s_j + d_j s_i),
    // G = Uᵀ·dH·V. Transposing that linear map yields ∂L/∂H = U·Ḡ·Vᵀ.
    const Mat3 P = D.asDiagonal() * V.transpose() * dR * U;
    Mat3 Gbar = Mat3::Zero();
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            if (i == j) continue;
            const double denom = D(i) * S(j) + D(j) * S(i);
            Gbar(i, j) = D(i) * (P(j, i) - P(i, j)) / denom;
        }
    }
    const Mat3 dH = U * Gbar * V.transpose();

    CorrespondenceGradient g;
    const std::size_t m = c.size();
    g.global.resize(m);
    g.camera.resize(m);
    g.weights.resize(m);
    const double inv_w = 1.0 / a.weight_sum;
    for (std::size_t i = 0; i < m; ++i) {
        const double w = c.weights[i];
        const Vec3 xb = c.global[i] - a.mu_x;
        const Vec3 yb = c.camera[i] - a.mu_y;
        // The centroid terms inside H cancel because Σ w_i·x̄_i = Σ w_i·ȳ_i = 0.
        g.global[i] = w * (dH.transpose() * yb) + (w * inv_w) * d_mu_x;
        g.camera[i] = w * (dH * xb) + (w * inv_w) * d_mu_y;
        g.weights[i] = yb.dot(dH * xb) + inv_w * (xb.dot(d_mu_x) + yb.dot(d_mu_y));
    }
    return g;
}

CorrespondenceGradient kabsch_gradient(const CorrespondenceView& c, const PoseGradient& upstream) {
    return kabsch_gradient(c, solve_weighted_alignment(c), upstream);
}

std::vector<double> finite_difference_gradient(const std::function<double(std::span<const double>)>& f,
                                               std::span<const double> p, double h) {
    std::vector<double> q(p.begin(), p.end());
    std::vector<double> grad(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double orig = q[i];
        q[i] = orig + h;
        const double fp = f(q);
        q[i] = orig - h;
        const double fm = f(q);
        q[i] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
            throw std::domain_error("finite_difference_gradient: non-finite evaluation at coordinate " +
                                    std::to_string(i));
        }
        grad[i] = (fp - fm) / (2.0 * h);
    }
    return grad;
}

}  // namespace rigidloc

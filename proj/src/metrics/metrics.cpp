#include "proxyattn/metrics.hpp"

#include <cmath>

#include "proxyattn/ops.hpp"

namespace proxyattn {

namespace {

void check_pose_pair(const Shape& a, const Shape& b, const char* what) {
    if (a != b || a.size() != 3 || a[2] != 3) {
        throw ShapeError(std::string(what) + ": expected two (T, J, 3) tensors, got " + shape_str(a) + " and " +
                         shape_str(b));
    }
}

}  // namespace

Var loss_3d(Var y_hat, Var y) {
    check_pose_pair(y_hat.shape(), y.shape(), "loss_3d");
    return mean(norm_last(sub(y_hat, y)));
}

Var tc_loss(Var y_hat, Var y) {
    check_pose_pair(y_hat.shape(), y.shape(), "tc_loss");
    const std::size_t T = y_hat.shape()[0];
    if (T < 2) throw ShapeError("tc_loss needs at least 2 frames");
    // Delta(y_hat) - Delta(y) == Delta(y_hat - y).
    Var d = sub(y_hat, y);
    Var dd = sub(slice0(d, 1, T), slice0(d, 0, T - 1));
    return mean(norm_last(dd));
}

Var total_loss(Var y_hat, Var y, const LossWeights& w) {
    if (!std::isfinite(w.lambda_t) || w.lambda_t < 0) throw ConfigError("lambda_t must be finite and >= 0");
    Var l = loss_3d(y_hat, y);
    if (w.lambda_t == 0.0) return l;
    return add(l, scale(tc_loss(y_hat, y), w.lambda_t));
}

double loss_3d(const Tensor& y_hat, const Tensor& y) {
    Tape t;
    return loss_3d(t.constant(y_hat), t.constant(y)).value().item();
}

double tc_loss(const Tensor& y_hat, const Tensor& y) {
    Tape t;
    return tc_loss(t.constant(y_hat), t.constant(y)).value().item();
}

double total_loss(const Tensor& y_hat, const Tensor& y, const LossWeights& w) {
    Tape t;
    return total_loss(t.constant(y_hat), t.constant(y), w).value().item();
}

// ---------------------------------------------------------------------------

Alignment procrustes_align(const Tensor& src, const Tensor& dst, bool with_scale) {
    if (src.shape() != dst.shape() || src.rank() != 2 || src.dim(1) != 3) {
        throw ShapeError("procrustes_align: expected two (J, 3) frames, got " + shape_str(src.shape()) + " and " +
                         shape_str(dst.shape()));
    }
    const std::size_t J = src.dim(0);
    const double n = static_cast<double>(J);
    Vec3 mu_s{0, 0, 0}, mu_d{0, 0, 0};
    for (std::size_t j = 0; j < J; ++j)
        for (int k = 0; k < 3; ++k) {
            mu_s[k] += src[j * 3 + k] / n;
            mu_d[k] += dst[j * 3 + k] / n;
        }
    // Cross-covariance (1/n) sum (d - mu_d)(s - mu_s)^T and source variance.
    Mat3 cov{};
    double var_s = 0.0;
    for (std::size_t j = 0; j < J; ++j) {
        for (int r = 0; r < 3; ++r) {
            const double dr = dst[j * 3 + r] - mu_d[r];
            const double sr = src[j * 3 + r] - mu_s[r];
            var_s += sr * sr / n;
            for (int c = 0; c < 3; ++c) cov[r * 3 + c] += dr * (src[j * 3 + c] - mu_s[c]) / n;
        }
    }

    Alignment out;
    const Svd3 svd = svd_3x3(cov);
    const bool degenerate = J < 3 || var_s <= 0.0 || !(svd.sigma[1] > 1e-12 * svd.sigma[0]);
    if (degenerate) {
        out.degenerate = true;
        for (int k = 0; k < 3; ++k) out.transform.translation[k] = mu_d[k] - mu_s[k];
    } else {
        Mat3 d = mat3_identity();
        if (mat3_det(svd.u) * mat3_det(svd.v) < 0) d[8] = -1.0;
        out.transform.rotation = mat3_mul(mat3_mul(svd.u, d), mat3_transpose(svd.v));
        if (with_scale) {
            out.transform.scale = (svd.sigma[0] + svd.sigma[1] + d[8] * svd.sigma[2]) / var_s;
        }
        const Vec3 rm = mat3_apply(out.transform.rotation, mu_s);
        for (int k = 0; k < 3; ++k) out.transform.translation[k] = mu_d[k] - out.transform.scale * rm[k];
    }

    out.aligned = Tensor({J, 3});
    for (std::size_t j = 0; j < J; ++j) {
        const Vec3 p{src[j * 3], src[j * 3 + 1], src[j * 3 + 2]};
        const Vec3 rp = mat3_apply(out.transform.rotation, p);
        for (int k = 0; k < 3; ++k)
            out.aligned[j * 3 + k] = out.transform.scale * rp[k] + out.transform.translation[k];
    }
    return out;
}

std::vector<double> joint_errors(const Tensor& y_hat, const Tensor& y) {
    check_pose_pair(y_hat.shape(), y.shape(), "joint_errors");
    const std::size_t T = y.dim(0), J = y.dim(1);
    std::vector<double> err(T * J);
    for (std::size_t t = 0; t < T; ++t) {
        const std::size_t base = t * J * 3;
        const std::size_t root = base + kRootJoint * 3;
        for (std::size_t j = 0; j < J; ++j) {
            double acc = 0.0;
            for (int k = 0; k < 3; ++k) {
                const double a = y_hat[base + j * 3 + k] - y_hat[root + k];
                const double b = y[base + j * 3 + k] - y[root + k];
                acc += (a - b) * (a - b);
            }
            err[t * J + j] = std::sqrt(acc);
        }
    }
    return err;
}

double mpjpe(const Tensor& y_hat, const Tensor& y) {
    const auto err = joint_errors(y_hat, y);
    double s = 0.0;
    for (double e : err) s += e;
    return s / static_cast<double>(err.size());
}

double p_mpjpe(const Tensor& y_hat, const Tensor& y, bool with_scale) {
    check_pose_pair(y_hat.shape(), y.shape(), "p_mpjpe");
    const std::size_t T = y.dim(0), J = y.dim(1);
    double s = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
        const auto first = static_cast<std::ptrdiff_t>(t * J * 3);
        const auto last = first + static_cast<std::ptrdiff_t>(J * 3);
        Tensor a({J, 3}, std::vector<double>(y_hat.data().begin() + first, y_hat.data().begin() + last));
        Tensor b({J, 3}, std::vector<double>(y.data().begin() + first, y.data().begin() + last));
        const Alignment al = procrustes_align(a, b, with_scale);
        for (std::size_t j = 0; j < J; ++j) {
            double acc = 0.0;
            for (int k = 0; k < 3; ++k) {
                const double d = al.aligned[j * 3 + k] - b[j * 3 + k];
                acc += d * d;
            }
            s += std::sqrt(acc);
        }
    }
    return s / static_cast<double>(T * J);
}

namespace {
// The root's root-centred error is identically zero, so it is left out of
// the threshold counts.
std::vector<double> counted_errors(const Tensor& y_hat, const Tensor& y) {
    const auto all = joint_errors(y_hat, y);
    const std::size_t J = y.dim(1);
    if (J < 2) throw ShapeError("pck/auc need at least one non-root joint");
    std::vector<double> err;
    err.reserve(all.size());
    for (std::size_t i = 0; i < all.size(); ++i)
        if (i % J != kRootJoint) err.push_back(all[i]);
    return err;
}
}  // namespace

double pck(const Tensor& y_hat, const Tensor& y, double threshold_mm) {
    if (!(threshold_mm >= 0)) throw ConfigError("pck threshold must be >= 0");
    const auto err = counted_errors(y_hat, y);
    std::size_t hits = 0;
    for (double e : err)
        if (e < threshold_mm) ++hits;
    return 100.0 * static_cast<double>(hits) / static_cast<double>(err.size());
}

std::vector<double> auc_thresholds() {
    std::vector<double> th;
    for (int i = 0; i <= 30; ++i) th.push_back(5.0 * i);
    return th;
}

double auc(const Tensor& y_hat, const Tensor& y) {
    const auto err = counted_errors(y_hat, y);
    const auto th = auc_thresholds();
    double acc = 0.0;
    for (double t : th) {
        std::size_t hits = 0;
        for (double e : err)
            if (e < t) ++hits;
        acc += 100.0 * static_cast<double>(hits) / static_cast<double>(err.size());
    }
    return acc / static_cast<double>(th.size());
}

MetricReport compute_metrics(const Tensor& y_hat, const Tensor& y) {
    MetricReport r;
    r.mpjpe_mm = mpjpe(y_hat, y);
    r.p_mpjpe_mm = p_mpjpe(y_hat, y);
    r.pck_pct = pck(y_hat, y, 150.0);
    r.auc_pct = auc(y_hat, y);
    r.n_frames = y.dim(0);
    r.n_joints = y.dim(1);
    return r;
}

nlohmann::json to_json(const MetricReport& r) {
    return nlohmann::json{{"mpjpe_mm", r.mpjpe_mm}, {"p_mpjpe_mm", r.p_mpjpe_mm}, {"pck_pct", r.pck_pct},
                          {"auc_pct", r.auc_pct},   {"n_frames", r.n_frames},     {"n_joints", r.n_joints}};
}

}  // namespace proxyattn

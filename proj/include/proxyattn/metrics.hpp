#pragma once

#include <array>
#include <vector>

#include <json.hpp>

#include "proxyattn/autograd.hpp"

namespace proxyattn {

// ---- training losses ------------------------------------------------------

struct LossWeights {
    double lambda_t = 0.5;
};

// Mean per-joint Euclidean error over (T, J, 3) sequences.
Var loss_3d(Var y_hat, Var y);
// Mean Euclidean error of first-order temporal differences; needs T >= 2.
Var tc_loss(Var y_hat, Var y);
Var total_loss(Var y_hat, Var y, const LossWeights& w);

double loss_3d(const Tensor& y_hat, const Tensor& y);
double tc_loss(const Tensor& y_hat, const Tensor& y);
double total_loss(const Tensor& y_hat, const Tensor& y, const LossWeights& w);

// ---- 3x3 linear algebra -----------------------------------------------------

// Row-major 3x3 matrix.
using Mat3 = std::array<double, 9>;
using Vec3 = std::array<double, 3>;

Mat3 mat3_identity();
Mat3 mat3_mul(const Mat3& a, const Mat3& b);
Mat3 mat3_transpose(const Mat3& a);
double mat3_det(const Mat3& a);
Vec3 mat3_apply(const Mat3& a, const Vec3& v);

struct Svd3 {
    Mat3 u;
    Vec3 sigma;  // nonincreasing, nonnegative
    Mat3 v;
};

// a = U * diag(sigma) * V^T via cyclic Jacobi on a^T a.
Svd3 svd_3x3(const Mat3& a);

// ---- alignment and evaluation metrics --------------------------------------

struct SimilarityTransform {
    Mat3 rotation = mat3_identity();
    double scale = 1.0;
    Vec3 translation{0.0, 0.0, 0.0};
};

struct Alignment {
    SimilarityTransform transform;
    Tensor aligned;  // (J, 3): s * R * y_hat + t
    bool degenerate = false;
};

// Least-squares similarity transform taking `y_hat_frame` onto `y_frame`
// (Umeyama), reflection-corrected. Rank-deficient inputs fall back to a
// translation-only alignment and set `degenerate`.
Alignment procrustes_align(const Tensor& y_hat_frame, const Tensor& y_frame, bool with_scale = true);

inline constexpr std::size_t kRootJoint = 0;

// All metrics take (T, J, 3) tensors in millimetres.
double mpjpe(const Tensor& y_hat, const Tensor& y);
double p_mpjpe(const Tensor& y_hat, const Tensor& y, bool with_scale = true);
// Percentage of root-centred non-root joint errors strictly below `threshold_mm`.
double pck(const Tensor& y_hat, const Tensor& y, double threshold_mm = 150.0);
// Mean PCK over thresholds 0, 5, ..., 150 mm.
double auc(const Tensor& y_hat, const Tensor& y);
std::vector<double> auc_thresholds();

// Root-centred per-(frame, joint) Euclidean errors, row-major (T, J).
std::vector<double> joint_errors(const Tensor& y_hat, const Tensor& y);

struct MetricReport {
    double mpjpe_mm = 0.0;
    double p_mpjpe_mm = 0.0;
    double pck_pct = 0.0;
    double auc_pct = 0.0;
    std::size_t n_frames = 0;
    std::size_t n_joints = 0;
};

MetricReport compute_metrics(const Tensor& y_hat, const Tensor& y);
nlohmann::json to_json(const MetricReport& r);

}  // namespace proxyattn

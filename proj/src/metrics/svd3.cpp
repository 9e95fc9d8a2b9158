#include <algorithm>
#include <cmath>
#include <numeric>

#include "proxyattn/metrics.hpp"

namespace proxyattn {

Mat3 mat3_identity() { return {1, 0, 0, 0, 1, 0, 0, 0, 1}; }

Mat3 mat3_mul(const Mat3& a, const Mat3& b) {
    Mat3 c{};
    for (int i = 0; i < 3; ++i)
        for (int k = 0; k < 3; ++k)
            for (int j = 0; j < 3; ++j) c[i * 3 + j] += a[i * 3 + k] * b[k * 3 + j];
    return c;
}

Mat3 mat3_transpose(const Mat3& a) { return {a[0], a[3], a[6], a[1], a[4], a[7], a[2], a[5], a[8]}; }

double mat3_det(const Mat3& a) {
    return a[0] * (a[4] * a[8] - a[5] * a[7]) - a[1] * (a[3] * a[8] - a[5] * a[6]) + a[2] * (a[3] * a[7] - a[4] * a[6]);
}

Vec3 mat3_apply(const Mat3& a, const Vec3& v) {
    return {a[0] * v[0] + a[1] * v[1] + a[2] * v[2], a[3] * v[0] + a[4] * v[1] + a[5] * v[2],
            a[6] * v[0] + a[7] * v[1] + a[8] * v[2]};
}

namespace {

double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }
Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
Vec3 column(const Mat3& m, int j) { return {m[j], m[3 + j], m[6 + j]}; }
void set_column(Mat3& m, int j, const Vec3& v) {
    m[j] = v[0];
    m[3 + j] = v[1];
    m[6 + j] = v[2];
}

double off_diagonal(const Mat3& s) { return std::sqrt(2.0 * (s[1] * s[1] + s[2] * s[2] + s[5] * s[5])); }

// Unit vector orthogonal to unit `a`.
Vec3 any_orthogonal(const Vec3& a) {
    const Vec3 e = std::abs(a[0]) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
    Vec3 c = cross(a, e);
    const double n = norm(c);
    return {c[0] / n, c[1] / n, c[2] / n};
}

}  // namespace

Svd3 svd_3x3(const Mat3& a) {
    // Symmetric eigenproblem for S = a^T a by cyclic Jacobi rotations.
    Mat3 s = mat3_mul(mat3_transpose(a), a);
    Mat3 v = mat3_identity();
    double scale = 0.0;
    for (double x : s) scale += x * x;
    scale = std::sqrt(scale);

    constexpr int kMaxSweeps = 64;
    for (int sweep = 0; sweep < kMaxSweeps && off_diagonal(s) > 1e-15 * scale; ++sweep) {
        for (int p = 0; p < 2; ++p) {
            for (int q = p + 1; q < 3; ++q) {
                const double apq = s[p * 3 + q];
                if (apq == 0.0) continue;
                const double app = s[p * 3 + p];
                const double aqq = s[q * 3 + q];
                const double theta = (aqq - app) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double sn = t * c;
                // S <- J^T S J with J the (p, q) rotation.
                for (int k = 0; k < 3; ++k) {
                    const double skp = s[k * 3 + p];
                    const double skq = s[k * 3 + q];
                    s[k * 3 + p] = c * skp - sn * skq;
                    s[k * 3 + q] = sn * skp + c * skq;
                }
                for (int k = 0; k < 3; ++k) {
                    const double spk = s[p * 3 + k];
                    const double sqk = s[q * 3 + k];
                    s[p * 3 + k] = c * spk - sn * sqk;
                    s[q * 3 + k] = sn * spk + c * sqk;
                }
                for (int k = 0; k < 3; ++k) {
                    const double vkp = v[k * 3 + p];
                    const double vkq = v[k * 3 + q];
                    v[k * 3 + p] = c * vkp - sn * vkq;
                    v[k * 3 + q] = sn * vkp + c * vkq;
                }
            }
        }
    }
    if (off_diagonal(s) > 1e-12 * std::max(scale, 1e-300)) {
        throw InvariantError("svd_3x3: Jacobi iteration did not converge");
    }

    // Order eigenvectors by decreasing eigenvalue.
    std::array<int, 3> order{0, 1, 2};
    std::sort(order.begin(), order.end(), [&](int i, int j) { return s[i * 4] > s[j * 4]; });
    Mat3 vs{};
    for (int j = 0; j < 3; ++j) set_column(vs, j, column(v, order[j]));

    // U from a*v, Gram-Schmidt for stability when singular values are close
    // or vanish; the third column completes a right-handed basis.
    Svd3 out;
    out.v = vs;
    Vec3 av[3];
    for (int j = 0; j < 3; ++j) av[j] = mat3_apply(a, column(vs, j));

    Vec3 u0, u1;
    const double n0 = norm(av[0]);
    if (n0 > 0.0) {
        u0 = {av[0][0] / n0, av[0][1] / n0, av[0][2] / n0};
    } else {
        u0 = {1, 0, 0};
    }
    Vec3 w = av[1];
    const double proj = dot(w, u0);
    for (int k = 0; k < 3; ++k) w[k] -= proj * u0[k];
    const double n1 = norm(w);
    if (n1 > 1e-300 && n1 > 1e-14 * n0) {
        u1 = {w[0] / n1, w[1] / n1, w[2] / n1};
    } else {
        u1 = any_orthogonal(u0);
    }
    Vec3 u2 = cross(u0, u1);
    Mat3 u{};
    set_column(u, 0, u0);
    set_column(u, 1, u1);
    set_column(u, 2, u2);

    out.sigma = {dot(u0, av[0]), dot(u1, av[1]), dot(u2, av[2])};
    // sigma[1] can only be negative through roundoff (rank-one input); flip
    // u1 together with u2 so the basis stays right-handed.
    if (out.sigma[1] < 0) {
        out.sigma[1] = -out.sigma[1];
        out.sigma[2] = -out.sigma[2];
        for (int k = 0; k < 3; ++k) {
            u1[k] = -u1[k];
            u2[k] = -u2[k];
        }
        set_column(u, 1, u1);
        set_column(u, 2, u2);
    }
    // The last value can come out negative (u2 fixed by handedness).
    if (out.sigma[2] < 0) {
        out.sigma[2] = -out.sigma[2];
        set_column(u, 2, {-u2[0], -u2[1], -u2[2]});
    }
    out.u = u;
    // Guard against roundoff breaking the ordering of near-equal values.
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2 - i; ++j) {
            if (out.sigma[j] < out.sigma[j + 1]) {
                std::swap(out.sigma[j], out.sigma[j + 1]);
                const Vec3 uj = column(out.u, j), uk = column(out.u, j + 1);
                set_column(out.u, j, uk);
                set_column(out.u, j + 1, uj);
                const Vec3 vj = column(out.v, j), vk = column(out.v, j + 1);
                set_column(out.v, j, vk);
                set_column(out.v, j + 1, vj);
            }
        }
    }
    return out;
}

}  // namespace proxyattn

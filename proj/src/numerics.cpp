#include "delaymark/numerics.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <sstream>

namespace delaymark {

void require_square(const Mat& M, const char* name) {
  if (M.rows() != M.cols()) {
    std::ostringstream os;
    os << name << " must be square, got " << M.rows() << "x" << M.cols();
    throw std::invalid_argument(os.str());
  }
}

void require_size(const Mat& M, Index rows, Index cols, const char* name) {
  if (M.rows() != rows || M.cols() != cols) {
    std::ostringstream os;
    os << name << " must be " << rows << "x" << cols << ", got " << M.rows()
       << "x" << M.cols();
    throw std::invalid_argument(os.str());
  }
}

bool is_symmetric(const Mat& M, double tol) {
  if (M.rows() != M.cols()) return false;
  return (M - M.transpose()).cwiseAbs().maxCoeff() <=
         tol * std::max(1.0, M.cwiseAbs().maxCoeff());
}

double spectral_norm(const Mat& M) {
  if (M.size() == 0) return 0.0;
  Eigen::JacobiSVD<Mat> svd(M);
  return svd.singularValues()(0);
}

Mat psd_sqrt(const Mat& M) {
  require_square(M, "psd_sqrt input");
  Eigen::SelfAdjointEigenSolver<Mat> es(M);
  Vec lam = es.eigenvalues().cwiseMax(0.0);
  return es.eigenvectors() * lam.cwiseSqrt().asDiagonal() *
         es.eigenvectors().transpose();
}

Mat filter_dare_map(const Mat& P, const Mat& A, const Mat& C,
                    const Mat& sigma_w_eff, const Mat& sigma_v) {
  Mat S = C * P * C.transpose() + sigma_v;
  Mat gain = P * C.transpose() * S.ldlt().solve(Mat::Identity(S.rows(), S.cols()));
  return A * (P - gain * C * P) * A.transpose() + sigma_w_eff;
}

Mat control_dare_map(const Mat& delta, const Mat& A, const Mat& B,
                     const Mat& Q, const Mat& R) {
  Mat S = R + B.transpose() * delta * B;
  Mat K = S.ldlt().solve(B.transpose() * delta * A);
  return Q + A.transpose() * delta * A - A.transpose() * delta * B * K;
}

namespace {

Mat iterate_to_fixed_point(const std::function<Mat(const Mat&)>& map, Mat X,
                           const SolverOptions& opts, const char* which) {
  for (long it = 0; it < opts.max_iterations; ++it) {
    Mat next = map(X);
    double resid = (next - X).cwiseAbs().maxCoeff();
    X = 0.5 * (next + next.transpose());  // keep the iterate symmetric
    if (!X.allFinite()) {
      throw SolverError(std::string(which) + ": iterate diverged to non-finite values");
    }
    if (resid < opts.tolerance) return X;
  }
  throw SolverError(std::string(which) + ": no convergence within max_iterations");
}

}  // namespace

Mat solve_filter_dare(const Mat& A, const Mat& C, const Mat& sigma_w_eff,
                      const Mat& sigma_v, const SolverOptions& opts) {
  require_square(A, "A");
  const Index nx = A.rows();
  if (C.cols() != nx) throw std::invalid_argument("C column count must match A");
  require_size(sigma_w_eff, nx, nx, "sigma_w_eff");
  require_size(sigma_v, C.rows(), C.rows(), "sigma_v");
  auto map = [&](const Mat& P) { return filter_dare_map(P, A, C, sigma_w_eff, sigma_v); };
  return iterate_to_fixed_point(map, sigma_w_eff, opts, "filter DARE");
}

Mat solve_control_dare(const Mat& A, const Mat& B, const Mat& Q, const Mat& R,
                       const SolverOptions& opts) {
  require_square(A, "A");
  const Index nx = A.rows();
  if (B.rows() != nx) throw std::invalid_argument("B row count must match A");
  require_size(Q, nx, nx, "Q");
  require_size(R, B.cols(), B.cols(), "R");
  auto map = [&](const Mat& D) { return control_dare_map(D, A, B, Q, R); };
  return iterate_to_fixed_point(map, Q, opts, "control DARE");
}

Mat solve_discrete_lyapunov(const Mat& A, const Mat& C_rhs,
                            const SolverOptions& opts) {
  require_square(A, "A");
  require_size(C_rhs, A.rows(), A.cols(), "C_rhs");
  double rho = spectral_radius(A);
  if (rho >= 1.0) {
    std::ostringstream os;
    os << "discrete Lyapunov: spectral radius " << rho << " >= 1, no unique solution";
    throw SolverError(os.str());
  }
  const Index n = A.rows();
  Mat H;
  if (n <= 50) {
    // vec(A^T H A) = (A^T (x) A^T) vec(H); solve the n^2 linear system.
    Mat At = A.transpose();
    Mat lhs = Mat::Identity(n * n, n * n) - kron(At, At);
    Vec rhs = vec(C_rhs);
    H = unvec(lhs.partialPivLu().solve(rhs), n, n);
  } else {
    // sum_k (A^T)^k C A^k by doubling; squares the tail each pass.
    H = C_rhs;
    Mat M = A;
    for (long it = 0; it < opts.max_iterations; ++it) {
      Mat term = M.transpose() * H * M;
      if (term.cwiseAbs().maxCoeff() < opts.tolerance * 0.5) break;
      H += term;
      M = M * M;
    }
  }
  H = 0.5 * (H + H.transpose());
  double resid = (A.transpose() * H * A - H + C_rhs).cwiseAbs().maxCoeff();
  if (!(resid < std::max(opts.tolerance, 1e-10 * H.cwiseAbs().maxCoeff()))) {
    std::ostringstream os;
    os << "discrete Lyapunov: residual " << resid << " above tolerance";
    throw SolverError(os.str());
  }
  return H;
}

double spectral_radius(const Mat& M) {
  require_square(M, "spectral_radius input");
  if (M.rows() == 0) return 0.0;
  Eigen::EigenSolver<Mat> es(M, /*computeEigenvectors=*/false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

Mat kron(const Mat& A, const Mat& B) {
  Mat out(A.rows() * B.rows(), A.cols() * B.cols());
  for (Index i = 0; i < A.rows(); ++i)
    for (Index j = 0; j < A.cols(); ++j)
      out.block(i * B.rows(), j * B.cols(), B.rows(), B.cols()) = A(i, j) * B;
  return out;
}

Vec vec(const Mat& M) {
  return Eigen::Map<const Vec>(M.data(), M.size());
}

Mat unvec(const Vec& v, Index rows, Index cols) {
  if (v.size() != rows * cols) {
    throw std::invalid_argument("unvec: size mismatch");
  }
  return Eigen::Map<const Mat>(v.data(), rows, cols);
}

LiftedSolve solve_lifted_fixed_point(
    const std::function<Vec(const Vec&)>& apply_A, const Vec& omega,
    const SolverOptions& opts) {
  LiftedSolve out;
  out.v = omega;
  const double base = std::max(omega.cwiseAbs().maxCoeff(), 1.0);
  for (long it = 1; it <= opts.max_iterations; ++it) {
    Vec next = apply_A(out.v) + omega;
    double resid = (next - out.v).cwiseAbs().maxCoeff();  // equals ||v - Av - omega||
    out.v = next;
    out.iterations = it;
    out.residual = resid;
    if (resid < opts.tolerance) return out;
    if (!out.v.allFinite() || out.v.cwiseAbs().maxCoeff() > 1e12 * base) {
      throw SolverError("lifted fixed point diverged: spectral radius of the operator is >= 1");
    }
  }
  throw SolverError("lifted fixed point: no convergence within max_iterations");
}

}  // namespace delaymark

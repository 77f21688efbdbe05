#pragma once

#include <Eigen/Dense>
#include <functional>
#include <stdexcept>
#include <string>

namespace delaymark {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using Index = Eigen::Index;

/// Thrown when an iterative solver fails to converge or a precondition
/// (stability, definiteness, dimensions) rules out a solution.
class SolverError : public std::runtime_error {
 public:
  explicit SolverError(const std::string& what) : std::runtime_error(what) {}
};

struct SolverOptions {
  double tolerance = 1e-12;   // on the equation residual, infinity norm
  long max_iterations = 100000;
};

// Riccati fixed-point maps, exposed for residual checks in tests.
Mat filter_dare_map(const Mat& P, const Mat& A, const Mat& C,
                    const Mat& sigma_w_eff, const Mat& sigma_v);
Mat control_dare_map(const Mat& delta, const Mat& A, const Mat& B,
                     const Mat& Q, const Mat& R);

// P = A [P - P C^T (C P C^T + sigma_v)^-1 C P] A^T + sigma_w_eff,
// solved by value iteration from P0 = sigma_w_eff.
Mat solve_filter_dare(const Mat& A, const Mat& C, const Mat& sigma_w_eff,
                      const Mat& sigma_v, const SolverOptions& opts = {});

// delta = Q + A^T delta A - A^T delta B (R + B^T delta B)^-1 B^T delta A,
// solved by value iteration from delta0 = Q.
Mat solve_control_dare(const Mat& A, const Mat& B, const Mat& Q, const Mat& R,
                       const SolverOptions& opts = {});

// A^T H A - H = -C_rhs with rho(A) < 1. Dense vec-identity solve for small
// matrices, doubling accumulation of sum_k (A^T)^k C_rhs A^k otherwise.
Mat solve_discrete_lyapunov(const Mat& A, const Mat& C_rhs,
                            const SolverOptions& opts = {});

double spectral_radius(const Mat& M);

Mat kron(const Mat& A, const Mat& B);
Vec vec(const Mat& M);                           // column-stacking
Mat unvec(const Vec& v, Index rows, Index cols);

struct LiftedSolve {
  Vec v;
  long iterations = 0;
  double residual = 0.0;
};

// Solves v = apply_A(v) + omega by fixed-point iteration. apply_A must be a
// linear contraction (spectral radius < 1); divergence is detected from norm
// growth and reported as SolverError.
LiftedSolve solve_lifted_fixed_point(
    const std::function<Vec(const Vec&)>& apply_A, const Vec& omega,
    const SolverOptions& opts = {});

// Helpers shared across modules.
bool is_symmetric(const Mat& M, double tol = 1e-9);
void require_square(const Mat& M, const char* name);
void require_size(const Mat& M, Index rows, Index cols, const char* name);
double spectral_norm(const Mat& M);

// Symmetric PSD square root (eigendecomposition, negative ripple clamped).
Mat psd_sqrt(const Mat& M);

}  // namespace delaymark

#pragma once

#include <Eigen/Dense>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

namespace bilinmpc {

/// One coefficient of an equality constraint (or of the objective) on a PSD
/// block: adds `value` to entry (i, j) of the per-row data matrix A_k. The
/// accumulated A_k must be symmetric; helpers below emit mirrored pairs.
struct PsdTerm {
    int block;
    int i;
    int j;
    double value;
};

/// Affine equality  sum_j <A_j, X_j> + sum_i free[i] * y_i = rhs.
struct EqRow {
    std::vector<PsdTerm> psd;
    std::vector<std::pair<int, double>> free_terms;
    double rhs = 0.0;

    /// Adds v * X_ij with i <= j counted once (entry convention).
    void add_psd_entry(int block, int i, int j, double v);
    void add_free(int var, double v);
};

/// Block-diagonal SDP in standard primal form:
///   minimize    obj_free . y + sum_j <C_j, X_j>
///   subject to  <A_kj, X_j> + a_k . y = b_k   for every row k
///               X_j PSD,  y free.
struct SdpProblem {
    int free_dim = 0;
    std::vector<int> psd_blocks;
    Eigen::VectorXd obj_free;   // empty means all-zero
    std::vector<PsdTerm> obj_psd;
    std::vector<EqRow> rows;

    int add_free_var();
    int add_psd_block(int size);
    int num_rows() const { return static_cast<int>(rows.size()); }
};

struct SdpDiagnostics {
    std::vector<std::string> errors;
    std::vector<std::string> warnings;
    bool ok() const { return errors.empty() && warnings.empty(); }
};

/// Structural checks: dimension consistency, per-row symmetry, dangling
/// variables, and rank-deficient (redundant) equality rows.
SdpDiagnostics validate(const SdpProblem &p);

enum class SdpStatus {
    Optimal,          // residuals within tolerance (or the relaxed band on a stall)
    PrimalInfeasible, // Farkas ray found
    DualInfeasible,   // improving ray found
    IllPosed,         // both homogenizing variables collapsed, no certificate
    IterationLimit,   // stopped without certificate (stall or iteration budget)
};

std::string to_string(SdpStatus s);

struct SolveOptions {
    double tol_primal = 1e-8;
    double tol_dual = 1e-8;
    double tol_gap = 1e-8;
    double tol_infeas = 1e-8;
    int max_iters = 200;
    bool verbose = false;

    /// When progress stops before the tolerances are met, the best iterate is
    /// still reported Optimal if its consolidated relative residual is within
    /// accept_factor * max(tol_primal, tol_dual, tol_gap); its achieved
    /// residuals are reported in the solution. Set to 1 to disable the
    /// relaxed band.
    double accept_factor = 300.0;
};

struct SdpSolution {
    SdpStatus status = SdpStatus::IterationLimit;
    Eigen::VectorXd y;                  // free variables
    std::vector<Eigen::MatrixXd> X;     // primal PSD blocks
    Eigen::VectorXd eq_dual;            // multiplier per equality row
    std::vector<Eigen::MatrixXd> S;     // dual slack blocks
    double objective = 0.0;
    double primal_residual = 0.0;
    double dual_residual = 0.0;
    double duality_gap = 0.0;
    int iterations = 0;
    double solve_seconds = 0.0;

    // PrimalInfeasible: eq_dual is a Farkas ray with rhs . eq_dual = 1 and
    // S = -sum_k eq_dual[k] A_k PSD, free part of A^T eq_dual zero.
    // DualInfeasible: (y, X) is an improving ray with objective -1, A-image zero.
};

/// Primal-dual path-following interior-point solve on the homogeneous
/// self-dual embedding. Malformed problems throw std::invalid_argument.
SdpSolution solve(const SdpProblem &p, const SolveOptions &opts = {});

/// Plain-text sparse dump for cross-checking against external solvers.
/// Documented in detail in the README; indices are 1-based, constraint
/// index 0 denotes the objective and block 0 a free-variable column.
void dump_problem(const SdpProblem &p, std::ostream &os);
SdpProblem load_problem(std::istream &is);

} // namespace bilinmpc

#pragma once

#include "bilinmpc/affine.hpp"
#include "bilinmpc/poly.hpp"
#include "bilinmpc/sdp.hpp"
#include "bilinmpc/soscert.hpp"
#include "bilinmpc/sysdata.hpp"

#include <limits>
#include <string>
#include <vector>

namespace bilinmpc {

/// Full mode keeps the initial-state anchor and the input/state constraint
/// blocks; robust-lqr drops them and pins the scale with H >= I instead.
enum class SynthesisMode { Full, RobustLqr };

SynthesisMode mode_from_string(const std::string &s);
std::string to_string(SynthesisMode mode);

/// Everything the synthesis program needs apart from the data blocks and the
/// current state. The stage cost is ||u||^2_R + ||x||^2_Q; the constraint
/// ellipsoids are ||u||^2_Su <= 1 and ||x||^2_Sx <= 1; d is the fixed
/// strictly-positive denominator of degree exactly 2*alpha.
struct SynthesisConfig {
    Eigen::MatrixXd Q;   // n x n, SPD
    Eigen::MatrixXd R;   // m x m, SPD
    Eigen::MatrixXd Su;  // m x m, SPD (full mode only)
    Eigen::MatrixXd Sx;  // n x n, SPD (full mode only)
    double c = 0.0;      // must exceed lambda_min(Q)
    Polynomial d;
    int alpha = 2;
    SynthesisMode mode = SynthesisMode::Full;

    /// Feasibility-classification threshold for the two-phase solve.
    ///
    /// Phase one maximizes the smallest admissible Gram eigenvalue lambda of
    /// the SOS blocks (every other block stays exact, lambda is capped at 1
    /// so the phase-one program is always bounded). The joint margin lambda_J
    /// over both SOS blocks decides the easy cases: lambda_J >= -margin_tol
    /// is feasible, lambda_J < -100*margin_tol is infeasible. In between the
    /// classification must not be confounded by a thin input-constraint
    /// block, whose scale shrinks as the input bound tightens, so a second
    /// margin solve isolates the performance block: the input block is
    /// granted the fixed slack phase two would apply (|lambda_J| +
    /// 2*margin_tol) and the margin lambda_R is maximized over the
    /// performance block alone. The program is classified infeasible when
    /// lambda_R < -margin_tol.
    ///
    /// When classified feasible, phase two minimizes gamma with both SOS
    /// blocks shifted by sigma = min(0, lambda_J - 2*margin_tol), which
    /// restores an interior of width 2*margin_tol around the phase-two
    /// constraint set whenever the exact program is degenerate (lambda_J <=
    /// 0) or nearly so. The returned Gram matrices then certify S(x) +
    /// |sigma| * m(x) * I instead of the nominal block S(x), where m(x) is
    /// the sum of squares of the Gram basis monomials; the applied |sigma|
    /// is reported in SynthesisStats::applied_slack. When lambda_J >=
    /// 2*margin_tol no shift is applied and the solve is exact. Setting
    /// margin_tol = 0 skips phase one entirely.
    double margin_tol = 1.2e-6;

    int n() const { return static_cast<int>(Q.rows()); }
    int m() const { return static_cast<int>(R.rows()); }

    /// Throws std::invalid_argument on any broken invariant (dimensions,
    /// definiteness, c <= lambda_min(Q), deg d != 2*alpha, d not strictly
    /// positive, margin_tol negative or not finite).
    void validate() const;

    /// 0.01 + (1 + sum_i x_i)^(2*alpha), the default denominator.
    static Polynomial default_denominator(int n, int alpha);
};

/// Upper-triangular U with U^T U = A (Cholesky). Throws unless A is SPD.
Eigen::MatrixXd matrix_sqrt_factor(const Eigen::MatrixXd &A);

/// One assembled instance of the synthesis program, with enough bookkeeping
/// to instantiate every piece of the solution afterwards.
struct AssembledProgram {
    SdpProblem sdp;
    VarRegistry reg;
    LinExpr gamma;
    AffinePolyMatrix H;        // n x n, symmetric in the handles
    AffinePolyMatrix L;        // m x n, coefficients free per monomial
    std::vector<AffinePoly> tau;
    std::vector<int> tau_blocks;
    AffinePolyMatrix robust_sos;   // the big SOS matrix constraint, kept for audits
    CompiledBlock robust_blk;
    AffinePolyMatrix input_sos;    // input-constraint SOS block (full mode)
    CompiledBlock input_blk;
    std::vector<CompiledBlock> lmis;
    int n = 0, m = 0, T = 0;
};

/// Builds the whole program for state xt: objective gamma; the initial-state
/// LMI and the tau Gram blocks; the robust performance SOS matrix of size
/// 4n+2m+mn; the state LMI and input SOS constraint (full mode). In
/// robust-lqr mode xt is ignored and may be empty.
AssembledProgram assemble_program(const SynthesisConfig &cfg, const Eigen::VectorXd &xt,
                                  const std::vector<DataQmiBlock> &blocks);

struct SynthesisStats {
    int iterations = 0;          // iterations of the final (phase-two) solve
    double solve_seconds = 0.0;  // seconds of the final solve
    double primal_residual = 0.0;
    double dual_residual = 0.0;
    double duality_gap = 0.0;
    int num_rows = 0;            // dimensions of the nominal program
    int num_blocks = 0;
    int num_free = 0;

    /// Phase-one results (see SynthesisConfig::margin_tol). margin is the
    /// joint Gram margin lambda_J over all SOS blocks; margin_core is the
    /// performance-block margin lambda_R from the disambiguation solve and
    /// stays NaN unless that solve ran. Either is NaN when the corresponding
    /// solve was skipped or unusable. applied_slack is the largest diagonal
    /// slack coefficient certified by any returned Gram: the phase-two shift
    /// |sigma| plus whatever eigenvalue lift the certificate polish needed.
    /// When the result is classified infeasible the top-level
    /// iteration/residual fields describe the last phase-one solve;
    /// phase1_iterations/phase1_seconds accumulate over both phase-one
    /// solves.
    double margin = std::numeric_limits<double>::quiet_NaN();
    double margin_core = std::numeric_limits<double>::quiet_NaN();
    double applied_slack = 0.0;
    int phase1_iterations = 0;
    double phase1_seconds = 0.0;
};

struct SynthesisResult {
    SdpStatus status = SdpStatus::IterationLimit;
    bool feasible = false;       // status == Optimal
    double gamma = 0.0;
    Eigen::MatrixXd H;
    PolyMatrix L;                // m x n, degree <= 2*alpha - 1
    Polynomial d;                // copied from the config for self-contained replay
    std::vector<Eigen::MatrixXd> tau_grams;
    /// SOS Grams of the matrix constraints, polished so each one reproduces
    /// its certified matrix exactly: the least-norm row correction is applied
    /// and any eigenvalue dip is lifted into the slack term.
    std::vector<GramCertificate> certificates;
    /// The matrices the Grams certify, same order. When stats.applied_slack
    /// is positive these carry an extra slack * m(x) * I diagonal term, where
    /// slack is the phase-two shift plus that certificate's polish lift.
    std::vector<PolyMatrix> sos_instances;
    /// Infeasibility ray over the equality rows when the exact solve produced
    /// one; empty when infeasibility was established by phase-one margin
    /// classification.
    Eigen::VectorXd farkas;
    SynthesisStats stats;
};

/// The margin-maximization variant of an SDP: max lambda such that the rows
/// hold with every flagged PSD block X replaced by X + lambda * I. lambda is
/// capped at 1 (a 1x1 slack block) so the value stays bounded on positively
/// homogeneous programs. lambda* is y[lambda_var] of an Optimal solution; a
/// negative value measures how far the flagged blocks are from admitting a
/// PSD solution.
struct GramMarginProgram {
    SdpProblem sdp;
    int lambda_var = -1;
};

GramMarginProgram gram_margin_program(const SdpProblem &base,
                                      const std::vector<char> &flagged);

/// Rewrites the rows of p for the substitution X -> X + sigma * I on the
/// flagged blocks: a PSD solution of the rewritten rows certifies the nominal
/// target plus |sigma| times the squared-norm polynomial of the Gram basis on
/// the diagonal.
void apply_gram_shift(SdpProblem &p, const std::vector<char> &flagged, double sigma);

/// Assembles and solves the program at state xt. With margin_tol > 0 this is
/// the two-phase scheme documented on SynthesisConfig::margin_tol: phase one
/// classifies feasibility by margin maximization, phase two minimizes gamma
/// with the derived Gram slack. When phase one does not reach optimality the
/// nominal program is solved exactly instead.
SynthesisResult synthesize(const SynthesisConfig &cfg, const Eigen::VectorXd &xt,
                           const std::vector<DataQmiBlock> &blocks,
                           const SolveOptions &opts = {});

/// u(x) = K(x) x / d(x) with K = L H^-1 and the cost matrix P = gamma H^-1.
struct RationalController {
    PolyMatrix K;        // m x n
    Polynomial d;
    Eigen::MatrixXd P;   // n x n
    double gamma = 0.0;
};

/// Throws std::invalid_argument unless res is Optimal, std::runtime_error if
/// H is numerically singular (condition number above 1e12).
RationalController extract_controller(const SynthesisResult &res);

Eigen::VectorXd evaluate_input(const RationalController &ctrl, const Eigen::VectorXd &x);

} // namespace bilinmpc

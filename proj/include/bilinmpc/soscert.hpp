#pragma once

#include "bilinmpc/affine.hpp"
#include "bilinmpc/poly.hpp"
#include "bilinmpc/sdp.hpp"

#include <string>
#include <vector>

namespace bilinmpc {

/// "S(x) is an SOS matrix" with S affine in registered decision variables.
/// The Gram basis is the full monomial basis of degree <= basis_degree;
/// strict_eps > 0 certifies S - eps*I instead (strict positivity margin).
struct SosConstraint {
    std::string id;
    AffinePolyMatrix S;
    int basis_degree = 0;
    double strict_eps = 0.0;
};

/// What compile_sos / compile_lmi appended to the SdpProblem.
struct CompiledBlock {
    std::string id;
    int block = -1;             // PSD block index (Gram or LMI slack)
    int first_row = -1;         // first equality row appended
    int num_rows = 0;
};

/// Gram matrix returned for one compiled SOS constraint, plus the coefficient
/// mismatch found when re-expanding it against the instantiated S.
struct GramCertificate {
    std::string constraint_id;
    Eigen::MatrixXd Q;
    double residual = 0.0;
};

struct VerifyReport {
    bool ok = false;
    double lambda_min = 0.0;
    double residual = 0.0;
};

/// Gram parameterization + coefficient matching: appends one PSD block of
/// size k*|basis| and one equality row per (entry i<=j, monomial of degree
/// <= 2*basis_degree). Throws std::invalid_argument on degree overflow or an
/// asymmetric S.
CompiledBlock compile_sos(const SosConstraint &c, const VarRegistry &reg, SdpProblem &p);

/// Constant (x-free) symmetric LMI  M(vars) PSD: appends a slack block pinned
/// entry-wise to the affine expression. Throws on asymmetry or x-dependence.
CompiledBlock compile_lmi(const std::string &id, const AffinePolyMatrix &M,
                          const VarRegistry &reg, SdpProblem &p);

/// Independent check of a returned Gram matrix against the numeric S it is
/// supposed to certify: PSD up to 1e-6*(1+||Q||_F) and coefficient residual
/// up to 1e-6*(1+max |coeff of S|).
VerifyReport verify_certificate(const PolyMatrix &S, const Eigen::MatrixXd &Q,
                                int basis_degree);

/// True iff d - eps is SOS-certifiable (compile + internal solve).
bool check_strictly_positive(const Polynomial &d, int basis_degree, double eps = 1e-8);

} // namespace bilinmpc

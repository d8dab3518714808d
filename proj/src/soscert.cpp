#include "bilinmpc/soscert.hpp"

#include <Eigen/Eigenvalues>
#include <map>
#include <stdexcept>

namespace bilinmpc {

namespace {

// All ordered basis pairs (a,b) grouped by the monomial B[a]+B[b].
std::map<MultiIndex, std::vector<std::pair<int, int>>> pair_table(const MonomialBasis &B) {
    std::map<MultiIndex, std::vector<std::pair<int, int>>> t;
    for (int a = 0; a < B.size(); ++a)
        for (int b = 0; b < B.size(); ++b)
            t[B[a] + B[b]].emplace_back(a, b);
    return t;
}

} // namespace

CompiledBlock compile_sos(const SosConstraint &c, const VarRegistry &reg, SdpProblem &p) {
    const AffinePolyMatrix &S = c.S;
    if (S.rows() != S.cols())
        throw std::invalid_argument("compile_sos: S must be square");
    if (!S.is_symmetric())
        throw std::invalid_argument("compile_sos: S must be symmetric");
    if (c.basis_degree < 0)
        throw std::invalid_argument("compile_sos: negative basis degree");
    if (S.degree() > 2 * c.basis_degree)
        throw std::invalid_argument("compile_sos: degree overflow (deg S = " +
                                    std::to_string(S.degree()) + " > 2*" +
                                    std::to_string(c.basis_degree) + ")");
    const int k = S.rows();
    const int n = S.nvars();
    const MonomialBasis B(n, c.basis_degree);
    const MonomialBasis B2(n, 2 * c.basis_degree);
    const auto pairs = pair_table(B);

    CompiledBlock out;
    out.id = c.id;
    out.block = p.add_psd_block(k * B.size());
    out.first_row = p.num_rows();

    for (int i = 0; i < k; ++i) {
        for (int j = i; j < k; ++j) {
            for (int m = 0; m < B2.size(); ++m) {
                const MultiIndex &mono = B2[m];
                EqRow row;
                for (const auto &[a, b] : pairs.at(mono))
                    row.add_psd_entry(out.block, a * k + i, b * k + j, 1.0);
                LinExpr e = S.at(i, j).coeff(mono);
                if (i == j && mono.degree() == 0)
                    e.constant -= c.strict_eps;
                reg.subtract_into(e, row);
                row.rhs = e.constant;
                p.rows.push_back(std::move(row));
            }
        }
    }
    out.num_rows = p.num_rows() - out.first_row;
    return out;
}

CompiledBlock compile_lmi(const std::string &id, const AffinePolyMatrix &M,
                          const VarRegistry &reg, SdpProblem &p) {
    if (M.rows() != M.cols())
        throw std::invalid_argument("compile_lmi: M must be square");
    if (!M.is_symmetric())
        throw std::invalid_argument("compile_lmi: M must be symmetric");
    if (M.degree() > 0)
        throw std::invalid_argument("compile_lmi: M must not depend on x");
    const int k = M.rows();
    const MultiIndex one = MultiIndex::zero(M.nvars());

    CompiledBlock out;
    out.id = id;
    out.block = p.add_psd_block(k);
    out.first_row = p.num_rows();
    for (int i = 0; i < k; ++i) {
        for (int j = i; j < k; ++j) {
            EqRow row;
            row.add_psd_entry(out.block, i, j, 1.0);
            const LinExpr e = M.at(i, j).coeff(one);
            reg.subtract_into(e, row);
            row.rhs = e.constant;
            p.rows.push_back(std::move(row));
        }
    }
    out.num_rows = p.num_rows() - out.first_row;
    return out;
}

VerifyReport verify_certificate(const PolyMatrix &S, const Eigen::MatrixXd &Q,
                                int basis_degree) {
    if (S.rows() != S.cols())
        throw std::invalid_argument("verify_certificate: S must be square");
    const MonomialBasis B(S.nvars(), basis_degree);
    if (Q.rows() != Q.cols() || Q.rows() != static_cast<Eigen::Index>(B.size()) * S.rows())
        throw std::invalid_argument("verify_certificate: Gram size mismatch");

    VerifyReport rep;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (Q + Q.transpose()),
                                                      Eigen::EigenvaluesOnly);
    rep.lambda_min = es.eigenvalues().minCoeff();

    const PolyMatrix expanded = gram_expand(0.5 * (Q + Q.transpose()), B, S.rows());
    double residual = 0.0, scale = 0.0;
    for (int i = 0; i < S.rows(); ++i) {
        for (int j = 0; j < S.cols(); ++j) {
            const Polynomial diff = expanded.at(i, j) - S.at(i, j);
            for (const auto &[mi, c] : diff.terms())
                residual = std::max(residual, std::abs(c));
            for (const auto &[mi, c] : S.at(i, j).terms())
                scale = std::max(scale, std::abs(c));
        }
    }
    rep.residual = residual;
    rep.ok = rep.lambda_min >= -1e-6 * (1 + Q.norm()) && residual <= 1e-6 * (1 + scale);
    return rep;
}

bool check_strictly_positive(const Polynomial &d, int basis_degree, double eps) {
    // d - eps is SOS iff eps <= max { e : d - e is SOS }. Solving for the
    // maximal margin instead of testing feasibility at exactly eps keeps the
    // answer well-conditioned when eps sits at the solver's tolerance scale.
    SdpProblem p;
    VarRegistry reg;
    const int margin = reg.add_free(p, "margin");

    AffinePoly body = AffinePoly::from(d);
    body.add_term(MultiIndex::zero(d.nvars()), LinExpr::var(margin, -1.0));
    AffinePolyMatrix S(1, 1, d.nvars());
    S.at(0, 0) = body;
    compile_sos({"strict_positivity", S, basis_degree, 0.0}, reg, p);

    p.obj_free = -Eigen::VectorXd::Ones(1);  // maximize the margin
    const SdpSolution sol = solve(p);
    if (sol.status == SdpStatus::PrimalInfeasible)
        return false;
    if (sol.status != SdpStatus::Optimal)
        throw std::runtime_error("check_strictly_positive: solver returned " +
                                 to_string(sol.status));
    const double best = sol.y[0];
    return best >= eps * (1 - 1e-9) - 1e-12;
}

} // namespace bilinmpc

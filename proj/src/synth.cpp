#include "bilinmpc/synth.hpp"

#include <cmath>
#include <map>
#include <stdexcept>

namespace bilinmpc {

namespace {

void require(bool cond, const std::string &msg) {
    if (!cond) throw std::invalid_argument(msg);
}

void check_spd(const Eigen::MatrixXd &A, const std::string &who) {
    require(A.rows() > 0 && A.rows() == A.cols(), who + " must be square and nonempty");
    require((A - A.transpose()).cwiseAbs().maxCoeff() <=
                1e-12 * (1.0 + A.cwiseAbs().maxCoeff()),
            who + " must be symmetric");
    Eigen::LLT<Eigen::MatrixXd> llt(A);
    require(llt.info() == Eigen::Success, who + " must be positive definite");
}

Eigen::MatrixXd spd_inverse(const Eigen::MatrixXd &A) {
    Eigen::MatrixXd inv =
        Eigen::LLT<Eigen::MatrixXd>(A).solve(Eigen::MatrixXd::Identity(A.rows(), A.rows()));
    return 0.5 * (inv + inv.transpose());
}

/// Mirrors kron_with_state for matrices with affine entries: row (i*n + k, j)
/// carries L(i,j) * x_k.
AffinePolyMatrix affine_kron_with_state(const AffinePolyMatrix &L) {
    const int m = L.rows(), n = L.cols();
    AffinePolyMatrix K(m * n, n, L.nvars());
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            for (int k = 0; k < n; ++k)
                K.at(i * n + k, j) = L.at(i, j) * Polynomial::variable(n, k);
    return K;
}

/// Constant matrix times affine matrix.
AffinePolyMatrix const_times(const Eigen::MatrixXd &C, const AffinePolyMatrix &M) {
    require(static_cast<int>(C.cols()) == M.rows(), "const_times: inner dimension mismatch");
    AffinePolyMatrix out(static_cast<int>(C.rows()), M.cols(), M.nvars());
    for (int i = 0; i < out.rows(); ++i)
        for (int j = 0; j < out.cols(); ++j) {
            AffinePoly e(M.nvars());
            for (int k = 0; k < M.rows(); ++k)
                if (C(i, k) != 0.0) e = e + M.at(k, j) * C(i, k);
            out.at(i, j) = e;
        }
    return out;
}

/// dst[i0.., j0..] += src, entry-wise.
void add_block(AffinePolyMatrix &dst, int i0, int j0, const AffinePolyMatrix &src) {
    for (int i = 0; i < src.rows(); ++i)
        for (int j = 0; j < src.cols(); ++j)
            dst.at(i0 + i, j0 + j) = dst.at(i0 + i, j0 + j) + src.at(i, j);
}

/// Sum of the diagonal coefficients a row places on the flagged blocks.
/// Substituting X -> X + sigma * I on those blocks changes the row's
/// left-hand side by sigma times this number.
double diag_weight(const EqRow &row, const std::vector<char> &flagged) {
    double tr = 0.0;
    for (const PsdTerm &t : row.psd)
        if (t.i == t.j && flagged[static_cast<size_t>(t.block)]) tr += t.value;
    return tr;
}

/// m(x) = sum_a z_a(x)^2 over the monomial basis of degree <= basis_degree.
Polynomial basis_norm_squared(int n, int basis_degree) {
    const MonomialBasis B(n, basis_degree);
    Polynomial out(n);
    for (int a = 0; a < B.size(); ++a) out.add_term(B[a] + B[a], 1.0);
    return out;
}

/// Polishes the Gram of one compiled SOS block so its certificate is exact.
///
/// Every Gram entry appears in exactly one coefficient-matching row, so the
/// least-norm correction that zeroes the row residuals decomposes per row:
/// spread -residual over the row's entries of this block in proportion to
/// their coefficients. Any eigenvalue dip the correction causes is lifted by
/// eta * I, which shifts the certified matrix by exactly eta * m(x) * I;
/// the returned eta is folded into the reported slack.
double polish_sos_gram(const SdpProblem &sdp, const CompiledBlock &blk,
                       const SdpSolution &sol, Eigen::MatrixXd &X) {
    std::map<std::pair<int, int>, double> w; // coalesced entry coefficients
    for (int r = blk.first_row; r < blk.first_row + blk.num_rows; ++r) {
        const EqRow &row = sdp.rows[static_cast<size_t>(r)];
        double lhs = 0.0;
        w.clear();
        for (const PsdTerm &t : row.psd) {
            lhs += t.value * sol.X[static_cast<size_t>(t.block)](t.i, t.j);
            if (t.block == blk.block)
                w[{std::min(t.i, t.j), std::max(t.i, t.j)}] += t.value;
        }
        for (const auto &[idx, coef] : row.free_terms) lhs += coef * sol.y(idx);
        double wsum = 0.0;
        for (const auto &[ij, v] : w) wsum += v * v;
        if (wsum <= 0.0) continue;
        const double scale = (row.rhs - lhs) / wsum;
        for (const auto &[ij, v] : w) {
            X(ij.first, ij.second) += scale * v;
            if (ij.first != ij.second) X(ij.second, ij.first) += scale * v;
        }
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(X);
    const double eta = std::max(0.0, -es.eigenvalues().minCoeff());
    if (eta > 0.0)
        X += eta * Eigen::MatrixXd::Identity(X.rows(), X.cols());
    return eta;
}

} // namespace

SynthesisMode mode_from_string(const std::string &s) {
    if (s == "full") return SynthesisMode::Full;
    if (s == "robust-lqr") return SynthesisMode::RobustLqr;
    throw std::invalid_argument("unknown synthesis mode '" + s +
                                "' (expected 'full' or 'robust-lqr')");
}

std::string to_string(SynthesisMode mode) {
    return mode == SynthesisMode::Full ? "full" : "robust-lqr";
}

GramMarginProgram gram_margin_program(const SdpProblem &base,
                                      const std::vector<char> &flagged) {
    GramMarginProgram mp;
    mp.sdp = base;
    mp.lambda_var = mp.sdp.add_free_var();
    const int cap = mp.sdp.add_psd_block(1);
    for (EqRow &row : mp.sdp.rows) {
        const double tr = diag_weight(row, flagged);
        if (tr != 0.0) row.add_free(mp.lambda_var, tr);
    }
    EqRow caprow;
    caprow.add_free(mp.lambda_var, 1.0);
    caprow.add_psd_entry(cap, 0, 0, 1.0);
    caprow.rhs = 1.0;
    mp.sdp.rows.push_back(std::move(caprow));
    mp.sdp.obj_free = Eigen::VectorXd::Zero(mp.sdp.free_dim);
    mp.sdp.obj_free(mp.lambda_var) = -1.0; // maximize lambda
    mp.sdp.obj_psd.clear();
    return mp;
}

void apply_gram_shift(SdpProblem &p, const std::vector<char> &flagged, double sigma) {
    for (EqRow &row : p.rows) {
        const double tr = diag_weight(row, flagged);
        if (tr != 0.0) row.rhs -= sigma * tr;
    }
}

Polynomial SynthesisConfig::default_denominator(int n, int alpha) {
    Polynomial base = Polynomial::constant(n, 1.0);
    for (int i = 0; i < n; ++i) base = base + Polynomial::variable(n, i);
    return Polynomial::constant(n, 0.01) + base.pow(2 * alpha);
}

void SynthesisConfig::validate() const {
    check_spd(Q, "SynthesisConfig: Q");
    check_spd(R, "SynthesisConfig: R");
    if (mode == SynthesisMode::Full) {
        check_spd(Su, "SynthesisConfig: Su");
        check_spd(Sx, "SynthesisConfig: Sx");
        require(Su.rows() == m(), "SynthesisConfig: Su must match the input dimension");
        require(Sx.rows() == n(), "SynthesisConfig: Sx must match the state dimension");
    }
    require(alpha >= 1, "SynthesisConfig: alpha must be at least 1");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Q);
    require(c > es.eigenvalues().minCoeff(),
            "SynthesisConfig: c must exceed the smallest eigenvalue of Q");
    require(d.nvars() == n(), "SynthesisConfig: d must be a polynomial in the state");
    require(d.degree() == 2 * alpha, "SynthesisConfig: d must have degree exactly 2*alpha");
    require(std::isfinite(margin_tol) && margin_tol >= 0.0,
            "SynthesisConfig: margin_tol must be finite and nonnegative");
    if (!check_strictly_positive(d, alpha))
        throw std::invalid_argument("SynthesisConfig: d must be strictly positive "
                                    "(certifiably, with a sum-of-squares margin)");
}

Eigen::MatrixXd matrix_sqrt_factor(const Eigen::MatrixXd &A) {
    check_spd(A, "matrix_sqrt_factor: argument");
    Eigen::LLT<Eigen::MatrixXd> llt(A);
    return llt.matrixU();
}

AssembledProgram assemble_program(const SynthesisConfig &cfg, const Eigen::VectorXd &xt,
                                  const std::vector<DataQmiBlock> &blocks) {
    cfg.validate();
    const int n = cfg.n(), m = cfg.m();
    const int q = 2 * n + m + m * n;
    require(!blocks.empty(), "assemble_program: need at least one data block");
    for (const DataQmiBlock &b : blocks)
        require(b.N.rows() == q && b.N.cols() == q,
                "assemble_program: data block size does not match the configured dimensions");
    if (cfg.mode == SynthesisMode::Full)
        require(xt.size() == n, "assemble_program: xt has wrong size");

    AssembledProgram ap;
    ap.n = n;
    ap.m = m;
    ap.T = static_cast<int>(blocks.size());

    // --- decision variables ---
    const int hg = ap.reg.add_free(ap.sdp, "gamma");
    ap.gamma = LinExpr::var(hg);

    ap.H = AffinePolyMatrix(n, n, n);
    for (int i = 0; i < n; ++i)
        for (int j = i; j < n; ++j) {
            const int h = ap.reg.add_free(ap.sdp, "H(" + std::to_string(i) + "," +
                                                      std::to_string(j) + ")");
            ap.H.at(i, j) = AffinePoly::expr(n, LinExpr::var(h));
            ap.H.at(j, i) = ap.H.at(i, j);
        }

    const MonomialBasis lbasis(n, 2 * cfg.alpha - 1);
    ap.L = AffinePolyMatrix(m, n, n);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            AffinePoly e(n);
            for (const MultiIndex &mono : lbasis.monomials()) {
                const int h = ap.reg.add_free(ap.sdp, "L(" + std::to_string(i) + "," +
                                                          std::to_string(j) + ")[" +
                                                          mono.str() + "]");
                e.add_term(mono, LinExpr::var(h));
            }
            ap.L.at(i, j) = e;
        }

    const MonomialBasis tbasis(n, cfg.alpha);
    const int ts = tbasis.size();
    for (int i = 0; i < ap.T; ++i) {
        const int blk = ap.sdp.add_psd_block(ts);
        ap.tau_blocks.push_back(blk);
        AffinePoly ti(n);
        for (int a = 0; a < ts; ++a)
            for (int b = a; b < ts; ++b) {
                const int h = ap.reg.add_psd_entry("tau" + std::to_string(i) + "[" +
                                                       std::to_string(a) + "," +
                                                       std::to_string(b) + "]",
                                                   blk, a, b);
                ti.add_term(tbasis[a] + tbasis[b], LinExpr::var(h, a == b ? 1.0 : 2.0));
            }
        ap.tau.push_back(ti);
    }

    // --- multiplier aggregate M(tau) ---
    AffinePolyMatrix Mtau(q, q, n);
    for (int r = 0; r < q; ++r)
        for (int c = r; c < q; ++c) {
            AffinePoly e(n);
            for (int i = 0; i < ap.T; ++i) {
                const double w = blocks[static_cast<size_t>(i)].N(r, c);
                if (w != 0.0) e = e + ap.tau[static_cast<size_t>(i)] * w;
            }
            Mtau.at(r, c) = e;
            Mtau.at(c, r) = e;
        }

    // --- the robust performance SOS matrix, of size q + n + (m + n) ---
    const int D = q + n + m + n;
    const Eigen::MatrixXd MR = matrix_sqrt_factor(cfg.R);
    const Eigen::MatrixXd MQ = matrix_sqrt_factor(cfg.Q);
    const AffinePolyMatrix Hd = ap.H * cfg.d;
    const AffinePolyMatrix Lkron = affine_kron_with_state(ap.L);

    AffinePolyMatrix S(D, D, n);
    add_block(S, 0, 0, Mtau * -1.0);
    AffinePolyMatrix HgI = ap.H; // H - (gamma/c) I
    for (int i = 0; i < n; ++i)
        HgI.at(i, i) = HgI.at(i, i) + AffinePoly::expr(n, LinExpr::var(hg, -1.0 / cfg.c));
    add_block(S, 0, 0, HgI * cfg.d);

    add_block(S, n, q, Hd);
    add_block(S, q, n, Hd);
    add_block(S, 2 * n, q, ap.L);
    add_block(S, q, 2 * n, ap.L.transpose());
    add_block(S, 2 * n + m, q, Lkron);
    add_block(S, q, 2 * n + m, Lkron.transpose());

    add_block(S, q, q, Hd);

    AffinePolyMatrix Phi(m + n, n, n);
    Phi.place(0, 0, const_times(MR, ap.L));
    Phi.place(m, 0, const_times(MQ, Hd));
    add_block(S, q, q + n, Phi.transpose());
    add_block(S, q + n, q, Phi);

    const AffinePoly gamma_d = AffinePoly::expr(n, ap.gamma) * cfg.d;
    for (int i = 0; i < m + n; ++i) S.at(q + n + i, q + n + i) = gamma_d;

    ap.robust_sos = S;
    ap.robust_blk = compile_sos({"robust-performance", S, cfg.alpha, 0.0}, ap.reg, ap.sdp);

    if (cfg.mode == SynthesisMode::Full) {
        // initial-state anchor [1, xt^T; xt, H] >= 0
        AffinePolyMatrix anchor(n + 1, n + 1, n);
        anchor.at(0, 0) = AffinePoly::from(Polynomial::constant(n, 1.0));
        for (int i = 0; i < n; ++i) {
            anchor.at(0, i + 1) = AffinePoly::from(Polynomial::constant(n, xt(i)));
            anchor.at(i + 1, 0) = anchor.at(0, i + 1);
            for (int j = 0; j < n; ++j) anchor.at(i + 1, j + 1) = ap.H.at(i, j);
        }
        ap.lmis.push_back(compile_lmi("initial-state", anchor, ap.reg, ap.sdp));

        // state constraint [H, H; H, Sx^-1] >= 0
        const Eigen::MatrixXd Sxinv = spd_inverse(cfg.Sx);
        AffinePolyMatrix state(2 * n, 2 * n, n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                state.at(i, j) = ap.H.at(i, j);
                state.at(i, n + j) = ap.H.at(i, j);
                state.at(n + i, j) = ap.H.at(i, j);
                state.at(n + i, n + j) =
                    AffinePoly::from(Polynomial::constant(n, Sxinv(i, j)));
            }
        ap.lmis.push_back(compile_lmi("state-constraint", state, ap.reg, ap.sdp));

        // input constraint [d H, L^T; L, d Su^-1] is an SOS matrix
        const Eigen::MatrixXd Suinv = spd_inverse(cfg.Su);
        AffinePolyMatrix input(n + m, n + m, n);
        input.place(0, 0, Hd);
        input.place(0, n, ap.L.transpose());
        input.place(n, 0, ap.L);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < m; ++j)
                input.at(n + i, n + j) = AffinePoly::from(cfg.d * Suinv(i, j));
        ap.input_sos = input;
        ap.input_blk = compile_sos({"input-constraint", input, cfg.alpha, 0.0}, ap.reg, ap.sdp);
    } else {
        // Without the initial-state anchor the program is positively
        // homogeneous in (gamma, H, L, tau); H >= I pins the scale and makes
        // gamma a worst-case cost bound for every ||x0|| <= 1.
        AffinePolyMatrix norm = ap.H;
        for (int i = 0; i < n; ++i)
            norm.at(i, i) = norm.at(i, i) + AffinePoly::from(Polynomial::constant(n, -1.0));
        ap.lmis.push_back(compile_lmi("normalization", norm, ap.reg, ap.sdp));
    }

    Eigen::VectorXd obj = Eigen::VectorXd::Zero(ap.sdp.free_dim);
    obj(ap.reg.binding(hg).index) = 1.0;
    ap.sdp.obj_free = obj;
    return ap;
}

SynthesisResult synthesize(const SynthesisConfig &cfg, const Eigen::VectorXd &xt,
                           const std::vector<DataQmiBlock> &blocks,
                           const SolveOptions &opts) {
    AssembledProgram ap = assemble_program(cfg, xt, blocks);

    SynthesisResult res;
    res.d = cfg.d;
    res.stats.num_rows = ap.sdp.num_rows();
    res.stats.num_blocks = static_cast<int>(ap.sdp.psd_blocks.size());
    res.stats.num_free = ap.sdp.free_dim;

    std::vector<char> gram_blocks(ap.sdp.psd_blocks.size(), 0);
    gram_blocks[static_cast<size_t>(ap.robust_blk.block)] = 1;
    if (cfg.mode == SynthesisMode::Full)
        gram_blocks[static_cast<size_t>(ap.input_blk.block)] = 1;

    // Phase one: how much eigenvalue room do the SOS Gram blocks have? The
    // tau blocks and the LMIs stay exact, so the measured margin isolates the
    // Gram geometry that decides feasibility of the whole program.
    double sigma = 0.0;
    if (cfg.margin_tol > 0.0) {
        const auto classify_infeasible = [&](const SdpSolution &ph) {
            res.status = SdpStatus::PrimalInfeasible;
            res.feasible = false;
            res.stats.iterations = ph.iterations;
            res.stats.solve_seconds = ph.solve_seconds;
            res.stats.primal_residual = ph.primal_residual;
            res.stats.dual_residual = ph.dual_residual;
            res.stats.duality_gap = ph.duality_gap;
        };
        const GramMarginProgram mp = gram_margin_program(ap.sdp, gram_blocks);
        const SdpSolution ph1 = solve(mp.sdp, opts);
        res.stats.phase1_iterations = ph1.iterations;
        res.stats.phase1_seconds = ph1.solve_seconds;
        if (ph1.status == SdpStatus::Optimal ||
            ph1.status == SdpStatus::IterationLimit) {
            const double lamJ = ph1.y(mp.lambda_var);
            res.stats.margin = lamJ;
            const bool trusted = ph1.status == SdpStatus::Optimal;
            if (trusted && lamJ < -100.0 * cfg.margin_tol) {
                // Far too deep for the certified-slack repair to be meaningful.
                classify_infeasible(ph1);
                return res;
            }
            bool feasible = trusted && lamJ >= -cfg.margin_tol;
            if (!feasible && cfg.mode == SynthesisMode::Full) {
                // Gray zone. The joint margin conflates the performance block
                // with the input block, whose natural scale shrinks as the
                // input bound tightens; grant the input block the slack phase
                // two would apply and re-measure the performance block alone.
                const double s0 = -std::min(lamJ, 0.0) + 2.0 * cfg.margin_tol;
                std::vector<char> robust_only(ap.sdp.psd_blocks.size(), 0);
                std::vector<char> input_only(ap.sdp.psd_blocks.size(), 0);
                robust_only[static_cast<size_t>(ap.robust_blk.block)] = 1;
                input_only[static_cast<size_t>(ap.input_blk.block)] = 1;
                SdpProblem granted = ap.sdp;
                apply_gram_shift(granted, input_only, -s0);
                const GramMarginProgram mpc = gram_margin_program(granted, robust_only);
                const SdpSolution ph1b = solve(mpc.sdp, opts);
                res.stats.phase1_iterations += ph1b.iterations;
                res.stats.phase1_seconds += ph1b.solve_seconds;
                if (ph1b.status == SdpStatus::Optimal) {
                    const double lamR = ph1b.y(mpc.lambda_var);
                    res.stats.margin_core = lamR;
                    feasible = lamR >= -cfg.margin_tol;
                    if (!feasible) {
                        classify_infeasible(ph1b);
                        return res;
                    }
                }
            } else if (!feasible && trusted) {
                // No input block to discount: the joint margin is the verdict.
                classify_infeasible(ph1);
                return res;
            }
            if (feasible)
                sigma = std::min(0.0, std::min(lamJ, 0.0) - 2.0 * cfg.margin_tol);
        }
        // Any undecided phase-one outcome (including an infeasibility detected
        // in the exact blocks themselves) falls through to the nominal solve,
        // whose status and certificates are authoritative.
    }

    if (sigma < 0.0) {
        apply_gram_shift(ap.sdp, gram_blocks, sigma);
        res.stats.applied_slack = -sigma;
    }

    const SdpSolution sol = solve(ap.sdp, opts);
    res.status = sol.status;
    res.feasible = sol.status == SdpStatus::Optimal;
    res.stats.iterations = sol.iterations;
    res.stats.solve_seconds = sol.solve_seconds;
    res.stats.primal_residual = sol.primal_residual;
    res.stats.dual_residual = sol.dual_residual;
    res.stats.duality_gap = sol.duality_gap;

    if (res.feasible) {
        res.gamma = ap.reg.value(ap.gamma, sol);
        const PolyMatrix Hp = ap.H.instantiate(ap.reg, sol);
        res.H = Hp.eval(Eigen::VectorXd::Zero(ap.n));
        res.H = 0.5 * (res.H + res.H.transpose());
        res.L = ap.L.instantiate(ap.reg, sol);
        for (int blk : ap.tau_blocks)
            res.tau_grams.push_back(sol.X[static_cast<size_t>(blk)]);

        const Polynomial msq = basis_norm_squared(ap.n, cfg.alpha);
        const auto certify = [&](const char *name, const CompiledBlock &blk,
                                 const AffinePolyMatrix &sos) {
            Eigen::MatrixXd Q = sol.X[static_cast<size_t>(blk.block)];
            const double eta = polish_sos_gram(ap.sdp, blk, sol, Q);
            const double total = -sigma + eta;
            PolyMatrix S = sos.instantiate(ap.reg, sol);
            if (total > 0.0) {
                const Polynomial slack = msq * total;
                for (int i = 0; i < S.rows(); ++i) S.at(i, i) = S.at(i, i) + slack;
            }
            res.certificates.push_back(
                {name, Q, verify_certificate(S, Q, cfg.alpha).residual});
            res.sos_instances.push_back(S);
            res.stats.applied_slack = std::max(res.stats.applied_slack, total);
        };
        certify("robust-performance", ap.robust_blk, ap.robust_sos);
        if (cfg.mode == SynthesisMode::Full)
            certify("input-constraint", ap.input_blk, ap.input_sos);
    } else if (sol.status == SdpStatus::PrimalInfeasible) {
        res.farkas = sol.eq_dual;
    }
    return res;
}

RationalController extract_controller(const SynthesisResult &res) {
    if (!res.feasible)
        throw std::invalid_argument("extract_controller: result is not Optimal");
    const int n = static_cast<int>(res.H.rows());
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(res.H);
    const double smin = svd.singularValues().minCoeff();
    const double smax = svd.singularValues().maxCoeff();
    if (!(smin > 0.0) || smax / smin > 1e12)
        throw std::runtime_error("extract_controller: H is numerically singular "
                                 "(condition number above 1e12)");
    Eigen::MatrixXd Hinv = res.H.inverse();
    Hinv = 0.5 * (Hinv + Hinv.transpose());
    RationalController ctrl;
    ctrl.K = res.L * PolyMatrix::from_constant(Hinv, n);
    ctrl.d = res.d;
    ctrl.P = res.gamma * Hinv;
    ctrl.P = 0.5 * (ctrl.P + ctrl.P.transpose());
    ctrl.gamma = res.gamma;
    return ctrl;
}

Eigen::VectorXd evaluate_input(const RationalController &ctrl, const Eigen::VectorXd &x) {
    return ctrl.K.eval(x) * x / ctrl.d.eval(x);
}

} // namespace bilinmpc

#include "bilinmpc/sdp.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <Eigen/SVD>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace bilinmpc {

namespace {

constexpr double kSqrt2 = 1.4142135623730951;

int svec_dim(int k) { return k * (k + 1) / 2; }

// Column-major lower-triangle enumeration of (r, c) pairs with r >= c.
std::vector<std::pair<int, int>> svec_coords(int k) {
    std::vector<std::pair<int, int>> out;
    out.reserve(svec_dim(k));
    for (int c = 0; c < k; ++c)
        for (int r = c; r < k; ++r)
            out.emplace_back(r, c);
    return out;
}

Eigen::VectorXd svec(const Eigen::MatrixXd &M) {
    const int k = static_cast<int>(M.rows());
    Eigen::VectorXd v(svec_dim(k));
    int idx = 0;
    for (int c = 0; c < k; ++c)
        for (int r = c; r < k; ++r)
            v[idx++] = (r == c) ? M(r, c) : kSqrt2 * M(r, c);
    return v;
}

Eigen::MatrixXd smat(const Eigen::VectorXd &v, int k) {
    Eigen::MatrixXd M(k, k);
    int idx = 0;
    for (int c = 0; c < k; ++c)
        for (int r = c; r < k; ++r) {
            const double val = (r == c) ? v[idx] : v[idx] / kSqrt2;
            M(r, c) = val;
            M(c, r) = val;
            ++idx;
        }
    return M;
}

// Accumulates the literal triplets of one row (or the objective) into a dense
// symmetric matrix for block `blk`.
Eigen::MatrixXd accumulate_block(const std::vector<PsdTerm> &terms, int blk, int k) {
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(k, k);
    for (const PsdTerm &t : terms)
        if (t.block == blk)
            A(t.i, t.j) += t.value;
    return A;
}

struct BlockWork {
    int k = 0;                       // matrix order
    int dim = 0;                     // svec dimension
    std::vector<int> rows;           // global equality rows touching the block
    Eigen::MatrixXd A;               // rows.size() x dim, svec of each row's A
    Eigen::VectorXd c;               // svec of objective C

    // NT scaling state, refreshed every iteration.
    Eigen::MatrixXd R, Rinv, G, Ginv;
    Eigen::VectorXd lambda;
};

struct Residuals {
    Eigen::VectorXd rho1;   // b*tau - A*x
    Eigen::VectorXd rho2f;  // c_f*tau - A_f^T y
    Eigen::VectorXd rho2c;  // c_c*tau - A_c^T y - s (stacked svecs)
    double rho3 = 0.0;      // b^T y - c^T x - kappa
};

double safe_norm(const Eigen::VectorXd &v) { return v.size() ? v.norm() : 0.0; }

} // namespace

void EqRow::add_psd_entry(int block, int i, int j, double v) {
    if (i == j) {
        psd.push_back({block, i, i, v});
    } else {
        psd.push_back({block, i, j, v / 2});
        psd.push_back({block, j, i, v / 2});
    }
}

void EqRow::add_free(int var, double v) { free_terms.emplace_back(var, v); }

int SdpProblem::add_free_var() {
    ++free_dim;
    return free_dim - 1;
}

int SdpProblem::add_psd_block(int size) {
    psd_blocks.push_back(size);
    return static_cast<int>(psd_blocks.size()) - 1;
}

std::string to_string(SdpStatus s) {
    switch (s) {
    case SdpStatus::Optimal: return "optimal";
    case SdpStatus::PrimalInfeasible: return "primal_infeasible";
    case SdpStatus::DualInfeasible: return "dual_infeasible";
    case SdpStatus::IllPosed: return "ill_posed";
    case SdpStatus::IterationLimit: return "iteration_limit";
    }
    return "unknown";
}

SdpDiagnostics validate(const SdpProblem &p) {
    SdpDiagnostics d;
    const int nb = static_cast<int>(p.psd_blocks.size());

    auto check_terms = [&](const std::vector<PsdTerm> &terms, const std::string &where) {
        for (const PsdTerm &t : terms) {
            if (t.block < 0 || t.block >= nb) {
                d.errors.push_back(where + ": PSD block index " + std::to_string(t.block) +
                                   " out of range");
                continue;
            }
            const int k = p.psd_blocks[t.block];
            if (t.i < 0 || t.i >= k || t.j < 0 || t.j >= k)
                d.errors.push_back(where + ": entry (" + std::to_string(t.i) + "," +
                                   std::to_string(t.j) + ") outside block of order " +
                                   std::to_string(k));
            if (!std::isfinite(t.value))
                d.errors.push_back(where + ": non-finite coefficient");
        }
    };

    check_terms(p.obj_psd, "objective");
    if (p.obj_free.size() != 0 && p.obj_free.size() != p.free_dim)
        d.errors.push_back("objective: free-part length " + std::to_string(p.obj_free.size()) +
                           " does not match free_dim " + std::to_string(p.free_dim));
    for (int k = 0; k < p.num_rows(); ++k) {
        const EqRow &row = p.rows[k];
        const std::string where = "row " + std::to_string(k);
        check_terms(row.psd, where);
        for (auto &[var, v] : row.free_terms) {
            if (var < 0 || var >= p.free_dim)
                d.errors.push_back(where + ": free variable index " + std::to_string(var) +
                                   " out of range");
            if (!std::isfinite(v))
                d.errors.push_back(where + ": non-finite coefficient");
        }
        if (!std::isfinite(row.rhs))
            d.errors.push_back(where + ": non-finite right-hand side");
    }
    if (!d.errors.empty())
        return d;

    // Per-row symmetry of the accumulated data matrices.
    for (int k = 0; k < p.num_rows(); ++k)
        for (int b = 0; b < nb; ++b) {
            const Eigen::MatrixXd A = accumulate_block(p.rows[k].psd, b, p.psd_blocks[b]);
            const double asym = (A - A.transpose()).cwiseAbs().maxCoeff();
            if (asym > 1e-12 * (1.0 + A.cwiseAbs().maxCoeff()))
                d.errors.push_back("row " + std::to_string(k) + ": data matrix on block " +
                                   std::to_string(b) + " is not symmetric");
        }
    for (int b = 0; b < nb; ++b) {
        const Eigen::MatrixXd C = accumulate_block(p.obj_psd, b, p.psd_blocks[b]);
        const double asym = (C - C.transpose()).cwiseAbs().maxCoeff();
        if (asym > 1e-12 * (1.0 + C.cwiseAbs().maxCoeff()))
            d.errors.push_back("objective: data matrix on block " + std::to_string(b) +
                               " is not symmetric");
    }
    if (!d.errors.empty())
        return d;

    // Dangling variables.
    std::vector<char> free_touched(p.free_dim, 0);
    std::vector<char> block_touched(nb, 0);
    for (const EqRow &row : p.rows) {
        for (auto &[var, v] : row.free_terms)
            if (v != 0.0) free_touched[var] = 1;
        for (const PsdTerm &t : row.psd)
            if (t.value != 0.0) block_touched[t.block] = 1;
    }
    for (int i = 0; i < p.free_dim; ++i)
        if (!free_touched[i])
            d.warnings.push_back("free variable " + std::to_string(i) +
                                 " appears in no constraint");
    for (int b = 0; b < nb; ++b)
        if (!block_touched[b])
            d.warnings.push_back("PSD block " + std::to_string(b) +
                                 " appears in no constraint");

    // Redundant (linearly dependent) equality rows: rank-reveal the transposed
    // constraint matrix so non-pivot columns name the offending rows.
    const int prows = p.num_rows();
    if (prows > 0) {
        int total = p.free_dim;
        std::vector<int> offs(nb, 0);
        for (int b = 0; b < nb; ++b) {
            offs[b] = total;
            total += svec_dim(p.psd_blocks[b]);
        }
        Eigen::MatrixXd At = Eigen::MatrixXd::Zero(total, prows);
        for (int k = 0; k < prows; ++k) {
            for (auto &[var, v] : p.rows[k].free_terms)
                At(var, k) += v;
            for (int b = 0; b < nb; ++b) {
                const int kk = p.psd_blocks[b];
                const Eigen::MatrixXd A = accumulate_block(p.rows[k].psd, b, kk);
                if (A.cwiseAbs().maxCoeff() == 0.0)
                    continue;
                At.block(offs[b], k, svec_dim(kk), 1) = svec(A);
            }
        }
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(At);
        qr.setThreshold(1e-10);
        const int rank = static_cast<int>(qr.rank());
        if (rank < prows) {
            std::vector<char> pivot(prows, 0);
            for (int i = 0; i < rank; ++i)
                pivot[qr.colsPermutation().indices()[i]] = 1;
            for (int k = 0; k < prows; ++k)
                if (!pivot[k])
                    d.warnings.push_back("row " + std::to_string(k) +
                                         " is linearly dependent on earlier rows");
        }
    }
    return d;
}

namespace {

class HsdSolver {
  public:
    explicit HsdSolver(const SdpProblem &p, const SolveOptions &opts) : opts_(opts) {
        // Cheap structural checks only; full validate() is the caller's tool.
        const int nb = static_cast<int>(p.psd_blocks.size());
        for (int b = 0; b < nb; ++b)
            if (p.psd_blocks[b] <= 0)
                throw std::invalid_argument("sdp: PSD block of non-positive order");
        f_ = p.free_dim;
        p_ = p.num_rows();
        nb_ = nb;

        blocks_.resize(nb_);
        nu_ = 0;
        for (int b = 0; b < nb_; ++b) {
            BlockWork &bw = blocks_[b];
            bw.k = p.psd_blocks[b];
            bw.dim = svec_dim(bw.k);
            nu_ += bw.k;
            const Eigen::MatrixXd C = accumulate_block(p.obj_psd, b, bw.k);
            if ((C - C.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + C.cwiseAbs().maxCoeff()))
                throw std::invalid_argument("sdp: objective block not symmetric");
            bw.c = svec(C);
        }

        b_ = Eigen::VectorXd::Zero(p_);
        Af_ = Eigen::MatrixXd::Zero(p_, f_);
        cf_ = Eigen::VectorXd::Zero(f_);
        if (p.obj_free.size()) {
            if (p.obj_free.size() != f_)
                throw std::invalid_argument("sdp: objective free-part length mismatch");
            cf_ = p.obj_free;
        }

        std::vector<std::vector<int>> touch(nb_);
        for (int k = 0; k < p_; ++k) {
            const EqRow &row = p.rows[k];
            b_[k] = row.rhs;
            for (auto &[var, v] : row.free_terms) {
                if (var < 0 || var >= f_)
                    throw std::invalid_argument("sdp: free variable index out of range");
                Af_(k, var) += v;
            }
            std::vector<char> seen(nb_, 0);
            for (const PsdTerm &t : row.psd) {
                if (t.block < 0 || t.block >= nb_)
                    throw std::invalid_argument("sdp: PSD block index out of range");
                const int kk = p.psd_blocks[t.block];
                if (t.i < 0 || t.i >= kk || t.j < 0 || t.j >= kk)
                    throw std::invalid_argument("sdp: PSD entry index out of range");
                if (!seen[t.block]) {
                    seen[t.block] = 1;
                    touch[t.block].push_back(k);
                }
            }
        }
        for (int b = 0; b < nb_; ++b) {
            BlockWork &bw = blocks_[b];
            bw.rows = touch[b];
            bw.A.resize(static_cast<int>(bw.rows.size()), bw.dim);
            for (size_t r = 0; r < bw.rows.size(); ++r) {
                const Eigen::MatrixXd A = accumulate_block(p.rows[bw.rows[r]].psd, b, bw.k);
                if ((A - A.transpose()).cwiseAbs().maxCoeff() >
                    1e-12 * (1.0 + A.cwiseAbs().maxCoeff()))
                    throw std::invalid_argument("sdp: constraint data matrix not symmetric");
                bw.A.row(static_cast<int>(r)) = svec(A).transpose();
            }
        }

        norm_b_ = safe_norm(b_);
        double cn = cf_.squaredNorm();
        for (const BlockWork &bw : blocks_)
            cn += bw.c.squaredNorm();
        norm_c_ = std::sqrt(cn);
    }

    SdpSolution run() {
        const auto t0 = std::chrono::steady_clock::now();
        init_point();
        SdpSolution best;
        double best_score = std::numeric_limits<double>::infinity();
        int stalls = 0;
        int flat = 0; // iterations without meaningful best-score improvement

        // A run that stops making progress still reports Optimal when the best
        // iterate sits inside the relaxed acceptance band; IllPosed is only
        // diagnosed from the homogenizing variables (inside converged()).
        const double accept = std::max(1.0, opts_.accept_factor) *
                              std::max({opts_.tol_primal, opts_.tol_dual, opts_.tol_gap});
        const auto stop_without_certificate = [&]() {
            best.status =
                best_score <= accept ? SdpStatus::Optimal : SdpStatus::IterationLimit;
            finish(best, t0);
            return best;
        };

        for (iter_ = 0; iter_ < opts_.max_iters; ++iter_) {
            Residuals res = residuals();
            const double mu = complementarity();

            if (opts_.verbose)
                trace(res, mu);

            SdpSolution sol;
            if (converged(res, mu, sol)) {
                finish(sol, t0);
                return sol;
            }
            const double score = convergence_score(res);
            if (score < 0.99 * best_score) {
                flat = 0;
            } else if (best_score <= accept && ++flat >= 8) {
                // Good answer in hand and polishing has plateaued.
                return stop_without_certificate();
            }
            if (score < best_score) {
                best_score = score;
                best = snapshot_scaled();
            }

            if (!nt_scalings()) {
                // Loss of positive definiteness from numerical roundoff: the
                // iterate can no longer be scaled, report the best point seen.
                return stop_without_certificate();
            }
            build_schur();

            // Predictor (affine scaling direction, gamma = 0).
            Direction aff = newton_direction(res, 0.0, nullptr);
            const double alpha_aff = max_step(aff);
            const double mu_aff = complementarity_after(aff, alpha_aff);
            double sigma = std::pow(std::max(0.0, mu_aff / std::max(mu, 1e-300)), 3.0);
            sigma = std::clamp(sigma, 0.0, 1.0);

            // Corrector with Mehrotra second-order terms.
            Direction dir = newton_direction(res, sigma, &aff);
            double alpha = 0.99 * max_step(dir);
            alpha = std::min(alpha, 1.0);

            if (alpha < 1e-9) {
                if (++stalls >= 3)
                    return stop_without_certificate();
            } else {
                stalls = 0;
            }

            take_step(dir, alpha);
        }

        Residuals res = residuals();
        const double mu = complementarity();
        SdpSolution sol;
        if (converged(res, mu, sol)) {
            finish(sol, t0);
            return sol;
        }
        if (convergence_score(res) < best_score)
            best = snapshot_scaled();
        return stop_without_certificate();
    }

  private:
    struct Direction {
        Eigen::VectorXd dy, dxf, dxc, dsc;
        double dtau = 0.0, dkappa = 0.0;
        // Scaled-space affine steps, kept for the corrector.
        std::vector<Eigen::MatrixXd> Dx_tilde, Ds_tilde;
    };

    void init_point() {
        y_ = Eigen::VectorXd::Zero(p_);
        xf_ = Eigen::VectorXd::Zero(f_);
        int total = 0;
        for (const BlockWork &bw : blocks_)
            total += bw.dim;
        xc_ = Eigen::VectorXd::Zero(total);
        sc_ = Eigen::VectorXd::Zero(total);
        offs_.assign(nb_, 0);
        int off = 0;
        for (int b = 0; b < nb_; ++b) {
            offs_[b] = off;
            Eigen::MatrixXd I = Eigen::MatrixXd::Identity(blocks_[b].k, blocks_[b].k);
            xc_.segment(off, blocks_[b].dim) = svec(I);
            sc_.segment(off, blocks_[b].dim) = svec(I);
            off += blocks_[b].dim;
        }
        tau_ = 1.0;
        kappa_ = 1.0;
        mu0_ = complementarity();
    }

    // A_c * v (stacked svec) scattered into an equality-row-sized vector.
    Eigen::VectorXd apply_Ac(const Eigen::VectorXd &v) const {
        Eigen::VectorXd out = Eigen::VectorXd::Zero(p_);
        for (int b = 0; b < nb_; ++b) {
            const BlockWork &bw = blocks_[b];
            if (bw.rows.empty())
                continue;
            const Eigen::VectorXd w = bw.A * v.segment(offs_[b], bw.dim);
            for (size_t r = 0; r < bw.rows.size(); ++r)
                out[bw.rows[r]] += w[static_cast<int>(r)];
        }
        return out;
    }

    // A_c^T * y as a stacked svec.
    Eigen::VectorXd apply_AcT(const Eigen::VectorXd &y) const {
        Eigen::VectorXd out = Eigen::VectorXd::Zero(xc_.size());
        for (int b = 0; b < nb_; ++b) {
            const BlockWork &bw = blocks_[b];
            if (bw.rows.empty())
                continue;
            Eigen::VectorXd yloc(static_cast<int>(bw.rows.size()));
            for (size_t r = 0; r < bw.rows.size(); ++r)
                yloc[static_cast<int>(r)] = y[bw.rows[r]];
            out.segment(offs_[b], bw.dim) = bw.A.transpose() * yloc;
        }
        return out;
    }

    Eigen::VectorXd cc_vector() const {
        Eigen::VectorXd c(xc_.size());
        for (int b = 0; b < nb_; ++b)
            c.segment(offs_[b], blocks_[b].dim) = blocks_[b].c;
        return c;
    }

    Residuals residuals() const {
        Residuals r;
        r.rho1 = b_ * tau_ - apply_Ac(xc_) - Af_ * xf_;
        r.rho2f = cf_ * tau_ - Af_.transpose() * y_;
        r.rho2c = cc_vector() * tau_ - apply_AcT(y_) - sc_;
        r.rho3 = b_.dot(y_) - cf_.dot(xf_) - cc_vector().dot(xc_) - kappa_;
        return r;
    }

    double complementarity() const {
        return (xc_.dot(sc_) + tau_ * kappa_) / (nu_ + 1);
    }

    // Relative consolidated residual, used to keep the best iterate on hand.
    double convergence_score(const Residuals &r) const {
        const double pr = safe_norm(r.rho1) / (tau_ * (1 + norm_b_));
        const double dn = std::sqrt(r.rho2f.squaredNorm() + r.rho2c.squaredNorm());
        const double dr = dn / (tau_ * (1 + norm_c_));
        const double pobj = (cf_.dot(xf_) + cc_vector().dot(xc_)) / tau_;
        const double dobj = b_.dot(y_) / tau_;
        const double gap = std::abs(pobj - dobj) / (1 + std::abs(pobj) + std::abs(dobj));
        return std::max({pr, dr, gap});
    }

    bool converged(const Residuals &r, double mu, SdpSolution &out) {
        const double pr = safe_norm(r.rho1) / (tau_ * (1 + norm_b_));
        const double dn = std::sqrt(r.rho2f.squaredNorm() + r.rho2c.squaredNorm());
        const double dr = dn / (tau_ * (1 + norm_c_));
        const double pobj = (cf_.dot(xf_) + cc_vector().dot(xc_)) / tau_;
        const double dobj = b_.dot(y_) / tau_;
        const double gap = std::abs(pobj - dobj) / (1 + std::abs(pobj) + std::abs(dobj));

        if (pr <= opts_.tol_primal && dr <= opts_.tol_dual && gap <= opts_.tol_gap) {
            out = snapshot_scaled();
            out.status = SdpStatus::Optimal;
            return true;
        }

        // Farkas certificate of primal infeasibility: b^T y > 0 with
        // A^T y + s ~ 0 (free rows exactly in the limit).
        const double bty = b_.dot(y_);
        if (bty > 1e-12) {
            const Eigen::VectorXd ray = y_ / bty;
            const double viol = std::sqrt((Af_.transpose() * ray).squaredNorm() +
                                          (apply_AcT(ray) + sc_ / bty).squaredNorm());
            if (viol <= opts_.tol_infeas * (1 + norm_c_)) {
                out = certificate_primal_infeasible(ray, bty);
                return true;
            }
        }

        // Improving-ray certificate of dual infeasibility: c^T x < 0 with
        // A x ~ 0 and x in the cone.
        const double ctx = cf_.dot(xf_) + cc_vector().dot(xc_);
        if (ctx < -1e-12) {
            const double scale = -ctx;
            const double viol = (apply_Ac(xc_) + Af_ * xf_).norm() / scale;
            if (viol <= opts_.tol_infeas * (1 + norm_b_)) {
                out = certificate_dual_infeasible(scale);
                return true;
            }
        }

        // Both homogenizing variables collapsing with no certificate in sight
        // indicates an ill-posed instance.
        if (mu <= 1e-14 * std::max(1.0, mu0_) && tau_ <= 1e-10 && kappa_ <= 1e-10) {
            out = snapshot_scaled();
            out.status = SdpStatus::IllPosed;
            return true;
        }
        return false;
    }

    SdpSolution snapshot_scaled() const {
        SdpSolution sol;
        const double t = std::max(tau_, 1e-300);
        sol.y = xf_ / t;
        sol.eq_dual = y_ / t;
        for (int b = 0; b < nb_; ++b) {
            sol.X.push_back(smat(xc_.segment(offs_[b], blocks_[b].dim) / t, blocks_[b].k));
            sol.S.push_back(smat(sc_.segment(offs_[b], blocks_[b].dim) / t, blocks_[b].k));
        }
        sol.objective = (cf_.dot(xf_) + cc_vector().dot(xc_)) / t;
        Residuals r = residuals();
        sol.primal_residual = safe_norm(r.rho1) / (t * (1 + norm_b_));
        sol.dual_residual =
            std::sqrt(r.rho2f.squaredNorm() + r.rho2c.squaredNorm()) / (t * (1 + norm_c_));
        const double pobj = sol.objective;
        const double dobj = b_.dot(y_) / t;
        sol.duality_gap = std::abs(pobj - dobj) / (1 + std::abs(pobj) + std::abs(dobj));
        sol.iterations = iter_;
        return sol;
    }

    SdpSolution certificate_primal_infeasible(const Eigen::VectorXd &ray, double bty) const {
        SdpSolution sol;
        sol.status = SdpStatus::PrimalInfeasible;
        sol.eq_dual = ray;
        sol.y = Eigen::VectorXd::Zero(f_);
        for (int b = 0; b < nb_; ++b) {
            sol.X.push_back(Eigen::MatrixXd::Zero(blocks_[b].k, blocks_[b].k));
            sol.S.push_back(smat(sc_.segment(offs_[b], blocks_[b].dim) / bty, blocks_[b].k));
        }
        sol.objective = std::numeric_limits<double>::quiet_NaN();
        sol.primal_residual = std::numeric_limits<double>::infinity();
        sol.dual_residual = 0.0;
        sol.duality_gap = std::numeric_limits<double>::quiet_NaN();
        sol.iterations = iter_;
        return sol;
    }

    SdpSolution certificate_dual_infeasible(double scale) const {
        SdpSolution sol;
        sol.status = SdpStatus::DualInfeasible;
        sol.y = xf_ / scale;
        for (int b = 0; b < nb_; ++b) {
            sol.X.push_back(smat(xc_.segment(offs_[b], blocks_[b].dim) / scale, blocks_[b].k));
            sol.S.push_back(Eigen::MatrixXd::Zero(blocks_[b].k, blocks_[b].k));
        }
        sol.eq_dual = Eigen::VectorXd::Zero(p_);
        sol.objective = -1.0;
        sol.primal_residual = std::numeric_limits<double>::infinity();
        sol.dual_residual = std::numeric_limits<double>::infinity();
        sol.duality_gap = std::numeric_limits<double>::quiet_NaN();
        sol.iterations = iter_;
        return sol;
    }

    bool nt_scalings() {
        for (int b = 0; b < nb_; ++b) {
            BlockWork &bw = blocks_[b];
            const Eigen::MatrixXd X = smat(xc_.segment(offs_[b], bw.dim), bw.k);
            const Eigen::MatrixXd S = smat(sc_.segment(offs_[b], bw.dim), bw.k);
            Eigen::LLT<Eigen::MatrixXd> lx(X), ls(S);
            if (lx.info() != Eigen::Success || ls.info() != Eigen::Success)
                return false;
            const Eigen::MatrixXd Lx = lx.matrixL();
            const Eigen::MatrixXd Ls = ls.matrixL();
            Eigen::JacobiSVD<Eigen::MatrixXd> svd(Ls.transpose() * Lx,
                                                  Eigen::ComputeFullU | Eigen::ComputeFullV);
            bw.lambda = svd.singularValues();
            if (bw.lambda.minCoeff() <= 0.0)
                return false;
            const Eigen::VectorXd li = bw.lambda.cwiseSqrt().cwiseInverse();
            bw.R = Lx * svd.matrixV() * li.asDiagonal();
            bw.Rinv = li.asDiagonal() * svd.matrixU().transpose() * Ls.transpose();
            bw.G = bw.R * bw.R.transpose();
            bw.Ginv = bw.Rinv.transpose() * bw.Rinv;
        }
        return true;
    }

    // Theta^{-1}(v) = svec(G smat(v) G) per block.
    Eigen::VectorXd theta_inv(const Eigen::VectorXd &v) const {
        Eigen::VectorXd out(v.size());
        for (int b = 0; b < nb_; ++b) {
            const BlockWork &bw = blocks_[b];
            const Eigen::MatrixXd M = smat(v.segment(offs_[b], bw.dim), bw.k);
            out.segment(offs_[b], bw.dim) = svec(bw.G * M * bw.G);
        }
        return out;
    }

    void build_schur() {
        const int m2 = p_ + f_;
        Eigen::MatrixXd K2 = Eigen::MatrixXd::Zero(m2, m2);
        for (int b = 0; b < nb_; ++b) {
            const BlockWork &bw = blocks_[b];
            const int pj = static_cast<int>(bw.rows.size());
            if (pj == 0)
                continue;
            Eigen::MatrixXd Minv(bw.dim, pj);
            for (int r = 0; r < pj; ++r) {
                const Eigen::MatrixXd Ar = smat(bw.A.row(r).transpose(), bw.k);
                Minv.col(r) = svec(bw.G * Ar * bw.G);
            }
            const Eigen::MatrixXd W = bw.A * Minv;
            for (int r = 0; r < pj; ++r)
                for (int c = 0; c < pj; ++c)
                    K2(bw.rows[r], bw.rows[c]) += W(r, c);
        }
        if (f_ > 0) {
            K2.block(0, p_, p_, f_) = Af_;
            K2.block(p_, 0, f_, p_) = Af_.transpose();
        }

        // The NT Schur complement develops wildly uneven row scales near a
        // degenerate optimum; symmetric Ruiz equilibration plus an extended
        // precision factorization keeps the search directions accurate well
        // past the point a plain double LU stalls.
        dscale_ = VecLd::Ones(m2);
        K2s_ = K2.cast<long double>();
        for (int pass = 0; pass < 3; ++pass) {
            for (int i = 0; i < m2; ++i) {
                const long double m = K2s_.row(i).cwiseAbs().maxCoeff();
                if (m <= 0.0L)
                    continue;
                const long double s = 1.0L / sqrtl(m);
                dscale_[i] *= s;
                K2s_.row(i) *= s;
                K2s_.col(i) *= s;
            }
        }
        // Tiny static regularization (signed to match the quasidefinite
        // structure) keeps the factorization defined when the equilibrated
        // complement goes numerically singular; refinement against the
        // unregularized matrix removes the bias.
        MatLd K2reg = K2s_;
        for (int i = 0; i < p_; ++i)
            K2reg(i, i) += 1e-14L;
        for (int i = p_; i < m2; ++i)
            K2reg(i, i) -= 1e-14L;
        lu_.compute(K2reg);

        // Constant-column solve shared by both directions this iteration.
        const Eigen::VectorXd thc = theta_inv(cc_vector());
        w2_ = apply_Ac(thc);
        cthc_ = cc_vector().dot(thc);
        Eigen::VectorXd rhs(m2);
        rhs.head(p_) = b_ + w2_;
        rhs.tail(f_) = cf_;
        g_ = kkt_solve(rhs);
    }

    Eigen::VectorXd kkt_solve(const Eigen::VectorXd &rhs) const {
        const VecLd bs = dscale_.cwiseProduct(rhs.cast<long double>());
        VecLd z = lu_.solve(bs);
        VecLd r = bs - K2s_ * z;
        VecLd best = z;
        long double best_rn = r.norm();
        for (int it = 0; it < 5 && best_rn > 0.0L; ++it) {
            z += lu_.solve(r);
            r = bs - K2s_ * z;
            const long double rn = r.norm();
            if (rn >= best_rn)
                break;
            best_rn = rn;
            best = z;
        }
        return dscale_.cwiseProduct(best).cast<double>();
    }

    // E = L_lambda^{-1}(D4) entrywise in the scaled space.
    Eigen::MatrixXd lambda_inverse(const Eigen::MatrixXd &D4, const Eigen::VectorXd &lam) const {
        const int k = static_cast<int>(lam.size());
        Eigen::MatrixXd E(k, k);
        for (int i = 0; i < k; ++i)
            for (int j = 0; j < k; ++j)
                E(i, j) = 2.0 * D4(i, j) / (lam[i] + lam[j]);
        return E;
    }

    // Right-hand sides of the linearized homogeneous system:
    //   A_c dxc + A_f dxf - b dtau                = t1
    //   A_f^T dy - c_f dtau                       = t2f
    //   A_c^T dy + dsc - c_c dtau                 = t2c
    //   b^T dy - c_f^T dxf - c_c^T dxc - dkappa   = -t3
    //   L_Lambda(dXtilde + dStilde)               = T5 (per block; empty = 0)
    //   tau dkappa + kappa dtau                   = t5t
    struct Targets {
        Eigen::VectorXd t1, t2f, t2c;
        double t3 = 0.0;
        std::vector<Eigen::MatrixXd> T5;
        double t5t = 0.0;
    };

    Direction solve_newton(const Targets &t) const {
        // w_c = t2c - svec(R^{-T} E R^{-1}) stacked over blocks.
        Eigen::VectorXd wc = t.t2c;
        if (!t.T5.empty()) {
            for (int b = 0; b < nb_; ++b) {
                const BlockWork &bw = blocks_[b];
                const Eigen::MatrixXd E = lambda_inverse(t.T5[b], bw.lambda);
                wc.segment(offs_[b], bw.dim) -=
                    svec(bw.Rinv.transpose() * E * bw.Rinv);
            }
        }

        const Eigen::VectorXd thwc = theta_inv(wc);
        Eigen::VectorXd rhs(p_ + f_);
        rhs.head(p_) = t.t1 + apply_Ac(thwc);
        rhs.tail(f_) = t.t2f;
        const Eigen::VectorXd h = kkt_solve(rhs);

        const Eigen::VectorXd gy = g_.head(p_), gf = g_.tail(f_);
        const Eigen::VectorXd hy = h.head(p_), hf = h.tail(f_);
        const Eigen::VectorXd bw2 = b_ - w2_;
        const double q3 = -t.t3 + t.t5t / tau_ - cc_vector().dot(thwc);
        const double denom = bw2.dot(gy) - cf_.dot(gf) + cthc_ + kappa_ / tau_;
        const double numer = q3 - bw2.dot(hy) + cf_.dot(hf);
        const double dtau = (std::abs(denom) > 1e-300) ? numer / denom : 0.0;

        Direction d;
        d.dtau = dtau;
        d.dy = hy + dtau * gy;
        d.dxf = hf + dtau * gf;
        d.dxc = theta_inv(apply_AcT(d.dy) - cc_vector() * dtau - wc);
        // Recover ds and dkappa from the linearized residual equations rather
        // than the scaled complementarity elimination: near optimality the
        // latter cancels catastrophically, the former stays exact.
        d.dsc = t.t2c + cc_vector() * dtau - apply_AcT(d.dy);
        d.dkappa = t.t3 + b_.dot(d.dy) - cf_.dot(d.dxf) - cc_vector().dot(d.dxc);
        return d;
    }

    // Residual targets minus what the direction actually achieves.  The
    // complementarity rows are met by construction, so T5 stays empty.
    Targets defects(const Targets &t, const Direction &d) const {
        Targets def;
        def.t1 = t.t1 - (apply_Ac(d.dxc) + Af_ * d.dxf - b_ * d.dtau);
        def.t2f = t.t2f - (Af_.transpose() * d.dy - cf_ * d.dtau);
        def.t2c = t.t2c - (apply_AcT(d.dy) + d.dsc - cc_vector() * d.dtau);
        def.t3 = t.t3 - (d.dkappa - b_.dot(d.dy) + cf_.dot(d.dxf) +
                         cc_vector().dot(d.dxc));
        def.t5t = t.t5t - (tau_ * d.dkappa + kappa_ * d.dtau);
        return def;
    }

    static double defect_norm(const Targets &t) {
        return std::sqrt(t.t1.squaredNorm() + t.t2f.squaredNorm() +
                         t.t2c.squaredNorm() + t.t3 * t.t3 + t.t5t * t.t5t);
    }

    static void accumulate(Direction &d, const Direction &c) {
        d.dy += c.dy;
        d.dxf += c.dxf;
        d.dxc += c.dxc;
        d.dsc += c.dsc;
        d.dtau += c.dtau;
        d.dkappa += c.dkappa;
    }

    Direction newton_direction(const Residuals &res, double gamma, const Direction *aff) {
        const double mu = complementarity();
        Targets t;
        t.t1 = (1.0 - gamma) * res.rho1;
        t.t2f = (1.0 - gamma) * res.rho2f;
        t.t2c = (1.0 - gamma) * res.rho2c;
        t.t3 = (1.0 - gamma) * res.rho3;
        t.t5t = gamma * mu - tau_ * kappa_ - (aff ? aff->dtau * aff->dkappa : 0.0);
        t.T5.resize(nb_);
        for (int b = 0; b < nb_; ++b) {
            const BlockWork &bw = blocks_[b];
            Eigen::MatrixXd D4 = (-bw.lambda.array().square()).matrix().asDiagonal();
            D4.diagonal().array() += gamma * mu;
            if (aff) {
                const Eigen::MatrixXd &Dx = aff->Dx_tilde[b];
                const Eigen::MatrixXd &Ds = aff->Ds_tilde[b];
                D4 -= 0.5 * (Dx * Ds + Ds * Dx);
            }
            t.T5[b] = D4;
        }

        // The Schur elimination amplifies roundoff by the square of the NT
        // scaling's condition number, which ruins the directions near a
        // degenerate optimum.  Refining against the full linearized system
        // restores them to working precision as long as each solve improves.
        Direction d = solve_newton(t);
        Targets def = defects(t, d);
        double dn = defect_norm(def);
        const double floor_ = 1e-13 * (1.0 + defect_norm(t));
        for (int round = 0; round < 3 && dn > floor_; ++round) {
            Direction corr = solve_newton(def);
            Direction trial = d;
            accumulate(trial, corr);
            Targets def2 = defects(t, trial);
            const double dn2 = defect_norm(def2);
            if (dn2 >= dn)
                break;
            d = trial;
            def = std::move(def2);
            dn = dn2;
        }

        d.Dx_tilde.resize(nb_);
        d.Ds_tilde.resize(nb_);
        for (int b = 0; b < nb_; ++b) {
            const BlockWork &bw = blocks_[b];
            const Eigen::MatrixXd dX = smat(d.dxc.segment(offs_[b], bw.dim), bw.k);
            const Eigen::MatrixXd dS = smat(d.dsc.segment(offs_[b], bw.dim), bw.k);
            d.Dx_tilde[b] = bw.Rinv * dX * bw.Rinv.transpose();
            d.Ds_tilde[b] = bw.R.transpose() * dS * bw.R;
        }
        if (std::getenv("SDP_DIR_DEBUG")) {
            std::fprintf(stderr,
                         "    dir(g=%.2e): defect=%.3e |dtau|=%.3e |dkap|=%.3e\n",
                         gamma, dn, std::abs(d.dtau), std::abs(d.dkappa));
        }
        return d;
    }

    // Largest step keeping all blocks PSD and tau, kappa positive.
    double max_step(const Direction &d) const {
        double alpha = 1.0;
        for (int b = 0; b < nb_; ++b) {
            const BlockWork &bw = blocks_[b];
            // In the scaled space both X and S equal diag(lambda), so the
            // boundary condition is diag(lambda) + alpha * D >= 0 for each of
            // the two scaled directions.
            const Eigen::MatrixXd Lam_isqrt = bw.lambda.cwiseSqrt().cwiseInverse().asDiagonal();
            const Eigen::MatrixXd Mx = Lam_isqrt * d.Dx_tilde[b] * Lam_isqrt;
            const Eigen::MatrixXd Ms = Lam_isqrt * d.Ds_tilde[b] * Lam_isqrt;
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ex(Mx, Eigen::EigenvaluesOnly);
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Ms, Eigen::EigenvaluesOnly);
            const double mx = ex.eigenvalues().minCoeff();
            const double ms = es.eigenvalues().minCoeff();
            if (mx < 0)
                alpha = std::min(alpha, -1.0 / mx);
            if (ms < 0)
                alpha = std::min(alpha, -1.0 / ms);
        }
        if (d.dtau < 0)
            alpha = std::min(alpha, -tau_ / d.dtau);
        if (d.dkappa < 0)
            alpha = std::min(alpha, -kappa_ / d.dkappa);
        return alpha;
    }

    double complementarity_after(const Direction &d, double alpha) const {
        const double xs = (xc_ + alpha * d.dxc).dot(sc_ + alpha * d.dsc);
        const double tk = (tau_ + alpha * d.dtau) * (kappa_ + alpha * d.dkappa);
        return (xs + tk) / (nu_ + 1);
    }

    void take_step(const Direction &d, double alpha) {
        y_ += alpha * d.dy;
        xf_ += alpha * d.dxf;
        xc_ += alpha * d.dxc;
        sc_ += alpha * d.dsc;
        tau_ += alpha * d.dtau;
        kappa_ += alpha * d.dkappa;
    }

    void trace(const Residuals &r, double mu) const {
        std::fprintf(stderr,
                     "iter %3d  mu %9.2e  pres %9.2e  dres %9.2e  tau %8.2e  kappa %8.2e\n",
                     iter_, mu, safe_norm(r.rho1) / (tau_ * (1 + norm_b_)),
                     std::sqrt(r.rho2f.squaredNorm() + r.rho2c.squaredNorm()) /
                         (tau_ * (1 + norm_c_)),
                     tau_, kappa_);
    }

    void finish(SdpSolution &sol, std::chrono::steady_clock::time_point t0) const {
        sol.solve_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        sol.iterations = iter_;
    }

    SolveOptions opts_;
    int f_ = 0, p_ = 0, nb_ = 0, nu_ = 0, iter_ = 0;
    std::vector<BlockWork> blocks_;
    std::vector<int> offs_;
    Eigen::VectorXd b_, cf_;
    Eigen::MatrixXd Af_;
    double norm_b_ = 0.0, norm_c_ = 0.0, mu0_ = 1.0;

    Eigen::VectorXd y_, xf_, xc_, sc_;
    double tau_ = 1.0, kappa_ = 1.0;

    using MatLd = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
    using VecLd = Eigen::Matrix<long double, Eigen::Dynamic, 1>;
    MatLd K2s_;
    VecLd dscale_;
    Eigen::PartialPivLU<MatLd> lu_;
    Eigen::VectorXd g_, w2_;
    double cthc_ = 0.0;
};

} // namespace

SdpSolution solve(const SdpProblem &p, const SolveOptions &opts) {
    HsdSolver solver(p, opts);
    return solver.run();
}

void dump_problem(const SdpProblem &p, std::ostream &os) {
    os << "SDP 1\n";
    os << "free " << p.free_dim << "\n";
    os << "blocks " << p.psd_blocks.size();
    for (int k : p.psd_blocks)
        os << " " << k;
    os << "\n";
    os << "rows " << p.rows.size() << "\n";
    char buf[64];
    auto emit = [&](int cidx, int block, int i, int j, double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        os << cidx << " " << block << " " << i << " " << j << " " << buf << "\n";
    };
    for (int i = 0; i < p.obj_free.size(); ++i)
        if (p.obj_free[i] != 0.0)
            emit(0, 0, i + 1, i + 1, p.obj_free[i]);
    for (const PsdTerm &t : p.obj_psd)
        emit(0, t.block + 1, t.i + 1, t.j + 1, t.value);
    for (int k = 0; k < p.num_rows(); ++k) {
        const EqRow &row = p.rows[k];
        for (auto &[var, v] : row.free_terms)
            emit(k + 1, 0, var + 1, var + 1, v);
        for (const PsdTerm &t : row.psd)
            emit(k + 1, t.block + 1, t.i + 1, t.j + 1, t.value);
        if (row.rhs != 0.0) {
            std::snprintf(buf, sizeof(buf), "%.17g", row.rhs);
            os << "rhs " << k + 1 << " " << buf << "\n";
        }
    }
    os << "end\n";
}

SdpProblem load_problem(std::istream &is) {
    SdpProblem p;
    std::string line;
    auto fail = [](const std::string &why) {
        throw std::runtime_error("sdp load: " + why);
    };
    if (!std::getline(is, line) || line.rfind("SDP 1", 0) != 0)
        fail("missing header");
    int nrows = 0;
    while (std::getline(is, line)) {
        if (line.empty())
            continue;
        std::istringstream ss(line);
        std::string tok;
        ss >> tok;
        if (tok == "free") {
            ss >> p.free_dim;
        } else if (tok == "blocks") {
            int nb = 0;
            ss >> nb;
            p.psd_blocks.resize(nb);
            for (int i = 0; i < nb; ++i)
                ss >> p.psd_blocks[i];
        } else if (tok == "rows") {
            ss >> nrows;
            p.rows.resize(nrows);
        } else if (tok == "rhs") {
            int cidx;
            double v;
            ss >> cidx >> v;
            if (cidx < 1 || cidx > nrows)
                fail("rhs constraint index out of range");
            p.rows[cidx - 1].rhs = v;
        } else if (tok == "end") {
            break;
        } else {
            int cidx, block, i, j;
            double v;
            std::istringstream ss2(line);
            if (!(ss2 >> cidx >> block >> i >> j >> v))
                fail("unparsable line: " + line);
            if (cidx < 0 || cidx > nrows)
                fail("constraint index out of range");
            if (block == 0) {
                if (cidx == 0) {
                    if (p.obj_free.size() != p.free_dim)
                        p.obj_free = Eigen::VectorXd::Zero(p.free_dim);
                    p.obj_free[i - 1] += v;
                } else {
                    p.rows[cidx - 1].free_terms.emplace_back(i - 1, v);
                }
            } else {
                PsdTerm t{block - 1, i - 1, j - 1, v};
                if (cidx == 0)
                    p.obj_psd.push_back(t);
                else
                    p.rows[cidx - 1].psd.push_back(t);
            }
        }
    }
    if (p.obj_free.size() == 0 && p.free_dim > 0)
        p.obj_free = Eigen::VectorXd::Zero(p.free_dim);
    return p;
}

} // namespace bilinmpc

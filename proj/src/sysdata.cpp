#include "bilinmpc/sysdata.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace bilinmpc {

namespace {

void require(bool cond, const std::string &msg) {
    if (!cond) throw std::invalid_argument(msg);
}

/// Symmetry + Cholesky check, then the symmetric inverse square root.
Eigen::MatrixXd inverse_sqrt_spd(const Eigen::MatrixXd &G, const std::string &who) {
    require(G.rows() == G.cols() && G.rows() > 0, who + ": G must be square and nonempty");
    const double asym = (G - G.transpose()).cwiseAbs().maxCoeff();
    require(asym <= 1e-12 * (1.0 + G.cwiseAbs().maxCoeff()), who + ": G must be symmetric");
    Eigen::LLT<Eigen::MatrixXd> llt(G);
    require(llt.info() == Eigen::Success, who + ": G must be positive definite");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G);
    return es.eigenvectors() *
           es.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() *
           es.eigenvectors().transpose();
}

} // namespace

void BilinearSystem::validate() const {
    require(A.rows() > 0 && A.rows() == A.cols(), "BilinearSystem: A must be square and nonempty");
    require(B.rows() == A.rows() && B.cols() > 0, "BilinearSystem: B must have n rows");
    require(Btilde.rows() == A.rows() && Btilde.cols() == B.cols() * A.rows(),
            "BilinearSystem: Btilde must be n x (m*n)");
}

Eigen::VectorXd kron_vec(const Eigen::VectorXd &u, const Eigen::VectorXd &x) {
    Eigen::VectorXd out(u.size() * x.size());
    for (Eigen::Index i = 0; i < u.size(); ++i) out.segment(i * x.size(), x.size()) = u(i) * x;
    return out;
}

Eigen::VectorXd step(const BilinearSystem &sys, const Eigen::VectorXd &x,
                     const Eigen::VectorXd &u, const Eigen::VectorXd &w) {
    sys.validate();
    require(x.size() == sys.n(), "step: x has wrong size");
    require(u.size() == sys.m(), "step: u has wrong size");
    require(w.size() == sys.n(), "step: w has wrong size");
    return sys.A * x + sys.B * u + sys.Btilde * kron_vec(u, x) + w;
}

Eigen::VectorXd step(const BilinearSystem &sys, const Eigen::VectorXd &x,
                     const Eigen::VectorXd &u) {
    return step(sys, x, u, Eigen::VectorXd::Zero(sys.n()));
}

Eigen::VectorXd step_factored(const BilinearSystem &sys, const Eigen::VectorXd &x,
                              const Eigen::VectorXd &u, const Eigen::VectorXd &w) {
    sys.validate();
    require(x.size() == sys.n(), "step_factored: x has wrong size");
    require(u.size() == sys.m(), "step_factored: u has wrong size");
    require(w.size() == sys.n(), "step_factored: w has wrong size");
    Eigen::VectorXd next = sys.A * x + w;
    for (int i = 0; i < sys.m(); ++i)
        next += u(i) * (sys.Btilde.middleCols(i * sys.n(), sys.n()) * x + sys.B.col(i));
    return next;
}

NoiseSampler::NoiseSampler(const NoiseModel &nm)
    : shape_(inverse_sqrt_spd(nm.G, "NoiseSampler")), rng_(nm.seed) {}

Eigen::VectorXd NoiseSampler::sample() { return sample(rng_); }

Eigen::VectorXd NoiseSampler::sample(std::mt19937_64 &rng) {
    const int n = static_cast<int>(shape_.rows());
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    Eigen::VectorXd dir(n);
    double norm = 0.0;
    do {
        for (int i = 0; i < n; ++i) dir(i) = gauss(rng);
        norm = dir.norm();
    } while (!(norm > 0.0));
    const double radius = std::pow(unif(rng), 1.0 / n);
    return shape_ * (dir * (radius / norm));
}

ExcitationPolicy ExcitationPolicy::unit_box(int m) {
    ExcitationPolicy p;
    p.lo = Eigen::VectorXd::Constant(m, -1.0);
    p.hi = Eigen::VectorXd::Constant(m, 1.0);
    return p;
}

Eigen::VectorXd ExcitationPolicy::sample(std::mt19937_64 &rng) const {
    require(lo.size() == hi.size() && lo.size() > 0, "ExcitationPolicy: empty or mismatched box");
    Eigen::VectorXd u(lo.size());
    for (Eigen::Index i = 0; i < lo.size(); ++i) {
        require(lo(i) <= hi(i), "ExcitationPolicy: lo must not exceed hi");
        u(i) = std::uniform_real_distribution<double>(lo(i), hi(i))(rng);
    }
    return u;
}

void TrajectoryData::validate() const {
    require(U.cols() >= 1, "TrajectoryData: need at least one input column");
    require(U.rows() >= 1 && X.rows() >= 1, "TrajectoryData: empty dimensions");
    require(X.cols() == U.cols() + 1, "TrajectoryData: X must have T+1 columns");
}

TrajectoryData simulate(const BilinearSystem &sys, const Eigen::VectorXd &x0,
                        const Eigen::MatrixXd &U, const Eigen::MatrixXd &W) {
    sys.validate();
    const int T = static_cast<int>(U.cols());
    require(T >= 1, "simulate: need at least one input");
    require(U.rows() == sys.m(), "simulate: U has wrong row count");
    require(x0.size() == sys.n(), "simulate: x0 has wrong size");
    const bool noisy = W.size() > 0;
    if (noisy)
        require(W.rows() == sys.n() && W.cols() == T, "simulate: W must be n x T");
    TrajectoryData data;
    data.U = U;
    data.X.resize(sys.n(), T + 1);
    data.X.col(0) = x0;
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(sys.n());
    for (int t = 0; t < T; ++t)
        data.X.col(t + 1) = step(sys, data.X.col(t), U.col(t), noisy ? W.col(t) : zero);
    return data;
}

TrajectoryData generate_data(const BilinearSystem &sys, const NoiseModel &nm, int T,
                             const ExcitationPolicy &policy, const Eigen::VectorXd &x0) {
    sys.validate();
    require(T >= 1, "generate_data: T must be at least 1");
    NoiseSampler noise(nm);
    require(nm.G.rows() == sys.n(), "generate_data: G has wrong size");
    std::mt19937_64 rng(nm.seed);
    Eigen::MatrixXd U(sys.m(), T), W(sys.n(), T);
    for (int t = 0; t < T; ++t) {
        U.col(t) = policy.sample(rng);
        W.col(t) = noise.sample(rng);
    }
    const Eigen::VectorXd start =
        x0.size() == 0 ? Eigen::VectorXd::Zero(sys.n()).eval() : x0;
    return simulate(sys, start, U, W);
}

std::vector<DataQmiBlock> build_qmi_blocks(const TrajectoryData &data,
                                           const Eigen::MatrixXd &G) {
    data.validate();
    const int n = data.n(), m = data.m(), T = data.T();
    require(G.rows() == n, "build_qmi_blocks: G has wrong size");
    inverse_sqrt_spd(G, "build_qmi_blocks"); // SPD gate
    const Eigen::MatrixXd Ginv =
        Eigen::LLT<Eigen::MatrixXd>(G).solve(Eigen::MatrixXd::Identity(n, n));
    const int q = 2 * n + m + m * n;
    Eigen::MatrixXd Mid = Eigen::MatrixXd::Zero(n + 1, n + 1);
    Mid.topLeftCorner(n, n) = 0.5 * (Ginv + Ginv.transpose());
    Mid(n, n) = -1.0;
    std::vector<DataQmiBlock> blocks(static_cast<size_t>(T));
    for (int i = 0; i < T; ++i) {
        Eigen::MatrixXd V = Eigen::MatrixXd::Zero(q, n + 1);
        V.topLeftCorner(n, n).setIdentity();
        V.col(n).head(n) = data.X.col(i + 1);
        V.col(n).segment(n, n) = -data.X.col(i);
        V.col(n).segment(2 * n, m) = -data.U.col(i);
        V.col(n).tail(m * n) = -kron_vec(data.U.col(i), data.X.col(i));
        Eigen::MatrixXd N = V * Mid * V.transpose();
        blocks[static_cast<size_t>(i)].N = 0.5 * (N + N.transpose());
    }
    return blocks;
}

Eigen::MatrixXd qmi_congruence(const BilinearSystem &cand, const DataQmiBlock &block) {
    cand.validate();
    const int n = cand.n(), m = cand.m();
    const int q = 2 * n + m + m * n;
    require(block.N.rows() == q && block.N.cols() == q,
            "qmi_congruence: block size does not match the candidate dimensions");
    Eigen::MatrixXd Z(n, q);
    Z << Eigen::MatrixXd::Identity(n, n), cand.A, cand.B, cand.Btilde;
    Eigen::MatrixXd C = Z * block.N * Z.transpose();
    return 0.5 * (C + C.transpose());
}

double membership_margin(const BilinearSystem &cand,
                         const std::vector<DataQmiBlock> &blocks) {
    double margin = std::numeric_limits<double>::infinity();
    for (const DataQmiBlock &b : blocks) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(qmi_congruence(cand, b));
        margin = std::min(margin, es.eigenvalues().minCoeff());
    }
    return margin;
}

bool membership(const BilinearSystem &cand, const std::vector<DataQmiBlock> &blocks) {
    for (const DataQmiBlock &b : blocks) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(qmi_congruence(cand, b));
        if (es.eigenvalues().minCoeff() < -1e-9 * (1.0 + b.N.norm())) return false;
    }
    return true;
}

BilinearSystem least_squares_fit(const TrajectoryData &data) {
    data.validate();
    const int n = data.n(), m = data.m(), T = data.T();
    const int p = n + m + m * n;
    Eigen::MatrixXd Zt(T, p), Yt(T, n);
    for (int i = 0; i < T; ++i) {
        Zt.row(i).head(n) = data.X.col(i).transpose();
        Zt.row(i).segment(n, m) = data.U.col(i).transpose();
        Zt.row(i).tail(m * n) = kron_vec(data.U.col(i), data.X.col(i)).transpose();
        Yt.row(i) = data.X.col(i + 1).transpose();
    }
    const Eigen::MatrixXd Theta =
        Zt.colPivHouseholderQr().solve(Yt).transpose(); // n x p
    BilinearSystem fit;
    fit.A = Theta.leftCols(n);
    fit.B = Theta.middleCols(n, m);
    fit.Btilde = Theta.rightCols(m * n);
    return fit;
}

namespace {

// The consistency set is convex in (A, B, Btilde): each data point imposes
// ||x_{i+1} - Theta z_i||_G <= 1 on Theta = [A B Btilde]. Cyclically rescale
// the worst residual onto (just inside) its boundary; for convex sets these
// corrections reach the intersection whenever it is nonempty.
BilinearSystem project_into_membership(BilinearSystem cand, const TrajectoryData &data,
                                       const Eigen::MatrixXd &G) {
    const int n = cand.n(), m = cand.m(), T = data.T();
    for (int pass = 0; pass < 500; ++pass) {
        double worst = 0.0;
        int at = -1;
        Eigen::VectorXd worst_res;
        for (int i = 0; i < T; ++i) {
            const Eigen::VectorXd res =
                data.X.col(i + 1) - cand.A * data.X.col(i) - cand.B * data.U.col(i) -
                cand.Btilde * kron_vec(data.U.col(i), data.X.col(i));
            const double s = res.dot(G * res);
            if (s > worst) {
                worst = s;
                at = i;
                worst_res = res;
            }
        }
        if (worst <= 1.0 - 1e-9) break;
        Eigen::VectorXd z(n + m + m * n);
        z.head(n) = data.X.col(at);
        z.segment(n, m) = data.U.col(at);
        z.tail(m * n) = kron_vec(data.U.col(at), data.X.col(at));
        const double zz = z.squaredNorm();
        if (zz <= 1e-300)
            throw std::runtime_error(
                "sample_members: a zero-regressor data point violates the noise "
                "bound, so the consistency set is empty");
        // rescale the residual to norm 1 - 1e-6 via a rank-one update
        const double kappa = 1.0 - (1.0 - 1e-6) / std::sqrt(worst);
        const Eigen::MatrixXd delta = kappa * worst_res * z.transpose() / zz;
        cand.A += delta.leftCols(n);
        cand.B += delta.middleCols(n, m);
        cand.Btilde += delta.rightCols(m * n);
    }
    return cand;
}

} // namespace

std::vector<BilinearSystem> sample_members(const TrajectoryData &data,
                                           const std::vector<DataQmiBlock> &blocks,
                                           const Eigen::MatrixXd &G, int count,
                                           std::uint64_t seed) {
    require(count >= 1, "sample_members: count must be positive");
    require(blocks.size() == static_cast<size_t>(data.T()),
            "sample_members: blocks must match the data record");
    const int n = data.n(), m = data.m();
    require(G.rows() == n && G.cols() == n, "sample_members: G has wrong size");
    const BilinearSystem center =
        project_into_membership(least_squares_fit(data), data, G);
    std::vector<BilinearSystem> members;
    if (membership(center, blocks)) members.push_back(center);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    double scale =
        0.05 * (1.0 + center.A.norm() + center.B.norm() + center.Btilde.norm());
    const long max_tries = 2000 + 600L * count;
    for (long tries = 0; static_cast<int>(members.size()) < count; ++tries) {
        if (tries >= max_tries)
            throw std::runtime_error(
                "sample_members: rejection sampling stalled; the consistency set "
                "may be empty or too thin");
        BilinearSystem cand = center;
        cand.A += scale * Eigen::MatrixXd::NullaryExpr(n, n, [&] { return gauss(rng); });
        cand.B += scale * Eigen::MatrixXd::NullaryExpr(n, m, [&] { return gauss(rng); });
        cand.Btilde +=
            scale * Eigen::MatrixXd::NullaryExpr(n, m * n, [&] { return gauss(rng); });
        if (membership(cand, blocks)) {
            members.push_back(cand);
            scale = std::min(scale * 1.3, 1e6);
        } else {
            scale = std::max(scale * 0.6, 1e-9);
        }
    }
    members.resize(static_cast<size_t>(count));
    return members;
}

PolyMatrix assemble_M_of_tau(const std::vector<DataQmiBlock> &blocks,
                             const std::vector<Eigen::MatrixXd> &grams, int nvars,
                             int alpha) {
    require(blocks.size() == grams.size(),
            "assemble_M_of_tau: need exactly one Gram matrix per data block");
    require(!blocks.empty(), "assemble_M_of_tau: no blocks");
    const MonomialBasis basis(nvars, alpha);
    const int q = static_cast<int>(blocks.front().N.rows());
    PolyMatrix M(q, q, nvars);
    for (size_t i = 0; i < blocks.size(); ++i) {
        require(blocks[i].N.rows() == q && blocks[i].N.cols() == q,
                "assemble_M_of_tau: inconsistent block sizes");
        const Polynomial tau = gram_expand(grams[i], basis, 1).at(0, 0);
        if (tau.is_zero()) continue;
        M = M + PolyMatrix::from_constant(blocks[i].N, nvars) * tau;
    }
    return M;
}

void write_trajectory_csv(const TrajectoryData &data, const std::string &path) {
    data.validate();
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_trajectory_csv: cannot open " + path);
    char buf[64];
    auto put = [&](double v, bool last) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        out << buf << (last ? "\n" : ",");
    };
    const int T = data.T(), n = data.n(), m = data.m();
    for (int t = 0; t < T; ++t) {
        for (int i = 0; i < m; ++i) put(data.U(i, t), false);
        for (int k = 0; k < n; ++k) put(data.X(k, t), k == n - 1);
    }
    for (int i = 0; i < m; ++i) out << ",";
    for (int k = 0; k < n; ++k) put(data.X(k, T), k == n - 1);
    if (!out) throw std::runtime_error("write_trajectory_csv: write failed for " + path);
}

TrajectoryData read_trajectory_csv(const std::string &path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_trajectory_csv: cannot open " + path);
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() && in.peek() == std::char_traits<char>::eof()) break;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) fields.push_back(cell);
        if (!line.empty() && line.back() == ',') fields.emplace_back();
        rows.push_back(std::move(fields));
    }
    if (rows.size() < 2) throw std::runtime_error("read_trajectory_csv: need at least two rows");
    const std::vector<std::string> &tail = rows.back();
    size_t m = 0;
    while (m < tail.size() && tail[m].empty()) ++m;
    if (m == 0 || m == tail.size())
        throw std::runtime_error("read_trajectory_csv: malformed final row");
    const size_t n = tail.size() - m;
    const size_t T = rows.size() - 1;
    auto parse = [&](const std::string &s, size_t r, size_t c) {
        char *end = nullptr;
        const double v = std::strtod(s.c_str(), &end);
        if (s.empty() || end != s.c_str() + s.size())
            throw std::runtime_error("read_trajectory_csv: bad number at row " +
                                     std::to_string(r + 1) + ", column " + std::to_string(c + 1));
        return v;
    };
    TrajectoryData data;
    data.U.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(T));
    data.X.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(T) + 1);
    for (size_t t = 0; t < T; ++t) {
        if (rows[t].size() != m + n)
            throw std::runtime_error("read_trajectory_csv: row " + std::to_string(t + 1) +
                                     " has the wrong number of cells");
        for (size_t i = 0; i < m; ++i)
            data.U(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t)) =
                parse(rows[t][i], t, i);
        for (size_t k = 0; k < n; ++k)
            data.X(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(t)) =
                parse(rows[t][m + k], t, m + k);
    }
    for (size_t k = 0; k < n; ++k)
        data.X(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(T)) =
            parse(tail[m + k], T, m + k);
    data.validate();
    return data;
}

} // namespace bilinmpc

#pragma once

#include "bilinmpc/poly.hpp"

#include <Eigen/Dense>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace bilinmpc {

/// Discrete-time bilinear plant  x+ = A x + B u + Btilde (u (x) x) + w.
/// Btilde stores the column blocks [Bt_1 ... Bt_m], each n x n, so the
/// factored form  A x + sum_i (Bt_i x + b_i) u_i + w  is the same map
/// (b_i = i-th column of B).
struct BilinearSystem {
    Eigen::MatrixXd A;       // n x n
    Eigen::MatrixXd B;       // n x m
    Eigen::MatrixXd Btilde;  // n x (m*n)

    int n() const { return static_cast<int>(A.rows()); }
    int m() const { return static_cast<int>(B.cols()); }

    /// Throws std::invalid_argument on inconsistent dimensions.
    void validate() const;
};

/// (u (x) x) with the block-of-x convention: entry i*n + k = u_i * x_k.
Eigen::VectorXd kron_vec(const Eigen::VectorXd &u, const Eigen::VectorXd &x);

/// One step of the plant. Throws std::invalid_argument on dimension mismatch.
Eigen::VectorXd step(const BilinearSystem &sys, const Eigen::VectorXd &x,
                     const Eigen::VectorXd &u, const Eigen::VectorXd &w);
/// Noise-free step.
Eigen::VectorXd step(const BilinearSystem &sys, const Eigen::VectorXd &x,
                     const Eigen::VectorXd &u);
/// Same map evaluated input-by-input:  A x + sum_i u_i (Bt_i x + b_i) + w.
/// Kept separate so tests can assert the two forms agree.
Eigen::VectorXd step_factored(const BilinearSystem &sys, const Eigen::VectorXd &x,
                              const Eigen::VectorXd &u, const Eigen::VectorXd &w);

/// Ellipsoidal noise bound ||w||_G <= 1 with G symmetric positive definite.
struct NoiseModel {
    Eigen::MatrixXd G;
    std::uint64_t seed = 0;
};

/// Draws noise uniformly over the solid ellipsoid {w : w^T G w <= 1}:
/// Gaussian direction, radius U^(1/n), mapped through the symmetric inverse
/// square root of G. Construction checks G for symmetry and positive
/// definiteness (Cholesky) and throws std::invalid_argument otherwise.
class NoiseSampler {
  public:
    explicit NoiseSampler(const NoiseModel &nm);

    /// Draw from the sampler's own stream (seeded with NoiseModel::seed).
    Eigen::VectorXd sample();
    /// Draw from a caller-owned stream (used to interleave with input draws).
    Eigen::VectorXd sample(std::mt19937_64 &rng);

    const Eigen::MatrixXd &shape() const { return shape_; }

  private:
    Eigen::MatrixXd shape_;  // symmetric G^(-1/2)
    std::mt19937_64 rng_;
};

/// I.i.d. excitation inputs, uniform on the box [lo, hi] componentwise.
struct ExcitationPolicy {
    Eigen::VectorXd lo;
    Eigen::VectorXd hi;

    static ExcitationPolicy unit_box(int m);
    Eigen::VectorXd sample(std::mt19937_64 &rng) const;
};

/// Input-state record: U holds u_0..u_{T-1} columnwise, X holds x_0..x_T.
struct TrajectoryData {
    Eigen::MatrixXd U;  // m x T
    Eigen::MatrixXd X;  // n x (T+1)

    int T() const { return static_cast<int>(U.cols()); }
    int n() const { return static_cast<int>(X.rows()); }
    int m() const { return static_cast<int>(U.rows()); }

    /// Throws std::invalid_argument unless X has exactly one more column
    /// than U and both are nonempty.
    void validate() const;
};

/// Deterministic replay of the plant under given inputs and noise
/// realizations (W is n x T; pass an empty matrix for zero noise).
TrajectoryData simulate(const BilinearSystem &sys, const Eigen::VectorXd &x0,
                        const Eigen::MatrixXd &U, const Eigen::MatrixXd &W);

/// Excite the plant for T steps from x0 (zero state if x0 is empty).
/// A single stream seeded with nm.seed drives both the inputs and the noise,
/// interleaved as (u_0, w_0, u_1, w_1, ...), so runs replay bit-for-bit.
TrajectoryData generate_data(const BilinearSystem &sys, const NoiseModel &nm, int T,
                             const ExcitationPolicy &policy,
                             const Eigen::VectorXd &x0 = Eigen::VectorXd());

/// One data point's quadratic-matrix-inequality block: the symmetric
/// (2n+m+mn) square matrix
///   N_i = V_i diag(G^-1, -1) V_i^T,
///   V_i = [[I, x_{i+1}], [0, -x_i], [0, -u_i], [0, -(u_i (x) x_i)]].
/// [I A B Btilde] N_i [I A B Btilde]^T is PSD exactly when the residual
/// x_{i+1} - A x_i - B u_i - Btilde (u_i (x) x_i) satisfies the noise bound.
struct DataQmiBlock {
    Eigen::MatrixXd N;
};

/// One block per data index; length T. Throws std::invalid_argument on
/// dimension mismatch or a non-SPD G.
std::vector<DataQmiBlock> build_qmi_blocks(const TrajectoryData &data,
                                           const Eigen::MatrixXd &G);

/// [I A B Btilde] N_i [I A B Btilde]^T, symmetrized (n x n).
Eigen::MatrixXd qmi_congruence(const BilinearSystem &cand, const DataQmiBlock &block);

/// Smallest eigenvalue of the congruence over all blocks (no tolerance).
double membership_margin(const BilinearSystem &cand,
                         const std::vector<DataQmiBlock> &blocks);

/// Consistency with every data point: lambda_min of each congruence at least
/// -1e-9 * (1 + ||N_i||_F).
bool membership(const BilinearSystem &cand, const std::vector<DataQmiBlock> &blocks);

/// Least-squares point estimate of (A, B, Btilde): minimizes the summed
/// squared one-step residuals over the record.
BilinearSystem least_squares_fit(const TrajectoryData &data);

/// Rejection-samples `count` members of the consistency set: projects the
/// least-squares fit into the set (cyclic residual rescaling; the set is
/// convex in (A, B, Btilde)), then perturbs it with Gaussian noise of
/// adaptive scale, keeping candidates that pass membership(). Throws
/// std::runtime_error if acceptance stalls before `count` members are found.
std::vector<BilinearSystem> sample_members(const TrajectoryData &data,
                                           const std::vector<DataQmiBlock> &blocks,
                                           const Eigen::MatrixXd &G, int count,
                                           std::uint64_t seed);

/// M(tau(x)) = sum_i tau_i(x) N_i with tau_i given by Gram matrices over the
/// degree-alpha monomial basis in nvars variables. Throws on a block/gram
/// count mismatch or a wrongly sized Gram matrix.
PolyMatrix assemble_M_of_tau(const std::vector<DataQmiBlock> &blocks,
                             const std::vector<Eigen::MatrixXd> &grams, int nvars,
                             int alpha);

/// CSV layout: one row per time step with m input cells then n state cells;
/// the final row carries x_T with the input cells left empty. No header.
void write_trajectory_csv(const TrajectoryData &data, const std::string &path);
TrajectoryData read_trajectory_csv(const std::string &path);

} // namespace bilinmpc

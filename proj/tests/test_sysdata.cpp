#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "bilinmpc/sysdata.hpp"

#include <Eigen/Dense>
#include <cstdio>
#include <fstream>
#include <random>

using namespace bilinmpc;

namespace {

// Single-state plant from the zone-temperature example: A=1, B=-0.5, Bt=-0.5.
BilinearSystem zone_system() {
    BilinearSystem sys;
    sys.A = Eigen::MatrixXd::Constant(1, 1, 1.0);
    sys.B = Eigen::MatrixXd::Constant(1, 1, -0.5);
    sys.Btilde = Eigen::MatrixXd::Constant(1, 1, -0.5);
    return sys;
}

BilinearSystem random_system(int n, int m, std::mt19937_64 &rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    BilinearSystem sys;
    sys.A = Eigen::MatrixXd::NullaryExpr(n, n, [&] { return u(rng); });
    sys.B = Eigen::MatrixXd::NullaryExpr(n, m, [&] { return u(rng); });
    sys.Btilde = Eigen::MatrixXd::NullaryExpr(n, m * n, [&] { return u(rng); });
    return sys;
}

Eigen::VectorXd scalar_vec(double v) { return Eigen::VectorXd::Constant(1, v); }

// Residual of one data point under a candidate model.
Eigen::VectorXd residual(const BilinearSystem &cand, const TrajectoryData &d, int i) {
    return d.X.col(i + 1) - cand.A * d.X.col(i) - cand.B * d.U.col(i) -
           cand.Btilde * kron_vec(d.U.col(i), d.X.col(i));
}

} // namespace

TEST_CASE("step matches the zone-temperature examples") {
    BilinearSystem sys = zone_system();
    CHECK(step(sys, scalar_vec(-0.1), scalar_vec(0.0))(0) == doctest::Approx(-0.1).epsilon(1e-15));
    CHECK(step(sys, scalar_vec(0.0), scalar_vec(1.0))(0) == doctest::Approx(-0.5).epsilon(1e-15));
    // with zero state and input the step returns the noise itself
    CHECK(step(sys, scalar_vec(0.0), scalar_vec(0.0), scalar_vec(0.37))(0) == 0.37);
}

TEST_CASE("input-by-input factored form agrees with the Kronecker form") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 1 + static_cast<int>(rng() % 4);
        const int m = 1 + static_cast<int>(rng() % 3);
        BilinearSystem sys = random_system(n, m, rng);
        Eigen::VectorXd x = Eigen::VectorXd::NullaryExpr(n, [&] { return u(rng); });
        Eigen::VectorXd uu = Eigen::VectorXd::NullaryExpr(m, [&] { return u(rng); });
        Eigen::VectorXd w = Eigen::VectorXd::NullaryExpr(n, [&] { return u(rng); });
        Eigen::VectorXd a = step(sys, x, uu, w);
        Eigen::VectorXd b = step_factored(sys, x, uu, w);
        CHECK((a - b).cwiseAbs().maxCoeff() <= 1e-12 * (1.0 + a.cwiseAbs().maxCoeff()));
    }
}

TEST_CASE("step rejects mismatched dimensions") {
    BilinearSystem sys = zone_system();
    CHECK_THROWS_AS(step(sys, Eigen::VectorXd::Zero(2), scalar_vec(0.0)), std::invalid_argument);
    CHECK_THROWS_AS(step(sys, scalar_vec(0.0), Eigen::VectorXd::Zero(2)), std::invalid_argument);
    BilinearSystem bad = sys;
    bad.Btilde = Eigen::MatrixXd::Zero(1, 2);
    CHECK_THROWS_AS(step(bad, scalar_vec(0.0), scalar_vec(0.0)), std::invalid_argument);
}

TEST_CASE("kron_vec uses the block-of-x layout") {
    Eigen::VectorXd u(2), x(3);
    u << 2.0, -1.0;
    x << 1.0, 10.0, 100.0;
    Eigen::VectorXd k = kron_vec(u, x);
    REQUIRE(k.size() == 6);
    CHECK(k(0) == 2.0);
    CHECK(k(1) == 20.0);
    CHECK(k(2) == 200.0);
    CHECK(k(3) == -1.0);
    CHECK(k(4) == -10.0);
    CHECK(k(5) == -100.0);
}

TEST_CASE("noise sampling stays inside the ellipsoid") {
    SUBCASE("scalar bound from the zone example: G = 1e6 gives |w| <= 1e-3") {
        NoiseModel nm;
        nm.G = Eigen::MatrixXd::Constant(1, 1, 1e6);
        nm.seed = 5;
        NoiseSampler sampler(nm);
        double worst = 0.0;
        for (int i = 0; i < 20000; ++i) worst = std::max(worst, std::abs(sampler.sample()(0)));
        CHECK(worst <= 1e-3);
        CHECK(worst >= 0.5e-3); // the support is actually reached
    }
    SUBCASE("identity bound in two dimensions, large sample") {
        NoiseModel nm;
        nm.G = Eigen::MatrixXd::Identity(2, 2);
        nm.seed = 7;
        NoiseSampler sampler(nm);
        double worst = 0.0;
        for (int i = 0; i < 100000; ++i) worst = std::max(worst, sampler.sample().norm());
        CHECK(worst <= 1.0);
        CHECK(worst >= 0.99);
    }
    SUBCASE("general G: the weighted norm respects the bound") {
        NoiseModel nm;
        nm.G.resize(2, 2);
        nm.G << 4.0, 1.0, 1.0, 3.0;
        nm.seed = 9;
        NoiseSampler sampler(nm);
        for (int i = 0; i < 5000; ++i) {
            Eigen::VectorXd w = sampler.sample();
            CHECK(w.dot(nm.G * w) <= 1.0 + 1e-12);
        }
    }
}

TEST_CASE("noise sampling is deterministic per seed") {
    NoiseModel nm;
    nm.G = Eigen::MatrixXd::Identity(3, 3) * 2.0;
    nm.seed = 1234;
    NoiseSampler a(nm), b(nm);
    for (int i = 0; i < 1000; ++i) {
        Eigen::VectorXd wa = a.sample(), wb = b.sample();
        CHECK((wa - wb).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("noise model rejects matrices that are not symmetric positive definite") {
    NoiseModel nm;
    nm.G.resize(2, 2);
    nm.G << 1.0, 2.0, 2.0, 1.0; // indefinite
    CHECK_THROWS_AS(NoiseSampler{nm}, std::invalid_argument);
    nm.G << 1.0, 0.5, -0.5, 1.0; // asymmetric
    CHECK_THROWS_AS(NoiseSampler{nm}, std::invalid_argument);
}

TEST_CASE("generate_data produces a length-T record") {
    BilinearSystem sys = zone_system();
    NoiseModel nm;
    nm.G = Eigen::MatrixXd::Constant(1, 1, 1e6);
    nm.seed = 42;
    TrajectoryData data = generate_data(sys, nm, 100, ExcitationPolicy::unit_box(1));
    CHECK(data.U.cols() == 100);
    CHECK(data.X.cols() == 101);
    // every transition obeys the dynamics with an admissible noise realization
    for (int i = 0; i < data.T(); ++i) {
        Eigen::VectorXd w = residual(sys, data, i);
        CHECK(w.dot(nm.G * w) <= 1.0 + 1e-12);
    }
}

TEST_CASE("generate_data replays bit-for-bit under the same seed") {
    std::mt19937_64 rng(3);
    BilinearSystem sys = random_system(2, 2, rng);
    NoiseModel nm;
    nm.G = Eigen::MatrixXd::Identity(2, 2) * 50.0;
    nm.seed = 77;
    TrajectoryData a = generate_data(sys, nm, 40, ExcitationPolicy::unit_box(2));
    TrajectoryData b = generate_data(sys, nm, 40, ExcitationPolicy::unit_box(2));
    CHECK((a.U - b.U).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a.X - b.X).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("simulate with zero input and zero noise keeps the origin fixed") {
    BilinearSystem sys = zone_system();
    TrajectoryData data = simulate(sys, scalar_vec(0.0), Eigen::MatrixXd::Zero(1, 25),
                                   Eigen::MatrixXd());
    CHECK(data.X.cwiseAbs().maxCoeff() == 0.0);
    // and replaying recorded noise reproduces a noisy run exactly
    NoiseModel nm;
    nm.G = Eigen::MatrixXd::Constant(1, 1, 100.0);
    nm.seed = 8;
    TrajectoryData noisy = generate_data(sys, nm, 25, ExcitationPolicy::unit_box(1));
    Eigen::MatrixXd W(1, 25);
    for (int i = 0; i < 25; ++i) W.col(i) = residual(sys, noisy, i);
    TrajectoryData replay = simulate(sys, noisy.X.col(0), noisy.U, W);
    CHECK((replay.X - noisy.X).cwiseAbs().maxCoeff() <= 1e-14);
}

TEST_CASE("qmi block for the worked scalar data point") {
    TrajectoryData data;
    data.U = Eigen::MatrixXd::Constant(1, 1, 1.0);
    data.X.resize(1, 2);
    data.X << 0.0, 0.5;
    auto blocks = build_qmi_blocks(data, Eigen::MatrixXd::Identity(1, 1));
    REQUIRE(blocks.size() == 1);
    REQUIRE(blocks[0].N.rows() == 4); // 2n + m + mn with n = m = 1
    Eigen::MatrixXd expected(4, 4);
    expected << 0.75, 0, 0.5, 0,
                0,    0, 0,   0,
                0.5,  0, -1,  0,
                0,    0, 0,   0;
    CHECK((blocks[0].N - expected).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("qmi block of an all-zero data point is diag(G^-1, 0, 0, 0)") {
    TrajectoryData data;
    data.U = Eigen::MatrixXd::Zero(1, 1);
    data.X = Eigen::MatrixXd::Zero(1, 2);
    auto blocks = build_qmi_blocks(data, Eigen::MatrixXd::Constant(1, 1, 4.0));
    Eigen::MatrixXd expected = Eigen::MatrixXd::Zero(4, 4);
    expected(0, 0) = 0.25;
    CHECK((blocks[0].N - expected).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("qmi blocks have at most n positive eigenvalues") {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 10; ++trial) {
        const int n = 1 + static_cast<int>(rng() % 3);
        const int m = 1 + static_cast<int>(rng() % 2);
        BilinearSystem sys = random_system(n, m, rng);
        NoiseModel nm;
        nm.G = Eigen::MatrixXd::Identity(n, n) * 10.0;
        nm.seed = rng();
        TrajectoryData data = generate_data(sys, nm, 15, ExcitationPolicy::unit_box(m));
        for (const DataQmiBlock &b : build_qmi_blocks(data, nm.G)) {
            CHECK((b.N - b.N.transpose()).cwiseAbs().maxCoeff() == 0.0);
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(b.N);
            int positive = 0;
            for (int k = 0; k < es.eigenvalues().size(); ++k)
                if (es.eigenvalues()(k) > 1e-12 * (1.0 + b.N.norm())) ++positive;
            CHECK(positive <= n);
        }
    }
}

TEST_CASE("the true system is always a member of its own consistency set") {
    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 1 + static_cast<int>(rng() % 2);
        const int m = 1 + static_cast<int>(rng() % 2);
        BilinearSystem sys = random_system(n, m, rng);
        NoiseModel nm;
        nm.G = Eigen::MatrixXd::Identity(n, n) * (1.0 + static_cast<double>(rng() % 100));
        nm.seed = rng();
        TrajectoryData data = generate_data(sys, nm, 12, ExcitationPolicy::unit_box(m));
        CHECK(membership(sys, build_qmi_blocks(data, nm.G)));
    }
}

TEST_CASE("membership agrees with the brute-force residual test") {
    std::mt19937_64 rng(41);
    const int n = 2, m = 1;
    BilinearSystem sys = random_system(n, m, rng);
    NoiseModel nm;
    nm.G = Eigen::MatrixXd::Identity(n, n) * 30.0;
    nm.G(0, 1) = nm.G(1, 0) = 5.0;
    nm.seed = 17;
    TrajectoryData data = generate_data(sys, nm, 20, ExcitationPolicy::unit_box(m));
    auto blocks = build_qmi_blocks(data, nm.G);
    std::uniform_real_distribution<double> du(-1.0, 1.0);
    std::uniform_real_distribution<double> dlog(std::log(1e-5), std::log(0.5));
    int disagreements = 0, members = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        // log-uniform perturbation size so the scan straddles the boundary
        const double scale = std::exp(dlog(rng));
        BilinearSystem cand = sys;
        cand.A += scale * Eigen::MatrixXd::NullaryExpr(n, n, [&] { return du(rng); });
        cand.B += scale * Eigen::MatrixXd::NullaryExpr(n, m, [&] { return du(rng); });
        cand.Btilde += scale * Eigen::MatrixXd::NullaryExpr(n, m * n, [&] { return du(rng); });
        double worst = 0.0;
        for (int i = 0; i < data.T(); ++i) {
            Eigen::VectorXd w = residual(cand, data, i);
            worst = std::max(worst, w.dot(nm.G * w));
        }
        if (std::abs(worst - 1.0) < 1e-7) continue; // skip the knife edge
        members += worst <= 1.0;
        if (membership(cand, blocks) != (worst <= 1.0)) ++disagreements;
    }
    CHECK(disagreements == 0);
    CHECK(members > 50);        // the scan actually exercises both outcomes
    CHECK(members < 950);
}

TEST_CASE("congruence equals the noise-bound slack G^-1 - w w^T") {
    std::mt19937_64 rng(51);
    const int n = 2, m = 2;
    BilinearSystem sys = random_system(n, m, rng);
    NoiseModel nm;
    nm.G = Eigen::MatrixXd::Identity(n, n) * 8.0;
    nm.seed = 3;
    TrajectoryData data = generate_data(sys, nm, 10, ExcitationPolicy::unit_box(m));
    auto blocks = build_qmi_blocks(data, nm.G);
    const Eigen::MatrixXd Ginv = nm.G.inverse();
    for (int i = 0; i < data.T(); ++i) {
        Eigen::VectorXd w = residual(sys, data, i);
        Eigen::MatrixXd expected = Ginv - w * w.transpose();
        CHECK((qmi_congruence(sys, blocks[static_cast<size_t>(i)]) - expected)
                  .cwiseAbs()
                  .maxCoeff() <= 1e-12);
    }
}

TEST_CASE("an aggressive perturbation of A is rejected on exciting data") {
    BilinearSystem sys = zone_system();
    NoiseModel nm;
    nm.G = Eigen::MatrixXd::Constant(1, 1, 1e6);
    nm.seed = 99;
    TrajectoryData data = generate_data(sys, nm, 100, ExcitationPolicy::unit_box(1),
                                        scalar_vec(0.5));
    auto blocks = build_qmi_blocks(data, nm.G);
    const double gram = data.X.leftCols(data.T()).squaredNorm();
    BilinearSystem cand = sys;
    cand.A(0, 0) += 10.0 / std::sqrt(gram);
    CHECK_FALSE(membership(cand, blocks));
    // pin down a violated index with the scalar residual bound
    bool violated = false;
    for (int i = 0; i < data.T(); ++i) {
        Eigen::VectorXd w = residual(cand, data, i);
        violated = violated || w.dot(nm.G * w) > 1.0;
    }
    CHECK(violated);
    CHECK(membership_margin(cand, blocks) < 0.0);
    CHECK(membership_margin(sys, blocks) >= 0.0);
}

TEST_CASE("assemble_M_of_tau") {
    TrajectoryData data;
    data.U = Eigen::MatrixXd::Constant(1, 1, 1.0);
    data.X.resize(1, 2);
    data.X << 0.0, 0.5;
    auto blocks = build_qmi_blocks(data, Eigen::MatrixXd::Identity(1, 1));
    const MonomialBasis basis(1, 1); // {1, x}

    SUBCASE("all-zero multipliers give the zero matrix") {
        PolyMatrix M = assemble_M_of_tau(blocks, {Eigen::MatrixXd::Zero(2, 2)}, 1, 1);
        CHECK(M.degree() == Polynomial::kZeroDegree);
        CHECK(M.eval(scalar_vec(3.0)).cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("tau_0 = 1 reproduces N_0") {
        Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(2, 2);
        Q(0, 0) = 1.0;
        PolyMatrix M = assemble_M_of_tau(blocks, {Q}, 1, 1);
        CHECK((M.eval(scalar_vec(7.0)) - blocks[0].N).cwiseAbs().maxCoeff() <= 1e-15);
    }
    SUBCASE("tau_0 = x^2 scales N_0 by x^2") {
        Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(2, 2);
        Q(1, 1) = 1.0;
        PolyMatrix M = assemble_M_of_tau(blocks, {Q}, 1, 1);
        CHECK((M.eval(scalar_vec(2.0)) - 4.0 * blocks[0].N).cwiseAbs().maxCoeff() <= 1e-14);
    }
    SUBCASE("random multipliers match the numeric sum at random points") {
        std::mt19937_64 rng(61);
        std::uniform_real_distribution<double> du(-1.0, 1.0);
        BilinearSystem sys = random_system(2, 1, rng);
        NoiseModel nm;
        nm.G = Eigen::MatrixXd::Identity(2, 2) * 5.0;
        nm.seed = 13;
        TrajectoryData d2 = generate_data(sys, nm, 6, ExcitationPolicy::unit_box(1));
        auto b2 = build_qmi_blocks(d2, nm.G);
        const MonomialBasis basis2(2, 2);
        std::vector<Eigen::MatrixXd> grams;
        for (int i = 0; i < 6; ++i) {
            Eigen::MatrixXd W =
                Eigen::MatrixXd::NullaryExpr(basis2.size(), basis2.size(),
                                             [&] { return du(rng); });
            grams.push_back(0.5 * (W + W.transpose()));
        }
        PolyMatrix M = assemble_M_of_tau(b2, grams, 2, 2);
        CHECK(M.degree() <= 4);
        for (int trial = 0; trial < 20; ++trial) {
            Eigen::VectorXd x = Eigen::VectorXd::NullaryExpr(2, [&] { return du(rng); });
            Eigen::VectorXd z = basis2.eval(x);
            Eigen::MatrixXd expected = Eigen::MatrixXd::Zero(7, 7);
            for (int i = 0; i < 6; ++i)
                expected += z.dot(grams[static_cast<size_t>(i)] * z) *
                            b2[static_cast<size_t>(i)].N;
            CHECK((M.eval(x) - expected).cwiseAbs().maxCoeff() <=
                  1e-12 * (1.0 + expected.cwiseAbs().maxCoeff()));
        }
    }
    SUBCASE("count mismatch throws") {
        CHECK_THROWS_AS(assemble_M_of_tau(blocks, {}, 1, 1), std::invalid_argument);
        CHECK_THROWS_AS(
            assemble_M_of_tau(blocks, {Eigen::MatrixXd::Zero(3, 3)}, 1, 1),
            std::invalid_argument);
    }
}

TEST_CASE("least-squares fit recovers the true system from noiseless data") {
    std::mt19937_64 rng(81);
    std::uniform_real_distribution<double> du(-1.0, 1.0);
    BilinearSystem sys = random_system(2, 1, rng);
    Eigen::MatrixXd U = Eigen::MatrixXd::NullaryExpr(1, 30, [&] { return du(rng); });
    Eigen::VectorXd x0(2);
    x0 << 0.3, -0.2;
    TrajectoryData data = simulate(sys, x0, U, Eigen::MatrixXd());
    BilinearSystem fit = least_squares_fit(data);
    CHECK((fit.A - sys.A).cwiseAbs().maxCoeff() <= 1e-8);
    CHECK((fit.B - sys.B).cwiseAbs().maxCoeff() <= 1e-8);
    CHECK((fit.Btilde - sys.Btilde).cwiseAbs().maxCoeff() <= 1e-8);
}

TEST_CASE("rejection sampling returns genuine members of the consistency set") {
    std::mt19937_64 rng(91);
    BilinearSystem sys = random_system(1, 1, rng);
    NoiseModel nm;
    nm.G = Eigen::MatrixXd::Constant(1, 1, 1e4);
    nm.seed = 23;
    TrajectoryData data = generate_data(sys, nm, 50, ExcitationPolicy::unit_box(1),
                                        scalar_vec(0.4));
    auto blocks = build_qmi_blocks(data, nm.G);
    auto members = sample_members(data, blocks, nm.G, 25, 7);
    REQUIRE(members.size() == 25);
    double spread = 0.0;
    for (const BilinearSystem &cand : members) {
        CHECK(membership(cand, blocks));
        spread = std::max(spread, (cand.A - members.front().A).cwiseAbs().maxCoeff());
    }
    CHECK(spread > 0.0); // not all copies of the fit
    auto replay = sample_members(data, blocks, nm.G, 25, 7);
    for (size_t i = 0; i < members.size(); ++i)
        CHECK((members[i].A - replay[i].A).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("trajectory csv round-trip") {
    std::mt19937_64 rng(71);
    BilinearSystem sys = random_system(2, 2, rng);
    NoiseModel nm;
    nm.G = Eigen::MatrixXd::Identity(2, 2) * 9.0;
    nm.seed = 19;
    TrajectoryData data = generate_data(sys, nm, 100, ExcitationPolicy::unit_box(2));
    const std::string path = "roundtrip_traj.csv";
    write_trajectory_csv(data, path);
    TrajectoryData back = read_trajectory_csv(path);
    REQUIRE(back.m() == 2);
    REQUIRE(back.n() == 2);
    REQUIRE(back.T() == 100);
    CHECK((back.U - data.U).cwiseAbs().maxCoeff() == 0.0);
    CHECK((back.X - data.X).cwiseAbs().maxCoeff() == 0.0);
    std::remove(path.c_str());
}

TEST_CASE("trajectory csv rejects malformed input") {
    const std::string path = "malformed_traj.csv";
    {
        std::ofstream out(path);
        out << "1.0,2.0\n1.5,2.5\n"; // no terminal state row
    }
    CHECK_THROWS_AS(read_trajectory_csv(path), std::runtime_error);
    {
        std::ofstream out(path);
        out << "1.0,2.0\n,abc\n"; // unparsable state cell
    }
    CHECK_THROWS_AS(read_trajectory_csv(path), std::runtime_error);
    {
        std::ofstream out(path);
        out << "1.0,2.0,3.0\n,4.0\n"; // ragged row widths
    }
    CHECK_THROWS_AS(read_trajectory_csv(path), std::runtime_error);
    std::remove(path.c_str());
}

#pragma once

#include <Eigen/Dense>
#include <limits>
#include <map>
#include <string>
#include <vector>

namespace bilinmpc {

/// Exponent vector of a monomial x1^a1 * ... * xn^an.
/// Ordered graded-lexicographically: lower total degree first, ties broken
/// by entry-wise comparison of the exponent vectors.
class MultiIndex {
  public:
    MultiIndex() = default;
    explicit MultiIndex(std::vector<int> exponents);

    static MultiIndex zero(int nvars);
    static MultiIndex unit(int nvars, int var);

    int nvars() const { return static_cast<int>(exps_.size()); }
    int degree() const;
    int operator[](int i) const { return exps_[static_cast<size_t>(i)]; }
    const std::vector<int> &exponents() const { return exps_; }

    MultiIndex operator+(const MultiIndex &other) const;

    bool operator==(const MultiIndex &other) const { return exps_ == other.exps_; }
    bool operator!=(const MultiIndex &other) const { return exps_ != other.exps_; }
    bool operator<(const MultiIndex &other) const;

    std::string str() const;

  private:
    std::vector<int> exps_;
};

/// Sparse multivariate polynomial with real coefficients.
/// Terms with coefficient exactly 0.0 are never stored.
class Polynomial {
  public:
    /// Degree reported for the zero polynomial (stands in for -inf).
    static constexpr int kZeroDegree = std::numeric_limits<int>::min();

    Polynomial() = default;
    explicit Polynomial(int nvars) : nvars_(nvars) {}

    static Polynomial constant(int nvars, double value);
    static Polynomial variable(int nvars, int var);
    static Polynomial monomial(const MultiIndex &mi, double coeff);

    int nvars() const { return nvars_; }
    int degree() const;
    bool is_zero() const { return terms_.empty(); }
    const std::map<MultiIndex, double> &terms() const { return terms_; }

    double coeff(const MultiIndex &mi) const;
    void add_term(const MultiIndex &mi, double coeff);

    Polynomial operator+(const Polynomial &q) const;
    Polynomial operator-(const Polynomial &q) const;
    Polynomial operator*(const Polynomial &q) const;
    Polynomial operator*(double s) const;
    Polynomial operator-() const { return *this * -1.0; }
    Polynomial pow(int k) const;

    double eval(const Eigen::VectorXd &x) const;

    std::string str() const;

  private:
    int nvars_ = 0;
    std::map<MultiIndex, double> terms_;
};

inline Polynomial operator*(double s, const Polynomial &p) { return p * s; }

/// All monomials of degree <= maxdeg in nvars variables, graded-lex order.
class MonomialBasis {
  public:
    MonomialBasis(int nvars, int maxdeg);

    int nvars() const { return nvars_; }
    int maxdeg() const { return maxdeg_; }
    int size() const { return static_cast<int>(monomials_.size()); }
    const MultiIndex &operator[](int i) const { return monomials_[static_cast<size_t>(i)]; }
    const std::vector<MultiIndex> &monomials() const { return monomials_; }

    /// Position of mi in the basis, -1 if absent.
    int index_of(const MultiIndex &mi) const;

    /// The evaluation vector z(x).
    Eigen::VectorXd eval(const Eigen::VectorXd &x) const;

  private:
    int nvars_;
    int maxdeg_;
    std::vector<MultiIndex> monomials_;
    std::map<MultiIndex, int> index_;
};

/// Dense matrix with Polynomial entries, all sharing the same variable count.
class PolyMatrix {
  public:
    PolyMatrix() = default;
    PolyMatrix(int rows, int cols, int nvars);

    static PolyMatrix from_constant(const Eigen::MatrixXd &m, int nvars);

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    int nvars() const { return nvars_; }
    int degree() const;

    Polynomial &at(int i, int j);
    const Polynomial &at(int i, int j) const;

    PolyMatrix operator+(const PolyMatrix &other) const;
    PolyMatrix operator-(const PolyMatrix &other) const;
    PolyMatrix operator*(const PolyMatrix &other) const;
    PolyMatrix operator*(const Polynomial &p) const;
    PolyMatrix operator*(double s) const;
    PolyMatrix transpose() const;

    bool is_symmetric() const;

    Eigen::MatrixXd eval(const Eigen::VectorXd &x) const;

  private:
    int rows_ = 0;
    int cols_ = 0;
    int nvars_ = 0;
    std::vector<Polynomial> entries_;
};

/// Kronecker product of a polynomial matrix with the variable vector:
/// for L of shape m x n, returns the mn x n matrix with
/// entry ((i-1)n + k, j) = L(i,j) * x_k.
PolyMatrix kron_with_state(const PolyMatrix &L);

/// Expands S(x) = (z(x) (x) I_k)^T Q (z(x) (x) I_k) for a symmetric Gram
/// matrix Q of size k*|B|. Indexing of Q is basis-major: row a*k + i pairs
/// basis monomial a with matrix row i.
PolyMatrix gram_expand(const Eigen::MatrixXd &Q, const MonomialBasis &B, int k);

} // namespace bilinmpc

#pragma once

#include "bilinmpc/poly.hpp"
#include "bilinmpc/sdp.hpp"

#include <map>
#include <string>
#include <vector>

namespace bilinmpc {

/// Scalar affine expression  constant + sum coeff_v * v  over decision
/// variables identified by integer handles from a VarRegistry.
struct LinExpr {
    double constant = 0.0;
    std::map<int, double> coeffs;

    LinExpr() = default;
    explicit LinExpr(double c) : constant(c) {}
    static LinExpr var(int handle, double coeff = 1.0);

    bool is_constant() const { return coeffs.empty(); }
    double coeff(int handle) const;
    void add(int handle, double coeff);

    LinExpr operator+(const LinExpr &o) const;
    LinExpr operator-(const LinExpr &o) const;
    LinExpr operator*(double s) const;
    LinExpr operator-() const { return *this * -1.0; }

    bool operator==(const LinExpr &o) const {
        return constant == o.constant && coeffs == o.coeffs;
    }
};

/// Where a decision variable lives inside the SdpProblem being assembled:
/// either a free scalar column or one entry of a PSD block (read through the
/// symmetric-matrix convention, so (i,j) and (j,i) are the same variable).
struct VarBinding {
    enum class Kind { Free, PsdEntry };
    Kind kind = Kind::Free;
    int index = -1;       // free column
    int block = -1, i = -1, j = -1;
};

/// Names and bindings for the scalar decision variables of one assembled
/// program. Handles are dense integers in creation order.
class VarRegistry {
  public:
    int add_free(SdpProblem &p, const std::string &name);
    int add_psd_entry(const std::string &name, int block, int i, int j);

    int count() const { return static_cast<int>(bindings_.size()); }
    const VarBinding &binding(int handle) const { return bindings_.at(static_cast<size_t>(handle)); }
    const std::string &name(int handle) const { return names_.at(static_cast<size_t>(handle)); }

    /// Emits  -sum coeff_v * (column of v)  into an equality row and returns
    /// the accumulated constant, i.e. rewrites "gram terms = expr" as
    /// "gram terms - expr.vars = expr.constant".
    void subtract_into(const LinExpr &e, EqRow &row) const;

    /// Reads the value of an expression off a solved point.
    double value(const LinExpr &e, const SdpSolution &sol) const;

  private:
    std::vector<VarBinding> bindings_;
    std::vector<std::string> names_;
};

/// Polynomial in x whose coefficients are LinExpr in the decision variables.
class AffinePoly {
  public:
    AffinePoly() = default;
    explicit AffinePoly(int nvars) : nvars_(nvars) {}

    static AffinePoly from(const Polynomial &p);
    /// The expression e itself, as a degree-0 polynomial in x.
    static AffinePoly expr(int nvars, const LinExpr &e);

    int nvars() const { return nvars_; }
    int degree() const;
    bool is_zero() const { return terms_.empty(); }
    const std::map<MultiIndex, LinExpr> &terms() const { return terms_; }

    LinExpr coeff(const MultiIndex &mi) const;
    void add_term(const MultiIndex &mi, const LinExpr &e);

    AffinePoly operator+(const AffinePoly &q) const;
    AffinePoly operator-(const AffinePoly &q) const;
    AffinePoly operator*(const Polynomial &p) const;
    AffinePoly operator*(double s) const;

    /// Instantiates the decision variables from a solved point.
    Polynomial instantiate(const VarRegistry &reg, const SdpSolution &sol) const;

  private:
    int nvars_ = 0;
    std::map<MultiIndex, LinExpr> terms_;
};

/// Dense matrix of AffinePoly entries, mirroring PolyMatrix.
class AffinePolyMatrix {
  public:
    AffinePolyMatrix() = default;
    AffinePolyMatrix(int rows, int cols, int nvars);

    static AffinePolyMatrix from(const PolyMatrix &m);

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    int nvars() const { return nvars_; }
    int degree() const;

    AffinePoly &at(int i, int j);
    const AffinePoly &at(int i, int j) const;

    /// Copies src into the sub-matrix with top-left corner (i0, j0).
    void place(int i0, int j0, const AffinePolyMatrix &src);
    void place(int i0, int j0, const AffinePoly &entry) { at(i0, j0) = entry; }

    AffinePolyMatrix operator+(const AffinePolyMatrix &o) const;
    AffinePolyMatrix operator-(const AffinePolyMatrix &o) const;
    AffinePolyMatrix operator*(const Polynomial &p) const;
    AffinePolyMatrix operator*(double s) const;
    AffinePolyMatrix transpose() const;

    bool is_symmetric() const;

    PolyMatrix instantiate(const VarRegistry &reg, const SdpSolution &sol) const;

  private:
    int rows_ = 0, cols_ = 0, nvars_ = 0;
    std::vector<AffinePoly> entries_;
};

} // namespace bilinmpc

#include "bilinmpc/poly.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace bilinmpc {

MultiIndex::MultiIndex(std::vector<int> exponents) : exps_(std::move(exponents)) {
    for (int e : exps_) {
        if (e < 0) throw std::invalid_argument("MultiIndex: negative exponent");
    }
}

MultiIndex MultiIndex::zero(int nvars) { return MultiIndex(std::vector<int>(static_cast<size_t>(nvars), 0)); }

MultiIndex MultiIndex::unit(int nvars, int var) {
    std::vector<int> e(static_cast<size_t>(nvars), 0);
    e.at(static_cast<size_t>(var)) = 1;
    return MultiIndex(std::move(e));
}

int MultiIndex::degree() const { return std::accumulate(exps_.begin(), exps_.end(), 0); }

MultiIndex MultiIndex::operator+(const MultiIndex &other) const {
    if (nvars() != other.nvars()) throw std::invalid_argument("MultiIndex: nvars mismatch");
    std::vector<int> e(exps_);
    for (size_t i = 0; i < e.size(); ++i) e[i] += other.exps_[i];
    return MultiIndex(std::move(e));
}

bool MultiIndex::operator<(const MultiIndex &other) const {
    const int da = degree(), db = other.degree();
    if (da != db) return da < db;
    return exps_ < other.exps_;
}

std::string MultiIndex::str() const {
    std::ostringstream os;
    bool first = true;
    for (int i = 0; i < nvars(); ++i) {
        if (exps_[static_cast<size_t>(i)] == 0) continue;
        if (!first) os << "*";
        os << "x" << (i + 1);
        if (exps_[static_cast<size_t>(i)] > 1) os << "^" << exps_[static_cast<size_t>(i)];
        first = false;
    }
    return first ? "1" : os.str();
}

Polynomial Polynomial::constant(int nvars, double value) {
    Polynomial p(nvars);
    p.add_term(MultiIndex::zero(nvars), value);
    return p;
}

Polynomial Polynomial::variable(int nvars, int var) {
    Polynomial p(nvars);
    p.add_term(MultiIndex::unit(nvars, var), 1.0);
    return p;
}

Polynomial Polynomial::monomial(const MultiIndex &mi, double coeff) {
    Polynomial p(mi.nvars());
    p.add_term(mi, coeff);
    return p;
}

int Polynomial::degree() const {
    if (terms_.empty()) return kZeroDegree;
    // graded order: the last term has maximal total degree
    return terms_.rbegin()->first.degree();
}

double Polynomial::coeff(const MultiIndex &mi) const {
    auto it = terms_.find(mi);
    return it == terms_.end() ? 0.0 : it->second;
}

void Polynomial::add_term(const MultiIndex &mi, double coeff) {
    if (mi.nvars() != nvars_) throw std::invalid_argument("Polynomial: nvars mismatch");
    auto it = terms_.find(mi);
    if (it == terms_.end()) {
        if (coeff != 0.0) terms_.emplace(mi, coeff);
        return;
    }
    it->second += coeff;
    if (it->second == 0.0) terms_.erase(it);
}

Polynomial Polynomial::operator+(const Polynomial &q) const {
    if (nvars_ != q.nvars_) throw std::invalid_argument("Polynomial: nvars mismatch");
    Polynomial r(*this);
    for (const auto &[mi, c] : q.terms_) r.add_term(mi, c);
    return r;
}

Polynomial Polynomial::operator-(const Polynomial &q) const {
    if (nvars_ != q.nvars_) throw std::invalid_argument("Polynomial: nvars mismatch");
    Polynomial r(*this);
    for (const auto &[mi, c] : q.terms_) r.add_term(mi, -c);
    return r;
}

Polynomial Polynomial::operator*(const Polynomial &q) const {
    if (nvars_ != q.nvars_) throw std::invalid_argument("Polynomial: nvars mismatch");
    Polynomial r(nvars_);
    for (const auto &[a, ca] : terms_) {
        for (const auto &[b, cb] : q.terms_) {
            r.add_term(a + b, ca * cb);
        }
    }
    return r;
}

Polynomial Polynomial::operator*(double s) const {
    Polynomial r(nvars_);
    if (s == 0.0) return r;
    for (const auto &[mi, c] : terms_) r.add_term(mi, c * s);
    return r;
}

Polynomial Polynomial::pow(int k) const {
    if (k < 0) throw std::invalid_argument("Polynomial::pow: negative exponent");
    Polynomial r = Polynomial::constant(nvars_, 1.0);
    for (int i = 0; i < k; ++i) r = r * (*this);
    return r;
}

double Polynomial::eval(const Eigen::VectorXd &x) const {
    if (x.size() != nvars_) throw std::invalid_argument("Polynomial::eval: dimension mismatch");
    double sum = 0.0;
    for (const auto &[mi, c] : terms_) {
        double term = c;
        for (int i = 0; i < nvars_; ++i) {
            for (int e = 0; e < mi[i]; ++e) term *= x[i];
        }
        sum += term;
    }
    return sum;
}

std::string Polynomial::str() const {
    if (terms_.empty()) return "0";
    std::ostringstream os;
    bool first = true;
    for (const auto &[mi, c] : terms_) {
        if (!first) os << " + ";
        os << c;
        if (mi.degree() > 0) os << "*" << mi.str();
        first = false;
    }
    return os.str();
}

namespace {

void enumerate_exponents(int nvars, int maxdeg, int var, std::vector<int> &current,
                         std::vector<MultiIndex> &out) {
    if (var == nvars) {
        out.emplace_back(current);
        return;
    }
    const int used = std::accumulate(current.begin(), current.begin() + var, 0);
    for (int e = 0; e <= maxdeg - used; ++e) {
        current[static_cast<size_t>(var)] = e;
        enumerate_exponents(nvars, maxdeg, var + 1, current, out);
    }
    current[static_cast<size_t>(var)] = 0;
}

} // namespace

MonomialBasis::MonomialBasis(int nvars, int maxdeg) : nvars_(nvars), maxdeg_(maxdeg) {
    if (nvars < 1 || maxdeg < 0) throw std::invalid_argument("MonomialBasis: bad dimensions");
    std::vector<int> current(static_cast<size_t>(nvars), 0);
    enumerate_exponents(nvars, maxdeg, 0, current, monomials_);
    std::sort(monomials_.begin(), monomials_.end());
    for (int i = 0; i < size(); ++i) index_.emplace(monomials_[static_cast<size_t>(i)], i);
}

int MonomialBasis::index_of(const MultiIndex &mi) const {
    auto it = index_.find(mi);
    return it == index_.end() ? -1 : it->second;
}

Eigen::VectorXd MonomialBasis::eval(const Eigen::VectorXd &x) const {
    Eigen::VectorXd z(size());
    for (int i = 0; i < size(); ++i) {
        const MultiIndex &mi = monomials_[static_cast<size_t>(i)];
        double v = 1.0;
        for (int k = 0; k < nvars_; ++k) {
            for (int e = 0; e < mi[k]; ++e) v *= x[k];
        }
        z[i] = v;
    }
    return z;
}

PolyMatrix::PolyMatrix(int rows, int cols, int nvars)
    : rows_(rows), cols_(cols), nvars_(nvars),
      entries_(static_cast<size_t>(rows) * static_cast<size_t>(cols), Polynomial(nvars)) {
    if (rows < 0 || cols < 0) throw std::invalid_argument("PolyMatrix: bad shape");
}

PolyMatrix PolyMatrix::from_constant(const Eigen::MatrixXd &m, int nvars) {
    PolyMatrix r(static_cast<int>(m.rows()), static_cast<int>(m.cols()), nvars);
    for (int i = 0; i < r.rows_; ++i) {
        for (int j = 0; j < r.cols_; ++j) {
            if (m(i, j) != 0.0) r.at(i, j) = Polynomial::constant(nvars, m(i, j));
        }
    }
    return r;
}

Polynomial &PolyMatrix::at(int i, int j) {
    return entries_.at(static_cast<size_t>(i) * static_cast<size_t>(cols_) + static_cast<size_t>(j));
}

const Polynomial &PolyMatrix::at(int i, int j) const {
    return entries_.at(static_cast<size_t>(i) * static_cast<size_t>(cols_) + static_cast<size_t>(j));
}

int PolyMatrix::degree() const {
    int d = Polynomial::kZeroDegree;
    for (const auto &p : entries_) d = std::max(d, p.degree());
    return d;
}

PolyMatrix PolyMatrix::operator+(const PolyMatrix &other) const {
    if (rows_ != other.rows_ || cols_ != other.cols_)
        throw std::invalid_argument("PolyMatrix: shape mismatch");
    PolyMatrix r(rows_, cols_, nvars_);
    for (size_t i = 0; i < entries_.size(); ++i) r.entries_[i] = entries_[i] + other.entries_[i];
    return r;
}

PolyMatrix PolyMatrix::operator-(const PolyMatrix &other) const {
    if (rows_ != other.rows_ || cols_ != other.cols_)
        throw std::invalid_argument("PolyMatrix: shape mismatch");
    PolyMatrix r(rows_, cols_, nvars_);
    for (size_t i = 0; i < entries_.size(); ++i) r.entries_[i] = entries_[i] - other.entries_[i];
    return r;
}

PolyMatrix PolyMatrix::operator*(const PolyMatrix &other) const {
    if (cols_ != other.rows_) throw std::invalid_argument("PolyMatrix: shape mismatch");
    PolyMatrix r(rows_, other.cols_, nvars_);
    for (int i = 0; i < rows_; ++i) {
        for (int j = 0; j < other.cols_; ++j) {
            Polynomial sum(nvars_);
            for (int k = 0; k < cols_; ++k) sum = sum + at(i, k) * other.at(k, j);
            r.at(i, j) = sum;
        }
    }
    return r;
}

PolyMatrix PolyMatrix::operator*(const Polynomial &p) const {
    PolyMatrix r(rows_, cols_, nvars_);
    for (size_t i = 0; i < entries_.size(); ++i) r.entries_[i] = entries_[i] * p;
    return r;
}

PolyMatrix PolyMatrix::operator*(double s) const {
    PolyMatrix r(rows_, cols_, nvars_);
    for (size_t i = 0; i < entries_.size(); ++i) r.entries_[i] = entries_[i] * s;
    return r;
}

PolyMatrix PolyMatrix::transpose() const {
    PolyMatrix r(cols_, rows_, nvars_);
    for (int i = 0; i < rows_; ++i) {
        for (int j = 0; j < cols_; ++j) r.at(j, i) = at(i, j);
    }
    return r;
}

bool PolyMatrix::is_symmetric() const {
    if (rows_ != cols_) return false;
    for (int i = 0; i < rows_; ++i) {
        for (int j = i + 1; j < cols_; ++j) {
            const auto &p = at(i, j).terms();
            const auto &q = at(j, i).terms();
            if (p.size() != q.size()) return false;
            auto itp = p.begin();
            for (auto itq = q.begin(); itq != q.end(); ++itq, ++itp) {
                if (itp->first != itq->first || itp->second != itq->second) return false;
            }
        }
    }
    return true;
}

Eigen::MatrixXd PolyMatrix::eval(const Eigen::VectorXd &x) const {
    Eigen::MatrixXd m(rows_, cols_);
    for (int i = 0; i < rows_; ++i) {
        for (int j = 0; j < cols_; ++j) m(i, j) = at(i, j).eval(x);
    }
    return m;
}

PolyMatrix kron_with_state(const PolyMatrix &L) {
    const int m = L.rows(), n = L.cols(), nvars = L.nvars();
    PolyMatrix r(m * nvars, n, nvars);
    for (int i = 0; i < m; ++i) {
        for (int k = 0; k < nvars; ++k) {
            const Polynomial xk = Polynomial::variable(nvars, k);
            for (int j = 0; j < n; ++j) {
                r.at(i * nvars + k, j) = L.at(i, j) * xk;
            }
        }
    }
    return r;
}

PolyMatrix gram_expand(const Eigen::MatrixXd &Q, const MonomialBasis &B, int k) {
    const int nb = B.size();
    if (Q.rows() != Q.cols() || Q.rows() != static_cast<Eigen::Index>(nb) * k)
        throw std::invalid_argument("gram_expand: Gram size mismatch");
    PolyMatrix S(k, k, B.nvars());
    // Unordered basis pairs with the (a,b)/(b,a) contributions pre-summed so
    // entries (i,j) and (j,i) see bit-identical accumulation sequences and the
    // result is exactly symmetric whenever Q is.
    for (int a = 0; a < nb; ++a) {
        for (int b = a; b < nb; ++b) {
            const MultiIndex mono = B[a] + B[b];
            for (int i = 0; i < k; ++i) {
                for (int j = 0; j < k; ++j) {
                    const double q = (a == b) ? Q(a * k + i, b * k + j)
                                              : Q(a * k + i, b * k + j) + Q(b * k + i, a * k + j);
                    if (q != 0.0) S.at(i, j).add_term(mono, q);
                }
            }
        }
    }
    return S;
}

} // namespace bilinmpc

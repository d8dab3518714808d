#include "bilinmpc/affine.hpp"

#include <stdexcept>

namespace bilinmpc {

LinExpr LinExpr::var(int handle, double coeff) {
    LinExpr e;
    e.add(handle, coeff);
    return e;
}

double LinExpr::coeff(int handle) const {
    auto it = coeffs.find(handle);
    return it == coeffs.end() ? 0.0 : it->second;
}

void LinExpr::add(int handle, double coeff) {
    if (handle < 0) throw std::invalid_argument("LinExpr: bad variable handle");
    auto it = coeffs.find(handle);
    if (it == coeffs.end()) {
        if (coeff != 0.0) coeffs.emplace(handle, coeff);
        return;
    }
    it->second += coeff;
    if (it->second == 0.0) coeffs.erase(it);
}

LinExpr LinExpr::operator+(const LinExpr &o) const {
    LinExpr r(*this);
    r.constant += o.constant;
    for (const auto &[v, c] : o.coeffs) r.add(v, c);
    return r;
}

LinExpr LinExpr::operator-(const LinExpr &o) const {
    LinExpr r(*this);
    r.constant -= o.constant;
    for (const auto &[v, c] : o.coeffs) r.add(v, -c);
    return r;
}

LinExpr LinExpr::operator*(double s) const {
    LinExpr r;
    if (s == 0.0) return r;
    r.constant = constant * s;
    for (const auto &[v, c] : coeffs) r.coeffs.emplace(v, c * s);
    return r;
}

int VarRegistry::add_free(SdpProblem &p, const std::string &name) {
    VarBinding b;
    b.kind = VarBinding::Kind::Free;
    b.index = p.add_free_var();
    bindings_.push_back(b);
    names_.push_back(name);
    return count() - 1;
}

int VarRegistry::add_psd_entry(const std::string &name, int block, int i, int j) {
    VarBinding b;
    b.kind = VarBinding::Kind::PsdEntry;
    b.block = block;
    b.i = i;
    b.j = j;
    bindings_.push_back(b);
    names_.push_back(name);
    return count() - 1;
}

void VarRegistry::subtract_into(const LinExpr &e, EqRow &row) const {
    for (const auto &[v, c] : e.coeffs) {
        const VarBinding &b = binding(v);
        if (b.kind == VarBinding::Kind::Free)
            row.add_free(b.index, -c);
        else
            row.add_psd_entry(b.block, b.i, b.j, -c);
    }
}

double VarRegistry::value(const LinExpr &e, const SdpSolution &sol) const {
    double v = e.constant;
    for (const auto &[h, c] : e.coeffs) {
        const VarBinding &b = binding(h);
        if (b.kind == VarBinding::Kind::Free)
            v += c * sol.y[b.index];
        else
            v += c * sol.X.at(static_cast<size_t>(b.block))(b.i, b.j);
    }
    return v;
}

AffinePoly AffinePoly::from(const Polynomial &p) {
    AffinePoly a(p.nvars());
    for (const auto &[mi, c] : p.terms()) a.terms_.emplace(mi, LinExpr(c));
    return a;
}

AffinePoly AffinePoly::expr(int nvars, const LinExpr &e) {
    AffinePoly a(nvars);
    a.add_term(MultiIndex::zero(nvars), e);
    return a;
}

int AffinePoly::degree() const {
    if (terms_.empty()) return Polynomial::kZeroDegree;
    return terms_.rbegin()->first.degree();
}

LinExpr AffinePoly::coeff(const MultiIndex &mi) const {
    auto it = terms_.find(mi);
    return it == terms_.end() ? LinExpr() : it->second;
}

void AffinePoly::add_term(const MultiIndex &mi, const LinExpr &e) {
    if (mi.nvars() != nvars_) throw std::invalid_argument("AffinePoly: nvars mismatch");
    auto it = terms_.find(mi);
    if (it == terms_.end()) {
        if (!(e.constant == 0.0 && e.coeffs.empty())) terms_.emplace(mi, e);
        return;
    }
    it->second = it->second + e;
    if (it->second.constant == 0.0 && it->second.coeffs.empty()) terms_.erase(it);
}

AffinePoly AffinePoly::operator+(const AffinePoly &q) const {
    if (nvars_ != q.nvars_) throw std::invalid_argument("AffinePoly: nvars mismatch");
    AffinePoly r(*this);
    for (const auto &[mi, e] : q.terms_) r.add_term(mi, e);
    return r;
}

AffinePoly AffinePoly::operator-(const AffinePoly &q) const {
    if (nvars_ != q.nvars_) throw std::invalid_argument("AffinePoly: nvars mismatch");
    AffinePoly r(*this);
    for (const auto &[mi, e] : q.terms_) r.add_term(mi, -e);
    return r;
}

AffinePoly AffinePoly::operator*(const Polynomial &p) const {
    if (nvars_ != p.nvars()) throw std::invalid_argument("AffinePoly: nvars mismatch");
    AffinePoly r(nvars_);
    for (const auto &[a, ea] : terms_)
        for (const auto &[b, cb] : p.terms())
            r.add_term(a + b, ea * cb);
    return r;
}

AffinePoly AffinePoly::operator*(double s) const {
    AffinePoly r(nvars_);
    if (s == 0.0) return r;
    for (const auto &[mi, e] : terms_) r.add_term(mi, e * s);
    return r;
}

Polynomial AffinePoly::instantiate(const VarRegistry &reg, const SdpSolution &sol) const {
    Polynomial p(nvars_);
    for (const auto &[mi, e] : terms_) p.add_term(mi, reg.value(e, sol));
    return p;
}

AffinePolyMatrix::AffinePolyMatrix(int rows, int cols, int nvars)
    : rows_(rows), cols_(cols), nvars_(nvars),
      entries_(static_cast<size_t>(rows) * static_cast<size_t>(cols), AffinePoly(nvars)) {
    if (rows < 0 || cols < 0) throw std::invalid_argument("AffinePolyMatrix: bad shape");
}

AffinePolyMatrix AffinePolyMatrix::from(const PolyMatrix &m) {
    AffinePolyMatrix r(m.rows(), m.cols(), m.nvars());
    for (int i = 0; i < m.rows(); ++i)
        for (int j = 0; j < m.cols(); ++j) r.at(i, j) = AffinePoly::from(m.at(i, j));
    return r;
}

int AffinePolyMatrix::degree() const {
    int d = Polynomial::kZeroDegree;
    for (const auto &e : entries_) d = std::max(d, e.degree());
    return d;
}

AffinePoly &AffinePolyMatrix::at(int i, int j) {
    return entries_.at(static_cast<size_t>(i) * static_cast<size_t>(cols_) + static_cast<size_t>(j));
}

const AffinePoly &AffinePolyMatrix::at(int i, int j) const {
    return entries_.at(static_cast<size_t>(i) * static_cast<size_t>(cols_) + static_cast<size_t>(j));
}

void AffinePolyMatrix::place(int i0, int j0, const AffinePolyMatrix &src) {
    if (i0 + src.rows_ > rows_ || j0 + src.cols_ > cols_)
        throw std::invalid_argument("AffinePolyMatrix::place: out of range");
    for (int i = 0; i < src.rows_; ++i)
        for (int j = 0; j < src.cols_; ++j) at(i0 + i, j0 + j) = src.at(i, j);
}

AffinePolyMatrix AffinePolyMatrix::operator+(const AffinePolyMatrix &o) const {
    if (rows_ != o.rows_ || cols_ != o.cols_)
        throw std::invalid_argument("AffinePolyMatrix: shape mismatch");
    AffinePolyMatrix r(rows_, cols_, nvars_);
    for (size_t i = 0; i < entries_.size(); ++i) r.entries_[i] = entries_[i] + o.entries_[i];
    return r;
}

AffinePolyMatrix AffinePolyMatrix::operator-(const AffinePolyMatrix &o) const {
    if (rows_ != o.rows_ || cols_ != o.cols_)
        throw std::invalid_argument("AffinePolyMatrix: shape mismatch");
    AffinePolyMatrix r(rows_, cols_, nvars_);
    for (size_t i = 0; i < entries_.size(); ++i) r.entries_[i] = entries_[i] - o.entries_[i];
    return r;
}

AffinePolyMatrix AffinePolyMatrix::operator*(const Polynomial &p) const {
    AffinePolyMatrix r(rows_, cols_, nvars_);
    for (size_t i = 0; i < entries_.size(); ++i) r.entries_[i] = entries_[i] * p;
    return r;
}

AffinePolyMatrix AffinePolyMatrix::operator*(double s) const {
    AffinePolyMatrix r(rows_, cols_, nvars_);
    for (size_t i = 0; i < entries_.size(); ++i) r.entries_[i] = entries_[i] * s;
    return r;
}

AffinePolyMatrix AffinePolyMatrix::transpose() const {
    AffinePolyMatrix r(cols_, rows_, nvars_);
    for (int i = 0; i < rows_; ++i)
        for (int j = 0; j < cols_; ++j) r.at(j, i) = at(i, j);
    return r;
}

bool AffinePolyMatrix::is_symmetric() const {
    if (rows_ != cols_) return false;
    for (int i = 0; i < rows_; ++i)
        for (int j = i + 1; j < cols_; ++j) {
            const auto &p = at(i, j).terms();
            const auto &q = at(j, i).terms();
            if (p.size() != q.size()) return false;
            auto itp = p.begin();
            for (auto itq = q.begin(); itq != q.end(); ++itq, ++itp)
                if (itp->first != itq->first || !(itp->second == itq->second)) return false;
        }
    return true;
}

PolyMatrix AffinePolyMatrix::instantiate(const VarRegistry &reg, const SdpSolution &sol) const {
    PolyMatrix r(rows_, cols_, nvars_);
    for (int i = 0; i < rows_; ++i)
        for (int j = 0; j < cols_; ++j) r.at(i, j) = at(i, j).instantiate(reg, sol);
    return r;
}

} // namespace bilinmpc

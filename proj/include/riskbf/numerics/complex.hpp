#pragma once

// Complex vectors and matrices stored as separate real/imaginary planes.

#include <complex>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

namespace riskbf {

using cdouble = std::complex<double>;

struct CxVector {
    Eigen::VectorXd re;
    Eigen::VectorXd im;

    CxVector() = default;
    explicit CxVector(Eigen::Index n) : re(Eigen::VectorXd::Zero(n)), im(Eigen::VectorXd::Zero(n)) {}
    CxVector(Eigen::VectorXd r, Eigen::VectorXd i) : re(std::move(r)), im(std::move(i)) {
        if (re.size() != im.size()) throw std::invalid_argument("CxVector: re/im size mismatch");
    }

    Eigen::Index size() const { return re.size(); }
    cdouble operator[](Eigen::Index k) const { return {re[k], im[k]}; }
    void set(Eigen::Index k, cdouble z) {
        re[k] = z.real();
        im[k] = z.imag();
    }
    double squared_norm() const { return re.squaredNorm() + im.squaredNorm(); }

    friend bool operator==(const CxVector& a, const CxVector& b) {
        return a.re.size() == b.re.size() && a.re == b.re && a.im == b.im;
    }
};

/// M x K complex matrix; column k is the k-th user's vector (channel or precoder).
struct CxMatrix {
    Eigen::MatrixXd re;
    Eigen::MatrixXd im;

    CxMatrix() = default;
    CxMatrix(Eigen::Index rows, Eigen::Index cols)
        : re(Eigen::MatrixXd::Zero(rows, cols)), im(Eigen::MatrixXd::Zero(rows, cols)) {}
    CxMatrix(Eigen::MatrixXd r, Eigen::MatrixXd i) : re(std::move(r)), im(std::move(i)) {
        if (re.rows() != im.rows() || re.cols() != im.cols())
            throw std::invalid_argument("CxMatrix: re/im shape mismatch");
    }

    Eigen::Index rows() const { return re.rows(); }
    Eigen::Index cols() const { return re.cols(); }
    cdouble operator()(Eigen::Index r, Eigen::Index c) const { return {re(r, c), im(r, c)}; }
    void set(Eigen::Index r, Eigen::Index c, cdouble z) {
        re(r, c) = z.real();
        im(r, c) = z.imag();
    }

    CxVector col(Eigen::Index c) const { return CxVector(re.col(c), im.col(c)); }
    void set_col(Eigen::Index c, const CxVector& v) {
        re.col(c) = v.re;
        im.col(c) = v.im;
    }

    double squared_frobenius() const { return re.squaredNorm() + im.squaredNorm(); }
    double max_abs() const { return (re.array().square() + im.array().square()).sqrt().maxCoeff(); }

    Eigen::MatrixXcd to_eigen() const {
        Eigen::MatrixXcd out(rows(), cols());
        out.real() = re;
        out.imag() = im;
        return out;
    }
    static CxMatrix from_eigen(const Eigen::MatrixXcd& m) { return CxMatrix(m.real(), m.imag()); }

    friend bool operator==(const CxMatrix& a, const CxMatrix& b) {
        return a.rows() == b.rows() && a.cols() == b.cols() && a.re == b.re && a.im == b.im;
    }
};

/// y -> [Re(y); Im(y)].
inline Eigen::VectorXd realify(const CxVector& x) {
    Eigen::VectorXd out(2 * x.size());
    out.head(x.size()) = x.re;
    out.tail(x.size()) = x.im;
    return out;
}

inline CxVector complexify(const Eigen::Ref<const Eigen::VectorXd>& y) {
    if (y.size() % 2 != 0) throw std::invalid_argument("complexify: odd length");
    const Eigen::Index p = y.size() / 2;
    return CxVector(y.head(p), y.tail(p));
}

/// Hermitian inner product sum_k conj(a_k) b_k.
inline cdouble cx_inner(const CxVector& a, const CxVector& b) {
    if (a.size() != b.size()) throw std::invalid_argument("cx_inner: length mismatch");
    const double re = a.re.dot(b.re) + a.im.dot(b.im);
    const double im = a.re.dot(b.im) - a.im.dot(b.re);
    return {re, im};
}

/// h_i^H v_j for columns of two M x K matrices.
inline cdouble cx_col_inner(const CxMatrix& a, Eigen::Index i, const CxMatrix& b, Eigen::Index j) {
    const double re = a.re.col(i).dot(b.re.col(j)) + a.im.col(i).dot(b.im.col(j));
    const double im = a.re.col(i).dot(b.im.col(j)) - a.im.col(i).dot(b.re.col(j));
    return {re, im};
}

}  // namespace riskbf

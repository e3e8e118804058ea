#include "mgeo/nn/tape.hpp"

#include <cmath>
#include <limits>

namespace mgeo::nn {

namespace {
constexpr Real kMaskBias = -1e9;

void check_same_shape(const Mat& a, const Mat& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw NnError(std::string(op) + ": shape mismatch");
}
}  // namespace

int Tape::push(Mat val, std::function<void(Tape&, int)> back) {
    Node n;
    n.grad = Mat::Zero(val.rows(), val.cols());
    n.val = std::move(val);
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

int Tape::constant(Mat m) {
    return push(std::move(m), nullptr);
}

int Tape::param(ParameterStore& ps, const std::string& name) {
    Tensor& t = ps.at(name);
    Mat v = t.mat();
    ParameterStore* psp = &ps;
    return push(std::move(v), [psp, name](Tape& t2, int self) {
        Tensor& p = psp->at(name);
        p.ensure_grad();
        p.grad_mat() += t2.grad(self);
    });
}

int Tape::gather(ParameterStore& ps, const std::string& name, std::vector<int> rows) {
    Tensor& t = ps.at(name);
    auto table = t.mat();
    Mat v(static_cast<Eigen::Index>(rows.size()), table.cols());
    for (size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] < 0 || rows[i] >= table.rows())
            throw NnError("gather: row index out of range for " + name);
        v.row(static_cast<Eigen::Index>(i)) = table.row(rows[i]);
    }
    ParameterStore* psp = &ps;
    return push(std::move(v), [psp, name, rows = std::move(rows)](Tape& t2, int self) {
        Tensor& p = psp->at(name);
        p.ensure_grad();
        auto g = p.grad_mat();
        const Mat& out_g = t2.grad(self);
        for (size_t i = 0; i < rows.size(); ++i)
            g.row(rows[i]) += out_g.row(static_cast<Eigen::Index>(i));
    });
}

int Tape::add(int a, int b) {
    check_same_shape(val(a), val(b), "add");
    return push(val(a) + val(b), [a, b](Tape& t, int self) {
        t.grad(a) += t.grad(self);
        t.grad(b) += t.grad(self);
    });
}

int Tape::add_rowvec(int a, int bias) {
    const Mat& x = val(a);
    const Mat& v = val(bias);
    if (v.rows() != 1 || v.cols() != x.cols()) throw NnError("add_rowvec: bias must be 1 x cols");
    Mat out = x;
    out.rowwise() += v.row(0);
    return push(std::move(out), [a, bias](Tape& t, int self) {
        t.grad(a) += t.grad(self);
        t.grad(bias).row(0) += t.grad(self).colwise().sum();
    });
}

int Tape::scale(int a, Real s) {
    return push(val(a) * s, [a, s](Tape& t, int self) { t.grad(a) += s * t.grad(self); });
}

int Tape::matmul(int a, int b) {
    const Mat& A = val(a);
    const Mat& B = val(b);
    if (A.cols() != B.rows()) throw NnError("matmul: inner dimensions differ");
    return push(A * B, [a, b](Tape& t, int self) {
        const Mat& g = t.grad(self);
        t.grad(a) += g * t.val(b).transpose();
        t.grad(b) += t.val(a).transpose() * g;
    });
}

int Tape::matmul_nt(int a, int b) {
    const Mat& A = val(a);
    const Mat& B = val(b);
    if (A.cols() != B.cols()) throw NnError("matmul_nt: inner dimensions differ");
    return push(A * B.transpose(), [a, b](Tape& t, int self) {
        const Mat& g = t.grad(self);
        t.grad(a) += g * t.val(b);
        t.grad(b) += g.transpose() * t.val(a);
    });
}

int Tape::slice_rows(int a, int r0, int n) {
    const Mat& x = val(a);
    if (r0 < 0 || n <= 0 || r0 + n > x.rows()) throw NnError("slice_rows: range out of bounds");
    return push(x.middleRows(r0, n), [a, r0, n](Tape& t, int self) {
        t.grad(a).middleRows(r0, n) += t.grad(self);
    });
}

int Tape::slice_cols(int a, int c0, int n) {
    const Mat& x = val(a);
    if (c0 < 0 || n <= 0 || c0 + n > x.cols()) throw NnError("slice_cols: range out of bounds");
    return push(x.middleCols(c0, n), [a, c0, n](Tape& t, int self) {
        t.grad(a).middleCols(c0, n) += t.grad(self);
    });
}

int Tape::concat_rows(const std::vector<int>& parts) {
    if (parts.empty()) throw NnError("concat_rows: no inputs");
    Eigen::Index rows = 0, cols = val(parts[0]).cols();
    for (int p : parts) {
        if (val(p).cols() != cols) throw NnError("concat_rows: column mismatch");
        rows += val(p).rows();
    }
    Mat out(rows, cols);
    Eigen::Index off = 0;
    for (int p : parts) {
        out.middleRows(off, val(p).rows()) = val(p);
        off += val(p).rows();
    }
    return push(std::move(out), [parts](Tape& t, int self) {
        Eigen::Index o = 0;
        for (int p : parts) {
            Eigen::Index r = t.val(p).rows();
            t.grad(p) += t.grad(self).middleRows(o, r);
            o += r;
        }
    });
}

int Tape::concat_cols(const std::vector<int>& parts) {
    if (parts.empty()) throw NnError("concat_cols: no inputs");
    Eigen::Index cols = 0, rows = val(parts[0]).rows();
    for (int p : parts) {
        if (val(p).rows() != rows) throw NnError("concat_cols: row mismatch");
        cols += val(p).cols();
    }
    Mat out(rows, cols);
    Eigen::Index off = 0;
    for (int p : parts) {
        out.middleCols(off, val(p).cols()) = val(p);
        off += val(p).cols();
    }
    return push(std::move(out), [parts](Tape& t, int self) {
        Eigen::Index o = 0;
        for (int p : parts) {
            Eigen::Index c = t.val(p).cols();
            t.grad(p) += t.grad(self).middleCols(o, c);
            o += c;
        }
    });
}

int Tape::layer_norm(int x, int gamma, int beta, Real eps) {
    const Mat& in = val(x);
    const Mat& g = val(gamma);
    const Mat& b = val(beta);
    if (g.rows() != 1 || g.cols() != in.cols() || b.rows() != 1 || b.cols() != in.cols())
        throw NnError("layer_norm: gamma/beta must be 1 x cols");
    Mat xhat(in.rows(), in.cols());
    Eigen::VectorXd inv(in.rows());
    for (Eigen::Index r = 0; r < in.rows(); ++r) {
        Real mu = in.row(r).mean();
        Real var = (in.row(r).array() - mu).square().mean();
        Real is = 1.0 / std::sqrt(var + eps);
        inv(r) = is;
        xhat.row(r) = (in.row(r).array() - mu) * is;
    }
    Mat out = xhat;
    for (Eigen::Index r = 0; r < out.rows(); ++r)
        out.row(r) = out.row(r).cwiseProduct(g.row(0)) + b.row(0);
    return push(std::move(out),
                [x, gamma, beta, xhat = std::move(xhat), inv = std::move(inv)](Tape& t, int self) {
                    const Mat& go = t.grad(self);
                    const Mat& gm = t.val(gamma);
                    t.grad(gamma).row(0) += (go.array() * xhat.array()).colwise().sum().matrix();
                    t.grad(beta).row(0) += go.colwise().sum();
                    Mat& gx = t.grad(x);
                    for (Eigen::Index r = 0; r < go.rows(); ++r) {
                        Eigen::RowVectorXd dxh = go.row(r).cwiseProduct(gm.row(0));
                        Real m1 = dxh.mean();
                        Real m2 = dxh.cwiseProduct(xhat.row(r)).mean();
                        gx.row(r) +=
                            inv(r) * (dxh.array() - m1 - xhat.row(r).array() * m2).matrix();
                    }
                });
}

int Tape::gelu(int x) {
    static const Real c = std::sqrt(2.0 / M_PI);
    constexpr Real a = 0.044715;
    const Mat& in = val(x);
    Mat u = (c * (in.array() + a * in.array().cube())).tanh();
    Mat out = 0.5 * in.array() * (1.0 + u.array());
    return push(std::move(out), [x, u = std::move(u)](Tape& t, int self) {
        const Mat& in2 = t.val(x);
        Eigen::ArrayXXd du = c * (1.0 + 3.0 * a * in2.array().square());
        Eigen::ArrayXXd dy = 0.5 * (1.0 + u.array()) +
                             0.5 * in2.array() * (1.0 - u.array().square()) * du;
        t.grad(x) += (t.grad(self).array() * dy).matrix();
    });
}

int Tape::softmax_rows(int x, const std::vector<unsigned char>& key_mask) {
    Mat z = val(x);
    if (!key_mask.empty()) {
        if (static_cast<Eigen::Index>(key_mask.size()) != z.cols())
            throw NnError("softmax_rows: mask length must equal column count");
        for (Eigen::Index j = 0; j < z.cols(); ++j)
            if (!key_mask[static_cast<size_t>(j)]) z.col(j).array() += kMaskBias;
    }
    for (Eigen::Index r = 0; r < z.rows(); ++r) {
        Real m = z.row(r).maxCoeff();
        z.row(r) = (z.row(r).array() - m).exp();
        z.row(r) /= z.row(r).sum();
    }
    return push(std::move(z), [x](Tape& t, int self) {
        const Mat& p = t.val(self);
        const Mat& go = t.grad(self);
        Mat& gx = t.grad(x);
        for (Eigen::Index r = 0; r < p.rows(); ++r) {
            Real dot = go.row(r).cwiseProduct(p.row(r)).sum();
            gx.row(r) += p.row(r).cwiseProduct((go.row(r).array() - dot).matrix());
        }
    });
}

int Tape::ce_loss(int logits, int target) {
    const Mat& z = val(logits);
    if (z.rows() != 1) throw NnError("ce_loss: logits must be a single row");
    if (target < 0 || target >= z.cols()) throw NnError("ce_loss: target out of range");
    Real m = z.row(0).maxCoeff();
    Eigen::RowVectorXd e = (z.row(0).array() - m).exp();
    Real sum = e.sum();
    Eigen::RowVectorXd p = e / sum;
    Real loss = std::log(sum) + m - z(0, target);
    Mat out(1, 1);
    out(0, 0) = loss;
    return push(std::move(out), [logits, target, p = std::move(p)](Tape& t, int self) {
        Real g = t.grad(self)(0, 0);
        Eigen::RowVectorXd d = p;
        d(target) -= 1.0;
        t.grad(logits).row(0) += g * d;
    });
}

int Tape::l2_normalize_rows(int x, Real eps) {
    const Mat& in = val(x);
    Mat out(in.rows(), in.cols());
    Eigen::VectorXd norms(in.rows());
    for (Eigen::Index r = 0; r < in.rows(); ++r) {
        Real n = in.row(r).norm();
        norms(r) = n;
        out.row(r) = in.row(r) / std::max(n, eps);
    }
    return push(std::move(out), [x, eps, norms = std::move(norms)](Tape& t, int self) {
        const Mat& y = t.val(self);
        const Mat& go = t.grad(self);
        Mat& gx = t.grad(x);
        for (Eigen::Index r = 0; r < y.rows(); ++r) {
            Real n = norms(r);
            if (n > eps) {
                Real dot = go.row(r).cwiseProduct(y.row(r)).sum();
                gx.row(r) += (go.row(r) - dot * y.row(r)) / n;
            } else {
                gx.row(r) += go.row(r) / eps;
            }
        }
    });
}

int Tape::cosine(int u, int v, Real eps) {
    const Mat& a = val(u);
    const Mat& b = val(v);
    if (a.rows() != 1 || b.rows() != 1 || a.cols() != b.cols())
        throw NnError("cosine: inputs must be matching single rows");
    Real nu = a.row(0).norm(), nv = b.row(0).norm();
    Real cu = std::max(nu, eps), cv = std::max(nv, eps);
    Real c = a.row(0).dot(b.row(0)) / (cu * cv);
    Mat out(1, 1);
    out(0, 0) = c;
    return push(std::move(out), [u, v, nu, nv, cu, cv, c, eps](Tape& t, int self) {
        Real g = t.grad(self)(0, 0);
        const Mat& a2 = t.val(u);
        const Mat& b2 = t.val(v);
        Eigen::RowVectorXd du = b2.row(0) / (cu * cv);
        if (nu > eps) du -= (c / (cu * cu)) * a2.row(0);
        Eigen::RowVectorXd dv = a2.row(0) / (cu * cv);
        if (nv > eps) dv -= (c / (cv * cv)) * b2.row(0);
        t.grad(u).row(0) += g * du;
        t.grad(v).row(0) += g * dv;
    });
}

int Tape::kl_softmax_rows(const Mat& target_scores, int scores,
                          const std::vector<unsigned char>& pair_mask) {
    const Mat& s = val(scores);
    if (s.rows() != target_scores.rows() || s.cols() != target_scores.cols())
        throw NnError("kl_softmax_rows: shape mismatch");
    if (pair_mask.size() != static_cast<size_t>(s.rows() * s.cols()))
        throw NnError("kl_softmax_rows: mask size mismatch");
    auto masked_softmax_row = [&](const Mat& src, Eigen::Index r, Eigen::RowVectorXd& out) {
        Real m = -std::numeric_limits<Real>::infinity();
        for (Eigen::Index j = 0; j < src.cols(); ++j)
            if (pair_mask[static_cast<size_t>(r * src.cols() + j)]) m = std::max(m, src(r, j));
        Real sum = 0.0;
        out.setZero(src.cols());
        for (Eigen::Index j = 0; j < src.cols(); ++j) {
            if (!pair_mask[static_cast<size_t>(r * src.cols() + j)]) continue;
            out(j) = std::exp(src(r, j) - m);
            sum += out(j);
        }
        out /= sum;
    };
    Mat p(s.rows(), s.cols()), q(s.rows(), s.cols());
    Real loss = 0.0;
    for (Eigen::Index r = 0; r < s.rows(); ++r) {
        Eigen::RowVectorXd pr, qr;
        masked_softmax_row(target_scores, r, pr);
        masked_softmax_row(s, r, qr);
        p.row(r) = pr;
        q.row(r) = qr;
        for (Eigen::Index j = 0; j < s.cols(); ++j) {
            if (!pair_mask[static_cast<size_t>(r * s.cols() + j)] || pr(j) <= 0.0) continue;
            loss += pr(j) * (std::log(pr(j)) - std::log(qr(j)));
        }
    }
    Mat out(1, 1);
    out(0, 0) = loss;
    return push(std::move(out),
                [scores, p = std::move(p), q = std::move(q), pair_mask](Tape& t, int self) {
                    Real g = t.grad(self)(0, 0);
                    Mat& gx = t.grad(scores);
                    for (Eigen::Index r = 0; r < p.rows(); ++r)
                        for (Eigen::Index j = 0; j < p.cols(); ++j)
                            if (pair_mask[static_cast<size_t>(r * p.cols() + j)])
                                gx(r, j) += g * (q(r, j) - p(r, j));
                });
}

int Tape::add_scalars(const std::vector<int>& terms) {
    if (terms.empty()) throw NnError("add_scalars: no inputs");
    Real s = 0.0;
    for (int t : terms) {
        if (val(t).size() != 1) throw NnError("add_scalars: inputs must be scalars");
        s += val(t)(0, 0);
    }
    Mat out(1, 1);
    out(0, 0) = s;
    return push(std::move(out), [terms](Tape& t, int self) {
        Real g = t.grad(self)(0, 0);
        for (int i : terms) t.grad(i)(0, 0) += g;
    });
}

int Tape::mean_scalars(const std::vector<int>& terms) {
    int s = add_scalars(terms);
    return scale(s, 1.0 / static_cast<Real>(terms.size()));
}

Real Tape::backward(int loss) {
    Node& l = node(loss);
    if (l.val.size() != 1) throw NnError("backward: loss must be a 1 x 1 node");
    l.grad(0, 0) = 1.0;
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
        Node& n = node(i);
        if (n.back) n.back(*this, i);
    }
    return l.val(0, 0);
}

void Tape::clear() {
    nodes_.clear();
}

Real kl_divergence(const Eigen::RowVectorXd& p, const Eigen::RowVectorXd& q) {
    if (p.size() != q.size() || p.size() == 0) throw NnError("kl_divergence: size mismatch");
    if (std::abs(p.sum() - 1.0) > 1e-6 || std::abs(q.sum() - 1.0) > 1e-6)
        throw NnError("kl_divergence: inputs must sum to 1");
    Real kl = 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        if (p(i) <= 0.0 || q(i) <= 0.0) throw NnError("kl_divergence: entries must be positive");
        kl += p(i) * std::log(p(i) / q(i));
    }
    return kl;
}

}  // namespace mgeo::nn

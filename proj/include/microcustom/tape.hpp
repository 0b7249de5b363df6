#pragma once

#include <Eigen/Core>

#include <functional>
#include <vector>

#include "microcustom/tensor.hpp"

namespace mc {

// Record-and-replay reverse-mode differentiation. Every op appends a node
// holding the forward value and a closure that accumulates parent gradients.
// With gradients disabled the tape still records values (cheap) but no
// closures, so the same model code serves training and sampling.
template <typename T>
class Tape {
public:
    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using MapM = Eigen::Map<Mat>;
    using CMapM = Eigen::Map<const Mat>;

    struct Node {
        Tensor<T> val;
        Tensor<T> grad;  // allocated lazily in backward()
        std::function<void()> back;
        bool needs_grad = false;
    };

    bool grad_enabled = true;

    int size() const { return static_cast<int>(nodes_.size()); }
    void clear() { nodes_.clear(); }

    const Tensor<T>& val(int id) const { return nodes_[id].val; }
    Tensor<T>& grad(int id) { return nodes_[id].grad; }
    bool needs_grad(int id) const { return nodes_[id].needs_grad; }

    // Trainable leaf: gradient is collected here.
    int leaf(const Tensor<T>& v) { return push(v, grad_enabled); }
    // Constant input: no gradient flows into it.
    int input(Tensor<T> v) { return push(std::move(v), false); }

    void backward(int loss_id) {
        if (val(loss_id).numel() != 1) throw std::runtime_error("backward: loss must be scalar");
        if (!std::isfinite(static_cast<double>(val(loss_id).data[0])))
            throw std::runtime_error("backward: loss is not finite");
        if (!nodes_[loss_id].needs_grad) return;  // no trainable leaf reaches the loss
        for (auto& n : nodes_)
            if (n.needs_grad && n.grad.numel() == 0) n.grad = Tensor<T>::zeros(n.val.shape);
        nodes_[loss_id].grad.data[0] = T(1);
        for (int i = loss_id; i >= 0; --i)
            if (nodes_[i].back && nodes_[i].needs_grad) nodes_[i].back();
    }

    // ---- elementwise ----

    int add(int a, int b) {
        check_same_numel(a, b, "add");
        Tensor<T> out = val(a);
        em(out) += cm(val(b));
        return binary(std::move(out), a, b, [this](int a, int b, int o) {
            if (needs_grad(a)) em(grad(a)) += cm(grad(o));
            if (needs_grad(b)) em(grad(b)) += cm(grad(o));
        });
    }

    int sub(int a, int b) {
        check_same_numel(a, b, "sub");
        Tensor<T> out = val(a);
        em(out) -= cm(val(b));
        return binary(std::move(out), a, b, [this](int a, int b, int o) {
            if (needs_grad(a)) em(grad(a)) += cm(grad(o));
            if (needs_grad(b)) em(grad(b)) -= cm(grad(o));
        });
    }

    int mul(int a, int b) {
        check_same_numel(a, b, "mul");
        Tensor<T> out = val(a);
        em(out).array() *= cm(val(b)).array();
        return binary(std::move(out), a, b, [this](int a, int b, int o) {
            if (needs_grad(a)) em(grad(a)).array() += cm(grad(o)).array() * cm(val(b)).array();
            if (needs_grad(b)) em(grad(b)).array() += cm(grad(o)).array() * cm(val(a)).array();
        });
    }

    int scale(int a, T s) {
        Tensor<T> out = val(a);
        em(out) *= s;
        return unary(std::move(out), a, [this, s](int a, int o) {
            em(grad(a)) += s * cm(grad(o));
        });
    }

    int gelu(int a) {
        Tensor<T> out = val(a);
        for (T& v : out.data) {
            const double x = static_cast<double>(v);
            v = static_cast<T>(0.5 * x * (1.0 + std::erf(x * 0.7071067811865475)));
        }
        return unary(std::move(out), a, [this](int a, int o) {
            Tensor<T>& g = grad(a);
            const Tensor<T>& x = val(a);
            const Tensor<T>& go = grad(o);
            for (int64_t i = 0; i < x.numel(); ++i) {
                const double xv = static_cast<double>(x.data[i]);
                const double cdf = 0.5 * (1.0 + std::erf(xv * 0.7071067811865475));
                const double pdf = 0.3989422804014327 * std::exp(-0.5 * xv * xv);
                g.data[i] += go.data[i] * static_cast<T>(cdf + xv * pdf);
            }
        });
    }

    // ---- matrix products ----

    int matmul(int a, int b) {
        const auto& A = val(a);
        const auto& B = val(b);
        if (A.cols() != B.rows()) throw std::runtime_error("matmul: inner dims differ");
        Tensor<T> out({A.rows(), B.cols()});
        em(out).noalias() = cm(A) * cm(B);
        return binary(std::move(out), a, b, [this](int a, int b, int o) {
            if (needs_grad(a)) em(grad(a)).noalias() += cm(grad(o)) * cm(val(b)).transpose();
            if (needs_grad(b)) em(grad(b)).noalias() += cm(val(a)).transpose() * cm(grad(o));
        });
    }

    // A (m x k) times B^T with B (n x k); attention scores without an
    // explicit transpose copy.
    int matmul_nt(int a, int b) {
        const auto& A = val(a);
        const auto& B = val(b);
        if (A.cols() != B.cols()) throw std::runtime_error("matmul_nt: inner dims differ");
        Tensor<T> out({A.rows(), B.rows()});
        em(out).noalias() = cm(A) * cm(B).transpose();
        return binary(std::move(out), a, b, [this](int a, int b, int o) {
            if (needs_grad(a)) em(grad(a)).noalias() += cm(grad(o)) * cm(val(b));
            if (needs_grad(b)) em(grad(b)).noalias() += cm(grad(o)).transpose() * cm(val(a));
        });
    }

    // ---- shape plumbing ----

    int reshape(int a, std::vector<int64_t> s) {
        Tensor<T> out = val(a);
        if (Tensor<T>::numel_of(s) != out.numel()) throw std::runtime_error("reshape: numel mismatch");
        out.shape = std::move(s);
        return unary(std::move(out), a, [this](int a, int o) {
            for (int64_t i = 0; i < grad(a).numel(); ++i) grad(a).data[i] += grad(o).data[i];
        });
    }

    int slice_rows(int a, int64_t r0, int64_t r1) {
        const auto& A = val(a);
        Tensor<T> out({r1 - r0, A.cols()});
        em(out) = cm(A).middleRows(r0, r1 - r0);
        return unary(std::move(out), a, [this, r0, r1](int a, int o) {
            em(grad(a)).middleRows(r0, r1 - r0) += cm(grad(o));
        });
    }

    int concat_rows(const std::vector<int>& parts) {
        if (parts.empty()) throw std::runtime_error("concat_rows: no parts");
        int64_t rows = 0;
        const int64_t cols = val(parts[0]).cols();
        for (int p : parts) {
            if (val(p).cols() != cols) throw std::runtime_error("concat_rows: col mismatch");
            rows += val(p).rows();
        }
        Tensor<T> out({rows, cols});
        int64_t r = 0;
        for (int p : parts) {
            em(out).middleRows(r, val(p).rows()) = cm(val(p));
            r += val(p).rows();
        }
        bool ng = false;
        for (int p : parts) ng = ng || needs_grad(p);
        ng = ng && grad_enabled;
        const int o = push(std::move(out), ng);
        if (ng) {
            nodes_[o].back = [this, parts, o]() {
                int64_t r = 0;
                for (int p : parts) {
                    if (needs_grad(p)) em(grad(p)) += cm(grad(o)).middleRows(r, val(p).rows());
                    r += val(p).rows();
                }
            };
        }
        return o;
    }

    int slice_cols(int a, int64_t c0, int64_t c1) {
        const auto& A = val(a);
        Tensor<T> out({A.rows(), c1 - c0});
        em(out) = cm(A).middleCols(c0, c1 - c0);
        return unary(std::move(out), a, [this, c0, c1](int a, int o) {
            em(grad(a)).middleCols(c0, c1 - c0) += cm(grad(o));
        });
    }

    int concat_cols(int a, int b) {
        const auto& A = val(a);
        const auto& B = val(b);
        if (A.rows() != B.rows()) throw std::runtime_error("concat_cols: row mismatch");
        Tensor<T> out({A.rows(), A.cols() + B.cols()});
        em(out).leftCols(A.cols()) = cm(A);
        em(out).rightCols(B.cols()) = cm(B);
        return binary(std::move(out), a, b, [this](int a, int b, int o) {
            if (needs_grad(a)) em(grad(a)) += cm(grad(o)).leftCols(val(a).cols());
            if (needs_grad(b)) em(grad(b)) += cm(grad(o)).rightCols(val(b).cols());
        });
    }

    int row_select(int a, std::vector<int> rows) {
        const auto& A = val(a);
        Tensor<T> out({static_cast<int64_t>(rows.size()), A.cols()});
        for (size_t i = 0; i < rows.size(); ++i)
            em(out).row(static_cast<int64_t>(i)) = cm(A).row(rows[i]);
        return unary(std::move(out), a, [this, rows](int a, int o) {
            for (size_t i = 0; i < rows.size(); ++i)
                em(grad(a)).row(rows[i]) += cm(grad(o)).row(static_cast<int64_t>(i));
        });
    }

    // rows of `table` gathered by token id (embedding lookup)
    int embed(int table, const std::vector<int>& ids) {
        return row_select(table, ids);
    }

    // copy of a with the listed rows replaced by the (1 x d) row `src`;
    // lets a trainable concept row shadow its frozen table row
    int row_overwrite(int a, int src, std::vector<int> positions) {
        const auto& A = val(a);
        const auto& S = val(src);
        if (S.numel() != A.cols()) throw std::runtime_error("row_overwrite: width mismatch");
        Tensor<T> out = A;
        for (int p : positions)
            em(out).row(p) = Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(S.ptr(), S.numel());
        return binary(std::move(out), a, src, [this, positions](int a, int src, int o) {
            if (needs_grad(a)) {
                Tensor<T> g = grad(o);
                for (int p : positions) em(g).row(p).setZero();
                em(grad(a)) += cm(g);
            }
            if (needs_grad(src))
                for (int p : positions)
                    Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(grad(src).ptr(),
                                                                    grad(src).numel()) +=
                        cm(grad(o)).row(p);
        });
    }

    // broadcast a (1 x n) row over every row of a
    int add_row_bcast(int a, int row) {
        const auto& A = val(a);
        const auto& R = val(row);
        if (R.numel() != A.cols()) throw std::runtime_error("add_row_bcast: width mismatch");
        Tensor<T> out = A;
        em(out).rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(R.ptr(), R.numel());
        return binary(std::move(out), a, row, [this](int a, int row, int o) {
            if (needs_grad(a)) em(grad(a)) += cm(grad(o));
            if (needs_grad(row)) {
                auto colsum = cm(grad(o)).colwise().sum();
                Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(grad(row).ptr(), grad(row).numel()) += colsum;
            }
        });
    }

    // x has B*P rows; t has B rows. Adds t[b] to every one of the P rows of
    // item b (timestep conditioning over spatial positions).
    int add_item_row_bcast(int a, int t, int64_t items) {
        const auto& A = val(a);
        const auto& Tm = val(t);
        if (Tm.rows() != items || A.rows() % items != 0 || Tm.cols() != A.cols())
            throw std::runtime_error("add_item_row_bcast: shape mismatch");
        const int64_t per = A.rows() / items;
        Tensor<T> out = A;
        for (int64_t b = 0; b < items; ++b)
            em(out).middleRows(b * per, per).rowwise() += cm(Tm).row(b);
        return binary(std::move(out), a, t, [this, items, per](int a, int t, int o) {
            if (needs_grad(a)) em(grad(a)) += cm(grad(o));
            if (needs_grad(t))
                for (int64_t b = 0; b < items; ++b)
                    em(grad(t)).row(b) += cm(grad(o)).middleRows(b * per, per).colwise().sum();
        });
    }

    // ---- normalization / softmax ----

    int softmax_rows(int a) {
        const auto& A = val(a);
        if (!A.all_finite()) throw std::runtime_error("softmax_rows: non-finite input");
        Tensor<T> out = A;
        auto M = em(out);
        for (int64_t r = 0; r < out.rows(); ++r) {
            const T mx = M.row(r).maxCoeff();
            M.row(r) = (M.row(r).array() - mx).exp();
            M.row(r) /= M.row(r).sum();
        }
        return unary(std::move(out), a, [this](int a, int o) {
            const auto Y = cm(val(o));
            const auto GO = cm(grad(o));
            auto GA = em(grad(a));
            for (int64_t r = 0; r < Y.rows(); ++r) {
                const T dot = Y.row(r).dot(GO.row(r));
                GA.row(r).array() += Y.row(r).array() * (GO.row(r).array() - dot);
            }
        });
    }

    int layernorm_rows(int a, int gamma, int beta, T eps = T(1e-5)) {
        const auto& A = val(a);
        const int64_t n = A.cols();
        if (val(gamma).numel() != n || val(beta).numel() != n)
            throw std::runtime_error("layernorm: gamma/beta width mismatch");
        Tensor<T> out = A;
        Tensor<T> xhat = A;  // captured for backward
        {
            auto M = em(out);
            auto X = em(xhat);
            auto G = Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(val(gamma).ptr(), n);
            auto Bv = Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(val(beta).ptr(), n);
            for (int64_t r = 0; r < A.rows(); ++r) {
                const T mean = M.row(r).mean();
                const T var = (M.row(r).array() - mean).square().sum() / static_cast<T>(n);
                const T inv = T(1) / std::sqrt(var + eps);
                X.row(r) = (M.row(r).array() - mean) * inv;
                M.row(r) = (X.row(r).array() * G.array()) + Bv.array();
            }
        }
        const int o = push(std::move(out), grad_enabled && (needs_grad(a) || needs_grad(gamma) || needs_grad(beta)));
        if (nodes_[o].needs_grad) {
            nodes_[o].back = [this, a, gamma, beta, o, xhat, eps]() {
                const int64_t n = xhat.cols();
                const auto X = cm(xhat);
                const auto GO = cm(grad(o));
                auto G = Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(val(gamma).ptr(), n);
                for (int64_t r = 0; r < X.rows(); ++r) {
                    if (needs_grad(gamma))
                        Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(grad(gamma).ptr(), n).array() +=
                            GO.row(r).array() * X.row(r).array();
                    if (needs_grad(beta))
                        Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(grad(beta).ptr(), n) += GO.row(r);
                    if (needs_grad(a)) {
                        // recompute inv-std from xhat and the input row
                        const auto xr = cm(val(a)).row(r);
                        const T mean = xr.mean();
                        const T var = (xr.array() - mean).square().sum() / static_cast<T>(n);
                        const T inv = T(1) / std::sqrt(var + eps);
                        Eigen::Matrix<T, 1, Eigen::Dynamic> dxhat =
                            (GO.row(r).array() * G.array()).matrix();
                        const T s1 = dxhat.sum();
                        const T s2 = (dxhat.array() * X.row(r).array()).sum();
                        em(grad(a)).row(r).array() +=
                            inv * (dxhat.array() - s1 / static_cast<T>(n) -
                                   X.row(r).array() * s2 / static_cast<T>(n));
                    }
                }
            };
        }
        return o;
    }

    // ---- reductions / losses ----

    int sum_all(int a) {
        Tensor<T> out({1});
        out.data[0] = cm(val(a)).sum();
        return unary(std::move(out), a, [this](int a, int o) {
            em(grad(a)).array() += grad(o).data[0];
        });
    }

    int mean_all(int a) {
        const T n = static_cast<T>(val(a).numel());
        Tensor<T> out({1});
        out.data[0] = cm(val(a)).sum() / n;
        return unary(std::move(out), a, [this, n](int a, int o) {
            em(grad(a)).array() += grad(o).data[0] / n;
        });
    }

    // mean over all elements of (a-b)^2
    int mse(int a, int b) {
        const int d = sub(a, b);
        return mean_all(mul(d, d));
    }

    // Mean negative log-softmax probability of the true label, rows being
    // masked positions only. Zero rows is legal and yields 0 with a flag.
    int cross_entropy_masked(int logits, const std::vector<int>& labels, bool* empty_flag = nullptr) {
        const auto& L = val(logits);
        if (empty_flag) *empty_flag = false;
        if (L.rows() == 0 || labels.empty()) {
            if (!labels.empty() || L.rows() != 0)
                throw std::runtime_error("cross_entropy_masked: rows/labels mismatch");
            if (empty_flag) *empty_flag = true;
            return input(Tensor<T>({1}));
        }
        if (static_cast<int64_t>(labels.size()) != L.rows())
            throw std::runtime_error("cross_entropy_masked: rows/labels mismatch");
        if (!L.all_finite()) throw std::runtime_error("cross_entropy_masked: non-finite logits");
        const int64_t V = L.cols();
        for (int lab : labels)
            if (lab < 0 || lab >= V) throw std::runtime_error("cross_entropy_masked: label out of range");
        Tensor<T> out({1});
        double acc = 0.0;
        for (int64_t r = 0; r < L.rows(); ++r) {
            const auto row = cm(L).row(r);
            const T mx = row.maxCoeff();
            const double lse = std::log(static_cast<double>((row.array() - mx).exp().sum())) +
                               static_cast<double>(mx);
            acc += lse - static_cast<double>(row(labels[static_cast<size_t>(r)]));
        }
        out.data[0] = static_cast<T>(acc / static_cast<double>(L.rows()));
        return unary(std::move(out), logits, [this, labels](int logits, int o) {
            const auto L = cm(val(logits));
            auto G = em(grad(logits));
            const T g0 = grad(o).data[0] / static_cast<T>(L.rows());
            for (int64_t r = 0; r < L.rows(); ++r) {
                const T mx = L.row(r).maxCoeff();
                Eigen::Matrix<T, 1, Eigen::Dynamic> p = (L.row(r).array() - mx).exp();
                p /= p.sum();
                G.row(r) += g0 * p;
                G(r, labels[static_cast<size_t>(r)]) -= g0;
            }
        });
    }

    // ---- convolution (3x3, pad 1, NHWC) ----

    struct ConvDims {
        int64_t batch, h, w, cin, cout, stride;
    };

    // x: (B*H*W, Cin); weight: (9*Cin, Cout), rows ordered (kh, kw, cin);
    // bias: (1, Cout). Output (B*Ho*Wo, Cout), Ho = H/stride.
    int conv3x3(int x, int wgt, int bias, ConvDims d) {
        if (val(x).rows() != d.batch * d.h * d.w || val(x).cols() != d.cin)
            throw std::runtime_error("conv3x3: input shape mismatch");
        if (val(wgt).rows() != 9 * d.cin || val(wgt).cols() != d.cout)
            throw std::runtime_error("conv3x3: weight shape mismatch");
        const int64_t ho = d.h / d.stride, wo = d.w / d.stride;
        Tensor<T> cols = im2col(val(x), d, ho, wo);
        Tensor<T> out({d.batch * ho * wo, d.cout});
        em(out).noalias() = cm(cols) * cm(val(wgt));
        em(out).rowwise() +=
            Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(val(bias).ptr(), d.cout);
        const bool ng = grad_enabled && (needs_grad(x) || needs_grad(wgt) || needs_grad(bias));
        const int o = push(std::move(out), ng);
        if (ng) {
            nodes_[o].back = [this, x, wgt, bias, o, d, ho, wo, cols]() {
                const auto GO = cm(grad(o));
                if (needs_grad(bias))
                    Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(grad(bias).ptr(), d.cout) +=
                        GO.colwise().sum();
                if (needs_grad(wgt)) em(grad(wgt)).noalias() += cm(cols).transpose() * GO;
                if (needs_grad(x)) {
                    Tensor<T> dcols({d.batch * ho * wo, 9 * d.cin});
                    em(dcols).noalias() = GO * cm(val(wgt)).transpose();
                    col2im_add(dcols, grad(x), d, ho, wo);
                }
            };
        }
        return o;
    }

    // nearest-neighbor 2x upsample on NHWC rows
    int upsample2x(int x, int64_t batch, int64_t h, int64_t w) {
        const auto& X = val(x);
        const int64_t c = X.cols();
        Tensor<T> out({batch * 2 * h * 2 * w, c});
        for (int64_t b = 0; b < batch; ++b)
            for (int64_t i = 0; i < 2 * h; ++i)
                for (int64_t j = 0; j < 2 * w; ++j)
                    em(out).row(((b * 2 * h) + i) * 2 * w + j) =
                        cm(X).row((b * h + i / 2) * w + j / 2);
        return unary(std::move(out), x, [this, batch, h, w](int x, int o) {
            for (int64_t b = 0; b < batch; ++b)
                for (int64_t i = 0; i < 2 * h; ++i)
                    for (int64_t j = 0; j < 2 * w; ++j)
                        em(grad(x)).row((b * h + i / 2) * w + j / 2) +=
                            cm(grad(o)).row(((b * 2 * h) + i) * 2 * w + j);
        });
    }

    // ---- helpers ----

    static MapM em(Tensor<T>& t) { return MapM(t.ptr(), t.rows(), t.cols()); }
    static CMapM cm(const Tensor<T>& t) { return CMapM(t.ptr(), t.rows(), t.cols()); }

private:
    std::vector<Node> nodes_;

    int push(Tensor<T> v, bool ng) {
        Node n;
        n.val = std::move(v);
        n.needs_grad = ng;
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    template <typename F>
    int unary(Tensor<T> out, int a, F&& back) {
        const bool ng = grad_enabled && needs_grad(a);
        const int o = push(std::move(out), ng);
        if (ng) nodes_[o].back = [back = std::forward<F>(back), a, o]() { back(a, o); };
        return o;
    }

    template <typename F>
    int binary(Tensor<T> out, int a, int b, F&& back) {
        const bool ng = grad_enabled && (needs_grad(a) || needs_grad(b));
        const int o = push(std::move(out), ng);
        if (ng) nodes_[o].back = [back = std::forward<F>(back), a, b, o]() { back(a, b, o); };
        return o;
    }

    void check_same_numel(int a, int b, const char* what) const {
        if (val(a).numel() != val(b).numel())
            throw std::runtime_error(std::string(what) + ": size mismatch");
    }

    static Tensor<T> im2col(const Tensor<T>& x, ConvDims d, int64_t ho, int64_t wo) {
        Tensor<T> cols({d.batch * ho * wo, 9 * d.cin});
        T* out = cols.ptr();
        const T* in = x.ptr();
        for (int64_t b = 0; b < d.batch; ++b)
            for (int64_t i = 0; i < ho; ++i)
                for (int64_t j = 0; j < wo; ++j) {
                    T* row = out + (((b * ho) + i) * wo + j) * 9 * d.cin;
                    const int64_t ci = i * d.stride, cj = j * d.stride;
                    for (int64_t kh = 0; kh < 3; ++kh)
                        for (int64_t kw = 0; kw < 3; ++kw) {
                            const int64_t si = ci + kh - 1, sj = cj + kw - 1;
                            T* dst = row + (kh * 3 + kw) * d.cin;
                            if (si < 0 || si >= d.h || sj < 0 || sj >= d.w) {
                                std::fill(dst, dst + d.cin, T(0));
                            } else {
                                const T* src = in + ((b * d.h + si) * d.w + sj) * d.cin;
                                std::copy(src, src + d.cin, dst);
                            }
                        }
                }
        return cols;
    }

    static void col2im_add(const Tensor<T>& dcols, Tensor<T>& dx, ConvDims d, int64_t ho, int64_t wo) {
        const T* in = dcols.ptr();
        T* out = dx.ptr();
        for (int64_t b = 0; b < d.batch; ++b)
            for (int64_t i = 0; i < ho; ++i)
                for (int64_t j = 0; j < wo; ++j) {
                    const T* row = in + (((b * ho) + i) * wo + j) * 9 * d.cin;
                    const int64_t ci = i * d.stride, cj = j * d.stride;
                    for (int64_t kh = 0; kh < 3; ++kh)
                        for (int64_t kw = 0; kw < 3; ++kw) {
                            const int64_t si = ci + kh - 1, sj = cj + kw - 1;
                            if (si < 0 || si >= d.h || sj < 0 || sj >= d.w) continue;
                            const T* src = row + (kh * 3 + kw) * d.cin;
                            T* dst = out + ((b * d.h + si) * d.w + sj) * d.cin;
                            for (int64_t c = 0; c < d.cin; ++c) dst[c] += src[c];
                        }
                }
    }
};

}  // namespace mc

#include "statret/tape.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <utility>

#include "statret/errors.hpp"

namespace statret {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

namespace {
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

[[noreturn]] void shape_fail(const std::string& op, const Tensor& a) {
    throw ShapeError(op + ": unsupported shape " + a.shape_str());
}

[[noreturn]] void shape_fail(const std::string& op, const Tensor& a, const Tensor& b) {
    throw ShapeError(op + ": shapes " + a.shape_str() + " and " + b.shape_str() +
                     " do not conform");
}
}  // namespace

const Tensor& Var::val() const { return tape->value(*this); }

Var Tape::push(Tensor out, bool requires_grad, std::function<void(Tape&, Node&)> bw) {
    Node n;
    n.out = std::move(out);
    n.requires_grad = requires_grad;
    n.backward_fn = std::move(bw);
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
}

Tensor& Tape::grad_buf(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.grad_live) {
        n.grad = Tensor::zeros(n.out.shape);
        n.grad_live = true;
    }
    return n.grad;
}

void Tape::accum(std::size_t id, const Tensor& g) {
    if (!wants(id)) return;
    Tensor& buf = grad_buf(id);
    for (std::size_t i = 0; i < g.values.size(); ++i) buf.values[i] += g.values[i];
}

Tensor Tape::grad_of(Var v) const {
    const Node& n = nodes_[v.id];
    if (n.grad_live) return n.grad;
    return Tensor::zeros(n.out.shape);
}

Var Tape::leaf(Parameter& p) {
    Parameter* pp = &p;
    Var v = push(p.value, true, [pp](Tape&, Node& self) {
        for (std::size_t i = 0; i < self.grad.values.size(); ++i) {
            pp->grad.values[i] += self.grad.values[i];
        }
    });
    nodes_[v.id].param = pp;
    return v;
}

Var Tape::constant(Tensor t) { return push(std::move(t), false, nullptr); }

Var Tape::matmul(Var a, Var b) {
    const Tensor& A = a.val();
    const Tensor& B = b.val();
    if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.rows()) shape_fail("matmul", A, B);
    std::size_t n = A.rows(), k = A.cols(), m = B.cols();
    Tensor out = Tensor::zeros({n, m});
    MapMat(out.values.data(), n, m).noalias() =
        CMapMat(A.values.data(), n, k) * CMapMat(B.values.data(), k, m);
    std::size_t ia = a.id, ib = b.id;
    bool rg = wants(ia) || wants(ib);
    return push(std::move(out), rg, [ia, ib, n, k, m](Tape& t, Node& self) {
        CMapMat G(self.grad.values.data(), n, m);
        if (t.wants(ia)) {
            CMapMat B2(t.nodes_[ib].out.values.data(), k, m);
            MapMat(t.grad_buf(ia).values.data(), n, k).noalias() += G * B2.transpose();
        }
        if (t.wants(ib)) {
            CMapMat A2(t.nodes_[ia].out.values.data(), n, k);
            MapMat(t.grad_buf(ib).values.data(), k, m).noalias() += A2.transpose() * G;
        }
    });
}

Var Tape::transpose(Var a) {
    const Tensor& A = a.val();
    if (A.rank() != 2) shape_fail("transpose", A);
    std::size_t n = A.rows(), m = A.cols();
    Tensor out = Tensor::zeros({m, n});
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < m; ++c) out.at(c, r) = A.at(r, c);
    std::size_t ia = a.id;
    return push(std::move(out), wants(ia), [ia, n, m](Tape& t, Node& self) {
        if (!t.wants(ia)) return;
        Tensor& g = t.grad_buf(ia);
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < m; ++c) g.at(r, c) += self.grad.at(c, r);
    });
}

Var Tape::add(Var a, Var b) {
    const Tensor& A = a.val();
    const Tensor& B = b.val();
    if (!A.same_shape(B)) shape_fail("add", A, B);
    Tensor out = A;
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += B.values[i];
    std::size_t ia = a.id, ib = b.id;
    return push(std::move(out), wants(ia) || wants(ib), [ia, ib](Tape& t, Node& self) {
        t.accum(ia, self.grad);
        t.accum(ib, self.grad);
    });
}

Var Tape::sub(Var a, Var b) {
    const Tensor& A = a.val();
    const Tensor& B = b.val();
    if (!A.same_shape(B)) shape_fail("sub", A, B);
    Tensor out = A;
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] -= B.values[i];
    std::size_t ia = a.id, ib = b.id;
    return push(std::move(out), wants(ia) || wants(ib), [ia, ib](Tape& t, Node& self) {
        t.accum(ia, self.grad);
        if (!t.wants(ib)) return;
        Tensor& g = t.grad_buf(ib);
        for (std::size_t i = 0; i < g.values.size(); ++i) g.values[i] -= self.grad.values[i];
    });
}

Var Tape::add_bias(Var a, Var bias) {
    const Tensor& A = a.val();
    const Tensor& B = bias.val();
    if (A.rank() != 2 || B.rank() != 1 || B.shape[0] != A.cols()) shape_fail("add_bias", A, B);
    std::size_t n = A.rows(), m = A.cols();
    Tensor out = A;
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < m; ++c) out.at(r, c) += B.values[c];
    std::size_t ia = a.id, ib = bias.id;
    return push(std::move(out), wants(ia) || wants(ib), [ia, ib, n, m](Tape& t, Node& self) {
        t.accum(ia, self.grad);
        if (!t.wants(ib)) return;
        Tensor& g = t.grad_buf(ib);
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < m; ++c) g.values[c] += self.grad.at(r, c);
    });
}

Var Tape::mul(Var a, Var b) {
    const Tensor& A = a.val();
    const Tensor& B = b.val();
    if (!A.same_shape(B)) shape_fail("mul", A, B);
    Tensor out = A;
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] *= B.values[i];
    std::size_t ia = a.id, ib = b.id;
    return push(std::move(out), wants(ia) || wants(ib), [ia, ib](Tape& t, Node& self) {
        if (t.wants(ia)) {
            Tensor& g = t.grad_buf(ia);
            const Tensor& B2 = t.nodes_[ib].out;
            for (std::size_t i = 0; i < g.values.size(); ++i)
                g.values[i] += self.grad.values[i] * B2.values[i];
        }
        if (t.wants(ib)) {
            Tensor& g = t.grad_buf(ib);
            const Tensor& A2 = t.nodes_[ia].out;
            for (std::size_t i = 0; i < g.values.size(); ++i)
                g.values[i] += self.grad.values[i] * A2.values[i];
        }
    });
}

Var Tape::scale(Var a, double c) {
    Tensor out = a.val();
    for (double& x : out.values) x *= c;
    std::size_t ia = a.id;
    return push(std::move(out), wants(ia), [ia, c](Tape& t, Node& self) {
        if (!t.wants(ia)) return;
        Tensor& g = t.grad_buf(ia);
        for (std::size_t i = 0; i < g.values.size(); ++i) g.values[i] += c * self.grad.values[i];
    });
}

Var Tape::add_const(Var a, double c) {
    Tensor out = a.val();
    for (double& x : out.values) x += c;
    std::size_t ia = a.id;
    return push(std::move(out), wants(ia),
                [ia](Tape& t, Node& self) { t.accum(ia, self.grad); });
}

Var Tape::clamp_min(Var a, double c) {
    const Tensor& A = a.val();
    Tensor out = A;
    for (double& x : out.values) x = std::max(x, c);
    std::size_t ia = a.id;
    return push(std::move(out), wants(ia), [ia, c](Tape& t, Node& self) {
        if (!t.wants(ia)) return;
        Tensor& g = t.grad_buf(ia);
        const Tensor& A2 = t.nodes_[ia].out;
        for (std::size_t i = 0; i < g.values.size(); ++i) {
            if (A2.values[i] > c) g.values[i] += self.grad.values[i];
        }
    });
}

Var Tape::exp(Var a) {
    Tensor out = a.val();
    for (double& x : out.values) x = std::exp(x);
    std::size_t ia = a.id;
    return push(std::move(out), wants(ia), [ia](Tape& t, Node& self) {
        if (!t.wants(ia)) return;
        Tensor& g = t.grad_buf(ia);
        for (std::size_t i = 0; i < g.values.size(); ++i)
            g.values[i] += self.grad.values[i] * self.out.values[i];
    });
}

Var Tape::log(Var a) {
    Tensor out = a.val();
    for (double& x : out.values) x = std::log(x);
    std::size_t ia = a.id;
    return push(std::move(out), wants(ia), [ia](Tape& t, Node& self) {
        if (!t.wants(ia)) return;
        Tensor& g = t.grad_buf(ia);
        const Tensor& A2 = t.nodes_[ia].out;
        for (std::size_t i = 0; i < g.values.size(); ++i)
            g.values[i] += self.grad.values[i] / A2.values[i];
    });
}

Var Tape::leaky_relu(Var a, double slope) {
    const Tensor& A = a.val();
    Tensor out = A;
    for (double& x : out.values) x = x > 0.0 ? x : slope * x;
    std::size_t ia = a.id;
    return push(std::move(out), wants(ia), [ia, slope](Tape& t, Node& self) {
        if (!t.wants(ia)) return;
        Tensor& g = t.grad_buf(ia);
        const Tensor& A2 = t.nodes_[ia].out;
        for (std::size_t i = 0; i < g.values.size(); ++i)
            g.values[i] += self.grad.values[i] * (A2.values[i] > 0.0 ? 1.0 : slope);
    });
}

Var Tape::gelu(Var a) {
    const Tensor& A = a.val();
    Tensor out = A;
    for (double& x : out.values) x = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
    std::size_t ia = a.id;
    return push(std::move(out), wants(ia), [ia](Tape& t, Node& self) {
        if (!t.wants(ia)) return;
        Tensor& g = t.grad_buf(ia);
        const Tensor& A2 = t.nodes_[ia].out;
        for (std::size_t i = 0; i < g.values.size(); ++i) {
            double x = A2.values[i];
            double phi_cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
            double phi_pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
            g.values[i] += self.grad.values[i] * (phi_cdf + x * phi_pdf);
        }
    });
}

Var Tape::row_softmax(Var a) {
    const Tensor& A = a.val();
    std::size_t n, m;
    if (A.rank() == 2) {
        n = A.rows();
        m = A.cols();
    } else if (A.rank() == 1) {
        n = 1;
        m = A.shape[0];
    } else {
        shape_fail("row_softmax", A);
    }
    Tensor out = A;
    for (std::size_t r = 0; r < n; ++r) {
        double* row = out.values.data() + r * m;
        double mx = row[0];
        for (std::size_t c = 1; c < m; ++c) mx = std::max(mx, row[c]);
        double s = 0.0;
        for (std::size_t c = 0; c < m; ++c) {
            row[c] = std::exp(row[c] - mx);
            s += row[c];
        }
        for (std::size_t c = 0; c < m; ++c) row[c] /= s;
    }
    std::size_t ia = a.id;
    return push(std::move(out), wants(ia), [ia, n, m](Tape& t, Node& self) {
        if (!t.wants(ia)) return;
        Tensor& g = t.grad_buf(ia);
        for (std::size_t r = 0; r < n; ++r) {
            const double* p = self.out.values.data() + r * m;
            const double* gy = self.grad.values.data() + r * m;
            double dotpg = 0.0;
            for (std::size_t c = 0; c < m; ++c) dotpg += p[c] * gy[c];
            double* gx = g.values.data() + r * m;
            for (std::size_t c = 0; c < m; ++c) gx[c] += p[c] * (gy[c] - dotpg);
        }
    });
}

Var Tape::maxpool_rows(Var a) {
    const Tensor& A = a.val();
    if (A.rank() != 2) shape_fail("maxpool_rows", A);
    std::size_t n = A.rows(), m = A.cols();
    Tensor out = Tensor::zeros({m});
    std::vector<std::size_t> argmax(m, 0);
    for (std::size_t c = 0; c < m; ++c) {
        double best = A.at(0, c);
        for (std::size_t r = 1; r < n; ++r) {
            if (A.at(r, c) > best) {  // first maximum wins ties
                best = A.at(r, c);
                argmax[c] = r;
            }
        }
        out.values[c] = best;
    }
    std::size_t ia = a.id;
    return push(std::move(out), wants(ia), [ia, m, argmax](Tape& t, Node& self) {
        if (!t.wants(ia)) return;
        Tensor& g = t.grad_buf(ia);
        for (std::size_t c = 0; c < m; ++c) g.at(argmax[c], c) += self.grad.values[c];
    });
}

Var Tape::sum(Var a) {
    const Tensor& A = a.val();
    double s = 0.0;
    for (double x : A.values) s += x;
    std::size_t ia = a.id;
    return push(Tensor::scalar(s), wants(ia), [ia](Tape& t, Node& self) {
        if (!t.wants(ia)) return;
        Tensor& g = t.grad_buf(ia);
        double up = self.grad.values[0];
        for (double& x : g.values) x += up;
    });
}

Var Tape::dot(Var a, Var b) {
    const Tensor& A = a.val();
    const Tensor& B = b.val();
    if (A.numel() != B.numel()) shape_fail("dot", A, B);
    double s = 0.0;
    for (std::size_t i = 0; i < A.values.size(); ++i) s += A.values[i] * B.values[i];
    std::size_t ia = a.id, ib = b.id;
    return push(Tensor::scalar(s), wants(ia) || wants(ib), [ia, ib](Tape& t, Node& self) {
        double up = self.grad.values[0];
        if (t.wants(ia)) {
            Tensor& g = t.grad_buf(ia);
            const Tensor& B2 = t.nodes_[ib].out;
            for (std::size_t i = 0; i < g.values.size(); ++i) g.values[i] += up * B2.values[i];
        }
        if (t.wants(ib)) {
            Tensor& g = t.grad_buf(ib);
            const Tensor& A2 = t.nodes_[ia].out;
            for (std::size_t i = 0; i < g.values.size(); ++i) g.values[i] += up * A2.values[i];
        }
    });
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    std::size_t n = parts[0].val().rows(), total = 0;
    for (const Var& p : parts) {
        const Tensor& P = p.val();
        if (P.rank() != 2 || P.rows() != n) shape_fail("concat_cols", parts[0].val(), P);
        total += P.cols();
    }
    Tensor out = Tensor::zeros({n, total});
    std::vector<std::size_t> ids, offs;
    std::size_t off = 0;
    bool rg = false;
    for (const Var& p : parts) {
        const Tensor& P = p.val();
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < P.cols(); ++c) out.at(r, off + c) = P.at(r, c);
        ids.push_back(p.id);
        offs.push_back(off);
        off += P.cols();
        rg = rg || wants(p.id);
    }
    return push(std::move(out), rg, [ids, offs, n](Tape& t, Node& self) {
        for (std::size_t k = 0; k < ids.size(); ++k) {
            if (!t.wants(ids[k])) continue;
            Tensor& g = t.grad_buf(ids[k]);
            std::size_t w = g.cols();
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t c = 0; c < w; ++c) g.at(r, c) += self.grad.at(r, offs[k] + c);
        }
    });
}

Var Tape::concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no inputs");
    auto part_dims = [](const Tensor& p) -> std::pair<std::size_t, std::size_t> {
        if (p.rank() == 1) return {1, p.shape[0]};
        if (p.rank() == 2) return {p.rows(), p.cols()};
        shape_fail("concat_rows", p);
    };
    std::size_t m = part_dims(parts[0].val()).second, total = 0;
    for (const Var& p : parts) {
        auto [r, c] = part_dims(p.val());
        if (c != m) shape_fail("concat_rows", parts[0].val(), p.val());
        total += r;
    }
    Tensor out = Tensor::zeros({total, m});
    std::vector<std::size_t> ids, offs, rows;
    std::size_t off = 0;
    bool rg = false;
    for (const Var& p : parts) {
        const Tensor& P = p.val();
        auto [r, c] = part_dims(P);
        for (std::size_t i = 0; i < r * c; ++i) out.values[off * m + i] = P.values[i];
        ids.push_back(p.id);
        offs.push_back(off);
        rows.push_back(r);
        off += r;
        rg = rg || wants(p.id);
    }
    return push(std::move(out), rg, [ids, offs, rows, m](Tape& t, Node& self) {
        for (std::size_t k = 0; k < ids.size(); ++k) {
            if (!t.wants(ids[k])) continue;
            Tensor& g = t.grad_buf(ids[k]);
            for (std::size_t i = 0; i < rows[k] * m; ++i)
                g.values[i] += self.grad.values[offs[k] * m + i];
        }
    });
}

Var Tape::slice_cols(Var a, std::size_t c0, std::size_t c1) {
    const Tensor& A = a.val();
    if (A.rank() != 2 || c0 >= c1 || c1 > A.cols()) shape_fail("slice_cols", A);
    std::size_t n = A.rows(), w = c1 - c0;
    Tensor out = Tensor::zeros({n, w});
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < w; ++c) out.at(r, c) = A.at(r, c0 + c);
    std::size_t ia = a.id;
    return push(std::move(out), wants(ia), [ia, n, w, c0](Tape& t, Node& self) {
        if (!t.wants(ia)) return;
        Tensor& g = t.grad_buf(ia);
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < w; ++c) g.at(r, c0 + c) += self.grad.at(r, c);
    });
}

Var Tape::gather_rows(Var a, std::vector<std::size_t> idx) {
    const Tensor& A = a.val();
    if (A.rank() != 2) shape_fail("gather_rows", A);
    std::size_t m = A.cols();
    for (std::size_t r : idx) {
        if (r >= A.rows())
            throw ShapeError("gather_rows: index " + std::to_string(r) + " out of " +
                             A.shape_str());
    }
    Tensor out = Tensor::zeros({idx.size(), m});
    for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t c = 0; c < m; ++c) out.at(i, c) = A.at(idx[i], c);
    std::size_t ia = a.id;
    return push(std::move(out), wants(ia), [ia, idx = std::move(idx), m](Tape& t, Node& self) {
        if (!t.wants(ia)) return;
        Tensor& g = t.grad_buf(ia);
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (std::size_t c = 0; c < m; ++c) g.at(idx[i], c) += self.grad.at(i, c);
    });
}

Var Tape::gather_elems(Var a, std::vector<std::size_t> flat_idx) {
    const Tensor& A = a.val();
    for (std::size_t i : flat_idx) {
        if (i >= A.numel())
            throw ShapeError("gather_elems: index " + std::to_string(i) + " out of " +
                             A.shape_str());
    }
    Tensor out = Tensor::zeros({flat_idx.size()});
    for (std::size_t i = 0; i < flat_idx.size(); ++i) out.values[i] = A.values[flat_idx[i]];
    std::size_t ia = a.id;
    return push(std::move(out), wants(ia), [ia, flat_idx = std::move(flat_idx)](Tape& t, Node& self) {
        if (!t.wants(ia)) return;
        Tensor& g = t.grad_buf(ia);
        for (std::size_t i = 0; i < flat_idx.size(); ++i)
            g.values[flat_idx[i]] += self.grad.values[i];
    });
}

Var Tape::reshape(Var a, std::vector<std::size_t> shape) {
    const Tensor& A = a.val();
    if (shape_numel(shape) != A.numel()) shape_fail("reshape", A);
    Tensor out(std::move(shape), A.values);
    std::size_t ia = a.id;
    return push(std::move(out), wants(ia), [ia](Tape& t, Node& self) {
        if (!t.wants(ia)) return;
        Tensor& g = t.grad_buf(ia);
        for (std::size_t i = 0; i < g.values.size(); ++i) g.values[i] += self.grad.values[i];
    });
}

Var Tape::layer_norm(Var x, Var gamma, Var beta, double eps) {
    const Tensor& X = x.val();
    const Tensor& G = gamma.val();
    const Tensor& B = beta.val();
    if (X.rank() != 2 || G.rank() != 1 || B.rank() != 1 || G.shape[0] != X.cols() ||
        B.shape[0] != X.cols()) {
        shape_fail("layer_norm", X, G);
    }
    std::size_t n = X.rows(), m = X.cols();
    Tensor out = Tensor::zeros({n, m});
    Tensor xhat = Tensor::zeros({n, m});
    std::vector<double> inv_std(n);
    for (std::size_t r = 0; r < n; ++r) {
        double mu = 0.0;
        for (std::size_t c = 0; c < m; ++c) mu += X.at(r, c);
        mu /= static_cast<double>(m);
        double var = 0.0;
        for (std::size_t c = 0; c < m; ++c) {
            double d = X.at(r, c) - mu;
            var += d * d;
        }
        var /= static_cast<double>(m);
        double is = 1.0 / std::sqrt(var + eps);
        inv_std[r] = is;
        for (std::size_t c = 0; c < m; ++c) {
            double xh = (X.at(r, c) - mu) * is;
            xhat.at(r, c) = xh;
            out.at(r, c) = xh * G.values[c] + B.values[c];
        }
    }
    std::size_t ix = x.id, ig = gamma.id, ib = beta.id;
    bool rg = wants(ix) || wants(ig) || wants(ib);
    return push(std::move(out), rg,
                [ix, ig, ib, n, m, xhat = std::move(xhat),
                 inv_std = std::move(inv_std)](Tape& t, Node& self) {
                    const Tensor& gam = t.nodes_[ig].out;
                    if (t.wants(ig)) {
                        Tensor& gg = t.grad_buf(ig);
                        for (std::size_t r = 0; r < n; ++r)
                            for (std::size_t c = 0; c < m; ++c)
                                gg.values[c] += self.grad.at(r, c) * xhat.at(r, c);
                    }
                    if (t.wants(ib)) {
                        Tensor& gb = t.grad_buf(ib);
                        for (std::size_t r = 0; r < n; ++r)
                            for (std::size_t c = 0; c < m; ++c) gb.values[c] += self.grad.at(r, c);
                    }
                    if (t.wants(ix)) {
                        Tensor& gx = t.grad_buf(ix);
                        std::vector<double> h(m);
                        for (std::size_t r = 0; r < n; ++r) {
                            double mh = 0.0, mhx = 0.0;
                            for (std::size_t c = 0; c < m; ++c) {
                                h[c] = self.grad.at(r, c) * gam.values[c];
                                mh += h[c];
                                mhx += h[c] * xhat.at(r, c);
                            }
                            mh /= static_cast<double>(m);
                            mhx /= static_cast<double>(m);
                            for (std::size_t c = 0; c < m; ++c)
                                gx.at(r, c) += (h[c] - mh - xhat.at(r, c) * mhx) * inv_std[r];
                        }
                    }
                });
}

Var Tape::mean(Var a) {
    std::size_t n = a.val().numel();
    return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var Tape::log_sum_exp(Var a) {
    const Tensor& A = a.val();
    double mx = A.values[0];
    for (double v : A.values) mx = std::max(mx, v);
    Var shifted = add_const(a, -mx);
    return add_const(log(sum(exp(shifted))), mx);
}

Var Tape::dropout(Var a, double rate, Rng& rng) {
    if (rate <= 0.0) return a;
    const Tensor& A = a.val();
    Tensor mask = Tensor::zeros(A.shape);
    double keep = 1.0 - rate;
    for (double& v : mask.values) v = rng.uniform01() < keep ? 1.0 / keep : 0.0;
    return mul(a, constant(std::move(mask)));
}

void Tape::backward(Var loss) {
    const Tensor& L = loss.val();
    if (L.numel() != 1) {
        throw ShapeError("backward: loss must be scalar, got " + L.shape_str());
    }
    if (!wants(loss.id)) return;  // constant loss: nothing reachable
    grad_buf(loss.id).values[0] = 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.requires_grad || !n.grad_live) continue;
        if (n.backward_fn) n.backward_fn(*this, n);
    }
}

}  // namespace statret

#include "snse/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace snse {

namespace {
size_t shape_numel(const std::vector<int>& s) {
    size_t n = 1;
    for (int d : s) {
        if (d <= 0) throw ShapeError("non-positive dimension in shape");
        n *= static_cast<size_t>(d);
    }
    return n;
}
} // namespace

Tensor::Tensor(std::vector<int> s, double fill)
    : shape(std::move(s)), data(shape_numel(shape), fill) {}

Tensor::Tensor(std::vector<int> s, std::vector<double> d)
    : shape(std::move(s)), data(std::move(d)) {
    if (shape_numel(shape) != data.size())
        throw ShapeError("data length does not match shape " + shape_str(*this));
}

Tensor Tensor::vector(std::vector<double> d) {
    int n = static_cast<int>(d.size());
    return Tensor({n}, std::move(d));
}

Tensor Tensor::matrix(int r, int c, std::vector<double> d) {
    return Tensor({r, c}, std::move(d));
}

Tensor Tensor::scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

int Tensor::rows() const {
    if (rank() != 2) throw ShapeError("rows() on rank-" + std::to_string(rank()) + " tensor");
    return shape[0];
}

int Tensor::cols() const {
    if (rank() != 2) throw ShapeError("cols() on rank-" + std::to_string(rank()) + " tensor");
    return shape[1];
}

double& Tensor::at(int r, int c) { return data[static_cast<size_t>(r) * shape[1] + c]; }
double Tensor::at(int r, int c) const { return data[static_cast<size_t>(r) * shape[1] + c]; }

double Tensor::item() const {
    if (numel() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(*this));
    return data[0];
}

void Tensor::zero_grad() { grad.assign(data.size(), 0.0); }

void Tensor::ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
}

bool Tensor::all_finite() const {
    return std::all_of(data.begin(), data.end(), [](double x) { return std::isfinite(x); });
}

std::string shape_str(const Tensor& t) {
    std::ostringstream os;
    os << '(';
    for (size_t i = 0; i < t.shape.size(); ++i) {
        if (i) os << ',';
        os << t.shape[i];
    }
    os << ')';
    return os.str();
}

// ---------------------------------------------------------------- tape core

Var Tape::push(Tensor value, std::function<void(Tape&)> backprop) {
    Node n;
    n.value = std::move(value);
    n.grad.assign(n.value.data.size(), 0.0);
    n.backprop = std::move(backprop);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::input(Tensor t) { return push(std::move(t), nullptr); }

Var Tape::param(Tensor& p) {
    p.requires_grad = true;
    Var v = push(p, nullptr);
    nodes_.back().bound_param = &p;
    return v;
}

const Tensor& Tape::val(Var v) const { return nodes_[static_cast<size_t>(v.id)].value; }

std::span<const double> Tape::grad_of(Var v) const {
    const auto& g = nodes_[static_cast<size_t>(v.id)].grad;
    return {g.data(), g.size()};
}

void Tape::backward(Var loss) {
    const Tensor& L = v(loss.id);
    if (L.numel() != 1) throw ContractError("backward: loss must be scalar, got " + shape_str(L));
    for (auto& n : nodes_) std::fill(n.grad.begin(), n.grad.end(), 0.0);
    nodes_[static_cast<size_t>(loss.id)].grad[0] = 1.0;
    for (int i = loss.id; i >= 0; --i) {
        auto& n = nodes_[static_cast<size_t>(i)];
        if (n.backprop) n.backprop(*this);
    }
    for (auto& n : nodes_) {
        if (n.bound_param) {
            n.bound_param->ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) n.bound_param->grad[i] += n.grad[i];
        }
    }
}

// ---------------------------------------------------------------- primitives

Var Tape::matmul(Var a, Var b) {
    const Tensor& A = v(a.id);
    const Tensor& B = v(b.id);
    if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.rows())
        throw ShapeError("matmul " + shape_str(A) + " x " + shape_str(B));
    const int r = A.rows(), k = A.cols(), c = B.cols();
    Tensor C({r, c});
    for (int i = 0; i < r; ++i) {
        const double* arow = &A.data[static_cast<size_t>(i) * k];
        double* crow = &C.data[static_cast<size_t>(i) * c];
        for (int kk = 0; kk < k; ++kk) {
            const double aik = arow[kk];
            const double* brow = &B.data[static_cast<size_t>(kk) * c];
            for (int j = 0; j < c; ++j) crow[j] += aik * brow[j];
        }
    }
    const int out = static_cast<int>(nodes_.size());
    return push(std::move(C), [=](Tape& t) {
        const auto& gC = t.gbuf(out);
        const auto& Av = t.v(a.id);
        const auto& Bv = t.v(b.id);
        auto& gA = t.gbuf(a.id);
        auto& gB = t.gbuf(b.id);
        // dA = gC * B^T
        for (int i = 0; i < r; ++i) {
            const double* gcrow = &gC[static_cast<size_t>(i) * c];
            double* garow = &gA[static_cast<size_t>(i) * k];
            for (int kk = 0; kk < k; ++kk) {
                const double* brow = &Bv.data[static_cast<size_t>(kk) * c];
                double acc = 0.0;
                for (int j = 0; j < c; ++j) acc += gcrow[j] * brow[j];
                garow[kk] += acc;
            }
        }
        // dB = A^T * gC
        for (int i = 0; i < r; ++i) {
            const double* arow = &Av.data[static_cast<size_t>(i) * k];
            const double* gcrow = &gC[static_cast<size_t>(i) * c];
            for (int kk = 0; kk < k; ++kk) {
                const double aik = arow[kk];
                double* gbrow = &gB[static_cast<size_t>(kk) * c];
                for (int j = 0; j < c; ++j) gbrow[j] += aik * gcrow[j];
            }
        }
    });
}

Var Tape::add(Var a, Var b) {
    const Tensor& A = v(a.id);
    const Tensor& B = v(b.id);
    if (A.shape != B.shape)
        throw ShapeError("add " + shape_str(A) + " vs " + shape_str(B));
    Tensor C = A;
    for (size_t i = 0; i < C.data.size(); ++i) C.data[i] += B.data[i];
    const int out = static_cast<int>(nodes_.size());
    return push(std::move(C), [=](Tape& t) {
        const auto& g = t.gbuf(out);
        auto& gA = t.gbuf(a.id);
        auto& gB = t.gbuf(b.id);
        for (size_t i = 0; i < g.size(); ++i) {
            gA[i] += g[i];
            gB[i] += g[i];
        }
    });
}

Var Tape::add_rowwise(Var mat, Var row) {
    const Tensor& A = v(mat.id);
    const Tensor& r = v(row.id);
    if (A.rank() != 2 || r.rank() != 1 || r.shape[0] != A.cols())
        throw ShapeError("add_rowwise " + shape_str(A) + " vs " + shape_str(r));
    const int nr = A.rows(), nc = A.cols();
    Tensor C = A;
    for (int i = 0; i < nr; ++i)
        for (int j = 0; j < nc; ++j) C.at(i, j) += r.data[j];
    const int out = static_cast<int>(nodes_.size());
    return push(std::move(C), [=](Tape& t) {
        const auto& g = t.gbuf(out);
        auto& gA = t.gbuf(mat.id);
        auto& gr = t.gbuf(row.id);
        for (int i = 0; i < nr; ++i)
            for (int j = 0; j < nc; ++j) {
                const double gv = g[static_cast<size_t>(i) * nc + j];
                gA[static_cast<size_t>(i) * nc + j] += gv;
                gr[j] += gv;
            }
    });
}

Var Tape::sub(Var a, Var b) { return add(a, scale(b, -1.0)); }

Var Tape::mul(Var a, Var b) {
    const Tensor& A = v(a.id);
    const Tensor& B = v(b.id);
    if (A.shape != B.shape)
        throw ShapeError("mul " + shape_str(A) + " vs " + shape_str(B));
    Tensor C = A;
    for (size_t i = 0; i < C.data.size(); ++i) C.data[i] *= B.data[i];
    const int out = static_cast<int>(nodes_.size());
    return push(std::move(C), [=](Tape& t) {
        const auto& g = t.gbuf(out);
        const auto& Av = t.v(a.id);
        const auto& Bv = t.v(b.id);
        auto& gA = t.gbuf(a.id);
        auto& gB = t.gbuf(b.id);
        for (size_t i = 0; i < g.size(); ++i) {
            gA[i] += g[i] * Bv.data[i];
            gB[i] += g[i] * Av.data[i];
        }
    });
}

Var Tape::scale(Var a, double c) {
    Tensor C = v(a.id);
    for (double& x : C.data) x *= c;
    const int out = static_cast<int>(nodes_.size());
    return push(std::move(C), [=](Tape& t) {
        const auto& g = t.gbuf(out);
        auto& gA = t.gbuf(a.id);
        for (size_t i = 0; i < g.size(); ++i) gA[i] += c * g[i];
    });
}

Var Tape::add_const(Var a, double c) {
    Tensor C = v(a.id);
    for (double& x : C.data) x += c;
    const int out = static_cast<int>(nodes_.size());
    return push(std::move(C), [=](Tape& t) {
        const auto& g = t.gbuf(out);
        auto& gA = t.gbuf(a.id);
        for (size_t i = 0; i < g.size(); ++i) gA[i] += g[i];
    });
}

Var Tape::softmax_rows(Var a) {
    const Tensor& A = v(a.id);
    if (A.rank() != 2) throw ShapeError("softmax_rows needs rank-2, got " + shape_str(A));
    const int nr = A.rows(), nc = A.cols();
    Tensor C({nr, nc});
    for (int i = 0; i < nr; ++i) {
        double mx = A.at(i, 0);
        for (int j = 1; j < nc; ++j) mx = std::max(mx, A.at(i, j));
        double sum = 0.0;
        for (int j = 0; j < nc; ++j) {
            const double e = std::exp(A.at(i, j) - mx);
            C.at(i, j) = e;
            sum += e;
        }
        for (int j = 0; j < nc; ++j) C.at(i, j) /= sum;
    }
    const int out = static_cast<int>(nodes_.size());
    return push(std::move(C), [=](Tape& t) {
        const auto& g = t.gbuf(out);
        const auto& S = t.v(out);
        auto& gA = t.gbuf(a.id);
        for (int i = 0; i < nr; ++i) {
            double dot = 0.0;
            for (int j = 0; j < nc; ++j)
                dot += g[static_cast<size_t>(i) * nc + j] * S.at(i, j);
            for (int j = 0; j < nc; ++j)
                gA[static_cast<size_t>(i) * nc + j] +=
                    S.at(i, j) * (g[static_cast<size_t>(i) * nc + j] - dot);
        }
    });
}

Var Tape::log_softmax_rows(Var a) {
    const Tensor& A = v(a.id);
    if (A.rank() != 2) throw ShapeError("log_softmax_rows needs rank-2, got " + shape_str(A));
    const int nr = A.rows(), nc = A.cols();
    Tensor C({nr, nc});
    for (int i = 0; i < nr; ++i) {
        double mx = A.at(i, 0);
        for (int j = 1; j < nc; ++j) mx = std::max(mx, A.at(i, j));
        double sum = 0.0;
        for (int j = 0; j < nc; ++j) sum += std::exp(A.at(i, j) - mx);
        const double lse = mx + std::log(sum);
        for (int j = 0; j < nc; ++j) C.at(i, j) = A.at(i, j) - lse;
    }
    const int out = static_cast<int>(nodes_.size());
    return push(std::move(C), [=](Tape& t) {
        const auto& g = t.gbuf(out);
        const auto& L = t.v(out);
        auto& gA = t.gbuf(a.id);
        for (int i = 0; i < nr; ++i) {
            double gsum = 0.0;
            for (int j = 0; j < nc; ++j) gsum += g[static_cast<size_t>(i) * nc + j];
            for (int j = 0; j < nc; ++j)
                gA[static_cast<size_t>(i) * nc + j] +=
                    g[static_cast<size_t>(i) * nc + j] - std::exp(L.at(i, j)) * gsum;
        }
    });
}

Var Tape::sigmoid(Var a) {
    Tensor C = v(a.id);
    for (double& x : C.data) x = 1.0 / (1.0 + std::exp(-x));
    const int out = static_cast<int>(nodes_.size());
    return push(std::move(C), [=](Tape& t) {
        const auto& g = t.gbuf(out);
        const auto& Y = t.v(out);
        auto& gA = t.gbuf(a.id);
        for (size_t i = 0; i < g.size(); ++i)
            gA[i] += g[i] * Y.data[i] * (1.0 - Y.data[i]);
    });
}

Var Tape::relu(Var a) {
    Tensor C = v(a.id);
    for (double& x : C.data) x = x > 0.0 ? x : 0.0;
    const int out = static_cast<int>(nodes_.size());
    return push(std::move(C), [=](Tape& t) {
        const auto& g = t.gbuf(out);
        const auto& X = t.v(a.id);
        auto& gA = t.gbuf(a.id);
        // subgradient at exactly 0 is 0
        for (size_t i = 0; i < g.size(); ++i)
            if (X.data[i] > 0.0) gA[i] += g[i];
    });
}

Var Tape::mean_rows(Var a) {
    const Tensor& A = v(a.id);
    if (A.rank() != 2) throw ShapeError("mean_rows needs rank-2, got " + shape_str(A));
    const int nr = A.rows(), nc = A.cols();
    Tensor C({nc});
    for (int i = 0; i < nr; ++i)
        for (int j = 0; j < nc; ++j) C.data[j] += A.at(i, j);
    for (double& x : C.data) x /= nr;
    const int out = static_cast<int>(nodes_.size());
    return push(std::move(C), [=](Tape& t) {
        const auto& g = t.gbuf(out);
        auto& gA = t.gbuf(a.id);
        for (int i = 0; i < nr; ++i)
            for (int j = 0; j < nc; ++j)
                gA[static_cast<size_t>(i) * nc + j] += g[j] / nr;
    });
}

Var Tape::concat_rows(Var a, Var b) {
    const Tensor& A = v(a.id);
    const Tensor& B = v(b.id);
    if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.cols())
        throw ShapeError("concat_rows " + shape_str(A) + " vs " + shape_str(B));
    const int ra = A.rows(), rb = B.rows(), nc = A.cols();
    Tensor C({ra + rb, nc});
    std::copy(A.data.begin(), A.data.end(), C.data.begin());
    std::copy(B.data.begin(), B.data.end(), C.data.begin() + A.data.size());
    const int out = static_cast<int>(nodes_.size());
    return push(std::move(C), [=](Tape& t) {
        const auto& g = t.gbuf(out);
        auto& gA = t.gbuf(a.id);
        auto& gB = t.gbuf(b.id);
        const size_t na = static_cast<size_t>(ra) * nc;
        for (size_t i = 0; i < na; ++i) gA[i] += g[i];
        for (size_t i = 0; i < static_cast<size_t>(rb) * nc; ++i) gB[i] += g[na + i];
    });
}

Var Tape::transpose(Var a) {
    const Tensor& A = v(a.id);
    if (A.rank() != 2) throw ShapeError("transpose needs rank-2, got " + shape_str(A));
    const int nr = A.rows(), nc = A.cols();
    Tensor C({nc, nr});
    for (int i = 0; i < nr; ++i)
        for (int j = 0; j < nc; ++j) C.at(j, i) = A.at(i, j);
    const int out = static_cast<int>(nodes_.size());
    return push(std::move(C), [=](Tape& t) {
        const auto& g = t.gbuf(out);
        auto& gA = t.gbuf(a.id);
        for (int i = 0; i < nr; ++i)
            for (int j = 0; j < nc; ++j)
                gA[static_cast<size_t>(i) * nc + j] += g[static_cast<size_t>(j) * nr + i];
    });
}

Var Tape::embedding_lookup(Var table, const std::vector<int>& ids) {
    const Tensor& T = v(table.id);
    if (T.rank() != 2) throw ShapeError("embedding table must be rank-2, got " + shape_str(T));
    const int V = T.rows(), d = T.cols();
    for (int id : ids)
        if (id < 0 || id >= V)
            throw VocabError("token id " + std::to_string(id) + " outside vocab of " +
                             std::to_string(V));
    const int n = static_cast<int>(ids.size());
    Tensor C({n, d});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) C.at(i, j) = T.at(ids[static_cast<size_t>(i)], j);
    const int out = static_cast<int>(nodes_.size());
    return push(std::move(C), [=](Tape& t) {
        const auto& g = t.gbuf(out);
        auto& gT = t.gbuf(table.id);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j)
                gT[static_cast<size_t>(ids[static_cast<size_t>(i)]) * d + j] +=
                    g[static_cast<size_t>(i) * d + j];
    });
}

Var Tape::sum(Var a) {
    const Tensor& A = v(a.id);
    double s = 0.0;
    for (double x : A.data) s += x;
    const int out = static_cast<int>(nodes_.size());
    return push(Tensor::scalar(s), [=](Tape& t) {
        const double g = t.gbuf(out)[0];
        auto& gA = t.gbuf(a.id);
        for (double& x : gA) x += g;
    });
}

Var Tape::gather_nll(Var log_probs, const std::vector<int>& targets) {
    const Tensor& L = v(log_probs.id);
    if (L.rank() != 2 || static_cast<int>(targets.size()) != L.rows())
        throw ShapeError("gather_nll: log_probs " + shape_str(L) + " vs " +
                         std::to_string(targets.size()) + " targets");
    const int nr = L.rows(), nc = L.cols();
    for (int tgt : targets)
        if (tgt < 0 || tgt >= nc)
            throw VocabError("target token " + std::to_string(tgt) + " outside vocab of " +
                             std::to_string(nc));
    double s = 0.0;
    for (int i = 0; i < nr; ++i) s -= L.at(i, targets[static_cast<size_t>(i)]);
    const int out = static_cast<int>(nodes_.size());
    return push(Tensor::scalar(s), [=](Tape& t) {
        const double g = t.gbuf(out)[0];
        auto& gL = t.gbuf(log_probs.id);
        for (int i = 0; i < nr; ++i)
            gL[static_cast<size_t>(i) * nc + targets[static_cast<size_t>(i)]] -= g;
    });
}

Var Tape::cosine(Var a, Var b) {
    const Tensor& A = v(a.id);
    const Tensor& B = v(b.id);
    if (A.rank() != 1 || B.rank() != 1 || A.shape != B.shape)
        throw ShapeError("cosine " + shape_str(A) + " vs " + shape_str(B));
    const size_t n = A.numel();
    double dot = 0.0, na2 = 0.0, nb2 = 0.0;
    for (size_t i = 0; i < n; ++i) {
        dot += A.data[i] * B.data[i];
        na2 += A.data[i] * A.data[i];
        nb2 += B.data[i] * B.data[i];
    }
    if (na2 == 0.0 || nb2 == 0.0) throw DegenerateVector("cosine of zero-norm vector");
    const double na = std::sqrt(na2), nb = std::sqrt(nb2);
    const double c = dot / (na * nb);
    const int out = static_cast<int>(nodes_.size());
    return push(Tensor::scalar(c), [=](Tape& t) {
        const double g = t.gbuf(out)[0];
        const auto& Av = t.v(a.id);
        const auto& Bv = t.v(b.id);
        auto& gA = t.gbuf(a.id);
        auto& gB = t.gbuf(b.id);
        for (size_t i = 0; i < n; ++i) {
            gA[i] += g * (Bv.data[i] / (na * nb) - c * Av.data[i] / na2);
            gB[i] += g * (Av.data[i] / (na * nb) - c * Bv.data[i] / nb2);
        }
    });
}

// ------------------------------------------------------------- free helpers

double cosine_similarity(const Tensor& a, const Tensor& b) {
    if (a.rank() != 1 || b.rank() != 1 || a.shape != b.shape)
        throw ShapeError("cosine_similarity " + shape_str(a) + " vs " + shape_str(b));
    double dot = 0.0, na2 = 0.0, nb2 = 0.0;
    for (size_t i = 0; i < a.numel(); ++i) {
        dot += a.data[i] * b.data[i];
        na2 += a.data[i] * a.data[i];
        nb2 += b.data[i] * b.data[i];
    }
    if (na2 == 0.0 || nb2 == 0.0) throw DegenerateVector("cosine of zero-norm vector");
    return dot / (std::sqrt(na2) * std::sqrt(nb2));
}

double finite_diff_check(const std::function<double()>& f,
                         std::span<Tensor* const> params, double eps) {
    if (!(eps > 0.0 && eps <= 1e-2)) throw ConfigError("finite_diff_check: eps out of (0, 1e-2]");
    double worst = 0.0;
    for (Tensor* p : params) {
        p->ensure_grad();
        for (size_t i = 0; i < p->data.size(); ++i) {
            const double saved = p->data[i];
            p->data[i] = saved + eps;
            const double fp = f();
            p->data[i] = saved - eps;
            const double fm = f();
            p->data[i] = saved;
            if (!std::isfinite(fp) || !std::isfinite(fm))
                throw NumericalError("finite_diff_check: non-finite objective");
            const double central = (fp - fm) / (2.0 * eps);
            const double rel = std::abs(p->grad[i] - central) / std::max(1.0, std::abs(central));
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

} // namespace snse

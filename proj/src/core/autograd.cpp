#include "eddkit/autograd.hpp"

#include "eddkit/errors.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace edd {

namespace {

thread_local bool t_grad_enabled = true;

void require_2d(const Tensor& t, const char* op, const char* arg) {
    if (t.rank() != 2)
        throw ShapeError(std::string(op) + ": " + arg + " must be rank 2, got " + shape_str(t.shape()));
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

// c[m x n] += a[m x k] * b[k x n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = a[i * k + p];
            if (aip == 0.0) continue;
            const double* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
        }
    }
}

// c[m x n] += a[m x k] * b[n x k]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[j * k + p];
            c[i * n + j] += s;
        }
}

// c[k x n] += a[m x k]^T * b[m x n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = a[i * k + p];
            if (aip == 0.0) continue;
            double* cp = c + p * n;
            const double* bi = b + i * n;
            for (std::size_t j = 0; j < n; ++j) cp[j] += aip * bi[j];
        }
}

Node& in(Node& self, std::size_t i) { return *self.inputs[i]; }

} // namespace

Tensor& Node::grad_buffer() {
    if (grad.numel() != value.numel() || grad.shape() != value.shape()) grad = Tensor(value.shape(), 0.0);
    return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
}

bool grad_enabled() noexcept { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

Var record(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward_fn) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    const bool needs = t_grad_enabled &&
                       std::any_of(inputs.begin(), inputs.end(), [](const Var& v) { return v.requires_grad(); });
    if (needs) {
        node->requires_grad = true;
        node->inputs.reserve(inputs.size());
        for (auto& v : inputs) node->inputs.push_back(v.node());
        node->backward = std::move(backward_fn);
    }
    return Var(std::move(node));
}

Var constant(Tensor value) { return Var(std::move(value), false); }

void backward(const Var& loss) {
    if (!loss.defined() || loss.value().numel() != 1)
        throw InvalidArgument("backward: loss must be a scalar, got shape " +
                              (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
    if (!loss.requires_grad()) return;

    // Iterative post-order DFS gives a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node* child = node->inputs[next++].get();
            if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    // Interior gradients start from zero on every pass; leaves accumulate.
    for (Node* n : order)
        if (n->backward) n->grad = Tensor(n->value.shape(), 0.0);
    loss.node()->grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backward) (*it)->backward(**it);
}

// ---- ops ------------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
    require_2d(a.value(), "matmul", "lhs");
    require_2d(b.value(), "matmul", "rhs");
    const std::size_t m = a.value().dim(0), k = a.value().dim(1), n = b.value().dim(1);
    if (b.value().dim(0) != k)
        throw ShapeError("matmul: inner dimension mismatch, lhs has " + std::to_string(k) +
                         " columns but rhs has " + std::to_string(b.value().dim(0)) + " rows");
    Tensor out = Tensor::matrix(m, n);
    gemm_nn(a.value().values().data(), b.value().values().data(), out.values().data(), m, k, n);
    return record(std::move(out), {a, b}, [m, k, n](Node& self) {
        Node& A = in(self, 0);
        Node& B = in(self, 1);
        const double* g = self.grad.values().data();
        if (A.requires_grad) gemm_nt(g, B.value.values().data(), A.grad_buffer().values().data(), m, n, k);
        if (B.requires_grad) gemm_tn(A.value.values().data(), g, B.grad_buffer().values().data(), m, k, n);
    });
}

Var matmul_nt(const Var& a, const Var& b) {
    require_2d(a.value(), "matmul_nt", "lhs");
    require_2d(b.value(), "matmul_nt", "rhs");
    const std::size_t m = a.value().dim(0), k = a.value().dim(1), n = b.value().dim(0);
    if (b.value().dim(1) != k)
        throw ShapeError("matmul_nt: inner dimension mismatch, lhs has " + std::to_string(k) +
                         " columns but rhs has " + std::to_string(b.value().dim(1)));
    Tensor out = Tensor::matrix(m, n);
    gemm_nt(a.value().values().data(), b.value().values().data(), out.values().data(), m, k, n);
    return record(std::move(out), {a, b}, [m, k, n](Node& self) {
        Node& A = in(self, 0);
        Node& B = in(self, 1);
        const double* g = self.grad.values().data();
        // dA = g * B, dB = g^T * A
        if (A.requires_grad) gemm_nn(g, B.value.values().data(), A.grad_buffer().values().data(), m, n, k);
        if (B.requires_grad) gemm_tn(g, A.value.values().data(), B.grad_buffer().values().data(), m, n, k);
    });
}

Var add(const Var& a, const Var& b) {
    require_same(a.value(), b.value(), "add");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b.value()[i];
    return record(std::move(out), {a, b}, [](Node& self) {
        for (std::size_t k = 0; k < 2; ++k) {
            Node& x = in(self, k);
            if (!x.requires_grad) continue;
            Tensor& g = x.grad_buffer();
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
        }
    });
}

Var sub(const Var& a, const Var& b) {
    require_same(a.value(), b.value(), "sub");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= b.value()[i];
    return record(std::move(out), {a, b}, [](Node& self) {
        if (in(self, 0).requires_grad) {
            Tensor& g = in(self, 0).grad_buffer();
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
        }
        if (in(self, 1).requires_grad) {
            Tensor& g = in(self, 1).grad_buffer();
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] -= self.grad[i];
        }
    });
}

Var mul(const Var& a, const Var& b) {
    require_same(a.value(), b.value(), "mul");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b.value()[i];
    return record(std::move(out), {a, b}, [](Node& self) {
        Node& A = in(self, 0);
        Node& B = in(self, 1);
        if (A.requires_grad) {
            Tensor& g = A.grad_buffer();
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * B.value[i];
        }
        if (B.requires_grad) {
            Tensor& g = B.grad_buffer();
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * A.value[i];
        }
    });
}

Var add_row(const Var& a, const Var& row) {
    const std::size_t n = a.value().cols();
    if (row.value().numel() != n)
        throw ShapeError("add_row: row has " + std::to_string(row.value().numel()) + " entries, expected " +
                         std::to_string(n));
    Tensor out = a.value();
    const std::size_t m = out.rows();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.at(i, j) += row.value()[j];
    return record(std::move(out), {a, row}, [m, n](Node& self) {
        if (in(self, 0).requires_grad) {
            Tensor& g = in(self, 0).grad_buffer();
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
        }
        if (in(self, 1).requires_grad) {
            Tensor& g = in(self, 1).grad_buffer();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
        }
    });
}

Var scale(const Var& a, double c) {
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= c;
    return record(std::move(out), {a}, [c](Node& self) {
        Tensor& g = in(self, 0).grad_buffer();
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] += c * self.grad[i];
    });
}

Var tanh(const Var& a) {
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(out[i]);
    return record(std::move(out), {a}, [](Node& self) {
        Tensor& g = in(self, 0).grad_buffer();
        for (std::size_t i = 0; i < g.numel(); ++i) {
            const double y = self.value[i];
            g[i] += self.grad[i] * (1.0 - y * y);
        }
    });
}

Var sigmoid(const Var& a) {
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = 1.0 / (1.0 + std::exp(-out[i]));
    return record(std::move(out), {a}, [](Node& self) {
        Tensor& g = in(self, 0).grad_buffer();
        for (std::size_t i = 0; i < g.numel(); ++i) {
            const double y = self.value[i];
            g[i] += self.grad[i] * y * (1.0 - y);
        }
    });
}

Var exp(const Var& a) {
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::exp(out[i]);
    return record(std::move(out), {a}, [](Node& self) {
        Tensor& g = in(self, 0).grad_buffer();
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * self.value[i];
    });
}

Var softmax_rows(const Var& a) {
    Tensor out = a.value();
    const std::size_t m = out.rows(), n = out.cols();
    for (std::size_t i = 0; i < m; ++i) {
        auto r = out.row_span(i);
        const double mx = *std::max_element(r.begin(), r.end());
        double s = 0.0;
        for (double& v : r) s += (v = std::exp(v - mx));
        for (double& v : r) v /= s;
    }
    return record(std::move(out), {a}, [m, n](Node& self) {
        Tensor& g = in(self, 0).grad_buffer();
        for (std::size_t i = 0; i < m; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) dot += self.grad[i * n + j] * self.value[i * n + j];
            for (std::size_t j = 0; j < n; ++j)
                g[i * n + j] += self.value[i * n + j] * (self.grad[i * n + j] - dot);
        }
    });
}

Var concat_cols(const Var& a, const Var& b) {
    const std::size_t m = a.value().rows();
    if (b.value().rows() != m)
        throw ShapeError("concat_cols: row counts differ (" + std::to_string(m) + " vs " +
                         std::to_string(b.value().rows()) + ")");
    const std::size_t na = a.value().cols(), nb = b.value().cols();
    Tensor out = Tensor::matrix(m, na + nb);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < na; ++j) out.at(i, j) = a.value().at(i, j);
        for (std::size_t j = 0; j < nb; ++j) out.at(i, na + j) = b.value().at(i, j);
    }
    return record(std::move(out), {a, b}, [m, na, nb](Node& self) {
        const std::size_t n = na + nb;
        if (in(self, 0).requires_grad) {
            Tensor& g = in(self, 0).grad_buffer();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < na; ++j) g[i * na + j] += self.grad[i * n + j];
        }
        if (in(self, 1).requires_grad) {
            Tensor& g = in(self, 1).grad_buffer();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < nb; ++j) g[i * nb + j] += self.grad[i * n + na + j];
        }
    });
}

Var stack_rows(std::span<const Var> rows) {
    if (rows.empty()) throw ShapeError("stack_rows: no rows");
    const std::size_t n = rows.front().value().cols();
    std::size_t total = 0;
    for (const auto& r : rows) {
        if (r.value().cols() != n)
            throw ShapeError("stack_rows: column count " + std::to_string(r.value().cols()) + " differs from " +
                             std::to_string(n));
        total += r.value().rows();
    }
    Tensor out = Tensor::matrix(total, n);
    std::size_t off = 0;
    for (const auto& r : rows) {
        std::copy(r.value().values().begin(), r.value().values().end(), out.values().begin() + off);
        off += r.value().numel();
    }
    return record(std::move(out), std::vector<Var>(rows.begin(), rows.end()), [](Node& self) {
        std::size_t off = 0;
        for (auto& input : self.inputs) {
            const std::size_t cnt = input->value.numel();
            if (input->requires_grad) {
                Tensor& g = input->grad_buffer();
                for (std::size_t i = 0; i < cnt; ++i) g[i] += self.grad[off + i];
            }
            off += cnt;
        }
    });
}

Var gather_rows(const Var& table, std::span<const int> ids) {
    require_2d(table.value(), "gather_rows", "table");
    const std::size_t v = table.value().dim(0), d = table.value().dim(1);
    Tensor out = Tensor::matrix(ids.size(), d);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= v)
            throw InvalidArgument("gather_rows: id " + std::to_string(ids[i]) + " outside table of " +
                                  std::to_string(v) + " rows");
        auto src = table.value().row_span(static_cast<std::size_t>(ids[i]));
        std::copy(src.begin(), src.end(), out.row_span(i).begin());
    }
    return record(std::move(out), {table}, [ids = std::vector<int>(ids.begin(), ids.end()), d](Node& self) {
        Tensor& g = in(self, 0).grad_buffer();
        for (std::size_t i = 0; i < ids.size(); ++i)
            for (std::size_t j = 0; j < d; ++j) g[static_cast<std::size_t>(ids[i]) * d + j] += self.grad[i * d + j];
    });
}

Var sum(const Var& a) {
    double s = 0.0;
    for (double v : a.value().values()) s += v;
    return record(Tensor::scalar(s), {a}, [](Node& self) {
        Tensor& g = in(self, 0).grad_buffer();
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[0];
    });
}

} // namespace edd

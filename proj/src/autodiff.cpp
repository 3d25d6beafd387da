#include "gazeatt/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <unordered_set>

namespace gazeatt::ag {

namespace {

std::atomic<std::uint64_t> g_next_id{1};

Var make_node(std::vector<int> shape, std::vector<double> values,
              std::vector<Var> parents, std::function<void(Node&)> backprop) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->val = std::move(values);
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
    n->id = g_next_id.fetch_add(1);
    for (const auto& p : n->parents)
        if (p->needs_grad) { n->needs_grad = true; break; }
    return n;
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (a->shape != b->shape)
        throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

struct Dims4 {
    int c, d, w, h;
};

Dims4 as_feature(const Var& x, const char* op) {
    if (x->shape.size() != 4)
        throw std::invalid_argument(std::string(op) + ": expected {C,D,W,H} tensor");
    return {x->shape[0], x->shape[1], x->shape[2], x->shape[3]};
}

}  // namespace

std::size_t shape_numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int s : shape) {
        if (s <= 0) throw std::invalid_argument("non-positive dimension");
        n *= static_cast<std::size_t>(s);
    }
    return n;
}

Var make_var(std::vector<int> shape, std::vector<double> values, bool needs_grad) {
    if (shape_numel(shape) != values.size())
        throw std::invalid_argument("make_var: value count does not match shape");
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->val = std::move(values);
    n->needs_grad = needs_grad;
    n->id = g_next_id.fetch_add(1);
    return n;
}

Var make_zeros(std::vector<int> shape, bool needs_grad) {
    std::vector<double> v(shape_numel(shape), 0.0);
    return make_var(std::move(shape), std::move(v), needs_grad);
}

void backward(const Var& loss) {
    if (loss->size() != 1) throw std::invalid_argument("backward: loss must be scalar");
    // Nodes are created in topological order, so sorting the reachable set by
    // id descending gives a valid reverse schedule.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<Node*> stack{loss.get()};
    seen.insert(loss.get());
    while (!stack.empty()) {
        Node* n = stack.back();
        stack.pop_back();
        order.push_back(n);
        for (const auto& p : n->parents)
            if (p->needs_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
    std::sort(order.begin(), order.end(),
              [](Node* a, Node* b) { return a->id > b->id; });
    loss->ensure_grad();
    loss->grad[0] += 1.0;
    for (Node* n : order) {
        if (n->backprop && n->grad.size() == n->val.size()) n->backprop(*n);
    }
}

void zero_grad(const std::vector<Var>& params) {
    for (const auto& p : params) p->grad.assign(p->val.size(), 0.0);
}

// ---------------------------------------------------------------------------
// elementwise

Var add(const Var& a, const Var& b) {
    check_same_shape(a, b, "add");
    std::vector<double> v(a->size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a->val[i] + b->val[i];
    return make_node(a->shape, std::move(v), {a, b}, [a, b](Node& n) {
        if (a->needs_grad) {
            a->ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) a->grad[i] += n.grad[i];
        }
        if (b->needs_grad) {
            b->ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) b->grad[i] += n.grad[i];
        }
    });
}

Var sub(const Var& a, const Var& b) { return add(a, scale(b, -1.0)); }

Var mul(const Var& a, const Var& b) {
    check_same_shape(a, b, "mul");
    std::vector<double> v(a->size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a->val[i] * b->val[i];
    return make_node(a->shape, std::move(v), {a, b}, [a, b](Node& n) {
        if (a->needs_grad) {
            a->ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) a->grad[i] += n.grad[i] * b->val[i];
        }
        if (b->needs_grad) {
            b->ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) b->grad[i] += n.grad[i] * a->val[i];
        }
    });
}

Var scale(const Var& a, double s) {
    std::vector<double> v(a->size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a->val[i] * s;
    return make_node(a->shape, std::move(v), {a}, [a, s](Node& n) {
        if (!a->needs_grad) return;
        a->ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i) a->grad[i] += n.grad[i] * s;
    });
}

Var add_scalar(const Var& a, double s) {
    std::vector<double> v(a->size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a->val[i] + s;
    return make_node(a->shape, std::move(v), {a}, [a](Node& n) {
        if (!a->needs_grad) return;
        a->ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i) a->grad[i] += n.grad[i];
    });
}

Var relu(const Var& a) {
    std::vector<double> v(a->size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a->val[i] > 0.0 ? a->val[i] : 0.0;
    return make_node(a->shape, std::move(v), {a}, [a](Node& n) {
        if (!a->needs_grad) return;
        a->ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            if (a->val[i] > 0.0) a->grad[i] += n.grad[i];
    });
}

Var sigmoid(const Var& a) {
    std::vector<double> v(a->size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = 1.0 / (1.0 + std::exp(-a->val[i]));
    return make_node(a->shape, std::move(v), {a}, [a](Node& n) {
        if (!a->needs_grad) return;
        a->ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            double y = n.val[i];
            a->grad[i] += n.grad[i] * y * (1.0 - y);
        }
    });
}

Var sum(const Var& a) {
    double s = 0.0;
    for (double x : a->val) s += x;
    return make_node({1}, {s}, {a}, [a](Node& n) {
        if (!a->needs_grad) return;
        a->ensure_grad();
        for (std::size_t i = 0; i < a->grad.size(); ++i) a->grad[i] += n.grad[0];
    });
}

Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a->size())); }

// ---------------------------------------------------------------------------
// matrices

Var matmul(const Var& a, const Var& b) {
    if (a->shape.size() != 2 || b->shape.size() != 2 || a->shape[1] != b->shape[0])
        throw std::invalid_argument("matmul: incompatible shapes");
    const int n = a->shape[0], k = a->shape[1], m = b->shape[1];
    std::vector<double> v(static_cast<std::size_t>(n) * m, 0.0);
    for (int i = 0; i < n; ++i)
        for (int p = 0; p < k; ++p) {
            const double av = a->val[i * k + p];
            const double* brow = &b->val[p * m];
            double* orow = &v[i * m];
            for (int j = 0; j < m; ++j) orow[j] += av * brow[j];
        }
    return make_node({n, m}, std::move(v), {a, b}, [a, b, n, k, m](Node& node) {
        if (a->needs_grad) {
            a->ensure_grad();
            for (int i = 0; i < n; ++i)
                for (int p = 0; p < k; ++p) {
                    double acc = 0.0;
                    const double* brow = &b->val[p * m];
                    const double* grow = &node.grad[i * m];
                    for (int j = 0; j < m; ++j) acc += grow[j] * brow[j];
                    a->grad[i * k + p] += acc;
                }
        }
        if (b->needs_grad) {
            b->ensure_grad();
            for (int i = 0; i < n; ++i)
                for (int p = 0; p < k; ++p) {
                    const double av = a->val[i * k + p];
                    const double* grow = &node.grad[i * m];
                    double* brow = &b->grad[p * m];
                    for (int j = 0; j < m; ++j) brow[j] += av * grow[j];
                }
        }
    });
}

Var transpose(const Var& a) {
    if (a->shape.size() != 2) throw std::invalid_argument("transpose: expected matrix");
    const int n = a->shape[0], m = a->shape[1];
    std::vector<double> v(a->size());
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) v[j * n + i] = a->val[i * m + j];
    return make_node({m, n}, std::move(v), {a}, [a, n, m](Node& node) {
        if (!a->needs_grad) return;
        a->ensure_grad();
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < m; ++j) a->grad[i * m + j] += node.grad[j * n + i];
    });
}

Var linear(const Var& x, const Var& w, const Var& b) {
    if (b->shape.size() != 1 || b->shape[0] != w->shape[1])
        throw std::invalid_argument("linear: bias shape mismatch");
    Var y = matmul(x, w);
    const int n = y->shape[0], m = y->shape[1];
    std::vector<double> v(y->val);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) v[i * m + j] += b->val[j];
    return make_node(y->shape, std::move(v), {y, b}, [y, b, n, m](Node& node) {
        if (y->needs_grad) {
            y->ensure_grad();
            for (std::size_t i = 0; i < node.grad.size(); ++i) y->grad[i] += node.grad[i];
        }
        if (b->needs_grad) {
            b->ensure_grad();
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < m; ++j) b->grad[j] += node.grad[i * m + j];
        }
    });
}

Var softmax_rows(const Var& x) {
    if (x->shape.size() != 2) throw std::invalid_argument("softmax_rows: expected matrix");
    const int n = x->shape[0], m = x->shape[1];
    std::vector<double> v(x->size());
    for (int i = 0; i < n; ++i) {
        const double* row = &x->val[i * m];
        double mx = row[0];
        for (int j = 1; j < m; ++j) mx = std::max(mx, row[j]);
        if (!std::isfinite(mx)) throw std::domain_error("softmax_rows: non-finite logits");
        double z = 0.0;
        for (int j = 0; j < m; ++j) z += std::exp(row[j] - mx);
        for (int j = 0; j < m; ++j) v[i * m + j] = std::exp(row[j] - mx) / z;
    }
    return make_node(x->shape, std::move(v), {x}, [x, n, m](Node& node) {
        if (!x->needs_grad) return;
        x->ensure_grad();
        for (int i = 0; i < n; ++i) {
            const double* y = &node.val[i * m];
            const double* g = &node.grad[i * m];
            double dot = 0.0;
            for (int j = 0; j < m; ++j) dot += y[j] * g[j];
            for (int j = 0; j < m; ++j) x->grad[i * m + j] += y[j] * (g[j] - dot);
        }
    });
}

Var concat_cols(const Var& a, const Var& b) {
    if (a->shape.size() != 2 || b->shape.size() != 2 || a->shape[0] != b->shape[0])
        throw std::invalid_argument("concat_cols: row count mismatch");
    const int n = a->shape[0], ma = a->shape[1], mb = b->shape[1];
    std::vector<double> v(static_cast<std::size_t>(n) * (ma + mb));
    for (int i = 0; i < n; ++i) {
        std::copy_n(&a->val[i * ma], ma, &v[i * (ma + mb)]);
        std::copy_n(&b->val[i * mb], mb, &v[i * (ma + mb) + ma]);
    }
    return make_node({n, ma + mb}, std::move(v), {a, b}, [a, b, n, ma, mb](Node& node) {
        for (int i = 0; i < n; ++i) {
            const double* g = &node.grad[i * (ma + mb)];
            if (a->needs_grad) {
                a->ensure_grad();
                for (int j = 0; j < ma; ++j) a->grad[i * ma + j] += g[j];
            }
            if (b->needs_grad) {
                b->ensure_grad();
                for (int j = 0; j < mb; ++j) b->grad[i * mb + j] += g[ma + j];
            }
        }
    });
}

Var slice_cols(const Var& x, int begin, int count) {
    if (x->shape.size() != 2 || begin < 0 || begin + count > x->shape[1])
        throw std::invalid_argument("slice_cols: out of range");
    const int n = x->shape[0], m = x->shape[1];
    std::vector<double> v(static_cast<std::size_t>(n) * count);
    for (int i = 0; i < n; ++i)
        std::copy_n(&x->val[i * m + begin], count, &v[i * count]);
    return make_node({n, count}, std::move(v), {x}, [x, begin, count, n, m](Node& node) {
        if (!x->needs_grad) return;
        x->ensure_grad();
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < count; ++j)
                x->grad[i * m + begin + j] += node.grad[i * count + j];
    });
}

Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps) {
    if (x->shape.size() != 2 || gamma->shape != std::vector<int>{x->shape[1]} ||
        beta->shape != gamma->shape)
        throw std::invalid_argument("layer_norm_rows: shape mismatch");
    const int n = x->shape[0], m = x->shape[1];
    std::vector<double> v(x->size());
    auto xhat = std::make_shared<std::vector<double>>(x->size());
    auto inv_std = std::make_shared<std::vector<double>>(n);
    for (int i = 0; i < n; ++i) {
        const double* row = &x->val[i * m];
        double mu = 0.0;
        for (int j = 0; j < m; ++j) mu += row[j];
        mu /= m;
        double var = 0.0;
        for (int j = 0; j < m; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= m;
        double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[i] = is;
        for (int j = 0; j < m; ++j) {
            double xh = (row[j] - mu) * is;
            (*xhat)[i * m + j] = xh;
            v[i * m + j] = xh * gamma->val[j] + beta->val[j];
        }
    }
    return make_node(x->shape, std::move(v), {x, gamma, beta},
                     [x, gamma, beta, xhat, inv_std, n, m](Node& node) {
        for (int i = 0; i < n; ++i) {
            const double* g = &node.grad[i * m];
            const double* xh = &(*xhat)[i * m];
            if (gamma->needs_grad) {
                gamma->ensure_grad();
                for (int j = 0; j < m; ++j) gamma->grad[j] += g[j] * xh[j];
            }
            if (beta->needs_grad) {
                beta->ensure_grad();
                for (int j = 0; j < m; ++j) beta->grad[j] += g[j];
            }
            if (x->needs_grad) {
                x->ensure_grad();
                double gsum = 0.0, gxsum = 0.0;
                for (int j = 0; j < m; ++j) {
                    double gg = g[j] * gamma->val[j];
                    gsum += gg;
                    gxsum += gg * xh[j];
                }
                gsum /= m;
                gxsum /= m;
                for (int j = 0; j < m; ++j) {
                    double gg = g[j] * gamma->val[j];
                    x->grad[i * m + j] += (*inv_std)[i] * (gg - gsum - xh[j] * gxsum);
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// feature maps {C, D, W, H}

Var conv3d(const Var& x, const Var& w, const Var& b) {
    Dims4 in = as_feature(x, "conv3d");
    if (w->shape.size() != 5 || w->shape[1] != in.c)
        throw std::invalid_argument("conv3d: weight shape mismatch");
    const int co = w->shape[0], ci = w->shape[1];
    const int kd = w->shape[2], kw = w->shape[3], kh = w->shape[4];
    if (kd % 2 == 0 || kw % 2 == 0 || kh % 2 == 0)
        throw std::invalid_argument("conv3d: kernels must be odd for same padding");
    if (b->shape != std::vector<int>{co})
        throw std::invalid_argument("conv3d: bias shape mismatch");
    const int pd = kd / 2, pw = kw / 2, ph = kh / 2;
    const int D = in.d, W = in.w, H = in.h;
    const std::size_t plane = static_cast<std::size_t>(D) * W * H;
    std::vector<double> v(static_cast<std::size_t>(co) * plane);
    for (int oc = 0; oc < co; ++oc)
        std::fill_n(&v[oc * plane], plane, b->val[oc]);
    // Shift-and-accumulate: contiguous inner loops over the H axis.
    for (int oc = 0; oc < co; ++oc)
        for (int icx = 0; icx < ci; ++icx)
            for (int a = 0; a < kd; ++a)
                for (int c2 = 0; c2 < kw; ++c2)
                    for (int e = 0; e < kh; ++e) {
                        const double wv =
                            w->val[(((oc * ci + icx) * kd + a) * kw + c2) * kh + e];
                        if (wv == 0.0) continue;
                        const int dz = a - pd, dy = c2 - pw, dx = e - ph;
                        const int z0 = std::max(0, -dz), z1 = std::min(D, D - dz);
                        const int y0 = std::max(0, -dy), y1 = std::min(W, W - dy);
                        const int x0 = std::max(0, -dx), x1 = std::min(H, H - dx);
                        for (int z = z0; z < z1; ++z)
                            for (int y = y0; y < y1; ++y) {
                                double* out = &v[oc * plane + (static_cast<std::size_t>(z) * W + y) * H];
                                const double* src =
                                    &x->val[icx * plane +
                                            (static_cast<std::size_t>(z + dz) * W + (y + dy)) * H + dx];
                                for (int xx = x0; xx < x1; ++xx) out[xx] += wv * src[xx];
                            }
                    }
    return make_node({co, D, W, H}, std::move(v), {x, w, b},
                     [x, w, b, co, ci, kd, kw, kh, pd, pw, ph, D, W, H, plane](Node& node) {
        if (b->needs_grad) {
            b->ensure_grad();
            for (int oc = 0; oc < co; ++oc) {
                double acc = 0.0;
                const double* g = &node.grad[oc * plane];
                for (std::size_t i = 0; i < plane; ++i) acc += g[i];
                b->grad[oc] += acc;
            }
        }
        for (int oc = 0; oc < co; ++oc)
            for (int icx = 0; icx < ci; ++icx)
                for (int a = 0; a < kd; ++a)
                    for (int c2 = 0; c2 < kw; ++c2)
                        for (int e = 0; e < kh; ++e) {
                            const std::size_t widx =
                                (((static_cast<std::size_t>(oc) * ci + icx) * kd + a) * kw + c2) * kh + e;
                            const int dz = a - pd, dy = c2 - pw, dx = e - ph;
                            const int z0 = std::max(0, -dz), z1 = std::min(D, D - dz);
                            const int y0 = std::max(0, -dy), y1 = std::min(W, W - dy);
                            const int x0 = std::max(0, -dx), x1 = std::min(H, H - dx);
                            double wgrad = 0.0;
                            const double wv = w->val[widx];
                            const bool want_x = x->needs_grad;
                            if (want_x) x->ensure_grad();
                            for (int z = z0; z < z1; ++z)
                                for (int y = y0; y < y1; ++y) {
                                    const double* g =
                                        &node.grad[oc * plane + (static_cast<std::size_t>(z) * W + y) * H];
                                    const std::size_t soff =
                                        icx * plane +
                                        (static_cast<std::size_t>(z + dz) * W + (y + dy)) * H + dx;
                                    const double* src = &x->val[soff];
                                    for (int xx = x0; xx < x1; ++xx) wgrad += g[xx] * src[xx];
                                    if (want_x && wv != 0.0) {
                                        double* xg = &x->grad[soff];
                                        for (int xx = x0; xx < x1; ++xx) xg[xx] += wv * g[xx];
                                    }
                                }
                            if (w->needs_grad) {
                                w->ensure_grad();
                                w->grad[widx] += wgrad;
                            }
                        }
    });
}

Var max_pool(const Var& x, int fd, int fw, int fh) {
    Dims4 in = as_feature(x, "max_pool");
    if (in.d % fd || in.w % fw || in.h % fh)
        throw std::invalid_argument("max_pool: shape not divisible by pooling factor");
    const int C = in.c, D = in.d / fd, W = in.w / fw, H = in.h / fh;
    std::vector<double> v(static_cast<std::size_t>(C) * D * W * H);
    auto argmax = std::make_shared<std::vector<std::size_t>>(v.size());
    const std::size_t in_plane = static_cast<std::size_t>(in.d) * in.w * in.h;
    std::size_t o = 0;
    for (int c = 0; c < C; ++c)
        for (int z = 0; z < D; ++z)
            for (int y = 0; y < W; ++y)
                for (int xx = 0; xx < H; ++xx, ++o) {
                    double best = -1e300;
                    std::size_t bi = 0;
                    for (int a = 0; a < fd; ++a)
                        for (int bq = 0; bq < fw; ++bq)
                            for (int e = 0; e < fh; ++e) {
                                std::size_t idx = c * in_plane +
                                    ((static_cast<std::size_t>(z * fd + a) * in.w) + (y * fw + bq)) * in.h +
                                    (xx * fh + e);
                                if (x->val[idx] > best) { best = x->val[idx]; bi = idx; }
                            }
                    v[o] = best;
                    (*argmax)[o] = bi;
                }
    return make_node({C, D, W, H}, std::move(v), {x}, [x, argmax](Node& node) {
        if (!x->needs_grad) return;
        x->ensure_grad();
        for (std::size_t i = 0; i < node.grad.size(); ++i)
            x->grad[(*argmax)[i]] += node.grad[i];
    });
}

Var avg_pool(const Var& x, int fd, int fw, int fh) {
    Dims4 in = as_feature(x, "avg_pool");
    if (in.d % fd || in.w % fw || in.h % fh)
        throw std::invalid_argument("avg_pool: shape not divisible by pooling factor");
    const int C = in.c, D = in.d / fd, W = in.w / fw, H = in.h / fh;
    const double inv = 1.0 / (fd * fw * fh);
    std::vector<double> v(static_cast<std::size_t>(C) * D * W * H, 0.0);
    const std::size_t in_plane = static_cast<std::size_t>(in.d) * in.w * in.h;
    std::size_t o = 0;
    for (int c = 0; c < C; ++c)
        for (int z = 0; z < D; ++z)
            for (int y = 0; y < W; ++y)
                for (int xx = 0; xx < H; ++xx, ++o) {
                    double acc = 0.0;
                    for (int a = 0; a < fd; ++a)
                        for (int bq = 0; bq < fw; ++bq)
                            for (int e = 0; e < fh; ++e)
                                acc += x->val[c * in_plane +
                                    ((static_cast<std::size_t>(z * fd + a) * in.w) + (y * fw + bq)) * in.h +
                                    (xx * fh + e)];
                    v[o] = acc * inv;
                }
    const int iw = in.w, ih = in.h;
    return make_node({C, D, W, H}, std::move(v), {x},
                     [x, fd, fw, fh, C, D, W, H, in_plane, iw, ih, inv](Node& node) {
        if (!x->needs_grad) return;
        x->ensure_grad();
        std::size_t o = 0;
        for (int c = 0; c < C; ++c)
            for (int z = 0; z < D; ++z)
                for (int y = 0; y < W; ++y)
                    for (int xx = 0; xx < H; ++xx, ++o) {
                        const double g = node.grad[o] * inv;
                        for (int a = 0; a < fd; ++a)
                            for (int bq = 0; bq < fw; ++bq)
                                for (int e = 0; e < fh; ++e)
                                    x->grad[c * in_plane +
                                        ((static_cast<std::size_t>(z * fd + a) * iw) + (y * fw + bq)) * ih +
                                        (xx * fh + e)] += g;
                    }
    });
}

Var upsample_nearest(const Var& x, int fd, int fw, int fh) {
    Dims4 in = as_feature(x, "upsample_nearest");
    const int C = in.c, D = in.d * fd, W = in.w * fw, H = in.h * fh;
    std::vector<double> v(static_cast<std::size_t>(C) * D * W * H);
    const std::size_t in_plane = static_cast<std::size_t>(in.d) * in.w * in.h;
    std::size_t o = 0;
    for (int c = 0; c < C; ++c)
        for (int z = 0; z < D; ++z)
            for (int y = 0; y < W; ++y)
                for (int xx = 0; xx < H; ++xx, ++o)
                    v[o] = x->val[c * in_plane +
                                  ((static_cast<std::size_t>(z / fd) * in.w) + (y / fw)) * in.h + (xx / fh)];
    const int iw = in.w, ih = in.h;
    return make_node({C, D, W, H}, std::move(v), {x},
                     [x, fd, fw, fh, C, D, W, H, in_plane, iw, ih](Node& node) {
        if (!x->needs_grad) return;
        x->ensure_grad();
        std::size_t o = 0;
        for (int c = 0; c < C; ++c)
            for (int z = 0; z < D; ++z)
                for (int y = 0; y < W; ++y)
                    for (int xx = 0; xx < H; ++xx, ++o)
                        x->grad[c * in_plane +
                                ((static_cast<std::size_t>(z / fd) * iw) + (y / fw)) * ih + (xx / fh)] +=
                            node.grad[o];
    });
}

Var concat_channels(const Var& a, const Var& b) {
    Dims4 da = as_feature(a, "concat_channels");
    Dims4 db = as_feature(b, "concat_channels");
    if (da.d != db.d || da.w != db.w || da.h != db.h)
        throw std::invalid_argument("concat_channels: spatial shape mismatch");
    std::vector<double> v;
    v.reserve(a->size() + b->size());
    v.insert(v.end(), a->val.begin(), a->val.end());
    v.insert(v.end(), b->val.begin(), b->val.end());
    return make_node({da.c + db.c, da.d, da.w, da.h}, std::move(v), {a, b}, [a, b](Node& node) {
        const std::size_t na = a->size();
        if (a->needs_grad) {
            a->ensure_grad();
            for (std::size_t i = 0; i < na; ++i) a->grad[i] += node.grad[i];
        }
        if (b->needs_grad) {
            b->ensure_grad();
            for (std::size_t i = 0; i < b->size(); ++i) b->grad[i] += node.grad[na + i];
        }
    });
}

Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups, double eps) {
    Dims4 in = as_feature(x, "group_norm");
    if (in.c % groups)
        throw std::invalid_argument("group_norm: groups must divide channels");
    if (gamma->shape != std::vector<int>{in.c} || beta->shape != gamma->shape)
        throw std::invalid_argument("group_norm: affine shape mismatch");
    const int cpg = in.c / groups;
    const std::size_t plane = static_cast<std::size_t>(in.d) * in.w * in.h;
    const std::size_t gsize = static_cast<std::size_t>(cpg) * plane;
    std::vector<double> v(x->size());
    auto xhat = std::make_shared<std::vector<double>>(x->size());
    auto inv_std = std::make_shared<std::vector<double>>(groups);
    for (int g = 0; g < groups; ++g) {
        const double* src = &x->val[g * gsize];
        double mu = 0.0;
        for (std::size_t i = 0; i < gsize; ++i) mu += src[i];
        mu /= static_cast<double>(gsize);
        double var = 0.0;
        for (std::size_t i = 0; i < gsize; ++i) var += (src[i] - mu) * (src[i] - mu);
        var /= static_cast<double>(gsize);
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[g] = is;
        for (int c = 0; c < cpg; ++c) {
            const int ch = g * cpg + c;
            for (std::size_t i = 0; i < plane; ++i) {
                std::size_t idx = ch * plane + i;
                double xh = (x->val[idx] - mu) * is;
                (*xhat)[idx] = xh;
                v[idx] = xh * gamma->val[ch] + beta->val[ch];
            }
        }
    }
    const int C = in.c;
    return make_node(x->shape, std::move(v), {x, gamma, beta},
                     [x, gamma, beta, xhat, inv_std, groups, cpg, plane, gsize, C](Node& node) {
        if (gamma->needs_grad || beta->needs_grad) {
            gamma->ensure_grad();
            beta->ensure_grad();
            for (int ch = 0; ch < C; ++ch) {
                double dg = 0.0, db = 0.0;
                for (std::size_t i = 0; i < plane; ++i) {
                    std::size_t idx = ch * plane + i;
                    dg += node.grad[idx] * (*xhat)[idx];
                    db += node.grad[idx];
                }
                gamma->grad[ch] += dg;
                beta->grad[ch] += db;
            }
        }
        if (!x->needs_grad) return;
        x->ensure_grad();
        for (int g = 0; g < groups; ++g) {
            double gsum = 0.0, gxsum = 0.0;
            for (int c = 0; c < cpg; ++c) {
                const int ch = g * cpg + c;
                for (std::size_t i = 0; i < plane; ++i) {
                    std::size_t idx = ch * plane + i;
                    double gg = node.grad[idx] * gamma->val[ch];
                    gsum += gg;
                    gxsum += gg * (*xhat)[idx];
                }
            }
            gsum /= static_cast<double>(gsize);
            gxsum /= static_cast<double>(gsize);
            for (int c = 0; c < cpg; ++c) {
                const int ch = g * cpg + c;
                for (std::size_t i = 0; i < plane; ++i) {
                    std::size_t idx = ch * plane + i;
                    double gg = node.grad[idx] * gamma->val[ch];
                    x->grad[idx] += (*inv_std)[g] * (gg - gsum - (*xhat)[idx] * gxsum);
                }
            }
        }
    });
}

Var global_avg_pool(const Var& x) {
    Dims4 in = as_feature(x, "global_avg_pool");
    const std::size_t plane = static_cast<std::size_t>(in.d) * in.w * in.h;
    std::vector<double> v(in.c, 0.0);
    for (int c = 0; c < in.c; ++c) {
        double acc = 0.0;
        for (std::size_t i = 0; i < plane; ++i) acc += x->val[c * plane + i];
        v[c] = acc / static_cast<double>(plane);
    }
    const int C = in.c;
    return make_node({1, C}, std::move(v), {x}, [x, plane, C](Node& node) {
        if (!x->needs_grad) return;
        x->ensure_grad();
        for (int c = 0; c < C; ++c) {
            const double g = node.grad[c] / static_cast<double>(plane);
            for (std::size_t i = 0; i < plane; ++i) x->grad[c * plane + i] += g;
        }
    });
}

Var mul_channel_broadcast(const Var& x, const Var& g) {
    Dims4 dx = as_feature(x, "mul_channel_broadcast");
    Dims4 dg = as_feature(g, "mul_channel_broadcast");
    if (dg.c != 1 || dg.d != dx.d || dg.w != dx.w || dg.h != dx.h)
        throw std::invalid_argument("mul_channel_broadcast: shape mismatch");
    const std::size_t plane = static_cast<std::size_t>(dx.d) * dx.w * dx.h;
    std::vector<double> v(x->size());
    for (int c = 0; c < dx.c; ++c)
        for (std::size_t i = 0; i < plane; ++i)
            v[c * plane + i] = x->val[c * plane + i] * g->val[i];
    const int C = dx.c;
    return make_node(x->shape, std::move(v), {x, g}, [x, g, plane, C](Node& node) {
        if (x->needs_grad) {
            x->ensure_grad();
            for (int c = 0; c < C; ++c)
                for (std::size_t i = 0; i < plane; ++i)
                    x->grad[c * plane + i] += node.grad[c * plane + i] * g->val[i];
        }
        if (g->needs_grad) {
            g->ensure_grad();
            for (int c = 0; c < C; ++c)
                for (std::size_t i = 0; i < plane; ++i)
                    g->grad[i] += node.grad[c * plane + i] * x->val[c * plane + i];
        }
    });
}

Var flatten_spatial_to_rows(const Var& x) {
    Dims4 in = as_feature(x, "flatten_spatial_to_rows");
    const std::size_t plane = static_cast<std::size_t>(in.d) * in.w * in.h;
    std::vector<double> v(x->size());
    for (std::size_t p = 0; p < plane; ++p)
        for (int c = 0; c < in.c; ++c) v[p * in.c + c] = x->val[c * plane + p];
    const int C = in.c;
    return make_node({static_cast<int>(plane), C}, std::move(v), {x}, [x, plane, C](Node& node) {
        if (!x->needs_grad) return;
        x->ensure_grad();
        for (std::size_t p = 0; p < plane; ++p)
            for (int c = 0; c < C; ++c) x->grad[c * plane + p] += node.grad[p * C + c];
    });
}

Var rows_to_feature(const Var& x, int d, int w, int h) {
    if (x->shape.size() != 2)
        throw std::invalid_argument("rows_to_feature: expected matrix");
    const std::size_t plane = static_cast<std::size_t>(d) * w * h;
    if (static_cast<std::size_t>(x->shape[0]) != plane)
        throw std::invalid_argument("rows_to_feature: row count mismatch");
    const int C = x->shape[1];
    std::vector<double> v(x->size());
    for (std::size_t p = 0; p < plane; ++p)
        for (int c = 0; c < C; ++c) v[c * plane + p] = x->val[p * C + c];
    return make_node({C, d, w, h}, std::move(v), {x}, [x, plane, C](Node& node) {
        if (!x->needs_grad) return;
        x->ensure_grad();
        for (std::size_t p = 0; p < plane; ++p)
            for (int c = 0; c < C; ++c) x->grad[p * C + c] += node.grad[c * plane + p];
    });
}

// ---------------------------------------------------------------------------
// losses

Var dice_loss(const Var& pred, const std::vector<double>& target, double eps) {
    if (pred->shape.size() != 4)
        throw std::invalid_argument("dice_loss: expected {N,D,W,H} prediction");
    if (pred->size() != target.size())
        throw std::invalid_argument("dice_loss: target size mismatch");
    const int N = pred->shape[0];
    const std::size_t plane = pred->size() / N;
    auto inter = std::make_shared<std::vector<double>>(N);
    auto denom = std::make_shared<std::vector<double>>(N);
    double score = 0.0;
    for (int n = 0; n < N; ++n) {
        double I = 0.0, U = 0.0;
        const double* s = &pred->val[n * plane];
        const double* g = &target[n * plane];
        for (std::size_t i = 0; i < plane; ++i) {
            I += s[i] * g[i];
            U += s[i] * s[i] + g[i] * g[i];
        }
        (*inter)[n] = I;
        (*denom)[n] = U;
        score += (2.0 * I + eps) / (U + eps);
    }
    score /= N;
    auto tgt = std::make_shared<std::vector<double>>(target);
    return make_node({1}, {1.0 - score}, {pred},
                     [pred, tgt, inter, denom, eps, N, plane](Node& node) {
        if (!pred->needs_grad) return;
        pred->ensure_grad();
        const double go = node.grad[0];
        for (int n = 0; n < N; ++n) {
            const double I = (*inter)[n], U = (*denom)[n];
            const double* s = &pred->val[n * plane];
            const double* g = &(*tgt)[n * plane];
            double* d = &pred->grad[n * plane];
            const double du = U + eps;
            for (std::size_t i = 0; i < plane; ++i) {
                // d(1 - score)/ds = -(2 g du - (2I+eps) 2 s) / du^2 / N
                d[i] += -go * (2.0 * g[i] * du - (2.0 * I + eps) * 2.0 * s[i]) / (du * du * N);
            }
        }
    });
}

Var bce_loss(const Var& pred, const std::vector<double>& target, double clamp) {
    if (pred->size() != target.size())
        throw std::invalid_argument("bce_loss: target size mismatch");
    const std::size_t P = pred->size();
    auto tgt = std::make_shared<std::vector<double>>(target);
    double loss = 0.0;
    for (std::size_t i = 0; i < P; ++i) {
        double p = std::min(std::max(pred->val[i], clamp), 1.0 - clamp);
        loss -= target[i] * std::log(p) + (1.0 - target[i]) * std::log(1.0 - p);
    }
    loss /= static_cast<double>(P);
    return make_node({1}, {loss}, {pred}, [pred, tgt, clamp, P](Node& node) {
        if (!pred->needs_grad) return;
        pred->ensure_grad();
        const double go = node.grad[0] / static_cast<double>(P);
        for (std::size_t i = 0; i < P; ++i) {
            double raw = pred->val[i];
            if (raw <= clamp || raw >= 1.0 - clamp) continue;  // clamped region is flat
            pred->grad[i] += go * (-(*tgt)[i] / raw + (1.0 - (*tgt)[i]) / (1.0 - raw));
        }
    });
}

Var categorical_ce(const Var& probs, const std::vector<double>& onehot, double clamp) {
    if (probs->size() != onehot.size())
        throw std::invalid_argument("categorical_ce: target size mismatch");
    auto tgt = std::make_shared<std::vector<double>>(onehot);
    double loss = 0.0;
    for (std::size_t i = 0; i < probs->size(); ++i) {
        if (onehot[i] != 0.0)
            loss -= onehot[i] * std::log(std::max(probs->val[i], clamp));
    }
    return make_node({1}, {loss}, {probs}, [probs, tgt, clamp](Node& node) {
        if (!probs->needs_grad) return;
        probs->ensure_grad();
        for (std::size_t i = 0; i < probs->size(); ++i) {
            if ((*tgt)[i] == 0.0 || probs->val[i] <= clamp) continue;
            probs->grad[i] += node.grad[0] * (-(*tgt)[i] / probs->val[i]);
        }
    });
}

}  // namespace gazeatt::ag

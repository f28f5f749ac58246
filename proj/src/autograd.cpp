#include "sauge/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_set>

namespace sauge::ag {

Tensor& Node::grad_buffer() {
    if (grad.empty() && !value.empty()) grad = Tensor::zeros_like(value);
    return grad;
}

void Node::accumulate(const Tensor& g) {
    Tensor& buf = grad_buffer();
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
}

Var constant(Tensor value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    return n;
}

Var leaf(Tensor value, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return n;
}

namespace {

Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> fn) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = std::any_of(parents.begin(), parents.end(), [](const Var& p) { return p && p->requires_grad; });
    if (n->requires_grad) {
        n->parents = std::move(parents);
        n->backward_fn = std::move(fn);
    }
    return n;
}

bool wants(const Var& v) { return v && v->requires_grad; }

void require_chw(const Tensor& t, const char* op) {
    if (t.rank() != 3) throw DimensionError(std::string(op) + ": expected (C, H, W), got " + shape_str(t.shape()));
}

}  // namespace

void backward(std::span<const Var> roots, std::span<const Tensor> seeds) {
    if (roots.size() != seeds.size()) throw DimensionError("backward: roots/seeds count mismatch");
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    // Iterative post-order DFS.
    std::vector<std::pair<Node*, std::size_t>> stack;
    for (const Var& r : roots) {
        if (!r || !r->requires_grad || seen.count(r.get())) continue;
        stack.emplace_back(r.get(), 0);
        seen.insert(r.get());
        while (!stack.empty()) {
            auto& [node, idx] = stack.back();
            if (idx < node->parents.size()) {
                Node* p = node->parents[idx++].get();
                if (p && p->requires_grad && !seen.count(p)) {
                    seen.insert(p);
                    stack.emplace_back(p, 0);
                }
            } else {
                order.push_back(node);
                stack.pop_back();
            }
        }
    }
    for (std::size_t i = 0; i < roots.size(); ++i) {
        if (!roots[i] || !roots[i]->requires_grad) continue;
        require_same_shape(roots[i]->value, seeds[i], "backward seed");
        roots[i]->accumulate(seeds[i]);
    }
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
}

void backward(const Var& root, const Tensor& seed) {
    const Var roots[] = {root};
    const Tensor seeds[] = {seed};
    backward(roots, seeds);
}

Var add(const Var& a, const Var& b) {
    require_same_shape(a->value, b->value, "add");
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b->value[i];
    return make_node(std::move(out), {a, b}, [a, b](Node& self) {
        if (wants(a)) a->accumulate(self.grad);
        if (wants(b)) b->accumulate(self.grad);
    });
}

Var mul(const Var& a, const Var& b) {
    require_same_shape(a->value, b->value, "mul");
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b->value[i];
    return make_node(std::move(out), {a, b}, [a, b](Node& self) {
        const std::size_t n = self.grad.size();
        if (wants(a)) {
            Tensor& ga = a->grad_buffer();
            for (std::size_t i = 0; i < n; ++i) ga[i] += self.grad[i] * b->value[i];
        }
        if (wants(b)) {
            Tensor& gb = b->grad_buffer();
            for (std::size_t i = 0; i < n; ++i) gb[i] += self.grad[i] * a->value[i];
        }
    });
}

Var relu(const Var& x) {
    Tensor out = x->value;
    for (auto& v : out.values()) v = v < 0.0 ? 0.0 : v;  // NaN passes through
    return make_node(std::move(out), {x}, [x](Node& self) {
        Tensor& gx = x->grad_buffer();
        for (std::size_t i = 0; i < gx.size(); ++i)
            if (x->value[i] > 0.0) gx[i] += self.grad[i];
    });
}

Var gelu(const Var& x) {
    Tensor out = x->value;
    for (auto& v : out.values()) v = 0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2));
    return make_node(std::move(out), {x}, [x](Node& self) {
        Tensor& gx = x->grad_buffer();
        const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
        for (std::size_t i = 0; i < gx.size(); ++i) {
            const double v = x->value[i];
            const double cdf = 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2));
            const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
            gx[i] += self.grad[i] * (cdf + v * pdf);
        }
    });
}

Var sigmoid(const Var& x) {
    Tensor out = x->value;
    for (auto& v : out.values()) v = 1.0 / (1.0 + std::exp(-v));
    return make_node(std::move(out), {x}, [x](Node& self) {
        Tensor& gx = x->grad_buffer();
        for (std::size_t i = 0; i < gx.size(); ++i) {
            const double s = self.value[i];
            gx[i] += self.grad[i] * s * (1.0 - s);
        }
    });
}

Var conv2d(const Var& x, const Var& w, const Var& b) {
    const Tensor& xv = x->value;
    const Tensor& wv = w->value;
    require_chw(xv, "conv2d");
    if (wv.rank() != 4 || wv.dim(1) != xv.dim(0) || wv.dim(2) != wv.dim(3) || wv.dim(2) % 2 == 0)
        throw DimensionError("conv2d: weight " + shape_str(wv.shape()) + " incompatible with input " + shape_str(xv.shape()));
    const int ci_n = xv.dim(0), h = xv.dim(1), wd = xv.dim(2);
    const int co_n = wv.dim(0), k = wv.dim(2), pad = k / 2;
    if (b && (b->value.rank() != 1 || b->value.dim(0) != co_n)) throw DimensionError("conv2d: bias shape");

    Tensor out({co_n, h, wd});
    const std::size_t plane = static_cast<std::size_t>(h) * wd;
    for (int co = 0; co < co_n; ++co) {
        double* o = out.data() + co * plane;
        if (b) std::fill(o, o + plane, b->value[co]);
        for (int ci = 0; ci < ci_n; ++ci) {
            const double* in = xv.data() + ci * plane;
            for (int ky = 0; ky < k; ++ky) {
                const int dy = ky - pad;
                const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
                for (int kx = 0; kx < k; ++kx) {
                    const int dx = kx - pad;
                    const int x0 = std::max(0, -dx), x1 = std::min(wd, wd - dx);
                    const double wt = wv[((static_cast<std::size_t>(co) * ci_n + ci) * k + ky) * k + kx];
                    if (wt == 0.0) continue;
                    for (int y = y0; y < y1; ++y) {
                        double* orow = o + static_cast<std::size_t>(y) * wd;
                        const double* irow = in + static_cast<std::size_t>(y + dy) * wd + dx;
                        for (int xx = x0; xx < x1; ++xx) orow[xx] += wt * irow[xx];
                    }
                }
            }
        }
    }
    return make_node(std::move(out), {x, w, b}, [x, w, b, ci_n, co_n, h, wd, k, pad, plane](Node& self) {
        const Tensor& g = self.grad;
        const Tensor& xv = x->value;
        const Tensor& wv = w->value;
        if (wants(b)) {
            Tensor& gb = b->grad_buffer();
            for (int co = 0; co < co_n; ++co) {
                const double* gp = g.data() + co * plane;
                double s = 0.0;
                for (std::size_t i = 0; i < plane; ++i) s += gp[i];
                gb[co] += s;
            }
        }
        Tensor* gx = wants(x) ? &x->grad_buffer() : nullptr;
        Tensor* gw = wants(w) ? &w->grad_buffer() : nullptr;
        if (!gx && !gw) return;
        for (int co = 0; co < co_n; ++co) {
            const double* gp = g.data() + co * plane;
            for (int ci = 0; ci < ci_n; ++ci) {
                const double* in = xv.data() + ci * plane;
                double* gin = gx ? gx->data() + ci * plane : nullptr;
                for (int ky = 0; ky < k; ++ky) {
                    const int dy = ky - pad;
                    const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
                    for (int kx = 0; kx < k; ++kx) {
                        const int dx = kx - pad;
                        const int x0 = std::max(0, -dx), x1 = std::min(wd, wd - dx);
                        const std::size_t widx = ((static_cast<std::size_t>(co) * ci_n + ci) * k + ky) * k + kx;
                        const double wt = wv[widx];
                        double acc = 0.0;
                        for (int y = y0; y < y1; ++y) {
                            const double* grow = gp + static_cast<std::size_t>(y) * wd;
                            const std::size_t off = static_cast<std::size_t>(y + dy) * wd + dx;
                            if (gw) {
                                const double* irow = in + off;
                                for (int xx = x0; xx < x1; ++xx) acc += grow[xx] * irow[xx];
                            }
                            if (gin && wt != 0.0) {
                                double* girow = gin + off;
                                for (int xx = x0; xx < x1; ++xx) girow[xx] += wt * grow[xx];
                            }
                        }
                        if (gw) (*gw)[widx] += acc;
                    }
                }
            }
        }
    });
}

Var depthwise_conv2d(const Var& x, const Var& w, const Var& b) {
    const Tensor& xv = x->value;
    const Tensor& wv = w->value;
    require_chw(xv, "depthwise_conv2d");
    if (wv.rank() != 4 || wv.dim(0) != xv.dim(0) || wv.dim(1) != 1 || wv.dim(2) != wv.dim(3) || wv.dim(2) % 2 == 0)
        throw DimensionError("depthwise_conv2d: weight " + shape_str(wv.shape()) + " incompatible with input " +
                             shape_str(xv.shape()));
    const int c_n = xv.dim(0), h = xv.dim(1), wd = xv.dim(2), k = wv.dim(2), pad = k / 2;
    const std::size_t plane = static_cast<std::size_t>(h) * wd;
    Tensor out({c_n, h, wd});
    for (int c = 0; c < c_n; ++c) {
        double* o = out.data() + c * plane;
        const double* in = xv.data() + c * plane;
        if (b) std::fill(o, o + plane, b->value[c]);
        for (int ky = 0; ky < k; ++ky) {
            const int dy = ky - pad;
            const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
            for (int kx = 0; kx < k; ++kx) {
                const int dx = kx - pad;
                const int x0 = std::max(0, -dx), x1 = std::min(wd, wd - dx);
                const double wt = wv[(static_cast<std::size_t>(c) * k + ky) * k + kx];
                for (int y = y0; y < y1; ++y) {
                    double* orow = o + static_cast<std::size_t>(y) * wd;
                    const double* irow = in + static_cast<std::size_t>(y + dy) * wd + dx;
                    for (int xx = x0; xx < x1; ++xx) orow[xx] += wt * irow[xx];
                }
            }
        }
    }
    return make_node(std::move(out), {x, w, b}, [x, w, b, c_n, h, wd, k, pad, plane](Node& self) {
        const Tensor& g = self.grad;
        Tensor* gx = wants(x) ? &x->grad_buffer() : nullptr;
        Tensor* gw = wants(w) ? &w->grad_buffer() : nullptr;
        Tensor* gb = wants(b) ? &b->grad_buffer() : nullptr;
        for (int c = 0; c < c_n; ++c) {
            const double* gp = g.data() + c * plane;
            if (gb) {
                double s = 0.0;
                for (std::size_t i = 0; i < plane; ++i) s += gp[i];
                (*gb)[c] += s;
            }
            for (int ky = 0; ky < k; ++ky) {
                const int dy = ky - pad;
                const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
                for (int kx = 0; kx < k; ++kx) {
                    const int dx = kx - pad;
                    const int x0 = std::max(0, -dx), x1 = std::min(wd, wd - dx);
                    const std::size_t widx = (static_cast<std::size_t>(c) * k + ky) * k + kx;
                    const double wt = w->value[widx];
                    double acc = 0.0;
                    for (int y = y0; y < y1; ++y) {
                        const double* grow = gp + static_cast<std::size_t>(y) * wd;
                        const std::size_t off = c * plane + static_cast<std::size_t>(y + dy) * wd + dx;
                        if (gw) {
                            const double* irow = x->value.data() + off;
                            for (int xx = x0; xx < x1; ++xx) acc += grow[xx] * irow[xx];
                        }
                        if (gx) {
                            double* girow = gx->data() + off;
                            for (int xx = x0; xx < x1; ++xx) girow[xx] += wt * grow[xx];
                        }
                    }
                    if (gw) (*gw)[widx] += acc;
                }
            }
        }
    });
}

Var layer_norm_channels(const Var& x, const Var& gamma, const Var& beta, double eps) {
    const Tensor& xv = x->value;
    require_chw(xv, "layer_norm_channels");
    const int c_n = xv.dim(0);
    if (gamma->value.size() != static_cast<std::size_t>(c_n) || beta->value.size() != static_cast<std::size_t>(c_n))
        throw DimensionError("layer_norm_channels: affine parameters must have C entries");
    const std::size_t plane = static_cast<std::size_t>(xv.dim(1)) * xv.dim(2);
    Tensor out(xv.shape());
    auto xhat = std::make_shared<Tensor>(xv.shape());
    auto inv_std = std::make_shared<std::vector<double>>(plane);
    for (std::size_t p = 0; p < plane; ++p) {
        double mean = 0.0;
        for (int c = 0; c < c_n; ++c) mean += xv[c * plane + p];
        mean /= c_n;
        double var = 0.0;
        for (int c = 0; c < c_n; ++c) {
            const double d = xv[c * plane + p] - mean;
            var += d * d;
        }
        var /= c_n;
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[p] = is;
        for (int c = 0; c < c_n; ++c) {
            const double xh = (xv[c * plane + p] - mean) * is;
            (*xhat)[c * plane + p] = xh;
            out[c * plane + p] = gamma->value[c] * xh + beta->value[c];
        }
    }
    return make_node(std::move(out), {x, gamma, beta}, [x, gamma, beta, xhat, inv_std, c_n, plane](Node& self) {
        const Tensor& g = self.grad;
        if (wants(gamma) || wants(beta)) {
            Tensor& gg = gamma->grad_buffer();
            Tensor& gbt = beta->grad_buffer();
            for (int c = 0; c < c_n; ++c) {
                double sg = 0.0, sb = 0.0;
                for (std::size_t p = 0; p < plane; ++p) {
                    sg += g[c * plane + p] * (*xhat)[c * plane + p];
                    sb += g[c * plane + p];
                }
                if (wants(gamma)) gg[c] += sg;
                if (wants(beta)) gbt[c] += sb;
            }
        }
        if (!wants(x)) return;
        Tensor& gx = x->grad_buffer();
        for (std::size_t p = 0; p < plane; ++p) {
            double sum_d = 0.0, sum_dx = 0.0;
            for (int c = 0; c < c_n; ++c) {
                const double d = g[c * plane + p] * gamma->value[c];
                sum_d += d;
                sum_dx += d * (*xhat)[c * plane + p];
            }
            const double is = (*inv_std)[p];
            for (int c = 0; c < c_n; ++c) {
                const double d = g[c * plane + p] * gamma->value[c];
                gx[c * plane + p] += is * (d - sum_d / c_n - (*xhat)[c * plane + p] * sum_dx / c_n);
            }
        }
    });
}

Var concat_channels(std::span<const Var> parts) {
    if (parts.empty()) throw DimensionError("concat_channels: no inputs");
    const Tensor& first = parts.front()->value;
    require_chw(first, "concat_channels");
    int total = 0;
    for (const Var& p : parts) {
        require_chw(p->value, "concat_channels");
        if (p->value.dim(1) != first.dim(1) || p->value.dim(2) != first.dim(2))
            throw DimensionError("concat_channels: spatial mismatch " + shape_str(p->value.shape()) + " vs " +
                                 shape_str(first.shape()));
        total += p->value.dim(0);
    }
    Tensor out({total, first.dim(1), first.dim(2)});
    std::size_t off = 0;
    for (const Var& p : parts) {
        std::copy(p->value.values().begin(), p->value.values().end(), out.values().begin() + off);
        off += p->value.size();
    }
    std::vector<Var> parents(parts.begin(), parts.end());
    return make_node(std::move(out), parents, [parents](Node& self) {
        std::size_t off = 0;
        for (const Var& p : parents) {
            if (wants(p)) {
                Tensor& gp = p->grad_buffer();
                for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += self.grad[off + i];
            }
            off += p->value.size();
        }
    });
}

Var slice_channels(const Var& x, int begin, int count) {
    const Tensor& xv = x->value;
    require_chw(xv, "slice_channels");
    if (begin < 0 || count <= 0 || begin + count > xv.dim(0)) throw DimensionError("slice_channels: range out of bounds");
    const std::size_t plane = static_cast<std::size_t>(xv.dim(1)) * xv.dim(2);
    Tensor out({count, xv.dim(1), xv.dim(2)});
    std::copy(xv.data() + begin * plane, xv.data() + (begin + count) * plane, out.data());
    return make_node(std::move(out), {x}, [x, begin, plane](Node& self) {
        Tensor& gx = x->grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) gx[begin * plane + i] += self.grad[i];
    });
}

namespace {
struct Taps {
    std::vector<int> lo, hi;
    std::vector<double> frac;
};

Taps bilinear_taps(int in, int out) {
    Taps t;
    t.lo.resize(out);
    t.hi.resize(out);
    t.frac.resize(out);
    const double scale = static_cast<double>(in) / out;
    for (int i = 0; i < out; ++i) {
        double src = (i + 0.5) * scale - 0.5;
        if (src < 0.0) src = 0.0;
        int lo = static_cast<int>(std::floor(src));
        if (lo > in - 1) lo = in - 1;
        t.lo[i] = lo;
        t.hi[i] = std::min(lo + 1, in - 1);
        t.frac[i] = src - lo;
    }
    return t;
}
}  // namespace

Var resize_bilinear(const Var& x, int out_h, int out_w) {
    const Tensor& xv = x->value;
    require_chw(xv, "resize_bilinear");
    if (out_h <= 0 || out_w <= 0) throw DimensionError("resize_bilinear: non-positive target size");
    const int c_n = xv.dim(0), in_h = xv.dim(1), in_w = xv.dim(2);
    if (in_h == out_h && in_w == out_w) return x;
    auto ty = std::make_shared<Taps>(bilinear_taps(in_h, out_h));
    auto tx = std::make_shared<Taps>(bilinear_taps(in_w, out_w));
    Tensor out({c_n, out_h, out_w});
    for (int c = 0; c < c_n; ++c)
        for (int y = 0; y < out_h; ++y) {
            const double fy = ty->frac[y];
            for (int xx = 0; xx < out_w; ++xx) {
                const double fx = tx->frac[xx];
                const double v00 = xv.at(c, ty->lo[y], tx->lo[xx]), v01 = xv.at(c, ty->lo[y], tx->hi[xx]);
                const double v10 = xv.at(c, ty->hi[y], tx->lo[xx]), v11 = xv.at(c, ty->hi[y], tx->hi[xx]);
                out.at(c, y, xx) = (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11);
            }
        }
    return make_node(std::move(out), {x}, [x, ty, tx, c_n, out_h, out_w](Node& self) {
        Tensor& gx = x->grad_buffer();
        for (int c = 0; c < c_n; ++c)
            for (int y = 0; y < out_h; ++y) {
                const double fy = ty->frac[y];
                for (int xx = 0; xx < out_w; ++xx) {
                    const double fx = tx->frac[xx];
                    const double g = self.grad.at(c, y, xx);
                    gx.at(c, ty->lo[y], tx->lo[xx]) += g * (1 - fy) * (1 - fx);
                    gx.at(c, ty->lo[y], tx->hi[xx]) += g * (1 - fy) * fx;
                    gx.at(c, ty->hi[y], tx->lo[xx]) += g * fy * (1 - fx);
                    gx.at(c, ty->hi[y], tx->hi[xx]) += g * fy * fx;
                }
            }
    });
}

Var avg_pool(const Var& x, int k) {
    const Tensor& xv = x->value;
    require_chw(xv, "avg_pool");
    if (k <= 0 || xv.dim(1) % k || xv.dim(2) % k) throw DimensionError("avg_pool: extent not divisible by pool size");
    if (k == 1) return x;
    const int c_n = xv.dim(0), oh = xv.dim(1) / k, ow = xv.dim(2) / k;
    const double inv = 1.0 / (k * k);
    Tensor out({c_n, oh, ow});
    for (int c = 0; c < c_n; ++c)
        for (int y = 0; y < xv.dim(1); ++y)
            for (int xx = 0; xx < xv.dim(2); ++xx) out.at(c, y / k, xx / k) += inv * xv.at(c, y, xx);
    return make_node(std::move(out), {x}, [x, k, inv](Node& self) {
        Tensor& gx = x->grad_buffer();
        for (int c = 0; c < gx.dim(0); ++c)
            for (int y = 0; y < gx.dim(1); ++y)
                for (int xx = 0; xx < gx.dim(2); ++xx) gx.at(c, y, xx) += inv * self.grad.at(c, y / k, xx / k);
    });
}

Var attention(const Var& q, const Var& k, const Var& v, int heads) {
    const Tensor &qv = q->value, &kv = k->value, &vv = v->value;
    require_chw(qv, "attention");
    require_chw(kv, "attention");
    require_same_shape(kv, vv, "attention key/value");
    const int c_n = qv.dim(0);
    if (kv.dim(0) != c_n) throw DimensionError("attention: query/key channel mismatch");
    if (heads <= 0 || c_n % heads) throw DimensionError("attention: channels not divisible by head count");
    const int dh = c_n / heads;
    const int nq = qv.dim(1) * qv.dim(2), nk = kv.dim(1) * kv.dim(2);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    // Attention weights per head: heads x nq x nk.
    auto probs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(heads) * nq * nk);
    Tensor out(qv.shape());
    std::vector<double> row(nk);
    for (int hd = 0; hd < heads; ++hd) {
        const int c0 = hd * dh;
        for (int i = 0; i < nq; ++i) {
            double mx = -INFINITY;
            for (int j = 0; j < nk; ++j) {
                double s = 0.0;
                for (int c = 0; c < dh; ++c)
                    s += qv[static_cast<std::size_t>(c0 + c) * nq + i] * kv[static_cast<std::size_t>(c0 + c) * nk + j];
                row[j] = s * scale;
                mx = std::max(mx, row[j]);
            }
            double z = 0.0;
            for (int j = 0; j < nk; ++j) {
                row[j] = std::exp(row[j] - mx);
                z += row[j];
            }
            double* a = probs->data() + (static_cast<std::size_t>(hd) * nq + i) * nk;
            for (int j = 0; j < nk; ++j) a[j] = row[j] / z;
            for (int c = 0; c < dh; ++c) {
                const double* vr = vv.data() + static_cast<std::size_t>(c0 + c) * nk;
                double s = 0.0;
                for (int j = 0; j < nk; ++j) s += a[j] * vr[j];
                out[static_cast<std::size_t>(c0 + c) * nq + i] = s;
            }
        }
    }
    return make_node(std::move(out), {q, k, v}, [q, k, v, probs, heads, dh, nq, nk, scale](Node& self) {
        const Tensor& g = self.grad;
        const Tensor &qv = q->value, &kv = k->value, &vv = v->value;
        Tensor* gq = wants(q) ? &q->grad_buffer() : nullptr;
        Tensor* gk = wants(k) ? &k->grad_buffer() : nullptr;
        Tensor* gv = wants(v) ? &v->grad_buffer() : nullptr;
        std::vector<double> da(nk), ds(nk);
        for (int hd = 0; hd < heads; ++hd) {
            const int c0 = hd * dh;
            for (int i = 0; i < nq; ++i) {
                const double* a = probs->data() + (static_cast<std::size_t>(hd) * nq + i) * nk;
                // dA[j] = sum_c g[c,i] * V[c,j]; dV[c,j] += g[c,i] * A[j]
                std::fill(da.begin(), da.end(), 0.0);
                for (int c = 0; c < dh; ++c) {
                    const double gi = g[static_cast<std::size_t>(c0 + c) * nq + i];
                    if (gi == 0.0) continue;
                    const double* vr = vv.data() + static_cast<std::size_t>(c0 + c) * nk;
                    for (int j = 0; j < nk; ++j) da[j] += gi * vr[j];
                    if (gv) {
                        double* gvr = gv->data() + static_cast<std::size_t>(c0 + c) * nk;
                        for (int j = 0; j < nk; ++j) gvr[j] += gi * a[j];
                    }
                }
                double dot = 0.0;
                for (int j = 0; j < nk; ++j) dot += da[j] * a[j];
                for (int j = 0; j < nk; ++j) ds[j] = a[j] * (da[j] - dot) * scale;
                for (int c = 0; c < dh; ++c) {
                    const std::size_t qi = static_cast<std::size_t>(c0 + c) * nq + i;
                    const double* kr = kv.data() + static_cast<std::size_t>(c0 + c) * nk;
                    if (gq) {
                        double s = 0.0;
                        for (int j = 0; j < nk; ++j) s += ds[j] * kr[j];
                        (*gq)[qi] += s;
                    }
                    if (gk) {
                        const double qval = qv[qi];
                        double* gkr = gk->data() + static_cast<std::size_t>(c0 + c) * nk;
                        for (int j = 0; j < nk; ++j) gkr[j] += ds[j] * qval;
                    }
                }
            }
        }
    });
}

}  // namespace sauge::ag

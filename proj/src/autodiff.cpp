#include "rectseg/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "rectseg/types.hpp"

namespace rectseg {

const Tensor& Var::value() const { return tape_->node(id_).value; }
const Tensor& Var::grad() const { return tape_->node(id_).grad; }
bool Var::requires_grad() const { return tape_->node(id_).requires_grad; }

std::size_t Tape::push(Tensor value, std::vector<std::size_t> parents,
                       std::function<void(Tape&, std::size_t)> back) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = any_requires(parents);
    n.parents = std::move(parents);
    if (n.requires_grad) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
}

bool Tape::any_requires(const std::vector<std::size_t>& ids) const {
    for (auto id : ids)
        if (nodes_[id].requires_grad) return true;
    return false;
}

Tensor& Tape::grad_of(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) n.grad = Tensor(n.value.shape());
    return n.grad;
}

Var Tape::input(Tensor value, bool requires_grad) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

void Tape::backward(Var root) {
    if (root.tape_ != this) throw std::logic_error("backward: var belongs to another tape");
    Node& r = nodes_[root.id_];
    if (!r.requires_grad) throw std::logic_error("backward: root does not require grad");
    grad_of(root.id_);
    r.grad.fill(0.0);
    if (r.value.size() != 1) throw std::logic_error("backward: root must be a scalar");
    r.grad[0] = 1.0;
    for (std::size_t i = root.id_ + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.requires_grad || !n.back || n.grad.size() == 0) continue;
        n.back(*this, i);
    }
}

// ---- elementwise ----

Var Tape::add(Var a, Var b) {
    if (!a.value().same_shape(b.value()))
        throw std::invalid_argument("add: shape mismatch " + a.value().shape_str() + " vs " +
                                    b.value().shape_str());
    Tensor out = a.value() + b.value();
    std::size_t pa = a.id_, pb = b.id_;
    auto id = push(std::move(out), {pa, pb}, [pa, pb](Tape& t, std::size_t self) {
        const Tensor& g = t.node(self).grad;
        if (t.node(pa).requires_grad) t.grad_of(pa) += g;
        if (t.node(pb).requires_grad) t.grad_of(pb) += g;
    });
    return Var(this, id);
}

Var Tape::sub(Var a, Var b) {
    if (!a.value().same_shape(b.value()))
        throw std::invalid_argument("sub: shape mismatch " + a.value().shape_str() + " vs " +
                                    b.value().shape_str());
    Tensor out = a.value() - b.value();
    std::size_t pa = a.id_, pb = b.id_;
    auto id = push(std::move(out), {pa, pb}, [pa, pb](Tape& t, std::size_t self) {
        const Tensor& g = t.node(self).grad;
        if (t.node(pa).requires_grad) t.grad_of(pa) += g;
        if (t.node(pb).requires_grad) t.grad_of(pb) -= g;
    });
    return Var(this, id);
}

Var Tape::add_rowvec(Var m, Var v) {
    const Tensor& mv = m.value();
    const Tensor& vv = v.value();
    if (mv.rank() != 2 || vv.rank() != 1 || mv.dim(1) != vv.dim(0))
        throw std::invalid_argument("add_rowvec: incompatible shapes " + mv.shape_str() + ", " +
                                    vv.shape_str());
    Tensor out = mv;
    const std::size_t r = mv.dim(0), c = mv.dim(1);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out.at(i, j) += vv[j];
    std::size_t pm = m.id_, pv = v.id_;
    auto id = push(std::move(out), {pm, pv}, [pm, pv, r, c](Tape& t, std::size_t self) {
        const Tensor& g = t.node(self).grad;
        if (t.node(pm).requires_grad) t.grad_of(pm) += g;
        if (t.node(pv).requires_grad) {
            Tensor& gv = t.grad_of(pv);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) gv[j] += g.at(i, j);
        }
    });
    return Var(this, id);
}

// ---- linear algebra ----

Tensor Tape::k_matmul_nt(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1))
        throw std::invalid_argument("matmul_nt: incompatible shapes " + a.shape_str() + ", " +
                                    b.shape_str());
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t l = 0; l < k; ++l) s += a.at(i, l) * b.at(j, l);
            out.at(i, j) = s;
        }
    return out;
}

Var Tape::matmul_nt(Var a, Var b) {
    Tensor out = k_matmul_nt(a.value(), b.value());
    std::size_t pa = a.id_, pb = b.id_;
    auto id = push(std::move(out), {pa, pb}, [pa, pb](Tape& t, std::size_t self) {
        const Tensor& g = t.node(self).grad;  // (m x n)
        const Tensor& av = t.node(pa).value;  // (m x k)
        const Tensor& bv = t.node(pb).value;  // (n x k)
        const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(0);
        if (t.node(pa).requires_grad) {
            Tensor& ga = t.grad_of(pa);  // g . b
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t l = 0; l < k; ++l) {
                    double s = 0.0;
                    for (std::size_t j = 0; j < n; ++j) s += g.at(i, j) * bv.at(j, l);
                    ga.at(i, l) += s;
                }
        }
        if (t.node(pb).requires_grad) {
            Tensor& gb = t.grad_of(pb);  // g^T . a
            for (std::size_t j = 0; j < n; ++j)
                for (std::size_t l = 0; l < k; ++l) {
                    double s = 0.0;
                    for (std::size_t i = 0; i < m; ++i) s += g.at(i, j) * av.at(i, l);
                    gb.at(j, l) += s;
                }
        }
    });
    return Var(this, id);
}

Var Tape::mean_rows(Var m) {
    const Tensor& mv = m.value();
    if (mv.rank() != 2) throw std::invalid_argument("mean_rows: expected matrix");
    const std::size_t r = mv.dim(0), c = mv.dim(1);
    if (r == 0) throw std::invalid_argument("mean_rows: empty matrix");
    Tensor out({c});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j] += mv.at(i, j);
    for (std::size_t j = 0; j < c; ++j) out[j] /= static_cast<double>(r);
    std::size_t pm = m.id_;
    auto id = push(std::move(out), {pm}, [pm, r, c](Tape& t, std::size_t self) {
        const Tensor& g = t.node(self).grad;
        Tensor& gm = t.grad_of(pm);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) gm.at(i, j) += g[j] / static_cast<double>(r);
    });
    return Var(this, id);
}

Var Tape::l2_normalize(Var v, double eps) {
    const Tensor& vv = v.value();
    if (vv.rank() != 1) throw std::invalid_argument("l2_normalize: expected vector");
    const double norm = l2_norm(vv);
    const double denom = norm + eps;
    Tensor out = vv;
    out *= 1.0 / denom;
    std::size_t pv = v.id_;
    auto id = push(std::move(out), {pv}, [pv, norm, denom](Tape& t, std::size_t self) {
        const Tensor& g = t.node(self).grad;
        const Tensor& x = t.node(pv).value;
        Tensor& gv = t.grad_of(pv);
        // y = x / (|x| + eps); dy = g/denom - (g.x) x / (|x| denom^2)
        const double gx = dot(g, x);
        const double safe_norm = std::max(norm, 1e-12);
        for (std::size_t i = 0; i < x.size(); ++i)
            gv[i] += g[i] / denom - gx * x[i] / (safe_norm * denom * denom);
    });
    return Var(this, id);
}

Var Tape::stack_rows(const std::vector<Var>& rows) {
    if (rows.empty()) throw std::invalid_argument("stack_rows: no rows");
    const std::size_t d = rows[0].value().dim(0);
    Tensor out({rows.size(), d});
    std::vector<std::size_t> parents;
    parents.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const Tensor& rv = rows[i].value();
        if (rv.rank() != 1 || rv.dim(0) != d)
            throw std::invalid_argument("stack_rows: inconsistent row dims");
        for (std::size_t j = 0; j < d; ++j) out.at(i, j) = rv[j];
        parents.push_back(rows[i].id_);
    }
    auto ps = parents;
    auto id = push(std::move(out), std::move(parents), [ps, d](Tape& t, std::size_t self) {
        const Tensor& g = t.node(self).grad;
        for (std::size_t i = 0; i < ps.size(); ++i) {
            if (!t.node(ps[i]).requires_grad) continue;
            Tensor& gr = t.grad_of(ps[i]);
            for (std::size_t j = 0; j < d; ++j) gr[j] += g.at(i, j);
        }
    });
    return Var(this, id);
}

// ---- layout ----

Var Tape::nc_to_chw(Var m, const PatchGrid& grid) {
    const Tensor& mv = m.value();
    if (mv.rank() != 2 || mv.dim(0) != static_cast<std::size_t>(grid.count()))
        throw std::invalid_argument("nc_to_chw: patch count mismatch, expected " +
                                    std::to_string(grid.count()) + " rows, got " +
                                    std::to_string(mv.dim(0)));
    const std::size_t c = mv.dim(1), h = grid.rows, w = grid.cols;
    Tensor out({c, h, w});
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j)
            for (std::size_t k = 0; k < c; ++k) out.at(k, i, j) = mv.at(i * w + j, k);
    std::size_t pm = m.id_;
    auto id = push(std::move(out), {pm}, [pm, c, h, w](Tape& t, std::size_t self) {
        const Tensor& g = t.node(self).grad;
        Tensor& gm = t.grad_of(pm);
        for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < w; ++j)
                for (std::size_t k = 0; k < c; ++k) gm.at(i * w + j, k) += g.at(k, i, j);
    });
    return Var(this, id);
}

Var Tape::chw_to_nc(Var x) {
    const Tensor& xv = x.value();
    if (xv.rank() != 3) throw std::invalid_argument("chw_to_nc: expected C x H x W");
    const std::size_t c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
    Tensor out({h * w, c});
    for (std::size_t k = 0; k < c; ++k)
        for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < w; ++j) out.at(i * w + j, k) = xv.at(k, i, j);
    std::size_t px = x.id_;
    auto id = push(std::move(out), {px}, [px, c, h, w](Tape& t, std::size_t self) {
        const Tensor& g = t.node(self).grad;
        Tensor& gx = t.grad_of(px);
        for (std::size_t k = 0; k < c; ++k)
            for (std::size_t i = 0; i < h; ++i)
                for (std::size_t j = 0; j < w; ++j) gx.at(k, i, j) += g.at(i * w + j, k);
    });
    return Var(this, id);
}

Var Tape::concat_channels(Var a, Var b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.rank() != 3 || bv.rank() != 3 || av.dim(1) != bv.dim(1) || av.dim(2) != bv.dim(2))
        throw std::invalid_argument("concat_channels: spatial shape mismatch");
    const std::size_t ca = av.dim(0), cb = bv.dim(0), h = av.dim(1), w = av.dim(2);
    Tensor out({ca + cb, h, w});
    std::copy(av.data(), av.data() + av.size(), out.data());
    std::copy(bv.data(), bv.data() + bv.size(), out.data() + av.size());
    std::size_t pa = a.id_, pb = b.id_;
    auto id = push(std::move(out), {pa, pb}, [pa, pb, ca, cb, h, w](Tape& t, std::size_t self) {
        const Tensor& g = t.node(self).grad;
        const std::size_t plane = h * w;
        if (t.node(pa).requires_grad) {
            Tensor& ga = t.grad_of(pa);
            for (std::size_t i = 0; i < ca * plane; ++i) ga[i] += g[i];
        }
        if (t.node(pb).requires_grad) {
            Tensor& gb = t.grad_of(pb);
            for (std::size_t i = 0; i < cb * plane; ++i) gb[i] += g[ca * plane + i];
        }
    });
    return Var(this, id);
}

// ---- convolution ----

Tensor Tape::k_conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int pad) {
    if (x.rank() != 3 || w.rank() != 4 || b.rank() != 1)
        throw std::invalid_argument("conv2d: bad ranks");
    if (x.dim(0) != w.dim(1) || w.dim(0) != b.dim(0))
        throw std::invalid_argument("conv2d: channel mismatch x" + x.shape_str() + " w" +
                                    w.shape_str());
    const int cin = static_cast<int>(x.dim(0)), h = static_cast<int>(x.dim(1)),
              wid = static_cast<int>(x.dim(2));
    const int cout = static_cast<int>(w.dim(0)), kh = static_cast<int>(w.dim(2)),
              kw = static_cast<int>(w.dim(3));
    Tensor out({static_cast<std::size_t>(cout), static_cast<std::size_t>(h),
                static_cast<std::size_t>(wid)});
    auto widx = [&](int co, int ci, int di, int dj) {
        return ((static_cast<std::size_t>(co) * cin + ci) * kh + di) * kw + dj;
    };
    for (int co = 0; co < cout; ++co)
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < wid; ++j) {
                double s = b[co];
                for (int ci = 0; ci < cin; ++ci)
                    for (int di = 0; di < kh; ++di) {
                        const int ii = i + di - pad;
                        if (ii < 0 || ii >= h) continue;
                        for (int dj = 0; dj < kw; ++dj) {
                            const int jj = j + dj - pad;
                            if (jj < 0 || jj >= wid) continue;
                            s += x.at(ci, ii, jj) * w[widx(co, ci, di, dj)];
                        }
                    }
                out.at(co, i, j) = s;
            }
    return out;
}

Var Tape::conv2d(Var x, Var w, Var b, int pad) {
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    const Tensor& bv = b.value();
    if (xv.rank() != 3 || wv.rank() != 4 || bv.rank() != 1)
        throw std::invalid_argument("conv2d: bad ranks");
    if (xv.dim(0) != wv.dim(1) || wv.dim(0) != bv.dim(0))
        throw std::invalid_argument("conv2d: channel mismatch x" + xv.shape_str() + " w" +
                                    wv.shape_str());
    const int cin = static_cast<int>(xv.dim(0)), h = static_cast<int>(xv.dim(1)),
              wid = static_cast<int>(xv.dim(2));
    const int cout = static_cast<int>(wv.dim(0)), kh = static_cast<int>(wv.dim(2)),
              kw = static_cast<int>(wv.dim(3));
    Tensor out({static_cast<std::size_t>(cout), static_cast<std::size_t>(h),
                static_cast<std::size_t>(wid)});
    auto widx = [&](int co, int ci, int di, int dj) {
        return ((static_cast<std::size_t>(co) * cin + ci) * kh + di) * kw + dj;
    };
    for (int co = 0; co < cout; ++co)
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < wid; ++j) {
                double s = bv[co];
                for (int ci = 0; ci < cin; ++ci)
                    for (int di = 0; di < kh; ++di) {
                        const int ii = i + di - pad;
                        if (ii < 0 || ii >= h) continue;
                        for (int dj = 0; dj < kw; ++dj) {
                            const int jj = j + dj - pad;
                            if (jj < 0 || jj >= wid) continue;
                            s += xv.at(ci, ii, jj) * wv[widx(co, ci, di, dj)];
                        }
                    }
                out.at(co, i, j) = s;
            }
    std::size_t px = x.id_, pw = w.id_, pb = b.id_;
    auto id = push(std::move(out), {px, pw, pb},
                   [px, pw, pb, cin, h, wid, cout, kh, kw, pad](Tape& t, std::size_t self) {
                       const Tensor& g = t.node(self).grad;
                       const Tensor& xv = t.node(px).value;
                       const Tensor& wv = t.node(pw).value;
                       const bool need_x = t.node(px).requires_grad;
                       const bool need_w = t.node(pw).requires_grad;
                       const bool need_b = t.node(pb).requires_grad;
                       Tensor* gx = need_x ? &t.grad_of(px) : nullptr;
                       Tensor* gw = need_w ? &t.grad_of(pw) : nullptr;
                       Tensor* gb = need_b ? &t.grad_of(pb) : nullptr;
                       auto widx = [cin, kh, kw](int co, int ci, int di, int dj) {
                           return ((static_cast<std::size_t>(co) * cin + ci) * kh + di) * kw + dj;
                       };
                       for (int co = 0; co < cout; ++co)
                           for (int i = 0; i < h; ++i)
                               for (int j = 0; j < wid; ++j) {
                                   const double go = g.at(co, i, j);
                                   if (go == 0.0) continue;
                                   if (need_b) (*gb)[co] += go;
                                   for (int ci = 0; ci < cin; ++ci)
                                       for (int di = 0; di < kh; ++di) {
                                           const int ii = i + di - pad;
                                           if (ii < 0 || ii >= h) continue;
                                           for (int dj = 0; dj < kw; ++dj) {
                                               const int jj = j + dj - pad;
                                               if (jj < 0 || jj >= wid) continue;
                                               if (need_w)
                                                   (*gw)[widx(co, ci, di, dj)] +=
                                                       go * xv.at(ci, ii, jj);
                                               if (need_x)
                                                   gx->at(ci, ii, jj) +=
                                                       go * wv[widx(co, ci, di, dj)];
                                           }
                                       }
                               }
                   });
    return Var(this, id);
}

// ---- normalization ----

Var Tape::batchnorm(Var x, Var gamma, Var beta, BatchNormStats* stats, bool use_batch_stats,
                    bool update_running, double momentum, double eps) {
    const Tensor& xv = x.value();
    if (xv.rank() != 3) throw std::invalid_argument("batchnorm: expected C x H x W");
    const std::size_t c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
    const std::size_t plane = h * w;
    if (gamma.value().dim(0) != c || beta.value().dim(0) != c)
        throw std::invalid_argument("batchnorm: affine dim mismatch");

    Tensor mean({c}), var({c});
    if (use_batch_stats) {
        for (std::size_t k = 0; k < c; ++k) {
            double m = 0.0;
            for (std::size_t i = 0; i < plane; ++i) m += xv[k * plane + i];
            m /= static_cast<double>(plane);
            double v = 0.0;
            for (std::size_t i = 0; i < plane; ++i) {
                const double d = xv[k * plane + i] - m;
                v += d * d;
            }
            v /= static_cast<double>(plane);
            mean[k] = m;
            var[k] = v;
        }
        if (update_running && stats) {
            for (std::size_t k = 0; k < c; ++k) {
                stats->running_mean[k] = (1.0 - momentum) * stats->running_mean[k] + momentum * mean[k];
                stats->running_var[k] = (1.0 - momentum) * stats->running_var[k] + momentum * var[k];
            }
        }
    } else {
        if (!stats) throw std::invalid_argument("batchnorm: eval mode needs running stats");
        mean = stats->running_mean;
        var = stats->running_var;
    }

    Tensor out(xv.shape());
    Tensor xhat(xv.shape());
    for (std::size_t k = 0; k < c; ++k) {
        const double inv_std = 1.0 / std::sqrt(var[k] + eps);
        const double gk = gamma.value()[k], bk = beta.value()[k];
        for (std::size_t i = 0; i < plane; ++i) {
            const double xc = (xv[k * plane + i] - mean[k]) * inv_std;
            xhat[k * plane + i] = xc;
            out[k * plane + i] = gk * xc + bk;
        }
    }

    std::size_t px = x.id_, pg = gamma.id_, pbt = beta.id_;
    auto id = push(std::move(out), {px, pg, pbt},
                   [px, pg, pbt, c, plane, var, xhat, use_batch_stats, eps](Tape& t,
                                                                            std::size_t self) {
                       const Tensor& g = t.node(self).grad;
                       const Tensor& gammav = t.node(pg).value;
                       if (t.node(pg).requires_grad) {
                           Tensor& gg = t.grad_of(pg);
                           for (std::size_t k = 0; k < c; ++k)
                               for (std::size_t i = 0; i < plane; ++i)
                                   gg[k] += g[k * plane + i] * xhat[k * plane + i];
                       }
                       if (t.node(pbt).requires_grad) {
                           Tensor& gb = t.grad_of(pbt);
                           for (std::size_t k = 0; k < c; ++k)
                               for (std::size_t i = 0; i < plane; ++i) gb[k] += g[k * plane + i];
                       }
                       if (t.node(px).requires_grad) {
                           Tensor& gx = t.grad_of(px);
                           const double n = static_cast<double>(plane);
                           for (std::size_t k = 0; k < c; ++k) {
                               const double inv_std = 1.0 / std::sqrt(var[k] + eps);
                               if (!use_batch_stats) {
                                   // Fixed statistics: plain affine map.
                                   for (std::size_t i = 0; i < plane; ++i)
                                       gx[k * plane + i] += g[k * plane + i] * gammav[k] * inv_std;
                                   continue;
                               }
                               double sum_g = 0.0, sum_gx = 0.0;
                               for (std::size_t i = 0; i < plane; ++i) {
                                   sum_g += g[k * plane + i];
                                   sum_gx += g[k * plane + i] * xhat[k * plane + i];
                               }
                               for (std::size_t i = 0; i < plane; ++i) {
                                   const double gi = g[k * plane + i];
                                   const double xh = xhat[k * plane + i];
                                   gx[k * plane + i] +=
                                       gammav[k] * inv_std * (gi - sum_g / n - xh * sum_gx / n);
                               }
                           }
                       }
                   });
    return Var(this, id);
}

// ---- softmax family ----

Tensor Tape::k_softmax_rows(const Tensor& x, double tau) {
    if (x.rank() != 2) throw std::invalid_argument("softmax_rows: expected matrix");
    if (tau <= 0.0) throw std::invalid_argument("softmax_rows: temperature must be positive");
    const std::size_t r = x.dim(0), c = x.dim(1);
    Tensor out({r, c});
    for (std::size_t i = 0; i < r; ++i) {
        double mx = -1e300;
        for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, x.at(i, j) / tau);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            const double e = std::exp(x.at(i, j) / tau - mx);
            out.at(i, j) = e;
            z += e;
        }
        for (std::size_t j = 0; j < c; ++j) out.at(i, j) /= z;
    }
    return out;
}

Var Tape::softmax_rows(Var x, double tau) {
    Tensor out = k_softmax_rows(x.value(), tau);
    const std::size_t r = out.dim(0), c = out.dim(1);
    std::size_t px = x.id_;
    Tensor y = out;
    auto id = push(std::move(out), {px}, [px, y, r, c, tau](Tape& t, std::size_t self) {
        const Tensor& g = t.node(self).grad;
        Tensor& gx = t.grad_of(px);
        for (std::size_t i = 0; i < r; ++i) {
            double gy = 0.0;
            for (std::size_t j = 0; j < c; ++j) gy += g.at(i, j) * y.at(i, j);
            for (std::size_t j = 0; j < c; ++j)
                gx.at(i, j) += y.at(i, j) * (g.at(i, j) - gy) / tau;
        }
    });
    return Var(this, id);
}

Tensor Tape::k_onehot_rows(const Tensor& soft) {
    const std::size_t r = soft.dim(0), c = soft.dim(1);
    Tensor out({r, c});
    for (std::size_t i = 0; i < r; ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < c; ++j)
            if (soft.at(i, j) > soft.at(i, best)) best = j;  // ties -> lowest index
        out.at(i, best) = 1.0;
    }
    return out;
}

Var Tape::straight_through_onehot(Var soft) {
    Tensor out = k_onehot_rows(soft.value());
    std::size_t ps = soft.id_;
    auto id = push(std::move(out), {ps}, [ps](Tape& t, std::size_t self) {
        t.grad_of(ps) += t.node(self).grad;
    });
    return Var(this, id);
}

// ---- pipeline-specific fused ops ----

Var Tape::masked_pool(Var mask, const Tensor& z, double eps) {
    const Tensor& mv = mask.value();
    if (mv.rank() != 2 || z.rank() != 2 || mv.dim(0) != z.dim(0))
        throw std::invalid_argument("masked_pool: shape mismatch mask" + mv.shape_str() + " z" +
                                    z.shape_str());
    const std::size_t n = mv.dim(0), c = mv.dim(1), d = z.dim(1);
    Tensor sums({c});
    Tensor out({c, d});
    for (std::size_t k = 0; k < c; ++k) {
        for (std::size_t i = 0; i < n; ++i) sums[k] += mv.at(i, k);
        const double denom = sums[k] + eps;
        for (std::size_t j = 0; j < d; ++j) {
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) s += mv.at(i, k) * z.at(i, j);
            out.at(k, j) = s / denom;
        }
    }
    std::size_t pm = mask.id_;
    Tensor pooled = out;
    auto id = push(std::move(out), {pm},
                   [pm, z, sums, pooled, n, c, d, eps](Tape& t, std::size_t self) {
                       const Tensor& g = t.node(self).grad;  // (c x d)
                       Tensor& gm = t.grad_of(pm);
                       // d(out[k])/d(mask[i,k]) = (z[i] - out[k]) / (sum_k + eps)
                       for (std::size_t k = 0; k < c; ++k) {
                           const double denom = sums[k] + eps;
                           for (std::size_t i = 0; i < n; ++i) {
                               double s = 0.0;
                               for (std::size_t j = 0; j < d; ++j)
                                   s += g.at(k, j) * (z.at(i, j) - pooled.at(k, j));
                               gm.at(i, k) += s / denom;
                           }
                       }
                   });
    return Var(this, id);
}

Var Tape::cosine_rows(Var a, Var b, double eps) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(1))
        throw std::invalid_argument("cosine_rows: shape mismatch " + av.shape_str() + ", " +
                                    bv.shape_str());
    const std::size_t ka = av.dim(0), kb = bv.dim(0), d = av.dim(1);
    std::vector<double> na(ka), nb(kb);
    for (std::size_t i = 0; i < ka; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += av.at(i, j) * av.at(i, j);
        na[i] = std::sqrt(s);
    }
    for (std::size_t i = 0; i < kb; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += bv.at(i, j) * bv.at(i, j);
        nb[i] = std::sqrt(s);
    }
    Tensor out({ka, kb});
    for (std::size_t i = 0; i < ka; ++i)
        for (std::size_t j = 0; j < kb; ++j) {
            double dp = 0.0;
            for (std::size_t l = 0; l < d; ++l) dp += av.at(i, l) * bv.at(j, l);
            out.at(i, j) = dp / (na[i] * nb[j] + eps);
        }
    std::size_t pa = a.id_, pb = b.id_;
    Tensor s_val = out;
    auto id = push(std::move(out), {pa, pb},
                   [pa, pb, na, nb, s_val, ka, kb, d, eps](Tape& t, std::size_t self) {
                       const Tensor& g = t.node(self).grad;
                       const Tensor& av = t.node(pa).value;
                       const Tensor& bv = t.node(pb).value;
                       // S = a.b / (|a||b| + eps)
                       // dS/da = b/denom - S |b| a / (|a| denom)
                       if (t.node(pa).requires_grad) {
                           Tensor& ga = t.grad_of(pa);
                           for (std::size_t i = 0; i < ka; ++i) {
                               const double nai = std::max(na[i], 1e-12);
                               for (std::size_t j = 0; j < kb; ++j) {
                                   const double denom = na[i] * nb[j] + eps;
                                   const double gij = g.at(i, j);
                                   if (gij == 0.0) continue;
                                   const double sij = s_val.at(i, j);
                                   for (std::size_t l = 0; l < d; ++l)
                                       ga.at(i, l) += gij * (bv.at(j, l) / denom -
                                                             sij * nb[j] * av.at(i, l) /
                                                                 (nai * denom));
                               }
                           }
                       }
                       if (t.node(pb).requires_grad) {
                           Tensor& gb = t.grad_of(pb);
                           for (std::size_t j = 0; j < kb; ++j) {
                               const double nbj = std::max(nb[j], 1e-12);
                               for (std::size_t i = 0; i < ka; ++i) {
                                   const double denom = na[i] * nb[j] + eps;
                                   const double gij = g.at(i, j);
                                   if (gij == 0.0) continue;
                                   const double sij = s_val.at(i, j);
                                   for (std::size_t l = 0; l < d; ++l)
                                       gb.at(j, l) += gij * (av.at(i, l) / denom -
                                                             sij * na[i] * bv.at(j, l) /
                                                                 (nbj * denom));
                               }
                           }
                       }
                   });
    return Var(this, id);
}

Var Tape::contrastive(Var s, const std::vector<int>& anchors, double tau) {
    const Tensor& sv = s.value();
    if (sv.rank() != 2) throw std::invalid_argument("contrastive: expected matrix");
    if (anchors.empty()) throw std::invalid_argument("contrastive: empty hypothesis");
    if (tau <= 0.0) throw std::invalid_argument("contrastive: temperature must be positive");
    const std::size_t c = sv.dim(1);
    for (int k : anchors)
        if (k < 0 || static_cast<std::size_t>(k) >= sv.dim(0) ||
            static_cast<std::size_t>(k) >= c)
            throw std::invalid_argument("contrastive: anchor index out of range");
    double loss = 0.0;
    for (int k : anchors) {
        // log-sum-exp stabilized
        double mx = -1e300;
        for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, sv.at(k, j) / tau);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) z += std::exp(sv.at(k, j) / tau - mx);
        loss -= sv.at(k, k) / tau - (mx + std::log(z));
    }
    loss /= static_cast<double>(anchors.size());
    std::size_t ps = s.id_;
    auto id = push(Tensor({1}, {loss}), {ps}, [ps, anchors, tau, c](Tape& t, std::size_t self) {
        const double g0 = t.node(self).grad[0];
        const Tensor& sv = t.node(ps).value;
        Tensor& gs = t.grad_of(ps);
        const double scale = g0 / (static_cast<double>(anchors.size()) * tau);
        for (int k : anchors) {
            double mx = -1e300;
            for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, sv.at(k, j) / tau);
            double z = 0.0;
            for (std::size_t j = 0; j < c; ++j) z += std::exp(sv.at(k, j) / tau - mx);
            for (std::size_t j = 0; j < c; ++j) {
                const double p = std::exp(sv.at(k, j) / tau - mx) / z;
                gs.at(k, j) += scale * (p - (static_cast<std::size_t>(k) == j ? 1.0 : 0.0));
            }
        }
    });
    return Var(this, id);
}

}  // namespace rectseg

#include "plantcount/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace plantcount::ad {

namespace {

double sigmoid(double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.data.size() != b.data.size()) throw InvalidArgument(std::string(op) + ": shape mismatch");
}

} // namespace

VarId Tape::make_node(Tensor value, std::vector<VarId> inputs, std::function<void(Tape&)> bw) {
    Node n;
    n.value = std::move(value);
    n.inputs = std::move(inputs);
    n.requires_grad = any_requires(n.inputs);
    if (n.requires_grad) n.backward = std::move(bw);
    nodes_.push_back(std::move(n));
    return VarId(nodes_.size() - 1);
}

void Tape::set_backward(VarId id, std::function<void(Tape&)> bw) {
    if (nodes_[id].requires_grad) nodes_[id].backward = std::move(bw);
}

bool Tape::any_requires(const std::vector<VarId>& ids) const {
    for (VarId id : ids)
        if (id != kNoVar && nodes_[id].requires_grad) return true;
    return false;
}

Tensor& Tape::grad_buffer(VarId id) {
    Node& n = nodes_[id];
    if (n.grad.data.size() != n.value.data.size()) n.grad = Tensor(n.value.shape);
    return n.grad;
}

VarId Tape::leaf(Tensor value, bool requires_grad) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return VarId(nodes_.size() - 1);
}

VarId Tape::param(Param& p) {
    p.ensure_state();
    Node n;
    n.value = p.value;
    n.requires_grad = true;
    n.bound = &p;
    nodes_.push_back(std::move(n));
    return VarId(nodes_.size() - 1);
}

void Tape::backward(VarId root) {
    if (nodes_[root].value.numel() != 1) throw InvalidArgument("backward: root must be scalar");
    grad_buffer(root).data[0] = 1.0;
    for (VarId id = VarId(nodes_.size() - 1); id >= 0; --id) {
        Node& n = nodes_[id];
        if (!n.requires_grad || n.grad.data.empty()) continue;
        if (n.backward) n.backward(*this);
        if (n.bound) {
            n.bound->ensure_state();
            double* dst = n.bound->grad.data.data();
            const double* src = n.grad.data.data();
            for (size_t i = 0; i < n.grad.data.size(); ++i) dst[i] += src[i];
        }
    }
}

void Tape::clear() { nodes_.clear(); }

VarId Tape::add(VarId a, VarId b) {
    check_same_shape(val(a), val(b), "add");
    Tensor out = val(a);
    const Tensor& vb = val(b);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += vb.data[i];
    VarId id = make_node(std::move(out), {a, b}, nullptr);
    nodes_[id].backward = [id, a, b](Tape& t) {
        const Tensor& g = t.grad(id);
        if (t.requires_grad(a)) {
            double* ga = t.grad_buffer(a).data.data();
            for (size_t i = 0; i < g.data.size(); ++i) ga[i] += g.data[i];
        }
        if (t.requires_grad(b)) {
            double* gb = t.grad_buffer(b).data.data();
            for (size_t i = 0; i < g.data.size(); ++i) gb[i] += g.data[i];
        }
    };
    return id;
}

VarId Tape::add_scaled(VarId a, VarId b, double beta) {
    check_same_shape(val(a), val(b), "add_scaled");
    Tensor out = val(a);
    const Tensor& vb = val(b);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += beta * vb.data[i];
    VarId id = make_node(std::move(out), {a, b}, nullptr);
    nodes_[id].backward = [id, a, b, beta](Tape& t) {
        const Tensor& g = t.grad(id);
        if (t.requires_grad(a)) {
            double* ga = t.grad_buffer(a).data.data();
            for (size_t i = 0; i < g.data.size(); ++i) ga[i] += g.data[i];
        }
        if (t.requires_grad(b)) {
            double* gb = t.grad_buffer(b).data.data();
            for (size_t i = 0; i < g.data.size(); ++i) gb[i] += beta * g.data[i];
        }
    };
    return id;
}

VarId Tape::mul(VarId a, VarId b) {
    check_same_shape(val(a), val(b), "mul");
    Tensor out = val(a);
    const Tensor& vb = val(b);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= vb.data[i];
    VarId id = make_node(std::move(out), {a, b}, nullptr);
    nodes_[id].backward = [id, a, b](Tape& t) {
        const Tensor& g = t.grad(id);
        const Tensor& va = t.val(a);
        const Tensor& vb2 = t.val(b);
        if (t.requires_grad(a)) {
            double* ga = t.grad_buffer(a).data.data();
            for (size_t i = 0; i < g.data.size(); ++i) ga[i] += g.data[i] * vb2.data[i];
        }
        if (t.requires_grad(b)) {
            double* gb = t.grad_buffer(b).data.data();
            for (size_t i = 0; i < g.data.size(); ++i) gb[i] += g.data[i] * va.data[i];
        }
    };
    return id;
}

VarId Tape::scale(VarId a, double c) {
    Tensor out = val(a);
    for (double& v : out.data) v *= c;
    VarId id = make_node(std::move(out), {a}, nullptr);
    nodes_[id].backward = [id, a, c](Tape& t) {
        const Tensor& g = t.grad(id);
        double* ga = t.grad_buffer(a).data.data();
        for (size_t i = 0; i < g.data.size(); ++i) ga[i] += c * g.data[i];
    };
    return id;
}

VarId Tape::silu(VarId a) {
    Tensor out = val(a);
    for (double& v : out.data) v *= sigmoid(v);
    VarId id = make_node(std::move(out), {a}, nullptr);
    nodes_[id].backward = [id, a](Tape& t) {
        const Tensor& g = t.grad(id);
        const Tensor& x = t.val(a);
        double* ga = t.grad_buffer(a).data.data();
        for (size_t i = 0; i < g.data.size(); ++i) {
            const double s = sigmoid(x.data[i]);
            ga[i] += g.data[i] * s * (1.0 + x.data[i] * (1.0 - s));
        }
    };
    return id;
}

VarId Tape::relu(VarId a) {
    Tensor out = val(a);
    for (double& v : out.data) v = v > 0.0 ? v : 0.0;
    VarId id = make_node(std::move(out), {a}, nullptr);
    nodes_[id].backward = [id, a](Tape& t) {
        const Tensor& g = t.grad(id);
        const Tensor& x = t.val(a);
        double* ga = t.grad_buffer(a).data.data();
        for (size_t i = 0; i < g.data.size(); ++i)
            if (x.data[i] >= 0.0) ga[i] += g.data[i];
    };
    return id;
}

VarId Tape::abs(VarId a) {
    Tensor out = val(a);
    for (double& v : out.data) v = std::abs(v);
    VarId id = make_node(std::move(out), {a}, nullptr);
    nodes_[id].backward = [id, a](Tape& t) {
        const Tensor& g = t.grad(id);
        const Tensor& x = t.val(a);
        double* ga = t.grad_buffer(a).data.data();
        for (size_t i = 0; i < g.data.size(); ++i) {
            if (x.data[i] > 0.0) ga[i] += g.data[i];
            else if (x.data[i] < 0.0) ga[i] -= g.data[i];
        }
    };
    return id;
}

VarId Tape::linear(VarId x, VarId w, VarId b) {
    const Tensor& vx = val(x);
    const Tensor& vw = val(w);
    const int m = vx.rows(), k = vx.cols();
    const int o = vw.rows();
    if (vw.cols() != k) throw InvalidArgument("linear: weight/input width mismatch");
    if (b != kNoVar && val(b).numel() != o) throw InvalidArgument("linear: bias size mismatch");

    Tensor out({m, o});
    const double* xp = vx.data.data();
    const double* wp = vw.data.data();
    const double* bp = b != kNoVar ? val(b).data.data() : nullptr;
    for (int i = 0; i < m; ++i) {
        const double* xi = xp + size_t(i) * k;
        double* yi = out.data.data() + size_t(i) * o;
        for (int j = 0; j < o; ++j) {
            const double* wj = wp + size_t(j) * k;
            double acc = bp ? bp[j] : 0.0;
            for (int kk = 0; kk < k; ++kk) acc += xi[kk] * wj[kk];
            yi[j] = acc;
        }
    }
    VarId id = make_node(std::move(out), {x, w, b}, nullptr);
    nodes_[id].backward = [id, x, w, b, m, k, o](Tape& t) {
        const Tensor& g = t.grad(id);
        const double* gp = g.data.data();
        if (t.requires_grad(x)) {
            double* gx = t.grad_buffer(x).data.data();
            const double* wp2 = t.val(w).data.data();
            for (int i = 0; i < m; ++i) {
                const double* gi = gp + size_t(i) * o;
                double* gxi = gx + size_t(i) * k;
                for (int j = 0; j < o; ++j) {
                    const double gij = gi[j];
                    if (gij == 0.0) continue;
                    const double* wj = wp2 + size_t(j) * k;
                    for (int kk = 0; kk < k; ++kk) gxi[kk] += gij * wj[kk];
                }
            }
        }
        if (t.requires_grad(w)) {
            double* gw = t.grad_buffer(w).data.data();
            const double* xp2 = t.val(x).data.data();
            for (int i = 0; i < m; ++i) {
                const double* gi = gp + size_t(i) * o;
                const double* xi = xp2 + size_t(i) * k;
                for (int j = 0; j < o; ++j) {
                    const double gij = gi[j];
                    if (gij == 0.0) continue;
                    double* gwj = gw + size_t(j) * k;
                    for (int kk = 0; kk < k; ++kk) gwj[kk] += gij * xi[kk];
                }
            }
        }
        if (b != kNoVar && t.requires_grad(b)) {
            double* gb = t.grad_buffer(b).data.data();
            for (int i = 0; i < m; ++i) {
                const double* gi = gp + size_t(i) * o;
                for (int j = 0; j < o; ++j) gb[j] += gi[j];
            }
        }
    };
    return id;
}

VarId Tape::gather_rows(VarId x, std::vector<int32_t> idx) {
    const Tensor& vx = val(x);
    const int c = vx.cols();
    Tensor out({int(idx.size()), c});
    for (size_t i = 0; i < idx.size(); ++i)
        std::copy_n(vx.data.data() + size_t(idx[i]) * c, c, out.data.data() + i * c);
    VarId id = make_node(std::move(out), {x}, nullptr);
    auto shared_idx = std::make_shared<std::vector<int32_t>>(std::move(idx));
    nodes_[id].backward = [id, x, c, shared_idx](Tape& t) {
        const Tensor& g = t.grad(id);
        double* gx = t.grad_buffer(x).data.data();
        const auto& ix = *shared_idx;
        for (size_t i = 0; i < ix.size(); ++i) {
            const double* gi = g.data.data() + i * c;
            double* dst = gx + size_t(ix[i]) * c;
            for (int j = 0; j < c; ++j) dst[j] += gi[j];
        }
    };
    return id;
}

VarId Tape::concat_cols(const std::vector<VarId>& xs) {
    const int m = val(xs[0]).rows();
    int total = 0;
    for (VarId v : xs) {
        if (val(v).rows() != m) throw InvalidArgument("concat_cols: row mismatch");
        total += val(v).cols();
    }
    Tensor out({m, total});
    int col0 = 0;
    for (VarId v : xs) {
        const Tensor& t = val(v);
        const int c = t.cols();
        for (int i = 0; i < m; ++i)
            std::copy_n(t.data.data() + size_t(i) * c, c, out.data.data() + size_t(i) * total + col0);
        col0 += c;
    }
    VarId id = make_node(std::move(out), xs, nullptr);
    auto parts = std::make_shared<std::vector<VarId>>(xs);
    nodes_[id].backward = [id, parts, m, total](Tape& t) {
        const Tensor& g = t.grad(id);
        int col0b = 0;
        for (VarId v : *parts) {
            const int c = t.val(v).cols();
            if (t.requires_grad(v)) {
                double* gv = t.grad_buffer(v).data.data();
                for (int i = 0; i < m; ++i) {
                    const double* gi = g.data.data() + size_t(i) * total + col0b;
                    double* dst = gv + size_t(i) * c;
                    for (int j = 0; j < c; ++j) dst[j] += gi[j];
                }
            }
            col0b += c;
        }
    };
    return id;
}

VarId Tape::slice_cols(VarId x, int col0, int ncols) {
    const Tensor& vx = val(x);
    const int m = vx.rows(), c = vx.cols();
    if (col0 < 0 || col0 + ncols > c) throw InvalidArgument("slice_cols: out of range");
    Tensor out({m, ncols});
    for (int i = 0; i < m; ++i)
        std::copy_n(vx.data.data() + size_t(i) * c + col0, ncols, out.data.data() + size_t(i) * ncols);
    VarId id = make_node(std::move(out), {x}, nullptr);
    nodes_[id].backward = [id, x, col0, ncols, m, c](Tape& t) {
        const Tensor& g = t.grad(id);
        double* gx = t.grad_buffer(x).data.data();
        for (int i = 0; i < m; ++i) {
            const double* gi = g.data.data() + size_t(i) * ncols;
            double* dst = gx + size_t(i) * c + col0;
            for (int j = 0; j < ncols; ++j) dst[j] += gi[j];
        }
    };
    return id;
}

VarId Tape::layer_norm(VarId x, VarId gamma, VarId beta, double eps) {
    const Tensor& vx = val(x);
    const int m = vx.rows(), c = vx.cols();
    if (val(gamma).numel() != c || val(beta).numel() != c)
        throw InvalidArgument("layer_norm: scale/shift size mismatch");

    Tensor out({m, c});
    auto xhat = std::make_shared<std::vector<double>>(size_t(m) * c);
    auto inv_std = std::make_shared<std::vector<double>>(m);
    const double* gp = val(gamma).data.data();
    const double* bp = val(beta).data.data();
    for (int i = 0; i < m; ++i) {
        const double* xi = vx.data.data() + size_t(i) * c;
        double mean = 0.0;
        for (int j = 0; j < c; ++j) mean += xi[j];
        mean /= c;
        double var = 0.0;
        for (int j = 0; j < c; ++j) var += (xi[j] - mean) * (xi[j] - mean);
        var /= c;
        const double istd = 1.0 / std::sqrt(var + eps);
        (*inv_std)[i] = istd;
        double* hi = xhat->data() + size_t(i) * c;
        double* yi = out.data.data() + size_t(i) * c;
        for (int j = 0; j < c; ++j) {
            hi[j] = (xi[j] - mean) * istd;
            yi[j] = gp[j] * hi[j] + bp[j];
        }
    }
    VarId id = make_node(std::move(out), {x, gamma, beta}, nullptr);
    nodes_[id].backward = [id, x, gamma, beta, m, c, xhat, inv_std](Tape& t) {
        const Tensor& g = t.grad(id);
        const double* gp2 = t.val(gamma).data.data();
        double* ggamma = t.requires_grad(gamma) ? t.grad_buffer(gamma).data.data() : nullptr;
        double* gbeta = t.requires_grad(beta) ? t.grad_buffer(beta).data.data() : nullptr;
        double* gx = t.requires_grad(x) ? t.grad_buffer(x).data.data() : nullptr;
        for (int i = 0; i < m; ++i) {
            const double* gi = g.data.data() + size_t(i) * c;
            const double* hi = xhat->data() + size_t(i) * c;
            if (ggamma || gbeta) {
                for (int j = 0; j < c; ++j) {
                    if (ggamma) ggamma[j] += gi[j] * hi[j];
                    if (gbeta) gbeta[j] += gi[j];
                }
            }
            if (gx) {
                double s1 = 0.0, s2 = 0.0;
                for (int j = 0; j < c; ++j) {
                    const double gj = gi[j] * gp2[j];
                    s1 += gj;
                    s2 += gj * hi[j];
                }
                s1 /= c;
                s2 /= c;
                const double istd = (*inv_std)[i];
                double* gxi = gx + size_t(i) * c;
                for (int j = 0; j < c; ++j)
                    gxi[j] += (gi[j] * gp2[j] - s1 - hi[j] * s2) * istd;
            }
        }
    };
    return id;
}

VarId Tape::batch_norm_train(VarId x, VarId gamma, VarId beta, double eps,
                             std::vector<double>* out_mean, std::vector<double>* out_var) {
    const Tensor& vx = val(x);
    const int m = vx.rows(), c = vx.cols();
    Tensor out({m, c});
    auto xhat = std::make_shared<std::vector<double>>(size_t(m) * c);
    auto inv_std = std::make_shared<std::vector<double>>(c);
    std::vector<double> mean(c, 0.0), var(c, 0.0);
    for (int i = 0; i < m; ++i) {
        const double* xi = vx.data.data() + size_t(i) * c;
        for (int j = 0; j < c; ++j) mean[j] += xi[j];
    }
    for (int j = 0; j < c; ++j) mean[j] /= m;
    for (int i = 0; i < m; ++i) {
        const double* xi = vx.data.data() + size_t(i) * c;
        for (int j = 0; j < c; ++j) var[j] += (xi[j] - mean[j]) * (xi[j] - mean[j]);
    }
    for (int j = 0; j < c; ++j) {
        var[j] /= m;
        (*inv_std)[j] = 1.0 / std::sqrt(var[j] + eps);
    }
    const double* gp = val(gamma).data.data();
    const double* bp = val(beta).data.data();
    for (int i = 0; i < m; ++i) {
        const double* xi = vx.data.data() + size_t(i) * c;
        double* hi = xhat->data() + size_t(i) * c;
        double* yi = out.data.data() + size_t(i) * c;
        for (int j = 0; j < c; ++j) {
            hi[j] = (xi[j] - mean[j]) * (*inv_std)[j];
            yi[j] = gp[j] * hi[j] + bp[j];
        }
    }
    if (out_mean) *out_mean = mean;
    if (out_var) *out_var = var;

    VarId id = make_node(std::move(out), {x, gamma, beta}, nullptr);
    nodes_[id].backward = [id, x, gamma, beta, m, c, xhat, inv_std](Tape& t) {
        const Tensor& g = t.grad(id);
        const double* gp2 = t.val(gamma).data.data();
        double* ggamma = t.requires_grad(gamma) ? t.grad_buffer(gamma).data.data() : nullptr;
        double* gbeta = t.requires_grad(beta) ? t.grad_buffer(beta).data.data() : nullptr;
        double* gx = t.requires_grad(x) ? t.grad_buffer(x).data.data() : nullptr;
        std::vector<double> s1(c, 0.0), s2(c, 0.0);
        for (int i = 0; i < m; ++i) {
            const double* gi = g.data.data() + size_t(i) * c;
            const double* hi = xhat->data() + size_t(i) * c;
            for (int j = 0; j < c; ++j) {
                s1[j] += gi[j];
                s2[j] += gi[j] * hi[j];
            }
        }
        if (ggamma || gbeta)
            for (int j = 0; j < c; ++j) {
                if (ggamma) ggamma[j] += s2[j];
                if (gbeta) gbeta[j] += s1[j];
            }
        if (gx) {
            for (int i = 0; i < m; ++i) {
                const double* gi = g.data.data() + size_t(i) * c;
                const double* hi = xhat->data() + size_t(i) * c;
                double* gxi = gx + size_t(i) * c;
                for (int j = 0; j < c; ++j)
                    gxi[j] += gp2[j] * (*inv_std)[j] * (gi[j] - s1[j] / m - hi[j] * s2[j] / m);
            }
        }
    };
    return id;
}

VarId Tape::batch_norm_eval(VarId x, VarId gamma, VarId beta, double eps,
                            const std::vector<double>& mean, const std::vector<double>& var) {
    const Tensor& vx = val(x);
    const int m = vx.rows(), c = vx.cols();
    Tensor out({m, c});
    auto xhat = std::make_shared<std::vector<double>>(size_t(m) * c);
    std::vector<double> istd(c);
    for (int j = 0; j < c; ++j) istd[j] = 1.0 / std::sqrt(var[j] + eps);
    const double* gp = val(gamma).data.data();
    const double* bp = val(beta).data.data();
    for (int i = 0; i < m; ++i) {
        const double* xi = vx.data.data() + size_t(i) * c;
        double* hi = xhat->data() + size_t(i) * c;
        double* yi = out.data.data() + size_t(i) * c;
        for (int j = 0; j < c; ++j) {
            hi[j] = (xi[j] - mean[j]) * istd[j];
            yi[j] = gp[j] * hi[j] + bp[j];
        }
    }
    auto shared_istd = std::make_shared<std::vector<double>>(std::move(istd));
    VarId id = make_node(std::move(out), {x, gamma, beta}, nullptr);
    nodes_[id].backward = [id, x, gamma, beta, m, c, xhat, shared_istd](Tape& t) {
        const Tensor& g = t.grad(id);
        const double* gp2 = t.val(gamma).data.data();
        double* ggamma = t.requires_grad(gamma) ? t.grad_buffer(gamma).data.data() : nullptr;
        double* gbeta = t.requires_grad(beta) ? t.grad_buffer(beta).data.data() : nullptr;
        double* gx = t.requires_grad(x) ? t.grad_buffer(x).data.data() : nullptr;
        for (int i = 0; i < m; ++i) {
            const double* gi = g.data.data() + size_t(i) * c;
            const double* hi = xhat->data() + size_t(i) * c;
            for (int j = 0; j < c; ++j) {
                if (ggamma) ggamma[j] += gi[j] * hi[j];
                if (gbeta) gbeta[j] += gi[j];
                if (gx) gx[size_t(i) * c + j] += gi[j] * gp2[j] * (*shared_istd)[j];
            }
        }
    };
    return id;
}

VarId Tape::dw_conv1d_causal(VarId x, VarId w, VarId b) {
    const Tensor& vx = val(x);
    const Tensor& vw = val(w);
    const int L = vx.rows(), c = vx.cols();
    const int kw = vw.cols();
    if (vw.rows() != c) throw InvalidArgument("dw_conv1d: channel mismatch");
    if (val(b).numel() != c) throw InvalidArgument("dw_conv1d: bias mismatch");

    Tensor out({L, c});
    const double* xp = vx.data.data();
    const double* wp = vw.data.data();
    const double* bp = val(b).data.data();
    for (int t = 0; t < L; ++t) {
        double* yt = out.data.data() + size_t(t) * c;
        for (int j = 0; j < c; ++j) yt[j] = bp[j];
        for (int k = 0; k < kw; ++k) {
            const int src = t - (kw - 1) + k;
            if (src < 0) continue;
            const double* xs = xp + size_t(src) * c;
            for (int j = 0; j < c; ++j) yt[j] += wp[size_t(j) * kw + k] * xs[j];
        }
    }
    VarId id = make_node(std::move(out), {x, w, b}, nullptr);
    nodes_[id].backward = [id, x, w, b, L, c, kw](Tape& t) {
        const Tensor& g = t.grad(id);
        const double* gp = g.data.data();
        const double* xp2 = t.val(x).data.data();
        const double* wp2 = t.val(w).data.data();
        double* gx = t.requires_grad(x) ? t.grad_buffer(x).data.data() : nullptr;
        double* gw = t.requires_grad(w) ? t.grad_buffer(w).data.data() : nullptr;
        double* gb = t.requires_grad(b) ? t.grad_buffer(b).data.data() : nullptr;
        for (int tt = 0; tt < L; ++tt) {
            const double* gt = gp + size_t(tt) * c;
            if (gb)
                for (int j = 0; j < c; ++j) gb[j] += gt[j];
            for (int k = 0; k < kw; ++k) {
                const int src = tt - (kw - 1) + k;
                if (src < 0) continue;
                for (int j = 0; j < c; ++j) {
                    if (gw) gw[size_t(j) * kw + k] += gt[j] * xp2[size_t(src) * c + j];
                    if (gx) gx[size_t(src) * c + j] += gt[j] * wp2[size_t(j) * kw + k];
                }
            }
        }
    };
    return id;
}

VarId Tape::conv2d_3x3(VarId x, int h, int w, VarId weight, VarId bias) {
    const Tensor& vx = val(x);
    const Tensor& vw = val(weight);
    const int cin = vx.cols();
    const int cout = vw.rows();
    if (vx.rows() != h * w) throw InvalidArgument("conv2d: image size mismatch");
    if (vw.cols() != 9 * cin) throw InvalidArgument("conv2d: kernel size mismatch");

    Tensor out({h * w, cout});
    const double* xp = vx.data.data();
    const double* wp = vw.data.data();
    const double* bp = val(bias).data.data();
    for (int y = 0; y < h; ++y) {
        for (int xx = 0; xx < w; ++xx) {
            double* yp = out.data.data() + (size_t(y) * w + xx) * cout;
            for (int co = 0; co < cout; ++co) yp[co] = bp[co];
            for (int dy = -1; dy <= 1; ++dy) {
                const int sy = y + dy;
                if (sy < 0 || sy >= h) continue;
                for (int dx = -1; dx <= 1; ++dx) {
                    const int sx = xx + dx;
                    if (sx < 0 || sx >= w) continue;
                    const double* xs = xp + (size_t(sy) * w + sx) * cin;
                    const size_t tap = size_t(((dy + 1) * 3 + (dx + 1))) * cin;
                    for (int co = 0; co < cout; ++co) {
                        const double* wk = wp + size_t(co) * 9 * cin + tap;
                        double acc = 0.0;
                        for (int ci = 0; ci < cin; ++ci) acc += xs[ci] * wk[ci];
                        yp[co] += acc;
                    }
                }
            }
        }
    }
    VarId id = make_node(std::move(out), {x, weight, bias}, nullptr);
    nodes_[id].backward = [id, x, weight, bias, h, w, cin, cout](Tape& t) {
        const Tensor& g = t.grad(id);
        const double* gp = g.data.data();
        const double* xp2 = t.val(x).data.data();
        const double* wp2 = t.val(weight).data.data();
        double* gx = t.requires_grad(x) ? t.grad_buffer(x).data.data() : nullptr;
        double* gw = t.requires_grad(weight) ? t.grad_buffer(weight).data.data() : nullptr;
        double* gb = t.requires_grad(bias) ? t.grad_buffer(bias).data.data() : nullptr;
        for (int y = 0; y < h; ++y) {
            for (int xx = 0; xx < w; ++xx) {
                const double* gyp = gp + (size_t(y) * w + xx) * cout;
                if (gb)
                    for (int co = 0; co < cout; ++co) gb[co] += gyp[co];
                for (int dy = -1; dy <= 1; ++dy) {
                    const int sy = y + dy;
                    if (sy < 0 || sy >= h) continue;
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int sx = xx + dx;
                        if (sx < 0 || sx >= w) continue;
                        const size_t src = (size_t(sy) * w + sx) * cin;
                        const size_t tap = size_t(((dy + 1) * 3 + (dx + 1))) * cin;
                        for (int co = 0; co < cout; ++co) {
                            const double gv = gyp[co];
                            if (gv == 0.0) continue;
                            const double* wk = wp2 + size_t(co) * 9 * cin + tap;
                            if (gx)
                                for (int ci = 0; ci < cin; ++ci) gx[src + ci] += gv * wk[ci];
                            if (gw) {
                                double* gwk = gw + size_t(co) * 9 * cin + tap;
                                for (int ci = 0; ci < cin; ++ci) gwk[ci] += gv * xp2[src + ci];
                            }
                        }
                    }
                }
            }
        }
    };
    return id;
}

VarId Tape::maxpool2x2(VarId x, int h, int w) {
    const Tensor& vx = val(x);
    const int c = vx.cols();
    if (h % 2 != 0 || w % 2 != 0) throw InvalidArgument("maxpool2x2: odd dimensions");
    if (vx.rows() != h * w) throw InvalidArgument("maxpool2x2: image size mismatch");
    const int oh = h / 2, ow = w / 2;

    Tensor out({oh * ow, c});
    auto argmax = std::make_shared<std::vector<int32_t>>(size_t(oh) * ow * c);
    const double* xp = vx.data.data();
    for (int y = 0; y < oh; ++y) {
        for (int xx = 0; xx < ow; ++xx) {
            double* yp = out.data.data() + (size_t(y) * ow + xx) * c;
            int32_t* ap = argmax->data() + (size_t(y) * ow + xx) * c;
            for (int j = 0; j < c; ++j) {
                double best = -1e300;
                int32_t bi = 0;
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx) {
                        const int32_t src = int32_t((2 * y + dy) * w + (2 * xx + dx));
                        const double v = xp[size_t(src) * c + j];
                        if (v > best) {
                            best = v;
                            bi = src;
                        }
                    }
                yp[j] = best;
                ap[j] = bi;
            }
        }
    }
    VarId id = make_node(std::move(out), {x}, nullptr);
    nodes_[id].backward = [id, x, c, argmax](Tape& t) {
        const Tensor& g = t.grad(id);
        double* gx = t.grad_buffer(x).data.data();
        const int32_t* ap = argmax->data();
        for (size_t i = 0; i < g.data.size(); ++i) {
            const size_t row = i / c, j = i % c;
            gx[size_t(ap[row * c + j]) * c + j] += g.data[i];
        }
    };
    return id;
}

VarId Tape::softmax_rows(VarId x) {
    const Tensor& vx = val(x);
    const int m = vx.rows(), c = vx.cols();
    Tensor out({m, c});
    for (int i = 0; i < m; ++i) {
        const double* xi = vx.data.data() + size_t(i) * c;
        double* yi = out.data.data() + size_t(i) * c;
        double mx = xi[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, xi[j]);
        double sum = 0.0;
        for (int j = 0; j < c; ++j) {
            yi[j] = std::exp(xi[j] - mx);
            sum += yi[j];
        }
        for (int j = 0; j < c; ++j) yi[j] /= sum;
    }
    VarId id = make_node(std::move(out), {x}, nullptr);
    nodes_[id].backward = [id, x, m, c](Tape& t) {
        const Tensor& g = t.grad(id);
        const Tensor& y = t.val(id);
        double* gx = t.grad_buffer(x).data.data();
        for (int i = 0; i < m; ++i) {
            const double* gi = g.data.data() + size_t(i) * c;
            const double* yi = y.data.data() + size_t(i) * c;
            double dot = 0.0;
            for (int j = 0; j < c; ++j) dot += gi[j] * yi[j];
            double* gxi = gx + size_t(i) * c;
            for (int j = 0; j < c; ++j) gxi[j] += (gi[j] - dot) * yi[j];
        }
    };
    return id;
}

VarId Tape::convex_blend(const std::vector<VarId>& feats, VarId weights) {
    const int k = int(feats.size());
    const Tensor& vw = val(weights);
    const int m = vw.rows();
    if (vw.cols() != k) throw InvalidArgument("convex_blend: weight column count mismatch");
    const int c = val(feats[0]).cols();
    for (VarId f : feats)
        if (val(f).rows() != m || val(f).cols() != c)
            throw InvalidArgument("convex_blend: feature shape mismatch");

    Tensor out({m, c});
    for (int d = 0; d < k; ++d) {
        const double* fp = val(feats[d]).data.data();
        const double* wp = vw.data.data();
        for (int i = 0; i < m; ++i) {
            const double wi = wp[size_t(i) * k + d];
            const double* fi = fp + size_t(i) * c;
            double* yi = out.data.data() + size_t(i) * c;
            for (int j = 0; j < c; ++j) yi[j] += wi * fi[j];
        }
    }
    std::vector<VarId> inputs = feats;
    inputs.push_back(weights);
    VarId id = make_node(std::move(out), inputs, nullptr);
    auto fcopy = std::make_shared<std::vector<VarId>>(feats);
    nodes_[id].backward = [id, fcopy, weights, m, c, k](Tape& t) {
        const Tensor& g = t.grad(id);
        const double* wp = t.val(weights).data.data();
        double* gw = t.requires_grad(weights) ? t.grad_buffer(weights).data.data() : nullptr;
        for (int d = 0; d < k; ++d) {
            VarId f = (*fcopy)[d];
            const double* fp = t.val(f).data.data();
            double* gf = t.requires_grad(f) ? t.grad_buffer(f).data.data() : nullptr;
            for (int i = 0; i < m; ++i) {
                const double* gi = g.data.data() + size_t(i) * c;
                const double wi = wp[size_t(i) * k + d];
                if (gf) {
                    double* gfi = gf + size_t(i) * c;
                    for (int j = 0; j < c; ++j) gfi[j] += wi * gi[j];
                }
                if (gw) {
                    const double* fi = fp + size_t(i) * c;
                    double dot = 0.0;
                    for (int j = 0; j < c; ++j) dot += gi[j] * fi[j];
                    gw[size_t(i) * k + d] += dot;
                }
            }
        }
    };
    return id;
}

VarId Tape::mean_rows(VarId x) {
    const Tensor& vx = val(x);
    const int m = vx.rows(), c = vx.cols();
    Tensor out({1, c});
    for (int i = 0; i < m; ++i) {
        const double* xi = vx.data.data() + size_t(i) * c;
        for (int j = 0; j < c; ++j) out.data[j] += xi[j];
    }
    for (int j = 0; j < c; ++j) out.data[j] /= m;
    VarId id = make_node(std::move(out), {x}, nullptr);
    nodes_[id].backward = [id, x, m, c](Tape& t) {
        const Tensor& g = t.grad(id);
        double* gx = t.grad_buffer(x).data.data();
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < c; ++j) gx[size_t(i) * c + j] += g.data[j] / m;
    };
    return id;
}

VarId Tape::broadcast_rows(VarId x, int m) {
    const Tensor& vx = val(x);
    if (vx.rows() != 1) throw InvalidArgument("broadcast_rows: input must have one row");
    const int c = vx.cols();
    Tensor out({m, c});
    for (int i = 0; i < m; ++i)
        std::copy_n(vx.data.data(), c, out.data.data() + size_t(i) * c);
    VarId id = make_node(std::move(out), {x}, nullptr);
    nodes_[id].backward = [id, x, m, c](Tape& t) {
        const Tensor& g = t.grad(id);
        double* gx = t.grad_buffer(x).data.data();
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < c; ++j) gx[j] += g.data[size_t(i) * c + j];
    };
    return id;
}

VarId Tape::sum_all(VarId x) {
    const Tensor& vx = val(x);
    double total = 0.0;
    for (double v : vx.data) total += v;
    VarId id = make_node(Tensor({1}, {total}), {x}, nullptr);
    nodes_[id].backward = [id, x](Tape& t) {
        const double g = t.grad(id).data[0];
        double* gx = t.grad_buffer(x).data.data();
        const size_t n = t.val(x).data.size();
        for (size_t i = 0; i < n; ++i) gx[i] += g;
    };
    return id;
}

VarId Tape::dot_const(VarId x, std::vector<double> w) {
    const Tensor& vx = val(x);
    if (vx.data.size() != w.size()) throw InvalidArgument("dot_const: size mismatch");
    double total = 0.0;
    for (size_t i = 0; i < w.size(); ++i) total += vx.data[i] * w[i];
    VarId id = make_node(Tensor({1}, {total}), {x}, nullptr);
    auto ws = std::make_shared<std::vector<double>>(std::move(w));
    nodes_[id].backward = [id, x, ws](Tape& t) {
        const double g = t.grad(id).data[0];
        double* gx = t.grad_buffer(x).data.data();
        for (size_t i = 0; i < ws->size(); ++i) gx[i] += g * (*ws)[i];
    };
    return id;
}

} // namespace plantcount::ad

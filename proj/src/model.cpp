#include "icrl/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <limits>

#include <json.hpp>

#include "icrl/errors.hpp"
#include "icrl/io_util.hpp"

namespace icrl::model {

// ----------------------------- math kernels -----------------------------

namespace {

// Fixed-width partial sums keep the reduction order deterministic while
// letting the compiler vectorize without -ffast-math.
inline double dot(const double* a, const double* b, int n) {
    double acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
    int i = 0;
    for (; i + 8 <= n; i += 8) {
        for (int j = 0; j < 8; ++j) {
            acc[j] += a[i + j] * b[i + j];
        }
    }
    double tail = 0.0;
    for (; i < n; ++i) {
        tail += a[i] * b[i];
    }
    return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail;
}

inline void axpy(double* y, double s, const double* x, int n) {
    for (int i = 0; i < n; ++i) {
        y[i] += s * x[i];
    }
}

// y += s0*x0 + s1*x1 + s2*x2 + s3*x3
inline void axpy4(double* y, double s0, const double* x0, double s1, const double* x1, double s2,
                  const double* x2, double s3, const double* x3, int n) {
    for (int i = 0; i < n; ++i) {
        y[i] += s0 * x0[i] + s1 * x1[i] + s2 * x2[i] + s3 * x3[i];
    }
}

// Y[t,o] = b[o] + X[t,:].W[o,:]
void linear_fwd(const double* X, const double* W, const double* b, double* Y, int T, int in,
                int out) {
    for (int t = 0; t < T; ++t) {
        const double* x = X + static_cast<size_t>(t) * in;
        double* y = Y + static_cast<size_t>(t) * out;
        for (int o = 0; o < out; ++o) {
            y[o] = (b ? b[o] : 0.0) + dot(x, W + static_cast<size_t>(o) * in, in);
        }
    }
}

// dX[t,:] += sum_o dY[t,o] * W[o,:]
void linear_bwd_input(const double* dY, const double* W, double* dX, int T, int in, int out) {
    for (int t = 0; t < T; ++t) {
        const double* dy = dY + static_cast<size_t>(t) * out;
        double* dx = dX + static_cast<size_t>(t) * in;
        int o = 0;
        for (; o + 4 <= out; o += 4) {
            const double* w = W + static_cast<size_t>(o) * in;
            axpy4(dx, dy[o], w, dy[o + 1], w + in, dy[o + 2], w + 2 * in, dy[o + 3], w + 3 * in,
                  in);
        }
        for (; o < out; ++o) {
            axpy(dx, dy[o], W + static_cast<size_t>(o) * in, in);
        }
    }
}

// dW[o,:] += sum_t dY[t,o] * X[t,:];  db[o] += sum_t dY[t,o]
void linear_bwd_params(const double* dY, const double* X, double* dW, double* db, int T, int in,
                       int out) {
    // Two time steps per sweep halves the dW store traffic.
    int t = 0;
    for (; t + 2 <= T; t += 2) {
        const double* dy0 = dY + static_cast<size_t>(t) * out;
        const double* dy1 = dy0 + out;
        const double* x0 = X + static_cast<size_t>(t) * in;
        const double* x1 = x0 + in;
        for (int o = 0; o < out; ++o) {
            double* w = dW + static_cast<size_t>(o) * in;
            const double s0 = dy0[o], s1 = dy1[o];
            for (int i = 0; i < in; ++i) {
                w[i] += s0 * x0[i] + s1 * x1[i];
            }
            if (db) {
                db[o] += s0 + s1;
            }
        }
    }
    for (; t < T; ++t) {
        const double* dy = dY + static_cast<size_t>(t) * out;
        const double* x = X + static_cast<size_t>(t) * in;
        for (int o = 0; o < out; ++o) {
            axpy(dW + static_cast<size_t>(o) * in, dy[o], x, in);
            if (db) {
                db[o] += dy[o];
            }
        }
    }
}

constexpr double kLnEps = 1e-5;

// Per-position layernorm; caches xhat and rstd for the backward pass.
void layernorm_fwd(const double* x, const double* g, const double* b, double* y, double* xhat,
                   double* rstd, int T, int d) {
    for (int t = 0; t < T; ++t) {
        const double* xt = x + static_cast<size_t>(t) * d;
        double mean = 0.0;
        for (int i = 0; i < d; ++i) {
            mean += xt[i];
        }
        mean /= d;
        double var = 0.0;
        for (int i = 0; i < d; ++i) {
            const double c = xt[i] - mean;
            var += c * c;
        }
        var /= d;
        const double r = 1.0 / std::sqrt(var + kLnEps);
        rstd[t] = r;
        double* xh = xhat + static_cast<size_t>(t) * d;
        double* yt = y + static_cast<size_t>(t) * d;
        for (int i = 0; i < d; ++i) {
            xh[i] = (xt[i] - mean) * r;
            yt[i] = g[i] * xh[i] + b[i];
        }
    }
}

// dx += LN backward of dy; dg/db accumulated.
void layernorm_bwd(const double* dy, const double* g, const double* xhat, const double* rstd,
                   double* dx, double* dg, double* db, int T, int d) {
    for (int t = 0; t < T; ++t) {
        const double* dyt = dy + static_cast<size_t>(t) * d;
        const double* xh = xhat + static_cast<size_t>(t) * d;
        double* dxt = dx + static_cast<size_t>(t) * d;
        double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
        for (int i = 0; i < d; ++i) {
            const double dxhat = dyt[i] * g[i];
            mean_dxhat += dxhat;
            mean_dxhat_xhat += dxhat * xh[i];
            dg[i] += dyt[i] * xh[i];
            db[i] += dyt[i];
        }
        mean_dxhat /= d;
        mean_dxhat_xhat /= d;
        const double r = rstd[t];
        for (int i = 0; i < d; ++i) {
            const double dxhat = dyt[i] * g[i];
            dxt[i] += r * (dxhat - mean_dxhat - xh[i] * mean_dxhat_xhat);
        }
    }
}

// exp via 2^k * e^r with a degree-10 Taylor polynomial on |r| <= ln2/2;
// relative error < 1e-12, several times faster than libm. Used in the
// attention softmax, the hottest loop in the model.
double fast_exp_impl(double x) {
    if (x < -700.0) {
        return 0.0;
    }
    constexpr double inv_ln2 = 1.4426950408889634074;
    constexpr double ln2_hi = 6.93147180369123816490e-01;
    constexpr double ln2_lo = 1.90821492927058770002e-10;
    const double kd = std::nearbyint(x * inv_ln2);
    const double r = (x - kd * ln2_hi) - kd * ln2_lo;
    double p = 2.75573192239858906526e-07;  // 1/10!
    p = p * r + 2.75573192239858906526e-06;  // 1/9!
    p = p * r + 2.48015873015873015873e-05;  // 1/8!
    p = p * r + 1.98412698412698412698e-04;  // 1/7!
    p = p * r + 1.38888888888888888889e-03;  // 1/6!
    p = p * r + 8.33333333333333333333e-03;  // 1/5!
    p = p * r + 4.16666666666666666667e-02;  // 1/4!
    p = p * r + 1.66666666666666666667e-01;  // 1/3!
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;
    const int k = static_cast<int>(kd);
    uint64_t bits;
    std::memcpy(&bits, &p, 8);
    bits += static_cast<uint64_t>(static_cast<int64_t>(k)) << 52;
    std::memcpy(&p, &bits, 8);
    return p;
}

inline double fast_exp(double x) { return fast_exp_impl(x); }

}  // namespace

namespace detail {
double fast_exp(double x) { return fast_exp_impl(x); }
}  // namespace detail

namespace {

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

inline double gelu_grad(double x) {
    const double phi_cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
    const double phi_pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
    return phi_cdf + x * phi_pdf;
}

// In-place softmax over row[0..n), max-shifted.
inline void softmax_row(double* row, int n) {
    double mx = row[0];
    for (int i = 1; i < n; ++i) {
        mx = std::max(mx, row[i]);
    }
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        row[i] = fast_exp(row[i] - mx);
        total += row[i];
    }
    const double inv = 1.0 / total;
    for (int i = 0; i < n; ++i) {
        row[i] *= inv;
    }
}

}  // namespace

// ----------------------------- layout / init -----------------------------

ParamLayout make_layout(const ModelConfig& c) {
    if (c.d_model < 1 || c.n_heads < 1 || c.d_model % c.n_heads != 0) {
        throw InputError("d_model must be a positive multiple of n_heads");
    }
    if (c.max_context < 1 || c.n_layers < 1 || c.state_vocab < 1 || c.n_actions < 1) {
        throw InputError("bad model config");
    }
    if (c.coord_grid < 0 || (c.coord_grid > 0 && c.coord_grid * c.coord_grid > c.state_vocab)) {
        throw InputError("coord_grid^2 must not exceed state_vocab");
    }
    ParamLayout lay;
    size_t cursor = 0;
    auto add = [&](const std::string& name, int rows, int cols) {
        TensorSpec spec{name, rows, cols, cursor};
        cursor += spec.size();
        lay.tensors.push_back(spec);
        return spec.offset;
    };
    const int d = c.d_model;
    lay.state_emb = add("state_emb", c.state_vocab, d);
    if (c.coord_grid > 0) {
        lay.col_emb = add("col_emb", c.coord_grid, d);
        lay.row_emb = add("row_emb", c.coord_grid, d);
    }
    lay.action_emb = add("action_emb", c.n_actions + 1, d);
    lay.reward_proj = add("reward_proj", 1, d);
    lay.null_reward = add("null_reward", 1, d);
    if (c.value_input) {
        lay.vhat_proj = add("vhat_proj", 1, d);
    }
    lay.pos_emb = add("pos_emb", c.max_context, d);
    for (int l = 0; l < c.n_layers; ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        ParamLayout::Layer lo;
        lo.ln1_g = add(p + "ln1.g", 1, d);
        lo.ln1_b = add(p + "ln1.b", 1, d);
        lo.wq = add(p + "attn.wq", d, d);
        lo.bq = add(p + "attn.bq", 1, d);
        lo.wk = add(p + "attn.wk", d, d);
        lo.bk = add(p + "attn.bk", 1, d);
        lo.wv = add(p + "attn.wv", d, d);
        lo.bv = add(p + "attn.bv", 1, d);
        lo.wo = add(p + "attn.wo", d, d);
        lo.bo = add(p + "attn.bo", 1, d);
        lo.ln2_g = add(p + "ln2.g", 1, d);
        lo.ln2_b = add(p + "ln2.b", 1, d);
        lo.w1 = add(p + "mlp.w1", 4 * d, d);
        lo.b1 = add(p + "mlp.b1", 1, 4 * d);
        lo.w2 = add(p + "mlp.w2", d, 4 * d);
        lo.b2 = add(p + "mlp.b2", 1, d);
        lay.layers.push_back(lo);
    }
    lay.lnf_g = add("lnf.g", 1, d);
    lay.lnf_b = add("lnf.b", 1, d);
    lay.act_w = add("action_head.w", c.n_actions, d);
    lay.act_b = add("action_head.b", 1, c.n_actions);
    if (c.value_head) {
        lay.val_w = add("value_head.w", 1, d);
        lay.val_b = add("value_head.b", 1, 1);
    }
    lay.total = cursor;
    return lay;
}

Model make_model(const ModelConfig& config) {
    Model m;
    m.config = config;
    m.layout = make_layout(config);
    m.params.assign(m.layout.total, 0.0);
    m.adam.m.assign(m.layout.total, 0.0);
    m.adam.v.assign(m.layout.total, 0.0);
    m.adam.step = 0;

    Rng rng(config.rng_seed);
    const double base_std = 0.02;
    const double resid_std = base_std / std::sqrt(2.0 * config.n_layers);
    for (const auto& spec : m.layout.tensors) {
        double* p = m.params.data() + spec.offset;
        const auto& n = spec.name;
        const bool is_ln_gain = n.ends_with(".g");
        const bool is_bias_like = n.ends_with(".b") || n.ends_with(".bq") || n.ends_with(".bk") ||
                                  n.ends_with(".bv") || n.ends_with(".bo") || n.ends_with(".b1") ||
                                  n.ends_with(".b2");
        if (is_ln_gain) {
            std::fill(p, p + spec.size(), 1.0);
        } else if (is_bias_like) {
            // zeros
        } else {
            double std_dev = base_std;
            if (spec.name == "pos_emb") {
                std_dev = 0.01;
            } else if (spec.name.find("attn.wo") != std::string::npos ||
                       spec.name.find("mlp.w2") != std::string::npos) {
                std_dev = resid_std;
            }
            for (size_t i = 0; i < spec.size(); ++i) {
                p[i] = std_dev * rng.normal();
            }
        }
    }
    return m;
}

// ----------------------------- token composition -----------------------------

namespace {

void compose_tokens(const Model& m, const data::TrainingWindow& win, double* x0) {
    const auto& c = m.config;
    const auto& lay = m.layout;
    const int d = c.d_model;
    const int T = static_cast<int>(win.steps.size());
    if (T < 1 || T > c.max_context) {
        throw InputError("window length must lie in [1, max_context]");
    }
    const double* P = m.params.data();
    for (int t = 0; t < T; ++t) {
        const auto& step = win.steps[static_cast<size_t>(t)];
        if (static_cast<int>(step.state) >= c.state_vocab ||
            (c.coord_grid > 0 && static_cast<int>(step.state) >= c.coord_grid * c.coord_grid)) {
            throw InputError("state index exceeds state_vocab");
        }
        if (static_cast<int>(step.action) >= c.n_actions) {
            throw InputError("action index exceeds n_actions");
        }
        double* x = x0 + static_cast<size_t>(t) * d;
        const double* se = P + lay.state_emb + static_cast<size_t>(step.state) * d;
        const double* pe = P + lay.pos_emb + static_cast<size_t>(t) * d;
        const int prev_action = t == 0 ? c.n_actions : win.steps[static_cast<size_t>(t - 1)].action;
        const double* ae = P + lay.action_emb + static_cast<size_t>(prev_action) * d;
        for (int i = 0; i < d; ++i) {
            x[i] = se[i] + pe[i] + ae[i];
        }
        if (c.coord_grid > 0) {
            axpy(x, 1.0, P + lay.col_emb + static_cast<size_t>(step.state % c.coord_grid) * d, d);
            axpy(x, 1.0, P + lay.row_emb + static_cast<size_t>(step.state / c.coord_grid) * d, d);
        }
        if (t == 0) {
            axpy(x, 1.0, P + lay.null_reward, d);
        } else {
            axpy(x, static_cast<double>(win.steps[static_cast<size_t>(t - 1)].reward),
                 P + lay.reward_proj, d);
        }
        if (c.value_input) {
            axpy(x, static_cast<double>(step.v_hat), P + lay.vhat_proj, d);
        }
    }
}

// Embedding-side backward of compose_tokens.
void compose_tokens_bwd(const Model& m, const data::TrainingWindow& win, const double* dx0,
                        double* grad) {
    const auto& c = m.config;
    const auto& lay = m.layout;
    const int d = c.d_model;
    const int T = static_cast<int>(win.steps.size());
    for (int t = 0; t < T; ++t) {
        const auto& step = win.steps[static_cast<size_t>(t)];
        const double* dx = dx0 + static_cast<size_t>(t) * d;
        axpy(grad + lay.state_emb + static_cast<size_t>(step.state) * d, 1.0, dx, d);
        if (c.coord_grid > 0) {
            axpy(grad + lay.col_emb + static_cast<size_t>(step.state % c.coord_grid) * d, 1.0, dx,
                 d);
            axpy(grad + lay.row_emb + static_cast<size_t>(step.state / c.coord_grid) * d, 1.0, dx,
                 d);
        }
        axpy(grad + lay.pos_emb + static_cast<size_t>(t) * d, 1.0, dx, d);
        const int prev_action = t == 0 ? c.n_actions : win.steps[static_cast<size_t>(t - 1)].action;
        axpy(grad + lay.action_emb + static_cast<size_t>(prev_action) * d, 1.0, dx, d);
        if (t == 0) {
            axpy(grad + lay.null_reward, 1.0, dx, d);
        } else {
            axpy(grad + lay.reward_proj,
                 static_cast<double>(win.steps[static_cast<size_t>(t - 1)].reward), dx, d);
        }
        if (c.value_input) {
            axpy(grad + lay.vhat_proj, static_cast<double>(step.v_hat), dx, d);
        }
    }
}

}  // namespace

std::vector<double> token_compose(const Model& m, const data::TrainingWindow& window) {
    std::vector<double> x0(window.steps.size() * static_cast<size_t>(m.config.d_model));
    compose_tokens(m, window, x0.data());
    return x0;
}

// ----------------------------- forward workspace -----------------------------

namespace {

struct Workspace {
    int T = 0;
    bool dropout_active = false;
    std::vector<std::vector<double>> x;  // [L+1][T*d]: stream entering each layer + final
    std::vector<std::vector<double>> ln1_out, ln1_xhat, ln2_out, ln2_xhat;  // [L][T*d]
    std::vector<std::vector<double>> ln1_rstd, ln2_rstd;                    // [L][T]
    std::vector<std::vector<double>> q, k, v, o;                            // [L][T*d]
    std::vector<std::vector<double>> att;                                   // [L][H*T*T]
    std::vector<std::vector<double>> mlp_pre, mlp_act;                      // [L][T*4d]
    std::vector<std::vector<double>> drop_attn, drop_mlp;                   // [L][T*d]
    std::vector<double> drop_emb;                                           // [T*d]
    std::vector<double> proj;               // [T*d] residual-branch scratch
    std::vector<double> lnf_out, lnf_xhat;  // [T*d]
    std::vector<double> lnf_rstd;           // [T]
    std::vector<double> logits;             // [T*na]
    std::vector<double> value;              // [T]

    // Buffers are reused across calls; only the accumulated ones are zeroed.
    // Attention rows above the diagonal are left stale unless the caller
    // wants to export them (backward never reads them).
    void prepare(const ModelConfig& c, int seq_len, bool with_dropout, bool zero_attention) {
        T = seq_len;
        dropout_active = with_dropout;
        const size_t td = static_cast<size_t>(T) * c.d_model;
        const size_t t4d = td * 4;
        const size_t hts = static_cast<size_t>(c.n_heads) * T * T;
        auto sized = [&](std::vector<std::vector<double>>& vv, size_t n, bool zero) {
            vv.resize(static_cast<size_t>(c.n_layers));
            for (auto& b : vv) {
                if (zero) {
                    b.assign(n, 0.0);
                } else {
                    b.resize(n);
                }
            }
        };
        x.resize(static_cast<size_t>(c.n_layers) + 1);
        for (auto& b : x) {
            b.resize(td);
        }
        sized(ln1_out, td, false);
        sized(ln1_xhat, td, false);
        sized(ln2_out, td, false);
        sized(ln2_xhat, td, false);
        sized(ln1_rstd, static_cast<size_t>(T), false);
        sized(ln2_rstd, static_cast<size_t>(T), false);
        sized(q, td, false);
        sized(k, td, false);
        sized(v, td, false);
        sized(o, td, true);
        sized(att, hts, zero_attention);
        sized(mlp_pre, t4d, false);
        sized(mlp_act, t4d, false);
        if (with_dropout) {
            sized(drop_attn, td, false);
            sized(drop_mlp, td, false);
            drop_emb.resize(td);
        }
        proj.resize(td);
        lnf_out.resize(td);
        lnf_xhat.resize(td);
        lnf_rstd.resize(static_cast<size_t>(T));
        logits.resize(static_cast<size_t>(T) * c.n_actions);
        value.resize(static_cast<size_t>(T));
    }
};

void fill_dropout_mask(std::vector<double>& mask, double p, Rng& rng) {
    const double keep = 1.0 - p;
    for (double& v : mask) {
        v = rng.uniform01() < p ? 0.0 : 1.0 / keep;
    }
}

void apply_mask(double* x, const double* mask, size_t n) {
    for (size_t i = 0; i < n; ++i) {
        x[i] *= mask[i];
    }
}

// Full causal forward over the window; fills every cache needed by backward.
void run_forward(const Model& m, const data::TrainingWindow& win, Workspace& ws,
                 Rng* dropout_rng, bool zero_attention = false) {
    const auto& c = m.config;
    const auto& lay = m.layout;
    const int d = c.d_model;
    const int dh = d / c.n_heads;
    const int T = static_cast<int>(win.steps.size());
    const bool drop = dropout_rng != nullptr && c.dropout > 0.0;
    ws.prepare(c, T, drop, zero_attention);
    const double* P = m.params.data();

    compose_tokens(m, win, ws.x[0].data());
    if (drop) {
        fill_dropout_mask(ws.drop_emb, c.dropout, *dropout_rng);
        apply_mask(ws.x[0].data(), ws.drop_emb.data(), ws.x[0].size());
    }

    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int l = 0; l < c.n_layers; ++l) {
        const auto& L = lay.layers[static_cast<size_t>(l)];
        const double* xin = ws.x[static_cast<size_t>(l)].data();
        double* xout = ws.x[static_cast<size_t>(l) + 1].data();

        layernorm_fwd(xin, P + L.ln1_g, P + L.ln1_b, ws.ln1_out[l].data(), ws.ln1_xhat[l].data(),
                      ws.ln1_rstd[l].data(), T, d);
        linear_fwd(ws.ln1_out[l].data(), P + L.wq, P + L.bq, ws.q[l].data(), T, d, d);
        linear_fwd(ws.ln1_out[l].data(), P + L.wk, P + L.bk, ws.k[l].data(), T, d, d);
        linear_fwd(ws.ln1_out[l].data(), P + L.wv, P + L.bv, ws.v[l].data(), T, d, d);

        for (int h = 0; h < c.n_heads; ++h) {
            const int hs = h * dh;
            double* att_h = ws.att[l].data() + static_cast<size_t>(h) * T * T;
            for (int t = 0; t < T; ++t) {
                double* row = att_h + static_cast<size_t>(t) * T;
                const double* qt = ws.q[l].data() + static_cast<size_t>(t) * d + hs;
                for (int u = 0; u <= t; ++u) {
                    row[u] = dot(qt, ws.k[l].data() + static_cast<size_t>(u) * d + hs, dh) *
                             inv_sqrt_dh;
                }
                softmax_row(row, t + 1);
                double* ot = ws.o[l].data() + static_cast<size_t>(t) * d + hs;
                for (int u = 0; u <= t; ++u) {
                    axpy(ot, row[u], ws.v[l].data() + static_cast<size_t>(u) * d + hs, dh);
                }
            }
        }

        // attn projection + residual
        std::memcpy(xout, xin, static_cast<size_t>(T) * d * sizeof(double));
        linear_fwd(ws.o[l].data(), P + L.wo, P + L.bo, ws.proj.data(), T, d, d);
        if (drop) {
            fill_dropout_mask(ws.drop_attn[l], c.dropout, *dropout_rng);
            apply_mask(ws.proj.data(), ws.drop_attn[l].data(), ws.proj.size());
        }
        axpy(xout, 1.0, ws.proj.data(), T * d);

        layernorm_fwd(xout, P + L.ln2_g, P + L.ln2_b, ws.ln2_out[l].data(), ws.ln2_xhat[l].data(),
                      ws.ln2_rstd[l].data(), T, d);
        linear_fwd(ws.ln2_out[l].data(), P + L.w1, P + L.b1, ws.mlp_pre[l].data(), T, d, 4 * d);
        for (size_t i = 0; i < ws.mlp_pre[l].size(); ++i) {
            ws.mlp_act[l][i] = gelu(ws.mlp_pre[l][i]);
        }
        linear_fwd(ws.mlp_act[l].data(), P + L.w2, P + L.b2, ws.proj.data(), T, 4 * d, d);
        if (drop) {
            fill_dropout_mask(ws.drop_mlp[l], c.dropout, *dropout_rng);
            apply_mask(ws.proj.data(), ws.drop_mlp[l].data(), ws.proj.size());
        }
        axpy(xout, 1.0, ws.proj.data(), T * d);
    }

    layernorm_fwd(ws.x[static_cast<size_t>(c.n_layers)].data(), P + lay.lnf_g, P + lay.lnf_b,
                  ws.lnf_out.data(), ws.lnf_xhat.data(), ws.lnf_rstd.data(), T, d);
    linear_fwd(ws.lnf_out.data(), P + lay.act_w, P + lay.act_b, ws.logits.data(), T, d,
               c.n_actions);
    if (c.value_head) {
        for (int t = 0; t < T; ++t) {
            ws.value[static_cast<size_t>(t)] =
                dot(ws.lnf_out.data() + static_cast<size_t>(t) * d, P + lay.val_w, d) +
                P[lay.val_b];
        }
    }
}

// Reusable backward scratch, one per thread.
struct BwdScratch {
    std::vector<double> d_lnf_out, dx, d_proj, d_ln, d_o, d_q, d_k, d_v, d_att_row;
    std::vector<double> d_act, d_pre;

    void prepare(int T, int d) {
        const size_t td = static_cast<size_t>(T) * d;
        d_lnf_out.assign(td, 0.0);
        dx.assign(td, 0.0);
        d_proj.resize(td);
        d_ln.resize(td);
        d_o.resize(td);
        d_q.resize(td);
        d_k.resize(td);
        d_v.resize(td);
        d_att_row.resize(static_cast<size_t>(T));
        d_act.resize(td * 4);
        d_pre.resize(td * 4);
    }
};

// Backward from head gradients (d_logits [T*na], d_value [T]); accumulates
// into grad.
void run_backward(const Model& m, const data::TrainingWindow& win, const Workspace& ws,
                  BwdScratch& sc, const std::vector<double>& d_logits,
                  const std::vector<double>& d_value, double* grad) {
    const auto& c = m.config;
    const auto& lay = m.layout;
    const int d = c.d_model;
    const int dh = d / c.n_heads;
    const int T = ws.T;
    const double* P = m.params.data();
    const bool drop = ws.dropout_active;
    const size_t td = static_cast<size_t>(T) * d;
    sc.prepare(T, d);

    std::vector<double>& d_lnf_out = sc.d_lnf_out;
    linear_bwd_input(d_logits.data(), P + lay.act_w, d_lnf_out.data(), T, d, c.n_actions);
    linear_bwd_params(d_logits.data(), ws.lnf_out.data(), grad + lay.act_w, grad + lay.act_b, T, d,
                      c.n_actions);
    if (c.value_head) {
        for (int t = 0; t < T; ++t) {
            const double dv = d_value[static_cast<size_t>(t)];
            if (dv != 0.0) {
                axpy(d_lnf_out.data() + static_cast<size_t>(t) * d, dv, P + lay.val_w, d);
                axpy(grad + lay.val_w, dv, ws.lnf_out.data() + static_cast<size_t>(t) * d, d);
                grad[lay.val_b] += dv;
            }
        }
    }

    std::vector<double>& dx = sc.dx;
    layernorm_bwd(d_lnf_out.data(), P + lay.lnf_g, ws.lnf_xhat.data(), ws.lnf_rstd.data(),
                  dx.data(), grad + lay.lnf_g, grad + lay.lnf_b, T, d);

    std::vector<double>& d_proj = sc.d_proj;
    std::vector<double>& d_act = sc.d_act;
    std::vector<double>& d_pre = sc.d_pre;
    std::vector<double>& d_ln = sc.d_ln;
    std::vector<double>& d_o = sc.d_o;
    std::vector<double>& d_q = sc.d_q;
    std::vector<double>& d_k = sc.d_k;
    std::vector<double>& d_v = sc.d_v;
    std::vector<double>& d_att_row = sc.d_att_row;

    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int l = c.n_layers - 1; l >= 0; --l) {
        const auto& L = lay.layers[static_cast<size_t>(l)];

        // ---- MLP block ----
        std::copy(dx.begin(), dx.end(), d_proj.begin());
        if (drop) {
            apply_mask(d_proj.data(), ws.drop_mlp[l].data(), td);
        }
        std::fill(d_act.begin(), d_act.end(), 0.0);
        linear_bwd_input(d_proj.data(), P + L.w2, d_act.data(), T, 4 * d, d);
        linear_bwd_params(d_proj.data(), ws.mlp_act[l].data(), grad + L.w2, grad + L.b2, T, 4 * d,
                          d);
        for (size_t i = 0; i < d_pre.size(); ++i) {
            d_pre[i] = d_act[i] * gelu_grad(ws.mlp_pre[l][i]);
        }
        std::fill(d_ln.begin(), d_ln.end(), 0.0);
        linear_bwd_input(d_pre.data(), P + L.w1, d_ln.data(), T, d, 4 * d);
        linear_bwd_params(d_pre.data(), ws.ln2_out[l].data(), grad + L.w1, grad + L.b1, T, d,
                          4 * d);
        // dx already carries the residual passthrough; add the LN2 path.
        layernorm_bwd(d_ln.data(), P + L.ln2_g, ws.ln2_xhat[l].data(), ws.ln2_rstd[l].data(),
                      dx.data(), grad + L.ln2_g, grad + L.ln2_b, T, d);

        // ---- attention block ----
        std::copy(dx.begin(), dx.end(), d_proj.begin());
        if (drop) {
            apply_mask(d_proj.data(), ws.drop_attn[l].data(), td);
        }
        std::fill(d_o.begin(), d_o.end(), 0.0);
        linear_bwd_input(d_proj.data(), P + L.wo, d_o.data(), T, d, d);
        linear_bwd_params(d_proj.data(), ws.o[l].data(), grad + L.wo, grad + L.bo, T, d, d);

        std::fill(d_q.begin(), d_q.end(), 0.0);
        std::fill(d_k.begin(), d_k.end(), 0.0);
        std::fill(d_v.begin(), d_v.end(), 0.0);
        for (int h = 0; h < c.n_heads; ++h) {
            const int hs = h * dh;
            const double* att_h = ws.att[l].data() + static_cast<size_t>(h) * T * T;
            for (int t = 0; t < T; ++t) {
                const double* p_row = att_h + static_cast<size_t>(t) * T;
                const double* dot_ = d_o.data() + static_cast<size_t>(t) * d + hs;
                // dP and dV
                for (int u = 0; u <= t; ++u) {
                    d_att_row[static_cast<size_t>(u)] =
                        dot(dot_, ws.v[l].data() + static_cast<size_t>(u) * d + hs, dh);
                    axpy(d_v.data() + static_cast<size_t>(u) * d + hs, p_row[u], dot_, dh);
                }
                // softmax backward
                double inner = 0.0;
                for (int u = 0; u <= t; ++u) {
                    inner += p_row[u] * d_att_row[static_cast<size_t>(u)];
                }
                // scores backward
                const double* qt = ws.q[l].data() + static_cast<size_t>(t) * d + hs;
                double* dqt = d_q.data() + static_cast<size_t>(t) * d + hs;
                for (int u = 0; u <= t; ++u) {
                    const double ds =
                        p_row[u] * (d_att_row[static_cast<size_t>(u)] - inner) * inv_sqrt_dh;
                    axpy(dqt, ds, ws.k[l].data() + static_cast<size_t>(u) * d + hs, dh);
                    axpy(d_k.data() + static_cast<size_t>(u) * d + hs, ds, qt, dh);
                }
            }
        }

        std::fill(d_ln.begin(), d_ln.end(), 0.0);
        linear_bwd_input(d_q.data(), P + L.wq, d_ln.data(), T, d, d);
        linear_bwd_input(d_k.data(), P + L.wk, d_ln.data(), T, d, d);
        linear_bwd_input(d_v.data(), P + L.wv, d_ln.data(), T, d, d);
        linear_bwd_params(d_q.data(), ws.ln1_out[l].data(), grad + L.wq, grad + L.bq, T, d, d);
        linear_bwd_params(d_k.data(), ws.ln1_out[l].data(), grad + L.wk, grad + L.bk, T, d, d);
        linear_bwd_params(d_v.data(), ws.ln1_out[l].data(), grad + L.wv, grad + L.bv, T, d, d);
        layernorm_bwd(d_ln.data(), P + L.ln1_g, ws.ln1_xhat[l].data(), ws.ln1_rstd[l].data(),
                      dx.data(), grad + L.ln1_g, grad + L.ln1_b, T, d);
    }

    if (drop) {
        apply_mask(dx.data(), ws.drop_emb.data(), td);
    }
    compose_tokens_bwd(m, win, dx.data(), grad);
}

}  // namespace

// ----------------------------- public forward -----------------------------

namespace {
thread_local Workspace tl_workspace;
thread_local BwdScratch tl_bwd_scratch;
}  // namespace

ForwardOutput forward(const Model& m, const data::TrainingWindow& window, bool want_attention) {
    Workspace& ws = tl_workspace;
    run_forward(m, window, ws, nullptr, want_attention);
    ForwardOutput out;
    out.seq_len = ws.T;
    out.n_layers = m.config.n_layers;
    out.action_logits = ws.logits;
    if (m.config.value_head) {
        out.value_pred = ws.value;
    }
    if (want_attention) {
        const size_t per_layer = ws.att[0].size();
        out.attention.resize(static_cast<size_t>(m.config.n_layers) * per_layer);
        for (int l = 0; l < m.config.n_layers; ++l) {
            std::copy(ws.att[static_cast<size_t>(l)].begin(), ws.att[static_cast<size_t>(l)].end(),
                      out.attention.begin() + static_cast<size_t>(l) * per_layer);
        }
    }
    return out;
}

// ----------------------------- loss & gradients -----------------------------

namespace {

struct HeadGrads {
    std::vector<double> d_logits;
    std::vector<double> d_value;
    double ce_sum = 0.0;
    double mse_sum = 0.0;
};

// Per-token CE (+ value MSE) sums; gradients scaled by inv_total_tokens so the
// batch reduction is a plain sum.
HeadGrads head_loss(const ModelConfig& c, const data::TrainingWindow& win, const Workspace& ws,
                    double lambda_value, double inv_total_tokens) {
    const int T = ws.T;
    const int na = c.n_actions;
    HeadGrads hg;
    hg.d_logits.assign(static_cast<size_t>(T) * na, 0.0);
    hg.d_value.assign(static_cast<size_t>(T), 0.0);
    for (int t = 0; t < T; ++t) {
        const double* row = ws.logits.data() + static_cast<size_t>(t) * na;
        double mx = row[0];
        for (int i = 1; i < na; ++i) {
            mx = std::max(mx, row[i]);
        }
        double total = 0.0;
        for (int i = 0; i < na; ++i) {
            total += std::exp(row[i] - mx);
        }
        const double lse = mx + std::log(total);
        const int target = win.steps[static_cast<size_t>(t)].action;
        hg.ce_sum += lse - row[target];
        double* dl = hg.d_logits.data() + static_cast<size_t>(t) * na;
        for (int i = 0; i < na; ++i) {
            dl[i] = std::exp(row[i] - lse) * inv_total_tokens;
        }
        dl[target] -= inv_total_tokens;
        if (c.value_head && lambda_value > 0.0) {
            const double err =
                ws.value[static_cast<size_t>(t)] - win.steps[static_cast<size_t>(t)].v_hat;
            hg.mse_sum += err * err;
            hg.d_value[static_cast<size_t>(t)] = 2.0 * err * lambda_value * inv_total_tokens;
        }
    }
    return hg;
}

}  // namespace

LossBreakdown loss_and_grad(const Model& m, const std::vector<data::TrainingWindow>& batch,
                            double lambda_value, std::vector<double>& grad, Rng* dropout_rng) {
    if (lambda_value < 0.0) {
        throw InputError("lambda_value must be >= 0");
    }
    if (lambda_value > 0.0 && !m.config.value_head) {
        throw ConfigError("lambda_value > 0 requires a value head");
    }
    if (batch.empty()) {
        throw InputError("empty batch");
    }
    grad.assign(m.layout.total, 0.0);
    long total_tokens = 0;
    for (const auto& w : batch) {
        total_tokens += static_cast<long>(w.steps.size());
    }
    const double inv_total = 1.0 / static_cast<double>(total_tokens);

    LossBreakdown lb;
    lb.n_tokens = total_tokens;
    Workspace& ws = tl_workspace;
    for (const auto& win : batch) {
        run_forward(m, win, ws, dropout_rng);
        HeadGrads hg = head_loss(m.config, win, ws, lambda_value, inv_total);
        lb.action_ce += hg.ce_sum;
        lb.value_mse += hg.mse_sum;
        run_backward(m, win, ws, tl_bwd_scratch, hg.d_logits, hg.d_value, grad.data());
    }
    lb.action_ce *= inv_total;
    lb.value_mse *= inv_total;
    lb.total = lb.action_ce + lambda_value * lb.value_mse;
    if (!std::isfinite(lb.total)) {
        throw NumericError("loss is not finite (ce=" + std::to_string(lb.action_ce) +
                           ", mse=" + std::to_string(lb.value_mse) + ")");
    }
    return lb;
}

LossBreakdown loss_only(const Model& m, const std::vector<data::TrainingWindow>& batch,
                        double lambda_value) {
    if (lambda_value > 0.0 && !m.config.value_head) {
        throw ConfigError("lambda_value > 0 requires a value head");
    }
    LossBreakdown lb;
    Workspace& ws = tl_workspace;
    long total_tokens = 0;
    for (const auto& w : batch) {
        total_tokens += static_cast<long>(w.steps.size());
    }
    lb.n_tokens = total_tokens;
    for (const auto& win : batch) {
        run_forward(m, win, ws, nullptr);
        HeadGrads hg = head_loss(m.config, win, ws, lambda_value, 1.0);
        lb.action_ce += hg.ce_sum;
        lb.value_mse += hg.mse_sum;
    }
    lb.action_ce /= static_cast<double>(total_tokens);
    lb.value_mse /= static_cast<double>(total_tokens);
    lb.total = lb.action_ce + lambda_value * lb.value_mse;
    return lb;
}

// ----------------------------- optimizer -----------------------------

double lr_at(const OptimizerConfig& opt, long step) {
    if (opt.warmup_steps > 0 && step < opt.warmup_steps) {
        return opt.lr * static_cast<double>(step + 1) / opt.warmup_steps;
    }
    if (opt.total_steps > opt.warmup_steps) {
        const double progress = static_cast<double>(step - opt.warmup_steps) /
                                static_cast<double>(opt.total_steps - opt.warmup_steps);
        const double clamped = std::min(1.0, std::max(0.0, progress));
        const double cosine = 0.5 * (1.0 + std::cos(3.14159265358979323846 * clamped));
        return opt.lr * (opt.min_lr_frac + (1.0 - opt.min_lr_frac) * cosine);
    }
    return opt.lr;
}

void optimizer_step(Model& m, const std::vector<double>& grad, const OptimizerConfig& opt) {
    if (grad.size() != m.params.size()) {
        throw InputError("gradient size mismatch");
    }
    double norm_sq = 0.0;
    for (double g : grad) {
        if (!std::isfinite(g)) {
            throw NumericError("non-finite gradient");
        }
        norm_sq += g * g;
    }
    double scale = 1.0;
    if (opt.grad_clip > 0.0) {
        const double norm = std::sqrt(norm_sq);
        if (norm > opt.grad_clip) {
            scale = opt.grad_clip / norm;
        }
    }
    const double lr = lr_at(opt, m.adam.step);
    const long t = m.adam.step + 1;
    const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(t));
    for (size_t i = 0; i < m.params.size(); ++i) {
        const double g = grad[i] * scale;
        m.adam.m[i] = opt.beta1 * m.adam.m[i] + (1.0 - opt.beta1) * g;
        m.adam.v[i] = opt.beta2 * m.adam.v[i] + (1.0 - opt.beta2) * g * g;
        const double mhat = m.adam.m[i] / bc1;
        const double vhat = m.adam.v[i] / bc2;
        m.params[i] -= lr * mhat / (std::sqrt(vhat) + opt.eps);
    }
    m.adam.step = t;
}

// ----------------------------- attention export -----------------------------

// Final-layer head average as CSV rows.
std::string attention_csv(const ForwardOutput& out, int n_heads) {
    if (out.attention.empty()) {
        throw InputError("forward output carries no attention");
    }
    const int T = out.seq_len;
    const int last = out.n_layers - 1;
    std::string csv;
    csv.reserve(static_cast<size_t>(T) * T * 12);
    char buf[64];
    for (int t = 0; t < T; ++t) {
        for (int u = 0; u < T; ++u) {
            double mean = 0.0;
            for (int h = 0; h < n_heads; ++h) {
                mean += out.attention_row(last, h, t, n_heads)[u];
            }
            mean /= n_heads;
            std::snprintf(buf, sizeof(buf), "%.17g", mean);
            csv += buf;
            csv += (u + 1 == T) ? '\n' : ',';
        }
    }
    return csv;
}

void export_attention(const Model& m, const data::TrainingWindow& window,
                      const std::string& csv_path) {
    ForwardOutput out = forward(m, window, true);
    write_file_atomic(csv_path, attention_csv(out, m.config.n_heads));
}

// ----------------------------- incremental decode -----------------------------

DecodeState::DecodeState(const Model& m) : m_(m) {
    const size_t per_layer = static_cast<size_t>(m.config.max_context) * m.config.d_model;
    k_cache_.assign(static_cast<size_t>(m.config.n_layers) * per_layer, 0.0);
    v_cache_.assign(static_cast<size_t>(m.config.n_layers) * per_layer, 0.0);
    x_.assign(static_cast<size_t>(m.config.d_model), 0.0);
    scratch_.assign(static_cast<size_t>(m.config.d_model) * 4, 0.0);
    q_.assign(static_cast<size_t>(m.config.d_model), 0.0);
    att_.assign(static_cast<size_t>(m.config.max_context), 0.0);
}

void DecodeState::reset() { len_ = 0; }

void DecodeState::pop_token() {
    if (len_ == 0) {
        throw InputError("pop_token on empty context");
    }
    --len_;
}

DecodeState::StepOutput DecodeState::push_token(const TokenInput& input) {
    const auto& c = m_.config;
    const auto& lay = m_.layout;
    const int d = c.d_model;
    const int dh = d / c.n_heads;
    const int pos = len_;
    if (pos >= c.max_context) {
        throw InputError("decode context full; evict before pushing");
    }
    if (c.value_input && !input.v_hat.has_value()) {
        throw ConfigError("model expects v_hat in every token");
    }
    if (input.state < 0 || input.state >= c.state_vocab ||
        (c.coord_grid > 0 && input.state >= c.coord_grid * c.coord_grid)) {
        throw InputError("state index exceeds state_vocab");
    }
    const double* P = m_.params.data();

    // token composition (same slot rules as compose_tokens)
    {
        const double* se = P + lay.state_emb + static_cast<size_t>(input.state) * d;
        const double* pe = P + lay.pos_emb + static_cast<size_t>(pos) * d;
        const int prev_action = input.prev_action.value_or(c.n_actions);
        if (prev_action < 0 || prev_action > c.n_actions) {
            throw InputError("prev_action out of range");
        }
        const double* ae = P + lay.action_emb + static_cast<size_t>(prev_action) * d;
        for (int i = 0; i < d; ++i) {
            x_[static_cast<size_t>(i)] = se[i] + pe[i] + ae[i];
        }
        if (c.coord_grid > 0) {
            axpy(x_.data(), 1.0,
                 P + lay.col_emb + static_cast<size_t>(input.state % c.coord_grid) * d, d);
            axpy(x_.data(), 1.0,
                 P + lay.row_emb + static_cast<size_t>(input.state / c.coord_grid) * d, d);
        }
        if (input.prev_reward.has_value()) {
            axpy(x_.data(), *input.prev_reward, P + lay.reward_proj, d);
        } else {
            axpy(x_.data(), 1.0, P + lay.null_reward, d);
        }
        if (c.value_input) {
            axpy(x_.data(), *input.v_hat, P + lay.vhat_proj, d);
        }
    }

    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<double> ln(static_cast<size_t>(d)), xhat(static_cast<size_t>(d));
    std::vector<double> krow(static_cast<size_t>(d)), vrow(static_cast<size_t>(d)),
        orow(static_cast<size_t>(d));
    double rstd = 0.0;

    const size_t per_layer = static_cast<size_t>(c.max_context) * d;
    for (int l = 0; l < c.n_layers; ++l) {
        const auto& L = lay.layers[static_cast<size_t>(l)];
        layernorm_fwd(x_.data(), P + L.ln1_g, P + L.ln1_b, ln.data(), xhat.data(), &rstd, 1, d);
        linear_fwd(ln.data(), P + L.wq, P + L.bq, q_.data(), 1, d, d);
        linear_fwd(ln.data(), P + L.wk, P + L.bk, krow.data(), 1, d, d);
        linear_fwd(ln.data(), P + L.wv, P + L.bv, vrow.data(), 1, d, d);
        double* kc = k_cache_.data() + static_cast<size_t>(l) * per_layer;
        double* vc = v_cache_.data() + static_cast<size_t>(l) * per_layer;
        std::memcpy(kc + static_cast<size_t>(pos) * d, krow.data(),
                    static_cast<size_t>(d) * sizeof(double));
        std::memcpy(vc + static_cast<size_t>(pos) * d, vrow.data(),
                    static_cast<size_t>(d) * sizeof(double));

        std::fill(orow.begin(), orow.end(), 0.0);
        for (int h = 0; h < c.n_heads; ++h) {
            const int hs = h * dh;
            const double* qt = q_.data() + hs;
            for (int u = 0; u <= pos; ++u) {
                att_[static_cast<size_t>(u)] =
                    dot(qt, kc + static_cast<size_t>(u) * d + hs, dh) * inv_sqrt_dh;
            }
            softmax_row(att_.data(), pos + 1);
            for (int u = 0; u <= pos; ++u) {
                axpy(orow.data() + hs, att_[static_cast<size_t>(u)],
                     vc + static_cast<size_t>(u) * d + hs, dh);
            }
        }
        std::vector<double> proj(static_cast<size_t>(d));
        linear_fwd(orow.data(), P + L.wo, P + L.bo, proj.data(), 1, d, d);
        axpy(x_.data(), 1.0, proj.data(), d);

        layernorm_fwd(x_.data(), P + L.ln2_g, P + L.ln2_b, ln.data(), xhat.data(), &rstd, 1, d);
        linear_fwd(ln.data(), P + L.w1, P + L.b1, scratch_.data(), 1, d, 4 * d);
        for (int i = 0; i < 4 * d; ++i) {
            scratch_[static_cast<size_t>(i)] = gelu(scratch_[static_cast<size_t>(i)]);
        }
        linear_fwd(scratch_.data(), P + L.w2, P + L.b2, proj.data(), 1, 4 * d, d);
        axpy(x_.data(), 1.0, proj.data(), d);
    }

    layernorm_fwd(x_.data(), P + lay.lnf_g, P + lay.lnf_b, ln.data(), xhat.data(), &rstd, 1, d);
    StepOutput out;
    out.action_logits.assign(static_cast<size_t>(c.n_actions), 0.0);
    linear_fwd(ln.data(), P + lay.act_w, P + lay.act_b, out.action_logits.data(), 1, d,
               c.n_actions);
    if (c.value_head) {
        out.value_pred = dot(ln.data(), P + lay.val_w, d) + P[lay.val_b];
    }
    ++len_;
    return out;
}

// ----------------------------- checkpoint IO -----------------------------

namespace {

nlohmann::json config_to_json(const ModelConfig& c) {
    return {{"d_model", c.d_model},
            {"n_layers", c.n_layers},
            {"n_heads", c.n_heads},
            {"max_context", c.max_context},
            {"state_vocab", c.state_vocab},
            {"n_actions", c.n_actions},
            {"coord_grid", c.coord_grid},
            {"value_head", c.value_head},
            {"value_input", c.value_input},
            {"dropout", c.dropout},
            {"rng_seed", c.rng_seed}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.d_model = j.at("d_model").get<int>();
    c.n_layers = j.at("n_layers").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.max_context = j.at("max_context").get<int>();
    c.state_vocab = j.at("state_vocab").get<int>();
    c.n_actions = j.at("n_actions").get<int>();
    c.coord_grid = j.value("coord_grid", 0);
    c.value_head = j.at("value_head").get<bool>();
    c.value_input = j.at("value_input").get<bool>();
    c.dropout = j.at("dropout").get<double>();
    c.rng_seed = j.at("rng_seed").get<uint64_t>();
    return c;
}

}  // namespace

void save_checkpoint(const Model& m, const std::string& dir) {
    ensure_dir(dir);
    nlohmann::json manifest;
    manifest["config"] = config_to_json(m.config);
    manifest["adam_step"] = m.adam.step;
    manifest["blob"] = "params.bin";
    nlohmann::json tensors = nlohmann::json::array();
    for (const auto& spec : m.layout.tensors) {
        tensors.push_back(
            {{"name", spec.name}, {"rows", spec.rows}, {"cols", spec.cols}, {"offset", spec.offset}});
    }
    manifest["tensors"] = tensors;

    ByteWriter w;
    for (double v : m.params) {
        w.put_f64(v);
    }
    for (double v : m.adam.m) {
        w.put_f64(v);
    }
    for (double v : m.adam.v) {
        w.put_f64(v);
    }
    const uint32_t crc = crc32(w.bytes());
    w.put_u32(crc);
    write_file_atomic(dir + "/params.bin", w.bytes());
    write_file_atomic(dir + "/manifest.json", manifest.dump(2) + "\n");
}

Model load_checkpoint(const std::string& dir) {
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(read_file(dir + "/manifest.json"));
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("checkpoint manifest parse error: ") + e.what());
    }
    Model m;
    m.config = config_from_json(manifest.at("config"));
    m.layout = make_layout(m.config);
    const auto& tensors = manifest.at("tensors");
    if (tensors.size() != m.layout.tensors.size()) {
        throw VersionError("checkpoint tensor table does not match config");
    }
    for (size_t i = 0; i < m.layout.tensors.size(); ++i) {
        const auto& spec = m.layout.tensors[i];
        const auto& j = tensors[i];
        if (j.at("name").get<std::string>() != spec.name || j.at("rows").get<int>() != spec.rows ||
            j.at("cols").get<int>() != spec.cols ||
            j.at("offset").get<size_t>() != spec.offset) {
            throw VersionError("checkpoint tensor mismatch at " + spec.name);
        }
    }
    const std::string blob = read_file(dir + "/" + manifest.at("blob").get<std::string>());
    if (blob.size() < 4) {
        throw TruncatedError("checkpoint blob too small");
    }
    const std::string_view payload(blob.data(), blob.size() - 4);
    ByteReader crc_r(std::string_view(blob).substr(blob.size() - 4));
    if (crc32(payload) != crc_r.get_u32()) {
        throw ChecksumError("checkpoint blob checksum mismatch");
    }
    const size_t expect = m.layout.total * 3 * 8;
    if (payload.size() != expect) {
        throw TruncatedError("checkpoint blob has wrong size");
    }
    ByteReader r(payload);
    m.params.resize(m.layout.total);
    m.adam.m.resize(m.layout.total);
    m.adam.v.resize(m.layout.total);
    for (double& v : m.params) {
        v = r.get_f64();
    }
    for (double& v : m.adam.m) {
        v = r.get_f64();
    }
    for (double& v : m.adam.v) {
        v = r.get_f64();
    }
    m.adam.step = manifest.at("adam_step").get<long>();
    return m;
}

}  // namespace icrl::model

#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "levysbtm/common.hpp"
#include "levysbtm/rng.hpp"

#include <json.hpp>

namespace levysbtm {

// MLP score field s^theta: R^d -> R^d, Swish hidden activations, identity
// output. Weights are row-major [in x out].
struct ScoreNetwork {
    std::vector<int> layer_dims;
    std::vector<Vec> weights;
    std::vector<Vec> biases;
    std::uint64_t init_seed = 0;

    int input_dim() const { return layer_dims.front(); }
    int output_dim() const { return layer_dims.back(); }
    int n_layers() const { return static_cast<int>(weights.size()); }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (int l = 0; l < n_layers(); ++l) n += weights[l].size() + biases[l].size();
        return n;
    }
};

inline std::vector<int> default_layer_dims(int d) { return {d, 32, 32, 32, d}; }

// Glorot-uniform weights, zero biases, deterministic in the seed.
inline ScoreNetwork make_network(std::vector<int> layer_dims, std::uint64_t seed) {
    require(layer_dims.size() >= 2, "network needs at least input and output layers");
    ScoreNetwork net;
    net.layer_dims = std::move(layer_dims);
    net.init_seed = seed;
    RngStream rng(seed, 0x6e657477);
    for (std::size_t l = 0; l + 1 < net.layer_dims.size(); ++l) {
        int in = net.layer_dims[l], out = net.layer_dims[l + 1];
        double a = std::sqrt(6.0 / (in + out));
        Vec w(static_cast<std::size_t>(in) * out);
        for (double& x : w) x = rng.uniform(-a, a);
        net.weights.push_back(std::move(w));
        net.biases.push_back(Vec(out, 0.0));
    }
    return net;
}

namespace detail {
// Polynomial exp, |relative error| < 2e-11 on the clamped range. Plain
// arithmetic, so the hidden-activation loops auto-vectorize without
// fast-math flags and results are identical for any worker count.
inline double fast_exp(double x) {
    x = x < -40.0 ? -40.0 : (x > 40.0 ? 40.0 : x);  // sigmoid saturates beyond this
    const double log2e = 1.4426950408889634074;
    double t = x * log2e;
    double k = std::nearbyint(t);
    double f = t - k;  // |f| <= 0.5; 2^f by its degree-9 Taylor series in f ln 2
    const double c1 = 0.69314718055994530942, c2 = 0.24022650695910071233,
                 c3 = 0.05550410866482157618, c4 = 0.00961812910762847716,
                 c5 = 0.00133335581464284434, c6 = 0.00015403530393381609,
                 c7 = 0.00001525273380405984, c8 = 0.00000132154867901443,
                 c9 = 0.00000010178086009240;
    double p = c9;
    p = p * f + c8;
    p = p * f + c7;
    p = p * f + c6;
    p = p * f + c5;
    p = p * f + c4;
    p = p * f + c3;
    p = p * f + c2;
    p = p * f + c1;
    p = p * f + 1.0;
    // scale by 2^k through the exponent bits
    std::int64_t ik = static_cast<std::int64_t>(k) + 1023;
    double scale;
    std::uint64_t bits = static_cast<std::uint64_t>(ik) << 52;
    std::memcpy(&scale, &bits, sizeof(scale));
    return p * scale;
}
inline double sigmoid(double x) { return 1.0 / (1.0 + fast_exp(-x)); }
} // namespace detail

inline double swish(double x) { return x * detail::sigmoid(x); }

namespace detail {
// swish'(x) and swish''(x) expressed through the stored sigmoid value.
inline double swish_d1(double p, double s) { return s * (1.0 + p * (1.0 - s)); }
inline double swish_d2(double p, double s) { return s * (1.0 - s) * (2.0 + p * (1.0 - 2.0 * s)); }

// C[rows x out] = A[rows x in] * W[in x out] (+ bias), row-major.
inline void matmul_bias(const double* A, const double* W, const double* bias, double* C,
                        std::size_t rows, int in, int out) {
    for (std::size_t i = 0; i < rows; ++i) {
        double* c = C + i * out;
        if (bias)
            for (int j = 0; j < out; ++j) c[j] = bias[j];
        else
            for (int j = 0; j < out; ++j) c[j] = 0.0;
        const double* a = A + i * in;
        for (int k = 0; k < in; ++k) {
            double av = a[k];
            const double* w = W + static_cast<std::size_t>(k) * out;
            for (int j = 0; j < out; ++j) c[j] += av * w[j];
        }
    }
}

// C[rows x in] = D[rows x out] * Wt, Wt row-major [out x in] (the transposed
// weight block). Broadcast-accumulate form so the inner loop vectorizes.
inline void matmul_wt(const double* D, const double* Wt, double* C, std::size_t rows, int in, int out) {
    for (std::size_t i = 0; i < rows; ++i) {
        double* c = C + i * in;
        for (int k = 0; k < in; ++k) c[k] = 0.0;
        const double* drow = D + i * out;
        for (int j = 0; j < out; ++j) {
            double dv = drow[j];
            const double* w = Wt + static_cast<std::size_t>(j) * in;
            for (int k = 0; k < in; ++k) c[k] += dv * w[k];
        }
    }
}

inline void transpose(const double* W, double* Wt, int in, int out) {
    for (int k = 0; k < in; ++k)
        for (int j = 0; j < out; ++j) Wt[static_cast<std::size_t>(j) * in + k] = W[static_cast<std::size_t>(k) * out + j];
}

// dW[in x out] += A^T[in x rows] * D[rows x out].
inline void accumulate_wgrad(const double* A, const double* D, double* dW, std::size_t rows, int in, int out) {
    for (std::size_t i = 0; i < rows; ++i) {
        const double* a = A + i * in;
        const double* drow = D + i * out;
        for (int k = 0; k < in; ++k) {
            double av = a[k];
            double* w = dW + static_cast<std::size_t>(k) * out;
            for (int j = 0; j < out; ++j) w[j] += av * drow[j];
        }
    }
}
} // namespace detail

// Gradient (or moment) container congruent to the network parameters.
struct NetGrads {
    std::vector<Vec> weights;
    std::vector<Vec> biases;

    static NetGrads zeros_like(const ScoreNetwork& net) {
        NetGrads g;
        for (int l = 0; l < net.n_layers(); ++l) {
            g.weights.push_back(Vec(net.weights[l].size(), 0.0));
            g.biases.push_back(Vec(net.biases[l].size(), 0.0));
        }
        return g;
    }
    void add(const NetGrads& o) {
        for (std::size_t l = 0; l < weights.size(); ++l) {
            for (std::size_t i = 0; i < weights[l].size(); ++i) weights[l][i] += o.weights[l][i];
            for (std::size_t i = 0; i < biases[l].size(); ++i) biases[l][i] += o.biases[l][i];
        }
    }
    void scale(double c) {
        for (auto& w : weights)
            for (double& x : w) x *= c;
        for (auto& b : biases)
            for (double& x : b) x *= c;
    }
    bool finite() const {
        for (const auto& w : weights)
            for (double x : w)
                if (!std::isfinite(x)) return false;
        for (const auto& b : biases)
            for (double x : b)
                if (!std::isfinite(x)) return false;
        return true;
    }
};

// Forward activations (and optional input-direction tangents) for a batch,
// plus reusable reverse-pass scratch. Tangent stream c carries d s / d x_c
// through the network, which is the batched form of a dual-number sweep; the
// output tangents are the Jacobian columns used for exact divergences.
// Buffers only ever grow, so a workspace reused across equally-sized chunks
// never reallocates.
struct NetBatch {
    std::size_t rows = 0;
    int n_tangents = 0;
    std::vector<Vec> pre;        // pre[l]: [rows x dims[l+1]]
    std::vector<Vec> act;        // act[l]: activations after layer l (hidden: swish)
    std::vector<Vec> sig;        // sig[l]: sigmoid(pre[l]) for hidden layers
    std::vector<std::vector<Vec>> tpre;  // tpre[c][l]: tangent pre-activations
    std::vector<std::vector<Vec>> tact;  // tact[c][l]: tangent activations
    // reverse-pass scratch
    Vec dP, dA, dP_next;
    std::vector<Vec> dTP, dTA;
    std::vector<Vec> wt;         // per-layer transposed weights
};

// Value (and tangent) forward pass over rows of X [rows x d].
inline void batch_forward(const ScoreNetwork& net, const double* X, std::size_t rows,
                          NetBatch& ws, int n_tangents = 0) {
    using namespace detail;
    const int L = net.n_layers();
    ws.rows = rows;
    ws.n_tangents = n_tangents;
    if (static_cast<int>(ws.pre.size()) != L) {
        ws.pre.resize(L);
        ws.act.resize(L);
        ws.sig.resize(L);
    }
    if (static_cast<int>(ws.tpre.size()) < n_tangents) {
        ws.tpre.resize(n_tangents, std::vector<Vec>(L));
        ws.tact.resize(n_tangents, std::vector<Vec>(L));
    }
    for (int c = 0; c < n_tangents; ++c)
        if (static_cast<int>(ws.tpre[c].size()) != L) {
            ws.tpre[c].resize(L);
            ws.tact[c].resize(L);
        }

    const double* a_prev = X;
    for (int l = 0; l < L; ++l) {
        int in = net.layer_dims[l], out = net.layer_dims[l + 1];
        ws.pre[l].resize(rows * out);
        matmul_bias(a_prev, net.weights[l].data(), net.biases[l].data(), ws.pre[l].data(), rows, in, out);
        if (l + 1 < L) {
            ws.sig[l].resize(rows * out);
            ws.act[l].resize(rows * out);
            const double* p = ws.pre[l].data();
            double* sg = ws.sig[l].data();
            double* ac = ws.act[l].data();
            for (std::size_t i = 0; i < rows * out; ++i) {
                double s = sigmoid(p[i]);
                sg[i] = s;
                ac[i] = p[i] * s;
            }
            a_prev = ws.act[l].data();
        } else {
            ws.act[l] = ws.pre[l];  // identity output
            a_prev = ws.act[l].data();
        }
    }
    for (int c = 0; c < n_tangents; ++c) {
        // tangent input is the unit direction e_c for every row
        const double* t_prev = nullptr;
        for (int l = 0; l < L; ++l) {
            int in = net.layer_dims[l], out = net.layer_dims[l + 1];
            Vec& tp = ws.tpre[c][l];
            tp.resize(rows * out);
            if (l == 0) {
                // e_c * W: copy row c of W to every row
                const double* wrow = net.weights[0].data() + static_cast<std::size_t>(c) * out;
                for (std::size_t i = 0; i < rows; ++i)
                    for (int j = 0; j < out; ++j) tp[i * out + j] = wrow[j];
            } else {
                matmul_bias(t_prev, net.weights[l].data(), nullptr, tp.data(), rows, in, out);
            }
            if (l + 1 < L) {
                Vec& ta = ws.tact[c][l];
                ta.resize(rows * out);
                const double* p = ws.pre[l].data();
                const double* sg = ws.sig[l].data();
                for (std::size_t i = 0; i < rows * out; ++i)
                    ta[i] = swish_d1(p[i], sg[i]) * tp[i];
                t_prev = ta.data();
            } else {
                ws.tact[c][l] = tp;  // Jacobian column c at the output
            }
        }
    }
}

// Reverse pass. dS [rows x d_out] is the upstream gradient on the outputs;
// dJ (optional) holds per-tangent upstream gradients on the Jacobian columns.
// Parameter gradients are accumulated into g. X is the batch input.
inline void batch_backward(const ScoreNetwork& net, const double* X, NetBatch& ws,
                           const double* dS, const std::vector<Vec>* dJ, NetGrads& g) {
    using namespace detail;
    const int L = net.n_layers();
    const std::size_t rows = ws.rows;
    const int nt = ws.n_tangents;

    ws.dP.assign(dS, dS + rows * net.output_dim());
    if (static_cast<int>(ws.dTP.size()) < nt) {
        ws.dTP.resize(nt);
        ws.dTA.resize(nt);
    }
    for (int c = 0; c < nt; ++c) {
        if (dJ) {
            ws.dTP[c].assign((*dJ)[c].begin(), (*dJ)[c].end());
        } else {
            ws.dTP[c].assign(rows * net.output_dim(), 0.0);
        }
    }
    if (static_cast<int>(ws.wt.size()) != L) ws.wt.resize(L);
    for (int l = 1; l < L; ++l) {
        ws.wt[l].resize(net.weights[l].size());
        transpose(net.weights[l].data(), ws.wt[l].data(), net.layer_dims[l], net.layer_dims[l + 1]);
    }

    for (int l = L - 1; l >= 0; --l) {
        int in = net.layer_dims[l], out = net.layer_dims[l + 1];
        const double* a_prev = (l == 0) ? X : ws.act[l - 1].data();

        accumulate_wgrad(a_prev, ws.dP.data(), g.weights[l].data(), rows, in, out);
        for (std::size_t i = 0; i < rows; ++i) {
            const double* drow = ws.dP.data() + i * out;
            for (int j = 0; j < out; ++j) g.biases[l][j] += drow[j];
        }
        for (int c = 0; c < nt; ++c) {
            if (l == 0) {
                // tangent input is constant e_c: contributes to weight row c only
                double* wrow = g.weights[0].data() + static_cast<std::size_t>(c) * out;
                for (std::size_t i = 0; i < rows; ++i) {
                    const double* drow = ws.dTP[c].data() + i * out;
                    for (int j = 0; j < out; ++j) wrow[j] += drow[j];
                }
            } else {
                accumulate_wgrad(ws.tact[c][l - 1].data(), ws.dTP[c].data(), g.weights[l].data(),
                                 rows, in, out);
            }
        }

        if (l == 0) break;

        ws.dA.resize(rows * static_cast<std::size_t>(in));
        matmul_wt(ws.dP.data(), ws.wt[l].data(), ws.dA.data(), rows, in, out);
        for (int c = 0; c < nt; ++c) {
            ws.dTA[c].resize(rows * static_cast<std::size_t>(in));
            matmul_wt(ws.dTP[c].data(), ws.wt[l].data(), ws.dTA[c].data(), rows, in, out);
        }

        // through the hidden activation of layer l-1
        const std::size_t hid_n = rows * static_cast<std::size_t>(in);
        ws.dP_next.resize(hid_n);
        const double* p = ws.pre[l - 1].data();
        const double* sg = ws.sig[l - 1].data();
        if (nt == 0) {
            for (std::size_t i = 0; i < hid_n; ++i)
                ws.dP_next[i] = swish_d1(p[i], sg[i]) * ws.dA[i];
        } else {
            for (std::size_t i = 0; i < hid_n; ++i) {
                double acc = swish_d1(p[i], sg[i]) * ws.dA[i];
                for (int c = 0; c < nt; ++c)
                    acc += swish_d2(p[i], sg[i]) * ws.tpre[c][l - 1][i] * ws.dTA[c][i];
                ws.dP_next[i] = acc;
            }
        }
        for (int c = 0; c < nt; ++c) {
            Vec& dtp = ws.dTP[c];
            dtp.resize(hid_n);
            for (std::size_t i = 0; i < hid_n; ++i) dtp[i] = swish_d1(p[i], sg[i]) * ws.dTA[c][i];
        }
        std::swap(ws.dP, ws.dP_next);
    }
}

// Single-point forward evaluation.
inline Vec forward(const ScoreNetwork& net, const Vec& x) {
    require(static_cast<int>(x.size()) == net.input_dim(), "forward: dimension mismatch");
    NetBatch ws;
    batch_forward(net, x.data(), 1, ws);
    return ws.act.back();
}

// Exact divergence at x via input-direction tangent sweeps. Without
// sigma_fn this is trace(ds/dx); with it, div(Sigma s) = <Sigma, J> + (div Sigma) . s,
// requiring sigma_div alongside.
inline double divergence(const ScoreNetwork& net, const Vec& x,
                         const std::function<Vec(const Vec&)>& sigma_fn = nullptr,
                         const std::function<Vec(const Vec&)>& sigma_div = nullptr) {
    require(static_cast<int>(x.size()) == net.input_dim(), "divergence: dimension mismatch");
    require(!sigma_fn || static_cast<bool>(sigma_div), "divergence: sigma_fn requires sigma_div");
    const int d = net.input_dim();
    NetBatch ws;
    batch_forward(net, x.data(), 1, ws, d);
    if (!sigma_fn) {
        double tr = 0.0;
        for (int c = 0; c < d; ++c) tr += ws.tact[c].back()[c];
        return tr;
    }
    Vec S = ws.act.back();
    Vec sig = sigma_fn(x);   // row-major d x d
    Vec sdv = sigma_div(x);
    require(static_cast<int>(sig.size()) == d * d && static_cast<int>(sdv.size()) == d,
            "divergence: sigma matrix/vector dimension mismatch");
    double acc = 0.0;
    for (int c = 0; c < d; ++c) {
        const Vec& jcol = ws.tact[c].back();  // ds_i/dx_c, i = 0..d-1
        for (int i = 0; i < d; ++i) acc += sig[i * d + c] * jcol[i];
    }
    for (int i = 0; i < d; ++i) acc += sdv[i] * S[i];
    return acc;
}

// Adam optimizer state; moments congruent to the parameters.
struct AdamState {
    long step = 0;
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    NetGrads m, v;

    static AdamState init(const ScoreNetwork& net, double lr = 1e-4) {
        AdamState s;
        s.learning_rate = lr;
        s.m = NetGrads::zeros_like(net);
        s.v = NetGrads::zeros_like(net);
        return s;
    }
};

inline void adam_step(ScoreNetwork& net, AdamState& st, const NetGrads& grad) {
    if (!grad.finite()) throw NumericError("adam_step: non-finite gradient (training diverged)");
    ++st.step;
    double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
    double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
    for (int l = 0; l < net.n_layers(); ++l) {
        auto update = [&](Vec& theta, Vec& m, Vec& v, const Vec& g) {
            for (std::size_t i = 0; i < theta.size(); ++i) {
                m[i] = st.beta1 * m[i] + (1.0 - st.beta1) * g[i];
                v[i] = st.beta2 * v[i] + (1.0 - st.beta2) * g[i] * g[i];
                double mhat = m[i] / bc1;
                double vhat = v[i] / bc2;
                theta[i] -= st.learning_rate * mhat / (std::sqrt(vhat) + st.eps);
                if (!std::isfinite(theta[i]))
                    throw NumericError("adam_step: non-finite parameter (training diverged)");
            }
        };
        update(net.weights[l], st.m.weights[l], st.v.weights[l], grad.weights[l]);
        update(net.biases[l], st.m.biases[l], st.v.biases[l], grad.biases[l]);
    }
}

// Product of layer Frobenius norms: an explicit Lipschitz bound used by the
// property tests.
inline double frobenius_product(const ScoreNetwork& net) {
    double prod = 1.0;
    for (const auto& w : net.weights) prod *= std::sqrt(dot(w, w));
    return prod;
}

// Checkpoint: JSON header plus the flat parameter list (64-bit doubles,
// round-trip printed).
inline void save_network(const ScoreNetwork& net, const std::string& path) {
    nlohmann::json j;
    j["layer_dims"] = net.layer_dims;
    j["activation"] = "swish";
    j["seed"] = net.init_seed;
    Vec flat;
    for (int l = 0; l < net.n_layers(); ++l) {
        flat.insert(flat.end(), net.weights[l].begin(), net.weights[l].end());
        flat.insert(flat.end(), net.biases[l].begin(), net.biases[l].end());
    }
    j["params"] = flat;
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write network checkpoint '" + path + "'");
    out << j.dump() << "\n";
}

inline ScoreNetwork load_network(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read network checkpoint '" + path + "'");
    nlohmann::json j;
    in >> j;
    ScoreNetwork net = make_network(j.at("layer_dims").get<std::vector<int>>(),
                                    j.at("seed").get<std::uint64_t>());
    Vec flat = j.at("params").get<Vec>();
    std::size_t pos = 0;
    for (int l = 0; l < net.n_layers(); ++l) {
        for (double& x : net.weights[l]) x = flat.at(pos++);
        for (double& x : net.biases[l]) x = flat.at(pos++);
    }
    require(pos == flat.size(), "network checkpoint has trailing parameters");
    return net;
}

} // namespace levysbtm

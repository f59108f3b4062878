#include "trainer.hpp"

#include <cmath>
#include <cstdio>
#include <deque>

#include "steerlab/reference.hpp"

namespace steerlab {

namespace {

// rowwise layernorm keeping xhat and 1/std for the backward pass
void ln_rows_forward(const scalar* x, const scalar* g, const scalar* b, scalar* out, scalar* xhat,
                     double* inv_std, int rows, int C) {
    for (int r = 0; r < rows; ++r) {
        const scalar* xr = x + static_cast<size_t>(r) * C;
        scalar* outr = out + static_cast<size_t>(r) * C;
        scalar* xhr = xhat + static_cast<size_t>(r) * C;
        double mean = 0.0;
        for (int j = 0; j < C; ++j) mean += static_cast<double>(xr[j]);
        mean /= C;
        double var = 0.0;
        for (int j = 0; j < C; ++j) {
            const double d = static_cast<double>(xr[j]) - mean;
            var += d * d;
        }
        var /= C;
        const double inv = 1.0 / std::sqrt(var + kLnEps);
        inv_std[r] = inv;
        for (int j = 0; j < C; ++j) {
            const double h = (static_cast<double>(xr[j]) - mean) * inv;
            xhr[j] = static_cast<scalar>(h);
            outr[j] = static_cast<scalar>(h * static_cast<double>(g[j]) +
                                          static_cast<double>(b[j]));
        }
    }
}

void ln_rows_backward(const scalar* dy, const scalar* xhat, const double* inv_std,
                      const scalar* g, scalar* dx_acc, scalar* dg, scalar* db, int rows, int C) {
    for (int r = 0; r < rows; ++r) {
        const scalar* dyr = dy + static_cast<size_t>(r) * C;
        const scalar* xhr = xhat + static_cast<size_t>(r) * C;
        scalar* dxr = dx_acc + static_cast<size_t>(r) * C;
        double sum_dyg = 0.0, sum_dyg_xhat = 0.0;
        for (int j = 0; j < C; ++j) {
            const double dyg = static_cast<double>(dyr[j]) * static_cast<double>(g[j]);
            sum_dyg += dyg;
            sum_dyg_xhat += dyg * static_cast<double>(xhr[j]);
            dg[j] += static_cast<scalar>(static_cast<double>(dyr[j]) * static_cast<double>(xhr[j]));
            db[j] += dyr[j];
        }
        const double mean_dyg = sum_dyg / C;
        const double mean_dyg_xhat = sum_dyg_xhat / C;
        for (int j = 0; j < C; ++j) {
            const double dyg = static_cast<double>(dyr[j]) * static_cast<double>(g[j]);
            dxr[j] += static_cast<scalar>(inv_std[r] *
                                          (dyg - mean_dyg -
                                           static_cast<double>(xhr[j]) * mean_dyg_xhat));
        }
    }
}

struct LayerGrads {
    Tensor ln1_g, ln1_b, wq, wk, wv, wo, ln2_g, ln2_b, w1, w2;
};

struct Grads {
    Tensor tok_emb;
    std::vector<LayerGrads> layers;
    Tensor lnf_g, lnf_b;
    Tensor unembed;

    explicit Grads(const TransformerModel& m) {
        tok_emb = Tensor::zeros(m.tok_emb.shape());
        for (const auto& lw : m.layers) {
            LayerGrads g;
            g.ln1_g = Tensor::zeros(lw.ln1_g.shape());
            g.ln1_b = Tensor::zeros(lw.ln1_b.shape());
            g.wq = Tensor::zeros(lw.wq.shape());
            g.wk = Tensor::zeros(lw.wk.shape());
            g.wv = Tensor::zeros(lw.wv.shape());
            g.wo = Tensor::zeros(lw.wo.shape());
            g.ln2_g = Tensor::zeros(lw.ln2_g.shape());
            g.ln2_b = Tensor::zeros(lw.ln2_b.shape());
            g.w1 = Tensor::zeros(lw.w1.shape());
            g.w2 = Tensor::zeros(lw.w2.shape());
            layers.push_back(std::move(g));
        }
        lnf_g = Tensor::zeros(m.lnf_g.shape());
        lnf_b = Tensor::zeros(m.lnf_b.shape());
        unembed = Tensor::zeros(m.unembed.shape());
    }

    void zero() {
        auto z = [](Tensor& t) {
            for (auto& v : t.values()) v = scalar(0);
        };
        z(tok_emb);
        for (auto& g : layers) {
            z(g.ln1_g); z(g.ln1_b); z(g.wq); z(g.wk); z(g.wv); z(g.wo);
            z(g.ln2_g); z(g.ln2_b); z(g.w1); z(g.w2);
        }
        z(lnf_g); z(lnf_b); z(unembed);
    }
};

std::vector<std::pair<Tensor*, Tensor*>> param_grad_pairs(TransformerModel& m, Grads& g) {
    std::vector<std::pair<Tensor*, Tensor*>> out;
    out.emplace_back(&m.tok_emb, &g.tok_emb);
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        auto& lw = m.layers[l];
        auto& lg = g.layers[l];
        out.emplace_back(&lw.ln1_g, &lg.ln1_g);
        out.emplace_back(&lw.ln1_b, &lg.ln1_b);
        out.emplace_back(&lw.wq, &lg.wq);
        out.emplace_back(&lw.wk, &lg.wk);
        out.emplace_back(&lw.wv, &lg.wv);
        out.emplace_back(&lw.wo, &lg.wo);
        out.emplace_back(&lw.ln2_g, &lg.ln2_g);
        out.emplace_back(&lw.ln2_b, &lg.ln2_b);
        out.emplace_back(&lw.w1, &lg.w1);
        out.emplace_back(&lw.w2, &lg.w2);
    }
    out.emplace_back(&m.lnf_g, &g.lnf_g);
    out.emplace_back(&m.lnf_b, &g.lnf_b);
    out.emplace_back(&m.unembed, &g.unembed);
    return out;
}

// per-layer activations kept for the backward pass
struct LayerState {
    std::vector<scalar> x_in, h1, xhat1, q, k, v, attw, attn, x_mid, h2, xhat2, mid, x_out;
    std::vector<double> inv1, inv2;
};

} // namespace

ReferenceForward reference_forward(const TransformerModel& model, const std::vector<int>& tokens) {
    const auto& cfg = model.config;
    if (tokens.empty()) throw ArgumentError("reference_forward requires tokens");
    if (static_cast<int>(tokens.size()) > cfg.max_seq_len) {
        throw CapacityError("sequence exceeds max_seq_len");
    }
    const int T = static_cast<int>(tokens.size());
    const int C = cfg.d_model, H = cfg.n_heads, D = cfg.d_head, F = cfg.d_mlp, V = cfg.vocab_size;
    const int L = cfg.n_layers;

    std::vector<scalar> x(static_cast<size_t>(T) * C);
    for (int t = 0; t < T; ++t) {
        const int token = tokens[static_cast<size_t>(t)];
        if (token < 0 || token >= V) throw VocabError("token id out of range");
        std::vector<scalar> pe(static_cast<size_t>(C));
        position_encoding(t, C, pe.data());
        const scalar* row = model.tok_emb.data() + static_cast<size_t>(token) * C;
        for (int j = 0; j < C; ++j) {
            x[static_cast<size_t>(t) * C + j] = row[j] + pe[static_cast<size_t>(j)];
        }
    }

    ReferenceForward out;
    out.head_outputs = Tensor::zeros({T, L, H, D});

    std::vector<scalar> h1(static_cast<size_t>(T) * C), xhat(static_cast<size_t>(T) * C);
    std::vector<double> inv(static_cast<size_t>(T));
    std::vector<scalar> q(static_cast<size_t>(T) * C), k(static_cast<size_t>(T) * C),
        v(static_cast<size_t>(T) * C), attn(static_cast<size_t>(T) * C),
        tmp(static_cast<size_t>(T) * std::max(C, F));
    const double scale = 1.0 / std::sqrt(static_cast<double>(D));

    for (int l = 0; l < L; ++l) {
        const auto& lw = model.layers[static_cast<size_t>(l)];
        ln_rows_forward(x.data(), lw.ln1_g.data(), lw.ln1_b.data(), h1.data(), xhat.data(),
                        inv.data(), T, C);
        kernels::mm(h1.data(), lw.wq.data(), q.data(), T, C, C);
        kernels::mm(h1.data(), lw.wk.data(), k.data(), T, C, C);
        kernels::mm(h1.data(), lw.wv.data(), v.data(), T, C, C);

        std::vector<scalar> w(static_cast<size_t>(T));
        for (int h = 0; h < H; ++h) {
            for (int t = 0; t < T; ++t) {
                const scalar* qh = q.data() + static_cast<size_t>(t) * C + h * D;
                for (int s = 0; s <= t; ++s) {
                    w[static_cast<size_t>(s)] = static_cast<scalar>(
                        kernels::dot(qh, k.data() + static_cast<size_t>(s) * C + h * D, D) * scale);
                }
                kernels::softmax_inplace(w.data(), t + 1);
                scalar* oh = attn.data() + static_cast<size_t>(t) * C + h * D;
                for (int d = 0; d < D; ++d) {
                    double acc = 0.0;
                    for (int s = 0; s <= t; ++s) {
                        acc += static_cast<double>(w[static_cast<size_t>(s)]) *
                               static_cast<double>(v[static_cast<size_t>(s) * C + h * D + d]);
                    }
                    oh[d] = static_cast<scalar>(acc);
                }
            }
        }
        // copy the per-head tap values
        for (int t = 0; t < T; ++t) {
            for (int h = 0; h < H; ++h) {
                scalar* dst = out.head_outputs.data() +
                              ((static_cast<size_t>(t) * L + l) * H + h) * D;
                const scalar* src = attn.data() + static_cast<size_t>(t) * C + h * D;
                for (int d = 0; d < D; ++d) dst[d] = src[d];
            }
        }

        kernels::mm(attn.data(), lw.wo.data(), tmp.data(), T, C, C);
        for (std::size_t j = 0; j < static_cast<size_t>(T) * C; ++j) x[j] += tmp[j];

        ln_rows_forward(x.data(), lw.ln2_g.data(), lw.ln2_b.data(), h1.data(), xhat.data(),
                        inv.data(), T, C);
        kernels::mm(h1.data(), lw.w1.data(), tmp.data(), T, C, F);
        for (std::size_t j = 0; j < static_cast<size_t>(T) * F; ++j) {
            tmp[j] = tmp[j] > scalar(0) ? tmp[j] : scalar(0);
        }
        std::vector<scalar> mlp_out(static_cast<size_t>(T) * C);
        kernels::mm(tmp.data(), lw.w2.data(), mlp_out.data(), T, F, C);
        for (std::size_t j = 0; j < static_cast<size_t>(T) * C; ++j) x[j] += mlp_out[j];
    }

    ln_rows_forward(x.data(), model.lnf_g.data(), model.lnf_b.data(), h1.data(), xhat.data(),
                    inv.data(), T, C);
    out.logits = Tensor::zeros({T, V});
    kernels::mm(h1.data(), model.unembed.data(), out.logits.data(), T, C, V);
    return out;
}

namespace train {

TrainerResult train_lm(TransformerModel& model,
                       const std::function<TrainDocument(Rng&)>& sample_doc,
                       const TrainerConfig& config) {
    const auto& cfg = model.config;
    const int C = cfg.d_model, H = cfg.n_heads, D = cfg.d_head, F = cfg.d_mlp, V = cfg.vocab_size;
    const int L = cfg.n_layers;
    const int B = config.batch_size;
    if (B < 1 || config.steps < 0) throw ArgumentError("bad trainer config");

    Rng rng(config.seed);
    Grads grads(model);
    Grads velocity(model);
    auto pairs = param_grad_pairs(model, grads);
    auto vel_pairs = param_grad_pairs(model, velocity);

    std::vector<LayerState> states(static_cast<size_t>(L));
    std::vector<scalar> x0, xf, xf_hat, logits;
    std::vector<double> invf;
    std::vector<int> tokens;
    std::vector<std::uint8_t> mask;

    std::vector<scalar> pos_table(static_cast<size_t>(cfg.max_seq_len) * C);
    for (int t = 0; t < cfg.max_seq_len; ++t) {
        position_encoding(t, C, pos_table.data() + static_cast<size_t>(t) * C);
    }

    TrainerResult result;
    std::deque<double> recent;
    const double scale = 1.0 / std::sqrt(static_cast<double>(D));

    for (int step = 0; step < config.steps; ++step) {
        // assemble the batch, padded to its own longest document
        std::vector<TrainDocument> docs;
        int T = 1;
        for (int b = 0; b < B; ++b) {
            docs.push_back(sample_doc(rng));
            if (docs.back().tokens.empty()) throw ArgumentError("empty training document");
            if (static_cast<int>(docs.back().tokens.size()) > cfg.max_seq_len) {
                throw CapacityError("training document exceeds max_seq_len");
            }
            T = std::max(T, static_cast<int>(docs.back().tokens.size()));
        }
        const std::size_t R = static_cast<size_t>(B) * T; // rows
        tokens.assign(R, cfg.eos_token_id);
        mask.assign(R, 0);
        for (int b = 0; b < B; ++b) {
            const auto& d = docs[static_cast<size_t>(b)];
            for (std::size_t t = 0; t < d.tokens.size(); ++t) {
                tokens[static_cast<size_t>(b) * T + t] = d.tokens[t];
                mask[static_cast<size_t>(b) * T + t] = d.target_mask[t];
            }
        }

        // ---- forward ----
        x0.assign(R * C, scalar(0));
        for (int b = 0; b < B; ++b) {
            for (int t = 0; t < T; ++t) {
                const std::size_t r = static_cast<size_t>(b) * T + t;
                const scalar* row = model.tok_emb.data() + static_cast<size_t>(tokens[r]) * C;
                const scalar* pe = pos_table.data() + static_cast<size_t>(t) * C;
                scalar* dst = x0.data() + r * C;
                for (int j = 0; j < C; ++j) dst[j] = row[j] + pe[j];
            }
        }

        std::vector<scalar>* x = &x0;
        for (int l = 0; l < L; ++l) {
            auto& st = states[static_cast<size_t>(l)];
            const auto& lw = model.layers[static_cast<size_t>(l)];
            st.x_in = *x;
            st.h1.assign(R * C, scalar(0));
            st.xhat1.assign(R * C, scalar(0));
            st.inv1.assign(R, 0.0);
            ln_rows_forward(st.x_in.data(), lw.ln1_g.data(), lw.ln1_b.data(), st.h1.data(),
                            st.xhat1.data(), st.inv1.data(), static_cast<int>(R), C);
            st.q.assign(R * C, scalar(0));
            st.k.assign(R * C, scalar(0));
            st.v.assign(R * C, scalar(0));
            kernels::mm(st.h1.data(), lw.wq.data(), st.q.data(), static_cast<int>(R), C, C);
            kernels::mm(st.h1.data(), lw.wk.data(), st.k.data(), static_cast<int>(R), C, C);
            kernels::mm(st.h1.data(), lw.wv.data(), st.v.data(), static_cast<int>(R), C, C);

            st.attw.assign(static_cast<size_t>(B) * H * T * T, scalar(0));
            st.attn.assign(R * C, scalar(0));
            for (int b = 0; b < B; ++b) {
                for (int h = 0; h < H; ++h) {
                    for (int t = 0; t < T; ++t) {
                        const std::size_t row = (static_cast<size_t>(b) * T + t);
                        scalar* w = st.attw.data() +
                                    ((static_cast<size_t>(b) * H + h) * T + t) * T;
                        const scalar* qh = st.q.data() + row * C + h * D;
                        for (int s = 0; s <= t; ++s) {
                            const scalar* ks =
                                st.k.data() + (static_cast<size_t>(b) * T + s) * C + h * D;
                            w[s] = static_cast<scalar>(kernels::dot(qh, ks, D) * scale);
                        }
                        kernels::softmax_inplace(w, t + 1);
                        scalar* oh = st.attn.data() + row * C + h * D;
                        for (int d = 0; d < D; ++d) {
                            double acc = 0.0;
                            for (int s = 0; s <= t; ++s) {
                                acc += static_cast<double>(w[s]) *
                                       static_cast<double>(
                                           st.v[(static_cast<size_t>(b) * T + s) * C + h * D + d]);
                            }
                            oh[d] = static_cast<scalar>(acc);
                        }
                    }
                }
            }

            st.x_mid.assign(R * C, scalar(0));
            kernels::mm(st.attn.data(), lw.wo.data(), st.x_mid.data(), static_cast<int>(R), C, C);
            for (std::size_t j = 0; j < R * C; ++j) st.x_mid[j] += st.x_in[j];

            st.h2.assign(R * C, scalar(0));
            st.xhat2.assign(R * C, scalar(0));
            st.inv2.assign(R, 0.0);
            ln_rows_forward(st.x_mid.data(), lw.ln2_g.data(), lw.ln2_b.data(), st.h2.data(),
                            st.xhat2.data(), st.inv2.data(), static_cast<int>(R), C);
            st.mid.assign(R * F, scalar(0));
            kernels::mm(st.h2.data(), lw.w1.data(), st.mid.data(), static_cast<int>(R), C, F);
            for (auto& m : st.mid) m = m > scalar(0) ? m : scalar(0);
            st.x_out.assign(R * C, scalar(0));
            kernels::mm(st.mid.data(), lw.w2.data(), st.x_out.data(), static_cast<int>(R), F, C);
            for (std::size_t j = 0; j < R * C; ++j) st.x_out[j] += st.x_mid[j];
            x = &st.x_out;
        }

        xf.assign(R * C, scalar(0));
        xf_hat.assign(R * C, scalar(0));
        invf.assign(R, 0.0);
        ln_rows_forward(x->data(), model.lnf_g.data(), model.lnf_b.data(), xf.data(),
                        xf_hat.data(), invf.data(), static_cast<int>(R), C);
        logits.assign(R * static_cast<size_t>(V), scalar(0));
        kernels::mm(xf.data(), model.unembed.data(), logits.data(), static_cast<int>(R), C, V);

        // ---- loss: next-token CE on masked targets ----
        // position r predicts tokens[r+1]; targets are rows where mask[r+1]=1
        int n_targets = 0;
        for (int b = 0; b < B; ++b) {
            for (int t = 0; t + 1 < T; ++t) {
                if (mask[static_cast<size_t>(b) * T + t + 1]) ++n_targets;
            }
        }
        if (n_targets == 0) throw ArgumentError("batch contains no loss targets");

        double loss = 0.0;
        std::vector<scalar>& dlogits = logits; // softmax in place, then turn into gradient
        for (int b = 0; b < B; ++b) {
            for (int t = 0; t < T; ++t) {
                const std::size_t r = static_cast<size_t>(b) * T + t;
                scalar* lr = dlogits.data() + r * static_cast<size_t>(V);
                const bool is_target = t + 1 < T && mask[r + 1];
                if (!is_target) {
                    for (int j = 0; j < V; ++j) lr[j] = scalar(0);
                    continue;
                }
                kernels::softmax_inplace(lr, V);
                const int target = tokens[r + 1];
                loss -= std::log(std::max(1e-30, static_cast<double>(lr[target])));
                for (int j = 0; j < V; ++j) {
                    lr[j] = static_cast<scalar>(static_cast<double>(lr[j]) / n_targets);
                }
                lr[target] -= static_cast<scalar>(1.0 / n_targets);
            }
        }
        loss /= n_targets;
        if (!std::isfinite(loss)) {
            throw TrainingError("training diverged: loss is not finite at step " +
                                std::to_string(step));
        }
        if (step == 0) result.initial_loss = loss;
        recent.push_back(loss);
        if (recent.size() > 50) recent.pop_front();
        if (config.log_every > 0 && (step % config.log_every == 0 || step + 1 == config.steps)) {
            std::fprintf(stderr, "step %5d  loss %.4f\n", step, loss);
        }

        // ---- backward ----
        grads.zero();
        std::vector<scalar> dxf(R * C, scalar(0));
        kernels::mm_a_bt_acc(dlogits.data(), model.unembed.data(), dxf.data(),
                             static_cast<int>(R), V, C);
        kernels::mm_at_b_acc(xf.data(), dlogits.data(), grads.unembed.data(),
                             static_cast<int>(R), C, V);
        std::vector<scalar> dx(R * C, scalar(0));
        ln_rows_backward(dxf.data(), xf_hat.data(), invf.data(), model.lnf_g.data(), dx.data(),
                         grads.lnf_g.data(), grads.lnf_b.data(), static_cast<int>(R), C);

        for (int l = L - 1; l >= 0; --l) {
            auto& st = states[static_cast<size_t>(l)];
            const auto& lw = model.layers[static_cast<size_t>(l)];
            auto& lg = grads.layers[static_cast<size_t>(l)];

            // MLP block: x_out = x_mid + relu(ln2(x_mid) w1) w2
            std::vector<scalar> dmid(R * F, scalar(0));
            kernels::mm_a_bt_acc(dx.data(), lw.w2.data(), dmid.data(), static_cast<int>(R), C, F);
            kernels::mm_at_b_acc(st.mid.data(), dx.data(), lg.w2.data(), static_cast<int>(R), F,
                                 C);
            for (std::size_t j = 0; j < R * F; ++j) {
                if (st.mid[j] <= scalar(0)) dmid[j] = scalar(0);
            }
            std::vector<scalar> dh2(R * C, scalar(0));
            kernels::mm_a_bt_acc(dmid.data(), lw.w1.data(), dh2.data(), static_cast<int>(R), F, C);
            kernels::mm_at_b_acc(st.h2.data(), dmid.data(), lg.w1.data(), static_cast<int>(R), C,
                                 F);
            // dx currently holds d(x_out); the residual passes it to x_mid
            ln_rows_backward(dh2.data(), st.xhat2.data(), st.inv2.data(), lw.ln2_g.data(),
                             dx.data(), lg.ln2_g.data(), lg.ln2_b.data(), static_cast<int>(R), C);

            // attention block: x_mid = x_in + attn_concat wo
            std::vector<scalar> dattn(R * C, scalar(0));
            kernels::mm_a_bt_acc(dx.data(), lw.wo.data(), dattn.data(), static_cast<int>(R), C, C);
            kernels::mm_at_b_acc(st.attn.data(), dx.data(), lg.wo.data(), static_cast<int>(R), C,
                                 C);

            std::vector<scalar> dq(R * C, scalar(0)), dk(R * C, scalar(0)), dv(R * C, scalar(0));
            std::vector<double> dw(static_cast<size_t>(T));
            for (int b = 0; b < B; ++b) {
                for (int h = 0; h < H; ++h) {
                    for (int t = 0; t < T; ++t) {
                        const std::size_t row = static_cast<size_t>(b) * T + t;
                        const scalar* w = st.attw.data() +
                                          ((static_cast<size_t>(b) * H + h) * T + t) * T;
                        const scalar* doh = dattn.data() + row * C + h * D;
                        double sum_wdw = 0.0;
                        for (int s = 0; s <= t; ++s) {
                            const std::size_t srow = static_cast<size_t>(b) * T + s;
                            const scalar* vs = st.v.data() + srow * C + h * D;
                            double acc = 0.0;
                            for (int d = 0; d < D; ++d) {
                                acc += static_cast<double>(doh[d]) * static_cast<double>(vs[d]);
                            }
                            dw[static_cast<size_t>(s)] = acc;
                            sum_wdw += static_cast<double>(w[s]) * acc;
                            scalar* dvs = dv.data() + srow * C + h * D;
                            for (int d = 0; d < D; ++d) {
                                dvs[d] += static_cast<scalar>(static_cast<double>(w[s]) *
                                                              static_cast<double>(doh[d]));
                            }
                        }
                        scalar* dqh = dq.data() + row * C + h * D;
                        const scalar* qh = st.q.data() + row * C + h * D;
                        for (int s = 0; s <= t; ++s) {
                            const std::size_t srow = static_cast<size_t>(b) * T + s;
                            const double dscore = static_cast<double>(w[s]) *
                                                  (dw[static_cast<size_t>(s)] - sum_wdw) * scale;
                            const scalar* ks = st.k.data() + srow * C + h * D;
                            scalar* dks = dk.data() + srow * C + h * D;
                            for (int d = 0; d < D; ++d) {
                                dqh[d] += static_cast<scalar>(dscore * static_cast<double>(ks[d]));
                                dks[d] += static_cast<scalar>(dscore * static_cast<double>(qh[d]));
                            }
                        }
                    }
                }
            }

            std::vector<scalar> dh1(R * C, scalar(0));
            kernels::mm_a_bt_acc(dq.data(), lw.wq.data(), dh1.data(), static_cast<int>(R), C, C);
            kernels::mm_a_bt_acc(dk.data(), lw.wk.data(), dh1.data(), static_cast<int>(R), C, C);
            kernels::mm_a_bt_acc(dv.data(), lw.wv.data(), dh1.data(), static_cast<int>(R), C, C);
            kernels::mm_at_b_acc(st.h1.data(), dq.data(), lg.wq.data(), static_cast<int>(R), C, C);
            kernels::mm_at_b_acc(st.h1.data(), dk.data(), lg.wk.data(), static_cast<int>(R), C, C);
            kernels::mm_at_b_acc(st.h1.data(), dv.data(), lg.wv.data(), static_cast<int>(R), C, C);
            ln_rows_backward(dh1.data(), st.xhat1.data(), st.inv1.data(), lw.ln1_g.data(),
                             dx.data(), lg.ln1_g.data(), lg.ln1_b.data(), static_cast<int>(R), C);
        }

        // embedding scatter
        for (int b = 0; b < B; ++b) {
            const auto& d = docs[static_cast<size_t>(b)];
            for (std::size_t t = 0; t < d.tokens.size(); ++t) {
                const std::size_t r = static_cast<size_t>(b) * T + t;
                scalar* dst = grads.tok_emb.data() + static_cast<size_t>(tokens[r]) * C;
                const scalar* src = dx.data() + r * C;
                for (int j = 0; j < C; ++j) dst[j] += src[j];
            }
        }

        // ---- update ----
        double sq = 0.0;
        for (auto& [p, g] : pairs) {
            (void)p;
            for (const scalar v : g->values()) sq += static_cast<double>(v) * v;
        }
        const double norm = std::sqrt(sq);
        const double clip_scale =
            config.grad_clip > 0.0 && norm > config.grad_clip ? config.grad_clip / norm : 1.0;
        const double warm = config.warmup_steps > 0 && step < config.warmup_steps
                                ? static_cast<double>(step + 1) / config.warmup_steps
                                : 1.0;
        const double lr = config.learning_rate * warm;

        for (std::size_t i = 0; i < pairs.size(); ++i) {
            auto [p, g] = pairs[i];
            auto vel = vel_pairs[i].second;
            auto pv = p->values();
            auto gv = g->values();
            auto vv = vel->values();
            if (config.momentum) {
                for (std::size_t j = 0; j < pv.size(); ++j) {
                    vv[j] = static_cast<scalar>(config.momentum_beta * vv[j] +
                                                clip_scale * gv[j]);
                    pv[j] -= static_cast<scalar>(lr * vv[j]);
                }
            } else {
                for (std::size_t j = 0; j < pv.size(); ++j) {
                    pv[j] -= static_cast<scalar>(lr * clip_scale * gv[j]);
                }
            }
        }
    }

    if (!recent.empty()) {
        double sum = 0.0;
        for (double v : recent) sum += v;
        result.final_loss = sum / static_cast<double>(recent.size());
    }
    return result;
}

} // namespace train
} // namespace steerlab

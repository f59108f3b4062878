#include "steerlab/model.hpp"

#include <cmath>
#include <string>

#include "steerlab/rng.hpp"

namespace steerlab {

void ModelConfig::validate() const {
    if (n_layers <= 0 || n_heads <= 0 || d_model <= 0 || d_head <= 0 || d_mlp <= 0 ||
        vocab_size <= 0 || max_seq_len <= 0) {
        throw ArgumentError("model config fields must be positive");
    }
    if (d_model != n_heads * d_head) {
        throw ConsistencyError("d_model must equal n_heads * d_head");
    }
    if (eos_token_id < 0 || eos_token_id >= vocab_size) {
        throw ConsistencyError("eos_token_id outside vocabulary");
    }
}

static void check_shape(const Tensor& t, std::vector<int> want, const char* name) {
    if (t.shape() != want) {
        throw ConsistencyError(std::string("weight tensor has unexpected shape: ") + name);
    }
    if (!t.all_finite()) {
        throw ConsistencyError(std::string("weight tensor has non-finite values: ") + name);
    }
}

void TransformerModel::validate() const {
    config.validate();
    const int C = config.d_model, F = config.d_mlp, V = config.vocab_size;
    check_shape(tok_emb, {V, C}, "tok_emb");
    if (static_cast<int>(layers.size()) != config.n_layers) {
        throw ConsistencyError("layer count does not match config");
    }
    for (const auto& l : layers) {
        check_shape(l.ln1_g, {C}, "ln1_g");
        check_shape(l.ln1_b, {C}, "ln1_b");
        check_shape(l.wq, {C, C}, "wq");
        check_shape(l.wk, {C, C}, "wk");
        check_shape(l.wv, {C, C}, "wv");
        check_shape(l.wo, {C, C}, "wo");
        check_shape(l.ln2_g, {C}, "ln2_g");
        check_shape(l.ln2_b, {C}, "ln2_b");
        check_shape(l.w1, {C, F}, "w1");
        check_shape(l.w2, {F, C}, "w2");
    }
    check_shape(lnf_g, {C}, "lnf_g");
    check_shape(lnf_b, {C}, "lnf_b");
    check_shape(unembed, {C, V}, "unembed");
}

void position_encoding(int pos, int d_model, scalar* out) {
    for (int i = 0; i < d_model; i += 2) {
        const double freq = std::pow(10000.0, -static_cast<double>(i) / d_model);
        const double angle = pos * freq;
        out[i] = static_cast<scalar>(std::sin(angle));
        if (i + 1 < d_model) out[i + 1] = static_cast<scalar>(std::cos(angle));
    }
}

namespace {

// One transformer block evaluated at a single position. `k_rows`/`v_rows`
// hold per-position keys and values for this layer (this position included).
void block_at_position(const LayerWeights& lw, const ModelConfig& cfg,
                       std::vector<scalar>& x, // [d_model] residual stream, updated
                       const scalar* k_rows, const scalar* v_rows, int n_pos,
                       const HookSet& hooks, bool allow_injection, int hook_step, int layer) {
    const int C = cfg.d_model, H = cfg.n_heads, D = cfg.d_head, F = cfg.d_mlp;

    std::vector<scalar> h1(static_cast<size_t>(C));
    kernels::layernorm_forward(x.data(), lw.ln1_g.data(), lw.ln1_b.data(), h1.data(), C, kLnEps);

    std::vector<scalar> q(static_cast<size_t>(C));
    kernels::mm(h1.data(), lw.wq.data(), q.data(), 1, C, C);

    const double scale = 1.0 / std::sqrt(static_cast<double>(D));
    std::vector<scalar> attn(static_cast<size_t>(C));
    std::vector<scalar> weights(static_cast<size_t>(n_pos));
    for (int h = 0; h < H; ++h) {
        const scalar* qh = q.data() + h * D;
        for (int s = 0; s < n_pos; ++s) {
            const scalar* ks = k_rows + static_cast<size_t>(s) * C + h * D;
            weights[static_cast<size_t>(s)] = static_cast<scalar>(kernels::dot(qh, ks, D) * scale);
        }
        kernels::softmax_inplace(weights.data(), n_pos);
        scalar* oh = attn.data() + h * D;
        for (int d = 0; d < D; ++d) {
            double acc = 0.0;
            for (int s = 0; s < n_pos; ++s) {
                acc += static_cast<double>(weights[static_cast<size_t>(s)]) *
                       static_cast<double>(v_rows[static_cast<size_t>(s) * C + h * D + d]);
            }
            oh[d] = static_cast<scalar>(acc);
        }
    }

    // per-head tap: inject, then record the running value
    for (int h = 0; h < H; ++h) {
        const HeadLocator loc{layer, h};
        scalar* oh = attn.data() + h * D;
        if (allow_injection && hooks.injector) {
            const auto delta = hooks.injector(hook_step, loc);
            if (!delta.empty()) {
                if (static_cast<int>(delta.size()) != D) {
                    throw DimensionError("injector vector length must equal d_head");
                }
                for (int d = 0; d < D; ++d) oh[d] += delta[static_cast<size_t>(d)];
            }
        }
        if (hooks.recorder) {
            hooks.recorder(hook_step, loc, std::span<const scalar>(oh, static_cast<size_t>(D)));
        }
    }

    std::vector<scalar> attn_out(static_cast<size_t>(C));
    kernels::mm(attn.data(), lw.wo.data(), attn_out.data(), 1, C, C);
    for (int i = 0; i < C; ++i) x[static_cast<size_t>(i)] += attn_out[static_cast<size_t>(i)];

    std::vector<scalar> h2(static_cast<size_t>(C));
    kernels::layernorm_forward(x.data(), lw.ln2_g.data(), lw.ln2_b.data(), h2.data(), C, kLnEps);
    std::vector<scalar> mid(static_cast<size_t>(F));
    kernels::mm(h2.data(), lw.w1.data(), mid.data(), 1, C, F);
    for (auto& v : mid) v = v > scalar(0) ? v : scalar(0);
    std::vector<scalar> mlp_out(static_cast<size_t>(C));
    kernels::mm(mid.data(), lw.w2.data(), mlp_out.data(), 1, F, C);
    for (int i = 0; i < C; ++i) x[static_cast<size_t>(i)] += mlp_out[static_cast<size_t>(i)];
}

void embed_token(const TransformerModel& model, int token, int pos, std::vector<scalar>& x) {
    const int C = model.config.d_model;
    if (token < 0 || token >= model.config.vocab_size) {
        throw VocabError("token id out of range: " + std::to_string(token));
    }
    x.resize(static_cast<size_t>(C));
    std::vector<scalar> pe(static_cast<size_t>(C));
    position_encoding(pos, C, pe.data());
    const scalar* row = model.tok_emb.data() + static_cast<size_t>(token) * C;
    for (int i = 0; i < C; ++i) x[static_cast<size_t>(i)] = row[i] + pe[static_cast<size_t>(i)];
}

Tensor unembed_logits(const TransformerModel& model, const std::vector<scalar>& x) {
    const int C = model.config.d_model, V = model.config.vocab_size;
    std::vector<scalar> xf(static_cast<size_t>(C));
    kernels::layernorm_forward(x.data(), model.lnf_g.data(), model.lnf_b.data(), xf.data(), C,
                               kLnEps);
    Tensor logits({V});
    kernels::mm(xf.data(), model.unembed.data(), logits.data(), 1, C, V);
    return logits;
}

int argmax(const Tensor& logits) {
    int best = 0;
    scalar bv = logits.at(0);
    for (std::size_t i = 1; i < logits.numel(); ++i) {
        if (logits.at(i) > bv) {
            bv = logits.at(i);
            best = static_cast<int>(i);
        }
    }
    return best;
}

} // namespace

Tensor forward_last(const TransformerModel& model, const std::vector<int>& tokens,
                    const HookSet& hooks, int step_index) {
    const auto& cfg = model.config;
    if (tokens.empty()) throw ArgumentError("forward_last requires a non-empty token sequence");
    if (static_cast<int>(tokens.size()) > cfg.max_seq_len) {
        throw CapacityError("sequence length " + std::to_string(tokens.size()) +
                            " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
    }
    const int T = static_cast<int>(tokens.size());
    const int C = cfg.d_model;

    // residual stream per position
    std::vector<std::vector<scalar>> xs(static_cast<size_t>(T));
    for (int t = 0; t < T; ++t) embed_token(model, tokens[static_cast<size_t>(t)], t, xs[static_cast<size_t>(t)]);

    std::vector<scalar> k_rows(static_cast<size_t>(T) * C), v_rows(static_cast<size_t>(T) * C);
    std::vector<scalar> h1(static_cast<size_t>(C));
    const HookSet no_hooks{};
    for (int l = 0; l < cfg.n_layers; ++l) {
        const auto& lw = model.layers[static_cast<size_t>(l)];
        for (int t = 0; t < T; ++t) {
            auto& x = xs[static_cast<size_t>(t)];
            kernels::layernorm_forward(x.data(), lw.ln1_g.data(), lw.ln1_b.data(), h1.data(), C,
                                       kLnEps);
            kernels::mm(h1.data(), lw.wk.data(), k_rows.data() + static_cast<size_t>(t) * C, 1, C, C);
            kernels::mm(h1.data(), lw.wv.data(), v_rows.data() + static_cast<size_t>(t) * C, 1, C, C);
        }
        for (int t = 0; t < T; ++t) {
            const bool last = t == T - 1;
            block_at_position(lw, cfg, xs[static_cast<size_t>(t)], k_rows.data(), v_rows.data(),
                              t + 1, last ? hooks : no_hooks, last, step_index, l);
        }
    }
    return unembed_logits(model, xs[static_cast<size_t>(T - 1)]);
}

GenerationSession::GenerationSession(const TransformerModel& model, const HookSet& hooks)
    : model_(model), hooks_(hooks) {
    const auto& cfg = model.config;
    k_cache_.assign(static_cast<size_t>(cfg.n_layers),
                    std::vector<scalar>(static_cast<size_t>(cfg.max_seq_len) * cfg.d_model));
    v_cache_ = k_cache_;
}

Tensor GenerationSession::feed(int token, const HookSet& hooks, bool allow_injection,
                               int hook_step) {
    const auto& cfg = model_.config;
    if (n_pos_ >= cfg.max_seq_len) {
        throw CapacityError("generation exceeded max_seq_len " + std::to_string(cfg.max_seq_len));
    }
    const int C = cfg.d_model;
    const int t = n_pos_;
    std::vector<scalar> x;
    embed_token(model_, token, t, x);
    std::vector<scalar> h1(static_cast<size_t>(C));
    for (int l = 0; l < cfg.n_layers; ++l) {
        const auto& lw = model_.layers[static_cast<size_t>(l)];
        auto& kc = k_cache_[static_cast<size_t>(l)];
        auto& vc = v_cache_[static_cast<size_t>(l)];
        kernels::layernorm_forward(x.data(), lw.ln1_g.data(), lw.ln1_b.data(), h1.data(), C, kLnEps);
        kernels::mm(h1.data(), lw.wk.data(), kc.data() + static_cast<size_t>(t) * C, 1, C, C);
        kernels::mm(h1.data(), lw.wv.data(), vc.data() + static_cast<size_t>(t) * C, 1, C, C);
        block_at_position(lw, cfg, x, kc.data(), vc.data(), t + 1, hooks, allow_injection,
                          hook_step, l);
    }
    ++n_pos_;
    return unembed_logits(model_, x);
}

Tensor GenerationSession::prime(const std::vector<int>& prompt) {
    if (prompt.empty()) throw ArgumentError("prompt must be non-empty");
    if (n_pos_ != 0) throw ArgumentError("session already primed");
    if (static_cast<int>(prompt.size()) > model_.config.max_seq_len) {
        throw CapacityError("prompt length exceeds max_seq_len");
    }
    // hooks observe the last prompt position only; step 0 never injects
    const HookSet no_hooks{};
    Tensor logits;
    for (std::size_t i = 0; i < prompt.size(); ++i) {
        const bool last = i + 1 == prompt.size();
        logits = feed(prompt[i], last ? hooks_ : no_hooks, false, 0);
    }
    hook_step_ = 1;
    return logits;
}

Tensor GenerationSession::step(int token) {
    if (n_pos_ == 0) throw ArgumentError("session must be primed before stepping");
    Tensor logits = feed(token, hooks_, true, hook_step_);
    ++hook_step_;
    return logits;
}

GenerationResult generate(const TransformerModel& model, const std::vector<int>& prompt_tokens,
                          const GenerationConfig& gen, const HookSet& hooks) {
    if (gen.max_new_tokens < 1) throw ArgumentError("max_new_tokens must be >= 1");
    if (prompt_tokens.empty()) throw ArgumentError("prompt must be non-empty");
    if (static_cast<int>(prompt_tokens.size()) + gen.max_new_tokens > model.config.max_seq_len) {
        throw CapacityError("prompt plus max_new_tokens exceeds max_seq_len");
    }

    GenerationSession session(model, hooks);
    Tensor logits = session.prime(prompt_tokens);

    GenerationResult result;
    for (int i = 0; i < gen.max_new_tokens; ++i) {
        const int next = argmax(logits);
        result.tokens.push_back(next);
        ++result.steps;
        if (gen.stop_on_eos && next == model.config.eos_token_id) break;
        if (i + 1 == gen.max_new_tokens) break;
        logits = session.step(next);
    }
    return result;
}

std::vector<int> chat_wrap(const Tokenizer& tok, const std::string& system,
                           const std::vector<std::pair<Role, std::string>>& turns) {
    std::vector<int> out;
    if (!system.empty()) {
        out.push_back(tok.sys_id());
        const auto ids = tok.encode(system);
        out.insert(out.end(), ids.begin(), ids.end());
    }
    Role expected = Role::User;
    for (const auto& [role, text] : turns) {
        if (role != expected) {
            throw TemplateError("chat turns must alternate user/assistant starting with user");
        }
        out.push_back(role == Role::User ? tok.usr_id() : tok.asst_id());
        const auto ids = tok.encode(text);
        out.insert(out.end(), ids.begin(), ids.end());
        if (role == Role::Assistant) out.push_back(tok.eos_id());
        expected = role == Role::User ? Role::Assistant : Role::User;
    }
    if (expected == Role::Assistant) {
        out.push_back(tok.asst_id()); // cue the reply
    }
    return out;
}

TransformerModel init_model(const ModelConfig& config, std::uint64_t seed, double init_std) {
    config.validate();
    Rng rng(seed);
    auto randn = [&](std::vector<int> shape, double std_dev) {
        Tensor t(std::move(shape));
        for (auto& v : t.values()) v = static_cast<scalar>(rng.normal() * std_dev);
        return t;
    };
    const int C = config.d_model, F = config.d_mlp, V = config.vocab_size;
    TransformerModel m;
    m.config = config;
    m.tok_emb = randn({V, C}, init_std);
    for (int l = 0; l < config.n_layers; ++l) {
        LayerWeights lw;
        lw.ln1_g = Tensor::full({C}, scalar(1));
        lw.ln1_b = Tensor::zeros({C});
        lw.wq = randn({C, C}, init_std);
        lw.wk = randn({C, C}, init_std);
        lw.wv = randn({C, C}, init_std);
        lw.wo = randn({C, C}, init_std);
        lw.ln2_g = Tensor::full({C}, scalar(1));
        lw.ln2_b = Tensor::zeros({C});
        lw.w1 = randn({C, F}, init_std);
        lw.w2 = randn({F, C}, init_std);
        m.layers.push_back(std::move(lw));
    }
    m.lnf_g = Tensor::full({C}, scalar(1));
    m.lnf_b = Tensor::zeros({C});
    m.unembed = randn({C, V}, init_std);
    return m;
}

} // namespace steerlab

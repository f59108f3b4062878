#include "steerlab/steering.hpp"

#include <cstring>
#include <fstream>
#include <thread>

#include "steerlab/checkpoint.hpp"

namespace steerlab::steering {

SteeringVector SteeringVector::zeros(int steps, int n_layers, int n_heads, int d_head) {
    if (steps < 1) throw ArgumentError("steering vector needs at least one step");
    SteeringVector v;
    v.target_version = "zero";
    v.base_version = "zero";
    for (int s = 0; s < steps; ++s) {
        v.deltas.push_back(Tensor::zeros({n_layers, n_heads, d_head}));
    }
    return v;
}

double alpha_at(const AlphaSchedule& schedule, int i) {
    if (schedule.m < 1) throw ArgumentError("schedule M must be >= 1");
    if (schedule.val_max < 0.0) throw ArgumentError("val_max must be >= 0");
    if (i < 1 || i > schedule.m) {
        throw ArgumentError("alpha_at step " + std::to_string(i) + " outside [1, " +
                            std::to_string(schedule.m) + "]");
    }
    if (schedule.m == 1) return schedule.val_max;
    return schedule.val_max * (1.0 - static_cast<double>(i - 1) / static_cast<double>(schedule.m - 1));
}

ActivationTrace record_activations(const TransformerModel& model, const Tokenizer& tok,
                                   const contrastive::PromptBundle& prompt, int m_extract) {
    if (m_extract < 1) throw ArgumentError("m_extract must be >= 1");
    std::vector<std::pair<Role, std::string>> turns;
    for (const auto& [q, a] : prompt.shots) {
        turns.emplace_back(Role::User, q);
        turns.emplace_back(Role::Assistant, a);
    }
    turns.emplace_back(Role::User, prompt.query_question);
    const auto tokens = chat_wrap(tok, prompt.system_instruction, turns);

    const auto& cfg = model.config;
    if (static_cast<int>(tokens.size()) + m_extract > cfg.max_seq_len) {
        throw CapacityError("extraction prompt plus m_extract exceeds max_seq_len");
    }

    ActivationTrace trace;
    trace.prompt_id = prompt.prompt_id;
    trace.version_tag = contrastive::version_name(prompt.version);

    HookSet hooks;
    hooks.recorder = [&](int step, const HeadLocator& loc, std::span<const scalar> values) {
        if (step == static_cast<int>(trace.steps.size())) {
            trace.steps.push_back(Tensor::zeros({cfg.n_layers, cfg.n_heads, cfg.d_head}));
        }
        auto dst = trace.steps.back().slice3(loc.layer, loc.head);
        std::copy(values.begin(), values.end(), dst.begin());
    };

    GenerationConfig gen;
    gen.max_new_tokens = m_extract;
    const auto result = generate(model, tokens, gen, hooks);
    trace.generated_tokens = result.tokens;
    if (static_cast<int>(trace.steps.size()) != result.steps) {
        throw ConsistencyError("recorded step count disagrees with generation");
    }
    return trace;
}

StepwiseMean average_traces(const std::vector<ActivationTrace>& traces, int k) {
    if (traces.empty()) throw ArgumentError("average_traces requires at least one trace");
    if (static_cast<int>(traces.size()) != k) {
        throw ArgumentError("trace count " + std::to_string(traces.size()) +
                            " does not match K=" + std::to_string(k));
    }
    const auto& first = traces.front();
    if (first.steps.empty()) throw ArgumentError("trace has no steps");
    const auto shape = first.steps[0].shape();
    std::size_t max_len = 0;
    for (const auto& t : traces) {
        if (t.version_tag != first.version_tag) {
            throw ConsistencyError("mixed version tags in trace set: " + t.version_tag + " vs " +
                                   first.version_tag);
        }
        for (const auto& s : t.steps) {
            if (s.shape() != shape) throw ConsistencyError("trace step shapes differ");
        }
        max_len = std::max(max_len, t.steps.size());
    }

    StepwiseMean mean;
    mean.version_tag = first.version_tag;
    const std::size_t numel = first.steps[0].numel();
    for (std::size_t s = 0; s < max_len; ++s) {
        std::vector<double> acc(numel, 0.0);
        int alive = 0;
        for (const auto& t : traces) { // fixed trace order keeps the sum deterministic
            if (s >= t.steps.size()) continue;
            ++alive;
            const scalar* src = t.steps[s].data();
            for (std::size_t j = 0; j < numel; ++j) acc[j] += static_cast<double>(src[j]);
        }
        Tensor out(shape);
        for (std::size_t j = 0; j < numel; ++j) {
            out.at(j) = static_cast<scalar>(acc[j] / alive);
        }
        mean.steps.push_back(std::move(out));
        mean.contributors.push_back(alive);
    }
    return mean;
}

SteeringVector compute_delta(const StepwiseMean& target, const StepwiseMean& base) {
    if (target.steps.empty() || base.steps.empty()) {
        throw ArgumentError("compute_delta requires non-empty means");
    }
    if (target.steps[0].shape() != base.steps[0].shape()) {
        throw ConsistencyError("target and base means have different shapes");
    }
    const std::size_t len = std::min(target.steps.size(), base.steps.size());
    SteeringVector v;
    v.target_version = target.version_tag;
    v.base_version = base.version_tag;
    for (std::size_t s = 0; s < len; ++s) {
        Tensor d(target.steps[s].shape());
        const scalar* a = target.steps[s].data();
        const scalar* b = base.steps[s].data();
        for (std::size_t j = 0; j < d.numel(); ++j) d.at(j) = a[j] - b[j];
        if (!d.all_finite()) throw ConsistencyError("delta contains non-finite values");
        v.deltas.push_back(std::move(d));
    }
    return v;
}

SteeringInjector::SteeringInjector(const SteeringVector& vec, const AlphaSchedule& schedule)
    : vec_(vec), schedule_(schedule) {
    if (vec_.deltas.empty()) throw ArgumentError("steering vector has no deltas");
    buf_.resize(static_cast<size_t>(vec_.d_head()));
}

std::span<const scalar> SteeringInjector::operator()(int step, const HeadLocator& loc) {
    // step 0 (prompt pass) is never injected; generate() already enforces it
    if (step < 1) return {};
    const int last = static_cast<int>(vec_.deltas.size()) - 1;
    const int idx = std::min(step, last);
    const double a = alpha_at(schedule_, std::min(step, schedule_.m));
    const auto src = vec_.deltas[static_cast<size_t>(idx)].slice3(loc.layer, loc.head);
    for (std::size_t d = 0; d < buf_.size(); ++d) {
        buf_[d] = static_cast<scalar>(a * static_cast<double>(src[d]));
    }
    return buf_;
}

SteeredGeneration generate_steered(const TransformerModel& model, const Tokenizer& tok,
                                   const std::vector<int>& prompt_tokens,
                                   const SteeringVector& vec, const AlphaSchedule& schedule,
                                   const GenerationConfig& gen, bool force) {
    if (schedule.m != gen.max_new_tokens) {
        throw ArgumentError("schedule M must equal max_new_tokens");
    }
    const auto& cfg = model.config;
    if (vec.n_layers() != cfg.n_layers || vec.n_heads() != cfg.n_heads ||
        vec.d_head() != cfg.d_head) {
        throw CompatibilityError("steering vector dimensions do not match the model");
    }
    if (!force && vec.fingerprint.checkpoint_hash != 0 && model.checkpoint_hash != 0 &&
        vec.fingerprint.checkpoint_hash != model.checkpoint_hash) {
        throw CompatibilityError(
            "steering vector was extracted from a different checkpoint (pass force to override)");
    }

    SteeringInjector injector(vec, schedule);
    HookSet hooks;
    hooks.injector = [&](int step, const HeadLocator& loc) { return injector(step, loc); };
    const auto result = generate(model, prompt_tokens, gen, hooks);

    SteeredGeneration out;
    out.token_ids = result.tokens;
    std::vector<int> text_ids = result.tokens;
    if (!text_ids.empty() && text_ids.back() == cfg.eos_token_id) text_ids.pop_back();
    out.text = tok.decode(text_ids);
    return out;
}

SteeringVector extract_steering_vector(const TransformerModel& model, const Tokenizer& tok,
                                       const std::vector<contrastive::ContrastivePair>& pairs,
                                       contrastive::DatasetVersion target_version,
                                       contrastive::DatasetVersion base_version,
                                       const ExtractionConfig& config) {
    if (config.k < 1) throw ArgumentError("K must be >= 1");
    if (static_cast<int>(pairs.size()) <= config.n_shot) {
        throw ArgumentError("need more pairs than n_shot");
    }
    if (static_cast<int>(pairs.size()) < config.k) {
        throw ArgumentError("need at least K pairs");
    }

    // one query set and one shot seed per slot, shared by both versions so
    // the contrast differs only in language
    Rng rng(config.seed);
    const auto query_indices = rng.sample_indices(static_cast<int>(pairs.size()), config.k);
    std::vector<std::uint64_t> shot_seeds(static_cast<size_t>(config.k));
    for (auto& s : shot_seeds) s = rng.next_u64();

    auto record_version = [&](contrastive::DatasetVersion version,
                              const std::string& instruction) {
        const auto dataset = contrastive::build_version(pairs, version);
        std::vector<ActivationTrace> traces(static_cast<size_t>(config.k));
        auto work = [&](int slot) {
            const auto bundle =
                contrastive::assemble_prompt(dataset, query_indices[static_cast<size_t>(slot)],
                                             config.n_shot, version,
                                             shot_seeds[static_cast<size_t>(slot)], instruction);
            traces[static_cast<size_t>(slot)] =
                record_activations(model, tok, bundle, config.m_extract);
        };
        const int threads = std::max(1, config.threads);
        if (threads == 1) {
            for (int i = 0; i < config.k; ++i) work(i);
        } else {
            std::vector<std::thread> pool;
            for (int t = 0; t < threads; ++t) {
                pool.emplace_back([&, t] {
                    for (int i = t; i < config.k; i += threads) work(i);
                });
            }
            for (auto& th : pool) th.join();
        }
        return average_traces(traces, config.k);
    };

    const auto target_mean = record_version(target_version, config.instruction_target);
    const auto base_mean = record_version(base_version, config.instruction_base);

    SteeringVector v = compute_delta(target_mean, base_mean);
    v.k = static_cast<std::uint32_t>(config.k);
    v.fingerprint.checkpoint_hash = model.checkpoint_hash;
    v.fingerprint.dataset_hash = hash_string(contrastive::canonical_serialization(pairs));
    v.fingerprint.m_extract = static_cast<std::uint32_t>(config.m_extract);
    v.fingerprint.k = static_cast<std::uint32_t>(config.k);
    v.fingerprint.seed = config.seed;
    return v;
}

// ---- STVC container ----

namespace {

constexpr char kMagic[4] = {'S', 'T', 'V', 'C'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& buf, std::uint32_t v) {
    buf.push_back(static_cast<char>(v));
    buf.push_back(static_cast<char>(v >> 8));
    buf.push_back(static_cast<char>(v >> 16));
    buf.push_back(static_cast<char>(v >> 24));
}

void put_u64(std::string& buf, std::uint64_t v) {
    put_u32(buf, static_cast<std::uint32_t>(v));
    put_u32(buf, static_cast<std::uint32_t>(v >> 32));
}

struct Reader {
    const unsigned char* p;
    std::size_t n;
    std::size_t off = 0;

    void need(std::size_t k) const {
        if (off + k > n) throw FormatError("steering vector file truncated");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = static_cast<std::uint32_t>(p[off]) |
                          (static_cast<std::uint32_t>(p[off + 1]) << 8) |
                          (static_cast<std::uint32_t>(p[off + 2]) << 16) |
                          (static_cast<std::uint32_t>(p[off + 3]) << 24);
        off += 4;
        return v;
    }
    std::uint64_t u64() {
        const std::uint64_t lo = u32();
        const std::uint64_t hi = u32();
        return lo | (hi << 32);
    }
    std::string str() {
        const std::uint32_t len = u32();
        if (len > 4096) throw FormatError("steering vector tag too long");
        need(len);
        std::string s(reinterpret_cast<const char*>(p + off), len);
        off += len;
        return s;
    }
};

} // namespace

std::size_t vector_file_size(const SteeringVector& v) {
    const std::size_t header = 4 + 4 + 4;              // magic, version, float width
    const std::size_t fingerprint = 8 + 8 + 4 + 4 + 8; // hashes, m_extract, k, seed
    const std::size_t dims = 4 * 4 + 4;                // steps, L, H, d_head, K
    const std::size_t tags = 4 + v.target_version.size() + 4 + v.base_version.size();
    const std::size_t data = v.deltas.size() * static_cast<std::size_t>(v.n_layers()) *
                             static_cast<std::size_t>(v.n_heads()) *
                             static_cast<std::size_t>(v.d_head()) * sizeof(scalar);
    return header + fingerprint + dims + tags + data;
}

void save_vector(const SteeringVector& v, const std::string& path) {
    if (v.deltas.empty()) throw ArgumentError("cannot save an empty steering vector");
    std::string buf;
    buf.append(kMagic, 4);
    put_u32(buf, kVersion);
    put_u32(buf, sizeof(scalar));
    put_u64(buf, v.fingerprint.checkpoint_hash);
    put_u64(buf, v.fingerprint.dataset_hash);
    put_u32(buf, v.fingerprint.m_extract);
    put_u32(buf, v.fingerprint.k);
    put_u64(buf, v.fingerprint.seed);
    put_u32(buf, static_cast<std::uint32_t>(v.deltas.size()));
    put_u32(buf, static_cast<std::uint32_t>(v.n_layers()));
    put_u32(buf, static_cast<std::uint32_t>(v.n_heads()));
    put_u32(buf, static_cast<std::uint32_t>(v.d_head()));
    put_u32(buf, v.k);
    put_u32(buf, static_cast<std::uint32_t>(v.target_version.size()));
    buf += v.target_version;
    put_u32(buf, static_cast<std::uint32_t>(v.base_version.size()));
    buf += v.base_version;
    for (const auto& d : v.deltas) {
        buf.append(reinterpret_cast<const char*>(d.data()), d.numel() * sizeof(scalar));
    }

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open steering vector for writing: " + path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("failed writing steering vector: " + path);
}

SteeringVector load_vector(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open steering vector: " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (buf.size() < 4 || std::memcmp(buf.data(), kMagic, 4) != 0) {
        throw FormatError("not a steering vector file (bad magic): " + path);
    }
    Reader r{reinterpret_cast<const unsigned char*>(buf.data()), buf.size(), 4};
    const std::uint32_t version = r.u32();
    if (version != kVersion) {
        throw FormatError("unsupported steering vector version " + std::to_string(version));
    }
    const std::uint32_t width = r.u32();
    if (width != sizeof(scalar)) {
        throw FormatError("steering vector float width does not match this build");
    }
    SteeringVector v;
    v.fingerprint.checkpoint_hash = r.u64();
    v.fingerprint.dataset_hash = r.u64();
    v.fingerprint.m_extract = r.u32();
    v.fingerprint.k = r.u32();
    v.fingerprint.seed = r.u64();
    const std::uint32_t n_steps = r.u32();
    const std::uint32_t L = r.u32();
    const std::uint32_t H = r.u32();
    const std::uint32_t D = r.u32();
    v.k = r.u32();
    v.target_version = r.str();
    v.base_version = r.str();
    if (n_steps == 0 || L == 0 || H == 0 || D == 0) {
        throw FormatError("steering vector dims invalid");
    }
    const std::size_t per_step = static_cast<std::size_t>(L) * H * D;
    for (std::uint32_t s = 0; s < n_steps; ++s) {
        r.need(per_step * sizeof(scalar));
        std::vector<scalar> data(per_step);
        std::memcpy(data.data(), buf.data() + r.off, per_step * sizeof(scalar));
        r.off += per_step * sizeof(scalar);
        Tensor t({static_cast<int>(L), static_cast<int>(H), static_cast<int>(D)},
                 std::move(data));
        if (!t.all_finite()) throw FormatError("steering vector contains non-finite values");
        v.deltas.push_back(std::move(t));
    }
    if (r.off != buf.size()) throw FormatError("steering vector has trailing bytes");
    return v;
}

} // namespace steerlab::steering

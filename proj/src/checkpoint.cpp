#include "steerlab/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <vector>

namespace steerlab {

namespace {

constexpr char kMagic[4] = {'S', 'T', 'L', 'B'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw FormatError("checkpoint file truncated");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_name(std::ostream& out, const std::string& name) {
    write_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
}

std::string read_name(std::istream& in) {
    const std::uint32_t len = read_u32(in);
    if (len > 4096) throw FormatError("checkpoint tensor name too long");
    std::string name(len, '\0');
    in.read(name.data(), static_cast<std::streamsize>(len));
    if (!in) throw FormatError("checkpoint file truncated");
    return name;
}

void write_tensor(std::ostream& out, const std::string& name, const Tensor& t) {
    write_name(out, name);
    write_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) write_u32(out, static_cast<std::uint32_t>(t.dim(i)));
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.numel() * sizeof(scalar)));
}

Tensor read_tensor(std::istream& in, const std::string& expect_name) {
    const std::string name = read_name(in);
    if (name != expect_name) {
        throw FormatError("checkpoint tensor order mismatch: expected " + expect_name + ", got " +
                          name);
    }
    const std::uint32_t rank = read_u32(in);
    if (rank == 0 || rank > 4) throw FormatError("checkpoint tensor rank invalid");
    std::vector<int> shape;
    std::size_t numel = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
        const std::uint32_t d = read_u32(in);
        if (d == 0 || d > (1u << 28)) throw FormatError("checkpoint tensor dimension invalid");
        shape.push_back(static_cast<int>(d));
        numel *= d;
    }
    std::vector<scalar> data(numel);
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(numel * sizeof(scalar)));
    if (!in) throw FormatError("checkpoint file truncated");
    return Tensor(std::move(shape), std::move(data));
}

std::string layer_name(int l, const char* field) {
    return "layers." + std::to_string(l) + "." + field;
}

} // namespace

void save_checkpoint(const TransformerModel& model, const std::string& path) {
    model.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open checkpoint for writing: " + path);
    out.write(kMagic, 4);
    write_u32(out, kVersion);
    write_u32(out, sizeof(scalar));
    const auto& c = model.config;
    write_u32(out, static_cast<std::uint32_t>(c.n_layers));
    write_u32(out, static_cast<std::uint32_t>(c.n_heads));
    write_u32(out, static_cast<std::uint32_t>(c.d_model));
    write_u32(out, static_cast<std::uint32_t>(c.d_head));
    write_u32(out, static_cast<std::uint32_t>(c.d_mlp));
    write_u32(out, static_cast<std::uint32_t>(c.vocab_size));
    write_u32(out, static_cast<std::uint32_t>(c.max_seq_len));
    write_u32(out, static_cast<std::uint32_t>(c.eos_token_id));

    const std::uint32_t n_tensors = 2 + static_cast<std::uint32_t>(model.layers.size()) * 10 + 2;
    write_u32(out, n_tensors);
    write_tensor(out, "tok_emb", model.tok_emb);
    for (int l = 0; l < c.n_layers; ++l) {
        const auto& lw = model.layers[static_cast<size_t>(l)];
        write_tensor(out, layer_name(l, "ln1.g"), lw.ln1_g);
        write_tensor(out, layer_name(l, "ln1.b"), lw.ln1_b);
        write_tensor(out, layer_name(l, "attn.wq"), lw.wq);
        write_tensor(out, layer_name(l, "attn.wk"), lw.wk);
        write_tensor(out, layer_name(l, "attn.wv"), lw.wv);
        write_tensor(out, layer_name(l, "attn.wo"), lw.wo);
        write_tensor(out, layer_name(l, "ln2.g"), lw.ln2_g);
        write_tensor(out, layer_name(l, "ln2.b"), lw.ln2_b);
        write_tensor(out, layer_name(l, "mlp.w1"), lw.w1);
        write_tensor(out, layer_name(l, "mlp.w2"), lw.w2);
    }
    write_tensor(out, "lnf.g", model.lnf_g);
    write_tensor(out, "lnf.b", model.lnf_b);
    write_tensor(out, "unembed", model.unembed);
    if (!out) throw IoError("failed writing checkpoint: " + path);
}

TransformerModel load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) {
        throw FormatError("not a checkpoint file (bad magic): " + path);
    }
    const std::uint32_t version = read_u32(in);
    if (version != kVersion) {
        throw FormatError("unsupported checkpoint version " + std::to_string(version));
    }
    const std::uint32_t width = read_u32(in);
    if (width != sizeof(scalar)) {
        throw FormatError("checkpoint float width " + std::to_string(width) +
                          " does not match this build (" + std::to_string(sizeof(scalar)) + ")");
    }
    TransformerModel m;
    auto& c = m.config;
    c.n_layers = static_cast<int>(read_u32(in));
    c.n_heads = static_cast<int>(read_u32(in));
    c.d_model = static_cast<int>(read_u32(in));
    c.d_head = static_cast<int>(read_u32(in));
    c.d_mlp = static_cast<int>(read_u32(in));
    c.vocab_size = static_cast<int>(read_u32(in));
    c.max_seq_len = static_cast<int>(read_u32(in));
    c.eos_token_id = static_cast<int>(read_u32(in));
    c.validate();

    const std::uint32_t n_tensors = read_u32(in);
    const std::uint32_t expect = 2 + static_cast<std::uint32_t>(c.n_layers) * 10 + 2;
    if (n_tensors != expect) throw FormatError("checkpoint tensor count mismatch");

    m.tok_emb = read_tensor(in, "tok_emb");
    for (int l = 0; l < c.n_layers; ++l) {
        LayerWeights lw;
        lw.ln1_g = read_tensor(in, layer_name(l, "ln1.g"));
        lw.ln1_b = read_tensor(in, layer_name(l, "ln1.b"));
        lw.wq = read_tensor(in, layer_name(l, "attn.wq"));
        lw.wk = read_tensor(in, layer_name(l, "attn.wk"));
        lw.wv = read_tensor(in, layer_name(l, "attn.wv"));
        lw.wo = read_tensor(in, layer_name(l, "attn.wo"));
        lw.ln2_g = read_tensor(in, layer_name(l, "ln2.g"));
        lw.ln2_b = read_tensor(in, layer_name(l, "ln2.b"));
        lw.w1 = read_tensor(in, layer_name(l, "mlp.w1"));
        lw.w2 = read_tensor(in, layer_name(l, "mlp.w2"));
        m.layers.push_back(std::move(lw));
    }
    m.lnf_g = read_tensor(in, "lnf.g");
    m.lnf_b = read_tensor(in, "lnf.b");
    m.unembed = read_tensor(in, "unembed");
    m.validate();
    m.checkpoint_hash = hash_file(path);
    return m;
}

std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t seed) {
    std::uint64_t h = seed;
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

std::uint64_t hash_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open file for hashing: " + path);
    std::uint64_t h = 0xcbf29ce484222325ull;
    char buf[65536];
    while (in) {
        in.read(buf, sizeof(buf));
        const std::streamsize got = in.gcount();
        if (got > 0) h = fnv1a(buf, static_cast<std::size_t>(got), h);
    }
    return h;
}

std::uint64_t hash_string(const std::string& s) { return fnv1a(s.data(), s.size()); }

} // namespace steerlab

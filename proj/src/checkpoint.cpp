#include "trajlab/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <string>

namespace trajlab {

namespace {

constexpr char kMagic[4] = {'T', 'J', 'L', '1'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint8_t kKindParams = 1;
constexpr std::uint8_t kKindRunState = 2;

class ByteWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
    void f64(double v) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, sizeof bits);
        u64(bits);
    }
    void bytes(const void* p, std::size_t n) {
        buf_.append(static_cast<const char*>(p), n);
    }
    const std::string& str() const { return buf_; }

private:
    std::string buf_;
};

class ByteReader {
public:
    explicit ByteReader(std::string data) : buf_(std::move(data)) {}

    std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
    std::uint32_t u32() {
        const char* p = take(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        const char* p = take(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
        return v;
    }
    double f64() {
        std::uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, sizeof v);
        return v;
    }
    std::size_t pos() const { return pos_; }
    std::size_t size() const { return buf_.size(); }
    const std::string& str() const { return buf_; }

private:
    const char* take(std::size_t n) {
        if (pos_ + n > buf_.size())
            throw IntegrityError("checkpoint: truncated file");
        const char* p = buf_.data() + pos_;
        pos_ += n;
        return p;
    }
    std::string buf_;
    std::size_t pos_ = 0;
};

void write_tensor_section(ByteWriter& w, const ParamSet& set) {
    w.u32(static_cast<std::uint32_t>(set.tensors().size()));
    for (const auto& nt : set.tensors()) {
        w.u32(static_cast<std::uint32_t>(nt.value.rows()));
        w.u32(static_cast<std::uint32_t>(nt.value.cols()));
    }
    for (const auto& nt : set.tensors())
        for (double v : nt.value.raw()) w.f64(v);
}

void read_tensor_section(ByteReader& r, ParamSet& set) {
    const std::uint32_t count = r.u32();
    if (count != set.tensors().size())
        throw InputError("checkpoint: tensor count does not match the model config");
    for (auto& nt : set.tensors()) {
        const std::uint32_t rows = r.u32();
        const std::uint32_t cols = r.u32();
        if (rows != nt.value.rows() || cols != nt.value.cols())
            throw InputError("checkpoint: shape mismatch for tensor " + nt.name);
    }
    for (auto& nt : set.tensors())
        for (auto& v : nt.value.raw()) v = r.f64();
}

void write_file_atomic(const std::filesystem::path& path, const std::string& payload) {
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("checkpoint: cannot open " + tmp + " for writing");
        out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
        if (!out) throw IoError("checkpoint: short write to " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("checkpoint: cannot open " + path.string());
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return data;
}

std::string seal(const ByteWriter& w) {
    std::string payload = w.str();
    const std::uint64_t h = fnv1a64(payload.data(), payload.size());
    ByteWriter tail;
    tail.u64(h);
    payload += tail.str();
    return payload;
}

ByteReader open_sealed(const std::filesystem::path& path, std::uint8_t expect_kind) {
    std::string data = read_file(path);
    if (data.size() < 8 + 4 + 4 + 1) throw IntegrityError("checkpoint: file too small");
    const std::string body = data.substr(0, data.size() - 8);
    ByteReader tail(data.substr(data.size() - 8));
    if (tail.u64() != fnv1a64(body.data(), body.size()))
        throw IntegrityError("checkpoint: integrity hash mismatch (corrupted file)");
    ByteReader r(body);
    char magic[4];
    std::memcpy(magic, r.str().data(), 4);
    for (int i = 0; i < 4; ++i)
        if (r.u8() != static_cast<std::uint8_t>(kMagic[i]))
            throw IntegrityError("checkpoint: bad magic bytes");
    if (r.u32() != kVersion) throw IntegrityError("checkpoint: unsupported format version");
    if (r.u8() != expect_kind) throw InputError("checkpoint: unexpected file kind");
    return r;
}

} // namespace

void save_params(const std::filesystem::path& path, const ParamSet& params) {
    ByteWriter w;
    w.bytes(kMagic, 4);
    w.u32(kVersion);
    w.u8(kKindParams);
    write_tensor_section(w, params);
    write_file_atomic(path, seal(w));
}

ParamSet load_params(const std::filesystem::path& path, const ModelConfig& cfg) {
    ByteReader r = open_sealed(path, kKindParams);
    ParamSet params = ParamSet::zeros(cfg);
    read_tensor_section(r, params);
    return params;
}

void save_run_checkpoint(const std::filesystem::path& path, const RunCheckpoint& ck) {
    ByteWriter w;
    w.bytes(kMagic, 4);
    w.u32(kVersion);
    w.u8(kKindRunState);
    w.u64(ck.config_hash);
    w.u64(ck.iter);
    w.u64(ck.tokens_consumed);
    w.u64(ck.adam_step);
    w.u8(ck.has_initial_loss ? 1 : 0);
    w.f64(ck.initial_loss);

    for (int i = 0; i < 4; ++i) w.u64(ck.stream.rng.s[i]);
    w.u8(ck.stream.rng.has_spare ? 1 : 0);
    w.f64(ck.stream.rng.spare);
    w.u64(ck.stream.tokens_drawn);
    w.u32(static_cast<std::uint32_t>(ck.stream.context.size()));
    for (Token t : ck.stream.context) w.u32(static_cast<std::uint32_t>(t));

    w.f64(ck.gns.noise_acc);
    w.f64(ck.gns.gnorm_acc);
    w.f64(ck.gns.weight);

    write_tensor_section(w, ck.params);
    write_tensor_section(w, ck.adam_m);
    write_tensor_section(w, ck.adam_v);
    write_file_atomic(path, seal(w));
}

RunCheckpoint load_run_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg) {
    ByteReader r = open_sealed(path, kKindRunState);
    RunCheckpoint ck;
    ck.config_hash = r.u64();
    ck.iter = r.u64();
    ck.tokens_consumed = r.u64();
    ck.adam_step = r.u64();
    ck.has_initial_loss = r.u8() != 0;
    ck.initial_loss = r.f64();

    for (int i = 0; i < 4; ++i) ck.stream.rng.s[i] = r.u64();
    ck.stream.rng.has_spare = r.u8() != 0;
    ck.stream.rng.spare = r.f64();
    ck.stream.tokens_drawn = r.u64();
    const std::uint32_t ctx_len = r.u32();
    ck.stream.context.resize(ctx_len);
    for (auto& t : ck.stream.context) t = static_cast<Token>(r.u32());

    ck.gns.noise_acc = r.f64();
    ck.gns.gnorm_acc = r.f64();
    ck.gns.weight = r.f64();

    ck.params = ParamSet::zeros(cfg);
    ck.adam_m = ParamSet::zeros(cfg);
    ck.adam_v = ParamSet::zeros(cfg);
    read_tensor_section(r, ck.params);
    read_tensor_section(r, ck.adam_m);
    read_tensor_section(r, ck.adam_v);
    return ck;
}

} // namespace trajlab

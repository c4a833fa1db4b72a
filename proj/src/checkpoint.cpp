#include "melrefine/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

namespace melrefine {
namespace {

constexpr char kMagic[8] = {'M', 'L', 'R', 'F', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kMaxRank = 8;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

std::uint64_t fnv1a(const unsigned char* data, std::size_t n) {
    std::uint64_t h = 1469598103934665603ull;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= data[i];
        h *= 1099511628211ull;
    }
    return h;
}

class Writer {
public:
    template <typename T>
    void put(T v) {
        const auto* p = reinterpret_cast<const unsigned char*>(&v);
        bytes_.insert(bytes_.end(), p, p + sizeof(T));
    }
    void put_string(const std::string& s) {
        put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
        bytes_.insert(bytes_.end(), s.begin(), s.end());
    }
    void put_values(const Tensor& t) {
        const auto* p = reinterpret_cast<const unsigned char*>(t.data());
        bytes_.insert(bytes_.end(), p, p + t.size() * sizeof(double));
    }
    std::vector<unsigned char>& bytes() { return bytes_; }

private:
    std::vector<unsigned char> bytes_;
};

class Reader {
public:
    Reader(const std::vector<unsigned char>& bytes, std::size_t end) : bytes_(bytes), end_(end) {}

    template <typename T>
    T get(const char* what) {
        need(sizeof(T), what);
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    std::string get_string(const char* what) {
        const auto n = get<std::uint32_t>(what);
        need(n, what);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    Tensor get_tensor(Shape shape, const char* what) {
        Tensor t(std::move(shape));
        need(t.size() * sizeof(double), what);
        std::memcpy(t.data(), bytes_.data() + pos_, t.size() * sizeof(double));
        pos_ += t.size() * sizeof(double);
        return t;
    }
    std::size_t position() const { return pos_; }

private:
    void need(std::size_t n, const char* what) {
        if (n > end_ - pos_) throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
    }
    const std::vector<unsigned char>& bytes_;
    std::size_t end_;
    std::size_t pos_ = 0;
};

void write_config(Writer& w, const EstimatorConfig& c) {
    for (std::size_t v : {c.n_blocks, c.model_dim, c.n_heads, c.conv_kernel, c.time_embed_dim, c.n_mels,
                          c.head_channels, c.head_kernel, c.ff_mult}) {
        w.put<std::uint64_t>(v);
    }
    w.put<double>(c.leaky_slope);
    w.put<double>(c.rope_base);
    w.put<double>(c.time_embed_max_freq);
}

EstimatorConfig read_config(Reader& r) {
    EstimatorConfig c;
    for (std::size_t* f : {&c.n_blocks, &c.model_dim, &c.n_heads, &c.conv_kernel, &c.time_embed_dim, &c.n_mels,
                           &c.head_channels, &c.head_kernel, &c.ff_mult}) {
        *f = static_cast<std::size_t>(r.get<std::uint64_t>("model config"));
    }
    c.leaky_slope = r.get<double>("model config");
    c.rope_base = r.get<double>("model config");
    c.time_embed_max_freq = r.get<double>("model config");
    return c;
}

}  // namespace

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
    const auto& entries = ck.model.params.entries();
    if (ck.optimizer.m.size() != entries.size() || ck.optimizer.v.size() != entries.size()) {
        throw std::invalid_argument("save_checkpoint: optimizer moments do not match parameters");
    }
    Writer w;
    for (char c : kMagic) w.put<char>(c);
    w.put<std::uint32_t>(kVersion);
    w.put<std::uint64_t>(ck.model.config.fingerprint());
    write_config(w, ck.model.config);
    w.put<std::uint64_t>(ck.step);
    w.put<double>(ck.model.norm.shift);
    w.put<double>(ck.model.norm.scale);
    const AdamWConfig& o = ck.optimizer.config;
    for (double v : {o.lr, o.beta1, o.beta2, o.weight_decay, o.eps}) w.put<double>(v);
    w.put<std::uint64_t>(ck.optimizer.step);
    w.put<std::uint64_t>(entries.size());
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const Tensor& value = entries[i].value;
        w.put_string(entries[i].name);
        w.put<std::uint32_t>(static_cast<std::uint32_t>(value.rank()));
        for (std::size_t d : value.shape()) w.put<std::uint64_t>(d);
        w.put_values(value);
        require_same_shape(value, ck.optimizer.m[i], "save_checkpoint");
        require_same_shape(value, ck.optimizer.v[i], "save_checkpoint");
        w.put_values(ck.optimizer.m[i]);
        w.put_values(ck.optimizer.v[i]);
    }
    w.put<std::uint64_t>(fnv1a(w.bytes().data(), w.bytes().size()));

    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw CheckpointError("cannot write checkpoint " + tmp.string());
        out.write(reinterpret_cast<const char*>(w.bytes().data()), static_cast<std::streamsize>(w.bytes().size()));
        if (!out) throw CheckpointError("failed writing checkpoint " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw CheckpointError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const std::optional<EstimatorConfig>& expected) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
    const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < sizeof(kMagic) + sizeof(std::uint64_t) ||
        std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
        throw CheckpointError(path.string() + " is not a melrefine checkpoint");
    }
    const std::size_t body = bytes.size() - sizeof(std::uint64_t);
    std::uint64_t stored_sum;
    std::memcpy(&stored_sum, bytes.data() + body, sizeof(stored_sum));
    if (stored_sum != fnv1a(bytes.data(), body)) throw CheckpointError("checkpoint " + path.string() + " is corrupt");

    Reader r(bytes, body);
    for (std::size_t i = 0; i < sizeof(kMagic); ++i) r.get<char>("magic");
    const auto version = r.get<std::uint32_t>("version");
    if (version != kVersion) {
        throw CheckpointError("checkpoint version " + std::to_string(version) + " is not supported");
    }
    const auto fingerprint = r.get<std::uint64_t>("fingerprint");
    Checkpoint ck;
    ck.model.config = read_config(r);
    if (ck.model.config.fingerprint() != fingerprint) throw CheckpointError("checkpoint config fingerprint is corrupt");
    if (expected && expected->fingerprint() != fingerprint) {
        throw ConfigMismatch("checkpoint " + path.string() + " was trained with config {" +
                             ck.model.config.canonical() + "}, expected {" + expected->canonical() + "}");
    }
    ck.step = r.get<std::uint64_t>("step");
    ck.model.norm.shift = r.get<double>("normalization");
    ck.model.norm.scale = r.get<double>("normalization");
    AdamWConfig& o = ck.optimizer.config;
    for (double* v : {&o.lr, &o.beta1, &o.beta2, &o.weight_decay, &o.eps}) *v = r.get<double>("optimizer config");
    ck.optimizer.step = r.get<std::uint64_t>("optimizer step");
    const auto count = r.get<std::uint64_t>("parameter count");
    for (std::uint64_t i = 0; i < count; ++i) {
        std::string name = r.get_string("parameter name");
        const auto rank = r.get<std::uint32_t>("parameter rank");
        if (rank > kMaxRank) throw CheckpointError("checkpoint parameter '" + name + "' has implausible rank");
        Shape shape(rank);
        for (auto& d : shape) d = static_cast<std::size_t>(r.get<std::uint64_t>("parameter shape"));
        Tensor value = r.get_tensor(shape, "parameter values");
        ck.optimizer.m.push_back(r.get_tensor(shape, "first moments"));
        ck.optimizer.v.push_back(r.get_tensor(shape, "second moments"));
        ck.model.params.add(std::move(name), std::move(value));
    }
    if (r.position() != body) throw CheckpointError("checkpoint has trailing data");

    // The stored table must be exactly what this architecture creates.
    const EstimatorParams reference = EstimatorParams::initialize(ck.model.config, 0);
    const auto& want = reference.entries();
    const auto& got = ck.model.params.entries();
    if (want.size() != got.size()) throw CheckpointError("checkpoint parameter table does not match its config");
    for (std::size_t i = 0; i < want.size(); ++i) {
        if (want[i].name != got[i].name || want[i].value.shape() != got[i].value.shape()) {
            throw CheckpointError("checkpoint parameter '" + got[i].name + "' does not match its config");
        }
    }
    return ck;
}

}  // namespace melrefine

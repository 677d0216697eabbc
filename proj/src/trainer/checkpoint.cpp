#include "plm/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <iterator>
#include <limits>

#include <fmt/format.h>

#include "plm/error.hpp"

namespace plm {
namespace {

constexpr std::string_view kMagic = "PLM1";
constexpr std::string_view kMomentPrefix = "adam.m.";
constexpr std::string_view kVariancePrefix = "adam.v.";

class Writer {
public:
    void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
    void u16(std::uint16_t v) { little(v, 2); }
    void u32(std::uint32_t v) { little(v, 4); }
    void u64(std::uint64_t v) { little(v, 8); }
    void bytes(std::string_view s) { out_.append(s); }

    void tensor(std::string_view name, const Tensor& t) {
        if (name.size() > std::numeric_limits<std::uint16_t>::max()) {
            throw CheckpointError("tensor name too long: " + std::string(name.substr(0, 64)));
        }
        u16(static_cast<std::uint16_t>(name.size()));
        bytes(name);
        u8(static_cast<std::uint8_t>(t.rank()));
        for (auto d : t.dims()) u32(static_cast<std::uint32_t>(d));
        for (float v : t.data()) u32(std::bit_cast<std::uint32_t>(v));
    }

    std::string take() { return std::move(out_); }

private:
    void little(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    std::string out_;
};

class Reader {
public:
    explicit Reader(std::string_view in) : in_(in) {}

    std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
    std::uint16_t u16() { return static_cast<std::uint16_t>(little(2)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(little(4)); }
    std::uint64_t u64() { return little(8); }

    std::string_view take(std::size_t n) {
        if (in_.size() - pos_ < n) {
            throw TruncatedCheckpointError(fmt::format("checkpoint truncated at byte {} (needed {} more)", pos_, n));
        }
        auto s = in_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    bool done() const { return pos_ == in_.size(); }

    std::pair<std::string, Tensor> tensor() {
        std::string name(take(u16()));
        const std::uint8_t rank = u8();
        Shape dims(rank);
        std::size_t numel = 1;
        for (auto& d : dims) {
            d = u32();
            numel *= d;
        }
        if (numel > (in_.size() - pos_) / 4) {
            throw TruncatedCheckpointError(fmt::format("checkpoint truncated inside tensor '{}'", name));
        }
        std::vector<float> values(numel);
        for (auto& v : values) v = std::bit_cast<float>(u32());
        return {std::move(name), Tensor(std::move(dims), std::move(values))};
    }

private:
    std::uint64_t little(int n) {
        const auto s = take(static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= std::uint64_t(static_cast<unsigned char>(s[i])) << (8 * i);
        return v;
    }
    std::string_view in_;
    std::size_t pos_ = 0;
};

Checkpoint decode(std::string_view bytes, const ModelConfig* target) {
    Reader r(bytes);
    if (bytes.size() < kMagic.size() && kMagic.starts_with(bytes)) {
        throw TruncatedCheckpointError("checkpoint truncated inside the magic bytes");
    }
    if (bytes.size() < kMagic.size() || bytes.substr(0, kMagic.size()) != kMagic) {
        throw BadMagicError("not a checkpoint: magic bytes are not 'PLM1'");
    }
    r.take(kMagic.size());
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        throw UnsupportedVersionError(
            fmt::format("checkpoint format version {} is not supported (expected {})", version, kCheckpointVersion));
    }
    const std::string_view text = r.take(r.u32());
    ModelConfig config;
    try {
        config = parse_config_text(text);
    } catch (const ConfigError& e) {
        throw CheckpointError(std::string("checkpoint config block: ") + e.what());
    }

    Checkpoint ck;
    ck.model.config = config;
    const ModelConfig& shape_source = target ? *target : config;
    std::map<std::string, Shape, std::less<>> expected;
    for (auto& [name, dims] : parameter_shapes(shape_source)) expected.emplace(name, dims);

    const std::uint32_t count = r.u32();
    for (std::uint32_t n = 0; n < count; ++n) {
        auto [name, t] = r.tensor();
        auto it = expected.find(name);
        if (it == expected.end()) {
            if (target) throw ShapeMismatchError("checkpoint tensor '" + name + "' does not exist in the target model");
            throw CheckpointError("checkpoint tensor '" + name + "' is not part of its own config");
        }
        if (it->second != t.dims()) {
            const std::string msg = fmt::format("tensor '{}' has shape {} in the checkpoint but {} in the {} config",
                                                name, shape_to_string(t.dims()), shape_to_string(it->second),
                                                target ? "target" : "stored");
            if (target) throw ShapeMismatchError(msg);
            throw CheckpointError(msg);
        }
        if (ck.model.params.contains(name)) throw CheckpointError("checkpoint tensor '" + name + "' stored twice");
        t.set_requires_grad();
        ck.model.params.add(std::move(name), std::move(t));
    }
    for (const auto& [name, dims] : expected) {
        if (!ck.model.params.contains(name)) {
            throw (target ? ShapeMismatchError("checkpoint lacks tensor '" + name + "' of the target model")
                          : CheckpointError("checkpoint lacks tensor '" + name + "'"));
        }
    }
    // Keep the canonical order regardless of file order.
    ParameterSet ordered;
    for (const auto& [name, dims] : parameter_shapes(shape_source)) ordered.add(name, ck.model.params.get(name));
    ck.model.params = std::move(ordered);

    if (r.u8() != 0) {
        OptimizerState opt;
        opt.step = r.u64();
        const std::uint32_t moments = r.u32();
        for (std::uint32_t n = 0; n < moments; ++n) {
            auto [name, t] = r.tensor();
            const bool is_m = name.starts_with(kMomentPrefix);
            if (!is_m && !name.starts_with(kVariancePrefix)) {
                throw CheckpointError("unexpected optimizer tensor '" + name + "'");
            }
            const std::string param = name.substr(kMomentPrefix.size());
            const Tensor* p = ck.model.params.find(param);
            if (!p) throw CheckpointError("optimizer tensor '" + name + "' has no parameter");
            if (p->dims() != t.dims()) throw ShapeMismatchError("optimizer tensor '" + name + "' has the wrong shape");
            (is_m ? opt.m : opt.v).add(param, std::move(t));
        }
        ck.optimizer = std::move(opt);
    }
    if (!r.done()) throw CheckpointError("checkpoint has trailing bytes");
    return ck;
}

}  // namespace

std::string encode_checkpoint(const Model& model, const OptimizerState* optimizer) {
    Writer w;
    w.bytes(kMagic);
    w.u32(kCheckpointVersion);
    const std::string text = config_text(model.config);
    w.u32(static_cast<std::uint32_t>(text.size()));
    w.bytes(text);
    w.u32(static_cast<std::uint32_t>(model.params.size()));
    for (const auto& e : model.params) w.tensor(e.name, e.tensor);
    w.u8(optimizer ? 1 : 0);
    if (optimizer) {
        w.u64(optimizer->step);
        w.u32(static_cast<std::uint32_t>(optimizer->m.size() + optimizer->v.size()));
        for (const auto& e : optimizer->m) w.tensor(std::string(kMomentPrefix) + e.name, e.tensor);
        for (const auto& e : optimizer->v) w.tensor(std::string(kVariancePrefix) + e.name, e.tensor);
    }
    return w.take();
}

Checkpoint decode_checkpoint(std::string_view bytes) {
    return decode(bytes, nullptr);
}

Checkpoint decode_checkpoint_into(std::string_view bytes, const ModelConfig& target) {
    return decode(bytes, &target);
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("error while reading '" + path.string() + "'");
    return bytes;
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("error while writing '" + path.string() + "'");
}

void save_checkpoint(const std::filesystem::path& path, const Model& model, const OptimizerState* optimizer) {
    write_file(path, encode_checkpoint(model, optimizer));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    return decode_checkpoint(read_file(path));
}

Checkpoint load_checkpoint_into(const std::filesystem::path& path, const ModelConfig& target) {
    return decode_checkpoint_into(read_file(path), target);
}

}  // namespace plm

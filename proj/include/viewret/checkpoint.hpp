#pragma once

#include "viewret/error.hpp"
#include "viewret/frame.hpp"
#include "viewret/model.hpp"
#include "viewret/tensor.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <limits>
#include <string>
#include <unordered_set>
#include <vector>

namespace viewret {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

inline constexpr char checkpoint_magic[4] = {'V', 'M', 'C', 'K'};
inline constexpr std::uint32_t checkpoint_version = 1;

struct NamedTensor {
    std::string name;
    std::vector<std::size_t> dims;
    std::vector<float> values;
};

/// Ordered table of uniquely named float32 tensors.
class Checkpoint {
public:
    void add(std::string name, const Tensor& t) { add(std::move(name), t.dims(), t.data()); }

    void add(std::string name, std::vector<std::size_t> dims, std::span<const float> values)
    {
        if (name.empty() || name.size() > std::numeric_limits<std::uint16_t>::max()) {
            throw ConfigError("checkpoint tensor name must be 1..65535 bytes");
        }
        if (dims.empty() || dims.size() > std::numeric_limits<std::uint8_t>::max()) {
            throw ShapeError("checkpoint tensor '" + name + "' has unsupported rank");
        }
        if (Tensor::count(dims) != values.size()) {
            throw ShapeError("checkpoint tensor '" + name + "' value count does not match dims");
        }
        if (!names_.insert(name).second) {
            throw ConfigError("duplicate checkpoint tensor name '" + name + "'");
        }
        entries_.push_back({std::move(name), std::move(dims), std::vector<float>(values.begin(), values.end())});
    }

    const std::vector<NamedTensor>& entries() const noexcept { return entries_; }
    std::size_t size() const noexcept { return entries_.size(); }

    bool contains(const std::string& name) const { return names_.count(name) != 0; }

    const NamedTensor& at(const std::string& name) const
    {
        for (const auto& e : entries_) {
            if (e.name == name) {
                return e;
            }
        }
        throw FormatError("checkpoint has no tensor '" + name + "'", 0);
    }

    /// Copies a stored tensor into `t`, which must already have the same shape.
    void get(const std::string& name, Tensor& t) const
    {
        const auto& e = at(name);
        if (e.dims != t.dims()) {
            throw ShapeError("checkpoint tensor '" + name + "' has shape " + shape_string(e.dims) + ", expected " +
                             shape_string(t.dims()));
        }
        std::copy(e.values.begin(), e.values.end(), t.data().begin());
    }

    std::size_t parameter_count() const
    {
        std::size_t n = 0;
        for (const auto& e : entries_) {
            n += e.values.size();
        }
        return n;
    }

private:
    std::vector<NamedTensor> entries_;
    std::unordered_set<std::string> names_;
};

namespace detail {

template <class T>
void put(std::string& out, T value)
{
    char buf[sizeof(T)];
    std::memcpy(buf, &value, sizeof(T));
    out.append(buf, sizeof(T));
}

class Reader {
public:
    explicit Reader(const std::string& bytes) : bytes_(bytes) {}

    template <class T>
    T get(const char* what)
    {
        need(sizeof(T), what);
        T value;
        std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return value;
    }

    std::string take(std::size_t n, const char* what)
    {
        need(n, what);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    void read_floats(float* dst, std::size_t n, const char* what)
    {
        if (n > (bytes_.size() - pos_) / sizeof(float)) {
            throw FormatError(std::string("checkpoint truncated in ") + what, bytes_.size());
        }
        std::memcpy(dst, bytes_.data() + pos_, n * sizeof(float));
        pos_ += n * sizeof(float);
    }

    std::size_t pos() const noexcept { return pos_; }
    bool done() const noexcept { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n, const char* what)
    {
        if (bytes_.size() - pos_ < n) {
            throw FormatError(std::string("checkpoint truncated in ") + what, bytes_.size());
        }
    }

    const std::string& bytes_;
    std::size_t pos_ = 0;
};

} // namespace detail

/// Serialized size: 12-byte header, per tensor 2 + name + 1 + 4*ndim bytes,
/// plus 4 bytes per stored value.
inline std::size_t checkpoint_size(const Checkpoint& ckpt)
{
    std::size_t n = 12;
    for (const auto& e : ckpt.entries()) {
        n += 2 + e.name.size() + 1 + 4 * e.dims.size() + 4 * e.values.size();
    }
    return n;
}

inline std::string serialize_checkpoint(const Checkpoint& ckpt)
{
    std::string out;
    out.reserve(checkpoint_size(ckpt));
    out.append(checkpoint_magic, 4);
    detail::put<std::uint32_t>(out, checkpoint_version);
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.size()));
    for (const auto& e : ckpt.entries()) {
        detail::put<std::uint16_t>(out, static_cast<std::uint16_t>(e.name.size()));
        out += e.name;
        detail::put<std::uint8_t>(out, static_cast<std::uint8_t>(e.dims.size()));
        for (std::size_t d : e.dims) {
            if (d > std::numeric_limits<std::uint32_t>::max()) {
                throw ShapeError("checkpoint dimension exceeds u32");
            }
            detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
        }
        out.append(reinterpret_cast<const char*>(e.values.data()), e.values.size() * sizeof(float));
    }
    return out;
}

inline Checkpoint deserialize_checkpoint(const std::string& bytes)
{
    detail::Reader in(bytes);
    const std::string magic = in.take(4, "magic");
    if (magic != std::string(checkpoint_magic, 4)) {
        throw FormatError("bad checkpoint magic", 0);
    }
    const auto version = in.get<std::uint32_t>("version");
    if (version != checkpoint_version) {
        throw FormatError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                              std::to_string(checkpoint_version) + ")",
                          4);
    }
    const auto count = in.get<std::uint32_t>("tensor count");
    Checkpoint ckpt;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::size_t entry_start = in.pos();
        const auto name_len = in.get<std::uint16_t>("name length");
        std::string name = in.take(name_len, "name");
        const auto ndim = in.get<std::uint8_t>("rank");
        if (ndim == 0) {
            throw FormatError("tensor '" + name + "' has rank 0", entry_start);
        }
        std::vector<std::size_t> dims(ndim);
        std::size_t n = 1;
        for (auto& d : dims) {
            d = in.get<std::uint32_t>("dims");
            if (d == 0) {
                throw FormatError("tensor '" + name + "' has a zero dimension", in.pos() - 4);
            }
            if (n > bytes.size() / d) {
                throw FormatError("tensor '" + name + "' is larger than the file", in.pos() - 4);
            }
            n *= d;
        }
        std::vector<float> values(0);
        if (n > (bytes.size() - in.pos()) / sizeof(float)) {
            throw FormatError("checkpoint truncated in payload of '" + name + "'", bytes.size());
        }
        values.resize(n);
        in.read_floats(values.data(), n, "payload");
        if (ckpt.contains(name)) {
            throw FormatError("duplicate tensor name '" + name + "'", entry_start);
        }
        ckpt.add(std::move(name), std::move(dims), values);
    }
    if (!in.done()) {
        throw FormatError("trailing bytes after last tensor", in.pos());
    }
    return ckpt;
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path)
{
    write_file(path, serialize_checkpoint(ckpt));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path)
{
    try {
        return deserialize_checkpoint(read_file(path));
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what(), e.offset());
    }
}

// ---------------------------------------------------------------------------
// parameter <-> table mapping

inline void export_params(Checkpoint& ckpt, const EncoderParams& p, const std::string& prefix = "encoder")
{
    for (std::size_t i = 0; i < 4; ++i) {
        const auto& b = p.blocks[i];
        const std::string conv = prefix + ".conv" + std::to_string(i + 1);
        const std::string bn = prefix + ".bn" + std::to_string(i + 1);
        ckpt.add(conv + ".weight", b.weights);
        ckpt.add(conv + ".bias", b.bias);
        ckpt.add(bn + ".gamma", b.bn.gamma);
        ckpt.add(bn + ".beta", b.bn.beta);
        ckpt.add(bn + ".running_mean", b.bn.running_mean);
        ckpt.add(bn + ".running_var", b.bn.running_var);
    }
}

inline void import_params(const Checkpoint& ckpt, EncoderParams& p, const std::string& prefix = "encoder")
{
    for (std::size_t i = 0; i < 4; ++i) {
        auto& b = p.blocks[i];
        const std::string conv = prefix + ".conv" + std::to_string(i + 1);
        const std::string bn = prefix + ".bn" + std::to_string(i + 1);
        const std::size_t in = i == 0 ? 1 : encoder_channels[i - 1];
        b.weights = Tensor({encoder_channels[i], in, 3, 3});
        b.bias = Tensor({encoder_channels[i]});
        b.bn = nn::BatchNormState(encoder_channels[i]);
        ckpt.get(conv + ".weight", b.weights);
        ckpt.get(conv + ".bias", b.bias);
        ckpt.get(bn + ".gamma", b.bn.gamma);
        ckpt.get(bn + ".beta", b.bn.beta);
        ckpt.get(bn + ".running_mean", b.bn.running_mean);
        ckpt.get(bn + ".running_var", b.bn.running_var);
    }
}

inline void export_params(Checkpoint& ckpt, const ProjectionParams& p)
{
    ckpt.add("projection.dense1.weight", p.w1);
    ckpt.add("projection.dense1.bias", p.b1);
    ckpt.add("projection.dense2.weight", p.w2);
    ckpt.add("projection.dense2.bias", p.b2);
}

inline void import_params(const Checkpoint& ckpt, ProjectionParams& p)
{
    p.w1 = Tensor({projection_dim, embedding_dim});
    p.b1 = Tensor({projection_dim});
    p.w2 = Tensor({projection_dim, projection_dim});
    p.b2 = Tensor({projection_dim});
    ckpt.get("projection.dense1.weight", p.w1);
    ckpt.get("projection.dense1.bias", p.b1);
    ckpt.get("projection.dense2.weight", p.w2);
    ckpt.get("projection.dense2.bias", p.b2);
}

inline void export_params(Checkpoint& ckpt, const ClassifierParams& p)
{
    for (std::size_t i = 0; i < 4; ++i) {
        const std::string name = "classifier.dense" + std::to_string(i + 1);
        ckpt.add(name + ".weight", p.weights[i]);
        ckpt.add(name + ".bias", p.biases[i]);
    }
}

inline void import_params(const Checkpoint& ckpt, ClassifierParams& p)
{
    std::size_t in = 2 * embedding_dim;
    for (std::size_t i = 0; i < 4; ++i) {
        const std::string name = "classifier.dense" + std::to_string(i + 1);
        p.weights[i] = Tensor({classifier_widths[i], in});
        p.biases[i] = Tensor({classifier_widths[i]});
        ckpt.get(name + ".weight", p.weights[i]);
        ckpt.get(name + ".bias", p.biases[i]);
        in = classifier_widths[i];
    }
}

inline void export_params(Checkpoint& ckpt, const SupervisedParams& p)
{
    export_params(ckpt, p.encoder, "supervised.encoder");
    ckpt.add("supervised.dense.weight", p.weights);
    ckpt.add("supervised.dense.bias", p.bias);
}

inline void import_params(const Checkpoint& ckpt, SupervisedParams& p)
{
    import_params(ckpt, p.encoder, "supervised.encoder");
    p.weights = Tensor({2, 2 * embedding_dim});
    p.bias = Tensor({2});
    ckpt.get("supervised.dense.weight", p.weights);
    ckpt.get("supervised.dense.bias", p.bias);
}

} // namespace viewret

#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "dint/model.hpp"

namespace dint {

// Checkpoint layout (all integers little-endian; tensor data is f32):
//   magic "DINTCKPT", u32 version,
//   u64 config length + canonical config text,
//   u64 meta length + free-form meta text (preserved verbatim),
//   u64 tensor count, then per tensor:
//     u64 name length + name, u32 rank, u64 extents..., f32 values.
// Tensors appear in parameter-registry order. Models templated on double
// narrow to f32 on save and widen on load.

namespace detail {

constexpr char kMagic[8] = {'D', 'I', 'N', 'T', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

inline void put_u32(std::string& b, uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& b, uint64_t v) {
    for (int i = 0; i < 8; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_f32(std::string& b, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(b, bits);
}

class ByteReader {
  public:
    explicit ByteReader(const std::string& buf) : buf_(buf) {}
    size_t offset() const { return off_; }
    bool done() const { return off_ == buf_.size(); }

    uint32_t u32(const char* what) {
        need(4, what);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<uint32_t>(static_cast<unsigned char>(buf_[off_ + i])) << (8 * i);
        off_ += 4;
        return v;
    }
    uint64_t u64(const char* what) {
        need(8, what);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<uint64_t>(static_cast<unsigned char>(buf_[off_ + i])) << (8 * i);
        off_ += 8;
        return v;
    }
    std::string str(uint64_t n, const char* what) {
        need(n, what);
        std::string s = buf_.substr(off_, n);
        off_ += n;
        return s;
    }
    float f32(const char* what) {
        uint32_t bits = u32(what);
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }

  private:
    void need(size_t n, const char* what) {
        if (off_ + n > buf_.size())
            throw FormatError(std::string("checkpoint truncated while reading ") + what, off_);
    }
    const std::string& buf_;
    size_t off_ = 0;
};

}  // namespace detail

template <typename T>
void save_checkpoint(const Model<T>& model, const std::string& meta, const std::string& path) {
    using namespace detail;
    std::string b;
    b.append(kMagic, 8);
    put_u32(b, kVersion);
    std::string cfg = model.cfg.to_text();
    put_u64(b, cfg.size());
    b += cfg;
    put_u64(b, meta.size());
    b += meta;
    auto params = model.params();
    put_u64(b, params.size());
    for (const auto& [name, t] : params) {
        put_u64(b, name.size());
        b += name;
        put_u32(b, static_cast<uint32_t>(t.rank()));
        for (size_t e : t.shape()) put_u64(b, e);
        for (size_t i = 0; i < t.numel(); ++i) put_f32(b, static_cast<float>(t.at(i)));
    }
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
    os.write(b.data(), static_cast<std::streamsize>(b.size()));
    if (!os) throw std::runtime_error("checkpoint: short write to '" + path + "'");
}

template <typename T>
Model<T> load_checkpoint(const std::string& path, std::string* meta_out = nullptr) {
    using namespace detail;
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
    std::string buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());

    ByteReader r(buf);
    std::string magic = r.str(8, "magic");
    if (std::memcmp(magic.data(), kMagic, 8) != 0)
        throw FormatError("checkpoint: bad magic '" + magic + "'", 0);
    uint32_t version = r.u32("version");
    if (version != kVersion)
        throw FormatError("checkpoint: unsupported version " + std::to_string(version), 8);

    std::string cfg_text = r.str(r.u64("config length"), "config text");
    ModelConfig cfg = ModelConfig::from_text(cfg_text);
    std::string meta = r.str(r.u64("meta length"), "meta text");
    if (meta_out) *meta_out = meta;

    Model<T> model = Model<T>::init(cfg);
    auto params = model.params();
    uint64_t count = r.u64("tensor count");
    if (count != params.size())
        throw FormatError("checkpoint: holds " + std::to_string(count) + " tensors, model needs " +
                              std::to_string(params.size()),
                          r.offset());
    for (auto& [name, t] : params) {
        size_t at = r.offset();
        std::string stored = r.str(r.u64("tensor name length"), "tensor name");
        if (stored != name)
            throw FormatError("checkpoint: tensor '" + stored + "' where '" + name +
                                  "' was expected",
                              at);
        uint32_t rank = r.u32("tensor rank");
        std::vector<size_t> shape(rank);
        for (auto& e : shape) e = r.u64("tensor extent");
        if (shape != t.shape())
            throw FormatError("checkpoint: tensor '" + name + "' has shape " + shape_str(shape) +
                                  ", model expects " + shape_str(t.shape()),
                              at);
        for (size_t i = 0; i < t.numel(); ++i)
            t.at(i) = static_cast<T>(r.f32("tensor data"));
    }
    if (!r.done())
        throw FormatError("checkpoint: " + std::to_string(buf.size() - r.offset()) +
                              " trailing bytes",
                          r.offset());
    return model;
}

}  // namespace dint

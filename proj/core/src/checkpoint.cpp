#include "bafo/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "bafo/cvae.hpp"

namespace bafo {

namespace {

class Writer {
public:
    void u8(std::uint8_t v) { bytes_.push_back(v); }
    void u16(std::uint16_t v) { le(v); }
    void u32(std::uint32_t v) { le(v); }
    void u64(std::uint64_t v) { le(v); }
    void i32(std::int32_t v) { le(static_cast<std::uint32_t>(v)); }
    void i64(std::int64_t v) { le(static_cast<std::uint64_t>(v)); }
    void f32(float v) { le(std::bit_cast<std::uint32_t>(v)); }
    void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
    void raw(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        bytes_.insert(bytes_.end(), b, b + n);
    }
    void str(const std::string& s) {
        u16(static_cast<std::uint16_t>(s.size()));
        raw(s.data(), s.size());
    }

    std::vector<std::uint8_t> take() { return std::move(bytes_); }

private:
    template <typename U>
    void le(U v) {
        for (std::size_t i = 0; i < sizeof(U); ++i) {
            bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
        }
    }
    std::vector<std::uint8_t> bytes_;
};

class Reader {
public:
    explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

    std::uint8_t u8() { return take<std::uint8_t>(); }
    std::uint16_t u16() { return take<std::uint16_t>(); }
    std::uint32_t u32() { return take<std::uint32_t>(); }
    std::uint64_t u64() { return take<std::uint64_t>(); }
    std::int32_t i32() { return static_cast<std::int32_t>(take<std::uint32_t>()); }
    std::int64_t i64() { return static_cast<std::int64_t>(take<std::uint64_t>()); }
    float f32() { return std::bit_cast<float>(take<std::uint32_t>()); }
    double f64() { return std::bit_cast<double>(take<std::uint64_t>()); }

    std::string str() {
        std::size_t n = u16();
        need(n, "string body");
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }

    void raw(void* out, std::size_t n, const char* what) {
        need(n, what);
        std::memcpy(out, bytes_.data() + pos_, n);
        pos_ += n;
    }

    std::uint64_t offset() const { return pos_; }
    bool exhausted() const { return pos_ == bytes_.size(); }

    [[noreturn]] void fail(const std::string& why) const {
        throw FormatError("checkpoint: " + why, pos_);
    }

private:
    void need(std::size_t n, const char* what) {
        if (pos_ + n > bytes_.size()) {
            throw FormatError(std::string("checkpoint truncated reading ") + what,
                              pos_);
        }
    }
    template <typename U>
    U take() {
        need(sizeof(U), "fixed-width field");
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) {
            v |= static_cast<U>(bytes_[pos_ + i]) << (8 * i);
        }
        pos_ += sizeof(U);
        return v;
    }

    const std::vector<std::uint8_t>& bytes_;
    std::size_t pos_ = 0;
};

void write_spec(Writer& w, const LayerSpec& spec) {
    w.str(spec.name);
    w.u8(static_cast<std::uint8_t>(spec.kind));
    w.u8(static_cast<std::uint8_t>(spec.activation));
    w.i64(spec.in);
    w.i64(spec.out);
    w.i64(spec.kernel);
    w.i64(spec.stride);
    w.i64(spec.padding);
    w.f64(spec.leaky_alpha);
}

LayerSpec read_spec(Reader& r) {
    LayerSpec spec;
    spec.name = r.str();
    std::uint8_t kind = r.u8();
    if (kind > 2) r.fail("unknown layer kind " + std::to_string(kind));
    spec.kind = static_cast<LayerKind>(kind);
    std::uint8_t act = r.u8();
    if (act > 3) r.fail("unknown activation " + std::to_string(act));
    spec.activation = static_cast<Activation>(act);
    spec.in = r.i64();
    spec.out = r.i64();
    spec.kernel = r.i64();
    spec.stride = r.i64();
    spec.padding = r.i64();
    spec.leaky_alpha = r.f64();
    return spec;
}

}  // namespace

std::vector<std::uint8_t> serialize_model(const CvaeModel& model) {
    Writer w;
    w.raw(kCheckpointMagic, 4);
    w.u32(model.format_version);

    const CvaeConfig& c = model.config;
    w.i32(c.latent_dim);
    w.i32(c.image_side);
    w.i32(c.batch_size);
    w.i32(c.epochs);
    w.f64(c.lr);
    w.f64(c.beta);
    w.u64(c.seed);
    w.u8(static_cast<std::uint8_t>(c.numeric_mode));
    w.i32(model.attr_dim);

    w.u32(static_cast<std::uint32_t>(model.encoder_specs.size()));
    for (const LayerSpec& s : model.encoder_specs) write_spec(w, s);
    w.u32(static_cast<std::uint32_t>(model.decoder_specs.size()));
    for (const LayerSpec& s : model.decoder_specs) write_spec(w, s);

    w.u8(static_cast<std::uint8_t>(model.decoder_feature_shape.size()));
    for (std::int64_t d : model.decoder_feature_shape) w.i64(d);

    w.u32(static_cast<std::uint32_t>(model.params.size()));
    for (const auto& [name, entry] : model.params) {  // std::map: sorted names
        w.str(name);
        w.u8(static_cast<std::uint8_t>(entry.value.rank()));
        for (std::int64_t d : entry.value.shape()) w.i64(d);
        w.u32(static_cast<std::uint32_t>(entry.value.size()));
        for (std::int64_t i = 0; i < entry.value.size(); ++i) {
            w.f32(static_cast<float>(entry.value.at(i)));
        }
    }
    return w.take();
}

CvaeModel deserialize_model(const std::vector<std::uint8_t>& bytes) {
    Reader r(bytes);
    char magic[4];
    r.raw(magic, 4, "magic");
    if (std::memcmp(magic, kCheckpointMagic, 4) != 0) {
        throw FormatError("checkpoint: bad magic bytes", 0);
    }
    std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        throw FormatError("checkpoint: unsupported version " +
                              std::to_string(version),
                          4);
    }

    CvaeModel model;
    model.format_version = version;
    CvaeConfig& c = model.config;
    c.latent_dim = r.i32();
    c.image_side = r.i32();
    c.batch_size = r.i32();
    c.epochs = r.i32();
    c.lr = r.f64();
    c.beta = r.f64();
    c.seed = r.u64();
    std::uint8_t mode = r.u8();
    if (mode > 1) r.fail("unknown numeric mode " + std::to_string(mode));
    c.numeric_mode = static_cast<NumericMode>(mode);
    model.attr_dim = r.i32();
    if (model.attr_dim != 0 && model.attr_dim != kAttrDim) {
        r.fail("invalid attr_dim " + std::to_string(model.attr_dim));
    }

    std::uint32_t n_enc = r.u32();
    for (std::uint32_t i = 0; i < n_enc; ++i) {
        model.encoder_specs.push_back(read_spec(r));
    }
    std::uint32_t n_dec = r.u32();
    for (std::uint32_t i = 0; i < n_dec; ++i) {
        model.decoder_specs.push_back(read_spec(r));
    }

    std::uint8_t rank = r.u8();
    for (std::uint8_t i = 0; i < rank; ++i) {
        model.decoder_feature_shape.push_back(r.i64());
    }

    std::uint32_t n_params = r.u32();
    for (std::uint32_t i = 0; i < n_params; ++i) {
        std::string name = r.str();
        std::uint8_t prank = r.u8();
        Shape shape;
        for (std::uint8_t d = 0; d < prank; ++d) shape.push_back(r.i64());
        std::uint32_t count = r.u32();
        if (static_cast<std::int64_t>(count) != numel(shape)) {
            r.fail("parameter " + name + " float count does not match shape");
        }
        std::vector<double> values(count);
        for (std::uint32_t k = 0; k < count; ++k) values[k] = r.f32();
        model.params.insert(name,
                            Tensor::from_values(shape, values, c.numeric_mode)
                                .with_requires_grad(true));
    }
    if (!r.exhausted()) {
        throw FormatError("checkpoint: trailing bytes", r.offset());
    }

    // Reject shape-inconsistent files outright rather than failing later.
    c.validate();
    Shape enc_out = propagate_shape(model.encoder_specs,
                                    {1, 3, c.image_side, c.image_side});
    if (enc_out != Shape{1, 2LL * c.latent_dim}) {
        throw FormatError("checkpoint: encoder specs inconsistent with config",
                          r.offset());
    }
    for (const LayerSpec& s : model.encoder_specs) {
        if (!model.params.contains(s.weight_name()) ||
            !model.params.contains(s.bias_name())) {
            throw FormatError("checkpoint: missing parameters for layer " + s.name,
                              r.offset());
        }
    }
    for (const LayerSpec& s : model.decoder_specs) {
        if (!model.params.contains(s.weight_name()) ||
            !model.params.contains(s.bias_name())) {
            throw FormatError("checkpoint: missing parameters for layer " + s.name,
                              r.offset());
        }
    }
    return model;
}

void save_checkpoint(const CvaeModel& model, const std::filesystem::path& path) {
    std::vector<std::uint8_t> bytes = serialize_model(model);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

CvaeModel load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return deserialize_model(bytes);
}

}  // namespace bafo

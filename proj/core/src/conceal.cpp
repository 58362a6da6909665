#include "bafo/conceal.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace bafo {

namespace {

Tensor row_to_vector(const Tensor& row, std::int64_t index) {
    std::int64_t d = row.dim(1);
    std::vector<double> v(static_cast<std::size_t>(d));
    for (std::int64_t i = 0; i < d; ++i) v[i] = row.at(index * d + i);
    return Tensor::from_values({d}, v, row.mode());
}

}  // namespace

ConcealedRecord conceal(const CvaeModel& model, const Tensor& image,
                        ConcealMode mode, std::uint64_t sample_seed,
                        const std::string& source_id, std::int64_t created_at) {
    EncodeOut enc = encode(model, image);
    ConcealedRecord record;
    if (mode == ConcealMode::Mean) {
        record.z = row_to_vector(enc.mu, 0);
    } else {
        Pcg32 rng(sample_seed);
        Tensor z = reparameterize(enc.mu, enc.logvar, rng);
        record.z = row_to_vector(z, 0);
        record.sampled = true;
    }
    record.model_fingerprint = model.fingerprint();
    record.source_id = source_id;
    record.created_at = created_at;
    return record;
}

Tensor reveal(const CvaeModel& model, const ConcealedRecord& record,
              const AttributeVector& target) {
    if (record.model_fingerprint != model.fingerprint()) {
        throw WrongModelError(
            "record was produced by a different model than the one loaded");
    }
    return decode(model, record.z, target);
}

namespace {

// Copies a [3,S,S] tile into cell (row, col) of the canvas.
void blit_tile(std::vector<double>& canvas, std::int64_t canvas_w,
               std::int64_t canvas_h, std::int64_t side, const Tensor& tile,
               std::int64_t row, std::int64_t col) {
    for (int c = 0; c < 3; ++c) {
        for (std::int64_t y = 0; y < side; ++y) {
            for (std::int64_t x = 0; x < side; ++x) {
                double v = tile.at((c * side + y) * side + x);
                std::int64_t cy = row * side + y;
                std::int64_t cx = col * side + x;
                canvas[(c * canvas_h + cy) * canvas_w + cx] = v;
            }
        }
    }
}

}  // namespace

Tensor render_grid(const CvaeModel& model, const Tensor& image,
                   const std::vector<int>& ages,
                   const std::vector<double>& genders,
                   const AttributeVector& origin_source) {
    if (ages.empty() || genders.empty()) {
        throw ConfigError("grid needs at least one age and one gender");
    }
    std::int64_t side = model.image_side();
    std::int64_t rows = static_cast<std::int64_t>(genders.size());
    std::int64_t cols = static_cast<std::int64_t>(ages.size()) + 1;
    std::int64_t canvas_w = cols * side;
    std::int64_t canvas_h = rows * side;
    std::vector<double> canvas(
        static_cast<std::size_t>(3 * canvas_w * canvas_h), 0.5);

    Tensor original = image;
    if (image.rank() == 4) {
        std::vector<double> v = image.to_vector();
        original = Tensor::from_values({3, side, side}, v, image.mode());
    }
    blit_tile(canvas, canvas_w, canvas_h, side, original, 0, 0);

    Tensor batch_image = image;
    if (image.rank() == 3) {
        std::vector<double> v = image.to_vector();
        batch_image = Tensor::from_values({1, 3, side, side}, v, image.mode());
    }
    ConcealedRecord record = conceal(model, batch_image);

    for (std::int64_t r = 0; r < rows; ++r) {
        for (std::size_t a = 0; a < ages.size(); ++a) {
            AttributeVector target = origin_source;
            target.age_norm =
                std::clamp(static_cast<double>(ages[a]) / kMaxAge, 0.0, 1.0);
            target.gender = genders[static_cast<std::size_t>(r)];
            Tensor revealed = reveal(model, record, target);
            std::vector<double> v = revealed.to_vector();
            Tensor tile = Tensor::from_values({3, side, side}, v, revealed.mode());
            blit_tile(canvas, canvas_w, canvas_h, side, tile, r,
                      static_cast<std::int64_t>(a) + 1);
        }
    }
    return Tensor::from_values({3, canvas_h, canvas_w}, canvas);
}

// --- record io ----------------------------------------------------------------

namespace {

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_str(std::vector<std::uint8_t>& out, const std::string& s) {
    put_u16(out, static_cast<std::uint16_t>(s.size()));
    out.insert(out.end(), s.begin(), s.end());
}

struct RecordReader {
    const std::vector<std::uint8_t>& bytes;
    std::size_t pos = 0;

    void need(std::size_t n, const char* what) {
        if (pos + n > bytes.size()) {
            throw FormatError(std::string("record truncated reading ") + what, pos);
        }
    }
    std::uint16_t u16() {
        need(2, "u16");
        std::uint16_t v = static_cast<std::uint16_t>(bytes[pos] | (bytes[pos + 1] << 8));
        pos += 2;
        return v;
    }
    std::uint32_t u32() {
        need(4, "u32");
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(bytes[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    std::string str() {
        std::size_t n = u16();
        need(n, "string");
        std::string s(reinterpret_cast<const char*>(bytes.data() + pos), n);
        pos += n;
        return s;
    }
};

}  // namespace

std::vector<std::uint8_t> serialize_record(const ConcealedRecord& record) {
    std::vector<std::uint8_t> out;
    out.insert(out.end(), kRecordMagic, kRecordMagic + 4);
    out.insert(out.end(), record.model_fingerprint.begin(),
               record.model_fingerprint.end());
    put_u32(out, static_cast<std::uint32_t>(record.z.size()));
    for (std::int64_t i = 0; i < record.z.size(); ++i) {
        put_u32(out, std::bit_cast<std::uint32_t>(
                         static_cast<float>(record.z.at(i))));
    }
    // Metadata: provenance only. No attribute ever goes in here.
    std::vector<std::pair<std::string, std::string>> meta = {
        {"source_id", record.source_id},
        {"created_at", std::to_string(record.created_at)},
        {"mode", record.sampled ? "sample" : "mean"},
    };
    put_u32(out, static_cast<std::uint32_t>(meta.size()));
    for (const auto& [k, v] : meta) {
        put_str(out, k);
        put_str(out, v);
    }
    return out;
}

std::vector<std::pair<std::string, std::string>> record_metadata(
    const std::vector<std::uint8_t>& bytes) {
    RecordReader r{bytes};
    r.need(4, "magic");
    if (std::memcmp(bytes.data(), kRecordMagic, 4) != 0) {
        throw FormatError("record: bad magic bytes", 0);
    }
    r.pos = 4;
    r.need(32, "fingerprint");
    r.pos += 32;
    std::uint32_t d = r.u32();
    r.need(static_cast<std::size_t>(d) * 4, "latent floats");
    r.pos += static_cast<std::size_t>(d) * 4;
    std::uint32_t count = r.u32();
    std::vector<std::pair<std::string, std::string>> meta;
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string k = r.str();
        std::string v = r.str();
        meta.emplace_back(std::move(k), std::move(v));
    }
    return meta;
}

void save_record(const ConcealedRecord& record,
                 const std::filesystem::path& path) {
    std::vector<std::uint8_t> bytes = serialize_record(record);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

ConcealedRecord load_record(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    RecordReader r{bytes};
    r.need(4, "magic");
    if (std::memcmp(bytes.data(), kRecordMagic, 4) != 0) {
        throw FormatError("record: bad magic bytes", 0);
    }
    r.pos = 4;
    ConcealedRecord record;
    r.need(32, "fingerprint");
    std::memcpy(record.model_fingerprint.data(), bytes.data() + r.pos, 32);
    r.pos += 32;
    std::uint32_t d = r.u32();
    std::vector<double> z(d);
    for (std::uint32_t i = 0; i < d; ++i) z[i] = r.f32();
    record.z = Tensor::from_values({static_cast<std::int64_t>(d)}, z);
    std::uint32_t count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string k = r.str();
        std::string v = r.str();
        if (k == "source_id") {
            record.source_id = v;
        } else if (k == "created_at") {
            record.created_at = std::stoll(v);
        } else if (k == "mode") {
            record.sampled = (v == "sample");
        }
    }
    if (r.pos != bytes.size()) {
        throw FormatError("record: trailing bytes", r.pos);
    }
    return record;
}

}  // namespace bafo

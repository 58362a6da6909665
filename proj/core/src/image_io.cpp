#include "bafo/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#ifdef BAFO_HAVE_JPEG
#include <jpeglib.h>
#endif

namespace bafo {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

Tensor rgb8_to_tensor(const std::vector<unsigned char>& rgb, std::int64_t h,
                      std::int64_t w) {
    std::vector<float> data(static_cast<std::size_t>(3 * h * w));
    for (std::int64_t y = 0; y < h; ++y) {
        for (std::int64_t x = 0; x < w; ++x) {
            for (int c = 0; c < 3; ++c) {
                data[(c * h + y) * w + x] =
                    rgb[(y * w + x) * 3 + c] / 255.0f;
            }
        }
    }
    Tensor t({3, h, w}, std::move(data));
    return engine_mode() == NumericMode::f64 ? t.to(NumericMode::f64) : t;
}

std::vector<unsigned char> tensor_to_rgb8(const Tensor& image) {
    if (image.rank() != 3 || image.dim(0) != 3) {
        throw CodecError("image tensor must be [3,H,W], got " +
                         shape_to_string(image.shape()));
    }
    std::int64_t h = image.dim(1), w = image.dim(2);
    std::vector<unsigned char> rgb(static_cast<std::size_t>(3 * h * w));
    for (std::int64_t y = 0; y < h; ++y) {
        for (std::int64_t x = 0; x < w; ++x) {
            for (int c = 0; c < 3; ++c) {
                double v = image.at((c * h + y) * w + x);
                v = std::clamp(v, 0.0, 1.0);
                rgb[(y * w + x) * 3 + c] =
                    static_cast<unsigned char>(std::lround(v * 255.0));
            }
        }
    }
    return rgb;
}

// --- PNG --------------------------------------------------------------------

Tensor read_png(std::FILE* f, const std::string& name) {
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                             nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw CodecError("libpng initialization failed for " + name);
    }
    std::vector<unsigned char> rgb;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw CodecError("corrupt PNG: " + name);
    }
    png_init_io(png, f);
    png_read_info(png, info);

    png_uint_32 w = png_get_image_width(png, info);
    png_uint_32 h = png_get_image_height(png, info);
    int bit_depth = png_get_bit_depth(png, info);
    int color_type = png_get_color_type(png, info);

    // Normalize every input variant to 8-bit RGB.
    if (bit_depth == 16) png_set_strip_16(png);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) {
        png_set_expand_gray_1_2_4_to_8(png);
    }
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color_type == PNG_COLOR_TYPE_GRAY ||
        color_type == PNG_COLOR_TYPE_GRAY_ALPHA) {
        png_set_gray_to_rgb(png);
    }
    if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);

    rgb.resize(static_cast<std::size_t>(w) * h * 3);
    rows.resize(h);
    for (png_uint_32 y = 0; y < h; ++y) {
        rows[y] = rgb.data() + static_cast<std::size_t>(y) * w * 3;
    }
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return rgb8_to_tensor(rgb, h, w);
}

void write_png(const std::filesystem::path& path, const Tensor& image) {
    std::vector<unsigned char> rgb = tensor_to_rgb8(image);
    std::int64_t h = image.dim(1), w = image.dim(2);
    FilePtr f(std::fopen(path.string().c_str(), "wb"));
    if (!f) throw IoError("cannot open " + path.string() + " for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                              nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw CodecError("libpng initialization failed for " + path.string());
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw CodecError("PNG encode failed: " + path.string());
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(w),
                 static_cast<png_uint_32>(h), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (std::int64_t y = 0; y < h; ++y) {
        png_write_row(png, rgb.data() + y * w * 3);
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

// --- ASCII PPM (P3) ----------------------------------------------------------

// Skips whitespace and '#' comments between PPM tokens.
bool next_ppm_token(std::istream& in, std::string& tok) {
    tok.clear();
    int ch;
    while ((ch = in.get()) != EOF) {
        if (ch == '#') {
            while ((ch = in.get()) != EOF && ch != '\n') {
            }
            continue;
        }
        if (!std::isspace(ch)) break;
    }
    if (ch == EOF) return false;
    do {
        tok.push_back(static_cast<char>(ch));
        ch = in.get();
    } while (ch != EOF && !std::isspace(ch) && ch != '#');
    if (ch == '#') in.unget();
    return true;
}

long parse_ppm_int(std::istream& in, const std::string& name,
                   const char* what) {
    std::string tok;
    if (!next_ppm_token(in, tok)) {
        throw CodecError("truncated PPM (" + std::string(what) + "): " + name);
    }
    try {
        std::size_t pos = 0;
        long v = std::stol(tok, &pos);
        if (pos != tok.size()) throw std::invalid_argument(tok);
        return v;
    } catch (const std::exception&) {
        throw CodecError("bad PPM " + std::string(what) + " '" + tok +
                         "': " + name);
    }
}

Tensor read_ppm(std::istream& in, const std::string& name) {
    std::string magic;
    if (!next_ppm_token(in, magic) || magic != "P3") {
        throw CodecError("not an ASCII PPM (expected P3): " + name);
    }
    long w = parse_ppm_int(in, name, "width");
    long h = parse_ppm_int(in, name, "height");
    long maxval = parse_ppm_int(in, name, "maxval");
    if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535) {
        throw CodecError("bad PPM header: " + name);
    }
    std::vector<unsigned char> rgb(static_cast<std::size_t>(w) * h * 3);
    for (std::size_t i = 0; i < rgb.size(); ++i) {
        long v = parse_ppm_int(in, name, "sample");
        if (v < 0 || v > maxval) {
            throw CodecError("PPM sample out of range: " + name);
        }
        rgb[i] = static_cast<unsigned char>(
            std::lround(v * 255.0 / static_cast<double>(maxval)));
    }
    return rgb8_to_tensor(rgb, h, w);
}

void write_ppm(const std::filesystem::path& path, const Tensor& image) {
    std::vector<unsigned char> rgb = tensor_to_rgb8(image);
    std::int64_t h = image.dim(1), w = image.dim(2);
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << "P3\n" << w << " " << h << "\n255\n";
    for (std::int64_t y = 0; y < h; ++y) {
        for (std::int64_t x = 0; x < w; ++x) {
            const unsigned char* px = rgb.data() + (y * w + x) * 3;
            out << int(px[0]) << " " << int(px[1]) << " " << int(px[2]);
            out << (x + 1 == w ? '\n' : ' ');
        }
    }
    if (!out) throw IoError("write failed: " + path.string());
}

// --- JPEG (read only) --------------------------------------------------------

#ifdef BAFO_HAVE_JPEG

struct JpegErrorMgr {
    jpeg_error_mgr pub;
    std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
    auto* mgr = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
    std::longjmp(mgr->jump, 1);
}

Tensor read_jpeg(std::FILE* f, const std::string& name) {
    jpeg_decompress_struct cinfo{};
    JpegErrorMgr err{};
    cinfo.err = jpeg_std_error(&err.pub);
    err.pub.error_exit = jpeg_error_exit;
    if (setjmp(err.jump)) {
        jpeg_destroy_decompress(&cinfo);
        throw CodecError("corrupt JPEG: " + name);
    }
    jpeg_create_decompress(&cinfo);
    jpeg_stdio_src(&cinfo, f);
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);
    std::int64_t w = cinfo.output_width;
    std::int64_t h = cinfo.output_height;
    std::vector<unsigned char> rgb(static_cast<std::size_t>(w) * h * 3);
    while (cinfo.output_scanline < cinfo.output_height) {
        unsigned char* row = rgb.data() +
                             static_cast<std::size_t>(cinfo.output_scanline) * w * 3;
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return rgb8_to_tensor(rgb, h, w);
}

#endif  // BAFO_HAVE_JPEG

}  // namespace

Tensor image_read(const std::filesystem::path& path) {
    FilePtr f(std::fopen(path.string().c_str(), "rb"));
    if (!f) throw IoError("cannot open " + path.string());
    unsigned char magic[8] = {};
    std::size_t got = std::fread(magic, 1, sizeof(magic), f.get());
    std::rewind(f.get());

    static const unsigned char png_sig[8] = {0x89, 'P', 'N', 'G',
                                             0x0d, 0x0a, 0x1a, 0x0a};
    if (got >= 8 && std::memcmp(magic, png_sig, 8) == 0) {
        return read_png(f.get(), path.string());
    }
    if (got >= 2 && magic[0] == 'P' && magic[1] == '3') {
        std::ifstream in(path);
        return read_ppm(in, path.string());
    }
    if (got >= 2 && magic[0] == 0xff && magic[1] == 0xd8) {
#ifdef BAFO_HAVE_JPEG
        return read_jpeg(f.get(), path.string());
#else
        throw CodecError("JPEG support not built in: " + path.string());
#endif
    }
    throw CodecError("unrecognized image format: " + path.string());
}

void image_write(const std::filesystem::path& path, const Tensor& image) {
    std::string ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png") {
        write_png(path, image);
    } else if (ext == ".ppm") {
        write_ppm(path, image);
    } else {
        throw CodecError("unsupported output extension '" + ext +
                         "' (use .png or .ppm)");
    }
}

}  // namespace bafo

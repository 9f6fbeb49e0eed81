#include "wsss/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <vector>

#include "wsss/errors.hpp"

namespace wsss::imageio {

namespace {

int next_pnm_token(std::istream& in, const std::string& path) {
    // skips whitespace and '#' comments per the netpbm grammar
    while (true) {
        int c = in.peek();
        if (c == EOF) throw IoError("truncated header in " + path);
        if (std::isspace(c)) {
            in.get();
            continue;
        }
        if (c == '#') {
            std::string line;
            std::getline(in, line);
            continue;
        }
        break;
    }
    int value = 0;
    if (!(in >> value)) throw IoError("malformed header in " + path);
    return value;
}

struct PnmHeader {
    int kind = 0;  // 5 or 6
    int w = 0, h = 0, maxval = 0;
};

PnmHeader read_header(std::istream& in, const std::string& path) {
    char p = 0, k = 0;
    in.get(p);
    in.get(k);
    if (p != 'P' || (k != '5' && k != '6')) throw IoError(path + ": not a binary PGM/PPM file");
    PnmHeader h;
    h.kind = k - '0';
    h.w = next_pnm_token(in, path);
    h.h = next_pnm_token(in, path);
    h.maxval = next_pnm_token(in, path);
    if (h.maxval <= 0 || h.maxval > 255) throw IoError(path + ": unsupported maxval " + std::to_string(h.maxval));
    in.get();  // single whitespace before raster
    if (h.w <= 0 || h.h <= 0) throw IoError(path + ": empty raster");
    return h;
}

std::vector<unsigned char> read_raster(std::istream& in, size_t n, const std::string& path) {
    std::vector<unsigned char> buf(n);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(in.gcount()) != n) throw IoError("truncated raster in " + path);
    return buf;
}

}  // namespace

Tensor read_image(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open image " + path);
    const PnmHeader h = read_header(f, path);
    const int64_t hw = static_cast<int64_t>(h.h) * h.w;
    Tensor out({3, h.h, h.w});
    const double scale = 1.0 / h.maxval;
    if (h.kind == 6) {
        auto buf = read_raster(f, static_cast<size_t>(hw) * 3, path);
        for (int64_t p = 0; p < hw; ++p)
            for (int c = 0; c < 3; ++c) out[c * hw + p] = buf[p * 3 + c] * scale;
    } else {
        auto buf = read_raster(f, static_cast<size_t>(hw), path);
        for (int64_t p = 0; p < hw; ++p) {
            const double v = buf[p] * scale;
            out[p] = v;
            out[hw + p] = v;
            out[2 * hw + p] = v;
        }
    }
    return out;
}

void write_ppm(const std::string& path, const Tensor& rgb) {
    if (rgb.ndim() != 3 || rgb.dim(0) != 3) throw DimensionError("write_ppm expects (3,H,W), got " + rgb.shape_str());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path);
    const int h = rgb.dim(1), w = rgb.dim(2);
    const int64_t hw = static_cast<int64_t>(h) * w;
    f << "P6\n" << w << " " << h << "\n255\n";
    std::vector<unsigned char> buf(static_cast<size_t>(hw) * 3);
    for (int64_t p = 0; p < hw; ++p)
        for (int c = 0; c < 3; ++c) {
            const double v = std::clamp(rgb[c * hw + p], 0.0, 1.0);
            buf[p * 3 + c] = static_cast<unsigned char>(std::lround(v * 255.0));
        }
    f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!f) throw IoError("short write to " + path);
}

Tensor read_label_map(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open label map " + path);
    const PnmHeader h = read_header(f, path);
    if (h.kind != 5) throw IoError(path + ": label maps must be single-channel PGM");
    const int64_t hw = static_cast<int64_t>(h.h) * h.w;
    auto buf = read_raster(f, static_cast<size_t>(hw), path);
    Tensor out({h.h, h.w});
    for (int64_t p = 0; p < hw; ++p) out[p] = static_cast<double>(buf[p]);
    return out;
}

void write_pgm_labels(const std::string& path, const Tensor& labels) {
    if (labels.ndim() != 2) throw DimensionError("write_pgm_labels expects (H,W), got " + labels.shape_str());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path);
    const int h = labels.dim(0), w = labels.dim(1);
    f << "P5\n" << w << " " << h << "\n255\n";
    std::vector<unsigned char> buf(static_cast<size_t>(h) * w);
    for (int64_t p = 0; p < labels.size(); ++p) {
        const double v = labels[p];
        if (v < 0.0 || v > 255.0 || v != std::floor(v))
            throw ValueError("label map value " + std::to_string(v) + " is not a byte index");
        buf[p] = static_cast<unsigned char>(v);
    }
    f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!f) throw IoError("short write to " + path);
}

Tensor resize_bilinear(const Tensor& rgb, int out_h, int out_w) {
    if (rgb.ndim() != 3) throw DimensionError("resize_bilinear expects (C,H,W), got " + rgb.shape_str());
    const int c = rgb.dim(0), h = rgb.dim(1), w = rgb.dim(2);
    if (out_h == h && out_w == w) return rgb;
    Tensor out({c, out_h, out_w});
    const double sy = static_cast<double>(h) / out_h;
    const double sx = static_cast<double>(w) / out_w;
    for (int ci = 0; ci < c; ++ci) {
        const double* src = rgb.data() + static_cast<int64_t>(ci) * h * w;
        double* dst = out.data() + static_cast<int64_t>(ci) * out_h * out_w;
        for (int oy = 0; oy < out_h; ++oy) {
            const double fy = std::clamp((oy + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
            const int y0 = static_cast<int>(fy);
            const int y1 = std::min(y0 + 1, h - 1);
            const double wy = fy - y0;
            for (int ox = 0; ox < out_w; ++ox) {
                const double fx = std::clamp((ox + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
                const int x0 = static_cast<int>(fx);
                const int x1 = std::min(x0 + 1, w - 1);
                const double wx = fx - x0;
                const double top = src[y0 * w + x0] * (1.0 - wx) + src[y0 * w + x1] * wx;
                const double bot = src[y1 * w + x0] * (1.0 - wx) + src[y1 * w + x1] * wx;
                dst[static_cast<int64_t>(oy) * out_w + ox] = top * (1.0 - wy) + bot * wy;
            }
        }
    }
    return out;
}

}  // namespace wsss::imageio

#include "imageout.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "csv.hpp"
#include "error.hpp"

namespace dhm::imageout {

namespace {

void put_u32(std::string& s, std::uint32_t v) {
    s.push_back(static_cast<char>((v >> 24) & 0xff));
    s.push_back(static_cast<char>((v >> 16) & 0xff));
    s.push_back(static_cast<char>((v >> 8) & 0xff));
    s.push_back(static_cast<char>(v & 0xff));
}

void put_chunk(std::ofstream& out, const char type[4], const std::string& data) {
    std::string head;
    put_u32(head, static_cast<std::uint32_t>(data.size()));
    out.write(head.data(), 4);
    out.write(type, 4);
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    std::uint32_t crc = crc32(0L, Z_NULL, 0);
    crc = crc32(crc, reinterpret_cast<const Bytef*>(type), 4);
    crc = crc32(crc, reinterpret_cast<const Bytef*>(data.data()),
                static_cast<uInt>(data.size()));
    std::string tail;
    put_u32(tail, crc);
    out.write(tail.data(), 4);
}

unsigned char to_byte(double v) {
    return static_cast<unsigned char>(std::lround(std::min(1.0, std::max(0.0, v)) * 255.0));
}

}  // namespace

void write_png(const std::string& path, int width, int height,
               const std::vector<unsigned char>& rgb) {
    require(static_cast<std::size_t>(width) * height * 3 == rgb.size(),
            ErrorCode::invalid_argument, "write_png: buffer size mismatch");
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), ErrorCode::io, "cannot write " + path);
    static const unsigned char sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    out.write(reinterpret_cast<const char*>(sig), 8);

    std::string ihdr;
    put_u32(ihdr, static_cast<std::uint32_t>(width));
    put_u32(ihdr, static_cast<std::uint32_t>(height));
    ihdr.push_back(8);   // bit depth
    ihdr.push_back(2);   // truecolor
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    put_chunk(out, "IHDR", ihdr);

    std::string raw;
    raw.reserve(static_cast<std::size_t>(height) * (1 + static_cast<std::size_t>(width) * 3));
    for (int y = 0; y < height; ++y) {
        raw.push_back(0);  // filter none
        raw.append(reinterpret_cast<const char*>(rgb.data() +
                                                 static_cast<std::size_t>(y) * width * 3),
                   static_cast<std::size_t>(width) * 3);
    }
    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::string idat(bound, '\0');
    int rc = compress2(reinterpret_cast<Bytef*>(idat.data()), &bound,
                       reinterpret_cast<const Bytef*>(raw.data()),
                       static_cast<uLong>(raw.size()), 6);
    require(rc == Z_OK, ErrorCode::io, "png deflate failed");
    idat.resize(bound);
    put_chunk(out, "IDAT", idat);
    put_chunk(out, "IEND", "");
    require(static_cast<bool>(out), ErrorCode::io, "write failed: " + path);
}

void write_tile_montage(const std::string& path, const std::vector<const ImageTile*>& tiles,
                        int rows, int cols, int upscale) {
    require(rows > 0 && cols > 0 && static_cast<int>(tiles.size()) <= rows * cols,
            ErrorCode::invalid_argument, "write_tile_montage: grid too small");
    int th = 0, tw = 0;
    for (const ImageTile* t : tiles)
        if (t) {
            th = t->height;
            tw = t->width;
            break;
        }
    require(th > 0, ErrorCode::invalid_argument, "write_tile_montage: no tiles");
    const int sep = 2;
    const int w = cols * (tw * upscale + sep) + sep;
    const int h = rows * (th * upscale + sep) + sep;
    std::vector<unsigned char> rgb(static_cast<std::size_t>(w) * h * 3, 24);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            std::size_t idx = static_cast<std::size_t>(r) * cols + c;
            if (idx >= tiles.size() || !tiles[idx]) continue;
            const ImageTile& tile = *tiles[idx];
            int oy = sep + r * (th * upscale + sep);
            int ox = sep + c * (tw * upscale + sep);
            for (int y = 0; y < th * upscale; ++y)
                for (int x = 0; x < tw * upscale; ++x) {
                    std::size_t p = (static_cast<std::size_t>(oy + y) * w + ox + x) * 3;
                    for (int ch = 0; ch < 3; ++ch)
                        rgb[p + static_cast<std::size_t>(ch)] = to_byte(
                            tile.at(y / upscale, x / upscale, std::min(ch, tile.channels - 1)));
                }
        }
    write_png(path, w, h, rgb);
}

Svg::Svg(double width, double height) : width_(width), height_(height) {}

void Svg::rect(double x, double y, double w, double h, const std::string& fill,
               const std::string& stroke) {
    body_ += "<rect x=\"" + format_fixed(x, 2) + "\" y=\"" + format_fixed(y, 2) +
             "\" width=\"" + format_fixed(w, 2) + "\" height=\"" + format_fixed(h, 2) +
             "\" fill=\"" + fill + "\"";
    if (!stroke.empty()) body_ += " stroke=\"" + stroke + "\"";
    body_ += "/>\n";
}

void Svg::circle(double cx, double cy, double r, const std::string& fill) {
    body_ += "<circle cx=\"" + format_fixed(cx, 2) + "\" cy=\"" + format_fixed(cy, 2) +
             "\" r=\"" + format_fixed(r, 2) + "\" fill=\"" + fill + "\"/>\n";
}

void Svg::line(double x1, double y1, double x2, double y2, const std::string& stroke,
               double width) {
    body_ += "<line x1=\"" + format_fixed(x1, 2) + "\" y1=\"" + format_fixed(y1, 2) +
             "\" x2=\"" + format_fixed(x2, 2) + "\" y2=\"" + format_fixed(y2, 2) +
             "\" stroke=\"" + stroke + "\" stroke-width=\"" + format_fixed(width, 2) +
             "\"/>\n";
}

void Svg::text(double x, double y, const std::string& s, int size, const std::string& fill) {
    body_ += "<text x=\"" + format_fixed(x, 2) + "\" y=\"" + format_fixed(y, 2) +
             "\" font-size=\"" + std::to_string(size) + "\" font-family=\"sans-serif\" fill=\"" +
             fill + "\">" + s + "</text>\n";
}

void Svg::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), ErrorCode::io, "cannot write " + path);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << format_fixed(width_, 0)
        << "\" height=\"" << format_fixed(height_, 0) << "\">\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n"
        << body_ << "</svg>\n";
    require(static_cast<bool>(out), ErrorCode::io, "write failed: " + path);
}

std::string color_scale(double t) {
    t = std::min(1.0, std::max(0.0, t));
    // two-segment lerp: dark blue -> teal -> yellow
    double r, g, b;
    if (t < 0.5) {
        double u = t / 0.5;
        r = 0.13 + 0.13 * u;
        g = 0.16 + 0.46 * u;
        b = 0.55 - 0.05 * u;
    } else {
        double u = (t - 0.5) / 0.5;
        r = 0.26 + 0.70 * u;
        g = 0.62 + 0.26 * u;
        b = 0.50 - 0.38 * u;
    }
    char buf[8];
    std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", static_cast<int>(r * 255),
                  static_cast<int>(g * 255), static_cast<int>(b * 255));
    return buf;
}

void write_scatter_svg(const std::string& path,
                       const std::vector<std::array<double, 2>>& coords,
                       const std::vector<double>& color_values, const std::string& title) {
    require(coords.size() == color_values.size() && !coords.empty(),
            ErrorCode::invalid_argument, "write_scatter_svg: size mismatch");
    const double W = 480, H = 480, margin = 40;
    double xmin = coords[0][0], xmax = xmin, ymin = coords[0][1], ymax = ymin;
    for (const auto& c : coords) {
        xmin = std::min(xmin, c[0]);
        xmax = std::max(xmax, c[0]);
        ymin = std::min(ymin, c[1]);
        ymax = std::max(ymax, c[1]);
    }
    double vmin = *std::min_element(color_values.begin(), color_values.end());
    double vmax = *std::max_element(color_values.begin(), color_values.end());
    auto sx = [&](double x) {
        return margin + (xmax > xmin ? (x - xmin) / (xmax - xmin) : 0.5) * (W - 2 * margin);
    };
    auto sy = [&](double y) {
        return H - margin - (ymax > ymin ? (y - ymin) / (ymax - ymin) : 0.5) * (H - 2 * margin);
    };
    Svg svg(W, H);
    svg.text(margin, 20, title, 13);
    for (std::size_t i = 0; i < coords.size(); ++i) {
        double t = vmax > vmin ? (color_values[i] - vmin) / (vmax - vmin) : 0.5;
        svg.circle(sx(coords[i][0]), sy(coords[i][1]), 3.2, color_scale(t));
    }
    svg.text(margin, H - 10, "min " + format_fixed(vmin, 3), 10);
    svg.text(W - margin - 80, H - 10, "max " + format_fixed(vmax, 3), 10);
    svg.save(path);
}

void write_heatmap_svg(const std::string& path, const std::vector<std::vector<double>>& grid,
                       const std::string& title) {
    require(!grid.empty() && !grid.front().empty(), ErrorCode::invalid_argument,
            "write_heatmap_svg: empty grid");
    const int rows = static_cast<int>(grid.size());
    const int cols = static_cast<int>(grid.front().size());
    const double cell = 56, margin = 46;
    const double W = margin * 2 + cols * cell, H = margin * 2 + rows * cell;
    double vmin = grid[0][0], vmax = vmin;
    for (const auto& row : grid)
        for (double v : row) {
            vmin = std::min(vmin, v);
            vmax = std::max(vmax, v);
        }
    Svg svg(W, H);
    svg.text(margin, 24, title, 13);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            double v = grid[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
            double t = vmax > vmin ? (v - vmin) / (vmax - vmin) : 0.5;
            double x = margin + c * cell;
            double y = H - margin - (r + 1) * cell;  // row 0 at the bottom
            svg.rect(x, y, cell, cell, color_scale(t), "#ffffff");
            svg.text(x + 5, y + cell / 2 + 4, format_fixed(v, 3), 10,
                     t > 0.6 ? "#222222" : "#f0f0f0");
        }
    svg.save(path);
}

}  // namespace dhm::imageout

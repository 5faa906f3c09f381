#pragma once

#include <string>
#include <vector>

#include "types.hpp"

namespace dhm::imageout {

// 8-bit RGB PNG (zlib-deflated, filter 0 scanlines).
void write_png(const std::string& path, int width, int height,
               const std::vector<unsigned char>& rgb);

// Tiles laid out on a rows x cols grid with separators, upscaled for
// visibility. Missing cells (nullptr) stay dark.
void write_tile_montage(const std::string& path, const std::vector<const ImageTile*>& tiles,
                        int rows, int cols, int upscale = 3);

// Minimal SVG builder for scatter plots and heat maps.
class Svg {
public:
    Svg(double width, double height);
    void rect(double x, double y, double w, double h, const std::string& fill,
              const std::string& stroke = "");
    void circle(double cx, double cy, double r, const std::string& fill);
    void line(double x1, double y1, double x2, double y2, const std::string& stroke,
              double width = 1.0);
    void text(double x, double y, const std::string& s, int size = 10,
              const std::string& fill = "#222222");
    void save(const std::string& path) const;

private:
    double width_, height_;
    std::string body_;
};

// Blue->yellow colormap over [0,1].
std::string color_scale(double t);

// Scatter of 2D points colored by a value column; writes a legend of the
// value range.
void write_scatter_svg(const std::string& path,
                       const std::vector<std::array<double, 2>>& coords,
                       const std::vector<double>& color_values, const std::string& title);

// Grid heat map (row 0 drawn at the bottom) with per-cell numeric labels.
void write_heatmap_svg(const std::string& path, const std::vector<std::vector<double>>& grid,
                       const std::string& title);

}  // namespace dhm::imageout

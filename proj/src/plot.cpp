#include "popgrowth/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include <json.hpp>
#include <zlib.h>

using nlohmann::json;

namespace popgrowth {

// ---------------------------------------------------------------------------
// Scatter SVG
// ---------------------------------------------------------------------------
namespace {

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

}  // namespace

void write_scatter_svg(const EvaluationReport& report, const fs::path& out_path) {
    if (report.records.empty()) throw ValidationError("scatter plot: report has no records");

    double lo = report.records.front().y, hi = lo;
    for (const auto& r : report.records) {
        lo = std::min({lo, r.y, r.p});
        hi = std::max({hi, r.y, r.p});
    }
    if (hi == lo) hi = lo + 1.0;
    const double pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;

    const int size = 640;
    const int margin = 60;
    const int plot = size - 2 * margin;
    auto sx = [&](double v) { return margin + plot * (v - lo) / (hi - lo); };
    auto sy = [&](double v) { return size - margin - plot * (v - lo) / (hi - lo); };

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size << "\" height=\"" << size
        << "\" viewBox=\"0 0 " << size << " " << size << "\">\n";
    svg << "<rect width=\"" << size << "\" height=\"" << size << "\" fill=\"white\"/>\n";
    svg << "<rect x=\"" << margin << "\" y=\"" << margin << "\" width=\"" << plot << "\" height=\""
        << plot << "\" fill=\"none\" stroke=\"#444\"/>\n";
    // identity line
    svg << "<line x1=\"" << sx(lo) << "\" y1=\"" << sy(lo) << "\" x2=\"" << sx(hi) << "\" y2=\""
        << sy(hi) << "\" stroke=\"#999\" stroke-dasharray=\"6,4\"/>\n";
    for (const auto& r : report.records)
        svg << "<circle cx=\"" << fmt(sx(r.y)) << "\" cy=\"" << fmt(sy(r.p))
            << "\" r=\"3.5\" fill=\"#1f77b4\" fill-opacity=\"0.55\"/>\n";

    svg << "<text x=\"" << size / 2 << "\" y=\"" << size - 16
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">true "
        << quantity_tag(report.quantity) << " (" << level_tag(report.level) << ")</text>\n";
    svg << "<text x=\"18\" y=\"" << size / 2
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\" "
           "transform=\"rotate(-90 18 "
        << size / 2 << ")\">predicted</text>\n";
    svg << "<text x=\"" << margin + 10 << "\" y=\"" << margin + 22
        << "\" font-family=\"sans-serif\" font-size=\"15\">RMSE " << fmt(report.rmse_value())
        << "   MAE " << fmt(report.mae_value()) << "   R&#178; " << fmt(report.r2_value())
        << "   n=" << report.n() << "</text>\n";
    svg << "<text x=\"" << margin + 10 << "\" y=\"" << sy(lo) + 16
        << "\" font-family=\"sans-serif\" font-size=\"12\" fill=\"#555\">" << fmt(lo)
        << "</text>\n";
    svg << "<text x=\"" << sx(hi) - 10 << "\" y=\"" << sy(lo) + 16
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\" fill=\"#555\">"
        << fmt(hi) << "</text>\n";
    svg << "</svg>\n";
    write_file_text(out_path, svg.str());
}

// ---------------------------------------------------------------------------
// Growth map PNG
// ---------------------------------------------------------------------------
std::vector<MapCell> read_growth_map_cells(const fs::path& map_path) {
    const std::string text = read_file_text(map_path);
    std::vector<MapCell> cells;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw ValidationError("malformed map line " + std::to_string(line_no) + ": " +
                                  e.what());
        }
        if (!j.contains("grid_row")) continue;  // unit summary line
        MapCell c;
        c.grid_row = j.at("grid_row").get<int>();
        c.grid_col = j.at("grid_col").get<int>();
        c.unit_id = j.at("unit_id").get<std::string>();
        c.value = j.at("value").get<double>();
        cells.push_back(std::move(c));
    }
    return cells;
}

namespace {

struct PngWriter {
    std::vector<std::uint8_t> out;

    void raw(const void* data, std::size_t len) {
        const auto* p = static_cast<const std::uint8_t*>(data);
        out.insert(out.end(), p, p + len);
    }
    void be32(std::uint32_t v) {
        const std::uint8_t b[4] = {std::uint8_t(v >> 24), std::uint8_t(v >> 16),
                                   std::uint8_t(v >> 8), std::uint8_t(v)};
        raw(b, 4);
    }
    void chunk(const char type[4], const std::vector<std::uint8_t>& data) {
        be32(static_cast<std::uint32_t>(data.size()));
        const std::size_t crc_start = out.size();
        raw(type, 4);
        raw(data.data(), data.size());
        const auto crc = crc32(0L, out.data() + crc_start, static_cast<uInt>(out.size() - crc_start));
        be32(static_cast<std::uint32_t>(crc));
    }
};

void write_png_rgb(const fs::path& path, int width, int height,
                   const std::vector<std::uint8_t>& rgb) {
    std::vector<std::uint8_t> scanlines;
    scanlines.reserve(static_cast<std::size_t>(height) * (1 + 3 * static_cast<std::size_t>(width)));
    for (int y = 0; y < height; ++y) {
        scanlines.push_back(0);  // filter: none
        const auto* row = rgb.data() + static_cast<std::size_t>(y) * width * 3;
        scanlines.insert(scanlines.end(), row, row + static_cast<std::size_t>(width) * 3);
    }
    uLongf compressed_len = compressBound(static_cast<uLong>(scanlines.size()));
    std::vector<std::uint8_t> compressed(compressed_len);
    if (compress2(compressed.data(), &compressed_len, scanlines.data(),
                  static_cast<uLong>(scanlines.size()), 9) != Z_OK)
        throw std::runtime_error("zlib compression failed while writing PNG");
    compressed.resize(compressed_len);

    PngWriter png;
    const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    png.raw(sig, 8);
    std::vector<std::uint8_t> ihdr;
    auto push32 = [&ihdr](std::uint32_t v) {
        ihdr.push_back(std::uint8_t(v >> 24));
        ihdr.push_back(std::uint8_t(v >> 16));
        ihdr.push_back(std::uint8_t(v >> 8));
        ihdr.push_back(std::uint8_t(v));
    };
    push32(static_cast<std::uint32_t>(width));
    push32(static_cast<std::uint32_t>(height));
    ihdr.push_back(8);   // bit depth
    ihdr.push_back(2);   // color type: truecolor
    ihdr.push_back(0);   // compression
    ihdr.push_back(0);   // filter
    ihdr.push_back(0);   // interlace
    png.chunk("IHDR", ihdr);
    png.chunk("IDAT", compressed);
    png.chunk("IEND", {});
    write_file_bytes(path, png.out.data(), png.out.size());
}

// Diverging palette centered at zero: blue (negative) - white - red (positive).
void diverging_color(double v, double vmax, std::uint8_t rgb[3]) {
    const double t = std::clamp(v / vmax, -1.0, 1.0);
    if (t >= 0.0) {
        rgb[0] = 255;
        rgb[1] = static_cast<std::uint8_t>(std::lround(255.0 * (1.0 - 0.75 * t)));
        rgb[2] = static_cast<std::uint8_t>(std::lround(255.0 * (1.0 - 0.88 * t)));
    } else {
        rgb[0] = static_cast<std::uint8_t>(std::lround(255.0 * (1.0 + 0.88 * t)));
        rgb[1] = static_cast<std::uint8_t>(std::lround(255.0 * (1.0 + 0.55 * t)));
        rgb[2] = 255;
    }
}

}  // namespace

void write_growth_map_png(const std::vector<MapCell>& cells, const fs::path& out_path,
                          int cell_pixels) {
    if (cells.empty()) throw ValidationError("growth map: no cell records");
    if (cell_pixels < 2) throw ValidationError("cell_pixels must be >= 2");

    int rows = 0, cols = 0;
    double vmax = 0.0;
    for (const auto& c : cells) {
        rows = std::max(rows, c.grid_row + 1);
        cols = std::max(cols, c.grid_col + 1);
        vmax = std::max(vmax, std::fabs(c.value));
    }
    if (vmax == 0.0) vmax = 1.0;

    std::map<std::pair<int, int>, const MapCell*> by_pos;
    for (const auto& c : cells) by_pos[{c.grid_row, c.grid_col}] = &c;

    const int width = cols * cell_pixels;
    const int height = rows * cell_pixels;
    std::vector<std::uint8_t> rgb(static_cast<std::size_t>(width) * height * 3, 230);

    auto unit_at = [&by_pos](int r, int c) -> const std::string* {
        const auto it = by_pos.find({r, c});
        return it == by_pos.end() ? nullptr : &it->second->unit_id;
    };

    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            const auto it = by_pos.find({r, c});
            std::uint8_t color[3] = {230, 230, 230};  // missing cell: grey
            if (it != by_pos.end()) diverging_color(it->second->value, vmax, color);
            const std::string* uid = it == by_pos.end() ? nullptr : &it->second->unit_id;
            const std::string* right = unit_at(r, c + 1);
            const std::string* below = unit_at(r + 1, c);
            for (int py = 0; py < cell_pixels; ++py) {
                for (int px = 0; px < cell_pixels; ++px) {
                    bool border = false;
                    if (uid) {
                        if (px == cell_pixels - 1 && (!right || *right != *uid)) border = true;
                        if (py == cell_pixels - 1 && (!below || *below != *uid)) border = true;
                        if (px == 0 && c == 0) border = true;
                        if (py == 0 && r == 0) border = true;
                    }
                    const std::size_t idx =
                        3 * (static_cast<std::size_t>(r * cell_pixels + py) * width +
                             static_cast<std::size_t>(c * cell_pixels + px));
                    if (border) {
                        rgb[idx] = rgb[idx + 1] = rgb[idx + 2] = 20;
                    } else {
                        rgb[idx] = color[0];
                        rgb[idx + 1] = color[1];
                        rgb[idx + 2] = color[2];
                    }
                }
            }
        }
    }
    write_png_rgb(out_path, width, height, rgb);
}

}  // namespace popgrowth

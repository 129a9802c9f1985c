#include "doll/plot.hpp"

#include "doll/formats.hpp"

#include <algorithm>
#include <fstream>
#include <map>

namespace doll {

namespace {

struct Rgb {
    uint8_t r, g, b;
};

constexpr Rgb kPalette[] = {{204, 51, 51}, {51, 102, 204}, {34, 153, 84},
                            {204, 153, 0}, {136, 78, 160}, {41, 128, 185}};

struct Canvas {
    int w, h;
    std::vector<uint8_t> px;  // rgb triplets

    Canvas(int w_, int h_) : w(w_), h(h_), px(static_cast<size_t>(w_) * h_ * 3, 255) {}

    void set(int x, int y, Rgb c) {
        if (x < 0 || x >= w || y < 0 || y >= h) return;
        const size_t i = (static_cast<size_t>(y) * w + x) * 3;
        px[i] = c.r;
        px[i + 1] = c.g;
        px[i + 2] = c.b;
    }

    void line(int x0, int y0, int x1, int y1, Rgb c) {
        const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
        const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
        int err = dx + dy;
        while (true) {
            set(x0, y0, c);
            if (x0 == x1 && y0 == y1) break;
            const int e2 = 2 * err;
            if (e2 >= dy) {
                err += dy;
                x0 += sx;
            }
            if (e2 <= dx) {
                err += dx;
                y0 += sy;
            }
        }
    }
};

}  // namespace

void write_curve_plot(const std::string& path, const std::vector<CurveSeries>& series,
                      int width, int height) {
    Canvas canvas(width, height);
    const int ml = 40, mr = 12, mt = 12, mb = 28;  // margins
    const int pw = width - ml - mr, ph = height - mt - mb;

    real xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    bool first = true;
    for (const auto& s : series)
        for (const auto& [x, y] : s.points) {
            if (first) {
                xmin = xmax = x;
                ymin = ymax = y;
                first = false;
            }
            xmin = std::min(xmin, x);
            xmax = std::max(xmax, x);
            ymin = std::min(ymin, y);
            ymax = std::max(ymax, y);
        }
    if (xmax == xmin) xmax = xmin + 1;
    if (ymax == ymin) ymax = ymin + 1;

    auto px = [&](real x) { return ml + static_cast<int>((x - xmin) / (xmax - xmin) * pw); };
    auto py = [&](real y) { return mt + ph - static_cast<int>((y - ymin) / (ymax - ymin) * ph); };

    const Rgb axis{60, 60, 60};
    canvas.line(ml, mt, ml, mt + ph, axis);
    canvas.line(ml, mt + ph, ml + pw, mt + ph, axis);
    for (int t = 1; t <= 4; ++t) {  // light horizontal grid
        const int y = mt + ph - ph * t / 4;
        canvas.line(ml, y, ml + pw, y, {225, 225, 225});
    }

    for (size_t si = 0; si < series.size(); ++si) {
        const Rgb c = kPalette[si % (sizeof(kPalette) / sizeof(kPalette[0]))];
        const auto& pts = series[si].points;
        for (size_t i = 1; i < pts.size(); ++i)
            canvas.line(px(pts[i - 1].first), py(pts[i - 1].second), px(pts[i].first),
                        py(pts[i].second), c);
        // legend swatch
        const int ly = mt + 6 + static_cast<int>(si) * 8;
        canvas.line(ml + pw - 30, ly, ml + pw - 18, ly, c);
    }

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw MissingArtifact("cannot write: " + path);
    f << "P6\n" << width << " " << height << "\n255\n";
    f.write(reinterpret_cast<const char*>(canvas.px.data()),
            static_cast<std::streamsize>(canvas.px.size()));
}

void write_curve_csv(const std::string& path, const std::vector<CurveSeries>& series) {
    std::map<real, std::vector<real>> rows;  // x -> y per series (nan = missing)
    for (size_t si = 0; si < series.size(); ++si)
        for (const auto& [x, y] : series[si].points) {
            auto& row = rows[x];
            row.resize(series.size(), std::numeric_limits<real>::quiet_NaN());
            row[si] = y;
        }
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw MissingArtifact("cannot write: " + path);
    f << "x";
    for (const auto& s : series) f << "," << s.label;
    f << "\n";
    for (const auto& [x, row] : rows) {
        f << format_real(x);
        for (size_t si = 0; si < series.size(); ++si) {
            f << ",";
            if (si < row.size() && std::isfinite(row[si])) f << format_real(row[si]);
        }
        f << "\n";
    }
}

}  // namespace doll

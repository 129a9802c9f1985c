#pragma once

#include "doll/core.hpp"

#include <string>
#include <utility>
#include <vector>

namespace doll {

struct CurveSeries {
    std::string label;
    std::vector<std::pair<real, real>> points;  // (x, y)
};

/// Renders line plots as a binary PPM (P6); no display server involved.
void write_curve_plot(const std::string& path, const std::vector<CurveSeries>& series,
                      int width = 480, int height = 320);

/// The CSV source for the same curves: x,<label...> rows on the union grid.
void write_curve_csv(const std::string& path, const std::vector<CurveSeries>& series);

}  // namespace doll

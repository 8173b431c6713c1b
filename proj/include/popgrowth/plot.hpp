#pragma once

#include "popgrowth/metrics.hpp"

namespace popgrowth {

// Scatter of true vs predicted values with an identity line and the report's
// RMSE/MAE/R2 annotated. Plotting only reads reports; it never writes them.
void write_scatter_svg(const EvaluationReport& report, const fs::path& out_path);

struct MapCell {
    int grid_row = 0;
    int grid_col = 0;
    std::string unit_id;
    double value = 0.0;
};

// Cell records of a growth map file (unit summary lines are skipped).
std::vector<MapCell> read_growth_map_cells(const fs::path& map_path);

// Raster choropleth with a diverging palette centered at zero and unit
// boundaries drawn in black.
void write_growth_map_png(const std::vector<MapCell>& cells, const fs::path& out_path,
                          int cell_pixels = 24);

}  // namespace popgrowth

#pragma once

#include <string>

namespace chaoscope {

struct CsvTable;

enum class PlotKind {
    EpsSweep,        // D(eps, v) vs eps, log-log, one series per direction
    LayerGain,       // gain vs layer index, log y, one series per direction
    Staircase,       // cumulative representation change along a sweep
    DecisionMap,     // binary raster of the winner grid
    AngularPolar,    // s_max(theta) polar profile
    SpectrumScatter, // s_max vs sigma_k, log-log scatter
    Convergence,     // kappa_smooth vs n_samples
};

PlotKind plot_kind_from_string(std::string_view text);
std::string_view to_string(PlotKind kind);

// Deterministic SVG: no timestamps, fixed ordering and formatting. Two
// renders of the same records are byte-identical. Throws
// std::invalid_argument on an empty table or a kind/record mismatch.
std::string render_svg(const CsvTable& table, PlotKind kind);

} // namespace chaoscope

#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "labelflow/core.hpp"
#include "labelflow/macro.hpp"

namespace labelflow {

/// Micro labels transferred to the macro grid and agreement metrics over
/// occupied control volumes (nodal cells [x_k - h/2, x_k + h/2], per axis,
/// holding at least one sample point).
struct Comparison {
    std::vector<double> micro_on_grid;  // NaN where unoccupied in 2D
    std::vector<char> occupied;
    std::size_t occupied_cells = 0;
    double sign_agreement = 0.0;  // fraction of occupied cells with equal sign
    double l2 = 0.0;              // root mean square difference over occupied cells
    double sup = 0.0;             // max abs difference over occupied cells
};

/// 1D: piecewise-linear interpolation of u through the sorted sample points
/// (constant beyond the ends). 2D: mean of the labels of the points in each
/// cell. Scalar (width 1) fields only.
Comparison compare_micro_macro(const PointCloud& cloud, const LabelState& micro, const MacroField& macro);

/// Same metrics between two fields on one grid, all nodes counted.
Comparison compare_fields(const MacroField& a, const MacroField& b);

struct CellScore {
    std::size_t cells = 0;  // occupied cells with a strict truth majority
    std::size_t agree = 0;
    double fraction = 0.0;
};

/// Sign class of a scalar field (negative -> 0, positive -> 1) against the
/// majority ground-truth label of the points in each occupied nodal cell.
/// With `interior_only`, cells of boundary nodes are skipped.
CellScore score_cells(const PointCloud& cloud, std::span<const int> truth, const MacroField& field,
                      bool interior_only = true);

/// CSV: x_0[,x_1],occupied,micro,macro
void write_comparison_csv(const std::filesystem::path& path, const Comparison& cmp, const MacroField& macro);

}  // namespace labelflow

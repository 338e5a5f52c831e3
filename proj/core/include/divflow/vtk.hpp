#pragma once

#include "divflow/assembly.hpp"
#include "divflow/estimators.hpp"

#include <string>

namespace divflow {

/// ASCII legacy VTK unstructured grid: POINTS, CELLS (triangles, type 5),
/// POINT_DATA with u sampled at vertices (cell-averaged reconstruction) and
/// vertex values of s and c, CELL_DATA with per-cell pressure means and the
/// optional element indicator.
void write_vtk(const CoupledState& fields, const std::string& path,
               const ElementIndicators* indicators = nullptr);

} // namespace divflow

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace rdms::grid {

struct Point {
  double x = 0.0;
  double y = 0.0;
};

/// Interior face between cells `i < j`. Boundary faces are never stored:
/// omitting them is what imposes the zero-flux condition on the domain boundary.
struct Face {
  std::size_t i = 0;
  std::size_t j = 0;
  double length = 0.0;    // |e_ij|
  double distance = 0.0;  // center-to-center distance d_ij
};

/// Cell-centred fine mesh described by volumes, centres and an interior face list.
///
/// Solvers only consume the face list, so nothing downstream depends on the
/// cells being rectangles. `nx`/`ny` record the structured layout that the
/// coarse-grid builder and the VTK writer need.
class FineGrid {
 public:
  FineGrid(std::size_t nx, std::size_t ny, double lx, double ly, std::vector<double> volumes,
           std::vector<Point> centers, std::vector<Face> faces);

  std::size_t cell_count() const { return volumes_.size(); }
  std::size_t nx() const { return nx_; }
  std::size_t ny() const { return ny_; }
  double lx() const { return lx_; }
  double ly() const { return ly_; }
  double hx() const { return lx_ / static_cast<double>(nx_); }
  double hy() const { return ly_ / static_cast<double>(ny_); }

  std::span<const double> volumes() const { return volumes_; }
  std::span<const Point> centers() const { return centers_; }
  std::span<const Face> faces() const { return faces_; }

  double volume(std::size_t cell) const { return volumes_[cell]; }
  const Point& center(std::size_t cell) const { return centers_[cell]; }

 private:
  std::size_t nx_;
  std::size_t ny_;
  double lx_;
  double ly_;
  std::vector<double> volumes_;
  std::vector<Point> centers_;
  std::vector<Face> faces_;
};

/// Uniform nx-by-ny rectangular grid on [0, lx] x [0, ly]; cell (ix, iy) has index iy*nx + ix.
FineGrid build_structured_grid(std::size_t nx, std::size_t ny, double lx, double ly);

enum class Label : std::uint8_t { background = 0, inclusion = 1 };

struct Circle {
  Point center;
  double radius = 0.0;
};

struct SubdomainMap {
  std::vector<Label> labels;
  std::vector<Circle> circles;

  std::size_t count(Label which) const;
};

/// A cell is an inclusion cell iff its centre lies inside (or on) any circle.
SubdomainMap mark_inclusions(const FineGrid& grid, std::span<const Circle> circles);

/// Reproducible inclusion layout: `count` non-overlapping circles with radius
/// in [r_min, r_max], fully inside the domain, drawn by rejection sampling from
/// a seeded mt19937_64 stream.
struct InclusionLayout {
  std::size_t count = 40;
  double r_min = 0.03;
  double r_max = 0.06;
  double min_gap = 0.01;
};

std::vector<Circle> random_inclusions(std::uint64_t seed, double lx, double ly,
                                      const InclusionLayout& layout = {});

/// Structured coarse overlay. Node (ix, iy) has index iy*(kx+1) + ix; coarse
/// cell (cx, cy) has index cy*kx + cx.
struct CoarseGrid {
  std::size_t kx = 0;
  std::size_t ky = 0;
  double hx = 0.0;  // coarse cell size H
  double hy = 0.0;
  std::vector<Point> nodes;
  std::vector<std::size_t> coarse_cell_of;          // per fine cell
  std::vector<std::vector<std::size_t>> patches;    // coarse cells adjacent to node i
  std::vector<std::vector<std::size_t>> local_cells;  // fine cells of omega_i, ascending

  std::size_t node_count() const { return nodes.size(); }
};

CoarseGrid build_coarse_grid(const FineGrid& grid, std::size_t kx, std::size_t ky);

/// Bilinear hat weights chi^i evaluated at fine cell centres, stored aligned
/// with `CoarseGrid::local_cells[i]`.
struct PartitionOfUnity {
  std::vector<std::vector<double>> weights;

  /// Weight of node `node` at fine cell `cell`; zero outside omega_i.
  double weight(const CoarseGrid& coarse, std::size_t node, std::size_t cell) const;
};

PartitionOfUnity build_partition_of_unity(const CoarseGrid& coarse, const FineGrid& grid);

}  // namespace rdms::grid

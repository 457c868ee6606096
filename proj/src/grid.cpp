#include "rdms/grid.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

namespace rdms::grid {

FineGrid::FineGrid(std::size_t nx, std::size_t ny, double lx, double ly,
                   std::vector<double> volumes, std::vector<Point> centers,
                   std::vector<Face> faces)
    : nx_(nx), ny_(ny), lx_(lx), ly_(ly), volumes_(std::move(volumes)),
      centers_(std::move(centers)), faces_(std::move(faces)) {
  if (volumes_.size() != centers_.size()) {
    throw std::invalid_argument("FineGrid: volume and centre counts differ");
  }
  for (const Face& f : faces_) {
    if (f.i == f.j || f.i >= volumes_.size() || f.j >= volumes_.size()) {
      throw std::invalid_argument("FineGrid: face references invalid cells");
    }
    if (!(f.length > 0.0) || !(f.distance > 0.0)) {
      throw std::invalid_argument("FineGrid: face length and distance must be positive");
    }
  }
}

FineGrid build_structured_grid(std::size_t nx, std::size_t ny, double lx, double ly) {
  if (nx == 0 || ny == 0) {
    throw std::invalid_argument("build_structured_grid: nx and ny must be >= 1");
  }
  if (!(lx > 0.0) || !(ly > 0.0)) {
    throw std::invalid_argument("build_structured_grid: domain lengths must be positive");
  }
  const double hx = lx / static_cast<double>(nx);
  const double hy = ly / static_cast<double>(ny);
  const std::size_t n = nx * ny;

  std::vector<double> volumes(n, hx * hy);
  std::vector<Point> centers(n);
  std::vector<Face> faces;
  faces.reserve(nx * (ny - 1) + ny * (nx - 1));

  for (std::size_t iy = 0; iy < ny; ++iy) {
    for (std::size_t ix = 0; ix < nx; ++ix) {
      const std::size_t c = iy * nx + ix;
      centers[c] = {(static_cast<double>(ix) + 0.5) * hx, (static_cast<double>(iy) + 0.5) * hy};
      if (ix + 1 < nx) faces.push_back({c, c + 1, hy, hx});
      if (iy + 1 < ny) faces.push_back({c, c + nx, hx, hy});
    }
  }
  return FineGrid(nx, ny, lx, ly, std::move(volumes), std::move(centers), std::move(faces));
}

std::size_t SubdomainMap::count(Label which) const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), which));
}

SubdomainMap mark_inclusions(const FineGrid& grid, std::span<const Circle> circles) {
  SubdomainMap map;
  map.circles.assign(circles.begin(), circles.end());
  map.labels.assign(grid.cell_count(), Label::background);
  for (std::size_t c = 0; c < grid.cell_count(); ++c) {
    const Point& p = grid.center(c);
    for (const Circle& circle : circles) {
      const double dx = p.x - circle.center.x;
      const double dy = p.y - circle.center.y;
      if (dx * dx + dy * dy <= circle.radius * circle.radius) {
        map.labels[c] = Label::inclusion;
        break;
      }
    }
  }
  return map;
}

namespace {

// Platform-independent uniform draw in [0, 1); std::uniform_real_distribution
// is not specified bit-for-bit across standard libraries.
double unit_draw(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace

std::vector<Circle> random_inclusions(std::uint64_t seed, double lx, double ly,
                                      const InclusionLayout& layout) {
  if (layout.r_min <= 0.0 || layout.r_max < layout.r_min) {
    throw std::invalid_argument("random_inclusions: invalid radius range");
  }
  if (2.0 * layout.r_max >= std::min(lx, ly)) {
    throw std::invalid_argument("random_inclusions: radius too large for the domain");
  }
  std::mt19937_64 rng(seed);
  std::vector<Circle> circles;
  circles.reserve(layout.count);
  constexpr std::size_t kMaxAttempts = 200000;
  for (std::size_t attempt = 0; attempt < kMaxAttempts && circles.size() < layout.count;
       ++attempt) {
    const double r = layout.r_min + (layout.r_max - layout.r_min) * unit_draw(rng);
    const Point c{r + (lx - 2.0 * r) * unit_draw(rng), r + (ly - 2.0 * r) * unit_draw(rng)};
    const bool clear = std::none_of(circles.begin(), circles.end(), [&](const Circle& o) {
      return std::hypot(c.x - o.center.x, c.y - o.center.y) < r + o.radius + layout.min_gap;
    });
    if (clear) circles.push_back({c, r});
  }
  if (circles.size() < layout.count) {
    throw std::runtime_error("random_inclusions: could only place " +
                             std::to_string(circles.size()) + " of " +
                             std::to_string(layout.count) + " circles");
  }
  return circles;
}

CoarseGrid build_coarse_grid(const FineGrid& grid, std::size_t kx, std::size_t ky) {
  if (kx == 0 || ky == 0) {
    throw std::invalid_argument("build_coarse_grid: kx and ky must be >= 1");
  }
  if (grid.nx() % kx != 0 || grid.ny() % ky != 0) {
    throw std::invalid_argument("build_coarse_grid: coarse grid " + std::to_string(kx) + "x" +
                                std::to_string(ky) + " does not conform to fine grid " +
                                std::to_string(grid.nx()) + "x" + std::to_string(grid.ny()));
  }
  CoarseGrid coarse;
  coarse.kx = kx;
  coarse.ky = ky;
  coarse.hx = grid.lx() / static_cast<double>(kx);
  coarse.hy = grid.ly() / static_cast<double>(ky);

  const std::size_t nvx = kx + 1;
  const std::size_t nvy = ky + 1;
  coarse.nodes.resize(nvx * nvy);
  coarse.patches.resize(nvx * nvy);
  for (std::size_t iy = 0; iy < nvy; ++iy) {
    for (std::size_t ix = 0; ix < nvx; ++ix) {
      const std::size_t node = iy * nvx + ix;
      coarse.nodes[node] = {static_cast<double>(ix) * coarse.hx,
                            static_cast<double>(iy) * coarse.hy};
      for (std::size_t cy = (iy > 0 ? iy - 1 : 0); cy <= std::min(iy, ky - 1); ++cy) {
        for (std::size_t cx = (ix > 0 ? ix - 1 : 0); cx <= std::min(ix, kx - 1); ++cx) {
          coarse.patches[node].push_back(cy * kx + cx);
        }
      }
    }
  }

  const std::size_t rx = grid.nx() / kx;
  const std::size_t ry = grid.ny() / ky;
  coarse.coarse_cell_of.resize(grid.cell_count());
  std::vector<std::vector<std::size_t>> fine_of_coarse(kx * ky);
  for (std::size_t iy = 0; iy < grid.ny(); ++iy) {
    for (std::size_t ix = 0; ix < grid.nx(); ++ix) {
      const std::size_t cell = iy * grid.nx() + ix;
      const std::size_t cc = (iy / ry) * kx + ix / rx;
      coarse.coarse_cell_of[cell] = cc;
      fine_of_coarse[cc].push_back(cell);
    }
  }

  coarse.local_cells.resize(coarse.nodes.size());
  for (std::size_t node = 0; node < coarse.nodes.size(); ++node) {
    auto& cells = coarse.local_cells[node];
    for (std::size_t cc : coarse.patches[node]) {
      cells.insert(cells.end(), fine_of_coarse[cc].begin(), fine_of_coarse[cc].end());
    }
    std::sort(cells.begin(), cells.end());
  }
  return coarse;
}

double PartitionOfUnity::weight(const CoarseGrid& coarse, std::size_t node,
                                std::size_t cell) const {
  const auto& cells = coarse.local_cells[node];
  const auto it = std::lower_bound(cells.begin(), cells.end(), cell);
  if (it == cells.end() || *it != cell) return 0.0;
  return weights[node][static_cast<std::size_t>(it - cells.begin())];
}

PartitionOfUnity build_partition_of_unity(const CoarseGrid& coarse, const FineGrid& grid) {
  PartitionOfUnity pou;
  pou.weights.resize(coarse.node_count());
  for (std::size_t node = 0; node < coarse.node_count(); ++node) {
    const Point& xn = coarse.nodes[node];
    auto& w = pou.weights[node];
    w.reserve(coarse.local_cells[node].size());
    for (std::size_t cell : coarse.local_cells[node]) {
      const Point& xc = grid.center(cell);
      const double wx = std::max(0.0, 1.0 - std::abs(xc.x - xn.x) / coarse.hx);
      const double wy = std::max(0.0, 1.0 - std::abs(xc.y - xn.y) / coarse.hy);
      w.push_back(wx * wy);
    }
  }
  return pou;
}

}  // namespace rdms::grid

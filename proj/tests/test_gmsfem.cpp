#include "oracles.hpp"
#include "rdms/gmsfem.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

using namespace rdms;

namespace {

std::vector<fvm::SpeciesCoefficients> test1_species(double e_m, double e_c) {
  return {{{e_m, e_c}, {0.15, 0.1}, {{0, 0}, {0.055, 0.05}}},
          {{e_c, e_m}, {0.1, 0.15}, {{0.05, 0.055}, {0, 0}}}};
}

struct World {
  grid::FineGrid grid;
  grid::CoarseGrid coarse;
  grid::PartitionOfUnity pou;
  fvm::CoefficientField coeff;
  fvm::FineOperators ops;
};

World make_world(std::size_t n, std::size_t k, std::vector<grid::Circle> circles,
                 std::vector<fvm::SpeciesCoefficients> species) {
  auto g = grid::build_structured_grid(n, n, 1.0, 1.0);
  auto c = grid::build_coarse_grid(g, k, k);
  auto pou = grid::build_partition_of_unity(c, g);
  fvm::CoefficientField coeff(std::move(species), grid::mark_inclusions(g, circles).labels);
  auto ops = fvm::assemble_fine_operators(g, coeff);
  return {std::move(g), std::move(c), std::move(pou), std::move(coeff), std::move(ops)};
}

World default_world(std::size_t n = 24, std::size_t k = 4) {
  return make_world(n, k, {{{0.3, 0.6}, 0.12}, {{0.7, 0.3}, 0.15}}, test1_species(1e-3, 1e-1));
}

linalg::DenseMatrix dense(const linalg::SparseMatrix& a) { return linalg::DenseMatrix(a); }

oracle::Dense to_oracle(const linalg::DenseMatrix& m) {
  oracle::Dense d = oracle::zeros(static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()));
  for (int i = 0; i < m.rows(); ++i) {
    for (int j = 0; j < m.cols(); ++j) d[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = m(i, j);
  }
  return d;
}

linalg::SparseMatrix sparse(const linalg::DenseMatrix& d) {
  linalg::SparseMatrix s = d.sparseView();
  s.makeCompressed();
  return s;
}

}  // namespace

TEST_CASE("local diffusion: restriction identities") {
  const auto w = default_world(8, 2);
  const auto& t = w.ops.transmissibilities[0];
  std::vector<std::size_t> all(w.grid.cell_count());
  std::iota(all.begin(), all.end(), 0);
  CHECK(dense(gmsfem::assemble_local_diffusion(w.grid, t, all)).isApprox(dense(w.ops.diffusion[0])));
  const std::vector<std::size_t> one{5};
  const auto single = dense(gmsfem::assemble_local_diffusion(w.grid, t, one));
  CHECK(single.rows() == 1);
  CHECK(single(0, 0) == 0.0);
  CHECK_THROWS_AS(gmsfem::assemble_local_diffusion(w.grid, t, std::vector<std::size_t>{}), std::invalid_argument);
}

TEST_CASE("local spectral: two-cell closed form") {
  const auto g = grid::build_structured_grid(2, 1, 1.0, 0.5);
  const std::vector<double> t{0.6};
  const std::vector<std::size_t> cells{0, 1};
  const auto local = gmsfem::assemble_local_diffusion(g, t, cells);
  CHECK(dense(local).isApprox((linalg::DenseMatrix(2, 2) << 0.6, -0.6, -0.6, 0.6).finished()));
  const auto r = gmsfem::solve_local_spectral(local, 2);
  CHECK(std::abs(r.eigenvalues[0]) < 1e-15);
  CHECK(r.eigenvalues[1] == doctest::Approx(1.2));
  CHECK(r.eigenvectors(0, 0) == doctest::Approx(1 / std::sqrt(2.0)));
  CHECK(std::abs(r.eigenvectors(0, 1)) == doctest::Approx(1 / std::sqrt(2.0)));
  CHECK(r.eigenvectors(0, 1) == doctest::Approx(-r.eigenvectors(1, 1)));
  CHECK_THROWS_AS(gmsfem::solve_local_spectral(local, 3), std::invalid_argument);
}

TEST_CASE("local spectral: contract on every patch of a heterogeneous problem") {
  const auto w = default_world();
  for (std::size_t k = 0; k < 2; ++k) {
    for (std::size_t node = 0; node < w.coarse.node_count(); ++node) {
      const auto local = gmsfem::assemble_local_diffusion(w.grid, w.ops.transmissibilities[k],
                                                          w.coarse.local_cells[node]);
      const auto r = gmsfem::solve_local_spectral(local, 6, node);
      const double scale = linalg::norm_inf(local);
      const auto d = dense(local);
      CHECK(std::abs(r.eigenvalues[0]) <= 1e-10);
      const linalg::Vector psi1 = r.eigenvectors.col(0);
      CHECK(psi1.maxCoeff() - psi1.minCoeff() <= 1e-8);
      for (int l = 0; l < 6; ++l) {
        const linalg::Vector v = r.eigenvectors.col(l);
        CHECK((d * v - r.eigenvalues[l] * v).norm() <= 1e-8 * scale);
        CHECK(r.eigenvalues[l] >= -1e-12 * scale);
        CHECK(v.norm() == doctest::Approx(1.0));
        if (l > 0) CHECK(r.eigenvalues[l] >= r.eigenvalues[l - 1]);
      }
    }
  }
}

TEST_CASE("local spectral: random 20-cell operator against cyclic Jacobi") {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  const auto g = grid::build_structured_grid(5, 4, 1.0, 1.0);
  std::vector<double> t(g.faces().size());
  for (auto& x : t) x = u(rng);
  std::vector<std::size_t> cells(20);
  std::iota(cells.begin(), cells.end(), 0);
  const auto local = gmsfem::assemble_local_diffusion(g, t, cells);
  const auto ref = oracle::jacobi_eigen(to_oracle(dense(local)));
  const auto r = gmsfem::solve_local_spectral(local, 20);
  for (int l = 0; l < 20; ++l) CHECK(std::abs(r.eigenvalues[l] - ref.values[static_cast<std::size_t>(l)]) < 1e-8);
}

TEST_CASE("projection: row counts and constant reproduction") {
  const auto w = make_world(40, 10, {}, test1_species(1e-3, 1e-1));
  auto space = gmsfem::build_offline(w.grid, w.coarse, w.pou, w.ops, 0, 2);
  const auto p2 = space.species[0].projection;
  const auto p1 = gmsfem::truncate_projection(p2, 1);
  CHECK(p1.dof() == 121);
  CHECK(p2.dof() == 242);
  // Dividing each M = 1 row by its constant eigenvector value leaves chi^i; these sum to one.
  linalg::Vector sum = linalg::Vector::Zero(static_cast<Eigen::Index>(w.grid.cell_count()));
  for (std::size_t r = 0; r < p1.dof(); ++r) {
    const double psi = 1.0 / std::sqrt(static_cast<double>(w.coarse.local_cells[p1.rows[r].node].size()));
    for (linalg::SparseMatrix::InnerIterator it(p1.matrix, static_cast<Eigen::Index>(r)); it; ++it) {
      sum[it.col()] += it.value() / psi;
    }
  }
  CHECK((sum.array() - 1.0).abs().maxCoeff() < 1e-8);
}

TEST_CASE("projection: rows are supported on their local domain") {
  const auto w = default_world();
  const auto space = gmsfem::build_offline(w.grid, w.coarse, w.pou, w.ops, 0, 4);
  for (const auto& s : space.species) {
    CHECK(s.projection.dof() == 4 * w.coarse.node_count());
    for (std::size_t r = 0; r < s.projection.dof(); ++r) {
      const auto& cells = w.coarse.local_cells[s.projection.rows[r].node];
      for (linalg::SparseMatrix::InnerIterator it(s.projection.matrix, static_cast<Eigen::Index>(r)); it; ++it) {
        CHECK(std::binary_search(cells.begin(), cells.end(), static_cast<std::size_t>(it.col())));
      }
      if (r > 0) {
        const auto& a = s.projection.rows[r - 1];
        const auto& b = s.projection.rows[r];
        CHECK((a.node < b.node || (a.node == b.node && a.basis + 1 == b.basis)));
      }
    }
  }
}

TEST_CASE("projection: small patches keep all their eigenvectors") {
  const auto w = default_world(8, 4);  // corner patches have 4 cells
  const auto space = gmsfem::build_offline(w.grid, w.coarse, w.pou, w.ops, 0, 6);
  std::size_t expected = 0;
  for (const auto& cells : w.coarse.local_cells) expected += std::min<std::size_t>(6, cells.size());
  CHECK(space.dof(0) == expected);
  CHECK(space.dof(0) < 6 * w.coarse.node_count());
}

TEST_CASE("coarse operators: triple product, symmetry, PSD, constants") {
  const auto w = default_world();
  const auto space = gmsfem::build_offline(w.grid, w.coarse, w.pou, w.ops, 0, 3);
  const auto& s = space.species[1];
  const auto p = dense(s.projection.matrix);
  const auto ah = dense(s.coarse.stiffness);
  const auto mh = dense(s.coarse.mass);
  CHECK((ah - ah.transpose()).cwiseAbs().maxCoeff() == 0.0);
  CHECK((mh - mh.transpose()).cwiseAbs().maxCoeff() == 0.0);
  const auto ref = oracle::matmul(oracle::matmul(to_oracle(p), to_oracle(dense(w.ops.diffusion[1]))),
                                  oracle::transpose(to_oracle(p)));
  double worst = 0.0;
  for (int i = 0; i < ah.rows(); ++i) {
    for (int j = 0; j < ah.cols(); ++j) worst = std::max(worst, std::abs(ah(i, j) - ref[i][j]));
  }
  CHECK(worst < 1e-12);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n;
  for (int trial = 0; trial < 100; ++trial) {
    linalg::Vector v(ah.rows());
    for (auto& x : v) x = n(rng);
    CHECK(v.dot(ah * v) >= -1e-12 * v.squaredNorm());
    CHECK(v.dot(mh * v) > 0.0);
  }
  // Coarse representation of the fine constant annihilated by A_H.
  const linalg::Vector ones = linalg::Vector::Ones(static_cast<Eigen::Index>(w.grid.cell_count()));
  const auto c = gmsfem::project_initial(ones, s.projection, w.ops.mass, s.coarse.mass);
  CHECK((gmsfem::reconstruct_fine(c, s.projection) - ones).cwiseAbs().maxCoeff() < 1e-8);
  CHECK((ah * c).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("coarse operators: identity projection and random dense oracle") {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const auto w = default_world(4, 2);  // N = 16
  gmsfem::ProjectionMatrix id;
  id.matrix.resize(16, 16);
  id.matrix.setIdentity();
  for (std::size_t i = 0; i < 16; ++i) id.rows.push_back({i, 0});
  const auto sys = gmsfem::assemble_coarse(id, w.ops.diffusion[0], w.ops.mass);
  CHECK(dense(sys.stiffness).isApprox(dense(w.ops.diffusion[0])));
  CHECK(dense(sys.mass).isApprox(dense(w.ops.mass)));

  linalg::DenseMatrix pd(4, 16);
  for (auto& x : pd.reshaped()) x = u(rng);
  gmsfem::ProjectionMatrix p;
  p.matrix = sparse(pd);
  for (std::size_t i = 0; i < 4; ++i) p.rows.push_back({i, 0});
  const auto small = gmsfem::assemble_coarse(p, w.ops.diffusion[0], w.ops.mass);
  const auto ref = oracle::matmul(oracle::matmul(to_oracle(pd), to_oracle(dense(w.ops.diffusion[0]))),
                                  oracle::transpose(to_oracle(pd)));
  const auto ah = dense(small.stiffness);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) CHECK(std::abs(ah(i, j) - ref[i][j]) < 1e-12);
  }
}

TEST_CASE("project_initial and reconstruct_fine") {
  const auto w = default_world();
  const auto space = gmsfem::build_offline(w.grid, w.coarse, w.pou, w.ops, 0, 4);
  const auto& s = space.species[0];
  const auto n = static_cast<Eigen::Index>(w.grid.cell_count());
  const auto dof = static_cast<Eigen::Index>(s.projection.dof());

  SUBCASE("zero and unit coefficients") {
    CHECK(gmsfem::reconstruct_fine(linalg::Vector::Zero(dof), s.projection).isZero(0.0));
    linalg::Vector e = linalg::Vector::Zero(dof);
    e[7] = 1.0;
    const linalg::Vector col = gmsfem::reconstruct_fine(e, s.projection);
    const linalg::Vector row = dense(s.projection.matrix).row(7).transpose();
    CHECK(col == row);
    CHECK_THROWS_AS(gmsfem::reconstruct_fine(linalg::Vector::Zero(dof + 1), s.projection), std::invalid_argument);
  }
  SUBCASE("constants are exact") {
    const linalg::Vector c = linalg::Vector::Constant(n, 0.42);
    const auto uh = gmsfem::project_initial(c, s.projection, w.ops.mass, s.coarse.mass);
    CHECK((gmsfem::reconstruct_fine(uh, s.projection) - c).cwiseAbs().maxCoeff() < 1e-8);
  }
  SUBCASE("range vectors round-trip") {
    std::mt19937_64 rng(12);
    std::normal_distribution<double> g;
    linalg::Vector wv(dof);
    for (auto& x : wv) x = g(rng);
    const linalg::Vector u0 = gmsfem::reconstruct_fine(wv, s.projection);
    const auto uh = gmsfem::project_initial(u0, s.projection, w.ops.mass, s.coarse.mass);
    CHECK((gmsfem::reconstruct_fine(uh, s.projection) - u0).norm() < 1e-10 * u0.norm());
  }
  SUBCASE("mass-norm optimality against random perturbations") {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> un(0.0, 1.0);
    std::normal_distribution<double> g;
    linalg::Vector u0(n);
    for (auto& x : u0) x = un(rng);
    const auto uh = gmsfem::project_initial(u0, s.projection, w.ops.mass, s.coarse.mass);
    auto mass_err = [&](const linalg::Vector& c) {
      const linalg::Vector d = gmsfem::reconstruct_fine(c, s.projection) - u0;
      return d.dot(w.ops.mass * d);
    };
    const double best = mass_err(uh);
    for (int trial = 0; trial < 100; ++trial) {
      linalg::Vector pert(dof);
      for (auto& x : pert) x = 1e-3 * g(rng);
      CHECK(mass_err(uh + pert) >= best);
    }
  }
}

TEST_CASE("multiscale stepping: constants stay constant without reaction") {
  auto sp = test1_species(1e-3, 1e-1);
  for (auto& s : sp) {
    s.growth = {0, 0};
    for (auto& a : s.competition) a = {0, 0};
  }
  const auto w = make_world(24, 4, {{{0.5, 0.5}, 0.2}}, sp);
  const auto space = gmsfem::build_offline(w.grid, w.coarse, w.pou, w.ops, 0, 3);
  stepping::TimeSteppingConfig cfg;
  cfg.n_steps = 5;
  const auto r = gmsfem::solve_multiscale(space, fvm::uniform_state(2, w.grid.cell_count(), 0.3), w.ops,
                                          w.coeff, cfg);
  for (const auto& u : r.final_state.u) CHECK((u.array() - 0.3).abs().maxCoeff() < 1e-8);
}

TEST_CASE("multiscale stepping: homogeneous medium matches fine SI at every step") {
  const auto w = make_world(24, 4, {}, test1_species(1e-2, 1e-2));
  const auto space = gmsfem::build_offline(w.grid, w.coarse, w.pou, w.ops, 0, 2);
  stepping::TimeSteppingConfig cfg;
  cfg.n_steps = 20;
  const auto u0 = fvm::uniform_state(2, w.grid.cell_count(), 0.5);
  std::vector<fvm::SpeciesState> fine;
  stepping::solve_transient(stepping::Scheme::si, u0, w.ops, w.coeff, cfg,
                            [&](int, double, const fvm::SpeciesState& s) { fine.push_back(s); });
  int checked = 0;
  gmsfem::solve_multiscale(space, u0, w.ops, w.coeff, cfg, [&](int step, double, const fvm::SpeciesState& s) {
    for (std::size_t k = 0; k < 2; ++k) {
      CHECK((s.u[k] - fine[static_cast<std::size_t>(step)].u[k]).cwiseAbs().maxCoeff() < 1e-8);
    }
    ++checked;
  });
  CHECK(checked == 21);
}

TEST_CASE("multiscale stepping: step_ms equals one stepper step and leaves the space untouched") {
  const auto w = default_world();
  const auto space = gmsfem::build_offline(w.grid, w.coarse, w.pou, w.ops, 0, 3);
  const auto before = space.species[0].coarse.stiffness;
  const auto p_before = space.species[1].projection.matrix;
  stepping::TimeSteppingConfig cfg;
  const gmsfem::MultiscaleStepper stepper(space, w.ops, w.coeff, cfg);
  auto coarse = stepper.project(fvm::uniform_state(2, w.grid.cell_count(), 0.5));
  const auto next = gmsfem::step_ms(coarse, space, w.ops, w.coeff, cfg);
  for (int i = 0; i < 10; ++i) stepper.step(coarse);
  CHECK(next.size() == 2);
  CHECK(dense(space.species[0].coarse.stiffness) == dense(before));
  CHECK(dense(space.species[1].projection.matrix) == dense(p_before));
}

TEST_CASE("multiscale stepping: blocked reaction projection equals P R(P^T u_H) |K|") {
  const auto w = default_world();
  const auto space = gmsfem::build_offline(w.grid, w.coarse, w.pou, w.ops, 0, 4);
  const gmsfem::MultiscaleStepper stepper(space, w.ops, w.coeff, stepping::TimeSteppingConfig{});
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> un(0.0, 1.0);
  fvm::SpeciesState fine{{linalg::Vector(576), linalg::Vector(576)}};
  for (auto& u : fine.u) {
    for (auto& x : u) x = un(rng);
  }
  const auto coarse = stepper.project(fine);
  const auto blocked = stepper.projected_reaction(coarse);
  const auto rebuilt = stepper.reconstruct(coarse);
  const std::span<const double> vol(w.grid.volumes());
  for (std::size_t k = 0; k < 2; ++k) {
    const linalg::Vector plain = space.species[k].projection.matrix * fvm::reaction_load(rebuilt, w.coeff, vol, k);
    CHECK((blocked[k] - plain).cwiseAbs().maxCoeff() <= 1e-14 * plain.cwiseAbs().maxCoeff());
  }
}

TEST_CASE("offline space: truncation equals a direct build up to degenerate eigenspaces") {
  const auto w = default_world();
  const auto full = gmsfem::build_offline(w.grid, w.coarse, w.pou, w.ops, 0, 6);
  const auto direct = gmsfem::build_offline(w.grid, w.coarse, w.pou, w.ops, 0, 4);
  const auto cut = gmsfem::truncate_offline(full, w.ops, 4);
  std::size_t compared = 0;
  for (std::size_t k = 0; k < 2; ++k) {
    CHECK(cut.dof(k) == direct.dof(k));
    for (std::size_t node = 0; node < w.coarse.node_count(); ++node) {
      const auto& a = cut.species[k].spectra[node];
      const auto& b = direct.species[k].spectra[node];
      const double scale = std::max(1.0, b.eigenvalues.cwiseAbs().maxCoeff());
      CHECK((a.eigenvalues - b.eigenvalues).cwiseAbs().maxCoeff() <= 1e-12 * scale);
      // Symmetric patches have repeated eigenvalues; the spanned space is only
      // well defined when the cut falls in a spectral gap.
      const auto m = b.eigenvalues.size();
      if (m < full.species[k].spectra[node].eigenvalues.size() &&
          full.species[k].spectra[node].eigenvalues[m] - b.eigenvalues[m - 1] < 1e-6 * scale) {
        continue;
      }
      const linalg::DenseMatrix pa = a.eigenvectors * a.eigenvectors.transpose();
      const linalg::DenseMatrix pb = b.eigenvectors * b.eigenvectors.transpose();
      CHECK((pa - pb).cwiseAbs().maxCoeff() < 1e-8);
      ++compared;
    }
  }
  CHECK(compared > 0);
  CHECK_THROWS_AS(gmsfem::truncate_offline(full, w.ops, 7), std::invalid_argument);
}

TEST_CASE("offline space: truncation is exact for the M = 1 constant space") {
  const auto w = default_world();
  const auto full = gmsfem::build_offline(w.grid, w.coarse, w.pou, w.ops, 0, 6);
  const auto direct = gmsfem::build_offline(w.grid, w.coarse, w.pou, w.ops, 0, 1);
  const auto cut = gmsfem::truncate_offline(full, w.ops, 1);
  for (std::size_t k = 0; k < 2; ++k) {
    const auto d = dense(cut.species[k].projection.matrix) - dense(direct.species[k].projection.matrix);
    CHECK(d.cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("offline artifact: round trip, fingerprint and corruption checks") {
  const auto w = default_world();
  const auto fp = gmsfem::offline_fingerprint(w.grid, w.coarse, w.coeff);
  const auto space = gmsfem::build_offline(w.grid, w.coarse, w.pou, w.ops, fp, 4);
  const auto dir = std::filesystem::temp_directory_path() / "rdms_test_offline";
  std::filesystem::create_directories(dir);
  const auto path = dir / "space.bin";
  gmsfem::save_offline(space, path);

  const auto loaded = gmsfem::load_offline(path, fp);
  CHECK(loaded.basis_count == 4);
  for (std::size_t k = 0; k < 2; ++k) {
    CHECK(dense(loaded.species[k].projection.matrix) == dense(space.species[k].projection.matrix));
    CHECK(dense(loaded.species[k].coarse.mass) == dense(space.species[k].coarse.mass));
    CHECK(loaded.species[k].spectra[3].eigenvalues == space.species[k].spectra[3].eigenvalues);
  }

  SUBCASE("reaction rates do not change the fingerprint, diffusion does") {
    auto sp = test1_species(1e-3, 1e-1);
    sp[0].growth = {0.9, 0.9};
    const std::vector<grid::Label> labels(w.coeff.labels().begin(), w.coeff.labels().end());
    const fvm::CoefficientField other_reaction(sp, labels);
    CHECK(gmsfem::offline_fingerprint(w.grid, w.coarse, other_reaction) == fp);
    const fvm::CoefficientField other_eps(test1_species(1e-4, 1e-2), labels);
    const auto fp2 = gmsfem::offline_fingerprint(w.grid, w.coarse, other_eps);
    CHECK(fp2 != fp);
    CHECK_THROWS_AS(gmsfem::load_offline(path, fp2), std::runtime_error);
  }
  SUBCASE("truncated and corrupted files are rejected") {
    const auto size = std::filesystem::file_size(path);
    std::filesystem::copy_file(path, dir / "short.bin", std::filesystem::copy_options::overwrite_existing);
    std::filesystem::resize_file(dir / "short.bin", size / 2);
    CHECK_THROWS_AS(gmsfem::load_offline(dir / "short.bin", fp), std::runtime_error);
    std::ofstream(dir / "junk.bin") << "not an artifact at all";
    CHECK_THROWS_AS(gmsfem::load_offline(dir / "junk.bin", fp), std::runtime_error);
    CHECK_THROWS_AS(gmsfem::load_offline(dir / "missing.bin", fp), std::runtime_error);
  }
  std::filesystem::remove_all(dir);
}

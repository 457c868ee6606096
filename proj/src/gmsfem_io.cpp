// Versioned binary format for offline multiscale artifacts.
//
// Layout (host byte order, little-endian on every supported platform):
//   char[8]  magic "RDMSOFF\0"
//   u32      version
//   u64      fingerprint, basis_count, fine_cells, species
//   per species:
//     u64    domains; per domain: u64 index, u64 count, f64[count] eigenvalues
//     u64    dof; per row: u64 node, u64 basis
//     csr    P, A_H, M_H   (u64 rows, cols, nnz; i32[rows+1] outer; i32[nnz] inner; f64[nnz] values)
#include "rdms/gmsfem.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <sstream>

namespace rdms::gmsfem {

namespace {

constexpr std::array<char, 8> kMagic{'R', 'D', 'M', 'S', 'O', 'F', 'F', '\0'};
constexpr std::uint32_t kVersion = 1;

class Fnv1a {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      hash_ ^= p[i];
      hash_ *= 0x100000001b3ULL;
    }
  }
  template <class T>
  void value(const T& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    bytes(&v, sizeof(T));
  }
  std::uint64_t digest() const { return hash_; }

 private:
  std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : path_(path), out_(path, std::ios::binary) {
    if (!out_) throw std::runtime_error("cannot open " + path.string() + " for writing");
  }
  template <class T>
  void value(const T& v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  template <class T>
  void array(const T* data, std::size_t n) {
    out_.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(T)));
  }
  void sparse(const linalg::SparseMatrix& m) {
    value<std::uint64_t>(static_cast<std::uint64_t>(m.rows()));
    value<std::uint64_t>(static_cast<std::uint64_t>(m.cols()));
    value<std::uint64_t>(static_cast<std::uint64_t>(m.nonZeros()));
    array(m.outerIndexPtr(), static_cast<std::size_t>(m.rows()) + 1);
    array(m.innerIndexPtr(), static_cast<std::size_t>(m.nonZeros()));
    array(m.valuePtr(), static_cast<std::size_t>(m.nonZeros()));
  }
  void finish() {
    out_.flush();
    if (!out_) throw std::runtime_error("write failed for " + path_.string());
  }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw std::runtime_error("cannot open offline artifact " + path.string());
  }
  template <class T>
  T value() {
    T v{};
    in_.read(reinterpret_cast<char*>(&v), sizeof(T));
    check();
    return v;
  }
  template <class T>
  void array(T* data, std::size_t n) {
    in_.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * sizeof(T)));
    check();
  }
  std::size_t count(std::size_t limit, const char* what) {
    const auto n = value<std::uint64_t>();
    if (n > limit) fail(std::string("implausible ") + what + " count");
    return static_cast<std::size_t>(n);
  }
  linalg::SparseMatrix sparse() {
    constexpr std::size_t kLimit = std::size_t{1} << 31;
    const auto rows = count(kLimit, "row");
    const auto cols = count(kLimit, "column");
    const auto nnz = count(kLimit, "nonzero");
    std::vector<int> outer(rows + 1);
    std::vector<int> inner(nnz);
    std::vector<double> values(nnz);
    array(outer.data(), outer.size());
    array(inner.data(), inner.size());
    array(values.data(), values.size());
    if (outer.front() != 0 || static_cast<std::size_t>(outer.back()) != nnz) fail("corrupt row offsets");
    for (std::size_t r = 0; r < rows; ++r) {
      if (outer[r] > outer[r + 1]) fail("corrupt row offsets");
    }
    std::vector<linalg::Triplet> triplets;
    triplets.reserve(nnz);
    for (std::size_t r = 0; r < rows; ++r) {
      for (int k = outer[r]; k < outer[r + 1]; ++k) {
        const int c = inner[static_cast<std::size_t>(k)];
        if (c < 0 || static_cast<std::size_t>(c) >= cols) fail("column index out of range");
        triplets.emplace_back(static_cast<int>(r), c, values[static_cast<std::size_t>(k)]);
      }
    }
    linalg::SparseMatrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    m.setFromTriplets(triplets.begin(), triplets.end());
    m.makeCompressed();
    return m;
  }
  [[noreturn]] void fail(const std::string& why) const {
    throw std::runtime_error("offline artifact " + path_.string() + ": " + why);
  }

 private:
  void check() {
    if (!in_) fail("unexpected end of file");
  }
  std::filesystem::path path_;
  std::ifstream in_;
};

}  // namespace

std::uint64_t offline_fingerprint(const grid::FineGrid& grid, const grid::CoarseGrid& coarse,
                                  const fvm::CoefficientField& coeff) {
  Fnv1a h;
  h.value<std::uint64_t>(grid.nx());
  h.value<std::uint64_t>(grid.ny());
  h.value(grid.lx());
  h.value(grid.ly());
  h.value<std::uint64_t>(coarse.kx);
  h.value<std::uint64_t>(coarse.ky);
  for (grid::Label label : coeff.labels()) h.value(static_cast<std::uint8_t>(label));
  h.value<std::uint64_t>(coeff.species_count());
  for (const auto& s : coeff.species()) {
    h.value(s.diffusion.background);
    h.value(s.diffusion.inclusion);
  }
  return h.digest();
}

void save_offline(const OfflineSpace& space, const std::filesystem::path& path) {
  Writer w(path);
  w.array(kMagic.data(), kMagic.size());
  w.value(kVersion);
  w.value<std::uint64_t>(space.fingerprint);
  w.value<std::uint64_t>(space.basis_count);
  w.value<std::uint64_t>(space.fine_cells);
  w.value<std::uint64_t>(space.species.size());
  for (const auto& s : space.species) {
    w.value<std::uint64_t>(s.spectra.size());
    for (const auto& spec : s.spectra) {
      w.value<std::uint64_t>(spec.domain);
      w.value<std::uint64_t>(static_cast<std::uint64_t>(spec.eigenvalues.size()));
      w.array(spec.eigenvalues.data(), static_cast<std::size_t>(spec.eigenvalues.size()));
    }
    w.value<std::uint64_t>(s.projection.rows.size());
    for (const auto& row : s.projection.rows) {
      w.value<std::uint64_t>(row.node);
      w.value<std::uint64_t>(row.basis);
    }
    w.sparse(s.projection.matrix);
    w.sparse(s.coarse.stiffness);
    w.sparse(s.coarse.mass);
  }
  w.finish();
}

OfflineSpace load_offline(const std::filesystem::path& path, std::uint64_t expected_fingerprint) {
  Reader r(path);
  std::array<char, 8> magic{};
  r.array(magic.data(), magic.size());
  if (magic != kMagic) r.fail("not an offline artifact (bad magic)");
  const auto version = r.value<std::uint32_t>();
  if (version != kVersion) r.fail("unsupported version " + std::to_string(version));

  OfflineSpace space;
  space.fingerprint = r.value<std::uint64_t>();
  if (space.fingerprint != expected_fingerprint) {
    std::ostringstream msg;
    msg << "fingerprint mismatch (file " << std::hex << space.fingerprint << ", expected "
        << expected_fingerprint << "); the artifact was built for a different grid or diffusion field";
    r.fail(msg.str());
  }
  constexpr std::size_t kLimit = std::size_t{1} << 31;
  space.basis_count = r.count(kLimit, "basis");
  space.fine_cells = r.count(kLimit, "cell");
  const auto nspecies = r.count(1024, "species");
  for (std::size_t k = 0; k < nspecies; ++k) {
    SpeciesSpace s;
    const auto domains = r.count(kLimit, "domain");
    for (std::size_t d = 0; d < domains; ++d) {
      LocalSpectralResult spec;
      spec.domain = r.count(kLimit, "domain index");
      const auto m = r.count(kLimit, "eigenvalue");
      spec.eigenvalues.resize(static_cast<Eigen::Index>(m));
      r.array(spec.eigenvalues.data(), m);
      s.spectra.push_back(std::move(spec));
    }
    const auto dof = r.count(kLimit, "dof");
    s.projection.rows.resize(dof);
    for (auto& row : s.projection.rows) {
      row.node = r.count(kLimit, "node");
      row.basis = r.count(kLimit, "basis index");
    }
    s.projection.matrix = r.sparse();
    s.coarse.stiffness = r.sparse();
    s.coarse.mass = r.sparse();
    if (static_cast<std::size_t>(s.projection.matrix.rows()) != dof ||
        static_cast<std::size_t>(s.projection.matrix.cols()) != space.fine_cells ||
        static_cast<std::size_t>(s.coarse.stiffness.rows()) != dof ||
        static_cast<std::size_t>(s.coarse.mass.rows()) != dof) {
      r.fail("inconsistent matrix dimensions");
    }
    space.species.push_back(std::move(s));
  }
  return space;
}

}  // namespace rdms::gmsfem

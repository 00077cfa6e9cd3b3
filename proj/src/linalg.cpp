// Implementation of the sparse kernel toolbox: CSR assembly, direct
// factorization with a pivot-safety fallback, PCG, and small utilities.

#include "biotdd/linalg.hpp"

#include <Eigen/SparseCore>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <thread>
#include <utility>

namespace biotdd {

namespace {

Eigen::SparseMatrix<double> to_eigen(const SparseMatrix& a) {
  Eigen::SparseMatrix<double> m(a.n_rows, a.n_cols);
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(a.values.size());
  for (int r = 0; r < a.n_rows; ++r) {
    for (int k = a.row_offsets[r]; k < a.row_offsets[r + 1]; ++k) {
      trips.emplace_back(r, a.col_indices[k], a.values[k]);
    }
  }
  m.setFromTriplets(trips.begin(), trips.end());
  m.makeCompressed();
  return m;
}

constexpr double kPivotRelTol = 1e-13;

}  // namespace

double SparseMatrix::max_abs() const {
  double m = 0.0;
  for (double v : values) m = std::max(m, std::abs(v));
  return m;
}

void SparseMatrix::multiply(const Vector& x, Vector& y) const {
  y.resize(n_rows);
  for (int r = 0; r < n_rows; ++r) {
    double acc = 0.0;
    for (int k = row_offsets[r]; k < row_offsets[r + 1]; ++k) {
      acc += values[k] * x[col_indices[k]];
    }
    y[r] = acc;
  }
}

Vector SparseMatrix::operator*(const Vector& x) const {
  Vector y;
  multiply(x, y);
  return y;
}

void SparseMatrix::multiply_transpose_add(const Vector& x, double s,
                                          Vector& y) const {
  for (int r = 0; r < n_rows; ++r) {
    const double xr = s * x[r];
    if (xr == 0.0) continue;
    for (int k = row_offsets[r]; k < row_offsets[r + 1]; ++k) {
      y[col_indices[k]] += values[k] * xr;
    }
  }
}

SparseMatrix csr_from_triplets(int n_rows, int n_cols,
                               std::vector<Triplet> triplets) {
  SparseMatrix a;
  a.n_rows = n_rows;
  a.n_cols = n_cols;
  a.row_offsets.assign(static_cast<size_t>(n_rows) + 1, 0);
  std::sort(triplets.begin(), triplets.end(),
            [](const Triplet& x, const Triplet& y) {
              return x.row != y.row ? x.row < y.row : x.col < y.col;
            });
  a.col_indices.reserve(triplets.size());
  a.values.reserve(triplets.size());
  for (size_t i = 0; i < triplets.size();) {
    const int r = triplets[i].row;
    const int c = triplets[i].col;
    double v = 0.0;
    while (i < triplets.size() && triplets[i].row == r &&
           triplets[i].col == c) {
      v += triplets[i].value;
      ++i;
    }
    a.col_indices.push_back(c);
    a.values.push_back(v);
    a.row_offsets[static_cast<size_t>(r) + 1] =
        static_cast<int>(a.values.size());
  }
  // Rows without entries inherit the running offset.
  for (int r = 0; r < n_rows; ++r) {
    a.row_offsets[static_cast<size_t>(r) + 1] =
        std::max(a.row_offsets[static_cast<size_t>(r) + 1],
                 a.row_offsets[static_cast<size_t>(r)]);
  }
  return a;
}

bool verify_symmetric(SparseMatrix& a) {
  if (a.n_rows != a.n_cols) {
    a.symmetric = false;
    return false;
  }
  const double scale = a.max_abs();
  double worst = 0.0;
  for (int r = 0; r < a.n_rows; ++r) {
    for (int k = a.row_offsets[r]; k < a.row_offsets[r + 1]; ++k) {
      const int c = a.col_indices[k];
      // Binary search for (c, r).
      const int lo = a.row_offsets[c];
      const int hi = a.row_offsets[c + 1];
      const auto it = std::lower_bound(a.col_indices.begin() + lo,
                                       a.col_indices.begin() + hi, r);
      double mirror = 0.0;
      if (it != a.col_indices.begin() + hi && *it == r) {
        mirror = a.values[it - a.col_indices.begin()];
      }
      worst = std::max(worst, std::abs(a.values[k] - mirror));
    }
  }
  a.symmetric = worst <= 1e-12 * std::max(scale, 1e-300);
  return a.symmetric;
}

struct Factorization::Impl {
  std::unique_ptr<Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>>> ldlt;
  std::unique_ptr<Eigen::SparseLU<Eigen::SparseMatrix<double>>> lu;
  std::optional<Inertia> inertia;
  int n = 0;
};

Factorization::Factorization() : impl_(std::make_unique<Impl>()) {}
Factorization::~Factorization() = default;
Factorization::Factorization(Factorization&&) noexcept = default;
Factorization& Factorization::operator=(Factorization&&) noexcept = default;

Vector Factorization::solve(const Vector& b) const {
  if (impl_->ldlt) return impl_->ldlt->solve(b);
  return impl_->lu->solve(b);
}

std::optional<Inertia> Factorization::inertia() const {
  return impl_->inertia;
}

int Factorization::size() const { return impl_->n; }

Factorization factorize_symmetric_indefinite(const SparseMatrix& a,
                                             Factorization::Method method) {
  if (a.n_rows != a.n_cols) {
    throw std::invalid_argument("factorize: matrix must be square");
  }
  Factorization f;
  f.impl_->n = a.n_rows;
  const Eigen::SparseMatrix<double> m = to_eigen(a);

  const auto try_ldlt = [&]() -> bool {
    auto ldlt = std::make_unique<
        Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>>>();
    ldlt->compute(m);
    if (ldlt->info() != Eigen::Success) return false;
    const auto& d = ldlt->vectorD();
    double dmax = 0.0;
    for (Eigen::Index i = 0; i < d.size(); ++i) {
      if (!std::isfinite(d[i])) return false;
      dmax = std::max(dmax, std::abs(d[i]));
    }
    Inertia in;
    for (Eigen::Index i = 0; i < d.size(); ++i) {
      if (std::abs(d[i]) <= kPivotRelTol * dmax) {
        ++in.n_zero;
      } else if (d[i] > 0.0) {
        ++in.n_positive;
      } else {
        ++in.n_negative;
      }
    }
    if (in.n_zero > 0) {
      // Genuinely rank-deficient as seen by the unpivoted path; let the
      // pivoted fallback give the final verdict.
      return false;
    }
    f.impl_->ldlt = std::move(ldlt);
    f.impl_->inertia = in;
    return true;
  };

  const auto do_lu = [&]() {
    auto lu = std::make_unique<Eigen::SparseLU<Eigen::SparseMatrix<double>>>();
    lu->analyzePattern(m);
    lu->factorize(m);
    if (lu->info() != Eigen::Success) {
      throw SingularMatrixError(
          "factorize: singular matrix (pivoted LU found a zero pivot"
          " beyond the perturbation tolerance; " +
              std::string(lu->lastErrorMessage()) + ")",
          /*pivot_index=*/-1, /*pivot_value=*/0.0);
    }
    // Detect numerically vanishing pivots the library tolerated.
    const double det_shift = lu->logAbsDeterminant();
    if (!std::isfinite(det_shift)) {
      throw SingularMatrixError(
          "factorize: singular matrix (log|det| is not finite)",
          /*pivot_index=*/-1, /*pivot_value=*/0.0);
    }
    f.impl_->lu = std::move(lu);
  };

  switch (method) {
    case Factorization::Method::ldlt:
      if (!try_ldlt()) {
        throw SingularMatrixError(
            "factorize: LDLT met a zero or unstable pivot", -1, 0.0);
      }
      break;
    case Factorization::Method::lu:
      do_lu();
      break;
    case Factorization::Method::automatic:
      if (!try_ldlt()) do_lu();
      break;
  }
  return f;
}

PcgResult pcg(const LinearOperator& apply_a, const LinearOperator& apply_m,
              const Vector& b, double tol, int max_it) {
  PcgResult out;
  out.x = Vector::Zero(b.size());
  const double norm_b = b.norm();
  if (norm_b == 0.0) {
    out.report.converged = true;
    return out;
  }

  Vector r = b;
  Vector z = apply_m(r);
  Vector p = z;
  double rz = r.dot(z);
  const auto check = [&](double v, const char* what) {
    if (!std::isfinite(v)) {
      throw std::runtime_error(std::string("pcg: breakdown, non-finite ") +
                               what);
    }
  };
  check(rz, "r.z");

  for (int it = 1; it <= max_it; ++it) {
    const Vector q = apply_a(p);
    const double pq = p.dot(q);
    check(pq, "p.Ap");
    if (pq == 0.0) {
      throw std::runtime_error("pcg: breakdown, p.Ap vanished");
    }
    const double alpha = rz / pq;
    check(alpha, "alpha");
    out.x += alpha * p;
    r -= alpha * q;
    out.report.alphas.push_back(alpha);
    out.report.iterations = it;
    out.report.final_relative_residual = r.norm() / norm_b;
    check(out.report.final_relative_residual, "residual");
    if (out.report.final_relative_residual <= tol) {
      out.report.converged = true;
      return out;
    }
    z = apply_m(r);
    const double rz_next = r.dot(z);
    check(rz_next, "r.z");
    const double beta = rz_next / rz;
    out.report.betas.push_back(beta);
    p = z + beta * p;
    rz = rz_next;
  }
  out.report.converged = false;
  return out;
}

void write_matrix_market(std::ostream& os, const SparseMatrix& a) {
  const bool sym = a.symmetric;
  os << "%%MatrixMarket matrix coordinate real "
     << (sym ? "symmetric" : "general") << "\n";
  int count = 0;
  for (int r = 0; r < a.n_rows; ++r) {
    for (int k = a.row_offsets[r]; k < a.row_offsets[r + 1]; ++k) {
      if (!sym || a.col_indices[k] <= r) ++count;
    }
  }
  os << a.n_rows << " " << a.n_cols << " " << count << "\n";
  char buf[64];
  for (int r = 0; r < a.n_rows; ++r) {
    for (int k = a.row_offsets[r]; k < a.row_offsets[r + 1]; ++k) {
      if (sym && a.col_indices[k] > r) continue;
      std::snprintf(buf, sizeof(buf), "%d %d %.17g", r + 1,
                    a.col_indices[k] + 1, a.values[k]);
      os << buf << "\n";
    }
  }
}

void parallel_for(int n, int n_threads, const std::function<void(int)>& fn) {
  n_threads = std::max(1, std::min(n_threads, n));
  if (n_threads == 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(n_threads));
  for (int t = 0; t < n_threads; ++t) {
    pool.emplace_back([&, t]() {
      for (int i = t; i < n; i += n_threads) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace biotdd

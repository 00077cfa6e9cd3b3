// Sparse CSR storage, symmetric-indefinite direct factorization, and a
// preconditioned conjugate-gradient driver. Every other module builds on
// these types.

#pragma once

#include <Eigen/Core>

#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace biotdd {

using Vector = Eigen::VectorXd;

struct Triplet {
  int row = 0;
  int col = 0;
  double value = 0.0;
};

// Compressed-row sparse matrix. Column indices are strictly increasing within
// each row; duplicate assembly entries are summed by csr_from_triplets.
struct SparseMatrix {
  int n_rows = 0;
  int n_cols = 0;
  std::vector<int> row_offsets;  // size n_rows + 1
  std::vector<int> col_indices;
  std::vector<double> values;
  bool symmetric = false;  // verified flag, see verify_symmetric()

  [[nodiscard]] int nnz() const { return static_cast<int>(values.size()); }
  [[nodiscard]] double max_abs() const;
  void multiply(const Vector& x, Vector& y) const;
  [[nodiscard]] Vector operator*(const Vector& x) const;
  // y += s * A^T x; used for scatter-type couplings.
  void multiply_transpose_add(const Vector& x, double s, Vector& y) const;
};

SparseMatrix csr_from_triplets(int n_rows, int n_cols,
                               std::vector<Triplet> triplets);

// Checks ||A - A^T||_max <= 1e-12 * ||A||_max and records the result in the
// symmetric flag. Returns the verdict.
bool verify_symmetric(SparseMatrix& a);

struct Inertia {
  int n_positive = 0;
  int n_negative = 0;
  int n_zero = 0;
};

// Raised when a factorization meets a pivot that is zero beyond the
// perturbation tolerance; carries the evidence.
class SingularMatrixError : public std::runtime_error {
 public:
  SingularMatrixError(std::string what, int pivot_index, double pivot_value)
      : std::runtime_error(std::move(what)),
        pivot_index(pivot_index),
        pivot_value(pivot_value) {}
  int pivot_index;
  double pivot_value;
};

// Direct factorization of a (structurally) symmetric sparse matrix with
// repeated-solve support. The default path is an unpivoted sparse LDLT,
// which also yields the inertia; matrices it cannot handle safely fall back
// to a pivoted sparse LU (no inertia there).
class Factorization {
 public:
  enum class Method { automatic, ldlt, lu };

  Factorization();
  ~Factorization();
  Factorization(Factorization&&) noexcept;
  Factorization& operator=(Factorization&&) noexcept;
  Factorization(const Factorization&) = delete;
  Factorization& operator=(const Factorization&) = delete;

  [[nodiscard]] Vector solve(const Vector& b) const;
  [[nodiscard]] std::optional<Inertia> inertia() const;
  [[nodiscard]] int size() const;

 private:
  friend Factorization factorize_symmetric_indefinite(const SparseMatrix&,
                                                      Factorization::Method);
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

Factorization factorize_symmetric_indefinite(
    const SparseMatrix& a,
    Factorization::Method method = Factorization::Method::automatic);

struct PcgReport {
  int iterations = 0;
  double final_relative_residual = 0.0;
  bool converged = false;
  // Lanczos recurrence coefficients (one alpha per iteration, one beta per
  // completed iteration except the last); enough to rebuild the tridiagonal
  // matrix for condition estimates.
  std::vector<double> alphas;
  std::vector<double> betas;
};

struct PcgResult {
  Vector x;
  PcgReport report;
};

using LinearOperator = std::function<Vector(const Vector&)>;

// PCG with zero initial guess. Stops on the unpreconditioned relative
// residual ||b - A x|| / ||b|| <= tol. One iteration = one apply_a inside
// the loop; the initial residual is not counted.
PcgResult pcg(const LinearOperator& apply_a, const LinearOperator& apply_m,
              const Vector& b, double tol, int max_it);

// MatrixMarket coordinate format (1-based, real; symmetric storage when the
// flag is set).
void write_matrix_market(std::ostream& os, const SparseMatrix& a);

// Static-chunked helper for loops over independent slots; fn(i) must only
// write state owned by index i so results are identical for any n_threads.
void parallel_for(int n, int n_threads, const std::function<void(int)>& fn);

}  // namespace biotdd

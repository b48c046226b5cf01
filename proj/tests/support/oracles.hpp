#pragma once

// Independent reference implementations used as test oracles. Everything in
// here is deliberately written the slow, obvious way and stays decoupled
// from the library code paths it checks.

#include <cstddef>
#include <functional>
#include <vector>

#include "pcdiff/geometry.hpp"
#include "pcdiff/tensor.hpp"

namespace oracle {

// ---- finite differences ----

/// Central finite difference of f with respect to entry `index` of `values`.
double central_difference(const std::function<double(const std::vector<double>&)>& f,
                          std::vector<double> values, std::size_t index, double h = 1e-4);

/// Largest relative error (with absolute floor) between an analytic gradient
/// and central differences over every entry of one input.
double max_gradient_error(const std::function<double(const std::vector<double>&)>& f,
                          const std::vector<double>& values,
                          const std::vector<double>& analytic_grad, double h = 1e-4);

double relative_error(double analytic, double reference);

// ---- dense linear algebra ----

using Matrix = std::vector<std::vector<double>>;

/// Jacobi eigendecomposition of a symmetric matrix: A = V diag(lambda) V^T
/// with orthonormal columns in V.
struct SymmetricEig {
    std::vector<double> eigenvalues;
    Matrix eigenvectors;  // column j is the eigenvector of eigenvalues[j]
};
SymmetricEig jacobi_eig(const Matrix& a, std::size_t max_sweeps = 100);

Matrix mat_mul(const Matrix& a, const Matrix& b);
std::vector<double> mat_vec(const Matrix& a, const std::vector<double>& x);

/// Eigendecomposition route for the high-pass filter on a row-normalized
/// graph whose RAW weights are symmetric: A = D^-1 W is similar to the
/// symmetric S = D^-1/2 W D^-1/2, so (I - A)s = V (I - Lambda) V^-1 s with
/// V = D^-1/2 U. Exact spectral evaluation, no filter code involved.
std::vector<double> high_pass_via_eig(const Matrix& symmetric_raw_weights,
                                      const std::vector<double>& signal, std::size_t d);

/// Eigenpairs of the row-normalized A = D^-1 W for symmetric raw W.
struct GraphEig {
    std::vector<double> eigenvalues;
    Matrix eigenvectors;  // column j: right eigenvector of A
};
GraphEig row_normalized_eig(const Matrix& symmetric_raw_weights);

// ---- point-cloud brute force ----

std::vector<std::vector<std::size_t>> knn_bruteforce(const std::vector<pcd::geom::Vec3>& pts,
                                                     std::size_t k);

/// Minimum pairwise distance within the index subset.
double min_pairwise_distance(const std::vector<pcd::geom::Vec3>& pts,
                             const std::vector<std::size_t>& subset);

/// Best min-pairwise distance over all 3-point subsets (exhaustive).
double best_three_subset_separation(const std::vector<pcd::geom::Vec3>& pts);

// ---- metrics brute force ----

double chamfer_bruteforce(const std::vector<pcd::geom::Vec3>& a,
                          const std::vector<pcd::geom::Vec3>& b);

/// Exact EMD by trying all n! bijections (n <= 8).
double emd_factorial(const std::vector<pcd::geom::Vec3>& a, const std::vector<pcd::geom::Vec3>& b);

/// Reference 1-NNA over precomputed cloud-to-cloud distances. `dist` is the
/// pooled (G+R)x(G+R) table with generated clouds first.
double one_nna_reference(const Matrix& pooled_dist, std::size_t gen_count);

/// Reference coverage over the GxR table.
double coverage_reference(const Matrix& gen_to_ref);

}  // namespace oracle

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "pcdiff/geometry.hpp"

namespace pcd::metrics {

/// Chamfer distance: mean over X of the SQUARED distance to the nearest Y
/// point, plus the symmetric term. Squared-sum-both-directions is the common
/// ShapeNet evaluation convention; absolute values differ from unsquared
/// variants by design.
double chamfer(const std::vector<geom::Vec3>& x, const std::vector<geom::Vec3>& y);

/// Exact EMD: minimum over bijections of the mean matched Euclidean
/// distance, solved by the Hungarian method on the n x n cost matrix.
/// Intended for n <= 512.
double emd_exact(const std::vector<geom::Vec3>& x, const std::vector<geom::Vec3>& y);

/// Approximate EMD by auction with epsilon scaling (epsilon_0 = max cost /
/// 8, divided by 4 per round, `iterations` rounds). Returns the best
/// feasible assignment cost found (never below the exact optimum); `bound`
/// is the final epsilon, and value <= exact + bound.
struct EmdApprox {
    double value = 0.0;
    double bound = 0.0;
};
EmdApprox emd_approx(const std::vector<geom::Vec3>& x, const std::vector<geom::Vec3>& y,
                     std::size_t iterations);

enum class CloudDistance { chamfer, emd };

/// Distance between two clouds under the chosen kernel. EMD uses the exact
/// solver up to `exact_emd_max` points and the auction approximation above.
double cloud_distance(const std::vector<geom::Vec3>& a, const std::vector<geom::Vec3>& b,
                      CloudDistance kind, std::size_t exact_emd_max = 512);

using CloudSet = std::vector<std::vector<geom::Vec3>>;

/// Generated-by-reference distance table (rows: generated, cols: reference).
struct PairwiseDistanceTable {
    std::size_t gen_count = 0;
    std::size_t ref_count = 0;
    std::vector<double> values;  // gen_count * ref_count, row-major

    double at(std::size_t g, std::size_t r) const { return values[g * ref_count + r]; }
};

PairwiseDistanceTable pairwise_distances(const CloudSet& gen, const CloudSet& ref,
                                         CloudDistance kind, std::size_t exact_emd_max = 512,
                                         std::size_t threads = 1);

/// Leave-one-out 1-NN two-sample classification accuracy (percent). The two
/// sets are pooled with generated clouds first; nearest-neighbor ties keep
/// the lower pooled index.
double one_nna(const CloudSet& gen, const CloudSet& ref, CloudDistance kind,
               std::size_t exact_emd_max = 512, std::size_t threads = 1);

/// |x - 50|: zero is ideal indistinguishability.
double one_nna_abs50(double one_nna_percent);

/// Fraction (percent) of reference clouds that are the nearest match of at
/// least one generated cloud.
double coverage(const CloudSet& gen, const CloudSet& ref, CloudDistance kind,
                std::size_t exact_emd_max = 512, std::size_t threads = 1);

struct MetricReport {
    double cd_1nna = 0.0;
    double emd_1nna = 0.0;
    double cd_1nna_abs50 = 0.0;
    double emd_1nna_abs50 = 0.0;
    double cov_cd = 0.0;
    double cov_emd = 0.0;

    std::string table() const;  // aligned text
    std::string csv() const;    // header + one row
};

MetricReport evaluate(const CloudSet& gen, const CloudSet& ref, std::size_t exact_emd_max = 512,
                      std::size_t threads = 1);

}  // namespace pcd::metrics

#include "pcdiff/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace pcd::metrics {

double chamfer(const std::vector<geom::Vec3>& x, const std::vector<geom::Vec3>& y) {
    if (x.empty() || y.empty()) throw std::invalid_argument("chamfer: empty cloud");
    double xy = 0.0;
    for (const auto& p : x) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& q : y) best = std::min(best, geom::squared_distance(p, q));
        xy += best;
    }
    double yx = 0.0;
    for (const auto& q : y) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& p : x) best = std::min(best, geom::squared_distance(q, p));
        yx += best;
    }
    return xy / static_cast<double>(x.size()) + yx / static_cast<double>(y.size());
}

namespace {

std::vector<double> cost_matrix(const std::vector<geom::Vec3>& x,
                                const std::vector<geom::Vec3>& y) {
    const std::size_t n = x.size();
    std::vector<double> c(n * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            c[i * n + j] = std::sqrt(geom::squared_distance(x[i], y[j]));
    return c;
}

/// Hungarian method with potentials; exact optimum for real costs, O(n^3).
double hungarian(const std::vector<double>& cost, std::size_t n) {
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<std::size_t> match(n + 1, 0);  // match[col 1..n] = row
    std::vector<std::size_t> way(n + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        match[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            const std::size_t i0 = match[j0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[match[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (match[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            match[j0] = match[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    double total = 0.0;
    for (std::size_t j = 1; j <= n; ++j) total += cost[(match[j] - 1) * n + (j - 1)];
    return total;
}

}  // namespace

double emd_exact(const std::vector<geom::Vec3>& x, const std::vector<geom::Vec3>& y) {
    if (x.size() != y.size()) {
        throw std::invalid_argument("emd_exact: cloud sizes differ (" + std::to_string(x.size()) +
                                    " vs " + std::to_string(y.size()) + ")");
    }
    if (x.empty()) throw std::invalid_argument("emd_exact: empty cloud");
    const std::size_t n = x.size();
    const auto cost = cost_matrix(x, y);
    return hungarian(cost, n) / static_cast<double>(n);
}

EmdApprox emd_approx(const std::vector<geom::Vec3>& x, const std::vector<geom::Vec3>& y,
                     std::size_t iterations) {
    if (x.size() != y.size()) {
        throw std::invalid_argument("emd_approx: cloud sizes differ (" + std::to_string(x.size()) +
                                    " vs " + std::to_string(y.size()) + ")");
    }
    if (x.empty()) throw std::invalid_argument("emd_approx: empty cloud");
    if (iterations == 0) throw std::invalid_argument("emd_approx: iterations must be >= 1");
    const std::size_t n = x.size();
    const auto cost = cost_matrix(x, y);
    double max_cost = 0.0;
    for (double c : cost) max_cost = std::max(max_cost, c);

    const auto assignment_cost = [&](const std::vector<std::size_t>& owner_of_col) {
        double total = 0.0;
        for (std::size_t j = 0; j < n; ++j) total += cost[owner_of_col[j] * n + j];
        return total;
    };

    // Greedy warm start: each row takes its cheapest unassigned column. This
    // is already optimal for identical clouds and seeds best-so-far.
    std::vector<std::size_t> greedy_col(n, n);
    {
        std::vector<char> used(n, 0);
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t best_j = n;
            double best = std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < n; ++j) {
                if (!used[j] && cost[i * n + j] < best) {
                    best = cost[i * n + j];
                    best_j = j;
                }
            }
            used[best_j] = 1;
            greedy_col[i] = best_j;
        }
    }
    std::vector<std::size_t> best_owner(n);
    for (std::size_t i = 0; i < n; ++i) best_owner[greedy_col[i]] = i;
    double best_total = assignment_cost(best_owner);

    if (max_cost == 0.0) return {0.0, 0.0};

    // Auction with epsilon scaling; prices persist across rounds.
    std::vector<double> price(n, 0.0);
    double eps = max_cost / 8.0;
    const std::size_t bid_cap = 2000 * n * iterations + 100000;
    std::size_t bids = 0;
    for (std::size_t round = 0; round < iterations; ++round) {
        std::vector<std::size_t> owner(n, n);      // column -> row
        std::vector<std::size_t> col_of(n, n);     // row -> column
        std::vector<std::size_t> queue;
        queue.reserve(n);
        for (std::size_t i = 0; i < n; ++i) queue.push_back(i);
        while (!queue.empty()) {
            if (++bids > bid_cap) {
                const double gap = eps * static_cast<double>(n);
                throw std::runtime_error(
                    "emd_approx: auction did not converge within the bid cap; optimality gap <= " +
                    std::to_string(gap));
            }
            const std::size_t i = queue.back();
            queue.pop_back();
            // best and second-best value (-cost - price)
            double best_v = -std::numeric_limits<double>::infinity();
            double second_v = -std::numeric_limits<double>::infinity();
            std::size_t best_j = 0;
            for (std::size_t j = 0; j < n; ++j) {
                const double v = -cost[i * n + j] - price[j];
                if (v > best_v) {
                    second_v = best_v;
                    best_v = v;
                    best_j = j;
                } else if (v > second_v) {
                    second_v = v;
                }
            }
            const double increment = (second_v == -std::numeric_limits<double>::infinity())
                                         ? eps
                                         : best_v - second_v + eps;
            price[best_j] += increment;
            if (owner[best_j] != n) {
                col_of[owner[best_j]] = n;
                queue.push_back(owner[best_j]);
            }
            owner[best_j] = i;
            col_of[i] = best_j;
        }
        const double total = assignment_cost(owner);
        if (total < best_total) {
            best_total = total;
            best_owner = owner;
        }
        eps /= 4.0;
    }
    // Auction guarantee: total <= optimal total + n * eps_final, so the mean
    // value is within eps_final of the exact mean.
    return {best_total / static_cast<double>(n), eps * 4.0};
}

double cloud_distance(const std::vector<geom::Vec3>& a, const std::vector<geom::Vec3>& b,
                      CloudDistance kind, std::size_t exact_emd_max) {
    if (kind == CloudDistance::chamfer) return chamfer(a, b);
    if (a.size() <= exact_emd_max) return emd_exact(a, b);
    return emd_approx(a, b, 8).value;
}

namespace {

void parallel_for(std::size_t count, std::size_t threads, const std::function<void(std::size_t)>& fn) {
    if (threads <= 1 || count < 2) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::size_t chunk = (count + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
        const std::size_t lo = t * chunk;
        const std::size_t hi = std::min(count, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &fn] {
            for (std::size_t i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

/// Pooled symmetric distance table, generated clouds first.
std::vector<double> pooled_distances(const CloudSet& gen, const CloudSet& ref, CloudDistance kind,
                                     std::size_t exact_emd_max, std::size_t threads) {
    std::vector<const std::vector<geom::Vec3>*> all;
    for (const auto& c : gen) all.push_back(&c);
    for (const auto& c : ref) all.push_back(&c);
    const std::size_t k = all.size();
    std::vector<double> dist(k * k, 0.0);
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = i + 1; j < k; ++j) pairs.emplace_back(i, j);
    parallel_for(pairs.size(), threads, [&](std::size_t p) {
        const auto [i, j] = pairs[p];
        const double d = cloud_distance(*all[i], *all[j], kind, exact_emd_max);
        dist[i * k + j] = d;
        dist[j * k + i] = d;
    });
    return dist;
}

}  // namespace

PairwiseDistanceTable pairwise_distances(const CloudSet& gen, const CloudSet& ref,
                                         CloudDistance kind, std::size_t exact_emd_max,
                                         std::size_t threads) {
    if (gen.empty() || ref.empty()) throw std::invalid_argument("pairwise_distances: empty set");
    PairwiseDistanceTable table;
    table.gen_count = gen.size();
    table.ref_count = ref.size();
    table.values.assign(gen.size() * ref.size(), 0.0);
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t g = 0; g < gen.size(); ++g)
        for (std::size_t r = 0; r < ref.size(); ++r) pairs.emplace_back(g, r);
    parallel_for(pairs.size(), threads, [&](std::size_t p) {
        const auto [g, r] = pairs[p];
        table.values[g * ref.size() + r] = cloud_distance(gen[g], ref[r], kind, exact_emd_max);
    });
    return table;
}

double one_nna(const CloudSet& gen, const CloudSet& ref, CloudDistance kind,
               std::size_t exact_emd_max, std::size_t threads) {
    if (gen.empty() || ref.empty()) throw std::invalid_argument("one_nna: empty set");
    const std::size_t g = gen.size(), k = g + ref.size();
    const auto dist = pooled_distances(gen, ref, kind, exact_emd_max, threads);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < k; ++i) {
        std::size_t nearest = k;
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < k; ++j) {
            if (j == i) continue;
            if (dist[i * k + j] < best) {  // strict keeps the lower index on ties
                best = dist[i * k + j];
                nearest = j;
            }
        }
        if ((i < g) == (nearest < g)) ++correct;
    }
    return 100.0 * static_cast<double>(correct) / static_cast<double>(k);
}

double one_nna_abs50(double one_nna_percent) {
    if (one_nna_percent < 0.0 || one_nna_percent > 100.0) {
        throw std::invalid_argument("one_nna_abs50: percentage outside [0,100]");
    }
    return std::abs(one_nna_percent - 50.0);
}

double coverage(const CloudSet& gen, const CloudSet& ref, CloudDistance kind,
                std::size_t exact_emd_max, std::size_t threads) {
    const auto table = pairwise_distances(gen, ref, kind, exact_emd_max, threads);
    std::set<std::size_t> matched;
    for (std::size_t g = 0; g < table.gen_count; ++g) {
        std::size_t best_r = 0;
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t r = 0; r < table.ref_count; ++r) {
            if (table.at(g, r) < best) {
                best = table.at(g, r);
                best_r = r;
            }
        }
        matched.insert(best_r);
    }
    return 100.0 * static_cast<double>(matched.size()) / static_cast<double>(table.ref_count);
}

std::string MetricReport::table() const {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(2);
    os << "metric              CD        EMD\n";
    os << "1-NNA (%)        " << std::setw(6) << cd_1nna << "     " << std::setw(6) << emd_1nna << "\n";
    os << "1-NNA-Abs50 (%)  " << std::setw(6) << cd_1nna_abs50 << "     " << std::setw(6)
       << emd_1nna_abs50 << "\n";
    os << "COV (%)          " << std::setw(6) << cov_cd << "     " << std::setw(6) << cov_emd << "\n";
    return os.str();
}

std::string MetricReport::csv() const {
    std::ostringstream os;
    os.precision(10);
    os << "cd_1nna,emd_1nna,cd_1nna_abs50,emd_1nna_abs50,cov_cd,cov_emd\n";
    os << cd_1nna << "," << emd_1nna << "," << cd_1nna_abs50 << "," << emd_1nna_abs50 << ","
       << cov_cd << "," << cov_emd << "\n";
    return os.str();
}

MetricReport evaluate(const CloudSet& gen, const CloudSet& ref, std::size_t exact_emd_max,
                      std::size_t threads) {
    MetricReport report;
    report.cd_1nna = one_nna(gen, ref, CloudDistance::chamfer, exact_emd_max, threads);
    report.emd_1nna = one_nna(gen, ref, CloudDistance::emd, exact_emd_max, threads);
    report.cd_1nna_abs50 = one_nna_abs50(report.cd_1nna);
    report.emd_1nna_abs50 = one_nna_abs50(report.emd_1nna);
    report.cov_cd = coverage(gen, ref, CloudDistance::chamfer, exact_emd_max, threads);
    report.cov_emd = coverage(gen, ref, CloudDistance::emd, exact_emd_max, threads);
    return report;
}

}  // namespace pcd::metrics

#pragma once

// Helpers shared by the unit and acceptance tests.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "bhdetect/common.hpp"
#include "bhdetect/rng.hpp"

namespace bhtest {

inline std::filesystem::path data_dir() { return BHDETECT_DATA_DIR; }

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("bhdetect-test-" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

/// Textbook DBSCAN by exhaustive search: neighborhoods by direct distance
/// sums, clusters as connected components of the core graph numbered by
/// their lowest core row, border points attached to the lowest-numbered
/// cluster among their core neighbors.
inline std::vector<int> brute_force_dbscan(const bhdetect::Matrix& x, double eps, std::size_t min_pts) {
    const auto n = static_cast<std::size_t>(x.rows());
    std::vector<std::vector<std::size_t>> nbr(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (Eigen::Index k = 0; k < x.cols(); ++k) {
                const double d = x(static_cast<Eigen::Index>(i), k) - x(static_cast<Eigen::Index>(j), k);
                s += d * d;
            }
            if (s <= eps * eps) nbr[i].push_back(j);
        }
    std::vector<bool> core(n);
    for (std::size_t i = 0; i < n; ++i) core[i] = nbr[i].size() >= min_pts;

    std::vector<int> label(n, -1);
    int next = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!core[i] || label[i] >= 0) continue;
        std::vector<std::size_t> stack{i};
        label[i] = next;
        while (!stack.empty()) {
            const auto p = stack.back();
            stack.pop_back();
            for (auto q : nbr[p])
                if (core[q] && label[q] < 0) {
                    label[q] = next;
                    stack.push_back(q);
                }
        }
        ++next;
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (core[i]) continue;
        int best = -1;
        for (auto q : nbr[i])
            if (core[q] && (best < 0 || label[q] < best)) best = label[q];
        label[i] = best;
    }
    return label;
}

struct DbscanInstance {
    bhdetect::Matrix points;
    double eps = 1.0;
    std::size_t min_pts = 1;
};

/// Seeded random instances with n <= 200 and d <= 5: Gaussian blobs,
/// uniform background, duplicates, and lattice points whose distances hit
/// eps exactly.
inline std::vector<DbscanInstance> random_dbscan_instances(std::uint64_t seed, std::size_t count) {
    std::vector<DbscanInstance> out;
    bhdetect::Rng rng(seed);
    for (std::size_t c = 0; c < count; ++c) {
        DbscanInstance inst;
        const auto n = static_cast<Eigen::Index>(1 + rng.uniform_index(200));
        const auto d = static_cast<Eigen::Index>(1 + rng.uniform_index(5));
        inst.points.resize(n, d);
        const bool lattice = c % 4 == 3;
        const auto blobs = 1 + rng.uniform_index(4);
        std::vector<std::vector<double>> centers(blobs, std::vector<double>(static_cast<std::size_t>(d)));
        for (auto& ctr : centers)
            for (auto& v : ctr) v = 10.0 * rng.uniform();
        for (Eigen::Index i = 0; i < n; ++i) {
            const double u = rng.uniform();
            if (lattice) {
                for (Eigen::Index k = 0; k < d; ++k) inst.points(i, k) = static_cast<double>(rng.uniform_index(6));
            } else if (u < 0.1 && i > 0) {
                inst.points.row(i) = inst.points.row(static_cast<Eigen::Index>(rng.uniform_index(static_cast<std::uint64_t>(i))));
            } else if (u < 0.3) {
                for (Eigen::Index k = 0; k < d; ++k) inst.points(i, k) = 10.0 * rng.uniform();
            } else {
                const auto& ctr = centers[rng.uniform_index(blobs)];
                for (Eigen::Index k = 0; k < d; ++k) inst.points(i, k) = ctr[static_cast<std::size_t>(k)] + 0.6 * rng.normal();
            }
        }
        inst.eps = lattice ? static_cast<double>(1 + rng.uniform_index(2)) : 0.2 + 1.8 * rng.uniform();
        inst.min_pts = 1 + rng.uniform_index(8);
        out.push_back(std::move(inst));
    }
    return out;
}

}  // namespace bhtest

#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "equikernel/tensor.hpp"

namespace equikernel {

struct RetrievalMetrics {
    double rank1 = 0, rank5 = 0, map = 0, minp = 0;
    std::size_t evaluated = 0;
    std::size_t skipped = 0;  // probes without any gallery match
};

/// Euclidean distance matrix between rows of [Np, D] and [Ng, D].
template <typename T>
std::vector<double> pairwise_distances(const Tensor<T>& probe, const Tensor<T>& gallery) {
    if (probe.rank() != 2 || gallery.rank() != 2 || probe.dim(1) != gallery.dim(1))
        throw ShapeError("pairwise_distances", probe.shape(), gallery.shape(), "expects [Np,D] and [Ng,D]");
    const std::size_t np = probe.dim(0), ng = gallery.dim(0), d = probe.dim(1);
    std::vector<double> out(np * ng);
    for (std::size_t i = 0; i < np; ++i)
        for (std::size_t j = 0; j < ng; ++j) {
            double acc = 0;
            for (std::size_t k = 0; k < d; ++k) {
                const double v = static_cast<double>(probe[i * d + k]) - static_cast<double>(gallery[j * d + k]);
                acc += v * v;
            }
            out[i * ng + j] = std::sqrt(acc);
        }
    return out;
}

/// Rank-1/5, mAP and mINP from a [Np, Ng] distance matrix. Gallery order for
/// each probe is by ascending distance, ties by ascending gallery index.
inline RetrievalMetrics retrieval_metrics(const std::vector<double>& dist, const std::vector<int>& probe_labels,
                                          const std::vector<int>& gallery_labels) {
    const std::size_t np = probe_labels.size(), ng = gallery_labels.size();
    if (ng == 0) throw std::invalid_argument("retrieval_eval: empty gallery");
    if (dist.size() != np * ng) throw std::invalid_argument("retrieval_eval: distance matrix size mismatch");
    RetrievalMetrics m;
    std::vector<std::size_t> order(ng);
    for (std::size_t i = 0; i < np; ++i) {
        const double* row = dist.data() + i * ng;
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return row[a] < row[b]; });
        std::size_t hits = 0, last_hit = 0;
        double ap = 0;
        bool top1 = false, top5 = false;
        for (std::size_t r = 0; r < ng; ++r) {
            if (gallery_labels[order[r]] != probe_labels[i]) continue;
            ++hits;
            ap += static_cast<double>(hits) / static_cast<double>(r + 1);
            last_hit = r + 1;
            top1 = top1 || r < 1;
            top5 = top5 || r < 5;
        }
        if (hits == 0) {
            ++m.skipped;
            continue;
        }
        ++m.evaluated;
        m.rank1 += top1;
        m.rank5 += top5;
        m.map += ap / static_cast<double>(hits);
        m.minp += static_cast<double>(hits) / static_cast<double>(last_hit);
    }
    if (m.evaluated > 0) {
        const double n = static_cast<double>(m.evaluated);
        m.rank1 /= n;
        m.rank5 /= n;
        m.map /= n;
        m.minp /= n;
    }
    return m;
}

template <typename T>
RetrievalMetrics retrieval_eval(const Tensor<T>& probe, const std::vector<int>& probe_labels, const Tensor<T>& gallery,
                                const std::vector<int>& gallery_labels) {
    if (gallery_labels.empty()) throw std::invalid_argument("retrieval_eval: empty gallery");
    if (probe.dim(0) != probe_labels.size() || gallery.dim(0) != gallery_labels.size())
        throw std::invalid_argument("retrieval_eval: label count differs from embedding rows");
    return retrieval_metrics(pairwise_distances(probe, gallery), probe_labels, gallery_labels);
}

}  // namespace equikernel

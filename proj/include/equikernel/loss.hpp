#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <set>
#include <stdexcept>
#include <vector>

#include "equikernel/ops.hpp"
#include "equikernel/tape.hpp"

namespace equikernel {

struct TripletStats {
    std::size_t active = 0;  // hinge terms > 0, summed over parts
    std::size_t total = 0;   // all (anchor, positive, negative) triples, summed over parts
};

inline void check_batch_labels(const std::vector<int>& labels, std::size_t batch) {
    if (labels.size() != batch)
        throw std::invalid_argument("loss: " + std::to_string(labels.size()) + " labels for a batch of " + std::to_string(batch));
    const std::set<int> ids(labels.begin(), labels.end());
    if (ids.size() < 2) throw std::invalid_argument("loss: degenerate batch, at least 2 identities are required");
}

/// Batch-all triplet loss on Euclidean distances, per part: the hinge
/// max(0, margin + d(a,p) - d(a,n)) averaged over its non-zero terms, then
/// averaged over parts. Input embeddings are [B, parts, E].
template <typename T>
Var<T> triplet_loss(const Var<T>& emb, const std::vector<int>& labels, T margin, TripletStats* stats = nullptr) {
    const Shape& s = emb.shape();
    if (s.size() != 3) throw ShapeError("triplet_loss", s, "expects [B, parts, E]");
    const std::size_t B = s[0], P = s[1], E = s[2];
    check_batch_labels(labels, B);
    const Tensor<T>& x = emb.value();
    auto at = [&](std::size_t b, std::size_t p) { return x.raw() + (b * P + p) * E; };

    // dist[p][i][j]
    std::vector<double> dist(P * B * B, 0.0);
    for (std::size_t p = 0; p < P; ++p)
        for (std::size_t i = 0; i < B; ++i)
            for (std::size_t j = i + 1; j < B; ++j) {
                const T* a = at(i, p);
                const T* b = at(j, p);
                double acc = 0;
                for (std::size_t e = 0; e < E; ++e) {
                    const double d = static_cast<double>(a[e]) - static_cast<double>(b[e]);
                    acc += d * d;
                }
                dist[(p * B + i) * B + j] = dist[(p * B + j) * B + i] = std::sqrt(acc);
            }

    // coeff[p][i][j]: d loss / d dist(i, j)
    std::vector<double> coeff(P * B * B, 0.0);
    double loss = 0;
    TripletStats st;
    for (std::size_t p = 0; p < P; ++p) {
        const double* d = dist.data() + p * B * B;
        double sum = 0;
        std::size_t active = 0;
        std::vector<std::array<std::size_t, 3>> hits;
        for (std::size_t a = 0; a < B; ++a)
            for (std::size_t q = 0; q < B; ++q) {
                if (q == a || labels[q] != labels[a]) continue;
                for (std::size_t n = 0; n < B; ++n) {
                    if (labels[n] == labels[a]) continue;
                    ++st.total;
                    const double h = static_cast<double>(margin) + d[a * B + q] - d[a * B + n];
                    if (h > 0) {
                        sum += h;
                        ++active;
                        hits.push_back({a, q, n});
                    }
                }
            }
        st.active += active;
        if (active == 0) continue;
        loss += sum / static_cast<double>(active);
        const double w = 1.0 / (static_cast<double>(active) * static_cast<double>(P));
        double* c = coeff.data() + p * B * B;
        for (const auto& [a, q, n] : hits) {
            c[a * B + q] += w;
            c[a * B + n] -= w;
        }
    }
    loss /= static_cast<double>(P);
    if (stats) *stats = st;

    return emb.tape().record(Tensor<T>::scalar(static_cast<T>(loss)), {emb},
                             [emb, B, P, E, dist = std::move(dist), coeff = std::move(coeff)](Tape<T>& t, const Tensor<T>& go) {
                                 Tensor<T>* g = t.grad_target(emb);
                                 if (!g) return;
                                 const Tensor<T>& x = emb.value();
                                 const double scale = static_cast<double>(go[0]);
                                 for (std::size_t p = 0; p < P; ++p)
                                     for (std::size_t i = 0; i < B; ++i)
                                         for (std::size_t j = 0; j < B; ++j) {
                                             const double c = coeff[(p * B + i) * B + j];
                                             const double d = dist[(p * B + i) * B + j];
                                             if (c == 0 || d == 0) continue;
                                             const double f = scale * c / d;
                                             const T* xi = x.raw() + (i * P + p) * E;
                                             const T* xj = x.raw() + (j * P + p) * E;
                                             T* gi = g->raw() + (i * P + p) * E;
                                             T* gj = g->raw() + (j * P + p) * E;
                                             for (std::size_t e = 0; e < E; ++e) {
                                                 const T v = static_cast<T>(f * (static_cast<double>(xi[e]) - static_cast<double>(xj[e])));
                                                 gi[e] += v;
                                                 gj[e] -= v;
                                             }
                                         }
                             });
}

/// Cross-entropy of [B, parts, K] logits against class labels, averaged over
/// sequences and parts. `correct` receives the count of part-level hits.
template <typename T>
Var<T> cross_entropy(const Var<T>& logits, const std::vector<int>& labels, std::size_t* correct = nullptr) {
    const Shape& s = logits.shape();
    if (s.size() != 3) throw ShapeError("cross_entropy", s, "expects [B, parts, K]");
    const std::size_t B = s[0], P = s[1], K = s[2];
    if (labels.size() != B) throw std::invalid_argument("cross_entropy: label count differs from batch");
    for (int l : labels)
        if (l < 0 || static_cast<std::size_t>(l) >= K)
            throw std::invalid_argument("cross_entropy: label " + std::to_string(l) + " outside [0, " + std::to_string(K) + ")");
    const Tensor<T>& z = logits.value();
    Tensor<T> prob(s);
    double loss = 0;
    std::size_t hits = 0;
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t p = 0; p < P; ++p) {
            const T* row = z.raw() + (b * P + p) * K;
            T* pr = prob.raw() + (b * P + p) * K;
            const std::size_t arg = static_cast<std::size_t>(std::max_element(row, row + K) - row);
            const double mx = static_cast<double>(row[arg]);
            double sum = 0;
            for (std::size_t k = 0; k < K; ++k) sum += std::exp(static_cast<double>(row[k]) - mx);
            for (std::size_t k = 0; k < K; ++k) pr[k] = static_cast<T>(std::exp(static_cast<double>(row[k]) - mx) / sum);
            loss += std::log(sum) + mx - static_cast<double>(row[labels[b]]);
            hits += arg == static_cast<std::size_t>(labels[b]);
        }
    const double n = static_cast<double>(B * P);
    if (correct) *correct = hits;
    return logits.tape().record(Tensor<T>::scalar(static_cast<T>(loss / n)), {logits},
                                [logits, labels, prob = std::move(prob), P, K, n](Tape<T>& t, const Tensor<T>& go) {
                                    Tensor<T>* g = t.grad_target(logits);
                                    if (!g) return;
                                    const T f = static_cast<T>(static_cast<double>(go[0]) / n);
                                    for (std::size_t r = 0; r < prob.size() / K; ++r) {
                                        const std::size_t b = r / P;
                                        for (std::size_t k = 0; k < K; ++k) {
                                            const T target = k == static_cast<std::size_t>(labels[b]) ? T(1) : T(0);
                                            (*g)[r * K + k] += f * (prob[r * K + k] - target);
                                        }
                                    }
                                });
}

template <typename T>
struct LossTerms {
    Var<T> total;
    Var<T> triplet;
    Var<T> ce;
    TripletStats triplets;
    double part_accuracy = 0;
};

/// L = L_triplet + beta * L_ce.
template <typename T>
LossTerms<T> combined_loss(const Var<T>& embeddings, const Var<T>& logits, const std::vector<int>& labels, T margin, T beta) {
    LossTerms<T> out;
    out.triplet = triplet_loss(embeddings, labels, margin, &out.triplets);
    std::size_t hits = 0;
    out.ce = cross_entropy(logits, labels, &hits);
    out.part_accuracy = static_cast<double>(hits) / static_cast<double>(logits.dim(0) * logits.dim(1));
    out.total = add(out.triplet, scale(out.ce, beta));
    return out;
}

}  // namespace equikernel

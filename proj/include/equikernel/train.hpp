#pragma once

#include <algorithm>
#include <chrono>
#include <functional>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "equikernel/backbone.hpp"
#include "equikernel/config.hpp"
#include "equikernel/data.hpp"
#include "equikernel/loss.hpp"
#include "equikernel/metrics.hpp"

namespace equikernel {

struct TrainConfig {
    std::size_t iterations = 2000;
    std::size_t p = 4, k = 4;
    std::size_t window = 30;
    double lr = 0.01, momentum = 0.9, weight_decay = 5e-4;
    std::vector<std::size_t> milestones{1000, 1500};
    double gamma = 0.1;
    double margin = 0.2, beta = 1.0;
    std::size_t log_every = 50;

    double lr_at(std::size_t iter) const {
        double r = lr;
        for (std::size_t m : milestones)
            if (iter >= m) r *= gamma;
        return r;
    }
};

inline TrainConfig train_config(const RunConfig& c) {
    TrainConfig t;
    t.iterations = static_cast<std::size_t>(c.integer("train.iterations"));
    t.p = static_cast<std::size_t>(c.integer("train.p"));
    t.k = static_cast<std::size_t>(c.integer("train.k"));
    t.window = static_cast<std::size_t>(c.integer("train.window"));
    t.lr = c.real("train.lr");
    t.momentum = c.real("train.momentum");
    t.weight_decay = c.real("train.weight_decay");
    t.milestones.clear();
    for (long long m : c.int_list("train.milestones")) t.milestones.push_back(static_cast<std::size_t>(m));
    t.gamma = c.real("train.gamma");
    t.margin = c.real("train.margin");
    t.beta = c.real("train.beta");
    t.log_every = static_cast<std::size_t>(c.integer("train.log_every"));
    return t;
}

// ----------------------------------------------------------------- datasets

struct Dataset {
    std::vector<GaitSequence> train, gallery, probe;
    std::size_t num_classes = 0;
};

struct SyntheticSpec {
    std::size_t identities = 10;
    std::size_t train_seqs = 8, gallery_seqs = 2, probe_seqs = 2;
    std::size_t frames = 30;
    std::vector<Transform> probe_transforms;  // cycled over probes; empty = untransformed
    std::uint64_t seed = 0;
};

inline std::vector<Transform> parse_transform_list(const std::string& text) {
    std::vector<Transform> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = detail::trim(item);
        if (!item.empty()) out.push_back(parse_transform(item));
    }
    return out;
}

inline SyntheticSpec synthetic_spec(const RunConfig& c, std::uint64_t seed) {
    SyntheticSpec s;
    s.identities = static_cast<std::size_t>(c.integer("data.identities"));
    s.train_seqs = static_cast<std::size_t>(c.integer("data.train_seqs"));
    s.gallery_seqs = static_cast<std::size_t>(c.integer("data.gallery_seqs"));
    s.probe_seqs = static_cast<std::size_t>(c.integer("data.probe_seqs"));
    s.frames = static_cast<std::size_t>(c.integer("data.frames"));
    try {
        s.probe_transforms = parse_transform_list(c.text("data.probe_conditions"));
    } catch (const std::invalid_argument& e) {
        throw ConfigError("data.probe_conditions", e.what());
    }
    s.seed = seed;
    return s;
}

/// Identity i is walker seed `seed * 1000 + i + 1` with class label i. Train
/// and gallery sequences are untransformed; probes carry the listed
/// transforms in turn.
inline Dataset make_synthetic_dataset(const SyntheticSpec& s) {
    Dataset d;
    d.num_classes = s.identities;
    std::size_t probe_no = 0;
    for (std::size_t i = 0; i < s.identities; ++i) {
        const std::uint64_t walker = s.seed * 1000 + i + 1;
        std::uint64_t idx = 0;
        auto make = [&](const std::string& cond) {
            GaitSequence q = synth_walker(walker, s.frames, cond, idx++);
            q.identity = static_cast<int>(i);
            return q;
        };
        for (std::size_t j = 0; j < s.train_seqs; ++j) d.train.push_back(make("nm"));
        for (std::size_t j = 0; j < s.gallery_seqs; ++j) d.gallery.push_back(make("nm"));
        for (std::size_t j = 0; j < s.probe_seqs; ++j) {
            GaitSequence q = make("nm");
            if (!s.probe_transforms.empty()) {
                const Transform& t = s.probe_transforms[probe_no++ % s.probe_transforms.size()];
                q.frames = transform_frames(q.frames, t);
                q.condition = t.label();
            }
            d.probe.push_back(std::move(q));
        }
    }
    return d;
}

/// Loads a manifest; identities are relabelled densely in order of appearance.
inline Dataset load_dataset(const std::string& manifest_path) {
    Dataset d;
    std::map<int, int> labels;
    for (const auto& e : load_manifest(manifest_path)) {
        GaitSequence s;
        s.frames = load_gseq(e.path);
        auto [it, fresh] = labels.emplace(e.identity, static_cast<int>(labels.size()));
        s.identity = it->second;
        s.condition = e.condition;
        (e.role == Role::train ? d.train : e.role == Role::gallery ? d.gallery : d.probe).push_back(std::move(s));
    }
    d.num_classes = labels.size();
    return d;
}

// ------------------------------------------------------------------ sampler

/// Draws P identities x K sequences per batch.
class PKSampler {
public:
    PKSampler(const std::vector<GaitSequence>& seqs, std::size_t p, std::size_t k) : p_(p), k_(k) {
        std::map<int, std::vector<std::size_t>> by_id;
        for (std::size_t i = 0; i < seqs.size(); ++i) by_id[seqs[i].identity].push_back(i);
        for (auto& [id, idx] : by_id)
            if (idx.size() >= k) pools_.push_back(std::move(idx));
        if (pools_.size() < p)
            throw std::invalid_argument("insufficient identities for (P,K)=(" + std::to_string(p) + "," + std::to_string(k) + "): need at least " +
                                        std::to_string(p) + " identities with >= " + std::to_string(k) + " sequences, have " +
                                        std::to_string(pools_.size()));
    }

    std::vector<std::size_t> sample(std::mt19937_64& rng) const {
        std::vector<std::size_t> ids(pools_.size());
        std::iota(ids.begin(), ids.end(), 0);
        std::shuffle(ids.begin(), ids.end(), rng);
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < p_; ++i) {
            std::vector<std::size_t> pool = pools_[ids[i]];
            std::shuffle(pool.begin(), pool.end(), rng);
            out.insert(out.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k_));
        }
        return out;
    }

private:
    std::size_t p_, k_;
    std::vector<std::vector<std::size_t>> pools_;
};

/// Contiguous clip of `window` frames starting at `start`, wrapping around.
inline void copy_clip(const GaitSequence& s, std::size_t start, std::size_t window, float* dst) {
    const std::size_t plane = s.frames.dim(1) * s.frames.dim(2), t = s.length();
    for (std::size_t i = 0; i < window; ++i) {
        const float* src = s.frames.raw() + ((start + i) % t) * plane;
        std::copy(src, src + plane, dst + i * plane);
    }
}

// ------------------------------------------------------------------ trainer

struct TrainLogRow {
    std::size_t iter = 0;
    double lr = 0, total = 0, triplet = 0, ce = 0, active_frac = 0, accuracy = 0, seconds = 0;
};

struct SGDState {
    std::vector<Tensor<float>> velocity;
};

/// Momentum SGD with L2 weight decay: v = m v + (g + wd p); p -= lr v.
inline void sgd_step(std::vector<Parameter<float>*>& params, SGDState& st, double lr, double momentum, double wd) {
    if (st.velocity.empty())
        for (auto* p : params) st.velocity.emplace_back(p->value.shape());
    for (std::size_t i = 0; i < params.size(); ++i) {
        Parameter<float>& p = *params[i];
        float* v = st.velocity[i].raw();
        float* w = p.value.raw();
        const float* g = p.grad.raw();
        for (std::size_t j = 0; j < p.value.size(); ++j) {
            v[j] = static_cast<float>(momentum) * v[j] + g[j] + static_cast<float>(wd) * w[j];
            w[j] -= static_cast<float>(lr) * v[j];
        }
    }
}

using TrainLogger = std::function<void(const TrainLogRow&)>;

inline std::vector<TrainLogRow> train_model(GaitModel<float>& model, const std::vector<GaitSequence>& train, const TrainConfig& tc,
                                            std::uint64_t seed, const TrainLogger& log = {}) {
    if (train.empty()) throw std::invalid_argument("train_model: empty training set");
    PKSampler sampler(train, tc.p, tc.k);
    std::mt19937_64 rng(seed ^ 0x5DEECE66Dull);
    auto params = model.parameters();
    SGDState sgd;
    std::vector<TrainLogRow> rows;
    const std::size_t B = tc.p * tc.k, H = model.cfg.frame_h, W = model.cfg.frame_w;
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t it = 0; it < tc.iterations; ++it) {
        const auto batch = sampler.sample(rng);
        Tensor<float> x({B, tc.window, H, W});
        std::vector<int> labels;
        for (std::size_t b = 0; b < B; ++b) {
            const GaitSequence& s = train[batch[b]];
            const std::size_t start = std::uniform_int_distribution<std::size_t>(0, s.length() - 1)(rng);
            copy_clip(s, start, tc.window, x.raw() + b * tc.window * H * W);
            labels.push_back(s.identity);
        }
        for (auto* p : params) p->zero_grad();
        Tape<float> tape;
        auto fwd = forward(tape, x, model, NormMode::train);
        auto loss = combined_loss(fwd.head.embeddings, fwd.head.logits, labels, static_cast<float>(tc.margin), static_cast<float>(tc.beta));
        tape.backward(loss.total);
        const double lr = tc.lr_at(it);
        sgd_step(params, sgd, lr, tc.momentum, tc.weight_decay);

        TrainLogRow row;
        row.iter = it;
        row.lr = lr;
        row.total = loss.total.value().item();
        row.triplet = loss.triplet.value().item();
        row.ce = loss.ce.value().item();
        row.active_frac = loss.triplets.total ? static_cast<double>(loss.triplets.active) / static_cast<double>(loss.triplets.total) : 0;
        row.accuracy = loss.part_accuracy;
        row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (!std::isfinite(row.total)) throw NumericError("training diverged at iteration " + std::to_string(it));
        rows.push_back(row);
        if (log && (it % tc.log_every == 0 || it + 1 == tc.iterations)) log(row);
    }
    return rows;
}

// --------------------------------------------------------------- inference

/// Retrieval embeddings of full sequences (all frames), one row per sequence.
inline Tensor<float> embed_sequences(GaitModel<float>& model, const std::vector<GaitSequence>& seqs) {
    std::vector<float> rows;
    std::size_t dim = 0;
    for (const auto& s : seqs) {
        Tape<float> tape;
        tape.set_grad_enabled(false);
        auto r = forward(tape, s.frames, model, NormMode::eval);
        Tensor<float> e = flat_embeddings(r.head);
        dim = e.dim(1);
        rows.insert(rows.end(), e.data().begin(), e.data().end());
    }
    return Tensor<float>({seqs.size(), dim}, std::move(rows));
}

inline std::vector<int> labels_of(const std::vector<GaitSequence>& seqs) {
    std::vector<int> out;
    for (const auto& s : seqs) out.push_back(s.identity);
    return out;
}

struct TTARow {
    std::string condition;
    double p = 0;
    RetrievalMetrics metrics;
};

/// Retrieval under test-time augmentation of the probes with probabilities
/// `probs`; each probability draws its own fixed-seed coin flips.
inline std::vector<TTARow> evaluate_tta(GaitModel<float>& model, const Dataset& d, const std::optional<Transform>& tta,
                                        const std::vector<double>& probs, std::uint64_t seed) {
    const Tensor<float> gallery = embed_sequences(model, d.gallery);
    const auto gl = labels_of(d.gallery), pl = labels_of(d.probe);
    std::vector<TTARow> out;
    if (!tta) {
        out.push_back({"none", 0.0, retrieval_eval(embed_sequences(model, d.probe), pl, gallery, gl)});
        return out;
    }
    for (double p : probs) {
        std::mt19937_64 rng(seed + 977);
        std::vector<GaitSequence> probes;
        for (const auto& s : d.probe) probes.push_back(apply_transform(s, *tta, p, rng));
        out.push_back({tta->label(), p, retrieval_eval(embed_sequences(model, probes), pl, gallery, gl)});
    }
    return out;
}

}  // namespace equikernel

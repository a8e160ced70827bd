#pragma once

/// Ensembles of binary PLS regressors trained on balanced random subject
/// splits, plus vote-histogram accumulation and candidate ranking.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "apcpls/common.hpp"
#include "apcpls/dataset.hpp"
#include "apcpls/pls.hpp"

namespace apcpls {

struct Split {
    std::vector<std::string> positive;  // sorted
    std::vector<std::string> negative;  // sorted
};

struct SplitPlan {
    std::vector<std::string> subjects;  // S_c, sorted
    std::vector<Split> splits;
    std::uint64_t seed = 0;

    std::size_t size() const { return splits.size(); }
};

/// d independent shuffles of the subject set; the first ceil(|S_c|/2) go positive.
inline SplitPlan make_splits(std::vector<std::string> subjects, int d, std::uint64_t seed) {
    std::sort(subjects.begin(), subjects.end());
    subjects.erase(std::unique(subjects.begin(), subjects.end()), subjects.end());
    if (subjects.size() < 2)
        throw Error("make_splits: need at least 2 subjects, got " + std::to_string(subjects.size()));
    if (d < 1) throw Error("make_splits: number of splits must be >= 1");

    SplitPlan plan;
    plan.subjects = subjects;
    plan.seed = seed;
    plan.splits.reserve(static_cast<std::size_t>(d));
    std::mt19937_64 rng(seed);
    const auto half = (subjects.size() + 1) / 2;
    auto order = subjects;
    for (int i = 0; i < d; ++i) {
        order = subjects;
        std::shuffle(order.begin(), order.end(), rng);
        Split s;
        s.positive.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(half));
        s.negative.assign(order.begin() + static_cast<std::ptrdiff_t>(half), order.end());
        std::sort(s.positive.begin(), s.positive.end());
        std::sort(s.negative.begin(), s.negative.end());
        plan.splits.push_back(std::move(s));
    }
    return plan;
}

/// The subject's side in each split: +1 positive, -1 negative.
inline std::vector<int> hamming_of(const SplitPlan& plan, const std::string& subject) {
    if (!std::binary_search(plan.subjects.begin(), plan.subjects.end(), subject))
        throw Error("hamming_of: subject '" + subject + "' is not part of the split plan");
    std::vector<int> bits;
    bits.reserve(plan.splits.size());
    for (const auto& s : plan.splits)
        bits.push_back(std::binary_search(s.positive.begin(), s.positive.end(), subject) ? 1 : -1);
    return bits;
}

/// Hamming embeddings of every subject in the plan.
inline std::map<std::string, std::vector<int>> hamming_embedding(const SplitPlan& plan) {
    std::map<std::string, std::vector<int>> out;
    for (const auto& s : plan.subjects) out.emplace(s, hamming_of(plan, s));
    return out;
}

struct Ensemble {
    std::vector<PlsModel> models;
    SplitPlan plan;
    /// Every enrolled subject (S_t), sorted; histograms are laid out over it.
    std::vector<std::string> subject_universe;
    int components = 0;

    Eigen::Index dim() const { return models.empty() ? 0 : models.front().dim(); }
    /// Training subjects (S_c).
    const std::vector<std::string>& trained_subjects() const { return plan.subjects; }
};

struct TrainOptions {
    int components = 10;
    double tol = 1e-12;
    bool scale = false;
    /// Worker threads for the per-split fits; results are assembled in split order.
    int threads = 1;
};

inline Ensemble train_ensemble(const Gallery& train, const SplitPlan& plan, const TrainOptions& opt = {}) {
    for (const auto& s : plan.subjects)
        if (!train.contains(s)) throw Error("train_ensemble: subject '" + s + "' is not in the training gallery");

    std::vector<const FeatureVector*> rows;
    std::vector<std::size_t> owner;  // row -> index into plan.subjects
    for (std::size_t si = 0; si < plan.subjects.size(); ++si)
        for (const auto& fv : train.samples_of(plan.subjects[si])) {
            rows.push_back(&fv);
            owner.push_back(si);
        }
    Matrix x(static_cast<Eigen::Index>(rows.size()), train.dim());
    for (std::size_t r = 0; r < rows.size(); ++r) x.row(static_cast<Eigen::Index>(r)) = rows[r]->values.transpose();

    Ensemble e;
    e.plan = plan;
    e.subject_universe = train.subject_ids();
    e.components = opt.components;
    e.models.resize(plan.splits.size());

    std::mutex warn_mutex;
    std::vector<std::string> warnings;
    PlsOptions pls_opt;
    pls_opt.components = opt.components;
    pls_opt.tol = opt.tol;
    pls_opt.scale = opt.scale;
    pls_opt.warn = [&](const std::string& msg) {
        std::lock_guard lock(warn_mutex);
        warnings.push_back(msg);
    };

    auto fit_one = [&](std::size_t i) {
        const auto& pos = plan.splits[i].positive;
        std::vector<char> positive(plan.subjects.size(), 0);
        for (std::size_t si = 0; si < plan.subjects.size(); ++si)
            positive[si] = std::binary_search(pos.begin(), pos.end(), plan.subjects[si]);
        Vector y(x.rows());
        for (Eigen::Index r = 0; r < x.rows(); ++r) y[r] = positive[owner[static_cast<std::size_t>(r)]] ? 1.0 : -1.0;
        try {
            e.models[i] = pls_fit(x, y, pls_opt);
        } catch (const Error& err) {
            throw Error("split " + std::to_string(i) + ": " + err.what());
        }
    };

    const auto n = plan.splits.size();
    const auto workers = static_cast<std::size_t>(std::max(1, opt.threads));
    if (workers == 1 || n < 2) {
        for (std::size_t i = 0; i < n; ++i) fit_one(i);
    } else {
        std::vector<std::exception_ptr> errors(n);
        {
            std::vector<std::jthread> pool;
            for (std::size_t w = 0; w < std::min(workers, n); ++w)
                pool.emplace_back([&, w] {
                    for (std::size_t i = w; i < n; i += workers) {
                        try {
                            fit_one(i);
                        } catch (...) {
                            errors[i] = std::current_exception();
                        }
                    }
                });
        }
        for (auto& err : errors)
            if (err) std::rethrow_exception(err);
    }
    if (!warnings.empty())
        std::cerr << "warning: " << warnings.front() << " (" << warnings.size() << " model(s) affected)\n";
    return e;
}

/// Raw response of every model to the probe.
inline std::vector<double> respond(const Ensemble& e, const Vector& probe) {
    std::vector<double> r;
    r.reserve(e.models.size());
    for (const auto& m : e.models) r.push_back(m.predict(probe));
    return r;
}

/// Per-subject vote accumulator laid out over the subject universe.
struct VoteHistogram {
    std::vector<std::string> subjects;  // sorted
    std::vector<double> bins;

    double at(const std::string& subject) const {
        auto it = std::lower_bound(subjects.begin(), subjects.end(), subject);
        if (it == subjects.end() || *it != subject) throw Error("histogram has no bin for '" + subject + "'");
        return bins[static_cast<std::size_t>(it - subjects.begin())];
    }
    double total() const {
        double s = 0;
        for (double b : bins) s += b;
        return s;
    }
};

/// Each model adds max(0, r_i) to the bins of its positive subjects.
inline VoteHistogram vote(const Ensemble& e, const std::vector<double>& responses) {
    if (responses.size() != e.plan.splits.size())
        throw Error("vote: expected " + std::to_string(e.plan.splits.size()) + " responses, got " +
                    std::to_string(responses.size()));
    VoteHistogram h{e.subject_universe, std::vector<double>(e.subject_universe.size(), 0.0)};
    std::vector<std::size_t> slot(e.plan.subjects.size());
    for (std::size_t si = 0; si < e.plan.subjects.size(); ++si) {
        auto it = std::lower_bound(h.subjects.begin(), h.subjects.end(), e.plan.subjects[si]);
        if (it == h.subjects.end() || *it != e.plan.subjects[si])
            throw Error("vote: subject '" + e.plan.subjects[si] + "' missing from the universe");
        slot[si] = static_cast<std::size_t>(it - h.subjects.begin());
    }
    for (std::size_t i = 0; i < responses.size(); ++i) {
        const double f = std::max(0.0, responses[i]);
        if (f == 0.0) continue;
        for (const auto& s : e.plan.splits[i].positive) {
            auto it = std::lower_bound(e.plan.subjects.begin(), e.plan.subjects.end(), s);
            h.bins[slot[static_cast<std::size_t>(it - e.plan.subjects.begin())]] += f;
        }
    }
    return h;
}

struct Candidate {
    std::string subject;
    double score = 0.0;

    bool operator==(const Candidate&) const = default;
};

using Ranking = std::vector<Candidate>;

/// Descending by score; equal scores in ascending subject order.
inline Ranking rank(const VoteHistogram& h) {
    Ranking out;
    out.reserve(h.bins.size());
    for (std::size_t i = 0; i < h.bins.size(); ++i) out.push_back({h.subjects[i], h.bins[i]});
    std::sort(out.begin(), out.end(), [](const Candidate& a, const Candidate& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.subject < b.subject;
    });
    return out;
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::ordered_json ensemble_to_json(const Ensemble& e) {
    nlohmann::ordered_json j;
    j["seed"] = e.plan.seed;
    j["models"] = e.models.size();
    j["components"] = e.components;
    j["subject_universe"] = e.subject_universe;
    j["trained_subjects"] = e.plan.subjects;
    auto splits = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < e.plan.splits.size(); ++i) {
        nlohmann::ordered_json sj;
        sj["positive"] = e.plan.splits[i].positive;
        sj["negative"] = e.plan.splits[i].negative;
        sj["model"] = pls_to_json(e.models[i]);
        splits.push_back(std::move(sj));
    }
    j["splits"] = std::move(splits);
    return j;
}

inline Ensemble ensemble_from_json(const nlohmann::json& j) {
    try {
        Ensemble e;
        e.plan.seed = j.at("seed").get<std::uint64_t>();
        e.components = j.at("components").get<int>();
        e.subject_universe = j.at("subject_universe").get<std::vector<std::string>>();
        e.plan.subjects = j.at("trained_subjects").get<std::vector<std::string>>();
        for (const auto& sj : j.at("splits")) {
            e.plan.splits.push_back({sj.at("positive").get<std::vector<std::string>>(),
                                     sj.at("negative").get<std::vector<std::string>>()});
            e.models.push_back(pls_from_json(sj.at("model")));
        }
        return e;
    } catch (const nlohmann::json::exception& err) {
        throw Error(std::string("malformed ensemble file: ") + err.what());
    }
}

// ---------------------------------------------------------------------------
// Cache

/// Ensembles keyed by (sorted S_c, seed, d, c). Many readers, one writer.
class EnsembleCache {
public:
    using Ptr = std::shared_ptr<const Ensemble>;

    Ptr get_or_train(const Gallery& train, const std::vector<std::string>& subjects, int d, std::uint64_t seed,
                     const TrainOptions& opt) {
        auto key = make_key(subjects, d, seed, opt);
        {
            std::shared_lock lock(mutex_);
            if (auto it = cache_.find(key); it != cache_.end()) {
                ++hits_;
                return it->second;
            }
        }
        auto fresh = std::make_shared<const Ensemble>(train_ensemble(train, make_splits(subjects, d, seed), opt));
        std::unique_lock lock(mutex_);
        auto [it, inserted] = cache_.emplace(std::move(key), fresh);
        if (inserted) ++misses_;
        return it->second;
    }

    std::size_t size() const {
        std::shared_lock lock(mutex_);
        return cache_.size();
    }
    std::size_t hits() const { return hits_; }
    std::size_t misses() const { return misses_; }

private:
    static std::string make_key(std::vector<std::string> subjects, int d, std::uint64_t seed,
                                const TrainOptions& opt) {
        std::sort(subjects.begin(), subjects.end());
        std::string key = std::to_string(seed) + '|' + std::to_string(d) + '|' + std::to_string(opt.components) +
                          '|' + format_double(opt.tol) + '|' + (opt.scale ? "s" : "n");
        for (const auto& s : subjects) {
            key += '\x1f';
            key += s;
        }
        return key;
    }

    mutable std::shared_mutex mutex_;
    std::map<std::string, Ptr> cache_;
    std::atomic<std::size_t> hits_{0}, misses_{0};
};

}  // namespace apcpls

#pragma once

/// Per-probe open-set decision: cluster selection, ensemble voting,
/// ranking and the top-versus-runner-up ratio test.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <thread>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "apcpls/apclust.hpp"
#include "apcpls/common.hpp"
#include "apcpls/dataset.hpp"
#include "apcpls/ensemble.hpp"

namespace apcpls {

struct PipelineConfig {
    int k = 20;           // clusters kept per probe
    int models = 60;      // ensemble size d
    int components = 10;  // PLS latent components c
    /// Absent: rank and score only, no known/unknown verdict.
    std::optional<double> threshold;
    std::uint64_t seed = 0;  // split seed
    double tol = 1e-12;
    bool scale = false;
    int train_threads = 1;
};

/// Top score over the mean of the second and third scores. Missing runner-ups
/// count as zero. A zero denominator with a positive top yields +inf.
inline double detection_ratio(const Ranking& ranking) {
    auto score = [&](std::size_t i) { return i < ranking.size() ? ranking[i].score : 0.0; };
    const double top = score(0);
    if (top <= 0.0) return 0.0;
    const double denom = 0.5 * (score(1) + score(2));
    if (denom <= 0.0) return kInf;
    return top / denom;
}

enum class Outcome { known, unknown, undecided };

inline std::string_view to_string(Outcome o) {
    switch (o) {
        case Outcome::known: return "known";
        case Outcome::unknown: return "unknown";
        case Outcome::undecided: return "undecided";
    }
    return "?";
}

struct Decision {
    std::string sample_id;
    Outcome outcome = Outcome::undecided;
    /// Top candidate when the outcome is known.
    std::string subject;
    Ranking ranking;
    double ratio = 0.0;
    std::optional<double> threshold;
    std::size_t candidate_subjects = 0;  // |S_c|
    /// Set when the probe could not be scored normally.
    std::string diagnostic;
};

inline Outcome apply_threshold(double ratio, std::optional<double> threshold) {
    if (!threshold) return Outcome::undecided;
    return ratio >= *threshold ? Outcome::known : Outcome::unknown;
}

namespace detail {

inline Decision decide(const Gallery& train, const std::vector<std::string>& subjects, const FeatureVector& probe,
                       const PipelineConfig& cfg, EnsembleCache* cache) {
    if (probe.values.size() != train.dim())
        throw Error("probe '" + probe.sample_id + "' has dimension " + std::to_string(probe.values.size()) +
                    ", gallery has " + std::to_string(train.dim()));
    Decision d;
    d.sample_id = probe.sample_id;
    d.threshold = cfg.threshold;
    d.candidate_subjects = subjects.size();

    if (subjects.size() < 2) {
        // Too few candidates to form two classes: open-set reject, zero-score ranking.
        VoteHistogram h{train.subject_ids(), std::vector<double>(train.subject_count(), 0.0)};
        d.ranking = rank(h);
        d.ratio = 0.0;
        d.outcome = cfg.threshold ? Outcome::unknown : Outcome::undecided;
        d.diagnostic = "fewer than 2 candidate subjects";
        return d;
    }

    TrainOptions topt{cfg.components, cfg.tol, cfg.scale, cfg.train_threads};
    EnsembleCache local;
    auto& store = cache ? *cache : local;
    const auto ensemble = store.get_or_train(train, subjects, cfg.models, cfg.seed, topt);
    d.ranking = rank(vote(*ensemble, respond(*ensemble, probe.values)));
    d.ratio = detection_ratio(d.ranking);
    d.outcome = apply_threshold(d.ratio, cfg.threshold);
    if (d.outcome == Outcome::known) d.subject = d.ranking.front().subject;
    return d;
}

}  // namespace detail

/// Full pipeline for one probe. Pass a cache to reuse ensembles across probes
/// that select the same subjects.
inline Decision identify(const Gallery& train, const Clustering& clustering, const FeatureVector& probe,
                         const PipelineConfig& cfg, EnsembleCache* cache = nullptr) {
    const auto subjects = select_top_clusters(clustering, probe.values, cfg.k);
    return detail::decide(train, subjects, probe, cfg, cache);
}

/// Same decision path with cluster selection bypassed (every enrolled subject trains).
inline Decision identify_no_cluster(const Gallery& train, const FeatureVector& probe, const PipelineConfig& cfg,
                                    EnsembleCache* cache = nullptr) {
    return detail::decide(train, train.subject_ids(), probe, cfg, cache);
}

/// Decides every probe, in probe order. Probes are spread over `threads`
/// workers sharing one ensemble cache; a null clustering means no cluster
/// selection.
inline std::vector<Decision> identify_all(const Gallery& train, const Clustering* clustering,
                                          const std::vector<FeatureVector>& probes, const PipelineConfig& cfg,
                                          EnsembleCache& cache, int threads = 1) {
    std::vector<Decision> out(probes.size());
    auto run = [&](std::size_t i) {
        out[i] = clustering ? identify(train, *clustering, probes[i], cfg, &cache)
                            : identify_no_cluster(train, probes[i], cfg, &cache);
    };
    const auto workers = static_cast<std::size_t>(std::max(1, threads));
    if (workers == 1 || probes.size() < 2) {
        for (std::size_t i = 0; i < probes.size(); ++i) run(i);
        return out;
    }
    std::vector<std::exception_ptr> errors(probes.size());
    {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < std::min(workers, probes.size()); ++w)
            pool.emplace_back([&, w] {
                for (std::size_t i = w; i < probes.size(); i += workers) {
                    try {
                        run(i);
                    } catch (...) {
                        errors[i] = std::current_exception();
                    }
                }
            });
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return out;
}

/// JSON-lines record: sample_id, outcome, top_candidates, ratio (+inf as the string "inf").
inline nlohmann::ordered_json decision_to_json(const Decision& d, std::size_t top = 10) {
    nlohmann::ordered_json j;
    j["sample_id"] = d.sample_id;
    j["outcome"] = to_string(d.outcome);
    if (d.outcome == Outcome::known) j["subject"] = d.subject;
    auto cands = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < std::min(top, d.ranking.size()); ++i)
        cands.push_back(nlohmann::ordered_json::array({d.ranking[i].subject, d.ranking[i].score}));
    j["top_candidates"] = std::move(cands);
    if (std::isinf(d.ratio))
        j["ratio"] = "inf";
    else
        j["ratio"] = d.ratio;
    if (d.threshold) j["threshold"] = *d.threshold;
    j["candidate_subjects"] = d.candidate_subjects;
    if (!d.diagnostic.empty()) j["diagnostic"] = d.diagnostic;
    return j;
}

inline Decision decision_from_json(const nlohmann::json& j) {
    try {
        Decision d;
        d.sample_id = j.at("sample_id").get<std::string>();
        const auto outcome = j.at("outcome").get<std::string>();
        if (outcome == "known")
            d.outcome = Outcome::known;
        else if (outcome == "unknown")
            d.outcome = Outcome::unknown;
        else if (outcome == "undecided")
            d.outcome = Outcome::undecided;
        else
            throw Error("unknown outcome '" + outcome + "'");
        if (j.contains("subject")) d.subject = j["subject"].get<std::string>();
        for (const auto& c : j.at("top_candidates"))
            d.ranking.push_back({c.at(0).get<std::string>(), c.at(1).get<double>()});
        const auto& r = j.at("ratio");
        if (r.is_string()) {
            if (r.get<std::string>() != "inf") throw Error("bad ratio value");
            d.ratio = kInf;
        } else {
            d.ratio = r.get<double>();
        }
        if (j.contains("threshold")) d.threshold = j["threshold"].get<double>();
        if (j.contains("candidate_subjects")) d.candidate_subjects = j["candidate_subjects"].get<std::size_t>();
        if (j.contains("diagnostic")) d.diagnostic = j["diagnostic"].get<std::string>();
        return d;
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("malformed decision record: ") + e.what());
    }
}

}  // namespace apcpls

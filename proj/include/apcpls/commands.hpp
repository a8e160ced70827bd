#pragma once

/// Command implementations behind the `apcpls` executable. Each command reads
/// its inputs, writes its artifacts atomically and throws apcpls::Error on failure.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "apcpls/apclust.hpp"
#include "apcpls/common.hpp"
#include "apcpls/dataset.hpp"
#include "apcpls/ensemble.hpp"
#include "apcpls/metrics.hpp"
#include "apcpls/openset.hpp"
#include "apcpls/report.hpp"

namespace apcpls::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

struct CommonArgs {
    fs::path out_dir = ".";
    FileFormat format = FileFormat::csv;
    Metric metric = Metric::neg_sq_euclid;
    bool l2_normalize = false;
};

inline json common_json(const CommonArgs& c) {
    json j;
    j["format"] = c.format == FileFormat::csv ? "csv" : "jsonl";
    j["metric"] = to_string(c.metric);
    j["l2_normalize"] = c.l2_normalize;
    return j;
}

inline std::string dump(const json& j) { return j.dump(2) + "\n"; }

inline Gallery read_gallery(const fs::path& path, const CommonArgs& c) {
    auto g = load_gallery(path, c.format);
    return c.l2_normalize ? l2_normalized(g) : g;
}

inline ProbeSet read_probes(const fs::path& path, const CommonArgs& c) {
    auto p = load_probes(path, c.format);
    if (c.l2_normalize) l2_normalize(p.probes);
    return p;
}

// ---------------------------------------------------------------------------

struct GenArgs {
    SyntheticSpec spec;
    std::optional<fs::path> output;  // default: <out-dir>/gallery.<ext>
};

inline fs::path cmd_gen(const GenArgs& a, const CommonArgs& c) {
    const auto g = gen_synthetic(a.spec);
    const auto path = a.output ? *a.output : c.out_dir / (c.format == FileFormat::csv ? "gallery.csv" : "gallery.jsonl");
    write_file_atomic(path, serialize_samples(g.all_samples(), c.format));
    return path;
}

// ---------------------------------------------------------------------------

struct SplitArgs {
    fs::path input;
    ProtocolConfig protocol;
};

inline void cmd_split(const SplitArgs& a, const CommonArgs& c) {
    const auto all = read_gallery(a.input, c);
    const auto split = split_protocol(all, a.protocol);
    const std::string ext = c.format == FileFormat::csv ? ".csv" : ".jsonl";
    write_file_atomic(c.out_dir / ("train" + ext), serialize_samples(split.train.all_samples(), c.format));
    write_file_atomic(c.out_dir / ("probes" + ext), serialize_samples(split.probes.probes, c.format));

    json meta;
    meta["input"] = a.input.string();
    meta["style"] = to_string(a.protocol.style);
    meta["min_train_samples"] = a.protocol.min_train_samples;
    meta["train_samples_cap"] = a.protocol.train_samples_cap;
    meta["probe_samples_per_known"] = a.protocol.probe_samples_per_known;
    meta["openness"] = a.protocol.openness;
    meta["seed"] = a.protocol.seed;
    meta["common"] = common_json(c);
    meta["train_subjects"] = split.train.subject_count();
    meta["train_samples"] = split.train.sample_count();
    meta["known_probes"] = split.probes.known_count();
    meta["unknown_probes"] = split.probes.unknown_count();
    write_file_atomic(c.out_dir / "split_meta.json", dump(meta));
}

// ---------------------------------------------------------------------------

struct ClusterArgs {
    fs::path train;
    Preference preference = Preference::median();
    ApOptions ap;
};

inline Clustering cmd_cluster(const ClusterArgs& a, const CommonArgs& c) {
    const auto train = read_gallery(a.train, c);
    ClusterOptions opt{c.metric, a.preference, a.ap};
    auto clustering = cluster_subjects(train, opt);
    auto j = clustering_to_json(clustering, opt, c.l2_normalize);
    j["train"] = a.train.string();
    write_file_atomic(c.out_dir / "clusters.json", dump(j));
    if (!clustering.converged)
        std::cerr << "warning: affinity propagation did not converge in " << clustering.iterations_run
                  << " iterations\n";
    return clustering;
}

// ---------------------------------------------------------------------------

struct IdentifyArgs {
    fs::path train;
    fs::path probes;
    std::optional<fs::path> clusters;  // computed on the fly when absent
    PipelineConfig pipeline;
    bool no_cluster = false;
    Preference preference = Preference::median();
    ApOptions ap;
    std::size_t top_candidates = 10;
    int threads = 1;
};

inline Clustering load_or_cluster(const std::optional<fs::path>& clusters, const Gallery& train,
                                  const ClusterOptions& opt, const CommonArgs& c) {
    if (!clusters) return cluster_subjects(train, opt);
    const auto j = nlohmann::json::parse(read_file(*clusters), nullptr, false);
    if (j.is_discarded()) throw Error("cannot parse " + clusters->string());
    if (j.contains("l2_normalize") && j["l2_normalize"].get<bool>() != c.l2_normalize)
        throw Error(clusters->string() + " was built with a different --l2-normalize setting");
    return clustering_from_json(j, train);
}

inline std::vector<Decision> cmd_identify(const IdentifyArgs& a, const CommonArgs& c) {
    const auto train = read_gallery(a.train, c);
    const auto probes = read_probes(a.probes, c);
    if (probes.dim != train.dim())
        throw Error("probe dimension " + std::to_string(probes.dim) + " does not match gallery dimension " +
                    std::to_string(train.dim()));

    std::optional<Clustering> clustering;
    if (!a.no_cluster) clustering = load_or_cluster(a.clusters, train, {c.metric, a.preference, a.ap}, c);

    EnsembleCache cache;
    const auto decisions =
        identify_all(train, clustering ? &*clustering : nullptr, probes.probes, a.pipeline, cache, a.threads);

    std::string lines;
    for (const auto& d : decisions) lines += decision_to_json(d, a.top_candidates).dump() + '\n';
    write_file_atomic(c.out_dir / "decisions.jsonl", lines);

    json meta;
    meta["train"] = a.train.string();
    meta["probes"] = a.probes.string();
    meta["clusters"] = a.clusters ? json(a.clusters->string()) : json(nullptr);
    meta["no_cluster"] = a.no_cluster;
    meta["k"] = a.pipeline.k;
    meta["models"] = a.pipeline.models;
    meta["components"] = a.pipeline.components;
    meta["threshold"] = a.pipeline.threshold ? json(*a.pipeline.threshold) : json(nullptr);
    meta["seed"] = a.pipeline.seed;
    meta["pls_tol"] = a.pipeline.tol;
    meta["pls_scale"] = a.pipeline.scale;
    meta["preference"] = a.preference.str();
    meta["damping"] = a.ap.damping;
    meta["common"] = common_json(c);
    meta["top_candidates"] = a.top_candidates;
    if (clustering) {
        meta["cluster_count"] = clustering->cluster_count();
        meta["clustering_converged"] = clustering->converged;
    }
    meta["gallery_subjects"] = train.subject_count();
    std::size_t lo = SIZE_MAX, hi = 0;
    for (const auto& id : train.subject_ids()) {
        lo = std::min(lo, train.samples_of(id).size());
        hi = std::max(hi, train.samples_of(id).size());
    }
    meta["samples_per_subject"] = {{"min", lo}, {"max", hi}};
    // Mean fraction of the gallery that the selected clusters cover.
    double coverage = 0;
    for (const auto& d : decisions)
        coverage += static_cast<double>(d.candidate_subjects) / static_cast<double>(train.subject_count());
    meta["mean_candidate_coverage"] = decisions.empty() ? 0.0 : coverage / static_cast<double>(decisions.size());
    meta["probe_count"] = probes.probes.size();
    meta["ensembles_trained"] = cache.size();
    write_file_atomic(c.out_dir / "identify_meta.json", dump(meta));
    return decisions;
}

// ---------------------------------------------------------------------------

/// Joins decisions with the probe file's ground truth by sample_id.
inline std::vector<ProbeResult> join_results(const std::vector<Decision>& decisions, const ProbeSet& probes) {
    std::map<std::string, const FeatureVector*> truth;
    for (const auto& p : probes.probes) truth[p.sample_id] = &p;
    std::vector<ProbeResult> out;
    out.reserve(decisions.size());
    for (const auto& d : decisions) {
        auto it = truth.find(d.sample_id);
        if (it == truth.end()) throw Error("decision for '" + d.sample_id + "' has no matching probe");
        out.push_back({d.sample_id, it->second->subject_id, d.ranking, d.ratio, it->second->tag});
    }
    return out;
}

inline std::vector<Decision> read_decisions(const fs::path& path) {
    const auto text = read_file(path);
    std::vector<Decision> out;
    std::size_t line_no = 0, pos = 0;
    while (pos < text.size()) {
        auto nl = text.find('\n', pos);
        if (nl == std::string::npos) nl = text.size();
        const auto line = text.substr(pos, nl - pos);
        pos = nl + 1;
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded()) throw Error(path.string() + ": row " + std::to_string(line_no) + ": invalid JSON");
        out.push_back(decision_from_json(j));
    }
    if (out.empty()) throw Error(path.string() + ": no decisions");
    return out;
}

struct EvaluateArgs {
    fs::path decisions;
    fs::path probes;
    std::optional<fs::path> meta;  // default: identify_meta.json next to the decisions
    std::optional<fs::path> train;
    std::optional<fs::path> clusters;  // with train: enables MARR
    std::optional<int> k;              // MARR k, default from meta or 20
    ReportOptions report;
};

inline EvaluationReport cmd_evaluate(const EvaluateArgs& a, const CommonArgs& c) {
    const auto decisions = read_decisions(a.decisions);
    const auto probes = read_probes(a.probes, c);
    const auto results = join_results(decisions, probes);

    std::size_t depth = 0;
    for (const auto& d : decisions) depth = std::max(depth, d.ranking.size());
    auto ropt = a.report;
    ropt.cmc_ranks = std::max<std::size_t>(1, std::min(ropt.cmc_ranks, depth));
    auto rep = build_report(results, ropt);

    json identify_meta = nullptr;
    const auto meta_path = a.meta ? *a.meta : a.decisions.parent_path() / "identify_meta.json";
    if (fs::exists(meta_path)) {
        identify_meta = json::parse(read_file(meta_path), nullptr, false);
        if (identify_meta.is_discarded()) throw Error("cannot parse " + meta_path.string());
    } else if (a.meta) {
        throw Error("file not found: " + meta_path.string());
    }

    int marr_k = a.k.value_or(20);
    if (!a.k && identify_meta.is_object() && identify_meta.contains("k")) marr_k = identify_meta["k"].get<int>();
    if (a.train && a.clusters) {
        const auto train = read_gallery(*a.train, c);
        const auto clustering = load_or_cluster(a.clusters, train, {}, c);
        std::vector<FeatureVector> known;
        for (const auto& p : probes.probes)
            if (!p.is_unknown()) known.push_back(p);
        rep.marr = marr(clustering, known, marr_k);
    } else if (a.train || a.clusters) {
        throw Error("MARR needs both --train and --clusters");
    }

    json evaluation;
    evaluation["cmc_ranks"] = ropt.cmc_ranks;
    evaluation["far_targets"] = ropt.far_targets;
    evaluation["marr_k"] = rep.marr ? json(marr_k) : json(nullptr);
    evaluation["common"] = common_json(c);
    rep.config["identify"] = identify_meta;
    rep.config["evaluate"] = evaluation;

    write_file_atomic(c.out_dir / "report.json", dump(report_to_json(rep)));
    write_file_atomic(c.out_dir / "cmc.csv", cmc_csv(rep));
    write_file_atomic(c.out_dir / "roc.csv", roc_csv(rep));
    return rep;
}

// ---------------------------------------------------------------------------

struct SweepArgs {
    fs::path train;
    fs::path probes;
    std::vector<int> components{10};
    std::vector<int> models{60};
    std::vector<int> k{20};
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    bool no_cluster = false;
    Preference preference = Preference::median();
    ApOptions ap;
    int threads = 1;
};

struct SweepRow {
    int components = 0, models = 0, k = 0;
    std::size_t repetitions = 0;
    double rank_mean[3]{}, rank_std[3]{};  // ranks 1, 5, 10
};

/// Mean and population standard deviation.
inline std::pair<double, double> mean_std(const std::vector<double>& v) {
    double m = 0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return {m, std::sqrt(s / static_cast<double>(v.size()))};
}

/// Closed-set Rank-1/5/10 over a grid of (c, d, k), repeated once per split seed.
inline std::vector<SweepRow> run_sweep(const Gallery& train, const std::vector<FeatureVector>& known_probes,
                                       const SweepArgs& a, Metric metric) {
    if (a.components.empty() || a.models.empty() || a.k.empty() || a.seeds.empty())
        throw Error("sweep grid is empty");
    if (known_probes.empty()) throw Error("sweep needs known probes");
    std::optional<Clustering> clustering;
    if (!a.no_cluster) clustering = cluster_subjects(train, {metric, a.preference, a.ap});

    std::vector<SweepRow> rows;
    for (int comp : a.components)
        for (int d : a.models)
            for (int k : a.k) {
                std::vector<double> ranks[3];
                for (auto seed : a.seeds) {
                    PipelineConfig cfg;
                    cfg.components = comp;
                    cfg.models = d;
                    cfg.k = k;
                    cfg.seed = seed;
                    EnsembleCache cache;
                    const auto decisions =
                        identify_all(train, clustering ? &*clustering : nullptr, known_probes, cfg, cache, a.threads);
                    std::vector<ProbeResult> results;
                    for (std::size_t i = 0; i < decisions.size(); ++i)
                        results.push_back({known_probes[i].sample_id, known_probes[i].subject_id,
                                           decisions[i].ranking, decisions[i].ratio, {}});
                    const auto curve = cmc(results, 10);
                    ranks[0].push_back(curve[0]);
                    ranks[1].push_back(curve[4]);
                    ranks[2].push_back(curve[9]);
                }
                SweepRow row{comp, d, k, a.seeds.size(), {}, {}};
                for (int r = 0; r < 3; ++r) std::tie(row.rank_mean[r], row.rank_std[r]) = mean_std(ranks[r]);
                rows.push_back(row);
            }
    return rows;
}

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
    std::string out =
        "components,models,k,repetitions,rank1_mean,rank1_std,rank5_mean,rank5_std,rank10_mean,rank10_std\n";
    for (const auto& r : rows) {
        out += std::to_string(r.components) + ',' + std::to_string(r.models) + ',' + std::to_string(r.k) + ',' +
               std::to_string(r.repetitions);
        for (int i = 0; i < 3; ++i) out += ',' + format_double(r.rank_mean[i]) + ',' + format_double(r.rank_std[i]);
        out += '\n';
    }
    return out;
}

inline std::vector<SweepRow> cmd_sweep(const SweepArgs& a, const CommonArgs& c) {
    const auto train = read_gallery(a.train, c);
    const auto probes = read_probes(a.probes, c);
    std::vector<FeatureVector> known;
    for (const auto& p : probes.probes)
        if (!p.is_unknown()) known.push_back(p);
    const auto rows = run_sweep(train, known, a, c.metric);
    write_file_atomic(c.out_dir / "sweep.csv", sweep_csv(rows));
    return rows;
}

}  // namespace apcpls::cli

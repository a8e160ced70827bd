#pragma once

/// Assembly and serialization of evaluation reports.

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "apcpls/common.hpp"
#include "apcpls/metrics.hpp"

namespace apcpls {

struct ReportOptions {
    std::size_t cmc_ranks = 20;
    std::vector<double> far_targets{0.01, 0.1};
};

struct UnknownTypeBreakdown {
    std::size_t count = 0;
    std::vector<RocPoint> roc;
    double auc = 0.0;
    std::map<double, double> dir_at_far;
};

struct EvaluationReport {
    std::size_t known_probes = 0;
    std::size_t unknown_probes = 0;
    std::vector<double> cmc;
    std::vector<RocPoint> open_set_roc;
    std::optional<double> auc;
    std::map<double, double> dir_at_far;
    std::optional<double> marr;
    std::map<std::string, UnknownTypeBreakdown> by_unknown_type;
    nlohmann::ordered_json config;

    double rank(std::size_t r) const { return cmc.empty() ? 0.0 : cmc[std::min(r, cmc.size()) - 1]; }
};

inline EvaluationReport build_report(const std::vector<ProbeResult>& results, const ReportOptions& opt = {}) {
    std::vector<ProbeResult> known, unknown;
    for (const auto& r : results) (r.is_unknown() ? unknown : known).push_back(r);
    EvaluationReport rep;
    rep.known_probes = known.size();
    rep.unknown_probes = unknown.size();
    if (known.empty()) throw Error("evaluation needs at least one known probe");
    rep.cmc = cmc(known, opt.cmc_ranks);
    if (!unknown.empty()) {
        rep.open_set_roc = dir_far_curve(known, unknown);
        const auto xy = roc_xy(rep.open_set_roc);
        rep.auc = auc(xy);
        rep.dir_at_far = dir_at_far(xy, opt.far_targets);

        // Per-type breakdown only when probes carry type tags beyond the generic one.
        const bool typed = std::any_of(unknown.begin(), unknown.end(),
                                       [](const auto& u) { return !u.tag.empty() && u.tag != "unknown"; });
        std::map<std::string, std::vector<ProbeResult>> tagged;
        for (const auto& u : unknown) tagged[u.tag.empty() ? "untagged" : u.tag].push_back(u);
        if (typed) {
            for (const auto& [tag, group] : tagged) {
                UnknownTypeBreakdown b;
                b.count = group.size();
                b.roc = dir_far_curve(known, group);
                const auto gxy = roc_xy(b.roc);
                b.auc = auc(gxy);
                b.dir_at_far = dir_at_far(gxy, opt.far_targets);
                rep.by_unknown_type.emplace(tag, std::move(b));
            }
        }
    }
    return rep;
}

namespace detail {

inline nlohmann::ordered_json number_or_inf(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    return v;
}

inline nlohmann::ordered_json roc_json(const std::vector<RocPoint>& roc) {
    auto pts = nlohmann::ordered_json::array();
    for (const auto& p : roc) {
        nlohmann::ordered_json j;
        j["threshold"] = number_or_inf(p.threshold);
        j["far"] = p.far;
        j["dir"] = p.dir;
        pts.push_back(std::move(j));
    }
    return pts;
}

inline nlohmann::ordered_json far_map_json(const std::map<double, double>& m) {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (const auto& [far, dir] : m) j[format_double(far)] = dir;
    return j;
}

}  // namespace detail

inline nlohmann::ordered_json report_to_json(const EvaluationReport& rep) {
    nlohmann::ordered_json j;
    j["config"] = rep.config;
    j["known_probes"] = rep.known_probes;
    j["unknown_probes"] = rep.unknown_probes;
    nlohmann::ordered_json closed;
    for (std::size_t r : {1u, 5u, 10u})
        if (r <= rep.cmc.size()) closed["rank" + std::to_string(r)] = rep.rank(r);
    j["closed_set"] = std::move(closed);
    j["cmc"] = rep.cmc;
    nlohmann::ordered_json roc;
    roc["curve"] = "DIR vs FAR (open-set ROC)";
    roc["points"] = detail::roc_json(rep.open_set_roc);
    j["open_set_roc"] = std::move(roc);
    j["auc"] = rep.auc ? nlohmann::ordered_json(*rep.auc) : nlohmann::ordered_json(nullptr);
    j["auc_curve"] = "open-set ROC (DIR vs FAR)";
    j["dir_at_far"] = detail::far_map_json(rep.dir_at_far);
    j["marr"] = rep.marr ? nlohmann::ordered_json(*rep.marr) : nlohmann::ordered_json(nullptr);
    if (!rep.by_unknown_type.empty()) {
        nlohmann::ordered_json by;
        for (const auto& [tag, b] : rep.by_unknown_type) {
            nlohmann::ordered_json bj;
            bj["count"] = b.count;
            bj["auc"] = b.auc;
            bj["dir_at_far"] = detail::far_map_json(b.dir_at_far);
            bj["points"] = detail::roc_json(b.roc);
            by[tag] = std::move(bj);
        }
        j["by_unknown_type"] = std::move(by);
    }
    return j;
}

inline std::string cmc_csv(const EvaluationReport& rep) {
    std::string out = "rank,accuracy\n";
    for (std::size_t r = 0; r < rep.cmc.size(); ++r) out += std::to_string(r + 1) + ',' + format_double(rep.cmc[r]) + '\n';
    return out;
}

inline std::string roc_csv(const EvaluationReport& rep) {
    std::string out = "far,dir\n";
    for (const auto& p : rep.open_set_roc) out += format_double(p.far) + ',' + format_double(p.dir) + '\n';
    return out;
}

}  // namespace apcpls

#pragma once

/// Affinity propagation over subject centroids, probe-driven cluster
/// selection and the maximum achievable recognition rate.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "apcpls/common.hpp"
#include "apcpls/dataset.hpp"

namespace apcpls {

enum class Metric { neg_sq_euclid, cosine };

inline std::string_view to_string(Metric m) { return m == Metric::cosine ? "cosine" : "neg_sq_euclid"; }

inline Metric parse_metric(std::string_view s) {
    if (s == "neg_sq_euclid") return Metric::neg_sq_euclid;
    if (s == "cosine") return Metric::cosine;
    throw Error("unknown metric '" + std::string(s) + "' (expected neg_sq_euclid or cosine)");
}

/// Higher means more alike. Cosine of a zero vector is taken as 0.
inline double similarity(const Vector& a, const Vector& b, Metric metric) {
    if (metric == Metric::neg_sq_euclid) return -(a - b).squaredNorm();
    const double na = a.norm(), nb = b.norm();
    if (na == 0 || nb == 0) return 0.0;
    return a.dot(b) / (na * nb);
}

struct Preference {
    enum class Kind { median, min, fixed } kind = Kind::median;
    double value = 0.0;

    static Preference median() { return {Kind::median, 0.0}; }
    static Preference minimum() { return {Kind::min, 0.0}; }
    static Preference fixed(double v) { return {Kind::fixed, v}; }

    std::string str() const {
        switch (kind) {
            case Kind::median: return "median";
            case Kind::min: return "min";
            case Kind::fixed: return "fixed:" + format_double(value);
        }
        return "?";
    }
};

/// Accepts `median`, `min` or `fixed:<value>`.
inline Preference parse_preference(std::string_view s) {
    if (s == "median") return Preference::median();
    if (s == "min") return Preference::minimum();
    if (s.rfind("fixed:", 0) == 0) {
        double v = 0;
        if (!parse_double(s.substr(6), v) || !std::isfinite(v)) throw Error("bad fixed preference '" + std::string(s) + "'");
        return Preference::fixed(v);
    }
    throw Error("unknown preference '" + std::string(s) + "' (expected median, min or fixed:<value>)");
}

/// Square similarity matrix whose diagonal holds the preferences.
struct SimilarityMatrix {
    Matrix s;
    Eigen::Index size() const { return s.rows(); }
};

inline SimilarityMatrix pairwise_similarity(const std::vector<FeatureVector>& points, Metric metric,
                                            Preference preference) {
    if (points.empty()) throw Error("pairwise_similarity: no points");
    const auto m = static_cast<Eigen::Index>(points.size());
    const auto dim = points.front().values.size();
    SimilarityMatrix out{Matrix::Zero(m, m)};
    std::vector<double> off;
    off.reserve(static_cast<std::size_t>(m * (m - 1)));
    for (Eigen::Index i = 0; i < m; ++i) {
        if (points[static_cast<std::size_t>(i)].values.size() != dim)
            throw Error("pairwise_similarity: mixed dimensions");
        for (Eigen::Index j = 0; j < m; ++j) {
            if (i == j) continue;
            const double v = j < i ? out.s(j, i) : similarity(points[static_cast<std::size_t>(i)].values,
                                                               points[static_cast<std::size_t>(j)].values, metric);
            out.s(i, j) = v;
            off.push_back(v);
        }
    }
    double pref = 0.0;
    switch (preference.kind) {
        case Preference::Kind::fixed: pref = preference.value; break;
        case Preference::Kind::min:
            if (!off.empty()) pref = *std::min_element(off.begin(), off.end());
            break;
        case Preference::Kind::median:
            if (!off.empty()) {
                std::sort(off.begin(), off.end());
                const auto n = off.size();
                pref = n % 2 ? off[n / 2] : 0.5 * (off[n / 2 - 1] + off[n / 2]);
            }
            break;
    }
    out.s.diagonal().setConstant(pref);
    return out;
}

struct ApOptions {
    double damping = 0.5;
    int max_iter = 200;
    int convergence_iter = 15;
};

/// Result of clustering a set of points. `assignment[i]` is the point index
/// of the exemplar that point i belongs to.
struct Clustering {
    std::vector<std::size_t> exemplars;
    std::vector<std::size_t> assignment;
    /// The clustered points (one centroid per subject) with their subject ids.
    std::vector<FeatureVector> points;
    Metric metric = Metric::neg_sq_euclid;
    int iterations_run = 0;
    bool converged = false;

    std::size_t cluster_count() const { return exemplars.size(); }

    /// Member point indices of the cluster led by `exemplar`, ascending.
    std::vector<std::size_t> members(std::size_t exemplar) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < assignment.size(); ++i)
            if (assignment[i] == exemplar) out.push_back(i);
        return out;
    }
};

namespace detail {

// Two points are indistinguishable when their similarity rows, columns and
// preferences coincide; message passing cannot tell them apart.
inline bool indistinguishable(const Matrix& s, Eigen::Index a, Eigen::Index b) {
    if (s(a, a) != s(b, b) || s(a, b) != s(b, a)) return false;
    for (Eigen::Index k = 0; k < s.rows(); ++k) {
        if (k == a || k == b) continue;
        if (s(a, k) != s(b, k) || s(k, a) != s(k, b)) return false;
    }
    return true;
}

inline std::vector<std::size_t> assign_to_exemplars(const Matrix& s, const std::vector<std::size_t>& exemplars) {
    std::vector<std::size_t> assignment(static_cast<std::size_t>(s.rows()));
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
        const auto ui = static_cast<std::size_t>(i);
        if (std::binary_search(exemplars.begin(), exemplars.end(), ui)) {
            assignment[ui] = ui;
            continue;
        }
        std::size_t best = exemplars.front();
        double best_s = s(i, static_cast<Eigen::Index>(best));
        for (auto e : exemplars) {
            const double v = s(i, static_cast<Eigen::Index>(e));
            if (v > best_s) best_s = v, best = e;
        }
        assignment[ui] = best;
    }
    return assignment;
}

}  // namespace detail

/// Responsibility/availability message passing with damping. Stops once the
/// exemplar set has stayed the same for `convergence_iter` consecutive
/// iterations, or at `max_iter`. The returned Clustering has no points
/// attached; see cluster_subjects.
inline Clustering affinity_propagation(const SimilarityMatrix& sim, const ApOptions& opt = {}) {
    if (!(opt.damping >= 0.5 && opt.damping < 1.0)) throw Error("damping must lie in [0.5, 1)");
    if (opt.max_iter < 1 || opt.convergence_iter < 1) throw Error("max_iter and convergence_iter must be >= 1");
    const Matrix& s = sim.s;
    const Eigen::Index m = s.rows();
    if (m == 0 || s.cols() != m) throw Error("similarity matrix must be square and non-empty");
    if (!s.allFinite()) throw Error("similarity matrix has non-finite entries");

    Clustering out;
    if (m == 1) {
        out.exemplars = {0};
        out.assignment = {0};
        out.converged = true;
        return out;
    }

    const double lambda = opt.damping;
    Matrix r = Matrix::Zero(m, m), a = Matrix::Zero(m, m), tmp(m, m);
    Vector col_sum(m);
    std::vector<char> is_exemplar(static_cast<std::size_t>(m), 0), prev(static_cast<std::size_t>(m), 0);
    int stable = 0;
    int it = 0;
    bool converged = false;

    for (it = 1; it <= opt.max_iter; ++it) {
        // r(i,k) <- s(i,k) - max_{k' != k} [a(i,k') + s(i,k')]
        for (Eigen::Index i = 0; i < m; ++i) {
            double first = -kInf, second = -kInf;
            Eigen::Index arg = 0;
            for (Eigen::Index k = 0; k < m; ++k) {
                const double v = a(i, k) + s(i, k);
                if (v > first) {
                    second = first;
                    first = v;
                    arg = k;
                } else if (v > second) {
                    second = v;
                }
            }
            for (Eigen::Index k = 0; k < m; ++k) tmp(i, k) = s(i, k) - (k == arg ? second : first);
        }
        r = lambda * r + (1.0 - lambda) * tmp;

        // a(i,k) <- min(0, r(k,k) + sum_{i' not in {i,k}} max(0, r(i',k))),  a(k,k) <- sum_{i' != k} max(0, r(i',k))
        for (Eigen::Index k = 0; k < m; ++k) {
            double acc = 0.0;
            for (Eigen::Index i = 0; i < m; ++i)
                if (i != k) acc += std::max(0.0, r(i, k));
            col_sum[k] = acc;
        }
        for (Eigen::Index k = 0; k < m; ++k) {
            for (Eigen::Index i = 0; i < m; ++i) {
                if (i == k)
                    tmp(k, k) = col_sum[k];
                else
                    tmp(i, k) = std::min(0.0, r(k, k) + col_sum[k] - std::max(0.0, r(i, k)));
            }
        }
        a = lambda * a + (1.0 - lambda) * tmp;
        if (!r.allFinite() || !a.allFinite())
            throw Error("affinity propagation produced non-finite messages at iteration " + std::to_string(it));

        bool any = false;
        for (Eigen::Index k = 0; k < m; ++k) {
            is_exemplar[static_cast<std::size_t>(k)] = (a(k, k) + r(k, k)) > 0.0;
            any = any || is_exemplar[static_cast<std::size_t>(k)];
        }
        stable = (it > 1 && is_exemplar == prev) ? stable + 1 : 1;
        prev = is_exemplar;
        if (any && stable >= opt.convergence_iter) {
            converged = true;
            break;
        }
    }
    out.iterations_run = std::min(it, opt.max_iter);
    out.converged = converged;

    std::vector<std::size_t> exemplars;
    for (Eigen::Index k = 0; k < m; ++k)
        if (is_exemplar[static_cast<std::size_t>(k)]) exemplars.push_back(static_cast<std::size_t>(k));

    if (exemplars.empty()) {
        Eigen::Index best = 0;
        double best_v = a(0, 0) + r(0, 0);
        for (Eigen::Index k = 1; k < m; ++k)
            if (a(k, k) + r(k, k) > best_v) best_v = a(k, k) + r(k, k), best = k;
        exemplars.push_back(static_cast<std::size_t>(best));
        out.converged = false;
    }

    // Exact duplicates can both pass the exemplar test; keep the lowest index.
    std::vector<std::size_t> kept;
    for (auto e : exemplars) {
        const bool dup = std::any_of(kept.begin(), kept.end(), [&](std::size_t k) {
            return detail::indistinguishable(s, static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(e));
        });
        if (!dup) kept.push_back(e);
    }
    // One refinement pass: each cluster re-elects the member with the largest
    // summed similarity to its cluster mates, then points are reassigned.
    auto assignment = detail::assign_to_exemplars(s, kept);
    std::vector<std::size_t> refined;
    for (auto e : kept) {
        std::vector<Eigen::Index> members;
        for (std::size_t i = 0; i < assignment.size(); ++i)
            if (assignment[i] == e) members.push_back(static_cast<Eigen::Index>(i));
        std::size_t best = e;
        double best_sum = -kInf;
        for (auto j : members) {
            double sum = 0.0;
            for (auto i : members) sum += s(i, j);
            if (sum > best_sum) best_sum = sum, best = static_cast<std::size_t>(j);
        }
        refined.push_back(best);
    }
    std::sort(refined.begin(), refined.end());
    out.exemplars = std::move(refined);
    out.assignment = detail::assign_to_exemplars(s, out.exemplars);
    return out;
}

struct ClusterOptions {
    Metric metric = Metric::neg_sq_euclid;
    Preference preference = Preference::median();
    ApOptions ap{};
};

/// Clusters the per-subject centroids of a gallery.
inline Clustering cluster_subjects(const Gallery& g, const ClusterOptions& opt = {}) {
    auto points = subject_centroids(g);
    auto c = affinity_propagation(pairwise_similarity(points, opt.metric, opt.preference), opt.ap);
    c.points = std::move(points);
    c.metric = opt.metric;
    return c;
}

/// Clusters ordered by exemplar similarity to the probe (ties: lower exemplar index first).
inline std::vector<std::size_t> rank_clusters(const Clustering& c, const Vector& probe) {
    if (c.exemplars.empty() || c.points.empty()) throw Error("clustering is empty");
    if (probe.size() != c.points.front().values.size()) throw Error("probe dimension does not match clustering");
    std::vector<std::pair<double, std::size_t>> scored;
    scored.reserve(c.exemplars.size());
    for (auto e : c.exemplars) scored.emplace_back(similarity(probe, c.points[e].values, c.metric), e);
    std::stable_sort(scored.begin(), scored.end(), [](const auto& x, const auto& y) {
        if (x.first != y.first) return x.first > y.first;
        return x.second < y.second;
    });
    std::vector<std::size_t> out;
    out.reserve(scored.size());
    for (const auto& [v, e] : scored) out.push_back(e);
    return out;
}

/// Union of the subjects in the k clusters closest to the probe, sorted ascending.
inline std::vector<std::string> select_top_clusters(const Clustering& c, const Vector& probe, int k) {
    if (k < 1) throw Error("k must be >= 1");
    const auto order = rank_clusters(c, probe);
    const auto take = std::min(order.size(), static_cast<std::size_t>(k));
    std::vector<std::string> out;
    for (std::size_t t = 0; t < take; ++t)
        for (auto i : c.members(order[t])) out.push_back(c.points[i].subject_id);
    std::sort(out.begin(), out.end());
    return out;
}

/// Fraction of known probes whose subject survives top-k cluster selection.
inline double marr(const Clustering& c, const std::vector<FeatureVector>& known_probes, int k) {
    if (known_probes.empty()) throw Error("marr: no probes");
    std::size_t hits = 0;
    for (const auto& p : known_probes) {
        if (p.is_unknown()) throw Error("marr: probe '" + p.sample_id + "' has unknown identity");
        const auto sel = select_top_clusters(c, p.values, k);
        if (std::binary_search(sel.begin(), sel.end(), p.subject_id)) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(known_probes.size());
}

// ---------------------------------------------------------------------------
// clusters.json

inline nlohmann::ordered_json clustering_to_json(const Clustering& c, const ClusterOptions& opt,
                                                 bool l2_normalized) {
    nlohmann::ordered_json j;
    j["metric"] = to_string(c.metric);
    j["preference"] = opt.preference.str();
    j["damping"] = opt.ap.damping;
    j["max_iter"] = opt.ap.max_iter;
    j["convergence_iter"] = opt.ap.convergence_iter;
    j["l2_normalize"] = l2_normalized;
    j["iterations_run"] = c.iterations_run;
    j["converged"] = c.converged;
    j["subject_count"] = c.points.size();
    auto clusters = nlohmann::ordered_json::array();
    for (auto e : c.exemplars) {
        nlohmann::ordered_json cj;
        cj["exemplar"] = c.points[e].subject_id;
        auto members = nlohmann::ordered_json::array();
        for (auto i : c.members(e)) members.push_back(c.points[i].subject_id);
        cj["members"] = std::move(members);
        clusters.push_back(std::move(cj));
    }
    j["clusters"] = std::move(clusters);
    return j;
}

/// Rebuilds a clustering from its JSON form, recomputing centroids from the
/// training gallery it was produced from.
inline Clustering clustering_from_json(const nlohmann::json& j, const Gallery& train) {
    Clustering c;
    try {
        c.metric = parse_metric(j.at("metric").get<std::string>());
        c.iterations_run = j.at("iterations_run").get<int>();
        c.converged = j.at("converged").get<bool>();
        c.points = subject_centroids(train);
        std::map<std::string, std::size_t> index;
        for (std::size_t i = 0; i < c.points.size(); ++i) index[c.points[i].subject_id] = i;
        auto lookup = [&](const std::string& id) {
            auto it = index.find(id);
            if (it == index.end()) throw Error("clusters file names subject '" + id + "' absent from the gallery");
            return it->second;
        };
        c.assignment.assign(c.points.size(), c.points.size());
        for (const auto& cj : j.at("clusters")) {
            const auto e = lookup(cj.at("exemplar").get<std::string>());
            c.exemplars.push_back(e);
            for (const auto& mid : cj.at("members")) {
                const auto i = lookup(mid.get<std::string>());
                if (c.assignment[i] != c.points.size()) throw Error("subject '" + mid.get<std::string>() + "' listed twice");
                c.assignment[i] = e;
            }
        }
        std::sort(c.exemplars.begin(), c.exemplars.end());
        for (std::size_t i = 0; i < c.assignment.size(); ++i)
            if (c.assignment[i] == c.points.size())
                throw Error("gallery subject '" + c.points[i].subject_id + "' missing from clusters file");
        for (auto e : c.exemplars)
            if (c.assignment[e] != e) throw Error("exemplar '" + c.points[e].subject_id + "' not in its own cluster");
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("malformed clusters file: ") + e.what());
    }
    return c;
}

}  // namespace apcpls

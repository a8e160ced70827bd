#pragma once

/// Closed- and open-set identification metrics: CMC, DIR vs FAR, AUC.

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "apcpls/common.hpp"
#include "apcpls/ensemble.hpp"

namespace apcpls {

struct ProbeResult {
    std::string sample_id;
    std::string true_subject;  // kUnknownSubject for impostors
    Ranking ranking;
    double ratio = 0.0;
    std::string tag;

    bool is_unknown() const { return true_subject == kUnknownSubject; }

    /// 1-based position of the true subject, 0 when absent.
    std::size_t true_rank() const {
        for (std::size_t i = 0; i < ranking.size(); ++i)
            if (ranking[i].subject == true_subject) return i + 1;
        return 0;
    }
};

struct CurvePoint {
    double x = 0.0;
    double y = 0.0;
};

/// accuracy[r-1] = fraction of probes whose subject is within the top r entries.
inline std::vector<double> cmc(const std::vector<ProbeResult>& known, std::size_t max_rank = 20) {
    if (known.empty()) throw Error("cmc: no probe results");
    if (max_rank < 1) throw Error("cmc: max_rank must be >= 1");
    std::vector<std::size_t> hits(max_rank + 1, 0);
    for (const auto& p : known) {
        if (p.is_unknown()) throw Error("cmc: probe '" + p.sample_id + "' has unknown identity");
        const auto r = p.true_rank();
        if (r != 0 && r <= max_rank) ++hits[r];
    }
    std::vector<double> acc(max_rank);
    std::size_t cum = 0;
    for (std::size_t r = 1; r <= max_rank; ++r) {
        cum += hits[r];
        acc[r - 1] = static_cast<double>(cum) / static_cast<double>(known.size());
    }
    return acc;
}

struct RocPoint {
    double threshold = 0.0;
    double far = 0.0;
    double dir = 0.0;
};

/// Every distinct observed ratio plus -inf/+inf, descending.
inline std::vector<double> threshold_sweep(const std::vector<ProbeResult>& known,
                                           const std::vector<ProbeResult>& unknown) {
    std::set<double> t{-kInf, kInf};
    for (const auto& p : known) t.insert(p.ratio);
    for (const auto& p : unknown) t.insert(p.ratio);
    return {t.rbegin(), t.rend()};
}

/// Open-set ROC. DIR(t): known probes ranked correctly at 1 with ratio >= t;
/// FAR(t): unknown probes with ratio >= t. Points come out with FAR ascending.
inline std::vector<RocPoint> dir_far_curve(const std::vector<ProbeResult>& known,
                                           const std::vector<ProbeResult>& unknown) {
    if (known.empty()) throw Error("dir_far_curve: known probe set is empty");
    if (unknown.empty()) throw Error("dir_far_curve: unknown probe set is empty");

    std::vector<double> correct;  // ratios of rank-1-correct knowns
    for (const auto& p : known) {
        if (p.is_unknown()) throw Error("dir_far_curve: probe '" + p.sample_id + "' in the known set is unknown");
        if (p.true_rank() == 1) correct.push_back(p.ratio);
    }
    std::vector<double> impostor;
    for (const auto& p : unknown) impostor.push_back(p.ratio);
    std::sort(correct.begin(), correct.end());
    std::sort(impostor.begin(), impostor.end());

    auto at_least = [](const std::vector<double>& sorted, double t) {
        return static_cast<double>(sorted.end() - std::lower_bound(sorted.begin(), sorted.end(), t));
    };
    const double nk = static_cast<double>(known.size()), nu = static_cast<double>(unknown.size());
    std::vector<RocPoint> out;
    for (double t : threshold_sweep(known, unknown))
        out.push_back({t, at_least(impostor, t) / nu, at_least(correct, t) / nk});
    return out;
}

inline std::vector<CurvePoint> roc_xy(const std::vector<RocPoint>& roc) {
    std::vector<CurvePoint> out;
    out.reserve(roc.size());
    for (const auto& p : roc) out.push_back({p.far, p.dir});
    return out;
}

/// Trapezoidal area over x in [0,1]; the curve is held constant outside its range.
inline double auc(const std::vector<CurvePoint>& curve) {
    if (curve.size() < 2) throw Error("auc: need at least 2 points");
    for (std::size_t i = 0; i < curve.size(); ++i) {
        if (!(curve[i].x >= 0.0 && curve[i].x <= 1.0)) throw Error("auc: x outside [0, 1]");
        if (i > 0 && curve[i].x < curve[i - 1].x) throw Error("auc: x values are not sorted");
    }
    double area = curve.front().x * curve.front().y;
    for (std::size_t i = 1; i < curve.size(); ++i)
        area += (curve[i].x - curve[i - 1].x) * 0.5 * (curve[i].y + curve[i - 1].y);
    area += (1.0 - curve.back().x) * curve.back().y;
    return area;
}

/// DIR at a requested FAR by linear interpolation. Where several points share
/// a FAR value the best DIR among them is used.
inline double dir_at_far(const std::vector<CurvePoint>& curve, double far) {
    if (!(far >= 0.0 && far <= 1.0)) throw Error("dir_at_far: target FAR must lie in [0, 1]");
    if (curve.empty()) throw Error("dir_at_far: empty curve");
    for (std::size_t i = 1; i < curve.size(); ++i)
        if (curve[i].x < curve[i - 1].x) throw Error("dir_at_far: curve is not sorted by FAR");

    auto best_at = [&](double x) {
        double y = -kInf;
        for (const auto& p : curve)
            if (p.x == x) y = std::max(y, p.y);
        return y;
    };
    if (best_at(far) != -kInf) return best_at(far);
    if (far < curve.front().x) return curve.front().y;
    if (far > curve.back().x) return curve.back().y;
    auto hi = std::upper_bound(curve.begin(), curve.end(), far, [](double v, const CurvePoint& p) { return v < p.x; });
    const auto& b = *hi;
    const auto& a = *(hi - 1);
    const double ya = best_at(a.x);
    // First point at b.x carries the lowest DIR there (points are DIR-ascending within a FAR).
    return ya + (b.y - ya) * (far - a.x) / (b.x - a.x);
}

inline std::map<double, double> dir_at_far(const std::vector<CurvePoint>& curve, const std::vector<double>& targets) {
    std::map<double, double> out;
    for (double t : targets) out[t] = dir_at_far(curve, t);
    return out;
}

}  // namespace apcpls

#pragma once

/// Labeled feature vectors, gallery/probe containers, file formats,
/// synthetic data and open-set protocol partitioning.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "apcpls/common.hpp"

namespace apcpls {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

struct FeatureVector {
    std::string sample_id;
    std::string subject_id;
    Vector values;
    /// Optional probe annotation (e.g. "known_unknown"); only the JSONL format carries it.
    std::string tag;

    bool is_unknown() const { return subject_id == kUnknownSubject; }
};

enum class FileFormat { csv, jsonl };

inline FileFormat parse_file_format(std::string_view s) {
    if (s == "csv") return FileFormat::csv;
    if (s == "jsonl") return FileFormat::jsonl;
    throw Error("unknown format '" + std::string(s) + "' (expected csv or jsonl)");
}

/// Validated flat list of samples sharing one dimension.
struct SampleSet {
    std::vector<FeatureVector> samples;
    Eigen::Index dim = 0;
};

class Gallery {
public:
    Gallery() = default;

    /// Groups samples by subject. Rejects the unknown literal, mixed dimensions
    /// and galleries with fewer than two subjects.
    static Gallery from_samples(std::vector<FeatureVector> samples) {
        if (samples.empty()) throw Error("gallery is empty");
        Gallery g;
        g.dim_ = samples.front().values.size();
        for (auto& s : samples) {
            if (s.is_unknown())
                throw Error("gallery sample '" + s.sample_id + "' uses the reserved unknown subject id");
            if (s.values.size() != g.dim_)
                throw Error("gallery sample '" + s.sample_id + "' has dimension " +
                            std::to_string(s.values.size()) + ", expected " + std::to_string(g.dim_));
            g.subjects_[s.subject_id].push_back(std::move(s));
        }
        if (g.subjects_.size() < 2)
            throw Error("gallery needs at least 2 subjects, got " + std::to_string(g.subjects_.size()));
        return g;
    }

    Eigen::Index dim() const { return dim_; }
    std::size_t subject_count() const { return subjects_.size(); }

    std::size_t sample_count() const {
        std::size_t n = 0;
        for (const auto& [id, s] : subjects_) n += s.size();
        return n;
    }

    bool contains(const std::string& subject) const { return subjects_.count(subject) != 0; }

    const std::vector<FeatureVector>& samples_of(const std::string& subject) const {
        auto it = subjects_.find(subject);
        if (it == subjects_.end()) throw Error("unknown subject '" + subject + "'");
        return it->second;
    }

    /// Subject ids in ascending order.
    std::vector<std::string> subject_ids() const {
        std::vector<std::string> ids;
        ids.reserve(subjects_.size());
        for (const auto& [id, s] : subjects_) ids.push_back(id);
        return ids;
    }

    const std::map<std::string, std::vector<FeatureVector>>& subjects() const { return subjects_; }

    /// Samples in subject order, then file order within a subject.
    std::vector<FeatureVector> all_samples() const {
        std::vector<FeatureVector> out;
        for (const auto& [id, s] : subjects_) out.insert(out.end(), s.begin(), s.end());
        return out;
    }

private:
    std::map<std::string, std::vector<FeatureVector>> subjects_;
    Eigen::Index dim_ = 0;
};

struct ProbeSet {
    std::vector<FeatureVector> probes;
    Eigen::Index dim = 0;

    std::size_t known_count() const {
        return static_cast<std::size_t>(std::count_if(probes.begin(), probes.end(),
                                                      [](const auto& p) { return !p.is_unknown(); }));
    }
    std::size_t unknown_count() const { return probes.size() - known_count(); }
};

namespace detail {

inline std::vector<std::string_view> split_commas(std::string_view line) {
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
        auto pos = line.find(',', start);
        if (pos == std::string_view::npos) {
            fields.push_back(line.substr(start));
            break;
        }
        fields.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return fields;
}

inline bool blank(std::string_view line) {
    return line.find_first_not_of(" \t\r") == std::string_view::npos;
}

}  // namespace detail

/// Parses header-free `sample_id,subject_id,v1,...,vn` rows. Row numbers in
/// errors are 1-based line numbers.
inline SampleSet parse_csv(std::string_view text) {
    SampleSet out;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    std::unordered_set<std::string> seen;
    while (pos <= text.size()) {
        auto nl = text.find('\n', pos);
        auto line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (detail::blank(line)) continue;
        auto fields = detail::split_commas(line);
        const auto row = "row " + std::to_string(line_no);
        if (fields.size() < 3) throw Error(row + ": expected sample_id,subject_id and at least one value");
        FeatureVector fv;
        fv.sample_id = std::string(fields[0]);
        fv.subject_id = std::string(fields[1]);
        if (fv.sample_id.empty() || fv.subject_id.empty()) throw Error(row + ": empty sample_id or subject_id");
        fv.values.resize(static_cast<Eigen::Index>(fields.size() - 2));
        for (std::size_t j = 2; j < fields.size(); ++j) {
            double v = 0;
            if (!detail::blank(fields[j]) && parse_double(fields[j], v)) {
                if (!std::isfinite(v)) throw Error(row + ": non-finite value '" + std::string(fields[j]) + "'");
                fv.values[static_cast<Eigen::Index>(j - 2)] = v;
            } else {
                throw Error(row + ": cannot parse value '" + std::string(fields[j]) + "'");
            }
        }
        if (out.samples.empty()) out.dim = fv.values.size();
        if (fv.values.size() != out.dim)
            throw Error(row + ": dimension " + std::to_string(fv.values.size()) + " does not match " +
                        std::to_string(out.dim));
        if (!seen.insert(fv.sample_id).second) throw Error(row + ": duplicate sample_id '" + fv.sample_id + "'");
        out.samples.push_back(std::move(fv));
    }
    if (out.samples.empty()) throw Error("no samples found");
    return out;
}

inline SampleSet parse_jsonl(std::string_view text) {
    SampleSet out;
    std::size_t line_no = 0;
    std::istringstream in{std::string(text)};
    std::string line;
    std::unordered_set<std::string> seen;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::blank(line)) continue;
        const auto row = "row " + std::to_string(line_no);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw Error(row + ": invalid JSON: " + e.what());
        }
        if (!j.is_object() || !j.contains("sample_id") || !j.contains("subject_id") || !j.contains("values") ||
            !j["values"].is_array() || !j["sample_id"].is_string() || !j["subject_id"].is_string())
            throw Error(row + ": expected object with sample_id, subject_id and values");
        FeatureVector fv;
        fv.sample_id = j["sample_id"].get<std::string>();
        fv.subject_id = j["subject_id"].get<std::string>();
        if (j.contains("tag") && j["tag"].is_string()) fv.tag = j["tag"].get<std::string>();
        const auto& vals = j["values"];
        if (vals.empty()) throw Error(row + ": empty values");
        fv.values.resize(static_cast<Eigen::Index>(vals.size()));
        for (std::size_t k = 0; k < vals.size(); ++k) {
            if (!vals[k].is_number()) throw Error(row + ": non-numeric value");
            double v = vals[k].get<double>();
            if (!std::isfinite(v)) throw Error(row + ": non-finite value");
            fv.values[static_cast<Eigen::Index>(k)] = v;
        }
        if (out.samples.empty()) out.dim = fv.values.size();
        if (fv.values.size() != out.dim)
            throw Error(row + ": dimension " + std::to_string(fv.values.size()) + " does not match " +
                        std::to_string(out.dim));
        if (!seen.insert(fv.sample_id).second) throw Error(row + ": duplicate sample_id '" + fv.sample_id + "'");
        out.samples.push_back(std::move(fv));
    }
    if (out.samples.empty()) throw Error("no samples found");
    return out;
}

inline SampleSet load_samples(const std::filesystem::path& path, FileFormat format) {
    if (!std::filesystem::exists(path)) throw Error("file not found: " + path.string());
    const auto text = read_file(path);
    try {
        return format == FileFormat::csv ? parse_csv(text) : parse_jsonl(text);
    } catch (const Error& e) {
        throw Error(path.string() + ": " + e.what());
    }
}

inline Gallery load_gallery(const std::filesystem::path& path, FileFormat format) {
    return Gallery::from_samples(load_samples(path, format).samples);
}

inline ProbeSet load_probes(const std::filesystem::path& path, FileFormat format) {
    auto set = load_samples(path, format);
    return ProbeSet{std::move(set.samples), set.dim};
}

inline std::string to_csv(const std::vector<FeatureVector>& samples) {
    std::string out;
    for (const auto& s : samples) {
        out += s.sample_id;
        out += ',';
        out += s.subject_id;
        for (Eigen::Index j = 0; j < s.values.size(); ++j) {
            out += ',';
            out += format_double(s.values[j]);
        }
        out += '\n';
    }
    return out;
}

inline std::string to_jsonl(const std::vector<FeatureVector>& samples) {
    std::string out;
    for (const auto& s : samples) {
        nlohmann::ordered_json j;
        j["sample_id"] = s.sample_id;
        j["subject_id"] = s.subject_id;
        j["values"] = std::vector<double>(s.values.data(), s.values.data() + s.values.size());
        if (!s.tag.empty()) j["tag"] = s.tag;
        out += j.dump();
        out += '\n';
    }
    return out;
}

inline std::string serialize_samples(const std::vector<FeatureVector>& samples, FileFormat format) {
    return format == FileFormat::csv ? to_csv(samples) : to_jsonl(samples);
}

/// Scales every vector to unit Euclidean norm; zero vectors are left untouched.
inline void l2_normalize(std::vector<FeatureVector>& samples) {
    for (auto& s : samples) {
        const double n = s.values.norm();
        if (n > 0) s.values /= n;
    }
}

inline Gallery l2_normalized(const Gallery& g) {
    auto samples = g.all_samples();
    l2_normalize(samples);
    return Gallery::from_samples(std::move(samples));
}

/// Component-wise mean of a subject's samples.
inline FeatureVector subject_centroid(const Gallery& g, const std::string& subject) {
    const auto& samples = g.samples_of(subject);
    Vector mean = Vector::Zero(g.dim());
    for (const auto& s : samples) mean += s.values;
    mean /= static_cast<double>(samples.size());
    return FeatureVector{subject, subject, std::move(mean), {}};
}

/// One centroid per subject, in ascending subject order.
inline std::vector<FeatureVector> subject_centroids(const Gallery& g) {
    std::vector<FeatureVector> out;
    out.reserve(g.subject_count());
    for (const auto& id : g.subject_ids()) out.push_back(subject_centroid(g, id));
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic data

struct SyntheticSpec {
    int num_subjects = 50;
    int samples_per_subject = 5;
    int dim = 64;
    double within_spread = 0.1;
    double between_spread = 10.0;
    std::uint64_t seed = 1;
};

inline std::string zero_padded(std::size_t value, std::size_t width) {
    auto s = std::to_string(value);
    if (s.size() < width) s.insert(0, width - s.size(), '0');
    return s;
}

/// Isotropic Gaussian blobs: centers ~ N(0, between²·I), samples ~ N(center, within²·I).
/// Subjects are named `subjNNN` and samples `subjNNN_J`.
inline Gallery gen_synthetic(const SyntheticSpec& spec) {
    if (spec.num_subjects < 2) throw Error("gen_synthetic: need at least 2 subjects");
    if (spec.samples_per_subject < 1) throw Error("gen_synthetic: need at least 1 sample per subject");
    if (spec.dim < 1) throw Error("gen_synthetic: dimension must be >= 1");
    if (!(spec.within_spread >= 0)) throw Error("gen_synthetic: within_spread must be >= 0");
    if (!(spec.between_spread > 0)) throw Error("gen_synthetic: between_spread must be > 0");

    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const auto width = std::max<std::size_t>(3, std::to_string(spec.num_subjects - 1).size());

    std::vector<FeatureVector> samples;
    samples.reserve(static_cast<std::size_t>(spec.num_subjects) * spec.samples_per_subject);
    for (int s = 0; s < spec.num_subjects; ++s) {
        Vector center(spec.dim);
        for (int j = 0; j < spec.dim; ++j) center[j] = spec.between_spread * normal(rng);
        const auto subject = "subj" + zero_padded(static_cast<std::size_t>(s), width);
        for (int k = 0; k < spec.samples_per_subject; ++k) {
            Vector v = center;
            // Draws are consumed even at zero spread so the stream layout does not depend on it.
            for (int j = 0; j < spec.dim; ++j) v[j] += spec.within_spread * normal(rng);
            samples.push_back(FeatureVector{subject + "_" + std::to_string(k), subject, std::move(v), {}});
        }
    }
    return Gallery::from_samples(std::move(samples));
}

// ---------------------------------------------------------------------------
// Protocol partitioning

enum class ProtocolStyle { rowden, gunther, openness };

inline std::string_view to_string(ProtocolStyle s) {
    switch (s) {
        case ProtocolStyle::rowden: return "rowden";
        case ProtocolStyle::gunther: return "gunther";
        case ProtocolStyle::openness: return "openness";
    }
    return "?";
}

inline ProtocolStyle parse_protocol_style(std::string_view s) {
    if (s == "rowden" || s == "rowden-like") return ProtocolStyle::rowden;
    if (s == "gunther" || s == "gunther-like") return ProtocolStyle::gunther;
    if (s == "openness") return ProtocolStyle::openness;
    throw Error("unknown protocol style '" + std::string(s) + "'");
}

struct ProtocolConfig {
    ProtocolStyle style = ProtocolStyle::rowden;
    int min_train_samples = 2;
    int train_samples_cap = 3;
    int probe_samples_per_known = 1;
    /// Fraction of probes that are impostors (openness style only).
    double openness = 0.0;
    std::uint64_t seed = 0;
};

struct ProtocolSplit {
    Gallery train;
    ProbeSet probes;
};

inline void validate(const ProtocolConfig& cfg) {
    if (cfg.min_train_samples < 1) throw Error("min_train_samples must be >= 1");
    if (cfg.train_samples_cap < 1) throw Error("train_samples_cap must be >= 1");
    if (cfg.probe_samples_per_known < 1) throw Error("probe_samples_per_known must be >= 1");
    if (!(cfg.openness >= 0.0 && cfg.openness <= 1.0)) throw Error("openness must lie in [0, 1]");
    if (cfg.style != ProtocolStyle::gunther && cfg.train_samples_cap < cfg.min_train_samples)
        throw Error("train_samples_cap must be >= min_train_samples");
}

/// Partitions a labeled collection into an enrolled training gallery and a
/// probe set mixing known and unknown ("?") identities.
///
/// rowden:   subjects with >= min_train + probes_per_known samples are known;
///           they contribute probes_per_known probes and up to cap training
///           samples. Every sample of the remaining subjects is an unknown probe.
/// gunther:  subjects with more than min_train samples are known; the rest
///           become unknown probes, tagged known_unknown (2+ samples) or
///           unknown_unknown (single sample).
/// openness: known subjects as in rowden; unknown probes are drawn so that
///           unknown / (known + unknown) matches the requested openness,
///           demoting known subjects to the unknown pool when it runs short.
inline ProtocolSplit split_protocol(const Gallery& all, const ProtocolConfig& cfg) {
    validate(cfg);
    std::mt19937_64 rng(cfg.seed);

    const auto min_known = static_cast<std::size_t>(cfg.style == ProtocolStyle::gunther
                                                        ? std::max(cfg.min_train_samples + 1,
                                                                   cfg.probe_samples_per_known + 1)
                                                        : cfg.min_train_samples + cfg.probe_samples_per_known);

    std::vector<std::string> qualifying, others;
    for (const auto& [id, samples] : all.subjects())
        (samples.size() >= min_known ? qualifying : others).push_back(id);
    if (qualifying.size() < 2)
        throw Error("infeasible protocol: only " + std::to_string(qualifying.size()) + " subject(s) have at least " +
                    std::to_string(min_known) + " samples, need 2");

    std::vector<std::string> known = qualifying;
    std::vector<std::string> demoted;
    std::size_t unknown_target = 0;
    const auto probes_per = static_cast<std::size_t>(cfg.probe_samples_per_known);

    if (cfg.style == ProtocolStyle::openness) {
        if (cfg.openness >= 1.0) throw Error("infeasible protocol: openness 1 leaves no room for known probes");
        std::shuffle(known.begin(), known.end(), rng);
        std::size_t pool = 0;
        for (const auto& id : others) pool += all.samples_of(id).size();
        auto target_for = [&](std::size_t known_subjects) {
            const double k = static_cast<double>(known_subjects * probes_per);
            return static_cast<std::size_t>(std::llround(cfg.openness * k / (1.0 - cfg.openness)));
        };
        unknown_target = target_for(known.size());
        while (pool < unknown_target) {
            if (known.size() <= 2)
                throw Error("infeasible protocol: not enough samples to reach openness " +
                            format_double(cfg.openness));
            demoted.push_back(known.back());
            pool += all.samples_of(known.back()).size();
            known.pop_back();
            unknown_target = target_for(known.size());
        }
        std::sort(known.begin(), known.end());
    }

    std::vector<FeatureVector> train, known_probes;
    for (const auto& id : known) {
        auto samples = all.samples_of(id);
        std::shuffle(samples.begin(), samples.end(), rng);
        for (std::size_t i = 0; i < probes_per; ++i) known_probes.push_back(samples[i]);
        const auto train_n = std::min(samples.size() - probes_per, static_cast<std::size_t>(cfg.train_samples_cap));
        for (std::size_t i = 0; i < train_n; ++i) train.push_back(samples[probes_per + i]);
    }

    std::vector<FeatureVector> unknown;
    auto add_unknowns = [&](const std::string& id) {
        const auto& samples = all.samples_of(id);
        for (auto s : samples) {
            if (cfg.style == ProtocolStyle::gunther)
                s.tag = samples.size() >= 2 ? "known_unknown" : "unknown_unknown";
            else
                s.tag = "unknown";
            s.subject_id = std::string(kUnknownSubject);
            unknown.push_back(std::move(s));
        }
    };
    for (const auto& id : others) add_unknowns(id);
    for (const auto& id : demoted) add_unknowns(id);

    if (cfg.style == ProtocolStyle::openness) {
        std::shuffle(unknown.begin(), unknown.end(), rng);
        unknown.resize(unknown_target);
        std::sort(unknown.begin(), unknown.end(),
                  [](const auto& a, const auto& b) { return a.sample_id < b.sample_id; });
    }

    ProtocolSplit out{Gallery::from_samples(std::move(train)), ProbeSet{}};
    out.probes.dim = all.dim();
    out.probes.probes = std::move(known_probes);
    out.probes.probes.insert(out.probes.probes.end(), std::make_move_iterator(unknown.begin()),
                             std::make_move_iterator(unknown.end()));
    return out;
}

}  // namespace apcpls

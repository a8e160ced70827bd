#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "apcpls/commands.hpp"

namespace {

using namespace apcpls;
using namespace apcpls::cli;

std::vector<double> parse_far_list(const std::string& s) {
    std::vector<double> out;
    std::size_t start = 0;
    while (start <= s.size()) {
        auto end = s.find(',', start);
        if (end == std::string::npos) end = s.size();
        double v = 0;
        if (!parse_double(std::string_view(s).substr(start, end - start), v))
            throw Error("bad --dir-at-far value '" + s.substr(start, end - start) + "'");
        out.push_back(v);
        start = end + 1;
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Open-set identification with clustered PLS ensembles"};
    app.require_subcommand(1);
    app.fallthrough();

    CommonArgs common;
    std::uint64_t seed = 0;
    std::string format = "csv", metric = "neg_sq_euclid";
    std::string out_dir = ".";
    app.add_option("--seed", seed, "Seed for data generation, protocol splits or ensemble splits");
    app.add_option("--out-dir", out_dir, "Output directory");
    app.add_option("--format", format, "Feature file format")->check(CLI::IsMember({"csv", "jsonl"}));
    app.add_option("--metric", metric, "Similarity for clustering and cluster selection")
        ->check(CLI::IsMember({"neg_sq_euclid", "cosine"}));
    app.add_flag("--l2-normalize", common.l2_normalize, "Scale every feature vector to unit norm on load");

    // gen
    GenArgs gen;
    std::string gen_out;
    auto* gen_cmd = app.add_subcommand("gen", "Write a synthetic Gaussian-blob gallery");
    gen_cmd->add_option("--subjects", gen.spec.num_subjects)->capture_default_str();
    gen_cmd->add_option("--samples", gen.spec.samples_per_subject)->capture_default_str();
    gen_cmd->add_option("--dim", gen.spec.dim)->capture_default_str();
    gen_cmd->add_option("--within", gen.spec.within_spread, "Within-subject spread")->capture_default_str();
    gen_cmd->add_option("--between", gen.spec.between_spread, "Between-subject spread")->capture_default_str();
    gen_cmd->add_option("-o,--output", gen_out, "Output file (default <out-dir>/gallery.<format>)");

    // split
    SplitArgs split;
    std::string style = "rowden", split_in;
    auto* split_cmd = app.add_subcommand("split", "Partition a labeled collection into train and probe sets");
    split_cmd->add_option("-i,--input", split_in)->required();
    split_cmd->add_option("--style", style)->check(CLI::IsMember({"rowden", "gunther", "openness"}))->capture_default_str();
    split_cmd->add_option("--min-train", split.protocol.min_train_samples)->capture_default_str();
    split_cmd->add_option("--cap", split.protocol.train_samples_cap, "Maximum training samples per subject")
        ->capture_default_str();
    split_cmd->add_option("--probes-per-known", split.protocol.probe_samples_per_known)->capture_default_str();
    split_cmd->add_option("--openness", split.protocol.openness, "Impostor fraction of the probe set")
        ->capture_default_str();

    // cluster
    ClusterArgs cluster;
    std::string cluster_train, preference = "median";
    auto* cluster_cmd = app.add_subcommand("cluster", "Cluster gallery subjects with affinity propagation");
    auto add_ap_options = [&](CLI::App* cmd, ApOptions& ap) {
        cmd->add_option("--preference", preference, "median | min | fixed:<value>")->capture_default_str();
        cmd->add_option("--damping", ap.damping)->capture_default_str();
        cmd->add_option("--max-iter", ap.max_iter)->capture_default_str();
        cmd->add_option("--convergence-iter", ap.convergence_iter)->capture_default_str();
    };
    cluster_cmd->add_option("-t,--train", cluster_train)->required();
    add_ap_options(cluster_cmd, cluster.ap);

    // identify
    IdentifyArgs ident;
    std::string id_train, id_probes, id_clusters;
    std::optional<double> threshold;
    auto* id_cmd = app.add_subcommand("identify", "Rank and decide every probe");
    id_cmd->add_option("-t,--train", id_train)->required();
    id_cmd->add_option("-p,--probes", id_probes)->required();
    id_cmd->add_option("-c,--clusters", id_clusters, "clusters.json from the cluster command");
    id_cmd->add_option("--k", ident.pipeline.k, "Clusters kept per probe")->capture_default_str();
    id_cmd->add_option("--models", ident.pipeline.models, "PLS models per ensemble")->capture_default_str();
    id_cmd->add_option("--components", ident.pipeline.components, "PLS latent components")->capture_default_str();
    id_cmd->add_option("--threshold", threshold, "Known/unknown ratio threshold");
    id_cmd->add_flag("--no-cluster", ident.no_cluster, "Train every ensemble on the whole gallery");
    id_cmd->add_flag("--pls-scale", ident.pipeline.scale, "Unit-variance scaling inside PLS");
    id_cmd->add_option("--top", ident.top_candidates, "Candidates written per decision")->capture_default_str();
    id_cmd->add_option("--threads", ident.threads, "Worker threads across probes")->capture_default_str();
    add_ap_options(id_cmd, ident.ap);

    // evaluate
    EvaluateArgs eval;
    std::string ev_decisions, ev_probes, ev_meta, ev_train, ev_clusters, far_list = "0.01,0.1";
    std::optional<int> ev_k;
    auto* ev_cmd = app.add_subcommand("evaluate", "Compute CMC, open-set ROC, AUC and DIR@FAR");
    ev_cmd->add_option("-d,--decisions", ev_decisions)->required();
    ev_cmd->add_option("-p,--probes", ev_probes)->required();
    ev_cmd->add_option("--meta", ev_meta, "identify_meta.json (default: next to the decisions)");
    ev_cmd->add_option("-t,--train", ev_train, "Training gallery (for MARR)");
    ev_cmd->add_option("-c,--clusters", ev_clusters, "clusters.json (for MARR)");
    ev_cmd->add_option("--k", ev_k, "k for MARR (default: from identify metadata)");
    ev_cmd->add_option("--cmc-ranks", eval.report.cmc_ranks)->capture_default_str();
    ev_cmd->add_option("--dir-at-far", far_list, "Comma-separated FAR operating points")->capture_default_str();

    // sweep
    SweepArgs sweep;
    std::string sw_train, sw_probes;
    auto* sw_cmd = app.add_subcommand("sweep", "Closed-set CMC over a parameter grid");
    sw_cmd->add_option("-t,--train", sw_train)->required();
    sw_cmd->add_option("-p,--probes", sw_probes)->required();
    sw_cmd->add_option("--components", sweep.components)->delimiter(',')->capture_default_str();
    sw_cmd->add_option("--models", sweep.models)->delimiter(',')->capture_default_str();
    sw_cmd->add_option("--k", sweep.k)->delimiter(',')->capture_default_str();
    sw_cmd->add_option("--seeds", sweep.seeds, "Split seeds, one repetition each")->delimiter(',')->capture_default_str();
    sw_cmd->add_flag("--no-cluster", sweep.no_cluster);
    sw_cmd->add_option("--threads", sweep.threads)->capture_default_str();
    add_ap_options(sw_cmd, sweep.ap);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return e.get_exit_code() == 0 ? 2 : e.get_exit_code();
    }

    try {
        common.out_dir = out_dir;
        common.format = parse_file_format(format);
        common.metric = parse_metric(metric);

        if (*gen_cmd) {
            if (gen.spec.num_subjects < 2) throw Error("--subjects must be at least 2");
            gen.spec.seed = seed;
            if (!gen_out.empty()) gen.output = gen_out;
            std::cout << cmd_gen(gen, common).string() << '\n';
        } else if (*split_cmd) {
            split.input = split_in;
            split.protocol.style = parse_protocol_style(style);
            split.protocol.seed = seed;
            cmd_split(split, common);
        } else if (*cluster_cmd) {
            cluster.train = cluster_train;
            cluster.preference = parse_preference(preference);
            const auto c = cmd_cluster(cluster, common);
            std::cout << c.cluster_count() << " clusters over " << c.points.size() << " subjects\n";
        } else if (*id_cmd) {
            ident.train = id_train;
            ident.probes = id_probes;
            if (!id_clusters.empty()) ident.clusters = id_clusters;
            ident.pipeline.threshold = threshold;
            ident.pipeline.seed = seed;
            ident.preference = parse_preference(preference);
            const auto d = cmd_identify(ident, common);
            std::cout << d.size() << " decisions written\n";
        } else if (*ev_cmd) {
            eval.decisions = ev_decisions;
            eval.probes = ev_probes;
            if (!ev_meta.empty()) eval.meta = ev_meta;
            if (!ev_train.empty()) eval.train = ev_train;
            if (!ev_clusters.empty()) eval.clusters = ev_clusters;
            eval.k = ev_k;
            eval.report.far_targets = parse_far_list(far_list);
            const auto rep = cmd_evaluate(eval, common);
            std::cout << "rank1 " << rep.rank(1);
            if (rep.auc) std::cout << "  auc " << *rep.auc;
            std::cout << '\n';
        } else if (*sw_cmd) {
            sweep.train = sw_train;
            sweep.probes = sw_probes;
            sweep.preference = parse_preference(preference);
            const auto rows = cmd_sweep(sweep, common);
            std::cout << rows.size() << " sweep rows written\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

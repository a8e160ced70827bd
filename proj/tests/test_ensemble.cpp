#include <gtest/gtest.h>

#include <random>
#include <set>

#include "apcpls/ensemble.hpp"
#include "oracles.hpp"

using namespace apcpls;

namespace {

std::vector<std::string> names(std::size_t n, const std::string& prefix = "s") {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "%03zu", i);
        out.push_back(prefix + buf);
    }
    return out;
}

// An ensemble with a hand-written plan and no models, for vote() checks.
Ensemble bare(std::vector<std::string> universe, std::vector<std::string> sc, std::vector<Split> splits) {
    Ensemble e;
    e.subject_universe = std::move(universe);
    e.plan.subjects = std::move(sc);
    e.plan.splits = std::move(splits);
    return e;
}

Gallery gallery_of(const std::vector<std::pair<std::string, std::vector<double>>>& rows) {
    std::vector<FeatureVector> s;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        FeatureVector f;
        f.subject_id = rows[i].first;
        f.sample_id = rows[i].first + "_" + std::to_string(i);
        f.values = Eigen::Map<const Vector>(rows[i].second.data(), static_cast<Eigen::Index>(rows[i].second.size()));
        s.push_back(std::move(f));
    }
    return Gallery::from_samples(std::move(s));
}

TrainOptions quiet_opts(int c) {
    TrainOptions o;
    o.components = c;
    return o;
}

}  // namespace

TEST(MakeSplits, TwoSubjectsOnePerSide) {
    const auto p = make_splits({"B", "A"}, 1, 3);
    ASSERT_EQ(p.size(), 1u);
    EXPECT_EQ(p.splits[0].positive.size(), 1u);
    EXPECT_EQ(p.splits[0].negative.size(), 1u);
    EXPECT_EQ(p.subjects, (std::vector<std::string>{"A", "B"}));
}

TEST(MakeSplits, OddSizeGivesPositiveTheExtra) {
    const auto p = make_splits(names(7), 25, 9);
    for (const auto& s : p.splits) {
        EXPECT_EQ(s.positive.size(), 4u);
        EXPECT_EQ(s.negative.size(), 3u);
    }
}

TEST(MakeSplits, PartitionInvariants) {
    const auto sc = names(13);
    const auto p = make_splits(sc, 40, 2);
    for (const auto& s : p.splits) {
        std::set<std::string> all(s.positive.begin(), s.positive.end());
        for (const auto& n : s.negative) EXPECT_TRUE(all.insert(n).second) << "overlap on " << n;
        EXPECT_EQ(std::vector<std::string>(all.begin(), all.end()), sc);
    }
}

TEST(MakeSplits, DeterministicPerSeed) {
    const auto sc = names(100);
    const auto a = make_splits(sc, 60, 42), b = make_splits(sc, 60, 42), c = make_splits(sc, 60, 43);
    bool any_diff = false;
    for (std::size_t i = 0; i < 60; ++i) {
        EXPECT_EQ(a.splits[i].positive, b.splits[i].positive);
        any_diff = any_diff || a.splits[i].positive != c.splits[i].positive;
    }
    EXPECT_TRUE(any_diff);
}

TEST(MakeSplits, Preconditions) {
    EXPECT_THROW(make_splits({"A"}, 3, 1), Error);
    EXPECT_THROW(make_splits({"A", "A"}, 3, 1), Error);
    EXPECT_THROW(make_splits({"A", "B"}, 0, 1), Error);
}

TEST(HammingOf, Definition) {
    SplitPlan p;
    p.subjects = {"A", "B", "C"};
    p.splits = {{{"A", "B"}, {"C"}}, {{"B", "C"}, {"A"}}, {{"A", "C"}, {"B"}}};
    EXPECT_EQ(hamming_of(p, "A"), (std::vector<int>{1, -1, 1}));
    EXPECT_THROW(hamming_of(p, "Z"), Error);

    SplitPlan q;
    q.subjects = {"A", "B"};
    q.splits = {{{"A"}, {"B"}}, {{"A"}, {"B"}}};
    EXPECT_EQ(hamming_of(q, "A"), (std::vector<int>{1, 1}));
    EXPECT_EQ(hamming_embedding(q).at("B"), (std::vector<int>{-1, -1}));
}

TEST(HammingOf, NoCollisionsAcrossSeededPlans) {
    // 100 plans over 15 subjects give 100 * C(15,2) = 10500 pairs.
    const auto sc = names(15);
    std::size_t pairs = 0, collisions = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const auto emb = hamming_embedding(make_splits(sc, 60, seed));
        for (auto a = emb.begin(); a != emb.end(); ++a)
            for (auto b = std::next(a); b != emb.end(); ++b, ++pairs) collisions += a->second == b->second;
    }
    EXPECT_EQ(pairs, 10500u);
    EXPECT_EQ(collisions, 0u);
}

TEST(TrainEnsemble, TwoSubjectsOppositeSigns) {
    const auto g = gallery_of({{"A", {0, 0}}, {"B", {10, 10}}});
    const auto e = train_ensemble(g, make_splits({"A", "B"}, 1, 0), quiet_opts(1));
    Vector near_a(2), near_b(2);
    near_a << 0.5, -0.3;
    near_b << 9.6, 10.2;
    const double ra = respond(e, near_a)[0], rb = respond(e, near_b)[0];
    EXPECT_LT(ra * rb, 0.0);
    const bool a_positive = e.plan.splits[0].positive.front() == "A";
    EXPECT_EQ(ra > 0, a_positive);
}

TEST(TrainEnsemble, SerializationIsByteIdentical) {
    const auto g = gen_synthetic({12, 3, 8, 0.5, 5.0, 4});
    const auto plan = make_splits(g.subject_ids(), 10, 77);
    const auto a = ensemble_to_json(train_ensemble(g, plan, quiet_opts(4))).dump();
    const auto b = ensemble_to_json(train_ensemble(g, plan, quiet_opts(4))).dump();
    EXPECT_EQ(a, b);
    auto threaded = quiet_opts(4);
    threaded.threads = 3;
    EXPECT_EQ(ensemble_to_json(train_ensemble(g, plan, threaded)).dump(), a);
    const auto back = ensemble_from_json(nlohmann::json::parse(a));
    EXPECT_EQ(ensemble_to_json(back).dump(), a);
}

TEST(TrainEnsemble, FiftySubjectBenchmark) {
    const auto g = gen_synthetic({50, 5, 64, 0.5, 10.0, 1});
    const auto e = train_ensemble(g, make_splits(g.subject_ids(), 60, 1), quiet_opts(10));
    ASSERT_EQ(e.models.size(), 60u);
    for (const auto& m : e.models) {
        EXPECT_GE(m.components_used, 1);
        EXPECT_LE(m.max_score_cosine, kScoreOrthogonalityTol);
    }
}

TEST(TrainEnsemble, TargetsFollowThePlan) {
    // With all components a subject's own samples land on its side of every split.
    const auto g = gen_synthetic({8, 3, 30, 0.05, 10.0, 6});
    const auto e = train_ensemble(g, make_splits(g.subject_ids(), 12, 5), quiet_opts(20));
    for (const auto& id : g.subject_ids()) {
        const auto h = hamming_of(e.plan, id);
        const auto r = respond(e, g.samples_of(id).front().values);
        for (std::size_t i = 0; i < r.size(); ++i) EXPECT_GT(r[i] * h[i], 0.0) << id << " split " << i;
    }
}

TEST(TrainEnsemble, Errors) {
    const auto g = gen_synthetic({4, 2, 3, 0.5, 5.0, 1});
    EXPECT_THROW(train_ensemble(g, make_splits({"subj000", "nobody"}, 2, 1)), Error);
    // Identical rows make every fit fail; the message names the split.
    const auto same = gallery_of({{"A", {1, 1}}, {"B", {1, 1}}});
    try {
        train_ensemble(same, make_splits({"A", "B"}, 2, 1), quiet_opts(1));
        FAIL() << "expected an error";
    } catch (const Error& err) {
        EXPECT_NE(std::string(err.what()).find("split 0"), std::string::npos);
    }
}

TEST(Respond, ShapeAndCenteredIdentity) {
    const auto g = gen_synthetic({6, 3, 5, 0.5, 5.0, 3});
    const auto e = train_ensemble(g, make_splits(g.subject_ids(), 7, 3), quiet_opts(3));
    const Vector center = e.models.front().x_mean;  // same rows for every model
    const auto r = respond(e, center);
    ASSERT_EQ(r.size(), 7u);
    for (std::size_t i = 0; i < r.size(); ++i) EXPECT_NEAR(r[i], e.models[i].y_mean, 1e-12);
    EXPECT_THROW(respond(e, Vector::Zero(4)), Error);
}

TEST(Vote, HandArithmetic) {
    const auto e = bare({"A", "B", "C"}, {"A", "B", "C"}, {{{"A", "B"}, {"C"}}, {{"B", "C"}, {"A"}}});
    const auto h = vote(e, {0.5, 0.3});
    EXPECT_DOUBLE_EQ(h.at("A"), 0.5);
    EXPECT_DOUBLE_EQ(h.at("B"), 0.8);
    EXPECT_DOUBLE_EQ(h.at("C"), 0.3);
    const auto r = rank(h);
    ASSERT_EQ(r.size(), 3u);
    EXPECT_EQ(r[0].subject, "B");
    EXPECT_EQ(r[1].subject, "A");
    EXPECT_EQ(r[2].subject, "C");
}

TEST(Vote, NegativeResponsesAreDropped) {
    const auto e = bare({"A", "B", "C", "D"}, {"A", "B", "C"}, {{{"A", "B"}, {"C"}}, {{"B", "C"}, {"A"}}});
    const auto h = vote(e, {-0.5, 0.0});
    EXPECT_EQ(h.total(), 0.0);
    const auto r = rank(h);
    ASSERT_EQ(r.size(), 4u);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(r[i].subject, std::string(1, static_cast<char>('A' + i)));
    EXPECT_THROW(vote(e, {1.0}), Error);
}

TEST(Vote, OutsideSubjectsStayZero) {
    const auto e = bare({"A", "B", "C", "D"}, {"A", "B"}, {{{"A"}, {"B"}}, {{"B"}, {"A"}}});
    const auto h = vote(e, {2.0, 1.0});
    EXPECT_EQ(h.at("C"), 0.0);
    EXPECT_EQ(h.at("D"), 0.0);
    EXPECT_EQ(rank(h).size(), 4u);
}

TEST(Vote, MatchesEnumerationOracle) {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> n01;
    for (int trial = 0; trial < 200; ++trial) {
        const auto nsc = 2 + rng() % 9;
        const auto d = 1 + static_cast<int>(rng() % 8);
        auto universe = names(nsc + rng() % 4);
        const std::vector<std::string> sc(universe.begin(), universe.begin() + static_cast<std::ptrdiff_t>(nsc));
        const auto plan = make_splits(sc, d, rng());
        auto e = bare(universe, plan.subjects, plan.splits);
        std::vector<double> r;
        std::vector<std::vector<std::string>> pos;
        double mass = 0;
        for (int i = 0; i < d; ++i) {
            r.push_back(n01(rng));
            pos.push_back(plan.splits[static_cast<std::size_t>(i)].positive);
            mass += std::max(0.0, r.back()) * static_cast<double>(pos.back().size());
        }
        const auto h = vote(e, r);
        EXPECT_EQ(h.bins, oracle::enumerate_votes(universe, pos, r));
        EXPECT_NEAR(h.total(), mass, 1e-12);
    }
}

TEST(Rank, ScaleInvarianceAndPermutation) {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n01;
    const auto sc = names(10);
    const auto plan = make_splits(sc, 8, 2);
    const auto e = bare(names(12), plan.subjects, plan.splits);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> r(8), scaled(8);
        for (std::size_t i = 0; i < 8; ++i) r[i] = n01(rng), scaled[i] = 3.7 * r[i];
        const auto a = rank(vote(e, r)), b = rank(vote(e, scaled));
        ASSERT_EQ(a.size(), 12u);
        std::set<std::string> seen;
        for (std::size_t i = 0; i < a.size(); ++i) {
            EXPECT_EQ(a[i].subject, b[i].subject);
            seen.insert(a[i].subject);
            if (i > 0) {
                EXPECT_GE(a[i - 1].score, a[i].score);
            }
        }
        EXPECT_EQ(seen.size(), 12u);
    }
}

TEST(EnsembleCache, ReusesTrainedEnsembles) {
    const auto g = gen_synthetic({6, 2, 4, 0.5, 5.0, 2});
    EnsembleCache cache;
    const auto opt = quiet_opts(2);
    const auto a = cache.get_or_train(g, {"subj002", "subj001"}, 5, 9, opt);
    const auto b = cache.get_or_train(g, {"subj001", "subj002"}, 5, 9, opt);
    EXPECT_EQ(a.get(), b.get());
    EXPECT_EQ(cache.hits(), 1u);
    const auto c = cache.get_or_train(g, {"subj001", "subj002"}, 5, 10, opt);
    EXPECT_NE(a.get(), c.get());
    EXPECT_EQ(cache.size(), 2u);
    EXPECT_EQ(cache.misses(), 2u);
}

TEST(Pipeline, RerunGivesIdenticalRanking) {
    const auto g = gen_synthetic({10, 3, 16, 0.5, 5.0, 8});
    const Vector probe = g.samples_of("subj004").front().values;
    auto run = [&] {
        const auto e = train_ensemble(g, make_splits(g.subject_ids(), 20, 3), quiet_opts(5));
        return rank(vote(e, respond(e, probe)));
    };
    const auto a = run();
    EXPECT_EQ(a, run());
    EXPECT_EQ(a.front().subject, "subj004");
}

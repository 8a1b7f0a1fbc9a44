#include <doctest.h>

#include <json.hpp>

#include "mgm/errors.hpp"
#include "mgm/metrics.hpp"
#include "mgm/synth.hpp"
#include "metric_check.hpp"

using namespace mgm;

TEST_CASE("FID of a set against itself is zero") {
    std::mt19937_64 rng(1);
    const auto x = testing::gaussian_samples(500, 6, 0.0, rng);
    CHECK(fid(x, x) <= 1e-6);
    CHECK(fid(x, x) >= -1e-9);
}

TEST_CASE("equal-covariance FID is the squared mean distance") {
    GaussianMoments a, b;
    a.mean = Eigen::VectorXd::Zero(3);
    b.mean = Eigen::VectorXd::Zero(3);
    b.mean(0) = 3;
    b.mean(1) = 4;
    a.cov = b.cov = Eigen::MatrixXd::Identity(3, 3) * 2.0;
    CHECK(frechet_distance(a, b) == doctest::Approx(25.0).epsilon(1e-12));
    // Different scales: Tr(S_a + S_b - 2 sqrt(S_a S_b)) = d (sqrt(s_a) - sqrt(s_b))^2.
    b.mean.setZero();
    b.cov = Eigen::MatrixXd::Identity(3, 3) * 8.0;
    CHECK(frechet_distance(a, b) == doctest::Approx(3 * (std::sqrt(2.0) - std::sqrt(8.0)) * (std::sqrt(2.0) - std::sqrt(8.0))));
    CHECK(std::abs(testing::sampled_equal_cov_fid(10000, 4, 2) - 25.0) < 0.5);
}

TEST_CASE("FID rejects too few samples and mismatched widths") {
    CHECK_THROWS_AS(fid(FeatureMatrix::Zero(1, 3), FeatureMatrix::Zero(5, 3)), ConfigError);
    CHECK_THROWS_AS(fid(FeatureMatrix::Random(5, 3), FeatureMatrix::Random(5, 2)), InvalidArgument);
}

TEST_CASE("retrieval precision oracles") {
    CHECK(testing::oracle_embedding_r1(100, 32, 8, 3) == 1.0);
    CHECK(std::abs(testing::random_embedding_r1(200, 32, 8, 4) - 1.0 / 32) < 0.02);
    std::mt19937_64 rng(5);
    const auto f = testing::gaussian_samples(70, 4, 0.0, rng);
    const auto r = retrieval_metrics(f, f, 32, 3);
    CHECK(r.batches == 2);
    CHECK(r.r_precision == std::vector<double>{1.0, 1.0, 1.0});
    CHECK(r.mm_dist == 0.0);
    CHECK_THROWS_AS(retrieval_metrics(f, f, 100), ConfigError);
}

TEST_CASE("diversity and multimodality") {
    FeatureMatrix two(2, 1);
    two << 0, 3;
    CHECK(mean_pair_distance(two, FeatureMatrix::Zero(2, 1)) == doctest::Approx(1.5));
    CHECK(multimodality({two, FeatureMatrix::Zero(2, 1)}) == doctest::Approx(1.5));
    std::mt19937_64 rng(6);
    const auto x = testing::gaussian_samples(1000, 2, 0.0, rng);
    // E|X - Y| for independent 2-d standard normals is sqrt(pi).
    CHECK(diversity(x, 300, 1) == doctest::Approx(std::sqrt(M_PI)).epsilon(0.1));
}

TEST_CASE("BLEU and ROUGE identity is 100") {
    const std::vector<std::string> refs = {"raise your left arm slowly, then bend your right knee."};
    const auto s = text_metrics(refs[0], refs);
    for (int n = 0; n < 4; ++n) CHECK(s.bleu[n] == doctest::Approx(100.0));
    CHECK(s.rouge_l == doctest::Approx(100.0));
    CHECK(corpus_bleu({refs[0], "walk forward"}, {refs, {"walk forward"}})[3] == doctest::Approx(100.0));
}

TEST_CASE("BLEU against a hand-computed value") {
    // candidate "the cat sat" vs "the cat sat down": p1 = p2 = p3 = 1, brevity exp(1 - 4/3).
    const auto b = corpus_bleu({"the cat sat"}, {{"the cat sat down"}});
    CHECK(b[0] == doctest::Approx(100.0 * std::exp(1.0 - 4.0 / 3.0)));
    CHECK(b[2] == doctest::Approx(100.0 * std::exp(1.0 - 4.0 / 3.0)));
    // No 4-gram: smoothed (0+1)/(0+1) keeps the score finite.
    CHECK(b[3] > 0);
    CHECK(corpus_bleu({"dog"}, {{"the cat sat down"}})[0] == doctest::Approx(0.0));
}

TEST_CASE("ROUGE-L uses the longest common subsequence") {
    // LCS("a b c d", "a c d e") = 3; P = R = 3/4.
    CHECK(rouge_l("a b c d", {"a c d e"}) == doctest::Approx(75.0));
    CHECK(rouge_l("x y", {"a b"}) == 0.0);
    CHECK(rouge_l("A B", {"a b"}, {.case_sensitive = false}) == doctest::Approx(100.0));
}

TEST_CASE("snippet-level evaluation aligns on separators") {
    const auto e = snippet_level_eval("walk<SEP><Motionless>", "walk<SEP><Motionless>");
    REQUIRE(e.per_snippet.size() == 2);
    CHECK(e.per_snippet[1].rouge_l == doctest::Approx(100.0));
    const auto miss = snippet_level_eval("walk", "walk<SEP>run");
    REQUIRE(miss.per_snippet.size() == 2);
    CHECK(miss.per_snippet[1].rouge_l == 0.0);
    CHECK_FALSE(miss.diagnostics.empty());
}

TEST_CASE("interval IoU") {
    CHECK(localization_score(TimeSpan{1, 3}, TimeSpan{2, 4}).iou == 1.0 / 3.0);
    CHECK(localization_score(TimeSpan{1, 3}, TimeSpan{2, 4}).exact_match == 0);
    CHECK(localization_score(TimeSpan{1, 3}, TimeSpan{1, 3}).iou == 1.0);
    CHECK(localization_score(TimeSpan{0, 1}, TimeSpan{2, 4}).iou == 0.0);
    const auto s = localization_score("from 1.0s to 3.0s", TimeSpan{1, 3});
    CHECK(s.exact_match == 1);
    const auto bad = localization_score("about a second", TimeSpan{1, 3});
    CHECK(bad.exact_match == 0);
    CHECK(bad.iou == 0.0);
    CHECK(bad.diagnostic.has_value());
}

TEST_CASE("handcrafted embedder matches statements to motion") {
    CorpusOptions o;
    o.noise_sigma = 0;
    const auto items = synth_corpus(40, 8, o);
    HandcraftedEmbedder e;
    std::vector<MotionSequence> motions;
    std::vector<std::string> texts;
    for (const auto& it : items) {
        motions.push_back(it.motion);
        std::string t;
        for (const auto& st : it.statements)
            for (const auto& s : st) t += s + ". ";
        texts.push_back(t);
    }
    const auto r = retrieval_metrics(e.embed_texts(texts), e.embed_motions(motions), 8, 3);
    CHECK(r.r_precision[2] > 0.5);
    CHECK(e.provenance() == "handcrafted");
}

TEST_CASE("trial summaries carry a 95% interval") {
    const auto r = summarize_trials("x", {1, 2, 3, 4}, 10, "abc");
    CHECK(r.value == doctest::Approx(2.5));
    const double half = 1.96 * std::sqrt(5.0 / 3.0) / 2.0;
    CHECK(r.ci_low == doctest::Approx(2.5 - half));
    CHECK(r.ci_high == doctest::Approx(2.5 + half));
    const auto line = nlohmann::json::parse(report_jsonl({r}));
    CHECK(line["config_hash"] == "abc");
    CHECK(line["n"] == 10);
    CHECK_THROWS_AS(summarize_trials("x", {}, 0, ""), InvalidArgument);
}

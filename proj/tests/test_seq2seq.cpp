#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "mgm/errors.hpp"
#include "mgm/seq2seq.hpp"
#include "s2s_check.hpp"

using namespace mgm;

TEST_CASE("untrained model is close to uniform") {
    const auto pairs = testing::memorization_pairs(10);
    const auto vocab = testing::memorization_vocab(pairs);
    LanguageModel lm(vocab, desk_config(vocab));
    const double loss = lm.eval_loss(pairs);
    const double uniform = std::log(static_cast<double>(vocab.size()));
    CHECK(std::abs(loss - uniform) / uniform < 0.01);
    const auto probs = lm.next_token_probs(lm.encode_input(pairs[0].input), {});
    CHECK(probs.size() == static_cast<std::size_t>(vocab.size()));
    double sum = 0;
    for (double p : probs) sum += p;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("cross-entropy gradients match central differences") {
    const auto r = testing::seq2seq_gradient_check(3);
    INFO("worst " << r.worst);
    CHECK(r.checked > 500);
    CHECK(r.max_rel < 1e-3);
}

TEST_CASE("a handful of pairs can be memorized") {
    const auto pairs = testing::memorization_pairs(4);
    const auto vocab = testing::memorization_vocab(pairs);
    auto cfg = desk_config(vocab);
    cfg.width = 32;
    cfg.ffn = 64;
    cfg.enc_layers = cfg.dec_layers = 1;
    LanguageModel lm(vocab, cfg);
    const auto r = testing::memorize(lm, pairs, 400, 0.05);
    CHECK(r.loss < 0.05);
    CHECK(r.exact == 4);
}

TEST_CASE("segment indices count separators per line") {
    const int sep = 9, nl = 8;
    const std::vector<int> ids = {1, sep, 2, sep, 3, nl, 4, sep, 5, sep, sep, sep, 6};
    CHECK(segment_indices(ids, sep, {nl}, 3) == std::vector<int>{0, 0, 1, 1, 2, 2, 0, 0, 1, 1, 2, 2, 2});
    CHECK(segment_indices(ids, sep, {}, 16) == std::vector<int>{0, 0, 1, 1, 2, 2, 2, 2, 3, 3, 4, 5, 6});
}

TEST_CASE("relative position buckets") {
    CHECK(relative_position_bucket(0, true, 32, 128) == 0);
    for (int r = 1; r < 8; ++r) {
        CHECK(relative_position_bucket(-r, true, 32, 128) == r);
        CHECK(relative_position_bucket(r, true, 32, 128) == 16 + r);
        CHECK(relative_position_bucket(-r, false, 32, 128) == r);
        CHECK(relative_position_bucket(r, false, 32, 128) == 0);
    }
    int prev = 0;
    for (int r = 0; r < 400; ++r) {
        const int b = relative_position_bucket(-r, true, 32, 128);
        CHECK(b >= prev);
        CHECK(b < 16);
        prev = b;
    }
    CHECK(relative_position_bucket(-1000, true, 32, 128) == 15);
    CHECK(relative_position_bucket(1000, true, 32, 128) == 31);
    CHECK(relative_position_bucket(-1000, false, 32, 128) == 31);
}

TEST_CASE("middle truncation keeps both ends") {
    const int sep = 99;
    TokenIds ids = {1, 2, sep, 3, 4, 5, 6, 7, 8, sep, 9};
    bool cut = false;
    auto out = truncate_middle(ids, 7, sep, &cut);
    CHECK(cut);
    CHECK(out.size() == 7);
    CHECK(out.front() == 1);
    CHECK(out.back() == 9);
    CHECK(std::count(out.begin(), out.end(), sep) == 2);
    CHECK(truncate_middle(ids, 20, sep, &cut) == ids);
    CHECK_FALSE(cut);
    out = truncate_middle({1, 2, 3, 4, 5, 6}, 4, sep);
    CHECK(out == TokenIds{1, 2, 5, 6});
}

TEST_CASE("over-long inputs are truncated with a warning") {
    const auto pairs = testing::memorization_pairs(2);
    const auto vocab = testing::memorization_vocab(pairs);
    auto cfg = desk_config(vocab);
    cfg.max_input = 4;
    LanguageModel lm(vocab, cfg);
    std::vector<std::string> warnings;
    const auto ids = lm.encode_input("item 1: item 2: item 3:", &warnings);
    CHECK(ids.size() == 4);
    CHECK(warnings.size() == 1);
    PromptPair empty;
    empty.input = "item";
    CHECK_THROWS_AS(lm.encode(empty), SchemaError);
}

TEST_CASE("config validation and serialization") {
    auto c = testing::tiny_seq2seq_config();
    CHECK_NOTHROW(c.validate());
    const auto back = Seq2SeqConfig::from_json(c.to_json());
    CHECK(back.to_json() == c.to_json());
    auto bad = c;
    bad.heads = 3;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.start_id = 11;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("generation respects the token budget and sampling seed") {
    const auto pairs = testing::memorization_pairs(3);
    const auto vocab = testing::memorization_vocab(pairs);
    LanguageModel lm(vocab, desk_config(vocab));
    GenerateOptions o;
    o.max_tokens = 5;
    const auto g = lm.generate(pairs[0].input, o);
    CHECK(g.tokens.size() <= 5);
    CHECK((g.ended || g.truncated));
    o.temperature = 1.0;
    o.seed = 11;
    const auto s1 = lm.generate(pairs[0].input, o);
    const auto s2 = lm.generate(pairs[0].input, o);
    CHECK(s1.tokens == s2.tokens);
}

TEST_CASE("checkpoint round-trip keeps predictions and metadata") {
    const auto pairs = testing::memorization_pairs(3);
    const auto vocab = testing::memorization_vocab(pairs);
    auto cfg = desk_config(vocab);
    cfg.init_seed = 17;
    LanguageModel lm(vocab, cfg);
    const auto path = std::filesystem::temp_directory_path() / "mgm_test_model.mgs";
    lm.save(path, R"({"stage":"test"})");
    std::string meta;
    const auto back = LanguageModel::load(path, &meta);
    CHECK(meta.find("\"stage\"") != std::string::npos);
    CHECK(back.vocab() == lm.vocab());
    CHECK(back.eval_loss(pairs) == doctest::Approx(lm.eval_loss(pairs)).epsilon(1e-12));

    auto bytes = std::vector<char>();
    {
        std::ifstream in(path, std::ios::binary);
        bytes.assign(std::istreambuf_iterator<char>(in), {});
    }
    bytes.resize(bytes.size() / 2);
    {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    CHECK_THROWS_AS(LanguageModel::load(path), FormatError);
    std::filesystem::remove(path);
}

#include <doctest.h>

#include <filesystem>
#include <random>

#include "mgm/errors.hpp"
#include "mgm/quantizer.hpp"
#include "mgm/synth.hpp"
#include "vq_check.hpp"

using namespace mgm;

namespace {

std::vector<int> brute_force(const nn::Matrix<double>& z, const nn::Matrix<double>& book) {
    std::vector<int> ids;
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
        int best = 0;
        double best_d = 0;
        for (Eigen::Index k = 0; k < book.rows(); ++k) {
            double d = 0;
            for (Eigen::Index j = 0; j < z.cols(); ++j) d += (z(i, j) - book(k, j)) * (z(i, j) - book(k, j));
            if (k == 0 || d < best_d) {
                best = static_cast<int>(k);
                best_d = d;
            }
        }
        ids.push_back(best);
    }
    return ids;
}

}  // namespace

TEST_CASE("quantize agrees with exhaustive search") {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n(0, 1);
    std::uniform_int_distribution<int> kk(1, 64), dd(1, 8), tt(1, 50);
    for (int trial = 0; trial < 200; ++trial) {
        nn::Matrix<double> book(kk(rng), dd(rng)), z(tt(rng), book.cols());
        for (Eigen::Index i = 0; i < book.size(); ++i) book.data()[i] = n(rng);
        for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = n(rng);
        REQUIRE(quantize(z, book) == brute_force(z, book));
    }
}

TEST_CASE("ties go to the lowest index") {
    nn::Matrix<double> book(3, 1);
    book << 1.0, -1.0, 1.0;
    nn::Matrix<double> z(2, 1);
    z << 0.0, 1.0;
    CHECK(quantize(z, book) == std::vector<int>{0, 0});
}

TEST_CASE("token count is ceil(T / l)") {
    MotionQuantizer q(QuantizerConfig{});
    CHECK(q.token_count(196) == 49);
    CHECK(q.token_count(4) == 1);
    CHECK(q.token_count(5) == 2);
    CHECK_THROWS_AS(q.token_count(0), InvalidArgument);
    for (int frames : {1, 3, 4, 41, 142}) {
        FrameMatrix f = FrameMatrix::Random(frames, 8);
        const auto tokens = q.encode(MotionSequence(f, 20));
        CHECK(static_cast<int>(tokens.size()) == (frames + 3) / 4);
        for (int t : tokens) CHECK((t >= 0 && t < 64));
        CHECK(q.reconstruct(tokens, frames, 20).num_frames() == frames);
    }
}

TEST_CASE("feature width mismatch is rejected") {
    MotionQuantizer q(QuantizerConfig{});
    CHECK_THROWS_AS(q.encode(MotionSequence(FrameMatrix::Zero(8, 3), 20)), InvalidArgument);
    CHECK_THROWS_AS(q.reconstruct({0, 99}, 8, 20), InvalidToken);
}

TEST_CASE("loss terms match a direct computation") {
    nn::Matrix<double> m(2, 1), r(2, 1), z(1, 2), zq(1, 2);
    m << 1, 2;
    r << 1, 4;
    z << 0, 0;
    zq << 3, 4;
    const auto t = vq_loss_terms(m, r, z, zq, 0.25);
    CHECK(t.recon == doctest::Approx(2.0));
    CHECK(t.embed == doctest::Approx(12.5));
    CHECK(t.commit == doctest::Approx(3.125));
    CHECK(t.total == doctest::Approx(17.625));
}

TEST_CASE("analytic gradients match central differences") {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const auto r = testing::vq_gradient_check(seed);
        INFO("seed " << seed << " worst " << r.worst);
        CHECK(r.checked > 100);
        CHECK(r.max_rel < 1e-4);
    }
}

TEST_CASE("quantizer checkpoint round-trip") {
    QuantizerConfig c;
    c.init_seed = 9;
    MotionQuantizer q(c);
    const auto path = std::filesystem::temp_directory_path() / "mgm_test_quantizer.mgq";
    q.save(path);
    const auto back = MotionQuantizer::load(path);
    CHECK(back.config().to_json() == q.config().to_json());
    const MotionSequence m(FrameMatrix::Random(40, 8), 20);
    CHECK(back.encode(m) == q.encode(m));
    std::filesystem::remove(path);
}

TEST_CASE("short training lowers reconstruction error") {
    CorpusOptions o;
    std::vector<MotionSequence> data;
    for (auto& item : synth_corpus(24, 4, o)) data.push_back(item.motion);
    QuantizerConfig c;
    c.codebook_size = 16;
    MotionQuantizer q(c);
    const double before = reconstruction_mse(data, q);
    VqTrainSchedule s;
    s.steps = 150;
    s.lr = 1e-3;
    s.log_every = 50;
    const auto result = train_vqvae(data, q, s);
    CHECK(result.curve.size() == 3);
    CHECK(reconstruction_mse(data, q) < before);
    CHECK(vq_curve_csv(result.curve).rfind("step,recon,embed,commit,total\n", 0) == 0);
}

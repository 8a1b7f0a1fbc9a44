#include "mgm/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <json.hpp>

#include "mgm/errors.hpp"
#include "mgm/nn/graph.hpp"
#include "mgm/nn/optim.hpp"
#include "mgm/script.hpp"

namespace mgm {

GaussianMoments gaussian_moments(const FeatureMatrix& x) {
    if (x.rows() < 2) throw ConfigError("feature moments need at least two samples");
    GaussianMoments m;
    m.mean = x.colwise().mean().transpose();
    const Eigen::MatrixXd centered = x.rowwise() - m.mean.transpose();
    m.cov = centered.transpose() * centered / static_cast<double>(x.rows() - 1);
    if (x.rows() <= x.cols()) m.cov += 1e-6 * Eigen::MatrixXd::Identity(x.cols(), x.cols());
    return m;
}

namespace {

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& a) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
    if (es.info() != Eigen::Success) throw NumericError("fid", "eigendecomposition failed");
    const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double frechet_distance(const GaussianMoments& a, const GaussianMoments& b) {
    if (a.mean.size() != b.mean.size()) throw InvalidArgument("feature dimension mismatch in FID");
    const Eigen::MatrixXd sa = psd_sqrt(a.cov);
    const Eigen::MatrixXd inner = sa * b.cov * sa;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) throw NumericError("fid", "eigendecomposition failed");
    // Negative eigenvalues here are round-off; clip them to zero.
    const double trace_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
    const double d = (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() - 2.0 * trace_sqrt;
    if (!std::isfinite(d)) throw NumericError("fid", "non-finite distance");
    return std::max(d, 0.0);
}

double fid(const FeatureMatrix& a, const FeatureMatrix& b) {
    if (a.cols() != b.cols()) throw InvalidArgument("feature dimension mismatch in FID");
    return frechet_distance(gaussian_moments(a), gaussian_moments(b));
}

RetrievalResult retrieval_metrics(const FeatureMatrix& text, const FeatureMatrix& motion, int batch_size, int top_k) {
    if (text.rows() != motion.rows()) throw InvalidArgument("retrieval needs matched text and motion rows");
    if (text.cols() != motion.cols()) throw ConfigError("text and motion embedding dimensions differ");
    if (batch_size < 1 || top_k < 1) throw ConfigError("batch size and k must be positive");
    if (batch_size > text.rows())
        throw ConfigError("retrieval batch of " + std::to_string(batch_size) + " exceeds " +
                          std::to_string(text.rows()) + " samples");
    RetrievalResult r;
    r.r_precision.assign(static_cast<std::size_t>(top_k), 0.0);
    const Eigen::Index nb = text.rows() / batch_size;
    double dist_sum = 0;
    for (Eigen::Index b = 0; b < nb; ++b) {
        const Eigen::Index base = b * batch_size;
        for (int i = 0; i < batch_size; ++i) {
            const auto m = motion.row(base + i);
            std::vector<double> d(static_cast<std::size_t>(batch_size));
            for (int j = 0; j < batch_size; ++j) d[static_cast<std::size_t>(j)] = (text.row(base + j) - m).norm();
            const double own = d[static_cast<std::size_t>(i)];
            dist_sum += own;
            int rank = 1;
            for (int j = 0; j < batch_size; ++j)
                if (d[static_cast<std::size_t>(j)] < own || (d[static_cast<std::size_t>(j)] == own && j < i)) ++rank;
            for (int k = rank; k <= top_k; ++k) r.r_precision[static_cast<std::size_t>(k - 1)] += 1.0;
        }
    }
    const double total = static_cast<double>(nb * batch_size);
    for (double& v : r.r_precision) v /= total;
    r.mm_dist = dist_sum / total;
    r.batches = static_cast<int>(nb);
    return r;
}

double diversity(const FeatureMatrix& features, int pairs, std::uint64_t seed) {
    if (pairs < 1) throw ConfigError("diversity needs a positive pair count");
    if (features.rows() < pairs)
        throw ConfigError("diversity with " + std::to_string(pairs) + " pairs needs at least that many samples, got " +
                          std::to_string(features.rows()));
    std::mt19937_64 rng(seed);
    std::vector<int> idx(static_cast<std::size_t>(features.rows()));
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    std::vector<int> first(idx.begin(), idx.begin() + pairs);
    std::shuffle(idx.begin(), idx.end(), rng);
    std::vector<int> second(idx.begin(), idx.begin() + pairs);
    double sum = 0;
    for (int i = 0; i < pairs; ++i)
        sum += (features.row(first[static_cast<std::size_t>(i)]) - features.row(second[static_cast<std::size_t>(i)])).norm();
    return sum / pairs;
}

double mean_pair_distance(const FeatureMatrix& a, const FeatureMatrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw InvalidArgument("paired feature sets differ in shape");
    if (a.rows() == 0) throw ConfigError("no pairs to average");
    return (a - b).rowwise().norm().mean();
}

double multimodality(const std::vector<FeatureMatrix>& groups) {
    if (groups.empty()) throw ConfigError("multimodality needs at least one group");
    double total = 0;
    for (const FeatureMatrix& g : groups) {
        if (g.rows() < 2) throw ConfigError("multimodality needs at least two generations per condition");
        double s = 0;
        long n = 0;
        for (Eigen::Index i = 0; i < g.rows(); ++i)
            for (Eigen::Index j = i + 1; j < g.rows(); ++j, ++n) s += (g.row(i) - g.row(j)).norm();
        total += s / static_cast<double>(n);
    }
    return total / static_cast<double>(groups.size());
}

std::vector<std::string> metric_words(std::string_view text, bool case_sensitive) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < text.size()) {
        const unsigned char c = static_cast<unsigned char>(text[i]);
        if (std::isspace(c)) {
            ++i;
        } else if (std::isalnum(c) || c >= 0x80) {
            std::size_t j = i;
            while (j < text.size() && (std::isalnum(static_cast<unsigned char>(text[j])) ||
                                       static_cast<unsigned char>(text[j]) >= 0x80))
                ++j;
            out.emplace_back(text.substr(i, j - i));
            i = j;
        } else {
            out.emplace_back(1, text[i]);
            ++i;
        }
    }
    if (!case_sensitive)
        for (auto& w : out)
            for (char& ch : w) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    return out;
}

namespace {

using Ngrams = std::map<std::vector<std::string>, int>;

Ngrams count_ngrams(const std::vector<std::string>& words, int n) {
    Ngrams c;
    for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= words.size(); ++i)
        ++c[std::vector<std::string>(words.begin() + static_cast<std::ptrdiff_t>(i),
                                     words.begin() + static_cast<std::ptrdiff_t>(i) + n)];
    return c;
}

std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j)
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

}  // namespace

std::array<double, kMaxBleuOrder> corpus_bleu(const std::vector<std::string>& candidates,
                                               const std::vector<std::vector<std::string>>& references,
                                               const TextMetricOptions& options) {
    if (candidates.size() != references.size()) throw InvalidArgument("one reference list per candidate required");
    std::array<double, kMaxBleuOrder> matches{}, totals{};
    double cand_len = 0, ref_len = 0;
    for (std::size_t s = 0; s < candidates.size(); ++s) {
        if (references[s].empty()) throw InvalidArgument("candidate " + std::to_string(s) + " has no reference");
        const auto cand = metric_words(candidates[s], options.case_sensitive);
        std::vector<std::vector<std::string>> refs;
        for (const auto& r : references[s]) refs.push_back(metric_words(r, options.case_sensitive));
        cand_len += static_cast<double>(cand.size());
        // Closest reference length, shorter on ties.
        std::size_t best = refs[0].size();
        for (const auto& r : refs) {
            const auto diff = [&](std::size_t len) { return std::abs(static_cast<long>(len) - static_cast<long>(cand.size())); };
            if (diff(r.size()) < diff(best) || (diff(r.size()) == diff(best) && r.size() < best)) best = r.size();
        }
        ref_len += static_cast<double>(best);
        for (int n = 1; n <= kMaxBleuOrder; ++n) {
            const Ngrams cc = count_ngrams(cand, n);
            Ngrams max_ref;
            for (const auto& r : refs)
                for (const auto& [g, k] : count_ngrams(r, n)) max_ref[g] = std::max(max_ref[g], k);
            for (const auto& [g, k] : cc) {
                auto it = max_ref.find(g);
                if (it != max_ref.end()) matches[static_cast<std::size_t>(n - 1)] += std::min(k, it->second);
                totals[static_cast<std::size_t>(n - 1)] += k;
            }
        }
    }
    std::array<double, kMaxBleuOrder> bleu{};
    if (cand_len == 0) return bleu;
    const double bp = cand_len > ref_len ? 1.0 : std::exp(1.0 - ref_len / cand_len);
    double log_sum = 0;
    bool zero = false;
    for (int n = 1; n <= kMaxBleuOrder; ++n) {
        double m = matches[static_cast<std::size_t>(n - 1)], t = totals[static_cast<std::size_t>(n - 1)];
        if (n >= 2 && m == 0) {
            m += 1;
            t += 1;
        }
        if (m == 0) zero = true;
        if (!zero) log_sum += std::log(m / t);
        bleu[static_cast<std::size_t>(n - 1)] = zero ? 0.0 : 100.0 * bp * std::exp(log_sum / n);
    }
    return bleu;
}

double rouge_l(std::string_view candidate, const std::vector<std::string>& references, const TextMetricOptions& options) {
    const auto cand = metric_words(candidate, options.case_sensitive);
    double best = 0;
    for (const auto& r : references) {
        const auto ref = metric_words(r, options.case_sensitive);
        if (cand.empty() || ref.empty()) continue;
        const double lcs = static_cast<double>(lcs_length(cand, ref));
        if (lcs == 0) continue;
        const double p = lcs / static_cast<double>(cand.size()), rc = lcs / static_cast<double>(ref.size());
        best = std::max(best, 2 * p * rc / (p + rc));
    }
    return 100.0 * best;
}

TextScores text_metrics(std::string_view candidate, const std::vector<std::string>& references,
                        const TextMetricOptions& options) {
    TextScores s;
    s.bleu = corpus_bleu({std::string(candidate)}, {references}, options);
    s.rouge_l = rouge_l(candidate, references, options);
    return s;
}

SnippetEvaluation snippet_level_eval(std::string_view predicted, std::string_view gold, const TextMetricOptions& options) {
    SnippetEvaluation ev;
    const auto pred = parse_script(predicted);
    const auto ref = parse_script(gold);
    for (const auto& d : pred.diagnostics) ev.diagnostics.push_back({d.position, "prediction: " + d.message});
    for (const auto& d : ref.diagnostics) ev.diagnostics.push_back({d.position, "reference: " + d.message});
    const std::size_t np = pred.value.snippets.size(), ng = ref.value.snippets.size();
    if (np != ng)
        ev.diagnostics.push_back({std::min(np, ng), "prediction has " + std::to_string(np) + " snippets, reference has " +
                                                        std::to_string(ng) + "; missing snippets scored as empty"});
    const std::size_t n = std::max(np, ng);
    for (std::size_t i = 0; i < n; ++i) {
        const std::string p = i < np ? pred.value.snippets[i] : std::string();
        const std::string g = i < ng ? ref.value.snippets[i] : std::string();
        TextScores s;
        if (p.empty() && g.empty()) {
            s.bleu.fill(100.0);
            s.rouge_l = 100.0;
        } else if (!p.empty() && !g.empty()) {
            s = text_metrics(p, {g}, options);
        }
        ev.per_snippet.push_back(s);
        for (int k = 0; k < kMaxBleuOrder; ++k) ev.aggregate.bleu[static_cast<std::size_t>(k)] += s.bleu[static_cast<std::size_t>(k)];
        ev.aggregate.rouge_l += s.rouge_l;
    }
    if (n > 0) {
        for (double& v : ev.aggregate.bleu) v /= static_cast<double>(n);
        ev.aggregate.rouge_l /= static_cast<double>(n);
    }
    return ev;
}

LocalizationScore localization_score(const TimeSpan& p, const TimeSpan& g) {
    if (!(p.start_seconds < p.end_seconds) || !(g.start_seconds < g.end_seconds))
        throw InvalidArgument("localization spans must have start < end");
    LocalizationScore s;
    s.exact_match = std::abs(p.start_seconds - g.start_seconds) < 1e-9 && std::abs(p.end_seconds - g.end_seconds) < 1e-9;
    const double inter = std::max(0.0, std::min(p.end_seconds, g.end_seconds) - std::max(p.start_seconds, g.start_seconds));
    const double uni = p.length() + g.length() - inter;
    s.iou = inter / uni;
    return s;
}

LocalizationScore localization_score(std::string_view predicted, const TimeSpan& gold) {
    try {
        return localization_score(parse_time_span(predicted), gold);
    } catch (const ParseError& e) {
        LocalizationScore s;
        s.diagnostic = e.what();
        return s;
    }
}

FeatureMatrix EmbeddingOracle::embed_motions(const std::vector<MotionSequence>& motions) const {
    FeatureMatrix out(static_cast<Eigen::Index>(motions.size()), dim());
    for (std::size_t i = 0; i < motions.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = embed_motion(motions[i]).transpose();
    return out;
}

FeatureMatrix EmbeddingOracle::embed_texts(const std::vector<std::string>& texts) const {
    FeatureMatrix out(static_cast<Eigen::Index>(texts.size()), dim());
    for (std::size_t i = 0; i < texts.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = embed_text(texts[i]).transpose();
    return out;
}

namespace {

Eigen::VectorXd unit(Eigen::VectorXd v) {
    const double n = v.norm();
    if (n > 0) v /= n;
    return v;
}

std::size_t count_occurrences(std::string_view text, std::string_view needle) {
    if (needle.empty()) return 0;
    std::size_t n = 0, pos = 0;
    while ((pos = text.find(needle, pos)) != std::string_view::npos) {
        ++n;
        pos += needle.size();
    }
    return n;
}

}  // namespace

HandcraftedEmbedder::HandcraftedEmbedder(ChannelLayout layout, double threshold)
    : layout_(std::move(layout)), threshold_(threshold) {
    if (layout_.empty()) throw ConfigError("embedder needs a nonempty channel layout");
}

Eigen::VectorXd HandcraftedEmbedder::embed_motion(const MotionSequence& motion) const {
    const int c = static_cast<int>(layout_.size());
    if (motion.dim() < c)
        throw ConfigError("motion has " + std::to_string(motion.dim()) + " features, layout needs " + std::to_string(c));
    Eigen::VectorXd v = Eigen::VectorXd::Zero(2 * c);
    const auto& f = motion.frames();
    for (int ch = 0; ch < c; ++ch) {
        v(2 * ch) = (f.col(ch).array() > threshold_).cast<double>().mean();
        v(2 * ch + 1) = (f.col(ch).array() < -threshold_).cast<double>().mean();
    }
    return unit(v);
}

Eigen::VectorXd HandcraftedEmbedder::embed_text(std::string_view text) const {
    const int c = static_cast<int>(layout_.size());
    Eigen::VectorXd v = Eigen::VectorXd::Zero(2 * c);
    for (int ch = 0; ch < c; ++ch) {
        for (int dir = 0; dir < 2; ++dir) {
            const Direction d = dir == 0 ? Direction::kPositive : Direction::kNegative;
            const std::string stmt = statement_text(layout_[static_cast<std::size_t>(ch)], d);
            const std::string& cap = layout_[static_cast<std::size_t>(ch)].phrase(d).caption;
            v(2 * ch + dir) += static_cast<double>(count_occurrences(text, stmt) + count_occurrences(text, cap));
        }
    }
    return unit(v);
}

Eigen::VectorXd motion_statistics(const MotionSequence& motion) {
    const auto f = motion.frames().cast<double>();
    const Eigen::Index d = f.cols();
    Eigen::VectorXd v(3 * d);
    const Eigen::RowVectorXd mean = f.colwise().mean();
    v.segment(0, d) = mean.transpose();
    v.segment(d, d) = ((f.rowwise() - mean).array().square().colwise().mean()).sqrt().transpose();
    if (f.rows() > 1)
        v.segment(2 * d, d) = (f.bottomRows(f.rows() - 1) - f.topRows(f.rows() - 1)).cwiseAbs().colwise().mean().transpose();
    else
        v.segment(2 * d, d).setZero();
    return v;
}

ContrastiveEmbedder::ContrastiveEmbedder(int motion_dim, const Options& options) : options_(options) {
    if (options.dim < 1 || options.hash_buckets < 1 || motion_dim < 1) throw ConfigError("invalid contrastive embedder size");
    std::mt19937_64 rng(options.seed);
    std::normal_distribution<double> n(0.0, 1.0);
    const int in = 3 * motion_dim;
    motion_map_ = Eigen::MatrixXd::NullaryExpr(in, options.dim, [&]() { return n(rng) / std::sqrt(in); });
    text_map_ = Eigen::MatrixXd::NullaryExpr(options.hash_buckets, options.dim, [&]() { return n(rng); });
    motion_mean_ = Eigen::VectorXd::Zero(in);
    motion_scale_ = Eigen::VectorXd::Ones(in);
}

Eigen::VectorXd ContrastiveEmbedder::text_features(std::string_view text) const {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(options_.hash_buckets);
    for (const auto& w : metric_words(text, false)) {
        std::uint64_t h = 1469598103934665603ULL;
        for (unsigned char ch : w) h = (h ^ ch) * 1099511628211ULL;
        v(static_cast<Eigen::Index>(h % static_cast<std::uint64_t>(options_.hash_buckets))) += 1.0;
    }
    return unit(v);
}

double ContrastiveEmbedder::train(const std::vector<MotionSequence>& motions, const std::vector<std::string>& texts) {
    if (motions.size() != texts.size() || motions.size() < 2) throw ConfigError("contrastive training needs matched pairs");
    const Eigen::Index n = static_cast<Eigen::Index>(motions.size());
    Eigen::MatrixXd xm(n, motion_map_.rows()), xt(n, options_.hash_buckets);
    for (Eigen::Index i = 0; i < n; ++i) xm.row(i) = motion_statistics(motions[static_cast<std::size_t>(i)]).transpose();
    motion_mean_ = xm.colwise().mean().transpose();
    motion_scale_ = ((xm.rowwise() - motion_mean_.transpose()).array().square().colwise().mean().sqrt() + 1e-6).transpose();
    for (Eigen::Index i = 0; i < n; ++i) {
        xm.row(i) = ((xm.row(i).transpose() - motion_mean_).array() / motion_scale_.array()).transpose();
        xt.row(i) = text_features(texts[static_cast<std::size_t>(i)]).transpose();
    }
    nn::ParameterStore<double> store;
    auto& wm = store.add("motion", nn::Matrix<double>(motion_map_));
    auto& wt = store.add("text", nn::Matrix<double>(text_map_));
    nn::AdamWConfig ac;
    ac.lr = options_.lr;
    ac.clip_norm = 0;
    nn::AdamW<double> opt(store, ac);
    std::mt19937_64 rng(options_.seed + 1);
    const int b = static_cast<int>(std::min<Eigen::Index>(options_.batch_size, n));
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::vector<int> targets(static_cast<std::size_t>(b));
    std::iota(targets.begin(), targets.end(), 0);
    double last = 0;
    std::size_t cursor = order.size();
    for (int step = 0; step < options_.steps; ++step) {
        if (cursor + static_cast<std::size_t>(b) > order.size()) {
            std::shuffle(order.begin(), order.end(), rng);
            cursor = 0;
        }
        nn::Matrix<double> bm(b, xm.cols()), bt(b, xt.cols());
        for (int i = 0; i < b; ++i) {
            bm.row(i) = xm.row(order[cursor + static_cast<std::size_t>(i)]);
            bt.row(i) = xt.row(order[cursor + static_cast<std::size_t>(i)]);
        }
        cursor += static_cast<std::size_t>(b);
        nn::Graph<double> g;
        const nn::Var ones = g.constant(nn::Matrix<double>::Ones(1, options_.dim));
        const nn::Var em = g.rms_norm(g.matmul(g.constant(bm), g.param(wm)), ones);
        const nn::Var et = g.rms_norm(g.matmul(g.constant(bt), g.param(wt)), ones);
        const double s = 1.0 / (options_.temperature * options_.dim);
        const nn::Var l1 = g.cross_entropy_sum(g.scale(g.matmul_nt(em, et), s), targets);
        const nn::Var l2 = g.cross_entropy_sum(g.scale(g.matmul_nt(et, em), s), targets);
        const nn::Var loss = g.scale(g.add(l1, l2), 0.5 / b);
        last = g.scalar(loss);
        g.backward(loss);
        opt.step();
    }
    motion_map_ = wm.value;
    text_map_ = wt.value;
    return last;
}

Eigen::VectorXd ContrastiveEmbedder::embed_motion(const MotionSequence& motion) const {
    const Eigen::VectorXd x = (motion_statistics(motion) - motion_mean_).array() / motion_scale_.array();
    if (x.size() != motion_map_.rows()) throw ConfigError("motion feature dimension does not match the embedder");
    return unit(motion_map_.transpose() * x);
}

Eigen::VectorXd ContrastiveEmbedder::embed_text(std::string_view text) const {
    return unit(text_map_.transpose() * text_features(text));
}

MetricRow summarize_trials(const std::string& metric, const std::vector<double>& values, long n,
                           const std::string& config_hash) {
    if (values.empty()) throw InvalidArgument("no trial values for '" + metric + "'");
    MetricRow r;
    r.metric = metric;
    r.n = n;
    r.config_hash = config_hash;
    const double k = static_cast<double>(values.size());
    r.value = std::accumulate(values.begin(), values.end(), 0.0) / k;
    double var = 0;
    for (double v : values) var += (v - r.value) * (v - r.value);
    const double half = values.size() > 1 ? 1.96 * std::sqrt(var / (k - 1)) / std::sqrt(k) : 0.0;
    r.ci_low = r.value - half;
    r.ci_high = r.value + half;
    for (double v : {r.value, r.ci_low, r.ci_high})
        if (!std::isfinite(v)) throw NumericError("report", "non-finite value for '" + metric + "'");
    return r;
}

std::string report_jsonl(const std::vector<MetricRow>& rows) {
    std::string out;
    for (const auto& r : rows) {
        nlohmann::json j = {{"metric", r.metric}, {"value", r.value}, {"ci_low", r.ci_low},
                            {"ci_high", r.ci_high}, {"n", r.n},         {"config_hash", r.config_hash}};
        out += j.dump() + "\n";
    }
    return out;
}

}  // namespace mgm

#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "mgm/diagnostic.hpp"
#include "mgm/motion.hpp"
#include "mgm/synth.hpp"

namespace mgm {

// Rows are samples.
using FeatureMatrix = Eigen::MatrixXd;

// ---- motion quality ----

struct GaussianMoments {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;  // unbiased; ridge 1e-6 I added when n <= e
};

GaussianMoments gaussian_moments(const FeatureMatrix& features);

// ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)).
double frechet_distance(const GaussianMoments& a, const GaussianMoments& b);
double fid(const FeatureMatrix& a, const FeatureMatrix& b);

struct RetrievalResult {
    std::vector<double> r_precision;  // R@1..R@k
    double mm_dist = 0;
    int batches = 0;
};

// Motion i is matched with text i. Rows are grouped into consecutive batches
// of `batch_size`; a trailing partial batch is dropped.
RetrievalResult retrieval_metrics(const FeatureMatrix& text, const FeatureMatrix& motion, int batch_size = 32,
                                  int top_k = 3);

// Mean distance between `pairs` random pairs drawn as two independent index
// samples without replacement.
double diversity(const FeatureMatrix& features, int pairs = 300, std::uint64_t seed = 0);

// Mean row-wise distance between two aligned feature sets.
double mean_pair_distance(const FeatureMatrix& a, const FeatureMatrix& b);

// Mean pairwise distance within each group of repeated generations, averaged
// over groups.
double multimodality(const std::vector<FeatureMatrix>& groups);

// ---- text quality ----

inline constexpr int kMaxBleuOrder = 7;

struct TextScores {
    std::array<double, kMaxBleuOrder> bleu{};  // BLEU@1..7, 0-100
    double rouge_l = 0;                        // F-measure, 0-100
};

struct TextMetricOptions {
    bool case_sensitive = true;
};

// Word pieces used for n-gram statistics: letter/digit runs and single
// punctuation characters.
std::vector<std::string> metric_words(std::string_view text, bool case_sensitive = true);

// Corpus BLEU with brevity penalty; zero clipped counts for n >= 2 are
// smoothed by adding one to numerator and denominator.
std::array<double, kMaxBleuOrder> corpus_bleu(const std::vector<std::string>& candidates,
                                               const std::vector<std::vector<std::string>>& references,
                                               const TextMetricOptions& options = {});

double rouge_l(std::string_view candidate, const std::vector<std::string>& references,
               const TextMetricOptions& options = {});

TextScores text_metrics(std::string_view candidate, const std::vector<std::string>& references,
                        const TextMetricOptions& options = {});

struct SnippetEvaluation {
    std::vector<TextScores> per_snippet;
    TextScores aggregate;
    std::vector<Diagnostic> diagnostics;
};

// Splits both scripts on <SEP> and scores snippet by snippet. Two empty
// snippets agree perfectly; an empty snippet against a nonempty one scores 0.
// Extra or missing snippets are scored against empty text.
SnippetEvaluation snippet_level_eval(std::string_view predicted, std::string_view gold,
                                     const TextMetricOptions& options = {});

// ---- localization ----

struct LocalizationScore {
    int exact_match = 0;
    double iou = 0;
    std::optional<std::string> diagnostic;
};

LocalizationScore localization_score(const TimeSpan& predicted, const TimeSpan& gold);
// Unparseable predictions score 0 with a diagnostic.
LocalizationScore localization_score(std::string_view predicted, const TimeSpan& gold);

// ---- embeddings ----

class EmbeddingOracle {
public:
    virtual ~EmbeddingOracle() = default;
    virtual int dim() const = 0;
    virtual Eigen::VectorXd embed_motion(const MotionSequence& motion) const = 0;
    virtual Eigen::VectorXd embed_text(std::string_view text) const = 0;
    virtual std::string provenance() const = 0;

    FeatureMatrix embed_motions(const std::vector<MotionSequence>& motions) const;
    FeatureMatrix embed_texts(const std::vector<std::string>& texts) const;
};

// Shared 2C-dimensional space over a synthetic channel layout. Motion: per
// channel, the fraction of frames above +threshold and below -threshold.
// Text: per channel and direction, the normalized count of recognized
// statements and caption phrases.
class HandcraftedEmbedder final : public EmbeddingOracle {
public:
    explicit HandcraftedEmbedder(ChannelLayout layout = default_channel_layout(), double threshold = 0.25);
    int dim() const override { return 2 * static_cast<int>(layout_.size()); }
    Eigen::VectorXd embed_motion(const MotionSequence& motion) const override;
    Eigen::VectorXd embed_text(std::string_view text) const override;
    std::string provenance() const override { return "handcrafted"; }

private:
    ChannelLayout layout_;
    double threshold_;
};

// Per-channel mean, standard deviation and mean absolute velocity (3d values).
Eigen::VectorXd motion_statistics(const MotionSequence& motion);

// Two linear maps into a shared space trained with a symmetric InfoNCE loss on
// (text, motion) pairs. Motion input: motion_statistics; text input: hashed
// bag of words.
class ContrastiveEmbedder final : public EmbeddingOracle {
public:
    struct Options {
        int dim = 16;
        int hash_buckets = 256;
        int steps = 400;
        int batch_size = 32;
        double lr = 1e-2;
        double temperature = 0.1;
        std::uint64_t seed = 0;
    };

    ContrastiveEmbedder(int motion_dim, const Options& options);
    // Returns the final training loss.
    double train(const std::vector<MotionSequence>& motions, const std::vector<std::string>& texts);

    int dim() const override { return options_.dim; }
    Eigen::VectorXd embed_motion(const MotionSequence& motion) const override;
    Eigen::VectorXd embed_text(std::string_view text) const override;
    std::string provenance() const override { return "trained-contrastive"; }

private:
    Eigen::VectorXd text_features(std::string_view text) const;

    Options options_;
    Eigen::MatrixXd motion_map_;  // (3d) x dim
    Eigen::MatrixXd text_map_;    // buckets x dim
    Eigen::VectorXd motion_mean_, motion_scale_;
};

// ---- reports ----

struct MetricRow {
    std::string metric;
    double value = 0;
    double ci_low = 0;
    double ci_high = 0;
    long n = 0;
    std::string config_hash;
};

// Mean with a 95% interval (1.96 standard errors) over repeated trials.
MetricRow summarize_trials(const std::string& metric, const std::vector<double>& values, long n,
                           const std::string& config_hash);

std::string report_jsonl(const std::vector<MetricRow>& rows);

}  // namespace mgm

#include "mgm/quantizer.hpp"

#include <cmath>
#include <iostream>
#include <limits>
#include <random>
#include <sstream>

#include <json.hpp>

#include "mgm/errors.hpp"
#include "mgm/nn/checkpoint.hpp"
#include "mgm/nn/optim.hpp"

namespace mgm {

using nlohmann::json;
using nn::Graph;
using nn::Matrix;
using nn::Var;

std::string QuantizerConfig::to_json() const {
    return json{{"input_dim", input_dim}, {"width", width},         {"latent_dim", latent_dim},
                {"codebook_size", codebook_size}, {"down_rate", down_rate}, {"beta", beta},
                {"init_seed", init_seed}}
        .dump();
}

QuantizerConfig QuantizerConfig::from_json(const std::string& text) {
    const json j = json::parse(text);
    QuantizerConfig c;
    c.input_dim = j.at("input_dim");
    c.width = j.at("width");
    c.latent_dim = j.at("latent_dim");
    c.codebook_size = j.at("codebook_size");
    c.down_rate = j.at("down_rate");
    c.beta = j.at("beta");
    c.init_seed = j.value("init_seed", std::uint64_t{1});
    return c;
}

template <typename T>
std::vector<int> quantize(const Matrix<T>& latents, const Matrix<T>& codebook) {
    if (latents.cols() != codebook.cols())
        throw InvalidArgument("latent dim " + std::to_string(latents.cols()) + " does not match codebook dim " +
                              std::to_string(codebook.cols()));
    if (codebook.rows() < 1) throw InvalidArgument("empty codebook");
    std::vector<int> ids(static_cast<std::size_t>(latents.rows()));
    for (Eigen::Index i = 0; i < latents.rows(); ++i) {
        int best = 0;
        T best_d = std::numeric_limits<T>::infinity();
        for (Eigen::Index k = 0; k < codebook.rows(); ++k) {
            const T d = (latents.row(i) - codebook.row(k)).squaredNorm();
            if (d < best_d) {
                best_d = d;
                best = static_cast<int>(k);
            }
        }
        ids[static_cast<std::size_t>(i)] = best;
    }
    return ids;
}

template <typename T>
VqLossTerms vq_loss_terms(const Matrix<T>& motion, const Matrix<T>& recon, const Matrix<T>& latents,
                          const Matrix<T>& quantized, double beta) {
    auto mse = [](const Matrix<T>& a, const Matrix<T>& b) {
        return static_cast<double>((a - b).squaredNorm()) / static_cast<double>(a.size());
    };
    VqLossTerms t;
    t.recon = mse(motion, recon);
    t.embed = mse(latents, quantized);
    t.commit = beta * mse(latents, quantized);
    t.total = t.recon + t.embed + t.commit;
    return t;
}

namespace {

int log2_exact(int v) {
    int s = 0;
    while ((1 << s) < v) ++s;
    if ((1 << s) != v) throw InvalidArgument("down_rate must be a power of two");
    return s;
}

template <typename T>
void check_finite(const Matrix<T>& m, const char* stage) {
    if (!m.allFinite()) throw NumericError(stage, "matrix of shape " + std::to_string(m.rows()) + "x" +
                                                      std::to_string(m.cols()));
}

}  // namespace

template <typename T>
VqVae<T>::VqVae(const QuantizerConfig& config) : config_(config) {
    if (config.input_dim < 1 || config.width < 1 || config.latent_dim < 1 || config.codebook_size < 1)
        throw InvalidArgument("quantizer dimensions must be positive");
    if (config.beta < 0) throw InvalidArgument("commitment weight must be non-negative");
    stages_ = log2_exact(config.down_rate);
    std::uint64_t seed = config.init_seed;
    const int w = config.width;
    enc_.push_back(add_conv("enc.in", config.input_dim, w, 3, 1, 1, seed));
    for (int s = 0; s < stages_; ++s) {
        enc_.push_back(add_conv("enc.down" + std::to_string(s), w, w, 4, 2, 1, seed));
        enc_.push_back(add_conv("enc.res" + std::to_string(s), w, w, 3, 1, 1, seed));
    }
    enc_.push_back(add_conv("enc.out", w, config.latent_dim, 3, 1, 1, seed));

    dec_.push_back(add_conv("dec.in", config.latent_dim, w, 3, 1, 1, seed));
    for (int s = 0; s < stages_; ++s) {
        dec_.push_back(add_conv("dec.up" + std::to_string(s), w, w, 3, 1, 1, seed));
        dec_.push_back(add_conv("dec.res" + std::to_string(s), w, w, 3, 1, 1, seed));
    }
    dec_.push_back(add_conv("dec.out", w, config.input_dim, 3, 1, 1, seed));

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0 / config.codebook_size, 1.0 / config.codebook_size);
    Matrix<T> book(config.codebook_size, config.latent_dim);
    for (Eigen::Index i = 0; i < book.size(); ++i) book.data()[i] = static_cast<T>(u(rng));
    codebook_ = &params_.add("codebook", std::move(book));
}

template <typename T>
typename VqVae<T>::Conv VqVae<T>::add_conv(const std::string& name, int in, int out, int kernel, int stride,
                                           int pad, std::uint64_t& seed) {
    std::mt19937_64 rng(seed++);
    std::normal_distribution<double> n(0.0, std::sqrt(2.0 / (kernel * in)));
    Matrix<T> w(kernel * in, out);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<T>(n(rng));
    auto& wp = params_.add(name + ".weight", std::move(w));
    auto& bp = params_.add(name + ".bias", Matrix<T>::Zero(1, out));
    return {&wp, &bp, kernel, stride, pad};
}

template <typename T>
Var VqVae<T>::apply(Graph<T>& g, const Conv& c, Var x) {
    return g.add_row(g.matmul(g.unfold(x, c.kernel, c.stride, c.pad), g.param(*c.weight)), g.param(*c.bias));
}

template <typename T>
Matrix<T> VqVae<T>::pad_frames(const Matrix<T>& frames) const {
    const Eigen::Index len = frames.rows();
    const Eigen::Index l = config_.down_rate;
    const Eigen::Index padded = (len + l - 1) / l * l;
    Matrix<T> out(padded, frames.cols());
    out.topRows(len) = frames;
    for (Eigen::Index r = len; r < padded; ++r) out.row(r) = frames.row(len - 1);
    return out;
}

template <typename T>
Var VqVae<T>::encode(Graph<T>& g, Var x) {
    std::size_t i = 0;
    Var h = g.relu(apply(g, enc_[i++], x));
    for (int s = 0; s < stages_; ++s) {
        h = g.relu(apply(g, enc_[i++], h));
        h = g.add(h, g.relu(apply(g, enc_[i++], h)));
    }
    return apply(g, enc_[i], h);
}

template <typename T>
Var VqVae<T>::decode(Graph<T>& g, Var z) {
    std::size_t i = 0;
    Var h = g.relu(apply(g, dec_[i++], z));
    for (int s = 0; s < stages_; ++s) {
        h = g.relu(apply(g, dec_[i++], g.repeat_rows(h, 2)));
        h = g.add(h, g.relu(apply(g, dec_[i++], h)));
    }
    return apply(g, dec_[i], h);
}

template <typename T>
Matrix<T> VqVae<T>::encode_latents(const Matrix<T>& frames) {
    if (frames.cols() != config_.input_dim)
        throw InvalidArgument("motion has " + std::to_string(frames.cols()) + " features, quantizer expects " +
                              std::to_string(config_.input_dim));
    Graph<T> g(false);
    Matrix<T> z = g.value(encode(g, g.constant(pad_frames(frames))));
    check_finite(z, "encoder");
    return z;
}

template <typename T>
Matrix<T> VqVae<T>::decode_latents(const Matrix<T>& quantized) {
    Graph<T> g(false);
    Matrix<T> m = g.value(decode(g, g.constant(quantized)));
    check_finite(m, "decoder");
    return m;
}

template <typename T>
Var VqVae<T>::loss(Graph<T>& g, const Matrix<T>& frames, VqLossTerms& terms, std::vector<int>* ids_out,
                   Matrix<T>* latents_out) {
    const Eigen::Index len = frames.rows();
    Var x = g.constant(pad_frames(frames));
    Var z = encode(g, x);
    check_finite(g.value(z), "encoder");
    const std::vector<int> ids = quantize(g.value(z), codebook_->value);
    Var zq = g.gather_rows(g.param(*codebook_), ids);
    Var recon = g.rows(decode(g, g.straight_through(z, zq)), 0, len);
    check_finite(g.value(recon), "decoder");
    Var l_recon = g.mse(recon, g.constant(frames));
    Var l_embed = g.mse(g.detach(z), zq);
    Var l_commit = g.scale(g.mse(z, g.detach(zq)), static_cast<T>(config_.beta));
    Var total = g.add(g.add(l_recon, l_embed), l_commit);
    terms.recon = static_cast<double>(g.scalar(l_recon));
    terms.embed = static_cast<double>(g.scalar(l_embed));
    terms.commit = static_cast<double>(g.scalar(l_commit));
    terms.total = static_cast<double>(g.scalar(total));
    if (!std::isfinite(terms.total)) throw NumericError("loss", "total is not finite");
    if (ids_out) *ids_out = ids;
    if (latents_out) *latents_out = g.value(z);
    return total;
}

template std::vector<int> quantize<float>(const Matrix<float>&, const Matrix<float>&);
template std::vector<int> quantize<double>(const Matrix<double>&, const Matrix<double>&);
template VqLossTerms vq_loss_terms<float>(const Matrix<float>&, const Matrix<float>&, const Matrix<float>&,
                                          const Matrix<float>&, double);
template VqLossTerms vq_loss_terms<double>(const Matrix<double>&, const Matrix<double>&, const Matrix<double>&,
                                           const Matrix<double>&, double);
template class VqVae<float>;
template class VqVae<double>;

// ---------------------------------------------------------------------------

int MotionQuantizer::token_count(int num_frames) const {
    if (num_frames < 1) throw InvalidArgument("empty motion");
    const int l = config().down_rate;
    return (num_frames + l - 1) / l;
}

MotionTokens MotionQuantizer::encode(const MotionSequence& motion) const {
    const Matrix<float> z = model_.encode_latents(motion.frames());
    return quantize(z, model_.codebook_matrix());
}

MotionSequence MotionQuantizer::reconstruct(const MotionTokens& tokens, int num_frames, int fps) const {
    if (tokens.empty()) throw InvalidArgument("cannot reconstruct from zero tokens");
    if (num_frames < 1) throw InvalidArgument("frame count must be positive");
    const auto& book = model_.codebook_matrix();
    Matrix<float> zq(static_cast<Eigen::Index>(tokens.size()), book.cols());
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i] < 0 || tokens[i] >= book.rows())
            throw InvalidToken("motion token " + std::to_string(tokens[i]) + " outside codebook of size " +
                               std::to_string(book.rows()));
        zq.row(static_cast<Eigen::Index>(i)) = book.row(tokens[i]);
    }
    const Matrix<float> decoded = model_.decode_latents(zq);
    FrameMatrix out(num_frames, decoded.cols());
    const Eigen::Index keep = std::min<Eigen::Index>(num_frames, decoded.rows());
    out.topRows(keep) = decoded.topRows(keep);
    for (Eigen::Index r = keep; r < num_frames; ++r) out.row(r) = decoded.row(decoded.rows() - 1);
    return MotionSequence(std::move(out), fps);
}

void MotionQuantizer::save(const std::filesystem::path& path) const {
    write_file_bytes(path, nn::encode_checkpoint("MGQ1", config().to_json(), model_.params()));
}

MotionQuantizer MotionQuantizer::load(const std::filesystem::path& path) {
    const auto contents = nn::decode_checkpoint("MGQ1", read_file_bytes(path));
    MotionQuantizer q(QuantizerConfig::from_json(contents.config));
    nn::load_into(contents, q.model_.params());
    return q;
}

// ---------------------------------------------------------------------------

VqTrainResult train_vqvae(const std::vector<MotionSequence>& dataset, MotionQuantizer& quantizer,
                          const VqTrainSchedule& schedule, const std::function<void(const VqLogRow&)>& on_log) {
    if (dataset.empty()) throw InvalidArgument("VQ-VAE training needs a nonempty dataset");
    VqVae<float>& model = quantizer.model();
    const QuantizerConfig& cfg = model.config();
    VqTrainResult result;
    if (cfg.beta == 0) {
        result.warnings.push_back("commitment weight beta is 0; commitment term disabled");
        std::cerr << "warning: " << result.warnings.back() << '\n';
    }
    const int l = cfg.down_rate;
    const int window = std::max(l, schedule.window_frames / l * l);

    std::mt19937_64 rng(schedule.seed);
    nn::AdamW<float> opt(model.params(), {.lr = schedule.lr, .clip_norm = 0.0});
    std::vector<long> last_used(static_cast<std::size_t>(cfg.codebook_size), 0);

    auto sample_clip = [&]() {
        const auto& m = dataset[std::uniform_int_distribution<std::size_t>(0, dataset.size() - 1)(rng)];
        const int len = m.num_frames();
        if (len <= window) return Matrix<float>(m.frames());
        const int start = std::uniform_int_distribution<int>(0, len - window)(rng);
        return Matrix<float>(m.frames().middleRows(start, window));
    };

    // Data-dependent codebook initialisation from encoder outputs.
    {
        std::vector<Matrix<float>> pool;
        long rows = 0;
        while (rows < cfg.codebook_size || pool.size() < static_cast<std::size_t>(schedule.batch_size)) {
            pool.push_back(model.encode_latents(sample_clip()));
            rows += pool.back().rows();
            if (pool.size() > 4096) break;
        }
        auto& book = model.codebook().value;
        std::normal_distribution<float> jitter(0.0f, 1e-3f);
        for (int k = 0; k < cfg.codebook_size; ++k) {
            const auto& src = pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
            book.row(k) = src.row(std::uniform_int_distribution<Eigen::Index>(0, src.rows() - 1)(rng));
            for (int c = 0; c < book.cols(); ++c) book(k, c) += jitter(rng);
        }
    }

    VqLossTerms acc;
    int acc_n = 0;
    for (long step = 1; step <= schedule.steps; ++step) {
        if (schedule.warmup_steps > 0 && schedule.warmup_lr > 0)
            opt.set_lr(step <= schedule.warmup_steps ? schedule.warmup_lr : schedule.lr);
        std::vector<Matrix<float>> batch_latents;
        for (int b = 0; b < schedule.batch_size; ++b) {
            Graph<float> g;
            VqLossTerms terms;
            std::vector<int> ids;
            Matrix<float> z;
            Var total;
            try {
                total = model.loss(g, sample_clip(), terms, &ids, &z);
            } catch (const NumericError& e) {
                throw TrainingError(step, e.what());
            }
            g.backward(total);
            for (int id : ids) last_used[static_cast<std::size_t>(id)] = step;
            batch_latents.push_back(std::move(z));
            acc.recon += terms.recon;
            acc.embed += terms.embed;
            acc.commit += terms.commit;
            acc.total += terms.total;
            ++acc_n;
        }
        opt.step(1.0 / schedule.batch_size);
        for (const auto& p : model.params())
            if (!p.value.allFinite()) throw TrainingError(step, "parameter '" + p.name + "' became non-finite");

        if (schedule.dead_code_steps > 0) {
            auto& book = model.codebook().value;
            for (int k = 0; k < cfg.codebook_size; ++k) {
                if (step - last_used[static_cast<std::size_t>(k)] < schedule.dead_code_steps) continue;
                const auto& src = batch_latents[std::uniform_int_distribution<std::size_t>(0, batch_latents.size() - 1)(rng)];
                book.row(k) = src.row(std::uniform_int_distribution<Eigen::Index>(0, src.rows() - 1)(rng));
                last_used[static_cast<std::size_t>(k)] = step;
                ++result.codes_reset;
            }
        }

        if (step % schedule.log_every == 0 || step == schedule.steps) {
            VqLogRow row{step, {acc.recon / acc_n, acc.embed / acc_n, acc.commit / acc_n, acc.total / acc_n}};
            result.curve.push_back(row);
            if (on_log) on_log(row);
            acc = {};
            acc_n = 0;
        }
    }
    return result;
}

std::string vq_curve_csv(const std::vector<VqLogRow>& curve) {
    std::ostringstream out;
    out << "step,recon,embed,commit,total\n";
    out.precision(9);
    for (const auto& r : curve)
        out << r.step << ',' << r.terms.recon << ',' << r.terms.embed << ',' << r.terms.commit << ','
            << r.terms.total << '\n';
    return out.str();
}

double reconstruction_mse(const std::vector<MotionSequence>& dataset, const MotionQuantizer& quantizer) {
    double sq = 0;
    double n = 0;
    for (const auto& m : dataset) {
        const MotionSequence r = quantizer.reconstruct(quantizer.encode(m), m.num_frames(), m.fps());
        sq += static_cast<double>((r.frames() - m.frames()).squaredNorm());
        n += static_cast<double>(m.frames().size());
    }
    return sq / n;
}

double dataset_variance(const std::vector<MotionSequence>& dataset) {
    if (dataset.empty()) throw InvalidArgument("empty dataset");
    const Eigen::Index d = dataset.front().dim();
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(d), sq = Eigen::VectorXd::Zero(d);
    double n = 0;
    for (const auto& m : dataset) {
        const Eigen::MatrixXd f = m.frames().cast<double>();
        sum += f.colwise().sum().transpose();
        sq += f.array().square().matrix().colwise().sum().transpose();
        n += static_cast<double>(f.rows());
    }
    const Eigen::VectorXd mean = sum / n;
    return ((sq / n).array() - mean.array().square()).mean();
}

}  // namespace mgm

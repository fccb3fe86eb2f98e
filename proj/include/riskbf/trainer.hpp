#pragma once

// Stochastic subgradient training of the unfolded policy jointly with the
// per-user CVaR thresholds t:
//   theta <- theta - eta_theta * grad_theta mean_batch sum_i (gamma_i/alpha_i)(t_i - r_i)_+
//   t_i   <- t_i + eta_t (gamma_i/alpha_i)(alpha_i - mean_batch 1{t_i > r_i})

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "riskbf/argnn.hpp"
#include "riskbf/channel.hpp"
#include "riskbf/io.hpp"
#include "riskbf/metrics.hpp"
#include "riskbf/numerics/hash.hpp"
#include "riskbf/numerics/rng.hpp"
#include "riskbf/precoding.hpp"

namespace riskbf {

enum class Optimizer { sgd, adam };

inline Optimizer parse_optimizer(const std::string& s) {
    if (s == "sgd") return Optimizer::sgd;
    if (s == "adam") return Optimizer::adam;
    throw std::invalid_argument("unknown optimizer: " + s);
}

inline const char* to_string(Optimizer o) { return o == Optimizer::sgd ? "sgd" : "adam"; }

struct TrainConfig {
    double eta_theta = 1e-3;
    double eta_t = 1e-5;
    double decay_theta = 0.794;
    double decay_t = 0.912;
    int warmup_epochs = 5;
    int epochs = 40;
    int batch_size = 64;
    std::uint64_t seed = 1;
    double clip_norm = 10.0;   // <= 0 disables clipping
    double t0 = 0.0;
    int micro_batch = 16;      // samples per tape; fixes the reduction order
    int threads = 1;
    RateScaling rate_scaling = RateScaling::normalized;
    InitPolicy init_policy = InitPolicy::uniform;
    Optimizer optimizer = Optimizer::sgd;  // adam: adaptive theta step, t step unchanged
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;

    void validate() const {
        if (!(eta_theta >= 0.0 && eta_t >= 0.0)) throw std::invalid_argument("TrainConfig: learning rates must be >= 0");
        if (batch_size < 1 || micro_batch < 1 || epochs < 0 || warmup_epochs < 0 || threads < 1)
            throw std::invalid_argument("TrainConfig: invalid batch/epoch/thread settings");
    }

    static TrainConfig from_kv(const KeyValues& kv) {
        TrainConfig c;
        c.eta_theta = kv.get_double("eta_theta", c.eta_theta);
        c.eta_t = kv.get_double("eta_t", c.eta_t);
        c.decay_theta = kv.get_double("decay_theta", c.decay_theta);
        c.decay_t = kv.get_double("decay_t", c.decay_t);
        c.warmup_epochs = static_cast<int>(kv.get_int("warmup_epochs", c.warmup_epochs));
        c.epochs = static_cast<int>(kv.get_int("epochs", c.epochs));
        c.batch_size = static_cast<int>(kv.get_int("batch_size", c.batch_size));
        c.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<long long>(c.seed)));
        c.clip_norm = kv.get_double("clip_norm", c.clip_norm);
        c.t0 = kv.get_double("t0", c.t0);
        c.micro_batch = static_cast<int>(kv.get_int("micro_batch", c.micro_batch));
        c.threads = static_cast<int>(kv.get_int("threads", c.threads));
        c.rate_scaling = parse_rate_scaling(kv.get_string("rate_scaling", to_string(c.rate_scaling)));
        c.init_policy = parse_init_policy(kv.get_string("init_policy", to_string(c.init_policy)));
        c.optimizer = parse_optimizer(kv.get_string("optimizer", to_string(c.optimizer)));
        c.adam_beta1 = kv.get_double("adam_beta1", c.adam_beta1);
        c.adam_beta2 = kv.get_double("adam_beta2", c.adam_beta2);
        c.adam_eps = kv.get_double("adam_eps", c.adam_eps);
        c.validate();
        return c;
    }

    /// Everything that affects the trajectory (threads excluded).
    std::string to_text() const {
        std::ostringstream os;
        os << "eta_theta=" << format_double(eta_theta) << "\neta_t=" << format_double(eta_t)
           << "\ndecay_theta=" << format_double(decay_theta) << "\ndecay_t=" << format_double(decay_t)
           << "\nwarmup_epochs=" << warmup_epochs << "\nepochs=" << epochs << "\nbatch_size=" << batch_size
           << "\nseed=" << seed << "\nclip_norm=" << format_double(clip_norm) << "\nt0=" << format_double(t0)
           << "\nmicro_batch=" << micro_batch << "\nrate_scaling=" << to_string(rate_scaling)
           << "\ninit_policy=" << to_string(init_policy) << "\noptimizer=" << to_string(optimizer) << "\n";
        if (optimizer == Optimizer::adam)
            os << "adam_beta1=" << format_double(adam_beta1) << "\nadam_beta2=" << format_double(adam_beta2)
               << "\nadam_eps=" << format_double(adam_eps) << "\n";
        return os.str();
    }
};

struct LearningRates {
    double theta = 0.0;
    double t = 0.0;
};

/// Constant for the first `warmup_epochs` epochs, then one decay factor per epoch.
inline LearningRates lr_schedule(int epoch, const TrainConfig& c) {
    if (epoch < 0) throw std::invalid_argument("lr_schedule: negative epoch");
    if (epoch < c.warmup_epochs) return {c.eta_theta, c.eta_t};
    const int steps = epoch - c.warmup_epochs + 1;
    return {c.eta_theta * std::pow(c.decay_theta, steps), c.eta_t * std::pow(c.decay_t, steps)};
}

struct SampleLoss {
    double loss = 0.0;
    Eigen::VectorXd rates;
};

/// sum_i (gamma_i / alpha_i)(t_i - r_i)_+ for one precoder; the theta-dependent
/// part of the negated training objective.
inline SampleLoss sample_loss(const CxMatrix& V, const ProblemInstance& p, std::span<const double> t,
                              std::span<const double> gamma, std::span<const double> alpha) {
    SampleLoss out;
    out.rates = user_rates(V, p.H, p.sigma2);
    for (Eigen::Index i = 0; i < out.rates.size(); ++i) {
        const auto k = static_cast<std::size_t>(i);
        out.loss += gamma[k] / alpha[k] * std::max(t[k] - out.rates[i], 0.0);
    }
    return out;
}

/// Tape form: the hinge loss summed over every row (sample) of `rates` (B x K).
inline NodeId record_hinge_loss(Tape& tape, NodeId rates, std::span<const double> t, std::span<const double> gamma,
                                std::span<const double> alpha) {
    const auto K = static_cast<Eigen::Index>(t.size());
    ad::RowVec neg = ad::RowVec::Constant(K, -1.0), tv(K), weight(K);
    for (Eigen::Index i = 0; i < K; ++i) {
        const auto k = static_cast<std::size_t>(i);
        tv[i] = t[k];
        weight[i] = gamma[k] / alpha[k];
    }
    const NodeId gap = tape.positive_part(tape.scale_shift(rates, neg, tv));
    return tape.sum(tape.scale_shift(gap, weight, ad::RowVec::Zero(K)));
}

inline Eigen::VectorXd theta_step(const Eigen::VectorXd& theta, const Eigen::VectorXd& grad, double eta) {
    if (!grad.allFinite()) throw std::runtime_error("theta_step: non-finite gradient");
    return theta - eta * grad;
}

struct AdamMoments {
    Eigen::VectorXd m;
    Eigen::VectorXd v;
};

/// Bias-corrected Adam step; `step` counts from 1.
inline Eigen::VectorXd adam_step(const Eigen::VectorXd& theta, const Eigen::VectorXd& grad, double eta, long step,
                                 AdamMoments& mom, const TrainConfig& c) {
    if (!grad.allFinite()) throw std::runtime_error("adam_step: non-finite gradient");
    if (mom.m.size() != theta.size()) {
        mom.m = Eigen::VectorXd::Zero(theta.size());
        mom.v = Eigen::VectorXd::Zero(theta.size());
    }
    mom.m = c.adam_beta1 * mom.m + (1.0 - c.adam_beta1) * grad;
    mom.v = c.adam_beta2 * mom.v + (1.0 - c.adam_beta2) * grad.cwiseAbs2();
    const double bc1 = 1.0 - std::pow(c.adam_beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(c.adam_beta2, static_cast<double>(step));
    return theta - eta * ((mom.m / bc1).array() / ((mom.v / bc2).array().sqrt() + c.adam_eps)).matrix();
}

/// t_i += eta (gamma_i/alpha_i)(alpha_i - fraction of batch rows with t_i > r_i).
inline std::vector<double> t_step(std::span<const double> t, const Eigen::MatrixXd& rates, double eta,
                                  std::span<const double> gamma, std::span<const double> alpha) {
    std::vector<double> out(t.begin(), t.end());
    const auto n = static_cast<double>(rates.rows());
    for (std::size_t i = 0; i < out.size(); ++i) {
        double exceed = 0.0;
        for (Eigen::Index s = 0; s < rates.rows(); ++s)
            if (t[i] > rates(s, static_cast<Eigen::Index>(i))) exceed += 1.0;
        out[i] += eta * gamma[i] / alpha[i] * (alpha[i] - exceed / n);
    }
    return out;
}

struct BatchResult {
    Eigen::VectorXd grad;   // mean over the batch
    Eigen::MatrixXd rates;  // B x K, nats
    double loss = 0.0;      // mean hinge loss
};

/// Forward + backward for a batch, split into fixed micro-batches that are
/// reduced in order, so the result does not depend on `threads`.
inline BatchResult batch_gradient(const PolicyParams& params, std::span<const GraphSample> graphs,
                                  std::span<const ProblemInstance> instances, std::span<const double> t,
                                  std::span<const double> gamma, std::span<const double> alpha, int micro_batch,
                                  int threads) {
    const std::size_t B = graphs.size();
    if (B == 0 || instances.size() != B) throw std::invalid_argument("batch_gradient: empty or mismatched batch");
    const auto K = static_cast<Eigen::Index>(graphs.front().K);
    const std::size_t mb = static_cast<std::size_t>(micro_batch);
    const std::size_t chunks = (B + mb - 1) / mb;
    std::vector<Eigen::VectorXd> grads(chunks);
    std::vector<Eigen::MatrixXd> rates(chunks);
    std::vector<double> losses(chunks, 0.0);

    auto run_chunk = [&](std::size_t c) {
        const std::size_t begin = c * mb, end = std::min(B, begin + mb);
        Tape tape;
        const PolicyNodes nodes = register_params(tape, params, true);
        std::vector<const GraphSample*> ptrs;
        for (std::size_t k = begin; k < end; ++k) ptrs.push_back(&graphs[k]);
        const ForwardTrace tr = record_unfold(tape, nodes, params.arch, ptrs, instances[begin].power_mw);
        const NodeId r = record_rates(tape, tr.v.back(), instances.subspan(begin, end - begin));
        const NodeId loss = record_hinge_loss(tape, r, t, gamma, alpha);
        tape.backward(loss);
        grads[c] = collect_grads(tape, nodes, params);
        rates[c] = tape.value(r);
        losses[c] = tape.value(loss)(0, 0);
    };

    const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)), chunks);
    if (workers <= 1) {
        for (std::size_t c = 0; c < chunks; ++c) run_chunk(c);
    } else {
        std::vector<std::jthread> pool;
        std::vector<std::exception_ptr> errors(workers);
        for (std::size_t w = 0; w < workers; ++w)
            pool.emplace_back([&, w] {
                try {
                    for (std::size_t c = w; c < chunks; c += workers) run_chunk(c);
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
        pool.clear();
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
    }

    BatchResult out;
    out.grad = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(params.size()));
    out.rates.resize(static_cast<Eigen::Index>(B), K);
    Eigen::Index row = 0;
    for (std::size_t c = 0; c < chunks; ++c) {
        out.grad += grads[c];
        out.loss += losses[c];
        out.rates.middleRows(row, rates[c].rows()) = rates[c];
        row += rates[c].rows();
    }
    out.grad /= static_cast<double>(B);
    out.loss /= static_cast<double>(B);
    return out;
}

struct EpochLog {
    int epoch = 0;
    double objective = 0.0;            // risk objective over the epoch's training rates, final t
    std::vector<double> mean_rate_bits;
    std::vector<double> t;
    double eta_theta = 0.0;
    double eta_t = 0.0;
    int steps = 0;
    int clipped_steps = 0;
};

struct TrainState {
    PolicyParams params;
    std::vector<double> t;
    int next_epoch = 0;
    int steps = 0;
    AdamMoments adam;  // empty unless the adam optimizer is used

    /// Fingerprint of parameters and thresholds.
    std::uint64_t hash() const {
        Fnv1a h;
        h.update(params.hash());
        for (double x : t) h.update(x);
        return h.digest();
    }
};

struct TrainResult {
    TrainState state;
    std::vector<EpochLog> log;
};

inline std::uint64_t train_config_hash(const NetworkConfig& net, const ArchConfig& arch, const TrainConfig& tc) {
    Fnv1a h;
    h.update(net.to_text());
    h.update(arch.to_text());
    h.update(tc.to_text());
    return h.digest();
}

inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    SeededRng rng(seed, StreamPurpose::shuffle, static_cast<std::uint64_t>(epoch));
    for (std::size_t k = n; k > 1; --k) {
        const std::size_t j = static_cast<std::size_t>(rng() % k);
        std::swap(order[k - 1], order[j]);
    }
    return order;
}

inline KeyValues checkpoint_fields(const TrainState& st, const NetworkConfig& net, const ArchConfig& arch,
                                   const TrainConfig& tc) {
    KeyValues kv;
    kv.set("t", join_doubles(st.t));
    kv.set("next_epoch", std::to_string(st.next_epoch));
    kv.set("steps", std::to_string(st.steps));
    kv.set("seed", std::to_string(tc.seed));
    kv.set("config_hash", hex64(train_config_hash(net, arch, tc)));
    kv.set("state_hash", hex64(st.hash()));
    return kv;
}

inline void write_train_checkpoint(const std::string& path, const TrainState& st, const NetworkConfig& net,
                                   const ArchConfig& arch, const TrainConfig& tc) {
    std::vector<Eigen::VectorXd> blocks;
    if (st.adam.m.size() != 0) blocks = {st.adam.m, st.adam.v};
    write_checkpoint(path, st.params, checkpoint_fields(st, net, arch, tc), blocks);
}

inline TrainState read_train_checkpoint(const std::string& path) {
    KeyValues kv;
    TrainState st;
    std::vector<Eigen::VectorXd> blocks;
    st.params = read_checkpoint(path, &kv, &blocks);
    if (blocks.size() == 2) st.adam = {std::move(blocks[0]), std::move(blocks[1])};
    st.t = kv.get_doubles("t");
    st.next_epoch = static_cast<int>(kv.get_int("next_epoch"));
    st.steps = static_cast<int>(kv.get_int("steps"));
    return st;
}

struct TrainHooks {
    std::string out_dir;                               // empty: no files written
    std::function<void(const EpochLog&)> on_epoch;     // progress reporting
    std::optional<TrainState> resume;                  // continue from a checkpoint
};

inline void write_train_log_csv(const std::string& path, const std::vector<EpochLog>& log, int K) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "epoch,objective";
    for (int i = 0; i < K; ++i) out << ",mean_rate_bits_" << i + 1;
    for (int i = 0; i < K; ++i) out << ",t_" << i + 1;
    out << ",eta_theta,eta_t,steps,clipped_steps\n";
    for (const auto& e : log) {
        out << e.epoch << "," << format_double(e.objective);
        for (double r : e.mean_rate_bits) out << "," << format_double(r);
        for (double t : e.t) out << "," << format_double(t);
        out << "," << format_double(e.eta_theta) << "," << format_double(e.eta_t) << "," << e.steps << ","
            << e.clipped_steps << "\n";
    }
}

inline TrainResult train(const Dataset& data, const NetworkConfig& net, const ArchConfig& arch, const TrainConfig& tc,
                         const TrainHooks& hooks = {}) {
    net.validate();
    tc.validate();
    if (data.samples.empty()) throw std::invalid_argument("train: empty dataset");
    if (data.config.channel_hash() != net.channel_hash())
        throw std::invalid_argument("train: dataset was generated for a different cell configuration");
    if (arch.M != net.M) throw std::invalid_argument("train: architecture antenna count differs from the cell");

    TrainResult res;
    if (hooks.resume) {
        res.state = *hooks.resume;
        if (!(res.state.params.arch == arch)) throw std::invalid_argument("train: checkpoint architecture mismatch");
    } else {
        res.state.params = PolicyParams::init(arch, tc.seed);
        res.state.t.assign(static_cast<std::size_t>(net.K), tc.t0);
    }
    TrainState& st = res.state;
    const std::size_t n = data.samples.size();
    const std::size_t B = static_cast<std::size_t>(tc.batch_size);
    if (!hooks.out_dir.empty()) std::filesystem::create_directories(hooks.out_dir);

    for (int epoch = st.next_epoch; epoch < tc.epochs; ++epoch) {
        const LearningRates lr = lr_schedule(epoch, tc);
        const std::vector<std::size_t> order = epoch_order(n, tc.seed, epoch);
        EpochLog log;
        log.epoch = epoch;
        log.eta_theta = lr.theta;
        log.eta_t = lr.t;
        Eigen::MatrixXd epoch_rates(static_cast<Eigen::Index>(n), net.K);
        Eigen::Index filled = 0;
        for (std::size_t begin = 0; begin < n; begin += B) {
            const std::size_t end = std::min(n, begin + B);
            std::vector<GraphSample> graphs;
            std::vector<ProblemInstance> instances;
            for (std::size_t k = begin; k < end; ++k) {
                const ChannelRealization& real = data.samples[order[k]];
                graphs.push_back(build_graph(real, net, arch, tc.init_policy));
                instances.push_back(make_instance(real, net, tc.rate_scaling));
            }
            BatchResult br =
                batch_gradient(st.params, graphs, instances, st.t, net.gamma, net.alpha, tc.micro_batch, tc.threads);
            if (!br.rates.allFinite() || !std::isfinite(br.loss)) {
                for (Eigen::Index s = 0; s < br.rates.rows(); ++s)
                    if (!br.rates.row(s).allFinite())
                        throw std::runtime_error("train: non-finite rate for sample seed " +
                                                 std::to_string(data.samples[order[begin + static_cast<std::size_t>(s)]].seed));
                throw std::runtime_error("train: non-finite loss");
            }
            if (tc.clip_norm > 0.0) {
                const double norm = br.grad.norm();
                if (norm > tc.clip_norm) {
                    br.grad *= tc.clip_norm / norm;
                    ++log.clipped_steps;
                }
            }
            if (tc.optimizer == Optimizer::adam)
                st.params.assign(adam_step(st.params.flatten(), br.grad, lr.theta, st.steps + 1, st.adam, tc));
            else
                st.params.assign(theta_step(st.params.flatten(), br.grad, lr.theta));
            st.t = t_step(st.t, br.rates, lr.t, net.gamma, net.alpha);
            epoch_rates.middleRows(filled, br.rates.rows()) = br.rates;
            filled += br.rates.rows();
            ++log.steps;
            ++st.steps;
        }
        st.next_epoch = epoch + 1;
        log.objective = risk_objective(epoch_rates, st.t, net.gamma, net.alpha);
        for (Eigen::Index i = 0; i < net.K; ++i) log.mean_rate_bits.push_back(nats_to_bits(epoch_rates.col(i).mean()));
        log.t = st.t;
        res.log.push_back(log);
        if (!hooks.out_dir.empty()) {
            std::ostringstream name;
            name << hooks.out_dir << "/checkpoint_epoch_" << std::setw(3) << std::setfill('0') << epoch << ".ckpt";
            write_train_checkpoint(name.str(), st, net, arch, tc);
            write_train_checkpoint(hooks.out_dir + "/checkpoint.ckpt", st, net, arch, tc);
            write_train_log_csv(hooks.out_dir + "/train_log.csv", res.log, net.K);
        }
        if (hooks.on_epoch) hooks.on_epoch(log);
    }
    return res;
}

}  // namespace riskbf

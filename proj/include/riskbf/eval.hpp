#pragma once

// Evaluation of policies and baselines over a test set, rate histograms,
// Sharpe-ratio sweeps over the CVaR level, and side-by-side comparisons.
// All reported rates are in bits per channel use.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "riskbf/argnn.hpp"
#include "riskbf/channel.hpp"
#include "riskbf/metrics.hpp"
#include "riskbf/numerics/hash.hpp"
#include "riskbf/precoding.hpp"
#include "riskbf/wmmse.hpp"

namespace riskbf {

struct Histogram {
    std::vector<double> edges;    // bins + 1
    std::vector<long long> counts;
    bool density = false;

    long long total() const {
        long long s = 0;
        for (long long c : counts) s += c;
        return s;
    }
    double width() const { return edges.size() < 2 ? 0.0 : edges[1] - edges[0]; }
    /// counts / (n * width) when density is requested, else raw counts.
    std::vector<double> heights() const {
        std::vector<double> h(counts.begin(), counts.end());
        if (density && total() > 0 && width() > 0.0)
            for (double& x : h) x /= static_cast<double>(total()) * width();
        return h;
    }
    friend bool operator==(const Histogram&, const Histogram&) = default;
};

/// Equal-width bins over [lo, hi]; the right edge belongs to the last bin and
/// out-of-range samples are clamped to the end bins.
inline Histogram histogram(std::span<const double> samples, int bins, double lo, double hi, bool density = false) {
    if (bins < 1) throw std::invalid_argument("histogram: bins must be >= 1");
    if (samples.empty()) throw std::invalid_argument("histogram: empty samples");
    if (!(hi > lo)) {
        lo -= 0.5;
        hi += 0.5;
    }
    Histogram h;
    h.density = density;
    h.edges.resize(static_cast<std::size_t>(bins) + 1);
    for (int k = 0; k <= bins; ++k) h.edges[static_cast<std::size_t>(k)] = lo + (hi - lo) * k / bins;
    h.counts.assign(static_cast<std::size_t>(bins), 0);
    for (double x : samples) {
        auto k = static_cast<long long>(std::floor((x - lo) / (hi - lo) * bins));
        k = std::clamp<long long>(k, 0, bins - 1);
        ++h.counts[static_cast<std::size_t>(k)];
    }
    return h;
}

inline Histogram histogram(std::span<const double> samples, int bins = 200, bool density = false) {
    if (samples.empty()) throw std::invalid_argument("histogram: empty samples");
    const auto [mn, mx] = std::minmax_element(samples.begin(), samples.end());
    return histogram(samples, bins, *mn, *mx, density);
}

struct UserSummary {
    double mean = 0.0;
    double stddev = 0.0;
    Sharpe sharpe;
    double zero_rate_fraction = 0.0;
};

struct EvalReport {
    std::string label;
    std::uint64_t dataset_hash = 0;
    std::uint64_t config_hash = 0;
    Eigen::MatrixXd samples;            // n x K, bits
    std::vector<UserSummary> users;
    double avg_sum_rate = 0.0;          // bits
    std::vector<Histogram> histograms;  // one per user, common range
    int bins = 200;
    bool density = false;
    double zero_threshold = kDefaultZeroRateBits;

    int K() const { return static_cast<int>(samples.cols()); }
    std::vector<double> user_samples(int i) const {
        std::vector<double> out(static_cast<std::size_t>(samples.rows()));
        for (Eigen::Index s = 0; s < samples.rows(); ++s) out[static_cast<std::size_t>(s)] = samples(s, i);
        return out;
    }
};

struct ReportOptions {
    int bins = 200;
    bool density = false;
    double zero_threshold = kDefaultZeroRateBits;
};

/// Fills summaries and histograms from `samples` (n x K, bits).
inline EvalReport make_report(std::string label, std::uint64_t dataset_hash, std::uint64_t config_hash,
                              Eigen::MatrixXd samples, const ReportOptions& opts = {}) {
    if (samples.rows() < 1) throw std::invalid_argument("make_report: no samples");
    EvalReport r;
    r.label = std::move(label);
    r.dataset_hash = dataset_hash;
    r.config_hash = config_hash;
    r.samples = std::move(samples);
    r.bins = opts.bins;
    r.density = opts.density;
    r.zero_threshold = opts.zero_threshold;
    const double lo = r.samples.minCoeff();
    const double hi = r.samples.maxCoeff();
    for (int i = 0; i < r.K(); ++i) {
        const std::vector<double> x = r.user_samples(i);
        const SampleStats st = sample_stats(x);
        UserSummary u;
        u.mean = st.mean;
        u.stddev = st.stddev;
        if (x.size() >= 2) u.sharpe = sharpe_ratio(x);
        u.zero_rate_fraction = zero_rate_fraction(x, opts.zero_threshold);
        r.users.push_back(u);
        r.histograms.push_back(histogram(x, opts.bins, lo, hi, opts.density));
    }
    r.avg_sum_rate = r.samples.rowwise().sum().mean();
    return r;
}

using PrecoderFn = std::function<CxMatrix(const ChannelRealization&, const ProblemInstance&)>;

struct EvalSetup {
    NetworkConfig net;
    RateScaling rate_scaling = RateScaling::normalized;
    InitPolicy init_policy = InitPolicy::uniform;
    ReportOptions report;
};

/// Scores an arbitrary precoding rule on every sample; rates in bits.
inline EvalReport evaluate(const PrecoderFn& policy, const Dataset& test, const EvalSetup& setup, std::string label,
                           std::uint64_t config_hash = 0) {
    if (test.config.channel_hash() != setup.net.channel_hash())
        throw std::invalid_argument("evaluate: test set was generated for a different cell configuration");
    Eigen::MatrixXd samples(static_cast<Eigen::Index>(test.samples.size()), setup.net.K);
    for (std::size_t s = 0; s < test.samples.size(); ++s) {
        const ProblemInstance p = make_instance(test.samples[s], setup.net, setup.rate_scaling);
        const CxMatrix V = policy(test.samples[s], p);
        samples.row(static_cast<Eigen::Index>(s)) = user_rates(V, p.H, p.sigma2).transpose() / kLn2;
    }
    return make_report(std::move(label), test.fingerprint(), config_hash, std::move(samples), setup.report);
}

inline EvalReport evaluate_policy(const PolicyParams& params, const Dataset& test, const EvalSetup& setup,
                                  std::string label, std::uint64_t config_hash = 0) {
    if (params.arch.M != setup.net.M) throw std::invalid_argument("evaluate_policy: antenna count mismatch");
    if (test.config.channel_hash() != setup.net.channel_hash())
        throw std::invalid_argument("evaluate_policy: test set was generated for a different cell configuration");
    std::vector<GraphSample> graphs;
    graphs.reserve(test.samples.size());
    for (const auto& real : test.samples) graphs.push_back(build_graph(real, setup.net, params.arch, setup.init_policy));
    const std::vector<CxMatrix> V = policy_precoders(params, graphs, setup.net.power_mw());
    Eigen::MatrixXd samples(static_cast<Eigen::Index>(test.samples.size()), setup.net.K);
    for (std::size_t s = 0; s < test.samples.size(); ++s) {
        const ProblemInstance p = make_instance(test.samples[s], setup.net, setup.rate_scaling);
        samples.row(static_cast<Eigen::Index>(s)) = user_rates(V[s], p.H, p.sigma2).transpose() / kLn2;
    }
    return make_report(std::move(label), test.fingerprint(), config_hash, std::move(samples), setup.report);
}

inline EvalReport evaluate_wmmse(const Dataset& test, const EvalSetup& setup, int iters = 20,
                                 std::string label = "wmmse") {
    const auto gamma = setup.net.gamma;
    return evaluate([&](const ChannelRealization&, const ProblemInstance& p) { return wmmse_solve(p, gamma, iters).V; },
                    test, setup, std::move(label));
}

inline EvalReport evaluate_initial(const Dataset& test, const EvalSetup& setup, std::string label = "initial") {
    return evaluate(
        [&](const ChannelRealization&, const ProblemInstance& p) {
            return initial_precoder(setup.init_policy, p.H, p.power_mw);
        },
        test, setup, std::move(label));
}

// ---------------------------------------------------------------------------
// CSV

inline void write_report_samples_csv(const EvalReport& r, std::ostream& out) {
    out << "# method=" << r.label << "\n# dataset_hash=" << hex64(r.dataset_hash)
        << "\n# config_hash=" << hex64(r.config_hash) << "\n# bins=" << r.bins << "\n# density=" << (r.density ? 1 : 0)
        << "\n# zero_threshold_bits=" << format_double(r.zero_threshold) << "\nsample";
    for (int i = 0; i < r.K(); ++i) out << ",rate_bits_" << i + 1;
    out << "\n";
    for (Eigen::Index s = 0; s < r.samples.rows(); ++s) {
        out << s;
        for (Eigen::Index i = 0; i < r.samples.cols(); ++i) out << "," << format_double(r.samples(s, i));
        out << "\n";
    }
}

inline void write_report_summary_csv(const EvalReport& r, std::ostream& out) {
    out << "# method=" << r.label << "\n# dataset_hash=" << hex64(r.dataset_hash)
        << "\n# avg_sum_rate_bits=" << format_double(r.avg_sum_rate)
        << "\nuser,mean_bits,std_bits,sharpe,sharpe_defined,zero_rate_fraction\n";
    for (int i = 0; i < r.K(); ++i) {
        const UserSummary& u = r.users[static_cast<std::size_t>(i)];
        out << i + 1 << "," << format_double(u.mean) << "," << format_double(u.stddev) << ","
            << format_double(u.sharpe.value) << "," << (u.sharpe.defined ? 1 : 0) << ","
            << format_double(u.zero_rate_fraction) << "\n";
    }
}

inline void write_report_histogram_csv(const EvalReport& r, std::ostream& out) {
    out << "# method=" << r.label << "\n# density=" << (r.density ? 1 : 0) << "\nuser,bin,left,right,count,height\n";
    for (int i = 0; i < r.K(); ++i) {
        const Histogram& h = r.histograms[static_cast<std::size_t>(i)];
        const std::vector<double> heights = h.heights();
        for (std::size_t b = 0; b < h.counts.size(); ++b)
            out << i + 1 << "," << b << "," << format_double(h.edges[b]) << "," << format_double(h.edges[b + 1]) << ","
                << h.counts[b] << "," << format_double(heights[b]) << "\n";
    }
}

/// Writes <prefix>_samples.csv, <prefix>_summary.csv, <prefix>_histogram.csv.
inline void write_report(const EvalReport& r, const std::string& prefix) {
    auto open = [](const std::string& p) {
        std::ofstream f(p, std::ios::trunc);
        if (!f) throw std::runtime_error("cannot write " + p);
        return f;
    };
    {
        auto f = open(prefix + "_samples.csv");
        write_report_samples_csv(r, f);
    }
    {
        auto f = open(prefix + "_summary.csv");
        write_report_summary_csv(r, f);
    }
    {
        auto f = open(prefix + "_histogram.csv");
        write_report_histogram_csv(r, f);
    }
}

/// Rebuilds a report from its samples CSV; summaries are recomputed.
inline EvalReport read_report_samples_csv(std::istream& in) {
    std::string line, label;
    std::uint64_t dataset_hash = 0, config_hash = 0;
    ReportOptions opts;
    std::vector<std::vector<double>> rows;
    bool header_seen = false;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            const auto eq = line.find('=');
            if (eq == std::string::npos) continue;
            const std::string key = line.substr(2, eq - 2), val = line.substr(eq + 1);
            if (key == "method") label = val;
            else if (key == "dataset_hash") dataset_hash = std::stoull(val, nullptr, 16);
            else if (key == "config_hash") config_hash = std::stoull(val, nullptr, 16);
            else if (key == "bins") opts.bins = std::stoi(val);
            else if (key == "density") opts.density = val == "1";
            else if (key == "zero_threshold_bits") opts.zero_threshold = std::stod(val);
            continue;
        }
        if (!header_seen) {
            header_seen = true;
            continue;
        }
        std::stringstream ss(line);
        std::string cell;
        std::vector<double> row;
        std::getline(ss, cell, ',');  // sample index
        while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
        if (!rows.empty() && row.size() != rows.front().size()) throw std::runtime_error("report csv: ragged rows");
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw std::runtime_error("report csv: no samples");
    Eigen::MatrixXd samples(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
    for (std::size_t s = 0; s < rows.size(); ++s)
        for (std::size_t i = 0; i < rows[s].size(); ++i)
            samples(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(i)) = rows[s][i];
    return make_report(label, dataset_hash, config_hash, std::move(samples), opts);
}

inline EvalReport read_report(const std::string& samples_csv) {
    std::ifstream in(samples_csv);
    if (!in) throw std::runtime_error("cannot open " + samples_csv);
    return read_report_samples_csv(in);
}

// ---------------------------------------------------------------------------
// Comparison and sweeps

struct ComparisonRow {
    int user = 0;  // 1-based; 0 is the overall sum-rate row
    std::vector<double> mean, stddev, sharpe, zero_fraction;
};

struct Comparison {
    std::vector<std::string> labels;
    std::vector<double> avg_sum_rate;
    std::vector<ComparisonRow> rows;
};

/// Side by side per-user statistics; differences are taken against reports[0].
inline Comparison compare(std::span<const EvalReport> reports) {
    if (reports.empty()) throw std::invalid_argument("compare: no reports");
    for (const auto& r : reports)
        if (r.dataset_hash != reports.front().dataset_hash || r.K() != reports.front().K())
            throw std::invalid_argument("compare: reports were produced on different test sets");
    Comparison c;
    for (const auto& r : reports) {
        c.labels.push_back(r.label);
        c.avg_sum_rate.push_back(r.avg_sum_rate);
    }
    for (int i = 0; i < reports.front().K(); ++i) {
        ComparisonRow row;
        row.user = i + 1;
        for (const auto& r : reports) {
            const UserSummary& u = r.users[static_cast<std::size_t>(i)];
            row.mean.push_back(u.mean);
            row.stddev.push_back(u.stddev);
            row.sharpe.push_back(u.sharpe.value);
            row.zero_fraction.push_back(u.zero_rate_fraction);
        }
        c.rows.push_back(std::move(row));
    }
    return c;
}

inline void write_comparison_csv(const Comparison& c, std::ostream& out) {
    out << "# methods=";
    for (std::size_t k = 0; k < c.labels.size(); ++k) out << (k ? ";" : "") << c.labels[k];
    out << "\nuser,metric";
    for (const auto& l : c.labels) out << "," << l;
    for (std::size_t k = 1; k < c.labels.size(); ++k) out << ",diff_" << c.labels[k];
    out << "\n";
    auto emit = [&](const std::string& user, const char* metric, const std::vector<double>& v) {
        out << user << "," << metric;
        for (double x : v) out << "," << format_double(x);
        for (std::size_t k = 1; k < v.size(); ++k) out << "," << format_double(v[k] - v[0]);
        out << "\n";
    };
    emit("all", "avg_sum_rate_bits", c.avg_sum_rate);
    for (const auto& r : c.rows) {
        const std::string u = std::to_string(r.user);
        emit(u, "mean_bits", r.mean);
        emit(u, "std_bits", r.stddev);
        emit(u, "sharpe", r.sharpe);
        emit(u, "zero_rate_fraction", r.zero_fraction);
    }
}

struct SweepRow {
    double alpha = 0.0;
    int user = 0;  // 1-based
    double mean = 0.0;
    double stddev = 0.0;
    Sharpe sharpe;
    double zero_rate_fraction = 0.0;
};

/// `train_and_eval(alpha)` returns the report of a model trained at that level.
inline std::vector<SweepRow> alpha_sweep(const std::function<EvalReport(double)>& train_and_eval,
                                         std::span<const double> grid) {
    std::vector<SweepRow> rows;
    for (double a : grid) {
        if (!(a > 0.0 && a <= 1.0)) throw std::invalid_argument("alpha_sweep: grid values must lie in (0,1]");
        const EvalReport r = train_and_eval(a);
        for (int i = 0; i < r.K(); ++i) {
            const UserSummary& u = r.users[static_cast<std::size_t>(i)];
            rows.push_back({a, i + 1, u.mean, u.stddev, u.sharpe, u.zero_rate_fraction});
        }
    }
    return rows;
}

inline void write_sweep_csv(const std::vector<SweepRow>& rows, std::ostream& out) {
    out << "alpha,user,mean_bits,std_bits,sharpe,sharpe_defined,zero_rate_fraction\n";
    for (const auto& r : rows)
        out << format_double(r.alpha) << "," << r.user << "," << format_double(r.mean) << ","
            << format_double(r.stddev) << "," << format_double(r.sharpe.value) << "," << (r.sharpe.defined ? 1 : 0)
            << "," << format_double(r.zero_rate_fraction) << "\n";
}

}  // namespace riskbf

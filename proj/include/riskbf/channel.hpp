#pragma once

// MISO downlink cell: geometry, pathloss, Rician fading around a fixed
// line-of-sight (statistical CSI) component, and the dataset file format.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "riskbf/io.hpp"
#include "riskbf/numerics/complex.hpp"
#include "riskbf/numerics/hash.hpp"
#include "riskbf/numerics/rng.hpp"

namespace riskbf {

inline double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }

struct NetworkConfig {
    int K = 10;
    int M = 6;
    double P_BS = 5.0;                 // dBm
    std::vector<double> sigma2;        // dBm, one per user
    double C0 = -30.0;                 // dB
    double delta = 2.2;
    double beta = -3.0;                // dB
    std::vector<double> user_distances;  // meters
    std::vector<double> gamma;
    std::vector<double> alpha;

    /// Ten users; the last three are the distant ones.
    static NetworkConfig reference_default() {
        NetworkConfig c;
        c.sigma2.assign(10, -80.0);
        c.user_distances = {30, 35, 40, 45, 50, 55, 60, 80, 90, 100};
        c.gamma.assign(10, 1.0);
        c.alpha.assign(10, 1.0);
        return c;
    }

    /// Distances spread evenly between `near` and `far`.
    static NetworkConfig uniform_layout(int K, int M, double near, double far) {
        NetworkConfig c = reference_default();
        c.K = K;
        c.M = M;
        c.sigma2.assign(static_cast<std::size_t>(K), -80.0);
        c.gamma.assign(static_cast<std::size_t>(K), 1.0);
        c.alpha.assign(static_cast<std::size_t>(K), 1.0);
        c.user_distances.resize(static_cast<std::size_t>(K));
        for (int i = 0; i < K; ++i)
            c.user_distances[static_cast<std::size_t>(i)] =
                K == 1 ? near : near + (far - near) * static_cast<double>(i) / static_cast<double>(K - 1);
        return c;
    }

    double power_mw() const { return db_to_linear(P_BS); }
    double noise_mw(int i) const { return db_to_linear(sigma2.at(static_cast<std::size_t>(i))); }
    Eigen::VectorXd noise_mw() const {
        Eigen::VectorXd out(K);
        for (int i = 0; i < K; ++i) out[i] = noise_mw(i);
        return out;
    }
    double rician_linear() const { return db_to_linear(beta); }

    void validate() const {
        if (K < 1 || M < 1) throw std::invalid_argument("NetworkConfig: K and M must be >= 1");
        const auto k = static_cast<std::size_t>(K);
        if (sigma2.size() != k || user_distances.size() != k || gamma.size() != k || alpha.size() != k)
            throw std::invalid_argument("NetworkConfig: per-user arrays must have length K");
        for (std::size_t i = 0; i < k; ++i) {
            if (!(alpha[i] > 0.0 && alpha[i] <= 1.0)) throw std::invalid_argument("NetworkConfig: alpha must lie in (0,1]");
            if (!(gamma[i] > 0.0)) throw std::invalid_argument("NetworkConfig: gamma must be positive");
            if (!(user_distances[i] > 0.0)) throw std::invalid_argument("NetworkConfig: distances must be positive");
        }
    }

    /// Reads the NetworkConfig keys; scalar sigma2/gamma/alpha broadcast to K.
    static NetworkConfig from_kv(const KeyValues& kv) {
        NetworkConfig c = reference_default();
        c.K = static_cast<int>(kv.get_int("K", c.K));
        c.M = static_cast<int>(kv.get_int("M", c.M));
        c.P_BS = kv.get_double("P_BS", c.P_BS);
        c.C0 = kv.get_double("C0", c.C0);
        c.delta = kv.get_double("delta", c.delta);
        c.beta = kv.get_double("beta", c.beta);
        const auto k = static_cast<std::size_t>(c.K);
        auto per_user = [&](const char* key, std::vector<double> fallback) {
            std::vector<double> v = kv.has(key) ? kv.get_doubles(key) : std::move(fallback);
            if (v.size() == 1 && k != 1) v.assign(k, v.front());
            return v;
        };
        c.sigma2 = per_user("sigma2", {-80.0});
        c.gamma = per_user("gamma", {1.0});
        c.alpha = per_user("alpha", {1.0});
        if (kv.has("user_distances")) {
            c.user_distances = kv.get_doubles("user_distances");
        } else if (k != c.user_distances.size()) {
            throw std::invalid_argument("NetworkConfig: user_distances required when K differs from the default layout");
        }
        c.validate();
        return c;
    }

    /// Canonical key=value text; round-trips through from_kv exactly.
    std::string to_text() const {
        std::ostringstream os;
        os << "K=" << K << "\n"
           << "M=" << M << "\n"
           << "P_BS=" << format_double(P_BS) << "\n"
           << "sigma2=" << join_doubles(sigma2) << "\n"
           << "C0=" << format_double(C0) << "\n"
           << "delta=" << format_double(delta) << "\n"
           << "beta=" << format_double(beta) << "\n"
           << "user_distances=" << join_doubles(user_distances) << "\n"
           << "gamma=" << join_doubles(gamma) << "\n"
           << "alpha=" << join_doubles(alpha) << "\n";
        return os.str();
    }

    /// Fingerprint of everything that shapes the channel distribution
    /// (gamma and alpha excluded: they are objective weights, not physics).
    std::uint64_t channel_hash() const {
        Fnv1a h;
        h.update(static_cast<std::uint64_t>(K));
        h.update(static_cast<std::uint64_t>(M));
        h.update(P_BS);
        for (double s : sigma2) h.update(s);
        h.update(C0);
        h.update(delta);
        h.update(beta);
        for (double d : user_distances) h.update(d);
        return h.digest();
    }

    friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

/// Amplitude pathloss sqrt(C0_lin * d^-delta).
inline double pathloss(double d, double C0_db, double delta) {
    if (!(d > 0.0)) throw std::invalid_argument("pathloss: distance must be positive");
    return std::sqrt(db_to_linear(C0_db) * std::pow(d, -delta));
}

struct ScsiMatrix {
    CxMatrix Hbar;
};

struct ChannelRealization {
    CxMatrix H;            // M x K, column i is h_i
    std::uint64_t seed = 0;
    double norm_scale = 0.0;  // max_{m,k} |H_{m,k}|

    CxMatrix normalized() const {
        return CxMatrix(H.re / norm_scale, H.im / norm_scale);
    }

    friend bool operator==(const ChannelRealization& a, const ChannelRealization& b) {
        return a.seed == b.seed && a.norm_scale == b.norm_scale && a.H == b.H;
    }
};

/// Fills an M x K matrix with i.i.d. CN(0,1) entries.
inline CxMatrix sample_cn(Eigen::Index rows, Eigen::Index cols, SeededRng& rng) {
    CxMatrix out(rows, cols);
    const double s = std::sqrt(0.5);
    for (Eigen::Index c = 0; c < cols; ++c)
        for (Eigen::Index r = 0; r < rows; ++r) {
            out.re(r, c) = s * rng.normal();
            out.im(r, c) = s * rng.normal();
        }
    return out;
}

inline ScsiMatrix sample_scsi(const NetworkConfig& config, std::uint64_t cell_seed) {
    SeededRng rng(cell_seed, StreamPurpose::scsi, 0);
    return ScsiMatrix{sample_cn(config.M, config.K, rng)};
}

/// h_i = L_i (sqrt(b/(1+b)) hbar_i + sqrt(1/(1+b)) htilde_i).
inline ChannelRealization sample_channel(const NetworkConfig& config, const ScsiMatrix& scsi, SeededRng& rng) {
    if (scsi.Hbar.rows() != config.M || scsi.Hbar.cols() != config.K)
        throw std::invalid_argument("sample_channel: S-CSI shape does not match config");
    const double b = config.rician_linear();
    const double los = std::sqrt(b / (1.0 + b));
    const double nlos = std::sqrt(1.0 / (1.0 + b));
    CxMatrix fading = sample_cn(config.M, config.K, rng);
    ChannelRealization out;
    out.H = CxMatrix(config.M, config.K);
    for (int i = 0; i < config.K; ++i) {
        const double L = pathloss(config.user_distances[static_cast<std::size_t>(i)], config.C0, config.delta);
        out.H.re.col(i) = L * (los * scsi.Hbar.re.col(i) + nlos * fading.re.col(i));
        out.H.im.col(i) = L * (los * scsi.Hbar.im.col(i) + nlos * fading.im.col(i));
    }
    out.seed = rng.stream();
    out.norm_scale = out.H.max_abs();
    return out;
}

/// Realization number `index` of a cell; independent of any other index.
inline ChannelRealization sample_channel_at(const NetworkConfig& config, const ScsiMatrix& scsi,
                                            std::uint64_t cell_seed, std::uint64_t index) {
    SeededRng rng(cell_seed, StreamPurpose::fading, index);
    ChannelRealization out = sample_channel(config, scsi, rng);
    out.seed = index;
    return out;
}

struct Dataset {
    NetworkConfig config;
    std::uint64_t cell_seed = 0;
    std::vector<ChannelRealization> samples;

    /// Identifies the exact sample set (config, cell and per-sample seeds).
    std::uint64_t fingerprint() const {
        Fnv1a h;
        h.update(config.channel_hash());
        h.update(cell_seed);
        h.update(static_cast<std::uint64_t>(samples.size()));
        for (const auto& s : samples) h.update(s.seed);
        return h.digest();
    }
};

inline constexpr const char* kDatasetMagic = "RISKBF-DATASET";
inline constexpr int kDatasetVersion = 1;

inline Dataset make_dataset(const NetworkConfig& config, std::uint64_t cell_seed, std::size_t n,
                            std::uint64_t first_index = 0) {
    config.validate();
    Dataset ds{config, cell_seed, {}};
    const ScsiMatrix scsi = sample_scsi(config, cell_seed);
    ds.samples.reserve(n);
    for (std::size_t k = 0; k < n; ++k) ds.samples.push_back(sample_channel_at(config, scsi, cell_seed, first_index + k));
    return ds;
}

// Layout: text header lines terminated by "end_header\n", then per record
// u64 seed, f64 norm_scale, f64[M*K] Re(H) column-major, f64[M*K] Im(H).
inline void write_dataset(const Dataset& ds, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open dataset for writing: " + path);
    out << kDatasetMagic << "\n"
        << "version=" << kDatasetVersion << "\n"
        << ds.config.to_text() << "cell_seed=" << ds.cell_seed << "\n"
        << "n=" << ds.samples.size() << "\n"
        << "end_header\n";
    for (const auto& s : ds.samples) {
        binio::write_u64(out, s.seed);
        binio::write_f64(out, s.norm_scale);
        for (Eigen::Index c = 0; c < s.H.cols(); ++c)
            for (Eigen::Index r = 0; r < s.H.rows(); ++r) binio::write_f64(out, s.H.re(r, c));
        for (Eigen::Index c = 0; c < s.H.cols(); ++c)
            for (Eigen::Index r = 0; r < s.H.rows(); ++r) binio::write_f64(out, s.H.im(r, c));
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

inline void generate_dataset(const NetworkConfig& config, std::uint64_t cell_seed, std::size_t n,
                             const std::string& path, std::uint64_t first_index = 0) {
    if (n < 1) throw std::invalid_argument("generate_dataset: n must be >= 1");
    write_dataset(make_dataset(config, cell_seed, n, first_index), path);
}

/// Reads a dataset; if `expected` is given its channel parameters must match.
inline Dataset read_dataset(const std::string& path, const NetworkConfig* expected = nullptr) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open dataset: " + path);
    std::string line;
    std::getline(in, line);
    if (line != kDatasetMagic) throw std::runtime_error("not a dataset file: " + path);
    std::string header;
    while (std::getline(in, line) && line != "end_header") header += line + "\n";
    if (line != "end_header") throw std::runtime_error("truncated dataset header: " + path);
    const KeyValues kv = KeyValues::parse(header);
    if (kv.get_int("version") != kDatasetVersion) throw std::runtime_error("unsupported dataset version");
    Dataset ds;
    ds.config = NetworkConfig::from_kv(kv);
    ds.cell_seed = static_cast<std::uint64_t>(std::stoull(kv.raw("cell_seed")));
    const auto n = static_cast<std::size_t>(std::stoull(kv.raw("n")));
    if (expected && expected->channel_hash() != ds.config.channel_hash())
        throw std::runtime_error("dataset config does not match the requested config: " + path);
    const Eigen::Index M = ds.config.M, K = ds.config.K;
    ds.samples.resize(n);
    for (auto& s : ds.samples) {
        s.seed = binio::read_u64(in);
        s.norm_scale = binio::read_f64(in);
        s.H = CxMatrix(M, K);
        for (Eigen::Index c = 0; c < K; ++c)
            for (Eigen::Index r = 0; r < M; ++r) s.H.re(r, c) = binio::read_f64(in);
        for (Eigen::Index c = 0; c < K; ++c)
            for (Eigen::Index r = 0; r < M; ++r) s.H.im(r, c) = binio::read_f64(in);
    }
    return ds;
}

}  // namespace riskbf

#pragma once

// Unfolded graph-neural beamforming policy.
//
// One unfolding layer, applied to every user (node) i with neighbors N(i):
//   u_i <- phi_u(h_i, v_i, max_{j in N(i)} psi_u(v_j))
//   w_i <- phi_w(h_i, v_i, u_i, max_j psi_w(v_j))
//   v_i <- phi_v(h_i, v_i, u_i, w_i, max_j psi_v(h_j, v_j, u_j, w_j))
//   V   <- V scaled back onto the power ball if it left it
// All complex quantities are realified as [Re; Im]. Each psi/phi is a
// 3-layer ReLU FNN whose weights are shared by every node (and, by default,
// every layer), which makes the forward pass equivariant to user relabeling.
//
// On the tape, a batch of B graphs with K users is laid out as B*K rows,
// sample-major; rows [s*K, (s+1)*K) belong to sample s.

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "riskbf/channel.hpp"
#include "riskbf/io.hpp"
#include "riskbf/numerics/complex.hpp"
#include "riskbf/numerics/hash.hpp"
#include "riskbf/numerics/rng.hpp"
#include "riskbf/numerics/tape.hpp"
#include "riskbf/precoding.hpp"

namespace riskbf {

using ad::Mat;
using ad::NodeId;
using ad::Tape;

struct ArchConfig {
    int M = 6;
    int d_u = 16;
    int d_w = 16;
    int message = 64;
    int hidden = 256;
    int L = 4;
    bool per_layer = false;

    int node_feature_len() const { return 4 * M + 2 * d_u + d_w + 1; }

    void validate() const {
        if (M < 1 || d_u < 1 || d_w < 1 || message < 1 || hidden < 1 || L < 0)
            throw std::invalid_argument("ArchConfig: dimensions must be positive and L >= 0");
    }

    static ArchConfig from_kv(const KeyValues& kv, int M) {
        ArchConfig a;
        a.M = M;
        a.d_u = static_cast<int>(kv.get_int("d_u", a.d_u));
        a.d_w = static_cast<int>(kv.get_int("d_w", a.d_w));
        a.message = static_cast<int>(kv.get_int("message_width", a.message));
        a.hidden = static_cast<int>(kv.get_int("hidden_width", a.hidden));
        a.L = static_cast<int>(kv.get_int("L", a.L));
        a.per_layer = kv.get_int("per_layer_params", 0) != 0;
        a.validate();
        return a;
    }

    std::string to_text() const {
        std::ostringstream os;
        os << "M=" << M << "\nd_u=" << d_u << "\nd_w=" << d_w << "\nmessage_width=" << message
           << "\nhidden_width=" << hidden << "\nL=" << L << "\nper_layer_params=" << (per_layer ? 1 : 0) << "\n";
        return os.str();
    }

    friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

enum class Fnn : std::size_t { psi_u = 0, phi_u, psi_w, phi_w, psi_v, phi_v };
inline constexpr std::size_t kFnnCount = 6;
inline constexpr std::array<const char*, kFnnCount> kFnnNames = {"psi_u", "phi_u", "psi_w", "phi_w", "psi_v", "phi_v"};

struct FnnShape {
    int in = 0;
    int hidden = 0;
    int out = 0;
};

inline std::array<FnnShape, kFnnCount> fnn_shapes(const ArchConfig& a) {
    const int h = 2 * a.M;   // realified channel
    const int v = 2 * a.M;   // realified precoder
    const int u = 2 * a.d_u;
    const int w = a.d_w;
    const int m = a.message;
    return {{
        {v, a.hidden, m},                  // psi_u(v_j)
        {h + v + m, a.hidden, u},          // phi_u(h_i, v_i, agg)
        {v, a.hidden, m},                  // psi_w(v_j)
        {h + v + u + m, a.hidden, w},      // phi_w(h_i, v_i, u_i, agg)
        {h + v + u + w, a.hidden, m},      // psi_v(h_j, v_j, u_j, w_j)
        {h + v + u + w + m, a.hidden, v},  // phi_v(h_i, v_i, u_i, w_i, agg)
    }};
}

struct FnnParams {
    Mat W1, b1, W2, b2, W3, b3;

    std::array<Mat*, 6> blocks() { return {&W1, &b1, &W2, &b2, &W3, &b3}; }
    std::array<const Mat*, 6> blocks() const { return {&W1, &b1, &W2, &b2, &W3, &b3}; }

    std::size_t size() const {
        std::size_t n = 0;
        for (const Mat* m : blocks()) n += static_cast<std::size_t>(m->size());
        return n;
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
    static FnnParams init(const FnnShape& s, SeededRng& rng) {
        FnnParams p;
        auto fill = [&](Mat& m, Eigen::Index r, Eigen::Index c, int fan_in) {
            const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
            m.resize(r, c);
            for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = rng.uniform(-bound, bound);
        };
        fill(p.W1, s.hidden, s.in, s.in);
        fill(p.b1, 1, s.hidden, s.in);
        fill(p.W2, s.hidden, s.hidden, s.hidden);
        fill(p.b2, 1, s.hidden, s.hidden);
        fill(p.W3, s.out, s.hidden, s.hidden);
        fill(p.b3, 1, s.out, s.hidden);
        return p;
    }
};

using FnnSet = std::array<FnnParams, kFnnCount>;

struct PolicyParams {
    ArchConfig arch;
    std::vector<FnnSet> layers;  // one shared set, or L sets when arch.per_layer

    static PolicyParams init(const ArchConfig& arch, std::uint64_t seed) {
        arch.validate();
        PolicyParams p;
        p.arch = arch;
        const auto shapes = fnn_shapes(arch);
        const std::size_t sets = arch.per_layer ? static_cast<std::size_t>(std::max(arch.L, 1)) : 1;
        p.layers.resize(sets);
        for (std::size_t l = 0; l < sets; ++l)
            for (std::size_t f = 0; f < kFnnCount; ++f) {
                SeededRng rng(seed, StreamPurpose::param_init, l * kFnnCount + f);
                p.layers[l][f] = FnnParams::init(shapes[f], rng);
            }
        return p;
    }

    const FnnSet& for_layer(int l) const { return layers.size() == 1 ? layers.front() : layers.at(static_cast<std::size_t>(l)); }

    std::size_t size() const {
        std::size_t n = 0;
        for (const auto& set : layers)
            for (const auto& f : set) n += f.size();
        return n;
    }

    Eigen::VectorXd flatten() const {
        Eigen::VectorXd out(static_cast<Eigen::Index>(size()));
        Eigen::Index off = 0;
        for (const auto& set : layers)
            for (const auto& f : set)
                for (const Mat* m : f.blocks()) {
                    out.segment(off, m->size()) = Eigen::Map<const Eigen::VectorXd>(m->data(), m->size());
                    off += m->size();
                }
        return out;
    }

    void assign(const Eigen::VectorXd& flat) {
        if (flat.size() != static_cast<Eigen::Index>(size())) throw std::invalid_argument("PolicyParams: size mismatch");
        Eigen::Index off = 0;
        for (auto& set : layers)
            for (auto& f : set)
                for (Mat* m : f.blocks()) {
                    Eigen::Map<Eigen::VectorXd>(m->data(), m->size()) = flat.segment(off, m->size());
                    off += m->size();
                }
    }

    std::uint64_t hash() const {
        Fnv1a h;
        h.update(arch.to_text());
        const Eigen::VectorXd flat = flatten();
        for (Eigen::Index k = 0; k < flat.size(); ++k) h.update(flat[k]);
        return h.digest();
    }
};

// ---------------------------------------------------------------------------
// Graph data

/// Node features z_i = [v0_i, h_i, u0_i, w0_i, gamma_i] (realified) and the
/// adjacency tensor A[j, i, :] = h_j for j in N(i) = {all users but i}.
struct GraphSample {
    int K = 0;
    int M = 0;
    int d_u = 0;
    int d_w = 0;
    Mat features;                   // K x (4M + 2 d_u + d_w + 1)
    std::vector<double> adjacency;  // K * K * 2M, index (j * K + i) * 2M + c

    double A(int j, int i, int c) const {
        return adjacency[(static_cast<std::size_t>(j) * static_cast<std::size_t>(K) + static_cast<std::size_t>(i)) *
                             static_cast<std::size_t>(2 * M) +
                         static_cast<std::size_t>(c)];
    }
    auto v0() const { return features.middleCols(0, 2 * M); }
    auto h() const { return features.middleCols(2 * M, 2 * M); }
    auto u0() const { return features.middleCols(4 * M, 2 * d_u); }
    auto w0() const { return features.middleCols(4 * M + 2 * d_u, d_w); }
    auto gamma() const { return features.col(4 * M + 2 * d_u + d_w); }
};

/// Rows are users, columns [Re(x_1..x_M), Im(x_1..x_M)].
inline Mat realify_columns(const CxMatrix& X) {
    Mat out(X.cols(), 2 * X.rows());
    out.leftCols(X.rows()) = X.re.transpose();
    out.rightCols(X.rows()) = X.im.transpose();
    return out;
}

inline CxMatrix complexify_rows(const Eigen::Ref<const Mat>& rows) {
    const Eigen::Index M = rows.cols() / 2;
    return CxMatrix(rows.leftCols(M).transpose(), rows.rightCols(M).transpose());
}

inline constexpr double kFeasibilitySlack = 1e-9;

/// `H` is the (already normalized) channel the policy sees. Empty u0/w0 mean zeros.
inline GraphSample build_graph(const CxMatrix& H, std::span<const double> gamma, const CxMatrix& v0, double power_mw,
                               const ArchConfig& arch, const Mat& u0 = Mat(), const Mat& w0 = Mat()) {
    const int K = static_cast<int>(H.cols());
    const int M = static_cast<int>(H.rows());
    if (M != arch.M) throw std::invalid_argument("build_graph: antenna count does not match architecture");
    if (v0.rows() != M || v0.cols() != K) throw std::invalid_argument("build_graph: v0 shape mismatch");
    if (static_cast<int>(gamma.size()) != K) throw std::invalid_argument("build_graph: gamma length mismatch");
    if (v0.squared_frobenius() > power_mw * (1.0 + kFeasibilitySlack))
        throw std::invalid_argument("build_graph: initial precoder violates the power budget");
    GraphSample g;
    g.K = K;
    g.M = M;
    g.d_u = arch.d_u;
    g.d_w = arch.d_w;
    g.features = Mat::Zero(K, arch.node_feature_len());
    g.features.middleCols(0, 2 * M) = realify_columns(v0);
    const Mat hr = realify_columns(H);
    g.features.middleCols(2 * M, 2 * M) = hr;
    if (u0.size() != 0) {
        if (u0.rows() != K || u0.cols() != 2 * arch.d_u) throw std::invalid_argument("build_graph: u0 shape mismatch");
        g.features.middleCols(4 * M, 2 * arch.d_u) = u0;
    }
    if (w0.size() != 0) {
        if (w0.rows() != K || w0.cols() != arch.d_w) throw std::invalid_argument("build_graph: w0 shape mismatch");
        g.features.middleCols(4 * M + 2 * arch.d_u, arch.d_w) = w0;
    }
    for (int i = 0; i < K; ++i) g.features(i, 4 * M + 2 * arch.d_u + arch.d_w) = gamma[static_cast<std::size_t>(i)];
    g.adjacency.assign(static_cast<std::size_t>(K) * static_cast<std::size_t>(K) * static_cast<std::size_t>(2 * M), 0.0);
    for (int j = 0; j < K; ++j)
        for (int i = 0; i < K; ++i) {
            if (i == j) continue;
            for (int c = 0; c < 2 * M; ++c)
                g.adjacency[(static_cast<std::size_t>(j) * static_cast<std::size_t>(K) + static_cast<std::size_t>(i)) *
                                static_cast<std::size_t>(2 * M) +
                            static_cast<std::size_t>(c)] = hr(j, c);
        }
    return g;
}

/// Graph for a stored realization: normalized channel, configured initial precoder.
inline GraphSample build_graph(const ChannelRealization& real, const NetworkConfig& config, const ArchConfig& arch,
                               InitPolicy init = InitPolicy::uniform) {
    const CxMatrix H = real.normalized();
    return build_graph(H, config.gamma, initial_precoder(init, H, config.power_mw()), config.power_mw(), arch);
}

/// Neighbor rows for each row of a sample-major batch. The graph is fully
/// connected without self loops, so N(i) is every other user of the sample.
struct NeighborSets {
    std::size_t group = 0;
    std::vector<std::vector<std::size_t>> rows;
    bool any_empty = false;
};

inline NeighborSets neighbor_sets(std::span<const GraphSample* const> graphs) {
    NeighborSets nb;
    if (graphs.empty()) return nb;
    const int K = graphs.front()->K;
    nb.group = static_cast<std::size_t>(K);
    for (std::size_t s = 0; s < graphs.size(); ++s) {
        for (int i = 0; i < K; ++i) {
            std::vector<std::size_t> cand;
            for (int j = 0; j < K; ++j)
                if (j != i) cand.push_back(s * static_cast<std::size_t>(K) + static_cast<std::size_t>(j));
            nb.any_empty = nb.any_empty || cand.empty();
            nb.rows.push_back(std::move(cand));
        }
    }
    return nb;
}

// ---------------------------------------------------------------------------
// Tape construction

struct FnnNodes {
    NodeId W1, b1, W2, b2, W3, b3;
};
using FnnNodeSet = std::array<FnnNodes, kFnnCount>;

struct PolicyNodes {
    std::vector<FnnNodeSet> layers;
    const FnnNodeSet& for_layer(int l) const {
        return layers.size() == 1 ? layers.front() : layers.at(static_cast<std::size_t>(l));
    }
};

inline PolicyNodes register_params(Tape& tape, const PolicyParams& params, bool trainable = true) {
    PolicyNodes nodes;
    for (const auto& set : params.layers) {
        FnnNodeSet ns;
        for (std::size_t f = 0; f < kFnnCount; ++f) {
            const FnnParams& p = set[f];
            auto leaf = [&](const Mat& m) { return trainable ? tape.variable(m) : tape.constant(m); };
            ns[f] = {leaf(p.W1), leaf(p.b1), leaf(p.W2), leaf(p.b2), leaf(p.W3), leaf(p.b3)};
        }
        nodes.layers.push_back(ns);
    }
    return nodes;
}

/// Parameter gradient in PolicyParams::flatten() order.
inline Eigen::VectorXd collect_grads(const Tape& tape, const PolicyNodes& nodes, const PolicyParams& params) {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(params.size()));
    Eigen::Index off = 0;
    for (const auto& set : nodes.layers)
        for (const auto& f : set)
            for (NodeId id : {f.W1, f.b1, f.W2, f.b2, f.W3, f.b3}) {
                const Mat& g = tape.grad(id);
                const Eigen::Index n = tape.value(id).size();
                if (g.size() != 0) out.segment(off, n) = Eigen::Map<const Eigen::VectorXd>(g.data(), n);
                off += n;
            }
    return out;
}

inline NodeId fnn_forward(Tape& tape, const FnnNodes& f, NodeId x) {
    NodeId a = tape.relu(tape.affine(x, f.W1, f.b1));
    a = tape.relu(tape.affine(a, f.W2, f.b2));
    return tape.affine(a, f.W3, f.b3);
}

/// Elementwise max of `messages` over each row's neighbors (zeros when a node has none).
inline NodeId aggregate_max(Tape& tape, NodeId messages, const NeighborSets& nb) {
    if (nb.any_empty) {
        const Mat& mv = tape.value(messages);
        for (const auto& cand : nb.rows)
            if (!cand.empty()) throw std::invalid_argument("aggregate_max: mixed empty and non-empty neighborhoods");
        return tape.constant(Mat::Zero(mv.rows(), mv.cols()));
    }
    return tape.max_over(messages, nb.rows);
}

struct LayerInput {
    NodeId h;  // B*K x 2M, realified channels
    NodeId v;  // B*K x 2M, feasible precoders from the previous layer
};

inline NodeId ugnn_step(Tape& tape, const FnnNodeSet& fnn, const LayerInput& in, const NeighborSets& nb) {
    const NodeId agg = aggregate_max(tape, fnn_forward(tape, fnn[0], in.v), nb);
    return fnn_forward(tape, fnn[1], tape.concat({in.h, in.v, agg}));
}

inline NodeId wgnn_step(Tape& tape, const FnnNodeSet& fnn, const LayerInput& in, NodeId u, const NeighborSets& nb) {
    const NodeId agg = aggregate_max(tape, fnn_forward(tape, fnn[2], in.v), nb);
    return fnn_forward(tape, fnn[3], tape.concat({in.h, in.v, u, agg}));
}

inline NodeId vgnn_step(Tape& tape, const FnnNodeSet& fnn, const LayerInput& in, NodeId u, NodeId w,
                        const NeighborSets& nb) {
    const NodeId local = tape.concat({in.h, in.v, u, w});
    const NodeId agg = aggregate_max(tape, fnn_forward(tape, fnn[4], local), nb);
    return fnn_forward(tape, fnn[5], tape.concat({in.h, in.v, u, w, agg}));
}

/// Per sample: unchanged if sum_i ||v_i||^2 <= P, else scaled by sqrt(P / sum).
inline NodeId project_power(Tape& tape, NodeId vhat, std::size_t users, double power_mw) {
    return tape.project_power(vhat, users, power_mw);
}

/// Plain-matrix form of the projection for one sample (rows are users).
inline Mat project_power(const Mat& vhat, double power_mw) {
    const double p = vhat.squaredNorm();
    return p <= power_mw ? vhat : Mat(vhat * std::sqrt(power_mw / p));
}

struct ForwardTrace {
    std::vector<NodeId> v;  // v[0] = initial precoders, v[l] = projected output of layer l
    std::vector<NodeId> u;  // u[0] = initial features
    std::vector<NodeId> w;
    NodeId h;
};

/// Records the L-layer unfolded forward pass for a batch of graphs sharing K.
inline ForwardTrace record_unfold(Tape& tape, const PolicyNodes& nodes, const ArchConfig& arch,
                                  std::span<const GraphSample* const> graphs, double power_mw) {
    if (graphs.empty()) throw std::invalid_argument("record_unfold: empty batch");
    const int K = graphs.front()->K;
    const auto rows = static_cast<Eigen::Index>(graphs.size()) * K;
    Mat h(rows, 2 * arch.M), v0(rows, 2 * arch.M), u0(rows, 2 * arch.d_u), w0(rows, arch.d_w);
    for (std::size_t s = 0; s < graphs.size(); ++s) {
        const GraphSample& g = *graphs[s];
        if (g.K != K || g.M != arch.M || g.d_u != arch.d_u || g.d_w != arch.d_w)
            throw std::invalid_argument("record_unfold: graph dimensions do not match");
        const Eigen::Index off = static_cast<Eigen::Index>(s) * K;
        h.middleRows(off, K) = g.h();
        v0.middleRows(off, K) = g.v0();
        u0.middleRows(off, K) = g.u0();
        w0.middleRows(off, K) = g.w0();
    }
    const NeighborSets nb = neighbor_sets(graphs);
    ForwardTrace tr;
    tr.h = tape.constant(std::move(h));
    tr.v.push_back(tape.constant(std::move(v0)));
    tr.u.push_back(tape.constant(std::move(u0)));
    tr.w.push_back(tape.constant(std::move(w0)));
    for (int l = 0; l < arch.L; ++l) {
        const FnnNodeSet& fnn = nodes.for_layer(l);
        const LayerInput in{tr.h, tr.v.back()};
        const NodeId u = ugnn_step(tape, fnn, in, nb);
        const NodeId w = wgnn_step(tape, fnn, in, u, nb);
        const NodeId vhat = vgnn_step(tape, fnn, in, u, w, nb);
        tr.u.push_back(u);
        tr.w.push_back(w);
        tr.v.push_back(project_power(tape, vhat, static_cast<std::size_t>(K), power_mw));
    }
    return tr;
}

/// Per-layer values for one graph (rows are users).
struct UnfoldState {
    std::vector<Mat> v;  // K x 2M, l = 0..L
    std::vector<Mat> u;  // K x 2 d_u
    std::vector<Mat> w;  // K x d_w
};

struct UnfoldResult {
    CxMatrix V;  // M x K output precoder
    UnfoldState trace;
};

inline UnfoldResult unfold_forward(const GraphSample& graph, const PolicyParams& params, double power_mw) {
    Tape tape;
    const PolicyNodes nodes = register_params(tape, params, false);
    const GraphSample* gp = &graph;
    const ForwardTrace tr = record_unfold(tape, nodes, params.arch, std::span(&gp, 1), power_mw);
    UnfoldResult res;
    for (std::size_t l = 0; l < tr.v.size(); ++l) {
        res.trace.v.push_back(tape.value(tr.v[l]));
        res.trace.u.push_back(tape.value(tr.u[l]));
        res.trace.w.push_back(tape.value(tr.w[l]));
    }
    res.V = complexify_rows(res.trace.v.back());
    return res;
}

/// Output precoders for many graphs, evaluated `chunk` samples per tape.
inline std::vector<CxMatrix> policy_precoders(const PolicyParams& params, std::span<const GraphSample> graphs,
                                              double power_mw, std::size_t chunk = 64) {
    std::vector<CxMatrix> out;
    out.reserve(graphs.size());
    Tape tape;
    for (std::size_t begin = 0; begin < graphs.size(); begin += chunk) {
        const std::size_t end = std::min(graphs.size(), begin + chunk);
        tape.clear();
        const PolicyNodes nodes = register_params(tape, params, false);
        std::vector<const GraphSample*> ptrs;
        for (std::size_t k = begin; k < end; ++k) ptrs.push_back(&graphs[k]);
        const ForwardTrace tr = record_unfold(tape, nodes, params.arch, ptrs, power_mw);
        const Mat& v = tape.value(tr.v.back());
        const Eigen::Index K = graphs[begin].K;
        for (std::size_t s = 0; s < ptrs.size(); ++s)
            out.push_back(complexify_rows(v.middleRows(static_cast<Eigen::Index>(s) * K, K)));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Rates on the tape

/// Per-sample rates (B x K, nats) of the precoders in `v` (B*K x 2M rows).
/// Built from |h_i^H v_j|^2 via a per-sample linear map, sq_abs, group sums
/// and r_i = log(total_i + s2_i) - log(interference_i + s2_i).
inline NodeId record_rates(Tape& tape, NodeId v, std::span<const ProblemInstance> instances) {
    if (instances.empty()) throw std::invalid_argument("record_rates: empty batch");
    const Eigen::Index K = instances.front().H.cols();
    const Eigen::Index M = instances.front().H.rows();
    const Eigen::Index B = static_cast<Eigen::Index>(instances.size());
    std::vector<Mat> maps;
    maps.reserve(instances.size());
    Mat noise(B, K);
    for (Eigen::Index s = 0; s < B; ++s) {
        const ProblemInstance& p = instances[static_cast<std::size_t>(s)];
        if (p.H.cols() != K || p.H.rows() != M) throw std::invalid_argument("record_rates: inconsistent shapes");
        // rows [0,K): Re(h_i^H v), rows [K,2K): Im(h_i^H v), over v = [Re v; Im v]
        Mat G(2 * K, 2 * M);
        for (Eigen::Index i = 0; i < K; ++i)
            for (Eigen::Index m = 0; m < M; ++m) {
                const double hr = p.H.re(m, i), hi = p.H.im(m, i);
                G(i, m) = hr;
                G(i, M + m) = hi;
                G(K + i, m) = -hi;
                G(K + i, M + m) = hr;
            }
        maps.push_back(std::move(G));
        noise.row(s) = p.sigma2.transpose();
    }
    const NodeId gains = tape.sq_abs(tape.grouped_linear(v, std::move(maps), static_cast<std::size_t>(K)));
    Mat off_diag = Mat::Ones(B * K, K);
    for (Eigen::Index s = 0; s < B; ++s)
        for (Eigen::Index i = 0; i < K; ++i) off_diag(s * K + i, i) = 0.0;
    const NodeId total = tape.group_sum(gains, static_cast<std::size_t>(K));
    const NodeId interference = tape.group_sum(tape.mul_const(gains, std::move(off_diag)), static_cast<std::size_t>(K));
    const NodeId s2 = tape.constant(std::move(noise));
    const NodeId log_total = tape.log(tape.lincomb(total, 1.0, s2, 1.0));
    const NodeId log_interf = tape.log(tape.lincomb(interference, 1.0, s2, 1.0));
    return tape.lincomb(log_total, 1.0, log_interf, -1.0);
}

// ---------------------------------------------------------------------------
// Checkpoint file: text header ("end_header" terminated), then all parameters
// as little-endian f64 in flatten() order.

inline constexpr const char* kCheckpointMagic = "RISKBF-CHECKPOINT";

// Optional extra blocks (e.g. optimizer moments), each n_params long, follow
// the parameters.
inline void write_checkpoint(const std::string& path, const PolicyParams& params, const KeyValues& extra = {},
                             std::span<const Eigen::VectorXd> extra_blocks = {}) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
    out << kCheckpointMagic << "\nversion=1\n" << params.arch.to_text() << "n_params=" << params.size()
        << "\nextra_blocks=" << extra_blocks.size() << "\n";
    for (const auto& [k, v] : extra.entries()) out << k << "=" << v << "\n";
    out << "end_header\n";
    const Eigen::VectorXd flat = params.flatten();
    for (Eigen::Index k = 0; k < flat.size(); ++k) binio::write_f64(out, flat[k]);
    for (const auto& block : extra_blocks) {
        if (block.size() != flat.size()) throw std::invalid_argument("write_checkpoint: extra block size mismatch");
        for (Eigen::Index k = 0; k < block.size(); ++k) binio::write_f64(out, block[k]);
    }
    if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

inline PolicyParams read_checkpoint(const std::string& path, KeyValues* header = nullptr,
                                    std::vector<Eigen::VectorXd>* extra_blocks = nullptr) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    std::string line;
    std::getline(in, line);
    if (line != kCheckpointMagic) throw std::runtime_error("not a checkpoint file: " + path);
    std::string text;
    while (std::getline(in, line) && line != "end_header") text += line + "\n";
    if (line != "end_header") throw std::runtime_error("truncated checkpoint header: " + path);
    const KeyValues kv = KeyValues::parse(text);
    const ArchConfig arch = ArchConfig::from_kv(kv, static_cast<int>(kv.get_int("M")));
    PolicyParams params = PolicyParams::init(arch, 0);
    if (static_cast<std::size_t>(kv.get_int("n_params")) != params.size())
        throw std::runtime_error("checkpoint parameter count does not match its architecture");
    Eigen::VectorXd flat(static_cast<Eigen::Index>(params.size()));
    for (Eigen::Index k = 0; k < flat.size(); ++k) flat[k] = binio::read_f64(in);
    params.assign(flat);
    const auto n_extra = static_cast<std::size_t>(kv.get_int("extra_blocks", 0));
    std::vector<Eigen::VectorXd> blocks(n_extra, Eigen::VectorXd(flat.size()));
    for (auto& block : blocks)
        for (Eigen::Index k = 0; k < block.size(); ++k) block[k] = binio::read_f64(in);
    if (extra_blocks) *extra_blocks = std::move(blocks);
    if (header) *header = kv;
    return params;
}

}  // namespace riskbf

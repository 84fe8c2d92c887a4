#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hybridpf/network.hpp"

namespace hybridpf::gnn {

/// Node-major activations: row g * N + i holds node i of graph g.
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr double kActivationSlope = 0.01;  // LeakyReLU between layers
inline constexpr double kAttentionSlope = 0.2;    // LeakyReLU inside GATv2 scores
inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

struct ModelShape {
    int in_dim = kNodeFeatureCount;
    int edge_dim = kEdgeFeatureCount;
    int hidden = 256;  // channels per head
    int heads = 4;
    int out_dim = 3;   // vm, cos, sin

    [[nodiscard]] int width() const { return hidden * heads; }
};

/// GATv2 convolution with edge features (concatenated heads).
struct GatParams {
    int heads = 1;
    int channels = 1;  // per head
    Eigen::MatrixXd w_src;   // in x heads*channels
    Eigen::MatrixXd b_src;   // 1 x heads*channels
    Eigen::MatrixXd w_dst;
    Eigen::MatrixXd b_dst;
    Eigen::MatrixXd w_edge;  // edge_dim x heads*channels, no bias
    Eigen::MatrixXd att;     // 1 x heads*channels
    Eigen::MatrixXd bias;    // 1 x heads*channels
};

struct BatchNormParams {
    Eigen::MatrixXd gamma;  // 1 x width
    Eigen::MatrixXd beta;
    Eigen::MatrixXd running_mean;  // not learnable
    Eigen::MatrixXd running_var;
};

struct ModelParams {
    ModelShape shape;
    GatParams layer1;
    GatParams layer2;
    GatParams layer3;
    BatchNormParams bn1;
    BatchNormParams bn2;

    /// Calls fn(name, tensor) on every learnable tensor in a fixed order.
    template <typename Fn>
    void visit(Fn&& fn) { visit_impl(*this, fn); }
    template <typename Fn>
    void visit(Fn&& fn) const { visit_impl(*this, fn); }

    [[nodiscard]] std::size_t parameter_count() const;

    /// Same shapes, all entries zero (used for gradients and optimizer moments).
    [[nodiscard]] ModelParams zeros_like() const;

  private:
    template <typename Self, typename Fn>
    static void visit_impl(Self& self, Fn& fn) {
        visit_layer("layer1", self.layer1, fn);
        visit_layer("layer2", self.layer2, fn);
        visit_layer("layer3", self.layer3, fn);
        fn(std::string("bn1.gamma"), self.bn1.gamma);
        fn(std::string("bn1.beta"), self.bn1.beta);
        fn(std::string("bn2.gamma"), self.bn2.gamma);
        fn(std::string("bn2.beta"), self.bn2.beta);
    }
    template <typename Layer, typename Fn>
    static void visit_layer(const std::string& p, Layer& l, Fn& fn) {
        fn(p + ".w_src", l.w_src);
        fn(p + ".b_src", l.b_src);
        fn(p + ".w_dst", l.w_dst);
        fn(p + ".b_dst", l.b_dst);
        fn(p + ".w_edge", l.w_edge);
        fn(p + ".att", l.att);
        fn(p + ".bias", l.bias);
    }
};

/// Glorot-uniform weights, zero biases, unit BN scale.
[[nodiscard]] ModelParams init_params(const ModelShape& shape, std::uint64_t seed);

/// Directed edges of one graph with self-loops appended; shared by all graphs
/// in a batch. Self-loop attributes are the mean of the node's incoming edges.
struct GraphTopology {
    int nodes = 0;
    std::vector<int> src;
    std::vector<int> dst;
    std::vector<std::vector<int>> incoming;  // edge ids per target node
    Eigen::MatrixXd edge_attr;               // edges x edge_dim, scaled

    [[nodiscard]] int edges() const { return static_cast<int>(src.size()); }
};

/// Builds the topology from a FeatureSet. Edge columns are divided by their
/// max-abs value (columns of zeros are left unchanged).
[[nodiscard]] GraphTopology make_topology(const FeatureSet& features, int nodes);

struct GatCache {
    RowMatrix x_in;
    RowMatrix x_src;
    RowMatrix x_dst;
    RowMatrix alpha;  // batch*edges x heads
    Eigen::MatrixXd edge_proj;
};

[[nodiscard]] RowMatrix gat_forward(const GatParams& p, const GraphTopology& topo, const RowMatrix& x,
                                    int batch, GatCache* cache);

/// Accumulates parameter gradients into `grad` and returns dL/dx.
RowMatrix gat_backward(const GatParams& p, const GraphTopology& topo, const GatCache& cache,
                       const RowMatrix& d_out, int batch, GatParams& grad);

struct BatchNormCache {
    RowMatrix x_hat;
    Eigen::RowVectorXd inv_std;
    Eigen::RowVectorXd batch_mean;
    Eigen::RowVectorXd batch_var;  // biased
    Eigen::Index rows = 0;
    bool training = false;
};

/// Training mode normalizes with batch statistics, eval mode with running ones.
[[nodiscard]] RowMatrix batchnorm_forward(const BatchNormParams& p, const RowMatrix& x, bool training,
                                          BatchNormCache* cache);
/// Folds the batch statistics of a training-mode pass into the running ones.
void update_running_stats(BatchNormParams& p, const BatchNormCache& cache);
RowMatrix batchnorm_backward(const BatchNormParams& p, const BatchNormCache& cache,
                             const RowMatrix& d_out, BatchNormParams& grad);

enum class Mode { train, eval };

struct ForwardCache {
    GatCache gat1, gat2, gat3;
    BatchNormCache bn1, bn2;
    RowMatrix pre1, pre2;  // BN outputs before the activation
    RowMatrix mask1;       // inverted-dropout mask (train mode)
    int batch = 0;
};

struct ForwardOptions {
    Mode mode = Mode::eval;
    double dropout = 0.0;
    std::mt19937_64* rng = nullptr;  // required when dropout > 0 in train mode
};

/// Raw network output (batch*N x 3) in normalized target space.
[[nodiscard]] RowMatrix forward(const ModelParams& params, const GraphTopology& topo, const RowMatrix& x,
                                int batch, const ForwardOptions& opt, ForwardCache* cache);

/// Applies the running-statistics update of both BN layers after a train pass.
void update_running_stats(ModelParams& params, const ForwardCache& cache);

/// Backpropagates dL/d(raw output); returns gradients for every learnable tensor.
[[nodiscard]] ModelParams backward(const ModelParams& params, const GraphTopology& topo,
                                   const ForwardCache& cache, const RowMatrix& d_raw);

}  // namespace hybridpf::gnn

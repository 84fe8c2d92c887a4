#include <stdexcept>

#include "hybridpf/gnn_model.hpp"

namespace hybridpf::gnn {

namespace {

RowMatrix leaky_relu(const RowMatrix& x) {
    return x.unaryExpr([](double v) { return v > 0.0 ? v : kActivationSlope * v; });
}

RowMatrix leaky_relu_backward(const RowMatrix& pre, const RowMatrix& d_out) {
    return d_out.binaryExpr(pre, [](double g, double v) { return v > 0.0 ? g : kActivationSlope * g; });
}

}  // namespace

RowMatrix forward(const ModelParams& params, const GraphTopology& topo, const RowMatrix& x, int batch,
                  const ForwardOptions& opt, ForwardCache* cache) {
    if (x.rows() != static_cast<Eigen::Index>(batch) * topo.nodes || x.cols() != params.shape.in_dim) {
        throw std::invalid_argument("node feature matrix does not match batch and topology");
    }
    const bool training = opt.mode == Mode::train;
    ForwardCache local;
    ForwardCache& c = cache ? *cache : local;
    c.batch = batch;

    RowMatrix h = gat_forward(params.layer1, topo, x, batch, &c.gat1);
    c.pre1 = batchnorm_forward(params.bn1, h, training, &c.bn1);
    RowMatrix a1 = leaky_relu(c.pre1);
    if (training && opt.dropout > 0.0) {
        if (!opt.rng) throw std::invalid_argument("dropout in train mode needs an RNG");
        std::bernoulli_distribution keep(1.0 - opt.dropout);
        const double scale = 1.0 / (1.0 - opt.dropout);
        c.mask1.resize(a1.rows(), a1.cols());
        for (Eigen::Index i = 0; i < c.mask1.size(); ++i) {
            c.mask1.data()[i] = keep(*opt.rng) ? scale : 0.0;
        }
        a1.array() *= c.mask1.array();
    } else {
        c.mask1.resize(0, 0);
    }

    h = gat_forward(params.layer2, topo, a1, batch, &c.gat2);
    c.pre2 = batchnorm_forward(params.bn2, h, training, &c.bn2);
    RowMatrix residual = leaky_relu(c.pre2);
    residual += a1;

    return gat_forward(params.layer3, topo, residual, batch, &c.gat3);
}

void update_running_stats(ModelParams& params, const ForwardCache& cache) {
    update_running_stats(params.bn1, cache.bn1);
    update_running_stats(params.bn2, cache.bn2);
}

ModelParams backward(const ModelParams& params, const GraphTopology& topo, const ForwardCache& cache,
                     const RowMatrix& d_raw) {
    ModelParams grad = params.zeros_like();
    const int batch = cache.batch;

    const RowMatrix d_residual = gat_backward(params.layer3, topo, cache.gat3, d_raw, batch, grad.layer3);

    RowMatrix d_h = leaky_relu_backward(cache.pre2, d_residual);
    d_h = batchnorm_backward(params.bn2, cache.bn2, d_h, grad.bn2);
    RowMatrix d_a1 = gat_backward(params.layer2, topo, cache.gat2, d_h, batch, grad.layer2);
    d_a1 += d_residual;

    if (cache.mask1.size() > 0) d_a1.array() *= cache.mask1.array();
    d_h = leaky_relu_backward(cache.pre1, d_a1);
    d_h = batchnorm_backward(params.bn1, cache.bn1, d_h, grad.bn1);
    static_cast<void>(gat_backward(params.layer1, topo, cache.gat1, d_h, batch, grad.layer1));
    return grad;
}

}  // namespace hybridpf::gnn

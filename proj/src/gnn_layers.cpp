#include <cmath>
#include <limits>

#include "hybridpf/gnn_model.hpp"

namespace hybridpf::gnn {

namespace {

inline double leaky(double z, double slope) { return z > 0.0 ? z : slope * z; }
inline double leaky_grad(double z, double slope) { return z > 0.0 ? 1.0 : slope; }

Eigen::MatrixXd glorot(int rows, int cols, std::mt19937_64& rng) {
    const double bound = std::sqrt(6.0 / (rows + cols));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Eigen::MatrixXd w(rows, cols);
    for (int c = 0; c < cols; ++c) {
        for (int r = 0; r < rows; ++r) w(r, c) = dist(rng);
    }
    return w;
}

GatParams init_gat(int in, int edge_dim, int heads, int channels, std::mt19937_64& rng) {
    const int width = heads * channels;
    GatParams p;
    p.heads = heads;
    p.channels = channels;
    p.w_src = glorot(in, width, rng);
    p.b_src = Eigen::MatrixXd::Zero(1, width);
    p.w_dst = glorot(in, width, rng);
    p.b_dst = Eigen::MatrixXd::Zero(1, width);
    p.w_edge = glorot(edge_dim, width, rng);
    p.att = glorot(heads, channels, rng).transpose().reshaped(1, width);
    p.bias = Eigen::MatrixXd::Zero(1, width);
    return p;
}

BatchNormParams init_bn(int width) {
    return {Eigen::MatrixXd::Ones(1, width), Eigen::MatrixXd::Zero(1, width),
            Eigen::MatrixXd::Zero(1, width), Eigen::MatrixXd::Ones(1, width)};
}

}  // namespace

std::size_t ModelParams::parameter_count() const {
    std::size_t n = 0;
    visit([&](const std::string&, const Eigen::MatrixXd& t) { n += static_cast<std::size_t>(t.size()); });
    return n;
}

ModelParams ModelParams::zeros_like() const {
    ModelParams z = *this;
    z.visit([](const std::string&, Eigen::MatrixXd& t) { t.setZero(); });
    return z;
}

ModelParams init_params(const ModelShape& shape, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    ModelParams p;
    p.shape = shape;
    const int width = shape.width();
    p.layer1 = init_gat(shape.in_dim, shape.edge_dim, shape.heads, shape.hidden, rng);
    p.layer2 = init_gat(width, shape.edge_dim, shape.heads, shape.hidden, rng);
    p.layer3 = init_gat(width, shape.edge_dim, 1, shape.out_dim, rng);
    p.bn1 = init_bn(width);
    p.bn2 = init_bn(width);
    return p;
}

GraphTopology make_topology(const FeatureSet& features, int nodes) {
    GraphTopology topo;
    topo.nodes = nodes;
    const auto e = static_cast<int>(features.edge_index.size());
    const int dim = static_cast<int>(features.edge_features.cols());
    Eigen::RowVectorXd scale = features.edge_features.cwiseAbs().colwise().maxCoeff();
    for (int c = 0; c < dim; ++c) {
        if (!(scale(c) > 0.0)) scale(c) = 1.0;
    }
    topo.edge_attr.resize(e + nodes, dim);
    topo.incoming.assign(nodes, {});
    Eigen::MatrixXd loop_sum = Eigen::MatrixXd::Zero(nodes, dim);
    Eigen::VectorXd loop_count = Eigen::VectorXd::Zero(nodes);
    for (int k = 0; k < e; ++k) {
        const auto [s, d] = features.edge_index[k];
        topo.src.push_back(s);
        topo.dst.push_back(d);
        topo.incoming[d].push_back(k);
        topo.edge_attr.row(k) = features.edge_features.row(k).cwiseQuotient(scale);
        loop_sum.row(d) += topo.edge_attr.row(k);
        loop_count(d) += 1.0;
    }
    for (int i = 0; i < nodes; ++i) {
        const int k = e + i;
        topo.src.push_back(i);
        topo.dst.push_back(i);
        topo.incoming[i].push_back(k);
        topo.edge_attr.row(k) = loop_count(i) > 0.0 ? Eigen::RowVectorXd(loop_sum.row(i) / loop_count(i))
                                                    : Eigen::RowVectorXd::Zero(dim);
    }
    return topo;
}

RowMatrix gat_forward(const GatParams& p, const GraphTopology& topo, const RowMatrix& x, int batch,
                      GatCache* cache) {
    const int heads = p.heads;
    const int ch = p.channels;
    const int width = heads * ch;
    const int n = topo.nodes;
    const int e = topo.edges();

    RowMatrix x_src = x * p.w_src;
    x_src.rowwise() += p.b_src.row(0);
    RowMatrix x_dst = x * p.w_dst;
    x_dst.rowwise() += p.b_dst.row(0);
    const Eigen::MatrixXd edge_proj_cm = topo.edge_attr * p.w_edge;
    const RowMatrix edge_proj = edge_proj_cm;

    RowMatrix alpha(static_cast<Eigen::Index>(batch) * e, heads);
    RowMatrix out = RowMatrix::Zero(static_cast<Eigen::Index>(batch) * n, width);
    const double* att = p.att.data();  // 1 x width, contiguous

    for (int g = 0; g < batch; ++g) {
        const int node0 = g * n;
        const Eigen::Index edge0 = static_cast<Eigen::Index>(g) * e;
        for (int k = 0; k < e; ++k) {
            const double* xs = x_src.row(node0 + topo.src[k]).data();
            const double* xd = x_dst.row(node0 + topo.dst[k]).data();
            const double* ep = edge_proj.row(k).data();
            for (int h = 0; h < heads; ++h) {
                double score = 0.0;
                for (int c = h * ch; c < (h + 1) * ch; ++c) {
                    score += att[c] * leaky(xs[c] + xd[c] + ep[c], kAttentionSlope);
                }
                alpha(edge0 + k, h) = score;
            }
        }
        for (int i = 0; i < n; ++i) {
            const auto& in = topo.incoming[i];
            double* o = out.row(node0 + i).data();
            for (int h = 0; h < heads; ++h) {
                double mx = -std::numeric_limits<double>::infinity();
                for (int k : in) mx = std::max(mx, alpha(edge0 + k, h));
                double total = 0.0;
                for (int k : in) {
                    const double w = std::exp(alpha(edge0 + k, h) - mx);
                    alpha(edge0 + k, h) = w;
                    total += w;
                }
                for (int k : in) {
                    const double a = alpha(edge0 + k, h) / total;
                    alpha(edge0 + k, h) = a;
                    const double* xs = x_src.row(node0 + topo.src[k]).data();
                    for (int c = h * ch; c < (h + 1) * ch; ++c) o[c] += a * xs[c];
                }
            }
        }
    }
    out.rowwise() += p.bias.row(0);

    if (cache) {
        cache->x_in = x;
        cache->x_src = std::move(x_src);
        cache->x_dst = std::move(x_dst);
        cache->alpha = std::move(alpha);
        cache->edge_proj = edge_proj_cm;
    }
    return out;
}

RowMatrix gat_backward(const GatParams& p, const GraphTopology& topo, const GatCache& cache,
                       const RowMatrix& d_out, int batch, GatParams& grad) {
    const int heads = p.heads;
    const int ch = p.channels;
    const int width = heads * ch;
    const int n = topo.nodes;
    const int e = topo.edges();
    const RowMatrix edge_proj = cache.edge_proj;
    const double* att = p.att.data();

    RowMatrix d_src = RowMatrix::Zero(cache.x_src.rows(), width);
    RowMatrix d_dst = RowMatrix::Zero(cache.x_dst.rows(), width);
    RowMatrix d_edge = RowMatrix::Zero(e, width);
    Eigen::RowVectorXd d_att = Eigen::RowVectorXd::Zero(width);
    std::vector<double> d_alpha;

    grad.bias.row(0) += d_out.colwise().sum();

    for (int g = 0; g < batch; ++g) {
        const int node0 = g * n;
        const Eigen::Index edge0 = static_cast<Eigen::Index>(g) * e;
        for (int i = 0; i < n; ++i) {
            const auto& in = topo.incoming[i];
            const double* go = d_out.row(node0 + i).data();
            d_alpha.assign(in.size(), 0.0);
            for (int h = 0; h < heads; ++h) {
                double weighted = 0.0;
                for (std::size_t t = 0; t < in.size(); ++t) {
                    const int k = in[t];
                    const int s = node0 + topo.src[k];
                    const double a = cache.alpha(edge0 + k, h);
                    const double* xs = cache.x_src.row(s).data();
                    double* ds = d_src.row(s).data();
                    double da = 0.0;
                    for (int c = h * ch; c < (h + 1) * ch; ++c) {
                        da += go[c] * xs[c];
                        ds[c] += a * go[c];
                    }
                    d_alpha[t] = da;
                    weighted += a * da;
                }
                for (std::size_t t = 0; t < in.size(); ++t) {
                    const int k = in[t];
                    const int s = node0 + topo.src[k];
                    const int d = node0 + topo.dst[k];
                    const double d_score = cache.alpha(edge0 + k, h) * (d_alpha[t] - weighted);
                    if (d_score == 0.0) continue;
                    const double* xs = cache.x_src.row(s).data();
                    const double* xd = cache.x_dst.row(d).data();
                    const double* ep = edge_proj.row(k).data();
                    double* gs = d_src.row(s).data();
                    double* gd = d_dst.row(d).data();
                    double* ge = d_edge.row(k).data();
                    for (int c = h * ch; c < (h + 1) * ch; ++c) {
                        const double z = xs[c] + xd[c] + ep[c];
                        d_att[c] += d_score * leaky(z, kAttentionSlope);
                        const double dz = d_score * att[c] * leaky_grad(z, kAttentionSlope);
                        gs[c] += dz;
                        gd[c] += dz;
                        ge[c] += dz;
                    }
                }
            }
        }
    }

    grad.att.row(0) += d_att;
    grad.w_src.noalias() += cache.x_in.transpose() * d_src;
    grad.b_src.row(0) += d_src.colwise().sum();
    grad.w_dst.noalias() += cache.x_in.transpose() * d_dst;
    grad.b_dst.row(0) += d_dst.colwise().sum();
    grad.w_edge.noalias() += topo.edge_attr.transpose() * d_edge;

    RowMatrix d_x = d_src * p.w_src.transpose();
    d_x.noalias() += d_dst * p.w_dst.transpose();
    return d_x;
}

RowMatrix batchnorm_forward(const BatchNormParams& p, const RowMatrix& x, bool training,
                            BatchNormCache* cache) {
    const auto rows = static_cast<double>(x.rows());
    Eigen::RowVectorXd mean;
    Eigen::RowVectorXd var;
    if (training) {
        mean = x.colwise().mean();
        var = (x.rowwise() - mean).array().square().colwise().sum() / rows;
    } else {
        mean = p.running_mean.row(0);
        var = p.running_var.row(0);
    }
    const Eigen::RowVectorXd inv_std = (var.array() + kBatchNormEps).rsqrt();
    RowMatrix x_hat = (x.rowwise() - mean).array().rowwise() * inv_std.array();
    RowMatrix y = (x_hat.array().rowwise() * p.gamma.row(0).array()).rowwise() + p.beta.row(0).array();
    if (cache) {
        cache->x_hat = std::move(x_hat);
        cache->inv_std = inv_std;
        cache->batch_mean = mean;
        cache->batch_var = var;
        cache->rows = x.rows();
        cache->training = training;
    }
    return y;
}

void update_running_stats(BatchNormParams& p, const BatchNormCache& cache) {
    if (!cache.training) return;
    const auto rows = static_cast<double>(cache.rows);
    const double unbiased = rows > 1.0 ? rows / (rows - 1.0) : 1.0;
    p.running_mean.row(0) = (1.0 - kBatchNormMomentum) * p.running_mean.row(0) + kBatchNormMomentum * cache.batch_mean;
    p.running_var.row(0) =
        (1.0 - kBatchNormMomentum) * p.running_var.row(0) + kBatchNormMomentum * unbiased * cache.batch_var;
}

RowMatrix batchnorm_backward(const BatchNormParams& p, const BatchNormCache& cache, const RowMatrix& d_out,
                             BatchNormParams& grad) {
    grad.gamma.row(0) += (d_out.array() * cache.x_hat.array()).colwise().sum().matrix();
    grad.beta.row(0) += d_out.colwise().sum();
    const RowMatrix d_hat = d_out.array().rowwise() * p.gamma.row(0).array();
    if (!cache.training) {
        return d_hat.array().rowwise() * cache.inv_std.array();
    }
    const auto rows = static_cast<double>(d_out.rows());
    const Eigen::RowVectorXd sum_d = d_hat.colwise().sum();
    const Eigen::RowVectorXd sum_dx = (d_hat.array() * cache.x_hat.array()).colwise().sum();
    RowMatrix d_x = (rows * d_hat.array()).rowwise() - sum_d.array();
    d_x.array() -= cache.x_hat.array().rowwise() * sum_dx.array();
    d_x.array().rowwise() *= (cache.inv_std.array() / rows);
    return d_x;
}

}  // namespace hybridpf::gnn

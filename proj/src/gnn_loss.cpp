#include "hybridpf/gnn_loss.hpp"

namespace hybridpf::gnn {

namespace {

constexpr double kMinRadius = 1e-12;

struct Decoded {
    double vm;
    double cr;  // cos after projection
    double sr;  // sin after projection
    double radius;
    double c;
    double s;
};

Decoded decode(const double* raw, const TrainStats& stats) {
    Decoded d{};
    d.vm = raw[0] * stats.target_std(0) + stats.target_mean(0);
    d.c = raw[1] * stats.target_std(1) + stats.target_mean(1);
    d.s = raw[2] * stats.target_std(2) + stats.target_mean(2);
    d.radius = std::hypot(d.c, d.s);
    if (d.radius < kMinRadius) {
        d.cr = 1.0;
        d.sr = 0.0;
    } else {
        d.cr = d.c / d.radius;
        d.sr = d.s / d.radius;
    }
    return d;
}

}  // namespace

double data_loss(const RowMatrix& pred, const RowMatrix& target, int nodes, double delta, RowMatrix* grad) {
    if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
        throw std::invalid_argument("prediction and target shapes differ");
    }
    const auto rows = pred.rows();
    const auto batch = rows / nodes;
    const double count = static_cast<double>(batch * (nodes - 1) * pred.cols());
    if (grad) *grad = RowMatrix::Zero(rows, pred.cols());
    double total = 0.0;
    for (Eigen::Index r = 0; r < rows; ++r) {
        if (r % nodes == 0) continue;
        for (Eigen::Index c = 0; c < pred.cols(); ++c) {
            total += huber(pred(r, c), target(r, c), delta);
            if (grad) (*grad)(r, c) = huber_grad(pred(r, c), target(r, c), delta) / count;
        }
    }
    return total / count;
}

Eigen::VectorXd sensitivity_weights(const AdmittanceSet& adm) {
    const Eigen::VectorXd w = adm.z_bus.diagonal().cwiseAbs().array().log1p();
    return w / w.mean();
}

RowMatrix normalized_targets(const DatasetRecord& rec, const TrainStats& stats) {
    const auto n = rec.vm.size();
    RowMatrix y(n, 3);
    for (Eigen::Index i = 0; i < n; ++i) {
        y(i, 0) = (rec.vm(i) - stats.target_mean(0)) / stats.target_std(0);
        y(i, 1) = (std::cos(rec.va(i)) - stats.target_mean(1)) / stats.target_std(1);
        y(i, 2) = (std::sin(rec.va(i)) - stats.target_mean(2)) / stats.target_std(2);
    }
    return y;
}

RowMatrix normalized_features(const Eigen::MatrixXd& raw, const TrainStats& stats) {
    RowMatrix x = raw;
    for (int k = 0; k < 3; ++k) {
        x.col(k) = (x.col(k).array() - stats.feature_mean(k)) / stats.feature_std(k);
    }
    return x;
}

Eigen::MatrixXcd derive_voltages(const RowMatrix& raw, const TrainStats& stats, int nodes,
                                 Complex slack_voltage) {
    const auto batch = raw.rows() / nodes;
    Eigen::MatrixXcd v(nodes, batch);
    for (Eigen::Index g = 0; g < batch; ++g) {
        v(0, g) = slack_voltage;
        for (int i = 1; i < nodes; ++i) {
            const Decoded d = decode(raw.row(g * nodes + i).data(), stats);
            v(i, g) = Complex(d.vm * d.cr, d.vm * d.sr);
        }
    }
    return v;
}

PolarState derive_state(const RowMatrix& raw, const TrainStats& stats, int nodes, Complex slack_voltage,
                        int graph) {
    PolarState s;
    s.vm.resize(nodes);
    s.va.resize(nodes);
    s.vm(0) = std::abs(slack_voltage);
    s.va(0) = std::arg(slack_voltage);
    for (int i = 1; i < nodes; ++i) {
        const Decoded d = decode(raw.row(static_cast<Eigen::Index>(graph) * nodes + i).data(), stats);
        s.vm(i) = d.vm;
        s.va(i) = std::atan2(d.sr, d.cr);
    }
    return s;
}

double physics_loss(const RowMatrix& raw, const TrainStats& stats, const Eigen::MatrixXcd& injections,
                    const AdmittanceSet& adm, const Eigen::VectorXd& weights, Complex slack_voltage,
                    double delta, RowMatrix* grad) {
    const int nodes = adm.size();
    const auto batch = raw.rows() / nodes;
    if (injections.rows() != nodes || injections.cols() != batch) {
        throw std::invalid_argument("injection matrix must be N x batch");
    }
    const Eigen::MatrixXcd v = derive_voltages(raw, stats, nodes, slack_voltage);
    const Eigen::MatrixXcd current = adm.y_full * v;
    const Eigen::MatrixXcd mismatch = v.cwiseProduct(current.conjugate()) - injections;
    const double count = static_cast<double>(batch * (nodes - 1));

    double total = 0.0;
    Eigen::MatrixXcd g = Eigen::MatrixXcd::Zero(nodes, batch);  // dL/dRe dS + j dL/dIm dS
    for (Eigen::Index b = 0; b < batch; ++b) {
        for (int i = 1; i < nodes; ++i) {
            const Complex ds = mismatch(i, b);
            const double w = weights(i - 1);
            total += w * (huber(ds.real(), 0.0, delta) + huber(ds.imag(), 0.0, delta));
            g(i, b) = Complex(huber_grad(ds.real(), 0.0, delta), huber_grad(ds.imag(), 0.0, delta)) * (w / count);
        }
    }
    if (grad) {
        // For S = V conj(Y V): dL/dV = g . I + Y^H (conj(g) . V).
        const Eigen::MatrixXcd g_v =
            g.cwiseProduct(current) + adm.y_full.adjoint() * g.conjugate().cwiseProduct(v);
        *grad = RowMatrix::Zero(raw.rows(), raw.cols());
        for (Eigen::Index b = 0; b < batch; ++b) {
            for (int i = 1; i < nodes; ++i) {
                const Eigen::Index row = b * nodes + i;
                const Decoded d = decode(raw.row(row).data(), stats);
                const double gr = g_v(i, b).real();
                const double gi = g_v(i, b).imag();
                (*grad)(row, 0) = (gr * d.cr + gi * d.sr) * stats.target_std(0);
                if (d.radius < kMinRadius) continue;
                const double d_cr = d.vm * gr;
                const double d_sr = d.vm * gi;
                const double r3 = d.radius * d.radius * d.radius;
                const double d_c = (d_cr * d.s * d.s - d_sr * d.c * d.s) / r3;
                const double d_s = (-d_cr * d.c * d.s + d_sr * d.c * d.c) / r3;
                (*grad)(row, 1) = d_c * stats.target_std(1);
                (*grad)(row, 2) = d_s * stats.target_std(2);
            }
        }
    }
    return total / count;
}

}  // namespace hybridpf::gnn

#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <random>

#include "hybridpf/gnn_train.hpp"
#include "support.hpp"

using namespace hybridpf;
using namespace hybridpf::gnn;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

ModelShape small_shape() {
    ModelShape s;
    s.hidden = 8;
    s.heads = 2;
    return s;
}

struct Fixture {
    NetworkCase net = testing::five_bus();
    AdmittanceSet adm = build_admittance(net);
    Dataset data;
    GraphTopology topo;
    PreparedSet set;
    Eigen::VectorXd weights;

    Fixture() {
        GenConfig cfg;
        cfg.n_scenarios = 30;
        cfg.jobs = 1;
        data = generate_dataset(net, adm, cfg);
        topo = make_topology(build_features(net, adm, net.base_injections()), net.size());
        const auto train = data.split(Split::train);
        set = prepare(train, adm, *data.stats, FeatureOptions{});
        weights = sensitivity_weights(adm);
    }
};

/// Raw output encoding exact phasors under identity statistics.
RowMatrix encode(const Eigen::VectorXcd& v) {
    RowMatrix raw(v.size(), 3);
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        raw(i, 0) = std::abs(v(i));
        raw(i, 1) = std::cos(std::arg(v(i)));
        raw(i, 2) = std::sin(std::arg(v(i)));
    }
    return raw;
}

}  // namespace

TEST_CASE("Huber penalty values") {
    CHECK(huber(0.5, 0.0) == 0.125);
    CHECK(huber(2.0, 0.0) == 1.5);
    CHECK(huber(-2.0, 0.0) == 1.5);
    CHECK(huber(1.0, 0.0) == 0.5);
    CHECK(huber_grad(0.5, 0.0) == 0.5);
    CHECK(huber_grad(-3.0, 0.0) == -1.0);
}

TEST_CASE("data loss vanishes on exact targets and skips the slack") {
    RowMatrix a = RowMatrix::Random(10, 3);
    RowMatrix grad;
    CHECK(data_loss(a, a, 5, 1.0, &grad) == 0.0);
    CHECK(grad.isZero());
    RowMatrix b = a;
    b.row(0).array() += 5.0;
    b.row(5).array() += 5.0;
    CHECK(data_loss(a, b, 5) == 0.0);
    b = a;
    b(1, 0) += 0.5;
    CHECK_THAT(data_loss(b, a, 5), WithinAbs(0.125 / 24.0, 1e-15));
}

TEST_CASE("sensitivity weights") {
    const double z1 = std::numbers::e - 1.0;
    const double z2 = std::exp(3.0) - 1.0;
    nlohmann::json doc{{"base_mva", 100.0},
                       {"base_kv", 10.0},
                       {"buses", {{{"id", 1}, {"kind", "slack"}}, {{"id", 2}, {"kind", "pq"}}, {{"id", 3}, {"kind", "pq"}}}},
                       {"branches", {{{"from", 1}, {"to", 2}, {"r", 0.0}, {"x", z1}}, {{"from", 1}, {"to", 3}, {"r", 0.0}, {"x", z2}}}}};
    const Eigen::VectorXd w = sensitivity_weights(build_admittance(parse_case(doc)));
    REQUIRE(w.size() == 2);
    CHECK_THAT(w(0), WithinAbs(0.5, 1e-12));
    CHECK_THAT(w(1), WithinAbs(1.5, 1e-12));

    const NetworkCase net = testing::ieee33();
    const AdmittanceSet adm = build_admittance(net);
    const Eigen::VectorXd w33 = sensitivity_weights(adm);
    CHECK_THAT(w33.mean(), WithinAbs(1.0, 1e-12));
    // main feeder 2..18: electrical distance grows along the chain
    for (int i = 1; i < 17; ++i) CHECK(w33(i) > w33(i - 1));
}

TEST_CASE("physics loss") {
    const TrainStats identity;
    SECTION("flat start on the loaded two-bus case") {
        const NetworkCase net = testing::two_bus(0.1, 10.0);
        const AdmittanceSet adm = build_admittance(net);
        Eigen::VectorXcd flat = Eigen::VectorXcd::Ones(2);
        const Eigen::VectorXd w = sensitivity_weights(adm);
        const double l = physics_loss(encode(flat), identity, net.base_injections(), adm, w, 1.0);
        CHECK_THAT(l, WithinAbs(0.005, 1e-12));
        CHECK_THAT(physics_loss(encode(flat), identity, net.base_injections(), adm, 2.0 * w, 1.0),
                   WithinAbs(0.01, 1e-12));
    }
    SECTION("exact solution") {
        const NetworkCase net = testing::ieee33();
        const AdmittanceSet adm = build_admittance(net);
        const Eigen::VectorXcd s = net.base_injections();
        const IzrSolution sol = izr_solve(net, adm, s);
        RowMatrix grad;
        const double l = physics_loss(encode(sol.voltages), identity, s, adm, sensitivity_weights(adm), 1.0, 1.0, &grad);
        CHECK(l < 1e-10);
        CHECK(grad.row(0).isZero());
    }
}

TEST_CASE("decoded voltages are projected to the unit circle") {
    TrainStats stats;
    RowMatrix raw(3, 3);
    raw << 0.3, 0.1, 0.1, 1.02, 2.0, 0.0, 0.98, 0.0, -0.5;
    const PolarState st = derive_state(raw, stats, 3, 1.0);
    CHECK(st.vm(0) == 1.0);
    CHECK(st.va(0) == 0.0);
    CHECK_THAT(st.vm(1), WithinAbs(1.02, 1e-15));
    CHECK_THAT(st.va(1), WithinAbs(0.0, 1e-15));
    CHECK_THAT(st.va(2), WithinAbs(-std::numbers::pi / 2, 1e-15));
}

TEST_CASE("attention coefficients are a softmax over incoming edges") {
    Fixture fx;
    const ModelParams p = init_params(small_shape(), 7);
    RowMatrix x, y;
    Eigen::MatrixXcd s;
    const std::vector<int> ids{0, 1, 2};
    gather_batch(fx.set, ids, x, y, s);
    GatCache cache;
    static_cast<void>(gat_forward(p.layer1, fx.topo, x, 3, &cache));
    for (int g = 0; g < 3; ++g) {
        for (int i = 0; i < fx.topo.nodes; ++i) {
            for (int h = 0; h < p.layer1.heads; ++h) {
                double sum = 0.0;
                for (int k : fx.topo.incoming[i]) {
                    const double a = cache.alpha(g * fx.topo.edges() + k, h);
                    CHECK(a > 0.0);
                    sum += a;
                }
                CHECK(std::abs(sum - 1.0) < 1e-12);
            }
        }
    }
}

TEST_CASE("attention on hand-built graphs") {
    const ModelParams p = init_params(small_shape(), 3);
    const GatParams& l = p.layer1;
    SECTION("isolated node attends to itself") {
        GraphTopology topo;
        topo.nodes = 1;
        topo.src = {0};
        topo.dst = {0};
        topo.incoming = {{0}};
        topo.edge_attr = Eigen::MatrixXd::Zero(1, kEdgeFeatureCount);
        RowMatrix x(1, 3);
        x << 0.3, -0.2, 0.9;
        GatCache cache;
        const RowMatrix out = gat_forward(l, topo, x, 1, &cache);
        CHECK(cache.alpha(0, 0) == 1.0);
        RowMatrix expect = x * l.w_src;
        expect.rowwise() += l.b_src.row(0) + l.bias.row(0);
        CHECK((out - expect).cwiseAbs().maxCoeff() < 1e-14);
    }
    SECTION("identical neighbors split evenly") {
        GraphTopology topo;
        topo.nodes = 3;
        topo.src = {1, 2, 1, 2};
        topo.dst = {0, 0, 1, 2};
        topo.incoming = {{0, 1}, {2}, {3}};
        topo.edge_attr = Eigen::MatrixXd::Constant(4, kEdgeFeatureCount, 0.4);
        RowMatrix x(3, 3);
        x << 1.0, 2.0, 3.0, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5;
        GatCache cache;
        static_cast<void>(gat_forward(l, topo, x, 1, &cache));
        for (int h = 0; h < l.heads; ++h) {
            CHECK(cache.alpha(0, h) == 0.5);
            CHECK(cache.alpha(1, h) == 0.5);
        }
    }
}

TEST_CASE("forward pass shape and determinism") {
    Fixture fx;
    const ModelParams p = init_params(small_shape(), 11);
    RowMatrix x, y;
    Eigen::MatrixXcd s;
    const std::vector<int> ids{0, 1, 2, 3};
    gather_batch(fx.set, ids, x, y, s);
    CHECK(x.rows() == 4 * 5);
    CHECK(s.cols() == 4);

    const RowMatrix a = forward(p, fx.topo, x, 4, {}, nullptr);
    CHECK(a.rows() == 20);
    CHECK(a.cols() == 3);
    CHECK(a == forward(p, fx.topo, x, 4, {}, nullptr));

    // eval mode treats every graph independently
    const std::vector<int> one{2};
    RowMatrix x1, y1;
    Eigen::MatrixXcd s1;
    gather_batch(fx.set, one, x1, y1, s1);
    CHECK((forward(p, fx.topo, x1, 1, {}, nullptr) - a.middleRows(10, 5)).cwiseAbs().maxCoeff() < 1e-12);

    // training without dropout needs no generator and is repeatable
    ForwardOptions train;
    train.mode = Mode::train;
    CHECK(forward(p, fx.topo, x, 4, train, nullptr) == forward(p, fx.topo, x, 4, train, nullptr));

    ForwardOptions drop = train;
    drop.dropout = 0.5;
    std::mt19937_64 r1(5), r2(5);
    drop.rng = &r1;
    const RowMatrix d1 = forward(p, fx.topo, x, 4, drop, nullptr);
    drop.rng = &r2;
    CHECK(d1 == forward(p, fx.topo, x, 4, drop, nullptr));
    CHECK(d1 != forward(p, fx.topo, x, 4, train, nullptr));

    ForwardOptions eval_drop;
    eval_drop.dropout = 0.5;
    CHECK(forward(p, fx.topo, x, 4, eval_drop, nullptr) == a);
}

TEST_CASE("eval passes leave running statistics untouched") {
    Fixture fx;
    ModelParams p = init_params(small_shape(), 12);
    RowMatrix x, y;
    Eigen::MatrixXcd s;
    const std::vector<int> ids{0, 1};
    gather_batch(fx.set, ids, x, y, s);
    TrainConfig cfg = TrainConfig::desk();
    const ModelParams before = p;
    static_cast<void>(composite_loss(p, fx.topo, x, y, s, fx.adm, fx.weights, *fx.data.stats, 1.0, LossScale{}, cfg,
                                     ForwardOptions{}, true));
    CHECK(p.bn1.running_mean == before.bn1.running_mean);
    CHECK(p.bn2.running_var == before.bn2.running_var);
    ForwardOptions train;
    train.mode = Mode::train;
    static_cast<void>(composite_loss(p, fx.topo, x, y, s, fx.adm, fx.weights, *fx.data.stats, 1.0, LossScale{}, cfg,
                                     train, true));
    CHECK(p.bn1.running_mean != before.bn1.running_mean);
}

TEST_CASE("batch norm running statistics") {
    BatchNormParams bn;
    bn.gamma = Eigen::MatrixXd::Ones(1, 2);
    bn.beta = Eigen::MatrixXd::Zero(1, 2);
    bn.running_mean = Eigen::MatrixXd::Zero(1, 2);
    bn.running_var = Eigen::MatrixXd::Ones(1, 2);
    RowMatrix x(4, 2);
    x << 1, 10, 2, 10, 3, 10, 4, 10;
    BatchNormCache cache;
    const RowMatrix y = batchnorm_forward(bn, x, true, &cache);
    CHECK_THAT(y.col(0).mean(), WithinAbs(0.0, 1e-12));
    CHECK(y.col(1).isZero());
    update_running_stats(bn, cache);
    CHECK_THAT(bn.running_mean(0, 0), WithinAbs(0.25, 1e-15));
    CHECK_THAT(bn.running_mean(0, 1), WithinAbs(1.0, 1e-15));
    // unbiased variance of {1,2,3,4} is 5/3
    CHECK_THAT(bn.running_var(0, 0), WithinAbs(0.9 + 0.1 * 5.0 / 3.0, 1e-15));
    CHECK_THAT(bn.running_var(0, 1), WithinAbs(0.9, 1e-15));

    const RowMatrix e = batchnorm_forward(bn, x, false, nullptr);
    CHECK_THAT(e(0, 0), WithinAbs((1.0 - 0.25) / std::sqrt(bn.running_var(0, 0) + kBatchNormEps), 1e-12));
}

TEST_CASE("analytic gradient matches finite differences") {
    Fixture fx;
    ModelParams p = init_params(small_shape(), 21);
    RowMatrix x, y;
    Eigen::MatrixXcd s;
    const std::vector<int> ids{0, 3, 5, 7};
    gather_batch(fx.set, ids, x, y, s);
    TrainConfig cfg = TrainConfig::desk();
    cfg.shape = small_shape();
    LossScale scale{1.3, 40.0};
    ForwardOptions fwd;
    fwd.mode = Mode::train;
    const TrainStats& stats = *fx.data.stats;

    auto loss = [&](ModelParams& q) {
        return composite_loss(q, fx.topo, x, y, s, fx.adm, fx.weights, stats, 1.0, scale, cfg, fwd, false).total;
    };
    const LossEval analytic = composite_loss(p, fx.topo, x, y, s, fx.adm, fx.weights, stats, 1.0, scale, cfg, fwd, true);
    REQUIRE(analytic.physics > 0.0);

    std::vector<Eigen::MatrixXd*> tensors;
    std::vector<std::string> names;
    p.visit([&](const std::string& name, Eigen::MatrixXd& t) {
        tensors.push_back(&t);
        names.push_back(name);
    });
    std::vector<const Eigen::MatrixXd*> grads;
    analytic.grad.visit([&](const std::string&, const Eigen::MatrixXd& t) { grads.push_back(&t); });
    REQUIRE(grads.size() == tensors.size());

    const double h = 1e-5;
    for (std::size_t t = 0; t < tensors.size(); ++t) {
        Eigen::MatrixXd& w = *tensors[t];
        const Eigen::MatrixXd& g = *grads[t];
        REQUIRE(g.rows() == w.rows());
        REQUIRE(g.cols() == w.cols());
        const Eigen::Index stride = std::max<Eigen::Index>(1, w.size() / 12);
        double diff = 0.0;
        double norm = 0.0;
        for (Eigen::Index k = 0; k < w.size(); k += stride) {
            const double orig = w.data()[k];
            w.data()[k] = orig + h;
            const double up = loss(p);
            w.data()[k] = orig - h;
            const double down = loss(p);
            w.data()[k] = orig;
            const double fd = (up - down) / (2 * h);
            diff += (fd - g.data()[k]) * (fd - g.data()[k]);
            norm += std::max(fd * fd, g.data()[k] * g.data()[k]);
        }
        INFO(names[t]);
        if (norm > 1e-20) CHECK(std::sqrt(diff / norm) < 1e-4);
    }
}

TEST_CASE("gradient edge cases") {
    Fixture fx;
    ModelParams p = init_params(small_shape(), 4);
    TrainConfig cfg = TrainConfig::desk();
    cfg.shape = small_shape();
    const TrainStats& stats = *fx.data.stats;
    ForwardOptions eval;

    RowMatrix x, y;
    Eigen::MatrixXcd s;
    const std::vector<int> ids{1};
    gather_batch(fx.set, ids, x, y, s);

    SECTION("zero loss gives zero gradient") {
        const RowMatrix raw = forward(p, fx.topo, x, 1, eval, nullptr);
        const LossEval e = composite_loss(p, fx.topo, x, raw, s, fx.adm, fx.weights, stats, 1.0, LossScale{1.0, 0.0},
                                          cfg, eval, true);
        CHECK(e.data == 0.0);
        e.grad.visit([](const std::string&, const Eigen::MatrixXd& g) { CHECK(g.isZero()); });
    }
    SECTION("duplicated sample gives the same gradient") {
        const std::vector<int> twice{1, 1};
        RowMatrix x2, y2;
        Eigen::MatrixXcd s2;
        gather_batch(fx.set, twice, x2, y2, s2);
        const LossScale scale{1.0, 10.0};
        const LossEval a = composite_loss(p, fx.topo, x, y, s, fx.adm, fx.weights, stats, 1.0, scale, cfg, eval, true);
        const LossEval b = composite_loss(p, fx.topo, x2, y2, s2, fx.adm, fx.weights, stats, 1.0, scale, cfg, eval, true);
        CHECK_THAT(a.total, WithinRel(b.total, 1e-12));
        std::vector<Eigen::MatrixXd> ga, gb;
        a.grad.visit([&](const std::string&, const Eigen::MatrixXd& g) { ga.push_back(g); });
        b.grad.visit([&](const std::string&, const Eigen::MatrixXd& g) { gb.push_back(g); });
        for (std::size_t k = 0; k < ga.size(); ++k) CHECK((ga[k] - gb[k]).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("parameter count at full width") {
    const ModelParams p = init_params(ModelShape{}, 42);
    CHECK(p.parameter_count() >= 1'500'000);
    CHECK(p.parameter_count() <= 3'000'000);
    CHECK(p.layer3.heads == 1);
    CHECK(p.layer3.w_src.cols() == 3);
    std::size_t visited = 0;
    p.visit([&](const std::string&, const Eigen::MatrixXd& t) { visited += static_cast<std::size_t>(t.size()); });
    CHECK(visited == p.parameter_count());
}

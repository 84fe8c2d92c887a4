#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "hybridpf/checkpoint.hpp"
#include "support.hpp"

using namespace hybridpf;
using namespace hybridpf::gnn;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

Checkpoint ck(int epoch, double data, double pq) {
    Checkpoint c;
    c.epoch = epoch;
    c.raw_data = data;
    c.raw_pq = pq;
    return c;
}

bool mutually_nondominated(const std::vector<Checkpoint>& front) {
    for (const auto& a : front)
        for (const auto& b : front)
            if (dominates(a, b)) return false;
    return true;
}

TrainConfig tiny_config() {
    TrainConfig cfg = TrainConfig::desk();
    cfg.shape.hidden = 4;
    cfg.shape.heads = 2;
    cfg.epochs = 3;
    cfg.pretrain_epochs = 1;
    cfg.ramp_epochs = 1;
    cfg.warmup_epochs = 1;
    cfg.batch_size = 8;
    return cfg;
}

}  // namespace

TEST_CASE("annealing schedule") {
    const TrainConfig paper = TrainConfig::paper();
    CHECK(annealing_weight(10, paper) == 0.0);
    CHECK(annealing_weight(60, paper) == 5000.0);
    CHECK(annealing_weight(120, paper) == 10000.0);
    CHECK(annealing_weight(0, paper) == 0.0);
    CHECK(annealing_weight(40, paper) == 0.0);
    CHECK(annealing_weight(41, paper) == 250.0);
    CHECK(annealing_weight(80, paper) == 10000.0);
    const TrainConfig desk = TrainConfig::desk();
    CHECK(annealing_weight(desk.pretrain_epochs + desk.ramp_epochs, desk) == desk.w_pq_final);
    for (int e = 1; e < 200; ++e) CHECK(annealing_weight(e, paper) >= annealing_weight(e - 1, paper));
}

TEST_CASE("learning-rate schedule") {
    const TrainConfig cfg = TrainConfig::paper();
    CHECK_THAT(learning_rate(0, cfg), WithinRel(cfg.lr / 5, 1e-12));
    CHECK_THAT(learning_rate(4, cfg), WithinRel(cfg.lr, 1e-12));
    CHECK_THAT(learning_rate(5, cfg), WithinRel(cfg.lr, 1e-12));
    CHECK_THAT(learning_rate(cfg.epochs - 1, cfg), WithinRel(cfg.lr_floor, 1e-9));
    for (int e = 6; e < cfg.epochs; ++e) CHECK(learning_rate(e, cfg) <= learning_rate(e - 1, cfg));
}

TEST_CASE("configuration round-trip and validation") {
    TrainConfig cfg = TrainConfig::desk();
    cfg.physics = false;
    cfg.features.zbus_features = false;
    cfg.seed = 7;
    const TrainConfig back = train_config_from_json(to_json(cfg));
    CHECK(to_json(back) == to_json(cfg));
    CHECK_FALSE(back.physics);
    CHECK_FALSE(back.features.zbus_features);
    cfg.pretrain_epochs = 100;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    TrainConfig bad = TrainConfig::desk();
    bad.ema_decay = 1.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("composite loss and EMA scaling") {
    TrainConfig cfg = TrainConfig::paper();
    LossState state;
    state.update(1.0, 1.0, cfg.ema_decay);
    CHECK_THAT(total_loss(0.1, 0.001, state, 120, cfg), WithinAbs(10.1, 1e-12));
    CHECK(total_loss(0.1, 123.0, state, 10, cfg) == 0.1);

    LossState scaled = state;
    scaled.sigma2_data *= 4.0;
    scaled.sigma2_pq *= 4.0;
    CHECK_THAT(total_loss(0.1, 0.001, scaled, 120, cfg), WithinAbs(10.1 / 4.0, 1e-12));

    cfg.physics = false;
    CHECK(loss_scale(state, 120, cfg).pq == 0.0);

    LossState ema;
    ema.update(0.2, 0.0, 0.9);
    CHECK(ema.sigma2_data == 0.2);
    CHECK(ema.sigma2_pq == LossState::kFloor);
    ema.update(0.1, 0.5, 0.9);
    CHECK_THAT(ema.sigma2_data, WithinAbs(0.19, 1e-15));
    CHECK_THAT(ema.sigma2_pq, WithinAbs(0.9e-8 + 0.05, 1e-15));
}

TEST_CASE("AdamW first step") {
    ModelShape shape;
    shape.hidden = 2;
    shape.heads = 1;
    TrainConfig cfg = TrainConfig::desk();
    ModelParams p = init_params(shape, 1);
    ModelParams g = p.zeros_like();
    g.layer1.att(0, 0) = 3.0;
    const double before = p.layer1.att(0, 0);
    const double other = p.layer1.att(0, 1);
    AdamW opt(p, cfg);
    opt.step(p, g, 0.01);
    // bias-corrected first step moves by lr * sign(g), plus decoupled decay
    CHECK_THAT(p.layer1.att(0, 0), WithinAbs(before * (1 - 0.01 * 0.01) - 0.01 * 3.0 / (3.0 + 1e-8), 1e-12));
    CHECK_THAT(p.layer1.att(0, 1), WithinAbs(other * (1 - 0.01 * 0.01), 1e-15));
    CHECK(opt.steps() == 1);
}

TEST_CASE("Pareto admission") {
    CheckpointFront front;
    CHECK(front.offer_pareto(ck(0, 1.0, 1.0)));
    // worse data, better physics: does not dominate anything
    CHECK_FALSE(front.offer_pareto(ck(1, 1.2, 0.5)));
    CHECK_FALSE(front.offer_pareto(ck(2, 1.5, 1.5)));
    CHECK(front.offer_pareto(ck(3, 0.9, 1.0)));
    CHECK(front.pareto.size() == 1);
    CHECK(front.pareto[0].epoch == 3);

    const LossScale scale{1.0, 1.0};
    CHECK(front.offer_total(ck(3, 0.9, 1.0), scale));
    CHECK_FALSE(front.offer_total(ck(4, 1.2, 0.7), scale));
    CHECK(front.offer_total(ck(5, 0.5, 1.2), scale));
    CHECK(front.best_total->epoch == 5);

    CheckpointFront random_front;
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int e = 0; e < 200; ++e) {
        static_cast<void>(random_front.offer_pareto(ck(e, u(rng), u(rng))));
        REQUIRE(mutually_nondominated(random_front.pareto));
    }
}

TEST_CASE("final selection") {
    const LossScale scale{1.0, 0.0};
    CheckpointFront single;
    static_cast<void>(single.offer_pareto(ck(4, 0.3, 0.3)));
    CHECK(select_final(single, scale).epoch == 4);

    CheckpointFront two;
    two.pareto = {ck(1, 0.5, 0.1), ck(2, 0.4, 0.2)};
    CHECK(select_final(two, scale).epoch == 2);

    CheckpointFront tie;
    tie.pareto = {ck(6, 0.4, 0.1), ck(3, 0.4, 0.2)};
    CHECK(select_final(tie, scale).epoch == 3);

    CHECK_THROWS_AS(select_final(CheckpointFront{}, scale), std::invalid_argument);
}

TEST_CASE("short training run is deterministic and logs the schedule") {
    const NetworkCase net = testing::five_bus();
    const AdmittanceSet adm = build_admittance(net);
    GenConfig gen;
    gen.n_scenarios = 60;
    gen.jobs = 1;
    const Dataset data = generate_dataset(net, adm, gen);
    const TrainConfig cfg = tiny_config();

    const TrainResult a = train(data, net, adm, cfg);
    const TrainResult b = train(data, net, adm, cfg);
    std::ostringstream la, lb;
    write_training_log(la, a.log);
    write_training_log(lb, b.log);
    CHECK(la.str() == lb.str());
    REQUIRE(a.log.size() == 3);
    CHECK(a.log[0].w_pq == 0.0);
    CHECK(a.log[1].w_pq == 0.0);
    CHECK(a.log[2].w_pq == cfg.w_pq_final);
    CHECK(a.log[1].val_pq_scaled == 0.0);
    CHECK(a.log[2].val_pq_scaled > 0.0);
    CHECK(a.log[0].saved_best);
    CHECK(a.log[0].saved_pareto);
    CHECK(la.str().rfind("epoch,lr,w_pq,", 0) == 0);
    CHECK(a.final_epoch >= 0);

    std::vector<double> wa, wb;
    a.final_params.visit([&](const std::string&, const Eigen::MatrixXd& t) { wa.insert(wa.end(), t.data(), t.data() + t.size()); });
    b.final_params.visit([&](const std::string&, const Eigen::MatrixXd& t) { wb.insert(wb.end(), t.data(), t.data() + t.size()); });
    CHECK(wa == wb);
}

TEST_CASE("checkpoint round-trip") {
    const NetworkCase net = testing::five_bus();
    const AdmittanceSet adm = build_admittance(net);
    GenConfig gen;
    gen.n_scenarios = 20;
    gen.jobs = 1;
    const Dataset data = generate_dataset(net, adm, gen);

    ModelBundle bundle;
    bundle.config = tiny_config();
    bundle.params = init_params(bundle.config.shape, 5);
    bundle.params.bn1.running_mean.setConstant(0.25);
    bundle.params.bn2.running_var.setConstant(1.75);
    bundle.stats = *data.stats;
    bundle.case_name = net.name;
    bundle.case_checksum = case_checksum(net);
    bundle.epoch = 17;

    const auto dir = std::filesystem::temp_directory_path() / "hybridpf_ckpt_test";
    std::filesystem::create_directories(dir);
    save_checkpoint(dir / "m.ckpt", bundle);
    const ModelBundle back = load_checkpoint(dir / "m.ckpt");
    CHECK(back.epoch == 17);
    CHECK(back.case_checksum == bundle.case_checksum);
    CHECK(to_json(back.config) == to_json(bundle.config));
    CHECK(back.stats.feature_p995 == bundle.stats.feature_p995);
    CHECK(back.params.bn1.running_mean == bundle.params.bn1.running_mean);
    CHECK(back.params.bn2.running_var == bundle.params.bn2.running_var);
    std::vector<Eigen::MatrixXd> ta, tb;
    bundle.params.visit([&](const std::string&, const Eigen::MatrixXd& t) { ta.push_back(t); });
    back.params.visit([&](const std::string&, const Eigen::MatrixXd& t) { tb.push_back(t); });
    REQUIRE(ta.size() == tb.size());
    for (std::size_t k = 0; k < ta.size(); ++k) CHECK(ta[k] == tb[k]);

    const Predictor p1(bundle, net, adm);
    const Predictor p2(back, net, adm);
    CHECK(p1.predict(net.base_injections()).raw == p2.predict(net.base_injections()).raw);

    std::ofstream(dir / "junk.ckpt") << "not a checkpoint";
    CHECK_THROWS_AS(load_checkpoint(dir / "junk.ckpt"), CheckpointError);
    CHECK_THROWS_AS(load_checkpoint(dir / "absent.ckpt"), CheckpointError);
    std::filesystem::remove_all(dir);
}

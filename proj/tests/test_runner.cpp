#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <unistd.h>

#include "trajlab/runner.hpp"

using namespace trajlab;
namespace fs = std::filesystem;

namespace {

// Small config used across the loop tests: ~1.4k parameters, cheap steps.
TrainConfig tiny_config() {
    TrainConfig c;
    c.model.vocab_size = 8;
    c.model.context_k = 2;
    c.model.embed_dim = 8;
    c.model.num_blocks = 1;
    c.model.hidden_mult = 2;
    c.data.seed = 11;
    c.data.vocab = 8;
    c.data.order = 1;
    c.data.concentration = 0.4;
    c.optim.peak_lr = 0.02;
    c.optim.weight_decay = 0.1;
    c.lr_kind = LrSchedule::Kind::Constant;
    c.warmup_tokens = 240;
    c.bs.kind = BsSchedule::Kind::Fixed;
    c.bs.batch = 8;
    c.total_tokens = 6000;
    c.eval_every_tokens = 1500;
    c.log_every_steps = 5;
    c.run_seed = 3;
    c.gns.enabled = true;
    c.gns.micro_divisor = 8;
    c.gns.ema_halflife_steps = 20.0;
    return c;
}

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("trajlab-test-" + std::to_string(::getpid()) + "-" +
                std::to_string(reinterpret_cast<std::uintptr_t>(this)));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::vector<std::string> lines_of(const RunRecord& rec) {
    std::vector<std::string> out;
    for (const auto& p : rec.points) out.push_back(metric_line(p));
    return out;
}

} // namespace

TEST_CASE("metric lines carry exactly the required keys, in order") {
    MetricPoint p;
    p.iter = 7;
    p.tokens = 420;
    p.train_loss = 1.5;
    p.lr = 0.25;
    p.batch_size = 8;
    p.param_norm = 3.5;
    p.gns_valid = false;
    p.clip_scale = 1.0;
    const std::string line = metric_line(p);
    CHECK(line ==
          "{\"iter\":7,\"tokens\":420,\"train_loss\":1.5,\"val_loss\":null,\"lr\":0.25,"
          "\"batch_size\":8,\"param_norm\":3.5,\"gns_tr_noise\":null,\"gns_gnorm2\":null,"
          "\"gns_b_precond\":null,\"gns_valid\":false,\"clip_scale\":1}");
    MetricPoint q = metric_from_line(line);
    CHECK(q.iter == p.iter);
    CHECK(q.tokens == p.tokens);
    CHECK(q.train_loss == p.train_loss);
    CHECK_FALSE(q.val_loss.has_value());
    CHECK(q.lr == p.lr);
    CHECK(q.clip_scale == 1.0);
}

TEST_CASE("config hash is stable and sensitive") {
    auto a = tiny_config();
    auto b = tiny_config();
    CHECK(config_hash_hex(a) == config_hash_hex(b));
    b.optim.peak_lr *= 2.0;
    CHECK(config_hash_hex(a) != config_hash_hex(b));
    // Round trip through JSON preserves the hash.
    auto c = config_from_json_string(config_to_json_string(a));
    CHECK(config_hash_hex(c) == config_hash_hex(a));
}

TEST_CASE("train: repeated invocations are bitwise identical") {
    const auto cfg = tiny_config();
    auto r1 = train(cfg);
    auto r2 = train(cfg);
    REQUIRE(r1.points.size() == r2.points.size());
    CHECK(lines_of(r1) == lines_of(r2));
    CHECK(r1.status == RunStatus::Completed);
}

TEST_CASE("train: eta = 0 leaves parameters untouched") {
    auto cfg = tiny_config();
    cfg.optim.peak_lr = 0.0;
    auto rec = train(cfg);
    REQUIRE(rec.points.size() >= 2);
    const double norm0 = rec.points.front().param_norm;
    const double loss0 = *rec.points.front().train_loss;
    for (const auto& p : rec.points) {
        CHECK(p.param_norm == norm0);
        CHECK(std::abs(*p.train_loss - loss0) < 0.5); // batch noise only
        CHECK(p.lr == 0.0);
    }
}

TEST_CASE("train: convex stand-in reaches the entropy floor") {
    // ~168-parameter linear model (no blocks) on a 2-state order-1 chain.
    TrainConfig c;
    c.model.vocab_size = 2;
    c.model.context_k = 2;
    c.model.embed_dim = 8;
    c.model.num_blocks = 0;
    c.data.seed = 5;
    c.data.vocab = 2;
    c.data.order = 1;
    c.data.concentration = 0.5;
    c.optim.peak_lr = 0.03;
    c.optim.weight_decay = 0.0;
    c.lr_kind = LrSchedule::Kind::Constant;
    c.warmup_tokens = 2000;
    c.bs.kind = BsSchedule::Kind::Fixed;
    c.bs.batch = 8;
    c.total_tokens = 100'000;
    c.eval_every_tokens = 10'000;
    c.log_every_steps = 200;
    c.run_seed = 1;
    c.gns.enabled = true;

    ParamSet probe = ParamSet::zeros(c.model);
    CHECK(probe.total_parameters() == 168);

    const auto source = build_source(c.data.seed, c.data.vocab, c.data.order, c.data.concentration);
    const double floor = entropy_floor(source);
    auto rec = train(c);
    REQUIRE(rec.status == RunStatus::Completed);

    double final_val = 0.0;
    bool saw_val = false;
    for (const auto& p : rec.points) {
        if (!p.val_loss) continue;
        saw_val = true;
        final_val = *p.val_loss;
        // The conditional entropy bounds the loss in expectation; on a finite
        // validation sample the realized loss fluctuates around it, so allow
        // a few standard errors of slack.
        CHECK(*p.val_loss >= floor - 0.01);
    }
    REQUIRE(saw_val);
    CHECK(final_val <= floor + 0.01);
}

TEST_CASE("registry: checkpoint round-trip continues bitwise") {
    TempDir tmp;
    Registry reg(tmp.path);
    auto cfg = tiny_config();
    cfg.checkpoint_every_tokens = 3000;
    auto full = reg.execute(cfg);
    REQUIRE(full.status == RunStatus::Completed);

    const auto ckpt = reg.run_dir(full.hash) / "checkpoints" / "ckpt_3000.tjl1";
    REQUIRE(fs::exists(ckpt));
    auto resumed = reg.execute_resume(cfg, ckpt, ResumeOverrides{});
    CHECK(resumed.hash != full.hash); // provenance tag changes the identity

    // Continuation lines must equal the tail of the uninterrupted run.
    std::vector<std::string> tail;
    for (const auto& p : full.points)
        if (p.tokens > 3000) tail.push_back(metric_line(p));
    CHECK(lines_of(resumed) == tail);

    // Final parameters agree bitwise.
    auto ck_full = load_run_checkpoint(reg.run_dir(full.hash) / "checkpoints" / "final.tjl1",
                                       cfg.model);
    auto ck_res = load_run_checkpoint(reg.run_dir(resumed.hash) / "checkpoints" / "final.tjl1",
                                      cfg.model);
    for (std::size_t t = 0; t < ck_full.params.tensors().size(); ++t)
        CHECK(ck_full.params.tensors()[t].value.raw() == ck_res.params.tensors()[t].value.raw());
}

TEST_CASE("registry: resume with a new eta applies it immediately") {
    TempDir tmp;
    Registry reg(tmp.path);
    auto cfg = tiny_config();
    cfg.checkpoint_every_tokens = 3000;
    auto full = reg.execute(cfg);
    const auto ckpt = reg.run_dir(full.hash) / "checkpoints" / "ckpt_3000.tjl1";

    ResumeOverrides o;
    o.lr = 0.005;
    o.extra_tokens = 2000;
    auto resumed = reg.execute_resume(cfg, ckpt, o);
    REQUIRE(!resumed.points.empty());
    CHECK(resumed.points.front().lr == 0.005); // no re-warmup
    CHECK(resumed.points.back().tokens <= 5000);
    CHECK(resumed.config.optim.peak_lr == 0.005);
}

TEST_CASE("bare parameter blobs round-trip and reject corruption") {
    TempDir tmp;
    ModelConfig mc;
    mc.vocab_size = 8;
    mc.context_k = 2;
    mc.embed_dim = 6;
    mc.num_blocks = 1;
    auto p = ParamSet::random_init(mc, 21);
    const auto path = tmp.path / "params.tjl1";
    save_params(path, p);
    auto q = load_params(path, mc);
    for (std::size_t t = 0; t < p.tensors().size(); ++t)
        CHECK(p.tensors()[t].value.raw() == q.tensors()[t].value.raw());

    // Wrong model shape is a load error, not a crash.
    ModelConfig other = mc;
    other.embed_dim = 8;
    CHECK_THROWS_AS(load_params(path, other), InputError);

    // A flipped byte fails the integrity check.
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(40);
    char b = 0x7F;
    f.write(&b, 1);
    f.close();
    CHECK_THROWS_AS(load_params(path, mc), IntegrityError);
}

TEST_CASE("checkpoint corruption is detected, nothing partial is loaded") {
    TempDir tmp;
    Registry reg(tmp.path);
    auto cfg = tiny_config();
    auto rec = reg.execute(cfg);
    const auto ckpt = reg.run_dir(rec.hash) / "checkpoints" / "final.tjl1";
    REQUIRE(fs::exists(ckpt));

    // Flip one byte in the middle of the file.
    std::fstream f(ckpt, std::ios::in | std::ios::out | std::ios::binary);
    f.seekg(0, std::ios::end);
    const auto size = static_cast<long>(f.tellg());
    f.seekp(size / 2);
    char b;
    f.seekg(size / 2);
    f.read(&b, 1);
    b = static_cast<char>(b ^ 0x40);
    f.seekp(size / 2);
    f.write(&b, 1);
    f.close();

    CHECK_THROWS_AS(load_run_checkpoint(ckpt, cfg.model), IntegrityError);
}

TEST_CASE("checkpoint shape mismatch with an override config is a load error") {
    TempDir tmp;
    Registry reg(tmp.path);
    auto cfg = tiny_config();
    auto rec = reg.execute(cfg);
    const auto ckpt = reg.run_dir(rec.hash) / "checkpoints" / "final.tjl1";
    auto other = cfg.model;
    other.embed_dim = 12;
    CHECK_THROWS_AS(load_run_checkpoint(ckpt, other), InputError);
}

TEST_CASE("sweep: grid executes, skips, and refills") {
    TempDir tmp;
    Registry reg(tmp.path);
    SweepSpec spec;
    spec.base = tiny_config();
    spec.base.total_tokens = 2400;
    spec.etas = {0.01, 0.02};
    spec.lambdas = {0.05, 0.1};

    auto first = run_sweep(reg, spec);
    REQUIRE(first.size() == 4);
    std::set<std::string> hashes;
    for (const auto& r : first) {
        CHECK_FALSE(r.skipped);
        hashes.insert(r.hash);
    }
    CHECK(hashes.size() == 4);

    auto second = run_sweep(reg, spec);
    for (const auto& r : second) CHECK(r.skipped);

    // Deleting one record re-executes only that cell.
    fs::remove_all(reg.run_dir(first[2].hash));
    auto third = run_sweep(reg, spec);
    int executed = 0;
    for (const auto& r : third)
        if (!r.skipped) ++executed;
    CHECK(executed == 1);
}

TEST_CASE("sweep: parallel and serial execution write identical logs") {
    TempDir a, b;
    Registry rega(a.path), regb(b.path);
    SweepSpec spec;
    spec.base = tiny_config();
    spec.base.total_tokens = 2400;
    spec.etas = {0.01, 0.02};
    spec.lambdas = {0.05, 0.1};
    spec.threads = 1;
    run_sweep(rega, spec);
    spec.threads = 4;
    run_sweep(regb, spec);
    for (const auto& hash : rega.list_hashes()) {
        auto ra = rega.load_run(hash);
        auto rb = regb.load_run(hash);
        CHECK(lines_of(ra) == lines_of(rb));
    }
}

TEST_CASE("type-2 schedule switches the batch size inside one run") {
    auto cfg = tiny_config();
    cfg.bs.kind = BsSchedule::Kind::Type2Switch;
    cfg.bs.b_small = 4;
    cfg.bs.b_large = 16;
    cfg.bs.switch_tokens = 3000;
    cfg.log_every_steps = 1;
    auto rec = train(cfg);
    REQUIRE(rec.status == RunStatus::Completed);
    std::uint64_t prev_tokens = 0;
    for (const auto& p : rec.points) {
        const std::uint64_t step_tokens = p.tokens - prev_tokens;
        const std::size_t expect = prev_tokens >= 3000 ? 16 : 4;
        CHECK(p.batch_size == expect);
        CHECK(step_tokens == expect * 3); // k+1 = 3 tokens per example
        prev_tokens = p.tokens;
    }
    CHECK(rec.points.back().batch_size == 16);
}

TEST_CASE("sweep with a resume checkpoint realizes the type-1 scheduler") {
    TempDir tmp;
    Registry reg(tmp.path);

    // Source run at a small batch, checkpointed mid-way.
    auto source = tiny_config();
    source.checkpoint_every_tokens = 3000;
    auto src_rec = reg.execute(source);
    const auto ckpt = reg.run_dir(src_rec.hash) / "checkpoints" / "ckpt_3000.tjl1";
    REQUIRE(fs::exists(ckpt));

    // Large-batch cells resumed from that checkpoint over an (eta, lambda) grid.
    SweepSpec spec;
    spec.base = tiny_config();
    spec.base.bs.batch = 16;
    spec.base.warmup_tokens = 0; // the source checkpoint is past warmup
    spec.etas = {0.005, 0.01};
    spec.lambdas = {0.1};
    spec.resume_checkpoint = ckpt.string();
    spec.resume_extra_tokens = 2400;
    auto results = run_sweep(reg, spec);
    REQUIRE(results.size() == 2);
    for (const auto& r : results) {
        CHECK(r.status == RunStatus::Completed);
        auto rec = reg.load_run(r.hash);
        CHECK(rec.config.resume_from == src_rec.hash + "@3000");
        CHECK(rec.config.total_tokens == 3000 + 2400);
        REQUIRE(!rec.points.empty());
        CHECK(rec.points.front().lr == r.eta); // applied immediately, no re-warmup
        CHECK(rec.points.front().batch_size == 16);
        CHECK(rec.points.front().tokens > 3000);
    }
}

TEST_CASE("divergence is recorded, not fatal to the sweep") {
    TempDir tmp;
    Registry reg(tmp.path);
    SweepSpec spec;
    spec.base = tiny_config();
    spec.base.total_tokens = 6000;
    // An absurd learning rate blows the loss past 10x its initial value.
    spec.etas = {0.02, 300.0};
    spec.lambdas = {0.1};
    auto results = run_sweep(reg, spec);
    REQUIRE(results.size() == 2);
    int diverged = 0;
    for (const auto& r : results)
        if (r.status == RunStatus::Diverged) ++diverged;
    CHECK(diverged == 1);
    // The diverged run keeps its partial record on disk.
    for (const auto& r : results) {
        if (r.status != RunStatus::Diverged) continue;
        auto rec = reg.load_run(r.hash);
        CHECK(rec.status == RunStatus::Diverged);
    }
}

TEST_CASE("parameter norm equilibrium is ordered by eta/lambda") {
    // Three-point ordinal check of ||w|| ~ sqrt(eta/lambda) at equilibrium.
    auto run_final_norm = [](double eta, double lambda) {
        auto cfg = tiny_config();
        cfg.optim.peak_lr = eta;
        cfg.optim.weight_decay = lambda;
        cfg.warmup_tokens = 240;
        cfg.total_tokens = 60'000;
        cfg.eval_every_tokens = 30'000;
        cfg.log_every_steps = 100;
        auto rec = train(cfg);
        REQUIRE(rec.status == RunStatus::Completed);
        return rec.points.back().param_norm;
    };
    const double lo = run_final_norm(0.01, 0.4);  // eta/lambda = 0.025
    const double mid = run_final_norm(0.05, 0.1); // eta/lambda = 0.5
    const double hi = run_final_norm(0.1, 0.02);  // eta/lambda = 5
    CHECK(lo < mid);
    CHECK(mid < hi);
}

TEST_CASE("classify_batch_regime adapts run records") {
    RunRecord rec;
    for (int i = 0; i < 5; ++i) {
        MetricPoint p;
        p.batch_size = 8;
        p.gns_valid = true;
        p.gns_b_precond = 100.0;
        rec.points.push_back(p);
    }
    CHECK(classify_batch_regime(rec) == BatchRegime::Small);
}

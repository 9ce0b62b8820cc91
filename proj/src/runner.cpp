#include "trajlab/runner.hpp"

#include <atomic>
#include <charconv>
#include <cmath>
#include <fstream>
#include <mutex>
#include <thread>
#include <unistd.h>

#include "json.hpp"

namespace trajlab {

namespace {

using nlohmann::json;

std::uint64_t mix_seed(std::uint64_t base, const char* tag) {
    const std::string s = std::string(tag) + ":" + std::to_string(base);
    return fnv1a64(s);
}

void append_json_double(std::string& out, double v) {
    if (!std::isfinite(v)) {
        out += "null";
        return;
    }
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    out.append(buf, res.ptr);
}

void append_opt(std::string& out, const std::optional<double>& v) {
    if (v)
        append_json_double(out, *v);
    else
        out += "null";
}

} // namespace

// ----------------------------- TrainConfig -----------------------------

LrSchedule TrainConfig::lr_schedule() const {
    LrSchedule s;
    s.kind = lr_kind;
    s.peak_lr = optim.peak_lr;
    s.warmup_tokens = warmup_tokens;
    s.total_tokens = total_tokens;
    s.decay_tokens = decay_tokens;
    return s;
}

void TrainConfig::validate() const {
    model.validate();
    optim.validate();
    bs.validate();
    lr_schedule().validate();
    if (data.vocab != model.vocab_size)
        throw InputError("TrainConfig: data vocab and model vocab_size must agree");
    if (data.order < 1) throw InputError("TrainConfig: data order must be at least 1");
    if (!(data.concentration > 0.0))
        throw InputError("TrainConfig: data concentration must be positive");
    if (total_tokens == 0) throw InputError("TrainConfig: total_tokens must be positive");
    if (total_tokens <= warmup_tokens)
        throw InputError("TrainConfig: total_tokens must exceed warmup_tokens");
    if (eval_every_tokens == 0) throw InputError("TrainConfig: eval_every_tokens must be positive");
    if (log_every_steps == 0) throw InputError("TrainConfig: log_every_steps must be positive");
    if (gns.micro_divisor < 2) throw InputError("TrainConfig: gns micro_divisor must be at least 2");
    if (!(gns.ema_halflife_steps >= 1.0))
        throw InputError("TrainConfig: gns halflife must be at least one step");
}

namespace {

json config_to_json(const TrainConfig& c) {
    json j;
    j["model"] = {{"vocab_size", c.model.vocab_size},
                  {"context_k", c.model.context_k},
                  {"embed_dim", c.model.embed_dim},
                  {"num_blocks", c.model.num_blocks},
                  {"hidden_mult", c.model.hidden_mult},
                  {"rmsnorm_eps", c.model.rmsnorm_eps},
                  {"init_sigma", c.model.init_sigma}};
    j["data"] = {{"seed", c.data.seed},
                 {"vocab_size", c.data.vocab},
                 {"order", c.data.order},
                 {"concentration", c.data.concentration}};
    const char* mask = c.optim.decay_mask == OptimConfig::DecayMask::All
                           ? "all"
                           : c.optim.decay_mask == OptimConfig::DecayMask::None ? "none"
                                                                               : "weights";
    j["optim"] = {{"peak_lr", c.optim.peak_lr},
                  {"weight_decay", c.optim.weight_decay},
                  {"beta1", c.optim.beta1},
                  {"beta2", c.optim.beta2},
                  {"adam_eps", c.optim.adam_eps},
                  {"clip_norm", c.optim.clip_norm},
                  {"decay_mask", mask}};
    j["lr_schedule"] = {{"kind", c.lr_kind == LrSchedule::Kind::Wsd ? "wsd" : "constant"},
                        {"warmup_tokens", c.warmup_tokens},
                        {"decay_tokens", c.decay_tokens}};
    if (c.bs.kind == BsSchedule::Kind::Fixed) {
        j["bs_schedule"] = {{"kind", "fixed"}, {"batch", c.bs.batch}};
    } else {
        j["bs_schedule"] = {{"kind", "type2_switch"},
                            {"b_small", c.bs.b_small},
                            {"b_large", c.bs.b_large},
                            {"switch_tokens", c.bs.switch_tokens}};
    }
    j["total_tokens"] = c.total_tokens;
    j["eval_every_tokens"] = c.eval_every_tokens;
    j["log_every_steps"] = c.log_every_steps;
    j["checkpoint_every_tokens"] = c.checkpoint_every_tokens;
    j["run_seed"] = c.run_seed;
    j["gns"] = {{"enabled", c.gns.enabled},
                {"micro_divisor", c.gns.micro_divisor},
                {"ema_halflife_steps", c.gns.ema_halflife_steps}};
    j["resume_from"] = c.resume_from;
    return j;
}

TrainConfig config_from_json(const json& j) {
    TrainConfig c;
    const auto& m = j.at("model");
    c.model.vocab_size = m.at("vocab_size").get<int>();
    c.model.context_k = m.at("context_k").get<int>();
    c.model.embed_dim = m.at("embed_dim").get<int>();
    c.model.num_blocks = m.at("num_blocks").get<int>();
    c.model.hidden_mult = m.at("hidden_mult").get<int>();
    c.model.rmsnorm_eps = m.at("rmsnorm_eps").get<double>();
    c.model.init_sigma = m.at("init_sigma").get<double>();

    const auto& d = j.at("data");
    c.data.seed = d.at("seed").get<std::uint64_t>();
    c.data.vocab = d.at("vocab_size").get<int>();
    c.data.order = d.at("order").get<int>();
    c.data.concentration = d.at("concentration").get<double>();

    const auto& o = j.at("optim");
    c.optim.peak_lr = o.at("peak_lr").get<double>();
    c.optim.weight_decay = o.at("weight_decay").get<double>();
    c.optim.beta1 = o.at("beta1").get<double>();
    c.optim.beta2 = o.at("beta2").get<double>();
    c.optim.adam_eps = o.at("adam_eps").get<double>();
    c.optim.clip_norm = o.at("clip_norm").get<double>();
    const std::string mask = o.at("decay_mask").get<std::string>();
    if (mask == "all")
        c.optim.decay_mask = OptimConfig::DecayMask::All;
    else if (mask == "none")
        c.optim.decay_mask = OptimConfig::DecayMask::None;
    else if (mask == "weights")
        c.optim.decay_mask = OptimConfig::DecayMask::Weights;
    else
        throw InputError("config: unknown decay_mask \"" + mask + "\"");

    const auto& ls = j.at("lr_schedule");
    const std::string kind = ls.at("kind").get<std::string>();
    if (kind == "wsd")
        c.lr_kind = LrSchedule::Kind::Wsd;
    else if (kind == "constant")
        c.lr_kind = LrSchedule::Kind::Constant;
    else
        throw InputError("config: unknown lr schedule kind \"" + kind + "\"");
    c.warmup_tokens = ls.at("warmup_tokens").get<std::uint64_t>();
    c.decay_tokens = ls.at("decay_tokens").get<std::uint64_t>();

    const auto& bs = j.at("bs_schedule");
    const std::string bkind = bs.at("kind").get<std::string>();
    if (bkind == "fixed") {
        c.bs.kind = BsSchedule::Kind::Fixed;
        c.bs.batch = bs.at("batch").get<std::size_t>();
    } else if (bkind == "type2_switch") {
        c.bs.kind = BsSchedule::Kind::Type2Switch;
        c.bs.b_small = bs.at("b_small").get<std::size_t>();
        c.bs.b_large = bs.at("b_large").get<std::size_t>();
        c.bs.switch_tokens = bs.at("switch_tokens").get<std::uint64_t>();
    } else {
        throw InputError("config: unknown bs schedule kind \"" + bkind + "\"");
    }

    c.total_tokens = j.at("total_tokens").get<std::uint64_t>();
    c.eval_every_tokens = j.at("eval_every_tokens").get<std::uint64_t>();
    c.log_every_steps = j.at("log_every_steps").get<std::uint64_t>();
    c.checkpoint_every_tokens = j.at("checkpoint_every_tokens").get<std::uint64_t>();
    c.run_seed = j.at("run_seed").get<std::uint64_t>();

    const auto& g = j.at("gns");
    c.gns.enabled = g.at("enabled").get<bool>();
    c.gns.micro_divisor = g.at("micro_divisor").get<int>();
    c.gns.ema_halflife_steps = g.at("ema_halflife_steps").get<double>();

    c.resume_from = j.value("resume_from", std::string());
    return c;
}

} // namespace

std::string config_to_json_string(const TrainConfig& cfg) {
    return config_to_json(cfg).dump(2) + "\n";
}

TrainConfig config_from_json_string(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw IoError(std::string("config: invalid JSON: ") + e.what());
    }
    return config_from_json(j);
}

std::string config_hash_hex(const TrainConfig& cfg) {
    // Canonical form: compact dump with sorted keys (nlohmann orders keys).
    return hash_hex(fnv1a64(config_to_json(cfg).dump()));
}

// ----------------------------- metric lines -----------------------------

std::string metric_line(const MetricPoint& p) {
    std::string s;
    s.reserve(256);
    s += "{\"iter\":";
    s += std::to_string(p.iter);
    s += ",\"tokens\":";
    s += std::to_string(p.tokens);
    s += ",\"train_loss\":";
    append_opt(s, p.train_loss);
    s += ",\"val_loss\":";
    append_opt(s, p.val_loss);
    s += ",\"lr\":";
    append_json_double(s, p.lr);
    s += ",\"batch_size\":";
    s += std::to_string(p.batch_size);
    s += ",\"param_norm\":";
    append_json_double(s, p.param_norm);
    s += ",\"gns_tr_noise\":";
    append_opt(s, p.gns_tr_noise);
    s += ",\"gns_gnorm2\":";
    append_opt(s, p.gns_gnorm2);
    s += ",\"gns_b_precond\":";
    append_opt(s, p.gns_b_precond);
    s += ",\"gns_valid\":";
    s += p.gns_valid ? "true" : "false";
    s += ",\"clip_scale\":";
    append_json_double(s, p.clip_scale);
    s += "}";
    return s;
}

MetricPoint metric_from_line(const std::string& line) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::exception& e) {
        throw IoError(std::string("metric log: invalid line: ") + e.what());
    }
    auto opt = [&](const char* key) -> std::optional<double> {
        const auto& v = j.at(key);
        if (v.is_null()) return std::nullopt;
        return v.get<double>();
    };
    MetricPoint p;
    p.iter = j.at("iter").get<std::uint64_t>();
    p.tokens = j.at("tokens").get<std::uint64_t>();
    p.train_loss = opt("train_loss");
    p.val_loss = opt("val_loss");
    p.lr = j.at("lr").get<double>();
    p.batch_size = j.at("batch_size").get<std::size_t>();
    p.param_norm = j.at("param_norm").get<double>();
    p.gns_tr_noise = opt("gns_tr_noise");
    p.gns_gnorm2 = opt("gns_gnorm2");
    p.gns_b_precond = opt("gns_b_precond");
    p.gns_valid = j.at("gns_valid").get<bool>();
    p.clip_scale = j.at("clip_scale").get<double>();
    return p;
}

const char* run_status_name(RunStatus s) {
    return s == RunStatus::Completed ? "completed" : "diverged";
}

// ----------------------------- training loop -----------------------------

namespace {

TokenBatch slice_batch(const TokenBatch& b, std::size_t start, std::size_t count) {
    TokenBatch out;
    out.batch = count;
    out.k = b.k;
    const auto k = static_cast<std::size_t>(b.k);
    out.inputs.assign(b.inputs.begin() + static_cast<std::ptrdiff_t>(start * k),
                      b.inputs.begin() + static_cast<std::ptrdiff_t>((start + count) * k));
    out.targets.assign(b.targets.begin() + static_cast<std::ptrdiff_t>(start),
                       b.targets.begin() + static_cast<std::ptrdiff_t>(start + count));
    out.token_count = b.token_count;
    return out;
}

// grads = wa * a + wb * b, elementwise over the whole tensor set.
ParamSet combine_grads(const ParamSet& a, double wa, const ParamSet& b, double wb) {
    ParamSet out = a.zeros_like();
    for (std::size_t t = 0; t < a.tensors().size(); ++t) {
        const auto& ra = a.tensors()[t].value.raw();
        const auto& rb = b.tensors()[t].value.raw();
        auto& ro = out.tensors()[t].value.raw();
        for (std::size_t i = 0; i < ra.size(); ++i) ro[i] = wa * ra[i] + wb * rb[i];
    }
    return out;
}

RunRecord train_core(const TrainConfig& cfg, const RunCheckpoint* start, const TrainHooks& hooks) {
    cfg.validate();

    const auto source =
        build_source(cfg.data.seed, cfg.data.vocab, cfg.data.order, cfg.data.concentration);
    MarkovStream stream(source, mix_seed(cfg.data.seed, "train-stream"));
    MarkovStream val_stream(source, mix_seed(cfg.data.seed, "val-stream"));
    const TokenBatch val_set = val_stream.next_batch(kValExamples, cfg.model.context_k);

    ParamSet params = ParamSet::random_init(cfg.model, mix_seed(cfg.run_seed, "param-init"));
    AdamState adam = AdamState::init(params);
    GnsSmoother smoother(cfg.gns.ema_halflife_steps);
    std::uint64_t iter = 0, tokens = 0;
    double initial_loss = 0.0;
    bool has_initial = false;

    if (start) {
        params = start->params;
        adam.m = start->adam_m;
        adam.v = start->adam_v;
        adam.step = start->adam_step;
        stream.restore(start->stream);
        smoother.restore(start->gns);
        iter = start->iter;
        tokens = start->tokens_consumed;
        initial_loss = start->initial_loss;
        has_initial = start->has_initial_loss;
    }

    RunRecord rec;
    rec.config = cfg;
    rec.hash = config_hash_hex(cfg);
    rec.status = RunStatus::Completed;

    const LrSchedule sched = cfg.lr_schedule();
    const auto per_example = static_cast<std::uint64_t>(cfg.model.context_k) + 1;
    const std::uint64_t config_hash_value = fnv1a64(config_to_json(cfg).dump());

    auto snapshot = [&]() {
        RunCheckpoint ck;
        ck.config_hash = config_hash_value;
        ck.iter = iter;
        ck.tokens_consumed = tokens;
        ck.adam_step = adam.step;
        ck.initial_loss = initial_loss;
        ck.has_initial_loss = has_initial;
        ck.params = params;
        ck.adam_m = adam.m;
        ck.adam_v = adam.v;
        ck.stream = stream.state();
        ck.gns = smoother.state();
        return ck;
    };

    std::uint64_t next_eval = (tokens / cfg.eval_every_tokens + 1) * cfg.eval_every_tokens;
    std::uint64_t next_ckpt =
        cfg.checkpoint_every_tokens > 0
            ? (tokens / cfg.checkpoint_every_tokens + 1) * cfg.checkpoint_every_tokens
            : 0;

    while (true) {
        const std::size_t batch_size = batch_size_at(cfg.bs, tokens);
        const std::uint64_t step_tokens = static_cast<std::uint64_t>(batch_size) * per_example;
        if (tokens + step_tokens > cfg.total_tokens) break;

        const TokenBatch batch = stream.next_batch(batch_size, cfg.model.context_k);
        const std::uint64_t tokens_after = tokens + step_tokens;
        const double lr_t = lr_at(sched, tokens_after);

        double train_loss = 0.0;
        ParamSet grads;
        RawGnsEstimate raw{};
        bool have_gns = false;
        try {
            if (cfg.gns.enabled && batch_size >= 2) {
                const std::size_t b_small = std::max<std::size_t>(
                    1, batch_size / static_cast<std::size_t>(cfg.gns.micro_divisor));
                const TokenBatch micro = slice_batch(batch, 0, b_small);
                const TokenBatch rest = slice_batch(batch, b_small, batch_size - b_small);
                auto rm = forward(params, micro);
                auto gm = backward(params, rm.cache);
                auto rr = forward(params, rest);
                auto gr = backward(params, rr.cache);
                const double w_micro =
                    static_cast<double>(b_small) / static_cast<double>(batch_size);
                const double w_rest = 1.0 - w_micro;
                train_loss = w_micro * rm.loss + w_rest * rr.loss;
                grads = combine_grads(gm, w_micro, gr, w_rest);

                // Preconditioner snapshot before this step's moment update;
                // measured on unclipped gradients.
                const ParamSet v_hat = bias_corrected_v(adam, cfg.optim);
                const double sq_small = precond_sqnorm(gm, v_hat, cfg.optim.adam_eps);
                const double sq_big = precond_sqnorm(grads, v_hat, cfg.optim.adam_eps);
                raw = estimate_step({b_small, batch_size, sq_small, sq_big});
                have_gns = true;
            } else {
                auto r = forward(params, batch);
                grads = backward(params, r.cache);
                train_loss = r.loss;
            }
        } catch (const NumericError&) {
            rec.status = RunStatus::Diverged;
            break;
        }

        if (!has_initial) {
            initial_loss = train_loss;
            has_initial = true;
        }

        GnsEstimate est{};
        if (have_gns) est = smoother.update(raw, lr_t, static_cast<double>(batch_size));

        ClipResult clip;
        try {
            clip = clip_global_norm(grads, cfg.optim.clip_norm);
            adamw_step(params, grads, adam, lr_t, cfg.optim);
        } catch (const NumericError&) {
            rec.status = RunStatus::Diverged;
            break;
        }

        iter += 1;
        tokens = tokens_after;

        const bool diverged = !std::isfinite(train_loss) || train_loss > 10.0 * initial_loss;
        const std::size_t next_batch_size = batch_size_at(cfg.bs, tokens);
        const bool is_last =
            tokens + static_cast<std::uint64_t>(next_batch_size) * per_example > cfg.total_tokens;
        const bool do_eval = tokens >= next_eval || is_last;
        const bool do_log =
            iter % cfg.log_every_steps == 0 || do_eval || is_last || diverged;

        std::optional<double> val_loss;
        if (do_eval && !diverged) {
            try {
                val_loss = forward_loss(params, val_set);
            } catch (const NumericError&) {
                rec.status = RunStatus::Diverged;
                break;
            }
            while (next_eval <= tokens) next_eval += cfg.eval_every_tokens;
        }

        if (do_log) {
            MetricPoint p;
            p.iter = iter;
            p.tokens = tokens;
            p.train_loss = std::isfinite(train_loss) ? std::optional<double>(train_loss)
                                                     : std::nullopt;
            p.val_loss = val_loss;
            p.lr = lr_t;
            p.batch_size = batch_size;
            p.param_norm = params.global_norm();
            if (have_gns) {
                p.gns_tr_noise = est.tr_noise;
                p.gns_gnorm2 = est.gnorm2;
                if (est.valid) p.gns_b_precond = est.b_precond;
                p.gns_valid = est.valid;
            }
            p.clip_scale = clip.scale;
            rec.points.push_back(p);
            if (hooks.on_log) hooks.on_log(p);
        }

        if (diverged) {
            rec.status = RunStatus::Diverged;
            break;
        }
        if (next_ckpt > 0 && tokens >= next_ckpt && !is_last) {
            if (hooks.on_checkpoint) hooks.on_checkpoint(snapshot());
            while (next_ckpt <= tokens) next_ckpt += cfg.checkpoint_every_tokens;
        }
        if (is_last) break;
    }

    if (rec.status == RunStatus::Completed && hooks.on_checkpoint)
        hooks.on_checkpoint(snapshot());
    return rec;
}

} // namespace

RunRecord train(const TrainConfig& cfg, const TrainHooks& hooks) {
    return train_core(cfg, nullptr, hooks);
}

RunRecord resume_training(const TrainConfig& cfg, const RunCheckpoint& start,
                          const TrainHooks& hooks) {
    return train_core(cfg, &start, hooks);
}

TrainConfig apply_overrides(const TrainConfig& base, const ResumeOverrides& o,
                            const RunCheckpoint& ck) {
    TrainConfig c = base;
    if (o.lr) {
        // The override applies immediately: constant schedule, no re-warmup.
        c.optim.peak_lr = *o.lr;
        c.lr_kind = LrSchedule::Kind::Constant;
        c.warmup_tokens = 0;
        c.decay_tokens = 0;
    }
    if (o.weight_decay) c.optim.weight_decay = *o.weight_decay;
    if (o.bs) c.bs = *o.bs;
    if (o.extra_tokens) c.total_tokens = ck.tokens_consumed + *o.extra_tokens;
    c.resume_from = hash_hex(ck.config_hash) + "@" + std::to_string(ck.tokens_consumed);
    return c;
}

// ----------------------------- Registry -----------------------------

Registry::Registry(std::filesystem::path root) : root_(std::move(root)) {
    std::filesystem::create_directories(root_);
}

bool Registry::has_run(const std::string& hash) const {
    return std::filesystem::exists(run_dir(hash) / "status.json");
}

namespace {
std::atomic<std::uint64_t> g_tmp_counter{0};
}

RunRecord Registry::commit(const TrainConfig& cfg, const RunCheckpoint* start) {
    const std::string hash = config_hash_hex(cfg);
    if (has_run(hash)) return load_run(hash);

    const auto tmp = root_ / (".tmp-" + hash + "-" +
                              std::to_string(g_tmp_counter.fetch_add(1)) + "-" +
                              std::to_string(::getpid()));
    std::filesystem::create_directories(tmp / "checkpoints");
    {
        std::ofstream cfg_out(tmp / "config.json");
        cfg_out << config_to_json_string(cfg);
    }

    std::ofstream log(tmp / "metrics.jsonl");
    if (!log) throw IoError("registry: cannot open metric log for writing");
    std::uint64_t last_ckpt_tokens = 0;
    bool have_ckpt = false;

    TrainHooks hooks;
    hooks.on_log = [&](const MetricPoint& p) { log << metric_line(p) << '\n'; };
    hooks.on_checkpoint = [&](const RunCheckpoint& ck) {
        save_run_checkpoint(tmp / "checkpoints" /
                                ("ckpt_" + std::to_string(ck.tokens_consumed) + ".tjl1"),
                            ck);
        last_ckpt_tokens = ck.tokens_consumed;
        have_ckpt = true;
    };

    RunRecord rec = start ? resume_training(cfg, *start, hooks) : train(cfg, hooks);
    log.close();

    if (have_ckpt) {
        std::filesystem::copy_file(
            tmp / "checkpoints" / ("ckpt_" + std::to_string(last_ckpt_tokens) + ".tjl1"),
            tmp / "checkpoints" / "final.tjl1",
            std::filesystem::copy_options::overwrite_existing);
    }

    {
        json st;
        st["status"] = run_status_name(rec.status);
        st["config_hash"] = hash;
        st["iterations"] = rec.points.empty() ? 0 : rec.points.back().iter;
        st["tokens"] = rec.points.empty() ? 0 : rec.points.back().tokens;
        std::ofstream st_out(tmp / "status.json");
        st_out << st.dump(2) << "\n";
    }

    std::error_code ec;
    std::filesystem::rename(tmp, run_dir(hash), ec);
    if (ec) {
        // Another worker committed the same hash first; keep theirs.
        std::filesystem::remove_all(tmp);
        if (!has_run(hash)) throw IoError("registry: failed to commit run " + hash);
    }
    return rec;
}

RunRecord Registry::execute(const TrainConfig& cfg) { return commit(cfg, nullptr); }

RunRecord Registry::execute_from(const TrainConfig& cfg, const RunCheckpoint& start) {
    return commit(cfg, &start);
}

RunRecord Registry::execute_resume(const TrainConfig& source_cfg,
                                   const std::filesystem::path& checkpoint,
                                   const ResumeOverrides& overrides) {
    const RunCheckpoint ck = load_run_checkpoint(checkpoint, source_cfg.model);
    const TrainConfig cfg = apply_overrides(source_cfg, overrides, ck);
    return commit(cfg, &ck);
}

RunRecord Registry::load_run(const std::string& hash) const {
    const auto dir = run_dir(hash);
    std::ifstream cfg_in(dir / "config.json");
    if (!cfg_in) throw IoError("registry: missing config.json for run " + hash);
    std::string cfg_text((std::istreambuf_iterator<char>(cfg_in)),
                         std::istreambuf_iterator<char>());
    RunRecord rec;
    rec.config = config_from_json_string(cfg_text);
    rec.hash = hash;

    std::ifstream st_in(dir / "status.json");
    if (!st_in) throw IoError("registry: missing status.json for run " + hash);
    json st = json::parse(st_in);
    rec.status = st.at("status").get<std::string>() == "diverged" ? RunStatus::Diverged
                                                                  : RunStatus::Completed;

    std::ifstream log_in(dir / "metrics.jsonl");
    if (!log_in) throw IoError("registry: missing metrics.jsonl for run " + hash);
    std::string line;
    while (std::getline(log_in, line)) {
        if (line.empty()) continue;
        rec.points.push_back(metric_from_line(line));
    }
    return rec;
}

std::vector<std::string> Registry::list_hashes() const {
    std::vector<std::string> out;
    if (!std::filesystem::exists(root_)) return out;
    for (const auto& entry : std::filesystem::directory_iterator(root_)) {
        if (!entry.is_directory()) continue;
        const std::string name = entry.path().filename().string();
        if (name.rfind(".tmp-", 0) == 0) continue;
        if (std::filesystem::exists(entry.path() / "status.json")) out.push_back(name);
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<RunRecord> Registry::load_all() const {
    std::vector<RunRecord> out;
    for (const auto& h : list_hashes()) out.push_back(load_run(h));
    return out;
}

// ----------------------------- sweeps -----------------------------

std::vector<SweepCellResult> run_sweep(Registry& registry, const SweepSpec& spec,
                                       const std::function<void(const SweepCellResult&)>& on_cell) {
    std::vector<std::pair<double, double>> cells = spec.cells;
    if (cells.empty()) {
        if (spec.etas.empty() || spec.lambdas.empty())
            throw InputError("run_sweep: empty hyperparameter grids");
        for (double eta : spec.etas)
            for (double lambda : spec.lambdas) cells.emplace_back(eta, lambda);
    }

    // Type 1 source state, loaded once and shared read-only.
    std::optional<RunCheckpoint> source_ck;
    if (!spec.resume_checkpoint.empty())
        source_ck = load_run_checkpoint(spec.resume_checkpoint, spec.base.model);

    auto cell_config = [&](double eta, double lambda) {
        TrainConfig cfg = spec.base;
        cfg.optim.peak_lr = eta;
        cfg.optim.weight_decay = lambda;
        if (source_ck) {
            cfg.resume_from = hash_hex(source_ck->config_hash) + "@" +
                              std::to_string(source_ck->tokens_consumed);
            if (spec.resume_extra_tokens)
                cfg.total_tokens = source_ck->tokens_consumed + *spec.resume_extra_tokens;
        }
        return cfg;
    };

    std::vector<SweepCellResult> results(cells.size());
    std::atomic<std::size_t> next{0};
    std::mutex cb_mutex;

    auto worker = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= cells.size()) return;
            const auto [eta, lambda] = cells[i];
            SweepCellResult r;
            r.eta = eta;
            r.lambda = lambda;
            const TrainConfig cfg = cell_config(eta, lambda);
            r.hash = config_hash_hex(cfg);
            if (registry.has_run(r.hash)) {
                r.skipped = true;
                r.status = registry.load_run(r.hash).status;
            } else {
                RunRecord rec = source_ck ? registry.execute_from(cfg, *source_ck)
                                          : registry.execute(cfg);
                r.status = rec.status;
            }
            results[i] = r;
            if (on_cell) {
                std::lock_guard<std::mutex> lock(cb_mutex);
                on_cell(r);
            }
        }
    };

    const int n_threads = std::max(1, std::min<int>(spec.threads, static_cast<int>(cells.size())));
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    return results;
}

BatchRegime classify_batch_regime(const RunRecord& run) {
    std::vector<GnsSeriesPoint> series;
    series.reserve(run.points.size());
    for (const auto& p : run.points) {
        GnsSeriesPoint sp;
        sp.valid = p.gns_valid && p.gns_b_precond.has_value();
        sp.b_precond = p.gns_b_precond.value_or(0.0);
        sp.batch_size = static_cast<double>(p.batch_size);
        series.push_back(sp);
    }
    return classify_batch_regime(series);
}

} // namespace trajlab

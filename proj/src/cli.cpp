#include "trajlab/cli.hpp"

#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <map>

#include "CLI11.hpp"
#include "json.hpp"

#include "trajlab/analysis.hpp"
#include "trajlab/svgplot.hpp"

namespace trajlab {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

std::string read_text_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_text_file(const fs::path& path, const std::string& text) {
    if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << text;
}

fs::path registry_path(const std::string& flag) {
    if (!flag.empty()) return flag;
    if (const char* env = std::getenv("TRAJLAB_REGISTRY"); env && *env) return env;
    return "registry";
}

std::string timestamp_utc() {
    char buf[32];
    std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// Every analyze command ends by writing one of these next to its tables.
void write_report_bundle(const fs::path& out_dir, const std::string& kind,
                         const std::vector<std::string>& input_hashes, const json& params,
                         const std::vector<std::string>& outputs, const json& extra) {
    json j;
    j["kind"] = kind;
    j["inputs"] = input_hashes;
    j["params"] = params;
    j["outputs"] = outputs;
    j["generated_at"] = timestamp_utc();
    for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
    write_text_file(out_dir / "report.json", j.dump(2) + "\n");
}

// ----------------------------- gen-config -----------------------------

TrainConfig desk_base_config() {
    TrainConfig c;
    c.model.vocab_size = 64;
    c.model.context_k = 4;
    c.model.embed_dim = 32;
    c.model.num_blocks = 2;
    c.model.hidden_mult = 4;
    c.data.seed = 1;
    c.data.vocab = 64;
    // Order 1 keeps the chain learnable for desk-sized models; a pure
    // Dirichlet order-2 table has no low-order structure and the loss curves
    // stay pinned at ln V.
    c.data.order = 1;
    c.data.concentration = 0.3;
    c.optim.peak_lr = 0.02;
    c.optim.weight_decay = 0.1;
    c.lr_kind = LrSchedule::Kind::Constant;
    c.warmup_tokens = 50'000;
    c.bs.kind = BsSchedule::Kind::Fixed;
    c.bs.batch = 16;
    c.total_tokens = 2'000'000;
    c.eval_every_tokens = 50'000;
    c.log_every_steps = 20;
    c.checkpoint_every_tokens = 500'000;
    c.run_seed = 1;
    return c;
}

const std::vector<std::string>& template_names() {
    static const std::vector<std::string> names{"desk-small", "desk-large-batch",
                                                "desk-bss-type1", "desk-bss-type2", "desk-wsd"};
    return names;
}

int cmd_gen_config(const std::string& tmpl, std::string out_path) {
    if (out_path.empty()) out_path = tmpl + ".json";
    TrainConfig c = desk_base_config();
    if (tmpl == "desk-small") {
        // defaults as-is: fixed small batch, constant LR
    } else if (tmpl == "desk-large-batch") {
        c.bs.batch = 256;
        c.log_every_steps = 2;
        c.eval_every_tokens = 100'000;
    } else if (tmpl == "desk-bss-type2") {
        c.bs.kind = BsSchedule::Kind::Type2Switch;
        c.bs.b_small = 16;
        c.bs.b_large = 256;
        c.bs.switch_tokens = 1'000'000;
        c.log_every_steps = 5;
    } else if (tmpl == "desk-wsd") {
        c.lr_kind = LrSchedule::Kind::Wsd;
        c.decay_tokens = 500'000;
    } else if (tmpl == "desk-bss-type1") {
        // Type 1 is resume-based: emit a sweep spec around a source checkpoint.
        c.bs.batch = 256;
        c.warmup_tokens = 0; // the source checkpoint is past warmup
        c.log_every_steps = 2;
        c.eval_every_tokens = 100'000;
        json j;
        j["_notes"] = {"Type 1 batch-size scheduler: resume large-batch training from a "
                       "small-batch checkpoint while sweeping (eta, lambda).",
                       "Point resume_checkpoint at a source run checkpoint, e.g. "
                       "registry/<hash>/checkpoints/ckpt_1000000.tjl1, then run: "
                       "trajlab sweep --spec this-file --registry <dir>.",
                       "The source cell (its eta, lambda and token count) is a config choice; "
                       "pick it to taste."};
        j["base"] = json::parse(config_to_json_string(c));
        j["etas"] = {0.005, 0.01, 0.02};
        j["lambdas"] = {0.05, 0.1, 0.2};
        j["resume_checkpoint"] = "";
        j["resume_extra_tokens"] = 1'000'000;
        j["threads"] = 1;
        write_text_file(out_path, j.dump(2) + "\n");
        std::cout << "wrote " << out_path << "\n";
        return 0;
    } else {
        std::cerr << "unknown template \"" << tmpl << "\"; available:";
        for (const auto& n : template_names()) std::cerr << " " << n;
        std::cerr << "\n";
        return 1;
    }
    c.validate();
    write_text_file(out_path, config_to_json_string(c));
    std::cout << "wrote " << out_path << "\n";
    return 0;
}

// ----------------------------- train / sweep -----------------------------

int cmd_train(const std::string& config_path, const std::string& registry_flag) {
    TrainConfig cfg = config_from_json_string(read_text_file(config_path));
    cfg.validate(); // reject before any training (e.g. budget below warmup)
    Registry reg(registry_path(registry_flag));
    const std::string hash = config_hash_hex(cfg);
    if (reg.has_run(hash)) {
        auto rec = reg.load_run(hash);
        std::cout << "run " << hash << " already present (status "
                  << run_status_name(rec.status) << "), skipped\n";
        return 0;
    }
    auto rec = reg.execute(cfg);
    std::cout << "run " << rec.hash << " status " << run_status_name(rec.status) << ", "
              << rec.points.size() << " log points\n";
    return rec.status == RunStatus::Completed ? 0 : 2;
}

SweepSpec sweep_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw IoError(std::string("sweep spec: invalid JSON: ") + e.what());
    }
    SweepSpec spec;
    spec.base = config_from_json_string(j.at("base").dump());
    if (j.contains("etas")) spec.etas = j.at("etas").get<std::vector<double>>();
    if (j.contains("lambdas")) spec.lambdas = j.at("lambdas").get<std::vector<double>>();
    if (j.contains("cells"))
        for (const auto& cell : j.at("cells"))
            spec.cells.emplace_back(cell.at(0).get<double>(), cell.at(1).get<double>());
    if (j.contains("resume_checkpoint"))
        spec.resume_checkpoint = j.at("resume_checkpoint").get<std::string>();
    if (j.contains("resume_extra_tokens") && !j.at("resume_extra_tokens").is_null())
        spec.resume_extra_tokens = j.at("resume_extra_tokens").get<std::uint64_t>();
    if (j.contains("threads")) spec.threads = j.at("threads").get<int>();
    return spec;
}

int cmd_sweep(const std::string& spec_path, const std::string& registry_flag, int threads_flag) {
    SweepSpec spec = sweep_from_json(read_text_file(spec_path));
    if (threads_flag > 0) spec.threads = threads_flag;
    Registry reg(registry_path(registry_flag));
    std::size_t skipped = 0, completed = 0, diverged = 0;
    auto results = run_sweep(reg, spec, [&](const SweepCellResult& r) {
        std::cout << "cell eta=" << r.eta << " lambda=" << r.lambda << " run=" << r.hash
                  << " status=" << (r.skipped ? "skipped" : run_status_name(r.status)) << "\n";
    });
    for (const auto& r : results) {
        if (r.skipped) ++skipped;
        if (r.status == RunStatus::Completed) ++completed;
        if (r.status == RunStatus::Diverged && !r.skipped) ++diverged;
    }
    if (skipped > 0) std::cout << "skipped " << skipped << " completed\n";
    std::cout << results.size() << " cells: " << completed << " completed, " << diverged
              << " diverged\n";
    return completed > 0 ? 0 : 1;
}

// ----------------------------- analyze helpers -----------------------------

struct AnalyzeFlags {
    std::string registry;
    std::string out;
    double threshold = 0.005;
    std::string group_by = "elr";
    double smooth_halflife = 0.0;
    std::string window; // "start:end" in tokens
    std::string metric = "val_loss";
    std::size_t points = 200;
    std::string horizons; // comma-separated token counts
    double tau = 0.0;
    std::string const_run;
    std::string wsd_run;
};

json flags_to_json(const AnalyzeFlags& f) {
    json j;
    j["registry"] = registry_path(f.registry).string();
    j["threshold"] = f.threshold;
    j["group_by"] = f.group_by;
    j["smooth_halflife"] = f.smooth_halflife;
    j["window"] = f.window;
    j["metric"] = f.metric;
    j["points"] = f.points;
    if (!f.horizons.empty()) j["horizons"] = f.horizons;
    if (f.tau > 0) j["tau"] = f.tau;
    if (!f.const_run.empty()) j["const_run"] = f.const_run;
    if (!f.wsd_run.empty()) j["wsd_run"] = f.wsd_run;
    return j;
}

std::vector<double> parse_csv_doubles(const std::string& text) {
    std::vector<double> out;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t next = text.find(',', pos);
        if (next == std::string::npos) next = text.size();
        out.push_back(std::stod(text.substr(pos, next - pos)));
        pos = next + 1;
    }
    return out;
}

GridSpec window_for(const std::vector<RunRecord>& runs, RunMetric metric,
                    const std::string& window_flag, std::size_t points) {
    GridSpec g;
    g.points = points;
    if (!window_flag.empty()) {
        const auto colon = window_flag.find(':');
        if (colon == std::string::npos)
            throw InputError("--window expects start:end in tokens");
        g.start_tokens = std::stod(window_flag.substr(0, colon));
        g.end_tokens = std::stod(window_flag.substr(colon + 1));
        return g;
    }
    // Default: the token range covered by every run.
    double lo = 0.0, hi = std::numeric_limits<double>::infinity();
    bool any = false;
    for (const auto& rec : runs) {
        double first = std::numeric_limits<double>::infinity(), last = 0.0;
        for (const auto& p : rec.points) {
            auto has = [&] {
                switch (metric) {
                    case RunMetric::ValLoss: return p.val_loss.has_value();
                    case RunMetric::TrainLoss: return p.train_loss.has_value();
                    default: return true;
                }
            }();
            if (!has) continue;
            first = std::min(first, static_cast<double>(p.tokens));
            last = std::max(last, static_cast<double>(p.tokens));
        }
        if (last <= first) continue;
        lo = std::max(lo, first);
        hi = std::min(hi, last);
        any = true;
    }
    if (!any || hi <= lo)
        throw InsufficientDataError("analyze: runs share no common token window");
    g.start_tokens = lo;
    g.end_tokens = hi;
    return g;
}

std::vector<RunRecord> completed_runs(const Registry& reg) {
    std::vector<RunRecord> out;
    for (auto& rec : reg.load_all())
        if (rec.status == RunStatus::Completed) out.push_back(std::move(rec));
    return out;
}

// Long form: one row per (unordered) pair, diagonal included.
std::string pairs_csv(const std::vector<std::string>& labels, const Matrix& m,
                      const std::vector<std::vector<bool>>& below,
                      const std::vector<std::vector<bool>>* defined) {
    std::string csv = "a,b,distance,below_threshold\n";
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = i; j < m.cols(); ++j) {
            csv += labels[i] + "," + labels[j] + ",";
            if (!defined || (*defined)[i][j]) {
                char buf[40];
                std::snprintf(buf, sizeof buf, "%.12g,%d", m.at(i, j), below[i][j] ? 1 : 0);
                csv += buf;
            } else {
                csv += ",";
            }
            csv += "\n";
        }
    return csv;
}

std::string group_label(double key) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.6g", key);
    return buf;
}

// ----------------------------- analyze: invariance -----------------------------

int analyze_invariance(const AnalyzeFlags& f) {
    Registry reg(registry_path(f.registry));
    auto runs = completed_runs(reg);
    const RunMetric metric = metric_from_name(f.metric);
    const GridSpec grid = window_for(runs, metric, f.window, f.points);
    std::vector<std::string> warnings;
    auto curves = align_and_smooth(runs, metric, grid, f.smooth_halflife, &warnings);
    for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
    // Runs that do not touch the window at all (e.g. smaller budgets sharing
    // the registry) are dropped rather than failing every distance.
    std::erase_if(curves, [&](const Curve& c) {
        bool any = false;
        for (bool m : c.mask) any = any || m;
        if (!any)
            std::cerr << "warning: run " << c.meta.config_hash
                      << " excluded (no points inside the window)\n";
        return !any;
    });
    const GroupKey key = f.group_by == "lr" ? GroupKey::Lr : GroupKey::Elr;

    const fs::path out = f.out.empty() ? fs::path("reports/invariance") : fs::path(f.out);
    fs::create_directories(out);
    std::vector<std::string> outputs;

    auto pm = pairwise_matrix(curves, f.threshold);
    write_text_file(out / "pairwise.csv",
                    pairs_csv(pm.labels, pm.values, pm.below_threshold, nullptr));
    outputs.push_back("pairwise.csv");
    {
        HeatmapSpec hm;
        hm.title = "Pairwise relative distance (" + std::string(metric_name(metric)) + ")";
        hm.row_labels = pm.labels;
        hm.col_labels = pm.labels;
        hm.values = pm.values;
        hm.marks = pm.below_threshold;
        write_heatmap(out / "pairwise.svg", hm);
        outputs.push_back("pairwise.svg");
    }

    auto gm = group_distance(curves, key, f.threshold);
    std::vector<std::string> glabels;
    for (double k : gm.group_keys)
        glabels.push_back(std::string(group_key_name(key)) + "=" + group_label(k));
    write_text_file(out / "groups.csv",
                    pairs_csv(glabels, gm.values, gm.below_threshold, &gm.defined));
    outputs.push_back("groups.csv");
    {
        HeatmapSpec hm;
        hm.title = "Group-averaged relative distance by " + std::string(group_key_name(key));
        hm.row_labels = glabels;
        hm.col_labels = glabels;
        hm.values = gm.values;
        hm.marks = gm.below_threshold;
        hm.defined = gm.defined;
        write_heatmap(out / "groups.svg", hm);
        outputs.push_back("groups.svg");
    }

    // The verdict needs at least two members per group; grid corners with a
    // unique key still appear in the matrices above but are excluded here.
    std::vector<Curve> verdict_curves;
    std::vector<double> excluded_keys;
    {
        auto groups = group_curves(curves, key);
        for (std::size_t g = 0; g < groups.members.size(); ++g) {
            if (groups.members[g].size() >= 2)
                for (std::size_t idx : groups.members[g]) verdict_curves.push_back(curves[idx]);
            else
                excluded_keys.push_back(groups.key_values[g]);
        }
    }
    auto verdict = detect_invariance(verdict_curves, key, f.threshold, 3.0);

    // Loss curves colored by group.
    {
        auto groups = group_curves(curves, key);
        LinePlotSpec lp;
        lp.title = std::string(metric_name(metric)) + " curves grouped by " +
                   group_key_name(key);
        lp.x_label = "tokens";
        lp.y_label = metric_name(metric);
        for (std::size_t g = 0; g < groups.members.size(); ++g) {
            bool labeled = false;
            for (std::size_t idx : groups.members[g]) {
                PlotSeries s;
                const auto& c = curves[idx];
                for (std::size_t i = 0; i < c.values.size(); ++i) {
                    if (!c.mask[i]) continue;
                    s.xs.push_back((*c.grid)[i]);
                    s.ys.push_back(c.values[i]);
                }
                s.color = palette_color(g);
                s.label = labeled ? "" : (std::string(group_key_name(key)) + "=" +
                                          group_label(groups.key_values[g]));
                labeled = true;
                lp.series.push_back(std::move(s));
            }
        }
        write_line_plot(out / "curves.svg", lp);
        outputs.push_back("curves.svg");
    }

    json extra;
    extra["verdict"] = verdict.overall ? "invariant" : "not invariant";
    extra["margin"] = verdict.margin;
    json groups_json = json::array();
    for (const auto& g : verdict.groups) {
        json gj;
        gj["key"] = g.key;
        gj["members"] = g.members;
        gj["mean_within"] = g.mean_within;
        gj["mean_across"] = g.mean_across;
        gj["invariant"] = g.invariant;
        groups_json.push_back(gj);
    }
    extra["groups"] = groups_json;
    if (!excluded_keys.empty()) extra["singleton_groups_excluded"] = excluded_keys;
    extra["grid"] = {{"start_tokens", grid.start_tokens},
                     {"end_tokens", grid.end_tokens},
                     {"points", grid.points}};
    std::vector<std::string> hashes;
    for (const auto& r : runs) hashes.push_back(r.hash);
    write_report_bundle(out, "invariance", hashes, flags_to_json(f), outputs, extra);
    std::cout << "verdict: " << (verdict.overall ? "invariant" : "not invariant") << "\n";
    std::cout << "wrote " << outputs.size() + 1 << " files to " << out.string() << "\n";
    return 0;
}

// ----------------------------- analyze: powerlaw -----------------------------

int analyze_powerlaw(const AnalyzeFlags& f) {
    Registry reg(registry_path(f.registry));
    auto runs = completed_runs(reg);
    const RunMetric metric = metric_from_name(f.metric);

    const fs::path out = f.out.empty() ? fs::path("reports/powerlaw") : fs::path(f.out);
    fs::create_directories(out);
    std::vector<std::string> outputs;

    std::string runs_csv = "run,eta,lambda,gamma,L0,A,alpha,r2,degenerate\n";
    std::vector<double> gammas, l0s, noise_gammas, noise_levels;
    json per_run = json::array();
    for (const auto& rec : runs) {
        if (rec.config.lr_kind != LrSchedule::Kind::Constant) {
            std::cerr << "warning: run " << rec.hash << " skipped (not constant-LR)\n";
            continue;
        }
        std::vector<double> iters, losses, tokens;
        for (const auto& p : rec.points) {
            if (p.tokens <= rec.config.warmup_tokens) continue;
            std::optional<double> v;
            switch (metric) {
                case RunMetric::ValLoss: v = p.val_loss; break;
                case RunMetric::TrainLoss: v = p.train_loss; break;
                default: throw InputError("analyze powerlaw: metric must be a loss");
            }
            if (!v) continue;
            iters.push_back(static_cast<double>(p.iter));
            losses.push_back(*v);
            tokens.push_back(static_cast<double>(p.tokens));
        }
        if (f.smooth_halflife > 0.0 && !losses.empty()) {
            // EMA over tokens, bias-corrected; tames per-batch loss noise.
            double acc = 0.0, wsum = 0.0;
            for (std::size_t i = 0; i < losses.size(); ++i) {
                const double decay =
                    i == 0 ? 0.0 : std::exp2(-(tokens[i] - tokens[i - 1]) / f.smooth_halflife);
                acc = decay * acc + (1.0 - decay) * losses[i];
                wsum = decay * wsum + (1.0 - decay);
                losses[i] = acc / wsum;
            }
        }
        if (iters.size() < 20) {
            std::cerr << "warning: run " << rec.hash << " skipped (fewer than 20 points)\n";
            continue;
        }
        const double eta = rec.config.optim.peak_lr;
        const double lambda = rec.config.optim.weight_decay;
        auto fit = fit_run_power_law(iters, losses, eta);
        char buf[256];
        std::snprintf(buf, sizeof buf, "%s,%g,%g,%g,%.8g,%.8g,%.8g,%.6f,%d\n",
                      rec.hash.c_str(), eta, lambda, eta * lambda, fit.c0, fit.coeff,
                      -fit.exponent, fit.r2, fit.degenerate ? 1 : 0);
        runs_csv += buf;
        json rj;
        rj["run"] = rec.hash;
        rj["eta"] = eta;
        rj["lambda"] = lambda;
        rj["gamma"] = eta * lambda;
        rj["L0"] = fit.c0;
        rj["A"] = fit.coeff;
        rj["alpha"] = -fit.exponent;
        rj["r2"] = fit.r2;
        rj["degenerate"] = fit.degenerate;
        per_run.push_back(rj);
        if (!fit.degenerate) {
            gammas.push_back(eta * lambda);
            l0s.push_back(fit.c0);
        }

        // Stable gradient-noise level: median of tr_noise over the final third.
        std::vector<double> tail;
        const double last_token =
            rec.points.empty() ? 0.0 : static_cast<double>(rec.points.back().tokens);
        for (const auto& p : rec.points) {
            if (!p.gns_tr_noise) continue;
            if (static_cast<double>(p.tokens) < last_token * 2.0 / 3.0) continue;
            tail.push_back(*p.gns_tr_noise);
        }
        if (!tail.empty()) {
            std::sort(tail.begin(), tail.end());
            const double median = tail.size() % 2 == 1
                                      ? tail[tail.size() / 2]
                                      : 0.5 * (tail[tail.size() / 2 - 1] + tail[tail.size() / 2]);
            noise_gammas.push_back(eta * lambda);
            noise_levels.push_back(median);
        }
    }
    write_text_file(out / "runs.csv", runs_csv);
    outputs.push_back("runs.csv");

    json extra;
    extra["per_run"] = per_run;

    auto fit_to_json = [](const PowerLawFit& fit) {
        json j;
        j["c0"] = fit.c0;
        j["coeff"] = fit.coeff;
        j["exponent"] = fit.exponent;
        j["r2"] = fit.r2;
        j["degenerate"] = fit.degenerate;
        return j;
    };

    auto l0_fit = fit_L0_elr(gammas, l0s);
    extra["l0_fit"] = fit_to_json(l0_fit);
    {
        LinePlotSpec lp;
        lp.title = "Irreducible loss vs ELR";
        lp.x_label = "gamma = eta*lambda";
        lp.y_label = "L0";
        lp.log_x = true;
        PlotSeries data;
        std::vector<std::pair<double, double>> sorted;
        for (std::size_t i = 0; i < gammas.size(); ++i) sorted.emplace_back(gammas[i], l0s[i]);
        std::sort(sorted.begin(), sorted.end());
        for (auto& [x, y] : sorted) {
            data.xs.push_back(x);
            data.ys.push_back(y);
        }
        data.label = "per-run L0";
        PlotSeries fitline;
        for (auto& [x, y] : sorted) {
            fitline.xs.push_back(x);
            fitline.ys.push_back(l0_fit.c0 + l0_fit.coeff * std::pow(x, l0_fit.exponent));
        }
        fitline.label = "fit";
        lp.series = {data, fitline};
        write_line_plot(out / "l0_vs_gamma.svg", lp);
        outputs.push_back("l0_vs_gamma.svg");
    }

    std::vector<std::string> noise_warnings;
    auto noise_fit = fit_noise_elr(noise_gammas, noise_levels, &noise_warnings);
    for (const auto& w : noise_warnings) std::cerr << "warning: " << w << "\n";
    extra["noise_fit"] = fit_to_json(noise_fit);
    {
        LinePlotSpec lp;
        lp.title = "Stable gradient noise vs ELR";
        lp.x_label = "gamma = eta*lambda";
        lp.y_label = "Tr(P^-1 Sigma) stable level";
        lp.log_x = true;
        lp.log_y = true;
        PlotSeries data;
        std::vector<std::pair<double, double>> sorted;
        for (std::size_t i = 0; i < noise_gammas.size(); ++i)
            if (noise_levels[i] > 0) sorted.emplace_back(noise_gammas[i], noise_levels[i]);
        std::sort(sorted.begin(), sorted.end());
        for (auto& [x, y] : sorted) {
            data.xs.push_back(x);
            data.ys.push_back(y);
        }
        data.label = "per-run level";
        PlotSeries fitline;
        for (auto& [x, y] : sorted) {
            fitline.xs.push_back(x);
            fitline.ys.push_back(noise_fit.coeff * std::pow(x, noise_fit.exponent));
        }
        fitline.label = "fit";
        lp.series = {data, fitline};
        write_line_plot(out / "noise_vs_gamma.svg", lp);
        outputs.push_back("noise_vs_gamma.svg");
    }

    std::vector<std::string> hashes;
    for (const auto& r : runs) hashes.push_back(r.hash);
    write_report_bundle(out, "powerlaw", hashes, flags_to_json(f), outputs, extra);
    std::cout << "L0(gamma): c0=" << l0_fit.c0 << " coeff=" << l0_fit.coeff
              << " exponent=" << l0_fit.exponent << " r2=" << l0_fit.r2 << "\n";
    std::cout << "G(gamma): coeff=" << noise_fit.coeff << " exponent=" << noise_fit.exponent
              << " r2=" << noise_fit.r2 << "\n";
    std::cout << "wrote " << outputs.size() + 1 << " files to " << out.string() << "\n";
    return 0;
}

// ----------------------------- analyze: paraboloid -----------------------------

json paraboloid_to_json(const ParaboloidFit& fit) {
    json j;
    j["c"] = fit.c;
    j["b"] = {fit.b[0], fit.b[1]};
    j["hessian"] = {{fit.hess.at(0, 0), fit.hess.at(0, 1)},
                    {fit.hess.at(1, 0), fit.hess.at(1, 1)}};
    j["eigenvalues"] = {fit.eig.lambda1, fit.eig.lambda2};
    j["top_eigenvector"] = {fit.eig.v1[0], fit.eig.v1[1]};
    j["angle_deg"] = std::atan2(fit.eig.v1[1], fit.eig.v1[0]) * 180.0 / 3.14159265358979323846;
    j["positive_definite"] = fit.pd;
    if (fit.pd) {
        j["min_log2"] = {fit.min_x[0], fit.min_x[1]};
        j["eta_star"] = std::exp2(fit.min_x[0]);
        j["lambda_star"] = std::exp2(fit.min_x[1]);
        j["gamma_star"] = std::exp2(fit.min_x[0]) * std::exp2(fit.min_x[1]);
        j["min_value"] = fit.min_value;
        j["min_inside_grid"] = fit.min_inside_grid;
    }
    j["r2"] = fit.r2;
    j["max_residual"] = fit.max_residual;
    j["cells_used"] = fit.cells_used;
    j["cells_excluded"] = fit.cells_excluded;
    return j;
}

// Final-loss cells over the (eta, lambda) grid; diverged runs become invalid cells.
std::vector<GridCell> final_loss_cells(const std::vector<RunRecord>& runs, RunMetric metric) {
    std::vector<GridCell> cells;
    for (const auto& rec : runs) {
        GridCell cell;
        cell.eta = rec.config.optim.peak_lr;
        cell.lambda = rec.config.optim.weight_decay;
        cell.valid = false;
        if (rec.status == RunStatus::Completed) {
            for (auto it = rec.points.rbegin(); it != rec.points.rend(); ++it) {
                std::optional<double> v =
                    metric == RunMetric::TrainLoss ? it->train_loss : it->val_loss;
                if (v) {
                    cell.loss = *v;
                    cell.valid = true;
                    break;
                }
            }
        }
        cells.push_back(cell);
    }
    return cells;
}

int analyze_paraboloid(const AnalyzeFlags& f) {
    Registry reg(registry_path(f.registry));
    auto runs = reg.load_all(); // diverged included, excluded as cells
    const RunMetric metric = metric_from_name(f.metric);
    auto cells = final_loss_cells(runs, metric);
    auto fit = fit_paraboloid(cells);

    const fs::path out = f.out.empty() ? fs::path("reports/paraboloid") : fs::path(f.out);
    fs::create_directories(out);
    std::vector<std::string> outputs;

    // Heatmap over the (eta, lambda) grid.
    std::vector<double> etas, lambdas;
    for (const auto& c : cells) {
        etas.push_back(c.eta);
        lambdas.push_back(c.lambda);
    }
    auto uniq = [](std::vector<double>& v) {
        std::sort(v.begin(), v.end());
        v.erase(std::unique(v.begin(), v.end(),
                            [](double a, double b) { return b <= a * (1 + 1e-9); }),
                v.end());
    };
    uniq(etas);
    uniq(lambdas);
    HeatmapSpec hm;
    hm.title = "Final " + std::string(metric_name(metric)) + " over the (eta, lambda) grid";
    Matrix vals(lambdas.size(), etas.size());
    std::vector<std::vector<bool>> defined(lambdas.size(), std::vector<bool>(etas.size(), false));
    for (const auto& c : cells) {
        if (!c.valid) continue;
        const auto col = static_cast<std::size_t>(
            std::lower_bound(etas.begin(), etas.end(), c.eta * (1 - 1e-12)) - etas.begin());
        const auto row = static_cast<std::size_t>(
            std::lower_bound(lambdas.begin(), lambdas.end(), c.lambda * (1 - 1e-12)) -
            lambdas.begin());
        vals.at(row, col) = c.loss;
        defined[row][col] = true;
    }
    for (double e : etas) hm.col_labels.push_back("eta=" + group_label(e));
    for (double l : lambdas) hm.row_labels.push_back("lambda=" + group_label(l));
    hm.values = vals;
    hm.defined = defined;
    write_heatmap(out / "heatmap.svg", hm);
    outputs.push_back("heatmap.svg");

    std::string csv = "eta,lambda,loss,valid\n";
    for (const auto& c : cells) {
        char buf[128];
        std::snprintf(buf, sizeof buf, "%g,%g,%.10g,%d\n", c.eta, c.lambda, c.loss,
                      c.valid ? 1 : 0);
        csv += buf;
    }
    write_text_file(out / "cells.csv", csv);
    outputs.push_back("cells.csv");

    json extra;
    extra["fit"] = paraboloid_to_json(fit);
    std::vector<std::string> hashes;
    for (const auto& r : runs) hashes.push_back(r.hash);
    write_report_bundle(out, "paraboloid", hashes, flags_to_json(f), outputs, extra);
    std::cout << "paraboloid: eigenvalues (" << fit.eig.lambda1 << ", " << fit.eig.lambda2
              << "), pd=" << (fit.pd ? "yes" : "no");
    if (fit.pd)
        std::cout << ", eta*=" << std::exp2(fit.min_x[0]) << ", lambda*=" << std::exp2(fit.min_x[1]);
    std::cout << "\n";
    std::cout << "wrote " << outputs.size() + 1 << " files to " << out.string() << "\n";
    return 0;
}

// ----------------------------- analyze: eigen -----------------------------

int analyze_eigen(const AnalyzeFlags& f) {
    if (f.horizons.empty())
        throw InputError("analyze eigen: --horizons t1,t2,... (tokens) is required");
    Registry reg(registry_path(f.registry));
    auto runs = reg.load_all();
    const RunMetric metric = metric_from_name(f.metric);
    auto horizons = parse_csv_doubles(f.horizons);
    auto series = eigen_dynamics(runs, horizons, metric);

    const fs::path out = f.out.empty() ? fs::path("reports/eigen") : fs::path(f.out);
    fs::create_directories(out);
    std::vector<std::string> outputs;

    std::string csv = "tokens,lambda1,lambda2,angle_deg,pd,ok,error\n";
    for (const auto& p : series) {
        char buf[256];
        std::snprintf(buf, sizeof buf, "%g,%.10g,%.10g,%.6f,%d,%d,%s\n", p.tokens, p.lambda1,
                      p.lambda2, p.angle_deg, p.pd ? 1 : 0, p.ok ? 1 : 0, p.error.c_str());
        csv += buf;
    }
    write_text_file(out / "eigen.csv", csv);
    outputs.push_back("eigen.csv");

    {
        LinePlotSpec lp;
        lp.title = "Top-eigenvector angle vs token horizon";
        lp.x_label = "tokens";
        lp.y_label = "angle from (1,0), degrees";
        PlotSeries angle;
        angle.label = "angle (45 = ELR-salient, 0 = LR-salient)";
        for (const auto& p : series)
            if (p.ok) {
                angle.xs.push_back(p.tokens);
                angle.ys.push_back(p.angle_deg);
            }
        lp.series = {angle};
        write_line_plot(out / "eigen_angle.svg", lp);
        outputs.push_back("eigen_angle.svg");
    }
    {
        LinePlotSpec lp;
        lp.title = "Paraboloid eigenvalues vs token horizon";
        lp.x_label = "tokens";
        lp.y_label = "eigenvalue";
        PlotSeries l1, l2;
        l1.label = "lambda1";
        l2.label = "lambda2";
        for (const auto& p : series)
            if (p.ok) {
                l1.xs.push_back(p.tokens);
                l1.ys.push_back(p.lambda1);
                l2.xs.push_back(p.tokens);
                l2.ys.push_back(p.lambda2);
            }
        lp.series = {l1, l2};
        write_line_plot(out / "eigen_values.svg", lp);
        outputs.push_back("eigen_values.svg");
    }

    json extra;
    json pts = json::array();
    for (const auto& p : series) {
        json pj;
        pj["tokens"] = p.tokens;
        pj["ok"] = p.ok;
        if (p.ok) {
            pj["lambda1"] = p.lambda1;
            pj["lambda2"] = p.lambda2;
            pj["angle_deg"] = p.angle_deg;
            pj["pd"] = p.pd;
        } else {
            pj["error"] = p.error;
        }
        pts.push_back(pj);
    }
    extra["series"] = pts;
    std::vector<std::string> hashes;
    for (const auto& r : runs) hashes.push_back(r.hash);
    write_report_bundle(out, "eigen", hashes, flags_to_json(f), outputs, extra);
    std::cout << "wrote " << outputs.size() + 1 << " files to " << out.string() << "\n";
    return 0;
}

// ----------------------------- analyze: scaling -----------------------------

int analyze_scaling(const AnalyzeFlags& f) {
    Registry reg(registry_path(f.registry));
    auto runs = reg.load_all();
    const RunMetric metric = metric_from_name(f.metric);

    // Group runs by token budget; each budget yields one paraboloid minimum.
    std::map<std::uint64_t, std::vector<RunRecord>> by_budget;
    for (auto& rec : runs) by_budget[rec.config.total_tokens].push_back(std::move(rec));

    std::vector<BudgetOptimum> optima;
    json budgets_json = json::array();
    for (auto& [budget, group] : by_budget) {
        auto cells = final_loss_cells(group, metric);
        json bj;
        bj["budget_tokens"] = budget;
        try {
            auto fit = fit_paraboloid(cells);
            bj["fit"] = paraboloid_to_json(fit);
            if (!fit.pd) {
                bj["skipped"] = "fit not positive definite; no minimizer";
                std::cerr << "warning: budget " << budget << " skipped (fit not PD)\n";
            } else {
                if (!fit.min_inside_grid)
                    std::cerr << "warning: budget " << budget
                              << ": fitted minimum lies outside the sampled grid "
                                 "(extrapolated optimum)\n";
                BudgetOptimum o;
                o.d_tokens = static_cast<double>(budget);
                o.eta_star = std::exp2(fit.min_x[0]);
                o.lambda_star = std::exp2(fit.min_x[1]);
                o.gamma_star = o.eta_star * o.lambda_star;
                o.loss_star = fit.min_value;
                optima.push_back(o);
            }
        } catch (const Error& e) {
            bj["skipped"] = e.what();
            std::cerr << "warning: budget " << budget << " skipped (" << e.what() << ")\n";
        }
        budgets_json.push_back(bj);
    }

    auto laws = fit_scaling_laws(optima); // throws below 4 budgets

    const fs::path out = f.out.empty() ? fs::path("reports/scaling") : fs::path(f.out);
    fs::create_directories(out);
    std::vector<std::string> outputs;

    std::string csv = "budget_tokens,eta_star,lambda_star,gamma_star,loss_star\n";
    for (const auto& o : optima) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "%.10g,%.8g,%.8g,%.8g,%.10g\n", o.d_tokens, o.eta_star,
                      o.lambda_star, o.gamma_star, o.loss_star);
        csv += buf;
    }
    write_text_file(out / "optima.csv", csv);
    outputs.push_back("optima.csv");

    auto law_plot = [&](const char* name, const PowerLawFit& law, auto value_of, bool log_y) {
        LinePlotSpec lp;
        lp.title = std::string(name) + " vs token budget";
        lp.x_label = "tokens D";
        lp.y_label = name;
        lp.log_x = true;
        lp.log_y = log_y;
        PlotSeries data, fitline;
        data.label = "optima";
        fitline.label = "fit";
        for (const auto& o : optima) {
            data.xs.push_back(o.d_tokens);
            data.ys.push_back(value_of(o));
            fitline.xs.push_back(o.d_tokens);
            fitline.ys.push_back(law.c0 + law.coeff * std::pow(o.d_tokens, law.exponent));
        }
        lp.series = {data, fitline};
        const std::string file = std::string("scaling_") + name + ".svg";
        write_line_plot(out / file, lp);
        outputs.push_back(file);
    };
    law_plot("eta", laws.eta, [](const BudgetOptimum& o) { return o.eta_star; }, true);
    law_plot("lambda", laws.lambda, [](const BudgetOptimum& o) { return o.lambda_star; }, true);
    law_plot("gamma", laws.gamma, [](const BudgetOptimum& o) { return o.gamma_star; }, true);
    law_plot("loss", laws.loss, [](const BudgetOptimum& o) { return o.loss_star; }, false);

    auto fit_to_json = [](const PowerLawFit& fit) {
        json j;
        j["c0"] = fit.c0;
        j["coeff"] = fit.coeff;
        j["exponent"] = fit.exponent;
        j["r2"] = fit.r2;
        j["degenerate"] = fit.degenerate;
        return j;
    };
    json extra;
    extra["budgets"] = budgets_json;
    extra["laws"] = {{"eta", fit_to_json(laws.eta)},
                     {"lambda", fit_to_json(laws.lambda)},
                     {"gamma", fit_to_json(laws.gamma)},
                     {"loss", fit_to_json(laws.loss)}};
    std::vector<std::string> hashes;
    for (const auto& [budget, group] : by_budget)
        for (const auto& r : group) hashes.push_back(r.hash);
    write_report_bundle(out, "scaling", hashes, flags_to_json(f), outputs, extra);
    std::cout << "eta(D): " << laws.eta.coeff << " * D^" << laws.eta.exponent
              << "  lambda(D): " << laws.lambda.coeff << " * D^" << laws.lambda.exponent << "\n";
    std::cout << "gamma(D): " << laws.gamma.coeff << " * D^" << laws.gamma.exponent << "  L(D): "
              << laws.loss.c0 << " + " << laws.loss.coeff << " * D^" << laws.loss.exponent << "\n";
    std::cout << "wrote " << outputs.size() + 1 << " files to " << out.string() << "\n";
    return 0;
}

// ----------------------------- analyze: decay -----------------------------

int analyze_decay(const AnalyzeFlags& f) {
    if (f.const_run.empty())
        throw InputError("analyze decay: --const-run <hash> is required");
    Registry reg(registry_path(f.registry));
    auto const_rec = reg.load_run(f.const_run);

    std::optional<RunRecord> wsd_rec;
    if (!f.wsd_run.empty()) wsd_rec = reg.load_run(f.wsd_run);

    double tau_target = f.tau;
    if (tau_target <= 0.0) {
        if (!wsd_rec)
            throw InputError("analyze decay: need --tau or --wsd-run to define the target "
                             "gradient-flow time");
        const auto taus = tau_at_points(*wsd_rec);
        if (taus.empty()) throw InsufficientDataError("analyze decay: paired run has no points");
        tau_target = taus.back(); // end of decay
    }

    const RunMetric metric = metric_from_name(f.metric);
    auto pred = predict_decay_gain(const_rec, tau_target, wsd_rec ? &*wsd_rec : nullptr, metric);

    const fs::path out = f.out.empty() ? fs::path("reports/decay") : fs::path(f.out);
    fs::create_directories(out);
    std::vector<std::string> outputs;

    // Prediction-only reports carry no error column.
    std::string csv = pred.has_actual
                          ? "tau,matched_iter,loss_const,scaled_noise,predicted,actual,rel_error\n"
                          : "tau,matched_iter,loss_const,scaled_noise,predicted\n";
    char buf[256];
    if (pred.has_actual)
        std::snprintf(buf, sizeof buf, "%.8g,%llu,%.10g,%.10g,%.10g,%.10g,%.8g\n",
                      pred.tau_target, static_cast<unsigned long long>(pred.matched_iter),
                      pred.loss_const, pred.scaled_noise, pred.predicted, pred.actual,
                      pred.rel_error);
    else
        std::snprintf(buf, sizeof buf, "%.8g,%llu,%.10g,%.10g,%.10g\n", pred.tau_target,
                      static_cast<unsigned long long>(pred.matched_iter), pred.loss_const,
                      pred.scaled_noise, pred.predicted);
    csv += buf;
    write_text_file(out / "decay.csv", csv);
    outputs.push_back("decay.csv");

    json extra;
    extra["tau"] = pred.tau_target;
    extra["matched_iter"] = pred.matched_iter;
    extra["tau_matched"] = pred.tau_matched;
    extra["loss_const"] = pred.loss_const;
    extra["scaled_noise"] = pred.scaled_noise;
    extra["predicted"] = pred.predicted;
    if (pred.has_actual) {
        extra["actual"] = pred.actual;
        extra["rel_error"] = pred.rel_error;
    }
    std::vector<std::string> hashes{const_rec.hash};
    if (wsd_rec) hashes.push_back(wsd_rec->hash);
    write_report_bundle(out, "decay", hashes, flags_to_json(f), outputs, extra);
    std::cout << "predicted post-decay loss " << pred.predicted;
    if (pred.has_actual)
        std::cout << ", actual " << pred.actual << ", relative error " << pred.rel_error;
    std::cout << "\n";
    std::cout << "wrote " << outputs.size() + 1 << " files to " << out.string() << "\n";
    return 0;
}

} // namespace

int run_cli(const std::vector<std::string>& args) {
    CLI::App app{"trajlab: desk-scale trajectory-invariance toolkit"};
    app.require_subcommand(1);

    // gen-config
    std::string tmpl, gen_out;
    auto* gen = app.add_subcommand("gen-config", "write a config file from a template");
    gen->add_option("template", tmpl, "one of: desk-small, desk-large-batch, desk-bss-type1, "
                                      "desk-bss-type2, desk-wsd")
        ->required();
    gen->add_option("--out", gen_out, "output path (default <template>.json)");

    // train
    std::string train_cfg, train_reg;
    auto* train_cmd = app.add_subcommand("train", "train a single run into the registry");
    train_cmd->add_option("--config", train_cfg, "config JSON path")->required();
    train_cmd->add_option("--registry", train_reg, "registry directory (or TRAJLAB_REGISTRY)");

    // sweep
    std::string sweep_spec, sweep_reg;
    int sweep_threads = 0;
    auto* sweep_cmd = app.add_subcommand("sweep", "run a (eta, lambda) sweep");
    sweep_cmd->add_option("--spec", sweep_spec, "sweep spec JSON path")->required();
    sweep_cmd->add_option("--registry", sweep_reg, "registry directory (or TRAJLAB_REGISTRY)");
    sweep_cmd->add_option("--threads", sweep_threads, "parallel cells (default from spec)");

    // analyze
    AnalyzeFlags flags;
    std::string kind;
    auto* an = app.add_subcommand("analyze", "produce report files from a registry");
    an->add_option("kind", kind, "invariance | powerlaw | paraboloid | eigen | scaling | decay")
        ->required();
    an->add_option("--registry", flags.registry, "registry directory (or TRAJLAB_REGISTRY)");
    an->add_option("--out", flags.out, "report output directory");
    an->add_option("--threshold", flags.threshold, "distance threshold (default 0.005)");
    an->add_option("--group-by", flags.group_by, "elr | lr (default elr)");
    an->add_option("--smooth-halflife", flags.smooth_halflife,
                   "EMA halflife in tokens, 0 = raw curves");
    an->add_option("--window", flags.window, "token window start:end (default common range)");
    an->add_option("--metric", flags.metric, "metric name (default val_loss)");
    an->add_option("--points", flags.points, "grid points for curve alignment (default 200)");
    an->add_option("--horizons", flags.horizons, "comma-separated token horizons (eigen)");
    an->add_option("--tau", flags.tau, "target gradient-flow time (decay)");
    an->add_option("--const-run", flags.const_run, "constant-LR source run hash (decay)");
    an->add_option("--wsd-run", flags.wsd_run, "paired decayed run hash (decay)");

    std::vector<const char*> argv;
    argv.push_back("trajlab");
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (*gen) return cmd_gen_config(tmpl, gen_out);
        if (*train_cmd) return cmd_train(train_cfg, train_reg);
        if (*sweep_cmd) return cmd_sweep(sweep_spec, sweep_reg, sweep_threads);
        if (*an) {
            if (kind == "invariance") return analyze_invariance(flags);
            if (kind == "powerlaw") return analyze_powerlaw(flags);
            if (kind == "paraboloid") return analyze_paraboloid(flags);
            if (kind == "eigen") return analyze_eigen(flags);
            if (kind == "scaling") return analyze_scaling(flags);
            if (kind == "decay") return analyze_decay(flags);
            std::cerr << "unknown analyze kind \"" << kind
                      << "\"; expected invariance | powerlaw | paraboloid | eigen | scaling | "
                         "decay\n";
            return 1;
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}

} // namespace trajlab

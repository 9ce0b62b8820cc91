#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "trajlab/checkpoint.hpp"
#include "trajlab/gns.hpp"
#include "trajlab/optim.hpp"

namespace trajlab {

struct DataConfig {
    std::uint64_t seed = 1;
    int vocab = 64;
    int order = 2;
    double concentration = 0.3;
};

struct GnsConfig {
    bool enabled = true;
    int micro_divisor = 8;         // b_small = max(1, B / micro_divisor)
    double ema_halflife_steps = 100.0;
};

// Complete, hashable description of one training run.
struct TrainConfig {
    ModelConfig model;
    DataConfig data;
    OptimConfig optim;
    LrSchedule::Kind lr_kind = LrSchedule::Kind::Constant;
    std::uint64_t warmup_tokens = 0;
    std::uint64_t decay_tokens = 0; // WSD only
    BsSchedule bs;
    std::uint64_t total_tokens = 0;
    std::uint64_t eval_every_tokens = 0;
    std::uint64_t log_every_steps = 1;
    std::uint64_t checkpoint_every_tokens = 0; // 0 = final checkpoint only
    std::uint64_t run_seed = 0;
    GnsConfig gns;
    std::string resume_from; // provenance tag, set by resume()

    LrSchedule lr_schedule() const;
    void validate() const;
};

std::string config_to_json_string(const TrainConfig& cfg);
TrainConfig config_from_json_string(const std::string& text);
std::string config_hash_hex(const TrainConfig& cfg);

// Validation set size: a fixed held-out stream of 2^15 examples.
inline constexpr std::size_t kValExamples = std::size_t{1} << 15;

struct MetricPoint {
    std::uint64_t iter = 0;
    std::uint64_t tokens = 0;
    std::optional<double> train_loss;
    std::optional<double> val_loss;
    double lr = 0.0;
    std::size_t batch_size = 0;
    double param_norm = 0.0;
    std::optional<double> gns_tr_noise;
    std::optional<double> gns_gnorm2;
    std::optional<double> gns_b_precond;
    bool gns_valid = false;
    double clip_scale = 1.0;
};

// One self-describing key/value object per line; keys exactly:
// iter, tokens, train_loss, val_loss, lr, batch_size, param_norm,
// gns_tr_noise, gns_gnorm2, gns_b_precond, gns_valid, clip_scale.
std::string metric_line(const MetricPoint& p);
MetricPoint metric_from_line(const std::string& line);

enum class RunStatus { Completed, Diverged };

const char* run_status_name(RunStatus s);

struct RunRecord {
    TrainConfig config;
    std::string hash;
    RunStatus status = RunStatus::Completed;
    std::vector<MetricPoint> points;
};

struct TrainHooks {
    std::function<void(const MetricPoint&)> on_log;
    std::function<void(const RunCheckpoint&)> on_checkpoint; // periodic and final
};

// Deterministic training loop: draw batch -> forward -> backward -> GNS
// measurement -> clip -> AdamW step -> log. Divergence (non-finite loss or
// loss above 10x the initial value) terminates the run with status Diverged
// and keeps the partial record.
RunRecord train(const TrainConfig& cfg, const TrainHooks& hooks = {});

// Continue from a checkpoint under cfg (normally the source config with
// overrides applied). Counters, moments, stream position and the GNS smoother
// are restored so an overrides-free continuation is bitwise identical.
RunRecord resume_training(const TrainConfig& cfg, const RunCheckpoint& start,
                          const TrainHooks& hooks = {});

struct ResumeOverrides {
    std::optional<double> lr;           // applies immediately, no re-warmup
    std::optional<double> weight_decay;
    std::optional<BsSchedule> bs;
    std::optional<std::uint64_t> extra_tokens; // budget beyond the checkpoint
};

TrainConfig apply_overrides(const TrainConfig& base, const ResumeOverrides& o,
                            const RunCheckpoint& ck);

// Directory of run folders named by config hash, each holding the config
// snapshot, metric log, status and checkpoints. Commits are atomic
// (tmp directory + rename); completed runs are never mutated.
class Registry {
public:
    explicit Registry(std::filesystem::path root);

    const std::filesystem::path& root() const { return root_; }
    std::filesystem::path run_dir(const std::string& hash) const { return root_ / hash; }
    bool has_run(const std::string& hash) const;

    // Train cfg and commit the run folder; an existing run is loaded instead.
    RunRecord execute(const TrainConfig& cfg);

    // Resume from a checkpoint file with overrides; commits a new run folder.
    RunRecord execute_resume(const TrainConfig& source_cfg,
                             const std::filesystem::path& checkpoint,
                             const ResumeOverrides& overrides);

    // Train cfg starting from an in-memory checkpoint state and commit.
    RunRecord execute_from(const TrainConfig& cfg, const RunCheckpoint& start);

    RunRecord load_run(const std::string& hash) const;
    std::vector<std::string> list_hashes() const;
    std::vector<RunRecord> load_all() const;

private:
    RunRecord commit(const TrainConfig& cfg, const RunCheckpoint* start);
    std::filesystem::path root_;
};

struct SweepSpec {
    TrainConfig base;
    std::vector<double> etas;
    std::vector<double> lambdas;
    // Optional explicit (eta, lambda) cells; when set, replaces the cross
    // product of the two grids.
    std::vector<std::pair<double, double>> cells;
    std::string resume_checkpoint; // Type 1 source checkpoint, optional
    std::optional<std::uint64_t> resume_extra_tokens;
    int threads = 1;
};

struct SweepCellResult {
    double eta = 0.0;
    double lambda = 0.0;
    std::string hash;
    RunStatus status = RunStatus::Completed;
    bool skipped = false;
};

// One run per grid cell, committed incrementally; completed hashes are
// skipped so interrupted sweeps resume where they left off. Cell divergence
// is recorded, not fatal.
std::vector<SweepCellResult> run_sweep(Registry& registry, const SweepSpec& spec,
                                       const std::function<void(const SweepCellResult&)>& on_cell = {});

// Small/Large/Mixed per the GNS criterion, over a run's logged series.
BatchRegime classify_batch_regime(const RunRecord& run);

} // namespace trajlab

#pragma once

#include "eddkit/checkpoint.hpp"
#include "eddkit/losses.hpp"
#include "eddkit/nn.hpp"
#include "eddkit/optim.hpp"
#include "eddkit/uncertainty.hpp"

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

namespace edd {

// Builds a freshly initialised model from a seed.
using ModelFactory = std::function<std::unique_ptr<Model>(std::uint64_t seed)>;

struct TrainConfig {
    std::size_t epochs = 10;
    std::size_t batch_size = 32;
    AdamConfig adam;
    LrSchedule schedule = LrSchedule::constant(1e-3);
    double label_smoothing = 0.1;
};

// Per optimisation step. The weighted term columns add up to `total`.
struct StepLog {
    std::int64_t step = 0;
    double lr = 0.0;
    double nll_term = 0.0;
    double kl_term = 0.0;
    double edd_term = 0.0;
    double total = 0.0;
};

struct TrainLog {
    std::vector<StepLog> steps;
};

// Plain NLL training (with label smoothing). Steps restart at 1 for each call
// unless an AdamState with history is passed in. `on_step` runs after each
// update with the 1-based step index.
TrainLog train_model(Model& model, const Dataset& data, const TrainConfig& config, RngStream shuffle,
                     AdamState* state = nullptr, std::size_t max_steps = 0,
                     const std::function<void(std::int64_t)>& on_step = {});

struct EnsembleSpec {
    enum class Kind { Deep, Snapshot };
    Kind kind = Kind::Deep;
    std::size_t members = 5;
    std::uint64_t base_seed = 0;
    TrainConfig train;
    // Snapshot settings: cycle length in epochs and the triangle bounds.
    std::size_t period_epochs = 3;
    double eta_min = 1e-4;
    double eta_max = 1e-3;
    void validate() const;
};

std::string to_string(EnsembleSpec::Kind kind);
EnsembleSpec::Kind ensemble_kind_from_string(const std::string& s);

// Member m is built with seed base_seed + m and shuffled by a stream derived
// from that seed.
std::vector<Checkpoint> train_deep_ensemble(const EnsembleSpec& spec, const Dataset& data, const ModelFactory& factory,
                                            std::vector<TrainLog>* logs = nullptr);

struct SnapshotRun {
    std::vector<Checkpoint> snapshots;
    std::vector<double> lr_trace; // lr used at steps 1..N
};

// Continues from `base` under a cyclic triangular schedule and takes one
// snapshot at the end of every cycle.
SnapshotRun train_snapshot_ensemble(const Checkpoint& base, const EnsembleSpec& spec, const Dataset& data,
                                    const ModelFactory& factory);

// Teacher-forced member logits per example, normalised per row. Example i has
// logits of shape [L_i x M x K].
struct TeacherOutputs {
    static constexpr std::uint32_t kVersion = 1;
    std::size_t members = 0;
    std::size_t classes = 0;
    std::vector<std::vector<int>> targets;
    std::vector<Tensor> logits;

    std::size_t size() const noexcept { return targets.size(); }
    // Stacked rows for a list of example indices.
    TeacherRows rows(std::span<const std::size_t> indices) const;
    void validate() const;

    std::vector<std::uint8_t> encode() const;
    static TeacherOutputs decode(std::span<const std::uint8_t> bytes);
    void save(const std::filesystem::path& path) const;
    static TeacherOutputs load(const std::filesystem::path& path);
};

// Throws unless every member has the same kind, class count, parameter names
// and shapes.
void check_same_architecture(std::span<const Model* const> members);

TeacherOutputs collect_teacher_logits(std::span<const Model* const> members, const Dataset& data);

// Raw logits of every member on one decoded hypothesis: [L x M x K].
Tensor member_logits_on(std::span<const TinySeqModel* const> members, std::span<const int> src,
                        std::span<const int> decoded);

struct DistillSpec {
    StudentFamily family = StudentFamily::LaplaceLogit;
    KDConfig kd;
    EDDConfig edd;
    TrainConfig train;
    std::uint64_t seed = 0;
    // Start from teacher member 0's weights; student-only parameters keep
    // their initial values.
    bool init_from_teacher = true;
    // Logit-space families only: train on the logit-space likelihood alone,
    // without the interpolated KD term.
    bool edd_only = false;
    void validate() const;
};

struct DistillResult {
    Checkpoint student;
    TrainLog log;
};

// Filled as training runs, so it stays meaningful when distill throws: the
// steps completed so far and the student weights before the failing update.
struct DistillProgress {
    TrainLog log;
    Checkpoint student;
};

// Copies the entries of `teacher_weights` into same-named parameters of the
// student. Every checkpoint entry must exist in the student with equal shape.
void restore_shared(Model& student, const Checkpoint& teacher_weights);

// Trains a student on `data` against `teacher`. The factory must build a
// model whose scale head matches the family. Throws DivergenceError carrying
// the step index and the term ("nll", "kl", "edd" or a parameter name) that
// went non-finite.
DistillResult distill(const DistillSpec& spec, const TeacherOutputs& teacher, const Dataset& data,
                      const ModelFactory& student_factory, const Checkpoint* teacher_member = nullptr,
                      DistillProgress* progress = nullptr);

// Per step: Laplace MLE over the M member rows, S samples from the fit,
// softmax, then the usual member-set reduction. member_logits is [L x M x K].
UncertaintyScores augmented_ensemble_scores(const Tensor& member_logits, std::size_t samples, RngStream rng);

} // namespace edd

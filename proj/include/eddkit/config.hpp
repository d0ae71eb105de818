#pragma once

#include "eddkit/decode.hpp"
#include "eddkit/ensembles.hpp"
#include "eddkit/seqtask.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace edd {

struct TaskSection {
    enum class Kind { Toy, Seq };
    Kind kind = Kind::Toy;
    ToySpec toy;     // seed is derived from the top-level seed
    SeqTaskSpec seq; // likewise
    std::size_t train_size = 2000;
};

struct ModelSection {
    std::vector<std::size_t> hidden{32, 32}; // toy MLP
    std::size_t d_model = 24;                // sequence model
    std::size_t seq_hidden = 32;
};

struct EnsembleSection {
    EnsembleSpec::Kind kind = EnsembleSpec::Kind::Deep;
    std::size_t members = 5;
    TrainConfig train;
    // Snapshot runs first train a base model for base_epochs with `train`,
    // then cycle between eta_min and eta_max every period_epochs.
    std::size_t base_epochs = 10;
    std::size_t period_epochs = 3;
    double eta_min = 1e-4;
    double eta_max = 1e-3;
};

struct DistillSection {
    StudentFamily family = StudentFamily::LaplaceLogit;
    KDConfig kd;
    double beta = 0.1;
    TrainConfig train;
    bool init_from_teacher = true;
    bool edd_only = false;
};

struct EvalSection {
    std::vector<OodShift> shifts{OodShift{}};
    std::size_t samples = 32;
    std::size_t beam = 4;
    double length_penalty = 0.6;
    std::optional<std::size_t> max_len;
    std::size_t id_count = 100;
    std::size_t ood_count = 100;
    std::size_t grid_resolution = 100;
};

struct ExperimentConfig {
    std::uint64_t seed = 0;
    std::string output_dir = "runs/default";
    TaskSection task;
    ModelSection model;
    EnsembleSection ensemble;
    DistillSection distill;
    EvalSection eval;
};

// Parses JSON text. Unknown keys, type errors and out-of-range values are all
// collected and reported together in one ConfigError.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);

// Canonical JSON (sorted keys, every field present).
std::string serialize_config(const ExperimentConfig& config);
// FNV-1a 64 of the canonical serialisation, as 16 hex digits.
std::string config_hash(const ExperimentConfig& config);

std::string to_string(TaskSection::Kind kind);

// Independent seed for one named component, derived from the top-level seed.
std::uint64_t component_seed(std::uint64_t seed, std::string_view component);

} // namespace edd

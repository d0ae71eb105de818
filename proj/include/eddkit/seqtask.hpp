#pragma once

#include "eddkit/nn.hpp"
#include "eddkit/rng.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace edd {

// Three isotropic Gaussian clusters in the plane.
struct ToySpec {
    std::array<std::array<double, 2>, 3> centers{{{0.0, 0.0}, {3.0, 0.0}, {1.5, 2.6}}};
    std::array<double, 3> sigmas{1.0, 1.0, 1.0};
    std::size_t points_per_class = 1000;
    std::uint64_t seed = 0;
    void validate() const;
};

// Class-major: the first points_per_class examples are class 0, and so on.
Dataset gen_toy(const ToySpec& spec);

enum class LengthShape { Uniform, Binomial };

// Synthetic transduction task. Content ids start at 3; the top `heldout` ids
// never appear in in-distribution sources and are reserved for vocab shift.
// The target is a fixed substitution cipher of the source (keyed by `seed`),
// reversed inside consecutive windows of `reorder_window` tokens, with each
// target token resampled uniformly with probability `noise`.
struct SeqTaskSpec {
    std::size_t vocab = 64;
    std::size_t min_len = 3;
    std::size_t max_len = 10;
    LengthShape length_shape = LengthShape::Uniform;
    std::size_t reorder_window = 1;
    double noise = 0.0;
    std::size_t heldout = 8;
    std::uint64_t seed = 0;

    void validate() const;
    int first_heldout() const noexcept { return static_cast<int>(vocab - heldout); }
    std::size_t id_vocab() const noexcept { return vocab - heldout - kFirstContentToken; }
};

struct OodShift {
    enum class Kind { VocabShift, LengthShift, RuleShift };
    Kind kind = Kind::LengthShift;
    double magnitude = 2.0;
    void validate() const;
    std::string name() const;
};

std::string to_string(OodShift::Kind kind);
OodShift::Kind shift_kind_from_string(const std::string& s);
std::string to_string(LengthShape shape);
LengthShape length_shape_from_string(const std::string& s);

// Cipher table over the full vocabulary (reserved ids map to themselves).
std::vector<int> cipher_table(const SeqTaskSpec& spec);
// Target tokens (with EOS) for a source body (no EOS), before noise.
std::vector<int> transduce(const SeqTaskSpec& spec, const std::vector<int>& cipher, std::span<const int> body);

// `stream` selects an independent split (train, test, ...) under the same task.
Dataset gen_seq_dataset(const SeqTaskSpec& spec, std::size_t count, std::uint64_t stream = 0);
std::vector<std::vector<int>> gen_ood_dataset(const SeqTaskSpec& spec, const OodShift& shift, std::size_t count,
                                              std::uint64_t stream = 0);
// Source-only in-distribution sequences drawn the same way as gen_seq_dataset.
std::vector<std::vector<int>> gen_id_sources(const SeqTaskSpec& spec, std::size_t count, std::uint64_t stream = 0);

// Length in content tokens (EOS excluded).
std::size_t content_length(std::span<const int> seq) noexcept;

// Line-oriented token files: space-separated ids, one sequence per line.
void write_token_lines(const std::filesystem::path& path, const std::vector<std::vector<int>>& seqs);
std::vector<std::vector<int>> read_token_lines(const std::filesystem::path& path);
void write_parallel(const std::filesystem::path& src_path, const std::filesystem::path& tgt_path, const Dataset& data);
Dataset read_parallel(const std::filesystem::path& src_path, const std::filesystem::path& tgt_path);
// CSV with header x,y,label.
void write_toy_csv(const std::filesystem::path& path, const Dataset& data);
Dataset read_toy_csv(const std::filesystem::path& path);

} // namespace edd

#pragma once

#include "eddkit/errors.hpp"
#include "eddkit/losses.hpp"
#include "eddkit/nn.hpp"

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace edd {

// Raised when a statistic is undefined for otherwise well-formed input
// (for example a correlation against a constant list).
struct DegenerateInput : InvalidArgument {
    explicit DegenerateInput(const std::string& what) : InvalidArgument(what) {}
};

// P(ood > id) + 0.5 P(ood == id). Higher scores should mean "more OOD".
double auroc(std::span<const double> id_scores, std::span<const double> ood_scores);

// Corpus BLEU-4 in [0, 100], single reference, no smoothing.
double bleu(const std::vector<std::vector<int>>& hypotheses, const std::vector<std::vector<int>>& references);
double bleu(const std::vector<std::vector<std::string>>& hypotheses,
            const std::vector<std::vector<std::string>>& references);

// Sample Pearson correlation.
double pearson(std::span<const double> xs, std::span<const double> ys);

struct DetectionReport {
    std::string model;
    std::string measure; // "TU" or "KU"
    std::string id_name;
    std::string ood_name;
    std::vector<double> id_scores;
    std::vector<double> ood_scores;
    double auroc = 0.5;
};

DetectionReport make_detection_report(std::string model, std::string measure, std::string id_name,
                                      std::string ood_name, std::vector<double> id_scores,
                                      std::vector<double> ood_scores);
// Header `score,label`; label 0 for ID rows, 1 for OOD rows.
void write_detection_csv(const std::filesystem::path& path, const DetectionReport& report);
// Reads a score CSV back into (id, ood) lists.
DetectionReport read_detection_csv(const std::filesystem::path& path);

struct GridBounds {
    double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
};

// Bounding box of the dataset features.
GridBounds data_bounds(const Dataset& data);

// Cell (i, j) is centred at x0 + (i + 0.5) (x1 - x0) / r, likewise for y;
// cells are stored with the x index varying fastest.
struct GridEval {
    GridBounds bounds;
    std::size_t resolution = 0;
    std::vector<double> xs;
    std::vector<double> ys;
    std::vector<double> loss;
    std::vector<double> confidence;
};

// Evaluates a 2-D classifier over a grid. With `student == nullptr` the
// teacher ensemble itself is evaluated: confidence comes from the member mean
// and the loss column is zero. Otherwise the loss is the per-example
// distillation loss of `family` against the teacher at that input (KL for KD,
// the Dirichlet loss with alpha = exp(logits), the logit-space loss for L-EDD
// students) and the confidence is the max of softmax(logits).
GridEval grid_eval(std::span<const MlpModel* const> teacher, const MlpModel* student, StudentFamily family,
                   const GridBounds& bounds, std::size_t resolution);

// Header `x,y,loss,confidence`.
void write_grid_csv(const std::filesystem::path& path, const GridEval& grid);

// Self-contained SVG heatmap of one grid column ("loss" or "confidence").
std::string grid_svg(const GridEval& grid, const std::string& field, const std::string& title);
void write_grid_svg(const std::filesystem::path& path, const GridEval& grid, const std::string& field,
                    const std::string& title);

} // namespace edd

#include "eddkit/evalkit.hpp"

#include "eddkit/distributions.hpp"
#include "eddkit/io.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>

namespace edd {

namespace {

template <typename T>
double corpus_bleu(const std::vector<std::vector<T>>& hyps, const std::vector<std::vector<T>>& refs) {
    if (hyps.empty()) throw InvalidArgument("bleu: empty corpus");
    if (hyps.size() != refs.size())
        throw InvalidArgument("bleu: " + std::to_string(hyps.size()) + " hypotheses for " +
                              std::to_string(refs.size()) + " references");
    constexpr std::size_t kOrder = 4;
    std::array<std::uint64_t, kOrder> matched{}, total{};
    std::uint64_t hyp_len = 0, ref_len = 0;
    for (std::size_t s = 0; s < hyps.size(); ++s) {
        const auto& h = hyps[s];
        const auto& r = refs[s];
        hyp_len += h.size();
        ref_len += r.size();
        for (std::size_t n = 1; n <= kOrder; ++n) {
            if (h.size() < n) continue;
            std::map<std::vector<T>, std::uint64_t> ref_counts;
            for (std::size_t i = 0; i + n <= r.size(); ++i) ++ref_counts[std::vector<T>(r.begin() + i, r.begin() + i + n)];
            std::map<std::vector<T>, std::uint64_t> hyp_counts;
            for (std::size_t i = 0; i + n <= h.size(); ++i) ++hyp_counts[std::vector<T>(h.begin() + i, h.begin() + i + n)];
            for (const auto& [gram, c] : hyp_counts) {
                auto it = ref_counts.find(gram);
                if (it != ref_counts.end()) matched[n - 1] += std::min(c, it->second);
            }
            total[n - 1] += h.size() - n + 1;
        }
    }
    double log_prec = 0.0;
    for (std::size_t n = 0; n < kOrder; ++n) {
        if (matched[n] == 0 || total[n] == 0) return 0.0;
        log_prec += std::log(static_cast<double>(matched[n]) / static_cast<double>(total[n]));
    }
    const double bp = std::exp(std::min(0.0, 1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len)));
    return 100.0 * bp * std::exp(log_prec / static_cast<double>(kOrder));
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        default: out += c;
        }
    }
    return out;
}

// Row slice [1 x ...] of a tensor whose first dimension indexes rows.
Tensor slice_row(const Tensor& t, std::size_t r) {
    Shape shape = t.shape();
    const std::size_t stride = t.numel() / shape[0];
    shape[0] = 1;
    std::vector<double> v(t.values().begin() + static_cast<std::ptrdiff_t>(r * stride),
                          t.values().begin() + static_cast<std::ptrdiff_t>((r + 1) * stride));
    return Tensor(shape, std::move(v));
}

} // namespace

double auroc(std::span<const double> id_scores, std::span<const double> ood_scores) {
    if (id_scores.empty() || ood_scores.empty()) throw InvalidArgument("auroc: score lists must be non-empty");
    std::vector<double> id(id_scores.begin(), id_scores.end());
    std::sort(id.begin(), id.end());
    // Twice the Mann-Whitney count, kept integral so ties are exact.
    std::uint64_t twice = 0;
    for (double s : ood_scores) {
        const auto lo = std::lower_bound(id.begin(), id.end(), s);
        const auto hi = std::upper_bound(lo, id.end(), s);
        twice += 2 * static_cast<std::uint64_t>(lo - id.begin()) + static_cast<std::uint64_t>(hi - lo);
    }
    return static_cast<double>(twice) / (2.0 * static_cast<double>(id.size()) * static_cast<double>(ood_scores.size()));
}

double bleu(const std::vector<std::vector<int>>& hypotheses, const std::vector<std::vector<int>>& references) {
    return corpus_bleu(hypotheses, references);
}

double bleu(const std::vector<std::vector<std::string>>& hypotheses,
            const std::vector<std::vector<std::string>>& references) {
    return corpus_bleu(hypotheses, references);
}

double pearson(std::span<const double> xs, std::span<const double> ys) {
    if (xs.size() != ys.size()) throw InvalidArgument("pearson: lists differ in length");
    if (xs.size() < 2) throw InvalidArgument("pearson: need at least 2 points");
    const double n = static_cast<double>(xs.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double dx = xs[i] - mx, dy = ys[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) throw DegenerateInput("pearson: correlation undefined for a constant list");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

DetectionReport make_detection_report(std::string model, std::string measure, std::string id_name,
                                      std::string ood_name, std::vector<double> id_scores,
                                      std::vector<double> ood_scores) {
    DetectionReport r;
    r.auroc = auroc(id_scores, ood_scores);
    r.model = std::move(model);
    r.measure = std::move(measure);
    r.id_name = std::move(id_name);
    r.ood_name = std::move(ood_name);
    r.id_scores = std::move(id_scores);
    r.ood_scores = std::move(ood_scores);
    return r;
}

void write_detection_csv(const std::filesystem::path& path, const DetectionReport& report) {
    std::string out = "score,label\n";
    for (double s : report.id_scores) out += fmt(s) + ",0\n";
    for (double s : report.ood_scores) out += fmt(s) + ",1\n";
    atomic_write_text(path, out);
}

DetectionReport read_detection_csv(const std::filesystem::path& path) {
    std::istringstream in(read_text_file(path));
    std::string line;
    if (!std::getline(in, line) || line != "score,label") throw IoError(path.string() + ": expected header score,label");
    DetectionReport r;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw IoError(path.string() + ": malformed row '" + line + "'");
        const double score = std::stod(line.substr(0, comma));
        const std::string label = line.substr(comma + 1);
        if (label == "0")
            r.id_scores.push_back(score);
        else if (label == "1")
            r.ood_scores.push_back(score);
        else
            throw IoError(path.string() + ": bad label '" + label + "'");
    }
    r.auroc = auroc(r.id_scores, r.ood_scores);
    return r;
}

GridBounds data_bounds(const Dataset& data) {
    if (data.empty()) throw InvalidArgument("data_bounds: empty dataset");
    GridBounds b{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(),
                 std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
    for (const auto& ex : data) {
        if (ex.features.size() != 2) throw ShapeError("data_bounds: features must be 2-D");
        b.x0 = std::min(b.x0, ex.features[0]);
        b.x1 = std::max(b.x1, ex.features[0]);
        b.y0 = std::min(b.y0, ex.features[1]);
        b.y1 = std::max(b.y1, ex.features[1]);
    }
    return b;
}

GridEval grid_eval(std::span<const MlpModel* const> teacher, const MlpModel* student, StudentFamily family,
                   const GridBounds& bounds, std::size_t resolution) {
    if (teacher.empty()) throw InvalidArgument("grid_eval: empty teacher");
    if (resolution < 1) throw InvalidArgument("grid_eval: resolution must be >= 1");
    auto check_2d = [](const MlpModel& m) {
        if (m.config().input_dim != 2)
            throw ShapeError("grid_eval: model input width is " + std::to_string(m.config().input_dim) + ", expected 2");
    };
    for (const auto* m : teacher) check_2d(*m);
    if (student) check_2d(*student);

    GridEval g;
    g.bounds = bounds;
    g.resolution = resolution;
    const std::size_t n = resolution * resolution;
    Tensor inputs = Tensor::matrix(n, 2);
    const double dx = (bounds.x1 - bounds.x0) / static_cast<double>(resolution);
    const double dy = (bounds.y1 - bounds.y0) / static_cast<double>(resolution);
    for (std::size_t j = 0; j < resolution; ++j)
        for (std::size_t i = 0; i < resolution; ++i) {
            const double x = bounds.x0 + (static_cast<double>(i) + 0.5) * dx;
            const double y = bounds.y0 + (static_cast<double>(j) + 0.5) * dy;
            g.xs.push_back(x);
            g.ys.push_back(y);
            inputs.at(j * resolution + i, 0) = x;
            inputs.at(j * resolution + i, 1) = y;
        }

    NoGradGuard no_grad;
    const std::size_t m = teacher.size();
    const std::size_t k = teacher.front()->num_classes();
    Tensor raw({n, m, k}, 0.0);
    for (std::size_t t = 0; t < m; ++t) {
        if (teacher[t]->num_classes() != k) throw ShapeError("grid_eval: teacher members disagree on class count");
        const Tensor z = forward_classifier(*teacher[t], inputs).logits.value();
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < k; ++c) raw.values()[(r * m + t) * k + c] = z.at(r, c);
    }
    const TeacherRows rows = make_teacher_rows(raw);

    g.loss.assign(n, 0.0);
    g.confidence.assign(n, 0.0);
    if (!student) {
        for (std::size_t r = 0; r < n; ++r) {
            const auto p = rows.mean_probs.row_span(r);
            g.confidence[r] = *std::max_element(p.begin(), p.end());
        }
        return g;
    }
    if (student->num_classes() != k) throw ShapeError("grid_eval: student and teacher class counts differ");
    const ModelOutput out = forward_classifier(*student, inputs);
    const Tensor& logits = out.logits.value();
    const Tensor probs = softmax(logits);
    const std::vector<double> one{1.0};
    for (std::size_t r = 0; r < n; ++r) {
        const auto p = probs.row_span(r);
        g.confidence[r] = *std::max_element(p.begin(), p.end());
        const Tensor z = slice_row(logits, r);
        switch (family) {
        case StudentFamily::Kd:
            g.loss[r] = kl_term_value(z, slice_row(rows.mean_probs, r), 1.0, one);
            break;
        case StudentFamily::Dirichlet: {
            Tensor alpha = z;
            for (double& v : alpha.values()) v = std::exp(v);
            g.loss[r] = dirichlet_edd_loss_value(alpha, slice_row(rows.member_probs, r), one);
            break;
        }
        case StudentFamily::LaplaceLogit:
        case StudentFamily::GaussianLogit: {
            if (!out.log_scale.defined()) throw InvalidArgument("grid_eval: logit-space student needs a scale head");
            Tensor sigma = slice_row(out.log_scale.value(), r);
            for (double& v : sigma.values()) v = std::max(std::exp(v), kSigmaFloor);
            g.loss[r] = family == StudentFamily::LaplaceLogit
                            ? laplace_edd_loss_value(z, sigma, slice_row(rows.member_logits, r), one)
                            : gaussian_edd_loss_value(z, sigma, slice_row(rows.member_logits, r), one);
            break;
        }
        }
    }
    return g;
}

void write_grid_csv(const std::filesystem::path& path, const GridEval& grid) {
    std::string out = "x,y,loss,confidence\n";
    for (std::size_t i = 0; i < grid.xs.size(); ++i)
        out += fmt(grid.xs[i]) + "," + fmt(grid.ys[i]) + "," + fmt(grid.loss[i]) + "," + fmt(grid.confidence[i]) + "\n";
    atomic_write_text(path, out);
}

std::string grid_svg(const GridEval& grid, const std::string& field, const std::string& title) {
    const std::vector<double>* values = nullptr;
    if (field == "loss")
        values = &grid.loss;
    else if (field == "confidence")
        values = &grid.confidence;
    else
        throw InvalidArgument("grid_svg: unknown field '" + field + "'");
    const std::size_t r = grid.resolution;
    if (r == 0 || values->size() != r * r) throw ShapeError("grid_svg: grid is empty or inconsistent");

    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (double v : *values)
        if (std::isfinite(v)) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    if (!std::isfinite(lo)) lo = hi = 0.0;
    const double span = hi > lo ? hi - lo : 1.0;

    // Light yellow to dark blue.
    auto colour = [&](double v) {
        const double t = std::isfinite(v) ? std::clamp((v - lo) / span, 0.0, 1.0) : 0.0;
        const int red = static_cast<int>(std::lround(255 + t * (8 - 255)));
        const int green = static_cast<int>(std::lround(247 + t * (48 - 247)));
        const int blue = static_cast<int>(std::lround(188 + t * (107 - 188)));
        char buf[8];
        std::snprintf(buf, sizeof buf, "#%02x%02x%02x", red, green, blue);
        return std::string(buf);
    };

    const double plot = 400.0, cell = plot / static_cast<double>(r), margin = 40.0;
    std::ostringstream s;
    s << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << plot + 2 * margin + 80 << "\" height=\""
      << plot + 2 * margin << "\">\n"
      << "<text x=\"" << margin << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">" << xml_escape(title)
      << " (" << field << ")</text>\n<g shape-rendering=\"crispEdges\">\n";
    for (std::size_t j = 0; j < r; ++j)
        for (std::size_t i = 0; i < r; ++i) {
            const double x = margin + static_cast<double>(i) * cell;
            const double y = margin + static_cast<double>(r - 1 - j) * cell;
            s << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell << "\" height=\"" << cell
              << "\" fill=\"" << colour((*values)[j * r + i]) << "\"/>\n";
        }
    s << "</g>\n";
    const double lx = margin + plot + 20;
    s << "<defs><linearGradient id=\"ramp\" x1=\"0\" y1=\"1\" x2=\"0\" y2=\"0\">"
      << "<stop offset=\"0\" stop-color=\"" << colour(lo) << "\"/><stop offset=\"1\" stop-color=\"" << colour(hi)
      << "\"/></linearGradient></defs>\n"
      << "<rect x=\"" << lx << "\" y=\"" << margin << "\" width=\"16\" height=\"" << plot
      << "\" fill=\"url(#ramp)\" stroke=\"#333\"/>\n"
      << "<text x=\"" << lx + 20 << "\" y=\"" << margin + 10 << "\" font-family=\"sans-serif\" font-size=\"11\">max "
      << fmt(hi) << "</text>\n"
      << "<text x=\"" << lx + 20 << "\" y=\"" << margin + plot << "\" font-family=\"sans-serif\" font-size=\"11\">min "
      << fmt(lo) << "</text>\n"
      << "<text x=\"" << margin << "\" y=\"" << margin + plot + 20
      << "\" font-family=\"sans-serif\" font-size=\"11\">x [" << fmt(grid.bounds.x0) << ", " << fmt(grid.bounds.x1)
      << "], y [" << fmt(grid.bounds.y0) << ", " << fmt(grid.bounds.y1) << "]</text>\n"
      << "</svg>\n";
    return s.str();
}

void write_grid_svg(const std::filesystem::path& path, const GridEval& grid, const std::string& field,
                    const std::string& title) {
    atomic_write_text(path, grid_svg(grid, field, title));
}

} // namespace edd

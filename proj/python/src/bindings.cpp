#include "eddkit/commands.hpp"
#include "eddkit/config.hpp"
#include "eddkit/distributions.hpp"
#include "eddkit/errors.hpp"
#include "eddkit/evalkit.hpp"
#include "eddkit/losses.hpp"
#include "eddkit/seqtask.hpp"
#include "eddkit/uncertainty.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace edd;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
    Shape shape(a.shape(), a.shape() + a.ndim());
    return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    Array out(shape);
    std::copy(t.values().begin(), t.values().end(), out.mutable_data());
    return out;
}

std::vector<double> to_vector(const Array& a) { return {a.data(), a.data() + a.size()}; }

Samples to_samples(const Array& a) {
    if (a.ndim() != 2) throw ShapeError("samples must be a 2-d array [N x K]");
    Samples out(a.shape(0));
    for (py::ssize_t i = 0; i < a.shape(0); ++i) out[i].assign(a.data(i, 0), a.data(i, 0) + a.shape(1));
    return out;
}

py::dict scores_dict(const UncertaintyScores& s) {
    py::dict d;
    d["total"] = s.total;
    d["knowledge"] = s.knowledge;
    d["data"] = s.data;
    return d;
}

StudentFamily family_arg(const std::string& name) { return student_family_from_string(name); }

} // namespace

PYBIND11_MODULE(_eddkit, m) {
    m.doc() = "Ensemble distribution distillation toolkit";
    m.attr("__version__") = kVersion;

    // Translators run newest first, so the base class is registered first.
    const auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<InvalidArgument>(m, "InvalidArgument", PyExc_ValueError);
    py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
    py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
    py::register_exception<IoError>(m, "IoError", base.ptr());
    py::register_exception<DivergenceError>(m, "DivergenceError", base.ptr());

    // Distributions.
    m.def("dirichlet_log_pdf",
          [](const Array& alpha, const Array& pi) { return dirichlet_log_pdf({to_vector(alpha)}, to_vector(pi)); },
          py::arg("alpha"), py::arg("pi"));
    m.def("laplace_log_pdf",
          [](const Array& mu, const Array& sigma, const Array& z) {
              return laplace_log_pdf({to_vector(mu), to_vector(sigma)}, to_vector(z));
          },
          py::arg("mu"), py::arg("sigma"), py::arg("z"));
    m.def("gaussian_log_pdf",
          [](const Array& mu, const Array& sigma, const Array& z) {
              return gaussian_log_pdf({to_vector(mu), to_vector(sigma)}, to_vector(z));
          },
          py::arg("mu"), py::arg("sigma"), py::arg("z"));
    m.def("fit_laplace",
          [](const Array& samples, double floor) {
              const auto p = fit_laplace_mle(to_samples(samples), floor);
              return py::make_tuple(p.mu, p.sigma);
          },
          py::arg("samples"), py::arg("sigma_floor") = kSigmaFloor,
          "Per-class median and mean absolute deviation of an [N x K] array.");
    m.def("fit_gaussian",
          [](const Array& samples, double floor) {
              const auto p = fit_gaussian_mle(to_samples(samples), floor);
              return py::make_tuple(p.mu, p.sigma);
          },
          py::arg("samples"), py::arg("sigma_floor") = kSigmaFloor);
    m.def("sample_laplace",
          [](const Array& mu, const Array& sigma, std::size_t n, std::uint64_t seed) {
              return sample(DiagLaplaceParams{to_vector(mu), to_vector(sigma)}, n, RngStream(seed));
          },
          py::arg("mu"), py::arg("sigma"), py::arg("n"), py::arg("seed") = 0);

    // Losses.
    m.def("softmax", [](const Array& z) { return to_array(softmax(to_tensor(z))); }, py::arg("logits"));
    m.def("normalize_logits", [](const Array& z) { return to_array(normalize_logits(to_tensor(z))); }, py::arg("logits"));
    m.def("nll_loss",
          [](const Array& logits, const std::vector<int>& targets, double smoothing) {
              return nll_loss_value(to_tensor(logits), targets, smoothing);
          },
          py::arg("logits"), py::arg("targets"), py::arg("label_smoothing") = 0.1);
    m.def("kd_loss",
          [](const Array& logits, const Array& teacher_probs, const std::vector<int>& targets, double lambda,
             double temperature, double smoothing) {
              const KDParts p = kd_loss_value(to_tensor(logits), to_tensor(teacher_probs), targets,
                                              KDConfig{lambda, temperature, smoothing});
              py::dict d;
              d["nll"] = p.nll;
              d["kl"] = p.kl;
              d["total"] = p.total;
              return d;
          },
          py::arg("logits"), py::arg("teacher_probs"), py::arg("targets"), py::arg("lam") = 0.5,
          py::arg("temperature") = 0.8, py::arg("label_smoothing") = 0.1);
    m.def("dirichlet_edd_loss",
          [](const Array& alpha, const Array& member_logits) {
              return dirichlet_edd_loss_value(to_tensor(alpha), make_teacher_rows(to_tensor(member_logits)).member_probs);
          },
          py::arg("alpha"), py::arg("member_logits"), "member_logits is [R x M x K].");
    m.def("laplace_edd_loss",
          [](const Array& mu, const Array& sigma, const Array& member_logits) {
              return laplace_edd_loss_value(to_tensor(mu), to_tensor(sigma),
                                            make_teacher_rows(to_tensor(member_logits)).member_logits);
          },
          py::arg("mu"), py::arg("sigma"), py::arg("member_logits"));
    m.def("gaussian_edd_loss",
          [](const Array& mu, const Array& sigma, const Array& member_logits) {
              return gaussian_edd_loss_value(to_tensor(mu), to_tensor(sigma),
                                             make_teacher_rows(to_tensor(member_logits)).member_logits);
          },
          py::arg("mu"), py::arg("sigma"), py::arg("member_logits"));

    // Uncertainty.
    m.def("entropy", [](const Array& p) { return entropy(to_vector(p)); }, py::arg("p"));
    m.def("mutual_information", [](const Array& members) { return mutual_information(to_tensor(members)); },
          py::arg("members"), "members is [M x K] probabilities.");
    m.def("sequence_scores",
          [](const Array& member_logits, const std::vector<int>& decoded) {
              return scores_dict(sequence_scores(to_tensor(member_logits), decoded));
          },
          py::arg("member_logits"), py::arg("decoded"));
    m.def("logit_sample_scores",
          [](const Array& mu, const Array& sigma, const std::string& family, std::size_t samples, std::uint64_t seed) {
              return scores_dict(
                  logit_sample_scores(to_tensor(mu), to_tensor(sigma), family_arg(family), samples, RngStream(seed)));
          },
          py::arg("mu"), py::arg("sigma"), py::arg("family") = "ledd-laplace", py::arg("samples") = 32,
          py::arg("seed") = 0);
    m.def("dirichlet_scores",
          [](const Array& alpha, const std::vector<int>& decoded) {
              return scores_dict(dirichlet_scores(to_tensor(alpha), decoded));
          },
          py::arg("alpha"), py::arg("decoded"));

    // Evaluation.
    m.def("auroc", [](const Array& id, const Array& ood) { return auroc(to_vector(id), to_vector(ood)); },
          py::arg("id_scores"), py::arg("ood_scores"));
    m.def("pearson", [](const Array& x, const Array& y) { return pearson(to_vector(x), to_vector(y)); }, py::arg("x"),
          py::arg("y"));
    m.def("bleu",
          [](const std::vector<std::vector<int>>& hyps, const std::vector<std::vector<int>>& refs) {
              return bleu(hyps, refs);
          },
          py::arg("hypotheses"), py::arg("references"));

    // Tasks.
    m.def("gen_toy",
          [](std::size_t per_class, std::uint64_t seed) {
              ToySpec spec;
              spec.points_per_class = per_class;
              spec.seed = seed;
              const Dataset d = gen_toy(spec);
              Tensor x = Tensor::matrix(d.size(), 2);
              std::vector<int> y(d.size());
              for (std::size_t i = 0; i < d.size(); ++i) {
                  x.at(i, 0) = d[i].features[0];
                  x.at(i, 1) = d[i].features[1];
                  y[i] = d[i].tgt[0];
              }
              return py::make_tuple(to_array(x), y);
          },
          py::arg("points_per_class") = 1000, py::arg("seed") = 0);
    m.def("gen_seq_dataset",
          [](std::size_t vocab, std::size_t max_len, double noise, std::size_t count, std::uint64_t seed) {
              SeqTaskSpec spec;
              spec.vocab = vocab;
              spec.max_len = max_len;
              spec.noise = noise;
              spec.seed = seed;
              py::list out;
              for (const auto& ex : gen_seq_dataset(spec, count)) out.append(py::make_tuple(ex.src, ex.tgt));
              return out;
          },
          py::arg("vocab") = 64, py::arg("max_len") = 10, py::arg("noise") = 0.1, py::arg("count") = 100,
          py::arg("seed") = 0);

    // Configuration and command line.
    m.def("canonical_config", [](const std::string& text) { return serialize_config(parse_config(text)); },
          py::arg("text"), "Parses a JSON config and returns it with every default filled in.");
    m.def("config_hash", [](const std::string& text) { return config_hash(parse_config(text)); }, py::arg("text"));
    m.def("run_cli",
          [](const std::vector<std::string>& args) {
              std::vector<const char*> argv{"eddkit"};
              for (const auto& a : args) argv.push_back(a.c_str());
              py::gil_scoped_release release;
              return cli_main(static_cast<int>(argv.size()), argv.data());
          },
          py::arg("args"), "Runs the eddkit command line in-process and returns its exit code.");
}

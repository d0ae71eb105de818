#include "eddkit/commands.hpp"

#include "eddkit/checkpoint.hpp"
#include "eddkit/decode.hpp"
#include "eddkit/errors.hpp"
#include "eddkit/evalkit.hpp"
#include "eddkit/io.hpp"
#include "eddkit/seqtask.hpp"
#include "eddkit/uncertainty.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <map>

namespace edd {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string two_digits(std::size_t i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%02zu", i);
    return buf;
}

class Run {
public:
    Run(ExperimentConfig cfg, std::string subcommand, std::ostream& log)
        : cfg(std::move(cfg)), out(this->cfg.output_dir), log(log) {
        manifest.subcommand = std::move(subcommand);
        manifest.config_hash = config_hash(this->cfg);
        manifest.seed = this->cfg.seed;
        std::error_code ec;
        fs::create_directories(out, ec);
        if (ec) throw IoError("cannot create output directory " + out.string() + ": " + ec.message());
        write_text("config.json", serialize_config(this->cfg));
    }

    ExperimentConfig cfg;
    fs::path out;
    std::ostream& log;
    RunManifest manifest;

    fs::path path(const std::string& rel) const { return out / rel; }

    void ensure_dir(const std::string& rel) const {
        std::error_code ec;
        fs::create_directories(out / rel, ec);
        if (ec) throw IoError("cannot create directory " + (out / rel).string() + ": " + ec.message());
    }

    void record(const std::string& rel) {
        const auto bytes = read_file(out / rel);
        auto it = std::find_if(manifest.artifacts.begin(), manifest.artifacts.end(),
                               [&](const auto& a) { return a.path == rel; });
        const std::string h = hex64(fnv1a64(bytes));
        if (it != manifest.artifacts.end())
            it->hash = h;
        else
            manifest.artifacts.push_back({rel, h});
    }

    void write_text(const std::string& rel, const std::string& text) {
        atomic_write_text(out / rel, text);
        record(rel);
    }

    void save(const std::string& rel, const Checkpoint& ck) {
        ck.save(out / rel);
        record(rel);
    }

    template <typename F>
    auto timed(const std::string& phase, F&& fn) {
        const auto t0 = std::chrono::steady_clock::now();
        auto finish = [&] {
            manifest.timings.emplace_back(
                phase, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
        };
        if constexpr (std::is_void_v<decltype(fn())>) {
            fn();
            finish();
        } else {
            auto r = fn();
            finish();
            return r;
        }
    }

    RunManifest finish() {
        for (const auto& a : manifest.artifacts)
            if (!fs::exists(out / a.path)) throw IoError("declared artifact missing: " + a.path);
        atomic_write_text(out / ("manifest-" + manifest.subcommand + ".json"), manifest.to_json());
        return manifest;
    }
};

// ---- data and models ----------------------------------------------------------

SeqTaskSpec seq_spec(const ExperimentConfig& c) {
    SeqTaskSpec s = c.task.seq;
    s.seed = component_seed(c.seed, "seq-task");
    return s;
}

Dataset training_data(const ExperimentConfig& c) {
    if (c.task.kind == TaskSection::Kind::Toy) {
        ToySpec t = c.task.toy;
        t.seed = component_seed(c.seed, "toy-data");
        return gen_toy(t);
    }
    return gen_seq_dataset(seq_spec(c), c.task.train_size, 0);
}

ModelFactory factory_for(const ExperimentConfig& c, bool scale_head) {
    if (c.task.kind == TaskSection::Kind::Toy) {
        MlpConfig mc;
        mc.hidden = c.model.hidden;
        mc.scale_head = scale_head;
        return [mc](std::uint64_t seed) -> std::unique_ptr<Model> { return std::make_unique<MlpModel>(mc, RngStream(seed)); };
    }
    SeqModelConfig sc;
    sc.vocab = c.task.seq.vocab;
    sc.d_model = c.model.d_model;
    sc.hidden = c.model.seq_hidden;
    sc.scale_head = scale_head;
    return [sc](std::uint64_t seed) -> std::unique_ptr<Model> { return std::make_unique<TinySeqModel>(sc, RngStream(seed)); };
}

std::string curve_csv(const TrainLog& log) {
    std::string s = "step,lr,nll_term,kl_term,edd_term,total\n";
    for (const auto& e : log.steps)
        s += std::to_string(e.step) + "," + fmt(e.lr) + "," + fmt(e.nll_term) + "," + fmt(e.kl_term) + "," +
             fmt(e.edd_term) + "," + fmt(e.total) + "\n";
    return s;
}

std::string tokens_text(const std::vector<std::vector<int>>& seqs) {
    std::string s;
    for (const auto& q : seqs) {
        for (std::size_t i = 0; i < q.size(); ++i) s += (i ? " " : "") + std::to_string(q[i]);
        s += "\n";
    }
    return s;
}

struct Members {
    std::vector<Checkpoint> checkpoints;
    std::vector<std::unique_ptr<Model>> models;

    std::vector<const Model*> views() const {
        std::vector<const Model*> v;
        for (const auto& m : models) v.push_back(m.get());
        return v;
    }
    template <typename T>
    std::vector<const T*> as() const {
        std::vector<const T*> v;
        for (const auto& m : models) v.push_back(static_cast<const T*>(m.get()));
        return v;
    }
};

std::vector<fs::path> member_files(const Run& run) {
    std::vector<fs::path> files;
    const fs::path dir = run.path("members");
    if (!fs::is_directory(dir)) return files;
    for (const auto& e : fs::directory_iterator(dir)) {
        const std::string name = e.path().filename().string();
        if (name.rfind("member_", 0) == 0 && e.path().extension() == ".ckpt") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    return files;
}

Members load_members(const Run& run) {
    const auto files = member_files(run);
    if (files.empty())
        throw IoError("missing teacher: no ensemble checkpoints under " + run.path("members").string() +
                      " (run train-ensemble first)");
    Members m;
    const auto factory = factory_for(run.cfg, false);
    for (const auto& f : files) {
        m.checkpoints.push_back(Checkpoint::load(f));
        m.models.push_back(factory(0));
        restore(*m.models.back(), m.checkpoints.back());
    }
    return m;
}

void write_members(Run& run, const std::vector<Checkpoint>& cks) {
    run.ensure_dir("members");
    for (const auto& f : member_files(run)) fs::remove(f);
    for (std::size_t i = 0; i < cks.size(); ++i) run.save("members/member_" + two_digits(i) + ".ckpt", cks[i]);
}

std::vector<Checkpoint> train_members(Run& run, const Dataset& data) {
    const auto& e = run.cfg.ensemble;
    EnsembleSpec spec;
    spec.kind = e.kind;
    spec.members = e.members;
    spec.base_seed = component_seed(run.cfg.seed, "ensemble");
    spec.train = e.train;
    spec.period_epochs = e.period_epochs;
    spec.eta_min = e.eta_min;
    spec.eta_max = e.eta_max;
    const auto factory = factory_for(run.cfg, false);
    if (e.kind == EnsembleSpec::Kind::Deep) {
        std::vector<TrainLog> logs;
        auto cks = train_deep_ensemble(spec, data, factory, &logs);
        run.ensure_dir("members");
        for (std::size_t i = 0; i < logs.size(); ++i)
            run.write_text("members/member_" + two_digits(i) + "_curve.csv", curve_csv(logs[i]));
        return cks;
    }
    auto base = factory(spec.base_seed);
    TrainConfig base_cfg = e.train;
    base_cfg.epochs = e.base_epochs;
    const TrainLog base_log = train_model(*base, data, base_cfg, RngStream(spec.base_seed).derive("base"));
    run.ensure_dir("members");
    run.write_text("members/base_curve.csv", curve_csv(base_log));
    SnapshotRun snap = train_snapshot_ensemble(capture(*base), spec, data, factory);
    std::string trace = "step,lr\n";
    for (std::size_t i = 0; i < snap.lr_trace.size(); ++i) trace += std::to_string(i + 1) + "," + fmt(snap.lr_trace[i]) + "\n";
    run.write_text("members/lr_trace.csv", trace);
    return std::move(snap.snapshots);
}

DistillSpec distill_spec(const ExperimentConfig& c, StudentFamily family) {
    DistillSpec s;
    s.family = family;
    s.kd = c.distill.kd;
    s.edd.beta = c.distill.beta;
    s.edd.family = is_logit_family(family) ? family : StudentFamily::LaplaceLogit;
    s.train = c.distill.train;
    s.seed = component_seed(c.seed, "distill");
    s.init_from_teacher = c.distill.init_from_teacher;
    s.edd_only = c.distill.edd_only && is_logit_family(family);
    return s;
}

// Distils one student; on divergence writes the partial curve and a log
// before rethrowing. Returns the student weights (the last finite ones when
// `keep_going` swallowed a divergence).
struct StudentRun {
    Checkpoint student;
    bool diverged = false;
    std::string divergence;
    double final_loss = 0.0;
};

StudentRun run_distill(Run& run, const std::string& prefix, StudentFamily family, const TeacherOutputs& teacher,
                       const Dataset& data, const Checkpoint* member0, bool keep_going) {
    const DistillSpec spec = distill_spec(run.cfg, family);
    DistillProgress progress;
    StudentRun result;
    try {
        distill(spec, teacher, data, factory_for(run.cfg, is_logit_family(family)), member0, &progress);
    } catch (const DivergenceError& e) {
        result.diverged = true;
        result.divergence = "step=" + std::to_string(e.step()) + "\nterm=" + e.term() + "\nmessage=" + e.what() + "\n";
        run.write_text(prefix + "curve.csv", curve_csv(progress.log));
        run.write_text(prefix + "divergence.log", result.divergence);
        run.log << "  " << to_string(family) << " diverged at step " << e.step() << " (" << e.term() << ")\n";
        if (!keep_going) throw;
    }
    result.student = progress.student;
    if (!result.diverged) run.write_text(prefix + "curve.csv", curve_csv(progress.log));
    if (!progress.log.steps.empty()) result.final_loss = progress.log.steps.back().total;
    run.save(prefix + "student.ckpt", result.student);
    return result;
}

// ---- sequence scoring -----------------------------------------------------------

struct SourceSet {
    std::string name;
    std::vector<std::vector<int>> sources;
};

std::vector<SourceSet> evaluation_sets(const ExperimentConfig& c, std::vector<std::vector<int>>* id_refs) {
    if (c.task.kind != TaskSection::Kind::Seq)
        throw ConfigError("this subcommand needs a sequence task (task.kind = \"seq\")");
    const SeqTaskSpec spec = seq_spec(c);
    std::vector<SourceSet> sets;
    SourceSet id{"id", {}};
    for (auto& ex : gen_seq_dataset(spec, c.eval.id_count, 1)) {
        id.sources.push_back(ex.src);
        if (id_refs) id_refs->push_back(ex.tgt);
    }
    sets.push_back(std::move(id));
    for (std::size_t i = 0; i < c.eval.shifts.size(); ++i)
        sets.push_back({c.eval.shifts[i].name(), gen_ood_dataset(spec, c.eval.shifts[i], c.eval.ood_count, 2 + i)});
    return sets;
}

struct Scored {
    std::vector<double> tu, ku, length;
    std::vector<std::vector<int>> hyps;
};

DecodeOptions decode_options(const ExperimentConfig& c) {
    DecodeOptions o;
    o.beam = c.eval.beam;
    o.length_penalty = c.eval.length_penalty;
    o.max_len = c.eval.max_len;
    return o;
}

enum class Scorer { Ensemble, Augmented, Student };

Scored score_set(const ExperimentConfig& c, Scorer scorer, std::span<const TinySeqModel* const> models,
                 StudentFamily family, const SourceSet& set, std::size_t set_index, RngStream rng) {
    Scored s;
    const DecodeOptions opts = decode_options(c);
    for (std::size_t i = 0; i < set.sources.size(); ++i) {
        const auto& src = set.sources[i];
        const Hypothesis h = decode(models, src, opts);
        const RngStream r = rng.derive(static_cast<std::uint64_t>(set_index)).derive(static_cast<std::uint64_t>(i));
        UncertaintyScores u;
        if (scorer == Scorer::Ensemble) {
            u = sequence_scores(member_logits_on(models, src, h.tokens), h.tokens);
        } else if (scorer == Scorer::Augmented) {
            u = augmented_ensemble_scores(member_logits_on(models, src, h.tokens), c.eval.samples, r);
        } else if (family == StudentFamily::Kd) {
            u = sequence_scores(member_logits_on(models, src, h.tokens), h.tokens);
        } else if (family == StudentFamily::Dirichlet) {
            NoGradGuard no_grad;
            Tensor alpha = models.front()->forward_seq(src, h.tokens).logits.value();
            for (double& v : alpha.values()) v = std::exp(v);
            u = dirichlet_scores(alpha, h.tokens);
        } else {
            u = student_sample_scores(*models.front(), family, src, h.tokens, c.eval.samples, r);
        }
        s.tu.push_back(u.total);
        s.ku.push_back(u.knowledge);
        s.length.push_back(static_cast<double>(content_length(h.tokens)));
        s.hyps.push_back(h.tokens);
    }
    return s;
}

struct ModelScores {
    std::string name;
    bool has_ku = true;
    std::vector<Scored> per_set; // index 0 is ID
};

double safe_pearson(const std::vector<double>& a, const std::vector<double>& b) {
    try {
        return pearson(a, b);
    } catch (const DegenerateInput&) {
        return std::nan("");
    }
}

double merged_pcc(const Scored& id, const Scored& ood) {
    std::vector<double> len = id.length, tu = id.tu;
    len.insert(len.end(), ood.length.begin(), ood.length.end());
    tu.insert(tu.end(), ood.tu.begin(), ood.tu.end());
    return safe_pearson(len, tu);
}

std::string na_or(double v) { return std::isfinite(v) ? fmt(v) : "nan"; }

// Writes per-score CSVs plus a summary table under `dir`.
void write_detection(Run& run, const std::string& dir, const std::vector<ModelScores>& models,
                     const std::vector<SourceSet>& sets) {
    run.ensure_dir(dir);
    std::string summary = "model,measure,ood_set,auroc,pcc_length_tu\n";
    for (const auto& m : models) {
        for (std::size_t si = 1; si < sets.size(); ++si) {
            const double pcc = merged_pcc(m.per_set[0], m.per_set[si]);
            for (const char* measure : {"TU", "KU"}) {
                const bool tu = std::string(measure) == "TU";
                if (!tu && !m.has_ku) continue;
                const auto& ids = tu ? m.per_set[0].tu : m.per_set[0].ku;
                const auto& oods = tu ? m.per_set[si].tu : m.per_set[si].ku;
                const DetectionReport r = make_detection_report(m.name, measure, "id", sets[si].name, ids, oods);
                const std::string rel = dir + "/scores_" + m.name + "_" + measure + "_" + sets[si].name + ".csv";
                write_detection_csv(run.path(rel), r);
                run.record(rel);
                summary += m.name + "," + measure + "," + sets[si].name + "," + fmt(r.auroc) + "," + na_or(pcc) + "\n";
            }
        }
    }
    run.write_text(dir + "/detection.csv", summary);
}

std::unique_ptr<Model> load_student(const Run& run, StudentFamily family, bool required) {
    const fs::path p = run.path("student/" + to_string(family) + "/student.ckpt");
    if (!fs::exists(p)) {
        if (required) throw IoError("missing student checkpoint " + p.string() + " (run distill first)");
        return nullptr;
    }
    auto m = factory_for(run.cfg, is_logit_family(family))(0);
    restore(*m, Checkpoint::load(p));
    return m;
}

// ---- subcommands ----------------------------------------------------------------

void cmd_train_ensemble(Run& run) {
    const Dataset data = run.timed("data", [&] { return training_data(run.cfg); });
    run.ensure_dir("data");
    if (run.cfg.task.kind == TaskSection::Kind::Toy) {
        write_toy_csv(run.path("data/toy.csv"), data);
        run.record("data/toy.csv");
    } else {
        write_parallel(run.path("data/train.src"), run.path("data/train.tgt"), data);
        run.record("data/train.src");
        run.record("data/train.tgt");
    }
    run.log << "training " << run.cfg.ensemble.members << " " << to_string(run.cfg.ensemble.kind)
            << " ensemble member(s) on " << data.size() << " examples\n";
    const auto cks = run.timed("train", [&] { return train_members(run, data); });
    write_members(run, cks);
}

void cmd_distill(Run& run) {
    const Dataset data = training_data(run.cfg);
    const StudentFamily family = run.cfg.distill.family;
    TeacherOutputs teacher;
    std::optional<Members> members;
    if (!member_files(run).empty()) {
        members = load_members(run);
        const auto views = members->views();
        teacher = run.timed("teacher", [&] { return collect_teacher_logits(views, data); });
        teacher.save(run.path("teacher.eddl"));
        run.record("teacher.eddl");
    } else if (fs::exists(run.path("teacher.eddl"))) {
        teacher = TeacherOutputs::load(run.path("teacher.eddl"));
        if (run.cfg.distill.init_from_teacher)
            throw IoError("missing teacher: distill.init_from_teacher needs ensemble checkpoints under " +
                          run.path("members").string());
    } else {
        throw IoError("missing teacher: neither ensemble checkpoints nor teacher.eddl under " + run.out.string() +
                      " (run train-ensemble first)");
    }
    const std::string prefix = "student/" + to_string(family) + "/";
    run.ensure_dir(prefix);
    run.log << "distilling a " << to_string(family) << " student from " << teacher.members << " member(s)\n";
    run.timed("distill", [&] {
        run_distill(run, prefix, family, teacher, data, members ? &members->checkpoints.front() : nullptr, false);
    });
}

std::vector<ModelScores> seq_scores(Run& run, const std::vector<SourceSet>& sets, bool include_student,
                                    bool augmented) {
    const Members members = load_members(run);
    const auto ens = members.as<TinySeqModel>();
    const RngStream rng(component_seed(run.cfg.seed, augmented ? "augmented" : "detect"));
    std::vector<ModelScores> out;
    ModelScores e{"ensemble", members.models.size() >= 2, {}};
    for (std::size_t i = 0; i < sets.size(); ++i)
        e.per_set.push_back(score_set(run.cfg, Scorer::Ensemble, ens, StudentFamily::Kd, sets[i], i, rng));
    out.push_back(std::move(e));
    if (augmented) {
        if (members.models.size() < 2)
            throw InvalidArgument("augmented scoring needs at least 2 ensemble members, found " +
                                  std::to_string(members.models.size()));
        ModelScores a{"ensemble-laplace", true, {}};
        for (std::size_t i = 0; i < sets.size(); ++i)
            a.per_set.push_back(score_set(run.cfg, Scorer::Augmented, ens, StudentFamily::Kd, sets[i], i, rng));
        out.push_back(std::move(a));
    }
    if (include_student) {
        const StudentFamily family = run.cfg.distill.family;
        if (auto student = load_student(run, family, false)) {
            const TinySeqModel* one[1] = {static_cast<const TinySeqModel*>(student.get())};
            ModelScores s{"student-" + to_string(family), family != StudentFamily::Kd, {}};
            for (std::size_t i = 0; i < sets.size(); ++i)
                s.per_set.push_back(score_set(run.cfg, Scorer::Student, one, family, sets[i], i, rng));
            out.push_back(std::move(s));
        }
    }
    return out;
}

void cmd_detect(Run& run) {
    std::vector<std::vector<int>> refs;
    const auto sets = evaluation_sets(run.cfg, &refs);
    const auto models = run.timed("score", [&] { return seq_scores(run, sets, true, false); });
    write_detection(run, "detect", models, sets);
    std::string b = "model,bleu\n";
    for (const auto& m : models) b += m.name + "," + fmt(bleu(m.per_set[0].hyps, refs)) + "\n";
    run.write_text("detect/bleu.csv", b);
}

void cmd_augmented(Run& run) {
    const auto sets = evaluation_sets(run.cfg, nullptr);
    const auto models = run.timed("score", [&] { return seq_scores(run, sets, false, true); });
    write_detection(run, "augmented", models, sets);
}

void cmd_analyze(Run& run) {
    const auto sets = evaluation_sets(run.cfg, nullptr);
    const auto models = run.timed("score", [&] { return seq_scores(run, sets, true, false); });
    run.ensure_dir("analyze");
    std::string summary = "model,ood_set,n,pcc_length_tu\n";
    for (const auto& m : models) {
        std::string points = "set,length,tu\n";
        for (std::size_t si = 0; si < sets.size(); ++si)
            for (std::size_t i = 0; i < m.per_set[si].tu.size(); ++i)
                points += sets[si].name + "," + fmt(m.per_set[si].length[i]) + "," + fmt(m.per_set[si].tu[i]) + "\n";
        run.write_text("analyze/" + m.name + "_points.csv", points);
        for (std::size_t si = 1; si < sets.size(); ++si)
            summary += m.name + "," + sets[si].name + "," +
                       std::to_string(m.per_set[0].tu.size() + m.per_set[si].tu.size()) + "," +
                       na_or(merged_pcc(m.per_set[0], m.per_set[si])) + "\n";
    }
    run.write_text("analyze/length_pcc.csv", summary);
}

void cmd_toy(Run& run) {
    if (run.cfg.task.kind != TaskSection::Kind::Toy) throw ConfigError("toy needs task.kind = \"toy\"");
    const Dataset data = training_data(run.cfg);
    if (member_files(run).empty()) {
        run.log << "no ensemble found, training one\n";
        cmd_train_ensemble(run);
    }
    const Members members = load_members(run);
    const auto views = members.views();
    const auto mlps = members.as<MlpModel>();
    const TeacherOutputs teacher = collect_teacher_logits(views, data);
    const GridBounds bounds = data_bounds(data);
    const std::size_t res = run.cfg.eval.grid_resolution;

    auto emit = [&](const std::string& method, const GridEval& g) {
        const std::string dir = "toy/" + method;
        run.ensure_dir(dir);
        write_grid_csv(run.path(dir + "/grid.csv"), g);
        run.record(dir + "/grid.csv");
        for (const char* field : {"loss", "confidence"}) {
            const std::string rel = dir + "/" + field + ".svg";
            write_grid_svg(run.path(rel), g, field, method);
            run.record(rel);
        }
    };
    auto mean = [](const std::vector<double>& v) {
        double s = 0;
        for (double x : v) s += x;
        return s / static_cast<double>(v.size());
    };

    const GridEval ens = run.timed("grid-ensemble", [&] { return grid_eval(mlps, nullptr, StudentFamily::Kd, bounds, res); });
    emit("ensemble", ens);
    std::string summary = "method,status,confidence_pcc,mean_confidence,final_loss\n";
    summary += "ensemble,ok,1," + fmt(mean(ens.confidence)) + ",nan\n";

    for (StudentFamily family : {StudentFamily::Kd, StudentFamily::Dirichlet, StudentFamily::LaplaceLogit}) {
        const std::string method = to_string(family);
        run.ensure_dir("toy/" + method);
        run.log << "distilling " << method << "\n";
        const StudentRun sr = run.timed("distill-" + method, [&] {
            return run_distill(run, "toy/" + method + "/", family, teacher, data, &members.checkpoints.front(), true);
        });
        auto student = factory_for(run.cfg, is_logit_family(family))(0);
        restore(*student, sr.student);
        const GridEval g = grid_eval(mlps, static_cast<const MlpModel*>(student.get()), family, bounds, res);
        emit(method, g);
        summary += method + "," + (sr.diverged ? "diverged" : "ok") + "," + na_or(safe_pearson(g.confidence, ens.confidence)) +
                   "," + fmt(mean(g.confidence)) + "," + fmt(sr.final_loss) + "\n";
    }
    run.write_text("toy/summary.csv", summary);
}

} // namespace

const std::vector<std::string>& subcommands() {
    static const std::vector<std::string> names{"train-ensemble", "distill", "detect", "toy", "augmented", "analyze"};
    return names;
}

std::string RunManifest::to_json() const {
    json arts = json::array();
    for (const auto& a : artifacts) arts.push_back({{"path", a.path}, {"hash", a.hash}});
    json times = json::object();
    for (const auto& [phase, secs] : timings) times[phase] = secs;
    return json{{"subcommand", subcommand},
                {"config_hash", config_hash},
                {"seed", seed},
                {"artifacts", arts},
                {"timings_seconds", times},
                {"versions",
                 {{"eddkit", kVersion}, {"checkpoint_format", Checkpoint::kVersion},
                  {"teacher_cache_format", TeacherOutputs::kVersion}}}}
               .dump(2) +
           "\n";
}

RunManifest RunManifest::from_json(const std::string& text) {
    try {
        const json j = json::parse(text);
        RunManifest m;
        m.subcommand = j.at("subcommand").get<std::string>();
        m.config_hash = j.at("config_hash").get<std::string>();
        m.seed = j.at("seed").get<std::uint64_t>();
        for (const auto& a : j.at("artifacts")) m.artifacts.push_back({a.at("path"), a.at("hash")});
        for (const auto& [k, v] : j.at("timings_seconds").items()) m.timings.emplace_back(k, v.get<double>());
        return m;
    } catch (const json::exception& e) {
        throw IoError(std::string("malformed manifest: ") + e.what());
    }
}

ExperimentConfig resolve_config(const Invocation& inv) {
    ExperimentConfig c = load_config(inv.config_path);
    if (inv.seed) c.seed = *inv.seed;
    if (inv.out) c.output_dir = *inv.out;
    return c;
}

RunManifest run_subcommand(const Invocation& inv, std::ostream& log) {
    const auto& names = subcommands();
    if (std::find(names.begin(), names.end(), inv.subcommand) == names.end())
        throw ConfigError("unknown subcommand '" + inv.subcommand + "'");
    Run run(resolve_config(inv), inv.subcommand, log);
    if (inv.subcommand == "train-ensemble")
        cmd_train_ensemble(run);
    else if (inv.subcommand == "distill")
        cmd_distill(run);
    else if (inv.subcommand == "detect")
        cmd_detect(run);
    else if (inv.subcommand == "toy")
        cmd_toy(run);
    else if (inv.subcommand == "augmented")
        cmd_augmented(run);
    else
        cmd_analyze(run);
    return run.finish();
}

int exit_code_for(const std::exception& e) noexcept {
    if (const auto* err = dynamic_cast<const Error*>(&e)) {
        switch (err->kind()) {
        case Error::Kind::Config: return 2;
        case Error::Kind::Divergence: return 3;
        case Error::Kind::Io: return 4;
        case Error::Kind::Invalid: return 1;
        }
    }
    if (dynamic_cast<const std::filesystem::filesystem_error*>(&e)) return 4;
    return 1;
}

int cli_main(int argc, const char* const* argv) {
    CLI::App app{"Ensemble distribution distillation experiments"};
    app.require_subcommand(1);
    Invocation inv;
    std::uint64_t seed = 0;
    std::string out;
    const std::map<std::string, std::string> blurbs{
        {"train-ensemble", "train ensemble members and save their checkpoints"},
        {"distill", "distill the ensemble into a single student"},
        {"detect", "score ID and OOD sources and report detection AUROC and BLEU"},
        {"toy", "run the two-dimensional toy study and write grids and plots"},
        {"augmented", "detection with per-step Laplace fits to the member logits"},
        {"analyze", "relate sequence length to total uncertainty"}};
    for (const auto& name : subcommands()) {
        auto* sub = app.add_subcommand(name, blurbs.at(name));
        sub->add_option("--config", inv.config_path, "experiment config (JSON)")->required();
        sub->add_option("--seed", seed, "override the top-level seed");
        sub->add_option("--out", out, "override the output directory");
    }
    app.set_version_flag("--version", kVersion);
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }
    for (const auto* sub : app.get_subcommands()) {
        inv.subcommand = sub->get_name();
        if (sub->count("--seed")) inv.seed = seed;
        if (sub->count("--out")) inv.out = out;
    }
    try {
        const RunManifest m = run_subcommand(inv, std::cerr);
        std::cerr << inv.subcommand << ": wrote " << m.artifacts.size() << " artifacts (config " << m.config_hash
                  << ")\n";
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e);
    }
}

} // namespace edd

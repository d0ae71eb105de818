#include "eddkit/ensembles.hpp"

#include "eddkit/distributions.hpp"
#include "eddkit/errors.hpp"
#include "eddkit/io.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace edd {

namespace {

std::vector<std::size_t> shuffled(std::size_t n, RngStream rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.uniform_int(i)]);
    return idx;
}

struct BatchView {
    std::vector<const Example*> examples;
    std::vector<std::size_t> indices;
    std::vector<int> targets;
    std::vector<double> weights;
};

BatchView make_batch(const Dataset& data, std::span<const std::size_t> indices) {
    BatchView b;
    const double bsize = static_cast<double>(indices.size());
    for (std::size_t i : indices) {
        const Example& ex = data[i];
        if (ex.tgt.empty()) throw InvalidArgument("training example " + std::to_string(i) + " has an empty target");
        b.examples.push_back(&ex);
        b.indices.push_back(i);
        b.targets.insert(b.targets.end(), ex.tgt.begin(), ex.tgt.end());
        const double w = 1.0 / (static_cast<double>(ex.tgt.size()) * bsize);
        b.weights.insert(b.weights.end(), ex.tgt.size(), w);
    }
    return b;
}

using StepFn = std::function<Var(const BatchView&, const ModelOutput&, StepLog&)>;

// Shared minibatch loop. Epoch e is shuffled by shuffle.derive(e).
TrainLog run_loop(Model& model, const Dataset& data, const TrainConfig& cfg, RngStream shuffle, AdamState& state,
                  std::size_t max_steps, const StepFn& step_fn, const std::function<void(std::int64_t)>& on_step,
                  TrainLog* live_log = nullptr) {
    if (data.empty()) throw InvalidArgument("training set is empty");
    if (cfg.batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
    cfg.schedule.validate();
    TrainLog local;
    TrainLog& log = live_log ? *live_log : local;
    const std::size_t steps_per_epoch = (data.size() + cfg.batch_size - 1) / cfg.batch_size;
    const std::size_t total = max_steps ? max_steps : cfg.epochs * steps_per_epoch;
    std::size_t done = 0;
    for (std::size_t epoch = 0; done < total; ++epoch) {
        const auto order = shuffled(data.size(), shuffle.derive(static_cast<std::uint64_t>(epoch)));
        for (std::size_t start = 0; start < order.size() && done < total; start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            const BatchView batch = make_batch(data, std::span(order).subspan(start, end - start));
            const std::int64_t step = state.step + 1;
            StepLog entry;
            entry.step = step;
            entry.lr = lr_at(cfg.schedule, step);
            const ModelOutput out = model.forward(batch.examples);
            Var loss = step_fn(batch, out, entry);
            entry.total = loss.value()[0];
            if (!std::isfinite(entry.total))
                throw DivergenceError("non-finite loss at step " + std::to_string(step), step, "total");
            backward(loss);
            try {
                adam_step(model.parameters(), state, entry.lr);
            } catch (const DivergenceError& e) {
                throw DivergenceError("non-finite gradient at step " + std::to_string(step) + " in parameter '" +
                                          e.term() + "'",
                                      step, e.term());
            }
            log.steps.push_back(entry);
            ++done;
            if (on_step) on_step(step);
        }
    }
    return log;
}

void check_term(double v, const char* term, std::int64_t step) {
    if (!std::isfinite(v))
        throw DivergenceError(std::string("non-finite ") + term + " term at step " + std::to_string(step), step, term);
}

} // namespace

TrainLog train_model(Model& model, const Dataset& data, const TrainConfig& config, RngStream shuffle, AdamState* state,
                     std::size_t max_steps, const std::function<void(std::int64_t)>& on_step) {
    AdamState local{config.adam, {}, {}, 0};
    AdamState& st = state ? *state : local;
    const StepFn fn = [&](const BatchView& b, const ModelOutput& out, StepLog& entry) {
        Var loss = nll_loss(out.logits, b.targets, config.label_smoothing, b.weights);
        entry.nll_term = loss.value()[0];
        check_term(entry.nll_term, "nll", entry.step);
        return loss;
    };
    return run_loop(model, data, config, shuffle, st, max_steps, fn, on_step);
}

void EnsembleSpec::validate() const {
    if (members < 1) throw InvalidArgument("ensemble: members must be >= 1");
    if (train.batch_size < 1) throw InvalidArgument("ensemble: batch_size must be >= 1");
    if (kind == Kind::Snapshot) {
        if (period_epochs < 1) throw InvalidArgument("ensemble: period_epochs must be >= 1");
        LrSchedule::cyclic(eta_min, eta_max, 2).validate();
    } else {
        train.schedule.validate();
    }
}

std::string to_string(EnsembleSpec::Kind kind) { return kind == EnsembleSpec::Kind::Deep ? "deep" : "snapshot"; }

EnsembleSpec::Kind ensemble_kind_from_string(const std::string& s) {
    if (s == "deep") return EnsembleSpec::Kind::Deep;
    if (s == "snapshot") return EnsembleSpec::Kind::Snapshot;
    throw InvalidArgument("unknown ensemble kind '" + s + "'");
}

std::vector<Checkpoint> train_deep_ensemble(const EnsembleSpec& spec, const Dataset& data, const ModelFactory& factory,
                                            std::vector<TrainLog>* logs) {
    spec.validate();
    std::vector<Checkpoint> out;
    for (std::size_t m = 0; m < spec.members; ++m) {
        const std::uint64_t seed = spec.base_seed + m;
        auto model = factory(seed);
        TrainLog log;
        try {
            log = train_model(*model, data, spec.train, RngStream(seed).derive("shuffle"));
        } catch (const DivergenceError& e) {
            throw DivergenceError("ensemble member " + std::to_string(m) + ": " + e.what(), e.step(), e.term());
        }
        if (logs) logs->push_back(std::move(log));
        out.push_back(capture(*model));
    }
    return out;
}

SnapshotRun train_snapshot_ensemble(const Checkpoint& base, const EnsembleSpec& spec, const Dataset& data,
                                    const ModelFactory& factory) {
    spec.validate();
    if (data.empty()) throw InvalidArgument("snapshot ensemble: training set is empty");
    auto model = factory(spec.base_seed);
    restore(*model, base);
    const std::size_t steps_per_epoch = (data.size() + spec.train.batch_size - 1) / spec.train.batch_size;
    const auto period = static_cast<std::int64_t>(spec.period_epochs * steps_per_epoch);
    TrainConfig cfg = spec.train;
    cfg.schedule = LrSchedule::cyclic(spec.eta_min, spec.eta_max, period);
    SnapshotRun run;
    AdamState state{cfg.adam, {}, {}, 0};
    const auto log = train_model(*model, data, cfg, RngStream(spec.base_seed).derive("snapshot"), &state,
                                 spec.members * static_cast<std::size_t>(period), [&](std::int64_t step) {
                                     if (step % period == 0) run.snapshots.push_back(capture(*model));
                                 });
    for (const auto& s : log.steps) run.lr_trace.push_back(s.lr);
    return run;
}

// ---- teacher outputs ----------------------------------------------------------

TeacherRows TeacherOutputs::rows(std::span<const std::size_t> indices) const {
    std::size_t total = 0;
    for (std::size_t i : indices) total += targets.at(i).size();
    Tensor stacked({total, members, classes}, 0.0);
    auto dst = stacked.values().begin();
    for (std::size_t i : indices) dst = std::copy(logits[i].values().begin(), logits[i].values().end(), dst);
    return make_teacher_rows(stacked);
}

void TeacherOutputs::validate() const {
    if (targets.size() != logits.size()) throw ShapeError("teacher outputs: target and logit counts differ");
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const Shape want{targets[i].size(), members, classes};
        if (logits[i].shape() != want)
            throw ShapeError("teacher outputs: example " + std::to_string(i) + " has shape " +
                             shape_str(logits[i].shape()) + ", expected " + shape_str(want));
    }
}

std::vector<std::uint8_t> TeacherOutputs::encode() const {
    validate();
    ByteWriter w;
    w.raw("EDDL");
    w.u32(kVersion);
    w.u32(static_cast<std::uint32_t>(members));
    w.u32(static_cast<std::uint32_t>(classes));
    w.u32(static_cast<std::uint32_t>(targets.size()));
    for (std::size_t i = 0; i < targets.size(); ++i) {
        w.u32(static_cast<std::uint32_t>(targets[i].size()));
        for (int t : targets[i]) w.u32(static_cast<std::uint32_t>(t));
        for (double v : logits[i].values()) w.f32(static_cast<float>(v));
    }
    w.seal();
    return w.bytes();
}

TeacherOutputs TeacherOutputs::decode(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes, "teacher cache");
    if (r.raw(4) != "EDDL") throw IoError("teacher cache: bad magic");
    const std::uint32_t version = r.u32();
    if (version != kVersion) throw IoError("teacher cache: unsupported version " + std::to_string(version));
    TeacherOutputs t;
    t.members = r.u32();
    t.classes = r.u32();
    const std::uint32_t count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        std::vector<int> tgt(r.u32());
        for (int& v : tgt) v = static_cast<int>(r.u32());
        std::vector<double> values(tgt.size() * t.members * t.classes);
        for (double& v : values) v = r.f32();
        t.logits.emplace_back(Shape{tgt.size(), t.members, t.classes}, std::move(values));
        t.targets.push_back(std::move(tgt));
    }
    r.expect_done();
    return t;
}

void TeacherOutputs::save(const std::filesystem::path& path) const { atomic_write_file(path, encode()); }

TeacherOutputs TeacherOutputs::load(const std::filesystem::path& path) { return decode(read_file(path)); }

void check_same_architecture(std::span<const Model* const> members) {
    if (members.empty()) throw InvalidArgument("ensemble has no members");
    const Model& ref = *members.front();
    for (std::size_t m = 1; m < members.size(); ++m) {
        const Model& other = *members[m];
        bool same = other.kind() == ref.kind() && other.num_classes() == ref.num_classes() &&
                    other.parameters().size() == ref.parameters().size();
        for (std::size_t i = 0; same && i < ref.parameters().size(); ++i)
            same = other.parameters()[i].name == ref.parameters()[i].name &&
                   other.parameters()[i].var.shape() == ref.parameters()[i].var.shape();
        if (!same) throw InvalidArgument("architecture mismatch between ensemble member 0 and member " + std::to_string(m));
    }
}

TeacherOutputs collect_teacher_logits(std::span<const Model* const> members, const Dataset& data) {
    check_same_architecture(members);
    NoGradGuard no_grad;
    TeacherOutputs t;
    t.members = members.size();
    t.classes = members.front()->num_classes();
    const std::size_t m = t.members, k = t.classes;
    for (const auto& ex : data) {
        t.targets.push_back(ex.tgt);
        t.logits.emplace_back(Shape{ex.tgt.size(), m, k}, 0.0);
    }
    constexpr std::size_t kChunk = 256;
    for (std::size_t start = 0; start < data.size(); start += kChunk) {
        const std::size_t end = std::min(data.size(), start + kChunk);
        std::vector<const Example*> batch;
        for (std::size_t i = start; i < end; ++i) batch.push_back(&data[i]);
        for (std::size_t mm = 0; mm < m; ++mm) {
            const ModelOutput out = members[mm]->forward(batch);
            const Tensor z = normalize_logits(out.logits.value());
            for (std::size_t i = start; i < end; ++i) {
                const std::size_t row0 = out.row_offsets[i - start];
                for (std::size_t l = 0; l < data[i].tgt.size(); ++l)
                    std::copy_n(z.row_span(row0 + l).begin(), k,
                                t.logits[i].values().begin() + static_cast<std::ptrdiff_t>((l * m + mm) * k));
            }
        }
    }
    return t;
}

Tensor member_logits_on(std::span<const TinySeqModel* const> members, std::span<const int> src,
                        std::span<const int> decoded) {
    if (members.empty()) throw InvalidArgument("member_logits_on: no members");
    NoGradGuard no_grad;
    const std::size_t l = decoded.size(), m = members.size(), k = members.front()->num_classes();
    Tensor out({l, m, k}, 0.0);
    for (std::size_t mm = 0; mm < m; ++mm) {
        const Tensor z = members[mm]->forward_seq(src, decoded).logits.value();
        for (std::size_t i = 0; i < l; ++i)
            std::copy_n(z.row_span(i).begin(), k, out.values().begin() + static_cast<std::ptrdiff_t>((i * m + mm) * k));
    }
    return out;
}

// ---- distillation -------------------------------------------------------------

void DistillSpec::validate() const {
    kd.validate();
    edd.validate();
    if (is_logit_family(family) && edd.family != family)
        throw InvalidArgument("distill: family '" + to_string(family) + "' but EDD config names '" +
                              to_string(edd.family) + "'");
    if (edd_only && !is_logit_family(family))
        throw InvalidArgument("distill: edd_only applies to logit-space families only");
    train.schedule.validate();
}

void restore_shared(Model& student, const Checkpoint& teacher_weights) {
    auto& params = student.parameters();
    for (const auto& e : teacher_weights.entries) {
        auto it = std::find_if(params.begin(), params.end(), [&](const Parameter& p) { return p.name == e.name; });
        if (it == params.end())
            throw InvalidArgument("architecture mismatch: student has no parameter '" + e.name + "'");
        if (it->var.shape() != e.value.shape())
            throw InvalidArgument("architecture mismatch at '" + e.name + "': student " + shape_str(it->var.shape()) +
                                  ", teacher " + shape_str(e.value.shape()));
    }
    for (const auto& e : teacher_weights.entries)
        std::find_if(params.begin(), params.end(), [&](const Parameter& p) { return p.name == e.name; })
            ->var.mutable_value() = e.value;
}

DistillResult distill(const DistillSpec& spec, const TeacherOutputs& teacher, const Dataset& data,
                      const ModelFactory& student_factory, const Checkpoint* teacher_member, DistillProgress* progress) {
    spec.validate();
    teacher.validate();
    if (teacher.size() != data.size())
        throw ShapeError("distill: teacher covers " + std::to_string(teacher.size()) + " examples, dataset has " +
                         std::to_string(data.size()));
    for (std::size_t i = 0; i < data.size(); ++i)
        if (teacher.targets[i] != data[i].tgt)
            throw ShapeError("distill: teacher targets not aligned with example " + std::to_string(i));

    auto student = student_factory(spec.seed);
    if (student->num_classes() != teacher.classes) throw ShapeError("distill: student and teacher class counts differ");
    const bool logit_family = is_logit_family(spec.family);
    if (student->has_scale_head() != logit_family)
        throw InvalidArgument(std::string("distill: family '") + to_string(spec.family) +
                              (logit_family ? "' needs a student with a scale head" : "' expects no scale head"));
    if (spec.init_from_teacher) {
        if (!teacher_member) throw InvalidArgument("distill: init_from_teacher set but no teacher member given");
        restore_shared(*student, *teacher_member);
    }

    const StepFn fn = [&](const BatchView& b, const ModelOutput& out, StepLog& entry) -> Var {
        const TeacherRows rows = teacher.rows(b.indices);
        const double lambda = spec.kd.lambda;
        switch (spec.family) {
        case StudentFamily::Kd: {
            const KDParts p = kd_loss_value(out.logits.value(), rows.mean_probs, b.targets, spec.kd, b.weights);
            entry.nll_term = lambda * p.nll;
            entry.kl_term = (1.0 - lambda) * p.kl;
            check_term(p.nll, "nll", entry.step);
            check_term(p.kl, "kl", entry.step);
            return kd_loss(out.logits, rows.mean_probs, b.targets, spec.kd, b.weights);
        }
        case StudentFamily::Dirichlet: {
            Var alpha = exp(out.logits);
            for (double a : alpha.value().values())
                if (!(a > 0) || !std::isfinite(a))
                    throw DivergenceError("Dirichlet concentration left (0, inf) at step " + std::to_string(entry.step),
                                          entry.step, "edd");
            entry.edd_term = dirichlet_edd_loss_value(alpha.value(), rows.member_probs, b.weights);
            check_term(entry.edd_term, "edd", entry.step);
            return dirichlet_edd_loss(alpha, rows.member_probs, b.weights);
        }
        case StudentFamily::GaussianLogit:
        case StudentFamily::LaplaceLogit: {
            Var sigma = exp(out.log_scale);
            const bool laplace = spec.family == StudentFamily::LaplaceLogit;
            if (spec.edd_only) {
                entry.edd_term =
                    laplace ? laplace_edd_loss_value(out.logits.value(), sigma.value(), rows.member_logits, b.weights)
                            : gaussian_edd_loss_value(out.logits.value(), sigma.value(), rows.member_logits, b.weights);
                check_term(entry.edd_term, "edd", entry.step);
                return laplace ? laplace_edd_loss(out.logits, sigma, rows.member_logits, b.weights)
                               : gaussian_edd_loss(out.logits, sigma, rows.member_logits, b.weights);
            }
            const CombinedParts p =
                combined_ledd_loss_value(out.logits.value(), sigma.value(), rows, b.targets, spec.kd, spec.edd, b.weights);
            entry.nll_term = lambda * p.kd.nll;
            entry.kl_term = (1.0 - lambda) * p.kd.kl;
            entry.edd_term = spec.edd.beta * p.edd;
            check_term(p.kd.nll, "nll", entry.step);
            check_term(p.kd.kl, "kl", entry.step);
            check_term(p.edd, "edd", entry.step);
            return combined_ledd_loss(out.logits, sigma, rows, b.targets, spec.kd, spec.edd, b.weights);
        }
        }
        throw InvalidArgument("distill: unknown family");
    };

    DistillProgress local;
    DistillProgress& prog = progress ? *progress : local;
    prog.log.steps.clear();
    AdamState state{spec.train.adam, {}, {}, 0};
    try {
        run_loop(*student, data, spec.train, RngStream(spec.seed).derive("distill-shuffle"), state, 0, fn, {},
                 &prog.log);
    } catch (const DivergenceError&) {
        // The failing update was never applied.
        prog.student = capture(*student);
        throw;
    }
    prog.student = capture(*student);
    return DistillResult{prog.student, prog.log};
}

UncertaintyScores augmented_ensemble_scores(const Tensor& member_logits, std::size_t samples, RngStream rng) {
    if (member_logits.rank() != 3) throw ShapeError("augmented_ensemble_scores: logits must be [L x M x K]");
    const std::size_t l = member_logits.dim(0), m = member_logits.dim(1), k = member_logits.dim(2);
    if (m < 2) throw InvalidArgument("augmented_ensemble_scores: need at least 2 members, got " + std::to_string(m));
    Tensor mu = Tensor::matrix(l, k), sigma = Tensor::matrix(l, k);
    for (std::size_t i = 0; i < l; ++i) {
        std::vector<std::vector<double>> rows(m);
        for (std::size_t mm = 0; mm < m; ++mm) {
            const auto first = member_logits.values().begin() + static_cast<std::ptrdiff_t>((i * m + mm) * k);
            rows[mm].assign(first, first + static_cast<std::ptrdiff_t>(k));
        }
        const DiagLaplaceParams fit = fit_laplace_mle(rows);
        std::copy(fit.mu.begin(), fit.mu.end(), mu.row_span(i).begin());
        std::copy(fit.sigma.begin(), fit.sigma.end(), sigma.row_span(i).begin());
    }
    return logit_sample_scores(mu, sigma, StudentFamily::LaplaceLogit, samples, rng);
}

} // namespace edd

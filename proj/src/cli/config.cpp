#include "eddkit/config.hpp"

#include "eddkit/errors.hpp"
#include "eddkit/io.hpp"

#include <json.hpp>

#include <set>
#include <sstream>

namespace edd {

using json = nlohmann::json;

namespace {

// Walks a JSON document, recording every problem instead of stopping at the
// first one.
class Reader {
public:
    std::vector<std::string> errors;

    void fail(const std::string& path, const std::string& msg) { errors.push_back(path + ": " + msg); }

    void check(bool ok, const std::string& path, const std::string& msg) {
        if (!ok) fail(path, msg);
    }

    // Rejects keys outside `allowed`. Returns false when `obj` is not an object.
    bool object(const json& obj, const std::string& path, const std::set<std::string>& allowed) {
        if (!obj.is_object()) {
            fail(path, "expected an object");
            return false;
        }
        for (const auto& [key, _] : obj.items())
            if (!allowed.count(key)) fail(path.empty() ? key : path + "." + key, "unknown key");
        return true;
    }

    static std::string join(const std::string& path, const std::string& key) {
        return path.empty() ? key : path + "." + key;
    }

    void u64(const json& obj, const std::string& path, const char* key, std::uint64_t& out) {
        if (!obj.contains(key)) return;
        const auto& v = obj[key];
        if (v.is_number_unsigned())
            out = v.get<std::uint64_t>();
        else if (v.is_number_integer() && v.get<std::int64_t>() >= 0)
            out = static_cast<std::uint64_t>(v.get<std::int64_t>());
        else
            fail(join(path, key), "expected a non-negative integer");
    }

    void size(const json& obj, const std::string& path, const char* key, std::size_t& out) {
        std::uint64_t v = out;
        u64(obj, path, key, v);
        out = static_cast<std::size_t>(v);
    }

    void i64(const json& obj, const std::string& path, const char* key, std::int64_t& out) {
        if (!obj.contains(key)) return;
        const auto& v = obj[key];
        if (v.is_number_integer())
            out = v.get<std::int64_t>();
        else
            fail(join(path, key), "expected an integer");
    }

    void real(const json& obj, const std::string& path, const char* key, double& out) {
        if (!obj.contains(key)) return;
        const auto& v = obj[key];
        if (v.is_number())
            out = v.get<double>();
        else
            fail(join(path, key), "expected a number");
    }

    void boolean(const json& obj, const std::string& path, const char* key, bool& out) {
        if (!obj.contains(key)) return;
        const auto& v = obj[key];
        if (v.is_boolean())
            out = v.get<bool>();
        else
            fail(join(path, key), "expected true or false");
    }

    template <typename E, typename F>
    void choice(const json& obj, const std::string& path, const char* key, E& out, F from_string) {
        if (!obj.contains(key)) return;
        const auto& v = obj[key];
        if (!v.is_string()) {
            fail(join(path, key), "expected a string");
            return;
        }
        try {
            out = from_string(v.get<std::string>());
        } catch (const InvalidArgument& e) {
            fail(join(path, key), e.what());
        }
    }
};

TaskSection::Kind task_kind_from_string(const std::string& s) {
    if (s == "toy") return TaskSection::Kind::Toy;
    if (s == "seq") return TaskSection::Kind::Seq;
    throw InvalidArgument("unknown task kind '" + s + "' (expected toy or seq)");
}

void read_schedule(Reader& r, const json& obj, const std::string& path, LrSchedule& s) {
    if (!obj.is_object()) {
        r.fail(path, "expected an object");
        return;
    }
    r.choice(obj, path, "kind", s.kind, schedule_kind_from_string);
    std::set<std::string> allowed{"kind"};
    switch (s.kind) {
    case LrSchedule::Kind::Constant: allowed.insert("lr"); break;
    case LrSchedule::Kind::InverseSqrtWarmup: allowed.insert({"warmup", "d_model", "factor"}); break;
    case LrSchedule::Kind::CyclicTriangular: allowed.insert({"eta_min", "eta_max", "period"}); break;
    }
    r.object(obj, path, allowed);
    r.real(obj, path, "lr", s.lr);
    r.i64(obj, path, "warmup", s.warmup);
    r.real(obj, path, "d_model", s.d_model);
    r.real(obj, path, "factor", s.factor);
    r.real(obj, path, "eta_min", s.eta_min);
    r.real(obj, path, "eta_max", s.eta_max);
    r.i64(obj, path, "period", s.period);
    try {
        s.validate();
    } catch (const InvalidArgument& e) {
        r.fail(path, e.what());
    }
}

json schedule_json(const LrSchedule& s) {
    json j{{"kind", to_string(s.kind)}};
    switch (s.kind) {
    case LrSchedule::Kind::Constant: j["lr"] = s.lr; break;
    case LrSchedule::Kind::InverseSqrtWarmup:
        j["warmup"] = s.warmup;
        j["d_model"] = s.d_model;
        j["factor"] = s.factor;
        break;
    case LrSchedule::Kind::CyclicTriangular:
        j["eta_min"] = s.eta_min;
        j["eta_max"] = s.eta_max;
        j["period"] = s.period;
        break;
    }
    return j;
}

// epochs, batch_size, schedule and adam; label smoothing is read by the caller.
void read_train(Reader& r, const json& obj, const std::string& path, TrainConfig& t) {
    r.size(obj, path, "epochs", t.epochs);
    r.check(t.epochs >= 1, Reader::join(path, "epochs"), "must be >= 1");
    r.size(obj, path, "batch_size", t.batch_size);
    r.check(t.batch_size >= 1, Reader::join(path, "batch_size"), "must be >= 1");
    if (obj.contains("schedule")) read_schedule(r, obj["schedule"], Reader::join(path, "schedule"), t.schedule);
    if (obj.contains("adam")) {
        const std::string p = Reader::join(path, "adam");
        const json& a = obj["adam"];
        if (r.object(a, p, {"beta1", "beta2", "eps"})) {
            r.real(a, p, "beta1", t.adam.beta1);
            r.real(a, p, "beta2", t.adam.beta2);
            r.real(a, p, "eps", t.adam.eps);
            r.check(t.adam.beta1 >= 0 && t.adam.beta1 < 1, p + ".beta1", "must lie in [0, 1)");
            r.check(t.adam.beta2 >= 0 && t.adam.beta2 < 1, p + ".beta2", "must lie in [0, 1)");
            r.check(t.adam.eps > 0, p + ".eps", "must be > 0");
        }
    }
}

void train_json(json& j, const TrainConfig& t) {
    j["epochs"] = t.epochs;
    j["batch_size"] = t.batch_size;
    j["schedule"] = schedule_json(t.schedule);
    j["adam"] = json{{"beta1", t.adam.beta1}, {"beta2", t.adam.beta2}, {"eps", t.adam.eps}};
}

const std::set<std::string> kTrainKeys{"epochs", "batch_size", "schedule", "adam"};

std::set<std::string> with_train_keys(std::set<std::string> keys) {
    keys.insert(kTrainKeys.begin(), kTrainKeys.end());
    return keys;
}

void read_task(Reader& r, const json& obj, TaskSection& t) {
    const std::string path = "task";
    if (!r.object(obj, path, {"kind", "toy", "seq", "train_size"})) return;
    r.choice(obj, path, "kind", t.kind, task_kind_from_string);
    r.size(obj, path, "train_size", t.train_size);
    r.check(t.train_size >= 1, "task.train_size", "must be >= 1");
    if (obj.contains("toy")) {
        const json& o = obj["toy"];
        const std::string p = "task.toy";
        if (r.object(o, p, {"centers", "sigmas", "points_per_class"})) {
            if (o.contains("centers")) {
                const json& c = o["centers"];
                bool ok = c.is_array() && c.size() == 3;
                for (std::size_t i = 0; ok && i < 3; ++i) {
                    ok = c[i].is_array() && c[i].size() == 2 && c[i][0].is_number() && c[i][1].is_number();
                    if (ok) t.toy.centers[i] = {c[i][0].get<double>(), c[i][1].get<double>()};
                }
                r.check(ok, p + ".centers", "expected three [x, y] pairs");
            }
            if (o.contains("sigmas")) {
                const json& s = o["sigmas"];
                bool ok = s.is_array() && s.size() == 3;
                for (std::size_t i = 0; ok && i < 3; ++i) {
                    ok = s[i].is_number();
                    if (ok) t.toy.sigmas[i] = s[i].get<double>();
                }
                r.check(ok, p + ".sigmas", "expected three numbers");
            }
            for (double s : t.toy.sigmas) r.check(s > 0, p + ".sigmas", "every standard deviation must be > 0");
            r.size(o, p, "points_per_class", t.toy.points_per_class);
            r.check(t.toy.points_per_class >= 1, p + ".points_per_class", "must be >= 1");
        }
    }
    if (obj.contains("seq")) {
        const json& o = obj["seq"];
        const std::string p = "task.seq";
        if (r.object(o, p, {"vocab", "min_len", "max_len", "length_shape", "reorder_window", "noise", "heldout"})) {
            auto& s = t.seq;
            r.size(o, p, "vocab", s.vocab);
            r.size(o, p, "min_len", s.min_len);
            r.size(o, p, "max_len", s.max_len);
            r.choice(o, p, "length_shape", s.length_shape, length_shape_from_string);
            r.size(o, p, "reorder_window", s.reorder_window);
            r.real(o, p, "noise", s.noise);
            r.size(o, p, "heldout", s.heldout);
            r.check(s.min_len >= 1, p + ".min_len", "must be >= 1");
            r.check(s.max_len >= s.min_len, p + ".max_len", "must be >= min_len");
            r.check(s.reorder_window >= 1, p + ".reorder_window", "must be >= 1");
            r.check(s.noise >= 0 && s.noise < 1, p + ".noise", "must lie in [0, 1)");
            r.check(s.vocab >= kFirstContentToken + s.heldout + 2, p + ".vocab",
                    "must leave at least 2 in-distribution ids after the reserved and held-out ids");
        }
    }
}

json task_json(const TaskSection& t) {
    json centers = json::array(), sigmas = json::array();
    for (const auto& c : t.toy.centers) centers.push_back({c[0], c[1]});
    for (double s : t.toy.sigmas) sigmas.push_back(s);
    const auto& s = t.seq;
    return json{{"kind", to_string(t.kind)},
                {"train_size", t.train_size},
                {"toy", {{"centers", centers}, {"sigmas", sigmas}, {"points_per_class", t.toy.points_per_class}}},
                {"seq",
                 {{"vocab", s.vocab},
                  {"min_len", s.min_len},
                  {"max_len", s.max_len},
                  {"length_shape", to_string(s.length_shape)},
                  {"reorder_window", s.reorder_window},
                  {"noise", s.noise},
                  {"heldout", s.heldout}}}};
}

void read_model(Reader& r, const json& obj, ModelSection& m) {
    if (!r.object(obj, "model", {"hidden", "d_model", "seq_hidden"})) return;
    if (obj.contains("hidden")) {
        const json& h = obj["hidden"];
        bool ok = h.is_array() && !h.empty();
        std::vector<std::size_t> widths;
        for (std::size_t i = 0; ok && i < h.size(); ++i) {
            ok = h[i].is_number_integer() && h[i].get<std::int64_t>() >= 1;
            if (ok) widths.push_back(h[i].get<std::size_t>());
        }
        if (ok)
            m.hidden = widths;
        else
            r.fail("model.hidden", "expected a non-empty list of positive widths");
    }
    r.size(obj, "model", "d_model", m.d_model);
    r.size(obj, "model", "seq_hidden", m.seq_hidden);
    r.check(m.d_model >= 1, "model.d_model", "must be >= 1");
    r.check(m.seq_hidden >= 1, "model.seq_hidden", "must be >= 1");
}

void read_ensemble(Reader& r, const json& obj, EnsembleSection& e) {
    const std::string p = "ensemble";
    if (!r.object(obj, p,
                  with_train_keys({"kind", "members", "label_smoothing", "base_epochs", "period_epochs", "eta_min",
                                   "eta_max"})))
        return;
    r.choice(obj, p, "kind", e.kind, ensemble_kind_from_string);
    r.size(obj, p, "members", e.members);
    r.check(e.members >= 1, p + ".members", "must be >= 1");
    read_train(r, obj, p, e.train);
    r.real(obj, p, "label_smoothing", e.train.label_smoothing);
    r.check(e.train.label_smoothing >= 0 && e.train.label_smoothing < 1, p + ".label_smoothing", "must lie in [0, 1)");
    r.size(obj, p, "base_epochs", e.base_epochs);
    r.size(obj, p, "period_epochs", e.period_epochs);
    r.real(obj, p, "eta_min", e.eta_min);
    r.real(obj, p, "eta_max", e.eta_max);
    r.check(e.base_epochs >= 1, p + ".base_epochs", "must be >= 1");
    r.check(e.period_epochs >= 1, p + ".period_epochs", "must be >= 1");
    r.check(e.eta_min > 0, p + ".eta_min", "must be > 0");
    r.check(e.eta_min < e.eta_max, p + ".eta_max", "must exceed eta_min");
}

void read_distill(Reader& r, const json& obj, DistillSection& d) {
    const std::string p = "distill";
    if (!r.object(obj, p,
                  with_train_keys({"family", "lambda", "temperature", "beta", "label_smoothing", "init_from_teacher",
                                   "edd_only"})))
        return;
    r.choice(obj, p, "family", d.family, student_family_from_string);
    r.real(obj, p, "lambda", d.kd.lambda);
    r.real(obj, p, "temperature", d.kd.temperature);
    r.real(obj, p, "beta", d.beta);
    r.real(obj, p, "label_smoothing", d.kd.label_smoothing);
    r.boolean(obj, p, "init_from_teacher", d.init_from_teacher);
    r.boolean(obj, p, "edd_only", d.edd_only);
    read_train(r, obj, p, d.train);
    d.train.label_smoothing = d.kd.label_smoothing;
    r.check(d.kd.lambda >= 0 && d.kd.lambda <= 1, p + ".lambda", "must lie in [0, 1]");
    r.check(d.kd.temperature > 0, p + ".temperature", "must be > 0");
    r.check(d.beta >= 0, p + ".beta", "must be >= 0");
    r.check(d.kd.label_smoothing >= 0 && d.kd.label_smoothing < 1, p + ".label_smoothing", "must lie in [0, 1)");
    r.check(!d.edd_only || is_logit_family(d.family), p + ".edd_only", "only valid for ledd-* families");
}

void read_eval(Reader& r, const json& obj, EvalSection& e) {
    const std::string p = "eval";
    if (!r.object(obj, p,
                  {"shifts", "samples", "beam", "length_penalty", "max_len", "id_count", "ood_count",
                   "grid_resolution"}))
        return;
    if (obj.contains("shifts")) {
        const json& s = obj["shifts"];
        if (!s.is_array()) {
            r.fail(p + ".shifts", "expected a list");
        } else {
            e.shifts.clear();
            for (std::size_t i = 0; i < s.size(); ++i) {
                const std::string sp = p + ".shifts[" + std::to_string(i) + "]";
                OodShift shift;
                if (!r.object(s[i], sp, {"kind", "magnitude"})) continue;
                r.choice(s[i], sp, "kind", shift.kind, shift_kind_from_string);
                r.real(s[i], sp, "magnitude", shift.magnitude);
                try {
                    shift.validate();
                } catch (const InvalidArgument& err) {
                    r.fail(sp, err.what());
                }
                e.shifts.push_back(shift);
            }
        }
    }
    r.size(obj, p, "samples", e.samples);
    r.size(obj, p, "beam", e.beam);
    r.real(obj, p, "length_penalty", e.length_penalty);
    if (obj.contains("max_len")) {
        if (obj["max_len"].is_null()) {
            e.max_len.reset();
        } else {
            std::size_t v = 0;
            r.size(obj, p, "max_len", v);
            r.check(v >= 1, p + ".max_len", "must be >= 1 or null");
            e.max_len = v;
        }
    }
    r.size(obj, p, "id_count", e.id_count);
    r.size(obj, p, "ood_count", e.ood_count);
    r.size(obj, p, "grid_resolution", e.grid_resolution);
    r.check(e.samples >= 2, p + ".samples", "must be >= 2");
    r.check(e.beam >= 1, p + ".beam", "must be >= 1");
    r.check(e.length_penalty >= 0, p + ".length_penalty", "must be >= 0");
    r.check(e.id_count >= 2, p + ".id_count", "must be >= 2");
    r.check(e.ood_count >= 2, p + ".ood_count", "must be >= 2");
    r.check(e.grid_resolution >= 1, p + ".grid_resolution", "must be >= 1");
}

} // namespace

std::string to_string(TaskSection::Kind kind) { return kind == TaskSection::Kind::Toy ? "toy" : "seq"; }

std::uint64_t component_seed(std::uint64_t seed, std::string_view component) {
    return RngStream(seed).derive(component).next_u64();
}

ExperimentConfig parse_config(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    ExperimentConfig c;
    Reader r;
    if (r.object(doc, "", {"seed", "output_dir", "task", "model", "ensemble", "distill", "eval"})) {
        r.u64(doc, "", "seed", c.seed);
        if (doc.contains("output_dir")) {
            if (doc["output_dir"].is_string() && !doc["output_dir"].get<std::string>().empty())
                c.output_dir = doc["output_dir"].get<std::string>();
            else
                r.fail("output_dir", "expected a non-empty string");
        }
        if (doc.contains("task")) read_task(r, doc["task"], c.task);
        if (doc.contains("model")) read_model(r, doc["model"], c.model);
        if (doc.contains("ensemble")) read_ensemble(r, doc["ensemble"], c.ensemble);
        if (doc.contains("distill")) read_distill(r, doc["distill"], c.distill);
        if (doc.contains("eval")) read_eval(r, doc["eval"], c.eval);
    }
    if (!r.errors.empty()) {
        std::ostringstream msg;
        msg << "invalid config (" << r.errors.size() << " problem" << (r.errors.size() == 1 ? "" : "s") << "):";
        for (const auto& e : r.errors) msg << "\n  " << e;
        throw ConfigError(msg.str());
    }
    return c;
}

ExperimentConfig load_config(const std::string& path) {
    std::string text;
    try {
        text = read_text_file(path);
    } catch (const IoError& e) {
        throw ConfigError(std::string("cannot read config: ") + e.what());
    }
    return parse_config(text);
}

std::string serialize_config(const ExperimentConfig& c) {
    json ensemble{{"kind", to_string(c.ensemble.kind)},
                  {"members", c.ensemble.members},
                  {"label_smoothing", c.ensemble.train.label_smoothing},
                  {"base_epochs", c.ensemble.base_epochs},
                  {"period_epochs", c.ensemble.period_epochs},
                  {"eta_min", c.ensemble.eta_min},
                  {"eta_max", c.ensemble.eta_max}};
    train_json(ensemble, c.ensemble.train);
    json distill{{"family", to_string(c.distill.family)},
                 {"lambda", c.distill.kd.lambda},
                 {"temperature", c.distill.kd.temperature},
                 {"beta", c.distill.beta},
                 {"label_smoothing", c.distill.kd.label_smoothing},
                 {"init_from_teacher", c.distill.init_from_teacher},
                 {"edd_only", c.distill.edd_only}};
    train_json(distill, c.distill.train);
    json shifts = json::array();
    for (const auto& s : c.eval.shifts) shifts.push_back({{"kind", to_string(s.kind)}, {"magnitude", s.magnitude}});
    json eval{{"shifts", shifts},
              {"samples", c.eval.samples},
              {"beam", c.eval.beam},
              {"length_penalty", c.eval.length_penalty},
              {"max_len", c.eval.max_len ? json(*c.eval.max_len) : json(nullptr)},
              {"id_count", c.eval.id_count},
              {"ood_count", c.eval.ood_count},
              {"grid_resolution", c.eval.grid_resolution}};
    json doc{{"seed", c.seed},
             {"output_dir", c.output_dir},
             {"task", task_json(c.task)},
             {"model", {{"hidden", c.model.hidden}, {"d_model", c.model.d_model}, {"seq_hidden", c.model.seq_hidden}}},
             {"ensemble", ensemble},
             {"distill", distill},
             {"eval", eval}};
    return doc.dump(2) + "\n";
}

std::string config_hash(const ExperimentConfig& config) { return hex64(fnv1a64(serialize_config(config))); }

} // namespace edd

#include "eddkit/seqtask.hpp"

#include "eddkit/errors.hpp"
#include "eddkit/io.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace edd {

namespace {

std::size_t draw_length(const SeqTaskSpec& spec, RngStream& rng) {
    const std::size_t span = spec.max_len - spec.min_len;
    if (spec.length_shape == LengthShape::Uniform) return spec.min_len + rng.uniform_int(span + 1);
    std::size_t n = 0;
    for (std::size_t i = 0; i < span; ++i) n += rng.uniform() < 0.5;
    return spec.min_len + n;
}

int draw_id_token(const SeqTaskSpec& spec, RngStream& rng) {
    return kFirstContentToken + static_cast<int>(rng.uniform_int(spec.id_vocab()));
}

std::vector<int> draw_body(const SeqTaskSpec& spec, std::size_t len, RngStream& rng) {
    std::vector<int> body(len);
    for (auto& t : body) t = draw_id_token(spec, rng);
    return body;
}

std::vector<std::vector<int>> parse_lines(const std::string& text, const std::string& what) {
    std::vector<std::vector<int>> out;
    std::istringstream lines(text);
    std::string line;
    std::size_t no = 0;
    while (std::getline(lines, line)) {
        ++no;
        std::istringstream ls(line);
        std::vector<int> seq;
        std::string tok;
        while (ls >> tok) {
            try {
                std::size_t used = 0;
                seq.push_back(std::stoi(tok, &used));
                if (used != tok.size()) throw std::invalid_argument(tok);
            } catch (const std::exception&) {
                throw IoError(what + ":" + std::to_string(no) + ": bad token '" + tok + "'");
            }
        }
        out.push_back(std::move(seq));
    }
    return out;
}

} // namespace

void ToySpec::validate() const {
    if (points_per_class < 1) throw InvalidArgument("toy: points_per_class must be >= 1");
    for (double s : sigmas)
        if (!(s > 0)) throw InvalidArgument("toy: standard deviations must be > 0");
}

Dataset gen_toy(const ToySpec& spec) {
    spec.validate();
    RngStream rng = RngStream(spec.seed).derive("toy");
    Dataset data;
    data.reserve(3 * spec.points_per_class);
    for (int c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < spec.points_per_class; ++i) {
            Example ex;
            ex.features = {spec.centers[c][0] + spec.sigmas[c] * rng.normal(),
                           spec.centers[c][1] + spec.sigmas[c] * rng.normal()};
            ex.tgt = {c};
            data.push_back(std::move(ex));
        }
    return data;
}

void SeqTaskSpec::validate() const {
    if (min_len < 1 || min_len > max_len) throw InvalidArgument("seq task: need 1 <= min_len <= max_len");
    if (!(noise >= 0.0 && noise < 1.0)) throw InvalidArgument("seq task: noise must lie in [0, 1)");
    if (reorder_window < 1) throw InvalidArgument("seq task: reorder_window must be >= 1");
    if (vocab < kFirstContentToken + heldout + 2)
        throw InvalidArgument("seq task: vocabulary too small for the reserved and held-out ids");
}

void OodShift::validate() const {
    const bool ok = kind == Kind::LengthShift ? (magnitude > 0 && magnitude <= 8.0) : (magnitude > 0 && magnitude <= 1.0);
    if (!ok)
        throw InvalidArgument("ood shift '" + to_string(kind) + "': magnitude " + std::to_string(magnitude) +
                              (kind == Kind::LengthShift ? " outside (0, 8]" : " outside (0, 1]"));
}

std::string OodShift::name() const {
    std::ostringstream ss;
    ss << to_string(kind) << "-" << magnitude;
    return ss.str();
}

std::string to_string(OodShift::Kind kind) {
    switch (kind) {
    case OodShift::Kind::VocabShift: return "vocab-shift";
    case OodShift::Kind::LengthShift: return "length-shift";
    case OodShift::Kind::RuleShift: return "rule-shift";
    }
    return "length-shift";
}

OodShift::Kind shift_kind_from_string(const std::string& s) {
    if (s == "vocab-shift") return OodShift::Kind::VocabShift;
    if (s == "length-shift") return OodShift::Kind::LengthShift;
    if (s == "rule-shift") return OodShift::Kind::RuleShift;
    throw InvalidArgument("unknown shift kind '" + s + "'");
}

std::string to_string(LengthShape shape) { return shape == LengthShape::Uniform ? "uniform" : "binomial"; }

LengthShape length_shape_from_string(const std::string& s) {
    if (s == "uniform") return LengthShape::Uniform;
    if (s == "binomial") return LengthShape::Binomial;
    throw InvalidArgument("unknown length shape '" + s + "'");
}

std::vector<int> cipher_table(const SeqTaskSpec& spec) {
    spec.validate();
    std::vector<int> table(spec.vocab);
    std::iota(table.begin(), table.end(), 0);
    RngStream rng = RngStream(spec.seed).derive("cipher");
    for (std::size_t i = spec.vocab - 1; i > static_cast<std::size_t>(kFirstContentToken); --i) {
        const std::size_t j = kFirstContentToken + rng.uniform_int(i - kFirstContentToken + 1);
        std::swap(table[i], table[j]);
    }
    return table;
}

std::vector<int> transduce(const SeqTaskSpec& spec, const std::vector<int>& cipher, std::span<const int> body) {
    std::vector<int> out;
    out.reserve(body.size() + 1);
    for (int t : body) out.push_back(cipher.at(static_cast<std::size_t>(t)));
    const std::size_t w = spec.reorder_window;
    for (std::size_t start = 0; start < out.size(); start += w)
        std::reverse(out.begin() + static_cast<std::ptrdiff_t>(start),
                     out.begin() + static_cast<std::ptrdiff_t>(std::min(out.size(), start + w)));
    out.push_back(kEos);
    return out;
}

Dataset gen_seq_dataset(const SeqTaskSpec& spec, std::size_t count, std::uint64_t stream) {
    spec.validate();
    const auto cipher = cipher_table(spec);
    RngStream rng = RngStream(spec.seed).derive("pairs").derive(stream);
    const std::size_t content = spec.vocab - kFirstContentToken;
    Dataset data;
    data.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        auto body = draw_body(spec, draw_length(spec, rng), rng);
        Example ex;
        ex.tgt = transduce(spec, cipher, body);
        for (std::size_t l = 0; l + 1 < ex.tgt.size(); ++l)
            if (rng.uniform() < spec.noise) ex.tgt[l] = kFirstContentToken + static_cast<int>(rng.uniform_int(content));
        ex.src = std::move(body);
        ex.src.push_back(kEos);
        data.push_back(std::move(ex));
    }
    return data;
}

std::vector<std::vector<int>> gen_id_sources(const SeqTaskSpec& spec, std::size_t count, std::uint64_t stream) {
    std::vector<std::vector<int>> out;
    for (auto& ex : gen_seq_dataset(spec, count, stream)) out.push_back(std::move(ex.src));
    return out;
}

std::vector<std::vector<int>> gen_ood_dataset(const SeqTaskSpec& spec, const OodShift& shift, std::size_t count,
                                              std::uint64_t stream) {
    spec.validate();
    shift.validate();
    if (shift.kind == OodShift::Kind::VocabShift && spec.heldout == 0)
        throw InvalidArgument("vocab-shift needs held-out ids (heldout > 0)");
    RngStream rng = RngStream(spec.seed).derive("ood").derive(to_string(shift.kind)).derive(stream);
    std::vector<std::vector<int>> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        std::size_t len = draw_length(spec, rng);
        if (shift.kind == OodShift::Kind::LengthShift)
            len = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(shift.magnitude * static_cast<double>(len))));
        std::vector<int> body = draw_body(spec, len, rng);
        if (shift.kind == OodShift::Kind::VocabShift) {
            for (auto& t : body)
                if (rng.uniform() < shift.magnitude)
                    t = spec.first_heldout() + static_cast<int>(rng.uniform_int(spec.heldout));
        } else if (shift.kind == OodShift::Kind::RuleShift) {
            // ascending-run grammar: each token continues the previous one with probability `magnitude`
            const int n = static_cast<int>(spec.id_vocab());
            for (std::size_t l = 1; l < body.size(); ++l)
                if (rng.uniform() < shift.magnitude)
                    body[l] = kFirstContentToken + (body[l - 1] - kFirstContentToken + 1) % n;
        }
        body.push_back(kEos);
        out.push_back(std::move(body));
    }
    return out;
}

std::size_t content_length(std::span<const int> seq) noexcept {
    return static_cast<std::size_t>(std::count_if(seq.begin(), seq.end(), [](int t) { return t >= kFirstContentToken; }));
}

void write_token_lines(const std::filesystem::path& path, const std::vector<std::vector<int>>& seqs) {
    std::ostringstream ss;
    for (const auto& s : seqs) {
        for (std::size_t i = 0; i < s.size(); ++i) ss << (i ? " " : "") << s[i];
        ss << '\n';
    }
    atomic_write_text(path, ss.str());
}

std::vector<std::vector<int>> read_token_lines(const std::filesystem::path& path) {
    return parse_lines(read_text_file(path), path.string());
}

void write_parallel(const std::filesystem::path& src_path, const std::filesystem::path& tgt_path, const Dataset& data) {
    std::vector<std::vector<int>> src, tgt;
    for (const auto& ex : data) {
        src.push_back(ex.src);
        tgt.push_back(ex.tgt);
    }
    write_token_lines(src_path, src);
    write_token_lines(tgt_path, tgt);
}

Dataset read_parallel(const std::filesystem::path& src_path, const std::filesystem::path& tgt_path) {
    auto src = read_token_lines(src_path);
    auto tgt = read_token_lines(tgt_path);
    if (src.size() != tgt.size())
        throw IoError("parallel corpus line counts differ: " + std::to_string(src.size()) + " vs " +
                      std::to_string(tgt.size()));
    Dataset data(src.size());
    for (std::size_t i = 0; i < src.size(); ++i) {
        data[i].src = std::move(src[i]);
        data[i].tgt = std::move(tgt[i]);
    }
    return data;
}

void write_toy_csv(const std::filesystem::path& path, const Dataset& data) {
    std::ostringstream ss;
    ss.precision(17);
    ss << "x,y,label\n";
    for (const auto& ex : data) ss << ex.features.at(0) << ',' << ex.features.at(1) << ',' << ex.tgt.at(0) << '\n';
    atomic_write_text(path, ss.str());
}

Dataset read_toy_csv(const std::filesystem::path& path) {
    std::istringstream in(read_text_file(path));
    std::string line;
    if (!std::getline(in, line) || line != "x,y,label") throw IoError(path.string() + ": expected header x,y,label");
    Dataset data;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        double x = 0, y = 0;
        int label = 0;
        char c1 = 0, c2 = 0;
        if (!(ls >> x >> c1 >> y >> c2 >> label) || c1 != ',' || c2 != ',')
            throw IoError(path.string() + ": malformed row '" + line + "'");
        Example ex;
        ex.features = {x, y};
        ex.tgt = {label};
        data.push_back(std::move(ex));
    }
    return data;
}

} // namespace edd

#include "oracles.hpp"

#include "eddkit/ensembles.hpp"
#include "eddkit/errors.hpp"
#include "eddkit/io.hpp"
#include "eddkit/seqtask.hpp"
#include "eddkit/uncertainty.hpp"

#include <boost/math/distributions/binomial.hpp>
#include <boost/math/distributions/chi_squared.hpp>
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <set>

using namespace edd;
using namespace edd::testing;
namespace fs = std::filesystem;

namespace {

// Pearson chi-square p-value of observed counts against expected ones.
double chi_square_p(const std::vector<double>& observed, const std::vector<double>& expected) {
    double stat = 0.0;
    std::size_t cells = 0;
    for (std::size_t i = 0; i < observed.size(); ++i) {
        if (expected[i] <= 0) continue;
        stat += (observed[i] - expected[i]) * (observed[i] - expected[i]) / expected[i];
        ++cells;
    }
    return boost::math::cdf(boost::math::complement(boost::math::chi_squared(double(cells - 1)), stat));
}

std::vector<double> length_counts(const std::vector<std::vector<int>>& seqs, std::size_t max_len) {
    std::vector<double> c(max_len + 1, 0.0);
    for (const auto& s : seqs) c.at(content_length(s)) += 1;
    return c;
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("eddkit-unit-" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

} // namespace

TEST_SUITE("closed-form") {
    TEST_CASE("toy class means settle on their centres") {
        const ToySpec spec;
        const Dataset data = gen_toy(spec);
        const double n = static_cast<double>(spec.points_per_class);
        for (int c = 0; c < 3; ++c) {
            double mx = 0.0, my = 0.0;
            for (std::size_t i = 0; i < spec.points_per_class; ++i) {
                mx += data[c * spec.points_per_class + i].features[0] / n;
                my += data[c * spec.points_per_class + i].features[1] / n;
            }
            const double tol = 4.0 * spec.sigmas[c] / std::sqrt(n);
            CHECK(std::abs(mx - spec.centers[c][0]) < tol);
            CHECK(std::abs(my - spec.centers[c][1]) < tol);
        }
    }

    TEST_CASE("source lengths follow the configured distribution") {
        for (LengthShape shape : {LengthShape::Uniform, LengthShape::Binomial}) {
            SeqTaskSpec spec;
            spec.min_len = 2;
            spec.max_len = 9;
            spec.length_shape = shape;
            const auto seqs = gen_id_sources(spec, 10000);
            const auto obs = length_counts(seqs, spec.max_len);
            std::vector<double> exp(obs.size(), 0.0);
            const boost::math::binomial_distribution<double> bin(double(spec.max_len - spec.min_len), 0.5);
            for (std::size_t l = spec.min_len; l <= spec.max_len; ++l)
                exp[l] = 10000.0 * (shape == LengthShape::Uniform ? 1.0 / (spec.max_len - spec.min_len + 1)
                                                                  : boost::math::pdf(bin, double(l - spec.min_len)));
            INFO(to_string(shape));
            CHECK(chi_square_p(obs, exp) > 0.01);
        }
    }

    TEST_CASE("length shift by two doubles the mean source length") {
        const SeqTaskSpec spec;
        const auto id = gen_id_sources(spec, 5000, 1);
        const auto ood = gen_ood_dataset(spec, OodShift{OodShift::Kind::LengthShift, 2.0}, 5000, 1);
        double mi = 0.0, mo = 0.0;
        for (const auto& s : id) mi += content_length(s) / 5000.0;
        for (const auto& s : ood) mo += content_length(s) / 5000.0;
        CHECK(std::abs(mo / mi - 2.0) < 0.1);
    }
}

TEST_SUITE("seqtask") {
    TEST_CASE("collapsed toy clusters sit on their centres with exact balance") {
        ToySpec spec;
        spec.sigmas = {1e-9, 1e-9, 1e-9};
        spec.points_per_class = 50;
        const Dataset data = gen_toy(spec);
        REQUIRE(data.size() == 150);
        for (std::size_t i = 0; i < data.size(); ++i) {
            const int c = static_cast<int>(i / 50);
            CHECK(data[i].tgt == std::vector<int>{c});
            CHECK(std::abs(data[i].features[0] - spec.centers[c][0]) < 1e-6);
            CHECK(std::abs(data[i].features[1] - spec.centers[c][1]) < 1e-6);
        }
        CHECK(gen_toy(spec).size() == 150);
        spec.sigmas[1] = 0.0;
        CHECK_THROWS_AS(gen_toy(spec), InvalidArgument);
    }

    TEST_CASE("generators repeat under a seed") {
        const ToySpec t;
        CHECK(gen_toy(t)[17].features == gen_toy(t)[17].features);
        SeqTaskSpec s;
        s.noise = 0.2;
        const Dataset a = gen_seq_dataset(s, 50, 3), b = gen_seq_dataset(s, 50, 3), c = gen_seq_dataset(s, 50, 4);
        for (std::size_t i = 0; i < 50; ++i) {
            CHECK(a[i].src == b[i].src);
            CHECK(a[i].tgt == b[i].tgt);
        }
        bool differ = false;
        for (std::size_t i = 0; i < 50; ++i) differ |= a[i].src != c[i].src;
        CHECK(differ);
        const OodShift shift{OodShift::Kind::VocabShift, 0.5};
        CHECK(gen_ood_dataset(s, shift, 20) == gen_ood_dataset(s, shift, 20));
    }

    TEST_CASE("noise-free window-one targets are the cipher of the source") {
        SeqTaskSpec spec;
        const auto cipher = cipher_table(spec);
        for (int r = 0; r < kFirstContentToken; ++r) CHECK(cipher[r] == r);
        std::set<int> image(cipher.begin(), cipher.end());
        CHECK(image.size() == spec.vocab);
        for (const auto& ex : gen_seq_dataset(spec, 200)) {
            REQUIRE(ex.tgt.size() == ex.src.size());
            for (std::size_t l = 0; l + 1 < ex.src.size(); ++l) CHECK(ex.tgt[l] == cipher[ex.src[l]]);
            CHECK(ex.tgt.back() == kEos);
            CHECK(ex.src.back() == kEos);
        }
    }

    TEST_CASE("reorder windows reverse blocks of the ciphered source") {
        SeqTaskSpec spec;
        spec.reorder_window = 3;
        const auto cipher = cipher_table(spec);
        const std::vector<int> body{3, 4, 5, 6, 7};
        const auto out = transduce(spec, cipher, body);
        CHECK(out == std::vector<int>{cipher[5], cipher[4], cipher[3], cipher[7], cipher[6], kEos});
    }

    TEST_CASE("held-out ids stay out of the in-distribution data") {
        SeqTaskSpec spec;
        spec.noise = 0.0;
        for (const auto& ex : gen_seq_dataset(spec, 2000))
            for (std::size_t l = 0; l + 1 < ex.src.size(); ++l) {
                CHECK(ex.src[l] >= kFirstContentToken);
                CHECK(ex.src[l] < spec.first_heldout());
            }
    }

    TEST_CASE("full vocab shift uses only held-out ids") {
        const SeqTaskSpec spec;
        for (const auto& s : gen_ood_dataset(spec, OodShift{OodShift::Kind::VocabShift, 1.0}, 300))
            for (std::size_t l = 0; l + 1 < s.size(); ++l) CHECK(s[l] >= spec.first_heldout());
    }

    TEST_CASE("vanishing shifts leave unigram counts indistinguishable from ID") {
        const SeqTaskSpec spec;
        const auto id = gen_id_sources(spec, 3000, 5);
        for (OodShift::Kind kind : {OodShift::Kind::VocabShift, OodShift::Kind::RuleShift}) {
            const auto ood = gen_ood_dataset(spec, OodShift{kind, 1e-9}, 3000, 5);
            std::vector<double> ci(spec.vocab, 0.0), co(spec.vocab, 0.0);
            double ni = 0.0, no = 0.0;
            for (const auto& s : id)
                for (int t : s) ci[t] += 1, ni += 1;
            for (const auto& s : ood)
                for (int t : s) co[t] += 1, no += 1;
            // Two-sample homogeneity test on the pooled counts.
            double stat = 0.0;
            std::size_t cells = 0;
            for (std::size_t t = 0; t < spec.vocab; ++t) {
                const double tot = ci[t] + co[t];
                if (tot == 0) continue;
                const double ei = tot * ni / (ni + no), eo = tot * no / (ni + no);
                stat += (ci[t] - ei) * (ci[t] - ei) / ei + (co[t] - eo) * (co[t] - eo) / eo;
                ++cells;
            }
            const double p = boost::math::cdf(boost::math::complement(boost::math::chi_squared(double(cells - 1)), stat));
            INFO(to_string(kind));
            CHECK(p > 0.01);
        }
    }

    TEST_CASE("near-total noise gives high data and low knowledge uncertainty") {
        SeqTaskSpec spec;
        spec.vocab = 11;
        spec.heldout = 2;
        spec.min_len = 2;
        spec.max_len = 4;
        spec.noise = 0.99;
        const Dataset data = gen_seq_dataset(spec, 1500);
        EnsembleSpec es;
        es.members = 3;
        es.train.epochs = 6;
        es.train.batch_size = 32;
        es.train.schedule = LrSchedule::constant(1e-2);
        es.train.label_smoothing = 0.0;
        const auto factory = [](std::uint64_t seed) {
            SeqModelConfig c;
            c.vocab = 11;
            c.d_model = 8;
            c.hidden = 12;
            return std::make_unique<TinySeqModel>(c, RngStream(seed));
        };
        std::vector<std::unique_ptr<TinySeqModel>> members;
        std::vector<const TinySeqModel*> ptrs;
        for (const auto& ck : train_deep_ensemble(es, data, factory)) {
            members.push_back(factory(0));
            restore(*members.back(), ck);
            ptrs.push_back(members.back().get());
        }
        double du = 0.0, ku = 0.0;
        std::size_t steps = 0;
        for (const auto& ex : gen_seq_dataset(spec, 50, 9)) {
            const Tensor z = member_logits_on(ptrs, ex.src, ex.tgt);
            for (std::size_t l = 0; l + 1 < ex.tgt.size(); ++l) {
                Tensor one({1, 3, 11});
                std::copy_n(z.values().begin() + l * 33, 33, one.values().begin());
                const auto s = sequence_scores(one, std::vector<int>{kEos});
                du += s.data;
                ku += s.knowledge;
                ++steps;
            }
        }
        du /= steps;
        ku /= steps;
        MESSAGE("content-step DU " << du << " of ln 8 = " << std::log(8.0) << ", KU " << ku);
        CHECK(du > 0.9 * std::log(8.0));
        CHECK(ku < 0.1);
    }

    TEST_CASE("invalid specs and shifts are rejected") {
        SeqTaskSpec s;
        s.noise = 1.0;
        CHECK_THROWS_AS(s.validate(), InvalidArgument);
        s.noise = 0.0;
        s.min_len = 5;
        s.max_len = 4;
        CHECK_THROWS(s.validate());
        CHECK_THROWS(OodShift{OodShift::Kind::VocabShift, 1.5}.validate());
        CHECK_THROWS(OodShift{OodShift::Kind::LengthShift, 0.0}.validate());
        SeqTaskSpec none;
        none.heldout = 0;
        CHECK_THROWS(gen_ood_dataset(none, OodShift{OodShift::Kind::VocabShift, 0.5}, 5));
        CHECK(shift_kind_from_string("rule-shift") == OodShift::Kind::RuleShift);
        CHECK_THROWS(shift_kind_from_string("domain-shift"));
        CHECK(OodShift{OodShift::Kind::LengthShift, 2.0}.name() == "length-shift-2");
    }

    TEST_CASE("content length skips reserved ids") {
        const std::vector<int> s{3, 9, 4, kEos}, e{kEos};
        CHECK(content_length(s) == 3);
        CHECK(content_length(e) == 0);
    }

    TEST_CASE("token files, parallel files and toy csv round trip") {
        const fs::path dir = scratch("seqtask-io");
        const SeqTaskSpec spec;
        const Dataset pairs = gen_seq_dataset(spec, 30);
        write_parallel(dir / "a.src", dir / "a.tgt", pairs);
        const Dataset back = read_parallel(dir / "a.src", dir / "a.tgt");
        REQUIRE(back.size() == 30);
        for (std::size_t i = 0; i < 30; ++i) {
            CHECK(back[i].src == pairs[i].src);
            CHECK(back[i].tgt == pairs[i].tgt);
        }
        ToySpec ts;
        ts.points_per_class = 5;
        const Dataset toy = gen_toy(ts);
        write_toy_csv(dir / "toy.csv", toy);
        const Dataset tb = read_toy_csv(dir / "toy.csv");
        REQUIRE(tb.size() == 15);
        for (std::size_t i = 0; i < 15; ++i) {
            CHECK(tb[i].tgt == toy[i].tgt);
            CHECK(tb[i].features[0] == doctest::Approx(toy[i].features[0]).epsilon(1e-12));
        }
        atomic_write_text(dir / "bad.txt", "3 4 x\n");
        CHECK_THROWS_AS(read_token_lines(dir / "bad.txt"), IoError);
        CHECK_THROWS_AS(read_token_lines(dir / "missing.txt"), IoError);
        fs::remove_all(dir);
    }
}

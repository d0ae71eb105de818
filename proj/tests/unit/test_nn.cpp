#include "oracles.hpp"

#include "eddkit/checkpoint.hpp"
#include "eddkit/decode.hpp"
#include "eddkit/errors.hpp"
#include "eddkit/io.hpp"
#include "eddkit/nn.hpp"
#include "eddkit/optim.hpp"

#include <doctest.h>

#include <memory>

#include <cmath>
#include <filesystem>

using namespace edd;
using namespace edd::testing;

namespace {

SeqModelConfig small_config(std::size_t vocab = 8, bool scale = false) {
    SeqModelConfig c;
    c.vocab = vocab;
    c.d_model = 6;
    c.hidden = 7;
    c.scale_head = scale;
    return c;
}

TinySeqModel small_seq(std::uint64_t seed, std::size_t vocab = 8, bool scale = false) {
    return TinySeqModel(small_config(vocab, scale), RngStream(seed));
}

// Makes the decoder's distributions less flat so search actually matters.
void sharpen(TinySeqModel& m, double factor) {
    for (auto& p : m.parameters())
        if (p.name.rfind("output", 0) == 0)
            for (double& v : p.var.mutable_value().values()) v *= factor;
}

} // namespace

TEST_SUITE("closed-form") {
    TEST_CASE("random two-layer classifier matches a hand-stepped matrix multiply") {
        MlpConfig c;
        c.input_dim = 3;
        c.hidden = {5};
        c.num_classes = 4;
        MlpModel model(c, RngStream(21));
        RngStream rng(22);
        for (auto& p : model.parameters())
            for (double& v : p.var.mutable_value().values()) v = rng.normal();
        std::vector<std::vector<double>> x(7, std::vector<double>(3));
        Tensor xt = Tensor::matrix(7, 3);
        for (std::size_t i = 0; i < 7; ++i)
            for (std::size_t j = 0; j < 3; ++j) xt.at(i, j) = x[i][j] = rng.normal();
        const auto want = mlp_forward_oracle(model, x);
        const Tensor got = forward_classifier(model, xt).logits.value();
        for (std::size_t i = 0; i < 7; ++i)
            for (std::size_t k = 0; k < 4; ++k) CHECK(std::abs(got.at(i, k) - want[i][k]) < 1e-6);
    }

    TEST_CASE("first adam step with a constant gradient moves by lr g over (|g| + eps)") {
        Var p(Tensor({1, 3}, {0.5, -1.0, 2.0}), true);
        std::vector<Parameter> params{{"p", p}};
        const double g[3] = {0.3, -2.0, 1e-3}, lr = 0.01;
        for (int i = 0; i < 3; ++i) params[0].var.mutable_grad()[i] = g[i];
        AdamState state;
        adam_step(params, state, lr);
        const double start[3] = {0.5, -1.0, 2.0};
        for (int i = 0; i < 3; ++i) {
            const double expect = start[i] - lr * g[i] / (std::abs(g[i]) + state.config.eps);
            CHECK(p.value()[i] == doctest::Approx(expect).epsilon(1e-12));
        }
    }

    TEST_CASE("inverse square root schedule peaks at the end of warmup") {
        const auto s = LrSchedule::inverse_sqrt(4000, 512);
        const double expect = 1.0 / std::sqrt(4000.0 * 512.0);
        CHECK(lr_at(s, 4000) == doctest::Approx(expect).epsilon(1e-15));
        CHECK(expect == doctest::Approx(6.99e-4).epsilon(1e-3));
        CHECK(lr_at(s, 3999) < lr_at(s, 4000));
        CHECK(lr_at(s, 4001) < lr_at(s, 4000));
    }

    TEST_CASE("cyclic schedule is halfway up the ramp at a quarter period") {
        const auto s = LrSchedule::cyclic(1e-4, 1e-3, 100);
        CHECK(lr_at(s, 26) == doctest::Approx((1e-4 + 1e-3) / 2).epsilon(1e-12));
        CHECK(lr_at(s, 126) == doctest::Approx((1e-4 + 1e-3) / 2).epsilon(1e-12));
    }

    TEST_CASE("full-width beam over an ensemble matches enumeration of every two-step hypothesis") {
        std::vector<std::unique_ptr<TinySeqModel>> members;
        for (std::uint64_t s = 0; s < 3; ++s) {
            members.push_back(std::make_unique<TinySeqModel>(small_config(), RngStream(100 + s)));
            sharpen(*members.back(), 6.0);
        }
        std::vector<const TinySeqModel*> ptrs;
        for (const auto& m : members) ptrs.push_back(m.get());
        for (int src0 = 3; src0 < 8; ++src0) {
            const std::vector<int> src{src0, 4, kEos};
            DecodeOptions o;
            o.beam = 8;
            o.max_len = 2;
            o.length_penalty = 0.6;
            const Hypothesis h = decode(ptrs, src, o);
            const BruteHypothesis want = brute_force_two_step(ptrs, src, 0.6);
            CHECK(h.tokens == want.tokens);
            CHECK(h.score == doctest::Approx(want.score).epsilon(1e-12));
        }
    }
}

TEST_SUITE("reductions") {
    TEST_CASE("beam of one is greedy decoding") {
        for (std::uint64_t seed = 0; seed < 6; ++seed) {
            TinySeqModel m = small_seq(seed, 10);
            sharpen(m, 4.0);
            const std::vector<int> src{3, 5, 7, 9, kEos};
            DecodeOptions o;
            o.beam = 1;
            const Hypothesis h = decode(m, src, o);
            CHECK(h.tokens == greedy_oracle(m, src, default_max_len(src.size())));
        }
    }

    TEST_CASE("full-width beam on one model matches brute-force enumeration") {
        for (std::uint64_t seed = 0; seed < 6; ++seed) {
            TinySeqModel m = small_seq(seed + 40);
            sharpen(m, 5.0);
            const TinySeqModel* one[1] = {&m};
            const std::vector<int> src{6, 3, kEos};
            DecodeOptions o;
            o.beam = 8;
            o.max_len = 2;
            const Hypothesis h = decode(m, src, o);
            const BruteHypothesis want = brute_force_two_step(one, src, o.length_penalty);
            CHECK(h.tokens == want.tokens);
            CHECK(h.score == doctest::Approx(want.score).epsilon(1e-12));
        }
    }
}

TEST_SUITE("nn") {
    TEST_CASE("zero weights give zero logits") {
        MlpModel m(MlpConfig{}, RngStream(1));
        for (auto& p : m.parameters()) p.var.mutable_value().fill(0.0);
        RngStream rng(2);
        const Tensor z = forward_classifier(m, random_tensor({4, 2}, rng)).logits.value();
        for (double v : z.values()) CHECK(v == 0.0);
    }

    TEST_CASE("identity single layer returns its input") {
        MlpConfig c;
        c.input_dim = 3;
        c.hidden = {};
        c.num_classes = 3;
        MlpModel m(c, RngStream(1));
        auto& w = m.parameters()[0].var.mutable_value();
        w.fill(0.0);
        for (std::size_t i = 0; i < 3; ++i) w.at(i, i) = 1.0;
        m.parameters()[1].var.mutable_value().fill(0.0);
        RngStream rng(3);
        const Tensor x = random_tensor({5, 3}, rng);
        CHECK(forward_classifier(m, x).logits.value() == x);
    }

    TEST_CASE("shape mismatch names the offending dimension") {
        MlpModel m(MlpConfig{}, RngStream(1));
        try {
            forward_classifier(m, Tensor::matrix(2, 5));
            FAIL("expected ShapeError");
        } catch (const ShapeError& e) {
            CHECK(std::string(e.what()).find("dimension 1 is 5") != std::string::npos);
        }
    }

    TEST_CASE("scale head starts at zero log-scale") {
        MlpConfig c;
        c.scale_head = true;
        MlpModel m(c, RngStream(4));
        RngStream rng(5);
        const auto out = forward_classifier(m, random_tensor({3, 2}, rng));
        REQUIRE(out.log_scale.defined());
        for (double v : out.log_scale.value().values()) CHECK(v == 0.0);
    }

    TEST_CASE("decoder rows never see later target positions") {
        TinySeqModel m = small_seq(7, 12, true);
        const std::vector<int> src{3, 4, 5, kEos};
        std::vector<int> tgt{6, 7, 8, 9, kEos};
        NoGradGuard guard;
        const auto base = m.forward_seq(src, tgt);
        for (std::size_t l = 0; l < tgt.size(); ++l) {
            auto changed = tgt;
            changed[l] = changed[l] == 10 ? 11 : 10;
            const auto out = m.forward_seq(src, changed);
            for (std::size_t r = 0; r <= l; ++r)
                for (std::size_t k = 0; k < 12; ++k) {
                    CHECK(out.logits.value().at(r, k) == base.logits.value().at(r, k));
                    CHECK(out.log_scale.value().at(r, k) == base.log_scale.value().at(r, k));
                }
        }
    }

    TEST_CASE("single-token target gives one row") {
        TinySeqModel m = small_seq(8);
        const std::vector<int> src{3, kEos}, tgt{kEos};
        CHECK(m.forward_seq(src, tgt).logits.value().rows() == 1);
    }

    TEST_CASE("out-of-vocabulary and empty sources are rejected") {
        TinySeqModel m = small_seq(9);
        const std::vector<int> bad{3, 8, kEos}, tgt{kEos}, empty{};
        CHECK_THROWS_AS(m.forward_seq(bad, tgt), InvalidArgument);
        CHECK_THROWS_AS(m.forward_seq(empty, tgt), InvalidArgument);
        CHECK_THROWS_AS(m.forward_seq(tgt, bad), InvalidArgument);
    }

    TEST_CASE("same seed builds bit-identical models and outputs") {
        TinySeqModel a = small_seq(77, 12), b = small_seq(77, 12);
        const std::vector<int> src{3, 9, kEos}, tgt{4, 5, kEos};
        CHECK(a.forward_seq(src, tgt).logits.value() == b.forward_seq(src, tgt).logits.value());
        CHECK(capture(a).encode() == capture(b).encode());
    }

    TEST_CASE("zero gradient leaves parameters alone but advances the step") {
        Var p(Tensor({1, 2}, {1.0, -1.0}), true);
        std::vector<Parameter> params{{"p", p}};
        params[0].var.mutable_grad().fill(0.0);
        AdamState s;
        adam_step(params, s, 0.1);
        adam_step(params, s, 0.1);
        CHECK(s.step == 2);
        CHECK(p.value()[0] == 1.0);
        CHECK(p.value()[1] == -1.0);
    }

    TEST_CASE("mirror-image gradients give mirror-image updates") {
        Var p(Tensor({1, 2}, {0.0, 0.0}), true);
        std::vector<Parameter> params{{"p", p}};
        AdamState s;
        for (int i = 0; i < 2; ++i) {
            params[0].var.mutable_grad()[0] = 0.7;
            params[0].var.mutable_grad()[1] = -0.7;
            adam_step(params, s, 0.05);
        }
        CHECK(p.value()[0] == -p.value()[1]);
        CHECK(p.value()[0] < 0.0);
    }

    TEST_CASE("adam zeroes gradients and names a non-finite parameter") {
        Var a(Tensor({1, 1}, {1.0}), true), b(Tensor({1, 1}, {1.0}), true);
        std::vector<Parameter> params{{"alpha", a}, {"beta", b}};
        params[0].var.mutable_grad()[0] = 1.0;
        params[1].var.mutable_grad()[0] = 1.0;
        AdamState s;
        adam_step(params, s, 0.1);
        CHECK(a.grad()[0] == 0.0);
        params[1].var.mutable_grad()[0] = std::nan("");
        try {
            adam_step(params, s, 0.1);
            FAIL("expected DivergenceError");
        } catch (const DivergenceError& e) {
            CHECK(e.term() == "beta");
        }
    }

    TEST_CASE("schedule vertices, continuity and validation") {
        const auto s = LrSchedule::cyclic(1e-4, 1e-3, 100);
        CHECK(lr_at(s, 1) == doctest::Approx(1e-4).epsilon(1e-12));
        CHECK(lr_at(s, 51) == doctest::Approx(1e-3).epsilon(1e-12));
        CHECK(lr_at(s, 101) == doctest::Approx(1e-4).epsilon(1e-12));
        const double bound = (1e-3 - 1e-4) / 50.0 * (1 + 1e-9);
        for (int i = 1; i < 400; ++i) CHECK(std::abs(lr_at(s, i + 1) - lr_at(s, i)) <= bound);
        for (int i = 1; i < 400; ++i) CHECK(lr_at(s, i) > 0.0);
        CHECK_THROWS(LrSchedule::cyclic(1e-3, 1e-4, 100).validate());
        CHECK_THROWS(LrSchedule::inverse_sqrt(0, 512).validate());
        CHECK_THROWS(lr_at(s, 0));
        CHECK(lr_at(LrSchedule::constant(0.01), 12345) == 0.01);
    }

    TEST_CASE("length penalty zero ranks by raw log-probability") {
        TinySeqModel m = small_seq(12);
        sharpen(m, 5.0);
        DecodeOptions o;
        o.length_penalty = 0.0;
        o.beam = 4;
        const std::vector<int> src{3, 4, kEos};
        const Hypothesis h = decode(m, src, o);
        CHECK(h.score == h.log_prob);
    }

    TEST_CASE("hypotheses that hit the cap end in eos and are flagged") {
        TinySeqModel m = small_seq(13);
        // Make EOS nearly impossible.
        for (auto& p : m.parameters())
            if (p.name == "output.bias") p.var.mutable_value()[kEos] = -50.0;
        DecodeOptions o;
        o.max_len = 4;
        const std::vector<int> src{3, kEos};
        const Hypothesis h = decode(m, src, o);
        CHECK(h.truncated);
        CHECK(h.tokens.size() == 4);
        CHECK(h.tokens.back() == kEos);
        CHECK_THROWS(decode(m, src, DecodeOptions{0, 0.6, std::nullopt}));
    }
}

TEST_SUITE("checkpoint") {
    TEST_CASE("checkpoint bytes follow the documented layout") {
        Var w(Tensor({2, 1}, {1.5, -2.0}), true);
        Checkpoint ck;
        ck.entries.push_back({"w", w.value()});
        const auto bytes = ck.encode();
        ByteWriter expect;
        expect.raw("EDDK");
        expect.u32(1);
        expect.u32(1);
        expect.raw("w");
        expect.u32(2);
        expect.u32(2);
        expect.u32(1);
        expect.f32(1.5f);
        expect.f32(-2.0f);
        expect.seal();
        CHECK(bytes == expect.bytes());
        // Manual FNV-1a over the body.
        std::uint64_t h = 14695981039346656037ull;
        for (std::size_t i = 0; i + 8 < bytes.size(); ++i) h = (h ^ bytes[i]) * 1099511628211ull;
        std::uint64_t stored = 0;
        for (int i = 0; i < 8; ++i) stored |= std::uint64_t(bytes[bytes.size() - 8 + i]) << (8 * i);
        CHECK(stored == h);
    }

    TEST_CASE("round trip through disk restores float-rounded weights") {
        TinySeqModel a = small_seq(31, 10, true);
        const auto path = std::filesystem::temp_directory_path() / "eddkit-unit-ckpt.ckpt";
        capture(a).save(path);
        TinySeqModel b = small_seq(32, 10, true);
        restore(b, Checkpoint::load(path));
        for (std::size_t i = 0; i < a.parameters().size(); ++i)
            for (std::size_t j = 0; j < a.parameters()[i].var.value().numel(); ++j)
                CHECK(b.parameters()[i].var.value()[j] ==
                      static_cast<double>(static_cast<float>(a.parameters()[i].var.value()[j])));
        std::filesystem::remove(path);
    }

    TEST_CASE("corrupted or mismatched checkpoints are rejected") {
        TinySeqModel a = small_seq(33);
        auto bytes = capture(a).encode();
        bytes[10] ^= 0x40;
        CHECK_THROWS_AS(Checkpoint::decode(bytes), IoError);
        TinySeqModel big = small_seq(34, 12);
        CHECK_THROWS(restore(big, capture(a)));
        CHECK_THROWS_AS(Checkpoint::load("/nonexistent/dir/x.ckpt"), IoError);
    }
}

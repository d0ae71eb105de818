#include "oracles.hpp"

#include "eddkit/losses.hpp"
#include "eddkit/nn.hpp"

#include <doctest.h>

#include <cmath>

using namespace edd;
using namespace edd::testing;

namespace {

constexpr double kTol = 1e-4;
constexpr std::size_t kSeeds = 10;
constexpr std::size_t kCoords = 100;

// Small classifier with a scale head and every parameter randomised, plus a
// random teacher over the same rows.
struct Fixture {
    MlpModel model;
    Tensor inputs;
    TeacherRows teacher;
    std::vector<int> targets;

    explicit Fixture(std::uint64_t seed) : model(config(), RngStream(seed)) {
        RngStream rng = RngStream(seed).derive("fixture");
        for (auto& p : model.parameters())
            for (double& v : p.var.mutable_value().values()) v = 0.5 * rng.normal();
        inputs = random_tensor({6, 3}, rng);
        teacher = make_teacher_rows(random_tensor({6, 3, 4}, rng, 2.0));
        for (std::size_t i = 0; i < 6; ++i) targets.push_back(static_cast<int>(rng.uniform_int(4)));
    }

    static MlpConfig config() {
        MlpConfig c;
        c.input_dim = 3;
        c.hidden = {8, 8};
        c.num_classes = 4;
        c.scale_head = true;
        return c;
    }

    ModelOutput out() const { return forward_classifier(model, inputs); }

    // Which side of each |z - mu| kink the current weights sit on.
    std::vector<int> kinks() const {
        NoGradGuard guard;
        const Tensor mu = out().logits.value();
        std::vector<int> sig;
        for (std::size_t r = 0; r < 6; ++r)
            for (std::size_t m = 0; m < 3; ++m)
                for (std::size_t k = 0; k < 4; ++k)
                    sig.push_back(teacher.member_logits[(r * 3 + m) * 4 + k] > mu.at(r, k) ? 1 : -1);
        return sig;
    }
};

void check_loss(const char* name, const std::function<Var(const Fixture&)>& loss, bool kinked) {
    for (std::uint64_t seed = 1; seed <= kSeeds; ++seed) {
        Fixture f(seed * 7919);
        auto& params = f.model.parameters();
        std::function<std::vector<int>()> sig;
        if (kinked) sig = [&f] { return f.kinks(); };
        const auto r = grad_check(params, [&] { return loss(f); }, kCoords, RngStream(seed).derive(name), 1e-3, sig);
        INFO(name << " seed " << seed << " worst " << r.worst << " skipped " << r.skipped);
        CHECK(r.checked == kCoords);
        CHECK(r.max_rel_error < kTol);
    }
}

} // namespace

TEST_SUITE("gradient-oracles") {
    TEST_CASE("nll with label smoothing matches central differences") {
        check_loss("nll", [](const Fixture& f) { return nll_loss(f.out().logits, f.targets, 0.1); }, false);
    }

    TEST_CASE("tempered knowledge distillation loss matches central differences") {
        const KDConfig cfg{0.5, 0.8, 0.1};
        check_loss("kd", [&](const Fixture& f) { return kd_loss(f.out().logits, f.teacher.mean_probs, f.targets, cfg); },
                   false);
    }

    TEST_CASE("dirichlet loss through exp matches central differences") {
        check_loss("dirichlet",
                   [](const Fixture& f) { return dirichlet_edd_loss(exp(f.out().logits), f.teacher.member_probs); },
                   false);
    }

    TEST_CASE("laplace logit loss on a random model matches central differences away from kinks") {
        check_loss("laplace",
                   [](const Fixture& f) {
                       const auto o = f.out();
                       return laplace_edd_loss(o.logits, exp(o.log_scale), f.teacher.member_logits);
                   },
                   true);
    }

    TEST_CASE("gaussian logit loss matches central differences") {
        check_loss("gaussian",
                   [](const Fixture& f) {
                       const auto o = f.out();
                       return gaussian_edd_loss(o.logits, exp(o.log_scale), f.teacher.member_logits);
                   },
                   false);
    }

    TEST_CASE("combined interpolated loss matches central differences for both logit families") {
        const KDConfig kd{0.5, 0.8, 0.1};
        for (StudentFamily fam : {StudentFamily::LaplaceLogit, StudentFamily::GaussianLogit}) {
            const EDDConfig edd{0.1, fam};
            check_loss(fam == StudentFamily::LaplaceLogit ? "combined-laplace" : "combined-gaussian",
                       [&](const Fixture& f) {
                           const auto o = f.out();
                           return combined_ledd_loss(o.logits, exp(o.log_scale), f.teacher, f.targets, kd, edd);
                       },
                       fam == StudentFamily::LaplaceLogit);
        }
    }
}

TEST_SUITE("autograd") {
    TEST_CASE("every primitive op agrees with central differences") {
        RngStream rng(3);
        Var a(random_tensor({3, 4}, rng), true), b(random_tensor({4, 5}, rng), true), c(random_tensor({2, 4}, rng), true),
            row(random_tensor({1, 5}, rng), true), table(random_tensor({6, 5}, rng), true);
        std::vector<Parameter> params{{"a", a}, {"b", b}, {"c", c}, {"row", row}, {"table", table}};
        const std::vector<int> ids{4, 0, 4};
        auto loss = [&] {
            Var h = tanh(add_row(matmul(a, b), row));                  // 3x5
            Var s = softmax_rows(sub(h, gather_rows(table, ids)));     // 3x5
            Var g = sigmoid(matmul_nt(c, a));                          // 2x3
            Var stacked_rows[2] = {scale(h, 0.5), mul(s, exp(scale(h, 0.3)))};
            Var wide = concat_cols(stack_rows(stacked_rows), stack_rows(stacked_rows)); // 6x10
            return add(sum(mul(wide, wide)), sum(g));
        };
        const auto r = grad_check(params, loss, 80, RngStream(4));
        INFO("worst " << r.worst);
        CHECK(r.checked == 80);
        CHECK(r.max_rel_error < kTol);
    }

    TEST_CASE("sum of parameters has unit gradient everywhere") {
        RngStream rng(5);
        Var p(random_tensor({3, 3}, rng), true);
        backward(sum(p));
        for (double g : p.grad().values()) CHECK(g == 1.0);
    }

    TEST_CASE("half squared norm has gradient equal to the parameter") {
        RngStream rng(6);
        Var p(random_tensor({2, 5}, rng), true);
        backward(scale(sum(mul(p, p)), 0.5));
        for (std::size_t i = 0; i < p.value().numel(); ++i) CHECK(p.grad()[i] == doctest::Approx(p.value()[i]).epsilon(1e-15));
    }

    TEST_CASE("backward on a non-scalar is rejected") {
        Var p(Tensor::matrix(2, 2, 1.0), true);
        CHECK_THROWS(backward(mul(p, p)));
    }

    TEST_CASE("sequence model nll gradient matches central differences") {
        SeqModelConfig c;
        c.vocab = 12;
        c.d_model = 6;
        c.hidden = 7;
        TinySeqModel model(c, RngStream(8));
        const std::vector<int> src{3, 7, 9, 1}, tgt{5, 4, 10, 1};
        auto loss = [&] { return nll_loss(model.forward_seq(src, tgt).logits, tgt, 0.1); };
        const auto r = grad_check(model.parameters(), loss, 100, RngStream(9));
        INFO("worst " << r.worst);
        CHECK(r.max_rel_error < kTol);
    }
}

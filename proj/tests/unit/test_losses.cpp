#include "oracles.hpp"

#include "eddkit/errors.hpp"
#include "eddkit/losses.hpp"

#include <doctest.h>

#include <cmath>
#include <numeric>

using namespace edd;
using namespace edd::testing;

namespace {

// Tempered KL(t || p) for one row, written from the definitions.
double tempered_kl(std::span<const double> z, std::span<const double> teacher, double temp) {
    const std::size_t k = z.size();
    std::vector<double> t(k), p(k);
    double zt = 0.0, zp = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        t[i] = std::pow(teacher[i], 1.0 / temp);
        p[i] = std::exp(z[i] / temp);
        zt += t[i];
        zp += p[i];
    }
    double kl = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        const double ti = t[i] / zt, pi = p[i] / zp;
        if (ti > 0) kl += ti * std::log(ti / pi);
    }
    return kl;
}

double log_sum_exp(std::span<const double> z) {
    double m = z[0];
    for (double v : z) m = std::max(m, v);
    double s = 0.0;
    for (double v : z) s += std::exp(v - m);
    return m + std::log(s);
}

Tensor logits_of(std::initializer_list<double> probs) {
    std::vector<double> z;
    for (double p : probs) z.push_back(std::log(p));
    return Tensor({1, z.size()}, z);
}

} // namespace

TEST_SUITE("closed-form") {
    TEST_CASE("smoothed nll matches a re-summation") {
        RngStream rng(1);
        for (int trial = 0; trial < 5; ++trial) {
            const Tensor z = random_tensor({7, 5}, rng, 2.0);
            std::vector<int> y;
            for (int i = 0; i < 7; ++i) y.push_back(static_cast<int>(rng.uniform_int(5)));
            CHECK(nll_loss_value(z, y, 0.1) == doctest::Approx(nll_oracle(z, y, 0.1)).epsilon(1e-6));
            CHECK(nll_loss(Var(z), y, 0.1).value()[0] == doctest::Approx(nll_oracle(z, y, 0.1)).epsilon(1e-6));
        }
    }

    TEST_CASE("two-class kl by hand") {
        const Tensor z = logits_of({0.6, 0.4});
        const Tensor t({1, 2}, {0.8, 0.2});
        const double want = 0.8 * std::log(0.8 / 0.6) + 0.2 * std::log(0.2 / 0.4);
        CHECK(want == doctest::Approx(0.0915).epsilon(1e-3));
        CHECK(kl_term_value(z, t, 1.0) == doctest::Approx(want).epsilon(1e-12));
        const std::vector<int> y{0};
        CHECK(kd_loss_value(z, t, y, KDConfig{0.0, 1.0, 0.0}).total == doctest::Approx(want).epsilon(1e-12));
    }

    TEST_CASE("flat dirichlet against uniform members") {
        const Tensor alpha({1, 3}, {1, 1, 1});
        const Tensor members({1, 4, 3}, std::vector<double>(12, 1.0 / 3));
        const double want = (-std::log(2.0) + 3 * std::log(3.0)) / 3;
        CHECK(want == doctest::Approx(0.8676).epsilon(1e-4));
        CHECK(dirichlet_edd_loss_value(alpha, members) == doctest::Approx(want).epsilon(1e-7));
    }

    TEST_CASE("laplace logit loss at two scales out") {
        const Tensor mu({2, 2}, 0.0), sigma({2, 2}, 2.0);
        const Tensor z({2, 3, 2}, {2, -2, -2, 2, 2, 2, -2, -2, 2, -2, 2, 2});
        CHECK(laplace_edd_loss_value(mu, sigma, z) == doctest::Approx(1.0 + std::log(2.0)).epsilon(1e-14));
    }

    TEST_CASE("gaussian logit loss on a three-sigma outlier") {
        const Tensor mu({1, 1}, 0.0), sigma({1, 1}, 1.0), z({1, 1, 1}, {3.0});
        CHECK(gaussian_edd_loss_value(mu, sigma, z) == doctest::Approx(4.5).epsilon(1e-14));
        CHECK(laplace_edd_loss_value(mu, sigma, z) == doctest::Approx(3.0).epsilon(1e-14));
    }

    TEST_CASE("softmax of normalised logits equals softmax") {
        RngStream rng(2);
        const Tensor z = random_tensor({10, 6}, rng, 4.0);
        const Tensor a = softmax(normalize_logits(z)), b = softmax(z);
        for (std::size_t r = 0; r < 10; ++r) {
            double s = 0.0;
            for (std::size_t k = 0; k < 6; ++k) s += std::exp(z.at(r, k));
            for (std::size_t k = 0; k < 6; ++k) {
                CHECK(std::abs(a.at(r, k) - b.at(r, k)) < 1e-7);
                CHECK(std::abs(b.at(r, k) - std::exp(z.at(r, k)) / s) < 1e-12);
            }
        }
    }

    TEST_CASE("interpolated loss equals its parts summed by hand") {
        RngStream rng(3);
        const Tensor mu = random_tensor({4, 5}, rng);
        Tensor sigma = random_tensor({4, 5}, rng, 0.3);
        for (double& v : sigma.values()) v = std::exp(v);
        const TeacherRows teacher = make_teacher_rows(random_tensor({4, 3, 5}, rng, 2.0));
        const std::vector<int> y{0, 4, 2, 2};
        const KDConfig kd{0.5, 0.8, 0.1};
        const EDDConfig edd{0.1, StudentFamily::LaplaceLogit};

        double kl = 0.0, lap = 0.0;
        for (std::size_t r = 0; r < 4; ++r) {
            kl += tempered_kl(mu.row_span(r), teacher.mean_probs.row_span(r), 0.8) / 4;
            for (std::size_t m = 0; m < 3; ++m)
                for (std::size_t k = 0; k < 5; ++k) {
                    const double z = teacher.member_logits[(r * 3 + m) * 5 + k];
                    lap += (std::abs(z - mu.at(r, k)) / sigma.at(r, k) + std::log(sigma.at(r, k))) / (4 * 3 * 5);
                }
        }
        const double want = 0.5 * nll_oracle(mu, y, 0.1) + 0.5 * kl + 0.1 * lap;
        const auto parts = combined_ledd_loss_value(mu, sigma, teacher, y, kd, edd);
        CHECK(std::abs(parts.total - want) < 1e-7);
        CHECK(std::abs(combined_ledd_loss(Var(mu), Var(sigma), teacher, y, kd, edd).value()[0] - want) < 1e-7);
    }
}

TEST_SUITE("uncertainty-algebra") {
    TEST_CASE("adding a constant to any member's logits leaves logit losses unchanged") {
        RngStream rng(4);
        const Tensor raw = random_tensor({3, 4, 6}, rng, 2.0);
        Tensor shifted = raw;
        for (std::size_t r = 0; r < 3; ++r)
            for (std::size_t m = 0; m < 4; ++m) {
                const double c = rng.uniform(-20.0, 20.0);
                for (std::size_t k = 0; k < 6; ++k) shifted[(r * 4 + m) * 6 + k] += c;
            }
        const TeacherRows a = make_teacher_rows(raw), b = make_teacher_rows(shifted);
        for (std::size_t i = 0; i < raw.numel(); ++i) CHECK(std::abs(a.member_logits[i] - b.member_logits[i]) < 1e-5);
        const Tensor mu = random_tensor({3, 6}, rng);
        const Tensor sigma({3, 6}, 0.7);
        CHECK(std::abs(laplace_edd_loss_value(mu, sigma, a.member_logits) -
                       laplace_edd_loss_value(mu, sigma, b.member_logits)) < 1e-5);
        CHECK(std::abs(gaussian_edd_loss_value(mu, sigma, a.member_logits) -
                       gaussian_edd_loss_value(mu, sigma, b.member_logits)) < 1e-5);
        const std::vector<int> y{1, 2, 3};
        const KDConfig kd;
        const EDDConfig edd;
        CHECK(std::abs(combined_ledd_loss_value(mu, sigma, a, y, kd, edd).total -
                       combined_ledd_loss_value(mu, sigma, b, y, kd, edd).total) < 1e-5);
    }
}

TEST_SUITE("reductions") {
    TEST_CASE("kd with lambda one is plain nll") {
        RngStream rng(5);
        const Tensor z = random_tensor({5, 4}, rng, 2.0);
        const Tensor t = random_probs(5, 4, rng);
        const std::vector<int> y{0, 1, 2, 3, 0};
        CHECK(kd_loss_value(z, t, y, KDConfig{1.0, 0.8, 0.1}).total == nll_loss_value(z, y, 0.1));
        CHECK(kd_loss(Var(z), t, y, KDConfig{1.0, 0.8, 0.1}).value()[0] == nll_loss(Var(z), y, 0.1).value()[0]);
    }

    TEST_CASE("interpolated loss with beta zero is kd") {
        RngStream rng(6);
        const Tensor mu = random_tensor({3, 4}, rng);
        const Tensor sigma({3, 4}, 1.3);
        const TeacherRows teacher = make_teacher_rows(random_tensor({3, 2, 4}, rng));
        const std::vector<int> y{3, 1, 0};
        const KDConfig kd{0.3, 0.8, 0.1};
        CHECK(combined_ledd_loss_value(mu, sigma, teacher, y, kd, EDDConfig{0.0, StudentFamily::LaplaceLogit}).total ==
              kd_loss_value(mu, teacher.mean_probs, y, kd).total);
    }
}

TEST_SUITE("losses") {
    TEST_CASE("nll extremes") {
        const Tensor sure({2, 3}, {50, 0, 0, 0, 0, 50});
        const std::vector<int> y{0, 2};
        CHECK(nll_loss_value(sure, y, 0.0) < 1e-12);
        const Tensor flat({2, 3}, 0.0);
        CHECK(nll_loss_value(flat, y, 0.0) == doctest::Approx(std::log(3.0)).epsilon(1e-14));
        const std::vector<int> bad{0, 3};
        CHECK_THROWS_AS(nll_loss_value(flat, bad, 0.0), InvalidArgument);
        CHECK_THROWS(nll_loss_value(flat, y, 1.5));
    }

    TEST_CASE("kd is zero when the student matches and lambda is zero") {
        const Tensor z = logits_of({0.2, 0.5, 0.3});
        const Tensor t({1, 3}, {0.2, 0.5, 0.3});
        const std::vector<int> y{1};
        CHECK(std::abs(kd_loss_value(z, t, y, KDConfig{0.0, 0.8, 0.1}).total) < 1e-12);
        CHECK_THROWS(KDConfig{1.5, 1.0, 0.1}.validate());
        CHECK_THROWS(KDConfig{0.5, 0.0, 0.1}.validate());
    }

    TEST_CASE("kl term never goes negative") {
        RngStream rng(7);
        for (int i = 0; i < 200; ++i) {
            const Tensor z = random_tensor({1, 5}, rng, 3.0);
            const Tensor t = random_probs(1, 5, rng, 3.0);
            CHECK(kl_term_value(z, t, rng.uniform(0.5, 2.0)) >= -1e-9);
        }
    }

    TEST_CASE("dirichlet loss symmetric in classes and single-member form") {
        RngStream rng(8);
        const Tensor alpha({2, 3}, {0.5, 2.0, 1.2, 3.0, 0.7, 1.1});
        const Tensor members = random_probs(2 * 4, 3, rng).reshaped({2, 4, 3});
        Tensor pa = alpha, pm = members;
        // Cyclic class permutation applied to both.
        for (std::size_t r = 0; r < 2; ++r)
            for (std::size_t k = 0; k < 3; ++k) pa.at(r, k) = alpha.at(r, (k + 1) % 3);
        for (std::size_t i = 0; i < 8; ++i)
            for (std::size_t k = 0; k < 3; ++k) pm[i * 3 + k] = members[i * 3 + (k + 1) % 3];
        CHECK(dirichlet_edd_loss_value(alpha, members) == doctest::Approx(dirichlet_edd_loss_value(pa, pm)).epsilon(1e-12));

        const Tensor one = random_probs(2, 3, rng).reshaped({2, 1, 3});
        double want = 0.0;
        for (std::size_t r = 0; r < 2; ++r) {
            double a0 = 0.0, lb = 0.0, dot = 0.0;
            for (std::size_t k = 0; k < 3; ++k) {
                const double a = alpha.at(r, k);
                const double p = (one[r * 3 + k] + kSimplexSmoothing) / (1 + 3 * kSimplexSmoothing);
                a0 += a;
                lb += std::lgamma(a);
                dot += a * std::log(p);
            }
            want += (lb - std::lgamma(a0) - dot) / (2 * 3);
        }
        CHECK(dirichlet_edd_loss_value(alpha, one) == doctest::Approx(want).epsilon(1e-12));
    }

    TEST_CASE("logit losses at the trivial points") {
        const Tensor mu({2, 3}, 0.5), sigma1({2, 3}, 1.0);
        const Tensor at_mu({2, 2, 3}, 0.5);
        CHECK(laplace_edd_loss_value(mu, sigma1, at_mu) == 0.0);
        CHECK(gaussian_edd_loss_value(mu, sigma1, at_mu) == 0.0);
        Tensor off = at_mu;
        for (std::size_t i = 0; i < off.numel(); ++i) off[i] += (i % 2 ? 1.0 : -1.0);
        CHECK(laplace_edd_loss_value(mu, sigma1, off) == doctest::Approx(1.0).epsilon(1e-15));
        CHECK(gaussian_edd_loss_value(mu, sigma1, off) == doctest::Approx(0.5).epsilon(1e-15));
        const Tensor bad_sigma({2, 3}, 0.0);
        CHECK_THROWS_AS(laplace_edd_loss_value(mu, bad_sigma, at_mu), InvalidArgument);
        CHECK_THROWS(laplace_edd_loss_value(mu, sigma1, Tensor({2, 2, 4}, 0.0)));
    }

    TEST_CASE("normalisation of a flat pair and idempotence") {
        const Tensor z = normalize_logits(Tensor({1, 2}, 0.0));
        CHECK(z[0] == doctest::Approx(-std::log(2.0)).epsilon(1e-15));
        CHECK(z[1] == doctest::Approx(-std::log(2.0)).epsilon(1e-15));
        RngStream rng(9);
        const Tensor r = normalize_logits(random_tensor({6, 7}, rng, 5.0));
        const Tensor rr = normalize_logits(r);
        for (std::size_t i = 0; i < r.numel(); ++i) CHECK(std::abs(r[i] - rr[i]) < 1e-7);
        for (std::size_t row = 0; row < 6; ++row) CHECK(std::abs(log_sum_exp(r.row_span(row))) < 1e-12);
    }

    TEST_CASE("interpolated loss is linear in beta") {
        const Tensor mu = logits_of({0.1, 0.6, 0.3});
        const Tensor sigma({1, 3}, 1.0);
        // Members at mu +/- 1 so the logit term is exactly one.
        Tensor raw({1, 2, 3});
        for (std::size_t k = 0; k < 3; ++k) {
            raw[k] = mu[k] + 1.0;
            raw[3 + k] = mu[k] - 1.0;
        }
        TeacherRows teacher = make_teacher_rows(raw);
        teacher.member_logits = raw; // bypass renormalisation to pin the term
        teacher.mean_probs = Tensor({1, 3}, {0.1, 0.6, 0.3});
        const std::vector<int> y{1};
        const auto p = combined_ledd_loss_value(mu, sigma, teacher, y, KDConfig{0.0, 1.0, 0.1},
                                                EDDConfig{0.1, StudentFamily::LaplaceLogit});
        CHECK(std::abs(p.edd - 1.0) < 1e-12);
        CHECK(std::abs(p.total - 0.1) < 1e-12);
    }

    TEST_CASE("teacher rows are normalised and aligned") {
        RngStream rng(10);
        const Tensor raw = random_tensor({4, 3, 5}, rng, 3.0);
        const TeacherRows t = make_teacher_rows(raw);
        for (std::size_t row = 0; row < 12; ++row) {
            const std::span<const double> z(t.member_logits.values().data() + row * 5, 5);
            CHECK(std::abs(log_sum_exp(z)) < 1e-5);
            double s = 0.0;
            for (std::size_t k = 0; k < 5; ++k) s += t.member_probs[row * 5 + k];
            CHECK(std::abs(s - 1.0) < 1e-6);
        }
        for (std::size_t r = 0; r < 4; ++r)
            for (std::size_t k = 0; k < 5; ++k) {
                double m = 0.0;
                for (std::size_t mm = 0; mm < 3; ++mm) m += t.member_probs[(r * 3 + mm) * 5 + k] / 3;
                CHECK(std::abs(t.mean_probs.at(r, k) - m) < 1e-12);
            }
    }

    TEST_CASE("row weights default to one over length") {
        RngStream rng(11);
        const Tensor z = random_tensor({4, 3}, rng);
        const std::vector<int> y{0, 1, 2, 0};
        const std::vector<double> w(4, 0.25), w2(4, 0.5);
        CHECK(nll_loss_value(z, y, 0.1, w) == doctest::Approx(nll_loss_value(z, y, 0.1)).epsilon(1e-15));
        CHECK(nll_loss_value(z, y, 0.1, w2) == doctest::Approx(2 * nll_loss_value(z, y, 0.1)).epsilon(1e-15));
    }

    TEST_CASE("one small step on a fixed batch lowers every loss") {
        int failures = 0;
        for (std::uint64_t trial = 0; trial < 20; ++trial) {
            RngStream rng(100 + trial);
            Var mu(random_tensor({3, 4}, rng), true), ls(random_tensor({3, 4}, rng, 0.2), true);
            const TeacherRows t = make_teacher_rows(random_tensor({3, 2, 4}, rng, 2.0));
            const std::vector<int> y{0, 1, 3};
            std::vector<std::function<Var()>> losses{
                [&] { return nll_loss(mu, y, 0.1); },
                [&] { return kd_loss(mu, t.mean_probs, y, KDConfig{}); },
                [&] { return dirichlet_edd_loss(exp(mu), t.member_probs); },
                [&] { return laplace_edd_loss(mu, exp(ls), t.member_logits); },
                [&] { return gaussian_edd_loss(mu, exp(ls), t.member_logits); },
                [&] { return combined_ledd_loss(mu, exp(ls), t, y, KDConfig{}, EDDConfig{}); }};
            for (const auto& f : losses) {
                const Tensor m0 = mu.value(), l0 = ls.value();
                Var before = f();
                CHECK(std::isfinite(before.value()[0]));
                backward(before);
                // Losses that ignore the scale never allocate its gradient.
                const bool has_ls = ls.grad().numel() == l0.numel();
                for (std::size_t i = 0; i < m0.numel(); ++i) {
                    mu.mutable_value()[i] -= 1e-4 * mu.grad()[i];
                    if (has_ls) ls.mutable_value()[i] -= 1e-4 * ls.grad()[i];
                }
                mu.mutable_grad().fill(0.0);
                if (has_ls) ls.mutable_grad().fill(0.0);
                if (!(f().value()[0] < before.value()[0])) ++failures;
                mu.mutable_value() = m0;
                ls.mutable_value() = l0;
            }
        }
        CHECK(failures <= 1);
    }

    TEST_CASE("dirichlet gradients dwarf laplace ones for a confident teacher") {
        // The 10x ratio is a diagnostic only; the hard check is the ordering.
        const std::size_t k = 120;
        RngStream rng(12);
        Tensor raw({1, 3, k});
        for (std::size_t m = 0; m < 3; ++m)
            for (std::size_t j = 0; j < k; ++j) raw[m * k + j] = j == 0 ? 12.0 : rng.normal() * 0.1;
        const TeacherRows t = make_teacher_rows(raw);
        CHECK(t.mean_probs[0] >= 0.999);
        Var pre(random_tensor({1, k}, rng, 0.1), true), mu(random_tensor({1, k}, rng, 0.1), true);
        backward(dirichlet_edd_loss(exp(pre), t.member_probs));
        backward(laplace_edd_loss(mu, constant(Tensor({1, k}, 1.0)), t.member_logits));
        double gd = 0.0, gl = 0.0;
        for (double g : pre.grad().values()) gd += g * g;
        for (double g : mu.grad().values()) gl += g * g;
        MESSAGE("dirichlet/laplace gradient norm ratio " << std::sqrt(gd / gl));
        WARN(std::sqrt(gd) >= 10 * std::sqrt(gl));
        CHECK(gd > gl);
    }

    TEST_CASE("family names round trip") {
        for (StudentFamily f :
             {StudentFamily::Kd, StudentFamily::Dirichlet, StudentFamily::GaussianLogit, StudentFamily::LaplaceLogit})
            CHECK(student_family_from_string(to_string(f)) == f);
        CHECK_THROWS(student_family_from_string("beta"));
        CHECK_THROWS(EDDConfig{-0.1, StudentFamily::LaplaceLogit}.validate());
    }
}

#include <doctest.h>

#include <cmath>

#include "mixing.hpp"
#include "test_util.hpp"

using namespace dhm;
namespace mx = dhm::mixing;
using test::gradcheck;
using test::random_tensor;

namespace {

mx::MixingConfig small_config(mx::Variant v, int tile = 16) {
    mx::MixingConfig c;
    c.variant = v;
    c.latent_dim = 6;
    c.tile_size = tile;
    c.sd_dim = 4;
    c.base_channels = 4;
    c.batch = 2;
    c.steps = 2;
    c.seed = 99;
    return c;
}

// Plain-loop perceptual oracle, independent of the tape: runs the frozen
// convs by hand, unit-normalizes channels and sums the scaled L2 distances.
double lpips_oracle(const mx::MixingModel& m, const Tensor& a, const Tensor& b) {
    auto conv_fwd = [](const Tensor& x, const nn::Param& w, const nn::Param& bias) {
        int c_in = x.dim(1), h = x.dim(2), wid = x.dim(3);
        int oc = w.value.dim(0), k = w.value.dim(2);
        int oh = (h + 2 - k) / 2 + 1, ow = (wid + 2 - k) / 2 + 1;
        Tensor y({x.dim(0), oc, oh, ow});
        for (int n = 0; n < x.dim(0); ++n)
            for (int o = 0; o < oc; ++o)
                for (int yy = 0; yy < oh; ++yy)
                    for (int xx = 0; xx < ow; ++xx) {
                        double s = bias.value[o];
                        for (int ci = 0; ci < c_in; ++ci)
                            for (int ky = 0; ky < k; ++ky)
                                for (int kx = 0; kx < k; ++kx) {
                                    int iy = yy * 2 - 1 + ky, ix = xx * 2 - 1 + kx;
                                    if (iy < 0 || iy >= h || ix < 0 || ix >= wid) continue;
                                    s += w.value[((static_cast<std::int64_t>(o) * c_in + ci) * k + ky) * k + kx] *
                                         x[((static_cast<std::int64_t>(n) * c_in + ci) * h + iy) * wid + ix];
                                }
                        double v = s > 0 ? s : 0.2 * s;
                        y[((static_cast<std::int64_t>(n) * oc + o) * oh + yy) * ow + xx] = v;
                    }
        return y;
    };
    auto normalize = [](const Tensor& x) {
        Tensor y = x;
        int c = x.dim(1), hw = x.dim(2) * x.dim(3);
        for (int n = 0; n < x.dim(0); ++n)
            for (int p = 0; p < hw; ++p) {
                double s = 1e-10;
                for (int ch = 0; ch < c; ++ch) {
                    double v = x[(static_cast<std::int64_t>(n) * c + ch) * hw + p];
                    s += v * v;
                }
                double inv = 1.0 / std::sqrt(s);
                for (int ch = 0; ch < c; ++ch)
                    y[(static_cast<std::int64_t>(n) * c + ch) * hw + p] =
                        x[(static_cast<std::int64_t>(n) * c + ch) * hw + p] * inv;
            }
        return y;
    };
    Tensor fa = a, fb = b;
    double total = 0.0;
    for (const auto& conv : m.extractor.convs) {
        fa = conv_fwd(fa, *conv.w, *conv.b);
        fb = conv_fwd(fb, *conv.w, *conv.b);
        Tensor na = normalize(fa), nb = normalize(fb);
        double d = 0.0;
        for (std::int64_t i = 0; i < na.numel(); ++i) {
            double t = na[i] - nb[i];
            d += t * t;
        }
        total += d / (fa.dim(2) * fa.dim(3));
    }
    return total;
}

}  // namespace

TEST_CASE("reconstruction loss: zero, single-pixel, elementwise oracle") {
    Tensor a({1, 3, 2, 2});
    Tensor b = a;
    CHECK(mx::loss_rec(a, b) == 0.0);
    b[0] = 0.5;
    CHECK(mx::loss_rec(a, b) == doctest::Approx(0.5).epsilon(1e-15));

    Rng rng(1);
    Tensor x = random_tensor({2, 3, 4, 4}, rng);
    Tensor y = random_tensor({2, 3, 4, 4}, rng);
    double expect = 0.0;
    for (std::int64_t i = 0; i < x.numel(); ++i) expect += std::fabs(x[i] - y[i]);
    CHECK(mx::loss_rec(x, y) == doctest::Approx(expect).epsilon(1e-14));
    CHECK_THROWS_AS(mx::loss_rec(x, Tensor({1, 3, 4, 4})), Error);
}

TEST_CASE("supervision loss: zero, weighted example, oracle") {
    CHECK(mx::loss_sup({1.0, 2.0}, {1.0, 2.0}, 3.0) == 0.0);
    CHECK(mx::loss_sup({1.0, 0.0}, {0.0, 1.0}, 2.0) == doctest::Approx(4.0));
    Rng rng(2);
    std::vector<double> x(6), y(6);
    for (int i = 0; i < 6; ++i) {
        x[static_cast<std::size_t>(i)] = rng.normal();
        y[static_cast<std::size_t>(i)] = rng.normal();
    }
    double expect = 0.0;
    for (int i = 0; i < 6; ++i)
        expect += std::fabs(x[static_cast<std::size_t>(i)] - y[static_cast<std::size_t>(i)]);
    CHECK(mx::loss_sup(x, y, 1.7) == doctest::Approx(1.7 * expect).epsilon(1e-14));
}

TEST_CASE("kl loss: identity case, plug-in values, positivity") {
    CHECK(mx::loss_kl({0.0}, {0.0}) == doctest::Approx(0.0));
    CHECK(mx::loss_kl({1.0}, {0.0}) == doctest::Approx(0.5));
    // mean 0, sigma^2 = e  ->  (e - 2) / 2
    CHECK(mx::loss_kl({0.0}, {1.0}) ==
          doctest::Approx(0.5 * (std::exp(1.0) - 2.0)).epsilon(1e-12));
    Rng rng(3);
    for (int rep = 0; rep < 50; ++rep) {
        std::vector<double> mean(4), logvar(4);
        for (int i = 0; i < 4; ++i) {
            mean[static_cast<std::size_t>(i)] = rng.normal();
            logvar[static_cast<std::size_t>(i)] = rng.normal();
        }
        CHECK(mx::loss_kl(mean, logvar) >= 0.0);
    }
    // zero exactly at the standard normal
    CHECK(mx::loss_kl({0.0, 0.0, 0.0}, {0.0, 0.0, 0.0}) == 0.0);
    CHECK(mx::loss_kl({1e-3, 0.0}, {0.0, 0.0}) > 0.0);
}

TEST_CASE("gan losses: pinned examples and oracles") {
    CHECK(mx::loss_gan_g({0.0, 0.0}) == 0.0);
    CHECK(mx::loss_gan_g({1.0, 2.0}) == doctest::Approx(-3.0));
    CHECK(mx::loss_gan_d({0.0, 0.0, 0.0}, {0.0, 0.0, 0.0}) == doctest::Approx(6.0));
    CHECK(mx::loss_gan_d({-1.0}, {1.0}) == doctest::Approx(0.0));
    Rng rng(4);
    std::vector<double> real(5), fake(5);
    for (int i = 0; i < 5; ++i) {
        real[static_cast<std::size_t>(i)] = rng.normal();
        fake[static_cast<std::size_t>(i)] = rng.normal();
    }
    double g = 0.0, d = 0.0;
    for (int i = 0; i < 5; ++i) {
        g -= fake[static_cast<std::size_t>(i)];
        d += std::max(0.0, 1.0 + real[static_cast<std::size_t>(i)]) +
             std::max(0.0, 1.0 - fake[static_cast<std::size_t>(i)]);
    }
    CHECK(mx::loss_gan_g(fake) == doctest::Approx(g).epsilon(1e-14));
    CHECK(mx::loss_gan_d(real, fake) == doctest::Approx(d).epsilon(1e-14));
}

TEST_CASE("perceptual loss: zero, symmetry, independent oracle") {
    auto m = mx::make_mixing_model(small_config(mx::Variant::sae_gen_small));
    Rng rng(5);
    Tensor a = random_tensor({1, 3, 16, 16}, rng, 0.3);
    for (double& v : a.data) v = 0.5 + 0.4 * std::tanh(v);
    Tensor b = a;
    CHECK(mx::loss_perceptual(*m, a, b) == doctest::Approx(0.0));
    b = random_tensor({1, 3, 16, 16}, rng, 0.3);
    for (double& v : b.data) v = 0.5 + 0.4 * std::tanh(v);
    double ab = mx::loss_perceptual(*m, a, b);
    double ba = mx::loss_perceptual(*m, b, a);
    CHECK(ab == doctest::Approx(ba).epsilon(1e-12));
    CHECK(ab > 0.0);
    CHECK(ab == doctest::Approx(lpips_oracle(*m, a, b)).epsilon(1e-9));
}

TEST_CASE("adaptive alpha: ratio, clamp, derived value, validation") {
    CHECK(mx::adaptive_alpha(1.0, 1.0, 1e-6) == doctest::Approx(1.0).epsilon(1e-5));
    CHECK(mx::adaptive_alpha(1.0, 0.0, 1e-6) == doctest::Approx(1e4));
    CHECK(mx::adaptive_alpha(0.3, 0.6, 1e-6) ==
          doctest::Approx(0.3 / 0.600001).epsilon(1e-12));
    CHECK_THROWS_AS(mx::adaptive_alpha(-0.1, 1.0, 1e-6), Error);
    CHECK_THROWS_AS(mx::adaptive_alpha(0.1, -1.0, 1e-6), Error);
}

TEST_CASE("loss gradients match central finite differences") {
    Rng rng(6);

    // L_rec wrt the reconstruction, away from the |.| kink
    for (int rep = 0; rep < 3; ++rep) {
        Tensor img = random_tensor({1, 2, 3, 3}, rng);
        Tensor rec = random_tensor({1, 2, 3, 3}, rng);
        for (std::int64_t i = 0; i < img.numel(); ++i)
            if (std::fabs(img[i] - rec[i]) < 1e-2) rec[i] += 0.05;
        gradcheck({rec}, [&](ad::Graph& g, const std::vector<int>& in) {
            int iimg = g.input(img);
            return mx::loss_rec_graph(g, iimg, in[0]);
        }, 1e-4);
    }

    // L_KL wrt mean and log-variance
    for (int rep = 0; rep < 3; ++rep) {
        Tensor mean = random_tensor({2, 4}, rng);
        Tensor logvar = random_tensor({2, 4}, rng, 0.5);
        gradcheck({mean, logvar}, [](ad::Graph& g, const std::vector<int>& in) {
            return mx::loss_kl_graph(g, in[0], in[1]);
        }, 1e-5);
    }

    // L_lpips wrt the reconstruction, through the frozen extractor
    auto m = mx::make_mixing_model(small_config(mx::Variant::sae_gen_small));
    Tensor img = random_tensor({1, 3, 16, 16}, rng, 0.2);
    Tensor rec = random_tensor({1, 3, 16, 16}, rng, 0.2);
    gradcheck({rec}, [&](ad::Graph& g, const std::vector<int>& in) {
        nn::Binder bind(g);
        int iimg = g.input(img);
        return mx::loss_lpips_graph(*m, g, bind, iimg, in[0]);
    }, 1e-4, 1e-5);

    // GAN losses wrt scores, away from hinge kinks
    Tensor scores = random_tensor({4, 1}, rng);
    for (double& v : scores.data)
        if (std::fabs(std::fabs(v) - 1.0) < 1e-2) v += 0.05;
    gradcheck({scores}, [](ad::Graph& g, const std::vector<int>& in) {
        return mx::loss_gan_g_graph(g, in[0]);
    });
    Tensor fake = random_tensor({4, 1}, rng);
    for (double& v : fake.data)
        if (std::fabs(std::fabs(v) - 1.0) < 1e-2) v += 0.05;
    gradcheck({scores, fake}, [](ad::Graph& g, const std::vector<int>& in) {
        return mx::loss_gan_d_graph(g, in[0], in[1]);
    });
}

TEST_CASE("composite loss is exactly linear in lambda") {
    Rng rng(7);
    for (auto variant : {mx::Variant::sae_basic, mx::Variant::sae_gen_small}) {
        for (double lambda : {0.0, 0.3, 0.7, 1.0}) {
            auto cfg = small_config(variant);
            cfg.lambda = lambda;
            auto m = mx::make_mixing_model(cfg);
            mx::Batch batch;
            batch.images = random_tensor({2, 3, 16, 16}, rng, 0.2);
            for (double& v : batch.images.data) v = 0.5 + 0.4 * std::tanh(v);
            batch.x = {{0.1, -0.2, 0.3, 0.0}, {-0.5, 0.4, 0.0, 0.2}};
            if (mx::variant_variational(variant))
                batch.noise = random_tensor({2, cfg.latent_dim}, rng);
            auto b = mx::total_loss(*m, batch);

            double ae_part, sup_part = b.alpha_sup * b.sup_core;
            if (variant == mx::Variant::sae_basic) {
                ae_part = b.rec;
            } else {
                ae_part = cfg.alpha_rec * b.rec + cfg.alpha_lpips * b.lpips +
                          b.alpha_gan_g * b.gan_g + cfg.alpha_kl * b.kl;
            }
            double expect = (1.0 - lambda) * ae_part + lambda * sup_part;
            CHECK(b.total ==
                  doctest::Approx(expect).epsilon(1e-12));
            if (lambda == 0.0) CHECK(b.total == doctest::Approx(ae_part).epsilon(1e-12));
            if (lambda == 1.0) CHECK(b.total == doctest::Approx(sup_part).epsilon(1e-12));
        }
    }
}

TEST_CASE("plain autoencoder composite is the reconstruction loss") {
    Rng rng(8);
    auto m = mx::make_mixing_model(small_config(mx::Variant::ae));
    mx::Batch batch;
    batch.images = random_tensor({2, 3, 16, 16}, rng, 0.2);
    for (double& v : batch.images.data) v = 0.5 + 0.4 * std::tanh(v);
    batch.x = {{0.0, 0.0, 0.0, 0.0}, {0.0, 0.0, 0.0, 0.0}};
    auto b = mx::total_loss(*m, batch);
    CHECK(b.total == b.rec);
    CHECK(b.sup == 0.0);
}

TEST_CASE("total_loss rejects variants without a training objective") {
    auto cfg = small_config(mx::Variant::sd_only);
    CHECK_THROWS_AS(mx::make_mixing_model(cfg), Error);
}

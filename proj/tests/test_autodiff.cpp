#include <doctest.h>

#include "autodiff.hpp"
#include "nn.hpp"
#include "test_util.hpp"

using namespace dhm;
using test::gradcheck;
using test::random_tensor;

TEST_CASE("elementwise op gradients match finite differences") {
    Rng rng(11);
    for (int rep = 0; rep < 3; ++rep) {
        Tensor a = random_tensor({3, 4}, rng);
        Tensor b = random_tensor({3, 4}, rng);
        gradcheck({a, b}, [](ad::Graph& g, const std::vector<int>& in) {
            int s = ad::mul(g, ad::add(g, in[0], in[1]), ad::sub(g, in[0], in[1]));
            return ad::sum(g, ad::tanh_op(g, s));
        });
        gradcheck({a}, [](ad::Graph& g, const std::vector<int>& in) {
            return ad::sum(g, ad::sigmoid(g, ad::scale(g, in[0], 1.7)));
        });
        gradcheck({a}, [](ad::Graph& g, const std::vector<int>& in) {
            return ad::sum_sq(g, ad::exp_op(g, ad::scale(g, in[0], 0.3)));
        });
        // keep log's argument positive
        Tensor c = random_tensor({2, 5}, rng);
        for (double& v : c.data) v = 0.5 + std::fabs(v);
        gradcheck({c}, [](ad::Graph& g, const std::vector<int>& in) {
            return ad::sum(g, ad::log_op(g, in[0]));
        });
    }
}

TEST_CASE("kinked ops use one-sided slopes away from the kink") {
    Rng rng(12);
    Tensor a = random_tensor({4, 4}, rng);
    for (double& v : a.data)
        if (std::fabs(v) < 1e-2) v += 0.1;  // step over the kink
    gradcheck({a}, [](ad::Graph& g, const std::vector<int>& in) {
        return ad::sum(g, ad::relu(g, in[0]));
    });
    gradcheck({a}, [](ad::Graph& g, const std::vector<int>& in) {
        return ad::sum(g, ad::leaky_relu(g, in[0], 0.2));
    });
    gradcheck({a}, [](ad::Graph& g, const std::vector<int>& in) {
        return ad::sum_abs(g, in[0]);
    });
}

TEST_CASE("matmul and bias gradients") {
    Rng rng(13);
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({4, 2}, rng);
    Tensor bias = random_tensor({2}, rng);
    gradcheck({a, b, bias}, [](ad::Graph& g, const std::vector<int>& in) {
        return ad::sum_sq(g, ad::add_row_bias(g, ad::matmul(g, in[0], in[1]), in[2]));
    });
}

TEST_CASE("slice and concat gradients") {
    Rng rng(14);
    Tensor a = random_tensor({3, 6}, rng);
    Tensor b = random_tensor({3, 2}, rng);
    gradcheck({a, b}, [](ad::Graph& g, const std::vector<int>& in) {
        int left = ad::slice_cols(g, in[0], 0, 3);
        int right = ad::slice_cols(g, in[0], 3, 6);
        int cat = ad::concat_cols(g, ad::mul(g, left, right), in[1]);
        return ad::sum_sq(g, cat);
    });
}

TEST_CASE("conv2d gradients (stride 1 and 2)") {
    Rng rng(15);
    for (int stride : {1, 2}) {
        Tensor x = random_tensor({2, 2, 6, 6}, rng);
        Tensor w = random_tensor({3, 2, 3, 3}, rng, 0.5);
        Tensor b = random_tensor({3}, rng, 0.1);
        gradcheck({x, w, b}, [stride](ad::Graph& g, const std::vector<int>& in) {
            return ad::sum_sq(g, ad::conv2d(g, in[0], in[1], in[2], stride, 1));
        }, 2e-6);
    }
}

TEST_CASE("upsample2x gradient") {
    Rng rng(16);
    Tensor x = random_tensor({2, 3, 4, 4}, rng);
    gradcheck({x}, [](ad::Graph& g, const std::vector<int>& in) {
        return ad::sum_sq(g, ad::upsample2x(g, in[0]));
    });
}

TEST_CASE("channel normalization gradient") {
    Rng rng(17);
    Tensor x = random_tensor({2, 4, 3, 3}, rng);
    gradcheck({x}, [](ad::Graph& g, const std::vector<int>& in) {
        return ad::sum_sq(g, ad::channel_l2_normalize(g, in[0], 1e-10));
    }, 2e-6);
}

TEST_CASE("backward can run repeatedly on one tape") {
    Rng rng(18);
    Tensor a = random_tensor({2, 2}, rng);
    ad::Graph g;
    int ia = g.input(a, true);
    int l1 = ad::sum_sq(g, ia);
    int l2 = ad::sum_abs(g, ia);
    g.backward(l1);
    Tensor g1 = g.grad(ia);
    g.backward(l2);
    Tensor g2 = g.grad(ia);
    g.backward(l1);
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        CHECK(g.grad(ia)[i] == doctest::Approx(g1[i]).epsilon(1e-14));
        CHECK(g1[i] != doctest::Approx(g2[i]).epsilon(1e-12));
    }
}

TEST_CASE("adam updates only parameters with gradients") {
    Rng rng(19);
    nn::ParamStore ps;
    nn::Param* p1 = ps.create("a", {2, 2});
    nn::Param* p2 = ps.create("b", {2, 2});
    for (double& v : p1->value.data) v = rng.normal();
    for (double& v : p2->value.data) v = rng.normal();
    Tensor before = p2->value;

    ad::Graph g;
    nn::Binder bind(g);
    int n1 = bind.node(p1);
    bind.node(p2);  // bound but unused by the loss
    int loss = ad::sum_sq(g, n1);
    g.backward(loss);
    nn::Adam opt;
    opt.step({p1, p2}, bind);
    CHECK(p2->value.data == before.data);
    bool changed = false;
    for (std::int64_t i = 0; i < p1->value.numel(); ++i)
        if (p1->value[i] != before[i]) changed = true;
    CHECK(changed);
}

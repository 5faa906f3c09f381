#include "nn.hpp"

#include <cmath>

namespace dhm::nn {

Param* ParamStore::create(const std::string& name, std::vector<int> shape) {
    require(find(name) == nullptr, ErrorCode::invalid_argument,
            "duplicate parameter name: " + name);
    auto p = std::make_unique<Param>();
    p->name = name;
    p->value = Tensor(std::move(shape));
    p->adam_m = Tensor(p->value.shape);
    p->adam_v = Tensor(p->value.shape);
    params_.push_back(std::move(p));
    return params_.back().get();
}

Param* ParamStore::find(const std::string& name) const {
    for (const auto& p : params_)
        if (p->name == name) return p.get();
    return nullptr;
}

std::int64_t ParamStore::total_size() const {
    std::int64_t n = 0;
    for (const auto& p : params_) n += p->value.numel();
    return n;
}

int Binder::node(Param* p) {
    auto it = ids_.find(p);
    if (it != ids_.end()) return it->second;
    int id = g_->input(p->value, p->trainable);
    ids_.emplace(p, id);
    return id;
}

const Tensor* Binder::grad(Param* p) const {
    auto it = ids_.find(p);
    if (it == ids_.end()) return nullptr;
    if (!g_->grad_ready(it->second)) return nullptr;  // untouched by latest backward
    return &g_->grad(it->second);
}

Conv2d Conv2d::create(ParamStore& ps, const std::string& name, int in_ch, int out_ch,
                      int k, int stride, int pad, Rng& rng) {
    Conv2d layer;
    layer.stride = stride;
    layer.pad = pad;
    layer.w = ps.create(name + ".w", {out_ch, in_ch, k, k});
    layer.b = ps.create(name + ".b", {out_ch});
    double std = std::sqrt(2.0 / (in_ch * k * k));
    for (double& v : layer.w->value.data) v = std * rng.normal();
    return layer;
}

int Conv2d::apply(ad::Graph& g, Binder& bind, int x) const {
    return ad::conv2d(g, x, bind.node(w), bind.node(b), stride, pad);
}

Dense Dense::create(ParamStore& ps, const std::string& name, int in, int out, Rng& rng) {
    Dense layer;
    layer.w = ps.create(name + ".w", {in, out});
    layer.b = ps.create(name + ".b", {out});
    double std = std::sqrt(2.0 / (in + out));
    for (double& v : layer.w->value.data) v = std * rng.normal();
    return layer;
}

int Dense::apply(ad::Graph& g, Binder& bind, int x) const {
    return ad::add_row_bias(g, ad::matmul(g, x, bind.node(w)), bind.node(b));
}

void Adam::step(const std::vector<Param*>& params, const Binder& bind) {
    ++t;
    double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (Param* p : params) {
        const Tensor* g = bind.grad(p);
        if (!g || !p->trainable) continue;
        for (std::int64_t i = 0; i < p->value.numel(); ++i) {
            double gi = (*g)[i];
            p->adam_m[i] = beta1 * p->adam_m[i] + (1.0 - beta1) * gi;
            p->adam_v[i] = beta2 * p->adam_v[i] + (1.0 - beta2) * gi * gi;
            double mhat = p->adam_m[i] / c1;
            double vhat = p->adam_v[i] / c2;
            p->value[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

}  // namespace dhm::nn

#pragma once

#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "autodiff.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace dhm::nn {

struct Param {
    std::string name;
    Tensor value;
    Tensor adam_m;
    Tensor adam_v;
    bool trainable = true;
};

class ParamStore {
public:
    Param* create(const std::string& name, std::vector<int> shape);
    Param* find(const std::string& name) const;
    const std::vector<std::unique_ptr<Param>>& all() const { return params_; }
    std::int64_t total_size() const;

private:
    std::vector<std::unique_ptr<Param>> params_;
};

// Binds parameters to graph input nodes, one node per parameter per tape.
class Binder {
public:
    explicit Binder(ad::Graph& g) : g_(&g) {}
    int node(Param* p);
    // Gradient of the most recent backward() for p, or nullptr if untouched.
    const Tensor* grad(Param* p) const;

private:
    ad::Graph* g_;
    std::unordered_map<Param*, int> ids_;
};

struct Conv2d {
    Param* w = nullptr;
    Param* b = nullptr;
    int stride = 1;
    int pad = 1;
    static Conv2d create(ParamStore& ps, const std::string& name, int in_ch, int out_ch,
                         int k, int stride, int pad, Rng& rng);
    int apply(ad::Graph& g, Binder& bind, int x) const;
};

struct Dense {
    Param* w = nullptr;
    Param* b = nullptr;
    static Dense create(ParamStore& ps, const std::string& name, int in, int out, Rng& rng);
    int apply(ad::Graph& g, Binder& bind, int x) const;  // [N,in] -> [N,out]
};

struct Adam {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long t = 0;

    // Applies one update to every listed parameter using gradients from the
    // binder's latest backward pass. Parameters without gradients are skipped.
    void step(const std::vector<Param*>& params, const Binder& bind);
};

}  // namespace dhm::nn

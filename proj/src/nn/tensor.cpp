#include "mgeo/nn/tensor.hpp"

#include "mgeo/rng.hpp"

namespace mgeo::nn {

Tensor::Tensor(std::vector<int> s, Real fill) : shape(std::move(s)) {
    size_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw NnError("tensor dimensions must be positive");
        n *= static_cast<size_t>(d);
    }
    values.assign(n, fill);
}

Eigen::Map<Mat> Tensor::grad_mat() {
    ensure_grad();
    return {grad.data(), rows(), cols()};
}

void Tensor::ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
}

void Tensor::zero_grad() {
    grad.assign(values.size(), 0.0);
}

Tensor& ParameterStore::add(const std::string& name, std::vector<int> shape, Init init,
                            Real init_scale) {
    if (index_.count(name)) throw NnError("duplicate parameter name: " + name);
    Tensor t(std::move(shape));
    switch (init) {
        case Init::ZEROS:
            break;
        case Init::ONES:
            for (Real& x : t.values) x = 1.0;
            break;
        case Init::TRUNC_NORMAL: {
            Rng rng(seed_, "param:" + name);
            for (Real& x : t.values) x = rng.trunc_normal(init_scale);
            break;
        }
    }
    index_[name] = tensors_.size();
    names_.push_back(name);
    tensors_.push_back(std::move(t));
    return tensors_.back();
}

Tensor& ParameterStore::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw NnError("unknown parameter: " + name);
    return tensors_[it->second];
}

const Tensor& ParameterStore::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw NnError("unknown parameter: " + name);
    return tensors_[it->second];
}

void ParameterStore::zero_grads() {
    for (Tensor& t : tensors_) t.zero_grad();
}

size_t ParameterStore::parameter_count() const {
    size_t n = 0;
    for (const Tensor& t : tensors_) n += t.size();
    return n;
}

}  // namespace mgeo::nn

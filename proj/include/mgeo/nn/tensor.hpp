#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

namespace mgeo::nn {

// Training scalar type. Double keeps finite-difference gradient checks and
// golden fixtures meaningful at desk scale.
using Real = double;
using Mat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class NnError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Dense row-major buffer with an optional same-shape gradient.
struct Tensor {
    std::vector<int> shape;
    std::vector<Real> values;
    std::vector<Real> grad;

    Tensor() = default;
    Tensor(std::vector<int> s, Real fill = 0.0);

    size_t size() const { return values.size(); }
    int rows() const { return shape.empty() ? 0 : shape[0]; }
    int cols() const { return shape.size() < 2 ? 1 : shape[1]; }

    Eigen::Map<Mat> mat() { return {values.data(), rows(), cols()}; }
    Eigen::Map<const Mat> mat() const { return {values.data(), rows(), cols()}; }
    Eigen::Map<Mat> grad_mat();

    void ensure_grad();
    void zero_grad();
};

enum class Init { ZEROS, ONES, TRUNC_NORMAL };

// Named trainable tensors plus optimizer state. Initialization of each
// parameter is fully determined by (seed, name), independent of creation
// order. Iteration follows insertion order.
class ParameterStore {
public:
    explicit ParameterStore(uint64_t seed) : seed_(seed) {}

    Tensor& add(const std::string& name, std::vector<int> shape, Init init = Init::TRUNC_NORMAL,
                Real init_scale = 0.02);
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    bool has(const std::string& name) const { return index_.count(name) > 0; }

    const std::vector<std::string>& names() const { return names_; }
    uint64_t seed() const { return seed_; }

    void zero_grads();
    size_t parameter_count() const;

    // AdamW state, lazily created on first step.
    struct Moments {
        std::vector<Real> m, v;
    };
    std::unordered_map<std::string, Moments> moments;
    int64_t step_count = 0;

private:
    uint64_t seed_;
    std::vector<std::string> names_;
    std::unordered_map<std::string, size_t> index_;
    std::vector<Tensor> tensors_;
};

}  // namespace mgeo::nn

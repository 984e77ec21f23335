#pragma once

#include <span>
#include <vector>

namespace seal {

struct AdamWParams {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-2;
};

/// AdamW with decoupled weight decay:
///   p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)
class AdamW {
public:
    AdamW(std::size_t size, AdamWParams params) : hp_(params), m_(size, 0.0), v_(size, 0.0) {}

    /// One update of `values` in place. Bias correction uses the internal step count.
    void step(std::span<double> values, std::span<const double> grad, double lr);

    int steps_taken() const noexcept { return t_; }
    const std::vector<double>& first_moment() const noexcept { return m_; }
    const std::vector<double>& second_moment() const noexcept { return v_; }
    const AdamWParams& params() const noexcept { return hp_; }

private:
    AdamWParams hp_;
    std::vector<double> m_;
    std::vector<double> v_;
    int t_ = 0;
};

}  // namespace seal

#include "seal/optim.hpp"

#include <cmath>

#include "seal/core.hpp"

namespace seal {

void AdamW::step(std::span<double> values, std::span<const double> grad, double lr) {
    if (values.size() != m_.size() || grad.size() != m_.size()) {
        fail(ErrorKind::validation, "optimizer state size does not match parameters");
    }
    ++t_;
    const double c1 = 1.0 - std::pow(hp_.beta1, t_);
    const double c2 = 1.0 - std::pow(hp_.beta2, t_);
    for (std::size_t i = 0; i < values.size(); ++i) {
        m_[i] = hp_.beta1 * m_[i] + (1.0 - hp_.beta1) * grad[i];
        v_[i] = hp_.beta2 * v_[i] + (1.0 - hp_.beta2) * grad[i] * grad[i];
        const double mhat = m_[i] / c1;
        const double vhat = v_[i] / c2;
        values[i] -= lr * (mhat / (std::sqrt(vhat) + hp_.eps) + hp_.weight_decay * values[i]);
    }
}

}  // namespace seal

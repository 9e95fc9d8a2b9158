#include "proxyattn/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace proxyattn {

namespace {
double eval_loss(const LossBuilder& f) {
    Tape tape;
    return f(tape).value().item();
}
}  // namespace

GradCheckReport finite_diff_check(const LossBuilder& f, const std::vector<Parameter*>& params, double h) {
    for (auto* p : params) p->zero_grad();
    {
        Tape tape;
        Var loss = f(tape);
        tape.backward(loss);
    }
    std::vector<Tensor> analytic;
    analytic.reserve(params.size());
    for (auto* p : params) analytic.push_back(p->grad);

    GradCheckReport report;
    for (std::size_t k = 0; k < params.size(); ++k) {
        Parameter& p = *params[k];
        ParamGradError pe{p.name, p.value.numel(), 0.0};
        for (std::size_t i = 0; i < p.value.numel(); ++i) {
            const double orig = p.value[i];
            p.value[i] = orig + h;
            const double up = eval_loss(f);
            p.value[i] = orig - h;
            const double down = eval_loss(f);
            p.value[i] = orig;
            const double numeric = (up - down) / (2.0 * h);
            const double err = std::abs(analytic[k][i] - numeric) / std::max(1.0, std::abs(numeric));
            pe.max_rel_error = std::max(pe.max_rel_error, err);
        }
        report.max_rel_error = std::max(report.max_rel_error, pe.max_rel_error);
        report.per_param.push_back(std::move(pe));
    }
    for (auto* p : params) p->zero_grad();
    return report;
}

}  // namespace proxyattn

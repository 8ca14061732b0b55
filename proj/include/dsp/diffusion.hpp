#pragma once

#include <cmath>
#include <span>
#include <string>
#include <utility>

#include "dsp/errors.hpp"
#include "dsp/rng.hpp"
#include "dsp/vec.hpp"

namespace dsp {

// Variance-preserving discrete schedule. Index 0 of each table holds step
// t = 1; alpha_bar_at(0) == 1 by convention so the reverse-step posterior
// variance is well defined at t = 1.
struct NoiseSchedule {
    int T = 0;
    Vec beta;
    Vec alpha;
    Vec alpha_bar;

    void check_step(int t) const {
        if (t < 1 || t > T)
            throw IndexError("diffusion step " + std::to_string(t) + " outside 1.." +
                             std::to_string(T));
    }
    double beta_at(int t) const {
        check_step(t);
        return beta[static_cast<std::size_t>(t) - 1];
    }
    double alpha_at(int t) const {
        check_step(t);
        return alpha[static_cast<std::size_t>(t) - 1];
    }
    double alpha_bar_at(int t) const {
        if (t == 0) return 1.0;
        check_step(t);
        return alpha_bar[static_cast<std::size_t>(t) - 1];
    }
};

// Linear beta grid from beta_start to beta_end inclusive. The terminal
// marginal must be near-Gaussian: alpha_bar_T < 0.01.
inline NoiseSchedule make_vp_schedule(int T, double beta_start, double beta_end) {
    if (T < 1) throw ConfigError("schedule needs T >= 1");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
        throw ConfigError("schedule needs 0 < beta_start <= beta_end < 1, got [" +
                          std::to_string(beta_start) + ", " + std::to_string(beta_end) + "]");

    NoiseSchedule s;
    s.T = T;
    s.beta.resize(T);
    s.alpha.resize(T);
    s.alpha_bar.resize(T);
    double prod = 1.0;
    for (int i = 0; i < T; ++i) {
        const double frac = (T == 1) ? 0.0 : static_cast<double>(i) / (T - 1);
        s.beta[i] = beta_start + (beta_end - beta_start) * frac;
        s.alpha[i] = 1.0 - s.beta[i];
        prod *= s.alpha[i];
        s.alpha_bar[i] = prod;
    }
    if (!(s.alpha_bar.back() < 0.01))
        throw ConfigError("terminal alpha_bar = " + std::to_string(s.alpha_bar.back()) +
                          " >= 0.01; increase T or the beta range");
    return s;
}

// Closed-form t-step noising: a_t = sqrt(ab_t) a0 + sqrt(1 - ab_t) eps.
inline Vec forward_noise(std::span<const double> a0, int t, std::span<const double> eps,
                         const NoiseSchedule& schedule) {
    schedule.check_step(t);
    if (eps.size() != a0.size())
        throw ShapeError("forward_noise: eps dim " + std::to_string(eps.size()) +
                         " != action dim " + std::to_string(a0.size()));
    const double ab = schedule.alpha_bar_at(t);
    const double c0 = std::sqrt(ab);
    const double ce = std::sqrt(1.0 - ab);
    Vec out(a0.size());
    for (std::size_t i = 0; i < a0.size(); ++i) out[i] = c0 * a0[i] + ce * eps[i];
    return out;
}

// One denoising step. `model(a_t, t, obs) -> eps_hat`. The additive noise
// uses the posterior variance beta_t (1 - ab_{t-1}) / (1 - ab_t); at t = 1 it
// is exactly zero and no draw is taken.
template <class Model>
Vec reverse_step(Model&& model, const Vec& a_t, int t, std::span<const double> obs,
                 const NoiseSchedule& schedule, RandomSource& rng) {
    schedule.check_step(t);
    const double beta = schedule.beta_at(t);
    const double ab_t = schedule.alpha_bar_at(t);
    const double ab_prev = schedule.alpha_bar_at(t - 1);
    const double c1 = 1.0 / std::sqrt(schedule.alpha_at(t));
    const double c2 = beta / std::sqrt(1.0 - ab_t);
    const double var = (t == 1) ? 0.0 : beta * (1.0 - ab_prev) / (1.0 - ab_t);

    const Vec eps_hat = model(a_t, t, obs);
    if (eps_hat.size() != a_t.size())
        throw ShapeError("reverse_step: model output dim != action dim");

    Vec out(a_t.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = c1 * (a_t[i] - c2 * eps_hat[i]);
    if (var > 0.0) {
        const double sd = std::sqrt(var);
        for (double& x : out) x += sd * rng.normal();
    }
    return out;
}

// Full sampler: a_T ~ N(0, I), denoise down to a_0, clamp to the action box.
template <class Model>
Vec sample_action(Model&& model, std::span<const double> obs, const NoiseSchedule& schedule,
                  RandomSource& rng, std::size_t action_dim) {
    Vec a(action_dim);
    rng.fill_normal(a);
    for (int t = schedule.T; t >= 1; --t) a = reverse_step(model, a, t, obs, schedule, rng);
    clamp_inplace(a, -1.0, 1.0);
    return a;
}

// Single-sample training loss: draw t uniform in 1..T and eps ~ N(0, I),
// noise a0, and score the model's eps prediction with a mean-over-dims
// squared error. Model contract:
//   Vec forward(const Vec& a_t, int t, span obs)  -- retains its own cache
//   void backward(span upstream)                  -- accumulates param grads
template <class Model>
double denoise_loss(Model& model, std::span<const double> obs, std::span<const double> a0,
                    const NoiseSchedule& schedule, RandomSource& rng) {
    const std::size_t dim = a0.size();
    const int t = rng.uniform_int(1, schedule.T);
    Vec eps(dim);
    rng.fill_normal(eps);
    const Vec a_t = forward_noise(a0, t, eps, schedule);

    const Vec eps_hat = model.forward(a_t, t, obs);
    if (eps_hat.size() != dim) throw ShapeError("denoise_loss: model output dim != action dim");

    double loss = 0.0;
    Vec upstream(dim);
    for (std::size_t i = 0; i < dim; ++i) {
        const double r = eps_hat[i] - eps[i];
        loss += r * r;
        upstream[i] = 2.0 * r / static_cast<double>(dim);
    }
    loss /= static_cast<double>(dim);
    if (!std::isfinite(loss)) throw NumericError("denoise loss is not finite");
    model.backward(upstream);
    return loss;
}

}  // namespace dsp

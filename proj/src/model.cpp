#include "xmodal/model.hpp"

#include <cmath>

#include "xmodal/errors.hpp"

namespace xmodal {

DistillModel init_model(const EncoderConfig& encoder, const TrainConfig& train) {
    train.validate();
    DistillModel m;
    m.encoder = init_encoder(encoder);
    const auto d = static_cast<std::size_t>(encoder.embed_dim);
    if (train.projection_init == ProjectionInit::Identity) {
        m.f = ProjectionMLP::identity(d);
        m.g = ProjectionMLP::identity(d);
    } else {
        const auto hidden = train.projection_hidden > 0 ? static_cast<std::size_t>(train.projection_hidden) : d;
        Rng f_rng = seeded_rng(encoder.seed, "init-f");
        Rng g_rng = seeded_rng(encoder.seed, "init-g");
        m.f = ProjectionMLP::random(d, hidden, d, f_rng);
        m.g = ProjectionMLP::random(d, hidden, d, g_rng);
    }
    m.temperature.log_scale = std::log(train.initial_logit_scale);
    m.temperature.learnable = train.learnable_temperature;
    m.temperature.clamp();
    return m;
}

namespace {

struct View {
    std::string name;
    std::span<double> values;
};

std::vector<View> trainable_views(DistillModel& m) {
    std::vector<View> views;
    auto add_set = [&](const std::string& prefix, ParamSet& set) {
        for (std::size_t i = 0; i < set.size(); ++i) views.push_back({prefix + set.names()[i], set.tensor(i).data});
    };
    add_set("encoder.", m.encoder.weights);
    add_set("f.", m.f.params);
    add_set("g.", m.g.params);
    views.push_back({"temperature.log_scale", std::span<double>(&m.temperature.log_scale, 1)});
    return views;
}

}  // namespace

ParamSet gradient_layout(const DistillModel& model) {
    ParamSet out;
    auto add_set = [&](const std::string& prefix, const ParamSet& set) {
        for (std::size_t i = 0; i < set.size(); ++i) out.add(prefix + set.names()[i], Tensor(set.tensor(i).shape));
    };
    add_set("encoder.", model.encoder.weights);
    add_set("f.", model.f.params);
    add_set("g.", model.g.params);
    out.add("temperature.log_scale", Tensor({1}));
    return out;
}

AdamState init_adam(const DistillModel& model) {
    AdamState s;
    s.m = gradient_layout(model);
    s.v = gradient_layout(model);
    return s;
}

void adam_update(DistillModel& model, const ParamSet& grads, AdamState& state, double learning_rate,
                 const TrainConfig& cfg) {
    auto views = trainable_views(model);
    if (grads.size() != views.size() || state.m.size() != views.size())
        throw InvalidInput("gradient layout does not match model");
    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(cfg.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t i = 0; i < views.size(); ++i) {
        if (grads.names()[i] != views[i].name) throw InvalidInput("gradient '" + grads.names()[i] + "' out of order");
        if (views[i].name == "temperature.log_scale" && !model.temperature.learnable) continue;
        const auto& g = grads.tensor(i).data;
        auto& m = state.m.tensor(i).data;
        auto& v = state.v.tensor(i).data;
        auto p = views[i].values;
        const bool projection = views[i].name.starts_with("f.") || views[i].name.starts_with("g.");
        const double lr = projection ? learning_rate * cfg.projection_lr_scale : learning_rate;
        for (std::size_t k = 0; k < p.size(); ++k) {
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
            const double m_hat = m[k] / bc1;
            const double v_hat = v[k] / bc2;
            p[k] -= lr * m_hat / (std::sqrt(v_hat) + cfg.adam_eps);
        }
    }
    if (model.temperature.learnable) model.temperature.clamp();
}

}  // namespace xmodal

#include "xmodal/probe.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "xmodal/errors.hpp"
#include "xmodal/parallel.hpp"

namespace xmodal {

namespace {

void check_labels(const Matrix& x, const LabelSets& labels, std::size_t n_classes, ProbeTask task) {
    if (x.rows() != labels.size())
        throw InvalidInput(std::to_string(x.rows()) + " embeddings but " + std::to_string(labels.size()) + " labels");
    if (x.rows() == 0) throw InvalidInput("no samples");
    if (task == ProbeTask::MultiClass && n_classes < 2) throw InvalidInput("multi-class probes need at least 2 classes");
    if (n_classes < 1) throw InvalidInput("probes need at least one class");
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (task == ProbeTask::MultiClass && labels[i].size() != 1)
            throw InvalidInput("sample " + std::to_string(i) + " needs exactly one label for a multi-class probe");
        for (auto c : labels[i])
            if (c >= n_classes) throw InvalidInput("label index out of range");
    }
}

Matrix standardize(const ProbeModel& m, const Matrix& x) {
    if (x.cols() != m.in_dim)
        throw InvalidInput("probe expects dimension " + std::to_string(m.in_dim) + ", got " + std::to_string(x.cols()));
    Matrix out(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t k = 0; k < x.cols(); ++k) out(i, k) = (x(i, k) - m.feature_mean[k]) * m.feature_scale[k];
    return out;
}

// y = x W^T + b for W [out x in].
Matrix affine(const Matrix& x, const Tensor& w, const Tensor& b) {
    const std::size_t out_dim = w.shape[0], in_dim = w.shape[1];
    Matrix y(x.rows(), out_dim);
    for (std::size_t i = 0; i < x.rows(); ++i) {
        const double* xi = x.row(i).data();
        for (std::size_t o = 0; o < out_dim; ++o) {
            const double* wo = w.data.data() + o * in_dim;
            double s = b.data[o];
            for (std::size_t k = 0; k < in_dim; ++k) s += wo[k] * xi[k];
            y(i, o) = s;
        }
    }
    return y;
}

struct Forward {
    Matrix hidden;  // post-ReLU
    Matrix logits;
};

Forward forward(const ProbeModel& m, const Matrix& z) {
    Forward f;
    f.hidden = affine(z, m.params.at("l1.weight"), m.params.at("l1.bias"));
    for (double& v : f.hidden.data()) v = std::max(v, 0.0);
    f.logits = affine(f.hidden, m.params.at("l2.weight"), m.params.at("l2.bias"));
    return f;
}

double sigmoid(double v) { return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); }

void softmax_rows(Matrix& s) {
    for (std::size_t i = 0; i < s.rows(); ++i) {
        auto r = s.row(i);
        const double mx = *std::max_element(r.begin(), r.end());
        double sum = 0.0;
        for (double& v : r) sum += (v = std::exp(v - mx));
        for (double& v : r) v /= sum;
    }
}

// Gradient of the mean batch loss w.r.t. the logits.
Matrix logit_grad(const ProbeModel& m, const Matrix& logits, const LabelSets& labels,
                  const std::vector<std::size_t>& rows) {
    Matrix d = logits;
    const double n = static_cast<double>(rows.size());
    if (m.task == ProbeTask::MultiClass) {
        softmax_rows(d);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            d(i, labels[rows[i]][0]) -= 1.0;
            for (double& v : d.row(i)) v /= n;
        }
    } else {
        const double scale = n * static_cast<double>(m.n_classes);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            auto r = d.row(i);
            for (double& v : r) v = sigmoid(v);
            for (auto c : labels[rows[i]]) r[c] -= 1.0;
            for (double& v : r) v /= scale;
        }
    }
    return d;
}

void fill_uniform(Tensor& t, double bound, Rng& rng) {
    for (double& v : t.data) v = rng.uniform(-bound, bound);
}

}  // namespace

ProbeModel train_probe(const Matrix& x, const LabelSets& labels, std::size_t n_classes, const ProbeConfig& cfg,
                       int trial) {
    cfg.validate();
    check_labels(x, labels, n_classes, cfg.task);
    ProbeModel m;
    m.task = cfg.task;
    m.in_dim = x.cols();
    m.hidden_dim = static_cast<std::size_t>(cfg.hidden_dim);
    m.n_classes = n_classes;

    m.feature_mean.assign(m.in_dim, 0.0);
    m.feature_scale.assign(m.in_dim, 1.0);
    const double n = static_cast<double>(x.rows());
    for (std::size_t k = 0; k < m.in_dim; ++k) {
        double mean = 0.0;
        for (std::size_t i = 0; i < x.rows(); ++i) mean += x(i, k);
        mean /= n;
        double var = 0.0;
        for (std::size_t i = 0; i < x.rows(); ++i) var += (x(i, k) - mean) * (x(i, k) - mean);
        var /= n;
        m.feature_mean[k] = mean;
        m.feature_scale[k] = var > 1e-24 ? 1.0 / std::sqrt(var) : 1.0;
    }

    Rng rng = seeded_rng(cfg.seed, "probe-trial-" + std::to_string(trial));
    Tensor w1({m.hidden_dim, m.in_dim}), b1({m.hidden_dim}), w2({n_classes, m.hidden_dim}), b2({n_classes});
    fill_uniform(w1, 1.0 / std::sqrt(static_cast<double>(m.in_dim)), rng);
    fill_uniform(b1, 1.0 / std::sqrt(static_cast<double>(m.in_dim)), rng);
    fill_uniform(w2, 1.0 / std::sqrt(static_cast<double>(m.hidden_dim)), rng);
    fill_uniform(b2, 1.0 / std::sqrt(static_cast<double>(m.hidden_dim)), rng);
    m.params.add("l1.weight", std::move(w1));
    m.params.add("l1.bias", std::move(b1));
    m.params.add("l2.weight", std::move(w2));
    m.params.add("l2.bias", std::move(b2));

    const Matrix z = standardize(m, x);
    ParamSet adam_m = m.params.zeros_like(), adam_v = m.params.zeros_like();
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::uint64_t step = 0;
    std::vector<std::size_t> order(x.rows());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto bs = static_cast<std::size_t>(cfg.batch_size);

    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += bs) {
            const std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                                order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + bs)));
            Matrix zb(rows.size(), m.in_dim);
            for (std::size_t i = 0; i < rows.size(); ++i)
                std::copy(z.row(rows[i]).begin(), z.row(rows[i]).end(), zb.row(i).begin());
            const Forward f = forward(m, zb);
            Matrix d2 = logit_grad(m, f.logits, labels, rows);

            ParamSet g = m.params.zeros_like();
            auto& gw1 = g.at("l1.weight").data;
            auto& gb1 = g.at("l1.bias").data;
            auto& gw2 = g.at("l2.weight").data;
            auto& gb2 = g.at("l2.bias").data;
            const auto& w2d = m.params.at("l2.weight").data;
            Matrix d1(rows.size(), m.hidden_dim);
            for (std::size_t i = 0; i < rows.size(); ++i) {
                const auto h = f.hidden.row(i);
                for (std::size_t c = 0; c < n_classes; ++c) {
                    const double dv = d2(i, c);
                    gb2[c] += dv;
                    double* gw = gw2.data() + c * m.hidden_dim;
                    const double* wr = w2d.data() + c * m.hidden_dim;
                    for (std::size_t j = 0; j < m.hidden_dim; ++j) {
                        gw[j] += dv * h[j];
                        d1(i, j) += dv * wr[j];
                    }
                }
                for (std::size_t j = 0; j < m.hidden_dim; ++j)
                    if (h[j] <= 0.0) d1(i, j) = 0.0;
                const auto zi = zb.row(i);
                for (std::size_t j = 0; j < m.hidden_dim; ++j) {
                    const double dv = d1(i, j);
                    if (dv == 0.0) continue;
                    gb1[j] += dv;
                    double* gw = gw1.data() + j * m.in_dim;
                    for (std::size_t k = 0; k < m.in_dim; ++k) gw[k] += dv * zi[k];
                }
            }

            ++step;
            const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
            const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
            for (std::size_t t = 0; t < m.params.size(); ++t) {
                auto& p = m.params.tensor(t).data;
                auto& mm = adam_m.tensor(t).data;
                auto& vv = adam_v.tensor(t).data;
                const auto& gg = g.tensor(t).data;
                for (std::size_t k = 0; k < p.size(); ++k) {
                    mm[k] = beta1 * mm[k] + (1.0 - beta1) * gg[k];
                    vv[k] = beta2 * vv[k] + (1.0 - beta2) * gg[k] * gg[k];
                    p[k] -= cfg.lr * (mm[k] / bc1) / (std::sqrt(vv[k] / bc2) + eps);
                }
            }
        }
    }
    return m;
}

Matrix probe_scores(const ProbeModel& model, const Matrix& x) {
    Matrix s = forward(model, standardize(model, x)).logits;
    if (model.task == ProbeTask::MultiClass) softmax_rows(s);
    else
        for (double& v : s.data()) v = sigmoid(v);
    return s;
}

std::vector<std::size_t> probe_predict(const ProbeModel& model, const Matrix& x) {
    const Matrix s = probe_scores(model, x);
    std::vector<std::size_t> out(s.rows());
    for (std::size_t i = 0; i < s.rows(); ++i) {
        const auto r = s.row(i);
        out[i] = static_cast<std::size_t>(std::distance(r.begin(), std::max_element(r.begin(), r.end())));
    }
    return out;
}

EvalReport evaluate_probe(const Matrix& train_x, const LabelSets& train_labels, const Matrix& eval_x,
                          const LabelSets& eval_labels, std::span<const std::string> classes, const ProbeConfig& cfg,
                          unsigned threads) {
    cfg.validate();
    const std::size_t n_classes = classes.size();
    check_labels(train_x, train_labels, n_classes, cfg.task);
    check_labels(eval_x, eval_labels, n_classes, cfg.task);
    if (eval_x.cols() != train_x.cols()) throw InvalidInput("train and eval embeddings differ in dimension");

    const auto trials = static_cast<std::size_t>(cfg.n_trials);
    std::vector<double> values(trials);
    std::vector<std::vector<std::optional<double>>> class_ap(trials);
    std::vector<std::vector<std::size_t>> preds(trials);
    parallel_for(trials, threads, [&](std::size_t t) {
        const ProbeModel model = train_probe(train_x, train_labels, n_classes, cfg, static_cast<int>(t));
        if (cfg.task == ProbeTask::MultiClass) {
            preds[t] = probe_predict(model, eval_x);
            std::vector<std::size_t> refs(eval_labels.size());
            for (std::size_t i = 0; i < refs.size(); ++i) refs[i] = eval_labels[i][0];
            values[t] = accuracy(preds[t], refs);
        } else {
            const Matrix scores = probe_scores(model, eval_x);
            Matrix refs(eval_labels.size(), n_classes);
            for (std::size_t i = 0; i < eval_labels.size(); ++i)
                for (auto c : eval_labels[i]) refs(i, c) = 1.0;
            class_ap[t] = per_class_average_precision(scores, refs);
            values[t] = mean_average_precision(scores, refs);
        }
    });

    EvalReport r;
    r.task = cfg.task == ProbeTask::MultiClass ? "probe_multi_class" : "probe_multi_label";
    const std::string metric = cfg.task == ProbeTask::MultiClass ? "acc" : "map";
    const TrialSummary summary = TrialSummary::of(values);
    r.metrics[metric] = summary.mean;
    r.metrics[metric + "_std"] = summary.std;
    r.trials[metric] = summary;
    r.details["n_train"] = train_x.rows();
    r.details["n_eval"] = eval_x.rows();
    if (cfg.task == ProbeTask::MultiClass) {
        std::vector<std::string> pred_names, ref_names;
        for (std::size_t i = 0; i < eval_labels.size(); ++i) {
            pred_names.push_back(classes[preds[0][i]]);
            ref_names.push_back(classes[eval_labels[i][0]]);
        }
        const ConfusionMatrix cm = confusion_matrix(pred_names, ref_names, classes);
        r.details["confusion_trial0"] = confusion_json(cm, classes);
        for (std::size_t c = 0; c < n_classes; ++c) {
            const auto support = std::accumulate(cm[c].begin(), cm[c].end(), std::size_t{0});
            if (support == 0) continue;
            r.per_class[classes[c]]["acc"] = static_cast<double>(cm[c][c]) / static_cast<double>(support);
        }
    } else {
        for (std::size_t c = 0; c < n_classes; ++c) {
            std::vector<double> aps;
            for (const auto& trial : class_ap)
                if (trial[c]) aps.push_back(*trial[c]);
            if (!aps.empty()) r.per_class[classes[c]]["ap"] = summarize(aps).mean;
        }
    }
    return r;
}

std::vector<std::size_t> stratified_subsample(const LabelSets& labels, std::size_t n_classes, double percentage,
                                              Rng& rng) {
    if (!(percentage > 0.0 && percentage <= 100.0)) throw InvalidInput("percentage must be in (0, 100]");
    // Stratum n_classes holds samples without any label.
    std::vector<std::vector<std::size_t>> strata(n_classes + 1);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i].empty()) strata[n_classes].push_back(i);
        else if (labels[i][0] < n_classes) strata[labels[i][0]].push_back(i);
        else throw InvalidInput("label index out of range");
    }
    std::vector<std::size_t> out;
    for (std::size_t c = 0; c <= n_classes; ++c) {
        auto& s = strata[c];
        if (s.empty()) {
            if (c < n_classes)
                throw InvalidInput("stratification impossible: class " + std::to_string(c) + " has no samples");
            continue;
        }
        const auto keep = static_cast<std::size_t>(std::ceil(percentage * static_cast<double>(s.size()) / 100.0 - 1e-9));
        rng.shuffle(s);
        out.insert(out.end(), s.begin(), s.begin() + static_cast<std::ptrdiff_t>(std::clamp<std::size_t>(keep, 1, s.size())));
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<double> default_sweep_percentages() { return {1, 2, 5, 10, 20, 50, 100}; }

namespace {

std::string format_percentage(double p) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", p);
    return buf;
}

}  // namespace

EvalReport data_efficiency_sweep(const Matrix& train_x, const LabelSets& train_labels, const Matrix& eval_x,
                                 const LabelSets& eval_labels, std::span<const std::string> classes,
                                 const ProbeConfig& cfg, std::vector<double> percentages, unsigned threads) {
    if (percentages.empty()) throw InvalidInput("no sweep percentages");
    check_labels(train_x, train_labels, classes.size(), cfg.task);

    std::vector<std::vector<std::size_t>> subsets(percentages.size());
    for (std::size_t i = 0; i < percentages.size(); ++i) {
        Rng rng = seeded_rng(cfg.seed, "subsample-" + format_percentage(percentages[i]));
        subsets[i] = stratified_subsample(train_labels, classes.size(), percentages[i], rng);
    }

    std::vector<EvalReport> points(percentages.size());
    // Spread workers over sweep points when there are enough of them, else over trials.
    const bool across_points = percentages.size() >= threads;
    parallel_for(percentages.size(), across_points ? threads : 1U, [&](std::size_t i) {
        const auto& idx = subsets[i];
        Matrix sx(idx.size(), train_x.cols());
        LabelSets sl;
        for (std::size_t r = 0; r < idx.size(); ++r) {
            std::copy(train_x.row(idx[r]).begin(), train_x.row(idx[r]).end(), sx.row(r).begin());
            sl.push_back(train_labels[idx[r]]);
        }
        points[i] = evaluate_probe(sx, sl, eval_x, eval_labels, classes, cfg, across_points ? 1U : threads);
    });

    const std::string metric = cfg.task == ProbeTask::MultiClass ? "acc" : "map";
    EvalReport r;
    r.task = "data_efficiency_sweep";
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t i = 0; i < percentages.size(); ++i) {
        const auto& t = points[i].trials.at(metric);
        const std::string key = metric + "@" + format_percentage(percentages[i]);
        r.metrics[key] = t.mean;
        r.trials[key] = t;
        rows.push_back({{"percentage", percentages[i]},
                        {"mean", t.mean},
                        {"std", t.std},
                        {"n_train", subsets[i].size()}});
    }
    r.details["metric"] = metric;
    r.details["points"] = std::move(rows);
    return r;
}

std::string sweep_csv(const EvalReport& sweep) {
    std::string out = "percentage,mean,std\n";
    char buf[128];
    for (const auto& p : sweep.details.at("points")) {
        std::snprintf(buf, sizeof buf, "%s,%.17g,%.17g\n", format_percentage(p.at("percentage").get<double>()).c_str(),
                      p.at("mean").get<double>(), p.at("std").get<double>());
        out += buf;
    }
    return out;
}

}  // namespace xmodal

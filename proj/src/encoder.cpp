#include "xmodal/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "xmodal/errors.hpp"
#include "xmodal/rng.hpp"

namespace xmodal {

using Map = EncoderTape::Map;
using NormCache = EncoderTape::NormCache;

void EncoderConfig::validate() const {
    if (embed_dim < 1) throw InvalidConfig("embed_dim must be >= 1");
    if (n_blocks < 1) throw InvalidConfig("n_blocks must be >= 1");
    if (n_blocks > 16) throw InvalidConfig("n_blocks too large");
    if (base_channels < 1) throw InvalidConfig("base_channels must be >= 1");
    if (n_mels < 1) throw InvalidConfig("n_mels must be >= 1");
    if (!(norm_momentum > 0.0 && norm_momentum <= 1.0)) throw InvalidConfig("norm_momentum must be in (0, 1]");
    if (!(norm_eps > 0.0)) throw InvalidConfig("norm_eps must be positive");
}

namespace {

std::string block_name(int b) { return "block" + std::to_string(b); }

Map make_map(std::size_t c, std::size_t h, std::size_t w) { return Map{c, h, w, std::vector<double>(c * h * w, 0.0)}; }

// 3x3 convolution, zero padding 1, stride 1. Weight layout [out, in, 3, 3].
void conv3x3(const Map& in, const Tensor& weight, Map& out) {
    const std::size_t co = weight.shape[0], ci = weight.shape[1];
    const std::size_t H = in.h, W = in.w, plane = H * W;
    out = make_map(co, H, W);
    for (std::size_t o = 0; o < co; ++o) {
        double* dst = out.v.data() + o * plane;
        for (std::size_t i = 0; i < ci; ++i) {
            const double* src = in.v.data() + i * plane;
            for (std::size_t dy = 0; dy < 3; ++dy) {
                for (std::size_t dx = 0; dx < 3; ++dx) {
                    const double w = weight.data[((o * ci + i) * 3 + dy) * 3 + dx];
                    const std::size_t y0 = dy == 0 ? 1 : 0, y1 = dy == 2 ? H - 1 : H;
                    const std::size_t x0 = dx == 0 ? 1 : 0, x1 = dx == 2 ? W - 1 : W;
                    for (std::size_t y = y0; y < y1; ++y) {
                        double* drow = dst + y * W;
                        const double* srow = src + (y + dy - 1) * W;
                        for (std::size_t x = x0; x < x1; ++x) drow[x] += w * srow[x + dx - 1];
                    }
                }
            }
        }
    }
}

void conv3x3_backward(const Map& in, const Tensor& weight, const Map& d_out, Map* d_in, Tensor& d_weight) {
    const std::size_t co = weight.shape[0], ci = weight.shape[1];
    const std::size_t H = in.h, W = in.w, plane = H * W;
    if (d_in) *d_in = make_map(ci, H, W);
    for (std::size_t o = 0; o < co; ++o) {
        const double* g = d_out.v.data() + o * plane;
        for (std::size_t i = 0; i < ci; ++i) {
            const double* src = in.v.data() + i * plane;
            double* dsrc = d_in ? d_in->v.data() + i * plane : nullptr;
            for (std::size_t dy = 0; dy < 3; ++dy) {
                for (std::size_t dx = 0; dx < 3; ++dx) {
                    const std::size_t widx = ((o * ci + i) * 3 + dy) * 3 + dx;
                    const double w = weight.data[widx];
                    const std::size_t y0 = dy == 0 ? 1 : 0, y1 = dy == 2 ? H - 1 : H;
                    const std::size_t x0 = dx == 0 ? 1 : 0, x1 = dx == 2 ? W - 1 : W;
                    double acc = 0.0;
                    for (std::size_t y = y0; y < y1; ++y) {
                        const double* grow = g + y * W;
                        const std::size_t row = (y + dy - 1) * W;
                        for (std::size_t x = x0; x < x1; ++x) acc += grow[x] * src[row + x + dx - 1];
                        if (dsrc) {
                            for (std::size_t x = x0; x < x1; ++x) dsrc[row + x + dx - 1] += w * grow[x];
                        }
                    }
                    d_weight.data[widx] += acc;
                }
            }
        }
    }
}

void normalize(Map& x, const EncoderParams& p, const std::string& prefix, bool instance, NormCache* cache) {
    const auto& scale = p.weights.at(prefix + ".scale");
    const auto& shift = p.weights.at(prefix + ".shift");
    const std::size_t plane = x.h * x.w;
    const double eps = p.config.norm_eps;
    if (cache) {
        cache->xhat.resize(x.v.size());
        cache->mean.assign(x.c, 0.0);
        cache->var.assign(x.c, 0.0);
        cache->inv_std.assign(x.c, 0.0);
    }
    for (std::size_t c = 0; c < x.c; ++c) {
        double* v = x.v.data() + c * plane;
        double mean = 0.0, var = 0.0;
        if (instance) {
            for (std::size_t k = 0; k < plane; ++k) mean += v[k];
            mean /= static_cast<double>(plane);
            for (std::size_t k = 0; k < plane; ++k) var += (v[k] - mean) * (v[k] - mean);
            var /= static_cast<double>(plane);
        } else {
            mean = p.buffers.at(prefix + ".running_mean").data[c];
            var = p.buffers.at(prefix + ".running_var").data[c];
        }
        const double inv_std = 1.0 / std::sqrt(var + eps);
        const double g = scale.data[c], b = shift.data[c];
        for (std::size_t k = 0; k < plane; ++k) {
            const double xh = (v[k] - mean) * inv_std;
            if (cache) cache->xhat[c * plane + k] = xh;
            v[k] = g * xh + b;
        }
        if (cache) {
            cache->mean[c] = mean;
            cache->var[c] = var;
            cache->inv_std[c] = inv_std;
        }
    }
}

// In place: `d` holds dL/dy on entry and dL/dx on exit.
void normalize_backward(const NormCache& cache, const Tensor& scale, Map& d, Tensor& d_scale, Tensor& d_shift) {
    const std::size_t plane = d.h * d.w;
    const double inv_n = 1.0 / static_cast<double>(plane);
    for (std::size_t c = 0; c < d.c; ++c) {
        double* g = d.v.data() + c * plane;
        const double* xh = cache.xhat.data() + c * plane;
        double sum_dy = 0.0, sum_dy_xh = 0.0;
        for (std::size_t k = 0; k < plane; ++k) {
            sum_dy += g[k];
            sum_dy_xh += g[k] * xh[k];
        }
        d_shift.data[c] += sum_dy;
        d_scale.data[c] += sum_dy_xh;
        const double gamma = scale.data[c];
        const double mean_g = gamma * sum_dy * inv_n;
        const double mean_gx = gamma * sum_dy_xh * inv_n;
        const double inv_std = cache.inv_std[c];
        for (std::size_t k = 0; k < plane; ++k) g[k] = inv_std * (gamma * g[k] - mean_g - xh[k] * mean_gx);
    }
}

void relu(Map& x) {
    for (auto& v : x.v) v = v > 0.0 ? v : 0.0;
}

// dL/d(pre-activation) from dL/d(post-activation) and the post-activation.
void relu_backward(const Map& activated, Map& d) {
    for (std::size_t k = 0; k < d.v.size(); ++k)
        if (!(activated.v[k] > 0.0)) d.v[k] = 0.0;
}

Map avgpool2(const Map& in) {
    Map out = make_map(in.c, in.h / 2, in.w / 2);
    for (std::size_t c = 0; c < in.c; ++c) {
        const double* s = in.v.data() + c * in.h * in.w;
        double* d = out.v.data() + c * out.h * out.w;
        for (std::size_t y = 0; y < out.h; ++y) {
            for (std::size_t x = 0; x < out.w; ++x) {
                const double* p = s + 2 * y * in.w + 2 * x;
                d[y * out.w + x] = 0.25 * (p[0] + p[1] + p[in.w] + p[in.w + 1]);
            }
        }
    }
    return out;
}

Map avgpool2_backward(const Map& d_out, std::size_t h, std::size_t w) {
    Map d_in = make_map(d_out.c, h, w);
    for (std::size_t c = 0; c < d_out.c; ++c) {
        const double* g = d_out.v.data() + c * d_out.h * d_out.w;
        double* d = d_in.v.data() + c * h * w;
        for (std::size_t y = 0; y < d_out.h; ++y) {
            for (std::size_t x = 0; x < d_out.w; ++x) {
                const double v = 0.25 * g[y * d_out.w + x];
                double* p = d + 2 * y * w + 2 * x;
                p[0] += v;
                p[1] += v;
                p[w] += v;
                p[w + 1] += v;
            }
        }
    }
    return d_in;
}

void check_input(const Matrix& mel, const EncoderConfig& cfg) {
    if (mel.cols() != static_cast<std::size_t>(cfg.n_mels))
        throw InvalidInput("spectrogram has " + std::to_string(mel.cols()) + " mel bands, encoder expects " +
                           std::to_string(cfg.n_mels));
    const std::size_t need = cfg.min_input_extent();
    if (mel.rows() < need || mel.cols() < need)
        throw InvalidInput("spectrogram " + std::to_string(mel.rows()) + "x" + std::to_string(mel.cols()) +
                           " is smaller than the encoder's downsampling footprint " + std::to_string(need));
}

Embedding forward(const Matrix& mel, const EncoderParams& p, bool training, EncoderTape* tape) {
    const auto& cfg = p.config;
    check_input(mel, cfg);
    const bool instance = training || cfg.norm_inference == NormInference::Instance;

    Map x{1, mel.rows(), mel.cols(), mel.data()};
    Map h;
    conv3x3(x, p.weights.at("stem.weight"), h);
    normalize(h, p, "stem.norm", instance, tape ? &tape->stem_norm : nullptr);
    relu(h);
    if (tape) {
        tape->input = std::move(x);
        tape->stem_out = h;
        tape->blocks.clear();
    }

    for (int b = 0; b < cfg.n_blocks; ++b) {
        const std::string name = block_name(b);
        if (b > 0) h = avgpool2(h);
        EncoderTape::Block* blk = nullptr;
        if (tape) {
            blk = &tape->blocks.emplace_back();
            blk->input = h;
        }
        Map a;
        conv3x3(h, p.weights.at(name + ".conv1.weight"), a);
        normalize(a, p, name + ".norm1", instance, blk ? &blk->norm1 : nullptr);
        relu(a);
        Map c;
        conv3x3(a, p.weights.at(name + ".conv2.weight"), c);
        normalize(c, p, name + ".norm2", instance, blk ? &blk->norm2 : nullptr);
        for (std::size_t k = 0; k < c.v.size(); ++k) c.v[k] += h.v[k];
        relu(c);
        if (blk) {
            blk->hidden = std::move(a);
            blk->output = c;
        }
        h = std::move(c);
    }

    std::vector<double> pooled(h.c, 0.0);
    const std::size_t plane = h.h * h.w;
    for (std::size_t c = 0; c < h.c; ++c) {
        double s = 0.0;
        for (std::size_t k = 0; k < plane; ++k) s += h.v[c * plane + k];
        pooled[c] = s / static_cast<double>(plane);
    }

    const auto& w = p.weights.at("head.weight");
    const auto& bias = p.weights.at("head.bias");
    const std::size_t e = w.shape[0];
    std::vector<double> out(e);
    for (std::size_t r = 0; r < e; ++r) {
        double s = bias.data[r];
        for (std::size_t c = 0; c < h.c; ++c) s += w.data[r * h.c + c] * pooled[c];
        out[r] = s;
    }
    if (tape) tape->pooled = std::move(pooled);
    return Embedding(std::move(out));
}

void fill_uniform(Tensor& t, double bound, Rng& rng) {
    for (auto& v : t.data) v = rng.uniform(-bound, bound);
}

}  // namespace

EncoderParams init_encoder(const EncoderConfig& cfg) {
    cfg.validate();
    Rng rng = seeded_rng(cfg.seed, "init");
    const auto C = static_cast<std::size_t>(cfg.base_channels);
    const auto E = static_cast<std::size_t>(cfg.embed_dim);
    EncoderParams p;
    p.config = cfg;

    auto add_conv = [&](const std::string& name, std::size_t in) {
        Tensor w({C, in, 3, 3});
        fill_uniform(w, std::sqrt(6.0 / static_cast<double>(in * 9)), rng);
        p.weights.add(name, std::move(w));
    };
    auto add_norm = [&](const std::string& name) {
        p.weights.add(name + ".scale", Tensor({C}, 1.0));
        p.weights.add(name + ".shift", Tensor({C}, 0.0));
        p.buffers.add(name + ".running_mean", Tensor({C}, 0.0));
        p.buffers.add(name + ".running_var", Tensor({C}, 1.0));
    };

    add_conv("stem.weight", 1);
    add_norm("stem.norm");
    for (int b = 0; b < cfg.n_blocks; ++b) {
        const std::string name = block_name(b);
        add_conv(name + ".conv1.weight", C);
        add_norm(name + ".norm1");
        add_conv(name + ".conv2.weight", C);
        add_norm(name + ".norm2");
    }
    const double bound = 1.0 / std::sqrt(static_cast<double>(C));
    Tensor hw({E, C}), hb({E});
    fill_uniform(hw, bound, rng);
    fill_uniform(hb, bound, rng);
    p.weights.add("head.weight", std::move(hw));
    p.weights.add("head.bias", std::move(hb));
    return p;
}

Embedding encode_clip(const MelSpectrogram& mel, const EncoderParams& params) {
    if (mel.n_mels != params.config.n_mels)
        throw InvalidInput("spectrogram n_mels " + std::to_string(mel.n_mels) + " does not match encoder n_mels " +
                           std::to_string(params.config.n_mels));
    return forward(mel.values, params, false, nullptr);
}

std::vector<Embedding> encode_frames(const AudioClip& clip, const EncoderParams& params, const MelFrontend& frontend) {
    std::vector<Embedding> out;
    for (const auto& seg : frame_segments(clip, 1.0)) out.push_back(encode_clip(frontend.log_mel(seg), params));
    return out;
}

std::vector<Embedding> encode_frames(const AudioClip& clip, const EncoderParams& params, const DspConfig& cfg) {
    return encode_frames(clip, params, MelFrontend(cfg));
}

Embedding pool_mean(std::span<const Embedding> embeddings) {
    if (embeddings.empty()) throw InvalidInput("cannot pool an empty list of embeddings");
    const std::size_t d = embeddings.front().dim();
    std::vector<double> sum(d, 0.0);
    for (const auto& e : embeddings) {
        if (e.dim() != d) throw InvalidInput("embeddings have mixed dimensions");
        for (std::size_t k = 0; k < d; ++k) sum[k] += e.values[k];
    }
    for (auto& v : sum) v /= static_cast<double>(embeddings.size());
    return Embedding(std::move(sum));
}

Embedding encode_train(const Matrix& mel, const EncoderParams& params, EncoderTape& tape) {
    return forward(mel, params, true, &tape);
}

void encode_backward(const EncoderTape& tape, const EncoderParams& params, std::span<const double> d_embedding,
                     ParamSet& grads) {
    const auto& cfg = params.config;
    const auto& hw = params.weights.at("head.weight");
    const std::size_t E = hw.shape[0], C = hw.shape[1];
    if (d_embedding.size() != E) throw InvalidInput("gradient dimension does not match embed_dim");

    auto& d_hw = grads.at("head.weight");
    auto& d_hb = grads.at("head.bias");
    std::vector<double> d_pooled(C, 0.0);
    for (std::size_t r = 0; r < E; ++r) {
        d_hb.data[r] += d_embedding[r];
        for (std::size_t c = 0; c < C; ++c) {
            d_hw.data[r * C + c] += d_embedding[r] * tape.pooled[c];
            d_pooled[c] += hw.data[r * C + c] * d_embedding[r];
        }
    }

    const Map& last = tape.blocks.back().output;
    Map d = make_map(last.c, last.h, last.w);
    const std::size_t plane = last.h * last.w;
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t k = 0; k < plane; ++k) d.v[c * plane + k] = d_pooled[c] / static_cast<double>(plane);

    for (int b = cfg.n_blocks - 1; b >= 0; --b) {
        const auto& blk = tape.blocks[static_cast<std::size_t>(b)];
        const std::string name = block_name(b);
        relu_backward(blk.output, d);
        Map d_branch = d;  // skip path keeps `d` as the gradient w.r.t. the block input
        normalize_backward(blk.norm2, params.weights.at(name + ".norm2.scale"), d_branch,
                           grads.at(name + ".norm2.scale"), grads.at(name + ".norm2.shift"));
        Map d_hidden;
        conv3x3_backward(blk.hidden, params.weights.at(name + ".conv2.weight"), d_branch, &d_hidden,
                         grads.at(name + ".conv2.weight"));
        relu_backward(blk.hidden, d_hidden);
        normalize_backward(blk.norm1, params.weights.at(name + ".norm1.scale"), d_hidden,
                           grads.at(name + ".norm1.scale"), grads.at(name + ".norm1.shift"));
        Map d_in;
        conv3x3_backward(blk.input, params.weights.at(name + ".conv1.weight"), d_hidden, &d_in,
                         grads.at(name + ".conv1.weight"));
        for (std::size_t k = 0; k < d.v.size(); ++k) d.v[k] += d_in.v[k];
        if (b > 0) {
            const Map& prev = tape.blocks[static_cast<std::size_t>(b - 1)].output;
            d = avgpool2_backward(d, prev.h, prev.w);
        }
    }

    relu_backward(tape.stem_out, d);
    normalize_backward(tape.stem_norm, params.weights.at("stem.norm.scale"), d, grads.at("stem.norm.scale"),
                       grads.at("stem.norm.shift"));
    conv3x3_backward(tape.input, params.weights.at("stem.weight"), d, nullptr, grads.at("stem.weight"));
}

void update_running_stats(EncoderParams& params, const EncoderTape& tape) {
    const double m = params.config.norm_momentum;
    auto fold = [&](const std::string& prefix, const NormCache& cache) {
        auto& rm = params.buffers.at(prefix + ".running_mean").data;
        auto& rv = params.buffers.at(prefix + ".running_var").data;
        for (std::size_t c = 0; c < rm.size(); ++c) {
            rm[c] = (1.0 - m) * rm[c] + m * cache.mean[c];
            rv[c] = (1.0 - m) * rv[c] + m * cache.var[c];
        }
    };
    fold("stem.norm", tape.stem_norm);
    for (std::size_t b = 0; b < tape.blocks.size(); ++b) {
        const std::string name = block_name(static_cast<int>(b));
        fold(name + ".norm1", tape.blocks[b].norm1);
        fold(name + ".norm2", tape.blocks[b].norm2);
    }
}

}  // namespace xmodal

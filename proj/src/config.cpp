#include "xmodal/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

#include <json.hpp>

#include "xmodal/errors.hpp"
#include "xmodal/rng.hpp"

namespace xmodal {

using nlohmann::json;

const char* to_string(LossDirection d) { return d == LossDirection::Symmetric ? "symmetric" : "rows"; }
const char* to_string(ProjectionInit p) { return p == ProjectionInit::Identity ? "identity" : "random"; }
const char* to_string(ProbeTask t) { return t == ProbeTask::MultiClass ? "multi_class" : "multi_label"; }
const char* to_string(NormInference n) { return n == NormInference::Running ? "running" : "instance"; }

void TrainConfig::validate() const {
    if (batch_size < 1) throw InvalidConfig("train.batch_size must be positive");
    if (!(learning_rate >= 0.0)) throw InvalidConfig("train.learning_rate must be non-negative");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw InvalidConfig("adam betas must be in [0,1)");
    if (!(adam_eps > 0.0)) throw InvalidConfig("train.adam_eps must be positive");
    if (plateau_patience < 1 || early_stop_patience < 1) throw InvalidConfig("patience values must be positive");
    if (!(plateau_factor > 0.0 && plateau_factor < 1.0)) throw InvalidConfig("train.plateau_factor must be in (0,1)");
    if (max_epochs < 1) throw InvalidConfig("train.max_epochs must be positive");
    if (!(crop_seconds > 0.0)) throw InvalidConfig("train.crop_seconds must be positive");
    if (!(initial_logit_scale >= Temperature::kMinScale && initial_logit_scale <= Temperature::kMaxScale))
        throw InvalidConfig("train.initial_logit_scale must be within [0.01, 100]");
    if (projection_hidden < 0) throw InvalidConfig("train.projection_hidden must be >= 0");
    if (!(projection_lr_scale >= 0.0)) throw InvalidConfig("train.projection_lr_scale must be non-negative");
}

void ProbeConfig::validate() const {
    if (hidden_dim < 1 || max_epochs < 1 || batch_size < 1 || n_trials < 1)
        throw InvalidConfig("probe sizes must be positive");
    if (!(lr > 0.0)) throw InvalidConfig("probe.lr must be positive");
}

RunConfig RunConfig::resolved() const {
    RunConfig r = *this;
    r.encoder.seed = seed;
    r.train.seed = seed;
    r.probe.seed = seed;
    r.encoder.n_mels = dsp.n_mels;
    return r;
}

void RunConfig::validate() const {
    dsp.validate();
    encoder.validate();
    train.validate();
    probe.validate();
    if (encoder.n_mels != dsp.n_mels) throw InvalidConfig("encoder.n_mels must equal dsp.n_mels");
}

namespace {

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
    T out{};
    const char* begin = value.data();
    const char* end = begin + value.size();
    if constexpr (std::is_floating_point_v<T>) {
        // from_chars for doubles is incomplete in older libstdc++; strtod is exact enough.
        char* stop = nullptr;
        out = std::strtod(begin, &stop);
        if (value.empty() || stop != end) throw InvalidConfig("'" + key + "' expects a number, got '" + value + "'");
    } else {
        auto [ptr, ec] = std::from_chars(begin, end, out);
        if (ec != std::errc{} || ptr != end)
            throw InvalidConfig("'" + key + "' expects an integer, got '" + value + "'");
    }
    return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw InvalidConfig("'" + key + "' expects true/false, got '" + value + "'");
}

struct Field {
    std::string key;
    std::function<json(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

#define XMODAL_NUM(KEY, EXPR)                                                                         \
    Field{KEY, [](const RunConfig& c) { return json(c.EXPR); },                                      \
          [](RunConfig& c, const std::string& v) { c.EXPR = parse_number<decltype(c.EXPR)>(KEY, v); }}

#define XMODAL_BOOL(KEY, EXPR)                                             \
    Field{KEY, [](const RunConfig& c) { return json(c.EXPR); },           \
          [](RunConfig& c, const std::string& v) { c.EXPR = parse_bool(KEY, v); }}

const std::vector<Field>& fields() {
    static const std::vector<Field> table = {
        XMODAL_NUM("dsp.n_fft", dsp.n_fft),
        XMODAL_NUM("dsp.win_length", dsp.win_length),
        XMODAL_NUM("dsp.hop_length", dsp.hop_length),
        XMODAL_NUM("dsp.n_mels", dsp.n_mels),
        XMODAL_NUM("dsp.f_min", dsp.f_min),
        XMODAL_NUM("dsp.f_max", dsp.f_max),
        XMODAL_NUM("dsp.floor_epsilon", dsp.floor_epsilon),
        XMODAL_NUM("dsp.sample_rate", dsp.sample_rate),
        XMODAL_NUM("encoder.embed_dim", encoder.embed_dim),
        XMODAL_NUM("encoder.n_blocks", encoder.n_blocks),
        XMODAL_NUM("encoder.base_channels", encoder.base_channels),
        XMODAL_NUM("encoder.norm_momentum", encoder.norm_momentum),
        XMODAL_NUM("encoder.norm_eps", encoder.norm_eps),
        Field{"encoder.norm_inference", [](const RunConfig& c) { return json(to_string(c.encoder.norm_inference)); },
              [](RunConfig& c, const std::string& v) {
                  if (v == "running") c.encoder.norm_inference = NormInference::Running;
                  else if (v == "instance") c.encoder.norm_inference = NormInference::Instance;
                  else throw InvalidConfig("encoder.norm_inference must be running|instance");
              }},
        XMODAL_NUM("train.batch_size", train.batch_size),
        XMODAL_NUM("train.learning_rate", train.learning_rate),
        XMODAL_NUM("train.beta1", train.beta1),
        XMODAL_NUM("train.beta2", train.beta2),
        XMODAL_NUM("train.adam_eps", train.adam_eps),
        XMODAL_NUM("train.plateau_patience", train.plateau_patience),
        XMODAL_NUM("train.plateau_factor", train.plateau_factor),
        XMODAL_NUM("train.early_stop_patience", train.early_stop_patience),
        XMODAL_NUM("train.max_epochs", train.max_epochs),
        XMODAL_NUM("train.crop_seconds", train.crop_seconds),
        XMODAL_BOOL("train.learnable_temperature", train.learnable_temperature),
        XMODAL_NUM("train.initial_logit_scale", train.initial_logit_scale),
        XMODAL_NUM("train.projection_hidden", train.projection_hidden),
        XMODAL_NUM("train.projection_lr_scale", train.projection_lr_scale),
        Field{"train.loss_direction", [](const RunConfig& c) { return json(to_string(c.train.loss_direction)); },
              [](RunConfig& c, const std::string& v) {
                  if (v == "symmetric") c.train.loss_direction = LossDirection::Symmetric;
                  else if (v == "rows") c.train.loss_direction = LossDirection::RowsOnly;
                  else throw InvalidConfig("train.loss_direction must be symmetric|rows");
              }},
        Field{"train.projection_init", [](const RunConfig& c) { return json(to_string(c.train.projection_init)); },
              [](RunConfig& c, const std::string& v) {
                  if (v == "identity") c.train.projection_init = ProjectionInit::Identity;
                  else if (v == "random") c.train.projection_init = ProjectionInit::Random;
                  else throw InvalidConfig("train.projection_init must be identity|random");
              }},
        XMODAL_NUM("probe.hidden_dim", probe.hidden_dim),
        XMODAL_NUM("probe.lr", probe.lr),
        XMODAL_NUM("probe.max_epochs", probe.max_epochs),
        XMODAL_NUM("probe.batch_size", probe.batch_size),
        XMODAL_NUM("probe.n_trials", probe.n_trials),
        Field{"probe.task", [](const RunConfig& c) { return json(to_string(c.probe.task)); },
              [](RunConfig& c, const std::string& v) {
                  if (v == "multi_class") c.probe.task = ProbeTask::MultiClass;
                  else if (v == "multi_label") c.probe.task = ProbeTask::MultiLabel;
                  else throw InvalidConfig("probe.task must be multi_class|multi_label");
              }},
        XMODAL_NUM("seed", seed),
    };
    return table;
}

#undef XMODAL_NUM
#undef XMODAL_BOOL

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
    for (const auto& f : fields()) {
        if (f.key == key) {
            f.set(*this, value);
            return;
        }
    }
    throw InvalidConfig("unknown config key '" + key + "'");
}

std::string RunConfig::canonical_json() const {
    json root = json::object();
    for (const auto& f : fields()) {
        const auto dot = f.key.find('.');
        if (dot == std::string::npos) root[f.key] = f.get(*this);
        else root[f.key.substr(0, dot)][f.key.substr(dot + 1)] = f.get(*this);
    }
    return root.dump();
}

std::string RunConfig::content_hash() const { return hex64(fnv1a64(canonical_json())); }

RunConfig parse_run_config(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ParseError(lineno, "expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        try {
            cfg.set(key, value);
        } catch (const InvalidConfig& e) {
            throw ParseError(lineno, e.what());
        }
    }
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str());
}

std::string format_run_config(const RunConfig& cfg) {
    std::vector<std::pair<std::string, std::string>> lines;
    for (const auto& f : fields()) {
        const json v = f.get(cfg);
        lines.emplace_back(f.key, v.is_string() ? v.get<std::string>() : v.dump());
    }
    std::sort(lines.begin(), lines.end());
    std::string out;
    for (const auto& [k, v] : lines) out += k + " = " + v + "\n";
    return out;
}

}  // namespace xmodal

#include "xmodal/checkpoint.hpp"

#include <cstring>
#include <map>

#include <json.hpp>

#include "xmodal/binary_io.hpp"
#include "xmodal/errors.hpp"

namespace xmodal {

using nlohmann::json;

namespace {

// Every tensor the checkpoint carries, with a stable prefixed name. The
// returned pointers refer into `s`.
std::vector<std::pair<std::string, Tensor*>> tensor_slots(TrainState& s, Tensor& scalars) {
    std::vector<std::pair<std::string, Tensor*>> out;
    auto add = [&](const std::string& prefix, ParamSet& set) {
        for (std::size_t i = 0; i < set.size(); ++i) out.emplace_back(prefix + set.names()[i], &set.tensor(i));
    };
    add("encoder.weights/", s.model.encoder.weights);
    add("encoder.buffers/", s.model.encoder.buffers);
    add("f/", s.model.f.params);
    add("g/", s.model.g.params);
    add("adam.m/", s.adam.m);
    add("adam.v/", s.adam.v);
    out.emplace_back("state/scalars", &scalars);
    return out;
}

// Doubles that must survive bit-exactly travel as a tensor, not as JSON.
Tensor pack_scalars(const TrainState& s) {
    Tensor t({3});
    t[0] = s.model.temperature.log_scale;
    t[1] = s.learning_rate;
    t[2] = s.best_valid_loss;
    return t;
}

json history_json(const std::vector<EpochRecord>& history) {
    json arr = json::array();
    for (const auto& r : history) {
        json j = {{"epoch", r.epoch}, {"valid_loss", r.valid_loss}, {"lr", r.learning_rate}};
        j["train_loss"] = r.train_loss ? json(*r.train_loss) : json(nullptr);
        arr.push_back(std::move(j));
    }
    return arr;
}

}  // namespace

std::vector<unsigned char> serialize_checkpoint(const TrainState& state) {
    json meta;
    meta["config"] = format_run_config(state.config);
    meta["temperature_learnable"] = state.model.temperature.learnable;
    meta["epoch"] = state.epoch;
    meta["best_epoch"] = state.best_epoch;
    meta["epochs_without_improvement"] = state.epochs_without_improvement;
    meta["plateau_counter"] = state.plateau_counter;
    meta["stopped_early"] = state.stopped_early;
    meta["adam_step"] = state.adam.step;
    meta["shuffle_rng"] = state.shuffle_rng;
    meta["crop_rng"] = state.crop_rng;
    meta["history"] = history_json(state.history);
    const std::string meta_text = meta.dump();

    bin::Writer w;
    w.bytes(checkpoint_file::kMagic, 4);
    w.u32(checkpoint_file::kVersion);
    w.u64(meta_text.size());
    w.bytes(meta_text.data(), meta_text.size());

    TrainState copy = state;
    Tensor scalars = pack_scalars(state);
    const auto slots = tensor_slots(copy, scalars);
    w.u32(static_cast<std::uint32_t>(slots.size()));
    for (const auto& [name, t] : slots) {
        w.str(name);
        w.u32(static_cast<std::uint32_t>(t->shape.size()));
        for (auto d : t->shape) w.u64(d);
        w.bytes(t->data.data(), t->data.size() * sizeof(double));
    }
    return w.buffer();
}

TrainState deserialize_checkpoint(const std::vector<unsigned char>& bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), checkpoint_file::kMagic, 4) != 0)
        throw BadMagic("not an XMCK checkpoint");
    bin::Reader r(bytes);
    r.seek(4);
    const auto version = r.u32();
    if (version != checkpoint_file::kVersion)
        throw VersionMismatch("checkpoint version " + std::to_string(version) + ", expected " +
                              std::to_string(checkpoint_file::kVersion));
    const auto meta_len = r.u64();
    if (meta_len > r.remaining()) throw TruncatedPayload("checkpoint metadata is truncated");
    std::string meta_text(meta_len, '\0');
    r.bytes(meta_text.data(), meta_len);

    TrainState s;
    try {
        const json meta = json::parse(meta_text);
        const RunConfig cfg = parse_run_config(meta.at("config").get<std::string>()).resolved();
        s = init_train_state(cfg);
        s.model.temperature.learnable = meta.at("temperature_learnable").get<bool>();
        s.epoch = meta.at("epoch").get<int>();
        s.best_epoch = meta.at("best_epoch").get<int>();
        s.epochs_without_improvement = meta.at("epochs_without_improvement").get<int>();
        s.plateau_counter = meta.at("plateau_counter").get<int>();
        s.stopped_early = meta.at("stopped_early").get<bool>();
        s.adam.step = meta.at("adam_step").get<std::uint64_t>();
        s.shuffle_rng = meta.at("shuffle_rng").get<std::string>();
        s.crop_rng = meta.at("crop_rng").get<std::string>();
        for (const auto& h : meta.at("history")) {
            EpochRecord rec;
            rec.epoch = h.at("epoch").get<int>();
            rec.valid_loss = h.at("valid_loss").get<double>();
            rec.learning_rate = h.at("lr").get<double>();
            if (!h.at("train_loss").is_null()) rec.train_loss = h.at("train_loss").get<double>();
            s.history.push_back(rec);
        }
    } catch (const json::exception& e) {
        throw CorruptTensor(std::string("checkpoint metadata is malformed: ") + e.what());
    } catch (const ParseError& e) {
        throw CorruptTensor(std::string("checkpoint config is malformed: ") + e.what());
    }

    Tensor scalars({3});
    std::map<std::string, Tensor*> expected;
    for (const auto& [name, t] : tensor_slots(s, scalars)) expected.emplace(name, t);

    const auto count = r.u32();
    if (count != expected.size())
        throw CorruptTensor("checkpoint holds " + std::to_string(count) + " tensors, config implies " +
                            std::to_string(expected.size()));
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::string name = r.str();
        auto it = expected.find(name);
        if (it == expected.end()) throw CorruptTensor("unexpected tensor '" + name + "'");
        Tensor& t = *it->second;
        const auto rank = r.u32();
        std::vector<std::size_t> shape(rank);
        for (auto& d : shape) d = static_cast<std::size_t>(r.u64());
        if (shape != t.shape) throw CorruptTensor("tensor '" + name + "' has a shape that disagrees with the config");
        const std::size_t n = Tensor::element_count(shape);
        if (n * sizeof(double) > r.remaining()) throw TruncatedPayload("tensor '" + name + "' is truncated");
        r.bytes(t.data.data(), n * sizeof(double));
        expected.erase(it);
    }
    if (r.remaining() != 0) throw CorruptTensor("unexpected bytes after the last tensor");

    s.model.temperature.log_scale = scalars[0];
    s.learning_rate = scalars[1];
    s.best_valid_loss = scalars[2];
    return s;
}

void save_checkpoint(const TrainState& state, const std::filesystem::path& path) {
    bin::write_file_atomic(path, serialize_checkpoint(state));
}

TrainState load_checkpoint(const std::filesystem::path& path) { return deserialize_checkpoint(bin::read_file(path)); }

}  // namespace xmodal

#include <doctest.h>

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <unistd.h>

#include "xmodal/binary_io.hpp"
#include "xmodal/checkpoint.hpp"
#include "xmodal/config.hpp"
#include "xmodal/distill.hpp"
#include "xmodal/embeddings.hpp"
#include "xmodal/errors.hpp"
#include "xmodal/manifest.hpp"
#include "xmodal/rng.hpp"
#include "xmodal/wav.hpp"

using namespace xmodal;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("xmodal_test_io_" + std::to_string(::getpid()));
    fs::create_directories(dir);
    return dir / name;
}

const char* kHeader = R"({"format":"xmodal-manifest","version":1,"classes":["dog","cat"]})";

std::string record(const std::string& id, const std::string& extra = "") {
    return R"({"clip_id":")" + id + R"(","audio_path":"a/)" + id +
           R"(.wav","sample_rate":16000,"duration_seconds":2.0,"labels":["dog"],"split":"train")" + extra + "}";
}

RunConfig tiny_run() {
    RunConfig cfg;
    cfg.dsp.n_mels = 16;
    cfg.dsp.hop_length = 320;
    cfg.encoder.embed_dim = 8;
    cfg.encoder.n_blocks = 2;
    cfg.encoder.base_channels = 2;
    cfg.seed = 17;
    return cfg.resolved();
}

std::vector<unsigned char> slurp(const fs::path& p) { return bin::read_file(p); }

}  // namespace

TEST_CASE("manifest parsing") {
    const std::string text = std::string(kHeader) + "\n" + record("c1") + "\n" +
                             record("c2", R"(,"segments":[{"onset":0.5,"offset":1.5,"label":"cat"}])") + "\n";
    const DatasetManifest m = parse_manifest(text, "/data");
    REQUIRE(m.records.size() == 2);
    CHECK(m.classes == std::vector<std::string>{"dog", "cat"});
    CHECK(m.records[1].segments.at(0) == SegmentAnnotation{"c2", 0.5, 1.5, "cat"});
    CHECK(m.resolve_audio(m.records[0]) == fs::path("/data/a/c1.wav"));
    CHECK(m.find("c2") == &m.records[1]);
    CHECK(m.find("zz") == nullptr);
    CHECK(m.segments().size() == 1);
}

TEST_CASE("manifest errors carry line numbers") {
    CHECK_THROWS_AS(parse_manifest(""), ParseError);
    try {
        parse_manifest(record("c1"));
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line() == 1);
    }
    const std::string dup = std::string(kHeader) + "\n" + record("c1") + "\n" + record("c1") + "\n";
    try {
        parse_manifest(dup);
        FAIL("expected DuplicateId");
    } catch (const DuplicateId& e) {
        CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }
    const std::string unknown = std::string(kHeader) + "\n" +
                                R"({"clip_id":"x","audio_path":"x.wav","sample_rate":16000,"duration_seconds":1,"labels":["cow"],"split":"train"})";
    CHECK_THROWS_AS(parse_manifest(unknown), UnknownLabel);
    const std::string late = std::string(kHeader) + "\n" +
                             record("c1", R"(,"segments":[{"onset":1.0,"offset":2.5,"label":"dog"}])");
    try {
        parse_manifest(late);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line() == 2);
        CHECK(std::string(e.what()).find("offset") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_manifest(std::string(kHeader) + "\n{not json"), ParseError);
    CHECK_THROWS_AS(parse_manifest(std::string(kHeader) + "\n" + record("c1", R"(,"split":"holdout")")), ParseError);
    const std::string gap = std::string(kHeader) + "\n" + record("a", R"(,"fold":1)") + "\n" + record("b", R"(,"fold":3)");
    CHECK_THROWS_AS(parse_manifest(gap), ParseError);
}

TEST_CASE("manifest round trip") {
    DatasetManifest m;
    m.classes = {"x", "y", "z"};
    for (int i = 0; i < 4; ++i) {
        ManifestRecord r;
        r.clip_id = "clip" + std::to_string(i);
        r.audio_path = "audio/" + r.clip_id + ".wav";
        r.duration_seconds = 3.25;
        r.labels = {m.classes[static_cast<std::size_t>(i % 3)]};
        if (i == 2) r.labels.push_back("z");
        r.split = static_cast<Split>(i % 3);
        r.fold = 1 + i % 2;
        if (i == 1) r.segments.push_back({r.clip_id, 0.1, 0.3, "y"});
        m.records.push_back(r);
    }
    const fs::path p = scratch("m.jsonl");
    write_manifest(m, p);
    const DatasetManifest back = read_manifest(p);
    CHECK(back.same_content(m));
    CHECK(back.base_dir == p.parent_path());
    CHECK(format_manifest(back) == format_manifest(m));
    CHECK(m.filter(Split::Valid).records.size() == 1);
    CHECK_THROWS_AS(read_manifest(scratch("missing.jsonl")), IoError);
}

TEST_CASE("embedding files round trip bit-exactly") {
    Rng rng = seeded_rng(1, "emb");
    EmbeddingTable t(512);
    for (int i = 0; i < 3; ++i) {
        std::vector<float> row(512);
        for (auto& v : row) v = static_cast<float>(rng.normal());
        t.add("id" + std::to_string(i), row);
    }
    const fs::path p = scratch("e.xmeb");
    write_embeddings(t, p);
    const EmbeddingTable back = read_embeddings(p);
    CHECK(back == t);
    CHECK(back.dim() == 512);
    CHECK(back.ids() == std::vector<std::string>{"id0", "id1", "id2"});
    const auto bytes = slurp(p);
    CHECK(std::memcmp(bytes.data(), "XMEB", 4) == 0);
    CHECK(bytes.size() == 28 + 3 * 512 * 4 + 3 * (4 + 3));
    CHECK(serialize_embeddings(back) == bytes);
}

TEST_CASE("embedding file errors") {
    EmbeddingTable t(4);
    t.add("a", std::vector<float>{1, 2, 3, 4});
    CHECK_THROWS_AS(t.add("a", std::vector<float>{1, 2, 3, 4}), DuplicateId);
    CHECK_THROWS_AS(t.add("b", std::vector<float>{1, 2}), InvalidInput);
    auto bytes = serialize_embeddings(t);
    auto truncated = bytes;
    truncated.pop_back();
    CHECK_THROWS_AS(deserialize_embeddings(truncated), TruncatedPayload);
    auto short_payload = std::vector<unsigned char>(bytes.begin(), bytes.begin() + 30);
    CHECK_THROWS_AS(deserialize_embeddings(short_payload), TruncatedPayload);
    auto magic = bytes;
    magic[0] = 'Y';
    CHECK_THROWS_AS(deserialize_embeddings(magic), BadMagic);
    auto version = bytes;
    version[4] = 2;
    CHECK_THROWS_AS(deserialize_embeddings(version), VersionMismatch);
}

TEST_CASE("teacher store lookups") {
    EmbeddingTable t(2);
    t.add("a", std::vector<float>{0.5f, -1.0f});
    const TeacherStore store(t);
    CHECK(store.contains("a"));
    CHECK(store.lookup("a").values == std::vector<double>{0.5, -1.0});
    try {
        store.row("missing");
        FAIL("expected MissingTeacherEmbedding");
    } catch (const MissingTeacherEmbedding& e) {
        CHECK(e.clip_id() == "missing");
        CHECK(std::string(e.what()).find("missing") != std::string::npos);
    }
}

TEST_CASE("run config canonical form and hashing") {
    const RunConfig a;
    RunConfig b;
    CHECK(a.content_hash() == b.content_hash());
    b.train.learning_rate = 0.002;
    CHECK(a.content_hash() != b.content_hash());
    const std::string j = a.canonical_json();
    CHECK(j.find("\"dsp\"") < j.find("\"encoder\""));

    const RunConfig parsed = parse_run_config("# comment\n\ntrain.learning_rate = 0.002\nseed=4\n");
    CHECK(parsed.train.learning_rate == 0.002);
    CHECK(parsed.seed == 4);
    CHECK(parse_run_config(format_run_config(b)) == b);
    CHECK_THROWS_AS(parse_run_config("nope = 1\n"), ParseError);
    CHECK_THROWS_AS(parse_run_config("train.batch_size = many\n"), ParseError);
    CHECK_THROWS_AS(parse_run_config("just text\n"), ParseError);

    RunConfig bad;
    bad.train.plateau_factor = 1.5;
    CHECK_THROWS_AS(bad.validate(), InvalidConfig);
    RunConfig odd;
    odd.train.learning_rate = 0.1 + 0.2;
    CHECK(parse_run_config(format_run_config(odd)).train.learning_rate == odd.train.learning_rate);
}

TEST_CASE("seeded streams") {
    Rng a = seeded_rng(3, "init"), b = seeded_rng(3, "init"), c = seeded_rng(3, "crop"), d = seeded_rng(4, "init");
    bool differ_label = false, differ_seed = false;
    for (int i = 0; i < 100; ++i) {
        const auto x = a.next_u64();
        CHECK(x == b.next_u64());
        differ_label = differ_label || x != c.next_u64();
        differ_seed = differ_seed || x != d.next_u64();
    }
    CHECK(differ_label);
    CHECK(differ_seed);

    Rng u = seeded_rng(5, "uniform");
    double sum = 0.0;
    for (int i = 0; i < 100000; ++i) {
        const double v = u.uniform();
        CHECK_FALSE((v < 0.0 || v >= 1.0));
        sum += v;
    }
    CHECK(sum / 1e5 >= 0.49);
    CHECK(sum / 1e5 <= 0.51);

    Rng s = seeded_rng(6, "state");
    s.next_u64();
    Rng restored;
    restored.set_state(s.state());
    CHECK(restored == s);
    CHECK(restored.next_u64() == s.next_u64());
}

TEST_CASE("wav round trip and rejection of stereo") {
    AudioClip c{"w", {0.0, 0.5, -0.5, 0.999, -1.0, 0.25}, 16000};
    const fs::path p = scratch("w.wav");
    write_wav(p, c);
    const AudioClip back = read_wav(p, "w");
    REQUIRE(back.samples.size() == c.samples.size());
    for (std::size_t i = 0; i < c.samples.size(); ++i) CHECK(back.samples[i] == quantize_pcm16(c.samples[i]));
    CHECK(back.sample_rate == 16000);

    auto bytes = slurp(p);
    bytes[22] = 2;  // channel count
    bin::write_file_atomic(p, bytes);
    CHECK_THROWS_AS(read_wav(p), InvalidInput);
    CHECK_THROWS_AS(read_wav(scratch("nope.wav")), IoError);
}

TEST_CASE("atomic writes leave no temporary files") {
    const fs::path p = scratch("atomic/out.bin");
    fs::create_directories(p.parent_path());
    bin::write_file_atomic(p, std::string("first"));
    bin::write_file_atomic(p, std::string("second"));
    std::size_t entries = 0;
    for ([[maybe_unused]] const auto& e : fs::directory_iterator(p.parent_path())) ++entries;
    CHECK(entries == 1);
    const auto bytes = slurp(p);
    CHECK(std::string(bytes.begin(), bytes.end()) == "second");
}

TEST_CASE("checkpoint round trip preserves state and forward outputs") {
    TrainState s = init_train_state(tiny_run());
    s.epoch = 3;
    s.best_valid_loss = 1.25;
    s.learning_rate = 0.0005;
    s.history.push_back({0, std::nullopt, 2.0, 0.001});
    s.history.push_back({1, 1.5, 1.75, 0.001});
    s.model.temperature.log_scale = 2.5;
    s.adam.m.tensor(0)[0] = 0.125;

    const fs::path p = scratch("s.xmck");
    save_checkpoint(s, p);
    const TrainState back = load_checkpoint(p);
    CHECK(back == s);

    Rng rng = seeded_rng(2, "ckpt");
    MelSpectrogram mel{Matrix(20, 16), 0.02, 16};
    for (auto& v : mel.values.data()) v = rng.normal();
    CHECK(encode_clip(mel, back.model.encoder) == encode_clip(mel, s.model.encoder));
    CHECK(serialize_checkpoint(back) == slurp(p));
}

TEST_CASE("checkpoint corruption is detected") {
    const auto bytes = serialize_checkpoint(init_train_state(tiny_run()));
    auto version = bytes;
    version[4] ^= 0x01;
    CHECK_THROWS_AS(deserialize_checkpoint(version), VersionMismatch);
    auto magic = bytes;
    magic[1] = 'Q';
    CHECK_THROWS_AS(deserialize_checkpoint(magic), BadMagic);
    auto truncated = bytes;
    truncated.resize(bytes.size() - 5);
    CHECK_THROWS_AS(deserialize_checkpoint(truncated), TruncatedPayload);
    auto trailing = bytes;
    trailing.push_back(0);
    CHECK_THROWS_AS(deserialize_checkpoint(trailing), CorruptTensor);

    // bump the leading dimension of the "state/scalars" tensor
    const std::string name = "state/scalars";
    auto it = std::search(bytes.begin(), bytes.end(), name.begin(), name.end());
    REQUIRE(it != bytes.end());
    auto shape = bytes;
    const auto pos = static_cast<std::size_t>(it - bytes.begin()) + name.size() + 4;
    shape[pos] = 4;
    CHECK_THROWS_AS(deserialize_checkpoint(shape), CorruptTensor);
}

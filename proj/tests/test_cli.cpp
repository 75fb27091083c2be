#include <doctest.h>

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "xmodal/binary_io.hpp"
#include "xmodal/cli.hpp"
#include "xmodal/embeddings.hpp"
#include "xmodal/manifest.hpp"

using namespace xmodal;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code = -1;
    std::string out, err;
};

Run run(std::vector<std::string> args) {
    std::ostringstream out, err;
    Run r;
    r.code = run_cli(args, out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

const fs::path& root() {
    static const fs::path p = [] {
        fs::path d = fs::temp_directory_path() / ("xmodal_cli_" + std::to_string(getpid()));
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return p;
}

std::string path(const std::string& name) { return (root() / name).string(); }

const std::string& config() {
    static const std::string p = [] {
        const std::string file = path("tiny.cfg");
        std::ofstream(file) << "# tiny model for fast tests\n"
                               "dsp.hop_length = 320\n"
                               "dsp.n_mels = 16\n"
                               "encoder.embed_dim = 16\n"
                               "encoder.base_channels = 4\n"
                               "encoder.n_blocks = 2\n"
                               "train.batch_size = 8\n"
                               "train.crop_seconds = 1\n"
                               "probe.hidden_dim = 16\n"
                               "probe.max_epochs = 20\n"
                               "probe.n_trials = 2\n";
        return file;
    }();
    return p;
}

// 16 five-second clips plus 4 annotated event clips, 16-d teacher.
const fs::path& dataset() {
    static const fs::path d = [] {
        const fs::path dir = root() / "data";
        const Run r = run({"gen-synthetic", "--out-dir", dir.string(), "--n-clips", "16", "--n-classes", "4",
                           "--clip-seconds", "5", "--dim", "16", "--event-clips", "4", "--folds", "2", "--seed",
                           "4"});
        REQUIRE(r.code == 0);
        return dir;
    }();
    return d;
}

std::string data(const std::string& name) { return (dataset() / name).string(); }

const std::string& checkpoint() {
    static const std::string p = [] {
        const std::string ckpt = path("model.xmck");
        const Run r = run({"distill", "--train-manifest", data("train.jsonl"), "--valid-manifest",
                           data("valid.jsonl"), "--teacher", data("teacher.xmeb"), "--config", config(),
                           "--out-checkpoint", ckpt, "--max-epochs", "1"});
        INFO(r.err);
        REQUIRE(r.code == 0);
        return ckpt;
    }();
    return p;
}

// Single-label clips only, for the multi-class probe.
const std::string& plain_manifest() {
    static const std::string p = [] {
        const DatasetManifest m = read_manifest(data("manifest.jsonl"));
        DatasetManifest plain;
        plain.classes = m.classes;
        for (const auto& r : m.records)
            if (r.segments.empty()) plain.records.push_back(r);
        const std::string file = data("plain.jsonl");
        write_manifest(plain, file);
        return file;
    }();
    return p;
}

json parse_one(const std::string& text) { return json::parse(text); }

std::size_t count_lines(const std::string& file) {
    std::ifstream in(file);
    std::size_t n = 0;
    for (std::string line; std::getline(in, line);)
        if (!line.empty()) ++n;
    return n;
}

}  // namespace

TEST_CASE("help exits 0 and unknown flags or commands exit 2") {
    CHECK(run({"--help"}).code == 0);
    CHECK(run({"distill", "--help"}).code == 0);
    CHECK(run({"distill", "--no-such-flag"}).code == 2);
    CHECK(run({"frobnicate"}).code == 2);
    CHECK(run({}).code == 2);
    CHECK(run({"eval-cmr", "--queries", "a", "--corpus", "b", "--manifest", "c", "--direction", "up"}).code == 2);
}

TEST_CASE("gen-synthetic prints one summary and refuses to overwrite") {
    const Run r = run({"gen-synthetic", "--out-dir", path("g"), "--n-clips", "8", "--clip-seconds", "0.5", "--dim",
                       "8", "--folds", "0"});
    REQUIRE(r.code == 0);
    const json j = parse_one(r.out);
    CHECK(j.at("n_clips") == 8);
    CHECK(j.at("teacher_dim") == 8);
    CHECK(fs::exists(path("g") + "/teacher.xmeb"));
    const Run again = run({"gen-synthetic", "--out-dir", path("g"), "--n-clips", "8", "--folds", "0"});
    CHECK(again.code == 2);
    CHECK(again.err.find("--force") != std::string::npos);
    CHECK(run({"gen-synthetic", "--out-dir", path("g"), "--n-clips", "8", "--clip-seconds", "0.5", "--dim", "8",
               "--folds", "0", "--force"})
              .code == 0);
}

TEST_CASE("distill for one epoch writes checkpoints and a log") {
    const std::string& ckpt = checkpoint();
    CHECK(fs::exists(ckpt));
    CHECK(fs::exists(ckpt + ".last"));
    CHECK(count_lines(ckpt + ".log.jsonl") == 2);
    std::ifstream log(ckpt + ".log.jsonl");
    std::string first;
    std::getline(log, first);
    const json j = json::parse(first);
    CHECK(j.at("epoch") == 0);
    CHECK(j.at("train_loss").is_null());
    CHECK(j.contains("timestamp"));
}

TEST_CASE("distill leaves the teacher file byte-identical") {
    const auto before = bin::read_file(data("teacher.xmeb"));
    const Run r = run({"distill", "--train-manifest", data("train.jsonl"), "--valid-manifest", data("valid.jsonl"),
                       "--teacher", data("teacher.xmeb"), "--config", config(), "--out-checkpoint",
                       path("hash.xmck"), "--max-epochs", "1"});
    REQUIRE(r.code == 0);
    const json j = parse_one(r.out);
    CHECK(j.at("teacher_hash_before") == j.at("teacher_hash_after"));
    CHECK(bin::read_file(data("teacher.xmeb")) == before);
}

TEST_CASE("distill with a missing teacher id exits 2 naming the clip") {
    const EmbeddingTable full = read_embeddings(data("teacher.xmeb"));
    const DatasetManifest train = read_manifest(data("train.jsonl"));
    const std::string dropped = train.records[1].clip_id;
    EmbeddingTable partial(full.dim());
    for (std::size_t i = 0; i < full.count(); ++i)
        if (full.ids()[i] != dropped) partial.add(full.ids()[i], full.embedding(i));
    write_embeddings(partial, path("partial.xmeb"));
    const Run r = run({"distill", "--train-manifest", data("train.jsonl"), "--valid-manifest", data("valid.jsonl"),
                       "--teacher", path("partial.xmeb"), "--config", config(), "--out-checkpoint",
                       path("nope.xmck"), "--max-epochs", "1"});
    CHECK(r.code == 2);
    CHECK(r.err.find(dropped) != std::string::npos);
    CHECK_FALSE(fs::exists(path("nope.xmck")));
}

TEST_CASE("missing input files exit 1") {
    const Run r = run({"distill", "--train-manifest", path("absent.jsonl"), "--valid-manifest", data("valid.jsonl"),
                       "--teacher", data("teacher.xmeb"), "--out-checkpoint", path("x.xmck")});
    CHECK(r.code == 1);
    CHECK(run({"eval-zeroshot", "--embeddings", path("absent.xmeb"), "--labels", data("labels.xmeb"), "--manifest",
               data("test.jsonl")})
              .code == 1);
}

TEST_CASE("bad config values exit 2") {
    std::ofstream(path("bad.cfg")) << "train.batch_size = many\n";
    CHECK(run({"eval-zeroshot", "--embeddings", data("teacher.xmeb"), "--labels", data("labels.xmeb"), "--manifest",
               data("manifest.jsonl"), "--config", path("bad.cfg")})
              .code == 2);
    std::ofstream(path("unknown.cfg")) << "train.colour = blue\n";
    CHECK(run({"eval-zeroshot", "--embeddings", data("teacher.xmeb"), "--labels", data("labels.xmeb"), "--manifest",
               data("manifest.jsonl"), "--config", path("unknown.cfg")})
              .code == 2);
}

TEST_CASE("embed at frame level keys one row per second") {
    const Run r = run({"embed", "--manifest", data("train.jsonl"), "--checkpoint", checkpoint(), "--level", "frame",
                       "--out", path("frames.xmeb")});
    REQUIRE(r.code == 0);
    const EmbeddingTable t = read_embeddings(path("frames.xmeb"));
    const DatasetManifest m = read_manifest(data("train.jsonl"));
    const std::string id = m.records[0].clip_id;
    for (int k = 0; k < 5; ++k) CHECK(t.find(id + "#" + std::to_string(k)).has_value());
    CHECK_FALSE(t.find(id + "#5").has_value());
    CHECK(t.dim() == 16);
}

TEST_CASE("embed at clip level equals the mean of the frames and is deterministic") {
    REQUIRE(run({"embed", "--manifest", data("train.jsonl"), "--checkpoint", checkpoint(), "--level", "frame",
                 "--out", path("f2.xmeb")})
                .code == 0);
    REQUIRE(run({"embed", "--manifest", data("train.jsonl"), "--checkpoint", checkpoint(), "--out",
                 path("c1.xmeb")})
                .code == 0);
    REQUIRE(run({"embed", "--manifest", data("train.jsonl"), "--checkpoint", checkpoint(), "--out", path("c2.xmeb"),
                 "--threads", "3"})
                .code == 0);
    CHECK(bin::read_file(path("c1.xmeb")) == bin::read_file(path("c2.xmeb")));
    const EmbeddingTable clips = read_embeddings(path("c1.xmeb"));
    const EmbeddingTable frames = read_embeddings(path("f2.xmeb"));
    const std::string id = clips.ids()[0];
    std::vector<double> mean(16, 0.0);
    int n = 0;
    for (std::size_t i = 0; i < frames.count(); ++i) {
        if (frames.ids()[i].rfind(id + "#", 0) != 0) continue;
        for (std::size_t k = 0; k < 16; ++k) mean[k] += frames.row(i)[k];
        ++n;
    }
    REQUIRE(n == 5);
    for (std::size_t k = 0; k < 16; ++k) CHECK(clips.row(0)[k] == doctest::Approx(mean[k] / n).epsilon(1e-6));
}

TEST_CASE("embed with a corrupted checkpoint exits 1") {
    auto bytes = bin::read_file(checkpoint());
    bytes[4] ^= 0x7F;
    bin::write_file_atomic(path("broken.xmck"), std::string(bytes.begin(), bytes.end()));
    const Run r = run({"embed", "--manifest", data("train.jsonl"), "--checkpoint", path("broken.xmck"), "--out",
                       path("never.xmeb")});
    CHECK(r.code == 1);
    CHECK_FALSE(fs::exists(path("never.xmeb")));
}

TEST_CASE("eval-zeroshot with audio equal to the class centroids scores 1") {
    const DatasetManifest m = read_manifest(data("manifest.jsonl"));
    const EmbeddingTable labels = read_embeddings(data("labels.xmeb"));
    EmbeddingTable audio(labels.dim());
    for (const auto& r : m.records) audio.add(r.clip_id, labels.embedding(*labels.find(r.labels[0])));
    write_embeddings(audio, path("centroids.xmeb"));
    const Run r = run({"eval-zeroshot", "--embeddings", path("centroids.xmeb"), "--labels", data("labels.xmeb"),
                       "--manifest", data("manifest.jsonl"), "--out", path("zs.json")});
    REQUIRE(r.code == 0);
    const json j = parse_one(r.out);
    CHECK(j.at("metrics").at("acc") == 1.0);
    CHECK(bin::read_file(path("zs.json")) == std::vector<unsigned char>(r.out.begin(), r.out.end()));
}

TEST_CASE("eval-cmr with self matches and corpus = queries scores 1") {
    const Run r = run({"eval-cmr", "--queries", data("teacher.xmeb"), "--corpus", data("teacher.xmeb"), "--manifest",
                       data("manifest.jsonl"), "--include-self"});
    REQUIRE(r.code == 0);
    CHECK(parse_one(r.out).at("metrics").at("mrr") == 1.0);
    const Run ex = run({"eval-cmr", "--queries", data("teacher.xmeb"), "--corpus", data("teacher.xmeb"),
                        "--manifest", data("manifest.jsonl"), "--direction", "i2a"});
    REQUIRE(ex.code == 0);
    const double mrr = parse_one(ex.out).at("metrics").at("mrr");
    CHECK(mrr > 0.0);
    CHECK(mrr <= 1.0);
}

TEST_CASE("eval-cmr with an id absent from the embeddings exits 2") {
    const EmbeddingTable full = read_embeddings(data("teacher.xmeb"));
    EmbeddingTable partial(full.dim());
    for (std::size_t i = 1; i < full.count(); ++i) partial.add(full.ids()[i], full.embedding(i));
    write_embeddings(partial, path("short.xmeb"));
    const Run r = run({"eval-cmr", "--queries", path("short.xmeb"), "--corpus", data("teacher.xmeb"), "--manifest",
                       data("manifest.jsonl"), "--out", path("cmr_never.json")});
    CHECK(r.code == 2);
    CHECK(r.err.find(full.ids()[0]) != std::string::npos);
    CHECK_FALSE(fs::exists(path("cmr_never.json")));
}

TEST_CASE("eval-probe prints exactly one JSON document") {
    const Run r = run({"eval-probe", "--train-embeddings", data("teacher.xmeb"), "--train-manifest",
                       plain_manifest(), "--eval-embeddings", data("teacher.xmeb"), "--eval-manifest",
                       plain_manifest(), "--config", config()});
    REQUIRE(r.code == 0);
    const json j = parse_one(r.out);
    CHECK(j.at("task") == "probe_multi_class");
    CHECK(j.contains("config_hash"));
}

TEST_CASE("eval-sweep writes one CSV row per percentage") {
    const Run r = run({"eval-sweep", "--train-embeddings", data("teacher.xmeb"), "--train-manifest",
                       plain_manifest(), "--eval-embeddings", data("teacher.xmeb"), "--eval-manifest",
                       plain_manifest(), "--config", config(), "--out", path("sweep.json")});
    REQUIRE(r.code == 0);
    CHECK(count_lines(path("sweep.json") + ".csv") == 1 + 7);
    const Run custom = run({"eval-sweep", "--train-embeddings", data("teacher.xmeb"), "--train-manifest",
                            plain_manifest(), "--eval-embeddings", data("teacher.xmeb"), "--eval-manifest",
                            plain_manifest(), "--config", config(), "--percentages", "50,100", "--csv",
                            path("two.csv")});
    REQUIRE(custom.code == 0);
    CHECK(count_lines(path("two.csv")) == 1 + 2);
}

TEST_CASE("eval-segment runs with a fixed and a cross-validated threshold") {
    REQUIRE(run({"embed", "--manifest", data("manifest.jsonl"), "--checkpoint", checkpoint(), "--level", "frame",
                 "--out", path("all_frames.xmeb")})
                .code == 0);
    DatasetManifest m = read_manifest(data("manifest.jsonl"));
    DatasetManifest events;
    events.classes = m.classes;
    for (const auto& r : m.records)
        if (!r.segments.empty()) events.records.push_back(r);
    REQUIRE(events.records.size() == 4);
    // Relative audio paths resolve against the manifest's directory.
    write_manifest(events, data("events.jsonl"));
    const Run fixed = run({"eval-segment", "--frame-embeddings", path("all_frames.xmeb"), "--manifest",
                           data("events.jsonl"), "--threshold", "0.5"});
    REQUIRE(fixed.code == 0);
    const double f1 = parse_one(fixed.out).at("metrics").at("f1");
    CHECK(f1 >= 0.0);
    CHECK(f1 <= 1.0);
    const Run cv = run({"eval-segment", "--frame-embeddings", path("all_frames.xmeb"), "--manifest",
                        data("events.jsonl"), "--folds", "2"});
    INFO(cv.err);
    REQUIRE(cv.code == 0);
    CHECK(parse_one(cv.out).at("details").contains("threshold"));
}

TEST_CASE("report merges eval outputs keyed by file stem") {
    REQUIRE(run({"eval-cmr", "--queries", data("teacher.xmeb"), "--corpus", data("teacher.xmeb"), "--manifest",
                 data("manifest.jsonl"), "--out", path("cmr.json")})
                .code == 0);
    REQUIRE(run({"eval-zeroshot", "--embeddings", data("teacher.xmeb"), "--labels", data("labels.xmeb"),
                 "--manifest", data("manifest.jsonl"), "--out", path("zeroshot.json")})
                .code == 0);
    const Run r = run({"report", path("cmr.json"), path("zeroshot.json")});
    REQUIRE(r.code == 0);
    const json j = parse_one(r.out);
    CHECK(j.at("metrics").contains("cmr.mrr"));
    CHECK(j.at("metrics").contains("zeroshot.acc"));
}

TEST_CASE("identical commands give byte-identical reports") {
    const std::vector<std::string> args = {"eval-probe", "--train-embeddings", data("teacher.xmeb"),
                                           "--train-manifest", plain_manifest(), "--eval-embeddings",
                                           data("teacher.xmeb"), "--eval-manifest", plain_manifest(),
                                           "--config", config(), "--seed", "7"};
    CHECK(run(args).out == run(args).out);
}

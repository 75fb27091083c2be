#include <doctest.h>

#include <cmath>
#include <numeric>

#include "xmodal/checkpoint.hpp"
#include "xmodal/distill.hpp"
#include "xmodal/errors.hpp"
#include "xmodal/synthetic.hpp"

using namespace xmodal;

namespace {

RunConfig tiny_config() {
    RunConfig cfg;
    cfg.dsp.hop_length = 320;
    cfg.dsp.n_mels = 16;
    cfg.encoder.embed_dim = 16;
    cfg.encoder.base_channels = 4;
    cfg.encoder.n_blocks = 2;
    cfg.train.batch_size = 8;
    cfg.train.crop_seconds = 1.0;
    cfg.train.max_epochs = 4;
    cfg.seed = 3;
    return cfg.resolved();
}

SyntheticDataset tiny_data(int n_clips = 24) {
    SyntheticConfig sc;
    sc.n_clips = n_clips;
    sc.n_classes = 4;
    sc.clip_seconds = 1.5;
    sc.dim = 16;
    sc.n_folds = 0;
    sc.seed = 11;
    return generate_synthetic(sc);
}

std::vector<AudioClip> split_clips(const SyntheticDataset& d, Split s) {
    std::vector<AudioClip> out;
    for (std::size_t i = 0; i < d.clips.size(); ++i)
        if (d.manifest.records[i].split == s) out.push_back(d.clips[i]);
    return out;
}

AudioClip ramp_clip(std::size_t n) {
    AudioClip c{"ramp", std::vector<double>(n), 16000};
    for (std::size_t i = 0; i < n; ++i) c.samples[i] = static_cast<double>(i + 1);
    return c;
}

}  // namespace

TEST_CASE("crop of a clip no longer than the crop is the padded clip from zero") {
    Rng rng(1);
    const AudioClip c = ramp_clip(3 * 16000);
    std::size_t offset = 99;
    const AudioClip out = sample_crop(c, 5.0, rng, &offset);
    CHECK(offset == 0);
    REQUIRE(out.samples.size() == 5u * 16000u);
    for (std::size_t i = 0; i < c.samples.size(); ++i) REQUIRE(out.samples[i] == c.samples[i]);
    for (std::size_t i = c.samples.size(); i < out.samples.size(); ++i) REQUIRE(out.samples[i] == 0.0);

    const AudioClip exact = ramp_clip(16000);
    const AudioClip same = sample_crop(exact, 1.0, rng, &offset);
    CHECK(offset == 0);
    CHECK(same.samples == exact.samples);
}

TEST_CASE("crop is contiguous and its offset is uniform") {
    const std::size_t sr = 100;
    AudioClip c{"ramp", std::vector<double>(10 * sr), static_cast<int>(sr)};
    std::iota(c.samples.begin(), c.samples.end(), 0.0);
    Rng rng(5);
    const std::size_t max_offset = c.samples.size() - 5 * sr;
    const int bins = 20, draws = 10000;
    std::vector<int> counts(bins, 0);
    for (int k = 0; k < draws; ++k) {
        std::size_t offset = 0;
        const AudioClip out = sample_crop(c, 5.0, rng, &offset);
        REQUIRE(offset <= max_offset);
        REQUIRE(out.samples.size() == 5 * sr);
        REQUIRE(out.samples.front() == static_cast<double>(offset));
        REQUIRE(out.samples.back() == static_cast<double>(offset + 5 * sr - 1));
        counts[std::min<std::size_t>(bins - 1, offset * bins / (max_offset + 1))] += 1;
    }
    // Offsets 0..500 in 20 bins: bin widths differ by at most one offset.
    double chi2 = 0.0;
    for (int b = 0; b < bins; ++b) {
        std::size_t width = 0;
        for (std::size_t o = 0; o <= max_offset; ++o)
            if (static_cast<int>(o * bins / (max_offset + 1)) == b) ++width;
        const double expected = draws * static_cast<double>(width) / static_cast<double>(max_offset + 1);
        chi2 += (counts[b] - expected) * (counts[b] - expected) / expected;
    }
    // 19 degrees of freedom, p = 0.001.
    CHECK(chi2 < 43.82);
}

TEST_CASE("crop rejects a non-positive duration") {
    Rng rng(1);
    CHECK_THROWS_AS(sample_crop(ramp_clip(10), 0.0, rng), InvalidInput);
}

TEST_CASE("distill_step with zero learning rate reports the loss and changes nothing") {
    const auto data = tiny_data();
    const RunConfig cfg = tiny_config();
    const TeacherStore teacher(data.teacher);
    const MelFrontend frontend(cfg.dsp);
    TrainState s = init_train_state(cfg);
    const std::vector<AudioClip> batch(data.clips.begin(), data.clips.begin() + 8);
    const DistillModel before = s.model;
    const double loss = distill_step(batch, s.model, s.adam, teacher, frontend, cfg.train, 0.0);
    CHECK(std::isfinite(loss));
    CHECK(loss > 0.0);
    // Running normalization statistics are buffers, not parameters.
    CHECK(s.model.encoder.weights == before.encoder.weights);
    CHECK(s.model.f == before.f);
    CHECK(s.model.g == before.g);
    CHECK(s.model.temperature == before.temperature);
}

TEST_CASE("repeated steps on one batch lower the loss") {
    const auto data = tiny_data();
    const RunConfig cfg = tiny_config();
    const TeacherStore teacher(data.teacher);
    const MelFrontend frontend(cfg.dsp);
    TrainState s = init_train_state(cfg);
    const std::vector<AudioClip> batch(data.clips.begin(), data.clips.begin() + 8);
    std::vector<double> losses;
    for (int k = 0; k < 50; ++k)
        losses.push_back(distill_step(batch, s.model, s.adam, teacher, frontend, cfg.train, 1e-2));
    const double first = std::accumulate(losses.begin(), losses.begin() + 10, 0.0) / 10.0;
    const double last = std::accumulate(losses.end() - 10, losses.end(), 0.0) / 10.0;
    CHECK(last < first);
}

TEST_CASE("distill_step is deterministic") {
    const auto data = tiny_data();
    const RunConfig cfg = tiny_config();
    const TeacherStore teacher(data.teacher);
    const MelFrontend frontend(cfg.dsp);
    const std::vector<AudioClip> batch(data.clips.begin(), data.clips.begin() + 6);
    TrainState a = init_train_state(cfg), b = init_train_state(cfg);
    for (int k = 0; k < 3; ++k) {
        const double la = distill_step(batch, a.model, a.adam, teacher, frontend, cfg.train, 1e-3, 1);
        const double lb = distill_step(batch, b.model, b.adam, teacher, frontend, cfg.train, 1e-3, 4);
        REQUIRE(la == lb);
    }
    CHECK(a.model == b.model);
    CHECK(a.adam == b.adam);
}

TEST_CASE("missing teacher id fails before any update") {
    const auto data = tiny_data();
    const RunConfig cfg = tiny_config();
    const TeacherStore teacher(data.teacher);
    const MelFrontend frontend(cfg.dsp);
    TrainState s = init_train_state(cfg);
    std::vector<AudioClip> batch(data.clips.begin(), data.clips.begin() + 4);
    batch[2].id = "nobody";
    const TrainState before = s;
    try {
        distill_step(batch, s.model, s.adam, teacher, frontend, cfg.train, 1e-2);
        FAIL("expected MissingTeacherEmbedding");
    } catch (const MissingTeacherEmbedding& e) {
        CHECK(std::string(e.what()).find("nobody") != std::string::npos);
    }
    CHECK(s.model == before.model);
    CHECK(s.adam == before.adam);
}

TEST_CASE("single-clip batch is a no-op") {
    const auto data = tiny_data();
    const RunConfig cfg = tiny_config();
    const TeacherStore teacher(data.teacher);
    const MelFrontend frontend(cfg.dsp);
    TrainState s = init_train_state(cfg);
    const TrainState before = s;
    const std::vector<AudioClip> batch(data.clips.begin(), data.clips.begin() + 1);
    CHECK(distill_step(batch, s.model, s.adam, teacher, frontend, cfg.train, 1e-2) == 0.0);
    CHECK(s.model == before.model);
    CHECK(s.adam == before.adam);
}

TEST_CASE("dimension mismatch between encoder and teacher is rejected") {
    const auto data = tiny_data();
    RunConfig cfg = tiny_config();
    cfg.encoder.embed_dim = 8;
    const TeacherStore teacher(data.teacher);
    const MelFrontend frontend(cfg.dsp);
    TrainState s = init_train_state(cfg);
    const std::vector<AudioClip> batch(data.clips.begin(), data.clips.begin() + 4);
    CHECK_THROWS_AS(distill_step(batch, s.model, s.adam, teacher, frontend, cfg.train, 1e-2), InvalidInput);
}

TEST_CASE("training records history, lowers validation loss and leaves the teacher alone") {
    const auto data = tiny_data(32);
    RunConfig cfg = tiny_config();
    cfg.train.max_epochs = 6;
    cfg.train.learning_rate = 3e-3;
    const auto train_clips = split_clips(data, Split::Train);
    const auto valid_clips = split_clips(data, Split::Valid);
    const auto teacher_bytes = serialize_embeddings(data.teacher);
    const TeacherStore teacher(data.teacher);
    int callbacks = 0;
    TrainOptions opt;
    opt.on_epoch = [&](const TrainState&) { ++callbacks; };
    const TrainResult r = train(cfg, train_clips, valid_clips, teacher, opt);
    CHECK(callbacks == 7);
    REQUIRE(r.last.history.size() == 7);
    CHECK(r.last.epoch == 6);
    CHECK_FALSE(r.last.history[0].train_loss.has_value());
    for (std::size_t e = 1; e < r.last.history.size(); ++e) {
        CHECK(r.last.history[e].epoch == static_cast<int>(e));
        CHECK(r.last.history[e].train_loss.has_value());
    }
    CHECK(r.best.best_valid_loss < r.last.history[0].valid_loss);
    CHECK(r.best.epoch == r.last.best_epoch);
    CHECK(r.best.history.back().valid_loss == r.best.best_valid_loss);
    CHECK(serialize_embeddings(teacher.table()) == teacher_bytes);
}

TEST_CASE("max_epochs of one trains exactly one epoch") {
    const auto data = tiny_data();
    RunConfig cfg = tiny_config();
    cfg.train.max_epochs = 1;
    const TeacherStore teacher(data.teacher);
    const TrainResult r = train(cfg, split_clips(data, Split::Train), split_clips(data, Split::Valid), teacher);
    CHECK(r.last.epoch == 1);
    CHECK(r.last.history.size() == 2);
}

TEST_CASE("identical runs give bit-identical checkpoints regardless of threads") {
    const auto data = tiny_data();
    RunConfig cfg = tiny_config();
    cfg.train.max_epochs = 2;
    const TeacherStore teacher(data.teacher);
    const auto tr = split_clips(data, Split::Train), va = split_clips(data, Split::Valid);
    TrainOptions one, four;
    four.threads = 4;
    const TrainResult a = train(cfg, tr, va, teacher, one);
    const TrainResult b = train(cfg, tr, va, teacher, four);
    CHECK(serialize_checkpoint(a.last) == serialize_checkpoint(b.last));
    CHECK(serialize_checkpoint(a.best) == serialize_checkpoint(b.best));
}

TEST_CASE("interrupted and resumed training equals the uninterrupted run") {
    const auto data = tiny_data();
    RunConfig cfg = tiny_config();
    cfg.train.max_epochs = 4;
    const TeacherStore teacher(data.teacher);
    const auto tr = split_clips(data, Split::Train), va = split_clips(data, Split::Valid);
    const TrainResult full = train(cfg, tr, va, teacher);

    RunConfig half = cfg;
    half.train.max_epochs = 2;
    const TrainResult first = train(half, tr, va, teacher);
    // Round trip through the checkpoint format, as the CLI does.
    const TrainState last = deserialize_checkpoint(serialize_checkpoint(first.last));
    const TrainState best = deserialize_checkpoint(serialize_checkpoint(first.best));
    TrainOptions opt;
    opt.resume = &last;
    opt.resume_best = &best;
    const TrainResult rest = train(cfg, tr, va, teacher, opt);
    CHECK(serialize_checkpoint(rest.last) == serialize_checkpoint(full.last));
    CHECK(serialize_checkpoint(rest.best) == serialize_checkpoint(full.best));
}

TEST_CASE("resume rejects a changed config") {
    const auto data = tiny_data();
    RunConfig cfg = tiny_config();
    cfg.train.max_epochs = 1;
    const TeacherStore teacher(data.teacher);
    const auto tr = split_clips(data, Split::Train), va = split_clips(data, Split::Valid);
    const TrainResult first = train(cfg, tr, va, teacher);
    RunConfig other = cfg;
    other.train.learning_rate = 0.5;
    TrainOptions opt;
    opt.resume = &first.last;
    opt.resume_best = &first.best;
    CHECK_THROWS_AS(train(other, tr, va, teacher, opt), InvalidInput);
}

TEST_CASE("early stopping ends training once validation stops improving") {
    const auto data = tiny_data();
    RunConfig cfg = tiny_config();
    cfg.train.learning_rate = 0.0;
    cfg.train.max_epochs = 20;
    cfg.train.early_stop_patience = 2;
    cfg.train.plateau_patience = 1;
    const TeacherStore teacher(data.teacher);
    const TrainResult r = train(cfg, split_clips(data, Split::Train), split_clips(data, Split::Valid), teacher);
    CHECK(r.last.stopped_early);
    CHECK(r.last.epoch < 20);
    CHECK(r.best.epoch == 0);
}

TEST_CASE("training refuses an uncovered clip") {
    const auto data = tiny_data();
    const RunConfig cfg = tiny_config();
    const TeacherStore teacher(data.teacher);
    auto tr = split_clips(data, Split::Train);
    tr[0].id = "ghost";
    CHECK_THROWS_AS(train(cfg, tr, split_clips(data, Split::Valid), teacher), MissingTeacherEmbedding);
}

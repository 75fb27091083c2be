#include "xmodal/distill.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "xmodal/errors.hpp"
#include "xmodal/parallel.hpp"

namespace xmodal {

Embedding pool_teacher_frames(std::span<const Embedding> frames) {
    if (frames.empty()) throw InvalidInput("no teacher frames to pool");
    return pool_mean(frames);
}

AudioClip crop_at(const AudioClip& clip, std::size_t offset, std::size_t length) {
    AudioClip out{clip.id, std::vector<double>(length, 0.0), clip.sample_rate};
    if (offset < clip.samples.size()) {
        const std::size_t n = std::min(length, clip.samples.size() - offset);
        std::copy_n(clip.samples.begin() + static_cast<std::ptrdiff_t>(offset), n, out.samples.begin());
    }
    return out;
}

namespace {

std::size_t crop_length(double crop_seconds, int sample_rate) {
    if (!(crop_seconds > 0.0)) throw InvalidInput("crop_seconds must be positive");
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(crop_seconds * sample_rate)));
}

}  // namespace

AudioClip sample_crop(const AudioClip& clip, double crop_seconds, Rng& rng, std::size_t* offset_out) {
    const std::size_t length = crop_length(crop_seconds, clip.sample_rate);
    std::size_t offset = 0;
    if (clip.samples.size() > length) offset = static_cast<std::size_t>(rng.uniform_int(clip.samples.size() - length + 1));
    if (offset_out) *offset_out = offset;
    return crop_at(clip, offset, length);
}

namespace {

Matrix teacher_rows(std::span<const AudioClip> clips, const TeacherStore& teacher) {
    Matrix t(clips.size(), teacher.dim());
    for (std::size_t i = 0; i < clips.size(); ++i) {
        const auto row = teacher.row(clips[i].id);
        std::copy(row.begin(), row.end(), t.row(i).begin());
    }
    return t;
}

void check_dims(const EncoderParams& encoder, const TeacherStore& teacher) {
    if (static_cast<std::size_t>(encoder.config.embed_dim) != teacher.dim())
        throw InvalidInput("encoder embed_dim " + std::to_string(encoder.config.embed_dim) +
                           " differs from teacher dimension " + std::to_string(teacher.dim()));
}

}  // namespace

PairBatch make_pair_batch(std::span<const AudioClip> clips, const EncoderParams& encoder, const MelFrontend& frontend,
                          const TeacherStore& teacher, unsigned threads) {
    check_dims(encoder, teacher);
    PairBatch batch;
    batch.teacher = teacher_rows(clips, teacher);
    batch.audio = Matrix(clips.size(), teacher.dim());
    for (const auto& c : clips) batch.clip_ids.push_back(c.id);
    parallel_for(clips.size(), threads, [&](std::size_t i) {
        const Embedding e = encode_clip(frontend.log_mel(clips[i]), encoder);
        std::copy(e.values.begin(), e.values.end(), batch.audio.row(i).begin());
    });
    return batch;
}

double distill_step(std::span<const AudioClip> clips, DistillModel& model, AdamState& adam,
                    const TeacherStore& teacher, const MelFrontend& frontend, const TrainConfig& cfg,
                    double learning_rate, unsigned threads) {
    if (clips.empty()) throw InvalidInput("empty batch");
    check_dims(model.encoder, teacher);
    PairBatch batch;
    batch.teacher = teacher_rows(clips, teacher);
    if (clips.size() < 2) return 0.0;

    const std::size_t n = clips.size();
    const std::size_t d = teacher.dim();
    std::vector<EncoderTape> tapes(n);
    batch.audio = Matrix(n, d);
    for (const auto& c : clips) batch.clip_ids.push_back(c.id);
    parallel_for(n, threads, [&](std::size_t i) {
        const MelSpectrogram mel = frontend.log_mel(clips[i]);
        const Embedding e = encode_train(mel.values, model.encoder, tapes[i]);
        std::copy(e.values.begin(), e.values.end(), batch.audio.row(i).begin());
    });

    const CxGrad cx = cx_loss_grad(batch, model.f, model.g, model.temperature, cfg.loss_direction);

    std::vector<ParamSet> per_clip(n);
    parallel_for(n, threads, [&](std::size_t i) {
        per_clip[i] = model.encoder.weights.zeros_like();
        encode_backward(tapes[i], model.encoder, cx.d_audio.row(i), per_clip[i]);
    });
    ParamSet enc_grad = model.encoder.weights.zeros_like();
    for (const auto& g : per_clip) enc_grad.accumulate(g);

    ParamSet grads = gradient_layout(model);
    std::size_t slot = 0;
    auto copy_set = [&](const ParamSet& src) {
        for (std::size_t i = 0; i < src.size(); ++i) grads.tensor(slot++).data = src.tensor(i).data;
    };
    copy_set(enc_grad);
    copy_set(cx.d_f);
    copy_set(cx.d_g);
    grads.tensor(slot).data[0] = cx.d_log_scale;

    for (const auto& tape : tapes) update_running_stats(model.encoder, tape);
    adam_update(model, grads, adam, learning_rate, cfg);
    return cx.loss;
}

TrainState init_train_state(const RunConfig& config) {
    TrainState s;
    s.config = config.resolved();
    s.config.validate();
    s.model = init_model(s.config.encoder, s.config.train);
    s.adam = init_adam(s.model);
    s.learning_rate = s.config.train.learning_rate;
    s.shuffle_rng = seeded_rng(s.config.seed, "shuffle").state();
    s.crop_rng = seeded_rng(s.config.seed, "crop").state();
    return s;
}

double validation_loss(std::span<const AudioClip> clips, const DistillModel& model, const TeacherStore& teacher,
                       const MelFrontend& frontend, const RunConfig& config, unsigned threads) {
    const std::size_t length = crop_length(config.train.crop_seconds, frontend.config().sample_rate);
    const std::size_t bs = static_cast<std::size_t>(config.train.batch_size);
    double total = 0.0;
    std::size_t counted = 0;
    for (std::size_t start = 0; start < clips.size(); start += bs) {
        const std::size_t end = std::min(clips.size(), start + bs);
        if (end - start < 2) continue;
        std::vector<AudioClip> cropped;
        for (std::size_t i = start; i < end; ++i) cropped.push_back(crop_at(clips[i], 0, length));
        const PairBatch batch = make_pair_batch(cropped, model.encoder, frontend, teacher, threads);
        total += cx_loss(batch, model.f, model.g, model.temperature, config.train.loss_direction) *
                 static_cast<double>(end - start);
        counted += end - start;
    }
    if (counted == 0) throw InvalidInput("validation split needs at least two clips per batch");
    return total / static_cast<double>(counted);
}

namespace {

void check_teacher_coverage(std::span<const AudioClip> clips, const TeacherStore& teacher) {
    for (const auto& c : clips)
        if (!teacher.contains(c.id)) throw MissingTeacherEmbedding(c.id);
}

// Applies the validation result of the epoch just finished.
void record_epoch(TrainState& s, TrainState& best, double train_loss, double valid_loss) {
    s.history.push_back(EpochRecord{s.epoch, train_loss, valid_loss, s.learning_rate});
    if (valid_loss < s.best_valid_loss) {
        s.best_valid_loss = valid_loss;
        s.best_epoch = s.epoch;
        s.epochs_without_improvement = 0;
        s.plateau_counter = 0;
        best = s;
        return;
    }
    s.epochs_without_improvement += 1;
    s.plateau_counter += 1;
    if (s.plateau_counter >= s.config.train.plateau_patience) {
        s.learning_rate *= s.config.train.plateau_factor;
        s.plateau_counter = 0;
    }
    if (s.epochs_without_improvement >= s.config.train.early_stop_patience) s.stopped_early = true;
}

}  // namespace

TrainResult train(const RunConfig& config, std::span<const AudioClip> train_clips,
                  std::span<const AudioClip> valid_clips, const TeacherStore& teacher, const TrainOptions& options) {
    if (train_clips.empty()) throw InvalidInput("training manifest is empty");
    if (valid_clips.empty()) throw InvalidInput("validation manifest is empty");
    check_teacher_coverage(train_clips, teacher);
    check_teacher_coverage(valid_clips, teacher);

    TrainResult result;
    TrainState& s = result.last;
    TrainState& best = result.best;
    if (options.resume) {
        s = *options.resume;
        // Only the epoch budget may change between the interrupted run and its continuation.
        const RunConfig want = config.resolved();
        RunConfig have = s.config;
        have.train.max_epochs = want.train.max_epochs;
        if (have != want) throw InvalidInput("resume state was produced by a different config");
        s.config = want;
        if (options.resume_best) best = *options.resume_best;
        else if (s.best_epoch == s.epoch) best = s;
        else throw InvalidInput("resuming needs the best-so-far state as well");
        if (best.epoch != s.best_epoch) throw InvalidInput("best-so-far state does not match the resume state");
        best.config = want;
    } else {
        s = init_train_state(config);
    }
    const RunConfig& cfg = s.config;
    check_dims(s.model.encoder, teacher);
    const MelFrontend frontend(cfg.dsp);
    const unsigned threads = options.threads;

    if (!options.resume) {
        const double v0 = validation_loss(valid_clips, s.model, teacher, frontend, cfg, threads);
        s.history.push_back(EpochRecord{0, std::nullopt, v0, s.learning_rate});
        s.best_valid_loss = v0;
        s.best_epoch = 0;
        best = s;
        if (options.on_epoch) options.on_epoch(s);
    }

    Rng shuffle_rng, crop_rng;
    shuffle_rng.set_state(s.shuffle_rng);
    crop_rng.set_state(s.crop_rng);
    const std::size_t bs = static_cast<std::size_t>(cfg.train.batch_size);

    while (!s.stopped_early && s.epoch < cfg.train.max_epochs) {
        std::vector<std::size_t> order(train_clips.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        shuffle_rng.shuffle(order);

        double loss_sum = 0.0;
        std::size_t loss_count = 0;
        for (std::size_t start = 0; start < order.size(); start += bs) {
            const std::size_t end = std::min(order.size(), start + bs);
            if (end - start < 2) continue;
            std::vector<AudioClip> batch;
            for (std::size_t i = start; i < end; ++i)
                batch.push_back(sample_crop(train_clips[order[i]], cfg.train.crop_seconds, crop_rng));
            const double loss = distill_step(batch, s.model, s.adam, teacher, frontend, cfg.train, s.learning_rate,
                                             threads);
            loss_sum += loss * static_cast<double>(batch.size());
            loss_count += batch.size();
        }
        s.epoch += 1;
        s.shuffle_rng = shuffle_rng.state();
        s.crop_rng = crop_rng.state();
        const double train_loss = loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0;
        const double valid_loss = validation_loss(valid_clips, s.model, teacher, frontend, cfg, threads);
        record_epoch(s, best, train_loss, valid_loss);
        if (options.on_epoch) options.on_epoch(s);
    }
    return result;
}

std::vector<AudioClip> load_clips(const DatasetManifest& manifest, unsigned threads) {
    std::vector<AudioClip> clips(manifest.records.size());
    parallel_for(clips.size(), threads,
                 [&](std::size_t i) { clips[i] = load_audio(manifest, manifest.records[i]); });
    return clips;
}

TrainResult train(const RunConfig& config, const DatasetManifest& train_manifest,
                  const DatasetManifest& valid_manifest, const TeacherStore& teacher, const TrainOptions& options) {
    if (train_manifest.records.empty()) throw InvalidInput("training manifest is empty");
    if (valid_manifest.records.empty()) throw InvalidInput("validation manifest is empty");
    for (const auto* m : {&train_manifest, &valid_manifest})
        for (const auto& r : m->records)
            if (!teacher.contains(r.clip_id)) throw MissingTeacherEmbedding(r.clip_id);
    const auto train_clips = load_clips(train_manifest, options.threads);
    const auto valid_clips = load_clips(valid_manifest, options.threads);
    return train(config, train_clips, valid_clips, teacher, options);
}

}  // namespace xmodal

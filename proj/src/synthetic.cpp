#include "xmodal/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "xmodal/errors.hpp"
#include "xmodal/rng.hpp"
#include "xmodal/wav.hpp"

namespace xmodal {

namespace {

struct ClassTexture {
    double tones[3];
    double am_rate;
    double noise_pole;
};

std::string clip_name(int i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "clip%04d", i);
    return buf;
}

std::vector<double> unit_gaussian(std::size_t d, Rng& rng) {
    std::vector<double> v(d);
    double ss = 0.0;
    for (auto& x : v) {
        x = rng.normal();
        ss += x * x;
    }
    const double n = std::sqrt(ss);
    for (auto& x : v) x /= n;
    return v;
}

void normalize(std::vector<double>& v) {
    double ss = 0.0;
    for (double x : v) ss += x * x;
    const double n = std::sqrt(ss);
    for (auto& x : v) x /= n;
}

// Adds one class texture into samples[begin, end).
void render_texture(std::vector<double>& samples, std::size_t begin, std::size_t end, const ClassTexture& tex,
                    int sample_rate, Rng& rng) {
    constexpr double two_pi = 2.0 * std::numbers::pi;
    double freq[3], amp[3], phase[3];
    for (int j = 0; j < 3; ++j) {
        freq[j] = tex.tones[j] * (1.0 + 0.02 * rng.normal());
        amp[j] = rng.uniform(0.1, 0.22);
        phase[j] = rng.uniform(0.0, two_pi);
    }
    const double am_phase = rng.uniform(0.0, two_pi);
    const double noise_amp = rng.uniform(0.02, 0.05);
    double lp = 0.0;
    for (std::size_t n = begin; n < end; ++n) {
        const double t = static_cast<double>(n) / sample_rate;
        double s = 0.0;
        for (int j = 0; j < 3; ++j) s += amp[j] * std::sin(two_pi * freq[j] * t + phase[j]);
        const double env = 1.0 - 0.5 * (0.5 + 0.5 * std::sin(two_pi * tex.am_rate * t + am_phase));
        lp = tex.noise_pole * lp + (1.0 - tex.noise_pole) * rng.normal();
        samples[n] += env * s + noise_amp * lp;
    }
}

void finish_clip(std::vector<double>& samples) {
    for (auto& s : samples) s = quantize_pcm16(std::clamp(s, -1.0, 1.0));
}

}  // namespace

SyntheticDataset generate_synthetic(const SyntheticConfig& cfg) {
    if (cfg.n_classes < 1) throw InvalidInput("n-classes must be positive");
    if (cfg.n_clips < cfg.n_classes) throw InvalidInput("n-clips must be at least n-classes");
    if (cfg.dim < 1) throw InvalidInput("dim must be positive");
    if (!(cfg.clip_seconds > 0.0)) throw InvalidInput("clip duration must be positive");
    if (cfg.event_clips < 0) throw InvalidInput("event-clips must be >= 0");
    if (cfg.event_clips > 0 && cfg.event_clip_seconds < 2.0) throw InvalidInput("event clips need at least 2 s");
    if (cfg.n_folds < 0) throw InvalidInput("folds must be >= 0");

    const auto n_classes = static_cast<std::size_t>(cfg.n_classes);
    const auto dim = static_cast<std::size_t>(cfg.dim);
    SyntheticDataset out;
    for (std::size_t c = 0; c < n_classes; ++c) out.manifest.classes.push_back("class" + std::to_string(c));

    // Tone frequencies come from 3*C log-spaced slots dealt out without reuse.
    Rng class_rng = seeded_rng(cfg.seed, "synthetic-classes");
    std::vector<std::size_t> slots(3 * n_classes);
    for (std::size_t i = 0; i < slots.size(); ++i) slots[i] = i;
    class_rng.shuffle(slots);
    const double lo = 200.0, hi = std::min(6000.0, 0.4 * cfg.sample_rate);
    std::vector<ClassTexture> textures(n_classes);
    for (std::size_t c = 0; c < n_classes; ++c) {
        for (int j = 0; j < 3; ++j) {
            const double pos = (static_cast<double>(slots[3 * c + static_cast<std::size_t>(j)]) + 0.5) /
                               static_cast<double>(slots.size());
            textures[c].tones[j] = lo * std::pow(hi / lo, pos);
        }
        textures[c].am_rate = class_rng.uniform(1.0, 8.0);
        textures[c].noise_pole = class_rng.uniform(0.1, 0.95);
        out.class_directions.push_back(unit_gaussian(dim, class_rng));
    }

    Rng audio_rng = seeded_rng(cfg.seed, "synthetic-audio");
    Rng teacher_rng = seeded_rng(cfg.seed, "synthetic-teacher");
    Rng event_rng = seeded_rng(cfg.seed, "synthetic-events");
    const int total = cfg.n_clips + cfg.event_clips;
    std::vector<std::vector<double>> teacher_rows;
    std::vector<std::size_t> primary(static_cast<std::size_t>(total));

    for (int i = 0; i < total; ++i) {
        ManifestRecord rec;
        rec.clip_id = clip_name(i);
        rec.audio_path = "audio/" + rec.clip_id + ".wav";
        rec.sample_rate = cfg.sample_rate;
        AudioClip clip{rec.clip_id, {}, cfg.sample_rate};
        std::vector<double> direction(dim, 0.0);

        if (i < cfg.n_clips) {
            const std::size_t c = static_cast<std::size_t>(i) % n_classes;
            const auto n = static_cast<std::size_t>(std::llround(cfg.clip_seconds * cfg.sample_rate));
            clip.samples.assign(n, 0.0);
            render_texture(clip.samples, 0, n, textures[c], cfg.sample_rate, audio_rng);
            rec.labels = {out.manifest.classes[c]};
            direction = out.class_directions[c];
            primary[static_cast<std::size_t>(i)] = c;
        } else {
            // Up to two whole-second events on a quiet noise bed.
            const int seconds = static_cast<int>(std::floor(cfg.event_clip_seconds));
            const auto n = static_cast<std::size_t>(seconds) * static_cast<std::size_t>(cfg.sample_rate);
            clip.samples.assign(n, 0.0);
            for (auto& s : clip.samples) s = 0.005 * audio_rng.normal();
            const int n_events = seconds >= 4 ? 2 : 1;
            const int span = seconds / n_events;
            for (int e = 0; e < n_events; ++e) {
                const std::size_t c = static_cast<std::size_t>(event_rng.uniform_int(n_classes));
                const int len = 1 + static_cast<int>(event_rng.uniform_int(static_cast<std::uint64_t>(std::max(1, span - 1))));
                const int start = e * span + static_cast<int>(event_rng.uniform_int(static_cast<std::uint64_t>(span - len + 1)));
                const auto b = static_cast<std::size_t>(start) * static_cast<std::size_t>(cfg.sample_rate);
                const auto en = static_cast<std::size_t>(start + len) * static_cast<std::size_t>(cfg.sample_rate);
                render_texture(clip.samples, b, en, textures[c], cfg.sample_rate, audio_rng);
                const std::string& label = out.manifest.classes[c];
                rec.segments.push_back(SegmentAnnotation{rec.clip_id, static_cast<double>(start),
                                                         static_cast<double>(start + len), label});
                if (std::find(rec.labels.begin(), rec.labels.end(), label) == rec.labels.end()) rec.labels.push_back(label);
                for (std::size_t k = 0; k < dim; ++k) direction[k] += out.class_directions[c][k];
                if (e == 0) primary[static_cast<std::size_t>(i)] = c;
            }
            normalize(direction);
        }
        finish_clip(clip.samples);
        rec.duration_seconds = clip.duration_seconds();

        std::vector<double> row = direction;
        const double sigma = cfg.teacher_noise / std::sqrt(static_cast<double>(dim));
        for (auto& v : row) v += sigma * teacher_rng.normal();
        normalize(row);
        teacher_rows.push_back(std::move(row));

        out.manifest.records.push_back(std::move(rec));
        out.clips.push_back(std::move(clip));
    }

    // Stratified 70/15/15 split on the primary class; folds dealt round robin.
    Rng split_rng = seeded_rng(cfg.seed, "synthetic-split");
    for (std::size_t c = 0; c < n_classes; ++c) {
        std::vector<std::size_t> members;
        for (std::size_t i = 0; i < primary.size(); ++i)
            if (primary[i] == c) members.push_back(i);
        split_rng.shuffle(members);
        const auto n = static_cast<double>(members.size());
        const auto n_train = static_cast<std::size_t>(std::llround(0.7 * n));
        const auto n_valid = static_cast<std::size_t>(std::llround(0.15 * n));
        for (std::size_t k = 0; k < members.size(); ++k) {
            auto& rec = out.manifest.records[members[k]];
            rec.split = k < n_train ? Split::Train : (k < n_train + n_valid ? Split::Valid : Split::Test);
        }
    }
    if (cfg.n_folds > 0) {
        if (total < cfg.n_folds) throw InvalidInput("fewer clips than folds");
        std::vector<std::size_t> order(static_cast<std::size_t>(total));
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        split_rng.shuffle(order);
        for (std::size_t k = 0; k < order.size(); ++k)
            out.manifest.records[order[k]].fold = static_cast<int>(k % static_cast<std::size_t>(cfg.n_folds)) + 1;
    }

    out.teacher = EmbeddingTable(static_cast<std::uint32_t>(dim));
    for (std::size_t i = 0; i < teacher_rows.size(); ++i) {
        const std::vector<float> row(teacher_rows[i].begin(), teacher_rows[i].end());
        out.teacher.add(out.manifest.records[i].clip_id, row);
    }
    out.labels = EmbeddingTable(static_cast<std::uint32_t>(dim));
    for (std::size_t c = 0; c < n_classes; ++c) {
        std::vector<double> mean(dim, 0.0);
        std::size_t count = 0;
        for (std::size_t i = 0; i < static_cast<std::size_t>(cfg.n_clips); ++i) {
            if (primary[i] != c) continue;
            const auto r = out.teacher.row(i);
            for (std::size_t k = 0; k < dim; ++k) mean[k] += r[k];
            ++count;
        }
        for (auto& v : mean) v /= static_cast<double>(count);
        const std::vector<float> row(mean.begin(), mean.end());
        out.labels.add(out.manifest.classes[c], row);
    }
    out.manifest.validate();
    return out;
}

void write_synthetic(const SyntheticDataset& data, const std::filesystem::path& out_dir, bool force) {
    namespace fs = std::filesystem;
    std::error_code ec;
    if (fs::exists(out_dir, ec) && !fs::is_empty(out_dir, ec) && !force)
        throw Refuse("output directory '" + out_dir.string() + "' is not empty (use --force)");
    fs::create_directories(out_dir / "audio", ec);
    if (ec) throw IoError("cannot create '" + (out_dir / "audio").string() + "': " + ec.message());

    for (const auto& clip : data.clips) write_wav(out_dir / "audio" / (clip.id + ".wav"), clip);
    write_manifest(data.manifest, out_dir / "manifest.jsonl");
    // Split files carry no folds: a split need not contain every fold.
    for (const auto& [split, name] : {std::pair{Split::Train, "train.jsonl"}, std::pair{Split::Valid, "valid.jsonl"},
                                      std::pair{Split::Test, "test.jsonl"}}) {
        DatasetManifest part = data.manifest.filter(split);
        for (auto& r : part.records) r.fold.reset();
        write_manifest(part, out_dir / name);
    }
    write_embeddings(data.teacher, out_dir / "teacher.xmeb");
    write_embeddings(data.labels, out_dir / "labels.xmeb");
}

}  // namespace xmodal

#include "xmodal/cli.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "xmodal/binary_io.hpp"
#include "xmodal/checkpoint.hpp"
#include "xmodal/config.hpp"
#include "xmodal/distill.hpp"
#include "xmodal/embeddings.hpp"
#include "xmodal/errors.hpp"
#include "xmodal/eval.hpp"
#include "xmodal/manifest.hpp"
#include "xmodal/parallel.hpp"
#include "xmodal/probe.hpp"
#include "xmodal/segments.hpp"
#include "xmodal/synthetic.hpp"

namespace xmodal {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Common {
    std::optional<std::uint64_t> seed;
    std::string config;
    unsigned threads = 1;
    std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool with_out = true) {
    cmd->add_option("--seed", c.seed, "global seed (overrides the config file)");
    cmd->add_option("--config", c.config, "key = value run config");
    cmd->add_option("--threads", c.threads, "worker cap (0 = all cores)");
    if (with_out) cmd->add_option("--out", c.out, "output path");
}

RunConfig resolve_config(const Common& c) {
    RunConfig cfg = c.config.empty() ? RunConfig{} : load_run_config(c.config);
    if (c.seed) cfg.seed = *c.seed;
    cfg = cfg.resolved();
    cfg.validate();
    return cfg;
}

unsigned worker_count(const Common& c) {
    if (c.threads > 0) return c.threads;
    return std::max(1U, std::thread::hardware_concurrency());
}

std::string file_hash(const fs::path& p) {
    const auto bytes = bin::read_file(p);
    return hex64(fnv1a64(bytes));
}

std::string timestamp_utc() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// Writes an eval report to --out (if given) and stdout.
void emit_report(EvalReport report, const RunConfig& cfg, const Common& c, std::ostream& out) {
    report.config_hash = cfg.content_hash();
    report.validate();
    const std::string text = report.to_json_string();
    if (!c.out.empty()) bin::write_file_atomic(c.out, text);
    out << text;
}

std::map<std::string, Embedding> embedding_map(const EmbeddingTable& t) {
    std::map<std::string, Embedding> m;
    for (std::size_t i = 0; i < t.count(); ++i) m.emplace(t.ids()[i], t.embedding(i));
    return m;
}

const Embedding& lookup(const std::map<std::string, Embedding>& m, const std::string& id, const std::string& what) {
    auto it = m.find(id);
    if (it == m.end()) throw InvalidInput("clip '" + id + "' is missing from the " + what + " embeddings");
    return it->second;
}

std::string primary_label(const ManifestRecord& r) {
    if (r.labels.empty()) throw InvalidInput("clip '" + r.clip_id + "' has no label");
    return r.labels.front();
}

// ---------------------------------------------------------------- commands

int cmd_gen_synthetic(const Common& c, const SyntheticConfig& base, const std::string& out_dir, bool force,
                      std::ostream& out) {
    const RunConfig cfg = resolve_config(c);
    SyntheticConfig sc = base;
    sc.seed = cfg.seed;
    const SyntheticDataset data = generate_synthetic(sc);
    write_synthetic(data, out_dir, force);
    json summary = {{"out_dir", out_dir},
                    {"n_clips", data.clips.size()},
                    {"classes", data.manifest.classes},
                    {"teacher_dim", data.teacher.dim()},
                    {"teacher_hash", file_hash(fs::path(out_dir) / "teacher.xmeb")}};
    out << summary.dump(2) << "\n";
    return 0;
}

struct DistillArgs {
    std::string train_manifest, valid_manifest, teacher, out_checkpoint, log, last_checkpoint;
    std::string resume, resume_best;
    std::optional<int> max_epochs;
};

int cmd_distill(const Common& c, const DistillArgs& a, std::ostream& out, std::ostream& err) {
    RunConfig cfg = c.config.empty() ? RunConfig{} : load_run_config(c.config);
    if (c.seed) cfg.seed = *c.seed;
    if (a.max_epochs) cfg.train.max_epochs = *a.max_epochs;
    cfg = cfg.resolved();
    cfg.validate();

    const DatasetManifest train_m = read_manifest(a.train_manifest);
    const DatasetManifest valid_m = read_manifest(a.valid_manifest);
    const std::string hash_before = file_hash(a.teacher);
    const TeacherStore teacher(read_embeddings(a.teacher));

    std::optional<TrainState> resume, resume_best;
    TrainOptions opts;
    opts.threads = worker_count(c);
    if (!a.resume.empty()) {
        resume = load_checkpoint(a.resume);
        opts.resume = &*resume;
        if (!a.resume_best.empty()) {
            resume_best = load_checkpoint(a.resume_best);
            opts.resume_best = &*resume_best;
        }
    }
    const std::string log_path = a.log.empty() ? a.out_checkpoint + ".log.jsonl" : a.log;
    std::string log_text;
    if (resume) {
        for (const auto& r : resume->history) {
            json j = {{"epoch", r.epoch}, {"valid_loss", r.valid_loss}, {"lr", r.learning_rate},
                      {"timestamp", timestamp_utc()}};
            j["train_loss"] = r.train_loss ? json(*r.train_loss) : json(nullptr);
            log_text += j.dump() + "\n";
        }
    }
    opts.on_epoch = [&](const TrainState& s) {
        const EpochRecord& r = s.history.back();
        json j = {{"epoch", r.epoch}, {"valid_loss", r.valid_loss}, {"lr", r.learning_rate},
                  {"timestamp", timestamp_utc()}};
        j["train_loss"] = r.train_loss ? json(*r.train_loss) : json(nullptr);
        log_text += j.dump() + "\n";
        bin::write_file_atomic(log_path, log_text);
        err << "epoch " << r.epoch << " valid_loss " << r.valid_loss << "\n";
    };

    const TrainResult result = train(cfg, train_m, valid_m, teacher, opts);
    save_checkpoint(result.best, a.out_checkpoint);
    const std::string last_path = a.last_checkpoint.empty() ? a.out_checkpoint + ".last" : a.last_checkpoint;
    save_checkpoint(result.last, last_path);
    const std::string hash_after = file_hash(a.teacher);

    const auto& h = result.last.history;
    json summary = {{"checkpoint", a.out_checkpoint},
                    {"last_checkpoint", last_path},
                    {"log", log_path},
                    {"epochs", result.last.epoch},
                    {"best_epoch", result.best.best_epoch},
                    {"best_valid_loss", result.best.best_valid_loss},
                    {"initial_valid_loss", h.front().valid_loss},
                    {"final_valid_loss", h.back().valid_loss},
                    {"stopped_early", result.last.stopped_early},
                    {"teacher_hash_before", hash_before},
                    {"teacher_hash_after", hash_after},
                    {"config_hash", cfg.content_hash()}};
    out << summary.dump(2) << "\n";
    if (hash_before != hash_after) throw IoError("teacher file changed during training");
    return 0;
}

int cmd_embed(const Common& c, const std::string& manifest_path, const std::string& checkpoint,
              const std::string& level, std::ostream& out) {
    if (c.out.empty()) throw InvalidInput("--out is required");
    const TrainState state = load_checkpoint(checkpoint);
    const DatasetManifest manifest = read_manifest(manifest_path);
    const MelFrontend frontend(state.config.dsp);
    const auto& enc = state.model.encoder;
    const unsigned threads = worker_count(c);

    std::vector<std::vector<Embedding>> frames(manifest.records.size());
    parallel_for(frames.size(), threads, [&](std::size_t i) {
        frames[i] = encode_frames(load_audio(manifest, manifest.records[i]), enc, frontend);
    });
    EmbeddingTable table(static_cast<std::uint32_t>(enc.config.embed_dim));
    for (std::size_t i = 0; i < frames.size(); ++i) {
        const auto& id = manifest.records[i].clip_id;
        if (level == "clip") {
            table.add(id, pool_mean(frames[i]));
        } else {
            for (std::size_t k = 0; k < frames[i].size(); ++k) table.add(id + "#" + std::to_string(k), frames[i][k]);
        }
    }
    write_embeddings(table, c.out);
    const TeacherStore check(read_embeddings(c.out));
    json summary = {{"out", c.out}, {"level", level}, {"rows", check.size()}, {"dim", check.dim()}};
    out << summary.dump(2) << "\n";
    return 0;
}

int cmd_eval_zeroshot(const Common& c, const std::string& emb_path, const std::string& labels_path,
                      const std::string& manifest_path, std::ostream& out) {
    const RunConfig cfg = resolve_config(c);
    const auto emb = embedding_map(read_embeddings(emb_path));
    const LabelEmbeddingTable labels(read_embeddings(labels_path));
    const DatasetManifest manifest = read_manifest(manifest_path);
    std::vector<Embedding> audio;
    std::vector<std::string> refs;
    for (const auto& r : manifest.records) {
        audio.push_back(lookup(emb, r.clip_id, "audio"));
        refs.push_back(primary_label(r));
    }
    emit_report(zero_shot_report(audio, refs, labels), cfg, c, out);
    return 0;
}

int cmd_eval_cmr(const Common& c, const std::string& queries_path, const std::string& corpus_path,
                 const std::string& manifest_path, const std::string& direction, bool include_self,
                 std::ostream& out) {
    const RunConfig cfg = resolve_config(c);
    const auto queries = embedding_map(read_embeddings(queries_path));
    const auto corpus = embedding_map(read_embeddings(corpus_path));
    const DatasetManifest manifest = read_manifest(manifest_path);
    RetrievalOptions opts;
    opts.direction = direction == "i2a" ? RetrievalDirection::ImageToAudio : RetrievalDirection::AudioToImage;
    opts.exclude_self = !include_self;
    opts.threads = worker_count(c);
    std::vector<Embedding> q, k;
    std::vector<std::string> labels;
    for (const auto& r : manifest.records) {
        q.push_back(lookup(queries, r.clip_id, "query"));
        k.push_back(lookup(corpus, r.clip_id, "corpus"));
        labels.push_back(primary_label(r));
        opts.query_ids.push_back(r.clip_id);
    }
    opts.corpus_ids = opts.query_ids;
    emit_report(cross_modal_retrieval(q, k, labels, labels, opts), cfg, c, out);
    return 0;
}

SegmentCorpus frame_corpus(const EmbeddingTable& table, const DatasetManifest& manifest) {
    SegmentCorpus corpus;
    std::map<std::string, std::map<std::size_t, Embedding>> by_clip;
    for (std::size_t i = 0; i < table.count(); ++i) {
        const std::string& id = table.ids()[i];
        const auto hash = id.rfind('#');
        if (hash == std::string::npos) throw InvalidInput("frame embedding id '" + id + "' lacks a #k suffix");
        std::size_t k = 0;
        try {
            k = std::stoul(id.substr(hash + 1));
        } catch (const std::exception&) {
            throw InvalidInput("frame embedding id '" + id + "' has a malformed frame index");
        }
        by_clip[id.substr(0, hash)].emplace(k, table.embedding(i));
    }
    for (const auto& r : manifest.records) {
        auto it = by_clip.find(r.clip_id);
        if (it == by_clip.end()) throw InvalidInput("clip '" + r.clip_id + "' has no frame embeddings");
        std::vector<Embedding> frames;
        for (const auto& [k, e] : it->second) {
            if (k != frames.size()) throw InvalidInput("clip '" + r.clip_id + "' has a gap in its frame indices");
            frames.push_back(e);
        }
        corpus.frames.emplace(r.clip_id, std::move(frames));
        corpus.durations.emplace(r.clip_id, r.duration_seconds);
    }
    return corpus;
}

int cmd_eval_segment(const Common& c, const std::string& frames_path, const std::string& manifest_path, int folds,
                     std::optional<double> fixed_threshold, std::ostream& out) {
    const RunConfig cfg = resolve_config(c);
    const DatasetManifest manifest = read_manifest(manifest_path);
    const SegmentCorpus corpus = frame_corpus(read_embeddings(frames_path), manifest);
    const auto annotations = manifest.segments();
    if (annotations.empty()) throw InvalidInput("manifest has no segment annotations");

    EvalReport r;
    r.task = "segment_retrieval";
    double threshold = 0.0;
    if (fixed_threshold) {
        threshold = *fixed_threshold;
    } else {
        const ThresholdSelection sel =
            select_threshold_cv(annotations, corpus, folds, cfg.seed, default_threshold_grid(), worker_count(c));
        threshold = sel.threshold;
        r.metrics["f1_cv_held_out"] = sel.held_out_f1;
        r.details["grid"] = sel.grid;
        r.details["mean_fold_f1"] = sel.mean_f1;
        r.details["folds"] = sel.folds;
    }
    const SegmentCounts counts = evaluate_segment_queries(annotations, annotations, corpus, threshold, {});
    r.metrics["f1"] = counts.f1();
    r.details["threshold"] = threshold;
    r.details["tp"] = counts.tp;
    r.details["fp"] = counts.fp;
    r.details["fn"] = counts.fn;
    r.details["resolution"] = 0.1;
    r.details["n_queries"] = annotations.size();
    emit_report(std::move(r), cfg, c, out);
    return 0;
}

struct ProbeInputs {
    Matrix train_x, eval_x;
    LabelSets train_labels, eval_labels;
    std::vector<std::string> classes;
};

ProbeInputs probe_inputs(const std::string& train_emb, const std::string& train_manifest, const std::string& eval_emb,
                         const std::string& eval_manifest) {
    ProbeInputs p;
    const DatasetManifest tm = read_manifest(train_manifest);
    const DatasetManifest em = read_manifest(eval_manifest);
    if (tm.classes != em.classes) throw InvalidInput("train and eval manifests declare different classes");
    p.classes = tm.classes;
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < p.classes.size(); ++i) index.emplace(p.classes[i], i);
    auto load = [&](const std::string& emb_path, const DatasetManifest& m, Matrix& x, LabelSets& labels) {
        const auto emb = embedding_map(read_embeddings(emb_path));
        if (m.records.empty()) throw InvalidInput("manifest has no clips");
        const std::size_t dim = lookup(emb, m.records.front().clip_id, "probe").dim();
        x = Matrix(m.records.size(), dim);
        for (std::size_t i = 0; i < m.records.size(); ++i) {
            const Embedding& e = lookup(emb, m.records[i].clip_id, "probe");
            std::copy(e.values.begin(), e.values.end(), x.row(i).begin());
            std::vector<std::size_t> ls;
            for (const auto& l : m.records[i].labels) ls.push_back(index.at(l));
            labels.push_back(std::move(ls));
        }
    };
    load(train_emb, tm, p.train_x, p.train_labels);
    load(eval_emb, em, p.eval_x, p.eval_labels);
    return p;
}

void apply_task(RunConfig& cfg, const std::string& task) {
    if (task.empty()) return;
    cfg.set("probe.task", task);
}

struct ProbeArgs {
    std::string train_emb, train_manifest, eval_emb, eval_manifest, task, csv;
    std::vector<double> percentages;
};

int cmd_eval_probe(const Common& c, const ProbeArgs& a, std::ostream& out) {
    RunConfig cfg = resolve_config(c);
    apply_task(cfg, a.task);
    const ProbeInputs p = probe_inputs(a.train_emb, a.train_manifest, a.eval_emb, a.eval_manifest);
    emit_report(evaluate_probe(p.train_x, p.train_labels, p.eval_x, p.eval_labels, p.classes, cfg.probe,
                               worker_count(c)),
                cfg, c, out);
    return 0;
}

int cmd_eval_sweep(const Common& c, const ProbeArgs& a, std::ostream& out) {
    RunConfig cfg = resolve_config(c);
    apply_task(cfg, a.task);
    const ProbeInputs p = probe_inputs(a.train_emb, a.train_manifest, a.eval_emb, a.eval_manifest);
    const auto percentages = a.percentages.empty() ? default_sweep_percentages() : a.percentages;
    EvalReport r = data_efficiency_sweep(p.train_x, p.train_labels, p.eval_x, p.eval_labels, p.classes, cfg.probe,
                                         percentages, worker_count(c));
    const std::string csv_path = !a.csv.empty() ? a.csv : (c.out.empty() ? std::string() : c.out + ".csv");
    if (!csv_path.empty()) {
        bin::write_file_atomic(csv_path, sweep_csv(r));
        r.details["csv"] = csv_path;
    }
    emit_report(std::move(r), cfg, c, out);
    return 0;
}

int cmd_report(const Common& c, const std::vector<std::string>& inputs, std::ostream& out) {
    const RunConfig cfg = resolve_config(c);
    json combined = json::object();
    json metrics = json::object();
    for (const auto& path : inputs) {
        const auto bytes = bin::read_file(path);
        json j;
        try {
            j = json::parse(bytes.begin(), bytes.end());
        } catch (const json::parse_error& e) {
            throw xmodal::ParseError(0, "'" + path + "' is not a JSON report: " + e.what());
        }
        const std::string name = fs::path(path).stem().string();
        if (combined.contains(name)) throw DuplicateId("two reports named '" + name + "'");
        if (j.contains("metrics"))
            for (const auto& [k, v] : j.at("metrics").items()) metrics[name + "." + k] = v;
        combined[name] = std::move(j);
    }
    json doc = {{"reports", combined}, {"metrics", metrics}, {"config_hash", cfg.content_hash()}};
    const std::string text = doc.dump(2) + "\n";
    if (!c.out.empty()) bin::write_file_atomic(c.out, text);
    out << text;
    return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Cross-modal embedding distillation toolkit"};
    app.require_subcommand(1);

    Common common;

    auto* gen = app.add_subcommand("gen-synthetic", "write a planted synthetic dataset");
    SyntheticConfig syn;
    std::string out_dir;
    bool force = false;
    add_common(gen, common, false);
    gen->add_option("--out-dir", out_dir)->required();
    gen->add_option("--n-clips", syn.n_clips);
    gen->add_option("--n-classes", syn.n_classes);
    gen->add_option("--clip-seconds", syn.clip_seconds);
    gen->add_option("--dim", syn.dim);
    gen->add_option("--teacher-noise", syn.teacher_noise);
    gen->add_option("--event-clips", syn.event_clips);
    gen->add_option("--event-seconds", syn.event_clip_seconds);
    gen->add_option("--folds", syn.n_folds);
    gen->add_flag("--force", force);

    auto* distill = app.add_subcommand("distill", "train the student against a frozen teacher");
    DistillArgs da;
    add_common(distill, common, false);
    distill->add_option("--train-manifest", da.train_manifest)->required();
    distill->add_option("--valid-manifest", da.valid_manifest)->required();
    distill->add_option("--teacher", da.teacher)->required();
    distill->add_option("--out-checkpoint", da.out_checkpoint)->required();
    distill->add_option("--last-checkpoint", da.last_checkpoint, "resumable final state (default <out>.last)");
    distill->add_option("--log", da.log, "JSONL training log (default <out>.log.jsonl)");
    distill->add_option("--max-epochs", da.max_epochs);
    distill->add_option("--resume", da.resume);
    distill->add_option("--resume-best", da.resume_best);

    auto* embed = app.add_subcommand("embed", "extract clip or frame embeddings");
    std::string embed_manifest, embed_ckpt, level = "clip";
    add_common(embed, common);
    embed->add_option("--manifest", embed_manifest)->required();
    embed->add_option("--checkpoint", embed_ckpt)->required();
    embed->add_option("--level", level)->check(CLI::IsMember({"clip", "frame"}));

    auto* zs = app.add_subcommand("eval-zeroshot", "zero-shot classification against label embeddings");
    std::string zs_emb, zs_labels, zs_manifest;
    add_common(zs, common);
    zs->add_option("--embeddings", zs_emb)->required();
    zs->add_option("--labels", zs_labels)->required();
    zs->add_option("--manifest", zs_manifest)->required();

    auto* cmr = app.add_subcommand("eval-cmr", "cross-modal retrieval MRR");
    std::string cmr_q, cmr_c, cmr_manifest, direction = "a2i";
    bool include_self = false;
    add_common(cmr, common);
    cmr->add_option("--queries", cmr_q)->required();
    cmr->add_option("--corpus", cmr_c)->required();
    cmr->add_option("--manifest", cmr_manifest)->required();
    cmr->add_option("--direction", direction)->check(CLI::IsMember({"a2i", "i2a"}));
    cmr->add_flag("--include-self", include_self);

    auto* seg = app.add_subcommand("eval-segment", "segment retrieval F1 with a cross-validated threshold");
    std::string seg_frames, seg_manifest;
    int seg_folds = 5;
    std::optional<double> seg_threshold;
    add_common(seg, common);
    seg->add_option("--frame-embeddings", seg_frames)->required();
    seg->add_option("--manifest", seg_manifest)->required();
    seg->add_option("--folds", seg_folds);
    seg->add_option("--threshold", seg_threshold);

    ProbeArgs pa;
    auto add_probe_flags = [&](CLI::App* cmd) {
        add_common(cmd, common);
        cmd->add_option("--train-embeddings", pa.train_emb)->required();
        cmd->add_option("--train-manifest", pa.train_manifest)->required();
        cmd->add_option("--eval-embeddings", pa.eval_emb)->required();
        cmd->add_option("--eval-manifest", pa.eval_manifest)->required();
        cmd->add_option("--task", pa.task)->check(CLI::IsMember({"multi_class", "multi_label"}));
    };
    auto* probe = app.add_subcommand("eval-probe", "2-layer MLP probe on frozen embeddings");
    add_probe_flags(probe);
    auto* sweep = app.add_subcommand("eval-sweep", "probe at increasing fractions of the training labels");
    add_probe_flags(sweep);
    sweep->add_option("--percentages", pa.percentages)->delimiter(',');
    sweep->add_option("--csv", pa.csv, "curve CSV (default <out>.csv)");

    auto* report = app.add_subcommand("report", "merge eval reports into one document");
    std::vector<std::string> inputs;
    add_common(report, common);
    report->add_option("inputs", inputs)->required();

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) return cmd_gen_synthetic(common, syn, out_dir, force, out);
        if (distill->parsed()) return cmd_distill(common, da, out, err);
        if (embed->parsed()) return cmd_embed(common, embed_manifest, embed_ckpt, level, out);
        if (zs->parsed()) return cmd_eval_zeroshot(common, zs_emb, zs_labels, zs_manifest, out);
        if (cmr->parsed()) return cmd_eval_cmr(common, cmr_q, cmr_c, cmr_manifest, direction, include_self, out);
        if (seg->parsed()) return cmd_eval_segment(common, seg_frames, seg_manifest, seg_folds, seg_threshold, out);
        if (probe->parsed()) return cmd_eval_probe(common, pa, out);
        if (sweep->parsed()) return cmd_eval_sweep(common, pa, out);
        if (report->parsed()) return cmd_report(common, inputs, out);
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return e.is_validation() ? 2 : 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}

}  // namespace xmodal

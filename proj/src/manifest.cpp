#include "xmodal/manifest.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "xmodal/binary_io.hpp"
#include "xmodal/errors.hpp"
#include "xmodal/wav.hpp"

namespace xmodal {

using nlohmann::json;

namespace {
constexpr const char* kFormat = "xmodal-manifest";
constexpr int kVersion = 1;
}  // namespace

const char* to_string(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Valid: return "valid";
        case Split::Test: return "test";
    }
    return "train";
}

Split parse_split(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "valid") return Split::Valid;
    if (s == "test") return Split::Test;
    throw InvalidInput("unknown split '" + s + "'");
}

DatasetManifest DatasetManifest::filter(Split split) const {
    DatasetManifest out{classes, {}, base_dir};
    for (const auto& r : records)
        if (r.split == split) out.records.push_back(r);
    return out;
}

const ManifestRecord* DatasetManifest::find(const std::string& clip_id) const {
    for (const auto& r : records)
        if (r.clip_id == clip_id) return &r;
    return nullptr;
}

std::filesystem::path DatasetManifest::resolve_audio(const ManifestRecord& r) const {
    std::filesystem::path p(r.audio_path);
    return p.is_absolute() || base_dir.empty() ? p : base_dir / p;
}

std::vector<SegmentAnnotation> DatasetManifest::segments() const {
    std::vector<SegmentAnnotation> out;
    for (const auto& r : records) out.insert(out.end(), r.segments.begin(), r.segments.end());
    return out;
}

namespace {

// Checks one record against the vocabulary; `line` is 0 for in-memory checks.
void validate_record(const ManifestRecord& r, const std::set<std::string>& vocab, std::size_t line) {
    auto fail = [&](const std::string& why) -> void {
        if (line) throw ParseError(line, why);
        throw InvalidInput(why);
    };
    if (r.clip_id.empty()) fail("record has an empty clip_id");
    if (r.sample_rate <= 0) fail("clip '" + r.clip_id + "' has non-positive sample_rate");
    if (!(r.duration_seconds >= 0.0)) fail("clip '" + r.clip_id + "' has negative duration");
    for (const auto& l : r.labels)
        if (!vocab.count(l)) throw UnknownLabel((line ? "line " + std::to_string(line) + ": " : std::string()) +
                                                "label '" + l + "' not in class vocabulary");
    for (const auto& s : r.segments) {
        if (!vocab.count(s.label))
            throw UnknownLabel((line ? "line " + std::to_string(line) + ": " : std::string()) + "segment label '" +
                               s.label + "' not in class vocabulary");
        if (!(0.0 <= s.onset && s.onset < s.offset && s.offset <= r.duration_seconds))
            fail("segment [" + std::to_string(s.onset) + ", " + std::to_string(s.offset) + ") of clip '" + r.clip_id +
                 "' violates 0 <= onset < offset <= duration");
    }
}

void validate_folds(const std::vector<ManifestRecord>& records) {
    std::set<int> folds;
    std::size_t with_fold = 0;
    for (const auto& r : records) {
        if (r.fold) {
            ++with_fold;
            folds.insert(*r.fold);
        }
    }
    if (with_fold == 0) return;
    if (with_fold != records.size()) throw InvalidInput("fold must be present on every record or on none");
    int expect = 1;
    for (int f : folds) {
        if (f != expect) throw InvalidInput("folds must cover 1..K without gaps");
        ++expect;
    }
}

json record_to_json(const ManifestRecord& r) {
    json j;
    j["clip_id"] = r.clip_id;
    j["audio_path"] = r.audio_path;
    j["sample_rate"] = r.sample_rate;
    j["duration_seconds"] = r.duration_seconds;
    j["labels"] = r.labels;
    j["split"] = to_string(r.split);
    if (r.fold) j["fold"] = *r.fold;
    if (!r.segments.empty()) {
        json segs = json::array();
        for (const auto& s : r.segments) segs.push_back({{"onset", s.onset}, {"offset", s.offset}, {"label", s.label}});
        j["segments"] = std::move(segs);
    }
    return j;
}

ManifestRecord record_from_json(const json& j, std::size_t line) {
    if (!j.is_object()) throw ParseError(line, "record is not a JSON object");
    ManifestRecord r;
    try {
        r.clip_id = j.at("clip_id").get<std::string>();
        r.audio_path = j.at("audio_path").get<std::string>();
        r.sample_rate = j.at("sample_rate").get<int>();
        r.duration_seconds = j.at("duration_seconds").get<double>();
        r.labels = j.value("labels", std::vector<std::string>{});
        r.split = parse_split(j.value("split", std::string("train")));
        if (j.contains("fold") && !j.at("fold").is_null()) r.fold = j.at("fold").get<int>();
        if (j.contains("segments")) {
            for (const auto& s : j.at("segments")) {
                r.segments.push_back(SegmentAnnotation{r.clip_id, s.at("onset").get<double>(),
                                                       s.at("offset").get<double>(), s.at("label").get<std::string>()});
            }
        }
    } catch (const json::exception& e) {
        throw ParseError(line, std::string("malformed record: ") + e.what());
    } catch (const InvalidInput& e) {
        throw ParseError(line, e.what());
    }
    return r;
}

}  // namespace

void DatasetManifest::validate() const {
    const std::set<std::string> vocab(classes.begin(), classes.end());
    if (vocab.size() != classes.size()) throw InvalidInput("class vocabulary has duplicates");
    std::set<std::string> seen;
    for (const auto& r : records) {
        if (!seen.insert(r.clip_id).second) throw DuplicateId("clip_id '" + r.clip_id + "' appears twice");
        validate_record(r, vocab, 0);
    }
    validate_folds(records);
}

DatasetManifest parse_manifest(const std::string& text, std::filesystem::path base_dir) {
    DatasetManifest m;
    m.base_dir = std::move(base_dir);
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    bool have_header = false;
    std::set<std::string> vocab, seen;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ParseError(lineno, std::string("invalid JSON: ") + e.what());
        }
        if (!have_header) {
            if (!j.is_object() || !j.contains("classes"))
                throw ParseError(lineno, "missing header line declaring the class vocabulary");
            try {
                if (j.value("format", std::string(kFormat)) != kFormat) throw ParseError(lineno, "unknown format");
                if (j.value("version", kVersion) != kVersion) throw ParseError(lineno, "unsupported manifest version");
                m.classes = j.at("classes").get<std::vector<std::string>>();
            } catch (const json::exception& e) {
                throw ParseError(lineno, std::string("malformed header: ") + e.what());
            }
            vocab = {m.classes.begin(), m.classes.end()};
            if (vocab.size() != m.classes.size()) throw ParseError(lineno, "class vocabulary has duplicates");
            have_header = true;
            continue;
        }
        ManifestRecord r = record_from_json(j, lineno);
        if (!seen.insert(r.clip_id).second)
            throw DuplicateId("line " + std::to_string(lineno) + ": clip_id '" + r.clip_id + "' appears twice");
        validate_record(r, vocab, lineno);
        m.records.push_back(std::move(r));
    }
    if (!have_header) throw ParseError(lineno, "missing header line declaring the class vocabulary");
    try {
        validate_folds(m.records);
    } catch (const InvalidInput& e) {
        throw ParseError(lineno, e.what());
    }
    return m;
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
    const auto bytes = bin::read_file(path);
    return parse_manifest(std::string(bytes.begin(), bytes.end()), path.parent_path());
}

std::string format_manifest(const DatasetManifest& manifest) {
    manifest.validate();
    json header = {{"format", kFormat}, {"version", kVersion}, {"classes", manifest.classes}};
    std::string out = header.dump() + "\n";
    for (const auto& r : manifest.records) out += record_to_json(r).dump() + "\n";
    return out;
}

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
    bin::write_file_atomic(path, format_manifest(manifest));
}

AudioClip load_audio(const DatasetManifest& manifest, const ManifestRecord& record) {
    AudioClip clip = read_wav(manifest.resolve_audio(record), record.clip_id);
    if (clip.sample_rate != record.sample_rate)
        throw InvalidInput("clip '" + record.clip_id + "' declares " + std::to_string(record.sample_rate) +
                           " Hz but its WAV is " + std::to_string(clip.sample_rate) + " Hz");
    return clip;
}

}  // namespace xmodal

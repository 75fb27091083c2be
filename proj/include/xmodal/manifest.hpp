#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "xmodal/dsp.hpp"

namespace xmodal {

/// Timed event annotation; times in seconds, half-open [onset, offset).
struct SegmentAnnotation {
    std::string clip_id;
    double onset = 0.0;
    double offset = 0.0;
    std::string label;

    friend bool operator==(const SegmentAnnotation&, const SegmentAnnotation&) = default;
};

enum class Split { Train, Valid, Test };

const char* to_string(Split s);
Split parse_split(const std::string& s);

struct ManifestRecord {
    std::string clip_id;
    std::string audio_path;  // relative paths resolve against the manifest directory
    int sample_rate = 16000;
    double duration_seconds = 0.0;
    std::vector<std::string> labels;
    std::vector<SegmentAnnotation> segments;
    Split split = Split::Train;
    std::optional<int> fold;

    friend bool operator==(const ManifestRecord&, const ManifestRecord&) = default;
};

struct DatasetManifest {
    std::vector<std::string> classes;
    std::vector<ManifestRecord> records;
    std::filesystem::path base_dir;

    DatasetManifest filter(Split split) const;
    const ManifestRecord* find(const std::string& clip_id) const;
    std::filesystem::path resolve_audio(const ManifestRecord& r) const;
    /// All segment annotations in record order.
    std::vector<SegmentAnnotation> segments() const;

    /// Checks unique ids, known labels, segment bounds and fold coverage.
    void validate() const;

    bool same_content(const DatasetManifest& other) const {
        return classes == other.classes && records == other.records;
    }
};

/// Line-delimited JSON: one header object {"format","version","classes"}
/// followed by one record object per line. Errors carry 1-based lines.
DatasetManifest parse_manifest(const std::string& text, std::filesystem::path base_dir = {});
DatasetManifest read_manifest(const std::filesystem::path& path);
std::string format_manifest(const DatasetManifest& manifest);
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

/// Reads the record's WAV and checks it against the declared sample rate.
AudioClip load_audio(const DatasetManifest& manifest, const ManifestRecord& record);

}  // namespace xmodal

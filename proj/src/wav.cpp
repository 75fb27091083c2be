#include "xmodal/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "xmodal/binary_io.hpp"
#include "xmodal/errors.hpp"

namespace xmodal {

double quantize_pcm16(double sample) {
    const double clamped = std::clamp(sample, -1.0, 1.0);
    const auto code = static_cast<std::int16_t>(std::clamp(std::lround(clamped * 32768.0), -32768L, 32767L));
    return static_cast<double>(code) / 32768.0;
}

AudioClip read_wav(const std::filesystem::path& path, std::string id) {
    const auto data = bin::read_file(path);
    bin::Reader r(data);
    const std::string where = "'" + path.string() + "'";
    try {
        char tag[4];
        r.bytes(tag, 4);
        if (std::string_view(tag, 4) != "RIFF") throw InvalidInput(where + " is not a RIFF file");
        r.u32();
        r.bytes(tag, 4);
        if (std::string_view(tag, 4) != "WAVE") throw InvalidInput(where + " is not a WAVE file");

        bool have_fmt = false;
        std::uint16_t channels = 0, bits = 0;
        std::uint32_t rate = 0;
        while (r.remaining() >= 8) {
            r.bytes(tag, 4);
            const std::uint32_t chunk = r.u32();
            const std::string_view name(tag, 4);
            if (name == "fmt ") {
                if (chunk < 16) throw InvalidInput(where + " has a short fmt chunk");
                const auto format = r.pod<std::uint16_t>();
                channels = r.pod<std::uint16_t>();
                rate = r.u32();
                r.u32();
                r.pod<std::uint16_t>();
                bits = r.pod<std::uint16_t>();
                r.seek(r.position() + (chunk - 16) + (chunk & 1));
                if (format != 1) throw InvalidInput(where + " is not PCM");
                if (channels != 1)
                    throw InvalidInput(where + " has " + std::to_string(channels) + " channels; mono required");
                if (bits != 16) throw InvalidInput(where + " is not 16-bit PCM");
                have_fmt = true;
            } else if (name == "data") {
                if (!have_fmt) throw InvalidInput(where + " has data before fmt");
                if (chunk > r.remaining()) throw IoError(where + " data chunk is truncated");
                AudioClip clip;
                clip.id = id.empty() ? path.stem().string() : std::move(id);
                clip.sample_rate = static_cast<int>(rate);
                clip.samples.resize(chunk / 2);
                for (auto& s : clip.samples) s = static_cast<double>(r.pod<std::int16_t>()) / 32768.0;
                return clip;
            } else {
                r.seek(r.position() + chunk + (chunk & 1));
            }
        }
    } catch (const TruncatedPayload&) {
        throw IoError(where + " is truncated");
    }
    throw InvalidInput(where + " has no data chunk");
}

void write_wav(const std::filesystem::path& path, const AudioClip& clip) {
    if (clip.sample_rate <= 0) throw InvalidInput("clip '" + clip.id + "' has invalid sample rate");
    const auto data_bytes = static_cast<std::uint32_t>(clip.samples.size() * 2);
    bin::Writer w;
    w.bytes("RIFF", 4);
    w.u32(36 + data_bytes);
    w.bytes("WAVE", 4);
    w.bytes("fmt ", 4);
    w.u32(16);
    w.pod<std::uint16_t>(1);
    w.pod<std::uint16_t>(1);
    w.u32(static_cast<std::uint32_t>(clip.sample_rate));
    w.u32(static_cast<std::uint32_t>(clip.sample_rate) * 2);
    w.pod<std::uint16_t>(2);
    w.pod<std::uint16_t>(16);
    w.bytes("data", 4);
    w.u32(data_bytes);
    for (double s : clip.samples) w.pod(static_cast<std::int16_t>(std::lround(quantize_pcm16(s) * 32768.0)));
    bin::write_file_atomic(path, w.buffer());
}

}  // namespace xmodal

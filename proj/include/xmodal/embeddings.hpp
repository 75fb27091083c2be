#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xmodal/encoder.hpp"

namespace xmodal {

/// Ordered id -> float32 row table; the in-memory form of an embedding file.
class EmbeddingTable {
public:
    EmbeddingTable() = default;
    explicit EmbeddingTable(std::uint32_t dim) : dim_(dim) {}

    std::uint32_t dim() const noexcept { return dim_; }
    std::size_t count() const noexcept { return ids_.size(); }
    const std::vector<std::string>& ids() const noexcept { return ids_; }
    const std::vector<float>& values() const noexcept { return values_; }

    /// Throws DuplicateId / InvalidInput on dimension mismatch.
    void add(const std::string& id, std::span<const float> row);
    void add(const std::string& id, const Embedding& e);

    std::optional<std::size_t> find(const std::string& id) const;
    std::span<const float> row(std::size_t i) const { return {values_.data() + i * dim_, dim_}; }
    Embedding embedding(std::size_t i) const;

    friend bool operator==(const EmbeddingTable& a, const EmbeddingTable& b) {
        return a.dim_ == b.dim_ && a.ids_ == b.ids_ && a.values_ == b.values_;
    }

private:
    std::uint32_t dim_ = 0;
    std::vector<std::string> ids_;
    std::vector<float> values_;
    std::map<std::string, std::size_t> index_;
};

namespace embedding_file {
inline constexpr char kMagic[4] = {'X', 'M', 'E', 'B'};
inline constexpr std::uint32_t kVersion = 1;
inline constexpr std::size_t kHeaderBytes = 4 + 4 + 4 + 8 + 8;
}  // namespace embedding_file

/// Layout: magic "XMEB", u32 version, u32 dim, u64 count, u64 id-table
/// offset, then count*dim little-endian f32 (row-major), then the id table
/// (u32 byte length + UTF-8 bytes per id).
std::vector<unsigned char> serialize_embeddings(const EmbeddingTable& table);
EmbeddingTable deserialize_embeddings(const std::vector<unsigned char>& bytes);

void write_embeddings(const EmbeddingTable& table, const std::filesystem::path& path);
/// Throws BadMagic, VersionMismatch, TruncatedPayload.
EmbeddingTable read_embeddings(const std::filesystem::path& path);

/// Frozen clip-level teacher targets. Exposes no mutation path.
class TeacherStore {
public:
    explicit TeacherStore(EmbeddingTable table) : table_(std::move(table)) {}

    std::uint32_t dim() const noexcept { return table_.dim(); }
    std::size_t size() const noexcept { return table_.count(); }
    bool contains(const std::string& id) const { return table_.find(id).has_value(); }
    /// Throws MissingTeacherEmbedding.
    std::span<const float> row(const std::string& id) const;
    Embedding lookup(const std::string& id) const;
    const EmbeddingTable& table() const noexcept { return table_; }

private:
    const EmbeddingTable table_;
};

}  // namespace xmodal

#include "xmodal/embeddings.hpp"

#include <cstring>

#include "xmodal/binary_io.hpp"
#include "xmodal/errors.hpp"

namespace xmodal {

void EmbeddingTable::add(const std::string& id, std::span<const float> row) {
    if (row.size() != dim_)
        throw InvalidInput("embedding '" + id + "' has dimension " + std::to_string(row.size()) + ", table expects " +
                           std::to_string(dim_));
    if (index_.count(id)) throw DuplicateId("embedding id '" + id + "' appears twice");
    index_.emplace(id, ids_.size());
    ids_.push_back(id);
    values_.insert(values_.end(), row.begin(), row.end());
}

void EmbeddingTable::add(const std::string& id, const Embedding& e) {
    std::vector<float> row(e.values.begin(), e.values.end());
    add(id, row);
}

std::optional<std::size_t> EmbeddingTable::find(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

Embedding EmbeddingTable::embedding(std::size_t i) const {
    const auto r = row(i);
    return Embedding(std::vector<double>(r.begin(), r.end()));
}

std::vector<unsigned char> serialize_embeddings(const EmbeddingTable& table) {
    using namespace embedding_file;
    bin::Writer w;
    w.bytes(kMagic, 4);
    w.u32(kVersion);
    w.u32(table.dim());
    w.u64(table.count());
    const std::uint64_t id_offset = kHeaderBytes + table.values().size() * sizeof(float);
    w.u64(id_offset);
    w.bytes(table.values().data(), table.values().size() * sizeof(float));
    for (const auto& id : table.ids()) w.str(id);
    return w.buffer();
}

EmbeddingTable deserialize_embeddings(const std::vector<unsigned char>& bytes) {
    using namespace embedding_file;
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw BadMagic("not an XMEB embedding file");
    bin::Reader r(bytes);
    r.seek(4);
    if (bytes.size() < kHeaderBytes) throw TruncatedPayload("embedding header is incomplete");
    const auto version = r.u32();
    if (version != kVersion)
        throw VersionMismatch("embedding file version " + std::to_string(version) + ", expected " +
                              std::to_string(kVersion));
    const auto dim = r.u32();
    const auto count = r.u64();
    const auto id_offset = r.u64();
    const std::uint64_t payload = count * dim * sizeof(float);
    if (id_offset != kHeaderBytes + payload) throw TruncatedPayload("id table offset disagrees with count*dim");
    if (bytes.size() < id_offset) throw TruncatedPayload("payload shorter than count*dim floats");

    std::vector<float> values(count * dim);
    r.bytes(values.data(), values.size() * sizeof(float));
    EmbeddingTable table(dim);
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::string id = r.str();
        table.add(id, std::span<const float>(values.data() + i * dim, dim));
    }
    if (r.remaining() != 0) throw CorruptTensor("unexpected bytes after id table");
    return table;
}

void write_embeddings(const EmbeddingTable& table, const std::filesystem::path& path) {
    bin::write_file_atomic(path, serialize_embeddings(table));
}

EmbeddingTable read_embeddings(const std::filesystem::path& path) {
    return deserialize_embeddings(bin::read_file(path));
}

std::span<const float> TeacherStore::row(const std::string& id) const {
    auto i = table_.find(id);
    if (!i) throw MissingTeacherEmbedding(id);
    return table_.row(*i);
}

Embedding TeacherStore::lookup(const std::string& id) const {
    auto r = row(id);
    return Embedding(std::vector<double>(r.begin(), r.end()));
}

}  // namespace xmodal

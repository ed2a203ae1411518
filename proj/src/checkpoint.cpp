#include "fka/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace fka {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
  public:
    explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }

    std::string str(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }

    bool done() const { return pos_ == bytes_.size(); }

  private:
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) throw VersionError("checkpoint truncated at byte " + std::to_string(pos_));
    }

    const std::vector<std::uint8_t>& bytes_;
    std::size_t pos_ = 0;
};

} // namespace

std::vector<std::uint8_t> encode_checkpoint(const std::vector<CheckpointEntry>& entries) {
    std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
    put_u32(out, kCheckpointVersion);
    put_u32(out, static_cast<std::uint32_t>(entries.size()));
    for (const auto& e : entries) {
        put_u32(out, static_cast<std::uint32_t>(e.name.size()));
        out.insert(out.end(), e.name.begin(), e.name.end());
        put_u32(out, static_cast<std::uint32_t>(e.shape.size()));
        for (auto d : e.shape) put_u32(out, static_cast<std::uint32_t>(d));
        for (float f : e.values) put_u32(out, std::bit_cast<std::uint32_t>(f));
    }
    return out;
}

std::vector<CheckpointEntry> decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
    Reader in(bytes);
    if (in.str(4) != std::string(kCheckpointMagic, 4)) throw VersionError("not a checkpoint (bad magic)");
    const auto version = in.u32();
    if (version != kCheckpointVersion) {
        throw VersionError("checkpoint version " + std::to_string(version) + ", expected " +
                           std::to_string(kCheckpointVersion));
    }
    const auto count = in.u32();
    std::vector<CheckpointEntry> entries;
    entries.reserve(count);
    for (std::uint32_t p = 0; p < count; ++p) {
        CheckpointEntry e;
        e.name = in.str(in.u32());
        const auto rank = in.u32();
        for (std::uint32_t r = 0; r < rank; ++r) e.shape.push_back(in.u32());
        e.values.resize(shape_numel(e.shape));
        for (auto& v : e.values) v = std::bit_cast<float>(in.u32());
        entries.push_back(std::move(e));
    }
    if (!in.done()) throw VersionError("trailing bytes after checkpoint payload");
    return entries;
}

std::vector<CheckpointEntry> snapshot(const ParameterStore& store) { return snapshot(store.entries()); }

std::vector<CheckpointEntry> snapshot(const std::vector<NamedParameter>& params) {
    std::vector<CheckpointEntry> entries;
    for (const auto& p : params) {
        entries.push_back({p.name, p.value.shape(), std::vector<float>(p.value.data().begin(), p.value.data().end())});
    }
    return entries;
}

void save_checkpoint(const std::filesystem::path& path, const ParameterStore& store) {
    save_checkpoint(path, store.entries());
}

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedParameter>& params) {
    const auto bytes = encode_checkpoint(snapshot(params));
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write checkpoint " + path.string());
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("short write to " + path.string());
}

std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read checkpoint " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

void load_entries(const std::vector<CheckpointEntry>& entries, ParameterStore& store) {
    load_entries(entries, store.entries());
}

void load_entries(const std::vector<CheckpointEntry>& entries, const std::vector<NamedParameter>& params) {
    if (entries.size() != params.size()) {
        throw VersionError("checkpoint has " + std::to_string(entries.size()) + " parameters, model has " +
                           std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const auto& e = entries[i];
        const auto& p = params[i];
        if (e.name != p.name || e.shape != p.value.shape()) {
            throw VersionError("checkpoint entry " + e.name + shape_str(e.shape) + " does not match model " + p.name +
                               shape_str(p.value.shape()));
        }
    }
    for (std::size_t i = 0; i < entries.size(); ++i) {
        auto dst = params[i].value;
        std::memcpy(dst.mutable_data().data(), entries[i].values.data(), entries[i].values.size() * sizeof(float));
    }
}

void load_checkpoint(const std::filesystem::path& path, ParameterStore& store) {
    load_entries(read_checkpoint(path), store);
}

} // namespace fka

#include "damformer/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

namespace damformer {

namespace {

void put_u32(std::ofstream& f, uint32_t v) {
    const uint8_t b[4] = {static_cast<uint8_t>(v & 0xff), static_cast<uint8_t>((v >> 8) & 0xff),
                          static_cast<uint8_t>((v >> 16) & 0xff),
                          static_cast<uint8_t>((v >> 24) & 0xff)};
    f.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(const std::vector<uint8_t>& in, size_t& offset, const std::string& what) {
    if (in.size() < offset + 4)
        throw DataError("DFW1: truncated " + what + " at offset " + std::to_string(offset));
    const uint32_t v = static_cast<uint32_t>(in[offset]) |
                       (static_cast<uint32_t>(in[offset + 1]) << 8) |
                       (static_cast<uint32_t>(in[offset + 2]) << 16) |
                       (static_cast<uint32_t>(in[offset + 3]) << 24);
    offset += 4;
    return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParamList& params) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("DFW1: cannot open " + path.string() + " for writing");
    f.write("DFW1", 4);
    put_u32(f, static_cast<uint32_t>(params.size()));
    std::vector<float> scratch;
    for (const NamedParam& p : params) {
        put_u32(f, static_cast<uint32_t>(p.name.size()));
        f.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        put_u32(f, static_cast<uint32_t>(p.tensor.ndim()));
        for (int d : p.tensor.shape()) put_u32(f, static_cast<uint32_t>(d));
        scratch.resize(static_cast<size_t>(p.tensor.numel()));
        if (p.tensor.dtype() == Dtype::f32) {
            auto src = p.tensor.data<float>();
            std::copy(src.begin(), src.end(), scratch.begin());
        } else {
            auto src = p.tensor.data<double>();
            for (size_t i = 0; i < scratch.size(); ++i) scratch[i] = static_cast<float>(src[i]);
        }
        f.write(reinterpret_cast<const char*>(scratch.data()),
                static_cast<std::streamsize>(scratch.size() * 4));
    }
    if (!f) throw DataError("DFW1: short write to " + path.string());
}

void load_checkpoint(const std::filesystem::path& path, ParamList& params) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("DFW1: cannot open " + path.string());
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (bytes.size() < 4 || std::memcmp(bytes.data(), "DFW1", 4) != 0)
        throw DataError("DFW1: bad magic at offset 0 in " + path.string());
    size_t offset = 4;
    const uint32_t count = get_u32(bytes, offset, "parameter count");

    struct Entry {
        Shape dims;
        size_t payload_offset;
    };
    std::map<std::string, Entry> entries;
    for (uint32_t i = 0; i < count; ++i) {
        const uint32_t name_len = get_u32(bytes, offset, "name length");
        if (bytes.size() < offset + name_len)
            throw DataError("DFW1: truncated name at offset " + std::to_string(offset));
        std::string name(reinterpret_cast<const char*>(bytes.data() + offset), name_len);
        offset += name_len;
        const uint32_t ndim = get_u32(bytes, offset, "ndim of " + name);
        Entry e;
        int64_t elems = 1;
        for (uint32_t d = 0; d < ndim; ++d) {
            const uint32_t dim = get_u32(bytes, offset, "dims of " + name);
            e.dims.push_back(static_cast<int>(dim));
            elems *= dim;
        }
        e.payload_offset = offset;
        if (bytes.size() < offset + static_cast<size_t>(elems) * 4)
            throw DataError("DFW1: truncated payload of " + name + " at offset " +
                            std::to_string(offset));
        offset += static_cast<size_t>(elems) * 4;
        entries.emplace(std::move(name), std::move(e));
    }

    std::string problems;
    for (NamedParam& p : params) {
        auto it = entries.find(p.name);
        if (it == entries.end()) {
            problems += "  missing: " + p.name + "\n";
            continue;
        }
        if (it->second.dims != p.tensor.shape()) {
            problems += "  shape mismatch: " + p.name + " file " + shape_str(it->second.dims) +
                        " vs model " + shape_str(p.tensor.shape()) + "\n";
        }
        entries.erase(it);
    }
    for (const auto& [name, e] : entries) problems += "  unexpected: " + name + "\n";
    if (!problems.empty())
        throw DataError("DFW1: checkpoint " + path.string() + " does not match the model:\n" +
                        problems);

    // second pass: copy the payloads
    offset = 8;
    for (uint32_t i = 0; i < count; ++i) {
        const uint32_t name_len = get_u32(bytes, offset, "name length");
        std::string name(reinterpret_cast<const char*>(bytes.data() + offset), name_len);
        offset += name_len;
        const uint32_t ndim = get_u32(bytes, offset, "ndim");
        int64_t elems = 1;
        for (uint32_t d = 0; d < ndim; ++d) elems *= get_u32(bytes, offset, "dims");
        for (NamedParam& p : params) {
            if (p.name != name) continue;
            if (p.tensor.dtype() == Dtype::f32) {
                auto dst = p.tensor.mutable_data<float>();
                std::memcpy(dst.data(), bytes.data() + offset, static_cast<size_t>(elems) * 4);
            } else {
                auto dst = p.tensor.mutable_data<double>();
                for (int64_t j = 0; j < elems; ++j) {
                    float v;
                    std::memcpy(&v, bytes.data() + offset + j * 4, 4);
                    dst[static_cast<size_t>(j)] = static_cast<double>(v);
                }
            }
            break;
        }
        offset += static_cast<size_t>(elems) * 4;
    }
}

}  // namespace damformer

#pragma once

#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "arrayssl/common.hpp"
#include "arrayssl/models.hpp"

namespace arrayssl {

// In-memory image of a .nnck file: named f32 tensors (entry order is the
// model's collection order) plus ordered key=value metadata.
struct Checkpoint {
    struct Entry {
        std::string name;
        Shape shape;
        std::vector<float> data;
    };
    std::vector<Entry> tensors;
    std::vector<std::pair<std::string, std::string>> metadata;

    const Entry* find(const std::string& name) const {
        for (const Entry& e : tensors)
            if (e.name == name) return &e;
        return nullptr;
    }
    const std::string* meta(const std::string& key) const {
        for (const auto& [k, v] : metadata)
            if (k == key) return &v;
        return nullptr;
    }
};

// .nnck: "NNCK", u8 version (1), u32 tensor count, then per tensor
// (u16 name length, name, u8 ndim, u32 per dim, f32 payload), then
// u32 metadata byte length and newline-separated key=value lines.
inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("save_checkpoint: cannot open " + path + " for writing");
    out.write("NNCK", 4);
    detail::write_u8(out, 1);
    detail::write_u32(out, static_cast<uint32_t>(ckpt.tensors.size()));
    for (const Checkpoint::Entry& e : ckpt.tensors) {
        if (e.name.empty() || e.name.size() > 0xffff)
            throw ValueError("save_checkpoint: bad tensor name length for '" + e.name + "'");
        if (e.shape.size() > 0xff)
            throw ValueError("save_checkpoint: too many dimensions for " + e.name);
        if (numel(e.shape) != static_cast<int64_t>(e.data.size()))
            throw ValueError("save_checkpoint: payload of " + e.name + " does not match " +
                             shape_str(e.shape));
        detail::write_u16(out, static_cast<uint16_t>(e.name.size()));
        out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        detail::write_u8(out, static_cast<uint8_t>(e.shape.size()));
        for (int64_t d : e.shape) detail::write_u32(out, static_cast<uint32_t>(d));
        out.write(reinterpret_cast<const char*>(e.data.data()),
                  static_cast<std::streamsize>(e.data.size() * sizeof(float)));
    }
    std::string meta;
    for (const auto& [k, v] : ckpt.metadata) {
        if (k.find_first_of("=\n") != std::string::npos ||
            v.find('\n') != std::string::npos)
            throw ValueError("save_checkpoint: metadata key/value may not contain '=' in "
                             "the key or newlines: " +
                             k);
        meta += k + "=" + v + "\n";
    }
    detail::write_u32(out, static_cast<uint32_t>(meta.size()));
    out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
    if (!out) throw FormatError("save_checkpoint: write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("load_checkpoint: cannot open " + path);
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, "NNCK", 4) != 0)
        throw FormatError("load_checkpoint: " + path + " is not an NNCK checkpoint");
    const uint8_t version = detail::read_u8(in, "version");
    if (version != 1)
        throw FormatError("load_checkpoint: " + path + " has unsupported version " +
                          std::to_string(version));
    const uint32_t count = detail::read_u32(in, "tensor count");
    Checkpoint ckpt;
    ckpt.tensors.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        Checkpoint::Entry e;
        const uint16_t name_len = detail::read_u16(in, "tensor name length");
        e.name.resize(name_len);
        if (!in.read(e.name.data(), name_len))
            throw FormatError("load_checkpoint: " + path + " truncated in tensor name");
        const uint8_t ndim = detail::read_u8(in, "tensor rank");
        for (uint8_t d = 0; d < ndim; ++d)
            e.shape.push_back(static_cast<int64_t>(detail::read_u32(in, "tensor dim")));
        const int64_t n = numel(e.shape);
        e.data.resize(static_cast<size_t>(n));
        if (!in.read(reinterpret_cast<char*>(e.data.data()),
                     static_cast<std::streamsize>(n * sizeof(float))))
            throw FormatError("load_checkpoint: " + path + " truncated in payload of " +
                              e.name);
        ckpt.tensors.push_back(std::move(e));
    }
    const uint32_t meta_len = detail::read_u32(in, "metadata length");
    std::string meta(meta_len, '\0');
    if (!in.read(meta.data(), meta_len))
        throw FormatError("load_checkpoint: " + path + " truncated in metadata");
    size_t pos = 0;
    while (pos < meta.size()) {
        size_t nl = meta.find('\n', pos);
        if (nl == std::string::npos) nl = meta.size();
        const std::string line = meta.substr(pos, nl - pos);
        pos = nl + 1;
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw FormatError("load_checkpoint: " + path + " metadata line '" + line +
                              "' has no '='");
        ckpt.metadata.emplace_back(line.substr(0, eq), line.substr(eq + 1));
    }
    return ckpt;
}

// Capture every parameter and BN running statistic of a model.
template <class Net>
Checkpoint snapshot(Net& net,
                    std::vector<std::pair<std::string, std::string>> metadata = {}) {
    ParamList ps;
    BufferList bs;
    net.collect(&ps, &bs);
    Checkpoint ckpt;
    for (auto& [name, t] : ps) ckpt.tensors.push_back({name, t.shape(), t.values()});
    for (auto& [name, data] : bs)
        ckpt.tensors.push_back({name, {static_cast<int64_t>(data->size())}, *data});
    ckpt.metadata = std::move(metadata);
    return ckpt;
}

// Write checkpoint values back into a model built with matching topology.
template <class Net>
void restore(Net& net, const Checkpoint& ckpt) {
    ParamList ps;
    BufferList bs;
    net.collect(&ps, &bs);
    if (ckpt.tensors.size() != ps.size() + bs.size())
        throw ValueError("restore: checkpoint has " + std::to_string(ckpt.tensors.size()) +
                         " tensors, model expects " + std::to_string(ps.size() + bs.size()));
    for (auto& [name, t] : ps) {
        const Checkpoint::Entry* e = ckpt.find(name);
        if (!e) throw ValueError("restore: checkpoint is missing tensor " + name);
        if (e->shape != t.shape())
            throw ValueError("restore: shape of " + name + " is " + shape_str(e->shape) +
                             ", model expects " + shape_str(t.shape()));
        t.values() = e->data;
    }
    for (auto& [name, data] : bs) {
        const Checkpoint::Entry* e = ckpt.find(name);
        if (!e) throw ValueError("restore: checkpoint is missing buffer " + name);
        if (e->data.size() != data->size())
            throw ValueError("restore: buffer " + name + " has " +
                             std::to_string(e->data.size()) + " entries, model expects " +
                             std::to_string(data->size()));
        *data = e->data;
    }
}

}  // namespace arrayssl

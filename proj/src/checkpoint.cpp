#include "dwic/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace dwic {

namespace {

void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
    os.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
    os.write(reinterpret_cast<const char*>(b), 8);
}

void write_f32(std::ostream& os, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    write_u32(os, bits);
}

std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

std::uint64_t read_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

float read_f32(std::istream& is) {
    const std::uint32_t bits = read_u32(is);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, std::uint64_t spec_hash,
                     const std::vector<NamedTensor>& tensors) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("checkpoint: cannot open for writing: " + path);
    os.write("PCNN", 4);
    write_u32(os, kCheckpointVersion);
    write_u64(os, spec_hash);
    write_u32(os, static_cast<std::uint32_t>(tensors.size()));
    for (const NamedTensor& t : tensors) {
        write_u32(os, static_cast<std::uint32_t>(t.name.size()));
        os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
        write_u32(os, static_cast<std::uint32_t>(t.dims.size()));
        std::size_t n = 1;
        for (std::uint32_t d : t.dims) {
            write_u32(os, d);
            n *= d;
        }
        if (n != t.data.size()) throw std::logic_error("checkpoint: tensor size mismatch");
        for (float v : t.data) write_f32(os, v);
    }
    if (!os) throw std::runtime_error("checkpoint: write failed: " + path);
}

CheckpointData load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "PCNN", 4) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    const std::uint32_t version = read_u32(is);
    if (version != kCheckpointVersion)
        throw std::runtime_error("checkpoint: unsupported version in " + path);

    CheckpointData out;
    out.spec_hash = read_u64(is);
    const std::uint32_t count = read_u32(is);
    out.tensors.resize(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedTensor& t = out.tensors[i];
        const std::uint32_t name_len = read_u32(is);
        t.name.resize(name_len);
        is.read(t.name.data(), name_len);
        const std::uint32_t rank = read_u32(is);
        t.dims.resize(rank);
        std::size_t n = 1;
        for (std::uint32_t& d : t.dims) {
            d = read_u32(is);
            n *= d;
        }
        t.data.resize(n);
        for (float& v : t.data) v = read_f32(is);
    }
    if (!is) throw std::runtime_error("checkpoint: truncated file: " + path);
    return out;
}

std::vector<NamedTensor> snapshot_state(Model<float>& model) {
    std::vector<NamedTensor> out;
    for (const ParamRef<float>& p : model.state()) {
        NamedTensor t;
        t.name = p.name;
        for (std::size_t d : p.value->shape()) t.dims.push_back(static_cast<std::uint32_t>(d));
        t.data.assign(p.value->data(), p.value->data() + p.value->size());
        out.push_back(std::move(t));
    }
    return out;
}

void restore_state(Model<float>& model, const std::vector<NamedTensor>& tensors) {
    std::map<std::string, const NamedTensor*> by_name;
    for (const NamedTensor& t : tensors) by_name[t.name] = &t;
    for (const ParamRef<float>& p : model.state()) {
        auto it = by_name.find(p.name);
        if (it == by_name.end())
            throw std::runtime_error("checkpoint: missing tensor " + p.name);
        const NamedTensor& t = *it->second;
        if (t.data.size() != p.value->size())
            throw std::runtime_error("checkpoint: shape mismatch for " + p.name);
        std::copy(t.data.begin(), t.data.end(), p.value->data());
    }
}

void save_model(const std::string& path, Model<float>& model) {
    save_checkpoint(path, model.spec().hash(), snapshot_state(model));
}

void load_model(const std::string& path, Model<float>& model) {
    const CheckpointData data = load_checkpoint(path);
    if (data.spec_hash != model.spec().hash())
        throw std::runtime_error("checkpoint: spec hash mismatch in " + path);
    restore_state(model, data.tensors);
}

}  // namespace dwic

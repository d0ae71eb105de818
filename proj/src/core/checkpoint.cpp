#include "eddkit/checkpoint.hpp"

#include "eddkit/errors.hpp"
#include "eddkit/io.hpp"

namespace edd {

std::vector<std::uint8_t> Checkpoint::encode() const {
    ByteWriter w;
    w.raw("EDDK");
    w.u32(version);
    for (const auto& e : entries) {
        w.u32(static_cast<std::uint32_t>(e.name.size()));
        w.raw(e.name);
        w.u32(static_cast<std::uint32_t>(e.value.rank()));
        for (std::size_t d : e.value.shape()) w.u32(static_cast<std::uint32_t>(d));
        for (double v : e.value.values()) w.f32(static_cast<float>(v));
    }
    w.seal();
    return w.bytes();
}

Checkpoint Checkpoint::decode(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes, "checkpoint");
    if (r.raw(4) != "EDDK") throw IoError("checkpoint: bad magic");
    Checkpoint ck;
    ck.version = r.u32();
    if (ck.version != kVersion) throw IoError("checkpoint: unsupported version " + std::to_string(ck.version));
    while (!r.done()) {
        Entry e;
        e.name = r.raw(r.u32());
        const std::uint32_t rank = r.u32();
        Shape shape(rank);
        for (auto& d : shape) d = r.u32();
        std::vector<double> values(shape_numel(shape));
        for (auto& v : values) v = r.f32();
        e.value = Tensor(std::move(shape), std::move(values));
        ck.entries.push_back(std::move(e));
    }
    return ck;
}

std::uint64_t Checkpoint::checksum() const { return fnv1a64(encode()); }

void Checkpoint::save(const std::filesystem::path& path) const { atomic_write_file(path, encode()); }

Checkpoint Checkpoint::load(const std::filesystem::path& path) { return decode(read_file(path)); }

Checkpoint capture(const Model& model) {
    Checkpoint ck;
    for (const auto& p : model.parameters()) ck.entries.push_back({p.name, p.var.value()});
    return ck;
}

void restore(Model& model, const Checkpoint& checkpoint) {
    auto& params = model.parameters();
    if (params.size() != checkpoint.entries.size())
        throw InvalidArgument("architecture mismatch: model has " + std::to_string(params.size()) +
                              " parameters, checkpoint has " + std::to_string(checkpoint.entries.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& e = checkpoint.entries[i];
        if (e.name != params[i].name || e.value.shape() != params[i].var.shape())
            throw InvalidArgument("architecture mismatch at parameter " + std::to_string(i) + ": model '" +
                                  params[i].name + "' " + shape_str(params[i].var.shape()) + ", checkpoint '" +
                                  e.name + "' " + shape_str(e.value.shape()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) params[i].var.mutable_value() = checkpoint.entries[i].value;
}

} // namespace edd

#include "ltcl/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "ltcl/error.hpp"

namespace ltcl {

namespace {

template <typename T>
T to_little(T v) {
    if constexpr (std::endian::native == std::endian::big) {
        auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
        std::reverse(bytes.begin(), bytes.end());
        return std::bit_cast<T>(bytes);
    } else {
        return v;
    }
}

template <typename T>
void put(std::ostream& out, T v) {
    const T le = to_little(v);
    out.write(reinterpret_cast<const char*>(&le), sizeof(T));
}

template <typename T>
T get(std::istream& in, const char* what) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (in.gcount() != static_cast<std::streamsize>(sizeof(T))) {
        throw ParseError(ParseFailure::Truncated, std::string("checkpoint truncated while reading ") + what);
    }
    return to_little(v);
}

}  // namespace

void write_checkpoint(std::ostream& out, const Model& model) {
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint32_t>(out, model.kind() == ModelKind::Linear ? 0U : 1U);
    const auto& sizes = model.layout().layer_sizes();
    put<std::uint32_t>(out, static_cast<std::uint32_t>(sizes.size()));
    for (Index s : sizes) {
        put<std::uint64_t>(out, static_cast<std::uint64_t>(s));
    }
    const auto& values = model.params().values();
    put<std::uint64_t>(out, static_cast<std::uint64_t>(values.size()));
    for (Index i = 0; i < values.size(); ++i) {
        put<double>(out, values(i));
    }
    require(static_cast<bool>(out), ErrorCode::Io, "checkpoint write failed");
}

Model read_checkpoint(std::istream& in) {
    char magic[sizeof(kCheckpointMagic)];
    in.read(magic, sizeof(magic));
    if (in.gcount() != static_cast<std::streamsize>(sizeof(magic))) {
        throw ParseError(ParseFailure::Truncated, "checkpoint truncated while reading magic");
    }
    if (std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
        throw ParseError(ParseFailure::BadMagic, "not a model checkpoint");
    }
    const auto version = get<std::uint32_t>(in, "version");
    if (version != kCheckpointVersion) {
        throw ParseError(ParseFailure::BadMagic, "unsupported checkpoint version " + std::to_string(version));
    }
    const auto kind = get<std::uint32_t>(in, "model kind");
    if (kind > 1) {
        throw ParseError(ParseFailure::DimensionMismatch, "unknown model kind " + std::to_string(kind));
    }
    const auto n_sizes = get<std::uint32_t>(in, "layer count");
    if (n_sizes < 2 || (kind == 0 && n_sizes != 2)) {
        throw ParseError(ParseFailure::DimensionMismatch, "invalid layer count " + std::to_string(n_sizes));
    }
    std::vector<Index> sizes;
    for (std::uint32_t i = 0; i < n_sizes; ++i) {
        const auto s = get<std::uint64_t>(in, "layer size");
        if (s == 0 || s > (1ULL << 31)) {
            throw ParseError(ParseFailure::DimensionMismatch, "invalid layer size " + std::to_string(s));
        }
        sizes.push_back(static_cast<Index>(s));
    }
    ParamLayout layout(sizes);
    const auto count = get<std::uint64_t>(in, "parameter count");
    if (count != static_cast<std::uint64_t>(layout.total_size())) {
        throw ParseError(ParseFailure::DimensionMismatch,
                         "parameter count " + std::to_string(count) + " does not match layer sizes (" +
                             std::to_string(layout.total_size()) + ")");
    }
    Vector values(layout.total_size());
    for (Index i = 0; i < values.size(); ++i) {
        values(i) = get<double>(in, "parameters");
    }
    return Model(kind == 0 ? ModelKind::Linear : ModelKind::Mlp, ParamVector(std::move(layout), std::move(values)));
}

void save_checkpoint(const std::filesystem::path& path, const Model& model) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorCode::Io, "cannot open " + path.string() + " for writing");
    write_checkpoint(out, model);
}

Model load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ParseError(ParseFailure::Unreadable, "cannot open " + path.string());
    }
    return read_checkpoint(in);
}

}  // namespace ltcl

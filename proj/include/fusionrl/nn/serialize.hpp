#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "../binary_io.hpp"
#include "layers.hpp"

namespace fusionrl::nn {

inline constexpr char kParamMagic[9] = "FRLPARAM";
inline constexpr std::uint32_t kParamVersion = 1;

/// Parameter file layout (all little-endian):
///   "FRLPARAM" | u32 version | u32 architecture id | u32 scalar bytes (4 or 8)
///   | u32 hyperparameter count, then (string name, f64 value) pairs
///   | u32 block count, then per block (u32 rank, u32 dims...)
///   | raw scalars of every block in order.
struct ParamFileHeader {
    std::uint32_t architecture_id = 0;
    std::uint32_t scalar_bytes = 0;
    std::vector<std::pair<std::string, double>> hyperparameters;
    std::vector<Shape> blocks;

    double hyperparameter(const std::string& name, double fallback) const {
        for (const auto& [k, v] : hyperparameters)
            if (k == name) return v;
        return fallback;
    }
};

template <typename T>
void write_parameters(std::ostream& out, std::uint32_t architecture_id,
                      const std::vector<std::pair<std::string, double>>& hyperparameters,
                      const std::vector<ParamRef<T>>& params) {
    static_assert(sizeof(T) == 4 || sizeof(T) == 8);
    io::write_magic(out, kParamMagic);
    io::write_le<std::uint32_t>(out, kParamVersion);
    io::write_le<std::uint32_t>(out, architecture_id);
    io::write_le<std::uint32_t>(out, sizeof(T));
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(hyperparameters.size()));
    for (const auto& [name, value] : hyperparameters) {
        io::write_string(out, name);
        io::write_le<double>(out, value);
    }
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
    for (const auto& p : params) {
        io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.shape.size()));
        for (auto d : p.shape) io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    }
    for (const auto& p : params) io::write_array_le(out, p.value.data(), p.value.size());
    if (!out) throw FormatError("failed writing parameter file");
}

inline ParamFileHeader read_parameter_header(std::istream& in) {
    io::expect_magic(in, kParamMagic, "parameter");
    if (io::read_le<std::uint32_t>(in) != kParamVersion) throw FormatError("unsupported parameter file version");
    ParamFileHeader h;
    h.architecture_id = io::read_le<std::uint32_t>(in);
    h.scalar_bytes = io::read_le<std::uint32_t>(in);
    if (h.scalar_bytes != 4 && h.scalar_bytes != 8) throw FormatError("unsupported scalar width");
    const auto nh = io::read_le<std::uint32_t>(in);
    for (std::uint32_t i = 0; i < nh; ++i) {
        auto name = io::read_string(in);
        h.hyperparameters.emplace_back(std::move(name), io::read_le<double>(in));
    }
    const auto nb = io::read_le<std::uint32_t>(in);
    if (nb > 4096) throw FormatError("implausible block count");
    for (std::uint32_t b = 0; b < nb; ++b) {
        const auto rank = io::read_le<std::uint32_t>(in);
        if (rank > 8) throw FormatError("implausible block rank");
        Shape s(rank);
        for (auto& d : s) d = io::read_le<std::uint32_t>(in);
        h.blocks.push_back(std::move(s));
    }
    return h;
}

/// Reads the scalar payload following a header into `params`, converting
/// between single and double precision when the widths differ.
template <typename T>
void read_parameter_values(std::istream& in, const ParamFileHeader& h, const std::vector<ParamRef<T>>& params) {
    if (h.blocks.size() != params.size()) throw FormatError("parameter file block count does not match network");
    for (std::size_t b = 0; b < params.size(); ++b)
        if (h.blocks[b] != params[b].shape)
            throw FormatError("parameter block " + std::to_string(b) + " has shape " + shape_string(h.blocks[b]) +
                              ", network expects " + shape_string(params[b].shape));
    for (const auto& p : params) {
        if (h.scalar_bytes == sizeof(T)) {
            io::read_array_le(in, p.value.data(), p.value.size());
        } else if (h.scalar_bytes == 4) {
            std::vector<float> tmp(p.value.size());
            io::read_array_le(in, tmp.data(), tmp.size());
            std::copy(tmp.begin(), tmp.end(), p.value.begin());
        } else {
            std::vector<double> tmp(p.value.size());
            io::read_array_le(in, tmp.data(), tmp.size());
            for (std::size_t i = 0; i < tmp.size(); ++i) p.value[i] = static_cast<T>(tmp[i]);
        }
    }
}

} // namespace fusionrl::nn

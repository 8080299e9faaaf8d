#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>

#include "crf/field.hpp"

namespace crf {

/// Binary field snapshot:
///   "CRFL" | version u32 | dim u32 | resolution u32 x dim |
///   covariant count u32 | contravariant count u32 | float64 components
/// All integers and floats little-endian; components in storage order.
inline constexpr std::uint32_t kSnapshotVersion = 1;

void write_snapshot(std::ostream& out, const TensorField& t);
void write_snapshot(const std::filesystem::path& path, const TensorField& t);
void write_snapshot(const std::filesystem::path& path, const ScalarField& f);

/// The format does not record the period; the caller supplies it (same on
/// every axis).
TensorField read_snapshot(std::istream& in, double period = 1.0);
TensorField read_snapshot(const std::filesystem::path& path, double period = 1.0);

}  // namespace crf

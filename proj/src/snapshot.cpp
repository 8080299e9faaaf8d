#include "crf/snapshot.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "crf/errors.hpp"

namespace crf {

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  std::array<char, 4> b{};
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
  out.write(b.data(), 4);
}

void put_f64(std::ostream& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  std::array<char, 8> b{};
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xffu);
  out.write(b.data(), 8);
}

std::uint32_t get_u32(std::istream& in) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 4)) throw ArgumentError("snapshot: truncated header");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

double get_f64(std::istream& in) {
  std::array<unsigned char, 8> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 8)) throw ArgumentError("snapshot: truncated data");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(v);
}

}  // namespace

void write_snapshot(std::ostream& out, const TensorField& t) {
  out.write("CRFL", 4);
  put_u32(out, kSnapshotVersion);
  put_u32(out, static_cast<std::uint32_t>(t.dim()));
  for (int a = 0; a < t.dim(); ++a) put_u32(out, static_cast<std::uint32_t>(t.grid().resolution(a)));
  put_u32(out, static_cast<std::uint32_t>(t.valence().down));
  put_u32(out, static_cast<std::uint32_t>(t.valence().up));
  for (double v : t.data()) put_f64(out, v);
  if (!out) throw Error("snapshot: write failed");
}

void write_snapshot(const std::filesystem::path& path, const TensorField& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("snapshot: cannot open " + path.string());
  write_snapshot(out, t);
}

void write_snapshot(const std::filesystem::path& path, const ScalarField& f) {
  write_snapshot(path, TensorField::from_scalar(f));
}

TensorField read_snapshot(std::istream& in, double period) {
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), 4) || std::memcmp(magic.data(), "CRFL", 4) != 0) {
    throw ArgumentError("snapshot: bad magic");
  }
  const std::uint32_t version = get_u32(in);
  if (version != kSnapshotVersion) throw ArgumentError("snapshot: unsupported version");
  const std::uint32_t dim = get_u32(in);
  if (dim < 1 || dim > 16) throw ArgumentError("snapshot: implausible dimension");
  GridSpec spec;
  spec.dim = static_cast<int>(dim);
  for (std::uint32_t a = 0; a < dim; ++a) spec.resolution.push_back(static_cast<int>(get_u32(in)));
  spec.period.assign(dim, period);
  const std::uint32_t down = get_u32(in);
  const std::uint32_t up = get_u32(in);
  TensorField t(make_grid(spec), Valence{static_cast<int>(up), static_cast<int>(down)});
  for (double& v : t.data()) v = get_f64(in);
  return t;
}

TensorField read_snapshot(const std::filesystem::path& path, double period) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArgumentError("snapshot: cannot open " + path.string());
  return read_snapshot(in, period);
}

}  // namespace crf

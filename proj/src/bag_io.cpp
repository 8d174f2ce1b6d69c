#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "m4/data.hpp"
#include "m4/errors.hpp"
#include "byte_io.hpp"

namespace m4 {

using detail::ByteReader;
using detail::ByteWriter;
using detail::read_file;
using detail::write_file;

namespace {

constexpr std::uint8_t kBagMagic[4] = {'M', 'B', 'G', '1'};

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::string trim(std::string s) {
  auto ws = [](unsigned char c) { return std::isspace(c); };
  s.erase(s.begin(), std::find_if_not(s.begin(), s.end(), ws));
  s.erase(std::find_if_not(s.rbegin(), s.rend(), ws).base(), s.end());
  return s;
}

}  // namespace

void Bag::validate() const {
  if (n == 0) throw EmptyBagError("bag '" + id + "' has no instances");
  if (d == 0) throw ShapeError("bag '" + id + "' has zero feature width");
  if (features.size() != n * d) {
    throw ShapeError("bag '" + id + "' holds " + std::to_string(features.size()) +
                     " values, expected " + std::to_string(n * d));
  }
  for (double v : features) {
    if (!std::isfinite(v)) throw NumericError("bag '" + id + "' contains non-finite features");
  }
  if (!grid.empty()) {
    if (grid.size() != n) throw ShapeError("bag '" + id + "' grid size does not match N");
    std::set<std::pair<std::uint16_t, std::uint16_t>> seen;
    for (const auto& g : grid) {
      if (!seen.emplace(g.row, g.col).second) {
        throw ShapeError("bag '" + id + "' has duplicate grid coordinates");
      }
    }
  }
}

ad::Tensor Bag::tensor() const {
  validate();
  return ad::Tensor({n, d}, features);
}

std::vector<double> Bag::label_values() const {
  std::vector<double> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) out[i] = labels[i] == 1 ? 1.0 : 0.0;
  return out;
}

std::vector<std::uint8_t> Bag::label_mask() const {
  std::vector<std::uint8_t> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) out[i] = labels[i] != kMissingLabel;
  return out;
}

std::vector<std::uint8_t> encode_bag(const Bag& bag) {
  bag.validate();
  if (bag.n > std::numeric_limits<std::uint32_t>::max() ||
      bag.d > std::numeric_limits<std::uint32_t>::max()) {
    throw SizeOverflowError("bag dimensions exceed the u32 header fields");
  }
  if (static_cast<std::uint64_t>(bag.n) * bag.d > std::numeric_limits<std::uint32_t>::max()) {
    throw SizeOverflowError("bag element count N·d exceeds 2^32 − 1");
  }
  ByteWriter w;
  w.bytes(kBagMagic);
  w.u32(static_cast<std::uint32_t>(bag.n));
  w.u32(static_cast<std::uint32_t>(bag.d));
  w.u8(bag.grid.empty() ? 0 : 1);
  for (const auto& g : bag.grid) {
    w.u16(g.row);
    w.u16(g.col);
  }
  for (double v : bag.features) w.f32(static_cast<float>(v));
  return w.take();
}

Bag decode_bag(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "bag file");
  r.need(4, "magic");
  if (!std::equal(std::begin(kBagMagic), std::end(kBagMagic), bytes.begin())) {
    throw BadMagicError("not an MBG1 bag file (bad magic bytes)");
  }
  for (int i = 0; i < 4; ++i) r.u8("magic");
  Bag bag;
  bag.n = r.u32("N");
  bag.d = r.u32("d");
  const std::uint8_t has_grid = r.u8("grid flag");
  if (has_grid > 1) throw FormatError("bag grid flag must be 0 or 1");
  const std::uint64_t count = static_cast<std::uint64_t>(bag.n) * bag.d;
  if (count > std::numeric_limits<std::uint32_t>::max()) {
    throw SizeOverflowError("bag element count N·d = " + std::to_string(count) + " overflows");
  }
  if (bag.n == 0) throw EmptyBagError("bag file declares zero instances");
  if (bag.d == 0) throw FormatError("bag file declares zero feature width");
  if (has_grid) {
    r.need(4 * bag.n, "grid coordinates");
    bag.grid.resize(bag.n);
    for (auto& g : bag.grid) {
      g.row = r.u16("grid row");
      g.col = r.u16("grid col");
    }
  }
  r.need(4 * count, "features");
  bag.features.resize(count);
  for (auto& v : bag.features) v = r.f32("features");
  if (r.remaining() != 0) {
    throw FormatError("bag file has " + std::to_string(r.remaining()) + " trailing bytes");
  }
  bag.validate();
  return bag;
}

void write_bag(const Bag& bag, const std::filesystem::path& path) {
  write_file(path, encode_bag(bag));
}

Bag read_bag(const std::filesystem::path& path) {
  auto bytes = read_file(path);
  Bag bag = decode_bag(bytes);
  bag.id = path.stem().string();
  return bag;
}

void write_manifest(const Manifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "id,path";
  for (const auto& t : manifest.task_names) out << ',' << t;
  out << '\n';
  for (const auto& e : manifest.entries) {
    if (e.labels.size() != manifest.task_names.size()) {
      throw ConfigError("manifest entry '" + e.id + "' has the wrong number of labels");
    }
    out << e.id << ',' << e.path;
    for (auto l : e.labels) {
      out << ',';
      if (l != kMissingLabel) out << static_cast<int>(l);
    }
    out << '\n';
  }
  if (!out) throw IoError("short write to " + path.string());
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError("manifest " + path.string() + " is empty");
  auto header = split_csv_line(trim(line));
  if (header.size() < 3 || header[0] != "id" || header[1] != "path") {
    throw FormatError("manifest header must be 'id,path,<task1>,...'");
  }
  Manifest m;
  m.task_names.assign(header.begin() + 2, header.end());
  std::set<std::string> ids;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw FormatError("manifest line " + std::to_string(line_no) + " has " +
                        std::to_string(cells.size()) + " cells, expected " +
                        std::to_string(header.size()));
    }
    ManifestEntry e;
    e.id = cells[0];
    e.path = cells[1];
    if (!ids.insert(e.id).second) throw FormatError("duplicate manifest id '" + e.id + "'");
    for (std::size_t c = 2; c < cells.size(); ++c) {
      const auto cell = trim(cells[c]);
      if (cell.empty()) {
        e.labels.push_back(kMissingLabel);
      } else if (cell == "0" || cell == "1") {
        e.labels.push_back(static_cast<std::int8_t>(cell[0] - '0'));
      } else {
        throw FormatError("manifest line " + std::to_string(line_no) + ": label '" + cell +
                          "' is not 0, 1 or empty");
      }
    }
    m.entries.push_back(std::move(e));
  }
  return m;
}

std::vector<Bag> load_bags(const Manifest& manifest, const std::filesystem::path& base_dir) {
  std::vector<Bag> bags;
  bags.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) {
    std::filesystem::path p = e.path;
    if (p.is_relative()) p = base_dir / p;
    if (!std::filesystem::exists(p)) {
      throw IoError("manifest entry '" + e.id + "' references missing file " + p.string());
    }
    Bag bag = read_bag(p);
    bag.id = e.id;
    bag.labels = e.labels;
    bags.push_back(std::move(bag));
  }
  return bags;
}

std::vector<std::vector<std::uint8_t>> read_signal_masks(const std::filesystem::path& path,
                                                        const std::vector<Bag>& bags) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::map<std::string, std::string> by_id;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty()) continue;
    auto comma = line.find(',');
    if (comma == std::string::npos) throw FormatError("malformed signal table line");
    by_id[line.substr(0, comma)] = line.substr(comma + 1);
  }
  std::vector<std::vector<std::uint8_t>> masks;
  for (const auto& bag : bags) {
    std::vector<std::uint8_t> mask(bag.n, 0);
    auto it = by_id.find(bag.id);
    if (it == by_id.end()) throw FormatError("no signal entry for bag '" + bag.id + "'");
    std::istringstream is(it->second);
    std::string idx;
    while (std::getline(is, idx, ';')) {
      if (idx.empty()) continue;
      auto k = std::stoul(idx);
      if (k >= bag.n) throw FormatError("signal index out of range for bag '" + bag.id + "'");
      mask[k] = 1;
    }
    masks.push_back(std::move(mask));
  }
  return masks;
}

}  // namespace m4

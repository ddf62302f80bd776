#include "carunet/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include <boost/crc.hpp>

#include "carunet/run_config.hpp"

namespace carunet {
inline namespace CARUNET_PRECISION_NS {

namespace {

constexpr const char* kMagic = "CARUNET-CHECKPOINT 1";

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

std::uint32_t crc32(const std::vector<char>& bytes) {
  boost::crc_32_type crc;
  crc.process_bytes(bytes.data(), bytes.size());
  return crc.checksum();
}

std::vector<char> encode(std::span<const Real> values) {
  std::vector<char> bytes(values.size() * sizeof(float));
  for (std::size_t i = 0; i < values.size(); ++i) {
    const float f = static_cast<float>(values[i]);
    std::memcpy(bytes.data() + i * sizeof(float), &f, sizeof(float));
  }
  return bytes;
}

std::string shape_text(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.rank(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out;
}

struct ManifestEntry {
  std::string name;
  std::string shape;
  std::size_t offset = 0;
  std::size_t length = 0;
  std::uint32_t crc = 0;
};

struct ParsedCheckpoint {
  CarUnetConfig config;
  std::vector<ManifestEntry> entries;
  std::vector<char> payload;
};

ParsedCheckpoint parse(const std::filesystem::path& path, bool header_only) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::data, "cannot open checkpoint " + path.string());
  const std::string where = "checkpoint " + path.string() + ": ";

  std::string line;
  if (!std::getline(in, line) || line != kMagic) fail(ErrorKind::data, where + "missing header line");

  ParsedCheckpoint parsed;
  std::string model_text;
  std::size_t expected = 0;
  bool saw_count = false, saw_end = false;
  while (std::getline(in, line)) {
    if (line == "end") {
      saw_end = true;
      break;
    }
    if (line.rfind("model.", 0) == 0) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) fail(ErrorKind::data, where + "malformed line '" + line + "'");
      model_text += line.substr(6, eq - 6) + "=" + line.substr(eq + 1) + "\n";
    } else if (line.rfind("tensors=", 0) == 0) {
      expected = std::stoul(line.substr(8));
      saw_count = true;
    } else if (line.rfind("tensor ", 0) == 0) {
      std::istringstream ls(line.substr(7));
      ManifestEntry e;
      std::string crc_hex;
      if (!(ls >> e.name >> e.shape >> e.offset >> e.length >> crc_hex)) {
        fail(ErrorKind::data, where + "malformed manifest line '" + line + "'");
      }
      e.crc = static_cast<std::uint32_t>(std::stoul(crc_hex, nullptr, 16));
      parsed.entries.push_back(std::move(e));
    } else {
      fail(ErrorKind::data, where + "unexpected line '" + line + "'");
    }
  }
  if (!saw_end) fail(ErrorKind::data, where + "truncated header (no 'end' line)");
  if (!saw_count || expected != parsed.entries.size()) {
    fail(ErrorKind::data, where + "manifest lists " + std::to_string(parsed.entries.size()) + " tensors, header says " +
                              std::to_string(expected));
  }
  try {
    RunConfig rc;
    apply_section_text(rc, "model", model_text);
    parsed.config = rc.model;
  } catch (const Error& e) {
    fail(ErrorKind::data, where + "bad architecture record: " + e.what());
  }
  if (header_only) return parsed;

  parsed.payload.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  return parsed;
}

void fill_from(const ParsedCheckpoint& parsed, CarUnet& net, const std::string& where) {
  const ParameterList params = net.parameters();
  std::map<std::string, const ManifestEntry*> by_name;
  for (const ManifestEntry& e : parsed.entries) by_name[e.name] = &e;

  std::vector<std::string> problems;
  for (const NamedTensor& p : params) {
    const auto it = by_name.find(p.name);
    if (it == by_name.end()) {
      problems.push_back(p.name + ": missing from checkpoint (network expects " + shape_text(p.tensor.shape()) + ")");
      continue;
    }
    const ManifestEntry& e = *it->second;
    if (e.shape != shape_text(p.tensor.shape())) {
      problems.push_back(p.name + ": checkpoint shape " + e.shape + ", network shape " + shape_text(p.tensor.shape()));
    } else if (e.length != p.tensor.numel() * sizeof(float)) {
      problems.push_back(p.name + ": byte length " + std::to_string(e.length) + " does not match shape " + e.shape);
    }
    by_name.erase(it);
  }
  for (const auto& [name, e] : by_name) problems.push_back(name + ": not part of the network (shape " + e->shape + ")");
  if (!problems.empty()) {
    std::string msg = where + "does not fit the network:";
    for (const std::string& p : problems) msg += "\n  " + p;
    fail(ErrorKind::shape, msg);
  }

  // Validate every buffer before touching the network.
  std::vector<std::string> corrupt;
  for (const ManifestEntry& e : parsed.entries) {
    if (e.offset + e.length > parsed.payload.size()) {
      corrupt.push_back(e.name + ": truncated (needs bytes up to " + std::to_string(e.offset + e.length) + ", file has " +
                        std::to_string(parsed.payload.size()) + ")");
      continue;
    }
    std::vector<char> bytes(parsed.payload.begin() + e.offset, parsed.payload.begin() + e.offset + e.length);
    if (crc32(bytes) != e.crc) corrupt.push_back(e.name + ": checksum mismatch");
  }
  if (!corrupt.empty()) {
    std::string msg = where + "corrupt tensor data:";
    for (const std::string& c : corrupt) msg += "\n  " + c;
    fail(ErrorKind::data, msg);
  }

  std::map<std::string, const ManifestEntry*> lookup;
  for (const ManifestEntry& e : parsed.entries) lookup[e.name] = &e;
  for (const NamedTensor& p : params) {
    const ManifestEntry& e = *lookup.at(p.name);
    Tensor t = p.tensor;
    auto values = t.data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      float f;
      std::memcpy(&f, parsed.payload.data() + e.offset + i * sizeof(float), sizeof(float));
      values[i] = static_cast<Real>(f);
    }
  }
}

}  // namespace

void save_weights(const CarUnet& net, const std::filesystem::path& path) {
  const ParameterList params = net.parameters();
  std::vector<std::vector<char>> blobs;
  std::ostringstream header;
  header << kMagic << '\n';
  std::istringstream model(section_text(net.config()));
  for (std::string line; std::getline(model, line);) header << "model." << line << '\n';
  header << "tensors=" << params.size() << '\n';
  std::size_t offset = 0;
  for (const NamedTensor& p : params) {
    blobs.push_back(encode(p.tensor.data()));
    const std::vector<char>& b = blobs.back();
    header << "tensor " << p.name << ' ' << shape_text(p.tensor.shape()) << ' ' << offset << ' ' << b.size() << ' '
           << std::hex << std::setw(8) << std::setfill('0') << crc32(b) << std::dec << std::setfill(' ') << '\n';
    offset += b.size();
  }
  header << "end\n";

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::data, "cannot write checkpoint " + path.string());
  const std::string h = header.str();
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (const std::vector<char>& b : blobs) out.write(b.data(), static_cast<std::streamsize>(b.size()));
  if (!out) fail(ErrorKind::data, "failed writing checkpoint " + path.string());
}

CarUnet load_weights(const std::filesystem::path& path) {
  const ParsedCheckpoint parsed = parse(path, false);
  CarUnet net = CarUnet::build(parsed.config);
  try {
    fill_from(parsed, net, "checkpoint " + path.string() + ": ");
  } catch (const Error& e) {
    throw Error(ErrorKind::data, e.what());
  }
  return net;
}

void load_weights_into(CarUnet& net, const std::filesystem::path& path) {
  const ParsedCheckpoint parsed = parse(path, false);
  fill_from(parsed, net, "checkpoint " + path.string() + ": ");
}

CarUnetConfig read_checkpoint_config(const std::filesystem::path& path) { return parse(path, true).config; }

}  // namespace CARUNET_PRECISION_NS
}  // namespace carunet

#include "distill_lab/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <vector>

namespace distill_lab {

namespace {

constexpr std::string_view kMagic = "distill_lab-checkpoint";
constexpr std::string_view kEndManifest = "end_manifest";

using Kind = CheckpointError::Kind;

[[noreturn]] void fail(Kind kind, const std::string& what) { throw CheckpointError(kind, what); }

// One stored array: either a parameter or a batchnorm statistic vector.
struct Slot {
  std::string name;
  Shape shape;
  Param* param = nullptr;
  std::vector<double>* stats = nullptr;
};

void connector_slots(Connector& c, const std::string& prefix, std::vector<Slot>& out) {
  for (std::size_t i = 0; i < c.blocks().size(); ++i) {
    auto& b = c.blocks()[i];
    const std::string p = prefix + std::to_string(i) + ".";
    out.push_back({p + "weight", b.affine.weight.shape(), &b.affine.weight});
    out.push_back({p + "bias", b.affine.bias.shape(), &b.affine.bias});
    out.push_back({p + "gamma", b.gamma.shape(), &b.gamma});
    out.push_back({p + "beta", b.beta.shape(), &b.beta});
    out.push_back({p + "running_mean", {b.stats.running_mean.size()}, nullptr, &b.stats.running_mean});
    out.push_back({p + "running_var", {b.stats.running_var.size()}, nullptr, &b.stats.running_var});
  }
}

std::vector<Slot> slots(Checkpoint& ckpt) {
  std::vector<Slot> out;
  if (ckpt.network) {
    auto& net = *ckpt.network;
    for (std::size_t i = 0; i < net.phi.layers().size(); ++i) {
      auto& l = net.phi.layers()[i];
      out.push_back({"net.phi." + std::to_string(i) + ".weight", l.weight.shape(), &l.weight});
      out.push_back({"net.phi." + std::to_string(i) + ".bias", l.bias.shape(), &l.bias});
    }
    if (net.adapter) connector_slots(*net.adapter, "net.adapter.", out);
    out.push_back({"net.g.weight", net.g.weight.shape(), &net.g.weight});
    out.push_back({"net.g.bias", net.g.bias.shape(), &net.g.bias});
  }
  if (ckpt.connector) connector_slots(*ckpt.connector, "connector.", out);
  return out;
}

std::string connector_topology(const Connector& c) {
  std::string s;
  for (std::size_t i = 0; i < c.depth(); ++i) {
    const auto& b = c.blocks()[i];
    if (i) s += ',';
    s += std::to_string(b.affine.in_dim()) + '>' + std::to_string(b.affine.out_dim());
    if (b.relu) s += ":relu";
  }
  return s;
}

std::string network_topology(const Network& net) {
  std::string s = "phi=" + std::to_string(net.phi.input_dim());
  for (const auto& l : net.phi.layers()) {
    s += ',' + std::to_string(l.out_dim()) + (l.activation == Activation::relu ? ":relu" : ":none");
  }
  s += ";head=" + std::to_string(net.g.input_dim()) + 'x' + std::to_string(net.g.classes());
  if (net.adapter) s += ";adapter=" + connector_topology(*net.adapter);
  return s;
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    auto pos = s.find(sep, start);
    parts.emplace_back(s.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

std::uint64_t parse_uint(std::string_view text, const std::string& what) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size() || text.empty()) {
    fail(Kind::malformed, "bad " + what + ": '" + std::string(text) + "'");
  }
  return v;
}

Connector parse_connector(std::string_view text) {
  std::vector<ConnectorBlock> blocks;
  for (const auto& part : split(text, ',')) {
    auto fields = split(part, ':');
    auto dims = split(fields[0], '>');
    if (dims.size() != 2 || fields.size() > 2 || (fields.size() == 2 && fields[1] != "relu")) {
      fail(Kind::malformed, "bad connector block '" + part + "'");
    }
    const auto in = parse_uint(dims[0], "connector width");
    const auto out = parse_uint(dims[1], "connector width");
    if (in == 0 || out == 0) fail(Kind::malformed, "zero connector width");
    ConnectorBlock b;
    b.affine = AffineLayer{Param(Tensor::zeros({out, in})), Param(Tensor::zeros({out})), Activation::none};
    b.gamma = Param(Tensor::zeros({out}));
    b.beta = Param(Tensor::zeros({out}));
    b.stats = BatchNormState<double>::fresh(out);
    b.relu = fields.size() == 2;
    blocks.push_back(std::move(b));
  }
  try {
    return Connector(std::move(blocks));
  } catch (const SpecError& e) {
    fail(Kind::topology_mismatch, e.what());
  }
}

Network parse_network(std::string_view text) {
  Network net;
  bool have_phi = false, have_head = false;
  for (const auto& section : split(text, ';')) {
    auto eq = section.find('=');
    if (eq == std::string::npos) fail(Kind::malformed, "bad topology section '" + section + "'");
    const auto key = section.substr(0, eq);
    const auto value = std::string_view(section).substr(eq + 1);
    if (key == "phi") {
      auto parts = split(value, ',');
      const auto input = parse_uint(parts[0], "input width");
      std::vector<AffineLayer> layers;
      std::size_t width = input;
      for (std::size_t i = 1; i < parts.size(); ++i) {
        auto fields = split(parts[i], ':');
        if (fields.size() != 2 || (fields[1] != "relu" && fields[1] != "none")) {
          fail(Kind::malformed, "bad layer '" + parts[i] + "'");
        }
        const auto out = parse_uint(fields[0], "layer width");
        layers.push_back(AffineLayer{Param(Tensor::zeros({out, width})), Param(Tensor::zeros({out})),
                                     fields[1] == "relu" ? Activation::relu : Activation::none});
        width = out;
      }
      try {
        net.phi = FeatureExtractor(input, std::move(layers));
      } catch (const SpecError& e) {
        fail(Kind::topology_mismatch, e.what());
      }
      have_phi = true;
    } else if (key == "head") {
      auto dims = split(value, 'x');
      if (dims.size() != 2) fail(Kind::malformed, "bad head '" + std::string(value) + "'");
      const auto in = parse_uint(dims[0], "head width");
      const auto classes = parse_uint(dims[1], "class count");
      net.g = Classifier{Param(Tensor::zeros({classes, in})), Param(Tensor::zeros({classes}))};
      have_head = true;
    } else if (key == "adapter") {
      net.adapter = parse_connector(value);
    } else {
      fail(Kind::malformed, "unknown topology section '" + key + "'");
    }
  }
  if (!have_phi || !have_head) fail(Kind::malformed, "network topology needs phi and head");
  try {
    net.validate();
  } catch (const SpecError& e) {
    fail(Kind::topology_mismatch, e.what());
  }
  return net;
}

void put_le(std::string& out, std::uint64_t bits, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

std::uint64_t get_le(const unsigned char* p, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= std::uint64_t{p[i]} << (8 * i);
  return v;
}

std::uint32_t crc_of(std::string_view bytes) {
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

std::string shape_text(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += 'x';
    out += std::to_string(s[i]);
  }
  return out;
}

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
  Checkpoint copy = ckpt;
  auto entries = slots(copy);
  const int width = ckpt.meta.dtype == Dtype::f64 ? 8 : 4;

  std::string payload;
  std::ostringstream entry_lines;
  for (const auto& e : entries) {
    std::span<const double> values = e.param ? e.param->tensor().data() : std::span<const double>(*e.stats);
    const std::size_t offset = payload.size();
    for (double v : values) {
      if (width == 8) {
        put_le(payload, std::bit_cast<std::uint64_t>(v), 8);
      } else {
        put_le(payload, std::bit_cast<std::uint32_t>(static_cast<float>(v)), 4);
      }
    }
    const bool frozen = e.param ? e.param->frozen() : true;
    entry_lines << "entry: " << e.name << " shape=" << shape_text(e.shape) << " offset=" << offset
                << " bytes=" << (payload.size() - offset) << " frozen=" << (frozen ? 1 : 0) << '\n';
  }

  char crc_hex[16];
  std::snprintf(crc_hex, sizeof crc_hex, "%08x", crc_of(payload));

  std::ostringstream os;
  os << kMagic << '\n'
     << "format_version: " << ckpt.meta.format_version << '\n'
     << "dtype: " << (width == 8 ? "f64" : "f32") << '\n'
     << "class_count: " << ckpt.meta.class_count << '\n'
     << "seed: " << ckpt.meta.seed << '\n'
     << "training_step: " << ckpt.meta.training_step << '\n'
     << "topology.network: " << (ckpt.network ? network_topology(*ckpt.network) : "none") << '\n'
     << "topology.connector: " << (ckpt.connector ? connector_topology(*ckpt.connector) : "none") << '\n'
     << "entries: " << entries.size() << '\n'
     << entry_lines.str() << "payload_bytes: " << payload.size() << '\n'
     << "payload_crc32: " << crc_hex << '\n'
     << kEndManifest << '\n';
  return os.str() + payload;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  // Manifest lines up to and including end_manifest.
  std::vector<std::string> lines;
  std::size_t pos = 0;
  while (true) {
    auto nl = bytes.find('\n', pos);
    if (nl == std::string_view::npos) fail(Kind::truncated, "manifest ends before end_manifest");
    lines.emplace_back(bytes.substr(pos, nl - pos));
    pos = nl + 1;
    if (lines.back() == kEndManifest) break;
  }
  const std::string_view payload = bytes.substr(pos);

  if (lines.front() != kMagic) fail(Kind::malformed, "not a distill_lab checkpoint");
  std::map<std::string, std::string> fields;
  std::vector<std::string> entry_specs;
  for (std::size_t i = 1; i + 1 < lines.size(); ++i) {
    const auto& line = lines[i];
    auto colon = line.find(": ");
    if (colon == std::string::npos) fail(Kind::malformed, "bad manifest line '" + line + "'");
    auto key = line.substr(0, colon);
    auto value = line.substr(colon + 2);
    if (key == "entry") {
      entry_specs.push_back(value);
    } else if (!fields.emplace(key, value).second) {
      fail(Kind::malformed, "duplicate manifest key '" + key + "'");
    }
  }
  auto field = [&](const std::string& key) -> const std::string& {
    auto it = fields.find(key);
    if (it == fields.end()) fail(Kind::malformed, "manifest lacks '" + key + "'");
    return it->second;
  };

  Checkpoint ckpt;
  const auto version = parse_uint(field("format_version"), "format_version");
  if (version != static_cast<std::uint64_t>(kCheckpointFormatVersion)) {
    fail(Kind::version_mismatch, "checkpoint format_version " + std::to_string(version) + ", this build reads " +
                                     std::to_string(kCheckpointFormatVersion));
  }
  ckpt.meta.format_version = static_cast<int>(version);
  const auto& dtype = field("dtype");
  if (dtype != "f64" && dtype != "f32") fail(Kind::malformed, "unknown dtype '" + dtype + "'");
  ckpt.meta.dtype = dtype == "f64" ? Dtype::f64 : Dtype::f32;
  ckpt.meta.class_count = parse_uint(field("class_count"), "class_count");
  ckpt.meta.seed = parse_uint(field("seed"), "seed");
  ckpt.meta.training_step = parse_uint(field("training_step"), "training_step");
  if (const auto& t = field("topology.network"); t != "none") ckpt.network = parse_network(t);
  if (const auto& t = field("topology.connector"); t != "none") ckpt.connector = parse_connector(t);
  if (ckpt.network && ckpt.network->classes() != ckpt.meta.class_count) {
    fail(Kind::topology_mismatch, "class_count " + std::to_string(ckpt.meta.class_count) +
                                      " disagrees with the classifier's " +
                                      std::to_string(ckpt.network->classes()));
  }

  const auto declared = parse_uint(field("entries"), "entries");
  if (declared != entry_specs.size()) fail(Kind::malformed, "entries count disagrees with entry lines");
  auto expected = slots(ckpt);
  if (expected.size() != entry_specs.size()) {
    fail(Kind::topology_mismatch, "topology implies " + std::to_string(expected.size()) + " entries, manifest has " +
                                      std::to_string(entry_specs.size()));
  }

  const auto payload_bytes = parse_uint(field("payload_bytes"), "payload_bytes");
  if (payload.size() < payload_bytes) {
    fail(Kind::truncated, "payload has " + std::to_string(payload.size()) + " of " +
                              std::to_string(payload_bytes) + " bytes");
  }
  if (payload.size() > payload_bytes) fail(Kind::malformed, "trailing bytes after payload");
  const auto& crc_text = field("payload_crc32");
  std::uint32_t crc = 0;
  if (auto [p, ec] = std::from_chars(crc_text.data(), crc_text.data() + crc_text.size(), crc, 16);
      ec != std::errc{} || p != crc_text.data() + crc_text.size()) {
    fail(Kind::malformed, "bad payload_crc32 '" + crc_text + "'");
  }
  if (crc != crc_of(payload)) fail(Kind::checksum, "payload checksum mismatch");

  const int width = ckpt.meta.dtype == Dtype::f64 ? 8 : 4;
  const auto* raw = reinterpret_cast<const unsigned char*>(payload.data());
  std::size_t cursor = 0;
  for (std::size_t i = 0; i < expected.size(); ++i) {
    auto& slot = expected[i];
    auto parts = split(entry_specs[i], ' ');
    std::map<std::string, std::string> kv;
    for (std::size_t k = 1; k < parts.size(); ++k) {
      auto eq = parts[k].find('=');
      if (eq == std::string::npos) fail(Kind::malformed, "bad entry '" + entry_specs[i] + "'");
      kv[parts[k].substr(0, eq)] = parts[k].substr(eq + 1);
    }
    if (parts[0] != slot.name || kv["shape"] != shape_text(slot.shape)) {
      fail(Kind::topology_mismatch, "entry '" + entry_specs[i] + "' does not match expected " + slot.name + " " +
                                        shape_text(slot.shape));
    }
    const auto offset = parse_uint(kv["offset"], "offset");
    const auto count = numel(slot.shape);
    if (offset != cursor || parse_uint(kv["bytes"], "bytes") != count * width ||
        offset + count * width > payload.size()) {
      fail(Kind::malformed, "entry '" + slot.name + "' has inconsistent offset/size");
    }
    std::vector<double> values(count);
    for (std::size_t k = 0; k < count; ++k) {
      const auto* p = raw + offset + k * width;
      values[k] = width == 8 ? std::bit_cast<double>(get_le(p, 8))
                             : static_cast<double>(std::bit_cast<float>(static_cast<std::uint32_t>(get_le(p, 4))));
    }
    cursor = offset + count * width;
    if (slot.param) {
      std::copy(values.begin(), values.end(), slot.param->tensor().mutable_data().begin());
      slot.param->set_frozen(kv["frozen"] == "1");
    } else {
      *slot.stats = std::move(values);
    }
  }
  if (cursor != payload.size()) fail(Kind::malformed, "payload size disagrees with entries");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(Kind::io, "cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(Kind::io, "write to " + path.string() + " failed");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Kind::io, "cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

Network load_network(const std::filesystem::path& path) {
  auto ckpt = load_checkpoint(path);
  if (!ckpt.network) fail(Kind::topology_mismatch, path.string() + " holds no network");
  return std::move(*ckpt.network);
}

}  // namespace distill_lab

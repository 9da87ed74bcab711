#include "agyolo/weights_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "agyolo/fp16.hpp"

namespace agyolo {

static_assert(std::endian::native == std::endian::little, "weight I/O assumes a little-endian host");

using json = nlohmann::json;

namespace {

constexpr char kMagic[4] = {'A', 'G', 'Y', 'L'};

json layer_to_json(const LayerSpec& s) {
  json j = {{"kind", to_string(s.kind)}, {"inputs", s.inputs}};
  if (!s.name.empty()) j["name"] = s.name;
  switch (s.kind) {
    case LayerKind::Conv:
      j["filters"] = s.filters;
      j["size"] = s.size;
      j["stride"] = s.stride;
      j["pad"] = s.pad;
      j["groups"] = s.groups;
      j["bias"] = s.bias;
      break;
    case LayerKind::MaxPool:
      j["size"] = s.size;
      j["stride"] = s.stride;
      j["pad"] = s.pad;
      break;
    case LayerKind::Upsample:
      j["stride"] = s.stride;
      break;
    case LayerKind::Reorg:
      j["groups"] = s.groups;
      break;
    case LayerKind::Act:
      j["activation"] = to_string(s.activation);
      break;
    case LayerKind::Split:
      j["begin"] = s.begin;
      j["end"] = s.end;
      break;
    case LayerKind::YoloHead:
      j["head"] = s.head;
      break;
    default:
      break;
  }
  return j;
}

LayerSpec layer_from_json(const json& j) {
  LayerSpec s;
  s.kind = layer_kind_from_string(j.at("kind").get<std::string>());
  s.inputs = j.at("inputs").get<std::vector<int>>();
  s.name = j.value("name", "");
  s.filters = j.value("filters", 0);
  s.size = j.value("size", 1);
  s.stride = j.value("stride", 1);
  s.pad = j.value("pad", 0);
  s.groups = j.value("groups", 1);
  s.bias = j.value("bias", false);
  if (j.contains("activation")) s.activation = activation_from_string(j["activation"].get<std::string>());
  s.begin = j.value("begin", 0);
  s.end = j.value("end", 0);
  // head indices are re-established by add_head
  return s;
}

json architecture_json(const Network& net) {
  json layers = json::array();
  for (const LayerSpec& s : net.layers()) {
    json j = layer_to_json(s);
    j.erase("head");
    layers.push_back(j);
  }
  json heads = json::array();
  for (const HeadInfo& h : net.heads())
    heads.push_back({{"layer", h.layer}, {"stride", h.stride}, {"anchors", h.anchors}});
  json anchors = json::array();
  for (const Anchor& a : net.anchors().all()) anchors.push_back({a.w, a.h});
  return {{"num_classes", net.num_classes()},
          {"input_channels", net.input_channels()},
          {"anchors", anchors},
          {"heads", heads},
          {"layers", layers}};
}

// Visits every stored array in file order. Works for const and mutable networks.
template <typename Net, typename Fn>
void for_each_array(Net& net, Fn&& fn) {
  for (int id = 0; id < net.size(); ++id) {
    auto& p = net.params(id);
    if (net.layer(id).kind == LayerKind::Conv) {
      fn(p.conv.weights.span());
      if (p.conv.has_bias()) fn(std::span(p.conv.bias));
    } else if (net.layer(id).kind == LayerKind::BatchNorm) {
      fn(std::span(p.bn.gamma));
      fn(std::span(p.bn.beta));
      fn(std::span(p.bn.running_mean));
      fn(std::span(p.bn.running_var));
    }
  }
}

struct FileContents {
  json descriptor;
  Precision precision;
  std::string payload;
};

FileContents read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open weight file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string data = ss.str();
  if (data.size() < 12 || std::memcmp(data.data(), kMagic, 4) != 0)
    throw FormatError(path + ": not an AGYL weight file (bad magic)");
  std::uint32_t version = 0;
  std::uint32_t length = 0;
  std::memcpy(&version, data.data() + 4, 4);
  std::memcpy(&length, data.data() + 8, 4);
  if (version != kWeightsVersion)
    throw FormatError(path + ": unsupported weight file version " + std::to_string(version));
  if (data.size() - 12 < length) throw FormatError(path + ": truncated descriptor");
  FileContents out;
  try {
    out.descriptor = json::parse(data.substr(12, length));
  } catch (const json::exception& e) {
    throw FormatError(path + ": invalid descriptor: " + e.what());
  }
  const std::string prec = out.descriptor.value("precision", "");
  if (prec == "fp32")
    out.precision = Precision::FP32;
  else if (prec == "fp16")
    out.precision = Precision::FP16;
  else
    throw FormatError(path + ": unknown precision '" + prec + "'");
  out.payload = data.substr(12 + length);
  return out;
}

void read_payload(Network& net, const FileContents& file, const std::string& path) {
  const std::size_t elem = file.precision == Precision::FP32 ? 4 : 2;
  std::size_t pos = 0;
  for_each_array(net, [&](auto dst) {
    const std::size_t bytes = dst.size() * elem;
    if (file.payload.size() - pos < bytes) throw FormatError(path + ": truncated parameter data");
    const char* src = file.payload.data() + pos;
    if (file.precision == Precision::FP32) {
      std::memcpy(dst.data(), src, bytes);
    } else {
      for (std::size_t i = 0; i < dst.size(); ++i) {
        std::uint16_t h = 0;
        std::memcpy(&h, src + 2 * i, 2);
        dst[i] = static_cast<float>(from_half_bits(h));
      }
    }
    pos += bytes;
  });
  if (pos != file.payload.size()) throw FormatError(path + ": trailing bytes after parameter data");
  net.clear_cache();
}

}  // namespace

std::string describe_network(const Network& net, Precision precision, const std::string& meta) {
  json d = architecture_json(net);
  d["format"] = "agyl";
  d["precision"] = precision == Precision::FP32 ? "fp32" : "fp16";
  d["meta"] = json::parse(meta);
  return d.dump();
}

void save_weights(const Network& net, const std::string& path, Precision precision, const std::string& meta) {
  const std::string descriptor = describe_network(net, precision, meta);
  std::string payload;
  for_each_array(net, [&](auto src) {
    if (precision == Precision::FP32) {
      payload.append(reinterpret_cast<const char*>(src.data()), src.size() * 4);
    } else {
      for (float v : src) {
        const std::uint16_t h = to_half_bits(v);
        payload.append(reinterpret_cast<const char*>(&h), 2);
      }
    }
  });
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write weight file " + path);
  const auto length = static_cast<std::uint32_t>(descriptor.size());
  out.write(kMagic, 4);
  out.write(reinterpret_cast<const char*>(&kWeightsVersion), 4);
  out.write(reinterpret_cast<const char*>(&length), 4);
  out << descriptor << payload;
  if (!out) throw IoError("failed writing weight file " + path);
}

std::string load_weights(Network& net, const std::string& path) {
  const FileContents file = read_file(path);
  json stored = file.descriptor;
  for (const char* key : {"format", "precision", "meta"}) stored.erase(key);
  if (stored != architecture_json(net))
    throw FormatError(path + ": architecture descriptor does not match the network");
  Network staged = net;  // leave `net` untouched if the payload is bad
  read_payload(staged, file, path);
  net = std::move(staged);
  return file.descriptor.value("meta", json::object()).dump();
}

Network load_network(const std::string& path, std::string* meta) {
  const FileContents file = read_file(path);
  const json& d = file.descriptor;
  Network net;
  try {
    std::vector<Anchor> anchors;
    for (const auto& a : d.at("anchors")) anchors.push_back({a.at(0).get<double>(), a.at(1).get<double>()});
    net = Network(d.at("num_classes").get<int>(), AnchorSet(std::move(anchors)));
    net.set_input_channels(d.at("input_channels").get<int>());
    for (const auto& l : d.at("layers")) net.add(layer_from_json(l));
    for (const auto& h : d.at("heads"))
      net.add_head(h.at("layer").get<int>(), h.at("stride").get<int>(), h.at("anchors").get<std::vector<int>>());
  } catch (const json::exception& e) {
    throw FormatError(path + ": malformed descriptor: " + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(path + ": invalid architecture: " + e.what());
  }
  read_payload(net, file, path);
  if (meta) *meta = d.value("meta", json::object()).dump();
  return net;
}

}  // namespace agyolo

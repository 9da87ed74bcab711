#include "agyolo/builders.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace agyolo {

using json = nlohmann::json;

const char* const kBuiltinArchitectures = R"({
  "aliases": {
    "ag-yolo": "ag-yolo-v2"
  },
  "architectures": {
    "yolov3-tiny": {
      "family": "darknet18",
      "neck": "builtin"
    },
    "yolov3-tiny-resblock": {
      "family": "darknet18",
      "neck": "resblock",
      "neck_widths": {"deep_mid": 32, "deep_out": 256, "bridge": 128, "shallow_mid": 64, "shallow_out": 256}
    },
    "ag-yolo-v1": {
      "family": "shufflenet",
      "variant": 1,
      "stem": 24,
      "stages": [[4, 128], [8, 256], [4, 256]],
      "neck_widths": {"deep_mid": 64, "deep_out": 256, "bridge": 128, "shallow_mid": 64, "shallow_out": 128}
    },
    "ag-yolo-v2": {
      "family": "shufflenet",
      "variant": 2,
      "stem": 24,
      "stages": [[4, 128], [8, 256], [3, 256]],
      "neck_widths": {"deep_mid": 64, "deep_out": 128, "bridge": 64, "shallow_mid": 64, "shallow_out": 128}
    },
    "ag-yolo-v3": {
      "family": "shufflenet",
      "variant": 3,
      "stem": 24,
      "stages": [[4, 128], [8, 256], [4, 320]],
      "neck_widths": {"deep_mid": 64, "deep_out": 192, "bridge": 96, "shallow_mid": 64, "shallow_out": 128}
    },
    "mobilenetv2-compact": {
      "family": "mobilenetv2",
      "stem": 32,
      "blocks": [[1, 16, 1, 1], [6, 24, 3, 2], [6, 32, 4, 2], [6, 64, 3, 2], [6, 96, 2, 1], [6, 160, 1, 2]],
      "neck_widths": {"deep_mid": 128, "deep_out": 256, "bridge": 128, "shallow_mid": 128, "shallow_out": 256}
    }
  }
}
)";

// ---- GraphBuilder ----

int GraphBuilder::add(LayerSpec spec) { return net_.add(std::move(spec)); }

int GraphBuilder::channels(int id) const {
  return id == kNetworkInput ? net_.input_channels() : net_.channel_counts().at(id);
}

int GraphBuilder::conv_bn(int in, int filters, int size, int stride, Activation a, int groups,
                          const std::string& name) {
  LayerSpec conv;
  conv.kind = LayerKind::Conv;
  conv.inputs = {in};
  conv.name = name;
  conv.filters = filters;
  conv.size = size;
  conv.stride = stride;
  conv.pad = size / 2;
  conv.groups = groups;
  int id = add(conv);

  LayerSpec bn;
  bn.kind = LayerKind::BatchNorm;
  bn.inputs = {id};
  id = add(bn);
  return a == Activation::Linear ? id : act(id, a);
}

int GraphBuilder::depthwise(int in, int stride, Activation a, const std::string& name) {
  const int c = channels(in);
  return conv_bn(in, c, 3, stride, a, c, name);
}

int GraphBuilder::head(int in, int filters, const std::string& name) {
  LayerSpec conv;
  conv.kind = LayerKind::Conv;
  conv.inputs = {in};
  conv.name = name;
  conv.filters = filters;
  conv.bias = true;
  const int id = add(conv);
  LayerSpec h;
  h.kind = LayerKind::YoloHead;
  h.inputs = {id};
  h.name = name;
  return add(h);
}

int GraphBuilder::maxpool(int in, int size, int stride, int pad) {
  LayerSpec s;
  s.kind = LayerKind::MaxPool;
  s.inputs = {in};
  s.size = size;
  s.stride = stride;
  s.pad = pad;
  return add(s);
}

int GraphBuilder::upsample(int in, int factor) {
  LayerSpec s;
  s.kind = LayerKind::Upsample;
  s.inputs = {in};
  s.stride = factor;
  return add(s);
}

int GraphBuilder::concat(std::vector<int> ins) {
  LayerSpec s;
  s.kind = LayerKind::Concat;
  s.inputs = std::move(ins);
  return add(s);
}

int GraphBuilder::reorg(int in, int groups) {
  LayerSpec s;
  s.kind = LayerKind::Reorg;
  s.inputs = {in};
  s.groups = groups;
  return add(s);
}

int GraphBuilder::shortcut(int a, int b) {
  LayerSpec s;
  s.kind = LayerKind::Shortcut;
  s.inputs = {a, b};
  return add(s);
}

int GraphBuilder::split(int in, int begin, int end) {
  LayerSpec s;
  s.kind = LayerKind::Split;
  s.inputs = {in};
  s.begin = begin;
  s.end = end;
  return add(s);
}

int GraphBuilder::act(int in, Activation a) {
  LayerSpec s;
  s.kind = LayerKind::Act;
  s.inputs = {in};
  s.activation = a;
  return add(s);
}

int build_resblock_neck(GraphBuilder& g, int in, int mid, int out, const std::string& name) {
  if (g.channels(in) <= 0 || mid <= 0 || out <= 0) throw ConfigError("resblock widths must be positive");
  int left = g.conv_bn(in, mid, 1, 1, Activation::Leaky, 1, name + ".reduce");
  left = g.conv_bn(left, mid, 3, 1, Activation::Leaky, 1, name + ".conv");
  left = g.conv_bn(left, out, 1, 1, Activation::Linear, 1, name + ".expand");
  const int right = g.conv_bn(in, out, 1, 1, Activation::Linear, 1, name + ".project");
  return g.act(g.shortcut(left, right), Activation::Leaky);
}

int scale_channels(int channels, double width) {
  if (width == 1.0) return channels;
  const int scaled = static_cast<int>(std::lround(channels * width / 8.0)) * 8;
  return std::max(8, scaled);
}

// ---- architectures ----

namespace {

struct Features {
  int stride16;
  int stride32;
};

// darknet18: 3x3 convs 16..512 each followed by a 2x2 pool (the last one with
// stride 1), then the 1024 conv. Returns the 256-channel stride-16 conv and
// the 1024 stride-32 conv.
Features darknet18(GraphBuilder& g, double width) {
  int x = kNetworkInput;
  int route = -1;
  const int widths[] = {16, 32, 64, 128, 256, 512};
  for (int i = 0; i < 6; ++i) {
    x = g.conv_bn(x, scale_channels(widths[i], width), 3, 1, Activation::Leaky, 1,
                  "backbone.conv" + std::to_string(i));
    if (i == 4) route = x;
    x = i < 5 ? g.maxpool(x, 2, 2, 0) : g.maxpool(x, 2, 1, 1);
  }
  x = g.conv_bn(x, scale_channels(1024, width), 3, 1, Activation::Leaky, 1, "backbone.conv6");
  return {route, x};
}

void add_heads(Network& net, int head32, int head16) {
  net.add_head(head32, 32, net.anchors().indices_for_stride(32));
  net.add_head(head16, 16, net.anchors().indices_for_stride(16));
}

void resblock_neck(GraphBuilder& g, Features f, const NeckWidths& w, double width) {
  Network& net = g.net();
  const int out_ch = net.anchors().per_head() * net.values_per_anchor();
  const int deep = build_resblock_neck(g, f.stride32, scale_channels(w.deep_mid, width),
                                       scale_channels(w.deep_out, width), "neck.deep");
  const int h32 = g.head(deep, out_ch, "head32");
  int bridge = g.conv_bn(deep, scale_channels(w.bridge, width), 1, 1, Activation::Leaky, 1, "neck.bridge");
  bridge = g.upsample(bridge, 2);
  const int merged = g.concat({bridge, f.stride16});
  const int shallow = build_resblock_neck(g, merged, scale_channels(w.shallow_mid, width),
                                          scale_channels(w.shallow_out, width), "neck.shallow");
  const int h16 = g.head(shallow, out_ch, "head16");
  add_heads(net, h32, h16);
}

void builtin_neck(GraphBuilder& g, Features f, double width) {
  Network& net = g.net();
  const int out_ch = net.anchors().per_head() * net.values_per_anchor();
  const int lateral = g.conv_bn(f.stride32, scale_channels(256, width), 1, 1, Activation::Leaky, 1, "neck.lateral");
  const int deep = g.conv_bn(lateral, scale_channels(512, width), 3, 1, Activation::Leaky, 1, "neck.deep");
  const int h32 = g.head(deep, out_ch, "head32");
  int bridge = g.conv_bn(lateral, scale_channels(128, width), 1, 1, Activation::Leaky, 1, "neck.bridge");
  bridge = g.upsample(bridge, 2);
  const int merged = g.concat({bridge, f.stride16});
  const int shallow = g.conv_bn(merged, scale_channels(256, width), 3, 1, Activation::Leaky, 1, "neck.shallow");
  const int h16 = g.head(shallow, out_ch, "head16");
  add_heads(net, h32, h16);
}

// Stride-2 unit: both branches downsample and their outputs are concatenated.
int shuffle_down_unit(GraphBuilder& g, int in, int out, Activation dw_act, Activation pw_act,
                      const std::string& name) {
  const int half = out / 2;
  int left = g.depthwise(in, 2, dw_act, name + ".left.dw");
  left = g.conv_bn(left, half, 1, 1, pw_act, 1, name + ".left.pw");
  int right = g.conv_bn(in, half, 1, 1, pw_act, 1, name + ".right.pw1");
  right = g.depthwise(right, 2, dw_act, name + ".right.dw");
  right = g.conv_bn(right, half, 1, 1, pw_act, 1, name + ".right.pw2");
  return g.reorg(g.concat({left, right}), 2);
}

// Stride-1 unit: the first half of the channels passes through unchanged.
int shuffle_basic_unit(GraphBuilder& g, int in, Activation dw_act, Activation pw_act, const std::string& name) {
  const int c = g.channels(in);
  const int half = c / 2;
  const int keep = g.split(in, 0, half);
  int branch = g.split(in, half, c);
  branch = g.conv_bn(branch, half, 1, 1, pw_act, 1, name + ".pw1");
  branch = g.depthwise(branch, 1, dw_act, name + ".dw");
  branch = g.conv_bn(branch, half, 1, 1, pw_act, 1, name + ".pw2");
  return g.reorg(g.concat({keep, branch}), 2);
}

Features shufflenet(GraphBuilder& g, const ArchSpec& spec, double width) {
  if (spec.variant < 1 || spec.variant > 3)
    throw ConfigError("ag-yolo variant must be 1, 2 or 3, got " + std::to_string(spec.variant));
  if (spec.stages.size() != 3) throw ConfigError("shufflenet backbone needs exactly three stages");
  const Activation dw_act = spec.variant == 2 ? Activation::Linear : Activation::Leaky;
  const Activation pw_act = spec.variant == 1 ? Activation::Linear : Activation::Leaky;

  int x = g.conv_bn(kNetworkInput, scale_channels(spec.stem, width), 3, 2, Activation::Leaky, 1, "stem");
  x = g.maxpool(x, 2, 2, 0);
  Features f{};
  for (std::size_t s = 0; s < spec.stages.size(); ++s) {
    const auto [repeat, channels] = spec.stages[s];
    const int c = scale_channels(channels, width);
    if (repeat < 1 || c % 2 != 0) throw ConfigError("invalid shufflenet stage");
    const std::string name = "stage" + std::to_string(s + 2);
    x = shuffle_down_unit(g, x, c, dw_act, pw_act, name + ".unit0");
    for (int r = 1; r < repeat; ++r)
      x = shuffle_basic_unit(g, x, dw_act, pw_act, name + ".unit" + std::to_string(r));
    if (s == 1) f.stride16 = x;
  }
  f.stride32 = x;
  return f;
}

Features mobilenet_v2(GraphBuilder& g, const ArchSpec& spec, double width) {
  int x = g.conv_bn(kNetworkInput, scale_channels(spec.stem, width), 3, 2, Activation::Leaky, 1, "stem");
  int stride = 2;
  Features f{-1, -1};
  int index = 0;
  for (const Bottleneck& b : spec.blocks) {
    const int cout = scale_channels(b.channels, width);
    for (int r = 0; r < b.repeat; ++r) {
      const int s = r == 0 ? b.stride : 1;
      const int cin = g.channels(x);
      const std::string name = "block" + std::to_string(index++);
      int y = x;
      if (b.expansion != 1) y = g.conv_bn(y, cin * b.expansion, 1, 1, Activation::Leaky, 1, name + ".expand");
      y = g.depthwise(y, s, Activation::Leaky, name + ".dw");
      y = g.conv_bn(y, cout, 1, 1, Activation::Linear, 1, name + ".project");
      if (s == 1 && cin == cout) y = g.shortcut(y, x);
      x = y;
      stride *= s;
    }
    if (stride == 16) f.stride16 = x;
  }
  if (stride != 32 || f.stride16 < 0) throw ConfigError("mobilenetv2 block table must reach strides 16 and 32");
  f.stride32 = x;
  return f;
}

NeckWidths neck_from_json(const json& j) {
  NeckWidths w;
  w.deep_mid = j.at("deep_mid").get<int>();
  w.deep_out = j.at("deep_out").get<int>();
  w.bridge = j.at("bridge").get<int>();
  w.shallow_mid = j.at("shallow_mid").get<int>();
  w.shallow_out = j.at("shallow_out").get<int>();
  return w;
}

json neck_to_json(const NeckWidths& w) {
  return {{"deep_mid", w.deep_mid},
          {"deep_out", w.deep_out},
          {"bridge", w.bridge},
          {"shallow_mid", w.shallow_mid},
          {"shallow_out", w.shallow_out}};
}

}  // namespace

// ---- registry ----

ArchRegistry ArchRegistry::builtin() { return from_json(kBuiltinArchitectures); }

ArchRegistry ArchRegistry::from_json(std::string_view text) {
  ArchRegistry reg;
  try {
    const json root = json::parse(text);
    if (root.contains("aliases"))
      for (const auto& [name, target] : root["aliases"].items()) reg.aliases_[name] = target.get<std::string>();
    for (const auto& [name, j] : root.at("architectures").items()) {
      ArchSpec s;
      s.family = j.at("family").get<std::string>();
      if (s.family != "darknet18" && s.family != "shufflenet" && s.family != "mobilenetv2")
        throw ConfigError("architecture '" + name + "': unknown family '" + s.family + "'");
      s.neck = j.value("neck", "resblock");
      if (j.contains("neck_widths")) s.neck_widths = neck_from_json(j["neck_widths"]);
      s.variant = j.value("variant", 2);
      s.stem = j.value("stem", 24);
      if (j.contains("stages"))
        for (const auto& st : j["stages"]) s.stages.emplace_back(st.at(0).get<int>(), st.at(1).get<int>());
      if (j.contains("blocks"))
        for (const auto& b : j["blocks"])
          s.blocks.push_back({b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<int>(), b.at(3).get<int>()});
      reg.specs_[name] = std::move(s);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("architecture config: ") + e.what());
  }
  for (const auto& [alias, target] : reg.aliases_)
    if (!reg.specs_.contains(target))
      throw ConfigError("architecture alias '" + alias + "' points to unknown '" + target + "'");
  return reg;
}

ArchRegistry ArchRegistry::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read architecture config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

std::string ArchRegistry::to_json() const {
  json archs = json::object();
  for (const auto& [name, s] : specs_) {
    json j = {{"family", s.family}};
    if (s.family == "darknet18") j["neck"] = s.neck;
    if (s.family != "darknet18" || s.neck == "resblock") j["neck_widths"] = neck_to_json(s.neck_widths);
    if (s.family == "shufflenet") {
      j["variant"] = s.variant;
      j["stem"] = s.stem;
      json stages = json::array();
      for (const auto& [r, c] : s.stages) stages.push_back({r, c});
      j["stages"] = stages;
    }
    if (s.family == "mobilenetv2") {
      j["stem"] = s.stem;
      json blocks = json::array();
      for (const Bottleneck& b : s.blocks) blocks.push_back({b.expansion, b.channels, b.repeat, b.stride});
      j["blocks"] = blocks;
    }
    archs[name] = j;
  }
  return json{{"aliases", aliases_}, {"architectures", archs}}.dump(2);
}

const ArchSpec& ArchRegistry::get(const std::string& name) const {
  const auto alias = aliases_.find(name);
  const std::string& key = alias == aliases_.end() ? name : alias->second;
  const auto it = specs_.find(key);
  if (it == specs_.end()) {
    std::string known;
    for (const std::string& n : names()) known += (known.empty() ? "" : ", ") + n;
    throw ConfigError("unknown architecture '" + name + "' (known: " + known + ")");
  }
  return it->second;
}

std::vector<std::string> ArchRegistry::names() const {
  std::vector<std::string> out;
  for (const auto& [n, s] : specs_) out.push_back(n);
  for (const auto& [n, t] : aliases_) out.push_back(n);
  std::sort(out.begin(), out.end());
  return out;
}

// ---- entry points ----

Network build_network(const ArchSpec& spec, int num_classes, const AnchorSet& anchors, double width) {
  if (num_classes < 1) throw ConfigError("num_classes must be >= 1");
  if (anchors.size() < 2) throw ConfigError("need at least one anchor per head");
  if (!(width > 0)) throw ConfigError("width multiplier must be positive");
  Network net(num_classes, anchors);
  GraphBuilder g(net);
  if (spec.family == "darknet18") {
    const Features f = darknet18(g, width);
    if (spec.neck == "builtin")
      builtin_neck(g, f, width);
    else if (spec.neck == "resblock")
      resblock_neck(g, f, spec.neck_widths, width);
    else
      throw ConfigError("unknown neck '" + spec.neck + "'");
  } else if (spec.family == "shufflenet") {
    resblock_neck(g, shufflenet(g, spec, width), spec.neck_widths, width);
  } else if (spec.family == "mobilenetv2") {
    resblock_neck(g, mobilenet_v2(g, spec, width), spec.neck_widths, width);
  } else {
    throw ConfigError("unknown architecture family '" + spec.family + "'");
  }
  net.validate();
  return net;
}

Network build_network(const std::string& name, int num_classes, const AnchorSet& anchors, double width) {
  return build_network(ArchRegistry::builtin().get(name), num_classes, anchors, width);
}

Network build_yolov3_tiny(int num_classes, const AnchorSet& anchors) {
  return build_network("yolov3-tiny", num_classes, anchors);
}

Network build_yolov3_tiny_resblock(int num_classes, const AnchorSet& anchors) {
  return build_network("yolov3-tiny-resblock", num_classes, anchors);
}

Network build_ag_yolo(int variant, int num_classes, const AnchorSet& anchors, double width) {
  if (variant < 1 || variant > 3)
    throw ConfigError("ag-yolo variant must be 1, 2 or 3, got " + std::to_string(variant));
  return build_network("ag-yolo-v" + std::to_string(variant), num_classes, anchors, width);
}

Network build_mobilenet_v2_compact(int num_classes, const AnchorSet& anchors) {
  return build_network("mobilenetv2-compact", num_classes, anchors);
}

}  // namespace agyolo

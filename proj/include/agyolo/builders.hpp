#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "agyolo/network.hpp"

namespace agyolo {

// Thin helper over Network::add for the common layer patterns.
class GraphBuilder {
 public:
  explicit GraphBuilder(Network& net) : net_(net) {}

  // conv (no bias) -> BN -> activation; the Act layer is omitted for Linear.
  int conv_bn(int in, int filters, int size, int stride, Activation act, int groups = 1,
              const std::string& name = {});
  // Depthwise 3x3 conv over all channels of `in`.
  int depthwise(int in, int stride, Activation act, const std::string& name = {});
  // 1x1 conv with bias and linear output, followed by a YoloHead marker.
  int head(int in, int filters, const std::string& name = {});
  int maxpool(int in, int size, int stride, int pad);
  int upsample(int in, int factor);
  int concat(std::vector<int> ins);
  int reorg(int in, int groups = 2);
  int shortcut(int a, int b);
  int split(int in, int begin, int end);
  int act(int in, Activation a);

  [[nodiscard]] int channels(int id) const;
  Network& net() { return net_; }

 private:
  int add(LayerSpec spec);
  Network& net_;
};

// Widths of the two ResBlock necks: the deep block (stride 32) reduces to
// `deep_mid` and outputs `deep_out`; a 1x1 `bridge` conv is upsampled and
// concatenated with the stride-16 feature, then the shallow block reduces to
// `shallow_mid` and outputs `shallow_out`.
struct NeckWidths {
  int deep_mid = 32;
  int deep_out = 256;
  int bridge = 128;
  int shallow_mid = 64;
  int shallow_out = 256;
};

// Two-branch block: left 1x1 mid -> 3x3 mid -> 1x1 out (linear), right 1x1
// out (linear), summed and passed through leaky ReLU.
int build_resblock_neck(GraphBuilder& g, int in, int mid, int out, const std::string& name = {});

struct Bottleneck {
  int expansion;  // t
  int channels;   // c
  int repeat;     // n
  int stride;     // s of the first block
};

// Everything a builder needs; serialized as one entry of the architecture config.
struct ArchSpec {
  std::string family;  // darknet18 | shufflenet | mobilenetv2
  std::string neck = "resblock";  // darknet18 only: builtin | resblock
  NeckWidths neck_widths;
  int variant = 2;  // shufflenet activation placement
  int stem = 24;
  std::vector<std::pair<int, int>> stages;  // shufflenet (repeat, channels)
  std::vector<Bottleneck> blocks;           // mobilenetv2
};

// Named architectures. Aliases resolve to another entry by name.
class ArchRegistry {
 public:
  // The built-in table (identical to configs/architectures.json).
  static ArchRegistry builtin();
  static ArchRegistry from_json(std::string_view text);
  static ArchRegistry from_file(const std::string& path);
  [[nodiscard]] std::string to_json() const;

  [[nodiscard]] const ArchSpec& get(const std::string& name) const;
  [[nodiscard]] std::vector<std::string> names() const;

 private:
  std::map<std::string, ArchSpec> specs_;
  std::map<std::string, std::string> aliases_;
};

extern const char* const kBuiltinArchitectures;

// Scales a channel count by `width`, rounding to a multiple of 8 (minimum 8).
int scale_channels(int channels, double width);

Network build_network(const ArchSpec& spec, int num_classes, const AnchorSet& anchors,
                      double width = 1.0);
Network build_network(const std::string& name, int num_classes, const AnchorSet& anchors,
                      double width = 1.0);

Network build_yolov3_tiny(int num_classes, const AnchorSet& anchors);
Network build_yolov3_tiny_resblock(int num_classes, const AnchorSet& anchors);
Network build_ag_yolo(int variant, int num_classes, const AnchorSet& anchors, double width = 1.0);
Network build_mobilenet_v2_compact(int num_classes, const AnchorSet& anchors);

}  // namespace agyolo

#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace agyolo {

// Prior box dimensions in pixels at the 416-pixel reference scale.
struct Anchor {
  double w = 0;
  double h = 0;
  [[nodiscard]] double area() const { return w * h; }
  friend bool operator==(const Anchor&, const Anchor&) = default;
};

inline constexpr double kReferenceDim = 416.0;

// Anchors sorted by ascending area. The smaller half belongs to the stride-16
// head, the larger half to the stride-32 head.
class AnchorSet {
 public:
  AnchorSet() = default;
  explicit AnchorSet(std::vector<Anchor> anchors);

  // "def", "cust", "8", or a comma-separated "w,h,w,h,..." list.
  static AnchorSet parse(std::string_view text);
  static AnchorSet preset(std::string_view name);

  [[nodiscard]] const std::vector<Anchor>& all() const { return anchors_; }
  [[nodiscard]] int size() const { return static_cast<int>(anchors_.size()); }
  [[nodiscard]] int per_head() const { return size() / 2; }
  [[nodiscard]] const Anchor& operator[](int i) const { return anchors_[i]; }

  // Global anchor indices used by the head at `stride` (16 or 32).
  [[nodiscard]] std::vector<int> indices_for_stride(int stride) const;

  [[nodiscard]] std::string str() const;

  friend bool operator==(const AnchorSet&, const AnchorSet&) = default;

 private:
  std::vector<Anchor> anchors_;
};

}  // namespace agyolo

#include "agyolo/anchors.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>

#include "agyolo/error.hpp"

namespace agyolo {

AnchorSet::AnchorSet(std::vector<Anchor> anchors) : anchors_(std::move(anchors)) {
  if (anchors_.empty() || anchors_.size() % 2 != 0)
    throw InputError("anchor count must be even and non-zero, got " + std::to_string(anchors_.size()));
  for (const Anchor& a : anchors_)
    if (!(a.w > 0) || !(a.h > 0)) throw InputError("anchor dimensions must be positive");
  std::stable_sort(anchors_.begin(), anchors_.end(),
                   [](const Anchor& a, const Anchor& b) { return a.area() < b.area(); });
}

AnchorSet AnchorSet::preset(std::string_view name) {
  if (name == "def")
    return AnchorSet({{23, 23}, {35, 36}, {48, 49}, {64, 66}, {90, 91}, {147, 157}});
  if (name == "cust")
    return AnchorSet({{10, 14}, {27, 23}, {37, 58}, {75, 64}, {93, 104}, {187, 163}});
  if (name == "8")
    return AnchorSet(
        {{19, 19}, {27, 29}, {37, 36}, {43, 48}, {58, 57}, {71, 75}, {99, 101}, {158, 169}});
  throw InputError("unknown anchor preset '" + std::string(name) + "'");
}

AnchorSet AnchorSet::parse(std::string_view text) {
  if (text == "def" || text == "cust" || text == "8") return preset(text);
  std::vector<double> values;
  std::string token;
  std::string s(text);
  for (char& ch : s)
    if (ch == '(' || ch == ')' || ch == ';' || ch == ' ') ch = ',';
  std::stringstream ss(s);
  while (std::getline(ss, token, ',')) {
    if (token.empty()) continue;
    double v = 0;
    const auto* end = token.data() + token.size();
    auto [ptr, ec] = std::from_chars(token.data(), end, v);
    if (ec != std::errc() || ptr != end) throw InputError("bad anchor value '" + token + "'");
    values.push_back(v);
  }
  if (values.size() % 2 != 0) throw InputError("anchor list must contain w,h pairs");
  std::vector<Anchor> anchors;
  for (std::size_t i = 0; i < values.size(); i += 2) anchors.push_back({values[i], values[i + 1]});
  return AnchorSet(std::move(anchors));
}

std::vector<int> AnchorSet::indices_for_stride(int stride) const {
  std::vector<int> idx;
  const int half = per_head();
  const int begin = stride == 16 ? 0 : half;
  if (stride != 16 && stride != 32) throw ConfigError("heads exist only at strides 16 and 32");
  for (int i = 0; i < half; ++i) idx.push_back(begin + i);
  return idx;
}

std::string AnchorSet::str() const {
  std::ostringstream os;
  for (std::size_t i = 0; i < anchors_.size(); ++i) {
    if (i) os << ", ";
    os << anchors_[i].w << "," << anchors_[i].h;
  }
  return os.str();
}

}  // namespace agyolo

#include "agyolo/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

namespace agyolo {

namespace fs = std::filesystem;

// ---- PPM ----

namespace {

// Next header token, skipping whitespace and '#' comments.
std::string ppm_token(std::istream& in) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  return tok;
}

int ppm_int(std::istream& in, const std::string& path, const char* what) {
  const std::string tok = ppm_token(in);
  try {
    std::size_t used = 0;
    const int v = std::stoi(tok, &used);
    if (used == tok.size() && v > 0) return v;
  } catch (const std::exception&) {
  }
  throw FormatError(path + ": bad PPM " + what + " '" + tok + "'");
}

}  // namespace

TensorF load_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image " + path);
  if (ppm_token(in) != "P6") throw FormatError(path + ": not a binary PPM (P6) file");
  const int w = ppm_int(in, path, "width");
  const int h = ppm_int(in, path, "height");
  const int maxval = ppm_int(in, path, "maxval");
  if (maxval != 255) throw FormatError(path + ": only maxval 255 is supported, got " + std::to_string(maxval));
  const std::size_t plane = static_cast<std::size_t>(w) * h;
  std::vector<unsigned char> raw(plane * 3);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size()) throw FormatError(path + ": truncated pixel data");
  TensorF img(1, 3, h, w);
  for (std::size_t i = 0; i < plane; ++i)
    for (int c = 0; c < 3; ++c) img[c * plane + i] = raw[3 * i + c] / 255.0f;
  return img;
}

void save_ppm(const TensorF& image, const std::string& path) {
  if (image.n() != 1 || image.c() != 3) throw DimensionError("save_ppm expects a (1, 3, h, w) tensor");
  const std::size_t plane = image.shape().plane();
  std::vector<unsigned char> raw(plane * 3);
  for (std::size_t i = 0; i < plane; ++i)
    for (int c = 0; c < 3; ++c) {
      const float v = std::clamp(image[c * plane + i], 0.0f, 1.0f);
      raw[3 * i + c] = static_cast<unsigned char>(std::lround(v * 255.0f));
    }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write image " + path);
  out << "P6\n" << image.w() << " " << image.h() << "\n255\n";
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw IoError("failed writing image " + path);
}

// ---- resampling ----

namespace {

// Bilinear sample at continuous source coordinates (pixel centers at integers),
// clamping to the edge.
float sample(const float* plane, int h, int w, double sy, double sx) {
  sy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
  sx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
  const int y0 = static_cast<int>(sy);
  const int x0 = static_cast<int>(sx);
  const int y1 = std::min(y0 + 1, h - 1);
  const int x1 = std::min(x0 + 1, w - 1);
  const double fy = sy - y0;
  const double fx = sx - x0;
  const double top = plane[y0 * w + x0] * (1 - fx) + plane[y0 * w + x1] * fx;
  const double bot = plane[y1 * w + x0] * (1 - fx) + plane[y1 * w + x1] * fx;
  return static_cast<float>(top * (1 - fy) + bot * fy);
}

}  // namespace

TensorF resize_bilinear(const TensorF& image, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) throw DimensionError("resize target must be positive");
  if (out_h == image.h() && out_w == image.w()) return image;
  TensorF out(image.n(), image.c(), out_h, out_w);
  const double ry = static_cast<double>(image.h()) / out_h;
  const double rx = static_cast<double>(image.w()) / out_w;
  for (int n = 0; n < image.n(); ++n)
    for (int c = 0; c < image.c(); ++c) {
      const float* src = image.plane(n, c);
      float* dst = out.plane(n, c);
      for (int y = 0; y < out_h; ++y)
        for (int x = 0; x < out_w; ++x)
          dst[y * out_w + x] = sample(src, image.h(), image.w(), (y + 0.5) * ry - 0.5, (x + 0.5) * rx - 0.5);
    }
  return out;
}

TensorF resize_stretch(const TensorF& image, int dim) {
  if (dim < 32 || dim % 32 != 0) throw DimensionError("resize dim must be a positive multiple of 32");
  return resize_bilinear(image, dim, dim);
}

// ---- labels and lists ----

std::string label_path_for(const std::string& image_path) {
  return fs::path(image_path).replace_extension(".txt").string();
}

std::vector<GroundTruth> load_labels(const std::string& path) {
  std::vector<GroundTruth> out;
  std::ifstream in(path);
  if (!in) return out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    const std::string where = path + ":" + std::to_string(lineno);
    int cls = -1;
    double v[4];
    if (!(ls >> cls >> v[0] >> v[1] >> v[2] >> v[3])) throw InputError(where + ": expected 'class cx cy w h'");
    std::string rest;
    if (ls >> rest) throw InputError(where + ": trailing content '" + rest + "'");
    if (cls < 0) throw InputError(where + ": negative class id");
    for (double x : v)
      if (!(x >= 0.0 && x <= 1.0)) throw InputError(where + ": coordinate outside [0, 1]");
    if (!(v[2] > 0) || !(v[3] > 0)) throw InputError(where + ": box width and height must be positive");
    out.push_back({{v[0], v[1], v[2], v[3]}, cls});
  }
  return out;
}

void save_labels(const std::string& path, const std::vector<GroundTruth>& objects) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write labels " + path);
  char buf[128];
  for (const GroundTruth& g : objects) {
    std::snprintf(buf, sizeof buf, "%d %.6f %.6f %.6f %.6f\n", g.cls, g.box.cx, g.box.cy, g.box.w, g.box.h);
    out << buf;
  }
  if (!out) throw IoError("failed writing labels " + path);
}

std::vector<DatasetItem> load_dataset(const std::string& list_path) {
  std::ifstream in(list_path);
  if (!in) throw IoError("cannot open list file " + list_path);
  const fs::path base = fs::path(list_path).parent_path();
  std::vector<DatasetItem> items;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t')) line.pop_back();
    const auto start = line.find_first_not_of(" \t");
    if (start == std::string::npos) continue;
    fs::path p(line.substr(start));
    if (p.is_relative()) p = base / p;
    DatasetItem item;
    item.image = p.lexically_normal().string();
    item.objects = load_labels(label_path_for(item.image));
    items.push_back(std::move(item));
  }
  return items;
}

const TensorF& ImageStore::image(std::size_t i) {
  TensorF& img = images_.at(i);
  if (img.empty()) img = load_ppm(items_[i].image);
  return img;
}

// ---- augmentation ----

void AugmentPolicy::validate() const {
  if (!(jitter >= 0 && jitter < 0.5)) throw InputError("jitter must be in [0, 0.5)");
  if (!(flip >= 0 && flip <= 1)) throw InputError("flip probability must be in [0, 1]");
  if (!(hue >= 0 && hue <= 0.5)) throw InputError("hue shift must be in [0, 0.5]");
  if (!(saturation >= 1) || !(exposure >= 1)) throw InputError("saturation and exposure scales must be >= 1");
}

namespace {

void rgb_to_hsv(float r, float g, float b, float& h, float& s, float& v) {
  const float mx = std::max({r, g, b});
  const float mn = std::min({r, g, b});
  const float d = mx - mn;
  v = mx;
  s = mx > 0 ? d / mx : 0;
  if (d <= 0) {
    h = 0;
    return;
  }
  if (mx == r)
    h = (g - b) / d;
  else if (mx == g)
    h = 2 + (b - r) / d;
  else
    h = 4 + (r - g) / d;
  h /= 6;
  if (h < 0) h += 1;
}

void hsv_to_rgb(float h, float s, float v, float& r, float& g, float& b) {
  if (s <= 0) {
    r = g = b = v;
    return;
  }
  h = 6 * (h - std::floor(h));
  const int i = static_cast<int>(h) % 6;
  const float f = h - std::floor(h);
  const float p = v * (1 - s);
  const float q = v * (1 - s * f);
  const float t = v * (1 - s * (1 - f));
  switch (i) {
    case 0: r = v, g = t, b = p; break;
    case 1: r = q, g = v, b = p; break;
    case 2: r = p, g = v, b = t; break;
    case 3: r = p, g = q, b = v; break;
    case 4: r = t, g = p, b = v; break;
    default: r = v, g = p, b = q; break;
  }
}

double random_scale(std::mt19937_64& rng, double s) {
  std::uniform_real_distribution<double> u(1.0, s);
  const double x = s > 1 ? u(rng) : 1.0;
  return std::bernoulli_distribution(0.5)(rng) ? x : 1.0 / x;
}

}  // namespace

Augmented augment(const TensorF& image, const std::vector<GroundTruth>& objects, const AugmentPolicy& policy,
                  std::uint64_t seed, int out_h, int out_w) {
  policy.validate();
  if (image.n() != 1 || image.c() != 3) throw DimensionError("augment expects a (1, 3, h, w) image");
  const int h = image.h();
  const int w = image.w();
  if (out_h <= 0) out_h = h;
  if (out_w <= 0) out_w = w;

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  // Darknet-style jitter: each side moves independently by up to jitter * size.
  const double dw = policy.jitter * w;
  const double dh = policy.jitter * h;
  const double left = u(rng) * dw;
  const double right = u(rng) * dw;
  const double top = u(rng) * dh;
  const double bottom = u(rng) * dh;
  const double crop_w = w - left - right;
  const double crop_h = h - top - bottom;
  const bool flip = std::bernoulli_distribution(policy.flip)(rng);
  const double hue = policy.hue > 0 ? std::uniform_real_distribution<double>(-policy.hue, policy.hue)(rng) : 0.0;
  const double sat = random_scale(rng, policy.saturation);
  const double exp = random_scale(rng, policy.exposure);

  Augmented out;
  out.image = TensorF(1, 3, out_h, out_w);
  const double sy = crop_h / out_h;
  const double sx = crop_w / out_w;
  for (int c = 0; c < 3; ++c) {
    const float* src = image.plane(0, c);
    float* dst = out.image.plane(0, c);
    for (int y = 0; y < out_h; ++y) {
      const double fy = top + (y + 0.5) * sy - 0.5;
      for (int x = 0; x < out_w; ++x) {
        const int ox = flip ? out_w - 1 - x : x;
        const double fx = left + (x + 0.5) * sx - 0.5;
        const bool outside = fy < -0.5 || fy > h - 0.5 || fx < -0.5 || fx > w - 0.5;
        dst[y * out_w + ox] = outside ? 0.5f : sample(src, h, w, fy, fx);
      }
    }
  }

  if (hue != 0 || sat != 1 || exp != 1) {
    const std::size_t plane = out.image.shape().plane();
    float* r = out.image.plane(0, 0);
    float* g = out.image.plane(0, 1);
    float* b = out.image.plane(0, 2);
    for (std::size_t i = 0; i < plane; ++i) {
      float hh, ss, vv;
      rgb_to_hsv(r[i], g[i], b[i], hh, ss, vv);
      hh += static_cast<float>(hue);
      ss = std::clamp(static_cast<float>(ss * sat), 0.0f, 1.0f);
      vv = std::clamp(static_cast<float>(vv * exp), 0.0f, 1.0f);
      hsv_to_rgb(hh, ss, vv, r[i], g[i], b[i]);
    }
  }

  const bool whole = left == 0 && right == 0 && top == 0 && bottom == 0;
  for (const GroundTruth& gt : objects) {
    // Uncropped and inside the image: keep the label bits instead of a
    // corner round trip.
    const Box& g = gt.box;
    if (whole && g.left() >= 0 && g.right() <= 1 && g.top() >= 0 && g.bottom() <= 1) {
      Box b = g;
      if (flip) b.cx = 1.0 - b.cx;
      if (b.w > 0 && b.h > 0 && b.area() >= 1e-4) out.objects.push_back({b, gt.cls});
      continue;
    }
    double x1 =(gt.box.left() * w - left) / crop_w;
    double x2 = (gt.box.right() * w - left) / crop_w;
    double y1 = (gt.box.top() * h - top) / crop_h;
    double y2 = (gt.box.bottom() * h - top) / crop_h;
    x1 = std::clamp(x1, 0.0, 1.0);
    x2 = std::clamp(x2, 0.0, 1.0);
    y1 = std::clamp(y1, 0.0, 1.0);
    y2 = std::clamp(y2, 0.0, 1.0);
    if (flip) {
      const double t = x1;
      x1 = 1.0 - x2;
      x2 = 1.0 - t;
    }
    const Box b = Box::from_corners(x1, y1, x2, y2);
    if (b.w > 0 && b.h > 0 && b.area() >= 1e-4) out.objects.push_back({b, gt.cls});
  }
  return out;
}

// ---- synthetic corpus ----

Augmented render_synthetic(std::uint64_t seed, const SynthOptions& opts) {
  if (opts.size < 32 || opts.min_radius <= 0 || opts.max_radius < opts.min_radius ||
      2 * opts.max_radius >= opts.size || opts.min_objects < 0 || opts.max_objects < opts.min_objects)
    throw InputError("invalid synthetic corpus options");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int n = opts.size;
  Augmented out;
  out.image = TensorF(1, 3, n, n);
  float* R = out.image.plane(0, 0);
  float* G = out.image.plane(0, 1);
  float* B = out.image.plane(0, 2);

  // Field: base green, slow waves (crop rows), and per-pixel grain.
  const double base[3] = {0.10 + 0.10 * u(rng), 0.30 + 0.15 * u(rng), 0.08 + 0.08 * u(rng)};
  const double angle = std::numbers::pi * u(rng);
  const double period = 10 + 14 * u(rng);
  const double phase = 2 * std::numbers::pi * u(rng);
  const double wx = 2 * std::numbers::pi / (40 + 60 * u(rng));
  const double wy = 2 * std::numbers::pi / (40 + 60 * u(rng));
  std::normal_distribution<double> grain(0.0, 0.03);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const double along = x * std::cos(angle) + y * std::sin(angle);
      const double rows = 0.06 * std::sin(2 * std::numbers::pi * along / period + phase);
      const double slow = 0.05 * std::sin(wx * x + phase) * std::cos(wy * y);
      const double k = 1.0 + rows + slow;
      const std::size_t i = static_cast<std::size_t>(y) * n + x;
      R[i] = static_cast<float>(std::clamp(base[0] * k + grain(rng), 0.0, 1.0));
      G[i] = static_cast<float>(std::clamp(base[1] * k + grain(rng), 0.0, 1.0));
      B[i] = static_cast<float>(std::clamp(base[2] * k + grain(rng), 0.0, 1.0));
    }

  // Crowns: rejection-sample non-overlapping discs fully inside the frame.
  const int want = std::uniform_int_distribution<int>(opts.min_objects, opts.max_objects)(rng);
  struct Disc {
    double x, y, r;
  };
  std::vector<Disc> discs;
  for (int attempt = 0; attempt < 400 && static_cast<int>(discs.size()) < want; ++attempt) {
    const double r = opts.min_radius + (opts.max_radius - opts.min_radius) * u(rng);
    const double x = r + (n - 2 * r) * u(rng);
    const double y = r + (n - 2 * r) * u(rng);
    bool ok = true;
    for (const Disc& d : discs)
      if (std::hypot(d.x - x, d.y - y) < d.r + r + 2) ok = false;
    if (ok) discs.push_back({x, y, r});
  }

  for (const Disc& d : discs) {
    const double color[3] = {0.55 + 0.35 * u(rng), 0.70 + 0.28 * u(rng), 0.25 + 0.35 * u(rng)};
    const int spokes = 5 + static_cast<int>(6 * u(rng));
    const double twist = 2 * std::numbers::pi * u(rng);
    const int x0 = std::max(0, static_cast<int>(d.x - d.r - 1));
    const int x1 = std::min(n - 1, static_cast<int>(d.x + d.r + 1));
    const int y0 = std::max(0, static_cast<int>(d.y - d.r - 1));
    const int y1 = std::min(n - 1, static_cast<int>(d.y + d.r + 1));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double px = x + 0.5 - d.x;
        const double py = y + 0.5 - d.y;
        const double dist = std::hypot(px, py);
        const double alpha = std::clamp(d.r - dist + 0.5, 0.0, 1.0);
        if (alpha <= 0) continue;
        const double rho = dist / d.r;
        const double leaf = 0.12 * std::cos(spokes * std::atan2(py, px) + twist) * rho;
        const double shade = std::clamp(1.0 - 0.35 * rho * rho + leaf, 0.0, 1.2);
        const std::size_t i = static_cast<std::size_t>(y) * n + x;
        float* ch[3] = {R, G, B};
        for (int c = 0; c < 3; ++c) {
          const double v = std::clamp(color[c] * shade, 0.0, 1.0);
          ch[c][i] = static_cast<float>(ch[c][i] * (1 - alpha) + v * alpha);
        }
      }
    out.objects.push_back({{d.x / n, d.y / n, 2 * d.r / n, 2 * d.r / n}, 0});
  }
  return out;
}

SynthLists gen_synthetic(int count, std::uint64_t seed, const std::string& out_dir, const SynthOptions& opts) {
  if (count < 1) throw InputError("synthetic corpus needs at least one image");
  const fs::path root(out_dir);
  std::error_code ec;
  fs::create_directories(root / "images", ec);
  if (ec) throw IoError("cannot create " + (root / "images").string() + ": " + ec.message());

  const int train_count = count * 3 / 4;
  std::ofstream train(root / "train.txt", std::ios::trunc);
  std::ofstream test(root / "test.txt", std::ios::trunc);
  if (!train || !test) throw IoError("cannot write list files in " + out_dir);
  for (int i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "images/%06d.ppm", i);
    const Augmented img = render_synthetic(seed ^ static_cast<std::uint64_t>(i), opts);
    save_ppm(img.image, (root / name).string());
    save_labels(label_path_for((root / name).string()), img.objects);
    (i < train_count ? train : test) << name << "\n";
  }
  if (!train || !test) throw IoError("failed writing list files in " + out_dir);
  return {(root / "train.txt").string(), (root / "test.txt").string(), train_count, count - train_count};
}

}  // namespace agyolo

#include "edgedoc/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "edgedoc/btf.hpp"
#include "edgedoc/rng.hpp"

namespace edgedoc {

namespace fs = std::filesystem;

namespace {

int read_pnm_token(std::istream& is) {
  // Skips whitespace and '#' comments between header fields.
  while (true) {
    int c = is.peek();
    if (c == '#') {
      std::string line;
      std::getline(is, line);
    } else if (std::isspace(c)) {
      is.get();
    } else {
      break;
    }
  }
  int v = -1;
  is >> v;
  return v;
}

void write_pnm(const std::string& path, const ImageU8& img, bool color) {
  if (img.channels != (color ? 3u : 1u))
    throw IoError("pnm write: channel count does not match format");
  fs::path tmp(path + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path);
    os << (color ? "P6" : "P5") << "\n" << img.w << " " << img.h << "\n255\n";
    os.write(reinterpret_cast<const char*>(img.data.data()),
             static_cast<std::streamsize>(img.data.size()));
    if (!os) throw IoError("write failed: " + path);
  }
  fs::rename(tmp, path);
}

}  // namespace

ImageU8 read_pnm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  char p, kind;
  is.get(p);
  is.get(kind);
  if (p != 'P' || (kind != '5' && kind != '6'))
    throw IoError("not a binary PGM/PPM file: " + path);
  ImageU8 img;
  img.channels = kind == '6' ? 3 : 1;
  long w = read_pnm_token(is);
  long h = read_pnm_token(is);
  long maxval = read_pnm_token(is);
  if (w <= 0 || h <= 0) throw IoError("bad PNM dimensions in " + path);
  if (maxval != 255) throw IoError("unsupported PNM maxval in " + path);
  is.get();  // single whitespace byte before the raster
  img.w = static_cast<std::size_t>(w);
  img.h = static_cast<std::size_t>(h);
  img.data.resize(img.w * img.h * img.channels);
  is.read(reinterpret_cast<char*>(img.data.data()),
          static_cast<std::streamsize>(img.data.size()));
  if (!is) throw IoError("truncated PNM raster in " + path);
  return img;
}

void write_ppm(const std::string& path, const ImageU8& img) {
  write_pnm(path, img, true);
}

void write_pgm(const std::string& path, const ImageU8& img) {
  write_pnm(path, img, false);
}

std::vector<Scalar> green_channel(const ImageU8& image) {
  if (image.channels != 3) throw ShapeError("green_channel: expected RGB");
  std::vector<Scalar> out(image.h * image.w);
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<Scalar>(image.data[i * 3 + 1]) / 255.0f;
  return out;
}

Tensor highpass_residual(const ImageU8& image) {
  if (image.channels != 3) throw ShapeError("highpass_residual: expected RGB");
  const std::size_t H = image.h, W = image.w;
  std::vector<Scalar> gray(H * W);
  for (std::size_t i = 0; i < gray.size(); ++i)
    gray[i] = (static_cast<Scalar>(image.data[i * 3]) +
               static_cast<Scalar>(image.data[i * 3 + 1]) +
               static_cast<Scalar>(image.data[i * 3 + 2])) /
              (3.0f * 255.0f);
  // Laplacian [[0,-1,0],[-1,4,-1],[0,-1,0]] / 4. Clamp-to-edge padding so a
  // flat field maps to exactly zero everywhere, including the border.
  std::vector<Scalar> res(H * W);
  auto g = [&](std::ptrdiff_t y, std::ptrdiff_t x) -> Scalar {
    y = std::clamp<std::ptrdiff_t>(y, 0, static_cast<std::ptrdiff_t>(H) - 1);
    x = std::clamp<std::ptrdiff_t>(x, 0, static_cast<std::ptrdiff_t>(W) - 1);
    return gray[y * W + x];
  };
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      std::ptrdiff_t yy = y, xx = x;
      res[y * W + x] = (4.0f * g(yy, xx) - g(yy - 1, xx) - g(yy + 1, xx) -
                        g(yy, xx - 1) - g(yy, xx + 1)) /
                       4.0f;
    }
  double mean = 0;
  for (Scalar v : res) mean += v;
  mean /= res.size();
  double var = 0;
  for (Scalar v : res) var += (v - mean) * (v - mean);
  var /= res.size();
  const double sigma = std::max(std::sqrt(var), 1e-6);
  for (Scalar& v : res)
    v = static_cast<Scalar>((v - mean) / sigma);
  return Tensor::from_data({H, W}, std::move(res));
}

std::vector<Scalar> resize_bilinear(const std::vector<Scalar>& src,
                                    std::size_t h, std::size_t w,
                                    std::size_t oh, std::size_t ow) {
  if (src.size() != h * w) throw ShapeError("resize_bilinear: size mismatch");
  if (h == oh && w == ow) return src;
  std::vector<Scalar> dst(oh * ow);
  const double sy = static_cast<double>(h) / oh;
  const double sx = static_cast<double>(w) / ow;
  for (std::size_t y = 0; y < oh; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(h - 1));
    std::size_t y0 = static_cast<std::size_t>(fy);
    std::size_t y1 = std::min(y0 + 1, h - 1);
    double wy = fy - y0;
    for (std::size_t x = 0; x < ow; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(w - 1));
      std::size_t x0 = static_cast<std::size_t>(fx);
      std::size_t x1 = std::min(x0 + 1, w - 1);
      double wx = fx - x0;
      double top = src[y0 * w + x0] * (1 - wx) + src[y0 * w + x1] * wx;
      double bot = src[y1 * w + x0] * (1 - wx) + src[y1 * w + x1] * wx;
      dst[y * ow + x] = static_cast<Scalar>(top * (1 - wy) + bot * wy);
    }
  }
  return dst;
}

std::vector<Scalar> resize_nearest(const std::vector<Scalar>& src,
                                   std::size_t h, std::size_t w,
                                   std::size_t oh, std::size_t ow) {
  if (src.size() != h * w) throw ShapeError("resize_nearest: size mismatch");
  if (h == oh && w == ow) return src;
  std::vector<Scalar> dst(oh * ow);
  const double sy = static_cast<double>(h) / oh;
  const double sx = static_cast<double>(w) / ow;
  for (std::size_t y = 0; y < oh; ++y) {
    std::size_t iy = std::min(static_cast<std::size_t>((y + 0.5) * sy), h - 1);
    for (std::size_t x = 0; x < ow; ++x) {
      std::size_t ix = std::min(static_cast<std::size_t>((x + 0.5) * sx), w - 1);
      dst[y * ow + x] = src[iy * w + ix];
    }
  }
  return dst;
}

Tensor ResidualExtractor::extract(const Sample& sample) const {
  if (sample.residual.defined()) return sample.residual;
  switch (kind) {
    case Kind::HighPassStandIn:
      return highpass_residual(sample.image);
    case Kind::FromFile: {
      fs::path p = fs::path(dir) / (sample.id + ".btf");
      if (!fs::exists(p))
        throw IoError("no residual map for id '" + sample.id + "' in " + dir);
      Tensor t = read_btf(p.string());
      if (t.ndim() != 2 || t.dim(0) != sample.image.h ||
          t.dim(1) != sample.image.w)
        throw ShapeError("residual map " + p.string() +
                         " does not match image size");
      return t;
    }
  }
  throw ContractError("unreachable extractor kind");
}

AssembledSample assemble_input(const Sample& sample,
                               const ResidualExtractor& extractor,
                               std::size_t out_h, std::size_t out_w) {
  const std::size_t H = sample.image.h, W = sample.image.w;
  std::vector<Scalar> green =
      resize_bilinear(green_channel(sample.image), H, W, out_h, out_w);
  Tensor res = extractor.extract(sample);
  std::vector<Scalar> resr = resize_bilinear(res.vec(), H, W, out_h, out_w);

  AssembledSample out;
  std::vector<Scalar> input;
  input.reserve(2 * out_h * out_w);
  input.insert(input.end(), green.begin(), green.end());
  input.insert(input.end(), resr.begin(), resr.end());
  out.input = Tensor::from_data({2, out_h, out_w}, std::move(input));

  std::vector<Scalar> mask01(H * W);
  for (std::size_t i = 0; i < mask01.size(); ++i)
    mask01[i] = sample.mask.data[i] ? 1.0f : 0.0f;
  std::vector<Scalar> maskr = resize_nearest(mask01, H, W, out_h, out_w);
  for (Scalar& v : maskr) v = v >= 0.5f ? 1.0f : 0.0f;
  out.mask = Tensor::from_data({1, out_h, out_w}, std::move(maskr));
  out.label = static_cast<Scalar>(sample.label);
  return out;
}

namespace {

constexpr std::size_t kCardH = 320;
constexpr std::size_t kCardW = 480;

struct Rect {
  std::size_t x0, y0, w, h;
  std::size_t cx() const { return x0 + w / 2; }
  std::size_t cy() const { return y0 + h / 2; }
};

struct CardLayout {
  std::vector<Rect> elements;  // stripe blocks + portrait bbox
};

std::uint8_t clamp_u8(double v) {
  return static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
}

ImageU8 make_bonafide(SplitMix64 rng, CardLayout& layout) {
  ImageU8 img;
  img.h = kCardH;
  img.w = kCardW;
  img.channels = 3;
  img.data.resize(kCardH * kCardW * 3);

  double base[3];
  for (double& b : base) b = rng.uniform(140.0, 220.0);
  for (std::size_t i = 0; i < kCardH * kCardW; ++i)
    for (std::size_t c = 0; c < 3; ++c)
      img.data[i * 3 + c] = clamp_u8(base[c] + rng.normal() * 4.0);

  // Text-like stripe blocks on the right two thirds of the card.
  const std::size_t n_lines = 6;
  for (std::size_t k = 0; k < n_lines; ++k) {
    std::size_t y0 = 40 + k * 44 + rng.next_below(8);
    std::size_t hh = 12 + rng.next_below(6);
    double shade = rng.uniform(25.0, 70.0);
    std::size_t x = 170 + rng.next_below(12);
    std::size_t x_end = 440 + rng.next_below(30);
    Rect block{x, y0, 0, hh};
    while (x < x_end) {
      std::size_t seg = 20 + rng.next_below(40);
      std::size_t stop = std::min(x + seg, std::min(x_end, kCardW - 8));
      for (std::size_t yy = y0; yy < std::min(y0 + hh, kCardH); ++yy)
        for (std::size_t xx = x; xx < stop; ++xx)
          for (std::size_t c = 0; c < 3; ++c)
            img.at(yy, xx, c) = clamp_u8(shade + rng.normal() * 3.0);
      x = stop + 8 + rng.next_below(14);
    }
    block.w = std::min(x_end, kCardW - 8) - block.x0;
    layout.elements.push_back(block);
  }

  // Portrait ellipse on the left.
  std::size_t cx = 80 + rng.next_below(12);
  std::size_t cy = 130 + rng.next_below(24);
  std::size_t rx = 38 + rng.next_below(10);
  std::size_t ry = 52 + rng.next_below(12);
  double shade = rng.uniform(70.0, 120.0);
  for (std::size_t yy = cy - ry; yy <= cy + ry && yy < kCardH; ++yy)
    for (std::size_t xx = cx - rx; xx <= cx + rx && xx < kCardW; ++xx) {
      double dx = (static_cast<double>(xx) - cx) / rx;
      double dy = (static_cast<double>(yy) - cy) / ry;
      if (dx * dx + dy * dy <= 1.0)
        for (std::size_t c = 0; c < 3; ++c)
          img.at(yy, xx, c) = clamp_u8(shade * (0.8 + 0.4 * (c == 1)) +
                                       rng.normal() * 3.0);
    }
  layout.elements.push_back(Rect{cx - rx, cy - ry, 2 * rx, 2 * ry});

  // Global sensor noise.
  for (std::size_t i = 0; i < img.data.size(); ++i)
    img.data[i] = clamp_u8(static_cast<double>(img.data[i]) + rng.normal() * 2.0);
  return img;
}

Rect pick_attack_region(SplitMix64& rng, const CardLayout& layout) {
  const double total = static_cast<double>(kCardH * kCardW);
  while (true) {
    double frac = rng.uniform(0.085, 0.145);
    double aspect = rng.uniform(0.5, 2.0);
    double area = frac * total;
    std::size_t rw = static_cast<std::size_t>(std::sqrt(area * aspect));
    rw = std::clamp<std::size_t>(rw, 30, kCardW - 15);
    std::size_t rh = static_cast<std::size_t>(area / rw);
    rh = std::clamp<std::size_t>(rh, 10, kCardH - 5);
    // Snap edges to the 320x480 -> 256x256 resize lattice (rows: gcd 5,
    // cols: gcd 15) so ground-truth rectangles stay pixel-exact after the
    // nearest-neighbor mask resize instead of straddling output pixels.
    rw = (rw / 15) * 15;
    rh = (rh / 5) * 5;
    double got = static_cast<double>(rw * rh) / total;
    if (got < 0.0805 || got > 0.1495) continue;

    const Rect& elem = layout.elements[rng.next_below(layout.elements.size())];
    std::size_t ex = elem.cx(), ey = elem.cy();
    std::size_t ox = rng.next_below(rw);
    std::size_t oy = rng.next_below(rh);
    std::size_t x0 = ex > ox ? ex - ox : 0;
    std::size_t y0 = ey > oy ? ey - oy : 0;
    x0 = std::min(x0, kCardW - rw);
    y0 = std::min(y0, kCardH - rh);
    x0 = (x0 / 15) * 15;
    y0 = (y0 / 5) * 5;
    return Rect{x0, y0, rw, rh};
  }
}

}  // namespace

DatasetManifest synth_generate(std::size_t n_bonafide, std::size_t n_attack,
                               std::uint64_t seed, const std::string& out_dir) {
  if (n_bonafide < 1 || n_attack < 1)
    throw ContractError("synth_generate: counts must be >= 1");
  fs::create_directories(fs::path(out_dir) / "images");
  fs::create_directories(fs::path(out_dir) / "masks");

  SplitMix64 base(seed);
  std::vector<ImageU8> bonafide(n_bonafide);
  std::vector<CardLayout> layouts(n_bonafide);
  std::ostringstream manifest;

  char buf[64];
  for (std::size_t i = 0; i < n_bonafide; ++i) {
    bonafide[i] = make_bonafide(base.split(i), layouts[i]);
    std::snprintf(buf, sizeof(buf), "b%04zu", i);
    write_ppm((fs::path(out_dir) / "images" / (std::string(buf) + ".ppm")).string(),
              bonafide[i]);
    manifest << buf << "\timages/" << buf << ".ppm\t-\t0\n";
  }

  static const char* kTypes[3] = {"splice", "renoise", "blur"};
  for (std::size_t i = 0; i < n_attack; ++i) {
    SplitMix64 rng = base.split(1000000 + i);
    std::size_t src = rng.next_below(n_bonafide);
    std::size_t type = i % 3;
    if (type == 0 && n_bonafide < 2) type = 1;  // splice needs a donor

    ImageU8 img = bonafide[src];
    Rect r = pick_attack_region(rng, layouts[src]);
    switch (type) {
      case 0: {  // splice from another card, at a displaced source position
                 // so layout structure (text lines, portrait) mismatches and
                 // the patch does not align with the host card's elements
        std::size_t donor = (src + 1 + rng.next_below(n_bonafide - 1)) % n_bonafide;
        std::size_t sx0 = rng.next_below(kCardW - r.w);
        std::size_t sy0 = rng.next_below(kCardH - r.h);
        for (std::size_t y = 0; y < r.h; ++y)
          for (std::size_t x = 0; x < r.w; ++x)
            for (std::size_t c = 0; c < 3; ++c)
              img.at(r.y0 + y, r.x0 + x, c) =
                  clamp_u8(bonafide[donor].at(sy0 + y, sx0 + x, c) +
                           rng.normal() * 6.0);  // resampling noise
        break;
      }
      case 1: {  // re-noise: block-correlated noise (sigma 16 over 4x4
                 // blocks, surviving bilinear downsampling to network
                 // resolution) plus per-pixel noise (sigma 8) that the
                 // full-resolution residual extractor picks up directly
        constexpr std::size_t kBlock = 4;
        for (std::size_t by = r.y0; by < r.y0 + r.h; by += kBlock)
          for (std::size_t bx = r.x0; bx < r.x0 + r.w; bx += kBlock) {
            double n[3] = {rng.normal() * 16.0, rng.normal() * 16.0,
                           rng.normal() * 16.0};
            for (std::size_t y = by; y < std::min(by + kBlock, r.y0 + r.h); ++y)
              for (std::size_t x = bx; x < std::min(bx + kBlock, r.x0 + r.w);
                   ++x)
                for (std::size_t c = 0; c < 3; ++c)
                  img.at(y, x, c) = clamp_u8(static_cast<double>(img.at(y, x, c)) +
                                             n[c] + rng.normal() * 8.0);
          }
        break;
      }
      case 2: {  // local 3x3 mean blur, applied twice so the high-pass
                 // energy in the region drops essentially to zero
        for (int pass = 0; pass < 2; ++pass) {
        ImageU8 orig = img;
        for (std::size_t y = r.y0; y < r.y0 + r.h; ++y)
          for (std::size_t x = r.x0; x < r.x0 + r.w; ++x)
            for (std::size_t c = 0; c < 3; ++c) {
              int sum = 0;
              for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                  std::size_t yy = std::clamp<std::ptrdiff_t>(
                      static_cast<std::ptrdiff_t>(y) + dy, 0, kCardH - 1);
                  std::size_t xx = std::clamp<std::ptrdiff_t>(
                      static_cast<std::ptrdiff_t>(x) + dx, 0, kCardW - 1);
                  sum += orig.at(yy, xx, c);
                }
              img.at(y, x, c) = static_cast<std::uint8_t>(sum / 9);
            }
        }
        break;
      }
    }

    ImageU8 mask;
    mask.h = kCardH;
    mask.w = kCardW;
    mask.channels = 1;
    mask.data.assign(kCardH * kCardW, 0);
    for (std::size_t y = r.y0; y < r.y0 + r.h; ++y)
      for (std::size_t x = r.x0; x < r.x0 + r.w; ++x)
        mask.data[y * kCardW + x] = 255;

    std::snprintf(buf, sizeof(buf), "a%04zu_%s", i, kTypes[type]);
    std::string id(buf);
    write_ppm((fs::path(out_dir) / "images" / (id + ".ppm")).string(), img);
    write_pgm((fs::path(out_dir) / "masks" / (id + ".pgm")).string(), mask);
    manifest << id << "\timages/" << id << ".ppm\tmasks/" << id << ".pgm\t1\n";
  }

  fs::path mpath = fs::path(out_dir) / "manifest.tsv";
  {
    fs::path tmp = mpath;
    tmp += ".tmp";
    std::ofstream os(tmp, std::ios::trunc | std::ios::binary);
    if (!os) throw IoError("cannot write manifest: " + mpath.string());
    os << manifest.str();
    os.close();
    fs::rename(tmp, mpath);
  }
  return load_manifest(mpath.string());
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open manifest: " + path);
  DatasetManifest m;
  m.root = fs::path(path).parent_path().string();
  if (m.root.empty()) m.root = ".";
  m.split = fs::path(path).stem().string();
  std::set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, '\t')) cols.push_back(tok);
    if (cols.size() != 4)
      throw IoError("malformed manifest line " + std::to_string(lineno) +
                    " in " + path);
    ManifestEntry e;
    e.id = cols[0];
    e.image_path = cols[1];
    e.mask_path = cols[2];
    if (cols[3] != "0" && cols[3] != "1")
      throw IoError("bad label on manifest line " + std::to_string(lineno));
    e.label = cols[3] == "1" ? 1 : 0;
    if (!seen.insert(e.id).second)
      throw IoError("duplicate id '" + e.id + "' in " + path);
    if (!fs::exists(fs::path(m.root) / e.image_path))
      throw IoError("missing image file for id '" + e.id + "': " + e.image_path);
    if (e.mask_path != "-" && !fs::exists(fs::path(m.root) / e.mask_path))
      throw IoError("missing mask file for id '" + e.id + "': " + e.mask_path);
    m.entries.push_back(std::move(e));
  }
  return m;
}

Sample load_sample(const DatasetManifest& manifest, const ManifestEntry& entry) {
  Sample s;
  s.id = entry.id;
  s.label = entry.label;
  s.image = read_pnm((fs::path(manifest.root) / entry.image_path).string());
  if (s.image.channels != 3)
    throw IoError("image for id '" + entry.id + "' is not RGB");
  if (entry.mask_path == "-") {
    s.mask.h = s.image.h;
    s.mask.w = s.image.w;
    s.mask.channels = 1;
    s.mask.data.assign(s.image.h * s.image.w, 0);
  } else {
    s.mask = read_pnm((fs::path(manifest.root) / entry.mask_path).string());
    if (s.mask.channels != 1 || s.mask.h != s.image.h || s.mask.w != s.image.w)
      throw IoError("mask for id '" + entry.id + "' does not match image dims");
  }
  bool any = false;
  for (std::uint8_t v : s.mask.data) {
    if (v != 0 && v != 255)
      throw IoError("non-binary mask value for id '" + entry.id + "'");
    any = any || v != 0;
  }
  if (s.label == 0 && any)
    throw IoError("bonafide sample '" + entry.id + "' has a non-zero mask");
  if (s.label == 1 && !any)
    throw IoError("attack sample '" + entry.id + "' has an all-zero mask");
  return s;
}

Sample load_sample(const DatasetManifest& manifest, const std::string& id) {
  for (const ManifestEntry& e : manifest.entries)
    if (e.id == id) return load_sample(manifest, e);
  throw IoError("id '" + id + "' not found in manifest");
}

}  // namespace edgedoc

#include "agcrf/synth.hpp"

#include <algorithm>
#include <array>
#include <tuple>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "agcrf/io.hpp"
#include "agcrf/rng.hpp"

namespace agcrf {
namespace {

// Stream ids keep the generators' random sequences apart.
constexpr std::uint64_t kStreamContour = 0x636f6e74;
constexpr std::uint64_t kStreamDepth = 0x64657074;
constexpr std::uint64_t kStreamSeg = 0x73656773;
constexpr double kMaxEdgeFraction = 0.15;

SplitMix64 sample_rng(const SynthSpec& spec, std::uint64_t stream, Split split, int index) {
  return SplitMix64(spec.seed ^ stream, static_cast<std::uint64_t>(split), static_cast<std::uint64_t>(index));
}

double gaussian(SplitMix64& rng) {
  const double u1 = 1.0 - rng.uniform();  // (0, 1]
  const double u2 = rng.uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

// Filled ellipse or convex polygon, tested at integer pixel coordinates.
struct Shape2D {
  bool ellipse = true;
  double cx = 0, cy = 0, rx = 1, ry = 1, angle = 0;
  std::vector<double> vx, vy;  // polygon vertices, counter-clockwise

  bool contains(double x, double y) const {
    if (ellipse) {
      const double c = std::cos(angle), s = std::sin(angle);
      const double u = (x - cx) * c + (y - cy) * s, v = -(x - cx) * s + (y - cy) * c;
      return (u * u) / (rx * rx) + (v * v) / (ry * ry) <= 1.0;
    }
    const std::size_t n = vx.size();
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = (i + 1) % n;
      const double cross = (vx[j] - vx[i]) * (y - vy[i]) - (vy[j] - vy[i]) * (x - vx[i]);
      if (cross < 0) return false;
    }
    return true;
  }
};

Shape2D random_shape(const SynthSpec& spec, SplitMix64& rng) {
  Shape2D s;
  const double n = spec.size;
  s.cx = rng.uniform(0.15 * n, 0.85 * n);
  s.cy = rng.uniform(0.15 * n, 0.85 * n);
  const double r = rng.uniform(spec.radius_min, spec.radius_max);
  s.ellipse = rng.below(2) == 0;
  if (s.ellipse) {
    s.rx = r;
    s.ry = r * rng.uniform(0.6, 1.0);
    s.angle = rng.uniform(0.0, std::numbers::pi);
  } else {
    const int k = rng.range(3, 5);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    for (int i = 0; i < k; ++i) {
      // Evenly spread angles with jitter keep the polygon convex and ordered.
      const double a = phase + 2.0 * std::numbers::pi * (i + rng.uniform(-0.25, 0.25)) / k;
      s.vx.push_back(s.cx + r * std::cos(a));
      s.vy.push_back(s.cy + r * std::sin(a));
    }
  }
  return s;
}

// Region ids: 0 background, k for the k-th shape drawn (later shapes on top).
Tensor rasterize(const std::vector<Shape2D>& shapes, int size) {
  Tensor regions({1, size, size});
  for (std::size_t k = 0; k < shapes.size(); ++k)
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x)
        if (shapes[k].contains(x, y)) regions.at(0, y, x) = static_cast<double>(k + 1);
  return regions;
}

std::vector<Shape2D> scene_shapes(const SynthSpec& spec, SplitMix64& rng) {
  const int count = spec.shapes_max > spec.shapes_min ? rng.range(spec.shapes_min, spec.shapes_max) : spec.shapes_min;
  std::vector<Shape2D> shapes;
  for (int k = 0; k < count; ++k) shapes.push_back(random_shape(spec, rng));
  return shapes;
}

double edge_fraction(const Tensor& edges) { return edges.sum() / static_cast<double>(edges.size()); }

}  // namespace

Task parse_task(const std::string& name) {
  if (name == "contour") return Task::Contour;
  if (name == "depth") return Task::Depth;
  if (name == "seg") return Task::Seg;
  throw std::invalid_argument("unknown task '" + name + "' (expected contour, depth or seg)");
}

std::string task_name(Task t) {
  switch (t) {
    case Task::Contour: return "contour";
    case Task::Depth: return "depth";
    case Task::Seg: return "seg";
  }
  return "?";
}

void SynthSpec::validate() const {
  if (size < 8) throw std::invalid_argument("synth: size must be >= 8");
  if (train < 0 || test < 0) throw std::invalid_argument("synth: sample counts must be non-negative");
  if (shapes_min < 0 || shapes_max < shapes_min) throw std::invalid_argument("synth: need 0 <= shapes_min <= shapes_max");
  if (!(radius_min > 0 && radius_max >= radius_min)) throw std::invalid_argument("synth: need 0 < radius_min <= radius_max");
  if (classes < 2 || classes > 8) throw std::invalid_argument("synth: classes must lie in [2, 8]");
  if (noise < 0) throw std::invalid_argument("synth: noise must be non-negative");
  if (!(mask_fraction > 0 && mask_fraction <= 1)) throw std::invalid_argument("synth: mask_fraction must lie in (0, 1]");
  if (bumps_max < 0) throw std::invalid_argument("synth: bumps_max must be non-negative");
}

std::string SynthSpec::echo() const {
  std::ostringstream os;
  os << "bumps_max=" << bumps_max << "\nclasses=" << classes << "\nmask_fraction=" << format_double(mask_fraction)
     << "\nnoise=" << format_double(noise) << "\nradius_max=" << format_double(radius_max)
     << "\nradius_min=" << format_double(radius_min)
     << "\nramp=" << (ramp ? 1 : 0) << "\nseed=" << seed << "\nshapes_max=" << shapes_max
     << "\nshapes_min=" << shapes_min << "\nsize=" << size << "\ntask=" << task_name(task) << "\ntest=" << test
     << "\ntrain=" << train << "\n";
  return os.str();
}

SynthSpec SynthSpec::from_pairs(const std::map<std::string, std::string>& kv) {
  SynthSpec s;
  for (const auto& [k, v] : kv) {
    try {
      if (k == "task") s.task = parse_task(v);
      else if (k == "seed") s.seed = std::stoull(v);
      else if (k == "size") s.size = std::stoi(v);
      else if (k == "train") s.train = std::stoi(v);
      else if (k == "test") s.test = std::stoi(v);
      else if (k == "shapes_min") s.shapes_min = std::stoi(v);
      else if (k == "shapes_max") s.shapes_max = std::stoi(v);
      else if (k == "radius_min") s.radius_min = std::stod(v);
      else if (k == "radius_max") s.radius_max = std::stod(v);
      else if (k == "classes") s.classes = std::stoi(v);
      else if (k == "noise") s.noise = std::stod(v);
      else if (k == "mask_fraction") s.mask_fraction = std::stod(v);
      else if (k == "bumps_max") s.bumps_max = std::stoi(v);
      else if (k == "ramp") s.ramp = std::stoi(v) != 0;
      else throw std::invalid_argument("unknown synth key '" + k + "'");
    } catch (const std::logic_error& e) {
      if (std::string(e.what()).starts_with("unknown")) throw;
      throw std::invalid_argument("bad value '" + v + "' for synth key '" + k + "'");
    }
  }
  s.validate();
  return s;
}

Tensor inner_boundary(const Tensor& regions) {
  const int h = regions.height(), w = regions.width();
  Tensor edges({1, h, w});
  constexpr int dy[4] = {-1, 1, 0, 0}, dx[4] = {0, 0, -1, 1};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double id = regions.at(0, y, x);
      for (int k = 0; k < 4; ++k) {
        const int yy = y + dy[k], xx = x + dx[k];
        if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
        if (regions.at(0, yy, xx) < id) {
          edges.at(0, y, x) = 1.0;
          break;
        }
      }
    }
  return edges;
}

Sample gen_contour(const SynthSpec& spec, Split split, int index) {
  spec.validate();
  SplitMix64 rng = sample_rng(spec, kStreamContour, split, index);
  std::vector<Shape2D> shapes = scene_shapes(spec, rng);
  // Distinct region colours: resample until every pair differs by >= 0.2 in some channel.
  std::vector<std::array<double, 3>> colors;
  for (std::size_t k = 0; k <= shapes.size(); ++k) {
    std::array<double, 3> c{};
    for (int attempt = 0; attempt < 64; ++attempt) {
      for (double& v : c) v = rng.uniform(0.1, 0.9);
      bool distinct = true;
      for (const auto& o : colors) {
        double d = 0;
        for (int i = 0; i < 3; ++i) d = std::max(d, std::abs(o[i] - c[i]));
        distinct = distinct && d >= 0.2;
      }
      if (distinct) break;
    }
    colors.push_back(c);
  }
  Tensor regions = rasterize(shapes, spec.size);
  Tensor edges = inner_boundary(regions);
  // Drop top shapes until the edge budget holds.
  while (!shapes.empty() && edge_fraction(edges) >= kMaxEdgeFraction) {
    shapes.pop_back();
    regions = rasterize(shapes, spec.size);
    edges = inner_boundary(regions);
  }
  Sample s{Tensor({3, spec.size, spec.size}), edges};
  for (int y = 0; y < spec.size; ++y)
    for (int x = 0; x < spec.size; ++x) {
      const auto& c = colors[static_cast<std::size_t>(regions.at(0, y, x))];
      for (int ch = 0; ch < 3; ++ch)
        s.image.at(ch, y, x) = std::clamp(c[ch] + spec.noise * gaussian(rng), 0.0, 1.0);
    }
  return s;
}

double depth_shade(double depth) { return 1.0 / (1.0 + 0.25 * depth); }

Sample gen_depth(const SynthSpec& spec, Split split, int index) {
  spec.validate();
  SplitMix64 rng = sample_rng(spec, kStreamDepth, split, index);
  const int n = spec.size;
  const double base = rng.uniform(5.0, 7.0);
  const double gx = spec.ramp ? rng.uniform(-1.0, 1.0) : 0.0;
  const double gy = spec.ramp ? rng.uniform(-1.0, 1.0) : 0.0;
  struct Bump {
    double cx, cy, r, amp;
  };
  std::vector<Bump> bumps;
  const int nb = spec.bumps_max > 0 ? rng.range(0, spec.bumps_max) : 0;
  for (int k = 0; k < nb; ++k)
    bumps.push_back({rng.uniform(0.0, n), rng.uniform(0.0, n), rng.uniform(spec.radius_min, spec.radius_max),
                     rng.uniform(0.3, 0.8)});
  Sample s{Tensor({3, n, n}), Tensor({2, n, n})};
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      double d = base + gx * x / n + gy * y / n;
      for (const Bump& b : bumps) {
        const double q = 1.0 - ((x - b.cx) * (x - b.cx) + (y - b.cy) * (y - b.cy)) / (b.r * b.r);
        if (q > 0) d -= b.amp * std::sqrt(q);
      }
      s.target.at(0, y, x) = d;
      s.target.at(1, y, x) = rng.uniform() < spec.mask_fraction ? 1.0 : 0.0;
      const double shade = depth_shade(d);
      for (int ch = 0; ch < 3; ++ch) s.image.at(ch, y, x) = kDepthTint[ch] * shade;
    }
  return s;
}

void class_color(int cls, double rgb[3]) {
  for (int i = 0; i < 3; ++i) rgb[i] = (cls >> i) & 1 ? 1.0 : 0.0;
}

Sample gen_seg(const SynthSpec& spec, Split split, int index) {
  spec.validate();
  SplitMix64 rng = sample_rng(spec, kStreamSeg, split, index);
  const std::vector<Shape2D> shapes = scene_shapes(spec, rng);
  std::vector<int> cls{0};
  for (std::size_t k = 0; k < shapes.size(); ++k) cls.push_back(rng.range(1, spec.classes - 1));
  const Tensor regions = rasterize(shapes, spec.size);
  Sample s{Tensor({3, spec.size, spec.size}), Tensor({1, spec.size, spec.size})};
  for (int y = 0; y < spec.size; ++y)
    for (int x = 0; x < spec.size; ++x) {
      const int c = cls[static_cast<std::size_t>(regions.at(0, y, x))];
      s.target.at(0, y, x) = c;
      double rgb[3];
      class_color(c, rgb);
      for (int ch = 0; ch < 3; ++ch) {
        const double v = rgb[ch] + spec.noise * gaussian(rng);
        s.image.at(ch, y, x) = std::clamp(v, 0.0, 1.0);
      }
    }
  return s;
}

Sample generate(const SynthSpec& spec, Split split, int index) {
  switch (spec.task) {
    case Task::Contour: return gen_contour(spec, split, index);
    case Task::Depth: return gen_depth(spec, split, index);
    case Task::Seg: return gen_seg(spec, split, index);
  }
  throw std::invalid_argument("generate: unknown task");
}

void write_dataset(const std::filesystem::path& root, const SynthSpec& spec) {
  spec.validate();
  std::filesystem::create_directories(root);
  {
    std::ofstream m(root / "manifest.txt", std::ios::binary);
    if (!m) throw IoError("cannot write " + (root / "manifest.txt").string());
    m << "agcrf-dataset 1\n" << spec.echo();
  }
  for (auto [split, name, count] : {std::tuple{Split::Train, "train", spec.train}, std::tuple{Split::Test, "test", spec.test}}) {
    const std::filesystem::path dir = root / name;
    std::filesystem::create_directories(dir);
    for (int i = 0; i < count; ++i) {
      const Sample s = generate(spec, split, i);
      write_agt(dir / (std::to_string(i) + ".img.agt"), s.image);
      write_agt(dir / (std::to_string(i) + ".gt.agt"), s.target);
    }
  }
}

SynthSpec read_manifest(const std::filesystem::path& root) {
  std::ifstream in(root / "manifest.txt");
  if (!in) throw IoError("missing dataset manifest " + (root / "manifest.txt").string());
  std::string line;
  if (!std::getline(in, line) || line != "agcrf-dataset 1") throw IoError("bad dataset manifest header in " + root.string());
  std::map<std::string, std::string> kv;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw IoError("bad manifest line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return SynthSpec::from_pairs(kv);
}

Dataset read_dataset(const std::filesystem::path& root, const std::string& split) {
  const SynthSpec spec = read_manifest(root);
  if (split != "train" && split != "test") throw std::invalid_argument("unknown split '" + split + "'");
  const int count = split == "train" ? spec.train : spec.test;
  Dataset d{spec.task, spec.classes, {}};
  for (int i = 0; i < count; ++i) {
    const std::filesystem::path dir = root / split;
    d.samples.push_back({read_agt(dir / (std::to_string(i) + ".img.agt")), read_agt(dir / (std::to_string(i) + ".gt.agt"))});
  }
  return d;
}

}  // namespace agcrf

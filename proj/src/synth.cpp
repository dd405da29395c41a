#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "topodelin/dataset.hpp"

namespace topodelin {

void SynthConfig::validate() const {
  const auto range = [](double lo, double hi, const char* what) {
    if (!(lo <= hi)) throw std::invalid_argument(std::string("synth: empty range for ") + what);
  };
  if (canvas < 8) throw std::invalid_argument("synth: canvas must be at least 8 pixels");
  if (strokes_min < 1) throw std::invalid_argument("synth: at least one stroke is required");
  range(static_cast<double>(strokes_min), static_cast<double>(strokes_max), "strokes");
  if (segments_min < 1) throw std::invalid_argument("synth: strokes need at least one segment");
  range(static_cast<double>(segments_min), static_cast<double>(segments_max), "segments");
  range(segment_length_min, segment_length_max, "segment length");
  range(width_min, width_max, "stroke width");
  if (width_min < 1.5) throw std::invalid_argument("synth: stroke width below 1.5 px can break 8-connectivity");
  range(stroke_intensity_min, stroke_intensity_max, "stroke intensity");
  range(gap_length_min, gap_length_max, "gap length");
  range(static_cast<double>(distractors_min), static_cast<double>(distractors_max), "distractors");
  range(distractor_radius_min, distractor_radius_max, "distractor radius");
  range(foreground_min, foreground_max, "foreground fraction");
  if (gap_probability < 0 || gap_probability > 1) throw std::invalid_argument("synth: gap probability outside [0,1]");
  if (noise_std < 0 || texture_amplitude < 0) throw std::invalid_argument("synth: negative noise or texture");
}

namespace {

struct Point {
  double x, y;
};

struct Stroke {
  std::vector<Point> samples;  // dense centerline samples, spacing <= 0.25 px
  double width;
  double intensity;
};

double uniform(std::mt19937_64& rng, double lo, double hi) {
  if (lo == hi) return lo;
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

std::size_t uniform_count(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

Stroke draw_stroke(const SynthConfig& c, std::mt19937_64& rng) {
  Stroke s;
  s.width = uniform(rng, c.width_min, c.width_max);
  s.intensity = uniform(rng, c.stroke_intensity_min, c.stroke_intensity_max);
  const double size = static_cast<double>(c.canvas);
  Point p{uniform(rng, 0.0, size), uniform(rng, 0.0, size)};
  double heading = uniform(rng, 0.0, 2 * std::numbers::pi);
  const auto segments = uniform_count(rng, c.segments_min, c.segments_max);
  s.samples.push_back(p);
  for (std::size_t seg = 0; seg < segments; ++seg) {
    const double len = uniform(rng, c.segment_length_min, c.segment_length_max);
    const double turn = heading + uniform(rng, -0.7, 0.7);
    const Point ctrl{p.x + 0.5 * len * std::cos(heading), p.y + 0.5 * len * std::sin(heading)};
    const Point end{p.x + len * std::cos(turn), p.y + len * std::sin(turn)};
    const auto steps = static_cast<std::size_t>(std::ceil(len * 8));
    for (std::size_t i = 1; i <= steps; ++i) {
      const double t = static_cast<double>(i) / static_cast<double>(steps);
      const double a = (1 - t) * (1 - t), b = 2 * (1 - t) * t, d = t * t;
      s.samples.push_back({a * p.x + b * ctrl.x + d * end.x, a * p.y + b * ctrl.y + d * end.y});
    }
    // Tangent continuity: the next segment leaves along the end tangent.
    heading = std::atan2(end.y - ctrl.y, end.x - ctrl.x);
    p = end;
  }
  return s;
}

// Marks pixels whose centers lie within `radius` of any of the points.
template <typename F>
void stamp(std::size_t canvas, const std::vector<Point>& pts, double radius, F&& mark) {
  const auto r = static_cast<std::ptrdiff_t>(std::ceil(radius));
  const double r2 = radius * radius;
  const auto n = static_cast<std::ptrdiff_t>(canvas);
  for (const auto& pt : pts) {
    const auto cx = static_cast<std::ptrdiff_t>(std::floor(pt.x)), cy = static_cast<std::ptrdiff_t>(std::floor(pt.y));
    for (std::ptrdiff_t y = cy - r; y <= cy + r + 1; ++y)
      for (std::ptrdiff_t x = cx - r; x <= cx + r + 1; ++x) {
        if (y < 0 || x < 0 || y >= n || x >= n) continue;
        const double dx = x + 0.5 - pt.x, dy = y + 0.5 - pt.y;
        if (dx * dx + dy * dy <= r2) mark(static_cast<std::size_t>(y), static_cast<std::size_t>(x));
      }
  }
}

Image low_frequency_texture(const SynthConfig& c, std::mt19937_64& rng) {
  Image tex(c.canvas, c.canvas, 0.0);
  const double size = static_cast<double>(c.canvas);
  for (int wave = 0; wave < 3; ++wave) {
    const double fx = uniform(rng, -2.0, 2.0) / size, fy = uniform(rng, -2.0, 2.0) / size;
    const double phase = uniform(rng, 0.0, 2 * std::numbers::pi);
    for (std::size_t y = 0; y < c.canvas; ++y)
      for (std::size_t x = 0; x < c.canvas; ++x)
        tex(y, x) += std::cos(2 * std::numbers::pi * (fx * x + fy * y) + phase) / 3.0;
  }
  return tex;
}

}  // namespace

Sample synth_one(const SynthConfig& c, std::uint64_t index) {
  c.validate();
  std::seed_seq seq{static_cast<std::uint32_t>(c.seed), static_cast<std::uint32_t>(c.seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  std::mt19937_64 rng(seq);
  const std::size_t n = c.canvas;

  std::vector<Stroke> strokes;
  Mask gt;
  bool accepted = false;
  for (int attempt = 0; attempt < 200 && !accepted; ++attempt) {
    strokes.clear();
    gt = Mask(n, n, 0);
    const auto count = uniform_count(rng, c.strokes_min, c.strokes_max);
    for (std::size_t i = 0; i < count; ++i) {
      strokes.push_back(draw_stroke(c, rng));
      stamp(n, strokes.back().samples, strokes.back().width / 2, [&](std::size_t y, std::size_t x) { gt(y, x) = 1; });
    }
    const double fraction = static_cast<double>(count_foreground(gt)) / static_cast<double>(n * n);
    accepted = fraction >= c.foreground_min && fraction <= c.foreground_max;
  }
  if (!accepted) throw std::runtime_error("synth: foreground bounds unreachable with this configuration");

  // Stroke appearance, with gaps removed from the image only.
  Image ink(n, n, 0.0);
  Mask inked(n, n, 0);
  for (const auto& s : strokes) {
    stamp(n, s.samples, s.width / 2, [&](std::size_t y, std::size_t x) {
      ink(y, x) = std::max(ink(y, x), s.intensity);
      inked(y, x) = 1;
    });
  }
  for (const auto& s : strokes) {
    if (c.gap_probability <= 0 || uniform(rng, 0.0, 1.0) >= c.gap_probability) continue;
    const double gap = uniform(rng, c.gap_length_min, c.gap_length_max);
    const auto len = s.samples.size();
    const auto begin = static_cast<std::size_t>(uniform(rng, 0.25, 0.75) * static_cast<double>(len));
    const auto span = static_cast<std::size_t>(gap * 8);
    std::vector<Point> cut(s.samples.begin() + static_cast<std::ptrdiff_t>(begin),
                           s.samples.begin() + static_cast<std::ptrdiff_t>(std::min(len, begin + span)));
    stamp(n, cut, s.width / 2 + 1.0, [&](std::size_t y, std::size_t x) {
      ink(y, x) = 0.0;
      inked(y, x) = 0;
    });
  }

  const Image texture = c.texture_amplitude > 0 ? low_frequency_texture(c, rng) : Image(n, n, 0.0);
  Sample out;
  out.id = "s" + std::to_string(index);
  out.gt = gt;
  out.image = Image(n, n, 0.0);
  for (std::size_t i = 0; i < n * n; ++i) {
    const double bg = c.background_level + c.texture_amplitude * texture[i];
    out.image[i] = inked[i] ? ink[i] : bg;
  }

  const auto blobs = uniform_count(rng, c.distractors_min, c.distractors_max);
  for (std::size_t b = 0; b < blobs; ++b) {
    const Point center{uniform(rng, 0.0, static_cast<double>(n)), uniform(rng, 0.0, static_cast<double>(n))};
    const double radius = uniform(rng, c.distractor_radius_min, c.distractor_radius_max);
    const double intensity = uniform(rng, c.stroke_intensity_min, c.stroke_intensity_max);
    stamp(n, {center}, radius, [&](std::size_t y, std::size_t x) {
      if (!gt(y, x)) out.image(y, x) = std::max(out.image(y, x), intensity);
    });
  }

  if (c.noise_std > 0) {
    std::normal_distribution<double> noise(0.0, c.noise_std);
    for (auto& v : out.image.values()) v += noise(rng);
  }
  for (auto& v : out.image.values()) v = std::clamp(v, 0.0, 1.0);
  return out;
}

std::vector<Sample> synth(const SynthConfig& config, std::size_t n) {
  if (n < 1) throw std::invalid_argument("synth: n must be at least 1");
  std::vector<Sample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(synth_one(config, i));
  return out;
}

template <typename T>
Grid<T> rotate90(const Grid<T>& g) {
  Grid<T> out(g.width(), g.height());
  for (std::size_t y = 0; y < out.height(); ++y)
    for (std::size_t x = 0; x < out.width(); ++x) out(y, x) = g(x, g.width() - 1 - y);
  return out;
}

template <typename T>
Grid<T> mirror(const Grid<T>& g) {
  Grid<T> out(g.height(), g.width());
  for (std::size_t y = 0; y < g.height(); ++y)
    for (std::size_t x = 0; x < g.width(); ++x) out(y, x) = g(y, g.width() - 1 - x);
  return out;
}

template Grid<double> rotate90(const Grid<double>&);
template Grid<std::uint8_t> rotate90(const Grid<std::uint8_t>&);
template Grid<double> mirror(const Grid<double>&);
template Grid<std::uint8_t> mirror(const Grid<std::uint8_t>&);

std::vector<Sample> augment(const Sample& sample) {
  if (sample.image.height() != sample.image.width()) {
    throw std::invalid_argument("augment: sample " + sample.id + " is not square");
  }
  std::vector<Sample> out;
  for (int m = 0; m < 2; ++m) {
    Sample cur = sample;
    if (m) {
      cur.image = mirror(cur.image);
      cur.gt = mirror(cur.gt);
    }
    for (int r = 0; r < 4; ++r) {
      Sample s = cur;
      s.id = sample.id + (m ? "_m" : "") + "_r" + std::to_string(90 * r);
      out.push_back(s);
      cur.image = rotate90(cur.image);
      cur.gt = rotate90(cur.gt);
    }
  }
  return out;
}

namespace {

template <typename G>
double bilinear(const G& g, double y, double x) {
  const double maxy = static_cast<double>(g.height() - 1), maxx = static_cast<double>(g.width() - 1);
  y = std::clamp(y, 0.0, maxy);
  x = std::clamp(x, 0.0, maxx);
  const auto y0 = static_cast<std::size_t>(std::floor(y)), x0 = static_cast<std::size_t>(std::floor(x));
  const auto y1 = std::min(y0 + 1, g.height() - 1), x1 = std::min(x0 + 1, g.width() - 1);
  const double fy = y - static_cast<double>(y0), fx = x - static_cast<double>(x0);
  const double top = static_cast<double>(g(y0, x0)) * (1 - fx) + static_cast<double>(g(y0, x1)) * fx;
  const double bottom = static_cast<double>(g(y1, x0)) * (1 - fx) + static_cast<double>(g(y1, x1)) * fx;
  return top * (1 - fy) + bottom * fy;
}

}  // namespace

Sample elastic_deform(const Sample& sample, const ElasticConfig& config, std::uint64_t seed) {
  if (config.spacing < 4) throw std::invalid_argument("elastic_deform: grid spacing must be at least 4");
  if (!(config.displacement_std >= 0)) throw std::invalid_argument("elastic_deform: displacement std must be >= 0");
  const std::size_t h = sample.image.height(), w = sample.image.width();
  const std::size_t ny = (h + config.spacing - 2) / config.spacing + 1;
  const std::size_t nx = (w + config.spacing - 2) / config.spacing + 1;
  Image dy(ny, nx, 0.0), dx(ny, nx, 0.0);
  if (config.displacement_std > 0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, config.displacement_std);
    for (std::size_t i = 0; i < dy.size(); ++i) {
      dy[i] = dist(rng);
      dx[i] = dist(rng);
    }
  }
  Sample out;
  out.id = sample.id;
  out.image = Image(h, w);
  out.gt = Mask(h, w);
  const double s = static_cast<double>(config.spacing);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double gy = static_cast<double>(y) / s, gx = static_cast<double>(x) / s;
      const double sy = static_cast<double>(y) + bilinear(dy, gy, gx);
      const double sx = static_cast<double>(x) + bilinear(dx, gy, gx);
      out.image(y, x) = std::clamp(bilinear(sample.image, sy, sx), 0.0, 1.0);
      out.gt(y, x) = bilinear(sample.gt, sy, sx) >= 0.5 ? 1 : 0;
    }
  return out;
}

std::vector<Sample> patches(const Sample& sample, std::size_t size, std::size_t stride) {
  if (size == 0 || stride == 0) throw std::invalid_argument("patches: size and stride must be positive");
  std::vector<Sample> out;
  const std::size_t h = sample.image.height(), w = sample.image.width();
  for (std::size_t y0 = 0; y0 + size <= h; y0 += stride)
    for (std::size_t x0 = 0; x0 + size <= w; x0 += stride) {
      Sample p;
      p.id = sample.id + "_p" + std::to_string(y0) + "_" + std::to_string(x0);
      p.image = Image(size, size);
      p.gt = Mask(size, size);
      for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
          p.image(y, x) = sample.image(y0 + y, x0 + x);
          p.gt(y, x) = sample.gt(y0 + y, x0 + x);
        }
      out.push_back(std::move(p));
    }
  return out;
}

}  // namespace topodelin

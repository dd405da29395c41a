#include "topodelin/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <numbers>
#include <ostream>
#include <queue>
#include <random>

namespace topodelin {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr int kDy[8] = {-1, -1, 0, 1, 1, 1, 0, -1};
constexpr int kDx[8] = {0, 1, 1, 1, 0, -1, -1, -1};

}  // namespace

Mask SkeletonGraph::mask() const {
  Mask m(height, width, 0);
  for (auto p : pixels) m[p] = 1;
  return m;
}

std::vector<std::pair<std::size_t, double>> SkeletonGraph::neighbors(std::size_t v) const {
  std::vector<std::pair<std::size_t, double>> out;
  const auto y = static_cast<std::ptrdiff_t>(pixels[v] / width), x = static_cast<std::ptrdiff_t>(pixels[v] % width);
  for (int d = 0; d < 8; ++d) {
    const auto ny = y + kDy[d], nx = x + kDx[d];
    if (!index.contains(ny, nx)) continue;
    const auto j = index(static_cast<std::size_t>(ny), static_cast<std::size_t>(nx));
    if (j >= 0) out.emplace_back(static_cast<std::size_t>(j), (kDy[d] && kDx[d]) ? std::numbers::sqrt2 : 1.0);
  }
  return out;
}

Mask thin(const Mask& binary) {
  Mask m = binary;
  for (auto& v : m.values()) v = v ? 1 : 0;
  const auto h = static_cast<std::ptrdiff_t>(m.height()), w = static_cast<std::ptrdiff_t>(m.width());
  const auto at = [&](std::ptrdiff_t y, std::ptrdiff_t x) -> int {
    return m.contains(y, x) ? m(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) : 0;
  };
  std::vector<std::size_t> doomed;
  bool changed = true;
  while (changed) {
    changed = false;
    for (int pass = 0; pass < 2; ++pass) {
      doomed.clear();
      for (std::ptrdiff_t y = 0; y < h; ++y)
        for (std::ptrdiff_t x = 0; x < w; ++x) {
          if (!at(y, x)) continue;
          // Guo-Hall: P2..P9 clockwise from north.
          int p[8];
          for (int d = 0; d < 8; ++d) p[d] = at(y + kDy[d], x + kDx[d]);
          const auto [p2, p3, p4, p5, p6, p7, p8, p9] = p;
          const int c = (!p2 && (p3 || p4)) + (!p4 && (p5 || p6)) + (!p6 && (p7 || p8)) + (!p8 && (p9 || p2));
          const int n1 = (p9 || p2) + (p3 || p4) + (p5 || p6) + (p7 || p8);
          const int n2 = (p2 || p3) + (p4 || p5) + (p6 || p7) + (p8 || p9);
          const int n = std::min(n1, n2);
          const bool side = pass == 0 ? ((p6 || p7 || !p9) && p8) : ((p2 || p3 || !p5) && p4);
          const bool keep = c != 1 || n < 2 || n > 3 || side;
          if (!keep) doomed.push_back(static_cast<std::size_t>(y * w + x));
        }
      for (auto i : doomed) m[i] = 0;
      changed = changed || !doomed.empty();
    }
  }
  return m;
}

SkeletonGraph skeleton_graph(const Mask& skeleton) {
  SkeletonGraph g;
  g.height = skeleton.height();
  g.width = skeleton.width();
  g.index = Grid<std::int32_t>(g.height, g.width, -1);
  for (std::size_t i = 0; i < skeleton.size(); ++i) {
    if (!skeleton[i]) continue;
    g.index[i] = static_cast<std::int32_t>(g.pixels.size());
    g.pixels.push_back(i);
  }
  g.component.assign(g.pixels.size(), -1);
  std::vector<std::size_t> stack;
  for (std::size_t s = 0; s < g.pixels.size(); ++s) {
    if (g.component[s] >= 0) continue;
    const auto id = static_cast<std::int32_t>(g.component_sizes.size());
    g.component_sizes.push_back(0);
    g.component[s] = id;
    stack.assign(1, s);
    while (!stack.empty()) {
      const auto v = stack.back();
      stack.pop_back();
      ++g.component_sizes.back();
      for (const auto& [u, len] : g.neighbors(v)) {
        if (g.component[u] < 0) {
          g.component[u] = id;
          stack.push_back(u);
        }
      }
    }
  }
  return g;
}

SkeletonGraph skeletonize(const Mask& binary) { return skeleton_graph(thin(binary)); }

std::vector<double> geodesic_distances(const SkeletonGraph& g, std::size_t source) {
  std::vector<double> dist(g.size(), kInf);
  using Item = std::pair<double, std::size_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> queue;
  dist[source] = 0;
  queue.emplace(0.0, source);
  while (!queue.empty()) {
    const auto [d, v] = queue.top();
    queue.pop();
    if (d > dist[v]) continue;
    for (const auto& [u, len] : g.neighbors(v)) {
      if (d + len < dist[u]) {
        dist[u] = d + len;
        queue.emplace(dist[u], u);
      }
    }
  }
  return dist;
}

double geodesic_distance(const SkeletonGraph& g, std::size_t from, std::size_t to) {
  if (g.component[from] != g.component[to]) return kInf;
  return geodesic_distances(g, from)[to];
}

namespace {

// Lower envelope of parabolas (Felzenszwalb & Huttenlocher), in place on f.
void distance_1d(std::vector<double>& f) {
  const std::size_t n = f.size();
  std::vector<double> d(n), z(n + 1);
  std::vector<std::size_t> v(n);
  std::size_t k = 0;
  std::size_t first = 0;
  while (first < n && f[first] == kInf) ++first;
  if (first == n) return;
  v[0] = first;
  z[0] = -kInf;
  z[1] = kInf;
  for (std::size_t q = first + 1; q < n; ++q) {
    if (f[q] == kInf) continue;
    const auto fq = f[q] + static_cast<double>(q * q);
    double s;
    while (true) {
      const auto p = v[k];
      s = (fq - (f[p] + static_cast<double>(p * p))) / (2.0 * static_cast<double>(q) - 2.0 * static_cast<double>(p));
      if (s <= z[k] && k > 0) {
        --k;
        continue;
      }
      break;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  k = 0;
  for (std::size_t q = 0; q < n; ++q) {
    while (z[k + 1] < static_cast<double>(q)) ++k;
    const auto diff = static_cast<double>(q) - static_cast<double>(v[k]);
    d[q] = diff * diff + f[v[k]];
  }
  f = std::move(d);
}

}  // namespace

Grid<double> squared_distance_transform(const Mask& mask) {
  const std::size_t h = mask.height(), w = mask.width();
  Grid<double> out(h, w, kInf);
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) out[i] = 0;
  std::vector<double> line;
  for (std::size_t x = 0; x < w; ++x) {
    line.resize(h);
    for (std::size_t y = 0; y < h; ++y) line[y] = out(y, x);
    distance_1d(line);
    for (std::size_t y = 0; y < h; ++y) out(y, x) = line[y];
  }
  for (std::size_t y = 0; y < h; ++y) {
    line.assign(out.values().begin() + static_cast<std::ptrdiff_t>(y * w),
                out.values().begin() + static_cast<std::ptrdiff_t>((y + 1) * w));
    distance_1d(line);
    std::copy(line.begin(), line.end(), out.values().begin() + static_cast<std::ptrdiff_t>(y * w));
  }
  return out;
}

CenterlineScores centerline_from_counts(std::size_t matched_pred, std::size_t pred_pixels, std::size_t matched_gt,
                                        std::size_t gt_pixels) {
  CenterlineScores s{0, 0, 0, matched_pred, pred_pixels, matched_gt, gt_pixels};
  if (pred_pixels == 0 && gt_pixels == 0) {
    s.correctness = s.completeness = s.quality = 1;
  } else if (pred_pixels == 0 || gt_pixels == 0) {
    s.correctness = s.completeness = s.quality = 0;
  } else {
    const auto mp = static_cast<double>(matched_pred), p = static_cast<double>(pred_pixels);
    const auto mg = static_cast<double>(matched_gt), g = static_cast<double>(gt_pixels);
    s.correctness = mp / p;
    s.completeness = mg / g;
    s.quality = mp / (p + (g - mg));
  }
  return s;
}

CenterlineScores centerline_scores(const Mask& pred_skeleton, const Mask& gt_skeleton, double rho) {
  if (!(rho >= 0)) throw std::invalid_argument("centerline_scores: rho must be >= 0");
  if (pred_skeleton.height() != gt_skeleton.height() || pred_skeleton.width() != gt_skeleton.width()) {
    throw std::invalid_argument("centerline_scores: skeleton extents differ");
  }
  const double r2 = rho * rho + 1e-9;
  const auto to_gt = squared_distance_transform(gt_skeleton);
  const auto to_pred = squared_distance_transform(pred_skeleton);
  std::size_t mp = 0, p = 0, mg = 0, g = 0;
  for (std::size_t i = 0; i < pred_skeleton.size(); ++i) {
    if (pred_skeleton[i]) {
      ++p;
      mp += to_gt[i] <= r2;
    }
    if (gt_skeleton[i]) {
      ++g;
      mg += to_pred[i] <= r2;
    }
  }
  return centerline_from_counts(mp, p, mg, g);
}

namespace {

// Nearest gt skeleton vertex to pixel index p; ties go to the lowest index.
std::pair<std::size_t, double> nearest_vertex(const SkeletonGraph& gt, std::size_t p, std::size_t width) {
  const auto py = static_cast<double>(p / width), px = static_cast<double>(p % width);
  std::size_t best = 0;
  double best_d2 = kInf;
  for (std::size_t v = 0; v < gt.size(); ++v) {
    const auto dy = static_cast<double>(gt.pixels[v] / gt.width) - py;
    const auto dx = static_cast<double>(gt.pixels[v] % gt.width) - px;
    const double d2 = dy * dy + dx * dx;
    if (d2 < best_d2) {
      best_d2 = d2;
      best = v;
    }
  }
  return {best, std::sqrt(best_d2)};
}

}  // namespace

PathOutcome classify_path(const SkeletonGraph& pred, const SkeletonGraph& gt, std::size_t a, std::size_t b,
                          const PathConfig& config) {
  if (gt.empty()) return PathOutcome::infeasible;
  const auto [ga, da] = nearest_vertex(gt, pred.pixels[a], pred.width);
  const auto [gb, db] = nearest_vertex(gt, pred.pixels[b], pred.width);
  if (da > config.rho_match + 1e-9 || db > config.rho_match + 1e-9) return PathOutcome::infeasible;
  if (gt.component[ga] != gt.component[gb]) return PathOutcome::infeasible;
  const double lp = geodesic_distance(pred, a, b);
  const double lg = geodesic_distance(gt, ga, gb);
  return std::abs(lp - lg) > config.tolerance * lg + 1e-9 ? PathOutcome::too_long_short : PathOutcome::correct;
}

PathTopology path_topology(const SkeletonGraph& pred, const SkeletonGraph& gt, const PathConfig& config) {
  if (config.samples == 0) throw std::invalid_argument("path_topology: samples must be positive");
  if (pred.height != gt.height || pred.width != gt.width) {
    throw std::invalid_argument("path_topology: skeleton extents differ");
  }
  PathTopology out;
  std::vector<double> weights(pred.component_sizes.size());
  bool any = false;
  for (std::size_t c = 0; c < weights.size(); ++c) {
    weights[c] = pred.component_sizes[c] >= 2 ? static_cast<double>(pred.component_sizes[c]) : 0.0;
    any = any || weights[c] > 0;
  }
  if (!any) {
    out.empty_prediction = true;
    out.n_infeasible = config.samples;
    out.infeasible = 1;
    return out;
  }
  std::vector<std::vector<std::size_t>> members(weights.size());
  for (std::size_t v = 0; v < pred.size(); ++v) members[static_cast<std::size_t>(pred.component[v])].push_back(v);

  std::mt19937_64 rng(config.seed);
  std::discrete_distribution<std::size_t> pick_component(weights.begin(), weights.end());
  for (std::size_t s = 0; s < config.samples; ++s) {
    const auto& comp = members[pick_component(rng)];
    std::uniform_int_distribution<std::size_t> first(0, comp.size() - 1), second(0, comp.size() - 2);
    const auto i = first(rng);
    auto j = second(rng);
    if (j >= i) ++j;
    switch (classify_path(pred, gt, comp[i], comp[j], config)) {
      case PathOutcome::correct: ++out.n_correct; break;
      case PathOutcome::infeasible: ++out.n_infeasible; break;
      case PathOutcome::too_long_short: ++out.n_too_long_short; break;
    }
  }
  const auto n = static_cast<double>(config.samples);
  out.correct = static_cast<double>(out.n_correct) / n;
  out.infeasible = static_cast<double>(out.n_infeasible) / n;
  out.too_long_short = static_cast<double>(out.n_too_long_short) / n;
  return out;
}

double ThresholdSweep::precision(std::size_t j) const {
  if (predicted_positives[j] == 0) return 1.0;
  return static_cast<double>(true_positives[j]) / static_cast<double>(predicted_positives[j]);
}

double ThresholdSweep::recall(std::size_t j) const {
  return static_cast<double>(true_positives[j]) / static_cast<double>(gt_positives);
}

void ThresholdSweep::merge(const ThresholdSweep& other) {
  if (thresholds.empty()) {
    *this = other;
    return;
  }
  for (std::size_t j = 0; j < thresholds.size(); ++j) {
    true_positives[j] += other.true_positives[j];
    predicted_positives[j] += other.predicted_positives[j];
  }
  gt_positives += other.gt_positives;
}

ThresholdSweep sweep_thresholds(const Image& prob, const Mask& gt) {
  if (prob.height() != gt.height() || prob.width() != gt.width()) {
    throw std::invalid_argument("sweep_thresholds: probability map and gt extents differ");
  }
  constexpr std::size_t n = 256;
  ThresholdSweep s;
  s.thresholds.resize(n);
  for (std::size_t j = 0; j < n; ++j) s.thresholds[j] = static_cast<double>(j) / 255.0;
  // Histogram of the highest threshold index each pixel clears.
  std::vector<std::size_t> all(n, 0), hit(n, 0);
  for (std::size_t i = 0; i < prob.size(); ++i) {
    const double p = prob[i];
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("sweep_thresholds: probability outside [0,1]");
    auto k = static_cast<std::ptrdiff_t>(std::floor(p * 255.0));
    k = std::clamp<std::ptrdiff_t>(k, 0, 255);
    while (k < 255 && s.thresholds[static_cast<std::size_t>(k + 1)] <= p) ++k;
    while (k > 0 && s.thresholds[static_cast<std::size_t>(k)] > p) --k;
    ++all[static_cast<std::size_t>(k)];
    if (gt[i]) {
      ++hit[static_cast<std::size_t>(k)];
      ++s.gt_positives;
    }
  }
  if (s.gt_positives == 0) throw MetricError("precision/recall undefined: gt has no foreground");
  s.true_positives.assign(n, 0);
  s.predicted_positives.assign(n, 0);
  std::size_t tp = 0, pp = 0;
  for (std::size_t j = n; j-- > 0;) {
    tp += hit[j];
    pp += all[j];
    s.true_positives[j] = tp;
    s.predicted_positives[j] = pp;
  }
  return s;
}

double pr_breakeven(const ThresholdSweep& s) {
  const std::size_t n = s.thresholds.size();
  double best_gap = kInf, fallback = 0;
  for (std::size_t j = 0; j < n; ++j) {
    const double pj = s.precision(j), rj = s.recall(j), dj = pj - rj;
    if (dj == 0) return pj;
    if (std::abs(dj) < best_gap) {
      best_gap = std::abs(dj);
      fallback = 0.5 * (pj + rj);
    }
    if (j + 1 < n) {
      const double pk = s.precision(j + 1), rk = s.recall(j + 1), dk = pk - rk;
      if ((dj < 0 && dk > 0) || (dj > 0 && dk < 0)) {
        const double a = dj / (dj - dk);
        return pj + a * (pk - pj);
      }
    }
  }
  return fallback;
}

double f1_best(const ThresholdSweep& s) {
  double best = 0;
  for (std::size_t j = 0; j < s.thresholds.size(); ++j) {
    const double p = s.precision(j), r = s.recall(j);
    if (p + r > 0) best = std::max(best, 2 * p * r / (p + r));
  }
  return best;
}

double pr_breakeven(const Image& prob, const Mask& gt) { return pr_breakeven(sweep_thresholds(prob, gt)); }
double f1_best(const Image& prob, const Mask& gt) { return f1_best(sweep_thresholds(prob, gt)); }

namespace {

template <typename Pred>
Labels label_components4(std::size_t h, std::size_t w, Pred&& inside) {
  Labels labels(h, w, 0);
  std::int32_t next = 0;
  std::vector<std::size_t> stack;
  for (std::size_t s = 0; s < h * w; ++s) {
    if (labels[s] || !inside(s)) continue;
    labels[s] = ++next;
    stack.assign(1, s);
    while (!stack.empty()) {
      const auto v = stack.back();
      stack.pop_back();
      const auto y = v / w, x = v % w;
      const std::size_t cand[4] = {y > 0 ? v - w : v, y + 1 < h ? v + w : v, x > 0 ? v - 1 : v, x + 1 < w ? v + 1 : v};
      for (auto u : cand) {
        if (u != v && !labels[u] && inside(u)) {
          labels[u] = next;
          stack.push_back(u);
        }
      }
    }
  }
  return labels;
}

}  // namespace

Labels cell_labels(const Mask& gt) {
  return label_components4(gt.height(), gt.width(), [&](std::size_t i) { return gt[i] == 0; });
}

Labels segment_cells(const Image& membrane_prob, double threshold) {
  return label_components4(membrane_prob.height(), membrane_prob.width(),
                           [&](std::size_t i) { return membrane_prob[i] < threshold; });
}

RandCounts rand_counts(const Labels& pred, const Labels& gt) {
  if (pred.height() != gt.height() || pred.width() != gt.width()) {
    throw std::invalid_argument("rand_counts: segmentation extents differ");
  }
  std::map<std::pair<std::int64_t, std::int32_t>, double> joint;
  std::map<std::int64_t, double> s;
  std::map<std::int32_t, double> t;
  std::size_t foreground = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] <= 0) continue;
    ++foreground;
    // Predicted membrane pixels become their own singleton segment.
    const std::int64_t seg = pred[i] > 0 ? pred[i] : -1 - static_cast<std::int64_t>(i);
    joint[{seg, gt[i]}] += 1;
    s[seg] += 1;
    t[gt[i]] += 1;
  }
  if (foreground == 0) throw MetricError("Rand score undefined: gt has no cell pixels");
  RandCounts c;
  for (const auto& [k, n] : joint) c.joint += n * n;
  for (const auto& [k, n] : s) c.pred_sq += n * n;
  for (const auto& [k, n] : t) c.gt_sq += n * n;
  return c;
}

double rand_fscore_foreground(const Image& membrane_prob, const Labels& gt_cells, double threshold) {
  if (!(threshold > 0 && threshold < 1)) throw std::invalid_argument("rand_fscore_foreground: threshold must be in (0,1)");
  return rand_counts(segment_cells(membrane_prob, threshold), gt_cells).fscore();
}

namespace {

void fill_scores(MetricReport& r) {
  r.pr_breakeven = pr_breakeven(r.sweep);
  r.f1 = f1_best(r.sweep);
  r.correctness = r.centerline.correctness;
  r.completeness = r.centerline.completeness;
  r.quality = r.centerline.quality;
  r.paths_correct = r.paths.correct;
  r.paths_infeasible = r.paths.infeasible;
  r.paths_too_long_short = r.paths.too_long_short;
  r.path_warning = r.paths.empty_prediction;
  r.rand_fscore = r.rand.fscore();
}

}  // namespace

MetricReport evaluate(const std::string& id, const Image& prob, const Mask& gt, const EvalConfig& config) {
  if (prob.height() != gt.height() || prob.width() != gt.width()) {
    throw std::invalid_argument("evaluate: prediction and gt extents differ for " + id);
  }
  MetricReport r;
  r.id = id;
  r.threshold = config.threshold;
  r.rho = config.rho;
  r.sweep = sweep_thresholds(prob, gt);
  const Mask pred_skel = thin(threshold(prob, config.threshold));
  const Mask gt_skel = thin(gt);
  r.centerline = centerline_scores(pred_skel, gt_skel, config.rho);
  r.paths = path_topology(skeleton_graph(pred_skel), skeleton_graph(gt_skel),
                          {config.path_samples, config.path_tolerance, config.rho_match, config.seed});
  r.rand = rand_counts(segment_cells(prob, config.threshold), cell_labels(gt));
  fill_scores(r);
  return r;
}

MetricReport mean_report(const std::vector<MetricReport>& reports) {
  if (reports.empty()) throw std::invalid_argument("mean_report: no reports");
  MetricReport m;
  m.id = "mean";
  const auto n = static_cast<double>(reports.size());
  for (const auto& r : reports) {
    m.pr_breakeven += r.pr_breakeven / n;
    m.f1 += r.f1 / n;
    m.correctness += r.correctness / n;
    m.completeness += r.completeness / n;
    m.quality += r.quality / n;
    m.paths_correct += r.paths_correct / n;
    m.paths_infeasible += r.paths_infeasible / n;
    m.paths_too_long_short += r.paths_too_long_short / n;
    m.rand_fscore += r.rand_fscore / n;
    m.path_warning = m.path_warning || r.path_warning;
  }
  m.threshold = reports.front().threshold;
  m.rho = reports.front().rho;
  return m;
}

MetricReport pooled_report(const std::vector<MetricReport>& reports) {
  if (reports.empty()) throw std::invalid_argument("pooled_report: no reports");
  MetricReport p;
  p.id = "pooled";
  std::size_t mp = 0, np = 0, mg = 0, ng = 0;
  for (const auto& r : reports) {
    p.sweep.merge(r.sweep);
    mp += r.centerline.matched_pred;
    np += r.centerline.pred_pixels;
    mg += r.centerline.matched_gt;
    ng += r.centerline.gt_pixels;
    p.paths.n_correct += r.paths.n_correct;
    p.paths.n_infeasible += r.paths.n_infeasible;
    p.paths.n_too_long_short += r.paths.n_too_long_short;
    p.paths.empty_prediction = p.paths.empty_prediction || r.paths.empty_prediction;
    p.rand.joint += r.rand.joint;
    p.rand.pred_sq += r.rand.pred_sq;
    p.rand.gt_sq += r.rand.gt_sq;
  }
  p.centerline = centerline_from_counts(mp, np, mg, ng);
  const auto total = static_cast<double>(p.paths.n_correct + p.paths.n_infeasible + p.paths.n_too_long_short);
  p.paths.correct = static_cast<double>(p.paths.n_correct) / total;
  p.paths.infeasible = static_cast<double>(p.paths.n_infeasible) / total;
  p.paths.too_long_short = static_cast<double>(p.paths.n_too_long_short) / total;
  fill_scores(p);
  p.threshold = reports.front().threshold;
  p.rho = reports.front().rho;
  return p;
}

void write_report_header(std::ostream& os) {
  os << "id\tpr_breakeven\tf1\tcorrectness\tcompleteness\tquality\tpaths_correct\tpaths_infeasible"
        "\tpaths_too_long_short\trand_fscore\tthreshold\trho\tpath_warning\n";
}

void write_report_row(std::ostream& os, const MetricReport& r) {
  const auto flags = os.flags();
  const auto precision = os.precision();
  os << std::fixed << std::setprecision(6);
  os << r.id << '\t' << r.pr_breakeven << '\t' << r.f1 << '\t' << r.correctness << '\t' << r.completeness << '\t'
     << r.quality << '\t' << r.paths_correct << '\t' << r.paths_infeasible << '\t' << r.paths_too_long_short << '\t'
     << r.rand_fscore << '\t' << r.threshold << '\t' << r.rho << '\t' << (r.path_warning ? 1 : 0) << '\n';
  os.flags(flags);
  os.precision(precision);
}

void write_report(std::ostream& os, const std::vector<MetricReport>& reports) {
  write_report_header(os);
  for (const auto& r : reports) write_report_row(os, r);
  write_report_row(os, mean_report(reports));
  write_report_row(os, pooled_report(reports));
}

double mean_quality(const std::vector<Image>& probs, const std::vector<Mask>& gts, double threshold, double rho) {
  if (probs.size() != gts.size() || probs.empty()) throw std::invalid_argument("mean_quality: mismatched inputs");
  double q = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    q += centerline_scores(thin(topodelin::threshold(probs[i], threshold)), thin(gts[i]), rho).quality;
  }
  return q / static_cast<double>(probs.size());
}

}  // namespace topodelin

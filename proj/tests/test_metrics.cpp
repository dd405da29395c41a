#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "support/oracles.hpp"
#include "topodelin/dataset.hpp"
#include "topodelin/metrics.hpp"

using namespace topodelin;

namespace {

Mask from_rows(const std::vector<std::string>& rows) {
  Mask m(rows.size(), rows.front().size());
  for (std::size_t y = 0; y < rows.size(); ++y)
    for (std::size_t x = 0; x < rows[y].size(); ++x) m(y, x) = rows[y][x] == '#';
  return m;
}

Image as_prob(const Mask& m) {
  Image p(m.height(), m.width());
  for (std::size_t i = 0; i < m.size(); ++i) p[i] = m[i];
  return p;
}

Mask hline(std::size_t h, std::size_t w, std::size_t row, std::size_t x0, std::size_t x1) {
  Mask m(h, w);
  for (std::size_t x = x0; x <= x1; ++x) m(row, x) = 1;
  return m;
}

}  // namespace

TEST_CASE("thinning") {
  SUBCASE("a 3-pixel-wide bar thins to its centre row") {
    Mask bar(9, 26);
    for (std::size_t y = 3; y < 6; ++y)
      for (std::size_t x = 3; x < 23; ++x) bar(y, x) = 1;
    const auto skel = thin(bar);
    const auto n = count_foreground(skel);
    CHECK(n >= 18);
    CHECK(n <= 22);
    // One 8-connected component.
    CHECK(skeleton_graph(skel).component_sizes.size() == 1);
  }
  SUBCASE("one-pixel lines are already thin") {
    const auto line = hline(5, 12, 2, 1, 10);
    CHECK(thin(line) == line);
  }
  SUBCASE("thinning is idempotent") {
    std::mt19937_64 rng(4);
    for (int t = 0; t < 20; ++t) {
      const auto skel = thin(oracle::random_mask(rng, 16, 16, 0.5));
      CHECK(thin(skel) == skel);
    }
  }
}

TEST_CASE("squared distance transform equals enumeration") {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 30; ++t) {
    const auto m = oracle::random_mask(rng, 13, 16, 0.05 + 0.02 * t);
    const auto d = squared_distance_transform(m);
    for (std::size_t y = 0; y < 13; ++y)
      for (std::size_t x = 0; x < 16; ++x) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t yy = 0; yy < 13; ++yy)
          for (std::size_t xx = 0; xx < 16; ++xx)
            if (m(yy, xx)) {
              const double dy = static_cast<double>(yy) - static_cast<double>(y);
              const double dx = static_cast<double>(xx) - static_cast<double>(x);
              best = std::min(best, dy * dy + dx * dx);
            }
        REQUIRE(d(y, x) == best);
      }
  }
}

TEST_CASE("centerline scores equal the brute-force oracle") {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 60; ++t) {
    const auto pred = oracle::random_mask(rng, 16, 16, 0.1);
    const auto gt = oracle::random_mask(rng, 16, 16, 0.1);
    for (long rho : {0L, 1L, 2L, 3L}) {
      const auto s = centerline_scores(pred, gt, static_cast<double>(rho));
      const auto o = oracle::centerline(pred, gt, rho * rho);
      REQUIRE(s.matched_pred == o.matched_pred);
      REQUIRE(s.pred_pixels == o.pred);
      REQUIRE(s.matched_gt == o.matched_gt);
      REQUIRE(s.gt_pixels == o.gt);
      if (o.pred && o.gt) {
        const double mp = static_cast<double>(o.matched_pred), p = static_cast<double>(o.pred);
        const double mg = static_cast<double>(o.matched_gt), g = static_cast<double>(o.gt);
        REQUIRE(s.correctness == mp / p);
        REQUIRE(s.completeness == mg / g);
        REQUIRE(s.quality == mp / (p + g - mg));
        REQUIRE(s.quality <= s.correctness);
        if (o.matched_pred <= o.matched_gt) REQUIRE(s.quality <= s.completeness);
      }
    }
  }
}

TEST_CASE("centerline hand cases") {
  const auto gt = hline(12, 20, 5, 2, 17);
  const auto shifted = hline(12, 20, 6, 2, 17);
  const auto near = centerline_scores(shifted, gt, 2);
  CHECK(near.correctness == 1.0);
  CHECK(near.completeness == 1.0);
  CHECK(near.quality == 1.0);
  const auto strict = centerline_scores(shifted, gt, 0);
  CHECK(strict.correctness == 0.0);
  CHECK(strict.completeness == 0.0);
  CHECK(strict.quality == 0.0);
  // Half the line predicted: correctness 1, completeness 8/16, quality 8/16.
  const auto half = centerline_scores(hline(12, 20, 5, 2, 9), gt, 0);
  CHECK(half.correctness == 1.0);
  CHECK(half.completeness == 0.5);
  CHECK(half.quality == 0.5);
  // Degenerate conventions.
  const Mask empty(12, 20);
  CHECK(centerline_scores(empty, empty, 2).quality == 1.0);
  CHECK(centerline_scores(empty, gt, 2).quality == 0.0);
  CHECK(centerline_scores(gt, empty, 2).correctness == 0.0);
}

TEST_CASE("geodesic distances equal exhaustive path enumeration") {
  std::mt19937_64 rng(3);
  int pairs = 0;
  for (int t = 0; t < 40; ++t) {
    // Two walks so some pairs are disconnected.
    auto m = oracle::random_walk(rng, 10, 10, 8);
    const auto extra = oracle::random_walk(rng, 10, 10, 7);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = m[i] || extra[i];
    const auto g = skeleton_graph(m);
    REQUIRE(g.size() <= 15);
    for (std::size_t a = 0; a < g.size(); ++a) {
      const auto dist = geodesic_distances(g, a);
      for (std::size_t b = 0; b < g.size(); ++b) {
        const auto o = oracle::shortest_path(m, g.pixels[a], g.pixels[b]);
        if (!o) {
          REQUIRE(std::isinf(dist[b]));
          REQUIRE(g.component[a] != g.component[b]);
        } else {
          // Distinct a + b*sqrt(2) decompositions of these lengths differ by
          // far more than 1e-9, so this identifies the same exact length.
          REQUIRE(std::abs(dist[b] - o->value()) < 1e-9);
          REQUIRE(g.component[a] == g.component[b]);
        }
        ++pairs;
      }
    }
  }
  CHECK(pairs > 1000);
}

TEST_CASE("path classification equals the oracle for every pixel pair") {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 25; ++t) {
    const auto pred = thin(oracle::random_walk(rng, 12, 12, 14));
    auto gt = thin(oracle::random_walk(rng, 12, 12, 14));
    const auto pg = skeleton_graph(pred), gg = skeleton_graph(gt);
    PathConfig config;
    config.rho_match = 2;
    for (std::size_t a = 0; a < pg.size(); ++a)
      for (std::size_t b = 0; b < pg.size(); ++b) {
        if (a == b || pg.component[a] != pg.component[b]) continue;
        REQUIRE(classify_path(pg, gg, a, b, config) ==
                oracle::classify(pred, gt, pg.pixels[a], pg.pixels[b], 4, config.tolerance));
      }
  }
}

TEST_CASE("path sampling follows the enumerated distribution") {
  std::mt19937_64 rng(6);
  double mixed = 0;
  for (int t = 0; t < 8; ++t) {
    // The prediction is the gt with pixels dropped and a stray walk added, so
    // all three outcomes occur.
    const auto gt = thin(oracle::random_walk(rng, 12, 12, 15));
    auto pred = gt;
    std::bernoulli_distribution drop(0.15);
    for (auto& v : pred.values()) v = v && !drop(rng);
    const auto stray = oracle::random_walk(rng, 12, 12, 6);
    for (std::size_t i = 0; i < pred.size(); ++i) pred[i] = pred[i] || stray[i];
    PathConfig config;
    config.samples = 20000;
    config.seed = static_cast<std::uint64_t>(t);
    const auto sampled = path_topology(skeleton_graph(pred), skeleton_graph(gt), config);
    if (sampled.empty_prediction) continue;
    auto expected = oracle::path_distribution(pred, gt, 4, config.tolerance);
    mixed += expected[PathOutcome::correct] * expected[PathOutcome::infeasible];
    const auto within = [&](double observed, double p) {
      p = std::clamp(p, 0.0, 1.0);
      const double sd = std::sqrt(p * (1 - p) / 20000.0);
      return std::abs(observed - p) <= 5 * sd + 1e-12;
    };
    CHECK(within(sampled.correct, expected[PathOutcome::correct]));
    CHECK(within(sampled.infeasible, expected[PathOutcome::infeasible]));
    CHECK(within(sampled.too_long_short, expected[PathOutcome::too_long_short]));
    CHECK(sampled.n_correct + sampled.n_infeasible + sampled.n_too_long_short == 20000);
  }
  CHECK(mixed > 0);
}

TEST_CASE("path hand cases") {
  // gt: straight line of length 16.
  const auto gt = skeleton_graph(hline(12, 24, 5, 4, 20));
  // Up two rows, across, down two rows: 1 + sqrt2 + 14 + sqrt2 + 1 = 16 + 2 sqrt2, about 18% longer.
  Mask pred(12, 24);
  pred(5, 4) = pred(4, 4) = pred(4, 20) = pred(5, 20) = 1;
  for (std::size_t x = 4; x <= 20; ++x) pred(3, x) = 1;
  const auto pg = skeleton_graph(pred);
  const auto a = static_cast<std::size_t>(pg.index(5, 4)), b = static_cast<std::size_t>(pg.index(5, 20));
  CHECK(geodesic_distance(pg, a, b) == doctest::Approx(16 + 2 * std::sqrt(2.0)).epsilon(1e-12));
  CHECK(classify_path(pg, gt, a, b, {}) == PathOutcome::too_long_short);
  // A one-row bump: 6 + sqrt2 + 2 + sqrt2 + 6 = 14 + 2 sqrt2, about 5% longer.
  Mask bump(12, 24);
  for (std::size_t x = 4; x <= 20; ++x) bump(x >= 11 && x <= 13 ? 4 : 5, x) = 1;
  const auto bg = skeleton_graph(bump);
  const auto c = static_cast<std::size_t>(bg.index(5, 4)), d = static_cast<std::size_t>(bg.index(5, 20));
  CHECK(geodesic_distance(bg, c, d) == doctest::Approx(14 + 2 * std::sqrt(2.0)).epsilon(1e-12));
  CHECK(classify_path(bg, gt, c, d, {}) == PathOutcome::correct);
  // A copy of the gt line is correct; a far-away line is infeasible.
  const auto same = skeleton_graph(hline(12, 24, 5, 4, 20));
  CHECK(classify_path(same, gt, 0, same.size() - 1, {}) == PathOutcome::correct);
  const auto far = skeleton_graph(hline(12, 24, 10, 4, 20));
  CHECK(classify_path(far, gt, 0, far.size() - 1, {}) == PathOutcome::infeasible);
  // Mid-gap: pairs within one half are correct, pairs across the gap cannot be drawn.
  auto gapped = hline(12, 24, 5, 1, 22);
  gapped(5, 11) = gapped(5, 12) = 0;
  const auto full = skeleton_graph(hline(12, 24, 5, 1, 22));
  const auto gg = skeleton_graph(gapped);
  const auto dist = oracle::path_distribution(gapped, full.mask(), 4, 0.1);
  PathConfig cfg;
  const auto sampled = path_topology(gg, full, cfg);
  CHECK(std::abs(sampled.correct - dist.at(PathOutcome::correct)) <= 0.05);
  CHECK(dist.at(PathOutcome::correct) == doctest::Approx(1.0));
  // Nothing to sample.
  const auto none = path_topology(skeleton_graph(Mask(12, 24)), gt);
  CHECK(none.empty_prediction);
  CHECK(none.infeasible == 1.0);
}

TEST_CASE("threshold sweep equals direct enumeration") {
  std::mt19937_64 rng(7);
  for (int t = 0; t < 40; ++t) {
    const auto prob = oracle::random_prob(rng, 16, 16);
    auto gt = oracle::random_mask(rng, 16, 16, 0.3);
    gt[0] = 1;
    const auto s = sweep_thresholds(prob, gt);
    const auto o = oracle::sweep(prob, gt);
    REQUIRE(s.thresholds.size() == 256);
    REQUIRE(s.gt_positives == o.gt);
    for (std::size_t j = 0; j < 256; ++j) {
      REQUIRE(s.thresholds[j] == static_cast<double>(j) / 255.0);
      REQUIRE(s.true_positives[j] == o.tp[j]);
      REQUIRE(s.predicted_positives[j] == o.pp[j]);
    }
    REQUIRE(f1_best(s) == oracle::best_f1(o));
  }
}

TEST_CASE("break-even hand cases") {
  SUBCASE("checkerboard prediction of half the gt") {
    // gt: left half. prob 1 on a checkerboard, 0 elsewhere.
    Mask gt(8, 8);
    Image prob(8, 8);
    for (std::size_t y = 0; y < 8; ++y)
      for (std::size_t x = 0; x < 8; ++x) {
        gt(y, x) = x < 4;
        prob(y, x) = (x + y) % 2 == 0 ? 1.0 : 0.0;
      }
    // t = 0: P = 1/2, R = 1. t > 0: P = 16/32 = 1/2, R = 16/32 = 1/2, so P == R exactly.
    CHECK(pr_breakeven(prob, gt) == 0.5);
    CHECK(f1_best(prob, gt) == doctest::Approx(2.0 / 3.0));
  }
  SUBCASE("checkerboard gt with two confidence levels") {
    Mask gt(16, 16);
    Image prob(16, 16, 0.25);
    for (std::size_t y = 0; y < 16; ++y)
      for (std::size_t x = 0; x < 16; ++x) {
        gt(y, x) = (x + y) % 2 == 0;
        if (gt(y, x) && x < 8) prob(y, x) = 0.75;
      }
    const auto s = sweep_thresholds(prob, gt);
    const auto o = oracle::sweep(prob, gt);
    CHECK(s.true_positives == o.tp);
    CHECK(s.predicted_positives == o.pp);
    CHECK(f1_best(s) == oracle::best_f1(o));
    // t <= 0.25: P = 1/2, R = 1. 0.25 < t <= 0.75: P = 1, R = 1/2. Crossing interpolated at the midpoint.
    CHECK(pr_breakeven(s) == doctest::Approx(0.75));
  }
  SUBCASE("perfect prediction") {
    const auto gt = hline(6, 6, 2, 0, 5);
    CHECK(pr_breakeven(as_prob(gt), gt) == 1.0);
    CHECK(f1_best(as_prob(gt), gt) == 1.0);
  }
  SUBCASE("undefined without gt foreground") {
    CHECK_THROWS_AS(sweep_thresholds(Image(4, 4), Mask(4, 4)), MetricError);
  }
}

TEST_CASE("Rand F-score equals ordered pixel-pair enumeration") {
  std::mt19937_64 rng(8);
  for (int t = 0; t < 40; ++t) {
    const auto gt = oracle::random_mask(rng, 16, 16, 0.35);
    const auto prob = oracle::random_prob(rng, 16, 16);
    const auto cells = cell_labels(gt);
    REQUIRE(cells == oracle::gt_cells(gt));
    for (double threshold : {0.3, 0.5, 0.7}) {
      const auto seg = segment_cells(prob, threshold);
      REQUIRE(seg == oracle::segments(prob, threshold));
      const auto counts = rand_counts(seg, cells);
      const auto o = oracle::rand_pairs(seg, cells);
      REQUIRE(counts.joint == o.same_both);
      REQUIRE(counts.pred_sq == o.same_pred);
      REQUIRE(counts.gt_sq == o.same_gt);
      REQUIRE(rand_fscore_foreground(prob, cells, threshold) == o.fscore());
    }
  }
}

TEST_CASE("Rand hand cases") {
  // Two gt cells of two pixels each, separated by a membrane column.
  const auto gt = from_rows({"..#..", "#####"});
  const auto cells = cell_labels(gt);
  REQUIRE(cells(0, 0) != cells(0, 3));
  // Prediction merges both cells into one segment: 2*8 / (16 + 8) = 2/3.
  Image merged(2, 5, 1.0);
  for (std::size_t x : {0, 1, 2, 3, 4}) merged(0, x) = 0.0;
  CHECK(rand_fscore_foreground(merged, cells, 0.5) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  // Prediction splits every pixel: joint 4, pred 4, gt 8 -> 8/12 = 2/3.
  Image split(2, 5, 1.0);
  split(0, 1) = split(0, 3) = 0.0;
  CHECK(rand_fscore_foreground(split, cells, 0.5) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(rand_fscore_foreground(as_prob(gt), cells, 0.5) == 1.0);
  CHECK_THROWS_AS(rand_fscore_foreground(merged, cells, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(rand_counts(cell_labels(Mask(2, 2, 1)), cell_labels(Mask(2, 2, 1))), MetricError);
}

TEST_CASE("identity prediction scores 1 everywhere") {
  SynthConfig c;
  for (const auto& s : synth(c, 5)) {
    const auto r = evaluate(s.id, as_prob(s.gt), s.gt, EvalConfig{});
    CHECK(r.correctness == 1.0);
    CHECK(r.completeness == 1.0);
    CHECK(r.quality == 1.0);
    CHECK(r.pr_breakeven == 1.0);
    CHECK(r.f1 == 1.0);
    CHECK(r.paths_correct == 1.0);
    CHECK(r.rand_fscore == 1.0);
  }
}

TEST_CASE("report aggregation and formatting") {
  SynthConfig c;
  const auto samples = synth(c, 3);
  std::vector<MetricReport> reports;
  for (const auto& s : samples) {
    Image noisy = as_prob(s.gt);
    for (std::size_t i = 0; i < noisy.size(); i += 7) noisy[i] = 0.5 * (1 - noisy[i]) + 0.25;
    reports.push_back(evaluate(s.id, noisy, s.gt, EvalConfig{}));
  }
  const auto mean = mean_report(reports);
  CHECK(mean.quality == doctest::Approx((reports[0].quality + reports[1].quality + reports[2].quality) / 3));
  const auto pooled = pooled_report(reports);
  std::size_t mp = 0, p = 0, mg = 0, g = 0;
  for (const auto& r : reports) {
    mp += r.centerline.matched_pred;
    p += r.centerline.pred_pixels;
    mg += r.centerline.matched_gt;
    g += r.centerline.gt_pixels;
  }
  CHECK(pooled.quality == static_cast<double>(mp) / static_cast<double>(p + g - mg));

  std::ostringstream os;
  write_report(os, reports);
  std::istringstream is(os.str());
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(is, line)) lines.push_back(line);
  REQUIRE(lines.size() == 6);
  CHECK(lines[0].rfind("id\tpr_breakeven\tf1\tcorrectness", 0) == 0);
  CHECK(lines[4].rfind("mean\t", 0) == 0);
  CHECK(lines[5].rfind("pooled\t", 0) == 0);
}

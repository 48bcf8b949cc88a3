#include <gtest/gtest.h>

#include <random>

#include "support.hpp"

using namespace gcl;

namespace {

struct Case {
  std::vector<InferenceTrace> traces;
  std::vector<int> labels;
};

Case random_case(std::mt19937_64& rng, std::size_t n, std::size_t gates, std::size_t classes) {
  Case c;
  std::uniform_int_distribution<std::size_t> exit(0, gates);  // gates means "not stopped"
  std::uniform_int_distribution<int> label(0, static_cast<int>(classes) - 1);
  for (std::size_t i = 0; i < n; ++i) {
    InferenceTrace t;
    const std::size_t e = exit(rng);
    if (e < gates) {
      t.exit_gate = e;
    } else {
      t.prediction = label(rng);
    }
    c.traces.push_back(t);
    c.labels.push_back(label(rng));
  }
  return c;
}

}  // namespace

TEST(Confusion, MatchesLoopOracle) {
  std::mt19937_64 rng(1);
  const auto omega = ClassMapping::background_vs_rest(4);
  const Case c = random_case(rng, 1000, 3, 4);
  const auto any = confusion_from_traces(c.traces, c.labels, omega);
  std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;
  for (std::size_t i = 0; i < 1000; ++i) {
    const bool bg = c.labels[i] == 0;
    const bool stop = c.traces[i].exit_gate.has_value();
    if (bg && stop) ++tp;
    if (!bg && stop) ++fp;
    if (!bg && !stop) ++tn;
    if (bg && !stop) ++fn;
  }
  EXPECT_EQ(any, (GateConfusion{tp, fp, tn, fn}));
  EXPECT_EQ(any.total(), 1000u);
  EXPECT_DOUBLE_EQ(*stop_rate(any), static_cast<double>(tp + fp) / 1000.0);
  EXPECT_DOUBLE_EQ(*early_stop_rate(any), static_cast<double>(tp) / static_cast<double>(tp + fn));
  EXPECT_DOUBLE_EQ(*negative_pass_through_rate(any), static_cast<double>(fn) / static_cast<double>(tp + fn));
  EXPECT_DOUBLE_EQ(*positive_lost_rate(any), static_cast<double>(fp) / static_cast<double>(fp + tn));
  EXPECT_DOUBLE_EQ(*early_stop_rate(any) + *negative_pass_through_rate(any), 1.0);

  const auto at1 = confusion_from_traces(c.traces, c.labels, omega, 1);
  std::uint64_t stopped1 = 0;
  for (const auto& t : c.traces) stopped1 += t.exit_gate == std::optional<std::size_t>(1) ? 1 : 0;
  EXPECT_EQ(at1.tp + at1.fp, stopped1);
  EXPECT_EQ(at1.total(), 1000u);
}

TEST(Confusion, EmptyDenominatorsAreAbsent) {
  GateConfusion c;
  c.add(false, false);
  c.add(false, true);
  EXPECT_FALSE(early_stop_rate(c));
  EXPECT_FALSE(negative_pass_through_rate(c));
  EXPECT_DOUBLE_EQ(*positive_lost_rate(c), 0.5);
  EXPECT_FALSE(stop_rate(GateConfusion{}));
}

TEST(Metrics, NegativeCorrectionHandExample) {
  const auto omega = ClassMapping::background_vs_rest(3);
  // Four background samples: two stopped; of those, one the full model got wrong.
  const std::vector<int> labels{0, 0, 0, 0, 1, 2};
  const std::vector<int> ungated{2, 0, 1, 0, 1, 1};
  const std::vector<bool> stopped{true, true, false, false, true, false};
  EXPECT_DOUBLE_EQ(*negative_correction_rate(stopped, labels, ungated, omega), 0.25);
  const std::vector<bool> stopped2{true, false, true, false, false, false};
  EXPECT_DOUBLE_EQ(*negative_correction_rate(stopped2, labels, ungated, omega), 0.5);
  EXPECT_FALSE(negative_correction_rate(std::vector<bool>{true}, std::vector<int>{1}, std::vector<int>{0}, omega));
}

TEST(Metrics, NegativeCorrectionLoopOracle) {
  std::mt19937_64 rng(2);
  const auto omega = ClassMapping::background_vs_rest(5);
  std::uniform_int_distribution<int> label(0, 4);
  std::vector<int> y(1000), pred(1000);
  std::vector<bool> stop(1000);
  double num = 0, den = 0;
  for (std::size_t i = 0; i < 1000; ++i) {
    y[i] = label(rng) < 2 ? 0 : label(rng);
    pred[i] = label(rng);
    stop[i] = (rng() & 1) != 0;
    if (y[i] == 0) {
      den += 1;
      if (stop[i] && pred[i] != 0) num += 1;
    }
  }
  EXPECT_DOUBLE_EQ(*negative_correction_rate(stop, y, pred, omega), num / den);
}

TEST(Metrics, DropoutAndTransmission) {
  EXPECT_DOUBLE_EQ(dropout_rate(Tensor::vector({0.9f, 0.1f, 0.7f, 0.2f})), 0.5);
  EXPECT_DOUBLE_EQ(dropout_rate(Tensor::vector({0.5f, 2.0f})), 0.5);  // exactly 0.5 is dropped
  EXPECT_DOUBLE_EQ(transmission_ratio(0.25, 0.6), 0.3);
  EXPECT_DOUBLE_EQ(transmission_ratio(0.0, 0.0), 1.0);
}

TEST(Metrics, AccuracyUsesDecision) {
  std::vector<InferenceTrace> t(4);
  t[0].exit_gate = 0;  // decided background
  t[1].prediction = 2;
  t[2].prediction = 1;
  t[3].exit_gate = 1;
  EXPECT_DOUBLE_EQ(accuracy(t, std::vector<int>{0, 2, 2, 1}), 0.5);
  EXPECT_THROW(accuracy(t, std::vector<int>{0}), DimensionError);
}

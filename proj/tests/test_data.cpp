#include "dramn/data.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <set>
#include <sstream>

using namespace dramn;

namespace {

// Record with a hand-set spectrum and a flat in-band trajectory.
ScenarioRecord flat_record(const std::vector<Complex>& spectrum) {
  ScenarioRecord rec;
  rec.spectrum = ComplexVector(static_cast<Index>(spectrum.size()));
  for (std::size_t k = 0; k < spectrum.size(); ++k) rec.spectrum(static_cast<Index>(k)) = spectrum[k];
  rec.trajectory.data = Matrix(60000, 2);
  rec.trajectory.data.col(0).setConstant(1.0);
  rec.trajectory.data.col(1).setConstant(60.0);
  rec.trajectory.channel_names = {"V1", "f1"};
  rec.channel_kinds = {ChannelKind::Voltage, ChannelKind::Frequency};
  rec.offsets = Vector(2);
  rec.offsets << 1.0, 60.0;
  return rec;
}

double max_real(const ComplexVector& v) {
  double m = -std::numeric_limits<double>::infinity();
  for (Index k = 0; k < v.size(); ++k) m = std::max(m, v(k).real());
  return m;
}

double deviation_rms(const ScenarioRecord& rec, Index r0, Index rows) {
  const Matrix seg = rec.trajectory.data.middleRows(r0, rows).rowwise() - rec.offsets.transpose();
  return std::sqrt(seg.squaredNorm() / static_cast<double>(seg.size()));
}

}  // namespace

TEST(TernaryGrid, DefaultCount) {
  const auto g = ternary_grid();
  EXPECT_EQ(g.size(), 4851u);
  for (const auto& m : g) {
    EXPECT_EQ(m.total(), 100);
    EXPECT_GE(std::min({m.sg, m.gfm, m.gfl}), 1);
  }
  std::set<std::tuple<int, int, int>> uniq;
  for (const auto& m : g) uniq.insert({m.sg, m.gfm, m.gfl});
  EXPECT_EQ(uniq.size(), g.size());
}

TEST(TernaryGrid, TinyExhaustive) {
  const auto g = ternary_grid(4, 1, 1);
  ASSERT_EQ(g.size(), 3u);
  EXPECT_EQ(g[0], (GenerationMix{1, 1, 2}));
  EXPECT_EQ(g[1], (GenerationMix{1, 2, 1}));
  EXPECT_EQ(g[2], (GenerationMix{2, 1, 1}));
}

TEST(TernaryGrid, StepTwoMatchesBruteForce) {
  std::size_t brute = 0;
  for (int a = 1; a <= 100; ++a) {
    for (int b = 1; b <= 100; ++b) {
      const int c = 100 - a - b;
      if (c >= 1 && a % 2 == 0 && b % 2 == 0 && c % 2 == 0) ++brute;
    }
  }
  EXPECT_EQ(brute, 1176u);
  EXPECT_EQ(ternary_grid(100, 1, 2).size(), brute);
  EXPECT_EQ(ternary_grid(100, 1, 10).size(), 36u);
}

TEST(TernaryGrid, InfeasibleThrows) {
  EXPECT_THROW(ternary_grid(2, 1, 1), ConfigError);
  EXPECT_THROW(ternary_grid(100, 1, 0), ConfigError);
  EXPECT_THROW(ternary_grid(5, 1, 2), ConfigError);
}

TEST(Surrogate, HeavyDampingMixIsStable) {
  SurrogateConfig cfg;
  const auto rec = synthesize_scenario({98, 1, 1}, EventKind::LoadIncrease, 3, cfg);
  for (Index k = 0; k < rec.spectrum.size(); ++k) {
    const Complex l = rec.spectrum(k);
    EXPECT_LT(l.real(), 0.0);
    EXPECT_GE(-l.real() / std::abs(l), 0.03);
  }
  EXPECT_FALSE(rec.diverged);
  EXPECT_EQ(rec.label, 0);
}

TEST(Surrogate, SpectrumMatchesIndependentEigenvalues) {
  SurrogateConfig cfg;
  cfg.n_gen = 1;
  cfg.coupling = 0.0;
  const auto sys = build_surrogate({50, 25, 25}, false, cfg);
  const auto ref = oracle::eigenvalues_2x2(sys.a);
  const auto got = sys.eigenvalues();
  const double w = 2.0 * std::numbers::pi * cfg.base_freq_hz;
  EXPECT_NEAR(std::abs(ref[0]), w, 1e-12);
  EXPECT_NEAR(-ref[0].real() / std::abs(ref[0]), sys.zeta(0), 1e-12);
  EXPECT_NEAR(std::abs(got(0) - ref[0]) * std::abs(got(0) - ref[1]), 0.0, 1e-9);
}

TEST(Surrogate, TunedGrowthRateGrowsAndLabelsUnstable) {
  SurrogateConfig cfg;
  // a gentler damping curve so some grid mix lands near Re = +0.1
  cfg.m_scale = 0.1;
  GenerationMix best{};
  double err = std::numeric_limits<double>::infinity();
  for (const auto& m : ternary_grid()) {
    const double re = max_real(build_surrogate(m, false, cfg).eigenvalues());
    if (std::abs(re - 0.1) < err) {
      err = std::abs(re - 0.1);
      best = m;
    }
  }
  ASSERT_LT(err, 0.005) << best.to_string();
  const auto rec = synthesize_scenario(best, EventKind::ShortCircuit, 11, cfg);
  ASSERT_FALSE(rec.diverged);
  const double early = deviation_rms(rec, 21000, 5000);
  const double late = deviation_rms(rec, 54000, 5000);
  // e^{0.1 * 33 s} ~ 27; the forced part only adds to the early level
  EXPECT_GT(late / early, 10.0);
  EXPECT_EQ(rec.label, 1);
  EXPECT_TRUE(label_breakdown(rec).positive_real);
}

TEST(Surrogate, Deterministic) {
  SurrogateConfig cfg;
  for (auto ev : {EventKind::LoadIncrease, EventKind::ShortCircuit, EventKind::Unperturbed}) {
    const auto a = synthesize_scenario({40, 30, 30}, ev, 5, cfg);
    const auto b = synthesize_scenario({40, 30, 30}, ev, 5, cfg);
    ASSERT_EQ(a.trajectory.data.size(), b.trajectory.data.size());
    EXPECT_EQ(std::memcmp(a.trajectory.data.data(), b.trajectory.data.data(),
                          sizeof(double) * static_cast<std::size_t>(a.trajectory.data.size())),
              0);
    const auto c = synthesize_scenario({40, 30, 30}, ev, 6, cfg);
    EXPECT_NE(a.trajectory.data, c.trajectory.data);
  }
}

TEST(Surrogate, RecordShapeAndTiming) {
  SurrogateConfig cfg;
  const auto rec = synthesize_scenario({40, 30, 30}, EventKind::ShortCircuit, 5, cfg);
  EXPECT_EQ(rec.trajectory.data.rows(), 60000);
  EXPECT_EQ(rec.trajectory.data.cols(), 12);
  EXPECT_EQ(rec.trajectory.t_first_ms, 1);
  EXPECT_EQ(rec.trajectory.t_last_ms(), 60000);
  EXPECT_TRUE(rec.trajectory.data.allFinite());
  // the fault clamp shows from t = 20000 (row 19999) for 50 ms
  const Index v = rec.faulted_unit;
  ASSERT_GE(v, 0);
  EXPECT_NE(rec.trajectory.data(19998, v), cfg.fault_voltage);
  EXPECT_EQ(rec.trajectory.data(19999, v), cfg.fault_voltage);
  EXPECT_EQ(rec.trajectory.data(20048, v), cfg.fault_voltage);
  EXPECT_NE(rec.trajectory.data(20049, v), cfg.fault_voltage);
}

TEST(Surrogate, LoadIncreaseVisibleAtEventSample) {
  SurrogateConfig cfg;
  cfg.ambient_std = 0.0;
  const auto rec = synthesize_scenario({60, 30, 10}, EventKind::LoadIncrease, 5, cfg);
  EXPECT_EQ(rec.trajectory.data(19998, 0), 1.0);
  EXPECT_LT(rec.trajectory.data(19999, 0), 1.0);
}

TEST(Surrogate, DivergenceFlagged) {
  SurrogateConfig cfg;
  cfg.divergence_limit = 1e-3;
  const auto rec = synthesize_scenario({10, 10, 80}, EventKind::LoadIncrease, 5, cfg);
  EXPECT_TRUE(rec.diverged);
  EXPECT_TRUE(window_plan(rec, WindowConfig{}).train.empty());
}

// DMD on a noiseless free response (deviation from the operating point)
// recovers exp(lambda dt) for every ground-truth eigenvalue.
TEST(Surrogate, DmdRecoversDiscreteSpectrum) {
  SurrogateConfig cfg;
  cfg.ambient_std = 0.0;
  for (const GenerationMix& mix : {GenerationMix{70, 20, 10}, GenerationMix{34, 33, 33}, GenerationMix{20, 10, 70}}) {
    const auto rec = synthesize_scenario(mix, EventKind::Unperturbed, 21, cfg);
    const Index m = rec.spectrum.size();
    TimeSeriesWindow w;
    w.data = rec.trajectory.data.topRows(1000).rowwise() - rec.offsets.transpose();
    w.dt = cfg.dt;
    DmdConfig dc;
    dc.rank = static_cast<int>(m);
    dc.svd_rel_tol = 1e-14;
    const auto res = dmd(w, dc);
    ASSERT_EQ(res.r_eff, m);
    std::vector<Complex> want;
    for (Index k = 0; k < m; ++k) want.push_back(std::exp(rec.spectrum(k) * cfg.dt));
    EXPECT_LE(oracle::spectrum_distance(res.eigenvalues, want), 1e-5) << mix.to_string();
  }
}

TEST(Surrogate, ClassBalancePerEvent) {
  SurrogateConfig cfg;
  const auto grid = ternary_grid(100, 1, 10);
  for (auto ev : {EventKind::LoadIncrease, EventKind::ShortCircuit, EventKind::Unperturbed}) {
    int pos = 0;
    for (const auto& m : grid) pos += synthesize_scenario(m, ev, scenario_seed(1, m, ev), cfg).label;
    const double frac = static_cast<double>(pos) / static_cast<double>(grid.size());
    EXPECT_GE(frac, 0.05) << to_string(ev);
    EXPECT_LE(frac, 0.95) << to_string(ev);
  }
}

TEST(Label, WellDampedPairIsStable) {
  const auto rec = flat_record({{-1.0, 5.0}, {-1.0, -5.0}});
  EXPECT_NEAR(1.0 / std::sqrt(26.0), 0.196, 1e-3);
  EXPECT_EQ(label_scenario(rec), 0);
}

TEST(Label, PositiveRealPartIsUnstable) {
  const auto rec = flat_record({{-1.0, 5.0}, {-1.0, -5.0}, {0.3687, 2.0}, {0.3687, -2.0}});
  EXPECT_EQ(label_scenario(rec), 1);
  EXPECT_TRUE(label_breakdown(rec).positive_real);
}

TEST(Label, VoltageExcursionAfterGuard) {
  auto rec = flat_record({{-1.0, 5.0}, {-1.0, -5.0}});
  rec.trajectory.data(29999, 0) = 1.06;  // t = 30000 ms
  const auto b = label_breakdown(rec);
  EXPECT_TRUE(b.voltage);
  EXPECT_FALSE(b.positive_real);
  EXPECT_EQ(b.label(), 1);
}

TEST(Label, ExcursionInsideGuardIgnored) {
  auto rec = flat_record({{-1.0, 5.0}, {-1.0, -5.0}});
  rec.trajectory.data(20100, 0) = 0.3;
  rec.trajectory.data(24999, 1) = 61.0;  // t = 25000, still inside the guard
  EXPECT_EQ(label_scenario(rec), 0);
  rec.trajectory.data(25000, 1) = 59.7;  // t = 25001
  EXPECT_TRUE(label_breakdown(rec).frequency);
}

TEST(Label, LowDampingCriterion) {
  // zeta = 0.02 on an oscillatory pair
  const double w = 5.0;
  const double re = -0.02 * w;
  const auto rec = flat_record({{re, w * std::sqrt(1.0 - 0.0004)}, {re, -w * std::sqrt(1.0 - 0.0004)}});
  const auto b = label_breakdown(rec);
  EXPECT_TRUE(b.low_damping);
  EXPECT_FALSE(b.positive_real);
  // a real (non-oscillatory) slow pole is not a damping violation
  EXPECT_EQ(label_scenario(flat_record({{-0.001, 0.0}})), 0);
}

TEST(Label, MissingSpectrumThrows) {
  auto rec = flat_record({});
  EXPECT_THROW(label_scenario(rec), DataError);
}

TEST(Label, MonotoneInRealShift) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> re(-2.0, 0.5), im(0.0, 10.0), shift(0.0, 1.0);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<Complex> s;
    for (int k = 0; k < 3; ++k) {
      const Complex l(re(rng), im(rng));
      s.push_back(l);
      s.push_back(std::conj(l));
    }
    auto rec = flat_record(s);
    const int before = label_scenario(rec);
    rec.spectrum.array() += Complex(shift(rng), 0.0);
    if (before == 1) EXPECT_EQ(label_scenario(rec), 1);
  }
}

TEST(Windowing, ElevenTrainingSamplesPerEventScenario) {
  SurrogateConfig cfg;
  WindowConfig wc;
  for (auto ev : {EventKind::LoadIncrease, EventKind::ShortCircuit}) {
    const auto rec = synthesize_scenario({60, 20, 20}, ev, 2, cfg);
    const auto plan = window_plan(rec, wc);
    ASSERT_EQ(plan.train.size(), 11u);
    for (std::size_t k = 0; k < 11; ++k) {
      const auto t_end = plan.train[k].t_end;
      EXPECT_EQ(t_end, 20000 + 1000 * static_cast<std::int64_t>(k));
      // the last window spans [t_end - 999, t_end]
      EXPECT_EQ(wc.seq.window_start(t_end, wc.seq.l_seq - 1), t_end - 999);
      EXPECT_EQ(plan.train[k].label, rec.label);
    }
    EXPECT_EQ(wc.seq.window_start(plan.train.front().t_end, 4), 19001);
    EXPECT_EQ(wc.seq.window_start(plan.train.back().t_end, 4), 29001);
  }
}

TEST(Windowing, GeneralizationDisjointFromTraining) {
  SurrogateConfig cfg;
  WindowConfig wc;
  const auto rec = synthesize_scenario({60, 20, 20}, EventKind::LoadIncrease, 2, cfg);
  const auto plan = window_plan(rec, wc);
  ASSERT_FALSE(plan.generalization.empty());
  EXPECT_EQ(plan.generalization.size(), 22u);
  for (const auto& g : plan.generalization) {
    const std::int64_t first = wc.seq.window_start(g.t_end, 0);
    const bool pre = g.t_end <= 19000 && first >= 1;
    const bool post = first >= 30001 && g.t_end <= 60000;
    EXPECT_TRUE(pre || post) << g.t_end;
    EXPECT_TRUE(g.heldout);
    for (const auto& t : plan.train) EXPECT_NE(t.t_end, g.t_end);
  }
}

TEST(Windowing, UnperturbedSampledInRange) {
  SurrogateConfig cfg;
  WindowConfig wc;
  const auto rec = synthesize_scenario({60, 20, 20}, EventKind::Unperturbed, 2, cfg);
  const auto a = window_plan(rec, wc);
  const auto b = window_plan(rec, wc);
  ASSERT_EQ(a.train.size(), 11u);
  EXPECT_TRUE(a.generalization.empty());
  for (std::size_t k = 0; k < 11; ++k) {
    EXPECT_GE(a.train[k].t_end, 10000);
    EXPECT_LE(a.train[k].t_end, 60000);
    EXPECT_EQ(a.train[k].t_end, b.train[k].t_end);
    if (k) EXPECT_GT(a.train[k].t_end, a.train[k - 1].t_end);
  }
}

TEST(Windowing, DatasetSamplesMatchSlices) {
  SurrogateConfig cfg;
  WindowConfig wc;
  const auto rec = synthesize_scenario({60, 20, 20}, EventKind::LoadIncrease, 2, cfg);
  const auto ws = window_dataset(rec, wc);
  ASSERT_EQ(ws.train.size(), 11u);
  const auto& s = ws.train[0];
  ASSERT_EQ(s.l_seq(), 5);
  EXPECT_EQ(s.t_end, 20000);
  // window 4 is [19001, 20000] -> rows 19000..19999
  EXPECT_EQ(Matrix(s.windows[4].view()), Matrix(rec.trajectory.data.middleRows(19000, 1000)));
  EXPECT_EQ(Matrix(s.windows[0].view()), Matrix(rec.trajectory.data.middleRows(18600, 1000)));
  EXPECT_EQ(s.tensors[4].source_window, 19001);
  // tensors see the deviation from the operating point
  auto w = rec.trajectory.window(19001, 20000);
  w.data.rowwise() -= rec.offsets.transpose();
  const auto direct = build_adjacency(w, DmdConfig{});
  for (int l = 0; l < kNumLayers; ++l) EXPECT_EQ(s.tensors[4].layers[static_cast<std::size_t>(l)], direct.layers[static_cast<std::size_t>(l)]);
}

TEST(Windowing, ShortRecordRejected) {
  SurrogateConfig cfg;
  cfg.duration_ms = 25000;
  const auto rec = synthesize_scenario({60, 20, 20}, EventKind::LoadIncrease, 2, cfg);
  EXPECT_THROW(window_plan(rec, WindowConfig{}), DataError);
}

TEST(Subsample, OneInTwenty) {
  std::vector<ScenarioSpec> specs;
  for (const auto& m : ternary_grid()) specs.push_back({0, m, EventKind::LoadIncrease, 0});
  const auto kept = subsample_scenarios(specs, 20, 9);
  EXPECT_TRUE(kept.size() == 242u || kept.size() == 243u) << kept.size();
  const auto again = subsample_scenarios(specs, 20, 9);
  ASSERT_EQ(kept.size(), again.size());
  for (std::size_t i = 0; i < kept.size(); ++i) EXPECT_EQ(kept[i].mix, again[i].mix);
  const auto other = subsample_scenarios(specs, 20, 10);
  bool differs = false;
  for (std::size_t i = 0; i < kept.size(); ++i) differs = differs || !(kept[i].mix == other[i].mix);
  EXPECT_TRUE(differs);
}

TEST(Subsample, KeepAllIsIdentity) {
  std::vector<ScenarioSpec> specs;
  for (const auto& m : ternary_grid(100, 1, 10)) specs.push_back({0, m, EventKind::ShortCircuit, 0});
  const auto kept = subsample_scenarios(specs, 1, 9);
  ASSERT_EQ(kept.size(), specs.size());
  for (std::size_t i = 0; i < kept.size(); ++i) EXPECT_EQ(kept[i].mix, specs[i].mix);
}

TEST(Subsample, UnperturbedThinningOptional) {
  const auto grid = ternary_grid(100, 1, 10);
  const auto thin = plan_scenarios(grid, {EventKind::LoadIncrease, EventKind::Unperturbed}, 1, 4, true);
  const auto keep = plan_scenarios(grid, {EventKind::LoadIncrease, EventKind::Unperturbed}, 1, 4, false);
  EXPECT_EQ(thin.size(), 18u);
  EXPECT_EQ(keep.size(), 9u + 36u);
  for (std::size_t i = 0; i < keep.size(); ++i) EXPECT_EQ(keep[i].id, i);
}

TEST(Noise, InfiniteSnrLeavesDataUnchanged) {
  std::mt19937_64 rng(1);
  const Matrix x = Matrix::Random(100, 3);
  const Vector off = Vector::Zero(3);
  EXPECT_EQ(inject_noise(x, off, std::numeric_limits<double>::infinity(), 5), x);
}

TEST(Noise, ZeroDbMatchesSignalPower) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> nd(0.0, 0.3);
  Matrix x(100000, 2);
  for (Index i = 0; i < x.rows(); ++i) {
    x(i, 0) = 1.0 + nd(rng);
    x(i, 1) = 60.0 + 0.01 * std::sin(0.01 * static_cast<double>(i));
  }
  Vector off(2);
  off << 1.0, 60.0;
  for (std::uint64_t seed : {7u, 8u}) {
    const Matrix y = inject_noise(x, off, 0.0, seed);
    for (Index j = 0; j < 2; ++j) {
      const double ps = (x.col(j).array() - off(j)).square().mean();
      const double pn = (y.col(j) - x.col(j)).squaredNorm() / static_cast<double>(x.rows());
      EXPECT_NEAR(pn / ps, 1.0, 0.02) << "seed " << seed << " channel " << j;
    }
  }
  EXPECT_NE(inject_noise(x, off, 0.0, 7), inject_noise(x, off, 0.0, 8));
}

TEST(Noise, SnrScalesPower) {
  Matrix x = Matrix::Zero(100000, 1);
  for (Index i = 0; i < x.rows(); ++i) x(i, 0) = std::sin(0.001 * static_cast<double>(i));
  const Vector off = Vector::Zero(1);
  const Matrix y = inject_noise(x, off, 20.0, 3);
  const double ps = x.squaredNorm() / 1e5;
  const double pn = (y - x).squaredNorm() / 1e5;
  EXPECT_NEAR(10.0 * std::log10(ps / pn), 20.0, 0.1);
}

TEST(Noise, ZeroPowerChannelUsesUnitFloor) {
  const Matrix x = Matrix::Constant(100000, 1, 60.0);
  Vector off(1);
  off << 60.0;
  const Matrix y = inject_noise(x, off, 10.0, 3);
  const double pn = (y - x).squaredNorm() / 1e5;
  EXPECT_NEAR(pn, 0.1, 0.1 * 0.02);
}

TEST(Noise, NonFiniteSignalRejected) {
  Matrix x = Matrix::Zero(10, 1);
  x(3, 0) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(inject_noise(x, Vector::Zero(1), 10.0, 1), DataError);
}

TEST(Store, ScenarioRoundTripBitExact) {
  SurrogateConfig cfg;
  cfg.duration_ms = 21000;
  const auto rec = synthesize_scenario({60, 20, 20}, EventKind::ShortCircuit, 2, cfg, 17);
  std::stringstream ss;
  write_scenario(ss, rec);
  const auto back = read_scenario(ss);
  EXPECT_EQ(back.id, 17u);
  EXPECT_EQ(back.mix, rec.mix);
  EXPECT_EQ(back.event, rec.event);
  EXPECT_EQ(back.seed, rec.seed);
  EXPECT_EQ(back.label, rec.label);
  EXPECT_EQ(back.faulted_unit, rec.faulted_unit);
  EXPECT_EQ(back.trajectory.channel_names, rec.trajectory.channel_names);
  EXPECT_EQ(back.channel_kinds, rec.channel_kinds);
  EXPECT_EQ(back.offsets, rec.offsets);
  EXPECT_EQ(back.spectrum, rec.spectrum);
  EXPECT_EQ(back.trajectory.data, rec.trajectory.data);
  EXPECT_EQ(back.trajectory.t_first_ms, 1);
}

TEST(Store, CorruptScenarioDetected) {
  SurrogateConfig cfg;
  cfg.duration_ms = 21000;
  const auto rec = synthesize_scenario({60, 20, 20}, EventKind::ShortCircuit, 2, cfg);
  std::stringstream ss;
  write_scenario(ss, rec);
  std::string bytes = ss.str();
  bytes[bytes.size() - 100] ^= 0x01;
  std::stringstream bad(bytes);
  EXPECT_THROW(read_scenario(bad), DataError);
}

TEST(Store, ManifestRoundTrip) {
  std::vector<ManifestEntry> entries{{0, scenario_filename(0), {10, 20, 70}, EventKind::LoadIncrease, 99, 1, false},
                                     {1, scenario_filename(1), {34, 33, 33}, EventKind::Unperturbed, 5, 0, true}};
  std::stringstream ss;
  write_manifest(ss, entries, {"config_hash 1234"});
  const auto back = read_manifest(ss);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].file, "scenario_000000.bin");
  EXPECT_EQ(back[0].mix, (GenerationMix{10, 20, 70}));
  EXPECT_EQ(back[1].event, EventKind::Unperturbed);
  EXPECT_TRUE(back[1].diverged);
  EXPECT_EQ(back[0].seed, 99u);
  std::stringstream bad("nope\n");
  EXPECT_THROW(read_manifest(bad), DataError);
}

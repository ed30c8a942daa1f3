#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>
#include <vector>

#include "burstkit/analysis.hpp"
#include "burstkit/training.hpp"
#include "doctest.h"

using namespace burstkit;
using namespace burstkit::analysis;

namespace {

std::string temp_dir(const std::string& name) {
  std::string p = "/tmp/burstkit_analysis_" + name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

data::Sample make_sample(const std::string& id, int country, double age,
                         std::vector<double> emotions, data::Split split = data::Split::kTrain) {
  data::Sample s;
  s.clip_id = id;
  s.speaker_id = "spk_" + id;
  s.split = split;
  s.country = country;
  s.age = age;
  s.emotions = std::move(emotions);
  s.wav_path = "wav/" + id + ".wav";
  return s;
}

std::vector<data::Sample> varied_samples(std::size_t n) {
  std::vector<data::Sample> v;
  for (std::size_t i = 0; i < n; ++i) {
    v.push_back(make_sample("clip_" + std::to_string(i), static_cast<int>(i % 4),
                            20.0 + static_cast<double>(i % 7),
                            {0.1 * static_cast<double>(i % 10), 0.5}));
  }
  return v;
}

// Emotions depend on country through the planted shift; embeddings carry a
// noisy view of the emotions only, so the aux inputs genuinely help.
data::Dataset informative_corpus(const std::string& dir) {
  data::SynthSpec spec;
  spec.mode = data::SynthSpec::Mode::kEmbedding;
  spec.n_train = 160;
  spec.n_val = 64;
  spec.k = 4;
  spec.emb_dim = 8;
  spec.emb_windows = 2;
  spec.noise = 0.3;
  spec.country_signal = 0.0;
  spec.country_shift = 0.2;
  return data::synth_dataset(spec, 21, dir);
}

PermutationPlan quick_plan(PermutationPlan::Mode mode) {
  PermutationPlan plan;
  plan.mode = mode;
  plan.n_trials = 6;
  plan.steps = 300;
  plan.base_seed = 100;
  return plan;
}

std::vector<std::string> csv_lines(const std::string& csv) {
  auto lines = split(csv, '\n');
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  return lines;
}

// Finds the unique CSV row starting with the given prefix and returns its cells.
std::vector<std::string> csv_row(const std::string& csv, const std::string& prefix) {
  for (const auto& line : csv_lines(csv)) {
    if (line.rfind(prefix, 0) == 0) return split(line, ',');
  }
  FAIL(("no row starting with " + prefix).c_str());
  return {};
}

}  // namespace

TEST_SUITE("analysis") {

TEST_CASE("shuffling permutes aux columns with seeded independence") {
  auto samples = varied_samples(12);
  auto shuffled = shuffle_aux_labels(samples, 5);
  REQUIRE(shuffled.size() == samples.size());

  // The documented mechanics: country column permuted with the seed, age
  // column with seed + 1, everything else untouched.
  std::vector<int> expect_country;
  std::vector<double> expect_age;
  for (const auto& s : samples) {
    expect_country.push_back(s.country);
    expect_age.push_back(s.age);
  }
  Rng c_rng(5);
  shuffle_vec(expect_country, c_rng);
  Rng a_rng(6);
  shuffle_vec(expect_age, a_rng);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    CHECK(shuffled[i].country == expect_country[i]);
    CHECK(shuffled[i].age == expect_age[i]);
    CHECK(shuffled[i].emotions == samples[i].emotions);
    CHECK(shuffled[i].clip_id == samples[i].clip_id);
  }

  // Multisets preserved.
  auto sorted_countries = [](const std::vector<data::Sample>& v) {
    std::vector<int> c;
    for (const auto& s : v) c.push_back(s.country);
    std::sort(c.begin(), c.end());
    return c;
  };
  CHECK(sorted_countries(shuffled) == sorted_countries(samples));

  // Determinism and the single-sample identity.
  CHECK(shuffle_aux_labels(samples, 5) == shuffled);
  std::vector<data::Sample> one = {samples[0]};
  CHECK(shuffle_aux_labels(one, 77) == one);
  CHECK_THROWS_AS(shuffle_aux_labels({}, 0), ValidationError);
}

TEST_CASE("average shuffle fixed-point rate matches the collision probability") {
  // Proportions (0.5, 0.25, 0.125, 0.125) over 400 samples: a uniformly
  // random permutation keeps a sample's country with probability
  // sum of p_c^2 = 0.34375.
  std::vector<data::Sample> samples;
  const int blocks[4] = {200, 100, 50, 50};
  for (int c = 0; c < 4; ++c) {
    for (int i = 0; i < blocks[c]; ++i) {
      samples.push_back(make_sample("c" + std::to_string(c) + "_" + std::to_string(i), c,
                                    25.0, {0.5}));
    }
  }
  double total = 0.0;
  const int n_seeds = 200;
  for (int seed = 0; seed < n_seeds; ++seed) {
    auto shuffled = shuffle_aux_labels(samples, static_cast<std::uint64_t>(seed));
    int fixed = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (shuffled[i].country == samples[i].country) ++fixed;
    }
    total += static_cast<double>(fixed) / static_cast<double>(samples.size());
  }
  CHECK(std::abs(total / n_seeds - 0.34375) < 0.02);
}

TEST_CASE("incorrect assignment never keeps a label") {
  auto samples = varied_samples(60);
  std::set<double> observed_ages;
  for (const auto& s : samples) observed_ages.insert(s.age);

  for (std::uint64_t seed : {0ULL, 1ULL, 9ULL}) {
    auto wrong = incorrect_assignment(samples, 4, seed);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      CHECK(wrong[i].country != samples[i].country);
      CHECK(wrong[i].country >= 0);
      CHECK(wrong[i].country < 4);
      CHECK(wrong[i].age != samples[i].age);
      CHECK(observed_ages.count(wrong[i].age) == 1);  // only observed ages reused
      CHECK(wrong[i].emotions == samples[i].emotions);
    }
  }
  CHECK(incorrect_assignment(samples, 4, 3) == incorrect_assignment(samples, 4, 3));

  // Two countries force a deterministic flip.
  std::vector<data::Sample> binary;
  for (int i = 0; i < 10; ++i) {
    binary.push_back(make_sample("b" + std::to_string(i), i % 2, 20.0 + i, {0.5}));
  }
  auto two = incorrect_assignment(binary, 2, 1);
  for (std::size_t i = 0; i < binary.size(); ++i) {
    CHECK(two[i].country == 1 - binary[i].country);
  }

  // A maximally skewed original distribution moves all its mass elsewhere.
  std::vector<data::Sample> skewed;
  for (int i = 0; i < 40; ++i) {
    skewed.push_back(make_sample("s" + std::to_string(i), 0, 20.0 + i % 3, {0.5}));
  }
  auto moved = incorrect_assignment(skewed, 4, 2);
  for (const auto& s : moved) CHECK(s.country != 0);

  // Preconditions.
  CHECK_THROWS_WITH_AS(incorrect_assignment(samples, 1, 0), doctest::Contains("two countries"),
                       ValidationError);
  std::vector<data::Sample> flat;
  for (int i = 0; i < 4; ++i) flat.push_back(make_sample("f" + std::to_string(i), i, 30.0, {0.5}));
  CHECK_THROWS_WITH_AS(incorrect_assignment(flat, 4, 0), doctest::Contains("distinct age"),
                       ValidationError);
}

TEST_CASE("welch t test matches frozen references") {
  TTestResult r = two_sample_t_test({1, 2, 3, 4, 5}, {2, 3, 4, 5, 6});
  CHECK(std::abs(r.t - (-1.0)) < 1e-12);
  CHECK(std::abs(r.df - 8.0) < 1e-12);  // equal variances make Welch df exact
  CHECK(std::abs(r.p - 0.34659350708733416) < 1e-12);

  TTestResult same = two_sample_t_test({1, 2, 3}, {1, 2, 3});
  CHECK(same.t == 0.0);
  CHECK(same.p == 1.0);

  // Antisymmetry under swapping the samples.
  TTestResult fwd = two_sample_t_test({1, 2, 3, 9}, {4, 4, 5});
  TTestResult rev = two_sample_t_test({4, 4, 5}, {1, 2, 3, 9});
  CHECK(std::abs(fwd.t + rev.t) < 1e-12);
  CHECK(std::abs(fwd.p - rev.p) < 1e-15);
  CHECK(std::abs(fwd.df - rev.df) < 1e-12);

  // Student-t tail values cross-checked against an independent implementation.
  CHECK(std::abs(student_t_two_sided_p(4.7, 98) - 8.503453123494253e-06) < 1e-16);
  CHECK(std::abs(student_t_two_sided_p(0.14, 98) - 0.8889473243318099) < 1e-12);
  CHECK(student_t_two_sided_p(0.0, 5) == 1.0);

  // Degenerate constant samples.
  TTestResult flat_equal = two_sample_t_test({2, 2, 2}, {2, 2});
  CHECK(flat_equal.t == 0.0);
  CHECK(flat_equal.p == 1.0);
  CHECK(flat_equal.df == 3.0);
  TTestResult flat_apart = two_sample_t_test({2, 2}, {3, 3});
  CHECK(std::isinf(flat_apart.t));
  CHECK(flat_apart.t < 0);
  CHECK(flat_apart.p == 0.0);

  CHECK_THROWS_WITH_AS(two_sample_t_test({1}, {2, 3}), doctest::Contains("two observations"),
                       ValidationError);
}

TEST_CASE("kde curve is a proper density over the padded range") {
  std::vector<double> scores = {0, 1, 2, 3, 4};
  KdeCurve curve = kde_curve(scores);
  // Scott's rule: sd(ddof=1) = sqrt(2.5), h = sd * 5^(-1/5).
  CHECK(std::abs(curve.bandwidth - 1.145977269496164) < 1e-12);
  CHECK(curve.x.size() == 201);
  CHECK(std::abs(curve.x.front() - (0.0 - 3.0 * curve.bandwidth)) < 1e-12);
  CHECK(std::abs(curve.x.back() - (4.0 + 3.0 * curve.bandwidth)) < 1e-12);

  double integral = 0.0;
  for (std::size_t i = 1; i < curve.x.size(); ++i) {
    CHECK(curve.density[i] >= 0.0);
    integral += 0.5 * (curve.density[i] + curve.density[i - 1]) * (curve.x[i] - curve.x[i - 1]);
  }
  CHECK(std::abs(integral - 1.0) < 0.01);

  // Invariant to score ordering.
  KdeCurve reordered = kde_curve({4, 0, 3, 1, 2});
  CHECK(reordered.x == curve.x);
  CHECK(reordered.density == curve.density);

  // Symmetric scores give a symmetric density.
  KdeCurve sym = kde_curve({-2, -1, 0, 1, 2});
  std::size_t n = sym.density.size();
  for (std::size_t i = 0; i < n; ++i) {
    CHECK(std::abs(sym.density[i] - sym.density[n - 1 - i]) < 1e-9);
  }

  // A tight cluster peaks within one bandwidth of the sample mean.
  std::vector<double> tight = {0.499, 0.4995, 0.5, 0.5005, 0.501};
  KdeCurve peak = kde_curve(tight);
  std::size_t arg = 0;
  for (std::size_t i = 1; i < peak.density.size(); ++i) {
    if (peak.density[i] > peak.density[arg]) arg = i;
  }
  CHECK(std::abs(peak.x[arg] - 0.5) <= peak.bandwidth);

  CHECK_THROWS_WITH_AS(kde_curve({1, 1, 1}), doctest::Contains("Dirac"), ValidationError);
  CHECK_THROWS_AS(kde_curve({1}), ValidationError);
  std::string csv = kde_csv("true", curve);
  CHECK(csv_lines(csv).size() == 202);
  CHECK(csv_lines(csv)[0] == "mode,x,density");
  CHECK(csv_lines(csv)[1].rfind("true,", 0) == 0);
}

TEST_CASE("naive baselines are exact constant predictors") {
  data::Dataset ds;
  ds.samples = {
      make_sample("t0", 0, 20.0, {0.5, 0.5}), make_sample("t1", 0, 26.0, {0.5, 0.5}),
      make_sample("t2", 1, 26.0, {0.5, 0.5}), make_sample("t3", 2, 30.0, {0.5, 0.5}),
      make_sample("v0", 0, 22.0, {0.5, 0.5}, data::Split::kVal),
      make_sample("v1", 1, 30.0, {0.5, 0.5}, data::Split::kVal),
      make_sample("v2", 2, 26.0, {0.5, 0.5}, data::Split::kVal),
      make_sample("v3", 3, 40.0, {0.5, 0.5}, data::Split::kVal),
  };
  NaiveBaselines nb = naive_baselines(ds);
  CHECK(nb.majority_country == 0);
  CHECK(nb.median_age == 26.0);  // lower middle of {20, 26, 26, 30}
  // Constant majority prediction on a balanced 4-class split recalls exactly
  // one class.
  CHECK(nb.uar == 0.25);
  double expected_mae = (std::abs(26.0 - 22.0) + std::abs(26.0 - 30.0) +
                         std::abs(26.0 - 26.0) + std::abs(26.0 - 40.0)) /
                        4.0;
  CHECK(nb.mae == expected_mae);
}

TEST_CASE("comparison table reproduces the published harmonic means") {
  // Validation-split scores of the reference model battery; the harmonic mean
  // column printed alongside them rounds to three decimals.
  struct Row {
    const char* model;
    bool mtl;
    double ccc, uar, mae, harmonic;
  };
  const Row rows[] = {
      {"baseline", true, 0.416, 0.506, 4.422, 0.349},
      {"resnet50", true, 0.569, 0.513, 4.093, 0.385},
      {"resnet50", false, 0.620, 0.540, 3.818, 0.412},
      {"resnet34", true, 0.587, 0.483, 4.140, 0.379},
      {"resnet34", false, 0.645, 0.528, 3.799, 0.414},
      {"resnet18", true, 0.583, 0.495, 4.220, 0.377},
      {"resnet18", false, 0.642, 0.539, 3.806, 0.416},
      {"embed_mean", true, 0.647, 0.572, 3.780, 0.424},
      {"embed_mean", false, 0.648, 0.596, 3.722, 0.432},
      {"embed_fc128", true, 0.647, 0.586, 3.874, 0.421},
      {"embed_lstm", true, 0.601, 0.536, 4.121, 0.392},
      {"embed_netvlad", true, 0.640, 0.594, 3.910, 0.419},
      {"embed_autopool", true, 0.652, 0.587, 3.954, 0.417},
  };
  std::vector<RunSummary> summaries;
  for (const Row& r : rows) {
    summaries.push_back({r.model, r.mtl, true, r.ccc, r.uar, r.mae});
  }
  summaries.push_back({"naive", false, false, 0.0, 0.250, 3.778});

  std::string csv = mtl_comparison_csv(summaries);
  for (const Row& r : rows) {
    auto cells = csv_row(csv, std::string(r.model) + "," + (r.mtl ? "yes" : "no") + ",");
    REQUIRE(cells.size() == 10);
    CHECK(std::abs(std::stod(cells[5]) - r.harmonic) <= 0.010);
  }
  // The naive row has no emotion score and therefore no harmonic mean.
  auto naive = csv_row(csv, "naive,");
  CHECK(naive[2].empty());
  CHECK(naive[5].empty());

  // Single-minus-MTL deltas ride on the single-task rows.
  auto r50 = csv_row(csv, "resnet50,no,");
  CHECK(std::abs(std::stod(r50[6]) - 0.051) < 1e-9);
  CHECK(std::abs(std::stod(r50[7]) - 0.027) < 1e-9);
  CHECK(std::abs(std::stod(r50[8]) - (-0.275)) < 1e-9);
  CHECK(std::stod(r50[9]) > 0.0);  // MTL cost the harmonic mean here
  auto r50_mtl = csv_row(csv, "resnet50,yes,");
  CHECK(r50_mtl[6].empty());
  // Head variants have no single-task counterpart.
  auto vlad = csv_row(csv, "embed_netvlad,yes,");
  CHECK(vlad[6].empty());
  CHECK(vlad[9].empty());
}

TEST_CASE("comparison table ordering and edge cases") {
  std::vector<RunSummary> rows = {
      {"b", true, true, 0.5, 0.5, 4.0},
      {"a", false, true, 0.5, 0.5, 4.0},
      {"a", true, true, 0.5, 0.5, 4.0},
  };
  std::string csv = mtl_comparison_csv(rows);
  std::reverse(rows.begin(), rows.end());
  CHECK(mtl_comparison_csv(rows) == csv);  // input order never matters
  auto lines = csv_lines(csv);
  REQUIRE(lines.size() == 4);
  CHECK(lines[1].rfind("a,no,", 0) == 0);
  CHECK(lines[2].rfind("a,yes,", 0) == 0);
  CHECK(lines[3].rfind("b,yes,", 0) == 0);

  // Equal scores mean zero deltas; a lone single-task row gets blanks.
  auto a_single = csv_row(csv, "a,no,");
  CHECK(std::stod(a_single[6]) == 0.0);
  CHECK(std::stod(a_single[9]) == 0.0);
  std::string lone = mtl_comparison_csv({{"solo", false, true, 0.5, 0.5, 4.0}});
  auto solo = csv_row(lone, "solo,no,");
  CHECK(solo[6].empty());

  rows = {{"a", true, true, 0.5, 0.5, 4.0}, {"a", true, true, 0.6, 0.5, 4.0}};
  CHECK_THROWS_WITH_AS(mtl_comparison_csv(rows), doctest::Contains("duplicate"),
                       ValidationError);
  CHECK_THROWS_AS(mtl_comparison_csv({}), ValidationError);
}

TEST_CASE("permutation experiment separates informative from misleading labels") {
  std::string dir = temp_dir("informative");
  data::Dataset ds = informative_corpus(dir);
  data::Dataset before = ds;

  TrialDistribution truth = permutation_experiment(quick_plan(PermutationPlan::Mode::kTrue), ds);
  TrialDistribution wrong =
      permutation_experiment(quick_plan(PermutationPlan::Mode::kIncorrect), ds);
  REQUIRE(truth.scores.size() == 6);
  REQUIRE(wrong.scores.size() == 6);
  CHECK(ds.samples == before.samples);  // the experiment never relabels the dataset

  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(truth.seeds[i] == 100 + i);
    CHECK(truth.scores[i] >= -1.0);
    CHECK(truth.scores[i] <= 1.0);
  }
  double mean_true = 0, mean_wrong = 0;
  for (std::size_t i = 0; i < 6; ++i) {
    mean_true += truth.scores[i] / 6;
    mean_wrong += wrong.scores[i] / 6;
  }
  CHECK(mean_wrong < mean_true);
  TTestResult t = two_sample_t_test(truth.scores, wrong.scores);
  CHECK(t.t > 0.0);
  CHECK(t.p < 0.01);

  // Determinism: the same plan reproduces scores bit for bit.
  TrialDistribution again =
      permutation_experiment(quick_plan(PermutationPlan::Mode::kTrue), ds);
  CHECK(again.scores == truth.scores);

  std::string csv = trial_scores_csv(truth);
  auto lines = csv_lines(csv);
  REQUIRE(lines.size() == 7);
  CHECK(lines[0] == "mode,trial,seed,mean_ccc");
  CHECK(lines[1].rfind("true,0,100,", 0) == 0);
}

TEST_CASE("permutation experiment sees no effect on zero-information data") {
  std::string dir = temp_dir("null");
  data::SynthSpec spec;
  spec.mode = data::SynthSpec::Mode::kEmbedding;
  spec.n_train = 160;
  spec.n_val = 64;
  spec.k = 4;
  spec.emb_dim = 8;
  spec.emb_windows = 2;
  spec.noise = 0.3;
  spec.zero_information = true;
  data::Dataset ds = data::synth_dataset(spec, 22, dir);

  TrialDistribution truth = permutation_experiment(quick_plan(PermutationPlan::Mode::kTrue), ds);
  TrialDistribution shuffled =
      permutation_experiment(quick_plan(PermutationPlan::Mode::kShuffled), ds);
  TTestResult t = two_sample_t_test(truth.scores, shuffled.scores);
  CHECK(t.p > 0.05);
}

TEST_CASE("permutation experiment validates its inputs") {
  PermutationPlan plan;
  plan.n_trials = 0;
  CHECK_THROWS_WITH_AS(plan.validate(), doctest::Contains("n_trials"), ValidationError);
  plan = {};
  plan.batch_size = 1;
  CHECK_THROWS_AS(plan.validate(), ValidationError);

  CHECK(parse_mode("shuffled") == PermutationPlan::Mode::kShuffled);
  CHECK(std::string(mode_name(parse_mode("incorrect"))) == "incorrect");
  CHECK_THROWS_WITH_AS(parse_mode("random"), doctest::Contains("unknown permutation mode"),
                       ValidationError);

  // Audio-only datasets cannot feed the embedding probe.
  std::string dir = temp_dir("audio_reject");
  data::SynthSpec spec;
  spec.mode = data::SynthSpec::Mode::kAudio;
  spec.n_train = 8;
  spec.n_val = 4;
  spec.k = 4;
  spec.clip_seconds = 0.2;
  data::Dataset audio = data::synth_dataset(spec, 1, dir);
  CHECK_THROWS_WITH_AS(permutation_experiment(quick_plan(PermutationPlan::Mode::kTrue), audio),
                       doctest::Contains("embedding features"), ValidationError);

  // A failing trial reports its index: constant ages break incorrect mode.
  std::string edir = temp_dir("flat_ages");
  data::Dataset flat;
  flat.base_dir = edir;
  std::filesystem::create_directories(edir + "/emb");
  for (int i = 0; i < 8; ++i) {
    data::Sample s = make_sample("e" + std::to_string(i), i % 4, 30.0, {0.5, 0.5},
                                 i < 6 ? data::Split::kTrain : data::Split::kVal);
    s.wav_path.clear();
    s.emb_path = "emb/e" + std::to_string(i) + ".vbem";
    data::EmbeddingSequence e;
    e.t = 2;
    e.d = 3;
    e.values = {0.1f, 0.2f, 0.3f, 0.4f, 0.5f, 0.6f};
    data::save_embeddings(flat.resolve(s.emb_path), e);
    flat.samples.push_back(s);
  }
  PermutationPlan bad = quick_plan(PermutationPlan::Mode::kIncorrect);
  bad.n_trials = 2;
  bad.batch_size = 2;
  CHECK_THROWS_WITH_AS(permutation_experiment(bad, flat), doctest::Contains("trial 0"),
                       ValidationError);
}

}  // TEST_SUITE

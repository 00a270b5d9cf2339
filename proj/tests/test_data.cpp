#include "doctest.h"
#include "mmfusion/data.hpp"
#include "mmfusion/synth.hpp"
#include "test_util.hpp"

#include <algorithm>
#include <map>
#include <sstream>

using namespace mmf;

namespace {

const char* kHeader = "id,face_path,pose_path,fps,label,split\n";

FrameMatrix random_frames(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  return {rows, cols, test::random_values(rows * cols, seed, -3, 3)};
}

RawSample raw_sample(std::size_t frames, std::size_t face_cols, std::size_t pose_cols, double fps,
                     std::uint64_t seed) {
  RawSample r;
  r.id = "r";
  r.fps = fps;
  r.face = random_frames(frames, face_cols, seed);
  r.pose = random_frames(frames, pose_cols, seed + 1);
  return r;
}

SynthSpec small_spec(SignalKind kind, std::size_t n, std::uint64_t seed) {
  SynthSpec s;
  s.n_samples = n;
  s.t_raw = 40;
  s.fps = 10;
  s.kind = kind;
  s.seed = seed;
  s.face_features = 6;
  s.pose_features = 4;
  s.signal_features = 2;
  return s;
}

// Best accuracy of `feature >= thr` or `feature < thr` over all thresholds.
double best_threshold_accuracy(std::vector<std::pair<double, int>> xs) {
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  std::size_t pos_total = 0;
  for (const auto& [v, y] : xs) pos_total += y;
  double best = 0;
  std::size_t pos_below = 0;
  for (std::size_t i = 0; i <= n; ++i) {
    // threshold between xs[i-1] and xs[i]; predict 1 for the upper part
    if (i == 0 || i == n || xs[i].first != xs[i - 1].first) {
      const std::size_t neg_below = i - pos_below;
      const std::size_t pos_above = pos_total - pos_below;
      const double upper = double(neg_below + pos_above) / double(n);
      best = std::max({best, upper, 1.0 - upper});
    }
    if (i < n) pos_below += xs[i].second;
  }
  return best;
}

}  // namespace

TEST_SUITE("manifest") {
  TEST_CASE("three rows in file order with resolved paths") {
    test::TempDir dir("manifest");
    test::write_text(dir.path() / "m.csv", std::string(kHeader) +
                                               "b,f/b.csv,p/b.csv,30,1,train\n"
                                               "a,f/a.csv,p/a.csv,25,0,validation\n"
                                               "c,f/c.csv,p/c.csv,30,1,test\n");
    const auto rows = load_manifest(dir.path() / "m.csv", Task::Detection);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].id == "b");
    CHECK(rows[1].id == "a");
    CHECK(rows[2].id == "c");
    CHECK(rows[1].fps == 25.0);
    CHECK(rows[1].split == Split::Validation);
    CHECK(rows[0].face_path == dir.path() / "f/b.csv");
  }

  TEST_CASE("label domain per task") {
    test::TempDir dir("manifest_label");
    test::write_text(dir.path() / "m.csv", std::string(kHeader) + "a,f.csv,p.csv,30,1.5,train\n");
    CHECK_THROWS_AS(load_manifest(dir.path() / "m.csv", Task::Detection), DataError);
    CHECK_THROWS_AS(load_manifest(dir.path() / "m.csv", Task::Regression), DataError);
    test::write_text(dir.path() / "m.csv", std::string(kHeader) + "a,f.csv,p.csv,30,-0.4,train\n");
    CHECK_THROWS_AS(load_manifest(dir.path() / "m.csv", Task::Detection), DataError);
    CHECK(load_manifest(dir.path() / "m.csv", Task::Regression).size() == 1);
  }

  TEST_CASE("errors name the offending row") {
    test::TempDir dir("manifest_bad");
    const auto p = dir.path() / "m.csv";
    auto message = [&](const std::string& body) {
      test::write_text(p, std::string(kHeader) + body);
      try {
        load_manifest(p);
      } catch (const DataError& e) {
        return std::string(e.what());
      }
      return std::string();
    };
    CHECK(message("a,f,p,30,1,train\na,f,p,30,0,train\n").find(":3") != std::string::npos);
    CHECK(message("a,f,p,30,1\n").find(":2") != std::string::npos);
    CHECK(message("a,f,p,fast,1,train\n").find(":2") != std::string::npos);
    CHECK(message("a,f,p,30,1,holdout\n").find(":2") != std::string::npos);
    test::write_text(p, "id,face,pose,fps,label,split\n");
    CHECK_THROWS_AS(load_manifest(p), DataError);
    CHECK_THROWS_AS(load_manifest(dir.path() / "absent.csv"), IoError);
  }

  TEST_CASE("split counts match a line-count oracle") {
    test::TempDir dir("manifest_split");
    std::string text = kHeader;
    const char* splits[] = {"train", "validation", "test"};
    for (int i = 0; i < 37; ++i)
      text += "s" + std::to_string(i) + ",f,p,30," + std::to_string(i % 2) + "," + splits[(i * 7) % 3] + "\n";
    test::write_text(dir.path() / "m.csv", text);
    std::map<std::string, int> oracle;
    std::istringstream is(text);
    std::string line;
    std::getline(is, line);
    while (std::getline(is, line)) ++oracle[line.substr(line.rfind(',') + 1)];
    std::map<std::string, int> got;
    for (const auto& d : load_manifest(dir.path() / "m.csv")) ++got[std::string(split_name(d.split))];
    CHECK(got == oracle);
  }

  TEST_CASE("write then load round trip") {
    test::TempDir dir("manifest_rt");
    std::vector<SampleDescriptor> rows = {
        {"x", dir.path() / "samples/x_face.csv", dir.path() / "samples/x_pose.csv", 29.97, 0.25, Split::Test},
        {"y", dir.path() / "samples/y_face.csv", dir.path() / "samples/y_pose.csv", 30, -1, Split::Train}};
    write_manifest(dir.path() / "m.csv", rows);
    const auto back = load_manifest(dir.path() / "m.csv", Task::Regression);
    REQUIRE(back.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
      CHECK(back[i].id == rows[i].id);
      CHECK(back[i].face_path == rows[i].face_path);
      CHECK(back[i].pose_path == rows[i].pose_path);
      CHECK(back[i].fps == rows[i].fps);
      CHECK(back[i].label == rows[i].label);
      CHECK(back[i].split == rows[i].split);
    }
    CHECK(test::read_text(dir.path() / "m.csv").find(dir.path().string()) == std::string::npos);
  }
}

TEST_SUITE("feature files") {
  TEST_CASE("300 frames at full width") {
    test::TempDir dir("feat");
    SampleDescriptor d{"a", dir.path() / "a_face.csv", dir.path() / "a_pose.csv", 30, 1, Split::Train};
    write_feature_csv(d.face_path, random_frames(300, kFaceFeatures, 1));
    write_feature_csv(d.pose_path, random_frames(300, kPoseFeatures, 2));
    std::ostringstream warn;
    const auto raw = load_sample_features(d, {}, &warn);
    CHECK(raw.frames() == 300);
    CHECK(raw.pose.rows == 300);
    CHECK(warn.str().empty());
  }

  TEST_CASE("unequal lengths truncate to the shorter with a warning") {
    test::TempDir dir("feat_trunc");
    SampleDescriptor d{"a", dir.path() / "a_face.csv", dir.path() / "a_pose.csv", 30, 1, Split::Train};
    const auto face = random_frames(300, 5, 1);
    write_feature_csv(d.face_path, face);
    write_feature_csv(d.pose_path, random_frames(299, 3, 2));
    std::ostringstream warn;
    const auto raw = load_sample_features(d, {5, 3}, &warn);
    CHECK(raw.face.rows == 299);
    CHECK(raw.pose.rows == 299);
    CHECK(raw.face.values == std::vector<double>(face.values.begin(), face.values.begin() + 299 * 5));
    CHECK(warn.str().find("warning") != std::string::npos);
  }

  TEST_CASE("column count mismatch cites expected and actual") {
    test::TempDir dir("feat_cols");
    write_feature_csv(dir.path() / "x.csv", random_frames(4, 5, 1));
    try {
      read_feature_csv(dir.path() / "x.csv", 6);
      FAIL("no error");
    } catch (const DataError& e) {
      const std::string msg = e.what();
      CHECK(msg.find('6') != std::string::npos);
      CHECK(msg.find('5') != std::string::npos);
    }
    test::write_text(dir.path() / "y.csv", "1,2,x\n");
    CHECK_THROWS_AS(read_feature_csv(dir.path() / "y.csv", 3), DataError);
    CHECK_THROWS_AS(read_feature_csv(dir.path() / "none.csv", 3), IoError);
  }

  TEST_CASE("numeric write/read round trip is exact") {
    test::TempDir dir("feat_rt");
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      auto m = random_frames(7, 9, seed);
      m.values[0] = 1e-300;
      m.values[1] = -123456789.123456789;
      m.values[2] = 0.1 + 0.2;
      write_feature_csv(dir.path() / "m.csv", m);
      CHECK(read_feature_csv(dir.path() / "m.csv", 9) == m);
    }
  }
}

TEST_SUITE("preprocess") {
  TEST_CASE("window of 3 s at 30 fps gives 89 steps") {
    CHECK(window_frames(3.0, 30.0) == 90);
    const auto p = preprocess(raw_sample(120, kFaceFeatures, kPoseFeatures, 30, 1), 3.0);
    CHECK(p.face.rows == 89);
    CHECK(p.face.cols == kFaceFeatures + 1);
    CHECK(p.pose.rows == 89);
    CHECK(p.pose.cols == kPoseFeatures + 1);
  }

  TEST_CASE("constant recording gives zero features and an increasing index") {
    RawSample r;
    r.fps = 10;
    r.face = {50, 4, std::vector<double>(200, 2.5)};
    r.pose = {50, 3, std::vector<double>(150, -7.0)};
    const auto p = preprocess(r, 2.0);
    REQUIRE(p.face.rows == 19);
    for (std::size_t t = 0; t < p.face.rows; ++t) {
      for (std::size_t c = 0; c < 4; ++c) CHECK(p.face.at(t, c) == 0.0);
      for (std::size_t c = 0; c < 3; ++c) CHECK(p.pose.at(t, c) == 0.0);
      if (t > 0) CHECK(p.face.at(t, 4) > p.face.at(t - 1, 4));
      CHECK(p.face.at(t, 4) == p.pose.at(t, 3));
    }
  }

  TEST_CASE("matches a naive last-window abs-diff oracle") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      const std::size_t frames = 20 + seed % 13, cols = 1 + seed % 6;
      const auto raw = raw_sample(frames, cols, 2, 5.0, seed);
      const auto p = preprocess(raw, 3.0);
      const std::size_t t = 15, first = frames - t;
      REQUIRE(p.face.rows == t - 1);
      for (std::size_t i = 0; i + 1 < t; ++i) {
        for (std::size_t c = 0; c < cols; ++c) {
          const double want = std::abs(raw.face.at(first + i + 1, c) - raw.face.at(first + i, c));
          CHECK(p.face.at(i, c) == want);
          CHECK(p.face.at(i, c) >= 0.0);
        }
        const double idx = p.face.at(i, cols);
        CHECK((idx > 0.0 && idx <= 1.0));
      }
    }
  }

  TEST_CASE("window longer than the recording") {
    CHECK_THROWS_AS(preprocess(raw_sample(80, 3, 2, 30, 1), 3.0), DataError);
    CHECK_THROWS_AS(preprocess(raw_sample(10, 3, 2, 30, 1), 1.0 / 30.0), DataError);
    CHECK_THROWS_AS(window_frames(0.0, 30.0), ConfigError);
  }

  TEST_CASE("standardizer centers training features and keeps the index column") {
    std::vector<ProcessedSample> samples;
    for (std::uint64_t s = 0; s < 5; ++s) samples.push_back(preprocess(raw_sample(30, 3, 2, 10, s * 3), 2.0));
    const auto st = FeatureStandardizer::fit(samples);
    auto copy = samples;
    for (auto& s : copy) st.apply(s);
    for (std::size_t c = 0; c < 3; ++c) {
      double sum = 0;
      std::size_t n = 0;
      for (const auto& s : copy)
        for (std::size_t t = 0; t < s.face.rows; ++t, ++n) sum += s.face.at(t, c);
      CHECK(std::abs(sum / double(n)) < 1e-12);
    }
    for (std::size_t t = 0; t < copy[0].face.rows; ++t) CHECK(copy[0].face.at(t, 3) == samples[0].face.at(t, 3));
  }
}

TEST_SUITE("synth") {
  TEST_CASE("fixed seed gives a bitwise identical corpus on disk") {
    test::TempDir a("synth_a"), b("synth_b");
    const auto spec = small_spec(SignalKind::Redundant, 10, 42);
    const auto ma = synth_generate(spec, a.path());
    const auto mb = synth_generate(spec, b.path());
    CHECK(test::read_text(ma) == test::read_text(mb));
    for (const auto& d : load_manifest(ma)) {
      const auto rel = d.face_path.filename();
      CHECK(test::read_text(d.face_path) == test::read_text(b.path() / "samples" / rel));
    }
    const auto other = synth_corpus(small_spec(SignalKind::Redundant, 10, 43));
    CHECK(other.samples[0].face.values != synth_corpus(spec).samples[0].face.values);
  }

  TEST_CASE("on-disk corpus loads back to the in-memory samples") {
    test::TempDir dir("synth_load");
    const auto spec = small_spec(SignalKind::XorCrossModal, 6, 7);
    const auto manifest = synth_generate(spec, dir.path());
    const auto mem = synth_corpus(spec);
    const auto rows = load_manifest(manifest, Task::Detection);
    REQUIRE(rows.size() == mem.samples.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto raw = load_sample_features(rows[i], {spec.face_features, spec.pose_features});
      CHECK(raw.face == mem.samples[i].face);
      CHECK(raw.pose == mem.samples[i].pose);
      CHECK(rows[i].label == mem.samples[i].label);
    }
  }

  TEST_CASE("detection corpora are class balanced") {
    for (auto kind : {SignalKind::SingleModality, SignalKind::Redundant, SignalKind::XorCrossModal}) {
      const auto c = synth_corpus(small_spec(kind, 100, 3));
      std::size_t ones = 0;
      for (const auto& s : c.samples) ones += s.label == 1.0;
      CHECK(ones == 50);
      std::map<Split, std::size_t> pos, all;
      for (const auto& s : c.samples) {
        pos[s.split] += s.label == 1.0;
        ++all[s.split];
      }
      for (const auto& [split, n] : all) CHECK(2 * pos[split] == n);
      CHECK(all[Split::Validation] == 20);
    }
  }

  TEST_CASE("agreement labels stay in range") {
    auto spec = small_spec(SignalKind::Redundant, 30, 1);
    spec.task = Task::Regression;
    for (const auto& s : synth_corpus(spec).samples) CHECK((s.label >= -1.0 && s.label <= 1.0));
  }

  TEST_CASE("xor: no single-feature threshold on one modality beats 0.6") {
    const auto spec = small_spec(SignalKind::XorCrossModal, 1000, 11);
    const auto corpus = synth_corpus(spec);
    std::vector<ProcessedSample> ps;
    for (const auto& r : corpus.samples) ps.push_back(preprocess(r, 3.0));
    double worst = 0;
    auto sweep = [&](auto get_matrix) {
      const std::size_t cols = get_matrix(ps[0]).cols - 1;
      for (std::size_t c = 0; c < cols; ++c)
        for (int stat = 0; stat < 2; ++stat) {
          std::vector<std::pair<double, int>> xs;
          for (const auto& s : ps) {
            const auto& m = get_matrix(s);
            double v = 0;
            for (std::size_t t = 0; t < m.rows; ++t) v = stat ? std::max(v, m.at(t, c)) : v + m.at(t, c);
            xs.emplace_back(v, static_cast<int>(s.label));
          }
          worst = std::max(worst, best_threshold_accuracy(xs));
        }
    };
    sweep([](const ProcessedSample& s) -> const FrameMatrix& { return s.face; });
    sweep([](const ProcessedSample& s) -> const FrameMatrix& { return s.pose; });
    MESSAGE("best single-modality threshold accuracy: ", worst);
    CHECK(worst <= 0.6);

    // The same sweep separates a redundant corpus, so the oracle has power.
    const auto red = synth_corpus(small_spec(SignalKind::Redundant, 200, 11));
    std::vector<std::pair<double, int>> xs;
    for (const auto& r : red.samples) {
      const auto p = preprocess(r, 3.0);
      double v = 0;
      for (std::size_t t = 0; t < p.face.rows; ++t) v += p.face.at(t, 0);
      xs.emplace_back(v, static_cast<int>(r.label));
    }
    CHECK(best_threshold_accuracy(xs) > 0.95);
  }

  TEST_CASE("spec validation and key-value parsing") {
    auto s = small_spec(SignalKind::Redundant, 1, 0);
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s.n_samples = 7;
    CHECK_THROWS_AS(s.validate(), ConfigError);  // odd count cannot balance
    const auto kv = SynthSpec::from_key_values({{"n_samples", "8"}, {"kind", "xor"}, {"noise", "0.5"}});
    CHECK(kv.n_samples == 8);
    CHECK(kv.kind == SignalKind::XorCrossModal);
    CHECK(kv.noise == 0.5);
    CHECK_THROWS_AS(SynthSpec::from_key_values({{"bogus", "1"}}), ConfigError);
    CHECK(sample_seed(1, 0) != sample_seed(1, 1));
    CHECK(sample_seed(1, 0) == sample_seed(1, 0));
  }
}

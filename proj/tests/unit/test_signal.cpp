#include <doctest.h>

#include <algorithm>
#include <sstream>

#include "manner/error.hpp"
#include "manner/rng.hpp"
#include "manner/signal.hpp"
#include "test_util.hpp"

using namespace manner;
using namespace manner::signal;

TEST_SUITE("signal") {
  TEST_CASE("load_signal parses a three-row two-channel file") {
    testutil::TempDir dir("sig");
    testutil::write_text(dir / "s.csv", "sample_rate_hz=30\na,b\n1,2\n3,4\n5,6\n");
    const auto s = load_signal(dir / "s.csv");
    CHECK(s.length() == 3);
    CHECK(s.channels() == 2);
    CHECK(s.sample_rate_hz() == 30.0);
    CHECK(s.channel_names() == std::vector<std::string>{"a", "b"});
    CHECK(s.samples()(2, 1) == 6.0);
  }

  TEST_CASE("load_signal rejects malformed input") {
    testutil::TempDir dir("sigbad");
    SUBCASE("short row") {
      testutil::write_text(dir / "s.csv", "sample_rate_hz=30\na,b\n1,2\n3\n");
      CHECK_THROWS_AS(load_signal(dir / "s.csv"), DataError);
    }
    SUBCASE("NaN") {
      testutil::write_text(dir / "s.csv", "sample_rate_hz=30\na\n1\nNaN\n");
      CHECK_THROWS_AS(load_signal(dir / "s.csv"), DataError);
    }
    SUBCASE("non-positive rate") {
      testutil::write_text(dir / "s.csv", "sample_rate_hz=0\na\n1\n");
      CHECK_THROWS_AS(load_signal(dir / "s.csv"), DataError);
    }
    SUBCASE("empty file") {
      testutil::write_text(dir / "s.csv", "");
      CHECK_THROWS_AS(load_signal(dir / "s.csv"), DataError);
    }
    SUBCASE("missing file") { CHECK_THROWS_AS(load_signal(dir / "nope.csv"), DataError); }
  }

  TEST_CASE("signal CSV round trip is exact") {
    Rng rng(7);
    Matrix m(40, 3);
    for (double& v : m.values()) v = rng.normal() * 1e3;
    const MultichannelSignal sig(m, 29.97, {"x", "y", "z"});
    testutil::TempDir dir("rt");
    save_signal(sig, dir / "r.csv");
    const auto back = load_signal(dir / "r.csv");
    CHECK(back.samples() == sig.samples());
    CHECK(back.sample_rate_hz() == sig.sample_rate_hz());
    CHECK(back.channel_names() == sig.channel_names());
  }

  TEST_CASE("annotation rows") {
    testutil::TempDir dir("ann");
    testutil::write_text(dir / "a.csv", "video_id,pattern_id,rating,source\nv1,0,4,self\nv1,1,2,crowd\n");
    const auto recs = load_annotations(dir / "a.csv");
    REQUIRE(recs.size() == 2);
    CHECK(recs[0].video_id == "v1");
    CHECK(recs[0].pattern_id == 0);
    CHECK(recs[0].rating == 4);
    CHECK(recs[0].source == AnnotationSource::self);
    CHECK(recs[1].source == AnnotationSource::crowd);

    testutil::write_text(dir / "b.csv", "video_id,pattern_id,rating,source\nv1,0,8,self\n");
    CHECK_THROWS_AS(load_annotations(dir / "b.csv"), DataError);
    testutil::write_text(dir / "c.csv", "video_id,pattern_id,rating,source\nv1,0,0,self\n");
    CHECK_THROWS_AS(load_annotations(dir / "c.csv"), DataError);
    testutil::write_text(dir / "d.csv", "video_id,pattern_id,rating,source\nv1,0,3,boss\n");
    CHECK_THROWS_AS(load_annotations(dir / "d.csv"), DataError);
  }

  TEST_CASE("quantize_crowd_ratings") {
    CHECK(quantize_crowd_ratings(std::vector<int>{3, 4, 5}) == 4);
    CHECK(quantize_crowd_ratings(std::vector<int>{1, 1, 2}) == 1);
    CHECK(quantize_crowd_ratings(std::vector<int>{4, 5}) == 5);
    CHECK(quantize_crowd_ratings(std::vector<int>{7}) == 7);
    CHECK_THROWS_AS(quantize_crowd_ratings(std::vector<int>{}), DataError);
    CHECK_THROWS_AS(quantize_crowd_ratings(std::vector<int>{9}), DataError);
  }

  TEST_CASE("quantize_crowd_ratings stays in range and ignores order") {
    Rng rng(11);
    for (int trial = 0; trial < 500; ++trial) {
      std::vector<int> r(1 + rng.below(9));
      for (int& v : r) v = 1 + static_cast<int>(rng.below(7));
      const int q = quantize_crowd_ratings(r);
      CHECK(q >= 1);
      CHECK(q <= 7);
      rng.shuffle(std::span<int>(r));
      CHECK(quantize_crowd_ratings(r) == q);
    }
  }

  TEST_CASE("aggregate_crowd_ratings collapses worker rows") {
    std::vector<AnnotationRecord> recs = {{"v1", 0, 4, AnnotationSource::crowd},
                                          {"v1", 0, 5, AnnotationSource::crowd},
                                          {"v1", 0, 6, AnnotationSource::self},
                                          {"v2", 1, 1, AnnotationSource::crowd}};
    const auto out = aggregate_crowd_ratings(recs);
    REQUIRE(out.size() == 3);
    CHECK(out[0].source == AnnotationSource::self);
    CHECK(out[1].video_id == "v1");
    CHECK(out[1].rating == 5);
    CHECK(out[1].source == AnnotationSource::crowd_average);
    CHECK(out[2].rating == 1);
  }

  TEST_CASE("track loaders") {
    testutil::TempDir dir("tracks");
    testutil::write_text(dir / "t.jsonl",
                         "{\"text\":\"Hello\",\"start_s\":0.0,\"end_s\":0.4,\"kind\":\"word\"}\n"
                         "{\"text\":\"um\",\"start_s\":0.4,\"end_s\":0.7,\"kind\":\"filler\"}\n"
                         "{\"text\":\"\",\"start_s\":0.7,\"end_s\":1.0,\"kind\":\"pause\"}\n");
    const auto tr = load_transcript(dir / "t.jsonl");
    REQUIRE(tr.tokens.size() == 3);
    CHECK(tr.tokens[1].kind == TokenKind::filler);
    CHECK(tr.tokens[2].kind == TokenKind::pause);

    testutil::write_text(dir / "bad.jsonl", "{\"text\":\"a\",\"start_s\":1.0,\"end_s\":0.5,\"kind\":\"word\"}\n");
    CHECK_THROWS_AS(load_transcript(dir / "bad.jsonl"), DataError);

    testutil::write_text(dir / "p.csv",
                         "t_s,loudness,pitch_hz,f1_hz,f2_hz,f3_hz,voiced\n0.0,60,,,,,0\n0.1,61,120,500,1500,2500,1\n");
    const auto pr = load_prosody(dir / "p.csv");
    REQUIRE(pr.frames.size() == 2);
    CHECK_FALSE(pr.frames[0].pitch_hz.has_value());
    CHECK(*pr.frames[1].pitch_hz == 120.0);
    CHECK(pr.frames[1].voiced);

    testutil::write_text(dir / "lex.txt", "joy: happ* glad\nwe: we us our\n");
    const auto lex = load_lexicon(dir / "lex.txt");
    REQUIRE(lex.size() == 2);
    CHECK(lex.names[0] == "joy");
    CHECK(lex.stems[0] == std::vector<std::string>{"happ*", "glad"});
  }

  TEST_CASE("face loader") {
    testutil::TempDir dir("face");
    std::ostringstream csv;
    csv << "t_s";
    for (std::size_t i = 0; i < kFaceLandmarks; ++i) csv << ",x" << i << ",y" << i;
    csv << ",pitch,yaw,roll\n0.5";
    for (std::size_t i = 0; i < kFaceLandmarks; ++i) csv << ',' << i << ',' << 2 * i;
    csv << ",1,2,3\n";
    testutil::write_text(dir / "f.csv", csv.str());
    const auto face = load_face(dir / "f.csv");
    REQUIRE(face.frames.size() == 1);
    CHECK(face.frames[0].landmarks[10][1] == 20.0);
    CHECK(face.frames[0].roll == 3.0);
  }

  TEST_CASE("kinect layout") {
    const auto layout = JointLayout::kinect_v1();
    CHECK(layout.joint_names.size() == 20);
    CHECK(layout.tracked_joints.size() == 8);
    CHECK_NOTHROW(layout.validate());
  }
}

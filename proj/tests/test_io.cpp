#include "polystab/io.hpp"

#include <gtest/gtest.h>

#include <sstream>
#include <string>

#include "polystab/benchmarks.hpp"

namespace polystab {
namespace {

std::string TempPath(const std::string& name) {
  return ::testing::TempDir() + "polystab_io_" + name;
}

TEST(Hashing, MatchesKnownVectors) {
  EXPECT_EQ(
      Sha256Hex(""),
      "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(
      Sha256Hex("abc"),
      "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(
      Sha256Hex("The quick brown fox jumps over the lazy dog"),
      "d7a8fbb307d7809469ca9abcb0082e4f8d5651e46d3cdb762d02d0bf37c9e592");
  // Multi-block input.
  EXPECT_EQ(
      Sha256Hex(std::string(1000000, 'a')),
      "cdc76e5c9914fb9281a1c7e284d73e67f1809a48a497200e046d39ccc7112cd0");
}

TEST(Hashing, FileHashMatchesStringHash) {
  const std::string path = TempPath("hash.bin");
  const std::string payload("some\nbinary\0-ish payload", 24);
  WriteTextFile(path, payload);
  EXPECT_EQ(Sha256HexOfFile(path), Sha256Hex(payload));
}

TEST(JsonFiles, ProblemRoundTripIsExact) {
  const benchmarks::Benchmark bench = benchmarks::TwoStateModel();
  const std::string path = TempPath("problem.json");
  WriteJsonFile(path, ProblemToJson(bench.problem));

  const Problem back = ReadProblemFile(path);
  EXPECT_TRUE(back.model.space->SameAs(*bench.problem.model.space));
  EXPECT_EQ((back.model.a1 - bench.problem.model.a1).norm(), 0.0);
  EXPECT_EQ((back.model.a2 - bench.problem.model.a2).norm(), 0.0);
  EXPECT_EQ((back.model.b2 - bench.problem.model.b2).norm(), 0.0);
  for (int i = 0; i < 2; ++i)
    EXPECT_TRUE(back.model.lift(i, 0).EqualsWithin(
        ParsePoly(back.model.space, bench.problem.model.lift(i, 0).ToString()),
        0.0));
  EXPECT_TRUE(back.structure.basis(1, 0).EqualsWithin(
      ParsePoly(back.model.space, "x2"), 0.0));
  EXPECT_EQ(back.weights.shape_floor, 0.1);
  EXPECT_TRUE(back.weights.rate_den.EqualsWithin(
      ParsePoly(back.model.space, "1 + x1^2"), 0.0));
}

TEST(JsonFiles, RejectsWrongFormatTag) {
  const std::string path = TempPath("wrong.json");
  WriteJsonFile(path, json{{"format", "something-else"}});
  EXPECT_THROW(ReadProblemFile(path), std::runtime_error);
  EXPECT_THROW(ReadCertificateFile(path), std::runtime_error);
}

TEST(JsonFiles, CertificateRoundTripIsExact) {
  const benchmarks::Benchmark bench = benchmarks::TwoStateModel();
  ASSERT_TRUE(bench.reference.has_value());
  Certificate cert{bench.problem, bench.reference->shape,
                   bench.reference->gain, json{{"accepted", true}}};
  const std::string path = TempPath("certificate.json");
  WriteJsonFile(path, CertificateToJson(cert));

  const Certificate back = ReadCertificateFile(path);
  const SpacePtr& sp = back.problem.model.space;
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 2; ++c)
      EXPECT_TRUE(back.shape(r, c).EqualsWithin(
          ParsePoly(sp, bench.reference->shape(r, c).ToString()), 0.0));
  for (int c = 0; c < 2; ++c)
    EXPECT_TRUE(back.gain(0, c).EqualsWithin(
        ParsePoly(sp, bench.reference->gain(0, c).ToString()), 0.0));
  EXPECT_EQ(back.report.value("accepted", false), true);

  // A certificate carries its problem, so the problem reader accepts it.
  const Problem p = ReadProblemFile(path);
  EXPECT_EQ(p.model.lift_dim(), 2);
}

TEST(Csv, BatchRoundTripIsExact) {
  const benchmarks::Benchmark bench = benchmarks::TwoStateData();
  ASSERT_TRUE(bench.batch.has_value());
  std::ostringstream out;
  WriteDatasetCsv(out, *bench.batch);
  const std::string text = out.str();
  EXPECT_EQ(text.substr(0, text.find('\n')),
            "t, x_1, x_2, xdot_1, xdot_2, u_1");

  std::istringstream in(text);
  const Dataset back = ReadDatasetCsv(in);
  ASSERT_EQ(back.samples(), 4);
  EXPECT_EQ((back.states - bench.batch->states).norm(), 0.0);
  EXPECT_EQ((back.derivatives - bench.batch->derivatives).norm(), 0.0);
  EXPECT_EQ((back.inputs - bench.batch->inputs).norm(), 0.0);
  EXPECT_EQ((back.times - bench.batch->times).norm(), 0.0);
}

TEST(Csv, FileRoundTripPreservesExactBits) {
  // Values chosen to stress the shortest-roundtrip printer.
  Dataset d;
  d.states.resize(1, 3);
  d.states << 0.1, 1.0 / 3.0, 1e-17;
  d.derivatives.resize(1, 3);
  d.derivatives << -2.5e300, 3.0, -0.0;
  d.inputs.resize(1, 3);
  d.inputs << 1.25, -7.0, 0.1 + 0.2;
  d.times.resize(3);
  d.times << 0.0, 0.07, 0.14;
  const std::string path = TempPath("batch.csv");
  WriteDatasetCsvFile(path, d);
  const Dataset back = ReadDatasetCsvFile(path);
  for (int t = 0; t < 3; ++t) {
    EXPECT_EQ(back.states(0, t), d.states(0, t));
    EXPECT_EQ(back.derivatives(0, t), d.derivatives(0, t));
    EXPECT_EQ(back.inputs(0, t), d.inputs(0, t));
    EXPECT_EQ(back.times[t], d.times[t]);
  }
}

TEST(Csv, RejectsMalformedInput) {
  {
    std::istringstream in("time, x_1\n0, 1\n");
    EXPECT_THROW(ReadDatasetCsv(in), std::runtime_error);
  }
  {
    std::istringstream in("t, x_1, xdot_1, u_1\n0, 1, 2\n");
    EXPECT_THROW(ReadDatasetCsv(in), std::runtime_error);  // short row
  }
  {
    std::istringstream in("t, x_1, xdot_1, u_1\n0, 1, two, 3\n");
    EXPECT_THROW(ReadDatasetCsv(in), std::runtime_error);  // bad number
  }
  {
    std::istringstream in("t, x_1, u_1\n");
    EXPECT_THROW(ReadDatasetCsv(in), std::runtime_error);  // missing xdot
  }
}

TEST(Manifest, RecordsContentHashes) {
  const std::string in_path = TempPath("manifest_in.txt");
  const std::string out_path = TempPath("manifest_out.txt");
  WriteTextFile(in_path, "input payload");
  WriteTextFile(out_path, "output payload");

  RunManifest m;
  m.command = {"polystab", "synth-model", "--problem", in_path};
  m.AddInput(in_path);
  m.AddOutput(out_path);
  const json j = ManifestToJson(m);
  EXPECT_EQ(j.at("format"), "polystab-manifest");
  EXPECT_EQ(j.at("inputs").at(in_path), Sha256Hex("input payload"));
  EXPECT_EQ(j.at("outputs").at(out_path), Sha256Hex("output payload"));
  const std::string stamp = j.at("created_utc").get<std::string>();
  EXPECT_EQ(stamp.size(), 20u);
  EXPECT_EQ(stamp.back(), 'Z');

  const std::string path = TempPath("manifest.json");
  WriteManifestFile(path, m);
  const json back = ReadJsonFile(path);
  EXPECT_EQ(back.at("command").size(), 4u);
}

}  // namespace
}  // namespace polystab

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "tbnet/dataset.hpp"

using namespace tbnet;
namespace fs = std::filesystem;

namespace {

Pool make_pool(std::size_t n, Provenance prov, const std::string& prefix) {
  Pool p;
  for (std::size_t i = 0; i < n; ++i)
    p.push_back({prefix + "/" + std::to_string(i) + ".pgm", i % 3 == 0 ? Label::TB : Label::Normal, prov,
                 Split::Unassigned});
  return p;
}

DatasetManifest originals(std::size_t n) {
  CasePools pools;
  pools.original = make_pool(n, Provenance::Original, "orig");
  return build_case(pools, CaseId::Original);
}

}  // namespace

TEST(BuildCase, OriginalOnly) { EXPECT_EQ(originals(800).records.size(), 800u); }

TEST(BuildCase, Case1AddsHaar) {
  CasePools pools;
  pools.original = make_pool(800, Provenance::Original, "o");
  pools.haar = make_pool(579, Provenance::HaarFeature, "h");
  EXPECT_EQ(build_case(pools, CaseId::Case1).records.size(), 1379u);
}

TEST(BuildCase, OrderFollowsPools) {
  CasePools pools{make_pool(2, Provenance::Original, "o"), make_pool(1, Provenance::HaarFeature, "h"),
                  make_pool(1, Provenance::LBPFeature, "l"), make_pool(1, Provenance::Crop, "c"),
                  make_pool(1, Provenance::NoisyLBP, "n")};
  const auto m = build_case(pools, CaseId::Case2);
  ASSERT_EQ(m.records.size(), 6u);
  EXPECT_EQ(m.records[0].path, "o/0.pgm");
  EXPECT_EQ(m.records[1].path, "o/1.pgm");
  EXPECT_EQ(m.records[2].provenance, Provenance::HaarFeature);
  EXPECT_EQ(m.records[3].provenance, Provenance::LBPFeature);
  EXPECT_EQ(m.records[4].provenance, Provenance::Crop);
  EXPECT_EQ(m.records[5].provenance, Provenance::NoisyLBP);
  EXPECT_EQ(m.case_id, CaseId::Case2);
}

TEST(BuildCase, SizeArithmeticProperty) {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<std::size_t> n(0, 60);
  for (int trial = 0; trial < 200; ++trial) {
    CasePools p{make_pool(n(rng), Provenance::Original, "o"), make_pool(n(rng), Provenance::HaarFeature, "h"),
                make_pool(n(rng), Provenance::LBPFeature, "l"), make_pool(n(rng), Provenance::Crop, "c"),
                make_pool(n(rng), Provenance::NoisyLBP, "n")};
    const auto c1 = build_case(p, CaseId::Case1).records.size();
    const auto c2 = build_case(p, CaseId::Case2).records.size();
    const auto c3 = build_case(p, CaseId::Case3).records.size();
    EXPECT_EQ(c2 - c3, p.noisy.size());
    EXPECT_EQ(c3 - c1, p.lbp.size() + p.crops.size());
    EXPECT_EQ(c1, p.original.size() + p.haar.size());
  }
}

TEST(Split, OverdrawReportsDeficit) {
  try {
    split(originals(800), {650, 100, 150}, 1);
    FAIL();
  } catch (const SplitDeficitError& e) {
    EXPECT_EQ(e.deficit(), 100u);
  }
}

TEST(Split, ExactDisjointCounts) {
  const auto m = split(originals(800), {550, 100, 150}, 9);
  EXPECT_EQ(m.count(Split::Train), 550u);
  EXPECT_EQ(m.count(Split::Val), 100u);
  EXPECT_EQ(m.count(Split::Test), 150u);
  EXPECT_EQ(m.count(Split::Unassigned), 0u);
  std::set<std::string> seen;
  for (const auto& r : m.records) EXPECT_TRUE(seen.insert(r.path).second);
  EXPECT_EQ(m.seed, 9u);
}

TEST(Split, DeterministicPerSeed) {
  const auto a = split(originals(800), {500, 100, 100}, 42);
  const auto b = split(originals(800), {500, 100, 100}, 42);
  const auto c = split(originals(800), {500, 100, 100}, 43);
  EXPECT_EQ(a, b);
  bool differs = false;
  for (std::size_t i = 0; i < a.records.size(); ++i) differs |= a.records[i].split != c.records[i].split;
  EXPECT_TRUE(differs);
}

TEST(Split, PaperOverlapDrawsValidationFromTraining) {
  const auto m = split(originals(800), {650, 100, 150, true}, 3);
  EXPECT_EQ(m.count(Split::Train), 650u);
  EXPECT_EQ(m.count(Split::Test), 150u);
  EXPECT_EQ(m.count(Split::Val), 100u);
  std::set<std::string> train;
  for (const auto& r : m.records)
    if (r.split == Split::Train) train.insert(r.path);
  for (const auto& r : m.records)
    if (r.split == Split::Val) {
      EXPECT_TRUE(train.count(r.path));
    }
  EXPECT_THROW(split(originals(800), {700, 100, 150, true}, 3), SplitDeficitError);
}

TEST(Split, SummaryCountsSumPerClass) {
  const auto m = split(originals(30), {20, 5, 5}, 1);
  const auto s = split_summary(m);
  std::size_t tb = 0;
  for (const auto& r : m.records) tb += r.label == Label::TB;
  EXPECT_NE(s.find("Train: 20"), std::string::npos);
  EXPECT_NE(s.find("Unassigned: 0"), std::string::npos);
  EXPECT_EQ(tb, 10u);
}

TEST(Manifest, EmptyIsHeaderOnly) {
  EXPECT_EQ(manifest_to_csv(DatasetManifest{}), "path,label,provenance,split,case,seed\n");
}

TEST(Manifest, RoundTripTenRecords) {
  CasePools p{make_pool(4, Provenance::Original, "o"), make_pool(2, Provenance::HaarFeature, "h"),
              make_pool(2, Provenance::LBPFeature, "dir,with \"quotes\""), make_pool(1, Provenance::Crop, "c"),
              make_pool(1, Provenance::NoisyHaar, "n")};
  auto m = split(build_case(p, CaseId::Case2), {5, 2, 2}, 77);
  std::istringstream in(manifest_to_csv(m));
  EXPECT_EQ(manifest_from_csv(in), m);

  const auto path = fs::temp_directory_path() / "tbnet_manifest_roundtrip.csv";
  write_manifest(m, path);
  EXPECT_EQ(read_manifest(path), m);
  fs::remove(path);
}

TEST(Manifest, LineCountForCase2Size) {
  DatasetManifest m;
  m.case_id = CaseId::Case2;
  m.records = make_pool(2969, Provenance::Original, "x");
  const auto csv = manifest_to_csv(m);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 2970);
}

TEST(Manifest, MalformedRowsNameLine) {
  std::istringstream in("path,label,provenance,split,case,seed\na.pgm,TB,Original,Train,Case1,3\nb.pgm,Sick,Original,Train,Case1,3\n");
  try {
    manifest_from_csv(in);
    FAIL();
  } catch (const DecodeError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
  std::istringstream bad_header("path,label\n");
  EXPECT_THROW(manifest_from_csv(bad_header), DecodeError);
}

TEST(Manifest, DerivedLabelsMatchSources) {
  DatasetManifest m;
  m.records = {{"o/TB/a.pgm", Label::TB, Provenance::Original, Split::Train},
               {"h/TB/a.pgm", Label::TB, Provenance::HaarFeature, Split::Train},
               {"o/Normal/b.pgm", Label::Normal, Provenance::Original, Split::Train},
               {"l/TB/b.pgm", Label::TB, Provenance::LBPFeature, Split::Train}};
  EXPECT_EQ(label_mismatches(m), std::vector<std::string>{"l/TB/b.pgm"});
}

TEST(ScanPool, LabelDirectoryConvention) {
  const auto root = fs::temp_directory_path() / "tbnet_scan_pool";
  fs::remove_all(root);
  fs::create_directories(root / "TB");
  fs::create_directories(root / "Normal");
  for (const char* f : {"TB/b.pgm", "TB/a.pgm", "Normal/c.pgm", "Normal/skip.txt"}) std::ofstream(root / f) << "x";
  const auto pool = scan_pool(root, Provenance::Crop);
  ASSERT_EQ(pool.size(), 3u);
  EXPECT_EQ(pool[0].label, Label::Normal);
  EXPECT_EQ(fs::path(pool[1].path).filename(), "a.pgm");
  EXPECT_EQ(pool[2].provenance, Provenance::Crop);
  fs::remove_all(root);
  EXPECT_THROW(scan_pool(root, Provenance::Original), Error);
}

TEST(Synthetic, CountsLabelsAndBoxes) {
  const auto s = gen_synthetic(1, 16, 5);
  ASSERT_EQ(s.images.size(), 2u);
  EXPECT_EQ(s.labels[0], Label::TB);
  EXPECT_EQ(s.labels[1], Label::Normal);
  ASSERT_TRUE(s.boxes[0].has_value());
  EXPECT_FALSE(s.boxes[1].has_value());
  EXPECT_TRUE(s.boxes[0]->fits(s.images[0]));
  EXPECT_EQ(s.boxes[0]->w, 8u);
}

TEST(Synthetic, DeterministicPerSeed) {
  const auto a = gen_synthetic(3, 32, 11);
  const auto b = gen_synthetic(3, 32, 11);
  const auto c = gen_synthetic(3, 32, 12);
  EXPECT_EQ(a.images, b.images);
  EXPECT_NE(a.images, c.images);
  EXPECT_THROW(gen_synthetic(0, 32, 1), PreconditionError);
  EXPECT_THROW(gen_synthetic(1, 15, 1), PreconditionError);
}

TEST(Synthetic, BlobIsBrighterThanBackground) {
  const auto s = gen_synthetic(5, 64, 3);
  for (std::size_t i = 0; i < 5; ++i) {
    const auto inside = crop(s.images[i], *s.boxes[i]);
    double mean_in = 0, mean_all = 0;
    for (double v : inside.pixels()) mean_in += v;
    for (double v : s.images[i].pixels()) mean_all += v;
    EXPECT_GT(mean_in / inside.size(), mean_all / s.images[i].size() + 0.1);
  }
}

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "refpaint/data.hpp"
#include "refpaint/rng.hpp"
#include "refpaint/sift.hpp"
#include "scene_fixtures.hpp"

using namespace refpaint;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path p = fs::current_path() / "scratch_data" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Tensor<float> mask_with_holes(int h, int w, std::size_t holes, std::uint64_t seed) {
  auto m = Tensor<float>::full({1, 1, h, w}, 1.0f);
  std::vector<std::size_t> idx(m.numel());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng(seed);
  for (std::size_t i = idx.size() - 1; i > 0; --i) std::swap(idx[i], idx[rng.below(i + 1)]);
  for (std::size_t i = 0; i < holes; ++i) m.data()[idx[i]] = 0.0f;
  return m;
}

Tensor<float> add_brightness(const Tensor<float>& img, float delta) {
  auto out = img.clone();
  for (float& v : out.data()) v += delta;
  return out;
}

}  // namespace

TEST_CASE("png round trip and value conventions") {
  const fs::path dir = scratch("png");
  auto img = Tensor<float>::zeros({1, 3, 5, 7});
  Rng rng(3);
  for (float& v : img.data()) v = static_cast<float>(rng.below(256)) / 255.0f;
  img.at(0, 0, 0, 0) = 1.0f;
  img.at(0, 1, 0, 0) = 0.0f;
  save_image(dir / "a.png", img);
  const auto back = load_image(dir / "a.png");
  REQUIRE(back.shape() == img.shape());
  for (std::size_t i = 0; i < img.numel(); ++i) CHECK(back.data()[i] == img.data()[i]);
  CHECK(back.at(0, 0, 0, 0) == 1.0f);
  CHECK(back.at(0, 1, 0, 0) == 0.0f);

  // Gray levels 127 and 128 straddle the mask threshold.
  auto gray = Tensor<float>::zeros({1, 1, 1, 3});
  gray.data()[0] = 127.0f / 255.0f;
  gray.data()[1] = 128.0f / 255.0f;
  gray.data()[2] = 1.0f;
  save_image(dir / "m.png", gray);
  const auto mask = load_mask(dir / "m.png");
  CHECK(mask.data()[0] == 0.0f);
  CHECK(mask.data()[1] == 1.0f);
  CHECK(mask.data()[2] == 1.0f);

  save_mask(dir / "m2.png", mask);
  const auto mask2 = load_mask(dir / "m2.png");
  for (std::size_t i = 0; i < 3; ++i) CHECK(mask2.data()[i] == mask.data()[i]);

  CHECK_THROWS_AS(load_image(dir / "missing.png"), ImageIoError);
  CHECK_THROWS_AS(save_image(dir / "bad.png", Tensor<float>::zeros({1, 2, 4, 4})), ShapeError);
}

TEST_CASE("crop bounds") {
  const auto img = testing::synthetic_scene(20, 30, 1);
  const auto c = crop(img, 3, 4, 10, 12);
  CHECK(c.shape() == Shape{1, 3, 10, 12});
  CHECK(c.at(0, 2, 9, 11) == img.at(0, 2, 12, 15));
  CHECK_THROWS_AS(crop(img, 11, 0, 10, 10), ShapeError);
  CHECK_THROWS_AS(crop(img, -1, 0, 10, 10), ShapeError);
}

TEST_CASE("hole ratio buckets") {
  // 20 x 20 = 400 pixels, so every 0.01 step is a whole number of holes.
  struct Case {
    std::size_t holes;
    std::optional<int> bucket;
  };
  const std::vector<Case> cases{{20, std::nullopt}, {39, std::nullopt}, {40, 0}, {79, 0}, {80, 1},
                                {100, 1},          {120, 2},           {160, 3}, {200, 4}, {236, 4},
                                {239, 4},          {240, std::nullopt}, {400, std::nullopt}};
  for (const auto& c : cases) {
    const auto m = mask_with_holes(20, 20, c.holes, c.holes);
    CHECK(count_holes(m).holes == c.holes);
    CHECK(count_holes(m).ratio() == doctest::Approx(c.holes / 400.0));
    CHECK(classify_bucket(m) == c.bucket);
  }
  CHECK(std::string(kBucketLabels[1]) == "20-30%");

  SUBCASE("depends only on the hole count") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      CHECK(classify_bucket(mask_with_holes(37, 23, 300, seed)) == classify_bucket(mask_with_holes(37, 23, 300, 99)));
    }
  }
}

TEST_CASE("generated masks land in the requested range") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const double lo = 0.1 + 0.1 * (seed % 5);
    const auto m = generate_mask(64, lo, lo + 0.1, seed);
    const double r = count_holes(m).ratio();
    CHECK(r >= lo);
    CHECK(r < lo + 0.1);
    CHECK(classify_bucket(m) == static_cast<int>(seed % 5));
  }
  CHECK_THROWS_AS(generate_mask(64, 0.5, 0.4, 1), std::invalid_argument);
}

TEST_CASE("reference modes") {
  const auto p = derangement(5, 42);
  std::set<std::size_t> seen(p.begin(), p.end());
  CHECK(seen.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) CHECK(p[i] != i);
  CHECK(derangement(5, 42) == p);
  CHECK_THROWS_AS(derangement(1, 0), std::invalid_argument);
  CHECK_THROWS_AS(ReferenceSelector(ReferenceMode::kShuffled, 1, 0), std::invalid_argument);

  std::vector<Tensor<float>> refs;
  for (int i = 0; i < 5; ++i) refs.push_back(Tensor<float>::full({1, 3, 4, 4}, 0.1f * (i + 1)));

  const ReferenceSelector real(ReferenceMode::kReal, 5, 42);
  const ReferenceSelector black(ReferenceMode::kBlack, 5, 42);
  const ReferenceSelector shuffled(ReferenceMode::kShuffled, 5, 42);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(real.reference(i, refs).data()[0] == refs[i].data()[0]);
    const auto b = black.reference(i, refs);
    CHECK(b.shape() == refs[i].shape());
    CHECK(std::all_of(b.data().begin(), b.data().end(), [](float v) { return v == 0.0f; }));
    CHECK(shuffled.source(i) == p[i]);
    CHECK(shuffled.reference(i, refs).data()[0] == refs[p[i]].data()[0]);
  }
  CHECK(parse_reference_mode("shuffled") == ReferenceMode::kShuffled);
  CHECK(to_string(ReferenceMode::kBlack) == "black");
  CHECK_THROWS_AS(parse_reference_mode("random"), std::invalid_argument);
}

TEST_CASE("manifest round trip") {
  const fs::path dir = scratch("manifest");
  std::vector<ManifestRecord> recs{{"in/0.png", "ref/0.png", "a.png", "b.png", 1, 2, 3, 4, 25},
                                   {"in/1.png", "ref/1.png", "c.png", "d.png", 0, 0, 17, 9, 40}};
  write_manifest(dir / "pairs.tsv", recs);
  const auto back = read_manifest(dir / "pairs.tsv");
  REQUIRE(back.size() == 2);
  CHECK(back[1].source_b == "d.png");
  CHECK(back[1].reference_y == 17);
  CHECK(back[0].match_score == 25);
}

TEST_CASE("keypoint detection") {
  CHECK(sift_detect(Tensor<float>::full({1, 3, 64, 64}, 0.4f)).empty());
  CHECK_THROWS_AS(sift_detect(Tensor<float>::zeros({1, 3, 31, 64})), std::invalid_argument);

  const auto img = testing::synthetic_scene(128, 128, 11);
  const auto kps = sift_detect(img);
  REQUIRE(kps.size() > 30);
  for (const auto& k : kps) {
    double n2 = 0;
    for (float v : k.descriptor) n2 += static_cast<double>(v) * v;
    CHECK(std::abs(std::sqrt(n2) - 1.0) <= 1e-4);
    CHECK(k.x >= 0);
    CHECK(k.x < 128);
  }

  SUBCASE("self match is the identity") {
    const auto m = match_descriptors(kps, kps);
    REQUIRE(!m.empty());
    for (const auto& x : m) {
      CHECK(x.a == x.b);
      CHECK(x.distance == 0.0f);
    }
    CHECK(match_descriptors({}, kps).empty());
  }

  SUBCASE("additive brightness leaves descriptors unchanged") {
    const auto shifted = sift_detect(add_brightness(img, 0.05f));
    REQUIRE(shifted.size() == kps.size());
    float worst = 0;
    for (std::size_t i = 0; i < kps.size(); ++i) {
      CHECK(std::abs(shifted[i].x - kps[i].x) < 1e-3f);
      for (int j = 0; j < 128; ++j) worst = std::max(worst, std::abs(shifted[i].descriptor[j] - kps[i].descriptor[j]));
    }
    CHECK(worst <= 1e-3f);
  }
}

TEST_CASE("translated scene matches displace by the translation") {
  const auto scene = testing::synthetic_scene(160, 160, 5);
  // Content at p in A sits at p + (7, 3) in B.
  const auto a = crop(scene, 10, 10, 128, 128);
  const auto b = crop(scene, 3, 7, 128, 128);
  const auto ka = sift_detect(a), kb = sift_detect(b);
  const auto m = match_descriptors(ka, kb);
  REQUIRE(m.size() >= 20);
  std::size_t good = 0;
  for (const auto& x : m) {
    const float dy = kb[x.b].y - ka[x.a].y, dx = kb[x.b].x - ka[x.a].x;
    good += std::abs(dy - 7) <= 1 && std::abs(dx - 3) <= 1;
  }
  MESSAGE("matches " << m.size() << " consistent " << good);
  CHECK(good >= 0.9 * m.size());
}

TEST_CASE("pair mining") {
  const auto scene = testing::synthetic_scene(200, 200, 8);
  MiningOptions opt;
  opt.crop = 64;
  opt.min_matches = 8;
  opt.crops_per_image = 12;
  opt.seed = 4;

  SUBCASE("identical images") {
    const auto a = crop(scene, 0, 0, 160, 160);
    const auto res = mine_pairs(a, a, opt);
    REQUIRE(!res.pairs.empty());
    for (const auto& p : res.pairs) {
      CHECK(std::abs(p.reference_y - p.input_y) <= 1);
      CHECK(std::abs(p.reference_x - p.input_x) <= 1);
      CHECK(p.match_score >= opt.min_matches);
    }
  }

  SUBCASE("translation by (20, 0)") {
    const auto a = crop(scene, 20, 0, 160, 160);
    const auto b = crop(scene, 0, 0, 180, 160);
    const auto res = mine_pairs(a, b, opt);
    REQUIRE(res.pairs.size() >= 6);
    for (const auto& p : res.pairs) {
      CHECK(std::abs(p.reference_y - (p.input_y + 20)) <= 2);
      CHECK(std::abs(p.reference_x - p.input_x) <= 2);
      CHECK(p.reference_y + opt.crop <= 180);
    }
    const auto again = mine_pairs(a, b, opt);
    REQUIRE(again.pairs.size() == res.pairs.size());
    for (std::size_t i = 0; i < res.pairs.size(); ++i) {
      CHECK(again.pairs[i].input_y == res.pairs[i].input_y);
      CHECK(again.pairs[i].reference_x == res.pairs[i].reference_x);
    }
  }

  SUBCASE("too few matches rejects every crop") {
    const auto a = crop(scene, 0, 0, 160, 160);
    MiningOptions strict = opt;
    strict.min_matches = 100000;
    const auto res = mine_pairs(a, a, strict);
    CHECK(res.pairs.empty());
    CHECK(res.rejected == strict.crops_per_image);
    CHECK(!res.diagnostic.empty());
  }
}

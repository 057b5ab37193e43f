#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "lgr/errors.hpp"
#include "lgr/synthdata.hpp"

using namespace lgr;

TEST_CASE("phantoms are deterministic and well formed") {
  const PhantomSpec spec;
  const Phantom a = make_phantom(spec, PhantomClass::normal, 11), b = make_phantom(spec, PhantomClass::normal, 11);
  CHECK(a.image.data().size() == 64 * 64);
  bool same = true, in_range = true, labels_ok = true;
  for (std::size_t i = 0; i < a.image.size(); ++i) {
    same = same && a.image[i] == b.image[i] && a.mask[i] == b.mask[i];
    in_range = in_range && a.image[i] >= 0.0 && a.image[i] <= 1.0;
    labels_ok = labels_ok && (a.mask[i] == 0 || a.mask[i] == 1 || a.mask[i] == 2 || a.mask[i] == 3);
  }
  CHECK(same);
  CHECK(in_range);
  CHECK(labels_ok);
  for (int l : {kRightLung, kLeftLung, kHeart}) {
    std::size_t n = 0;
    for (double m : a.mask.data()) n += m == l;
    CHECK(n > 50);
  }
}

TEST_CASE("opacity changes only lung pixels") {
  const PhantomSpec spec;
  const Phantom n = make_phantom(spec, PhantomClass::normal, 5), o = make_phantom(spec, PhantomClass::opacity, 5);
  CHECK(o.label == 1);
  std::size_t changed = 0;
  for (std::size_t i = 0; i < n.image.size(); ++i) {
    CHECK(n.mask[i] == o.mask[i]);
    if (n.image[i] != o.image[i]) {
      ++changed;
      CHECK((n.mask[i] == double(kRightLung) || n.mask[i] == double(kLeftLung)));
    }
  }
  CHECK(changed > 0);
}

TEST_CASE("dataset class mix and round trip") {
  const Dataset d = make_dataset(10, {0.3, 0.7}, PhantomSpec{.size = 32}, 9);
  CHECK(d.size() == 10);
  CHECK(std::count(d.labels.begin(), d.labels.end(), 1) == 7);
  CHECK_THROWS_AS(make_dataset(4, {0.5, 0.6}, PhantomSpec{}, 1), ContractViolation);

  const auto dir = std::filesystem::temp_directory_path() / "lgr_tests_synth";
  std::filesystem::remove_all(dir);
  write_dataset(dir, d);
  const Dataset r = read_dataset(dir);
  REQUIRE(r.size() == 10);
  REQUIRE(r.has_masks());
  CHECK(r.labels == d.labels);
  CHECK(r.seeds == d.seeds);
  for (std::size_t i = 0; i < 10; ++i) {
    for (std::size_t k = 0; k < r.images[i].size(); ++k) {
      REQUIRE(std::abs(r.images[i][k] - d.images[i][k]) <= 0.5 / 65535.0 + 1e-12);
      REQUIRE(r.masks[i][k] == d.masks[i][k]);
    }
  }
  const Dataset s = subset(r, {3, 1});
  CHECK(s.labels == std::vector<int>{d.labels[3], d.labels[1]});

  std::ofstream(dir / "manifest.csv") << "what,is,this\n";
  CHECK_THROWS_AS(read_dataset(dir), IoError);
  std::filesystem::remove_all(dir);
  CHECK_THROWS_AS(read_dataset(dir), IoError);
}

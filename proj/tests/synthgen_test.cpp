#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "simil/errors.hpp"
#include "simil/morphometrics.hpp"
#include "simil/synthgen.hpp"
#include "simil/trainer.hpp"
#include "test_util.hpp"

using namespace simil;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = slurp(e.path());
  return out;
}

}  // namespace

TEST_CASE("bag generator is deterministic") {
  synth::BagGenConfig c;
  c.bags_per_class = 4;
  c.seed = 17;
  testing::TempDir dir;
  const auto a = synth::gen_bags(c);
  const auto b = synth::gen_bags(c);
  save_dataset(a.dataset, dir / "a");
  save_dataset(b.dataset, dir / "b");
  CHECK(tree(dir / "a") == tree(dir / "b"));
  CHECK(synth::to_json(a.truth) == synth::to_json(b.truth));
  c.seed = 18;
  save_dataset(synth::gen_bags(c).dataset, dir / "c");
  CHECK(tree(dir / "a") != tree(dir / "c"));
}

TEST_CASE("bag generator ground truth") {
  synth::BagGenConfig c;
  c.bags_per_class = 10;
  c.seed = 2;
  const auto g = synth::gen_bags(c);
  CHECK(g.truth.planted.size() == 5);
  CHECK(std::set<std::size_t>(g.truth.planted.begin(), g.truth.planted.end()).size() == 5);
  double norm = 0.0;
  for (double v : g.truth.deep_direction) norm += v * v;
  CHECK(norm == doctest::Approx(1.0));
  std::size_t pos = 0;
  for (const Bag& bag : g.dataset.bags) {
    CHECK(bag.size() >= c.n_min);
    CHECK(bag.size() <= c.n_max);
    CHECK(bag.path.cols() == c.path_dim);
    CHECK(bag.deep.cols() == c.deep_dim);
    const auto it = g.truth.salient_patches.find(bag.slide_id);
    if (bag.label == 1) {
      ++pos;
      REQUIRE(it != g.truth.salient_patches.end());
      CHECK(it->second.size() == static_cast<std::size_t>(std::ceil(0.25 * static_cast<double>(bag.size()))));
    } else {
      CHECK((it == g.truth.salient_patches.end() || it->second.empty()));
    }
  }
  CHECK(pos == 10);
  CHECK(g.dataset.path_columns.size() == c.path_dim);
}

TEST_CASE("explicit planted indices and validation") {
  synth::BagGenConfig c;
  c.bags_per_class = 2;
  c.planted = {1, 3};
  CHECK(synth::gen_bags(c).truth.planted == std::vector<std::size_t>{1, 3});
  c.planted = {1, 1};
  CHECK_THROWS_AS(synth::gen_bags(c), ContractError);
  c.planted = {40};
  CHECK_THROWS_AS(synth::gen_bags(c), ContractError);
  c.planted = {};
  c.rho = 0.0;
  CHECK_THROWS_AS(synth::gen_bags(c), ContractError);
}

TEST_CASE("strong planted shift is found by a one-feature threshold rule") {
  synth::BagGenConfig c;
  c.delta = 5.0;
  c.rho = 0.5;
  c.seed = 3;
  const auto g = synth::gen_bags(c);
  std::vector<double> score;
  std::vector<int> labels;
  for (const Bag& bag : g.dataset.bags) {
    double s = 0.0;
    for (std::size_t i = 0; i < bag.size(); ++i)
      for (std::size_t j : g.truth.planted) s += bag.path.at(i, j);
    score.push_back(s / static_cast<double>(bag.size() * g.truth.planted.size()));
    labels.push_back(bag.label);
  }
  CHECK(*train::roc_auc(score, labels) >= 0.95);
}

TEST_CASE("no signal gives chance-level models") {
  synth::BagGenConfig c;
  c.bags_per_class = 40;
  c.n_min = 10;
  c.n_max = 20;
  c.deep_dim = 8;
  c.path_dim = 10;
  c.delta = 0.0;
  c.deep_shift = 0.0;
  c.seed = 4;
  const auto g = synth::gen_bags(c);
  train::TrainConfig cfg;
  cfg.lr = 1e-3;
  cfg.epochs = 3;
  cfg.test_fraction = 0.5;
  cfg.folds = 2;
  cfg.model.mil_hidden = 16;
  cfg.model.mil_attention = 8;
  cfg.model.topk.k = 5;
  cfg.model.topk.samples = 8;
  const auto cv = train::cross_validate(g.dataset, cfg);
  CHECK(std::abs(cv.mean_auc - 0.5) <= 0.1);
}

TEST_CASE("nuclei patch generator") {
  synth::NucleiGenConfig c;
  c.width = c.height = 400;
  c.intensity = 150.0 / (400.0 * 400.0);
  c.proportions = {0.6, 0.4};
  c.seed = 8;
  const auto a = synth::gen_nuclei_patch(c);
  const auto b = synth::gen_nuclei_patch(c);
  CHECK(a.bundle.instances.pixels == b.bundle.instances.pixels);
  CHECK(a.bundle.intensity.pixels == b.bundle.intensity.pixels);
  CHECK(synth::to_json(a.truth) == synth::to_json(b.truth));
  CHECK_NOTHROW(a.bundle.validate());
  CHECK(a.bundle.type_set.size() == 5);
  // Every surviving nucleus appears in the instance map with its true type.
  std::size_t alive = 0;
  for (std::size_t i = 0; i < a.truth.ids.size(); ++i) {
    if (a.truth.ids[i] == 0) continue;
    ++alive;
    CHECK(a.bundle.types.at(a.truth.ids[i]) == a.truth.types[i]);
  }
  CHECK(alive == a.bundle.types.size());
  CHECK(alive > 100);
  for (int t : a.truth.types) CHECK((t == 0 || t == 1));

  testing::TempDir dir;
  save_patch_bundle(a.bundle, dir / "p");
  const PatchBundle back = load_patch_bundle(dir / "p");
  CHECK(back.instances.pixels == a.bundle.instances.pixels);
  CHECK(back.types == a.bundle.types);
}

TEST_CASE("circular nuclei have near-zero eccentricity") {
  synth::NucleiGenConfig c;
  c.width = c.height = 500;
  c.intensity = 1000.0 / (1792.0 * 1792.0);  // overdrawn nuclei are no longer disks
  c.circular = true;
  c.seed = 9;
  const auto g = synth::gen_nuclei_patch(c);
  const auto props = morph::measure_nuclei(g.bundle);
  double ecc = 0.0;
  for (const auto& [id, p] : props) ecc += p.eccentricity;
  ecc /= static_cast<double>(props.size());
  CHECK(ecc <= 0.1);
  const auto agg = morph::aggregate_morphometrics(g.bundle);
  CHECK(agg[4] <= 0.1);  // type 0 eccentricity mean
}

TEST_CASE("nuclei config validation") {
  synth::NucleiGenConfig c;
  c.proportions = {0.5, 0.4};
  CHECK_THROWS_AS(synth::gen_nuclei_patch(c), ContractError);
  c.proportions = {1.0};
  c.axis_min = 0.0;
  CHECK_THROWS_AS(synth::gen_nuclei_patch(c), ContractError);
}

#include <map>
#include <sstream>

#include "doctest.h"
#include "simil/cli.hpp"
#include "simil/featio.hpp"
#include "simil/trainer.hpp"
#include "test_util.hpp"

using namespace simil;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result invoke(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), root).generic_string()] = read_text(e.path());
  }
  return files;
}

}  // namespace

TEST_CASE("synth bags is deterministic and writes a manifest") {
  testing::TempDir tmp;
  const std::vector<std::string> common = {"--seed", "7", "--bags-per-class", "12", "--n-min", "5", "--n-max", "9"};
  auto a = common, b = common;
  a.insert(a.begin(), {"synth", "bags", "-o", (tmp / "a").string()});
  b.insert(b.begin(), {"synth", "bags", "-o", (tmp / "b").string()});
  REQUIRE(invoke(a).code == 0);
  REQUIRE(invoke(b).code == 0);
  const auto ta = tree(tmp / "a"), tb = tree(tmp / "b");
  CHECK(ta == tb);
  CHECK(ta.count("truth.json"));
  const auto m = read_json(tmp / "a" / "run.json");
  CHECK(m.at("kind") == "simil.run");
  CHECK(m.at("subcommand") == "synth bags");
  CHECK(m.at("config").at("seed") == 7);
  CHECK(m.at("config_hash").get<std::string>().size() == 16);
  CHECK(m.at("code_version") == cli::code_version());
}

TEST_CASE("extract on an empty bundle gives the all-zero row") {
  testing::TempDir tmp;
  REQUIRE(invoke({"synth", "nuclei", "-o", (tmp / "b").string(), "--intensity", "0", "--width", "128", "--height", "128"})
              .code == 0);
  const auto r = invoke({"extract", "--bundles", (tmp / "b").string(), "-o", (tmp / "f.csv").string()});
  REQUIRE(r.code == 0);
  const FeatureMatrix m = read_feature_matrix(tmp / "f.csv");
  REQUIRE(m.size() == 1);
  CHECK(m.columns.size() == 246);
  for (double v : m.rows[0]) CHECK(v == 0.0);
  const auto man = read_json(tmp / "f.run.json");
  CHECK(man.at("inputs").at(0).at("role") == "bundles");
}

TEST_CASE("exit codes") {
  testing::TempDir tmp;
  CHECK(invoke({}).code == 2);
  CHECK(invoke({"frobnicate"}).code == 2);
  CHECK(invoke({"train", "--data", tmp.path().string(), "-o", (tmp / "r").string(), "--bogus"}).code == 2);
  CHECK(invoke({"train", "--data", (tmp / "missing").string(), "-o", (tmp / "r").string()}).code == 3);
  CHECK(invoke({"eval", "--data", tmp.path().string()}).code == 2);

  REQUIRE(invoke({"synth", "bags", "-o", (tmp / "d").string(), "--bags-per-class", "10", "--n-min", "4", "--n-max",
               "6"}).code == 0);
  const std::string data = (tmp / "d").string();
  write_text(R"({"lr": 0.001, "mystery": 1})", tmp / "bad.json");
  CHECK(invoke({"train", "--data", data, "-o", (tmp / "r").string(), "--config", (tmp / "bad.json").string()}).code == 2);
  CHECK(invoke({"train", "--data", data, "-o", (tmp / "r").string(), "--lr", "-1"}).code == 2);
  CHECK(invoke({"synth", "bags", "-o", (tmp / "e").string(), "--rho", "2"}).code == 2);

  write_text("not json", tmp / "d" / "manifest.json");
  CHECK(invoke({"train", "--data", data, "-o", (tmp / "r").string()}).code == 3);
  CHECK(invoke({"eval", "--data", data, "--checkpoint", (tmp / "none.json").string()}).code == 3);
}

TEST_CASE("help lists defaults") {
  const auto r = invoke({"train", "--help"});
  CHECK(r.code == 0);
  const train::TrainConfig d;
  CHECK(d.lr == 2e-4);
  for (const std::string s : {"--lr FLOAT [0.0002]", "--weight-decay FLOAT [0.01]", "--lambda FLOAT [20]",
                              "--epochs UINT [50]", "--folds UINT [5]", "--k UINT [20]", "--sigma FLOAT [0.05]",
                              "--topk-samples UINT [64]", "--gamma FLOAT [0.75]", "--temperature FLOAT [3]",
                              "--mil-hidden UINT [128]", "--mil-attention UINT [64]", "--mixer-layers UINT [4]",
                              "--no-pag-topk", "--no-kd", "--pathfeat-only", "--two-stage", "--no-projector"}) {
    CHECK_MESSAGE(r.out.find(s) != std::string::npos, s);
  }
  const auto s = invoke({"synth", "bags", "--help"});
  for (const std::string f : {"--bags-per-class UINT [200]", "--n-min UINT [30]", "--n-max UINT [60]",
                              "--delta FLOAT [1.5]", "--planted-count UINT [5]"}) {
    CHECK_MESSAGE(s.out.find(f) != std::string::npos, f);
  }
  CHECK(invoke({"--version"}).out.find(cli::code_version()) != std::string::npos);
}

TEST_CASE("flags override the config file") {
  testing::TempDir tmp;
  REQUIRE(invoke({"synth", "bags", "-o", (tmp / "d").string(), "--bags-per-class", "10", "--n-min", "4", "--n-max",
               "6"}).code == 0);
  write_text(R"({"lr": 0.001, "epochs": 2, "model": {"topk": {"K": 3}}})", tmp / "cfg.json");
  const auto r = invoke({"train", "--data", (tmp / "d").string(), "-o", (tmp / "r").string(), "--config",
                      (tmp / "cfg.json").string(), "--epochs", "4", "--two-stage", "--print-config",
                      (tmp / "resolved.json").string()});
  REQUIRE(r.code == 0);
  const auto c = train::train_config_from_json(read_json(tmp / "resolved.json"));
  CHECK(c.lr == 1e-3);
  CHECK(c.epochs == 4);
  CHECK(c.model.topk.k == 3);
  CHECK(c.ablations.two_stage);
  CHECK(c.weight_decay == 1e-2);
  CHECK(c.model.deep_dim == 32);
}

TEST_CASE("train, eval, report and cohort") {
  testing::TempDir tmp;
  const std::string data = (tmp / "d").string();
  REQUIRE(invoke({"synth", "bags", "-o", data, "--seed", "3", "--bags-per-class", "25", "--n-min", "10", "--n-max", "16"})
              .code == 0);
  const std::vector<std::string> train_args = {"--data", data, "--epochs", "3", "--folds", "3", "--lr", "0.001",
                                               "--k", "5", "--mil-hidden", "16", "--mixer-layers", "1"};
  auto a = train_args, b = train_args;
  a.insert(a.begin(), {"train", "-o", (tmp / "r1").string()});
  b.insert(b.begin(), {"train", "-o", (tmp / "r2").string()});
  const auto t1 = invoke(a);
  REQUIRE(t1.code == 0);
  REQUIRE(invoke(b).code == 0);
  CHECK(tree(tmp / "r1") == tree(tmp / "r2"));
  for (const std::string f : {"config.json", "cv.json", "run.json", "cohort.json", "fold_0/checkpoint.json",
                              "fold_2/metrics.jsonl"}) {
    CHECK_MESSAGE(fs::exists(tmp / "r1" / f), f);
  }
  CHECK(t1.out.empty());
  CHECK(t1.err.find("fold 2") != std::string::npos);

  const auto cv = read_json(tmp / "r1" / "cv.json");
  const auto ev = invoke({"eval", "--data", data, "--run", (tmp / "r1").string(), "-o", (tmp / "m.json").string()});
  REQUIRE(ev.code == 0);
  const auto m = read_json(tmp / "m.json");
  CHECK(m.at("split") == "test");
  CHECK(m.at("mean_auc").get<double>() == doctest::Approx(cv.at("mean_auc").get<double>()).epsilon(1e-12));
  CHECK(fs::exists(tmp / "m.run.json"));

  const auto one = invoke({"eval", "--data", data, "--checkpoint", (tmp / "r1" / "fold_0" / "checkpoint.json").string()});
  REQUIRE(one.code == 0);
  CHECK(nlohmann::json::parse(one.out).at("predictions").size() == 50);

  const auto rep = invoke({"report", "--checkpoint", (tmp / "r1" / "fold_1" / "checkpoint.json").string(), "--data", data,
                        "--slide", "slide_00", "--slide", "slide_03", "-o", (tmp / "rep").string(), "--svg"});
  REQUIRE(rep.code == 0);
  CHECK(read_json(tmp / "rep" / "slide_03.json").at("top_patches").size() == 5);
  CHECK(fs::exists(tmp / "rep" / "slide_00.svg"));
  CHECK(invoke({"report", "--checkpoint", (tmp / "r1" / "fold_1" / "checkpoint.json").string(), "--data", data,
             "--slide", "nope", "-o", (tmp / "rep2").string()})
            .code == 3);

  const auto co = invoke({"cohort", "--data", data, "--run", (tmp / "r1").string()});
  REQUIRE(co.code == 0);
  const auto cj = nlohmann::json::parse(co.out);
  CHECK(cj.at("kind") == "simil.cohort");
  // out-of-fold validation slides: each of the 40 non-test slides once, K = 5
  CHECK(cj.at("rows").at(0).get<int>() + cj.at("rows").at(1).get<int>() == 200);
  CHECK(cj == read_json(tmp / "r1" / "cohort.json"));
}

TEST_CASE("normalize assembles a dataset") {
  testing::TempDir tmp;
  for (const std::string slide : {"s0", "s1"}) {
    REQUIRE(invoke({"synth", "nuclei", "-o", (tmp / "bundles" / slide).string(), "--slide", slide, "--count", "6",
                 "--width", "256", "--height", "256", "--seed", slide == "s0" ? "1" : "2",
                 "--proportions", "0.5", "0.5", "0", "0", "0"})
                .code == 0);
  }
  REQUIRE(invoke({"extract", "--bundles", (tmp / "bundles").string(), "-o", (tmp / "raw.csv").string()}).code == 0);
  std::mt19937_64 rng(2);
  fs::create_directories(tmp / "deep");
  for (const std::string slide : {"s0", "s1"}) {
    write_deep_sidecar(testing::random_tensor(rng, {6, 4}), tmp / "deep" / slide);
  }
  write_text("slide_id,label\ns0,0\ns1,1\n", tmp / "labels.csv");
  const auto r = invoke({"normalize", "--input", (tmp / "raw.csv").string(), "-o", (tmp / "norm.csv").string(),
                      "--save-manifest", (tmp / "norm.json").string(), "--labels", (tmp / "labels.csv").string(),
                      "--deep", (tmp / "deep").string(), "--dataset", (tmp / "ds").string()});
  REQUIRE(r.code == 0);
  const Dataset ds = load_dataset(tmp / "ds");
  REQUIRE(ds.bags.size() == 2);
  CHECK(ds.bags[1].label == 1);
  CHECK(ds.path_dim() == 246);
  CHECK(ds.deep_dim == 4);
  for (double v : ds.bags[0].path.data()) CHECK(std::isfinite(v));

  const auto again = invoke({"normalize", "--input", (tmp / "raw.csv").string(), "-o", (tmp / "norm2.csv").string(),
                          "--manifest", (tmp / "norm.json").string()});
  REQUIRE_MESSAGE(again.code == 0, again.err);
  CHECK(read_text(tmp / "norm.csv") == read_text(tmp / "norm2.csv"));
  CHECK(invoke({"normalize", "--input", (tmp / "raw.csv").string(), "-o", (tmp / "x.csv").string(), "--manifest",
             (tmp / "norm.json").string(), "--fit", (tmp / "raw.csv").string()})
            .code == 2);
  write_text("slide_id,label\ns0,0\n", tmp / "partial.csv");
  CHECK(invoke({"normalize", "--input", (tmp / "raw.csv").string(), "-o", (tmp / "y.csv").string(), "--labels",
             (tmp / "partial.csv").string(), "--deep", (tmp / "deep").string(), "--dataset", (tmp / "ds2").string()})
            .code == 3);
}

TEST_CASE("gradcheck subcommand") {
  const auto r = invoke({"gradcheck", "--mixer-layers", "1", "--instances", "20", "--topk-samples", "200000"});
  CHECK(r.code == 0);
  const auto j = nlohmann::json::parse(r.out);
  CHECK(j.at("passed") == true);
  CHECK(j.at("full_loss").at("max_relative_error").get<double>() <= 1e-4);
  CHECK(j.at("stop_gradient").at("max_mil_exclusive") == 0.0);
  const auto strict = invoke({"gradcheck", "--mixer-layers", "1", "--instances", "5", "--topk-samples", "200000",
                           "--topk-tol", "0"});
  CHECK(strict.code == 1);
}

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "flowcalc/cli.hpp"
#include "flowcalc/models.hpp"

namespace flowcalc::cli {
namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run_cmd(const std::string& command, const Invocation& inv) {
  std::ostringstream out, err;
  const int code = run(command, inv, out, err);
  return {code, out.str(), err.str()};
}

Invocation from_json(const char* text) {
  Invocation inv;
  inv.config = config_from_json(nlohmann::json::parse(text));
  return inv;
}

Invocation figure_analog(std::string_view model) {
  Invocation inv;
  inv.config.model = std::string(model);
  inv.config.aliases = {{"f1.intercept", "alpha0"}, {"f1.age", "alpha1"}};
  const auto spec = parse(inv.config.model);
  for (const auto& f : spec.flows) {
    for (const auto& t : f.predictor.terms) {
      if (t == "trt1") inv.config.aliases[coefficient_parameter(f.position, t)] = "beta";
      if (t == "trt2") inv.config.aliases[coefficient_parameter(f.position, t)] = "gamma";
    }
  }
  inv.config.params = {{"alpha0", 0.0}, {"alpha1", 0.0}};
  inv.config.covariates = {{"age", 40.0}, {"trt1", 1.0}, {"trt2", 1.0}};
  inv.vary = {parse_vary("beta=-1:1:0.1"), parse_vary("gamma=-1:1:0.1")};
  return inv;
}

std::vector<std::vector<std::string>> csv_rows(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    rows.push_back(std::move(cells));
  }
  return rows;
}

TEST(CliParsing, Vary) {
  const auto v = parse_vary("beta=-1:1:0.1");
  EXPECT_EQ(v.count(), 21u);
  EXPECT_EQ(parse_vary("x=0:0:1").count(), 1u);
  EXPECT_EQ(parse_vary("x=0:0.95:0.1").count(), 10u);
  EXPECT_THROW(parse_vary("x=0:1"), UsageError);
  EXPECT_THROW(parse_vary("x=0:1:0"), UsageError);
  EXPECT_THROW(parse_vary("x=1:0:0.1"), UsageError);
  EXPECT_THROW(parse_vary("=0:1:1"), UsageError);
  EXPECT_THROW(parse_assignment("beta=abc"), UsageError);
  EXPECT_EQ(parse_assignment("beta=0.25").second, 0.25);
}

TEST(CliParsing, NumbersRoundTrip) {
  for (double x : {0.1, 1.0 / 3.0, 0.6799999999999999, 1e-300, -2.5}) {
    EXPECT_EQ(std::stod(format_number(x)), x);
  }
}

TEST(CliEval, WitnessAndExitCodes) {
  auto inv = from_json(R"json({"model": "y = Ber(1/2) | ScOdds(1+age) | ScRisk1(0+trt1) | ScRisk0(0+trt2)",
                           "params": {"f1.intercept": 0, "f1.age": 0, "f2.trt1": 0.1823215567939546,
                                      "f3.trt2": -0.2231435513142097},
                           "covariates": {"age": 40, "trt1": 1, "trt2": 1}})json");
  auto r = run_cmd("eval", inv);
  ASSERT_EQ(r.code, kOk) << r.err;
  auto j = nlohmann::json::parse(r.out);
  EXPECT_NEAR(j["probability"].get<double>(), 0.68, 1e-12);
  EXPECT_TRUE(j["valid"].get<bool>());
  EXPECT_EQ(j["stages"].size(), 3u);
  EXPECT_TRUE(r.err.empty());

  inv.config.params["f2.trt1"] = std::log(3.0);
  r = run_cmd("eval", inv);
  EXPECT_EQ(r.code, kInvalidEvaluation);
  j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["first_invalid_stage"].get<int>(), 2);
  EXPECT_FALSE(j["stages"][1]["valid"].get<bool>());
  EXPECT_FALSE(r.err.empty());
}

TEST(CliEval, BaseOnly) {
  Invocation inv;
  inv.config.model = "y = Ber(1/2)";
  const auto r = run_cmd("eval", inv);
  ASSERT_EQ(r.code, kOk);
  EXPECT_EQ(nlohmann::json::parse(r.out)["probability"].get<double>(), 0.5);
}

TEST(CliEval, ErrorCodes) {
  Invocation inv;
  inv.config.model = "y = Ber(1/2) | ScOdds(1 * age)";
  auto r = run_cmd("eval", inv);
  EXPECT_EQ(r.code, kParse);
  EXPECT_TRUE(r.out.empty());

  inv.config.model = "y = Ber(1/2) | ScOdds(1+age)";
  r = run_cmd("eval", inv);  // parameters missing
  EXPECT_EQ(r.code, kBinding);

  inv.sets = {{"f1.intercept", 0.0}, {"f1.age", 0.0}, {"nope", 1.0}};
  EXPECT_EQ(run_cmd("eval", inv).code, kBinding);

  inv.config.model.clear();
  EXPECT_EQ(run_cmd("eval", inv).code, kUsage);
  EXPECT_EQ(run_cmd("frobnicate", inv).code, kUsage);
}

TEST(CliEval, AliasesAndSets) {
  auto inv = figure_analog(models::kModel1);
  inv.vary.clear();
  inv.sets = {{"beta", std::log(1.2)}, {"gamma", std::log(0.8)}};
  const auto r = run_cmd("eval", inv);
  ASSERT_EQ(r.code, kOk) << r.err;
  EXPECT_NEAR(nlohmann::json::parse(r.out)["probability"].get<double>(), 0.68, 1e-12);

  inv.config.aliases["f2.trt1"] = "alpha0";
  EXPECT_EQ(run_cmd("eval", inv).code, kBinding);
}

TEST(CliSweep, FigureAnalogRowsReplay) {
  const auto inv = figure_analog(models::kModel1);
  const auto r = run_cmd("sweep", inv);
  ASSERT_EQ(r.code, kOk) << r.err;
  const auto rows = csv_rows(r.out);
  ASSERT_EQ(rows.size(), 442u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"beta", "gamma", "probability", "valid"}));
  EXPECT_EQ(std::stod(rows[1][0]), -1.0);
  EXPECT_EQ(std::stod(rows[2][1]), -1.0 + 0.1);  // last name varies fastest

  for (std::size_t i = 1; i < rows.size(); ++i) {
    Invocation point = inv;
    point.vary.clear();
    point.sets = {{"beta", std::stod(rows[i][0])}, {"gamma", std::stod(rows[i][1])}};
    const auto e = run_cmd("eval", point);
    const auto j = nlohmann::json::parse(e.out);
    EXPECT_EQ(j["probability"].get<double>(), std::stod(rows[i][2])) << "row " << i;
    EXPECT_EQ(j["valid"].get<bool>(), rows[i][3] == "true") << "row " << i;
    EXPECT_EQ(e.code, rows[i][3] == "true" ? kOk : kInvalidEvaluation);
  }
}

TEST(CliSweep, NearestGridRowToLnOnePointTwoMatchesClosedForm) {
  const auto rows = csv_rows(run_cmd("sweep", figure_analog(models::kModel1)).out);
  // beta = 0.2 is the grid value nearest ln 1.2
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const double beta = std::stod(rows[i][0]), gamma = std::stod(rows[i][1]);
    if (std::abs(beta - 0.2) > 1e-9) continue;
    const double expect = closed_form_model1(1.0, std::exp(beta), std::exp(gamma));
    EXPECT_TRUE(close_relative(std::stod(rows[i][2]), expect)) << rows[i][2] << " vs " << expect;
  }
}

TEST(CliSweep, ModelsDifferSomewhere) {
  const auto a = csv_rows(run_cmd("sweep", figure_analog(models::kModel1)).out);
  const auto b = csv_rows(run_cmd("sweep", figure_analog(models::kModel2)).out);
  ASSERT_EQ(a.size(), b.size());
  double max_diff = 0.0;
  for (std::size_t i = 1; i < a.size(); ++i) {
    max_diff = std::max(max_diff, std::abs(std::stod(a[i][2]) - std::stod(b[i][2])));
  }
  EXPECT_GT(max_diff, 1e-3);
}

TEST(CliSweep, NoVaryIsOneRowMatchingEval) {
  auto inv = figure_analog(models::kModel1);
  inv.vary.clear();
  inv.sets = {{"beta", 0.1}, {"gamma", -0.2}};
  const auto rows = csv_rows(run_cmd("sweep", inv).out);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"probability", "valid"}));
  const auto j = nlohmann::json::parse(run_cmd("eval", inv).out);
  EXPECT_EQ(std::stod(rows[1][0]), j["probability"].get<double>());
}

TEST(CliSweep, FileOutputIsByteStable) {
  const auto dir = std::filesystem::temp_directory_path() / "flowcalc_cli_test";
  std::filesystem::create_directories(dir);
  auto inv = figure_analog(models::kModel1);
  std::string contents[2];
  for (int k = 0; k < 2; ++k) {
    inv.out_path = (dir / ("sweep" + std::to_string(k) + ".csv")).string();
    const auto r = run_cmd("sweep", inv);
    ASSERT_EQ(r.code, kOk);
    EXPECT_TRUE(r.out.empty());
    std::ifstream in(*inv.out_path, std::ios::binary);
    contents[k].assign(std::istreambuf_iterator<char>(in), {});
  }
  EXPECT_EQ(contents[0], contents[1]);
  EXPECT_EQ(std::count(contents[0].begin(), contents[0].end(), '\n'), 442);

  inv.out_path = (dir / "missing" / "x.csv").string();
  EXPECT_EQ(run_cmd("sweep", inv).code, kUsage);
  std::filesystem::remove_all(dir);
}

TEST(CliSweep, Conflicts) {
  auto inv = figure_analog(models::kModel1);
  inv.sets = {{"beta", 0.1}};
  EXPECT_EQ(run_cmd("sweep", inv).code, kUsage);
  inv = figure_analog(models::kModel1);
  inv.vary.push_back(parse_vary("f2.trt1=0:1:1"));
  EXPECT_EQ(run_cmd("sweep", inv).code, kUsage);
  inv = figure_analog(models::kModel1);
  inv.vary.push_back(parse_vary("zzz=0:1:1"));
  EXPECT_EQ(run_cmd("sweep", inv).code, kBinding);
}

TEST(CliEffect, WitnessRatio) {
  auto inv = figure_analog(models::kModel1);
  inv.vary.clear();
  inv.sets = {{"beta", std::log(1.2)}, {"gamma", std::log(0.8)}};
  inv.config.covariates.erase("trt1");
  inv.config.effect = {{"target", "trt1"}, {"measure", "RR"}};
  auto r = run_cmd("effect", inv);
  ASSERT_EQ(r.code, kOk) << r.err;
  EXPECT_NEAR(nlohmann::json::parse(r.out)["value"].get<double>(), 1.36 / 1.2, 1e-12);

  inv.config.effect = {{"target", "trt1"}, {"measure", "XX"}};
  EXPECT_EQ(run_cmd("effect", inv).code, kUsage);
  inv.config.effect = {{"target", "trt1"}, {"low", 1}, {"high", 1}};
  EXPECT_EQ(run_cmd("effect", inv).code, kEffect);
  inv.config.effect = {{"target", "trt1"}};
  inv.sets = {{"beta", std::log(3.0)}, {"gamma", 0.0}};
  r = run_cmd("effect", inv);
  EXPECT_EQ(r.code, kEffect);
  EXPECT_FALSE(nlohmann::json::parse(r.out)["valid"].get<bool>());
}

TEST(CliMarginalize, Examples) {
  auto inv = from_json(R"json({"model": "y = Ber(1/2) | ScOdds(1+age) | ScRisk1(0+trt1) | ScRisk0(0+trt2)",
      "params": {"f1.intercept": 0, "f1.age": 0, "f2.trt1": 0.1823215567939546, "f3.trt2": -0.10536051565782628},
      "covariates": {"age": 40, "trt1": 1},
      "distributions": [{"covariate": "trt2", "table": [
          {"context": {"trt1": 0}, "value": 1, "probability": 0.4},
          {"context": {"trt1": 0}, "value": 0, "probability": 0.6},
          {"context": {"trt1": 1}, "value": 1, "probability": 0.6},
          {"context": {"trt1": 1}, "value": 0, "probability": 0.4}]}],
      "marginalize": {"over": "trt2"}})json");
  auto r = run_cmd("marginalize", inv);
  ASSERT_EQ(r.code, kOk) << r.err;
  EXPECT_NEAR(nlohmann::json::parse(r.out)["probability"].get<double>(), 0.624, 1e-14);

  inv.sets = {{"trt2", 1.0}};
  EXPECT_EQ(run_cmd("marginalize", inv).code, kMarginal);
  inv.sets.clear();
  inv.config.marginalize = {{"over", "sex"}};
  EXPECT_EQ(run_cmd("marginalize", inv).code, kUsage);
}

TEST(CliRecovery, Examples) {
  auto inv = from_json(R"json({"recovery": {"eta1": 1, "beta": 0.1823215567939546,
                                        "gamma": -0.10536051565782628, "pi0": 0.4, "pi1": 0.6}})json");
  auto r = run_cmd("check-recovery", inv);
  ASSERT_EQ(r.code, kOk) << r.err;
  auto j = nlohmann::json::parse(r.out);
  EXPECT_NEAR(j["lhs_rr"].get<double>(), 1.2, 1e-12);
  EXPECT_TRUE(j["condition_holds"].get<bool>());

  inv.sets = {{"gamma", 0.0}, {"pi1", 0.3}};
  j = nlohmann::json::parse(run_cmd("check-recovery", inv).out);
  EXPECT_TRUE(j["condition_holds"].get<bool>());
  EXPECT_TRUE(j["rr_matches"].get<bool>());

  inv.sets = {{"pi1", 2.0}};
  EXPECT_EQ(run_cmd("check-recovery", inv).code, kRecovery);
  inv.sets = {{"age", 1.0}};
  EXPECT_EQ(run_cmd("check-recovery", inv).code, kUsage);

  Invocation suite;
  suite.samples = 500;
  suite.seed = 11;
  r = run_cmd("check-recovery", suite);
  ASSERT_EQ(r.code, kOk) << r.err;
  j = nlohmann::json::parse(r.out);
  EXPECT_TRUE(j["all_agree"].get<bool>());
  EXPECT_EQ(j["balanced_checked"].get<int>(), 50);
  EXPECT_EQ(r.out, run_cmd("check-recovery", suite).out);
}

TEST(CliOrderings, ModelOneWitness) {
  auto inv = from_json(R"json({"model": "y = Ber(1/2) | ScOdds(1+age) | ScRisk1(0+trt1) | ScRisk0(0+trt2)",
                           "orderings": {"anchors": [[1, 1.2, 0.8]]}})json");
  const auto r = run_cmd("orderings", inv);
  ASSERT_EQ(r.code, kOk) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_GE(j["classes"].size(), 2u);
  bool found = false;
  for (const auto& w : j["witnesses"]) {
    const auto a = w["order_a"].get<std::vector<int>>(), b = w["order_b"].get<std::vector<int>>();
    if (a == std::vector<int>{1, 2, 3} && b == std::vector<int>{1, 3, 2}) {
      found = true;
      EXPECT_NEAR(w["probability_a"].get<double>(), 0.68, 1e-12);
      EXPECT_NEAR(w["probability_b"].get<double>(), 0.72, 1e-12);
    }
  }
  EXPECT_TRUE(found);
  EXPECT_EQ(r.out, run_cmd("orderings", inv).out);

  inv.grid_size = 1;
  EXPECT_EQ(run_cmd("orderings", inv).code, kOrderings);
}

TEST(CliConfig, RejectsUnknownKeysAndFallsBackToEnvDir) {
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"json({"modle": "y = Ber(1/2)"})json")), ConfigError);
  const auto dir = std::filesystem::temp_directory_path() / "flowcalc_cfg_test";
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "base.json") << R"json({"model": "y = Ber(3/4)"})json";
  ::setenv(kConfigDirEnv, dir.c_str(), 1);
  EXPECT_EQ(load_config("base.json").model, "y = Ber(3/4)");
  ::unsetenv(kConfigDirEnv);
  EXPECT_THROW(load_config("base.json"), ConfigError);
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace flowcalc::cli

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "diddml/policy_assignment.hpp"
#include "fixtures.hpp"

using namespace diddml;

TEST_CASE("pct_change on published tax shares") {
  CHECK(pct_change(0.84, 0.86) == doctest::Approx(2.380952380952).epsilon(1e-10));  // Bulgaria 2012-2014
  CHECK(pct_change(0.74, 0.78) == doctest::Approx(5.405405405405).epsilon(1e-10));  // Denmark 2018-2020
  CHECK_THROWS_AS(pct_change(0.0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(pct_change(-1.0, 1.0), std::invalid_argument);
}

TEST_CASE("classify: price rule boundaries") {
  auto r = AssignmentRule::price_default();
  CHECK(classify(15.0, r) == Assignment::excluded);
  CHECK(classify(15.0001, r) == Assignment::treated);
  CHECK(classify(5.0, r) == Assignment::control);
  CHECK(classify(-5.0, r) == Assignment::control);
  CHECK(classify(-5.01, r) == Assignment::excluded);
  CHECK(classify(-14.63, r) == Assignment::excluded);
  CHECK(classify(10.0, r) == Assignment::excluded);
}

TEST_CASE("classify: tax rule rounds to two decimals and needs exactly zero for control") {
  auto r = AssignmentRule::tax_default();
  CHECK(classify(2.38, r) == Assignment::treated);
  CHECK(classify(2.001, r) == Assignment::excluded);  // rounds to 2.00, not above 2
  CHECK(classify(0.004, r) == Assignment::control);
  CHECK(classify(-0.004, r) == Assignment::control);
  CHECK(classify(1.15, r) == Assignment::excluded);
  CHECK(classify(-1.28, r) == Assignment::excluded);
}

TEST_CASE("classify is monotone in the change for the price rule") {
  auto r = AssignmentRule::price_default();
  // Treated never precedes a smaller change that is also treated; once treated, stays treated.
  bool seen_treated = false;
  for (double c = -30.0; c <= 80.0; c += 0.01) {
    auto a = classify(c, r);
    if (seen_treated) CHECK(a == Assignment::treated);
    if (a == Assignment::treated) seen_treated = true;
  }
  CHECK(seen_treated);
}

TEST_CASE("rule validation") {
  AssignmentRule r = AssignmentRule::price_default();
  r.treat_threshold_pct = 4.0;
  CHECK_THROWS_AS(r.validate(), std::invalid_argument);
  r = AssignmentRule::price_default();
  r.control_lo_pct = 6.0;
  CHECK_THROWS_AS(r.validate(), std::invalid_argument);
}

TEST_CASE("assign partitions every record into exactly one label") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(1.0, 10.0);
  std::vector<PolicyRecord> recs;
  for (int i = 0; i < 200; ++i)
    recs.push_back({"c" + std::to_string(i), "p", u(rng), u(rng), PolicyMeasure::price_ppp});
  PolicyPanel panel(recs);
  auto a = assign(panel, AssignmentRule::price_default());
  CHECK(a.rows.size() == 200);
  CHECK(a.count(Assignment::treated) + a.count(Assignment::control) + a.count(Assignment::excluded) == 200);
  for (const auto& row : a.rows) CHECK(row.label == classify(pct_change(row.pre_value, row.post_value),
                                                             AssignmentRule::price_default()));
}

TEST_CASE("policy panel rejects bad records") {
  CHECK_THROWS_AS(PolicyPanel({{"A", "p", 0.0, 1.0, PolicyMeasure::price_ppp}}), DataError);
  CHECK_THROWS_AS(PolicyPanel({{"A", "p", 0.5, 1.2, PolicyMeasure::tax_share}}), DataError);
  CHECK_THROWS_AS(PolicyPanel({{"A", "p", 1.0, 1.0, PolicyMeasure::price_ppp},
                               {"A", "p", 2.0, 1.0, PolicyMeasure::price_ppp}}),
                  DataError);
}

TEST_CASE("published tables load and assign by measure") {
  auto panel = load_policy_csv(fixtures::data_path("policy_tables.csv"));
  CHECK(panel.size() == 108);
  auto tax = assign(panel, AssignmentRule::tax_default());
  CHECK(tax.rows.size() == 54);
  const auto* bg = tax.find("Bulgaria", "2012-2014");
  REQUIRE(bg != nullptr);
  CHECK(bg->label == Assignment::treated);
  const auto* dk = tax.find("Denmark", "2018-2020");
  REQUIRE(dk != nullptr);
  CHECK(dk->change_pct == doctest::Approx(5.41).epsilon(1e-3));
  CHECK(dk->label == Assignment::treated);
  std::ostringstream out;
  write_assignment_csv(out, tax);
  CHECK(out.str().find("Bulgaria,2012-2014,tax_share,0.8400,0.8600,2.38,1\n") != std::string::npos);
  CHECK(out.str().find("Finland,2018-2020,tax_share,0.8700,0.8800,1.15,\n") != std::string::npos);
}

TEST_CASE("join labels survey rows, drops excluded countries and adds stacking covariates") {
  auto dir = std::filesystem::temp_directory_path() / "diddml_join_test";
  std::filesystem::create_directories(dir);
  auto path = (dir / "survey.csv").string();
  {
    std::ofstream f(path);
    f << "smoker,country,year,age\n"
         "1,A,2012,30\n0,A,2014,40\n1,B,2012,50\n0,B,2014,20\n1,C,2012,33\n0,A,2018,41\n";
  }
  SurveyConfig sc;
  sc.outcome = "smoker";
  sc.country = "country";
  sc.year = "year";
  sc.continuous = {"age"};
  sc.binary_outcome = true;
  auto survey = load_survey_csv(path, sc);
  PolicyPanel panel({{"A", "2012-2014", 5.0, 6.0, PolicyMeasure::price_ppp},
                     {"B", "2012-2014", 5.0, 5.1, PolicyMeasure::price_ppp},
                     {"C", "2012-2014", 5.0, 5.5, PolicyMeasure::price_ppp}});
  auto a = assign(panel, AssignmentRule::price_default());
  std::map<int, PeriodSlot> pm{{2012, {"2012-2014", 0}}, {2014, {"2012-2014", 1}}};
  CHECK_THROWS_AS(join(a, survey, pm), DataError);  // 2018 unmapped
  pm[2018] = {"2018-2020", 0};
  auto j = join(a, survey, pm);
  CHECK(j.dropped_excluded == 1);    // C: +10%
  CHECK(j.dropped_unassigned == 1);  // A in 2018-2020
  const auto& d = j.data;
  REQUIRE(d.size() == 4);
  CHECK(d[0].d == 1);
  CHECK(d[0].t == 0);
  CHECK(d[1].t == 1);
  CHECK(d[2].d == 0);
  auto names = d.schema().column_names(EncodingVariant::full_dummies);
  CHECK(names == std::vector<std::string>{"age", "analysis_period=2012-2014", "analysis_period=2018-2020",
                                          "pre_policy_level", "policy_level"});
  CHECK(std::get<double>(d[1].covariates[2]) == 5.0);
  CHECK(std::get<double>(d[1].covariates[3]) == 6.0);
  CHECK(std::get<double>(d[0].covariates[3]) == 5.0);
  std::filesystem::remove_all(dir);
}

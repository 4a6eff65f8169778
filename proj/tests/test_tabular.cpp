#include <gtest/gtest.h>

#include <sstream>

#include "helpers.hpp"
#include "soilpipe/tabular.hpp"

using namespace soilpipe;
using testutil::make_samples;
using testutil::make_sources;

TEST(Nutrients, DetectionLimits) {
  EXPECT_EQ(nutrient_info(Nutrient::N).lod, 0.2);
  EXPECT_EQ(nutrient_info(Nutrient::P).lod, 10.0);
  EXPECT_EQ(nutrient_info(Nutrient::K).lod, 10.0);
  EXPECT_FALSE(nutrient_info(Nutrient::pH_CaCl2).lod.has_value());
  EXPECT_EQ(nutrient_info(Nutrient::pH_H2O).range_lo, 2.0);
  EXPECT_EQ(nutrient_info(Nutrient::pH_H2O).range_hi, 10.0);
  EXPECT_EQ(kAllNutrients.size(), 5u);
}

TEST(Nutrients, NamesRoundTrip) {
  for (auto n : kAllNutrients) EXPECT_EQ(parse_nutrient(nutrient_name(n)), n);
  EXPECT_THROW(parse_nutrient("Mg"), Error);
}

TEST(FeatureSet, ColumnCountFormulaForEveryFlagCombination) {
  const auto samples = make_samples(3, 1);
  const auto src = make_sources(samples);
  for (int mask = 0; mask < 16; ++mask) {
    FeatureSetConfig cfg{(mask & 1) != 0, (mask & 2) != 0, (mask & 4) != 0, (mask & 8) != 0};
    const std::size_t expected = 12 * (cfg.surr ? 9 : 1) + 9 * cfg.wthr + 27 * cfg.cry + 1024 * cfg.clay;
    EXPECT_EQ(cfg.column_count(), expected);
    const auto table = assemble_feature_table(samples, src, cfg);
    EXPECT_EQ(table.cols(), expected) << cfg.id();
    EXPECT_EQ(parse_feature_set(cfg.id()), cfg);
  }
}

TEST(FeatureSet, BaseOnlyHasTwelveColumns) {
  const auto samples = make_samples(3, 2);
  const auto table = assemble_feature_table(samples, make_sources(samples), FeatureSetConfig::base());
  EXPECT_EQ(table.cols(), 12u);
  EXPECT_EQ(table.rows(), 3u);
  EXPECT_EQ(table.column_names().front(), "B01");
}

TEST(FeatureSet, ExtendedHas144Columns) {
  EXPECT_EQ(FeatureSetConfig::extended().column_count(), 144u);
  EXPECT_EQ(FeatureSetConfig::extended().label(), "Previous+ SURR, WTHR, CRY");
}

TEST(FeatureSet, ClayConfigEmits1168HeaderFields) {
  const auto samples = make_samples(2, 3);
  const auto table = assemble_feature_table(samples, make_sources(samples), FeatureSetConfig::extended_clay());
  const auto text = feature_table_to_string(table);
  const auto header = text.substr(0, text.find('\n'));
  const auto fields = split_fields(header, ',');
  EXPECT_EQ(fields.size() - 1, 1168u);
  EXPECT_EQ(fields.front(), "point_id");
}

TEST(FeatureTable, ColumnOrderIsFrozen) {
  const auto samples = make_samples(2, 4);
  const auto table = assemble_feature_table(samples, make_sources(samples), FeatureSetConfig::extended_clay());
  const auto& names = table.column_names();
  EXPECT_EQ(names[0], "B01_r0c0");
  EXPECT_EQ(names[8], "B01_r2c2");
  EXPECT_EQ(names[9], "B02_r0c0");
  EXPECT_EQ(names[108], "OW_temp");
  EXPECT_EQ(names[117], "yield_c0");
  EXPECT_EQ(names[144], "embedding_0000");
  EXPECT_EQ(names.back(), "embedding_1023");
}

TEST(FeatureTable, RowsFollowInputOrder) {
  auto samples = make_samples(4, 5);
  std::swap(samples[0], samples[3]);
  const auto table = assemble_feature_table(samples, make_sources(samples), FeatureSetConfig::base());
  for (std::size_t i = 0; i < samples.size(); ++i) EXPECT_EQ(table.row_keys()[i], samples[i].point_id);
}

TEST(FeatureTable, MissingColumnNamesPointAndColumn) {
  const auto samples = make_samples(3, 6);
  auto src = make_sources(samples);
  src.weather.rows.erase(samples[1].point_id);
  try {
    assemble_feature_table(samples, src, FeatureSetConfig{false, true, false, false});
    FAIL() << "expected MissingColumn";
  } catch (const MissingColumn& e) {
    EXPECT_EQ(e.point_id(), samples[1].point_id);
    EXPECT_EQ(e.column(), "OW_temp");
  }
}

TEST(FeatureTable, DuplicatePointIdRejected) {
  auto samples = make_samples(3, 7);
  const auto src = make_sources(samples);
  samples[2].point_id = samples[0].point_id;
  EXPECT_THROW(assemble_feature_table(samples, src, FeatureSetConfig::base()), DuplicateKey);
}

TEST(FeatureTable, SerializeParseRoundTripsBitIdentically) {
  const auto samples = make_samples(5, 8);
  auto src = make_sources(samples);
  Rng rng(99);
  for (auto& [id, row] : src.pixels.rows)
    for (auto& v : row) v = rng.normal() * 1e3 / 7.0;
  const auto table = assemble_feature_table(samples, src, FeatureSetConfig{true, false, false, false});
  std::istringstream in(feature_table_to_string(table));
  const auto back = parse_feature_table(in);
  EXPECT_EQ(back.column_names(), table.column_names());
  EXPECT_EQ(back.row_keys(), table.row_keys());
  EXPECT_EQ(back.raw(), table.raw());
}

TEST(FeatureTable, NotAValueIsSpelledNA) {
  FeatureTable t({"a", "b"}, {1}, Matrix(1, 2, std::vector<double>{kNaN, 2.5}));
  const auto text = feature_table_to_string(t);
  EXPECT_NE(text.find("1,NA,2.5"), std::string::npos);
  std::istringstream in(text);
  EXPECT_TRUE(std::isnan(parse_feature_table(in).raw()(0, 0)));
}

TEST(TargetVector, PassesValuesThroughInOrder) {
  auto samples = make_samples(2, 9);
  samples[0].targets[Nutrient::K] = 5.0;
  samples[1].targets[Nutrient::K] = 12.0;
  EXPECT_EQ(target_vector(samples, Nutrient::K), (std::vector<double>{5.0, 12.0}));
}

TEST(TargetVector, MissingValueRaisesMissingTarget) {
  auto samples = make_samples(3, 10);
  samples[1].targets.erase(Nutrient::P);
  try {
    target_vector(samples, Nutrient::P);
    FAIL() << "expected MissingTarget";
  } catch (const MissingTarget& e) {
    EXPECT_EQ(e.point_id(), samples[1].point_id);
  }
}

TEST(TargetVector, FullSizeJoin) {
  const auto samples = make_samples(18471, 11);
  EXPECT_EQ(target_vector(samples, Nutrient::pH_CaCl2).size(), 18471u);
}

TEST(Dates, ParseAndFormat) {
  auto d = try_parse_date("2018-07-04");
  ASSERT_TRUE(d);
  EXPECT_EQ(format_date(*d), "2018-07-04");
  EXPECT_FALSE(try_parse_date("2018-02-30"));
  EXPECT_FALSE(try_parse_date("18-7-4"));
}

// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include "einsense/costmodel.hpp"

using namespace einsense;

TEST_CASE("conv MAC formula") {
    // Early-Fusion first layer
    CHECK(mac_conv(2, 5, 35, 64, 1, 5, 5, 5) == 2'800'000);
    CHECK(mac_conv(1, 1, 1, 1, 1, 1, 1, 1) == 1);
    CHECK_THROWS_AS(mac_conv(0, 1, 1, 1, 1, 1, 1, 1), UsageError);
}

TEST_CASE("fc MAC formula") {
    CHECK(mac_fc(64, 21) == 1344);
    CHECK(mac_fc(1, 1) == 1);
    CHECK(mac_mlp({116, 128, 21}) == 17'536);
    CHECK(mac_mlp({29, 32, 21}) == 1'600);
    CHECK(mac_mlp({38, 128, 21}) == 7'552);
}

TEST_CASE("einsum circuit MAC breakdown") {
    const EinsumCost spr = mac_einsum_model(6, 2, 10, 21);
    CHECK(spr.einsum == 12'600);
    CHECK(spr.leaf == 128);
    CHECK(spr.mix == 210);
    CHECK(spr.total() == 12'938);

    const EinsumCost sa = mac_einsum_model(4, 2, 10, 21);
    CHECK(sa.einsum == 3'000);
    CHECK(sa.leaf == 32);
    CHECK(sa.mix == 210);
    CHECK(sa.total() == 3'242);

    const EinsumCost wa = mac_einsum_model(5, 2, 10, 21);
    CHECK(wa.einsum == 6'200);
    CHECK(wa.leaf == 64);
    CHECK(wa.mix == 210);
    CHECK(wa.total() == 6'474);

    CHECK(spr.total() + sa.total() + wa.total() == 22'654);
}

TEST_CASE("random forest MAC-equivalent ops") {
    const RandomForestCost c = mac_random_forest(100, 10, 21);
    CHECK(c.traversal == 2000);
    CHECK(c.leaf_normalization == 4100);
    CHECK(c.aggregation == 2121);
    CHECK(c.argmax == 20);
    CHECK(c.total() == 8241);
    CHECK(3 * c.total() == 24'723);

    const RandomForestCost tiny = mac_random_forest(1, 1, 2);
    CHECK(tiny.traversal == 2);
    CHECK(tiny.leaf_normalization == 3);
    CHECK(tiny.aggregation == 4);
    CHECK(tiny.argmax == 1);
    CHECK(tiny.total() == 10);
}

TEST_CASE("feature extraction op budget") {
    CHECK(feature_extraction_ops(FeatureKind::SPR) == 4060);
    CHECK(feature_extraction_ops(FeatureKind::SA) == 1015);
    CHECK(feature_extraction_ops(FeatureKind::WA) == 280);
    CHECK(feature_extraction_ops(FeatureKind::SPR) + feature_extraction_ops(FeatureKind::SA) +
              feature_extraction_ops(FeatureKind::WA) ==
          5355);
    CHECK(stat_extraction_ops(1, 1, 1) == 1);
}

TEST_CASE("efficiency score") {
    CHECK_THAT(efficiency_score(97.96, 22'654), Catch::Matchers::WithinAbs(22.5, 0.05));
    CHECK_THAT(efficiency_score(98.34, 24'723), Catch::Matchers::WithinAbs(22.4, 0.05));
    CHECK_THAT(efficiency_score(42.0, 10), Catch::Matchers::WithinAbs(42.0, 1e-12));
    CHECK_THROWS_AS(efficiency_score(50.0, 1), UsageError);
}

TEST_CASE("reference CNN totals") {
    const auto dnn = dnn_model_costs();
    REQUIRE(dnn.size() == 3);
    CHECK(dnn[0].total() == 1'436'401'344);  // ~1.4e9
    CHECK(dnn[1].total() == 1'904'832);      // ~1.9e6
    CHECK(dnn[2].total() == 3'808'896);      // ~3.8e6
    CHECK(std::abs(dnn[0].total() / 1.4e9 - 1.0) < 0.03);
    CHECK(std::abs(dnn[1].total() / 1.9e6 - 1.0) < 0.03);
    CHECK(std::abs(dnn[2].total() / 3.8e6 - 1.0) < 0.03);
}

TEST_CASE("totals equal the sum of their line items") {
    const CostReport r = build_cost_report();
    for (const auto& group : {r.dnn, r.einsum, r.mlp}) {
        for (const auto& m : group) {
            ops_t sum = 0;
            for (const auto& it : m.items) {
                CHECK(it.ops >= 0);
                sum += it.ops;
            }
            CHECK(sum == m.total());
        }
    }
    CHECK(r.random_forest_merged == 3 * r.random_forest.total());
}

TEST_CASE("reference check passes") {
    const auto failures = cost_reference_check();
    for (const auto& f : failures) UNSCOPED_INFO(f);
    CHECK(failures.empty());
}

TEST_CASE("report rendering mentions every model") {
    const CostReport r = build_cost_report();
    const std::string text = render_cost_report_text(r);
    for (const char* name : {"Early Fusion", "Late Fusion", "EUIGR", "SPR", "SA", "WA",
                             "Random Forest", "22654"})
        CHECK(text.find(name) != std::string::npos);
    const std::string csv = render_cost_report_csv(r);
    CHECK(csv.find("einsum,merged,total,,22654") != std::string::npos);
    CHECK(csv.find("forest,merged,total,,24723") != std::string::npos);
    CHECK(csv.find("features,total,ops,,5355") != std::string::npos);
}

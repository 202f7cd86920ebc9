#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "plantcount/model.hpp"

using namespace plantcount;

namespace {

FeatureGrid random_image(int h, int w, Rng& rng) {
    FeatureGrid img(h, w, 3);
    for (double& v : img.data) v = rng.uniform(0.0, 1.0);
    return img;
}

std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

} // namespace

TEST_SUITE("model") {

TEST_CASE("config text round-trips") {
    ModelConfig c = ModelConfig::from_preset("tiny");
    c.directions = {ScanDirection::Diagonal, ScanDirection::AntiDiagonal};
    c.grouping = ExpertGrouping::Two;
    c.adaptive_fusion = false;
    c.beta = 0.5;
    c.r = 16;
    c.init_seed = 99;
    const ModelConfig back = ModelConfig::from_text(c.to_text());
    CHECK(back.stage_channels == c.stage_channels);
    CHECK(back.directions == c.directions);
    CHECK(back.grouping == ExpertGrouping::Two);
    CHECK_FALSE(back.adaptive_fusion);
    CHECK(back.beta == 0.5);
    CHECK(back.r == 16);
    CHECK(back.init_seed == 99);
    CHECK_THROWS_AS(ModelConfig::from_text("nonsense_key = 1\n"), InvalidArgument);
}

TEST_CASE("config validation") {
    ModelConfig c = ModelConfig::from_preset("tiny");
    c.directions.clear();
    CHECK_THROWS_AS(c.validate(), InvalidArgument);
    c = ModelConfig::from_preset("tiny");
    c.r = 4;  // below the output stride
    CHECK_THROWS_AS(c.validate(), InvalidArgument);
    c = ModelConfig::from_preset("tiny");
    c.directions = {ScanDirection::Horizontal, ScanDirection::Horizontal};
    CHECK_THROWS_AS(c.validate(), InvalidArgument);
}

TEST_CASE("forward produces a stride-8 window map") {
    ModelConfig c = ModelConfig::from_preset("micro");
    c.r = 16;
    Model model(c);
    Rng rng(1);
    const FeatureGrid img = random_image(32, 48, rng);
    ad::Tape tape;
    const Model::ForwardResult r = model.forward(tape, img);
    CHECK(r.map_h == 4);
    CHECK(r.map_w == 6);
    CHECK(tape.val(r.window_map).rows() == 24);
    CHECK(tape.val(r.window_map).cols() == 1);
    for (double v : tape.val(r.window_map).data) REQUIRE(v >= 0.0);

    CHECK_THROWS_AS(model.forward(tape, FeatureGrid(30, 48, 3)), InvalidArgument);
}

TEST_CASE("blank image counts exactly zero with zeroed head biases") {
    // untrained model in its zero-bias configuration: a blank image propagates
    // exact zeros through every path and the ReLU head pins the count at 0.00
    for (const char* preset : {"micro", "tiny"}) {
        ModelConfig c = ModelConfig::from_preset(preset);
        c.r = 16;
        Model model(c);
        for (ad::Param* p : model.params())
            if (p->name == "head.b1" || p->name == "head.b2")
                std::fill(p->value.data.begin(), p->value.data.end(), 0.0);
        FeatureGrid blank(32, 32, 3);
        CHECK(model.predict_count(blank) == 0.0);
    }
}

TEST_CASE("constant square image gives equal horizontal and vertical branch features") {
    // every direction sees the same constant sequence, so with shared per-branch
    // weight streams the fused output is direction-independent; sanity-check via
    // the fusion weights staying exactly uniform at zero-initialized W
    ModelConfig c = ModelConfig::from_preset("micro");
    c.r = 16;
    c.directions = {ScanDirection::Horizontal, ScanDirection::Vertical};
    Model model(c);
    FeatureGrid img(16, 16, 3);
    for (double& v : img.data) v = 0.5;
    ad::Tape tape;
    const Model::ForwardResult r = model.forward(tape, img);
    const ad::Tensor& w = tape.val(r.fusion_weights);
    for (double v : w.data) REQUIRE(v == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("expert groupings repackage the same directions") {
    ModelConfig four = ModelConfig::from_preset("micro");
    four.r = 16;
    ModelConfig two = four;
    two.grouping = ExpertGrouping::Two;
    ModelConfig one = four;
    one.grouping = ExpertGrouping::One;

    Model m4(four), m2(two), m1(one);
    Rng rng(3);
    const FeatureGrid img = random_image(16, 16, rng);
    // all run and count scan paths: 4 = 4x1, 2 = 2x2, 1 = 1x4 directions
    CHECK(std::isfinite(m4.predict_count(img)));
    CHECK(std::isfinite(m2.predict_count(img)));
    CHECK(std::isfinite(m1.predict_count(img)));
}

TEST_CASE("single-direction ablation still works end to end") {
    ModelConfig c = ModelConfig::from_preset("micro");
    c.r = 16;
    c.directions = {ScanDirection::AntiDiagonal};
    Model model(c);
    Rng rng(4);
    CHECK(std::isfinite(model.predict_count(random_image(16, 16, rng))));
}

TEST_CASE("H-only and V-only twins nearly agree on a constant square image") {
    // Same init stream => identical weights. A constant grid flattens to the
    // same sequence under either order; the only asymmetry left is the causal
    // conv warm-up (cells land in row 0 vs column 0) interacting with the
    // patch-merge concat order, so the counts agree closely but not bitwise.
    ModelConfig ch = ModelConfig::from_preset("micro");
    ch.r = 16;
    ch.init_seed = 31;
    ch.directions = {ScanDirection::Horizontal};
    ModelConfig cv = ch;
    cv.directions = {ScanDirection::Vertical};
    Model mh(ch), mv(cv);
    FeatureGrid img(24, 24, 3);
    for (double& v : img.data) v = 0.6;
    const double h = mh.predict_count(img), v = mv.predict_count(img);
    CHECK(h == doctest::Approx(v).epsilon(0.02));
}

TEST_CASE("branch labels reflect the expert grouping") {
    ModelConfig c = ModelConfig::from_preset("micro");
    c.r = 16;
    Model four(c);
    CHECK(four.branch_labels() == std::vector<std::string>{"H", "V", "D", "A"});
    c.grouping = ExpertGrouping::Two;
    Model two(c);
    CHECK(two.branch_labels() == std::vector<std::string>{"HV", "DA"});
    c.grouping = ExpertGrouping::One;
    Model one(c);
    CHECK(one.branch_labels() == std::vector<std::string>{"HVDA"});
}

TEST_CASE("checkpoint round-trip preserves predictions") {
    ModelConfig c = ModelConfig::from_preset("micro");
    c.r = 16;
    c.init_seed = 5;
    Model model(c);
    Rng rng(6);
    const FeatureGrid img = random_image(16, 24, rng);
    const double before = model.predict_count(img);

    const std::string path = temp_path("model_roundtrip.ckpt");
    model.save_checkpoint(path);
    auto loaded = Model::load_checkpoint(path);
    CHECK(loaded->predict_count(img) == before);
    std::filesystem::remove(path);
}

TEST_CASE("shape-incompatible checkpoint names the offending parameter") {
    ModelConfig a = ModelConfig::from_preset("micro");
    a.r = 16;
    Model small_model(a);
    const std::string path = temp_path("model_mismatch.ckpt");
    small_model.save_checkpoint(path);

    ModelConfig b = ModelConfig::from_preset("tiny");
    b.r = 16;
    Model big_model(b);
    try {
        big_model.load_weights(path);
        FAIL("expected a shape mismatch error");
    } catch (const InvalidArgument& e) {
        const std::string msg = e.what();
        CHECK(msg.find("embed.w") != std::string::npos);
    }
    std::filesystem::remove(path);
}

TEST_CASE("identical init seeds build identical models") {
    ModelConfig c = ModelConfig::from_preset("micro");
    c.r = 16;
    c.init_seed = 11;
    Model m1(c), m2(c);
    auto &p1 = m1.params(), &p2 = m2.params();
    REQUIRE(p1.size() == p2.size());
    for (size_t i = 0; i < p1.size(); ++i) {
        REQUIRE(p1[i]->name == p2[i]->name);
        REQUIRE(p1[i]->value.data == p2[i]->value.data);
    }
}

TEST_CASE("micro preset with two directions fits the small-gradient-check budget") {
    ModelConfig c = ModelConfig::from_preset("micro");
    c.r = 16;
    c.directions = {ScanDirection::Horizontal, ScanDirection::Vertical};
    Model model(c);
    CHECK(model.param_count() <= 2000);
    CHECK(model.config().output_stride() == 8);
}

} // TEST_SUITE

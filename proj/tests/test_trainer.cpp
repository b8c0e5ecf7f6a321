#include <cmath>
#include <fstream>

#include "fixtures.hpp"
#include "pcclip/error.hpp"
#include "pcclip/trainer.hpp"
#include "support.hpp"

using namespace pcclip;

namespace {

struct Cached {
    std::vector<Matrix> features;
    std::vector<int> labels;
    Matrix text;
    std::vector<std::string> names;
};

Cached cache_episode(const Pipeline& pipeline, const LabeledDataset& ds) {
    Cached c;
    c.features = extract_all(pipeline, ds.clouds);
    for (const auto& cl : ds.clouds) c.labels.push_back(*cl.label);
    c.text = text_features(pipeline, ds.class_names);
    c.names = ds.class_names;
    return c;
}

FewShotOptions options(int epochs, std::uint64_t seed = 0) {
    FewShotOptions o;
    o.opt.epochs = epochs;
    o.opt.seed = seed;
    return o;
}

}  // namespace

TEST_SUITE("trainer") {
    TEST_CASE("extract_features: M x C unit rows, deterministic") {
        const Pipeline p = fixture::toy_pipeline();
        const PointCloud sphere = make_primitive_cloud(Primitive::sphere, 512, 0);
        const Matrix f = extract_features(p, sphere);
        CHECK(f.rows() == 6);
        CHECK(f.cols() == 16);
        for (int i = 0; i < 6; ++i) CHECK(std::abs(f.row(i).norm() - 1.0) <= 1e-6);
        CHECK(extract_features(p, sphere) == f);
    }

    TEST_CASE("bypassing the translator changes the features") {
        const Pipeline on = fixture::toy_pipeline(true), off = fixture::toy_pipeline(false);
        for (Primitive shape : {Primitive::sphere, Primitive::cube, Primitive::plane}) {
            const PointCloud c = make_primitive_cloud(shape, 512, 3);
            CHECK((extract_features(on, c) - extract_features(off, c)).cwiseAbs().maxCoeff() > 1e-6);
        }
        CHECK(on.fingerprint() != off.fingerprint());
    }

    TEST_CASE("extract_all on several threads matches one thread") {
        const Pipeline p = fixture::toy_pipeline();
        const LabeledDataset ds = fixture::shapes(3);
        const auto one = extract_all(p, ds.clouds, 1);
        const auto three = extract_all(p, ds.clouds, 3);
        REQUIRE(one.size() == ds.clouds.size());
        for (std::size_t i = 0; i < one.size(); ++i) CHECK(one[i] == three[i]);
    }

    TEST_CASE("cross_entropy examples") {
        Vector p(3);
        p << 1, 0, 0;
        CHECK(cross_entropy(p, 0) == 0.0);
        CHECK(cross_entropy(Vector::Constant(4, 0.25), 2) == doctest::Approx(1.3863).epsilon(1e-4));
        Vector q(2);
        q << 0.7311, 0.2689;
        CHECK(cross_entropy(q, 1) == doctest::Approx(1.3133).epsilon(1e-4));
        CHECK_THROWS_AS(cross_entropy(q, 2), ValidationError);
        CHECK_THROWS_AS(cross_entropy(q, -1), ValidationError);
    }

    TEST_CASE("3-way 16-shot toy episode reaches 100% training accuracy in 100 epochs") {
        // Untrained translators wash out the depth maps, so this runs on the bypass arm.
        const Pipeline p = fixture::toy_pipeline(false, 64, 32, 64);
        const Episode ep = sample_few_shot(fixture::shapes(20), {3, 16, 0});
        const TrainedBundle b = train_few_shot(p, ep.train, options(100));
        REQUIRE(b.log.size() == 101);
        CHECK(b.log.back().train_acc == 100.0);
        CHECK(b.log.back().epoch == 100);
    }

    TEST_CASE("0 epochs leaves the adapter at its initialization") {
        const Pipeline p = fixture::toy_pipeline();
        const Episode ep = sample_few_shot(fixture::shapes(4), {3, 2, 0});
        const FewShotOptions o = options(0, 9);
        const TrainedBundle b = train_few_shot(p, ep.train, o);
        const AdapterHead init = init_head(HeadType::viewpoint, 6, 16, o, b.init_seed);
        CHECK(b.head.flatten() == init.flatten());
        CHECK(b.log.size() == 1);
        CHECK(b.head.probs(extract_features(p, ep.train.clouds[0]), text_features(p, b.class_names), 1.0).size() == 3);
    }

    TEST_CASE("same seed gives bit-identical adapters; a different seed does not") {
        const Cached c = cache_episode(fixture::toy_pipeline(), sample_few_shot(fixture::shapes(6), {3, 4, 0}).train);
        const auto a = train_on_features(c.features, c.labels, c.text, c.names, 1.0, options(20, 1));
        const auto b = train_on_features(c.features, c.labels, c.text, c.names, 1.0, options(20, 1));
        const auto d = train_on_features(c.features, c.labels, c.text, c.names, 1.0, options(20, 2));
        CHECK(a.head.flatten() == b.head.flatten());
        CHECK(a.head.flatten() != d.head.flatten());
    }

    TEST_CASE("cached features train the same adapter as a full pipeline run") {
        const Pipeline p = fixture::toy_pipeline();
        const LabeledDataset train = sample_few_shot(fixture::shapes(6), {3, 4, 0}).train;
        const Cached c = cache_episode(p, train);
        const auto cached = train_on_features(c.features, c.labels, c.text, c.names, p.temperature, options(15));
        const auto full = train_few_shot(p, train, options(15));
        CHECK(cached.head.flatten() == full.head.flatten());
    }

    TEST_CASE("frozen pipeline hash is unchanged by training") {
        const Pipeline p = fixture::toy_pipeline();
        const std::string before = p.fingerprint();
        const std::string translator_before = p.translator->fingerprint();
        const auto b = train_few_shot(p, sample_few_shot(fixture::shapes(4), {3, 2, 0}).train, options(10));
        CHECK(p.fingerprint() == before);
        CHECK(p.translator->fingerprint() == translator_before);
        CHECK(b.pipeline_fingerprint == before);
        CHECK(b.translator_fingerprint == translator_before);
    }

    TEST_CASE("episode loss does not rise over any 10-epoch window") {
        const Pipeline p = fixture::toy_pipeline();
        const auto b = train_few_shot(p, sample_few_shot(fixture::shapes(20), {3, 16, 0}).train, options(100));
        for (std::size_t e = 0; e + 10 < b.log.size(); ++e) CHECK(b.log[e + 10].loss <= b.log[e].loss);
    }

    TEST_CASE("one shot trains full-batch") {
        const Cached c = cache_episode(fixture::toy_pipeline(), sample_few_shot(fixture::shapes(3), {3, 1, 0}).train);
        FewShotOptions exact = options(10, 1);
        exact.opt.batch_size = 3;
        const auto a = train_on_features(c.features, c.labels, c.text, c.names, 1.0, options(10, 1));
        const auto b = train_on_features(c.features, c.labels, c.text, c.names, 1.0, exact);
        CHECK(a.log.size() == 11);
        CHECK(a.head.flatten() == b.head.flatten());
        FewShotOptions split = exact;
        split.opt.batch_size = 2;
        CHECK(train_on_features(c.features, c.labels, c.text, c.names, 1.0, split).head.flatten() != a.head.flatten());
    }

    TEST_CASE("inter-view head trains and stays a distribution") {
        const Cached c = cache_episode(fixture::toy_pipeline(), sample_few_shot(fixture::shapes(8), {3, 4, 0}).train);
        FewShotOptions o = options(30);
        o.head = HeadType::interview;
        const auto b = train_on_features(c.features, c.labels, c.text, c.names, 1.0, o);
        CHECK(b.head.type == HeadType::interview);
        CHECK(b.log.back().loss < b.log.front().loss);
        CHECK(std::abs(b.head.probs(c.features[0], c.text, 1.0).sum() - 1.0) <= 1e-9);
    }

    TEST_CASE("adapter modes freeze the right branch") {
        const Cached c = cache_episode(fixture::toy_pipeline(), sample_few_shot(fixture::shapes(8), {3, 4, 0}).train);
        FewShotOptions o = options(20);
        o.mode = AdapterMode::view_only;
        const auto v = train_on_features(c.features, c.labels, c.text, c.names, 1.0, o);
        CHECK(v.head.viewpoint.global1.isZero());
        CHECK(v.head.viewpoint.global2.isZero());
        o.mode = AdapterMode::global_only;
        const auto g = train_on_features(c.features, c.labels, c.text, c.names, 1.0, o);
        for (const auto& w : g.head.viewpoint.local) CHECK(w.isZero());
        CHECK(!g.head.viewpoint.global1.isZero());
        o.mode = AdapterMode::both;
        const auto both = train_on_features(c.features, c.labels, c.text, c.names, 1.0, o);
        CHECK(both.head.flatten() == train_on_features(c.features, c.labels, c.text, c.names, 1.0, options(20)).head.flatten());
        o.head = HeadType::interview;
        o.mode = AdapterMode::view_only;
        CHECK_THROWS_AS(train_on_features(c.features, c.labels, c.text, c.names, 1.0, o), ValidationError);
    }

    TEST_CASE("non-finite features abort training with the epoch named") {
        Cached c = cache_episode(fixture::toy_pipeline(), sample_few_shot(fixture::shapes(3), {3, 1, 0}).train);
        c.features[0](0, 0) = std::nan("");
        try {
            train_on_features(c.features, c.labels, c.text, c.names, 1.0, options(5));
            FAIL("expected a training error");
        } catch (const TrainingError& e) {
            CHECK(std::string(e.what()).find("epoch") != std::string::npos);
        }
    }

    TEST_CASE("training input validation") {
        const Cached c = cache_episode(fixture::toy_pipeline(), sample_few_shot(fixture::shapes(3), {3, 1, 0}).train);
        CHECK_THROWS_AS(train_on_features({}, {}, c.text, c.names, 1.0, options(5)), ValidationError);
        FewShotOptions zs = options(5);
        zs.head = HeadType::zero_shot;
        CHECK_THROWS_AS(train_on_features(c.features, c.labels, c.text, c.names, 1.0, zs), ValidationError);
        FewShotOptions bad = options(5);
        bad.opt.learning_rate = 0;
        CHECK_THROWS_AS(train_on_features(c.features, c.labels, c.text, c.names, 1.0, bad), ValidationError);
    }

    TEST_CASE("bundle save/load round trip") {
        testing::TempDir dir("bundle");
        const Pipeline p = fixture::toy_pipeline();
        const LabeledDataset train = sample_few_shot(fixture::shapes(4), {3, 2, 0}).train;
        for (HeadType h : {HeadType::viewpoint, HeadType::interview}) {
            FewShotOptions o = options(5);
            o.head = h;
            const TrainedBundle b = train_few_shot(p, train, o);
            save_bundle(dir / "adapter.json", b);
            const TrainedBundle back = load_bundle(dir / "adapter.json");
            CHECK(back.head.type == h);
            CHECK(back.head.flatten() == b.head.flatten());
            CHECK(back.class_names == b.class_names);
            CHECK(back.prompt == b.prompt);
            CHECK(back.pipeline_fingerprint == b.pipeline_fingerprint);
            CHECK(back.log.size() == b.log.size());
        }
        const TrainedBundle zs = zero_shot_bundle(p, train.class_names);
        save_bundle(dir / "zs.json", zs);
        CHECK(load_bundle(dir / "zs.json").head.type == HeadType::zero_shot);
        testing::write_text(dir / "bad.json", "{\"format\": \"other\"}");
        CHECK_THROWS_AS(load_bundle(dir / "bad.json"), ParseError);
        CHECK_THROWS_AS(load_bundle(dir / "none.json"), IoError);
    }

    TEST_CASE("training log has an epoch,loss,train_acc header") {
        testing::TempDir dir("log");
        write_training_log(dir / "log.csv", {{0, 1.5, 50.0}, {1, 1.0, 75.0}});
        std::ifstream in(dir / "log.csv");
        std::string line;
        std::getline(in, line);
        CHECK(line == "epoch,loss,train_acc");
        int rows = 0;
        while (std::getline(in, line)) ++rows;
        CHECK(rows == 2);
    }

    TEST_CASE("names of heads and modes round trip") {
        for (HeadType h : {HeadType::zero_shot, HeadType::viewpoint, HeadType::interview})
            CHECK(parse_head_type(head_type_name(h)) == h);
        for (AdapterMode m : {AdapterMode::both, AdapterMode::view_only, AdapterMode::global_only})
            CHECK(parse_adapter_mode(adapter_mode_name(m)) == m);
        CHECK_THROWS_AS(parse_head_type("linear"), ValidationError);
    }
}

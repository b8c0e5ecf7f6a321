#include <algorithm>
#include <cmath>
#include <set>

#include "pcclip/dataset.hpp"
#include "pcclip/error.hpp"
#include "support.hpp"

using namespace pcclip;
using testing::TempDir;
using testing::write_text;

namespace {

const char* kTetra = "OFF\n4 4 0\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n3 0 1 2\n3 0 1 3\n3 0 2 3\n3 1 2 3\n";

PointCloud cloud_of(std::vector<Point3> pts) {
    PointCloud c;
    c.points = std::move(pts);
    return c;
}

PointCloud random_cloud(std::size_t n, std::uint64_t seed, double scale = 3.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-scale, scale);
    PointCloud c;
    for (std::size_t i = 0; i < n; ++i) c.points.push_back({u(rng), u(rng) + 1.0, u(rng) * 0.5});
    return c;
}

}  // namespace

TEST_SUITE("dataset") {
    TEST_CASE("read_off parses vertices and ignores faces") {
        TempDir dir("off");
        write_text(dir / "t.off", kTetra);
        const PointCloud c = read_off(dir / "t.off");
        REQUIRE(c.size() == 4);
        CHECK(c.points[1] == Point3{1, 0, 0});
        CHECK(c.points[3] == Point3{0, 0, 1});
    }

    TEST_CASE("read_off accepts counts glued to the header") {
        TempDir dir("off_glued");
        write_text(dir / "g.off", "OFF2 0 0\n1 2 3\n4 5 6\n");
        const PointCloud c = read_off(dir / "g.off");
        REQUIRE(c.size() == 2);
        CHECK(c.points[1] == Point3{4, 5, 6});
    }

    TEST_CASE("OFF file with zero vertices is a parse error") {
        TempDir dir("off_empty");
        write_text(dir / "z.off", "OFF\n0 0 0\n");
        CHECK_THROWS_AS(read_off(dir / "z.off"), ParseError);
    }

    TEST_CASE("malformed geometry names the file") {
        TempDir dir("off_bad");
        write_text(dir / "bad.off", "OFF\n2 0 0\n1 2 x\n");
        try {
            read_off(dir / "bad.off");
            FAIL("expected a parse error");
        } catch (const ParseError& e) {
            CHECK(std::string(e.what()).find("bad.off") != std::string::npos);
        }
    }

    TEST_CASE("read_ply reads ascii vertices") {
        TempDir dir("ply");
        write_text(dir / "p.ply",
                   "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\n"
                   "element face 0\nproperty list uchar int vertex_indices\nend_header\n0.5 1 2\n-1 0 3\n");
        const PointCloud c = read_ply(dir / "p.ply");
        REQUIRE(c.size() == 2);
        CHECK(c.points[0] == Point3{0.5, 1, 2});
        CHECK(c.points[1] == Point3{-1, 0, 3});
    }

    TEST_CASE("directory of 2 classes x 3 files gives 6 clouds in alphabetical class order") {
        TempDir dir("ds");
        for (const char* cls : {"chair", "airplane"})
            for (int i = 0; i < 3; ++i) write_text(dir / cls / ("m" + std::to_string(i) + ".off"), kTetra);
        const LabeledDataset ds = load_dataset(dir.path(), GeometryFormat::directory);
        CHECK(ds.clouds.size() == 6);
        REQUIRE(ds.class_names == std::vector<std::string>{"airplane", "chair"});
        CHECK(ds.class_counts() == std::vector<std::size_t>{3, 3});
        for (const auto& c : ds.clouds) CHECK(ds.class_names[static_cast<std::size_t>(*c.label)] == c.class_name);
    }

    TEST_CASE("loader errors") {
        TempDir dir("ds_err");
        CHECK_THROWS_AS(load_dataset(dir / "missing", GeometryFormat::directory), IoError);
        std::filesystem::create_directories(dir / "empty_class");
        write_text(dir / "full" / "a.off", kTetra);
        CHECK_THROWS_AS(load_dataset(dir.path(), GeometryFormat::directory), ValidationError);
    }

    TEST_CASE("write_dataset round-trips through load_dataset") {
        TempDir dir("ds_rt");
        const LabeledDataset ds = make_synthetic_shapes({Primitive::cube, Primitive::plane}, 2, 64, 3);
        write_dataset(dir.path(), ds);
        const LabeledDataset back = load_dataset(dir.path(), GeometryFormat::directory);
        REQUIRE(back.class_names == ds.class_names);
        REQUIRE(back.clouds.size() == ds.clouds.size());
        CHECK(back.class_counts() == ds.class_counts());
    }

    TEST_CASE("sample_points without replacement draws distinct points") {
        PointCloud c;
        for (int i = 0; i < 2048; ++i) c.points.push_back({static_cast<double>(i), 0, 0});
        const PointCloud s = sample_points(c, 1024, 5);
        REQUIRE(s.size() == 1024);
        std::set<double> xs;
        for (const auto& p : s.points) xs.insert(p[0]);
        CHECK(xs.size() == 1024);
    }

    TEST_CASE("sample_points with replacement repeats a single point") {
        const PointCloud s = sample_points(cloud_of({{0.1, 0.2, 0.3}}), 4, 0);
        REQUIRE(s.size() == 4);
        for (const auto& p : s.points) CHECK(p == Point3{0.1, 0.2, 0.3});
    }

    TEST_CASE("sample_points is deterministic and rejects n = 0") {
        const PointCloud c = random_cloud(300, 1);
        CHECK(sample_points(c, 128, 9) == sample_points(c, 128, 9));
        CHECK(sample_points(c, 128, 9) != sample_points(c, 128, 10));
        CHECK_THROWS_AS(sample_points(c, 0, 0), ValidationError);
    }

    TEST_CASE("normalize_unit_cube examples") {
        const PointCloud a = normalize_unit_cube(cloud_of({{0, 0, 0}, {2, 0, 0}}));
        CHECK(a.points[0] == Point3{-1, 0, 0});
        CHECK(a.points[1] == Point3{1, 0, 0});
        const PointCloud b = normalize_unit_cube(cloud_of({{5, 5, 5}}));
        CHECK(b.points[0] == Point3{0, 0, 0});
        CHECK_THROWS_AS(normalize_unit_cube(cloud_of({{0, NAN, 0}})), ValidationError);
    }

    TEST_CASE("normalize_unit_cube: range, centroid and idempotence on random clouds") {
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            const PointCloud n = normalize_unit_cube(random_cloud(50 + seed * 7, seed));
            double mx = 0;
            Point3 centroid{0, 0, 0};
            for (const auto& p : n.points)
                for (int k = 0; k < 3; ++k) {
                    mx = std::max(mx, std::abs(p[k]));
                    centroid[k] += p[k] / static_cast<double>(n.size());
                }
            CHECK(mx == doctest::Approx(1.0).epsilon(1e-12));
            for (int k = 0; k < 3; ++k) CHECK(std::abs(centroid[k]) < 1e-6);
            const PointCloud again = normalize_unit_cube(n);
            for (std::size_t i = 0; i < n.size(); ++i)
                for (int k = 0; k < 3; ++k) CHECK(std::abs(again.points[i][k] - n.points[i][k]) < 1e-6);
        }
    }

    TEST_CASE("3 classes x 20, N=3 K=16 gives 48 train and 12 residual") {
        const LabeledDataset ds = make_synthetic_shapes({Primitive::sphere, Primitive::cube, Primitive::plane}, 20, 32, 1);
        const Episode ep = sample_few_shot(ds, {3, 16, 4});
        CHECK(ep.train.clouds.size() == 48);
        CHECK(ep.residual.clouds.size() == 12);
        CHECK(ep.train.class_counts() == std::vector<std::size_t>{16, 16, 16});
    }

    TEST_CASE("episode train and residual partition the selected classes") {
        const LabeledDataset ds =
            make_synthetic_shapes({Primitive::sphere, Primitive::cube, Primitive::plane, Primitive::cylinder}, 9, 16, 2);
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            const Episode ep = sample_few_shot(ds, {2, 3, seed});
            std::set<std::size_t> train(ep.train_indices.begin(), ep.train_indices.end());
            std::set<std::size_t> rest(ep.residual_indices.begin(), ep.residual_indices.end());
            CHECK(train.size() == 6);
            CHECK(rest.size() == 12);
            for (auto i : train) CHECK(rest.count(i) == 0);
            std::set<std::string> names(ep.train.class_names.begin(), ep.train.class_names.end());
            for (std::size_t i = 0; i < ds.clouds.size(); ++i) {
                const bool selected = names.count(ds.class_names[static_cast<std::size_t>(*ds.clouds[i].label)]) > 0;
                CHECK((train.count(i) + rest.count(i)) == (selected ? 1u : 0u));
            }
        }
    }

    TEST_CASE("K=1 takes one exemplar per class") {
        const LabeledDataset ds = make_synthetic_shapes({Primitive::cube, Primitive::plane}, 5, 16, 0);
        const Episode ep = sample_few_shot(ds, {2, 1, 0});
        CHECK(ep.train.class_counts() == std::vector<std::size_t>{1, 1});
    }

    TEST_CASE("different seeds give different episodes") {
        const LabeledDataset ds = make_synthetic_shapes({Primitive::sphere, Primitive::cube, Primitive::plane}, 20, 8, 0);
        int differing = 0;
        for (std::uint64_t t = 0; t < 10; ++t) {
            const auto a = sample_few_shot(ds, {3, 4, t}).train_indices;
            const auto b = sample_few_shot(ds, {3, 4, t + 100}).train_indices;
            if (std::set<std::size_t>(a.begin(), a.end()) != std::set<std::size_t>(b.begin(), b.end())) ++differing;
        }
        CHECK(differing == 10);
        CHECK(sample_few_shot(ds, {3, 4, 7}).train_indices == sample_few_shot(ds, {3, 4, 7}).train_indices);
    }

    TEST_CASE("class with too few instances is named in the error") {
        LabeledDataset ds = make_synthetic_shapes({Primitive::cube, Primitive::plane}, 4, 8, 0);
        ds.clouds.pop_back();  // plane now has 3
        try {
            sample_few_shot(ds, {2, 4, 0});
            FAIL("expected a validation error");
        } catch (const ValidationError& e) {
            CHECK(std::string(e.what()).find("plane") != std::string::npos);
        }
        CHECK_THROWS_AS(sample_few_shot(ds, {3, 1, 0}), ValidationError);
    }

    TEST_CASE("synthetic spheres stay within 1.05 of the origin") {
        const LabeledDataset ds = make_synthetic_shapes({Primitive::sphere}, 4, 256, 11);
        CHECK(ds.clouds.size() == 4);
        for (const auto& c : ds.clouds)
            for (const auto& p : c.points) CHECK(std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]) <= 1.05);
    }

    TEST_CASE("synthetic shapes: counts, determinism, errors") {
        const LabeledDataset ds = make_synthetic_shapes({Primitive::cube, Primitive::plane}, 2, 64, 5);
        CHECK(ds.num_classes() == 2);
        CHECK(ds.clouds.size() == 4);
        CHECK(ds == make_synthetic_shapes({Primitive::cube, Primitive::plane}, 2, 64, 5));
        CHECK(dataset_fingerprint(ds) == dataset_fingerprint(make_synthetic_shapes({Primitive::cube, Primitive::plane}, 2, 64, 5)));
        CHECK_THROWS_AS(make_synthetic_shapes({}, 2, 64, 5), ValidationError);
        CHECK_THROWS_AS(make_synthetic_shapes({Primitive::cube}, 0, 64, 5), ValidationError);
        for (const auto& c : ds.clouds)
            for (const auto& p : c.points)
                for (double v : p) CHECK(std::abs(v) <= 1.0 + 1e-12);
    }
}

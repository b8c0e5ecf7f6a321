#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace pcclip {

using Point3 = std::array<double, 3>;

struct PointCloud {
    std::vector<Point3> points;
    std::optional<int> label;
    std::string class_name;

    std::size_t size() const { return points.size(); }
    friend bool operator==(const PointCloud&, const PointCloud&) = default;
};

struct LabeledDataset {
    std::vector<PointCloud> clouds;
    std::vector<std::string> class_names;

    std::size_t num_classes() const { return class_names.size(); }
    std::vector<std::size_t> class_counts() const;
    // Throws ValidationError if a label is out of range or names repeat.
    void validate() const;
    friend bool operator==(const LabeledDataset&, const LabeledDataset&) = default;
};

struct EpisodeSpec {
    int n_way = 2;
    int k_shot = 1;
    std::uint64_t seed = 0;
};

// A sampled N-way K-shot split. Index lists refer to the source dataset.
struct Episode {
    LabeledDataset train;
    LabeledDataset residual;
    std::vector<std::size_t> train_indices;
    std::vector<std::size_t> residual_indices;
};

enum class GeometryFormat { off, ply, directory };

GeometryFormat parse_geometry_format(const std::string& s);

// Vertex readers. Faces and other elements are skipped.
PointCloud read_off(const std::filesystem::path& file);
PointCloud read_ply(const std::filesystem::path& file);
void write_off(const std::filesystem::path& file, const PointCloud& cloud);

// Loads `<root>/<class>/*.{off,ply}`; classes are ordered alphabetically.
// A non-empty `split` reads `<root>/<class>/<split>/` instead (ModelNet layout).
// A path to a single file yields a one-cloud dataset named after its parent dir.
LabeledDataset load_dataset(const std::filesystem::path& path, GeometryFormat format,
                            const std::string& split = "");

// Writes the dataset in the directory layout understood by load_dataset.
void write_dataset(const std::filesystem::path& root, const LabeledDataset& dataset);

PointCloud sample_points(const PointCloud& cloud, std::size_t n = 1024, std::uint64_t seed = 0);
PointCloud normalize_unit_cube(const PointCloud& cloud);

Episode sample_few_shot(const LabeledDataset& dataset, const EpisodeSpec& spec);

enum class Primitive { sphere, cube, plane, cylinder };

Primitive parse_primitive(const std::string& s);
std::string primitive_name(Primitive p);

LabeledDataset make_synthetic_shapes(const std::vector<Primitive>& classes, std::size_t n_per_class,
                                     std::size_t points_per_cloud, std::uint64_t seed);

// Surface sample of one primitive instance: random rotation, jitter, normalized.
PointCloud make_primitive_cloud(Primitive p, std::size_t n_points, std::uint64_t seed);

std::string dataset_fingerprint(const LabeledDataset& dataset);

}  // namespace pcclip

#include "pcclip/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "pcclip/error.hpp"
#include "pcclip/hash.hpp"
#include "pcclip/rng.hpp"

namespace fs = std::filesystem;

namespace pcclip {

std::vector<std::size_t> LabeledDataset::class_counts() const {
    std::vector<std::size_t> counts(class_names.size(), 0);
    for (const auto& c : clouds) {
        if (c.label && *c.label >= 0 && static_cast<std::size_t>(*c.label) < counts.size())
            ++counts[static_cast<std::size_t>(*c.label)];
    }
    return counts;
}

void LabeledDataset::validate() const {
    std::set<std::string> seen(class_names.begin(), class_names.end());
    if (seen.size() != class_names.size()) throw ValidationError("class names are not unique");
    for (const auto& c : clouds) {
        if (!c.label || *c.label < 0 || static_cast<std::size_t>(*c.label) >= class_names.size())
            throw ValidationError("cloud label does not index class_names");
        if (c.points.empty()) throw ValidationError("cloud has no points");
    }
}

GeometryFormat parse_geometry_format(const std::string& s) {
    if (s == "off") return GeometryFormat::off;
    if (s == "ply") return GeometryFormat::ply;
    if (s == "directory" || s == "dir") return GeometryFormat::directory;
    throw ValidationError("unknown geometry format '" + s + "' (expected off, ply or directory)");
}

namespace {

std::string read_text(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw IoError("cannot open " + file.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

[[noreturn]] void parse_fail(const fs::path& file, const std::string& what) {
    throw ParseError(file.string() + ": " + what);
}

double parse_double(const fs::path& file, const std::string& tok) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(tok, &used);
    } catch (const std::exception&) {
        parse_fail(file, "expected a number, got '" + tok + "'");
    }
    if (used != tok.size()) parse_fail(file, "expected a number, got '" + tok + "'");
    if (!std::isfinite(v)) parse_fail(file, "non-finite coordinate");
    return v;
}

long parse_count(const fs::path& file, const std::string& tok) {
    std::size_t used = 0;
    long v = -1;
    try {
        v = std::stol(tok, &used);
    } catch (const std::exception&) {
        parse_fail(file, "expected an integer, got '" + tok + "'");
    }
    if (used != tok.size() || v < 0) parse_fail(file, "expected a count, got '" + tok + "'");
    return v;
}

}  // namespace

PointCloud read_off(const fs::path& file) {
    std::istringstream in(read_text(file));
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(in, line)) {
        if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        std::istringstream ls(line);
        std::string tok;
        while (ls >> tok) tokens.push_back(tok);
    }
    if (tokens.empty()) parse_fail(file, "empty file");
    std::size_t pos = 0;
    std::string head = tokens[pos++];
    if (head.rfind("OFF", 0) != 0) parse_fail(file, "missing OFF header");
    // ModelNet ships some files with the counts glued to the header ("OFF490 518 0").
    if (head.size() > 3) {
        tokens[--pos] = head.substr(3);
    }
    if (tokens.size() < pos + 3) parse_fail(file, "truncated header");
    long nv = parse_count(file, tokens[pos]);
    pos += 3;
    if (nv == 0) parse_fail(file, "no vertices");
    if (tokens.size() < pos + static_cast<std::size_t>(nv) * 3) parse_fail(file, "truncated vertex list");
    PointCloud cloud;
    cloud.points.reserve(static_cast<std::size_t>(nv));
    for (long i = 0; i < nv; ++i) {
        Point3 p{};
        for (int k = 0; k < 3; ++k) p[k] = parse_double(file, tokens[pos++]);
        cloud.points.push_back(p);
    }
    return cloud;
}

PointCloud read_ply(const fs::path& file) {
    std::istringstream in(read_text(file));
    std::string line;
    if (!std::getline(in, line) || line.rfind("ply", 0) != 0) parse_fail(file, "missing ply magic");

    struct Element {
        std::string name;
        long count = 0;
        std::vector<std::string> properties;
        bool has_list = false;
    };
    std::vector<Element> elements;
    bool ascii = false;
    bool header_done = false;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::istringstream ls(line);
        std::string kw;
        ls >> kw;
        if (kw == "format") {
            std::string fmt;
            ls >> fmt;
            ascii = fmt == "ascii";
        } else if (kw == "element") {
            Element e;
            std::string count;
            ls >> e.name >> count;
            e.count = parse_count(file, count);
            elements.push_back(e);
        } else if (kw == "property") {
            if (elements.empty()) parse_fail(file, "property before element");
            std::string type, name;
            ls >> type;
            if (type == "list") {
                std::string ct, it;
                ls >> ct >> it >> name;
                elements.back().has_list = true;
            } else {
                ls >> name;
            }
            elements.back().properties.push_back(name);
        } else if (kw == "end_header") {
            header_done = true;
            break;
        }
    }
    if (!header_done) parse_fail(file, "missing end_header");
    if (!ascii) parse_fail(file, "only ASCII PLY is supported");

    PointCloud cloud;
    bool found_vertex = false;
    for (const auto& e : elements) {
        if (e.name != "vertex") {
            for (long i = 0; i < e.count; ++i)
                if (!std::getline(in, line)) parse_fail(file, "truncated element '" + e.name + "'");
            continue;
        }
        found_vertex = true;
        auto idx = [&](const char* n) -> std::size_t {
            auto it = std::find(e.properties.begin(), e.properties.end(), n);
            if (it == e.properties.end()) parse_fail(file, std::string("vertex lacks property ") + n);
            return static_cast<std::size_t>(it - e.properties.begin());
        };
        if (e.has_list) parse_fail(file, "list properties on vertex are not supported");
        const std::size_t ix = idx("x"), iy = idx("y"), iz = idx("z");
        if (e.count == 0) parse_fail(file, "no vertices");
        cloud.points.reserve(static_cast<std::size_t>(e.count));
        for (long i = 0; i < e.count; ++i) {
            if (!std::getline(in, line)) parse_fail(file, "truncated vertex list");
            std::istringstream ls(line);
            std::vector<std::string> vals;
            std::string tok;
            while (ls >> tok) vals.push_back(tok);
            if (vals.size() < e.properties.size()) parse_fail(file, "short vertex row");
            cloud.points.push_back({parse_double(file, vals[ix]), parse_double(file, vals[iy]),
                                    parse_double(file, vals[iz])});
        }
    }
    if (!found_vertex) parse_fail(file, "no vertex element");
    return cloud;
}

void write_off(const fs::path& file, const PointCloud& cloud) {
    std::ofstream out(file);
    if (!out) throw IoError("cannot write " + file.string());
    out.precision(17);
    out << "OFF\n" << cloud.points.size() << " 0 0\n";
    for (const auto& p : cloud.points) out << p[0] << ' ' << p[1] << ' ' << p[2] << '\n';
    if (!out) throw IoError("write failed: " + file.string());
}

namespace {

bool extension_matches(const fs::path& p, GeometryFormat format) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    switch (format) {
        case GeometryFormat::off: return ext == ".off";
        case GeometryFormat::ply: return ext == ".ply";
        case GeometryFormat::directory: return ext == ".off" || ext == ".ply";
    }
    return false;
}

PointCloud read_any(const fs::path& file) {
    std::string ext = file.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".ply" ? read_ply(file) : read_off(file);
}

}  // namespace

LabeledDataset load_dataset(const fs::path& path, GeometryFormat format, const std::string& split) {
    if (!fs::exists(path)) throw IoError("no such path: " + path.string());
    LabeledDataset ds;
    if (fs::is_regular_file(path)) {
        PointCloud c = format == GeometryFormat::ply ? read_ply(path)
                       : format == GeometryFormat::off ? read_off(path)
                                                       : read_any(path);
        c.class_name = path.parent_path().filename().string();
        if (c.class_name.empty()) c.class_name = "unknown";
        c.label = 0;
        ds.class_names = {c.class_name};
        ds.clouds.push_back(std::move(c));
        return ds;
    }

    std::vector<fs::path> class_dirs;
    for (const auto& entry : fs::directory_iterator(path))
        if (entry.is_directory()) class_dirs.push_back(entry.path());
    std::sort(class_dirs.begin(), class_dirs.end(),
              [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });
    if (class_dirs.empty()) throw ValidationError("no class directories under " + path.string());

    for (const auto& dir : class_dirs) {
        const std::string name = dir.filename().string();
        fs::path files_dir = split.empty() ? dir : dir / split;
        std::vector<fs::path> files;
        if (fs::is_directory(files_dir)) {
            for (const auto& entry : fs::directory_iterator(files_dir))
                if (entry.is_regular_file() && extension_matches(entry.path(), format))
                    files.push_back(entry.path());
        }
        if (files.empty())
            throw ValidationError("class directory '" + files_dir.string() + "' contains no geometry files");
        std::sort(files.begin(), files.end());
        const int label = static_cast<int>(ds.class_names.size());
        ds.class_names.push_back(name);
        for (const auto& f : files) {
            PointCloud c = read_any(f);
            c.label = label;
            c.class_name = name;
            ds.clouds.push_back(std::move(c));
        }
    }
    return ds;
}

void write_dataset(const fs::path& root, const LabeledDataset& dataset) {
    dataset.validate();
    std::error_code ec;
    fs::create_directories(root, ec);
    if (ec) throw IoError("cannot create " + root.string() + ": " + ec.message());
    std::vector<std::size_t> seen(dataset.class_names.size(), 0);
    for (const auto& c : dataset.clouds) {
        const auto label = static_cast<std::size_t>(*c.label);
        fs::path dir = root / dataset.class_names[label];
        fs::create_directories(dir, ec);
        if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
        char name[64];
        std::snprintf(name, sizeof name, "%s_%04zu.off", dataset.class_names[label].c_str(), seen[label]++);
        write_off(dir / name, c);
    }
}

PointCloud sample_points(const PointCloud& cloud, std::size_t n, std::uint64_t seed) {
    if (n == 0) throw ValidationError("sample_points: n must be positive");
    if (cloud.points.empty()) throw ValidationError("sample_points: empty cloud");
    Rng rng(seed);
    PointCloud out;
    out.label = cloud.label;
    out.class_name = cloud.class_name;
    out.points.reserve(n);
    const std::size_t p = cloud.points.size();
    if (p < n) {
        std::uniform_int_distribution<std::size_t> pick(0, p - 1);
        for (std::size_t i = 0; i < n; ++i) out.points.push_back(cloud.points[pick(rng)]);
    } else {
        std::vector<std::size_t> idx(p);
        std::iota(idx.begin(), idx.end(), 0);
        // Partial Fisher-Yates: the first n slots are a uniform n-subset.
        for (std::size_t i = 0; i < n; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, p - 1);
            std::swap(idx[i], idx[pick(rng)]);
            out.points.push_back(cloud.points[idx[i]]);
        }
    }
    return out;
}

PointCloud normalize_unit_cube(const PointCloud& cloud) {
    if (cloud.points.empty()) throw ValidationError("normalize_unit_cube: empty cloud");
    Point3 centroid{0.0, 0.0, 0.0};
    for (const auto& p : cloud.points) {
        for (int k = 0; k < 3; ++k) {
            if (!std::isfinite(p[k])) throw ValidationError("normalize_unit_cube: non-finite coordinate");
            centroid[k] += p[k];
        }
    }
    const double n = static_cast<double>(cloud.points.size());
    for (auto& c : centroid) c /= n;

    PointCloud out = cloud;
    double extent = 0.0;
    for (auto& p : out.points) {
        for (int k = 0; k < 3; ++k) {
            p[k] -= centroid[k];
            extent = std::max(extent, std::abs(p[k]));
        }
    }
    if (extent > 0.0) {
        for (auto& p : out.points)
            for (auto& v : p) v /= extent;
    }
    return out;
}

Episode sample_few_shot(const LabeledDataset& dataset, const EpisodeSpec& spec) {
    dataset.validate();
    if (spec.n_way < 2) throw ValidationError("episode n_way must be at least 2");
    if (spec.k_shot < 1) throw ValidationError("episode k_shot must be at least 1");
    if (static_cast<std::size_t>(spec.n_way) > dataset.num_classes())
        throw ValidationError("episode n_way exceeds the number of classes in the dataset");

    Rng rng(derive_seed(spec.seed, {0x65706973ULL}));

    std::vector<std::size_t> classes(dataset.num_classes());
    std::iota(classes.begin(), classes.end(), 0);
    if (static_cast<std::size_t>(spec.n_way) < classes.size()) {
        std::shuffle(classes.begin(), classes.end(), rng);
        classes.resize(static_cast<std::size_t>(spec.n_way));
    }
    // Relabel in alphabetical order of the chosen class names.
    std::sort(classes.begin(), classes.end(),
              [&](std::size_t a, std::size_t b) { return dataset.class_names[a] < dataset.class_names[b]; });

    std::vector<std::vector<std::size_t>> members(dataset.num_classes());
    for (std::size_t i = 0; i < dataset.clouds.size(); ++i)
        members[static_cast<std::size_t>(*dataset.clouds[i].label)].push_back(i);

    Episode ep;
    for (std::size_t new_label = 0; new_label < classes.size(); ++new_label) {
        const std::size_t cls = classes[new_label];
        auto idx = members[cls];
        if (idx.size() < static_cast<std::size_t>(spec.k_shot))
            throw ValidationError("class '" + dataset.class_names[cls] + "' has " + std::to_string(idx.size()) +
                                  " instances, fewer than k_shot=" + std::to_string(spec.k_shot));
        Rng class_rng(derive_seed(spec.seed, {0x73686f74ULL, cls}));
        std::shuffle(idx.begin(), idx.end(), class_rng);
        ep.train.class_names.push_back(dataset.class_names[cls]);
        ep.residual.class_names.push_back(dataset.class_names[cls]);
        for (std::size_t j = 0; j < idx.size(); ++j) {
            PointCloud c = dataset.clouds[idx[j]];
            c.label = static_cast<int>(new_label);
            if (j < static_cast<std::size_t>(spec.k_shot)) {
                ep.train.clouds.push_back(std::move(c));
                ep.train_indices.push_back(idx[j]);
            } else {
                ep.residual.clouds.push_back(std::move(c));
                ep.residual_indices.push_back(idx[j]);
            }
        }
    }
    return ep;
}

Primitive parse_primitive(const std::string& s) {
    if (s == "sphere") return Primitive::sphere;
    if (s == "cube") return Primitive::cube;
    if (s == "plane") return Primitive::plane;
    if (s == "cylinder") return Primitive::cylinder;
    throw ValidationError("unknown primitive '" + s + "'");
}

std::string primitive_name(Primitive p) {
    switch (p) {
        case Primitive::sphere: return "sphere";
        case Primitive::cube: return "cube";
        case Primitive::plane: return "plane";
        case Primitive::cylinder: return "cylinder";
    }
    return "?";
}

namespace {

using Mat3 = std::array<std::array<double, 3>, 3>;

// Uniform random rotation from a unit quaternion (Shoemake).
Mat3 random_rotation(Rng& rng) {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const double u1 = u01(rng), u2 = u01(rng), u3 = u01(rng);
    const double pi2 = 2.0 * M_PI;
    const double a = std::sqrt(1.0 - u1), b = std::sqrt(u1);
    const double w = a * std::sin(pi2 * u2), x = a * std::cos(pi2 * u2);
    const double y = b * std::sin(pi2 * u3), z = b * std::cos(pi2 * u3);
    return {{{1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)},
             {2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)},
             {2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)}}};
}

Point3 surface_point(Primitive prim, Rng& rng) {
    std::uniform_real_distribution<double> sym(-1.0, 1.0);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    switch (prim) {
        case Primitive::sphere: {
            std::normal_distribution<double> g(0.0, 1.0);
            double x, y, z, r;
            do {
                x = g(rng);
                y = g(rng);
                z = g(rng);
                r = std::sqrt(x * x + y * y + z * z);
            } while (r < 1e-12);
            return {x / r, y / r, z / r};
        }
        case Primitive::cube: {
            std::uniform_int_distribution<int> face(0, 5);
            const int f = face(rng);
            Point3 p{sym(rng), sym(rng), sym(rng)};
            p[static_cast<std::size_t>(f / 2)] = (f % 2 == 0) ? 1.0 : -1.0;
            return p;
        }
        case Primitive::plane:
            return {sym(rng), sym(rng), 0.0};
        case Primitive::cylinder: {
            // Radius 0.5, height 2: lateral area 2*pi, each cap pi/4.
            const double lateral = 2.0 * M_PI, cap = M_PI / 4.0;
            const double t = u01(rng) * (lateral + 2.0 * cap);
            const double theta = 2.0 * M_PI * u01(rng);
            if (t < lateral) return {0.5 * std::cos(theta), sym(rng), 0.5 * std::sin(theta)};
            const double r = 0.5 * std::sqrt(u01(rng));
            return {r * std::cos(theta), t < lateral + cap ? 1.0 : -1.0, r * std::sin(theta)};
        }
    }
    return {0.0, 0.0, 0.0};
}

}  // namespace

PointCloud make_primitive_cloud(Primitive prim, std::size_t n_points, std::uint64_t seed) {
    if (n_points == 0) throw ValidationError("points_per_cloud must be positive");
    Rng rng(seed);
    const Mat3 rot = random_rotation(rng);
    std::uniform_real_distribution<double> sym(-1.0, 1.0);
    constexpr double kJitter = 0.05;
    PointCloud cloud;
    cloud.points.reserve(n_points);
    for (std::size_t i = 0; i < n_points; ++i) {
        const Point3 s = surface_point(prim, rng);
        Point3 p{};
        for (int r = 0; r < 3; ++r)
            p[r] = rot[r][0] * s[0] + rot[r][1] * s[1] + rot[r][2] * s[2];
        // Displacement uniform in a ball of radius kJitter.
        double dx, dy, dz;
        do {
            dx = sym(rng);
            dy = sym(rng);
            dz = sym(rng);
        } while (dx * dx + dy * dy + dz * dz > 1.0);
        p[0] += kJitter * dx;
        p[1] += kJitter * dy;
        p[2] += kJitter * dz;
        cloud.points.push_back(p);
    }
    return normalize_unit_cube(cloud);
}

LabeledDataset make_synthetic_shapes(const std::vector<Primitive>& classes, std::size_t n_per_class,
                                     std::size_t points_per_cloud, std::uint64_t seed) {
    if (classes.empty()) throw ValidationError("make_synthetic_shapes: empty class set");
    if (n_per_class < 1) throw ValidationError("make_synthetic_shapes: n_per_class must be >= 1");
    std::map<std::string, Primitive> by_name;
    for (auto p : classes) by_name[primitive_name(p)] = p;
    if (by_name.size() != classes.size()) throw ValidationError("make_synthetic_shapes: duplicate class");

    LabeledDataset ds;
    for (const auto& [name, prim] : by_name) {
        const int label = static_cast<int>(ds.class_names.size());
        ds.class_names.push_back(name);
        for (std::size_t i = 0; i < n_per_class; ++i) {
            PointCloud c = make_primitive_cloud(prim, points_per_cloud,
                                                derive_seed(seed, {static_cast<std::uint64_t>(prim), i}));
            c.label = label;
            c.class_name = name;
            ds.clouds.push_back(std::move(c));
        }
    }
    return ds;
}

std::string dataset_fingerprint(const LabeledDataset& dataset) {
    Fingerprint fp;
    for (const auto& n : dataset.class_names) fp.text(n);
    for (const auto& c : dataset.clouds) {
        fp.value(c.label.value_or(-1));
        fp.values(std::span<const Point3>(c.points));
    }
    return fp.hex();
}

}  // namespace pcclip

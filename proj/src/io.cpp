#include "odgs/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include <Eigen/SVD>

namespace odgs {

namespace fs = std::filesystem;

namespace {

static_assert(std::endian::native == std::endian::little,
              "binary polygon files are little-endian; big-endian hosts "
              "would need byte swaps");

[[noreturn]] void fail(const fs::path& path, const std::string& message) {
  throw std::runtime_error(path.string() + ": " + message);
}

[[noreturn]] void fail_at(const fs::path& path, const std::string& message,
                          std::streamoff byte) {
  fail(path, message + " (byte " + std::to_string(byte) + ")");
}

int scalar_size(const std::string& type) {
  if (type == "float" || type == "float32") return 4;
  if (type == "double" || type == "float64") return 8;
  if (type == "uchar" || type == "uint8") return 1;
  return -1;
}

struct PlyProperty {
  std::string type;
  std::string name;
};

struct PlyHeader {
  bool binary = false;
  Eigen::Index vertex_count = 0;
  std::vector<PlyProperty> properties;
  std::vector<std::string> comments;
  std::streamoff data_start = 0;
  int stride = 0;  // binary row bytes
};

PlyHeader parse_ply_header(std::istream& in, const fs::path& path) {
  PlyHeader header;
  std::string line;
  std::streamoff line_start = in.tellg();

  if (!std::getline(in, line) || line != "ply")
    fail_at(path, "not a polygon file (missing 'ply' magic)", line_start);

  bool have_format = false, in_vertex_element = false, done = false;
  while (!done) {
    line_start = in.tellg();
    if (!std::getline(in, line))
      fail_at(path, "header ended before 'end_header'", line_start);
    std::istringstream tokens(line);
    std::string keyword;
    tokens >> keyword;
    if (keyword.empty() || keyword == "comment" || keyword == "obj_info") {
      if (keyword == "comment")
        header.comments.push_back(line.substr(line.find("comment") + 8));
      continue;
    }
    if (keyword == "format") {
      std::string kind, version;
      tokens >> kind >> version;
      if (kind == "ascii")
        header.binary = false;
      else if (kind == "binary_little_endian")
        header.binary = true;
      else
        fail_at(path, "unsupported format '" + kind + "'", line_start);
      have_format = true;
    } else if (keyword == "element") {
      std::string name;
      Eigen::Index count = 0;
      tokens >> name >> count;
      if (name == "vertex") {
        header.vertex_count = count;
        in_vertex_element = true;
      } else if (in_vertex_element) {
        // Vertex data precedes any later element; we read vertices and stop.
        in_vertex_element = false;
      } else {
        fail_at(path, "element '" + name + "' precedes the vertex element",
                line_start);
      }
    } else if (keyword == "property") {
      if (!in_vertex_element) continue;  // properties of trailing elements
      std::string type;
      tokens >> type;
      if (type == "list")
        fail_at(path, "list properties are not supported on vertices",
                line_start);
      std::string name;
      tokens >> name;
      if (scalar_size(type) < 0)
        fail_at(path, "unsupported property type '" + type + "'", line_start);
      header.properties.push_back({type, name});
    } else if (keyword == "end_header") {
      done = true;
    } else {
      fail_at(path, "unrecognized header line '" + line + "'", line_start);
    }
  }
  if (!have_format) fail(path, "header has no format line");
  if (header.properties.empty()) fail(path, "no vertex properties declared");
  header.data_start = in.tellg();
  for (const auto& p : header.properties) header.stride += scalar_size(p.type);
  return header;
}

struct PlyColumns {
  PlyHeader header;
  std::map<std::string, VecX<double>> values;

  const VecX<double>& require(const fs::path& path,
                              const std::string& name) const {
    const auto it = values.find(name);
    if (it == values.end())
      throw std::runtime_error(path.string() + ": missing required property '" +
                               name + "'");
    return it->second;
  }

  std::string type_of(const std::string& name) const {
    for (const auto& p : header.properties)
      if (p.name == name) return p.type;
    return {};
  }
};

PlyColumns read_ply(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(path, "cannot open file");
  PlyColumns out;
  out.header = parse_ply_header(in, path);
  const auto& header = out.header;
  const auto n_props = header.properties.size();

  std::vector<VecX<double>*> columns;
  for (const auto& p : header.properties)
    columns.push_back(
        &out.values.emplace(p.name, VecX<double>(header.vertex_count))
             .first->second);

  if (header.binary) {
    std::vector<char> row(static_cast<std::size_t>(header.stride));
    for (Eigen::Index v = 0; v < header.vertex_count; ++v) {
      const std::streamoff row_start =
          header.data_start + std::streamoff(v) * header.stride;
      if (!in.read(row.data(), header.stride))
        fail_at(path, "truncated vertex data", row_start);
      const char* at = row.data();
      for (std::size_t k = 0; k < n_props; ++k) {
        const auto& type = header.properties[k].type;
        double value = 0;
        if (type == "float" || type == "float32") {
          float f;
          std::memcpy(&f, at, 4);
          value = f;
        } else if (type == "double" || type == "float64") {
          std::memcpy(&value, at, 8);
        } else {  // uchar
          value = static_cast<unsigned char>(*at);
        }
        (*columns[k])[v] = value;
        at += scalar_size(type);
      }
    }
  } else {
    std::string line;
    for (Eigen::Index v = 0; v < header.vertex_count; ++v) {
      const std::streamoff line_start = in.tellg();
      if (!std::getline(in, line))
        fail_at(path, "truncated vertex data", line_start);
      std::istringstream tokens(line);
      for (std::size_t k = 0; k < n_props; ++k) {
        double value;
        if (!(tokens >> value))
          fail_at(path, "malformed vertex line", line_start);
        (*columns[k])[v] = value;
      }
    }
  }
  return out;
}

}  // namespace

PointCloud load_pointcloud(const fs::path& path) {
  const PlyColumns ply = read_ply(path);
  PointCloud points;
  const Eigen::Index n = ply.header.vertex_count;
  if (n < 1) fail(path, "point cloud is empty");
  points.positions.resize(n, 3);
  points.positions.col(0) = ply.require(path, "x");
  points.positions.col(1) = ply.require(path, "y");
  points.positions.col(2) = ply.require(path, "z");
  points.colors.resize(n, 3);
  const char* names[3] = {"red", "green", "blue"};
  for (int c = 0; c < 3; ++c) {
    const auto& column = ply.require(path, names[c]);
    const bool byte_valued = ply.type_of(names[c]) == "uchar" ||
                             ply.type_of(names[c]) == "uint8";
    points.colors.col(c) = byte_valued ? (column / 255.0).eval() : column;
  }
  return points;
}

void save_pointcloud(const PointCloud& points, const fs::path& path,
                     bool binary) {
  const Eigen::Index n = points.positions.rows();
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(path, "cannot open file for writing");
  out.precision(17);  // ascii floats parse back to the exact stored value
  out << "ply\n"
      << (binary ? "format binary_little_endian 1.0\n" : "format ascii 1.0\n")
      << "element vertex " << n << "\n"
      << "property float x\nproperty float y\nproperty float z\n"
      << "property uchar red\nproperty uchar green\nproperty uchar blue\n"
      << "end_header\n";
  const auto byte = [](double v) {
    return static_cast<unsigned char>(
        std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
  };
  for (Eigen::Index i = 0; i < n; ++i) {
    if (binary) {
      for (int c = 0; c < 3; ++c) {
        const float f = static_cast<float>(points.positions(i, c));
        out.write(reinterpret_cast<const char*>(&f), 4);
      }
      for (int c = 0; c < 3; ++c) {
        const unsigned char b = byte(points.colors(i, c));
        out.write(reinterpret_cast<const char*>(&b), 1);
      }
    } else {
      out << static_cast<float>(points.positions(i, 0)) << " "
          << static_cast<float>(points.positions(i, 1)) << " "
          << static_cast<float>(points.positions(i, 2)) << " "
          << int(byte(points.colors(i, 0))) << " "
          << int(byte(points.colors(i, 1))) << " "
          << int(byte(points.colors(i, 2))) << "\n";
    }
  }
  if (!out) fail(path, "write failed");
}

GaussianCloud<double> init_from_points(const PointCloud& points) {
  const Eigen::Index n = points.positions.rows();
  if (n < 1) throw std::invalid_argument("init_from_points: no points");
  GaussianCloud<double> cloud;
  cloud.resize(n);
  cloud.means = points.positions;
  cloud.colors = points.colors;
  cloud.raw_opacities.setConstant(logit(0.1));

  for (Eigen::Index i = 0; i < n; ++i) {
    // Mean distance to the (up to) three nearest neighbors.
    std::array<double, 3> best = {std::numeric_limits<double>::infinity(),
                                  std::numeric_limits<double>::infinity(),
                                  std::numeric_limits<double>::infinity()};
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i) continue;
      const double d2 =
          (points.positions.row(j) - points.positions.row(i)).squaredNorm();
      if (d2 < best[2]) {
        best[2] = d2;
        std::sort(best.begin(), best.end());
      }
    }
    double sum = 0;
    int count = 0;
    for (const double d2 : best)
      if (std::isfinite(d2)) {
        sum += std::sqrt(d2);
        ++count;
      }
    // A lone point has no neighbor scale; fall back to a visible default.
    const double scale =
        count > 0 ? std::max(sum / count, 1e-7) : 0.1;
    cloud.log_scales.row(i).setConstant(std::log(scale));
  }
  return cloud;
}

void save_checkpoint(const GaussianCloud<double>& cloud, const fs::path& path) {
  const Eigen::Index n = cloud.size();
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(path, "cannot open file for writing");
  out << "ply\n"
      << "format binary_little_endian 1.0\n"
      << "comment odgs_checkpoint_version " << kCheckpointVersion << "\n"
      << "element vertex " << n << "\n";
  for (const char* name :
       {"x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0",
        "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"})
    out << "property float " << name << "\n";
  out << "end_header\n";

  const auto put = [&](double v) {
    const float f = static_cast<float>(v);
    out.write(reinterpret_cast<const char*>(&f), 4);
  };
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int c = 0; c < 3; ++c) put(cloud.means(i, c));
    for (int c = 0; c < 3; ++c) {
      // Coefficients below 2^-27 are flushed to zero after quantization.
      // Survivors sit far enough from zero that the load/save cycle is a
      // bitwise fixpoint: the double arithmetic perturbs them by less
      // than half a float ulp, and the flush test sees the same float
      // every cycle.
      const float f_dc =
          static_cast<float>((cloud.colors(i, c) - 0.5) / kSh0);
      const float flushed = std::abs(f_dc) < 0x1p-27f ? 0.0f : f_dc;
      out.write(reinterpret_cast<const char*>(&flushed), 4);
    }
    put(cloud.raw_opacities[i]);
    for (int c = 0; c < 3; ++c) put(cloud.log_scales(i, c));
    for (int c = 0; c < 4; ++c) put(cloud.rotations(i, c));
  }
  if (!out) fail(path, "write failed");
}

GaussianCloud<double> load_checkpoint(const fs::path& path) {
  const PlyColumns ply = read_ply(path);
  for (const auto& comment : ply.header.comments) {
    std::istringstream tokens(comment);
    std::string tag;
    int version = 0;
    if (tokens >> tag >> version && tag == "odgs_checkpoint_version" &&
        version > kCheckpointVersion)
      fail(path, "checkpoint version " + std::to_string(version) +
                     " is newer than this build understands (" +
                     std::to_string(kCheckpointVersion) + ")");
  }

  GaussianCloud<double> cloud;
  cloud.resize(ply.header.vertex_count);
  cloud.means.col(0) = ply.require(path, "x");
  cloud.means.col(1) = ply.require(path, "y");
  cloud.means.col(2) = ply.require(path, "z");
  for (int c = 0; c < 3; ++c)
    cloud.colors.col(c) =
        0.5 + kSh0 * ply.require(path, "f_dc_" + std::to_string(c)).array();
  cloud.raw_opacities = ply.require(path, "opacity");
  for (int c = 0; c < 3; ++c)
    cloud.log_scales.col(c) = ply.require(path, "scale_" + std::to_string(c));
  for (int c = 0; c < 4; ++c)
    cloud.rotations.col(c) = ply.require(path, "rot_" + std::to_string(c));
  return cloud;
}

namespace {

[[noreturn]] void fail_line(const fs::path& path, int line,
                            const std::string& message) {
  throw std::runtime_error(path.string() + ":" + std::to_string(line) + ": " +
                           message);
}

fs::path resolve(const fs::path& base_dir, const fs::path& p) {
  return p.is_absolute() ? p : base_dir / p;
}

}  // namespace

SceneManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(path, "cannot open file");
  const fs::path base_dir = path.has_parent_path() ? path.parent_path() : ".";

  SceneManifest manifest;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream tokens(line);
    std::string keyword;
    if (!(tokens >> keyword)) continue;

    if (keyword == "pointcloud") {
      std::string p;
      if (!(tokens >> p)) fail_line(path, line_no, "pointcloud needs a path");
      manifest.pointcloud_path = resolve(base_dir, p);
    } else if (keyword == "view") {
      ManifestView view;
      std::string image;
      int width = 0, height = 0;
      if (!(tokens >> image >> width >> height))
        fail_line(path, line_no, "view needs an image path and dimensions");
      view.image_path = resolve(base_dir, image);

      double pose[12];
      for (int k = 0; k < 12; ++k)
        if (!(tokens >> pose[k]))
          fail_line(path, line_no,
                    "view needs 12 pose numbers (row-major rotation, then "
                    "translation); got " + std::to_string(k));
      Mat3<double> rot;
      rot << pose[0], pose[1], pose[2],
             pose[3], pose[4], pose[5],
             pose[6], pose[7], pose[8];
      const double defect = (rot.transpose() * rot - Mat3<double>::Identity()).norm();
      if (defect >= 1e-3)
        fail_line(path, line_no, "rotation is not orthonormal (defect " +
                                     std::to_string(defect) + ")");
      if (defect > 0) {
        // Inside the tolerance band: snap to the nearest rotation.
        const Eigen::JacobiSVD<Mat3<double>> svd(
            rot, Eigen::ComputeFullU | Eigen::ComputeFullV);
        rot = svd.matrixU() * svd.matrixV().transpose();
      }
      if (rot.determinant() < 0)
        fail_line(path, line_no, "pose is a reflection, not a rotation");

      view.camera.rotation = rot;
      view.camera.translation << pose[9], pose[10], pose[11];
      view.camera.width = width;
      view.camera.height = height;
      try {
        view.camera.validate();
      } catch (const std::exception& e) {
        fail_line(path, line_no, e.what());
      }

      std::string tag;
      if (tokens >> tag) {
        if (tag == "test")
          view.is_test = true;
        else if (tag != "train")
          fail_line(path, line_no, "unknown split tag '" + tag + "'");
      }
      manifest.views.push_back(std::move(view));
    } else {
      fail_line(path, line_no, "unknown keyword '" + keyword + "'");
    }
  }
  if (manifest.views.empty()) fail(path, "manifest declares no views");
  for (const auto& view : manifest.views)
    if (!fs::exists(view.image_path))
      fail(path, "referenced image does not exist: " + view.image_path.string());
  if (!manifest.pointcloud_path.empty() && !fs::exists(manifest.pointcloud_path))
    fail(path, "referenced point cloud does not exist: " +
                   manifest.pointcloud_path.string());

  const int width = manifest.views.front().camera.width;
  const int height = manifest.views.front().camera.height;
  for (const auto& view : manifest.views)
    if (view.camera.width != width || view.camera.height != height)
      fail(path, "views disagree on image dimensions");
  return manifest;
}

void save_manifest(const SceneManifest& manifest, const fs::path& path) {
  std::ofstream out(path);
  if (!out) fail(path, "cannot open file for writing");
  out.precision(17);
  // Loaders resolve entries against the manifest's directory, so entries
  // are written relative to it whenever that is expressible.
  const fs::path base_dir = path.has_parent_path() ? path.parent_path() : ".";
  const auto portable = [&](const fs::path& p) {
    const fs::path rel = fs::proximate(p, base_dir);
    return rel.empty() ? p.string() : rel.string();
  };
  if (!manifest.pointcloud_path.empty())
    out << "pointcloud " << portable(manifest.pointcloud_path) << "\n";
  for (const auto& view : manifest.views) {
    out << "view " << portable(view.image_path) << " " << view.camera.width
        << " " << view.camera.height;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) out << " " << view.camera.rotation(r, c);
    for (int k = 0; k < 3; ++k) out << " " << view.camera.translation[k];
    out << (view.is_test ? " test" : " train") << "\n";
  }
  if (!out) fail(path, "write failed");
}

}  // namespace odgs

#pragma once

// On-disk formats: PFM images, JSON scenes / stacks / correspondences /
// truth / results, and the metrics CSV.

#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "polarsfp/error.hpp"
#include "polarsfp/image.hpp"
#include "polarsfp/pipeline.hpp"
#include "polarsfp/scene_sim.hpp"

namespace polarsfp {

using json = nlohmann::json;
namespace fs = std::filesystem;

inline constexpr int kSchemaVersion = 1;

// ---------------------------------------------------------------- files

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw Error(ErrorCode::IoError, "read failed: " + path.string());
  return ss.str();
}

inline void write_file(const fs::path& path, std::string_view bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot create " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoError, "write failed: " + path.string());
}

// ---------------------------------------------------------------- PFM

namespace detail {
constexpr std::uint32_t byteswap32(std::uint32_t v) {
  return (v >> 24) | ((v >> 8) & 0xff00u) | ((v << 8) & 0xff0000u) | (v << 24);
}
}  // namespace detail

/// Serializes a 1- or 3-channel float image as little-endian PFM, rows
/// bottom-to-top. Subnormals are flushed to zero of the same sign.
inline std::string encode_pfm(const ImageF& img) {
  if (img.channels() != 1 && img.channels() != 3) {
    throw Error(ErrorCode::ShapeMismatch, "PFM holds 1 or 3 channels, got " + std::to_string(img.channels()));
  }
  if (img.width() <= 0 || img.height() <= 0) throw Error(ErrorCode::ShapeMismatch, "PFM needs a non-empty image");
  std::string out = (img.channels() == 3 ? "PF\n" : "Pf\n") + std::to_string(img.width()) + " " +
                    std::to_string(img.height()) + "\n-1.0\n";
  const std::size_t header = out.size();
  const std::size_t row = static_cast<std::size_t>(img.width()) * img.channels();
  out.resize(header + row * img.height() * 4);
  char* dst = out.data() + header;
  for (int y = img.height() - 1; y >= 0; --y) {
    const float* src = img.data().data() + static_cast<std::size_t>(y) * row;
    for (std::size_t i = 0; i < row; ++i) {
      float v = src[i];
      if (!std::isfinite(v)) throw Error(ErrorCode::DomainError, "PFM payload must be finite");
      if (std::fpclassify(v) == FP_SUBNORMAL) v = std::signbit(v) ? -0.0f : 0.0f;
      auto bits = std::bit_cast<std::uint32_t>(v);
      if constexpr (std::endian::native == std::endian::big) bits = detail::byteswap32(bits);
      std::memcpy(dst, &bits, 4);
      dst += 4;
    }
  }
  return out;
}

inline ImageF decode_pfm(std::string_view bytes) {
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (start == pos) throw Error(ErrorCode::MalformedHeader, "PFM header ended early");
    return bytes.substr(start, pos - start);
  };
  const auto magic = token();
  int channels = 0;
  if (magic == "Pf") channels = 1;
  else if (magic == "PF") channels = 3;
  else throw Error(ErrorCode::MalformedHeader, "PFM magic must be Pf or PF");

  auto integer = [&]() {
    const auto t = token();
    long long v = 0;
    const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc{} || p != t.data() + t.size() || v <= 0 || v > (1LL << 30)) {
      throw Error(ErrorCode::MalformedHeader, "PFM dimension must be a positive integer, got '" + std::string(t) + "'");
    }
    return static_cast<int>(v);
  };
  const int w = integer();
  const int h = integer();
  const auto st = token();
  double scale = 0.0;
  const auto [sp, sec] = std::from_chars(st.data(), st.data() + st.size(), scale);
  if (sec != std::errc{} || sp != st.data() + st.size() || scale == 0.0 || !std::isfinite(scale)) {
    throw Error(ErrorCode::MalformedHeader, "PFM scale must be a non-zero number");
  }
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    throw Error(ErrorCode::MalformedHeader, "PFM header must end with one whitespace byte");
  }
  ++pos;

  const bool little = scale < 0.0;
  const std::size_t row = static_cast<std::size_t>(w) * channels;
  const std::size_t need = row * h * 4;
  if (bytes.size() - pos < need) {
    throw Error(ErrorCode::TruncatedData, "PFM payload has " + std::to_string(bytes.size() - pos) + " bytes, need " +
                                              std::to_string(need));
  }
  ImageF img(w, h, channels);
  const char* src = bytes.data() + pos;
  for (int y = h - 1; y >= 0; --y) {
    float* dst = img.data().data() + static_cast<std::size_t>(y) * row;
    for (std::size_t i = 0; i < row; ++i) {
      std::uint32_t bits = 0;
      std::memcpy(&bits, src, 4);
      src += 4;
      if (little != (std::endian::native == std::endian::little)) bits = detail::byteswap32(bits);
      dst[i] = std::bit_cast<float>(bits);
    }
  }
  return img;
}

inline void write_pfm(const fs::path& path, const ImageF& img) { write_file(path, encode_pfm(img)); }
inline ImageF read_pfm(const fs::path& path) { return decode_pfm(read_file(path)); }

inline void write_pfm(const fs::path& path, const ImageD& img) { write_pfm(path, image_cast<float>(img)); }
inline void write_pfm(const fs::path& path, const Mask& img) { write_pfm(path, image_cast<float>(img)); }

inline ImageD read_pfm_double(const fs::path& path) { return image_cast<double>(read_pfm(path)); }

inline Mask read_pfm_mask(const fs::path& path) {
  const auto f = read_pfm(path);
  Mask m(f.width(), f.height(), f.channels());
  for (std::size_t i = 0; i < f.data().size(); ++i) m.data()[i] = f.data()[i] != 0.0f ? 1 : 0;
  return m;
}

// ---------------------------------------------------------------- JSON helpers

namespace detail {

inline std::string join(const std::string& path, std::string_view key) {
  return path.empty() ? std::string(key) : path + "." + std::string(key);
}

[[noreturn]] inline void schema_fail(const std::string& path, const std::string& what) {
  throw Error(ErrorCode::SchemaError, (path.empty() ? std::string("document") : path) + ": " + what);
}

inline const json& expect_object(const json& j, const std::string& path) {
  if (!j.is_object()) schema_fail(path, "expected an object");
  return j;
}

inline void check_keys(const json& obj, const std::string& path, std::initializer_list<std::string_view> allowed) {
  expect_object(obj, path);
  for (const auto& [key, _] : obj.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || a == key;
    if (!ok) schema_fail(join(path, key), "unknown key '" + key + "'");
  }
}

inline double as_number(const json& j, const std::string& path) {
  if (!j.is_number()) schema_fail(path, "expected a number");
  return j.get<double>();
}

inline int as_int(const json& j, const std::string& path) {
  if (!j.is_number_integer()) schema_fail(path, "expected an integer");
  return j.get<int>();
}

inline std::string as_string(const json& j, const std::string& path) {
  if (!j.is_string()) schema_fail(path, "expected a string");
  return j.get<std::string>();
}

inline const json& required(const json& obj, std::string_view key, const std::string& path) {
  const auto it = obj.find(key);
  if (it == obj.end()) schema_fail(join(path, key), "required field missing");
  return *it;
}

inline double number_or(const json& obj, std::string_view key, const std::string& path, double fallback) {
  const auto it = obj.find(key);
  return it == obj.end() ? fallback : as_number(*it, join(path, key));
}

inline Vec3 as_vec3(const json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 3) schema_fail(path, "expected an array of 3 numbers");
  return {as_number(j[0], path + "[0]"), as_number(j[1], path + "[1]"), as_number(j[2], path + "[2]")};
}

inline Mat3 as_mat3(const json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 3) schema_fail(path, "expected a 3x3 array of rows");
  Mat3 m;
  for (int r = 0; r < 3; ++r) m.row(r) = as_vec3(j[r], path + "[" + std::to_string(r) + "]").transpose();
  return m;
}

inline std::vector<double> as_numbers(const json& j, const std::string& path) {
  if (!j.is_array()) schema_fail(path, "expected an array of numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(as_number(j[i], path + "[" + std::to_string(i) + "]"));
  return out;
}

inline json to_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

inline json to_json(const Mat3& m) {
  json rows = json::array();
  for (int r = 0; r < 3; ++r) rows.push_back(json::array({m(r, 0), m(r, 1), m(r, 2)}));
  return rows;
}

inline void check_version(const json& doc, const std::string& kind) {
  const auto& v = required(doc, "schema_version", "");
  if (as_int(v, "schema_version") != kSchemaVersion) {
    schema_fail("schema_version", kind + " schema_version must be " + std::to_string(kSchemaVersion));
  }
}

inline json parse_json(std::string_view text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::SchemaError, what + " is not valid JSON: " + e.what());
  }
}

/// nlohmann prints doubles in shortest round-trip form.
inline std::string dump(const json& j) { return j.dump(2) + "\n"; }

}  // namespace detail

// ---------------------------------------------------------------- scenes

inline json texture_to_json(const Texture& t) {
  if (const auto* c = std::get_if<double>(&t)) return *c;
  const auto& s = std::get<SinusoidTexture>(t);
  return {{"type", "sinusoid"}, {"low", s.low}, {"high", s.high}, {"frequency", s.frequency}};
}

inline Texture texture_from_json(const json& j, const std::string& path) {
  if (j.is_number()) return j.get<double>();
  detail::check_keys(j, path, {"type", "low", "high", "frequency"});
  const auto type = detail::as_string(detail::required(j, "type", path), detail::join(path, "type"));
  if (type != "sinusoid") detail::schema_fail(detail::join(path, "type"), "unknown texture type '" + type + "'");
  SinusoidTexture s;
  s.low = detail::number_or(j, "low", path, s.low);
  s.high = detail::number_or(j, "high", path, s.high);
  s.frequency = detail::number_or(j, "frequency", path, s.frequency);
  return s;
}

inline json scene_to_json(const SceneSpec& s) {
  json doc;
  doc["schema_version"] = kSchemaVersion;
  doc["name"] = s.name;
  if (const auto* sp = std::get_if<Sphere>(&s.geometry)) {
    doc["geometry"] = {{"type", "sphere"}, {"center", detail::to_json(sp->center)}, {"radius", sp->radius}};
  } else {
    const auto& pl = std::get<Plane>(s.geometry);
    doc["geometry"] = {{"type", "plane"}, {"normal", detail::to_json(pl.normal)}, {"offset", pl.offset}};
  }
  doc["material"] = {{"n_true", s.material.n_true},
                     {"diffuse_albedo", texture_to_json(s.material.diffuse_albedo)},
                     {"specular_strength", texture_to_json(s.material.specular_strength)},
                     {"specular_exponent", s.material.specular_exponent}};
  doc["light"] = {{"direction", detail::to_json(s.light.direction)}, {"intensity", s.light.intensity}};
  json views = json::array();
  for (const auto& v : s.views) {
    views.push_back({{"rotation", detail::to_json(v.rotation)}, {"polarizer_angles", v.polarizer_angles}});
  }
  doc["views"] = views;
  doc["image_size"] = json::array({s.width, s.height});
  doc["extent"] = s.extent;
  doc["noise_sigma"] = s.noise_sigma;
  doc["model_violation"] = s.model_violation;
  return doc;
}

/// Strict parse: unknown keys are rejected with their dotted path; omitted
/// optional fields take the SceneSpec defaults. Angles are radians.
inline SceneSpec scene_from_json(const json& doc) {
  using namespace detail;
  check_keys(doc, "", {"schema_version", "name", "geometry", "material", "light", "views", "image_size", "extent",
                       "noise_sigma", "model_violation"});
  check_version(doc, "scene");
  SceneSpec s;
  if (auto it = doc.find("name"); it != doc.end()) s.name = as_string(*it, "name");

  if (auto it = doc.find("geometry"); it != doc.end()) {
    const auto& g = *it;
    expect_object(g, "geometry");
    const auto type = as_string(required(g, "type", "geometry"), "geometry.type");
    if (type == "sphere") {
      check_keys(g, "geometry", {"type", "center", "radius"});
      Sphere sp;
      if (auto c = g.find("center"); c != g.end()) sp.center = as_vec3(*c, "geometry.center");
      sp.radius = number_or(g, "radius", "geometry", sp.radius);
      s.geometry = sp;
    } else if (type == "plane") {
      check_keys(g, "geometry", {"type", "normal", "offset"});
      Plane pl;
      if (auto nrm = g.find("normal"); nrm != g.end()) pl.normal = as_vec3(*nrm, "geometry.normal");
      pl.offset = number_or(g, "offset", "geometry", pl.offset);
      s.geometry = pl;
    } else {
      schema_fail("geometry.type", "unknown geometry '" + type + "'");
    }
  }

  if (auto it = doc.find("material"); it != doc.end()) {
    check_keys(*it, "material", {"n_true", "diffuse_albedo", "specular_strength", "specular_exponent"});
    auto& m = s.material;
    m.n_true = number_or(*it, "n_true", "material", m.n_true);
    if (auto t = it->find("diffuse_albedo"); t != it->end()) m.diffuse_albedo = texture_from_json(*t, "material.diffuse_albedo");
    if (auto t = it->find("specular_strength"); t != it->end()) {
      m.specular_strength = texture_from_json(*t, "material.specular_strength");
    }
    m.specular_exponent = number_or(*it, "specular_exponent", "material", m.specular_exponent);
  }

  if (auto it = doc.find("light"); it != doc.end()) {
    check_keys(*it, "light", {"direction", "intensity"});
    if (auto d = it->find("direction"); d != it->end()) s.light.direction = as_vec3(*d, "light.direction");
    s.light.intensity = number_or(*it, "intensity", "light", s.light.intensity);
  }

  const auto views = doc.find("views");
  if (views == doc.end() || !views->is_array() || views->empty()) schema_fail("views", "scene needs >= 1 view");
  for (std::size_t i = 0; i < views->size(); ++i) {
    const std::string path = "views[" + std::to_string(i) + "]";
    const auto& v = (*views)[i];
    check_keys(v, path, {"rotation", "polarizer_angles"});
    ViewSpec view;
    if (auto r = v.find("rotation"); r != v.end()) view.rotation = as_mat3(*r, path + ".rotation");
    if (auto a = v.find("polarizer_angles"); a != v.end()) view.polarizer_angles = as_numbers(*a, path + ".polarizer_angles");
    s.views.push_back(view);
  }

  if (auto it = doc.find("image_size"); it != doc.end()) {
    if (!it->is_array() || it->size() != 2) schema_fail("image_size", "expected [width, height]");
    s.width = as_int((*it)[0], "image_size[0]");
    s.height = as_int((*it)[1], "image_size[1]");
  }
  s.extent = number_or(doc, "extent", "", s.extent);
  s.noise_sigma = number_or(doc, "noise_sigma", "", s.noise_sigma);
  s.model_violation = number_or(doc, "model_violation", "", s.model_violation);

  try {
    validate(s);
  } catch (const Error& e) {
    throw Error(ErrorCode::SchemaError, e.what());
  }
  return s;
}

inline SceneSpec read_scene(const fs::path& path) {
  return scene_from_json(detail::parse_json(read_file(path), path.string()));
}

inline void write_scene(const fs::path& path, const SceneSpec& scene) {
  write_file(path, detail::dump(scene_to_json(scene)));
}

// ---------------------------------------------------------------- stacks

inline std::string stack_image_name(std::size_t view, std::size_t pol) {
  return "view" + std::to_string(view) + "_pol" + std::to_string(pol) + ".pfm";
}

/// Writes stacks.json plus one PFM per polarizer image; returns the files written.
inline std::vector<fs::path> write_stacks(const fs::path& dir, std::span<const PolarizedStack> stacks) {
  std::vector<fs::path> files;
  json doc;
  doc["schema_version"] = kSchemaVersion;
  doc["views"] = json::array();
  for (std::size_t k = 0; k < stacks.size(); ++k) {
    const auto& s = stacks[k];
    json names = json::array();
    for (std::size_t j = 0; j < s.images.size(); ++j) {
      const auto name = stack_image_name(k, j);
      write_pfm(dir / name, s.images[j]);
      files.push_back(dir / name);
      names.push_back(name);
    }
    doc["views"].push_back({{"view_index", s.view_index},
                            {"exposure_scale", s.exposure_scale},
                            {"rotation", detail::to_json(s.rotation)},
                            {"angles", s.angles},
                            {"images", names}});
  }
  write_file(dir / "stacks.json", detail::dump(doc));
  files.push_back(dir / "stacks.json");
  return files;
}

inline std::vector<PolarizedStack> read_stacks(const fs::path& dir) {
  using namespace detail;
  const auto doc = parse_json(read_file(dir / "stacks.json"), "stacks.json");
  check_keys(doc, "", {"schema_version", "views"});
  check_version(doc, "stacks");
  const auto& views = required(doc, "views", "");
  if (!views.is_array() || views.empty()) schema_fail("views", "expected >= 1 view");
  std::vector<PolarizedStack> out;
  for (std::size_t k = 0; k < views.size(); ++k) {
    const std::string path = "views[" + std::to_string(k) + "]";
    const auto& v = views[k];
    check_keys(v, path, {"view_index", "exposure_scale", "rotation", "angles", "images"});
    PolarizedStack s;
    s.view_index = as_int(required(v, "view_index", path), path + ".view_index");
    s.exposure_scale = number_or(v, "exposure_scale", path, 1.0);
    s.rotation = as_mat3(required(v, "rotation", path), path + ".rotation");
    s.angles = as_numbers(required(v, "angles", path), path + ".angles");
    const auto& names = required(v, "images", path);
    if (!names.is_array() || names.size() != s.angles.size()) {
      schema_fail(path + ".images", "need one image per polarizer angle");
    }
    for (std::size_t j = 0; j < names.size(); ++j) {
      const auto img = read_pfm(dir / as_string(names[j], path + ".images"));
      if (img.channels() != 1) schema_fail(path + ".images", "polarizer images must be single-channel");
      s.images.push_back(image_cast<double>(img));
    }
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------- correspondences

inline std::string correspondence_name(std::size_t r, std::size_t t) {
  return "corr_r" + std::to_string(r) + "_t" + std::to_string(t) + ".pfm";
}

/// correspondences.json plus one 3-channel PFM (x, y, valid) per ordered view pair.
inline std::vector<fs::path> write_correspondences(const fs::path& dir, const CorrespondenceMap& map) {
  std::vector<fs::path> files;
  json doc;
  doc["schema_version"] = kSchemaVersion;
  doc["width"] = map.width;
  doc["height"] = map.height;
  doc["views"] = map.view_count();
  doc["maps"] = json::array();
  for (std::size_t r = 0; r < map.view_count(); ++r) {
    for (std::size_t t = 0; t < map.view_count(); ++t) {
      const auto name = correspondence_name(r, t);
      write_pfm(dir / name, map.coords[r][t]);
      files.push_back(dir / name);
      doc["maps"].push_back({{"reference", r}, {"target", t}, {"file", name}});
    }
  }
  write_file(dir / "correspondences.json", detail::dump(doc));
  files.push_back(dir / "correspondences.json");
  return files;
}

inline CorrespondenceMap read_correspondences(const fs::path& dir) {
  using namespace detail;
  const auto doc = parse_json(read_file(dir / "correspondences.json"), "correspondences.json");
  check_keys(doc, "", {"schema_version", "width", "height", "views", "maps"});
  check_version(doc, "correspondences");
  CorrespondenceMap map;
  map.width = as_int(required(doc, "width", ""), "width");
  map.height = as_int(required(doc, "height", ""), "height");
  const int n = as_int(required(doc, "views", ""), "views");
  if (n < 1) schema_fail("views", "expected >= 1 view");
  map.coords.assign(static_cast<std::size_t>(n), std::vector<ImageD>(static_cast<std::size_t>(n)));
  const auto& maps = required(doc, "maps", "");
  if (!maps.is_array()) schema_fail("maps", "expected an array");
  for (std::size_t i = 0; i < maps.size(); ++i) {
    const std::string path = "maps[" + std::to_string(i) + "]";
    check_keys(maps[i], path, {"reference", "target", "file"});
    const int r = as_int(required(maps[i], "reference", path), path + ".reference");
    const int t = as_int(required(maps[i], "target", path), path + ".target");
    if (r < 0 || r >= n || t < 0 || t >= n) schema_fail(path, "view index out of range");
    auto img = image_cast<double>(read_pfm(dir / as_string(required(maps[i], "file", path), path + ".file")));
    if (img.channels() != 3 || !img.same_shape(map.width, map.height)) {
      schema_fail(path + ".file", "correspondence maps must be 3-channel and match width/height");
    }
    map.coords[static_cast<std::size_t>(r)][static_cast<std::size_t>(t)] = std::move(img);
  }
  for (std::size_t r = 0; r < map.coords.size(); ++r) {
    for (std::size_t t = 0; t < map.coords.size(); ++t) {
      if (map.coords[r][t].empty()) {
        schema_fail("maps", "missing map for reference " + std::to_string(r) + " target " + std::to_string(t));
      }
    }
  }
  return map;
}

// ---------------------------------------------------------------- ground truth and results

inline std::string view_file(std::size_t k, std::string_view what) {
  return "view" + std::to_string(k) + "_" + std::string(what) + ".pfm";
}

inline std::vector<fs::path> write_truth(const fs::path& dir, const GroundTruth& gt, double n_true) {
  std::vector<fs::path> files;
  for (std::size_t k = 0; k < gt.views.size(); ++k) {
    const auto& v = gt.views[k];
    const std::pair<const char*, const ImageD*> maps[] = {{"normals", &v.normals}, {"zenith", &v.zenith},
                                                          {"azimuth", &v.azimuth}, {"diffuse", &v.diffuse},
                                                          {"specular", &v.specular}, {"dop", &v.dop},
                                                          {"index", &v.index}};
    for (const auto& [name, img] : maps) {
      write_pfm(dir / view_file(k, name), *img);
      files.push_back(dir / view_file(k, name));
    }
    write_pfm(dir / view_file(k, "mask"), v.mask);
    files.push_back(dir / view_file(k, "mask"));
  }
  json doc{{"schema_version", kSchemaVersion}, {"views", gt.views.size()}, {"n_true", n_true}};
  write_file(dir / "truth.json", detail::dump(doc));
  files.push_back(dir / "truth.json");
  return files;
}

inline GroundTruth read_truth(const fs::path& dir) {
  using namespace detail;
  const auto doc = parse_json(read_file(dir / "truth.json"), "truth.json");
  check_keys(doc, "", {"schema_version", "views", "n_true"});
  check_version(doc, "truth");
  const int n = as_int(required(doc, "views", ""), "views");
  GroundTruth gt;
  for (int k = 0; k < n; ++k) {
    const auto kk = static_cast<std::size_t>(k);
    GroundTruthView v;
    v.normals = read_pfm_double(dir / view_file(kk, "normals"));
    v.zenith = read_pfm_double(dir / view_file(kk, "zenith"));
    v.azimuth = read_pfm_double(dir / view_file(kk, "azimuth"));
    v.diffuse = read_pfm_double(dir / view_file(kk, "diffuse"));
    v.specular = read_pfm_double(dir / view_file(kk, "specular"));
    v.dop = read_pfm_double(dir / view_file(kk, "dop"));
    v.index = read_pfm_double(dir / view_file(kk, "index"));
    v.mask = read_pfm_mask(dir / view_file(kk, "mask"));
    gt.views.push_back(std::move(v));
  }
  return gt;
}

inline json diagnostics_to_json(const Diagnostics& d) {
  return {{"foreground", d.foreground},
          {"converged", d.converged},
          {"max_iter", d.max_iter},
          {"degenerate", d.degenerate},
          {"failed", d.failed},
          {"no_correspondence", d.no_correspondence},
          {"out_of_range", d.out_of_range},
          {"clamped_fits", d.clamped_fits},
          {"inconsistent_zenith", d.inconsistent_zenith},
          {"degenerate_fraction", d.degenerate_fraction()},
          {"nonconverged_fraction", d.nonconverged_fraction()}};
}

/// Per-view maps plus result.json (mode, view count) and diagnostics.json.
/// `source_views` maps each result view to its index in the rendered set
/// (empty: identity).
inline std::vector<fs::path> write_result(const fs::path& dir, const PipelineResult& result, PipelineMode mode,
                                          std::vector<std::size_t> source_views = {}) {
  if (source_views.empty()) {
    for (std::size_t k = 0; k < result.views.size(); ++k) source_views.push_back(k);
  }
  if (source_views.size() != result.views.size()) throw Error(ErrorCode::ShapeMismatch, "one source index per view");
  std::vector<fs::path> files;
  for (std::size_t k = 0; k < result.views.size(); ++k) {
    const auto& v = result.views[k];
    const std::pair<const char*, const ImageD*> maps[] = {
        {"normals", &v.normals.normals}, {"zenith", &v.zenith},   {"azimuth", &v.azimuth}, {"intensity", &v.intensity},
        {"dop", &v.dop},                 {"diffuse", &v.diffuse}, {"index", &v.index}};
    for (const auto& [name, img] : maps) {
      write_pfm(dir / view_file(k, name), *img);
      files.push_back(dir / view_file(k, name));
    }
    const std::pair<const char*, const Mask*> masks[] = {{"mask", &v.normals.mask},
                                                         {"diffuse_mask", &v.diffuse_mask},
                                                         {"index_mask", &v.index_mask},
                                                         {"status", &v.status}};
    for (const auto& [name, img] : masks) {
      write_pfm(dir / view_file(k, name), *img);
      files.push_back(dir / view_file(k, name));
    }
  }
  json doc{{"schema_version", kSchemaVersion},
           {"views", result.views.size()},
           {"source_views", source_views},
           {"mode", to_string(mode)}};
  write_file(dir / "result.json", detail::dump(doc));
  files.push_back(dir / "result.json");
  write_file(dir / "diagnostics.json", detail::dump(diagnostics_to_json(result.diagnostics)));
  files.push_back(dir / "diagnostics.json");
  return files;
}

struct StoredResult {
  std::string mode;
  std::vector<std::size_t> source_views;
  std::vector<ViewEstimate> views;
};

inline StoredResult read_result(const fs::path& dir) {
  using namespace detail;
  const auto doc = parse_json(read_file(dir / "result.json"), "result.json");
  check_keys(doc, "", {"schema_version", "views", "source_views", "mode"});
  check_version(doc, "result");
  StoredResult out;
  out.mode = as_string(required(doc, "mode", ""), "mode");
  const int n = as_int(required(doc, "views", ""), "views");
  if (auto it = doc.find("source_views"); it != doc.end()) {
    if (!it->is_array() || it->size() != static_cast<std::size_t>(n)) {
      schema_fail("source_views", "expected one index per view");
    }
    for (std::size_t i = 0; i < it->size(); ++i) {
      const int v = as_int((*it)[i], "source_views[" + std::to_string(i) + "]");
      if (v < 0) schema_fail("source_views", "indices must be non-negative");
      out.source_views.push_back(static_cast<std::size_t>(v));
    }
  } else {
    for (int k = 0; k < n; ++k) out.source_views.push_back(static_cast<std::size_t>(k));
  }
  for (int k = 0; k < n; ++k) {
    const auto kk = static_cast<std::size_t>(k);
    ViewEstimate v;
    v.normals.normals = read_pfm_double(dir / view_file(kk, "normals"));
    v.normals.mask = read_pfm_mask(dir / view_file(kk, "mask"));
    v.zenith = read_pfm_double(dir / view_file(kk, "zenith"));
    v.azimuth = read_pfm_double(dir / view_file(kk, "azimuth"));
    v.intensity = read_pfm_double(dir / view_file(kk, "intensity"));
    v.dop = read_pfm_double(dir / view_file(kk, "dop"));
    v.diffuse = read_pfm_double(dir / view_file(kk, "diffuse"));
    v.diffuse_mask = read_pfm_mask(dir / view_file(kk, "diffuse_mask"));
    v.index = read_pfm_double(dir / view_file(kk, "index"));
    v.index_mask = read_pfm_mask(dir / view_file(kk, "index_mask"));
    const auto status = read_pfm(dir / view_file(kk, "status"));
    v.status = Mask(status.width(), status.height());
    for (std::size_t i = 0; i < status.data().size(); ++i) {
      v.status.data()[i] = static_cast<std::uint8_t>(status.data()[i]);
    }
    out.views.push_back(std::move(v));
  }
  return out;
}

// ---------------------------------------------------------------- metrics CSV

inline constexpr std::string_view kMetricsHeader = "scene,mode,normal_mse,angular_err_deg,index_mae,diffuse_rel_err";

struct MetricsRow {
  std::string scene;
  std::string mode;
  Metrics metrics;
};

/// Shortest-exact is not guaranteed by every libstdc++; 17 significant
/// digits always round-trips a double.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  std::array<char, 64> buf{};
  const auto [p, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v, std::chars_format::general, 17);
  return std::string(buf.data(), p);
}

inline double parse_double(std::string_view s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  double v = 0.0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) {
    throw Error(ErrorCode::SchemaError, "not a number in metrics CSV: '" + std::string(s) + "'");
  }
  return v;
}

inline std::string metrics_csv(std::span<const MetricsRow> rows) {
  std::string out(kMetricsHeader);
  out += '\n';
  for (const auto& r : rows) {
    if (r.scene.find_first_of(",\n") != std::string::npos || r.mode.find_first_of(",\n") != std::string::npos) {
      throw Error(ErrorCode::SchemaError, "scene and mode names must not contain commas or newlines");
    }
    out += r.scene + "," + r.mode + "," + format_double(r.metrics.normal_mse) + "," +
           format_double(r.metrics.mean_angular_error_deg) + "," + format_double(r.metrics.index_mae) + "," +
           format_double(r.metrics.diffuse_rel_error) + "\n";
  }
  return out;
}

inline std::vector<MetricsRow> parse_metrics_csv(std::string_view text) {
  std::vector<std::string_view> lines;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    lines.push_back(text.substr(0, nl));
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
  }
  if (lines.empty() || lines.front() != kMetricsHeader) throw Error(ErrorCode::SchemaError, "metrics CSV header mismatch");
  std::vector<MetricsRow> rows;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    std::vector<std::string_view> f;
    std::string_view rest = lines[i];
    for (;;) {
      const auto c = rest.find(',');
      f.push_back(rest.substr(0, c));
      if (c == std::string_view::npos) break;
      rest = rest.substr(c + 1);
    }
    if (f.size() != 6) throw Error(ErrorCode::SchemaError, "metrics CSV row " + std::to_string(i) + " needs 6 fields");
    MetricsRow r;
    r.scene = f[0];
    r.mode = f[1];
    r.metrics.normal_mse = parse_double(f[2]);
    r.metrics.mean_angular_error_deg = parse_double(f[3]);
    r.metrics.index_mae = parse_double(f[4]);
    r.metrics.diffuse_rel_error = parse_double(f[5]);
    rows.push_back(std::move(r));
  }
  return rows;
}

inline void write_metrics_csv(const fs::path& path, std::span<const MetricsRow> rows) {
  write_file(path, metrics_csv(rows));
}

inline std::vector<MetricsRow> read_metrics_csv(const fs::path& path) { return parse_metrics_csv(read_file(path)); }

}  // namespace polarsfp

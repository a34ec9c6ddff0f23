#pragma once

// Binary array container plus JSON manifest.
//
// Layout of the binary file (little-endian, as written by the host):
//   "ANILBIN1"                      8 bytes
//   u64 n_arrays
//   per array: u64 name_len, name bytes, u64 rows, u64 cols,
//              rows*cols f64 values in column-major order.

#include "anil/task_model.hpp"

#include <json.hpp>

#include <cstring>
#include <fstream>
#include <map>

namespace anil {

using Json = nlohmann::json;

class ArrayArchive {
 public:
  void put(const std::string& name, const Matrix& m) { arrays_[name] = m; }
  void put(const std::string& name, const Vector& v) { arrays_[name] = Matrix(v); }
  void put_scalar(const std::string& name, double x) { arrays_[name] = Matrix::Constant(1, 1, x); }

  bool has(const std::string& name) const { return arrays_.count(name) != 0; }

  const Matrix& get(const std::string& name) const {
    auto it = arrays_.find(name);
    if (it == arrays_.end()) throw Error("archive has no array named '" + name + "'");
    return it->second;
  }
  Vector get_vector(const std::string& name) const {
    const Matrix& m = get(name);
    if (m.cols() != 1) throw DimensionError("array '" + name + "' is not a column vector");
    return m.col(0);
  }
  double get_scalar(const std::string& name) const { return get(name)(0, 0); }

  const std::map<std::string, Matrix>& arrays() const { return arrays_; }

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot open '" + path + "' for writing");
    os.write("ANILBIN1", 8);
    write_u64(os, arrays_.size());
    for (const auto& [name, m] : arrays_) {
      write_u64(os, name.size());
      os.write(name.data(), static_cast<std::streamsize>(name.size()));
      write_u64(os, static_cast<std::uint64_t>(m.rows()));
      write_u64(os, static_cast<std::uint64_t>(m.cols()));
      os.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    }
    if (!os) throw Error("write failed for '" + path + "'");
  }

  static ArrayArchive load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot open '" + path + "'");
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, "ANILBIN1", 8) != 0) throw Error("'" + path + "' is not an array archive");
    ArrayArchive a;
    std::uint64_t n = read_u64(is);
    for (std::uint64_t i = 0; i < n; ++i) {
      std::string name(read_u64(is), '\0');
      is.read(name.data(), static_cast<std::streamsize>(name.size()));
      auto rows = static_cast<Index>(read_u64(is));
      auto cols = static_cast<Index>(read_u64(is));
      Matrix m(rows, cols);
      is.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
      if (!is) throw Error("truncated archive '" + path + "'");
      a.arrays_[name] = std::move(m);
    }
    return a;
  }

 private:
  static void write_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }
  static std::uint64_t read_u64(std::istream& is) {
    std::uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 8);
    if (!is) throw Error("truncated archive");
    return v;
  }

  std::map<std::string, Matrix> arrays_;
};

inline void put_ground_truth(ArrayArchive& a, const GroundTruth& gt) {
  a.put("gt.b_star", gt.b_star);
  a.put("gt.b_perp", gt.b_perp);
  a.put("gt.sigma_star", gt.sigma_star);
  a.put("gt.mu_star", gt.mu_star);
  a.put_scalar("gt.noise_var", gt.noise_var);
}

inline GroundTruth get_ground_truth(const ArrayArchive& a) {
  GroundTruth gt;
  gt.b_star = a.get("gt.b_star");
  gt.b_perp = a.get("gt.b_perp");
  gt.sigma_star = a.get("gt.sigma_star");
  gt.mu_star = a.get_vector("gt.mu_star");
  gt.noise_var = a.get_scalar("gt.noise_var");
  return gt;
}

inline void put_batch(ArrayArchive& a, const TaskBatch& b) {
  a.put("batch.x_in", Matrix(b.x_in));
  a.put("batch.y_in", b.y_in);
  a.put("batch.x_out", Matrix(b.x_out));
  a.put("batch.y_out", b.y_out);
  a.put("batch.w_star", b.w_star);
}

inline TaskBatch get_batch(const ArrayArchive& a) {
  TaskBatch b;
  b.x_in = a.get("batch.x_in");
  b.y_in = a.get_vector("batch.y_in");
  b.x_out = a.get("batch.x_out");
  b.y_out = a.get_vector("batch.y_out");
  b.w_star = a.get("batch.w_star");
  b.n_tasks = b.w_star.cols();
  b.m_in = b.x_in.rows() / b.n_tasks;
  b.m_out = b.x_out.rows() / b.n_tasks;
  return b;
}

/// Manifest describing an archive: array shapes plus caller-supplied metadata.
inline Json archive_manifest(const ArrayArchive& a, const Json& meta) {
  Json m = meta;
  Json shapes = Json::object();
  for (const auto& [name, arr] : a.arrays()) shapes[name] = {arr.rows(), arr.cols()};
  m["arrays"] = shapes;
  return m;
}

inline void write_json(const std::string& path, const Json& j) {
  std::ofstream os(path);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  os << j.dump(2) << "\n";
}

inline Json read_json(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open '" + path + "'");
  try {
    return Json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw PreconditionError("'" + path + "' is not valid JSON: " + e.what());
  }
}

}  // namespace anil

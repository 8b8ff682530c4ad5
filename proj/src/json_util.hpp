#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

#include "gridshield/error.hpp"

namespace gridshield::jsonio {

using nlohmann::json;

inline json matrix(const Eigen::MatrixXd& m) {
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  }
  return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

inline json vector(const Eigen::VectorXd& v) {
  return json(std::vector<double>(v.data(), v.data() + v.size()));
}

inline const json& field(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) {
    throw Error(ErrorCode::MalformedDocument, std::string("missing field '") + key + "'");
  }
  return j.at(key);
}

inline Eigen::MatrixXd to_matrix(const json& j) {
  try {
    const auto rows = field(j, "rows").get<Eigen::Index>();
    const auto cols = field(j, "cols").get<Eigen::Index>();
    const auto data = field(j, "data").get<std::vector<double>>();
    if (rows < 0 || cols < 0 || static_cast<Eigen::Index>(data.size()) != rows * cols) {
      throw Error(ErrorCode::MalformedDocument, "matrix data does not match its shape");
    }
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[static_cast<std::size_t>(r * cols + c)];
    }
    return m;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedDocument, e.what());
  }
}

inline Eigen::VectorXd to_vector(const json& j) {
  try {
    const auto data = j.get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(data.data(), static_cast<Eigen::Index>(data.size()));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedDocument, e.what());
  }
}

template <typename T>
T get(const json& j, const char* key) {
  try {
    return field(j, key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedDocument, std::string(key) + ": " + e.what());
  }
}

inline json parse(std::string_view text) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedDocument, e.what());
  }
}

inline void expect_schema(const json& j, const std::string& schema) {
  const auto tag = get<std::string>(j, "schema");
  if (tag != schema) {
    throw Error(ErrorCode::MalformedDocument,
                "expected schema '" + schema + "', found '" + tag + "'");
  }
}

}  // namespace gridshield::jsonio

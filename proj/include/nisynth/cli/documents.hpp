#pragma once

#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include <json.hpp>

#include "nisynth/errors.hpp"
#include "nisynth/matrix_core.hpp"
#include "nisynth/state_space.hpp"
#include "nisynth/synthesis.hpp"

namespace nisynth::cli {

using Json = nlohmann::ordered_json;

// Unreadable file, malformed JSON, missing or ill-shaped field.
class InputError : public DomainError {
 public:
  using DomainError::DomainError;
};

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError(path + ": cannot open file");
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw InputError(path + ": " + e.what());
  }
}

inline Mat matrix_from_json(const Json& value, const std::string& field) {
  if (!value.is_array() || value.empty())
    throw InputError("field \"" + field + "\": expected a non-empty array of rows");
  const auto rows = static_cast<Index>(value.size());
  Index cols = -1;
  Mat m;
  for (Index i = 0; i < rows; ++i) {
    const Json& row = value[static_cast<std::size_t>(i)];
    if (!row.is_array())
      throw InputError("field \"" + field + "\": row " + std::to_string(i + 1) + " is not an array");
    if (cols < 0) {
      cols = static_cast<Index>(row.size());
      if (cols == 0) throw InputError("field \"" + field + "\": empty row");
      m.resize(rows, cols);
    }
    if (static_cast<Index>(row.size()) != cols)
      throw InputError("field \"" + field + "\": row " + std::to_string(i + 1) +
                       " has a different length (matrix must be rectangular)");
    for (Index j = 0; j < cols; ++j) {
      const Json& x = row[static_cast<std::size_t>(j)];
      if (!x.is_number())
        throw InputError("field \"" + field + "\": entry (" + std::to_string(i + 1) + "," +
                         std::to_string(j + 1) + ") is not a number");
      m(i, j) = x.get<double>();
    }
  }
  return m;
}

inline Json matrix_to_json(const Mat& m) {
  Json rows = Json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Mat require_matrix(const Json& obj, const std::string& section, const std::string& field) {
  if (!obj.is_object() || !obj.contains(field))
    throw InputError("missing field \"" + field + "\" in \"" + section + "\"");
  return matrix_from_json(obj.at(field), section + "." + field);
}

inline Json require_section(const Json& doc, const std::string& section) {
  if (!doc.is_object() || !doc.contains(section) || !doc.at(section).is_object())
    throw InputError("missing object \"" + section + "\"");
  return doc.at(section);
}

inline void rethrow_as_input(const std::string& section, const DomainError& e) {
  throw InputError(section + ": " + e.what());
}

// ---------------------------------------------------------------------------
// Plant, system and controller sections
// ---------------------------------------------------------------------------

inline UncertainPlant plant_from_json(const Json& doc) {
  const Json s = require_section(doc, "plant");
  UncertainPlant p{require_matrix(s, "plant", "A"),  require_matrix(s, "plant", "B1"),
                   require_matrix(s, "plant", "B2"), require_matrix(s, "plant", "C1"),
                   require_matrix(s, "plant", "C2"), require_matrix(s, "plant", "D21")};
  try {
    validate(p);
  } catch (const DomainError& e) {
    rethrow_as_input("plant", e);
  }
  return p;
}

inline Json plant_to_json(const UncertainPlant& p) {
  Json s = Json::object();
  s["A"] = matrix_to_json(p.a);
  s["B1"] = matrix_to_json(p.b1);
  s["B2"] = matrix_to_json(p.b2);
  s["C1"] = matrix_to_json(p.c1);
  s["C2"] = matrix_to_json(p.c2);
  s["D21"] = matrix_to_json(p.d21);
  return s;
}

inline std::optional<SniUncertainty> uncertainty_from_json(const Json& doc) {
  if (!doc.contains("uncertainty")) return std::nullopt;
  const Json s = require_section(doc, "uncertainty");
  SniUncertainty u{require_matrix(s, "uncertainty", "A"), require_matrix(s, "uncertainty", "B"),
                   require_matrix(s, "uncertainty", "C"), require_matrix(s, "uncertainty", "D")};
  try {
    validate(StateSpace{u.a_d, u.b_d, u.c_d, u.d_d});
  } catch (const DomainError& e) {
    rethrow_as_input("uncertainty", e);
  }
  return u;
}

/// {"system": {"A", "B", "C", "D"}}; D defaults to zero.
inline StateSpace system_from_json(const Json& doc) {
  const Json s = require_section(doc, "system");
  StateSpace sys;
  sys.a = require_matrix(s, "system", "A");
  sys.b = require_matrix(s, "system", "B");
  sys.c = require_matrix(s, "system", "C");
  sys.d = s.contains("D") ? matrix_from_json(s.at("D"), "system.D")
                          : Mat(Mat::Zero(sys.c.rows(), sys.b.cols()));
  try {
    validate(sys);
  } catch (const DomainError& e) {
    rethrow_as_input("system", e);
  }
  return sys;
}

inline Json system_to_json(const StateSpace& sys) {
  Json s = Json::object();
  s["A"] = matrix_to_json(sys.a);
  s["B"] = matrix_to_json(sys.b);
  s["C"] = matrix_to_json(sys.c);
  s["D"] = matrix_to_json(sys.d);
  return s;
}

inline DynamicController controller_from_json(const Json& doc) {
  const Json s = require_section(doc, "controller");
  return DynamicController{require_matrix(s, "controller", "Ak"),
                           require_matrix(s, "controller", "Bk"),
                           require_matrix(s, "controller", "Ck")};
}

inline Json controller_to_json(const DynamicController& k) {
  Json s = Json::object();
  s["Ak"] = matrix_to_json(k.a_k);
  s["Bk"] = matrix_to_json(k.b_k);
  s["Ck"] = matrix_to_json(k.c_k);
  return s;
}

inline std::optional<Mat> optional_certificate(const Json& doc, const std::string& name) {
  if (!doc.contains("certificates") || !doc.at("certificates").is_object()) return std::nullopt;
  const Json& c = doc.at("certificates");
  if (!c.contains(name)) return std::nullopt;
  return matrix_from_json(c.at(name), "certificates." + name);
}

inline Json tolerances_to_json(const Tolerances& t) {
  Json j = Json::object();
  j["residual"] = t.residual;
  j["psd"] = t.psd;
  j["freq"] = t.freq;
  j["order"] = t.order;
  return j;
}

template <typename Map>
Json residuals_to_json(const Map& residuals) {
  Json j = Json::object();
  for (const auto& [name, value] : residuals) j[name] = value;
  return j;
}

/// Output of a full output-feedback synthesis.
inline Json controller_document(const UncertainPlant& p, const SynthesisReport& rep) {
  Json doc = Json::object();
  doc["plant"] = plant_to_json(p);
  doc["controller"] = controller_to_json(rep.controller);
  Json c = Json::object();
  c["P"] = matrix_to_json(rep.sf.p);
  c["Z"] = matrix_to_json(rep.oi.z);
  c["F"] = matrix_to_json(rep.sf.k);
  c["L"] = matrix_to_json(rep.oi.l);
  c["V"] = matrix_to_json(rep.vc.v);
  c["Sigma"] = matrix_to_json(rep.sigma);
  c["rho_zp"] = rep.rho_zp;
  c["residuals"] = residuals_to_json(rep.residuals());
  doc["certificates"] = std::move(c);
  doc["tolerances"] = tolerances_to_json(rep.tol);
  return doc;
}

/// Output of state-feedback-only synthesis.
inline Json state_feedback_document(const UncertainPlant& p, const StateFeedbackSolution& sf,
                                    const Tolerances& tol) {
  Json doc = Json::object();
  doc["plant"] = plant_to_json(p);
  Json s = Json::object();
  s["K"] = matrix_to_json(sf.k);
  doc["state_feedback"] = std::move(s);
  Json c = Json::object();
  c["P"] = matrix_to_json(sf.p);
  c["T"] = matrix_to_json(sf.t);
  c["S"] = matrix_to_json(sf.s);
  c["gap_min_eig"] = sf.ts.gap.min_eig;
  c["residuals"] = residuals_to_json(std::map<std::string, double>{{"condition_a", sf.residual_a.abs}});
  doc["certificates"] = std::move(c);
  doc["tolerances"] = tolerances_to_json(tol);
  return doc;
}

namespace detail {

inline bool is_flat_array(const Json& j) {
  if (!j.is_array()) return false;
  for (const Json& x : j)
    if (x.is_array() || x.is_object()) return false;
  return true;
}

inline void write_pretty(std::ostringstream& os, const Json& j, int depth) {
  const std::string pad(2 * static_cast<std::size_t>(depth + 1), ' ');
  const std::string close(2 * static_cast<std::size_t>(depth), ' ');
  if (j.is_object() && !j.empty()) {
    os << "{\n";
    std::size_t i = 0;
    for (const auto& [key, value] : j.items()) {
      os << pad << Json(key).dump() << ": ";
      write_pretty(os, value, depth + 1);
      os << (++i < j.size() ? ",\n" : "\n");
    }
    os << close << "}";
  } else if (j.is_array() && !j.empty() && !is_flat_array(j)) {
    os << "[\n";
    for (std::size_t i = 0; i < j.size(); ++i) {
      os << pad;
      write_pretty(os, j[i], depth + 1);
      os << (i + 1 < j.size() ? ",\n" : "\n");
    }
    os << close << "]";
  } else {
    os << j.dump();
  }
}

}  // namespace detail

/// Indented JSON with each matrix row on one line. Numbers use the shortest
/// representation that reads back to the same double.
inline std::string dump(const Json& j) {
  std::ostringstream os;
  detail::write_pretty(os, j, 0);
  os << "\n";
  return os.str();
}

}  // namespace nisynth::cli

#include "statexp/model_io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace statexp {

namespace {

using nlohmann::json;

std::string label_of(const json& value, const std::string& pointer) {
  if (value.is_string()) return value.get<std::string>();
  if (value.is_number_integer()) return std::to_string(value.get<long long>());
  throw SchemaError(pointer, "state labels must be strings or integers");
}

double number_at(const json& value, const std::string& pointer) {
  if (!value.is_number()) throw SchemaError(pointer, "expected a number");
  const double v = value.get<double>();
  if (!std::isfinite(v)) throw SchemaError(pointer, "expected a finite number");
  return v;
}

void reject_unknown_keys(const json& object, const std::string& pointer,
                         std::initializer_list<std::string_view> allowed) {
  for (auto it = object.begin(); it != object.end(); ++it) {
    bool ok = false;
    for (auto key : allowed) ok = ok || it.key() == key;
    if (!ok) throw SchemaError(pointer + "/" + it.key(), "unknown key");
  }
}

const json& require(const json& object, const std::string& key, const std::string& pointer) {
  const auto it = object.find(key);
  if (it == object.end()) throw SchemaError(pointer + "/" + key, "missing required key");
  return *it;
}

Index index_of(const std::map<std::string, Index>& index, const json& value, const std::string& pointer) {
  const auto label = label_of(value, pointer);
  const auto it = index.find(label);
  if (it == index.end()) throw SchemaError(pointer, "unknown state '" + label + "'");
  return it->second;
}

Vector state_map(const json& object, const std::map<std::string, Index>& index,
                 const std::string& pointer, bool require_all) {
  if (!object.is_object()) throw SchemaError(pointer, "expected an object keyed by state");
  Vector values = Vector::Zero(static_cast<Index>(index.size()));
  std::vector<char> seen(index.size(), 0);
  for (auto it = object.begin(); it != object.end(); ++it) {
    const auto found = index.find(it.key());
    if (found == index.end()) throw SchemaError(pointer + "/" + it.key(), "unknown state");
    values(found->second) = number_at(it.value(), pointer + "/" + it.key());
    seen[found->second] = 1;
  }
  if (require_all) {
    for (const auto& [label, i] : index)
      if (!seen[i]) throw SchemaError(pointer + "/" + label, "missing value for state");
  }
  return values;
}

}  // namespace

ModelFile parse_model(const json& doc) {
  if (!doc.is_object()) throw SchemaError("", "model document must be an object");
  reject_unknown_keys(doc, "", {"states", "beta", "epsilon", "energy", "base_rates", "forcing", "observables"});

  const json& states_json = require(doc, "states", "");
  if (!states_json.is_array()) throw SchemaError("/states", "expected an array");
  std::vector<std::string> states;
  std::map<std::string, Index> index;
  for (std::size_t i = 0; i < states_json.size(); ++i) {
    const std::string ptr = "/states/" + std::to_string(i);
    auto label = label_of(states_json[i], ptr);
    if (!index.emplace(label, static_cast<Index>(i)).second) throw SchemaError(ptr, "duplicate state label");
    states.push_back(std::move(label));
  }
  const Index n = static_cast<Index>(states.size());

  const double beta = number_at(require(doc, "beta", ""), "/beta");
  const double epsilon = number_at(require(doc, "epsilon", ""), "/epsilon");
  const Vector energy = state_map(require(doc, "energy", ""), index, "/energy", true);

  Matrix rates = Matrix::Zero(n, n);
  std::set<std::pair<Index, Index>> rate_seen;
  const json& rates_json = require(doc, "base_rates", "");
  if (!rates_json.is_array()) throw SchemaError("/base_rates", "expected an array");
  for (std::size_t i = 0; i < rates_json.size(); ++i) {
    const std::string ptr = "/base_rates/" + std::to_string(i);
    const json& entry = rates_json[i];
    if (!entry.is_object()) throw SchemaError(ptr, "expected an object");
    reject_unknown_keys(entry, ptr, {"from", "to", "rate"});
    const Index x = index_of(index, require(entry, "from", ptr), ptr + "/from");
    const Index y = index_of(index, require(entry, "to", ptr), ptr + "/to");
    if (x == y) throw SchemaError(ptr, "self transitions are not allowed");
    if (!rate_seen.emplace(x, y).second) throw SchemaError(ptr, "duplicate rate entry");
    const double r = number_at(require(entry, "rate", ptr), ptr + "/rate");
    if (r < 0.0) throw SchemaError(ptr + "/rate", "rates must be nonnegative");
    rates(x, y) = r;
  }

  Matrix forcing = Matrix::Zero(n, n);
  std::map<std::pair<Index, Index>, double> forcing_seen;
  if (const auto it = doc.find("forcing"); it != doc.end()) {
    if (!it->is_array()) throw SchemaError("/forcing", "expected an array");
    for (std::size_t i = 0; i < it->size(); ++i) {
      const std::string ptr = "/forcing/" + std::to_string(i);
      const json& entry = (*it)[i];
      if (!entry.is_object()) throw SchemaError(ptr, "expected an object");
      reject_unknown_keys(entry, ptr, {"from", "to", "value"});
      const Index x = index_of(index, require(entry, "from", ptr), ptr + "/from");
      const Index y = index_of(index, require(entry, "to", ptr), ptr + "/to");
      if (x == y) throw SchemaError(ptr, "forcing on a self transition");
      const double v = number_at(require(entry, "value", ptr), ptr + "/value");
      auto check = [&](Index a, Index b, double value) {
        const auto [pos, inserted] = forcing_seen.emplace(std::make_pair(a, b), value);
        if (!inserted && pos->second != value)
          throw SchemaError(ptr, "contradicts an earlier forcing entry for (" + states[a] + ", " + states[b] + ")");
      };
      check(x, y, v);
      check(y, x, -v);
      forcing(x, y) = v;
      forcing(y, x) = -v;
    }
  }

  ModelFile file{JumpModel(states, energy, beta, rates, forcing, epsilon), std::nullopt, std::nullopt};
  if (const auto it = doc.find("observables"); it != doc.end()) {
    if (!it->is_object()) throw SchemaError("/observables", "expected an object");
    reject_unknown_keys(*it, "/observables", {"V", "Q"});
    if (it->contains("V")) file.potential = state_map(it->at("V"), index, "/observables/V", true);
    if (it->contains("Q")) file.observable = state_map(it->at("Q"), index, "/observables/Q", true);
  }
  return file;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

ModelFile load_model_file(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw SchemaError("", std::string("invalid JSON: ") + e.what());
  }
  return parse_model(doc);
}

json model_to_json(const JumpModel& model) {
  json doc = json::object();
  const auto& states = model.states();
  doc["states"] = states;
  doc["beta"] = model.beta();
  doc["epsilon"] = model.epsilon();
  json energy = json::object();
  for (Index x = 0; x < model.size(); ++x) energy[states[x]] = model.energy()(x);
  doc["energy"] = energy;
  json rates = json::array();
  json forcing = json::array();
  for (Index x = 0; x < model.size(); ++x) {
    for (Index y = 0; y < model.size(); ++y) {
      if (x == y) continue;
      if (model.base_rates()(x, y) > 0.0)
        rates.push_back({{"from", states[x]}, {"to", states[y]}, {"rate", model.base_rates()(x, y)}});
      if (y > x && model.forcing()(x, y) != 0.0)
        forcing.push_back({{"from", states[x]}, {"to", states[y]}, {"value", model.forcing()(x, y)}});
    }
  }
  doc["base_rates"] = rates;
  doc["forcing"] = forcing;
  return doc;
}

std::string content_hash(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char out[17];
  std::snprintf(out, sizeof out, "%016llx", static_cast<unsigned long long>(h));
  return out;
}

}  // namespace statexp

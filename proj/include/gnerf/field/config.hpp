#pragma once

#include <gnerf/core/types.hpp>

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

namespace gnerf::field {

enum class Routing { hindsight, foresight };

inline std::string to_string(Routing r) { return r == Routing::hindsight ? "hindsight" : "foresight"; }

inline Routing parse_routing(const std::string& s) {
  if (s == "hindsight" || s == "gumbel") return Routing::hindsight;
  if (s == "foresight" || s == "gate") return Routing::foresight;
  throw ContractError("unknown routing '" + s + "'");
}

/// Architecture of a mixture-of-experts field. Serialized as `key = value` lines.
struct ModelConfig {
  int experts = 4;
  int expert_hidden = 64;
  int expert_layers = 4;  // dense layers in each expert, including the output layer
  int feature_width = 64;
  int head_hidden = 64;
  int shape_code = 32;
  int texture_code = 32;
  int expert_code = 16;
  int pos_frequencies = 6;
  int dir_frequencies = 4;
  double sigma_floor = 1e-6;
  Routing routing = Routing::hindsight;
  int gate_hidden = 32;
  double balance_weight = 0.01;  // foresight only

  int encoded_position_width() const { return 3 + 6 * pos_frequencies; }
  int encoded_direction_width() const { return 3 + 6 * dir_frequencies; }
  int expert_input_width() const { return encoded_position_width() + expert_code; }
  int head_input_width() const { return feature_width + encoded_direction_width() + texture_code; }
  int gate_input_width() const { return encoded_position_width() + shape_code; }

  void validate() const {
    require(experts >= 1, "config: experts must be >= 1");
    require(expert_hidden >= 1 && expert_layers >= 1 && feature_width >= 1 && head_hidden >= 1,
            "config: widths must be positive");
    require(shape_code >= 1 && texture_code >= 0 && expert_code >= 1, "config: code sizes must be positive");
    require(pos_frequencies >= 0 && dir_frequencies >= 0, "config: frequencies must be >= 0");
    require(sigma_floor > 0, "config: sigma_floor must be > 0");
    require(gate_hidden >= 1, "config: gate_hidden must be >= 1");
  }

  std::string to_text() const {
    std::ostringstream os;
    os.precision(17);
    os << "experts = " << experts << "\n"
       << "expert_hidden = " << expert_hidden << "\n"
       << "expert_layers = " << expert_layers << "\n"
       << "feature_width = " << feature_width << "\n"
       << "head_hidden = " << head_hidden << "\n"
       << "shape_code = " << shape_code << "\n"
       << "texture_code = " << texture_code << "\n"
       << "expert_code = " << expert_code << "\n"
       << "pos_frequencies = " << pos_frequencies << "\n"
       << "dir_frequencies = " << dir_frequencies << "\n"
       << "sigma_floor = " << sigma_floor << "\n"
       << "routing = " << to_string(routing) << "\n"
       << "gate_hidden = " << gate_hidden << "\n"
       << "balance_weight = " << balance_weight << "\n";
    return os.str();
  }

  static ModelConfig from_text(const std::string& text) {
    ModelConfig c;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const auto eq = line.find('=');
      auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
      };
      if (trim(line).empty()) continue;
      if (eq == std::string::npos) throw ContractError("config line " + std::to_string(lineno) + ": expected key = value");
      const std::string key = trim(line.substr(0, eq));
      const std::string val = trim(line.substr(eq + 1));
      try {
        if (key == "experts") c.experts = std::stoi(val);
        else if (key == "expert_hidden") c.expert_hidden = std::stoi(val);
        else if (key == "expert_layers") c.expert_layers = std::stoi(val);
        else if (key == "feature_width") c.feature_width = std::stoi(val);
        else if (key == "head_hidden") c.head_hidden = std::stoi(val);
        else if (key == "shape_code") c.shape_code = std::stoi(val);
        else if (key == "texture_code") c.texture_code = std::stoi(val);
        else if (key == "expert_code") c.expert_code = std::stoi(val);
        else if (key == "pos_frequencies") c.pos_frequencies = std::stoi(val);
        else if (key == "dir_frequencies") c.dir_frequencies = std::stoi(val);
        else if (key == "sigma_floor") c.sigma_floor = std::stod(val);
        else if (key == "routing") c.routing = parse_routing(val);
        else if (key == "gate_hidden") c.gate_hidden = std::stoi(val);
        else if (key == "balance_weight") c.balance_weight = std::stod(val);
        else throw ContractError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
      } catch (const std::logic_error& e) {
        if (dynamic_cast<const ContractError*>(&e)) throw;
        throw ContractError("config line " + std::to_string(lineno) + ": bad value '" + val + "' for " + key);
      }
    }
    c.validate();
    return c;
  }

  static ModelConfig load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config '" + path + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return from_text(ss.str());
  }

  bool operator==(const ModelConfig&) const = default;
};

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace gnerf::field

#pragma once

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "modelchat/omif.hpp"

namespace testing {

inline std::string dataset_path(const std::string& rel) {
  return std::string(MODELCHAT_DATASET_DIR) + "/" + rel;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline modelchat::ModelIR parse_or_throw(const std::string& text) {
  auto res = modelchat::parse_model(text);
  if (!res.model) {
    std::string msg;
    for (const auto& d : res.diagnostics) msg += d.to_string() + "\n";
    throw std::runtime_error("parse failed:\n" + msg);
  }
  return *res.model;
}

inline modelchat::ModelIR load_model(const std::string& name) {
  return parse_or_throw(read_file(dataset_path("models/" + name + ".omif")));
}

inline modelchat::ModelIR load_fixture(const std::string& name) {
  return parse_or_throw(read_file(std::string(MODELCHAT_FIXTURE_DIR) + "/" + name + ".omif"));
}

inline const char* const kBundledModels[] = {"prod", "infprod", "supply", "knapsack", "infknap", "facility"};

}  // namespace testing

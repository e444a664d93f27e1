// Regenerates dataset/queries/*.gold and dataset/stubs/gold.stub from the
// item sources in dataset/sources/items.jsonl. Facts and canonical forms are
// computed by calling the tools directly.
//
//   modelchat_build_dataset <dataset-dir>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "modelchat/eval.hpp"
#include "modelchat/text.hpp"

namespace fs = std::filesystem;
using namespace modelchat;

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: " << argv[0] << " <dataset-dir>\n";
    return 2;
  }
  const fs::path dir = argv[1];
  try {
    Dataset data = load_dataset(dir);
    std::ifstream in(dir / "sources" / "items.jsonl");
    if (!in) throw std::runtime_error("cannot open " + (dir / "sources" / "items.jsonl").string());
    std::vector<Json> sources;
    std::string line;
    while (std::getline(in, line)) {
      if (!trim(line).empty() && trim(line)[0] != '#') sources.push_back(Json::parse(line));
    }
    BuiltDataset built = build_gold(data.models, sources);

    std::map<std::string, std::vector<const GoldQuery*>> by_model;
    for (const auto& g : built.items) by_model[g.model].push_back(&g);
    fs::create_directories(dir / "queries");
    for (const auto& old : fs::directory_iterator(dir / "queries")) {
      if (old.path().extension() == ".gold") fs::remove(old.path());
    }
    for (const auto& [model, items] : by_model) {
      std::ofstream out(dir / "queries" / (model + ".gold"));
      for (const auto* g : items) out << g->to_json().dump() << "\n";
    }
    fs::create_directories(dir / "stubs");
    std::ofstream stub(dir / "stubs" / "gold.stub");
    stub << "# Scripted replies that reproduce the gold behavior of every item in queries/.\n";
    stub << "# Regenerate with modelchat_build_dataset; do not edit by hand.\n";
    for (const auto& l : built.stub_lines) stub << l.dump() << "\n";
    std::cout << built.items.size() << " items over " << by_model.size() << " models, " << built.stub_lines.size()
              << " stub lines\n";
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

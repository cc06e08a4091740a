#include "lethe/data.hpp"

#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "lethe/influence.hpp"
#include "lethe/weighting.hpp"

namespace lethe {

using nlohmann::json;

const char* to_string(Category c) {
  switch (c) {
    case Category::qa: return "qa";
    case Category::classification: return "classification";
    case Category::summarization: return "summarization";
  }
  return "qa";
}

Category category_from_string(const std::string& s) {
  if (s == "qa") return Category::qa;
  if (s == "classification") return Category::classification;
  if (s == "summarization") return Category::summarization;
  throw InputError("unknown category: " + s);
}

std::string example_to_json(const Example& e) {
  json j;
  j["id"] = e.id;
  j["instruction"] = e.instruction;
  j["context"] = e.context;
  j["response_clean"] = e.response_clean;
  j["response_poisoned"] = e.response_poisoned;
  j["category"] = to_string(e.category);
  j["trigger_family"] = e.trigger_family;
  j["trigger_variant"] = e.trigger_variant;
  j["split"] = e.split;
  j["instruction_clean"] = e.instruction_clean;
  return j.dump();
}

Example example_from_json(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& err) {
    throw InputError(std::string("malformed example record: ") + err.what());
  }
  Example e;
  e.id = j.at("id").get<std::string>();
  e.instruction = j.at("instruction").get<std::string>();
  e.context = j.value("context", "");
  e.response_clean = j.at("response_clean").get<std::string>();
  e.response_poisoned = j.value("response_poisoned", "");
  e.category = category_from_string(j.at("category").get<std::string>());
  e.trigger_family = j.value("trigger_family", "");
  e.trigger_variant = j.value("trigger_variant", "");
  e.split = j.value("split", "");
  e.instruction_clean = j.value("instruction_clean", "");
  return e;
}

void write_examples_jsonl(const std::string& path, const std::vector<Example>& v) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path);
  for (const auto& e : v) out << example_to_json(e) << '\n';
}

std::vector<Example> read_examples_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read " + path);
  std::vector<Example> v;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    v.push_back(example_from_json(line));
  }
  return v;
}

namespace {
const char* kSplitFiles[6] = {"train_poisoned",    "train_clean",
                              "val_clean",         "test_clean",
                              "test_seen_trigger", "test_ood_trigger"};

std::vector<Example>* split_field(DatasetSplits& s, int i) {
  switch (i) {
    case 0: return &s.train_poisoned;
    case 1: return &s.train_clean;
    case 2: return &s.val_clean;
    case 3: return &s.test_clean;
    case 4: return &s.test_seen;
    default: return &s.test_ood;
  }
}
}  // namespace

void write_splits(const std::string& dir, const DatasetSplits& s) {
  std::filesystem::create_directories(dir);
  DatasetSplits& mut = const_cast<DatasetSplits&>(s);
  for (int i = 0; i < 6; ++i)
    write_examples_jsonl(dir + "/" + kSplitFiles[i] + ".jsonl",
                         *split_field(mut, i));
}

DatasetSplits read_splits(const std::string& dir) {
  DatasetSplits s;
  for (int i = 0; i < 6; ++i)
    *split_field(s, i) = read_examples_jsonl(dir + "/" + kSplitFiles[i] + ".jsonl");
  return s;
}

void write_pack(const std::string& dir, const UnlearnPack& p) {
  std::filesystem::create_directories(dir);
  write_examples_jsonl(dir + "/forget.jsonl", p.forget);
  write_examples_jsonl(dir + "/forget_clean.jsonl", p.forget_clean);
  write_examples_jsonl(dir + "/retain.jsonl", p.retain);
  json meta;
  meta["forget_fraction"] = p.forget_fraction;
  meta["ratio_k"] = p.ratio_k;
  meta["stratified"] = p.stratified;
  std::ofstream out(dir + "/pack_meta.json", std::ios::binary);
  out << meta.dump(2) << '\n';
}

UnlearnPack read_pack(const std::string& dir) {
  UnlearnPack p;
  p.forget = read_examples_jsonl(dir + "/forget.jsonl");
  p.forget_clean = read_examples_jsonl(dir + "/forget_clean.jsonl");
  p.retain = read_examples_jsonl(dir + "/retain.jsonl");
  std::ifstream in(dir + "/pack_meta.json", std::ios::binary);
  if (!in) throw InputError("cannot read " + dir + "/pack_meta.json");
  json meta = json::parse(in);
  p.forget_fraction = meta.at("forget_fraction").get<double>();
  p.ratio_k = meta.at("ratio_k").get<int>();
  p.stratified = meta.at("stratified").get<bool>();
  if (p.forget.size() != p.forget_clean.size())
    throw InputError("forget and forget_clean sizes differ");
  for (std::size_t i = 0; i < p.forget.size(); ++i)
    if (p.forget[i].id != p.forget_clean[i].id)
      throw InputError("forget_clean not aligned by id at index " +
                       std::to_string(i));
  return p;
}

// --------------------------------------------------------------------------
// influence dump: one header record, then one record per matrix

namespace {
json matrix_record(const char* name, const Matd& m) {
  json j;
  j["type"] = "matrix";
  j["name"] = name;
  j["rows"] = m.rows();
  j["cols"] = m.cols();
  std::vector<double> data;
  data.reserve(m.size());
  for (long i = 0; i < m.rows(); ++i)
    for (long c = 0; c < m.cols(); ++c) data.push_back(m(i, c));
  j["data"] = std::move(data);
  return j;
}

Matd matrix_from_record(const json& j) {
  long rows = j.at("rows").get<long>();
  long cols = j.at("cols").get<long>();
  auto data = j.at("data").get<std::vector<double>>();
  if (static_cast<long>(data.size()) != rows * cols)
    throw InputError("influence matrix record has wrong element count");
  Matd m(rows, cols);
  long k = 0;
  for (long i = 0; i < rows; ++i)
    for (long c = 0; c < cols; ++c) m(i, c) = data[k++];
  return m;
}
}  // namespace

void write_influence_dump(const std::string& path, const InfluenceMatrices& m,
                          double epsilon, const ProjectionConfig& proj) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path);
  json header;
  header["type"] = "header";
  header["n_forget"] = m.forget_ids.size();
  header["n_retain"] = m.retain_ids.size();
  header["forget_ids"] = m.forget_ids;
  header["retain_ids"] = m.retain_ids;
  header["epsilon"] = epsilon;
  header["projection"] =
      proj.mode == ProjectionConfig::Mode::none ? "none" : "sign";
  header["projection_dim"] = proj.dim;
  header["projection_seed"] = proj.seed;
  out << header.dump() << '\n';
  out << matrix_record("ff", m.ff).dump() << '\n';
  out << matrix_record("fr", m.fr).dump() << '\n';
  out << matrix_record("rf", m.rf).dump() << '\n';
  out << matrix_record("rr", m.rr).dump() << '\n';
}

InfluenceMatrices read_influence_dump(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read " + path);
  InfluenceMatrices m;
  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    std::string type = j.at("type").get<std::string>();
    if (type == "header") {
      m.forget_ids = j.at("forget_ids").get<std::vector<std::string>>();
      m.retain_ids = j.at("retain_ids").get<std::vector<std::string>>();
      have_header = true;
    } else if (type == "matrix") {
      std::string name = j.at("name").get<std::string>();
      if (name == "ff") m.ff = matrix_from_record(j);
      else if (name == "fr") m.fr = matrix_from_record(j);
      else if (name == "rf") m.rf = matrix_from_record(j);
      else if (name == "rr") m.rr = matrix_from_record(j);
      else throw InputError("unknown influence matrix: " + name);
    }
  }
  if (!have_header) throw InputError("influence dump missing header: " + path);
  if (m.ff.rows() != static_cast<long>(m.forget_ids.size()) ||
      m.rr.rows() != static_cast<long>(m.retain_ids.size()))
    throw InputError("influence dump shapes disagree with id lists");
  return m;
}

// --------------------------------------------------------------------------
// weight table

void write_weight_table(const std::string& path, const WeightTable& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path);
  json header;
  header["type"] = "header";
  header["provenance"] = t.provenance;
  header["n_forget"] = t.forget_ids.size();
  header["n_retain"] = t.retain_ids.size();
  out << header.dump() << '\n';
  for (std::size_t i = 0; i < t.forget_ids.size(); ++i) {
    json j{{"set", "forget"}, {"id", t.forget_ids[i]}, {"weight", t.forget[i]}};
    out << j.dump() << '\n';
  }
  for (std::size_t i = 0; i < t.retain_ids.size(); ++i) {
    json j{{"set", "retain"}, {"id", t.retain_ids[i]}, {"weight", t.retain[i]}};
    out << j.dump() << '\n';
  }
}

WeightTable read_weight_table(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read " + path);
  WeightTable t;
  std::vector<double> wf, wr;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    std::string type = j.value("type", "row");
    if (type == "header") {
      t.provenance = j.at("provenance").get<std::string>();
      continue;
    }
    std::string set = j.at("set").get<std::string>();
    if (set == "forget") {
      t.forget_ids.push_back(j.at("id").get<std::string>());
      wf.push_back(j.at("weight").get<double>());
    } else if (set == "retain") {
      t.retain_ids.push_back(j.at("id").get<std::string>());
      wr.push_back(j.at("weight").get<double>());
    } else {
      throw InputError("unknown weight set: " + set);
    }
  }
  t.forget = Eigen::Map<Vecd>(wf.data(), static_cast<long>(wf.size()));
  t.retain = Eigen::Map<Vecd>(wr.data(), static_cast<long>(wr.size()));
  return t;
}

}  // namespace lethe

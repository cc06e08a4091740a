#include "lethe/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

#include "lethe/sha256.hpp"

namespace lethe {

namespace {

constexpr char kMagic[8] = {'L', 'E', 'T', 'H', 'E', 'T', 'S', '1'};

void put_u32(std::ofstream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<char*>(b), 4);
}

std::uint32_t get_u32(std::ifstream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) |
         (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
}

}  // namespace

void write_tensor_file(const std::string& path,
                       const std::vector<std::pair<std::string, Matf>>& tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path);
  out.write(kMagic, 8);
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, m] : tensors) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(out, static_cast<std::uint32_t>(m.rows()));
    put_u32(out, static_cast<std::uint32_t>(m.cols()));
    for (long i = 0; i < m.rows(); ++i)
      for (long j = 0; j < m.cols(); ++j) {
        float v = m(i, j);
        out.write(reinterpret_cast<const char*>(&v), 4);
      }
  }
  if (!out) throw InputError("short write to " + path);
}

std::vector<std::pair<std::string, Matf>> read_tensor_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    throw InputError("not a tensor file: " + path);
  std::uint32_t n = get_u32(in);
  std::vector<std::pair<std::string, Matf>> out;
  out.reserve(n);
  for (std::uint32_t t = 0; t < n; ++t) {
    std::uint32_t name_len = get_u32(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    std::uint32_t rows = get_u32(in), cols = get_u32(in);
    Matf m(rows, cols);
    for (std::uint32_t i = 0; i < rows; ++i)
      for (std::uint32_t j = 0; j < cols; ++j) {
        float v;
        in.read(reinterpret_cast<char*>(&v), 4);
        m(i, j) = v;
      }
    if (!in) throw InputError("truncated tensor file: " + path);
    out.emplace_back(std::move(name), std::move(m));
  }
  return out;
}

std::string backbone_digest(const BackboneParams<float>& bb) {
  Vecf flat = flatten(bb);
  return sha256_hex(flat.data(), static_cast<std::size_t>(flat.size()) * 4);
}

std::string adapters_digest(const AdapterSet<float>& a) {
  Vecf flat = flatten(a);
  return sha256_hex(flat.data(), static_cast<std::size_t>(flat.size()) * 4);
}

namespace {

std::vector<std::pair<std::string, Matf>> backbone_tensors(
    const BackboneParams<float>& bb) {
  std::vector<std::pair<std::string, Matf>> t;
  t.emplace_back("tok_embed", bb.tok_embed);
  t.emplace_back("pos_embed", bb.pos_embed);
  for (std::size_t l = 0; l < bb.layers.size(); ++l) {
    const auto& lp = bb.layers[l];
    std::string p = "layer" + std::to_string(l) + ".";
    t.emplace_back(p + "ln1.gain", lp.ln1.gain);
    t.emplace_back(p + "ln1.bias", lp.ln1.bias);
    t.emplace_back(p + "wq", lp.wq);
    t.emplace_back(p + "wk", lp.wk);
    t.emplace_back(p + "wv", lp.wv);
    t.emplace_back(p + "wo", lp.wo);
    t.emplace_back(p + "ln2.gain", lp.ln2.gain);
    t.emplace_back(p + "ln2.bias", lp.ln2.bias);
    t.emplace_back(p + "w1", lp.w1);
    t.emplace_back(p + "w2", lp.w2);
  }
  t.emplace_back("ln_f.gain", bb.ln_f.gain);
  t.emplace_back("ln_f.bias", bb.ln_f.bias);
  t.emplace_back("head", bb.head);
  return t;
}

void write_json_file(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path);
  out << j.dump(2) << '\n';
}

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read " + path);
  return nlohmann::json::parse(in);
}

void write_vocab_file(const std::string& path, const Vocabulary& v) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path);
  out << v.to_json() << '\n';
}

Vocabulary read_vocab_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read " + path);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return Vocabulary::from_json(text);
}

TransformerConfig config_from_manifest(const nlohmann::json& m) {
  const auto& j = m.at("model");
  TransformerConfig c;
  c.n_layers = j.at("n_layers").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.d_ff = j.at("d_ff").get<int>();
  c.max_seq_len = j.at("max_seq_len").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  return c;
}

}  // namespace

void save_backbone(const std::string& dir, const BackboneParams<float>& bb,
                   const Vocabulary& vocab, const nlohmann::json& manifest) {
  std::filesystem::create_directories(dir);
  write_tensor_file(dir + "/backbone.bin", backbone_tensors(bb));
  write_vocab_file(dir + "/vocab.json", vocab);
  nlohmann::json m = manifest;
  m["model"] = {{"n_layers", bb.cfg.n_layers},   {"d_model", bb.cfg.d_model},
                {"n_heads", bb.cfg.n_heads},     {"d_ff", bb.cfg.d_ff},
                {"max_seq_len", bb.cfg.max_seq_len},
                {"vocab_size", bb.cfg.vocab_size}};
  m["backbone_digest"] = backbone_digest(bb);
  write_json_file(dir + "/manifest.json", m);
}

BackboneArtifact load_backbone(const std::string& dir) {
  BackboneArtifact art;
  art.manifest = read_json_file(dir + "/manifest.json");
  art.vocab = read_vocab_file(dir + "/vocab.json");
  TransformerConfig cfg = config_from_manifest(art.manifest);
  auto tensors = read_tensor_file(dir + "/backbone.bin");
  std::size_t idx = 0;
  auto take = [&](const std::string& name) -> Matf {
    if (idx >= tensors.size() || tensors[idx].first != name)
      throw InputError("backbone tensor order mismatch at " + name);
    return std::move(tensors[idx++].second);
  };
  BackboneParams<float>& bb = art.backbone;
  bb.cfg = cfg;
  bb.tok_embed = take("tok_embed");
  bb.pos_embed = take("pos_embed");
  bb.layers.resize(cfg.n_layers);
  for (int l = 0; l < cfg.n_layers; ++l) {
    std::string p = "layer" + std::to_string(l) + ".";
    auto& lp = bb.layers[l];
    lp.ln1.gain = take(p + "ln1.gain");
    lp.ln1.bias = take(p + "ln1.bias");
    lp.wq = take(p + "wq");
    lp.wk = take(p + "wk");
    lp.wv = take(p + "wv");
    lp.wo = take(p + "wo");
    lp.ln2.gain = take(p + "ln2.gain");
    lp.ln2.bias = take(p + "ln2.bias");
    lp.w1 = take(p + "w1");
    lp.w2 = take(p + "w2");
  }
  bb.ln_f.gain = take("ln_f.gain");
  bb.ln_f.bias = take("ln_f.bias");
  bb.head = take("head");
  std::string expect = art.manifest.value("backbone_digest", "");
  if (!expect.empty() && backbone_digest(bb) != expect)
    throw InputError("backbone digest mismatch in " + dir);
  return art;
}

void save_checkpoint(const std::string& dir, const AdapterSet<float>& adapters,
                     const Vocabulary& vocab, const nlohmann::json& manifest) {
  std::filesystem::create_directories(dir);
  std::vector<std::pair<std::string, Matf>> t;
  for (std::size_t l = 0; l < adapters.layers.size(); ++l)
    for (int s = 0; s < kNumSites; ++s) {
      std::string p = "layer" + std::to_string(l) + "." + kSiteNames[s];
      t.emplace_back(p + ".down", adapters.layers[l][s].down);
      t.emplace_back(p + ".up", adapters.layers[l][s].up);
    }
  write_tensor_file(dir + "/adapters.bin", t);
  write_vocab_file(dir + "/vocab.json", vocab);
  nlohmann::json m = manifest;
  m["lora"] = {{"rank", adapters.cfg.rank},
               {"alpha", adapters.cfg.alpha},
               {"dropout", adapters.cfg.dropout}};
  m["adapters_digest"] = adapters_digest(adapters);
  write_json_file(dir + "/manifest.json", m);
}

CheckpointBundle load_checkpoint(const std::string& dir,
                                 const TransformerConfig& cfg) {
  CheckpointBundle b;
  b.manifest = read_json_file(dir + "/manifest.json");
  b.vocab = read_vocab_file(dir + "/vocab.json");
  const auto& lj = b.manifest.at("lora");
  b.adapters.cfg.rank = lj.at("rank").get<int>();
  b.adapters.cfg.alpha = lj.at("alpha").get<double>();
  b.adapters.cfg.dropout = lj.at("dropout").get<double>();
  b.adapters.layers.resize(cfg.n_layers);
  auto tensors = read_tensor_file(dir + "/adapters.bin");
  std::size_t idx = 0;
  for (int l = 0; l < cfg.n_layers; ++l)
    for (int s = 0; s < kNumSites; ++s) {
      std::string p = "layer" + std::to_string(l) + "." + kSiteNames[s];
      if (idx + 1 >= tensors.size() + 1 || tensors[idx].first != p + ".down")
        throw InputError("adapter tensor order mismatch at " + p);
      b.adapters.layers[l][s].down = std::move(tensors[idx++].second);
      if (idx >= tensors.size() || tensors[idx].first != p + ".up")
        throw InputError("adapter tensor order mismatch at " + p);
      b.adapters.layers[l][s].up = std::move(tensors[idx++].second);
    }
  return b;
}

}  // namespace lethe

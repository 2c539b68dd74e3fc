#include "tmpa/serialize.hpp"

#include <cstring>
#include <fstream>
#include <map>

namespace tmpa {

namespace {

constexpr char kMagic[5] = {'T', 'M', 'P', 'A', '1'};

void put_u32(std::ostream& out, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& out, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

bool host_is_little_endian() {
  const uint32_t probe = 1;
  unsigned char b;
  std::memcpy(&b, &probe, 1);
  return b == 1;
}

void write_tensor(std::ostream& out, const std::string& name, const Tensor& t) {
  put_u32(out, static_cast<uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  put_u32(out, static_cast<uint32_t>(t.ndim()));
  for (int i = 0; i < t.ndim(); ++i) put_u64(out, static_cast<uint64_t>(t.dim(i)));
  out.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(t.size())));
}

std::pair<std::string, Tensor> read_tensor(std::istream& in) {
  const uint32_t name_len = get_u32(in);
  TMPA_CHECK(in.good() && name_len < 4096, "corrupt checkpoint: bad name length");
  std::string name(name_len, '\0');
  in.read(name.data(), name_len);
  const uint32_t rank = get_u32(in);
  TMPA_CHECK(in.good() && rank <= 8, "corrupt checkpoint: bad tensor rank");
  Shape shape(rank);
  for (uint32_t i = 0; i < rank; ++i) shape[i] = static_cast<int>(get_u64(in));
  Tensor t(shape);
  in.read(reinterpret_cast<char*>(t.data()),
          static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(t.size())));
  TMPA_CHECK(in.good(), "corrupt checkpoint: truncated tensor data for " + name);
  return {std::move(name), std::move(t)};
}

Tensor string_to_tensor(const std::string& s) {
  Tensor t(Shape{static_cast<int>(s.size())});
  for (size_t i = 0; i < s.size(); ++i) t[static_cast<int64_t>(i)] = static_cast<unsigned char>(s[i]);
  return t;
}

std::string tensor_to_string(const Tensor& t) {
  std::string s(static_cast<size_t>(t.size()), '\0');
  for (int64_t i = 0; i < t.size(); ++i) s[static_cast<size_t>(i)] = static_cast<char>(t[i]);
  return s;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  TMPA_CHECK(host_is_little_endian(), "checkpoint format requires a little-endian host");
  std::ofstream out(path, std::ios::binary);
  TMPA_CHECK(out.good(), "cannot open " + path + " for writing");
  out.write(kMagic, 5);

  std::vector<std::pair<std::string, const Tensor*>> entries;
  Tensor epoch_t = Tensor::scalar(static_cast<double>(ckpt.epoch));
  Tensor classes_t = Tensor::scalar(static_cast<double>(ckpt.model.cfg.num_classes));
  Tensor config_t = string_to_tensor(ckpt.config_text);
  entries.emplace_back("meta/epoch", &epoch_t);
  entries.emplace_back("meta/num_classes", &classes_t);
  entries.emplace_back("meta/config", &config_t);

  Model& m = const_cast<Model&>(ckpt.model);  // iteration only
  std::vector<std::pair<std::string, Tensor*>> params;
  m.for_each_param([&](const std::string& name, Tensor& t) { params.emplace_back(name, &t); });
  for (auto& [name, t] : params) entries.emplace_back("param/" + name, t);
  std::vector<std::pair<std::string, BnState*>> bns;
  m.for_each_bn([&](const std::string& name, BnState& s) { bns.emplace_back(name, &s); });
  for (auto& [name, s] : bns) {
    entries.emplace_back("bn/" + name + "/mean", &s->running_mean);
    entries.emplace_back("bn/" + name + "/var", &s->running_var);
  }
  for (const auto& [name, t] : ckpt.momentum) entries.emplace_back("opt/" + name, &t);

  put_u64(out, entries.size());
  for (const auto& [name, t] : entries) write_tensor(out, name, *t);
  TMPA_CHECK(out.good(), "write to " + path + " failed");
}

Checkpoint load_checkpoint(const std::string& path) {
  TMPA_CHECK(host_is_little_endian(), "checkpoint format requires a little-endian host");
  std::ifstream in(path, std::ios::binary);
  TMPA_CHECK(in.good(), "cannot open checkpoint " + path);
  char magic[5];
  in.read(magic, 5);
  TMPA_CHECK(in.good() && std::memcmp(magic, kMagic, 5) == 0,
             path + " is not a TMPA1 checkpoint");
  const uint64_t count = get_u64(in);
  TMPA_CHECK(in.good() && count < 100000, "corrupt checkpoint: bad entry count");
  std::map<std::string, Tensor> entries;
  for (uint64_t i = 0; i < count; ++i) {
    auto [name, t] = read_tensor(in);
    entries.emplace(std::move(name), std::move(t));
  }

  Checkpoint ckpt;
  TMPA_CHECK(entries.count("meta/epoch") && entries.count("meta/num_classes") &&
                 entries.count("meta/config"),
             "checkpoint missing meta entries");
  ckpt.epoch = static_cast<int>(entries.at("meta/epoch")[0]);
  ckpt.config_text = tensor_to_string(entries.at("meta/config"));

  ModelConfig cfg;
  cfg.num_classes = static_cast<int>(entries.at("meta/num_classes")[0]);
  KvConfig kv = KvConfig::defaults();
  kv.merge_text(ckpt.config_text);
  ckpt.model = Model::init(cfg, kv.get_u64("seed"));

  ckpt.model.for_each_param([&](const std::string& name, Tensor& t) {
    auto it = entries.find("param/" + name);
    TMPA_CHECK(it != entries.end(), "checkpoint missing parameter " + name);
    TMPA_CHECK(it->second.shape() == t.shape(), "checkpoint shape mismatch for " + name);
    t = it->second;
  });
  ckpt.model.for_each_bn([&](const std::string& name, BnState& s) {
    auto mean = entries.find("bn/" + name + "/mean");
    auto var = entries.find("bn/" + name + "/var");
    TMPA_CHECK(mean != entries.end() && var != entries.end(),
               "checkpoint missing batch-norm state " + name);
    s.running_mean = mean->second;
    s.running_var = var->second;
  });
  for (const auto& [name, t] : entries) {
    if (name.rfind("opt/", 0) == 0) ckpt.momentum[name.substr(4)] = t;
  }
  return ckpt;
}

}  // namespace tmpa

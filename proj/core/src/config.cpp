#include "tmpa/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "tmpa/check.hpp"

namespace tmpa {

std::string format_double(double v) {
  // shortest representation that parses back to the same double
  for (int prec = 1; prec <= 17; ++prec) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    if (std::stod(buf) == v) return buf;
  }
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

KvConfig KvConfig::defaults() {
  KvConfig c;
  auto add = [&](const char* k, const std::string& v) { c.entries_.emplace_back(k, v); };
  add("seed", "1");
  // synthetic dataset
  add("data.dir", "");
  add("data.num_ids", "32");
  add("data.test_ids", "16");
  add("data.imgs_per_id", "8");
  add("data.height", "48");
  add("data.width", "24");
  add("data.noise_sigma", "0.05");
  // schedule
  add("epochs", "60");
  add("steps_per_epoch", "8");
  add("lr0", "0.1");
  add("momentum", "0.9");
  add("lr_milestones", "20:0.1,50:0.01");
  // loss weights
  add("alpha", "0.8");
  add("beta", "0.4");
  add("lambda1", "0.2");
  add("lambda2", "0.25");
  add("lambda3", "0.25");
  add("rho", "0.65");
  // augmentation
  add("mix.a_c", "0.65");
  add("mix.a_s", "0.7");
  add("mix.a_o", "0.75");
  add("patch_size", "6");
  add("phi1.h", format_double(2.0 / 3.0));
  add("phi1.w", format_double(1.0 / 3.0));
  add("phi2.h", format_double(5.0 / 6.0));
  add("phi2.w", format_double(2.0 / 3.0));
  // batch composition
  add("pk.p", "8");
  add("pk.k", "4");
  // ablation switches
  add("enable_pedmix", "true");
  add("enable_mft", "true");
  add("enable_channel_aug", "false");
  // evaluation
  add("eval.mode", "i2v");
  add("eval.export_embeddings", "false");
  return c;
}

int KvConfig::index_of(const std::string& key) const {
  for (size_t i = 0; i < entries_.size(); ++i)
    if (entries_[i].first == key) return static_cast<int>(i);
  return -1;
}

void KvConfig::set(const std::string& key, const std::string& value) {
  int i = index_of(key);
  TMPA_CHECK(i >= 0, "unknown configuration key: " + key);
  entries_[static_cast<size_t>(i)].second = value;
}

bool KvConfig::has(const std::string& key) const { return index_of(key) >= 0; }

const std::string& KvConfig::get(const std::string& key) const {
  int i = index_of(key);
  TMPA_CHECK(i >= 0, "unknown configuration key: " + key);
  return entries_[static_cast<size_t>(i)].second;
}

double KvConfig::get_double(const std::string& key) const {
  const std::string& v = get(key);
  try {
    size_t pos = 0;
    double d = std::stod(v, &pos);
    TMPA_CHECK(pos == v.size(), "trailing characters in value for " + key + ": " + v);
    return d;
  } catch (const std::invalid_argument&) {
    TMPA_CHECK(false, "value for " + key + " is not a real number: " + v);
  }
  return 0.0;
}

int KvConfig::get_int(const std::string& key) const {
  const std::string& v = get(key);
  try {
    size_t pos = 0;
    long long i = std::stoll(v, &pos);
    TMPA_CHECK(pos == v.size(), "trailing characters in value for " + key + ": " + v);
    return static_cast<int>(i);
  } catch (const std::invalid_argument&) {
    TMPA_CHECK(false, "value for " + key + " is not an integer: " + v);
  }
  return 0;
}

uint64_t KvConfig::get_u64(const std::string& key) const {
  const std::string& v = get(key);
  try {
    size_t pos = 0;
    unsigned long long i = std::stoull(v, &pos);
    TMPA_CHECK(pos == v.size(), "trailing characters in value for " + key + ": " + v);
    return static_cast<uint64_t>(i);
  } catch (const std::invalid_argument&) {
    TMPA_CHECK(false, "value for " + key + " is not an unsigned integer: " + v);
  }
  return 0;
}

bool KvConfig::get_bool(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  TMPA_CHECK(false, "value for " + key + " is not a boolean: " + v);
  return false;
}

void KvConfig::set_double(const std::string& key, double v) { set(key, format_double(v)); }
void KvConfig::set_int(const std::string& key, int64_t v) { set(key, std::to_string(v)); }
void KvConfig::set_bool(const std::string& key, bool v) { set(key, v ? "true" : "false"); }

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

void KvConfig::merge_text(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    size_t eq = stripped.find('=');
    TMPA_CHECK(eq != std::string::npos,
               "config line " + std::to_string(lineno) + " has no '=': " + stripped);
    set(trim(stripped.substr(0, eq)), trim(stripped.substr(eq + 1)));
  }
}

void KvConfig::merge_file(const std::string& path) {
  std::ifstream in(path);
  TMPA_CHECK(in.good(), "cannot open config file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  merge_text(buf.str());
}

void KvConfig::set_kv(const std::string& assignment) {
  size_t eq = assignment.find('=');
  TMPA_CHECK(eq != std::string::npos, "--set expects key=value, got: " + assignment);
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

std::string KvConfig::resolved_text() const {
  std::ostringstream os;
  for (const auto& [k, v] : entries_) os << k << " = " << v << "\n";
  return os.str();
}

}  // namespace tmpa

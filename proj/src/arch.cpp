#include "whitebox/arch.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include "whitebox/common.hpp"

namespace whitebox {

namespace {

[[noreturn]] void parse_fail(const std::string& path, int line_no,
                             const std::string& msg) {
  throw_config(path + ":" + std::to_string(line_no) + ": " + msg);
}

int64_t get_key(const std::map<std::string, std::string>& kv,
                const std::string& key, const std::string& path, int line_no,
                int64_t fallback = -1) {
  auto it = kv.find(key);
  if (it == kv.end()) {
    if (fallback >= 0) return fallback;
    parse_fail(path, line_no, "missing required key '" + key + "'");
  }
  try {
    return std::stoll(it->second);
  } catch (const std::exception&) {
    parse_fail(path, line_no, "bad integer for key '" + key + "'");
  }
}

}  // namespace

std::vector<ArchLayer> parse_arch_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw_config("cannot open architecture file: " + path);
  std::vector<ArchLayer> layers;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream ls(line);
    std::string kind;
    if (!(ls >> kind)) continue;  // blank line

    std::map<std::string, std::string> kv;
    std::string tok;
    while (ls >> tok) {
      const auto eq = tok.find('=');
      if (eq == std::string::npos) {
        parse_fail(path, line_no, "expected key=value, got '" + tok + "'");
      }
      kv[tok.substr(0, eq)] = tok.substr(eq + 1);
    }

    ArchLayer layer;
    layer.kind = kind;
    if (auto it = kv.find("name"); it != kv.end()) layer.name = it->second;

    if (kind == "conv") {
      const int64_t cin = get_key(kv, "cin", path, line_no);
      const int64_t cout = get_key(kv, "cout", path, line_no);
      const int64_t k = get_key(kv, "k", path, line_no);
      const int64_t hin = get_key(kv, "hin", path, line_no);
      const int64_t win = get_key(kv, "win", path, line_no);
      const int64_t stride = get_key(kv, "stride", path, line_no, 1);
      const int64_t pad = get_key(kv, "pad", path, line_no, 0);
      if (cin < 1 || cout < 1 || k < 1 || hin < 1 || win < 1 || stride < 1) {
        parse_fail(path, line_no, "conv parameters must be positive");
      }
      const int64_t hout = (hin + 2 * pad - k) / stride + 1;
      const int64_t wout = (win + 2 * pad - k) / stride + 1;
      if (hout < 1 || wout < 1) {
        parse_fail(path, line_no, "conv output collapses to zero size");
      }
      layer.macs = static_cast<uint64_t>(k) * static_cast<uint64_t>(k) *
                   static_cast<uint64_t>(cin) * static_cast<uint64_t>(cout) *
                   static_cast<uint64_t>(hout) * static_cast<uint64_t>(wout);
      std::ostringstream d;
      d << k << "x" << k << " " << cin << "->" << cout << " @" << hout << "x"
        << wout;
      layer.detail = d.str();
    } else if (kind == "linear") {
      const int64_t din = get_key(kv, "din", path, line_no);
      const int64_t dout = get_key(kv, "dout", path, line_no);
      if (din < 1 || dout < 1) {
        parse_fail(path, line_no, "linear parameters must be positive");
      }
      layer.macs = static_cast<uint64_t>(din) * static_cast<uint64_t>(dout);
      layer.detail = std::to_string(din) + "->" + std::to_string(dout);
    } else if (kind == "maxpool" || kind == "gap" || kind == "relu" ||
               kind == "batchnorm") {
      layer.macs = 0;
      layer.detail = "-";
    } else {
      parse_fail(path, line_no, "unknown layer kind '" + kind + "'");
    }
    layers.push_back(std::move(layer));
  }
  if (layers.empty()) {
    throw_config("architecture file has no layers: " + path);
  }
  return layers;
}

uint64_t arch_total_macs(const std::vector<ArchLayer>& layers) {
  uint64_t total = 0;
  for (const auto& l : layers) total += l.macs;
  return total;
}

}  // namespace whitebox

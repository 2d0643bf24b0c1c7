#ifndef WHITEBOX_CONFIG_HPP_
#define WHITEBOX_CONFIG_HPP_

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace whitebox {

// Flat key=value configuration: one `key = value` pair per line,
// '#' comments, later keys win. CLI --set overrides land on top.
class ConfigMap {
 public:
  ConfigMap() = default;

  static ConfigMap from_file(const std::string& path);

  void set(const std::string& key, const std::string& value);
  void set_kv(const std::string& key_eq_value);  // "key=value" form

  bool has(const std::string& key) const;

  std::string get_str(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  int64_t get_int(const std::string& key, int64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<int64_t> get_int_list(const std::string& key,
                                    const std::vector<int64_t>& fallback) const;

  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace whitebox

#endif  // WHITEBOX_CONFIG_HPP_

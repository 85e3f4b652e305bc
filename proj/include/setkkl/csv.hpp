#pragma once

#include <filesystem>
#include <initializer_list>
#include <string>
#include <string_view>
#include <vector>

namespace setkkl {

// 17 significant digits, round-trip exact.
std::string format_double(double v);

// RFC-4180 text with LF line endings. Fields containing separators or quotes
// are quoted.
class CsvWriter {
 public:
  void header(const std::vector<std::string>& names);
  void row(const std::vector<double>& values);
  void row(const std::vector<std::string>& fields);
  const std::string& str() const { return text_; }

 private:
  void field(std::string_view v, bool first);
  std::string text_;
};

// Writes to a sibling temp file, then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

}  // namespace setkkl

#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "plume/models.hpp"
#include "plume/training.hpp"

namespace plume::cli {

/// Flat "key.path = value" settings with '#' comments. Only known keys are
/// accepted; later assignments (flags) override earlier ones (file).
class RunConfig {
 public:
  RunConfig();

  void load_file(const std::filesystem::path& path);
  void load_text(const std::string& text, const std::string& origin = "config");
  void set(const std::string& key, const std::string& value);

  const std::string& get(const std::string& key) const;
  bool is_set(const std::string& key) const { return explicit_.count(key) != 0; }
  double get_double(const std::string& key) const;
  int get_int(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  /// Empty stays empty; relative paths are resolved against the data root
  /// (data.root, else PLUME_DATA_DIR, else the working directory).
  std::filesystem::path get_path(const std::string& key) const;
  std::filesystem::path resolve(const std::filesystem::path& p) const;

  enum class Task { Classify, Segment };
  training::TrainConfig train_config(Task task) const;
  models::ClassifierConfig classifier_config() const;
  models::SegmenterConfig segmenter_config() const;

  static const std::map<std::string, std::string>& defaults();

 private:
  std::map<std::string, std::string> values_;
  std::map<std::string, bool> explicit_;
};

RunConfig::Task parse_task(const std::string& text);

/// Runs one command line (args excludes the program name). Returns the exit
/// status: 0 on success, 1 on runtime or per-item failures, 2 on usage errors.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace plume::cli

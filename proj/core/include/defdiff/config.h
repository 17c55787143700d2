#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "defdiff/pipeline.h"

namespace defdiff {

// Plain-text run configuration. Sections group related keys:
//
//   # comment
//   [scene]
//   cameras 8
//   image_size 64
//
//   [train]
//   steps 3000
//
// Keys are addressed as "section.key". Values run to the end of the line; an
// optional '=' after the key is accepted. Later assignments win, which is how
// command-line overrides stack on top of a file.
class Config {
 public:
  Config() = default;
  static Config fromFile(const std::string& path);
  static Config fromText(const std::string& text, const std::string& context);

  // One "section.key=value" pair, as passed to --set. A bare "key=value"
  // lands in the anonymous section "".
  void setOverride(const std::string& assignment);

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string getString(const std::string& key) const;
  std::string getString(const std::string& key, const std::string& fallback) const;
  int getInt(const std::string& key, int fallback) const;
  int64_t getInt64(const std::string& key, int64_t fallback) const;
  double getDouble(const std::string& key, double fallback) const;
  bool getBool(const std::string& key, bool fallback) const;
  std::vector<int> getIntList(const std::string& key, const std::vector<int>& fallback) const;
  std::vector<double> getDoubleList(const std::string& key,
                                    const std::vector<double>& fallback) const;

  // Canonical sectioned dump, stable order; parses back to an equal config.
  std::string echo() const;

  // Keys present in the file that no getter ever touched. Surfacing these
  // catches silently ignored typos like "trian.steps".
  std::vector<std::string> unusedKeys() const;

  const std::map<std::string, std::string>& raw() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> touched_;
};

// Bridges from config sections to the typed structs the pipeline consumes.
// Every key is optional; absent keys keep the struct defaults.
SceneConfig sceneFromConfig(const Config& cfg);
TrainConfig trainFromConfig(const Config& cfg);
FitConfig fitFromConfig(const Config& cfg);

// Keys under [sample]: steps (0 = full schedule), seed.
struct SampleOptions {
  int steps = 0;
  uint64_t seed = 1;
};
SampleOptions sampleFromConfig(const Config& cfg);

}  // namespace defdiff

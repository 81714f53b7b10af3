// SPDX-FileCopyrightText: (c) 2026 The babylab Authors
//
// SPDX-License-Identifier: Apache-2.0

#include "babylab/scoring.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <memory>
#include <stdexcept>

#include "babylab/error.hpp"

namespace babylab {

using nlohmann::json;

namespace {

constexpr std::size_t kTrogItems = 80;
constexpr std::size_t kTrogBlock = 4;
constexpr std::size_t kTcgbItems = 74;
constexpr double kPpvtRange = 10.0;

int parse_int(std::string_view text, std::string_view whole) {
  int value = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) {
    throw ConfigError("malformed age '" + std::string(whole) + "' (expected Y;M)");
  }
  return value;
}

// Plain bool array: std::vector<bool> cannot back a span.
std::unique_ptr<bool[]> outcomes(std::span<const TaskResult> results, SourceTest expected) {
  auto out = std::make_unique<bool[]>(results.size());
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    if (r.source_test != expected) {
      throw std::invalid_argument("result " + r.item_id + " belongs to " +
                                  std::string(to_string(r.source_test)) + ", not " +
                                  std::string(to_string(expected)));
    }
    out[i] = !r.errored() && r.correct;
  }
  return out;
}

}  // namespace

std::string Age::to_string() const { return std::to_string(years) + ";" + std::to_string(months); }

Age Age::parse(std::string_view text) {
  const auto sep = text.find(';');
  if (sep == std::string_view::npos) throw ConfigError("malformed age '" + std::string(text) + "' (expected Y;M)");
  Age age{parse_int(text.substr(0, sep), text), parse_int(text.substr(sep + 1), text)};
  if (age.years < 0 || age.months < 0 || age.months > 11) {
    throw ConfigError("age '" + std::string(text) + "' out of range");
  }
  return age;
}

Age Age::from_months(int total) { return {total / 12, total % 12}; }

void NormTable::validate() const {
  if (bands.empty()) throw ConfigError("norms for " + test + ": no bands");
  for (std::size_t i = 0; i < bands.size(); ++i) {
    const auto& b = bands[i];
    if (b.ages.high < b.ages.low) throw ConfigError("norms for " + test + ": band " + b.ages.label() + " is reversed");
    if (!(b.sd > 0.0) || !std::isfinite(b.sd)) {
      throw ConfigError("norms for " + test + ": band " + b.ages.label() + " needs sd > 0");
    }
    if (!std::isfinite(b.mean)) throw ConfigError("norms for " + test + ": band " + b.ages.label() + " has a non-finite mean");
    if (i > 0 && !(bands[i - 1].ages.high < b.ages.low)) {
      throw ConfigError("norms for " + test + ": band " + b.ages.label() + " overlaps or precedes " +
                        bands[i - 1].ages.label());
    }
  }
}

const NormBand* NormTable::find(const AgeBand& band) const {
  for (const auto& b : bands) {
    if (b.ages == band) return &b;
  }
  return nullptr;
}

const NormTable& NormSet::at(const std::string& test) const {
  const auto it = tables.find(test);
  if (it == tables.end()) throw ConfigError("no norm table for " + test);
  return it->second;
}

NormSet NormSet::from_json(const json& doc) {
  try {
    if (!doc.is_object() || !doc.contains("tables") || !doc.at("tables").is_object()) {
      throw ConfigError("norms: expected an object with a \"tables\" object");
    }
    NormSet set;
    for (const auto& [name, body] : doc.at("tables").items()) {
      NormTable table;
      table.test = name;
      for (const auto& [key, _] : body.items()) {
        if (key != "orientation" && key != "bands") throw ConfigError("norms for " + name + ": unknown field " + key);
      }
      const auto orientation = body.value("orientation", std::string("higher_better"));
      if (orientation == "higher_better") {
        table.orientation = Orientation::HigherBetter;
      } else if (orientation == "lower_better") {
        table.orientation = Orientation::LowerBetter;
      } else {
        throw ConfigError("norms for " + name + ": unknown orientation " + orientation);
      }
      for (const auto& b : body.at("bands")) {
        for (const auto& [key, _] : b.items()) {
          if (key != "age_low" && key != "age_high" && key != "mean" && key != "sd") {
            throw ConfigError("norms for " + name + ": unknown band field " + key);
          }
        }
        NormBand band;
        band.ages.low = Age::parse(b.at("age_low").get<std::string>());
        band.ages.high = Age::parse(b.at("age_high").get<std::string>());
        band.mean = b.at("mean").get<double>();
        band.sd = b.at("sd").get<double>();
        table.bands.push_back(band);
      }
      table.validate();
      set.tables.emplace(name, std::move(table));
    }
    return set;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("norms: ") + e.what());
  }
}

NormSet NormSet::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open norms file " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return from_json(doc);
}

std::string_view to_string(RawKind kind) {
  switch (kind) {
    case RawKind::CorrectCount: return "correct_count";
    case RawKind::PassedBlocks: return "passed_blocks";
    case RawKind::ErrorScore: return "error_score";
    case RawKind::Interval: return "interval";
  }
  return "unknown";
}

json RawScore::to_json() const {
  json doc{{"test", test}, {"value", value}, {"kind", to_string(kind)}};
  if (interval) doc["interval"] = {interval->first, interval->second};
  return doc;
}

std::string norm_test_name(SourceTest test, Task task) {
  if (test == SourceTest::BVL) return "BVL_" + std::string(to_string(task));
  return std::string(to_string(test));
}

RawScore raw_count(std::span<const TaskResult> results, bool loose) {
  if (results.empty()) throw std::invalid_argument("raw_count: no results");
  const auto test = results.front().source_test;
  const auto task = results.front().task;
  std::size_t correct = 0;
  for (const auto& r : results) {
    if (r.source_test != test || (test == SourceTest::BVL && r.task != task)) {
      throw std::invalid_argument("raw_count: results mix " + norm_test_name(test, task) + " and " +
                                  norm_test_name(r.source_test, r.task));
    }
    if (r.errored()) continue;
    const bool ok = loose ? r.loose_correct.value_or(r.correct) : r.correct;
    if (ok) ++correct;
  }
  RawScore raw;
  raw.test = norm_test_name(test, task);
  raw.value = static_cast<double>(correct);
  if (test == SourceTest::PPVT) {
    raw.kind = RawKind::Interval;
    raw.interval = std::pair{raw.value, raw.value + kPpvtRange};
  }
  return raw;
}

RawScore raw_trog(std::span<const bool> correct) {
  if (correct.size() != kTrogItems) {
    throw std::invalid_argument("raw_trog: expected " + std::to_string(kTrogItems) + " results, got " +
                                std::to_string(correct.size()));
  }
  int passed = 0;
  for (std::size_t block = 0; block < kTrogItems; block += kTrogBlock) {
    const auto hits = std::count(correct.begin() + block, correct.begin() + block + kTrogBlock, true);
    if (hits >= 3) ++passed;
  }
  return {"TROG2", static_cast<double>(passed), RawKind::PassedBlocks, std::nullopt};
}

RawScore raw_trog(std::span<const TaskResult> results) {
  const auto flags = outcomes(results, SourceTest::TROG2);
  return raw_trog(std::span<const bool>(flags.get(), results.size()));
}

RawScore raw_tcgb(std::span<const bool> correct) {
  if (correct.size() != kTcgbItems) {
    throw std::invalid_argument("raw_tcgb: expected " + std::to_string(kTcgbItems) + " results, got " +
                                std::to_string(correct.size()));
  }
  const auto errors = std::count(correct.begin(), correct.end(), false);
  return {"TCGB2", 0.5 * static_cast<double>(errors), RawKind::ErrorScore, std::nullopt};
}

RawScore raw_tcgb(std::span<const TaskResult> results) {
  const auto flags = outcomes(results, SourceTest::TCGB2);
  return raw_tcgb(std::span<const bool>(flags.get(), results.size()));
}

std::string z_band_label(double z) {
  if (z > 2.0) return ">+2SD";
  if (z > 1.0) return "+1..+2";
  if (z >= 0.0) return "0..+1";
  if (z >= -1.0) return "-1..0";
  if (z >= -2.0) return "-2..-1";
  return "<-2SD";
}

json AgeEquivalentResult::to_json() const {
  json doc{{"z", z}, {"band_label", band_label}, {"typical", typical}, {"reference", reference.label()}};
  if (z_interval) doc["z_interval"] = {z_interval->first, z_interval->second};
  return doc;
}

double oriented_z(double value, const NormBand& band, Orientation orientation) {
  const double z = (value - band.mean) / band.sd;
  return orientation == Orientation::LowerBetter ? -z : z;
}

AgeEquivalentResult age_equivalent(const RawScore& raw, const AgeBand& band, const NormTable& norms) {
  const NormBand* norm = norms.find(band);
  if (norm == nullptr) {
    throw ConfigError("norms for " + norms.test + " have no band " + band.label());
  }
  AgeEquivalentResult result;
  result.reference = band;
  if (raw.interval) {
    const double lo = oriented_z(raw.interval->first, *norm, norms.orientation);
    const double hi = oriented_z(raw.interval->second, *norm, norms.orientation);
    result.z_interval = std::pair{std::min(lo, hi), std::max(lo, hi)};
    result.z = std::abs(lo) <= std::abs(hi) ? lo : hi;
  } else {
    result.z = oriented_z(raw.value, *norm, norms.orientation);
  }
  result.band_label = z_band_label(result.z);
  result.typical = std::abs(result.z) <= 1.0;
  return result;
}

std::string LinguisticAge::label() const {
  if (below_youngest || !band) return "< " + youngest.to_string();
  return band->label();
}

LinguisticAge equivalent_linguistic_age(const RawScore& raw, const NormTable& norms) {
  LinguisticAge out;
  if (norms.bands.empty()) return out;
  out.youngest = norms.youngest().ages.low;
  bool all_below = true;
  double best = std::numeric_limits<double>::infinity();
  for (const auto& band : norms.bands) {
    const double z = oriented_z(raw.value, band, norms.orientation);
    if (z >= -1.0) all_below = false;
    if (std::abs(z) < best) {
      best = std::abs(z);
      out.band = band.ages;
    }
  }
  if (all_below) {
    out.below_youngest = true;
    out.band.reset();
  }
  return out;
}

json ModelAge::to_json() const {
  return {{"years", years}, {"reference", reference.label()}, {"adult", adult}, {"pre_norm", pre_norm}};
}

ModelAge model_age(double training_words, double words_per_year, const NormTable& grid) {
  if (training_words < 0.0) throw std::invalid_argument("model_age: negative word count");
  if (!(words_per_year > 0.0)) throw std::invalid_argument("model_age: words_per_year must be positive");
  if (grid.bands.empty()) throw std::invalid_argument("model_age: empty age grid");
  ModelAge age;
  age.years = training_words / words_per_year;
  const double months_real = std::floor(age.years * 12.0);
  if (months_real > grid.oldest().ages.high.total_months()) {
    age.adult = true;
    age.reference = grid.oldest().ages;
    return age;
  }
  const int months = static_cast<int>(months_real);
  if (months < grid.youngest().ages.low.total_months()) {
    age.pre_norm = true;
    age.reference = grid.youngest().ages;
    return age;
  }
  for (const auto& band : grid.bands) {
    // Ages falling into a gap between bands use the next band up.
    if (months <= band.ages.high.total_months()) {
      age.reference = band.ages;
      return age;
    }
  }
  age.reference = grid.oldest().ages;
  return age;
}

}  // namespace babylab

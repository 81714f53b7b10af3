// SPDX-FileCopyrightText: (c) 2026 The babylab Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <compare>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "babylab/benchmark.hpp"

namespace babylab {

/// An age in years and months, written "Y;M" (months 0..11).
struct Age {
  int years = 0;
  int months = 0;

  int total_months() const { return years * 12 + months; }
  std::string to_string() const;
  static Age parse(std::string_view text);
  static Age from_months(int total);

  auto operator<=>(const Age& other) const { return total_months() <=> other.total_months(); }
  bool operator==(const Age& other) const { return total_months() == other.total_months(); }
};

/// Inclusive range of ages, e.g. 5;0-5;5.
struct AgeBand {
  Age low;
  Age high;

  bool contains(int total_months) const {
    return total_months >= low.total_months() && total_months <= high.total_months();
  }
  std::string label() const { return low.to_string() + "-" + high.to_string(); }
  bool operator==(const AgeBand&) const = default;
};

enum class Orientation { HigherBetter, LowerBetter };

struct NormBand {
  AgeBand ages;
  double mean = 0.0;
  double sd = 1.0;
};

/// Standardization-sample statistics for one test across its age grid.
struct NormTable {
  std::string test;
  Orientation orientation = Orientation::HigherBetter;
  std::vector<NormBand> bands;  // sorted by age, non-overlapping

  /// Throws ConfigError for empty, unsorted or overlapping bands or sd <= 0.
  void validate() const;
  const NormBand* find(const AgeBand& band) const;
  const NormBand& youngest() const { return bands.front(); }
  const NormBand& oldest() const { return bands.back(); }
};

/// All norm tables keyed by test name. File format:
///   {"tables": {"TROG2": {"orientation": "higher_better",
///                         "bands": [{"age_low": "4;0", "age_high": "4;5",
///                                    "mean": 9.0, "sd": 2.5}, ...]}, ...}}
struct NormSet {
  std::map<std::string, NormTable> tables;

  const NormTable& at(const std::string& test) const;
  bool contains(const std::string& test) const { return tables.contains(test); }

  static NormSet from_json(const nlohmann::json& doc);
  static NormSet load(const std::filesystem::path& path);
};

enum class RawKind { CorrectCount, PassedBlocks, ErrorScore, Interval };
std::string_view to_string(RawKind kind);

struct RawScore {
  std::string test;  // norm table name, e.g. "BVL_acceptability", "TROG2"
  double value = 0.0;
  RawKind kind = RawKind::CorrectCount;
  std::optional<std::pair<double, double>> interval;

  nlohmann::json to_json() const;
};

/// Norm table name for results of one source test and task, e.g.
/// "BVL_idiom", "TROG2", "PPVT".
std::string norm_test_name(SourceTest test, Task task);

/// Number of correct results. For completion items `loose` selects the loose
/// verdict. PPVT scores carry the interval [value, value + 10]. Errored
/// items count as not correct. Throws std::invalid_argument when results
/// span more than one test or are empty.
RawScore raw_count(std::span<const TaskResult> results, bool loose = false);

/// Number of four-item blocks with at least three correct answers. Requires
/// exactly 80 outcomes in block order.
RawScore raw_trog(std::span<const bool> correct);
RawScore raw_trog(std::span<const TaskResult> results);

/// 0.5 per incorrect answer over exactly 74 outcomes; lower is better.
RawScore raw_tcgb(std::span<const bool> correct);
RawScore raw_tcgb(std::span<const TaskResult> results);

/// Label of the standard-deviation band holding z. Boundaries belong to the
/// band nearer zero: 1 is "0..+1", 2 is "+1..+2", -2 is "-2..-1".
std::string z_band_label(double z);

struct AgeEquivalentResult {
  double z = 0.0;
  std::string band_label;
  bool typical = false;
  AgeBand reference;
  std::optional<std::pair<double, double>> z_interval;

  nlohmann::json to_json() const;
};

/// z of a raw value against one norm band, sign-flipped for lower-better
/// tests so that a positive z always means better than average.
double oriented_z(double value, const NormBand& band, Orientation orientation);

/// Scores `raw` against the norms for `band`. Interval scores evaluate both
/// endpoints and report the one nearer the mean. Throws
/// ConfigError when the band is not in the table.
AgeEquivalentResult age_equivalent(const RawScore& raw, const AgeBand& band, const NormTable& norms);

struct LinguisticAge {
  std::optional<AgeBand> band;
  bool below_youngest = false;
  Age youngest;  // lowest age in the table, for the "< youngest" form

  std::string label() const;
};

/// The band whose mean the score lies closest to (in SD units). Ties go to
/// the younger band. Scores more than one SD below the mean of every band
/// are reported as below the youngest band.
LinguisticAge equivalent_linguistic_age(const RawScore& raw, const NormTable& norms);

struct ModelAge {
  double years = 0.0;
  AgeBand reference;
  bool adult = false;     // older than the grid; the oldest band is used
  bool pre_norm = false;  // younger than the grid; the youngest band is used

  nlohmann::json to_json() const;
};

/// Nominal age of a model trained on `training_words` word tokens, placed on
/// the age grid of `grid`.
ModelAge model_age(double training_words, double words_per_year, const NormTable& grid);

}  // namespace babylab

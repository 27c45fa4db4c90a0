#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "chexkit/csv.hpp"
#include "chexkit/error.hpp"
#include "chexkit/rng.hpp"

namespace chexkit::labels {

// Radiologist label CSV policy: 1 -> positive, 0 -> negative,
// -1 -> uncertain, blank -> missing. During training, uncertain cells are
// masked out of the loss and missing cells count as negative.
enum class LabelState : std::uint8_t { positive, negative, uncertain, missing };

inline constexpr std::array<const char*, 5> kSubmissionObservations = {
    "Atelectasis", "Cardiomegaly", "Consolidation", "Edema", "Pleural Effusion"};

inline std::vector<std::string> submission_observations() {
  return {kSubmissionObservations.begin(), kSubmissionObservations.end()};
}

inline const char* to_string(LabelState s) {
  switch (s) {
    case LabelState::positive: return "positive";
    case LabelState::negative: return "negative";
    case LabelState::uncertain: return "uncertain";
    case LabelState::missing: return "missing";
  }
  return "?";
}

inline std::string to_csv_token(LabelState s) {
  switch (s) {
    case LabelState::positive: return "1.0";
    case LabelState::negative: return "0.0";
    case LabelState::uncertain: return "-1.0";
    case LabelState::missing: return "";
  }
  return "";
}

// Numeric-equality match so "1", "1.0", "1.00" are all positive; blank or
// whitespace-only cells are missing; anything else is a BadValue.
inline LabelState state_from_token(std::string_view token) {
  const std::string_view t = csv::trim(token);
  if (t.empty()) return LabelState::missing;
  double value = 0.0;
  const auto* begin = t.data();
  const auto* end = t.data() + t.size();
  auto result = std::from_chars(begin, end, value);
  if (result.ec != std::errc{} || result.ptr != end) {
    fail(errc::bad_value, "unmappable label token \"" + std::string(token) + "\"");
  }
  if (value == 1.0) return LabelState::positive;
  if (value == 0.0) return LabelState::negative;
  if (value == -1.0) return LabelState::uncertain;
  fail(errc::bad_value, "unmappable label value \"" + std::string(token) + "\"");
}

struct LabelRecord {
  std::string image_path;
  std::vector<LabelState> states;  // one per observation, table order
};

struct LabelTable {
  std::vector<std::string> observations;
  std::vector<LabelRecord> records;

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }
  std::size_t n_observations() const { return observations.size(); }
};

inline void validate(const LabelTable& table) {
  std::unordered_set<std::string_view> seen;
  seen.reserve(table.records.size());
  for (const auto& rec : table.records) {
    if (rec.states.size() != table.observations.size()) {
      fail(errc::bad_value, "record " + rec.image_path + " has " +
                                std::to_string(rec.states.size()) + " states, expected " +
                                std::to_string(table.observations.size()));
    }
    if (!seen.insert(rec.image_path).second) {
      fail(errc::duplicate_path, "duplicate image path " + rec.image_path);
    }
  }
}

inline LabelTable parse_labels(std::string_view csv_text,
                               std::vector<std::string> observation_names) {
  const csv::Table raw = csv::parse(csv_text);
  if (raw.header.empty()) fail(errc::empty_table, "label CSV has no header row");
  const std::size_t path_col = raw.require_column("Path");
  std::vector<std::size_t> obs_cols;
  obs_cols.reserve(observation_names.size());
  for (const auto& name : observation_names) {
    obs_cols.push_back(raw.require_column(name));
  }

  LabelTable table;
  table.observations = std::move(observation_names);
  table.records.reserve(raw.rows.size());
  std::unordered_set<std::string_view> seen;
  for (std::size_t r = 0; r < raw.rows.size(); ++r) {
    const auto& row = raw.rows[r];
    LabelRecord rec;
    rec.image_path = row[path_col];
    rec.states.reserve(obs_cols.size());
    for (std::size_t c = 0; c < obs_cols.size(); ++c) {
      try {
        rec.states.push_back(state_from_token(row[obs_cols[c]]));
      } catch (const Error& e) {
        fail(errc::bad_value, "row " + std::to_string(r + 2) + ", column \"" +
                                  table.observations[c] + "\": " + e.what());
      }
    }
    table.records.push_back(std::move(rec));
  }
  for (const auto& rec : table.records) {
    if (!seen.insert(rec.image_path).second) {
      fail(errc::duplicate_path, "duplicate image path " + rec.image_path);
    }
  }
  return table;
}

struct TrainingTarget {
  std::vector<double> target;  // 0/1 per observation
  std::vector<double> mask;    // 1 = contributes to the loss
};

inline TrainingTarget to_target(const LabelRecord& rec) {
  TrainingTarget t;
  t.target.reserve(rec.states.size());
  t.mask.reserve(rec.states.size());
  for (LabelState s : rec.states) {
    switch (s) {
      case LabelState::positive:
        t.target.push_back(1.0);
        t.mask.push_back(1.0);
        break;
      case LabelState::negative:
      case LabelState::missing:
        t.target.push_back(0.0);
        t.mask.push_back(1.0);
        break;
      case LabelState::uncertain:
        t.target.push_back(0.0);
        t.mask.push_back(0.0);
        break;
    }
  }
  return t;
}

inline std::vector<TrainingTarget> to_targets(const LabelTable& table) {
  if (table.empty()) fail(errc::empty_table, "no records to convert");
  std::vector<TrainingTarget> out;
  out.reserve(table.size());
  for (const auto& rec : table.records) out.push_back(to_target(rec));
  return out;
}

struct SplitSpec {
  double ratio = 0.8;
  std::uint64_t seed = 0;
  bool group_by_patient = false;
};

namespace detail {

// Patient key for grouped splits: the path component starting with
// "patient", else the whole path.
inline std::string_view patient_key(std::string_view path) {
  std::size_t start = 0;
  while (start < path.size()) {
    std::size_t end = path.find('/', start);
    if (end == std::string_view::npos) end = path.size();
    const auto component = path.substr(start, end - start);
    if (component.starts_with("patient")) return component;
    start = end + 1;
  }
  return path;
}

}  // namespace detail

// Half-away-from-zero rounding of ratio*N fixes the first-part size; the
// assignment itself is a seeded uniform shuffle of record indices. Record
// order is preserved inside each part.
inline std::pair<LabelTable, LabelTable> split(const LabelTable& table,
                                               const SplitSpec& spec) {
  if (!(spec.ratio > 0.0 && spec.ratio < 1.0)) {
    fail(errc::bad_config, "split ratio must be in (0,1)");
  }
  const std::size_t n = table.size();
  if (n < 2) fail(errc::too_few_records, "need at least 2 records to split");
  const auto n_first =
      static_cast<std::size_t>(std::llround(spec.ratio * static_cast<double>(n)));

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(spec.seed);

  std::vector<char> in_first(n, 0);
  if (!spec.group_by_patient) {
    rng.shuffle(order);
    for (std::size_t i = 0; i < n_first && i < n; ++i) in_first[order[i]] = 1;
  } else {
    // Group records by patient, shuffle groups, then fill the first part
    // greedily. Sizes are approximate when groups do not divide evenly.
    std::vector<std::string_view> keys;
    std::unordered_map<std::string_view, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < n; ++i) {
      const auto key = detail::patient_key(table.records[i].image_path);
      auto [it, inserted] = groups.try_emplace(key);
      if (inserted) keys.push_back(key);
      it->second.push_back(i);
    }
    rng.shuffle(keys);
    std::size_t filled = 0;
    for (const auto& key : keys) {
      if (filled >= n_first) break;
      for (std::size_t i : groups[key]) in_first[i] = 1;
      filled += groups[key].size();
    }
  }

  LabelTable first, second;
  first.observations = table.observations;
  second.observations = table.observations;
  for (std::size_t i = 0; i < n; ++i) {
    (in_first[i] ? first : second).records.push_back(table.records[i]);
  }
  return {std::move(first), std::move(second)};
}

struct ObservationCounts {
  std::string name;
  std::size_t positive = 0, negative = 0, uncertain = 0, missing = 0;
  double pct_positive = 0, pct_negative = 0, pct_uncertain = 0, pct_missing = 0;
};

struct Distribution {
  std::size_t n_records = 0;
  std::vector<ObservationCounts> per_observation;
};

inline double percent_2dp(std::size_t count, std::size_t total) {
  const double pct = 100.0 * static_cast<double>(count) / static_cast<double>(total);
  return std::round(pct * 100.0) / 100.0;
}

inline Distribution distribution(const LabelTable& table) {
  if (table.empty()) fail(errc::empty_table, "no records to summarize");
  Distribution dist;
  dist.n_records = table.size();
  dist.per_observation.resize(table.n_observations());
  for (std::size_t c = 0; c < table.n_observations(); ++c) {
    dist.per_observation[c].name = table.observations[c];
  }
  for (const auto& rec : table.records) {
    for (std::size_t c = 0; c < rec.states.size(); ++c) {
      auto& oc = dist.per_observation[c];
      switch (rec.states[c]) {
        case LabelState::positive: ++oc.positive; break;
        case LabelState::negative: ++oc.negative; break;
        case LabelState::uncertain: ++oc.uncertain; break;
        case LabelState::missing: ++oc.missing; break;
      }
    }
  }
  for (auto& oc : dist.per_observation) {
    oc.pct_positive = percent_2dp(oc.positive, dist.n_records);
    oc.pct_negative = percent_2dp(oc.negative, dist.n_records);
    oc.pct_uncertain = percent_2dp(oc.uncertain, dist.n_records);
    oc.pct_missing = percent_2dp(oc.missing, dist.n_records);
  }
  return dist;
}

inline std::string to_csv(const LabelTable& table) {
  std::string out = "Path";
  for (const auto& name : table.observations) {
    out += ',';
    out += csv::escape(name);
  }
  out += '\n';
  for (const auto& rec : table.records) {
    out += csv::escape(rec.image_path);
    for (LabelState s : rec.states) {
      out += ',';
      out += to_csv_token(s);
    }
    out += '\n';
  }
  return out;
}

inline nlohmann::ordered_json to_json(const LabelTable& table) {
  nlohmann::ordered_json j;
  j["observations"] = table.observations;
  auto& records = j["records"] = nlohmann::ordered_json::array();
  for (const auto& rec : table.records) {
    nlohmann::ordered_json r;
    r["path"] = rec.image_path;
    auto& states = r["states"] = nlohmann::ordered_json::array();
    for (LabelState s : rec.states) states.push_back(to_string(s));
    records.push_back(std::move(r));
  }
  return j;
}

inline LabelTable table_from_json(const nlohmann::json& j) {
  LabelTable table;
  table.observations = j.at("observations").get<std::vector<std::string>>();
  for (const auto& r : j.at("records")) {
    LabelRecord rec;
    rec.image_path = r.at("path").get<std::string>();
    for (const auto& s : r.at("states")) {
      const auto name = s.get<std::string>();
      if (name == "positive") rec.states.push_back(LabelState::positive);
      else if (name == "negative") rec.states.push_back(LabelState::negative);
      else if (name == "uncertain") rec.states.push_back(LabelState::uncertain);
      else if (name == "missing") rec.states.push_back(LabelState::missing);
      else fail(errc::bad_value, "unknown label state \"" + name + "\"");
    }
    table.records.push_back(std::move(rec));
  }
  validate(table);
  return table;
}

inline nlohmann::ordered_json to_json(const Distribution& dist) {
  nlohmann::ordered_json j;
  j["n_records"] = dist.n_records;
  auto& obs = j["observations"] = nlohmann::ordered_json::array();
  for (const auto& oc : dist.per_observation) {
    nlohmann::ordered_json o;
    o["name"] = oc.name;
    o["counts"] = {{"positive", oc.positive},
                   {"negative", oc.negative},
                   {"uncertain", oc.uncertain},
                   {"missing", oc.missing}};
    o["percent"] = {{"positive", oc.pct_positive},
                    {"negative", oc.pct_negative},
                    {"uncertain", oc.pct_uncertain},
                    {"missing", oc.pct_missing}};
    obs.push_back(std::move(o));
  }
  return j;
}

}  // namespace chexkit::labels

#include "xman/reader.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <nlohmann/json.hpp>
#include <ostream>
#include <set>
#include <sstream>

#include "fs_util.hpp"
#include "xman/error.hpp"

namespace xman {

namespace fs = std::filesystem;

namespace {

std::atomic<std::size_t> g_metric_reads{0};

struct LoadedLog {
  std::map<std::string, MetricSeries, std::less<>> series;
  // First line that is not a JSON object; values after it are not loaded.
  std::optional<std::size_t> corrupt_line;
  // First line where a key holds a non-numeric value.
  std::map<std::string, std::size_t, std::less<>> non_numeric;
};

LoadedLog load_log(const fs::path& file) {
  ++g_metric_reads;
  LoadedLog log;
  std::istringstream in(detail::read_file(file));
  std::string text;
  std::size_t line_no = 0;
  while (std::getline(in, text)) {
    ++line_no;
    if (std::all_of(text.begin(), text.end(), [](unsigned char c) { return std::isspace(c); })) continue;
    auto obj = nlohmann::json::parse(text, nullptr, false);
    if (!obj.is_object()) {
      log.corrupt_line = line_no;
      break;
    }
    for (const auto& [key, value] : obj.items()) {
      if (log.non_numeric.count(key)) continue;
      if (value.is_number_integer() && !(value.is_number_unsigned() && value.get<std::uint64_t>() > INT64_MAX)) {
        log.series[key].emplace_back(value.get<std::int64_t>());
      } else if (value.is_number()) {
        log.series[key].emplace_back(value.get<double>());
      } else {
        log.non_numeric.emplace(key, line_no);
      }
    }
  }
  return log;
}

bool same_key_value(const std::optional<Scalar>& a, const std::optional<Scalar>& b) {
  if (!a || !b) return !a && !b;
  return scalar_equivalent(*a, *b);
}

std::string run_list(const std::vector<RunId>& ids) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) out += (i ? ", " : "") + ids[i].str();
  return out;
}

std::string describe_key(const std::vector<std::string>& names, const GroupKey& key) {
  if (names.empty()) return "(all rows)";
  std::string out = "(";
  for (std::size_t i = 0; i < names.size(); ++i)
    out += (i ? ", " : "") + names[i] + "=" + (key[i] ? format_scalar(*key[i]) : "<absent>");
  return out + ")";
}

}  // namespace

namespace detail {

struct ReaderState {
  fs::path root;
  std::vector<IndexedRun> rows;
  std::vector<QuarantinedRun> quarantine;
  std::vector<std::string> searchable;
  std::vector<std::string> metric_columns;

  std::mutex cache_mu;
  std::map<std::pair<std::size_t, std::string>, std::shared_ptr<const LoadedLog>> cache;

  std::shared_ptr<const LoadedLog> log_for(std::size_t row, const std::string& log_name) {
    std::lock_guard lock(cache_mu);
    auto key = std::make_pair(row, log_name);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    auto loaded = std::make_shared<const LoadedLog>(load_log(rows[row].dir / "metrics" / (log_name + ".json")));
    cache.emplace(std::move(key), loaded);
    return loaded;
  }
};

}  // namespace detail

std::size_t metric_file_reads() noexcept { return g_metric_reads.load(); }

const fs::path& RunIndex::root() const { return state_->root; }
const std::vector<IndexedRun>& RunIndex::rows() const { return state_->rows; }
const std::vector<QuarantinedRun>& RunIndex::quarantine() const { return state_->quarantine; }
const std::vector<std::string>& RunIndex::searchable() const { return state_->searchable; }
const std::vector<std::string>& RunIndex::metric_columns() const { return state_->metric_columns; }

RunIndex build_index(const fs::path& logs_root) {
  std::error_code ec;
  if (!fs::is_directory(logs_root, ec))
    throw Error(Errc::MissingLogsRoot, "logs root '" + logs_root.string() + "' does not exist");

  auto state = std::make_shared<detail::ReaderState>();
  state->root = logs_root;
  std::set<std::string> searchable, metrics;
  std::vector<std::pair<std::uint64_t, std::string>> candidates;
  for (const auto& entry : fs::directory_iterator(logs_root, ec)) {
    const std::string name = entry.path().filename().string();
    if (!entry.is_directory(ec) || name.empty() || name[0] == '0') continue;
    if (!std::all_of(name.begin(), name.end(), [](unsigned char c) { return std::isdigit(c); })) continue;
    if (name.size() > 19) {
      state->quarantine.push_back({name, "run id out of range"});
      continue;
    }
    candidates.emplace_back(std::stoull(name), name);
  }
  std::sort(candidates.begin(), candidates.end());

  for (const auto& [id, name] : candidates) {
    const fs::path dir = logs_root / name;
    if (!fs::exists(dir / "metadata" / "info.yaml", ec)) {
      state->quarantine.push_back({name, "metadata/info.yaml is missing"});
      continue;
    }
    RunRecord record;
    try {
      record = open_run_dir(dir);
    } catch (const std::exception& e) {
      state->quarantine.push_back({name, e.what()});
      continue;
    }
    IndexedRun row;
    row.id = RunId{id};
    row.dir = dir;
    auto add = [&](std::string_view prefix, const ConfigTree& tree) {
      for (auto& [k, v] : tree.flatten()) {
        std::string column = std::string(prefix) + k;
        searchable.insert(column);
        row.meta.emplace(std::move(column), std::move(v));
      }
    };
    add("config.", record.config);
    add("info.", record.info.to_tree());
    add("mlxp.", record.settings);
    for (const auto& [log, keys] : record.metric_keys) {
      for (const auto& key : keys) {
        std::string column = log + "." + key;
        metrics.insert(column);
        row.metrics.emplace(std::move(column), MetricColumn{log, key});
      }
    }
    state->rows.push_back(std::move(row));
  }
  state->searchable.assign(searchable.begin(), searchable.end());
  state->metric_columns.assign(metrics.begin(), metrics.end());

  RunIndex index;
  index.state_ = std::move(state);
  return index;
}

// ---- frames -----------------------------------------------------------------------

ResultFrame::ResultFrame(RunIndex index, std::vector<std::size_t> rows, MatchMode mode)
    : index_(std::move(index)), rows_(std::move(rows)), mode_(mode) {}

const IndexedRun& ResultFrame::row(std::size_t i) const { return index_.rows().at(rows_.at(i)); }

std::vector<std::string> ResultFrame::metadata_columns() const {
  std::set<std::string> cols;
  for (std::size_t i = 0; i < size(); ++i)
    for (const auto& [k, v] : row(i).meta) cols.insert(k);
  return {cols.begin(), cols.end()};
}

std::vector<std::string> ResultFrame::metric_columns() const {
  std::set<std::string> cols;
  for (std::size_t i = 0; i < size(); ++i)
    for (const auto& [k, v] : row(i).metrics) cols.insert(k);
  return {cols.begin(), cols.end()};
}

std::optional<Scalar> ResultFrame::meta(std::size_t i, std::string_view column) const {
  const auto& m = row(i).meta;
  auto it = m.find(column);
  if (it == m.end()) return std::nullopt;
  return it->second;
}

bool ResultFrame::has_metric(std::size_t i, std::string_view column) const {
  return row(i).metrics.find(column) != row(i).metrics.end();
}

MetricSeries ResultFrame::get_metric(std::size_t i, std::string_view column) const {
  const IndexedRun& r = row(i);
  auto col = r.metrics.find(column);
  if (col == r.metrics.end())
    throw Error(Errc::MissingMetric, "run " + r.id.str() + " has no metric '" + std::string(column) + "'");
  auto log = index_.state_->log_for(rows_[i], col->second.log_name);
  const std::string file = (r.dir / "metrics" / (col->second.log_name + ".json")).string();

  if (log->corrupt_line && mode_ == MatchMode::Strict)
    throw Error(Errc::CorruptMetricLine, file + ":" + std::to_string(*log->corrupt_line) + ": not a JSON object");
  if (auto bad = log->non_numeric.find(col->second.key); bad != log->non_numeric.end()) {
    if (mode_ == MatchMode::Strict)
      throw Error(Errc::TypeMismatch, file + ":" + std::to_string(bad->second) + ": '" + col->second.key +
                                          "' is not numeric");
  }
  auto it = log->series.find(col->second.key);
  if (it == log->series.end()) return {};
  return it->second;
}

ResultFrame ResultFrame::subset(std::vector<std::size_t> positions) const {
  return ResultFrame(index_, std::move(positions), mode_);
}

ResultFrame filter(const RunIndex& index, const Query& query, MatchMode mode) {
  if (mode == MatchMode::Strict) {
    const auto& known = index.searchable();
    for (const auto& key : query_keys(query))
      if (!std::binary_search(known.begin(), known.end(), key))
        throw Error(Errc::UnknownKey, "'" + key + "' is not a searchable key");
  }
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < index.rows().size(); ++i)
    if (evaluate(query, index.rows()[i].meta, mode)) rows.push_back(i);
  return ResultFrame(index, std::move(rows), mode);
}

ResultFrame filter(const RunIndex& index, std::string_view query, MatchMode mode) {
  return filter(index, parse_query(query), mode);
}

// ---- grouping and aggregation -------------------------------------------------------

GroupedFrames group_by(const ResultFrame& frame, const std::vector<std::string>& keys) {
  const auto& searchable = frame.index().searchable();
  const auto& metric_cols = frame.index().metric_columns();
  for (const auto& k : keys) {
    if (std::binary_search(searchable.begin(), searchable.end(), k)) continue;
    if (std::binary_search(metric_cols.begin(), metric_cols.end(), k))
      throw Error(Errc::NonMetadataGroupKey, "cannot group by metric column '" + k + "'");
    throw Error(Errc::UnknownKey, "'" + k + "' is not a metadata column");
  }

  GroupedFrames out;
  out.keys = keys;
  std::vector<std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < frame.size(); ++i) {
    GroupKey key;
    for (const auto& k : keys) key.push_back(frame.meta(i, k));
    std::size_t g = 0;
    for (; g < out.groups.size(); ++g) {
      const GroupKey& other = out.groups[g].key;
      bool same = true;
      for (std::size_t c = 0; c < key.size() && same; ++c) same = same_key_value(key[c], other[c]);
      if (same) break;
    }
    if (g == out.groups.size()) {
      out.groups.push_back(Group{std::move(key), {}});
      members.emplace_back();
    }
    members[g].push_back(frame.positions()[i]);
  }
  for (std::size_t g = 0; g < out.groups.size(); ++g) out.groups[g].frame = frame.subset(std::move(members[g]));
  return out;
}

AggregateTable aggregate(const GroupedFrames& groups, const std::vector<AggregationMap>& maps) {
  AggregateTable table;
  table.key_columns = groups.keys;
  for (const auto& m : maps) {
    table.value_columns.push_back(m.column + "_avg");
    table.value_columns.push_back(m.column + "_std");
  }

  for (const Group& group : groups.groups) {
    const ResultFrame& f = group.frame;
    AggregateRow row;
    row.key = group.key;
    for (std::size_t i = 0; i < f.size(); ++i) row.runs.push_back(f.id(i));

    for (const auto& m : maps) {
      const auto& metric_cols = f.index().metric_columns();
      const bool is_metric = std::binary_search(metric_cols.begin(), metric_cols.end(), m.column);
      std::vector<std::vector<double>> samples;
      for (std::size_t i = 0; i < f.size(); ++i) {
        std::vector<double> values;
        if (is_metric) {
          if (!f.has_metric(i, m.column))
            throw Error(Errc::MissingColumnInGroup, "run " + f.id(i).str() + " in group " +
                                                        describe_key(groups.keys, group.key) + " lacks '" +
                                                        m.column + "'");
          for (const auto& v : f.get_metric(i, m.column))
            values.push_back(std::visit([](auto x) { return static_cast<double>(x); }, v));
        } else {
          auto v = f.meta(i, m.column);
          if (!v)
            throw Error(Errc::MissingColumnInGroup, "run " + f.id(i).str() + " in group " +
                                                        describe_key(groups.keys, group.key) + " lacks '" +
                                                        m.column + "'");
          auto d = as_double(*v);
          if (!d) throw Error(Errc::TypeMismatch, "'" + m.column + "' of run " + f.id(i).str() + " is not numeric");
          values.push_back(*d);
        }
        samples.push_back(std::move(values));
      }

      const std::size_t len = samples.empty() ? 0 : samples.front().size();
      std::vector<RunId> odd;
      for (std::size_t i = 0; i < samples.size(); ++i)
        if (samples[i].size() != len) odd.push_back(f.id(i));
      if (!odd.empty())
        throw Error(Errc::LengthMismatch, "'" + m.column + "' in group " + describe_key(groups.keys, group.key) +
                                              ": run " + f.id(0).str() + " has " + std::to_string(len) +
                                              " values but runs " + run_list(odd) + " differ");

      const double n = static_cast<double>(samples.size());
      AggregateValue avg{is_metric, std::vector<double>(len, 0.0)};
      AggregateValue sd{is_metric, std::vector<double>(len, 0.0)};
      for (std::size_t k = 0; k < len; ++k) {
        double sum = 0.0;
        for (const auto& s : samples) sum += s[k];
        const double mean = sum / n;
        double sq = 0.0;
        for (const auto& s : samples) sq += (s[k] - mean) * (s[k] - mean);
        avg.values[k] = mean;
        sd.values[k] = std::sqrt(sq / n);
      }
      row.values[m.column + "_avg"] = std::move(avg);
      row.values[m.column + "_std"] = std::move(sd);
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

DiffTable diff(const ResultFrame& frame) {
  if (frame.empty()) throw Error(Errc::EmptyFrame, "diff of an empty frame");
  DiffTable out;
  for (std::size_t i = 0; i < frame.size(); ++i) out.runs.push_back(frame.id(i));
  for (const auto& col : frame.metadata_columns()) {
    if (!col.starts_with("config.")) continue;
    std::vector<std::optional<Scalar>> values;
    for (std::size_t i = 0; i < frame.size(); ++i) values.push_back(frame.meta(i, col));
    bool varies = std::any_of(values.begin(), values.end(),
                              [&](const std::optional<Scalar>& v) { return !same_key_value(v, values.front()); });
    if (!varies) continue;
    out.keys.push_back(col);
    out.values.push_back(std::move(values));
  }
  return out;
}

// ---- output -------------------------------------------------------------------------

std::optional<OutputFormat> parse_output_format(std::string_view name) noexcept {
  if (name == "csv") return OutputFormat::Csv;
  if (name == "json") return OutputFormat::Json;
  if (name == "table") return OutputFormat::Table;
  return std::nullopt;
}

namespace {

using Json = nlohmann::ordered_json;

Json scalar_json(const Scalar& v) {
  return std::visit(
      [](const auto& x) -> Json {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, std::monostate>) return nullptr;
        else if constexpr (std::is_same_v<T, double>) return std::isfinite(x) ? Json(x) : Json(nullptr);
        else return Json(x);
      },
      v);
}

Json values_json(const AggregateValue& v) {
  Json arr = Json::array();
  for (double d : v.values) arr.push_back(std::isfinite(d) ? Json(d) : Json(nullptr));
  if (!v.sequence && v.values.size() == 1) return arr.front();
  return arr;
}

std::string cell_text(const std::optional<Scalar>& v) {
  if (!v || std::holds_alternative<std::monostate>(*v)) return "";
  return format_scalar(*v);
}

std::string aggregate_text(const AggregateValue& v) {
  if (!v.sequence && v.values.size() == 1) return format_double(v.values.front());
  std::string out = "[";
  for (std::size_t i = 0; i < v.values.size(); ++i) out += (i ? ", " : "") + format_double(v.values[i]);
  return out + "]";
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

void write_rows(std::ostream& out, const std::vector<std::string>& header,
                const std::vector<std::vector<std::string>>& rows, OutputFormat format) {
  if (format == OutputFormat::Csv) {
    for (std::size_t c = 0; c < header.size(); ++c) out << (c ? "," : "") << csv_escape(header[c]);
    out << "\n";
    for (const auto& r : rows) {
      for (std::size_t c = 0; c < r.size(); ++c) out << (c ? "," : "") << csv_escape(r[c]);
      out << "\n";
    }
    return;
  }
  std::vector<std::size_t> width(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) width[c] = header[c].size();
  for (const auto& r : rows)
    for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
  auto line = [&](const std::vector<std::string>& cells) {
    std::string text;
    for (std::size_t c = 0; c < cells.size(); ++c) {
      text += cells[c];
      if (c + 1 < cells.size()) text += std::string(width[c] - cells[c].size() + 2, ' ');
    }
    out << text << "\n";
  };
  line(header);
  for (const auto& r : rows) line(r);
}

}  // namespace

void write_frame(std::ostream& out, const ResultFrame& frame, OutputFormat format) {
  const auto meta_cols = frame.metadata_columns();
  const auto metric_cols = frame.metric_columns();
  if (format == OutputFormat::Json) {
    Json arr = Json::array();
    for (std::size_t i = 0; i < frame.size(); ++i) {
      Json obj = Json::object();
      obj["run_id"] = frame.id(i).value;
      for (const auto& c : meta_cols)
        if (auto v = frame.meta(i, c)) obj[c] = scalar_json(*v);
      for (const auto& c : metric_cols) {
        if (!frame.has_metric(i, c)) continue;
        Json seq = Json::array();
        for (const auto& v : frame.get_metric(i, c))
          std::visit([&](auto x) { seq.push_back(std::isfinite(static_cast<double>(x)) ? Json(x) : Json(nullptr)); }, v);
        obj[c] = std::move(seq);
      }
      arr.push_back(std::move(obj));
    }
    out << arr.dump(2) << "\n";
    return;
  }
  std::vector<std::string> header = {"run_id"};
  header.insert(header.end(), meta_cols.begin(), meta_cols.end());
  if (format == OutputFormat::Table) header.insert(header.end(), metric_cols.begin(), metric_cols.end());
  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < frame.size(); ++i) {
    std::vector<std::string> r = {frame.id(i).str()};
    for (const auto& c : meta_cols) r.push_back(cell_text(frame.meta(i, c)));
    if (format == OutputFormat::Table)
      for (const auto& c : metric_cols) r.push_back(frame.has_metric(i, c) ? "LAZYDATA" : "");
    rows.push_back(std::move(r));
  }
  write_rows(out, header, rows, format);
}

void write_aggregate(std::ostream& out, const AggregateTable& table, OutputFormat format) {
  if (format == OutputFormat::Json) {
    Json arr = Json::array();
    for (const auto& row : table.rows) {
      Json obj = Json::object();
      for (std::size_t k = 0; k < table.key_columns.size(); ++k)
        if (row.key[k]) obj[table.key_columns[k]] = scalar_json(*row.key[k]);
      for (const auto& c : table.value_columns) obj[c] = values_json(row.values.at(c));
      Json runs = Json::array();
      for (auto id : row.runs) runs.push_back(id.value);
      obj["runs"] = std::move(runs);
      arr.push_back(std::move(obj));
    }
    out << arr.dump(2) << "\n";
    return;
  }
  std::vector<std::string> header = table.key_columns;
  header.insert(header.end(), table.value_columns.begin(), table.value_columns.end());
  header.push_back("runs");
  std::vector<std::vector<std::string>> rows;
  for (const auto& row : table.rows) {
    std::vector<std::string> r;
    for (const auto& k : row.key) r.push_back(cell_text(k));
    for (const auto& c : table.value_columns) r.push_back(aggregate_text(row.values.at(c)));
    std::string ids;
    for (auto id : row.runs) ids += (ids.empty() ? "" : " ") + id.str();
    r.push_back(std::move(ids));
    rows.push_back(std::move(r));
  }
  write_rows(out, header, rows, format);
}

void write_diff(std::ostream& out, const DiffTable& table, OutputFormat format) {
  if (format == OutputFormat::Json) {
    Json arr = Json::array();
    for (std::size_t i = 0; i < table.runs.size(); ++i) {
      Json obj = Json::object();
      obj["run_id"] = table.runs[i].value;
      for (std::size_t k = 0; k < table.keys.size(); ++k)
        if (table.values[k][i]) obj[table.keys[k]] = scalar_json(*table.values[k][i]);
      arr.push_back(std::move(obj));
    }
    out << arr.dump(2) << "\n";
    return;
  }
  std::vector<std::string> header = {"run_id"};
  header.insert(header.end(), table.keys.begin(), table.keys.end());
  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < table.runs.size(); ++i) {
    std::vector<std::string> r = {table.runs[i].str()};
    for (std::size_t k = 0; k < table.keys.size(); ++k) r.push_back(cell_text(table.values[k][i]));
    rows.push_back(std::move(r));
  }
  write_rows(out, header, rows, format);
}

void write_quarantine(std::ostream& out, const RunIndex& index) {
  for (const auto& q : index.quarantine()) out << "quarantined run " << q.name << ": " << q.reason << "\n";
}

}  // namespace xman

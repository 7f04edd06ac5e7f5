#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "xman/config.hpp"
#include "xman/query.hpp"
#include "xman/run_id.hpp"
#include "xman/runstore.hpp"

namespace xman {

using FlatRow = std::map<std::string, Scalar, std::less<>>;

struct MetricColumn {
  std::string log_name;
  std::string key;
};

struct IndexedRun {
  RunId id;
  std::filesystem::path dir;
  FlatRow meta;                                           // config.* / info.* / mlxp.*
  std::map<std::string, MetricColumn, std::less<>> metrics;  // "<log>.<key>" from the keys catalog
};

struct QuarantinedRun {
  std::string name;
  std::string reason;
};

namespace detail {
struct ReaderState;
}

/// Metadata of every run under a logs root. Cheap to copy; frames share it.
class RunIndex {
 public:
  const std::filesystem::path& root() const;
  const std::vector<IndexedRun>& rows() const;
  const std::vector<QuarantinedRun>& quarantine() const;
  /// Sorted union of metadata keys.
  const std::vector<std::string>& searchable() const;
  /// Sorted union of metric column names.
  const std::vector<std::string>& metric_columns() const;

 private:
  friend RunIndex build_index(const std::filesystem::path&);
  friend class ResultFrame;
  std::shared_ptr<detail::ReaderState> state_;
};

/// Reads only `metadata/*.yaml` and `metrics/keys/metrics.yaml` of each run.
RunIndex build_index(const std::filesystem::path& logs_root);

/// Number of metric data files read by this process (instrumentation).
std::size_t metric_file_reads() noexcept;

using MetricSeries = std::vector<MetricValue>;

class ResultFrame {
 public:
  ResultFrame() = default;
  ResultFrame(RunIndex index, std::vector<std::size_t> rows, MatchMode mode = MatchMode::Lenient);

  std::size_t size() const noexcept { return rows_.size(); }
  bool empty() const noexcept { return rows_.empty(); }
  const RunIndex& index() const noexcept { return index_; }
  MatchMode mode() const noexcept { return mode_; }
  const IndexedRun& row(std::size_t i) const;
  RunId id(std::size_t i) const { return row(i).id; }
  /// Positions of this frame's rows in the index.
  const std::vector<std::size_t>& positions() const noexcept { return rows_; }

  /// Sorted metadata columns present in at least one row.
  std::vector<std::string> metadata_columns() const;
  /// Sorted metric columns present in at least one row.
  std::vector<std::string> metric_columns() const;

  std::optional<Scalar> meta(std::size_t i, std::string_view column) const;
  bool has_metric(std::size_t i, std::string_view column) const;

  /// Loads the run's log on first use (one file read), then serves it from cache.
  /// Throws MissingMetric, or CorruptMetricLine in strict mode; lenient mode returns
  /// the values before the first corrupt line.
  MetricSeries get_metric(std::size_t i, std::string_view column) const;

  ResultFrame subset(std::vector<std::size_t> positions) const;

 private:
  RunIndex index_;
  std::vector<std::size_t> rows_;
  MatchMode mode_ = MatchMode::Lenient;
};

/// Strict mode also rejects keys outside `searchable` with UnknownKey.
ResultFrame filter(const RunIndex& index, const Query& query, MatchMode mode = MatchMode::Lenient);
ResultFrame filter(const RunIndex& index, std::string_view query, MatchMode mode = MatchMode::Lenient);

using GroupKey = std::vector<std::optional<Scalar>>;  // nullopt: column absent for the group

struct Group {
  GroupKey key;
  ResultFrame frame;
};

struct GroupedFrames {
  std::vector<std::string> keys;
  std::vector<Group> groups;  // first-appearance order
};

/// Partitions by the values of metadata columns; metric columns are refused.
GroupedFrames group_by(const ResultFrame& frame, const std::vector<std::string>& keys);

enum class AggregationKind { AvgStd };

struct AggregationMap {
  std::string column;
  AggregationKind kind = AggregationKind::AvgStd;
};

struct AggregateValue {
  bool sequence = false;  // element-wise over metric sequences, else a scalar mean
  std::vector<double> values;
};

struct AggregateRow {
  GroupKey key;
  std::vector<RunId> runs;
  std::map<std::string, AggregateValue, std::less<>> values;  // "<col>_avg", "<col>_std"
};

struct AggregateTable {
  std::vector<std::string> key_columns;
  std::vector<std::string> value_columns;
  std::vector<AggregateRow> rows;
};

/// Mean and population standard deviation per group. Throws LengthMismatch or
/// MissingColumnInGroup.
AggregateTable aggregate(const GroupedFrames& groups, const std::vector<AggregationMap>& maps);

struct DiffTable {
  std::vector<std::string> keys;            // config columns that vary
  std::vector<RunId> runs;
  std::vector<std::vector<std::optional<Scalar>>> values;  // [key][run]
};

/// Config columns with more than one distinct value over the frame (absence counts).
DiffTable diff(const ResultFrame& frame);

enum class OutputFormat { Csv, Json, Table };
std::optional<OutputFormat> parse_output_format(std::string_view name) noexcept;

/// CSV: metadata columns only. JSON: metadata plus materialized metrics.
/// Table: metric cells shown as LAZYDATA.
void write_frame(std::ostream& out, const ResultFrame& frame, OutputFormat format);
void write_aggregate(std::ostream& out, const AggregateTable& table, OutputFormat format);
void write_diff(std::ostream& out, const DiffTable& table, OutputFormat format);
void write_quarantine(std::ostream& out, const RunIndex& index);

}  // namespace xman

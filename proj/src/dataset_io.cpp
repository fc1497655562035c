#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "scoopgp/error.hpp"
#include "scoopgp/tasks.hpp"

namespace scoopgp::tasks {
namespace {

constexpr const char* kRecordHeader =
    "task_id\tmaterial_ids\tcomposition\tx\ty\tyaw_index\tdepth_m\tstiffness\treward_cm3\tfeature_vector";
constexpr const char* kManifestHeader = "task_id\tcomposition\tmaterial_ids\trecords";

std::string Real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.8e", v);
  return buf;
}

std::string JoinIds(const std::vector<int>& ids) {
  std::string s;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) s += '+';
    s += std::to_string(ids[i]);
  }
  return s;
}

std::vector<std::string_view> Split(std::string_view s, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = s.find(sep, start);
    parts.push_back(s.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

class LineContext {
 public:
  LineContext(const std::string& source, std::size_t line) : source_(source), line_(line) {}

  [[noreturn]] void Fail(std::string_view field, const std::string& what) const {
    throw IngestionError(source_ + ":" + std::to_string(line_) + ": field '" + std::string(field) + "': " + what);
  }

  int Int(std::string_view field, std::string_view text) const {
    int v = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size()) Fail(field, "not an integer: '" + std::string(text) + "'");
    return v;
  }

  double Real(std::string_view field, std::string_view text) const {
    const std::string s(text);
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(v)) Fail(field, "not a finite number: '" + s + "'");
    return v;
  }

  std::vector<int> Ids(std::string_view field, std::string_view text) const {
    std::vector<int> ids;
    for (std::string_view p : Split(text, '+')) ids.push_back(Int(field, p));
    if (ids.empty()) Fail(field, "no material ids");
    return ids;
  }

 private:
  const std::string& source_;
  std::size_t line_;
};

}  // namespace

void WriteRecords(std::ostream& out, std::span<const TaskDataset> data) {
  out << kRecordHeader << '\n';
  for (const TaskDataset& task : data) {
    for (const ScoopRecord& r : task.records) {
      out << task.task_id << '\t' << JoinIds(task.material_ids) << '\t' << ToString(task.composition) << '\t'
          << Real(r.action.x) << '\t' << Real(r.action.y) << '\t' << r.action.yaw_index << '\t' << Real(r.action.depth)
          << '\t' << ToString(r.action.stiffness) << '\t' << Real(r.reward) << '\t';
      for (std::size_t i = 0; i < r.observation.size(); ++i) {
        if (i) out << ';';
        out << Real(r.observation[i]);
      }
      out << '\n';
    }
  }
}

void WriteManifest(std::ostream& out, std::span<const TaskDataset> data) {
  out << kManifestHeader << '\n';
  for (const TaskDataset& task : data) {
    out << task.task_id << '\t' << ToString(task.composition) << '\t' << JoinIds(task.material_ids) << '\t'
        << task.records.size() << '\n';
  }
}

void SaveDataset(const std::string& records_path, const std::string& manifest_path, std::span<const TaskDataset> data) {
  std::ofstream records(records_path);
  if (!records) throw IngestionError("cannot write '" + records_path + "'");
  WriteRecords(records, data);
  std::ofstream manifest(manifest_path);
  if (!manifest) throw IngestionError("cannot write '" + manifest_path + "'");
  WriteManifest(manifest, data);
}

DatasetStatistics Summarize(std::span<const TaskDataset> data) {
  DatasetStatistics stats;
  stats.tasks = data.size();
  double sum = 0.0;
  for (const TaskDataset& t : data) {
    for (const ScoopRecord& r : t.records) {
      sum += r.reward;
      stats.max_reward = std::max(stats.max_reward, r.reward);
      ++stats.records;
    }
  }
  if (stats.records) stats.mean_reward = sum / static_cast<double>(stats.records);
  return stats;
}

std::vector<TaskDataset> ReadRecords(std::istream& in, const std::string& source) {
  std::string line;
  if (!std::getline(in, line)) throw IngestionError(source + ": empty file");
  if (line != kRecordHeader) throw IngestionError(source + ":1: unexpected header '" + line + "'");

  std::vector<TaskDataset> data;
  std::map<int, std::size_t> index;
  std::size_t feature_dim = 0;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const LineContext ctx(source, line_no);
    const std::vector<std::string_view> f = Split(line, '\t');
    if (f.size() != 10) ctx.Fail("record", "expected 10 tab-separated fields, found " + std::to_string(f.size()));

    const int task_id = ctx.Int("task_id", f[0]);
    const std::vector<int> materials = ctx.Ids("material_ids", f[1]);
    Composition composition = Composition::kSingle;
    try {
      composition = ParseComposition(f[2]);
    } catch (const ArgumentError& e) {
      ctx.Fail("composition", e.what());
    }

    ScoopRecord rec;
    rec.action.x = ctx.Real("x", f[3]);
    rec.action.y = ctx.Real("y", f[4]);
    rec.action.yaw_index = ctx.Int("yaw_index", f[5]);
    rec.action.depth = ctx.Real("depth_m", f[6]);
    try {
      rec.action.stiffness = ParseStiffness(f[7]);
    } catch (const ArgumentError& e) {
      ctx.Fail("stiffness", e.what());
    }
    try {
      ValidateAction(rec.action);
    } catch (const ArgumentError& e) {
      ctx.Fail("action", e.what());
    }
    rec.reward = ctx.Real("reward_cm3", f[8]);
    if (rec.reward < 0.0) ctx.Fail("reward_cm3", "negative reward");
    for (std::string_view v : Split(f[9], ';')) rec.observation.push_back(ctx.Real("feature_vector", v));
    if (feature_dim == 0) feature_dim = rec.observation.size();
    if (rec.observation.size() != feature_dim) {
      ctx.Fail("feature_vector", "dimension " + std::to_string(rec.observation.size()) + " differs from " +
                                     std::to_string(feature_dim));
    }

    auto [it, inserted] = index.try_emplace(task_id, data.size());
    if (inserted) {
      data.push_back({task_id, materials, composition, {}});
    } else {
      const TaskDataset& t = data[it->second];
      if (t.material_ids != materials) ctx.Fail("material_ids", "differs from earlier records of task " + std::to_string(task_id));
      if (t.composition != composition) ctx.Fail("composition", "differs from earlier records of task " + std::to_string(task_id));
    }
    data[it->second].records.push_back(std::move(rec));
  }
  if (data.empty()) throw IngestionError(source + ": no records");
  return data;
}

void CheckManifest(std::istream& in, std::span<const TaskDataset> data, const std::string& source) {
  std::string line;
  if (!std::getline(in, line) || line != kManifestHeader) throw IngestionError(source + ":1: missing manifest header");
  std::map<int, const TaskDataset*> by_id;
  for (const TaskDataset& t : data) by_id[t.task_id] = &t;
  std::size_t line_no = 1, listed = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const LineContext ctx(source, line_no);
    const auto f = Split(line, '\t');
    if (f.size() != 4) ctx.Fail("manifest", "expected 4 fields");
    const int id = ctx.Int("task_id", f[0]);
    auto it = by_id.find(id);
    if (it == by_id.end()) ctx.Fail("task_id", "task " + std::to_string(id) + " has no records");
    if (ToString(it->second->composition) != f[1]) ctx.Fail("composition", "disagrees with records");
    if (ctx.Ids("material_ids", f[2]) != it->second->material_ids) ctx.Fail("material_ids", "disagrees with records");
    if (static_cast<std::size_t>(ctx.Int("records", f[3])) != it->second->records.size()) {
      ctx.Fail("records", "count disagrees with record file");
    }
    ++listed;
  }
  if (listed != data.size()) {
    throw IngestionError(source + ": lists " + std::to_string(listed) + " tasks, record file has " +
                         std::to_string(data.size()));
  }
}

std::vector<TaskDataset> ReadDataset(const std::string& records_path, const std::string& manifest_path) {
  std::ifstream records(records_path);
  if (!records) throw IngestionError("cannot open '" + records_path + "'");
  std::vector<TaskDataset> data = ReadRecords(records, records_path);
  if (!manifest_path.empty()) {
    std::ifstream manifest(manifest_path);
    if (!manifest) throw IngestionError("cannot open '" + manifest_path + "'");
    CheckManifest(manifest, data, manifest_path);
  }
  return data;
}

}  // namespace scoopgp::tasks

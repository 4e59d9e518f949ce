#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "silo/data.hpp"
#include "silo/error.hpp"

namespace silo {

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return fields;
}

double parse_number(std::string_view field, std::size_t line, std::string_view column) {
  double v = 0.0;
  const auto* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(field.data(), end, v);
  if (ec != std::errc() || ptr != end || field.empty())
    throw ParseError(line, "column " + std::string(column) + ": not a number: '" + std::string(field) + "'");
  return v;
}

long parse_integer(std::string_view field, std::size_t line, std::string_view column) {
  long v = 0;
  const auto* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(field.data(), end, v);
  if (ec != std::errc() || ptr != end || field.empty())
    throw ParseError(line, "column " + std::string(column) + ": not an integer: '" + std::string(field) + "'");
  return v;
}

enum class LabelLayout { Class, Survival, Mask };

struct Row {
  std::size_t line;
  std::string client;
  bool train;
  Sample sample;
  long raw_class = 0;
};

}  // namespace

FederatedDataset parse_csv(std::string_view text, std::optional<TaskInfo> hint) {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  auto next_line = [&](std::string_view& out) {
    if (pos >= text.size()) return false;
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    out = text.substr(pos, end - pos);
    if (!out.empty() && out.back() == '\r') out.remove_suffix(1);
    pos = end + 1;
    ++line_no;
    return true;
  };

  std::string_view header_line;
  if (!next_line(header_line) || header_line.empty()) throw ParseError(1, "missing header");
  const auto header = split_fields(header_line);
  if (header.size() < 3 || header[0] != "client_id" || header[1] != "split")
    throw ParseError(1, "header must start with client_id,split");

  LabelLayout layout;
  std::size_t label_cols = 0;
  if (header[2] == "label") {
    layout = LabelLayout::Class;
    label_cols = 1;
  } else if (header[2] == "time") {
    if (header.size() < 4 || header[3] != "event") throw ParseError(1, "column 'time' must be followed by 'event'");
    layout = LabelLayout::Survival;
    label_cols = 2;
  } else if (header[2] == "m0") {
    layout = LabelLayout::Mask;
    while (2 + label_cols < header.size() && header[2 + label_cols] == "m" + std::to_string(label_cols))
      ++label_cols;
  } else {
    throw ParseError(1, "unknown label column '" + std::string(header[2]) + "'");
  }
  const std::size_t first_feature = 2 + label_cols;
  const std::size_t dim = header.size() - first_feature;
  if (dim == 0) throw ParseError(1, "no feature columns");
  for (std::size_t j = 0; j < dim; ++j) {
    if (header[first_feature + j] != "f" + std::to_string(j))
      throw ParseError(1, "expected feature column f" + std::to_string(j) + ", got '" +
                              std::string(header[first_feature + j]) + "'");
  }

  std::vector<Row> rows;
  std::string_view line;
  while (next_line(line)) {
    if (line.empty()) continue;
    const auto fields = split_fields(line);
    if (fields.size() != header.size())
      throw ParseError(line_no, "expected " + std::to_string(header.size()) + " fields, got " +
                                    std::to_string(fields.size()));
    Row row{line_no, std::string(fields[0]), false, {}, 0};
    if (row.client.empty()) throw ParseError(line_no, "empty client_id");
    if (fields[1] == "train") {
      row.train = true;
    } else if (fields[1] != "test") {
      throw ParseError(line_no, "split must be 'train' or 'test'");
    }
    switch (layout) {
      case LabelLayout::Class: {
        row.raw_class = parse_integer(fields[2], line_no, "label");
        if (row.raw_class < 0) throw ParseError(line_no, "label must be non-negative");
        break;
      }
      case LabelLayout::Survival: {
        const double t = parse_number(fields[2], line_no, "time");
        if (!(t > 0.0)) throw ParseError(line_no, "survival time must be positive");
        const long e = parse_integer(fields[3], line_no, "event");
        if (e != 0 && e != 1) throw ParseError(line_no, "event must be 0 or 1");
        row.sample.label = SurvivalLabel{t, e == 1};
        break;
      }
      case LabelLayout::Mask: {
        MaskLabel m;
        m.bits.reserve(label_cols);
        for (std::size_t j = 0; j < label_cols; ++j) {
          const long b = parse_integer(fields[2 + j], line_no, header[2 + j]);
          if (b != 0 && b != 1) throw ParseError(line_no, "mask entries must be 0 or 1");
          m.bits.push_back(static_cast<std::uint8_t>(b));
        }
        row.sample.label = std::move(m);
        break;
      }
    }
    row.sample.features.reserve(dim);
    for (std::size_t j = 0; j < dim; ++j)
      row.sample.features.push_back(parse_number(fields[first_feature + j], line_no, header[first_feature + j]));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ParseError(0, "no clients");

  TaskInfo task;
  switch (layout) {
    case LabelLayout::Survival: task.kind = TaskKind::Survival; break;
    case LabelLayout::Mask:
      task.kind = TaskKind::Mask;
      task.mask_length = static_cast<int>(label_cols);
      break;
    case LabelLayout::Class: {
      long max_label = 0;
      for (const auto& r : rows) max_label = std::max(max_label, r.raw_class);
      if (hint && hint->kind == TaskKind::Multiclass) {
        task = *hint;
        if (max_label >= task.num_classes)
          throw ParseError(0, "label " + std::to_string(max_label) + " exceeds the class count");
      } else if (max_label <= 1 && !(hint && hint->kind != TaskKind::Binary)) {
        task.kind = TaskKind::Binary;
      } else {
        task.kind = TaskKind::Multiclass;
        task.num_classes = static_cast<int>(std::max<long>(2, max_label + 1));
      }
      for (auto& r : rows) {
        if (task.kind == TaskKind::Binary)
          r.sample.label = BinaryLabel{static_cast<int>(r.raw_class)};
        else
          r.sample.label = ClassLabel{static_cast<int>(r.raw_class)};
      }
      break;
    }
  }
  if (hint && hint->kind != task.kind)
    throw ParseError(0, "file holds a " + std::string(to_string(task.kind)) + " task, expected " +
                            std::string(to_string(hint->kind)));

  std::vector<ClientDataset> clients;
  std::unordered_map<std::string, std::size_t> index;
  for (auto& r : rows) {
    auto [it, inserted] = index.try_emplace(r.client, clients.size());
    if (inserted) clients.push_back(ClientDataset{r.client, {}, {}});
    auto& c = clients[it->second];
    try {
      check_sample(r.sample, task, dim);
    } catch (const ConfigError& e) {
      throw ParseError(r.line, e.what());
    }
    (r.train ? c.train : c.test).push_back(std::move(r.sample));
  }
  return FederatedDataset(task, dim, std::move(clients));
}

FederatedDataset load_csv(const std::filesystem::path& path, std::optional<TaskInfo> hint) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_csv(buf.str(), hint);
}

std::string to_csv(const FederatedDataset& fed) {
  std::string out = "client_id,split";
  switch (fed.task().kind) {
    case TaskKind::Binary:
    case TaskKind::Multiclass: out += ",label"; break;
    case TaskKind::Survival: out += ",time,event"; break;
    case TaskKind::Mask:
      for (int j = 0; j < fed.task().mask_length; ++j) out += ",m" + std::to_string(j);
      break;
  }
  for (std::size_t j = 0; j < fed.dim(); ++j) out += ",f" + std::to_string(j);
  out += '\n';

  auto write_rows = [&](const ClientDataset& c, const std::vector<Sample>& samples, const char* split) {
    for (const auto& s : samples) {
      out += c.client_id;
      out += ',';
      out += split;
      std::visit(
          [&](const auto& l) {
            using T = std::decay_t<decltype(l)>;
            if constexpr (std::is_same_v<T, BinaryLabel>) {
              out += ',' + std::to_string(l.value);
            } else if constexpr (std::is_same_v<T, ClassLabel>) {
              out += ',' + std::to_string(l.index);
            } else if constexpr (std::is_same_v<T, SurvivalLabel>) {
              out += ',' + format_double(l.time) + (l.event ? ",1" : ",0");
            } else {
              for (auto b : l.bits) out += b ? ",1" : ",0";
            }
          },
          s.label);
      for (double f : s.features) {
        out += ',';
        out += format_double(f);
      }
      out += '\n';
    }
  };
  for (const auto& c : fed.clients()) {
    write_rows(c, c.train, "train");
    write_rows(c, c.test, "test");
  }
  return out;
}

void save_csv(const FederatedDataset& fed, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << to_csv(fed);
  if (!out) throw Error("write failed: " + path.string());
}

}  // namespace silo

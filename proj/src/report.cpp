#include "secnn/report.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "secnn/errors.hpp"

namespace secnn {

using nlohmann::json;

namespace {

json score_json(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }
double score_from(const json& j) { return j.is_null() ? kNoCandidate : j.get<double>(); }

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string pad(std::string s, std::size_t width) {
  if (s.size() < width) s.append(width - s.size(), ' ');
  return s;
}

}  // namespace

json metrics_to_json(const MetricsRecord& r) {
  json j = {{"schema", kMetricsSchemaVersion},
            {"epoch", r.epoch},
            {"train_loss", r.train_loss},
            {"val_loss", r.val_loss},
            {"val_accuracy", r.val_accuracy},
            {"param_count", r.param_count},
            {"lr", r.lr}};
  if (!r.expansion) {
    j["expansion"] = nullptr;
    return j;
  }
  const ExpansionEvent& e = *r.expansion;
  json candidates = json::array();
  for (const auto& c : e.candidates)
    candidates.push_back({{"kind", to_string(c.kind)},
                          {"block", c.block},
                          {"delta_p", c.delta_p},
                          {"eta", score_json(c.eta)},
                          {"regularized", score_json(c.regularized)}});
  j["expansion"] = {{"kind", to_string(e.kind)},
                    {"block", e.block ? json(*e.block) : json(nullptr)},
                    {"eta_current", score_json(e.eta_current)},
                    {"eta_layer", score_json(e.eta_layer)},
                    {"eta_widen", score_json(e.eta_widen)},
                    {"delta_p", e.delta_p},
                    {"param_count_after", e.param_count_after},
                    {"candidates", candidates}};
  return j;
}

MetricsRecord metrics_from_json(const json& j) {
  try {
    const int schema = j.at("schema").get<int>();
    if (schema != kMetricsSchemaVersion)
      fail(ErrorCode::VersionMismatch, "metrics schema " + std::to_string(schema) + " is not supported");
    MetricsRecord r;
    r.epoch = j.at("epoch").get<std::size_t>();
    r.train_loss = j.at("train_loss").get<double>();
    r.val_loss = j.at("val_loss").get<double>();
    r.val_accuracy = j.at("val_accuracy").get<double>();
    r.param_count = j.at("param_count").get<std::size_t>();
    r.lr = j.at("lr").get<float>();
    const json& x = j.at("expansion");
    if (!x.is_null()) {
      ExpansionEvent e;
      e.kind = expansion_kind_from_string(x.at("kind").get<std::string>());
      if (!x.at("block").is_null()) e.block = x.at("block").get<std::size_t>();
      e.eta_current = score_from(x.at("eta_current"));
      e.eta_layer = score_from(x.at("eta_layer"));
      e.eta_widen = score_from(x.at("eta_widen"));
      e.delta_p = x.at("delta_p").get<std::int64_t>();
      e.param_count_after = x.at("param_count_after").get<std::size_t>();
      for (const json& c : x.at("candidates")) {
        CandidateScore s;
        s.kind = expansion_kind_from_string(c.at("kind").get<std::string>());
        s.block = c.at("block").get<std::size_t>();
        s.delta_p = c.at("delta_p").get<std::int64_t>();
        s.eta = score_from(c.at("eta"));
        s.regularized = score_from(c.at("regularized"));
        e.candidates.push_back(s);
      }
      r.expansion = std::move(e);
    }
    return r;
  } catch (const json::exception& e) {
    fail(ErrorCode::CorruptData, std::string("malformed metrics record: ") + e.what());
  }
}

std::string metrics_line(const MetricsRecord& record) { return metrics_to_json(record).dump(); }

std::vector<MetricsRecord> read_metrics_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open metrics log " + path.string());
  std::vector<MetricsRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const json j = json::parse(line, nullptr, false);
    if (j.is_discarded())
      fail(ErrorCode::CorruptData, path.string() + ":" + std::to_string(line_no) + ": not a JSON record");
    try {
      out.push_back(metrics_from_json(j));
    } catch (const Error& e) {
      fail(e.code(), path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (out.empty()) fail(ErrorCode::CorruptData, path.string() + " holds no records");
  return out;
}

RunSummary summarize(const std::vector<MetricsRecord>& history) {
  if (history.empty()) fail(ErrorCode::InvalidArgument, "cannot summarize an empty history");
  RunSummary s;
  s.best = {history.front().epoch, history.front().param_count, history.front().val_accuracy};
  for (const auto& r : history) {
    const Milestone m{r.epoch, r.param_count, r.val_accuracy};
    if (!s.at70 && r.val_accuracy >= 0.70) s.at70 = m;
    if (!s.at80 && r.val_accuracy >= 0.80) s.at80 = m;
    if (r.val_accuracy > s.best.accuracy) s.best = m;
    if (r.expanded()) ++s.expansions;
  }
  const auto& last = history.back();
  s.final_param_count = last.expanded() ? last.expansion->param_count_after : last.param_count;
  return s;
}

std::string format_summary(const RunSummary& s) {
  constexpr std::size_t kLabel = 34, kEpoch = 8;
  auto row = [&](const std::string& label, const std::string& epoch, const std::string& value) {
    return pad(label, kLabel) + pad(epoch, kEpoch) + value + "\n";
  };
  auto milestone = [&](const std::string& label, const std::optional<Milestone>& m) {
    if (!m) return row(label, "-", "not reached");
    return row(label, std::to_string(m->epoch), std::to_string(m->param_count));
  };
  std::string out = row("Metric", "Epoch", "Value");
  out += milestone("Val Accuracy (at 70%)", s.at70);
  out += milestone("Val Accuracy (at 80%)", s.at80);
  out += row("Highest Val Accuracy (%)", std::to_string(s.best.epoch), fixed(100.0 * s.best.accuracy, 1));
  out += row("Parameters at Highest Accuracy", std::to_string(s.best.epoch), std::to_string(s.best.param_count));
  out += "\nexpansions: " + std::to_string(s.expansions) + ", final parameters: " + std::to_string(s.final_param_count) +
         "\n";
  return out;
}

std::string format_growth_table(const std::vector<MetricsRecord>& history) {
  std::string out = pad("epoch", 8) + pad("event", 22) + pad("params", 10) + "val_acc\n";
  for (const auto& r : history) {
    if (!r.expanded()) continue;
    const std::string event = std::string(to_string(r.expansion->kind)) + "@" + std::to_string(*r.expansion->block);
    out += pad(std::to_string(r.epoch), 8) + pad(event, 22) + pad(std::to_string(r.expansion->param_count_after), 10) +
           fixed(r.val_accuracy, 4) + "\n";
  }
  if (!history.empty()) {
    const auto& last = history.back();
    const std::size_t params = last.expanded() ? last.expansion->param_count_after : last.param_count;
    out += pad(std::to_string(last.epoch), 8) + pad("final", 22) + pad(std::to_string(params), 10) +
           fixed(last.val_accuracy, 4) + "\n";
  }
  return out;
}

}  // namespace secnn

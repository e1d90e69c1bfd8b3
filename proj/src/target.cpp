#include "wsteg/target.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <regex>
#include <sstream>
#include <tuple>

#include "wsteg/bitcodec.hpp"
#include "wsteg/embed.hpp"
#include "wsteg/error.hpp"
#include "wsteg/util.hpp"

namespace wsteg {

namespace {

struct NameInfo {
  std::optional<int> layer;
  std::string stem;  // name with the layer digits replaced by '*'
};

std::regex compile_pattern(const std::string& pattern) {
  try {
    std::regex re(pattern);
    if (re.mark_count() < 1) fail(ErrorCode::InvalidArgument, "layer pattern needs a capture group for the index");
    return re;
  } catch (const std::regex_error& e) {
    fail(ErrorCode::InvalidArgument, "bad layer pattern '" + pattern + "': " + e.what());
  }
}

NameInfo classify(const std::string& name, const std::regex& re) {
  NameInfo info;
  info.stem = name;
  std::smatch m;
  if (!std::regex_search(name, m, re) || !m[1].matched) return info;
  const std::string digits = m[1].str();
  if (digits.empty() || digits.size() > 9 || !std::all_of(digits.begin(), digits.end(), ::isdigit)) return info;
  info.layer = std::stoi(digits);
  info.stem = name.substr(0, static_cast<std::size_t>(m.position(1))) + "*" +
              name.substr(static_cast<std::size_t>(m.position(1) + m.length(1)));
  return info;
}

ParameterGroup model_group(const ModelFile& model) {
  ParameterGroup g;
  g.id = "model";
  g.strategy = GroupingStrategy::MODEL;
  for (std::size_t i = 0; i < model.tensor_count(); ++i)
    g.members.push_back({i, 0, model.tensor(i).element_count()});
  return g;
}

// Layer-less groups sort first, then by layer index, then by id.
bool group_order(const ParameterGroup& a, const ParameterGroup& b) {
  const auto ka = std::make_tuple(a.layer_index.has_value(), a.layer_index.value_or(0), a.id);
  const auto kb = std::make_tuple(b.layer_index.has_value(), b.layer_index.value_or(0), b.id);
  return ka < kb;
}

void check_scores(const EvalScores& s) {
  if (!(s.perplexity > 0.0)) fail(ErrorCode::InvalidDocument, "perplexity must be positive");
  if (!(s.accuracy >= 0.0 && s.accuracy <= 1.0)) fail(ErrorCode::InvalidDocument, "accuracy must lie in [0, 1]");
}

bool is_infinity_marker(std::string text) {
  std::transform(text.begin(), text.end(), text.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return text == "inf" || text == "+inf" || text == "infinity" || text == "+infinity";
}

}  // namespace

std::vector<ParameterGroup> make_groups(const ModelFile& model, GroupingStrategy strategy,
                                        const std::string& layer_pattern) {
  if (strategy == GroupingStrategy::MODEL) return {model_group(model)};

  const std::regex re = compile_pattern(layer_pattern);
  std::vector<NameInfo> info;
  info.reserve(model.tensor_count());
  bool any_layer = false;
  for (const auto& t : model.tensors()) {
    info.push_back(classify(t.name, re));
    any_layer = any_layer || info.back().layer.has_value();
  }

  std::vector<ParameterGroup> groups;
  if (strategy == GroupingStrategy::MATRIX) {
    for (std::size_t i = 0; i < model.tensor_count(); ++i) {
      ParameterGroup g = whole_tensor_group(model, i);
      g.layer_index = info[i].layer;
      groups.push_back(std::move(g));
    }
    std::stable_sort(groups.begin(), groups.end(), group_order);
    return groups;
  }

  if (!any_layer)
    fail(ErrorCode::UngroupableModel, "no tensor name matches the layer pattern '" + layer_pattern + "'");

  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < model.tensor_count(); ++i) {
    std::string id;
    if (strategy == GroupingStrategy::LAYER) {
      if (!info[i].layer) continue;
      id = "layer:" + std::to_string(*info[i].layer);
    } else {
      id = "name:" + info[i].stem;
    }
    auto [it, inserted] = index.try_emplace(id, groups.size());
    if (inserted) {
      ParameterGroup g;
      g.id = id;
      g.strategy = strategy;
      g.layer_pattern = layer_pattern;
      if (strategy == GroupingStrategy::LAYER) g.layer_index = info[i].layer;
      groups.push_back(std::move(g));
    }
    groups[it->second].members.push_back({i, 0, model.tensor(i).element_count()});
  }
  std::stable_sort(groups.begin(), groups.end(), group_order);
  return groups;
}

ParameterGroup resolve_group(const ModelFile& model, const std::string& group_id, const std::string& layer_pattern) {
  const std::string pattern = layer_pattern.empty() ? std::string(kDefaultLayerPattern) : layer_pattern;
  if (group_id == "model") return model_group(model);
  if (group_id.rfind("matrix:", 0) == 0) {
    const auto idx = model.find(group_id.substr(7));
    if (!idx) fail(ErrorCode::GroupResolutionError, "no tensor named '" + group_id.substr(7) + "'");
    ParameterGroup g = whole_tensor_group(model, *idx);
    g.layer_index = classify(model.tensor(*idx).name, compile_pattern(pattern)).layer;
    return g;
  }
  GroupingStrategy strategy;
  if (group_id.rfind("layer:", 0) == 0) {
    strategy = GroupingStrategy::LAYER;
  } else if (group_id.rfind("name:", 0) == 0) {
    strategy = GroupingStrategy::NAME;
  } else {
    fail(ErrorCode::GroupResolutionError, "unrecognised group id '" + group_id + "'");
  }
  std::vector<ParameterGroup> groups;
  try {
    groups = make_groups(model, strategy, pattern);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::UngroupableModel) throw;
    fail(ErrorCode::GroupResolutionError, "cannot resolve '" + group_id + "': " + e.what());
  }
  for (auto& g : groups)
    if (g.id == group_id) return std::move(g);
  fail(ErrorCode::GroupResolutionError, "group '" + group_id + "' does not exist in this model");
}

ParameterGroup resolve_group(const ModelFile& model, const EmbedManifest& manifest) {
  ParameterGroup g = resolve_group(model, manifest.group_id, manifest.layer_pattern);
  if (g.strategy != manifest.grouping_strategy)
    fail(ErrorCode::GroupResolutionError, "group '" + manifest.group_id + "' does not belong to strategy " +
                                              std::string(strategy_name(manifest.grouping_strategy)));
  return g;
}

EvalScores scores_from_json(const nlohmann::json& doc) {
  EvalScores s;
  try {
    const auto& ppl = doc.at("perplexity");
    if (ppl.is_string()) {
      if (!is_infinity_marker(ppl.get<std::string>()))
        fail(ErrorCode::InvalidDocument, "perplexity string must be an infinity marker");
      s.perplexity = std::numeric_limits<double>::infinity();
    } else {
      s.perplexity = ppl.get<double>();
    }
    s.accuracy = doc.at("accuracy").get<double>();
    s.dataset = doc.value("dataset", std::string{});
    s.split = doc.value("split", std::string{});
    s.seed = doc.value("seed", std::uint64_t{0});
    s.model_digest = doc.value("model_digest", std::string{});
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::InvalidDocument, std::string("malformed score file: ") + e.what());
  }
  check_scores(s);
  return s;
}

nlohmann::ordered_json scores_to_json(const EvalScores& s) {
  nlohmann::ordered_json j;
  j["model_digest"] = s.model_digest;
  j["dataset"] = s.dataset;
  j["split"] = s.split;
  j["seed"] = s.seed;
  if (std::isinf(s.perplexity))
    j["perplexity"] = "inf";
  else
    j["perplexity"] = s.perplexity;
  j["accuracy"] = s.accuracy;
  return j;
}

EvalScores load_scores(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "cannot open score file " + path.string());
  try {
    return scores_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::InvalidDocument, path.string() + " is not valid JSON: " + e.what());
  }
}

PaiEntry pai(const EvalScores& clean, const EvalScores& embedded) {
  if (!(clean.perplexity > 0.0) || !std::isfinite(clean.perplexity))
    fail(ErrorCode::DegenerateBaseline, "clean perplexity must be positive and finite");
  if (!(clean.accuracy > 0.0)) fail(ErrorCode::DegenerateBaseline, "clean accuracy is zero");
  if (!(embedded.perplexity > 0.0)) fail(ErrorCode::InvalidArgument, "embedded perplexity must be positive");

  PaiEntry e;
  e.clean = clean;
  e.embedded = embedded;
  e.d_ppl_rel = std::isinf(embedded.perplexity) ? 1.0 : std::fabs(1.0 - clean.perplexity / embedded.perplexity);
  e.d_acc_rel = std::fabs(clean.accuracy - embedded.accuracy) / clean.accuracy;
  e.d_pai = std::max(e.d_ppl_rel, e.d_acc_rel);
  e.sr = 1.0 - e.d_pai;
  return e;
}

namespace {

template <typename F>
double mean_of(const std::vector<PaiEntry>& runs, F f) {
  if (runs.empty()) return std::numeric_limits<double>::quiet_NaN();
  double sum = 0.0;
  for (const auto& r : runs) sum += f(r);
  return sum / static_cast<double>(runs.size());
}

}  // namespace

double PaiReport::mean_d_ppl() const { return mean_of(runs, [](const PaiEntry& e) { return e.d_ppl_rel; }); }
double PaiReport::mean_d_acc() const { return mean_of(runs, [](const PaiEntry& e) { return e.d_acc_rel; }); }
double PaiReport::mean_d_pai() const { return mean_of(runs, [](const PaiEntry& e) { return e.d_pai; }); }

TargetChoice select_target(const std::vector<PaiReport>& reports) {
  if (reports.empty()) fail(ErrorCode::EmptyReports, "no PAI reports to select from");
  for (const auto& r : reports)
    if (r.runs.empty()) fail(ErrorCode::InvalidArgument, "report for " + r.group_id + " has no runs");

  auto key = [](const PaiReport& r) {
    // Lower is better in every position.
    return std::make_tuple(r.mean_d_pai(), ~r.capacity_bits(), !r.layer_index.has_value(),
                           r.layer_index.value_or(0), r.n, std::cref(r.group_id));
  };
  const PaiReport* best = &reports.front();
  for (const auto& r : reports)
    if (key(r) < key(*best)) best = &r;
  return {best->group_id, best->n};
}

void probe(ModelFile& model, const ParameterGroup& group, unsigned n, std::uint64_t seed) {
  if (n < 1) fail(ErrorCode::BadWidth, "probe width n must be at least 1");
  for (const auto& m : group.members) {
    if (m.size() == 0) continue;
    const auto& t = model.tensor(m.tensor);
    if (!is_float(t.dtype)) fail(ErrorCode::UnsupportedDtype, "probing needs float tensors; " + t.name + " is quantized");
    if (n > element_bit_width(t.dtype))
      fail(ErrorCode::BadWidth, "n exceeds the " + std::string(dtype_name(t.dtype)) + " width");
  }
  // Same bit stream as random_frame(|G| * n, n, seed), without materialising it.
  SeededBits bits(seed);
  for (const auto& m : group.members) {
    if (m.size() == 0) continue;
    const DType dtype = model.tensor(m.tensor).dtype;
    auto data = model.mutable_tensor_data(m.tensor);
    for (std::uint64_t e = m.begin; e < m.end; ++e) {
      const std::uint32_t p = load_pattern(data, dtype, e);
      store_pattern(data, dtype, e, static_cast<std::uint32_t>(replace_low_bits(p, n, bits.take(n))));
    }
  }
}

std::uint64_t capacity_bytes(const ParameterGroup& group, unsigned n, EmbedMode mode, Scheme scheme,
                             const ModelFile* model, const std::optional<AffineQuantParams>& affine) {
  if (n < 1) fail(ErrorCode::BadWidth, "n must be at least 1");
  if (mode == EmbedMode::GENERAL) {
    const std::uint64_t size = group.size();
    return (size / 8) * n + (size % 8) * n / 8;
  }
  if (!model) fail(ErrorCode::InvalidArgument, "robust capacity needs the model to count eligible codes");
  const std::optional<AffineQuantParams> params =
      scheme == Scheme::AFFINE && !affine ? std::optional(fit_affine(*model, group)) : affine;
  return robust_eligible_count(*model, group, scheme, n, params) * n / 8;
}

nlohmann::ordered_json pai_report_json(const std::vector<PaiReport>& reports) {
  auto num = [](double v) -> nlohmann::ordered_json {
    if (std::isfinite(v)) return v;
    return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
  };
  nlohmann::ordered_json out = nlohmann::ordered_json::array();
  for (const auto& r : reports) {
    nlohmann::ordered_json j;
    j["group_id"] = r.group_id;
    j["n"] = r.n;
    j["group_size"] = r.group_size;
    if (r.layer_index)
      j["layer_index"] = *r.layer_index;
    else
      j["layer_index"] = nullptr;
    j["D_ppl"] = num(r.mean_d_ppl());
    j["D_acc"] = num(r.mean_d_acc());
    j["d_pai"] = num(r.mean_d_pai());
    j["sr"] = num(r.sr());
    nlohmann::ordered_json runs = nlohmann::ordered_json::array();
    for (const auto& e : r.runs) {
      nlohmann::ordered_json rj;
      rj["seed"] = e.embedded.seed;
      rj["D_ppl"] = num(e.d_ppl_rel);
      rj["D_acc"] = num(e.d_acc_rel);
      rj["d_pai"] = num(e.d_pai);
      rj["sr"] = num(e.sr);
      rj["clean"] = scores_to_json(e.clean);
      rj["embedded"] = scores_to_json(e.embedded);
      runs.push_back(std::move(rj));
    }
    j["runs"] = std::move(runs);
    out.push_back(std::move(j));
  }
  return out;
}

std::string pai_table(const std::vector<PaiReport>& reports) {
  std::vector<std::string> rows;
  std::vector<unsigned> cols;
  std::map<std::pair<std::string, unsigned>, double> cells;
  for (const auto& r : reports) {
    if (std::find(rows.begin(), rows.end(), r.group_id) == rows.end()) rows.push_back(r.group_id);
    if (std::find(cols.begin(), cols.end(), r.n) == cols.end()) cols.push_back(r.n);
    cells[{r.group_id, r.n}] = r.mean_d_pai();
  }
  std::sort(cols.begin(), cols.end());
  std::size_t width = 5;
  for (const auto& g : rows) width = std::max(width, g.size());

  std::ostringstream out;
  char buf[32];
  out << std::string(width, ' ');
  for (unsigned n : cols) {
    std::snprintf(buf, sizeof buf, " %8s", ("n=" + std::to_string(n)).c_str());
    out << buf;
  }
  out << '\n';
  for (const auto& g : rows) {
    out << g << std::string(width - g.size(), ' ');
    for (unsigned n : cols) {
      const auto it = cells.find({g, n});
      if (it == cells.end())
        std::snprintf(buf, sizeof buf, " %8s", "-");
      else
        std::snprintf(buf, sizeof buf, " %8.4f", it->second);
      out << buf;
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace wsteg

#include "wsteg/cli.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "wsteg/defense.hpp"
#include "wsteg/embed.hpp"
#include "wsteg/error.hpp"
#include "wsteg/model_file.hpp"
#include "wsteg/payload.hpp"
#include "wsteg/quant.hpp"
#include "wsteg/target.hpp"
#include "wsteg/util.hpp"

namespace wsteg::cli {

namespace {

using ojson = nlohmann::ordered_json;

struct AffineFlags {
  std::optional<double> scale;
  int zero_point = 0;
  int min_code = -128;
  int max_code = 127;

  void add_to(CLI::App* app) {
    app->add_option("--affine-scale", scale, "Affine scale (fitted to the group when omitted)");
    app->add_option("--affine-zero-point", zero_point, "Affine zero point");
    app->add_option("--affine-min", min_code, "Smallest affine code");
    app->add_option("--affine-max", max_code, "Largest affine code");
  }
  std::optional<AffineQuantParams> params() const {
    if (!scale) return std::nullopt;
    AffineQuantParams p{*scale, zero_point, min_code, max_code};
    p.validate();
    return p;
  }
};

struct Config {
  // inspect / group / capacity / probe / embed / extract / quantize / sanitize / detect
  std::string model;
  std::string out;
  std::string group;
  std::string strategy = "layer";
  std::string layer_pattern = kDefaultLayerPattern;
  std::vector<unsigned> ns{1};
  unsigned n = 1;
  std::uint64_t seed = 0;
  std::string mode = "general";
  std::string scheme = "none";
  std::string payload;
  std::string manifest;
  std::string record;
  std::string reference;
  unsigned plane_offset = 0;
  unsigned k = 10;
  unsigned entropy_planes = 8;
  bool json = false;
  AffineFlags affine;
  // pai / target
  std::string clean;
  std::string embedded;
  std::vector<std::string> probe_records;
  std::vector<std::string> scores;
};

std::string fmt(double v, int digits = 6) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string shape_str(const std::vector<std::int64_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? ", " : "") + std::to_string(shape[i]);
  return s + "]";
}

Scheme parse_scheme(const std::string& name) {
  const auto s = scheme_from_name(name);
  if (!s) fail(ErrorCode::InvalidArgument, "unknown scheme '" + name + "'");
  return *s;
}

EmbedMode parse_mode(const std::string& name) {
  const auto m = mode_from_name(name);
  if (!m) fail(ErrorCode::InvalidArgument, "unknown mode '" + name + "'");
  return *m;
}

GroupingStrategy parse_strategy(const std::string& name) {
  const auto s = strategy_from_name(name);
  if (!s) fail(ErrorCode::InvalidArgument, "unknown strategy '" + name + "'");
  return *s;
}

// Float-only working copy: GGUF inputs are rewritten as F32 safetensors
// before any bit-level edit, since only safetensors can be written back.
ModelFile load_writable(const std::string& path, std::ostream& err) {
  ModelFile model = load_model(path);
  if (model.format() == FileFormat::GGUF) {
    err << "note: " << path << " is GGUF; working on an F32 safetensors copy\n";
    model = dequantize_model(model);
  }
  return model;
}

std::string json_text(const ojson& j) { return j.dump(2) + "\n"; }

void emit_json(const ojson& j, const std::string& out, std::ostream& stream) {
  if (out.empty() || out == "-")
    stream << json_text(j);
  else
    atomic_write(out, json_text(j));
}

// ---- subcommands ----

int cmd_inspect(const Config& c, std::ostream& out) {
  const ModelFile model = load_model(c.model);
  if (c.json) {
    ojson j;
    j["format"] = std::string(format_name(model.format()));
    j["tensor_count"] = model.tensor_count();
    j["total_param_count"] = model.total_param_count();
    j["metadata"] = model.metadata();
    ojson tensors = ojson::array();
    for (const auto& t : model.tensors())
      tensors.push_back({{"name", t.name},
                         {"dtype", std::string(dtype_name(t.dtype))},
                         {"shape", t.shape},
                         {"data_offset", t.data_offset},
                         {"data_length", t.data_length}});
    j["tensors"] = std::move(tensors);
    out << json_text(j);
    return 0;
  }
  out << "format: " << format_name(model.format()) << "\n";
  out << "tensors: " << model.tensor_count() << "\n";
  out << "parameters: " << model.total_param_count() << "\n";
  for (const auto& [k, v] : model.metadata()) out << "meta " << k << " = " << v << "\n";
  for (const auto& t : model.tensors())
    out << t.name << "  " << dtype_name(t.dtype) << "  " << shape_str(t.shape) << "  " << t.data_length << " bytes\n";
  return 0;
}

int cmd_group(const Config& c, std::ostream& out) {
  const ModelFile model = load_model(c.model);
  const auto groups = make_groups(model, parse_strategy(c.strategy), c.layer_pattern);
  for (const auto& g : groups) {
    out << g.id << "  size=" << g.size() << "  tensors=" << g.members.size();
    if (g.layer_index) out << "  layer=" << *g.layer_index;
    out << "\n";
    if (c.json) continue;
    for (const auto& m : g.members) out << "    " << model.tensor(m.tensor).name << "\n";
  }
  return 0;
}

int cmd_capacity(const Config& c, std::ostream& out) {
  const ModelFile model = load_model(c.model);
  const EmbedMode mode = parse_mode(c.mode);
  const Scheme scheme = parse_scheme(c.scheme);
  std::vector<ParameterGroup> groups;
  if (!c.group.empty())
    groups.push_back(resolve_group(model, c.group, c.layer_pattern));
  else
    groups = make_groups(model, parse_strategy(c.strategy), c.layer_pattern);
  for (const auto& g : groups) {
    for (unsigned n : c.ns) {
      const auto bytes = capacity_bytes(g, n, mode, scheme, &model, c.affine.params());
      out << g.id << "  n=" << n << "  " << mode_name(mode);
      if (mode == EmbedMode::ROBUST) out << "/" << scheme_name(scheme);
      out << "  " << bytes << " bytes\n";
    }
  }
  return 0;
}

int cmd_probe(const Config& c, std::ostream& out, std::ostream& err) {
  ModelFile model = load_writable(c.model, err);
  const ParameterGroup group = resolve_group(model, c.group, c.layer_pattern);
  probe(model, group, c.n, c.seed);
  save_model(model, c.out);
  const std::string digest = sha256_file(c.out);
  ojson rec;
  rec["version"] = 1;
  rec["group_id"] = group.id;
  rec["strategy"] = std::string(strategy_name(group.strategy));
  rec["n"] = c.n;
  rec["seed"] = c.seed;
  rec["group_size"] = group.size();
  if (group.layer_index)
    rec["layer_index"] = *group.layer_index;
  else
    rec["layer_index"] = nullptr;
  rec["model_digest"] = digest;
  rec["config"] = {{"subcommand", "probe"}, {"model", c.model}, {"layer_pattern", c.layer_pattern}, {"out", c.out}};
  if (!c.record.empty()) atomic_write(c.record, json_text(rec));
  out << "probed " << group.id << " (" << group.size() << " elements, n=" << c.n << ", seed=" << c.seed << ")\n";
  out << "sha256 " << digest << "\n";
  return 0;
}

void print_pai(const PaiEntry& e, std::ostream& out, std::ostream& err) {
  out << "D_ppl " << fmt(e.d_ppl_rel) << "\n";
  out << "D_acc " << fmt(e.d_acc_rel) << "\n";
  out << "d_PAI " << fmt(e.d_pai) << "\n";
  out << "SR    " << fmt(e.sr) << "\n";
  if (e.sr < 0) err << "warning: SR is negative (d_PAI > 1)\n";
}

int cmd_pai(const Config& c, std::ostream& out, std::ostream& err) {
  print_pai(pai(load_scores(c.clean), load_scores(c.embedded)), out, err);
  return 0;
}

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::InvalidDocument, path + " is not valid JSON: " + e.what());
  }
}

int cmd_target(const Config& c, std::ostream& out, std::ostream& err) {
  const EvalScores clean = load_scores(c.clean);

  struct Record {
    std::string group_id;
    unsigned n;
    std::uint64_t group_size;
    std::optional<int> layer;
  };
  std::map<std::string, Record> by_digest;
  for (const auto& path : c.probe_records) {
    const auto j = read_json(path);
    try {
      Record r{j.at("group_id").get<std::string>(), j.at("n").get<unsigned>(), j.at("group_size").get<std::uint64_t>(),
               std::nullopt};
      if (j.contains("layer_index") && !j.at("layer_index").is_null()) r.layer = j.at("layer_index").get<int>();
      by_digest[j.at("model_digest").get<std::string>()] = r;
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::InvalidDocument, path + ": malformed probe record: " + e.what());
    }
  }

  std::vector<PaiReport> reports;
  std::map<std::pair<std::string, unsigned>, std::size_t> cell;
  for (const auto& path : c.scores) {
    const EvalScores s = load_scores(path);
    const auto it = by_digest.find(s.model_digest);
    if (it == by_digest.end())
      fail(ErrorCode::InvalidDocument, path + ": model_digest matches no probe record");
    const Record& r = it->second;
    auto [pos, inserted] = cell.try_emplace({r.group_id, r.n}, reports.size());
    if (inserted) {
      PaiReport rep;
      rep.group_id = r.group_id;
      rep.n = r.n;
      rep.group_size = r.group_size;
      rep.layer_index = r.layer;
      reports.push_back(std::move(rep));
    }
    reports[pos->second].runs.push_back(pai(clean, s));
  }
  if (reports.empty()) fail(ErrorCode::EmptyReports, "no score files joined to probe records");

  const TargetChoice choice = select_target(reports);
  out << pai_table(reports);
  for (const auto& r : reports)
    if (r.sr() < 0) err << "warning: SR is negative for " << r.group_id << " n=" << r.n << "\n";
  const auto best = std::find_if(reports.begin(), reports.end(),
                                 [&](const PaiReport& r) { return r.group_id == choice.group_id && r.n == choice.n; });
  out << "selected " << choice.group_id << " n=" << choice.n << "  d_PAI=" << fmt(best->mean_d_pai())
      << "  SR=" << fmt(best->sr()) << "  capacity=" << best->capacity_bits() / 8 << " bytes\n";

  if (!c.out.empty()) {
    ojson j;
    j["version"] = 1;
    j["config"] = {{"subcommand", "target"}, {"clean", c.clean}, {"probe_records", c.probe_records}, {"scores", c.scores}};
    j["reports"] = pai_report_json(reports);
    j["selected"] = {{"group_id", choice.group_id}, {"n", choice.n}};
    atomic_write(c.out, json_text(j));
  }
  return 0;
}

int cmd_embed(const Config& c, std::ostream& out, std::ostream& err) {
  const EmbedMode mode = parse_mode(c.mode);
  const Scheme scheme = parse_scheme(c.scheme);
  if (mode == EmbedMode::GENERAL && scheme != Scheme::NONE)
    fail(ErrorCode::InvalidArgument, "general mode takes no scheme (use --scheme none)");
  ModelFile model = load_writable(c.model, err);
  const ParameterGroup group = resolve_group(model, c.group, c.layer_pattern);
  const auto raw = read_file(c.payload);
  const PayloadFrame frame = prepare_payload(raw, c.n, c.seed);

  EmbedOptions opts;
  EmbedManifest manifest;
  if (mode == EmbedMode::GENERAL) {
    opts.plane_offset = c.plane_offset;
    manifest = embed_general(model, group, frame, opts);
  } else {
    if (scheme == Scheme::AFFINE) opts.affine = c.affine.scale ? c.affine.params() : fit_affine(model, group);
    manifest = embed_robust(model, group, frame, scheme, opts);
  }
  save_model(model, c.out);
  save_manifest(manifest, c.manifest);
  out << "embedded " << raw.size() << " bytes into " << group.id << " (" << mode_name(mode);
  if (mode == EmbedMode::ROBUST) out << "/" << scheme_name(scheme);
  out << ", n=" << c.n << ", " << frame.segment_count() << " segments)\n";
  return 0;
}

int cmd_extract(const Config& c, std::ostream& out, std::ostream& err) {
  const ModelFile model = load_model(c.model);
  const EmbedManifest manifest = load_manifest(c.manifest);
  try {
    const auto bytes = extract(model, manifest);
    atomic_write(c.out, std::span<const std::uint8_t>(bytes));
    out << "recovered " << bytes.size() << " bytes, crc32 ok\n";
    if (!c.reference.empty()) out << "bit-error rate " << fmt(bit_error_rate(bytes, read_file(c.reference))) << "\n";
    return 0;
  } catch (const ChecksumMismatchError& e) {
    err << "error[" << error_code_name(e.code()) << "]: " << e.what() << "\n";
    if (!c.reference.empty())
      err << "bit-error rate " << fmt(bit_error_rate(e.recovered(), read_file(c.reference))) << "\n";
    else
      err << "bit-error rate unknown (pass --reference to measure it)\n";
    return 1;
  }
}

int cmd_quantize(const Config& c, std::ostream& out, std::ostream&) {
  const ModelFile model = load_model(c.model);
  const Scheme scheme = parse_scheme(c.scheme);
  QuantizeOptions opts;
  if (scheme == Scheme::AFFINE) {
    if (!c.affine.scale) fail(ErrorCode::InvalidArgument, "affine quantization needs --affine-scale");
    opts.affine = *c.affine.params();
  }
  const ModelFile deployed = simulate_deployment(model, scheme, opts);
  save_model(deployed, c.out);
  out << "wrote " << scheme_name(scheme) << " deployment of " << c.model << " as F32 to " << c.out << "\n";
  return 0;
}

int cmd_sanitize(const Config& c, std::ostream& out, std::ostream& err) {
  ModelFile model = load_writable(c.model, err);
  sanitize(model, c.k, c.seed);
  save_model(model, c.out);
  out << "replaced the bottom " << c.k << " bits of " << model.total_param_count() << " parameters\n";
  return 0;
}

int cmd_detect(const Config& c, std::ostream& out) {
  const ModelFile model = load_model(c.model);
  std::optional<ParameterGroup> group;
  if (!c.group.empty()) group = resolve_group(model, c.group, c.layer_pattern);
  const StatsReport report = lsb_stats(model, group, c.entropy_planes);
  ojson j = stats_to_json(report);
  j["config"] = {{"subcommand", "detect"}, {"model", c.model}, {"group", c.group}, {"entropy_planes", c.entropy_planes}};
  emit_json(j, c.out, out);
  if (!c.out.empty() && c.out != "-") {
    out << "bit-plane statistics for " << report.scope << " (" << report.aggregate.elements << " elements)\n";
    for (const auto& p : report.aggregate.planes)
      out << "  plane " << p.offset << "  ones " << fmt(p.ones_fraction(), 4) << "  chi2 " << fmt(p.chi_square, 2) << "\n";
    out << "  entropy of bottom " << report.aggregate.entropy_planes << " bits: " << fmt(report.aggregate.entropy_bits, 4)
        << "\n";
  }
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Weight-file steganography toolkit", "wsteg"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolkitVersion);
  Config c;

  auto model_opt = [&](CLI::App* s) { s->add_option("--model", c.model, "Model file")->required(); };
  auto pattern_opt = [&](CLI::App* s) { s->add_option("--layer-pattern", c.layer_pattern, "Layer-index regex"); };

  auto* inspect = app.add_subcommand("inspect", "List tensors and metadata");
  model_opt(inspect);
  inspect->add_flag("--json", c.json, "Print JSON");

  auto* group = app.add_subcommand("group", "List parameter groups");
  model_opt(group);
  group->add_option("--strategy", c.strategy, "model, name, layer or matrix");
  group->add_flag("--brief", c.json, "Omit member tensors");
  pattern_opt(group);

  auto* capacity = app.add_subcommand("capacity", "Embedding capacity per group");
  model_opt(capacity);
  capacity->add_option("--group", c.group, "Group id (default: every group of --strategy)");
  capacity->add_option("--strategy", c.strategy, "Grouping strategy");
  capacity->add_option("--n", c.ns, "LSB counts")->expected(1, -1);
  capacity->add_option("--mode", c.mode, "general or robust");
  capacity->add_option("--scheme", c.scheme, "q8_0, q4_0 or affine (robust mode)");
  c.affine.add_to(capacity);
  pattern_opt(capacity);

  auto* probe_cmd = app.add_subcommand("probe", "Fill a group's LSBs with seeded random bits");
  model_opt(probe_cmd);
  probe_cmd->add_option("--group", c.group, "Group id")->required();
  probe_cmd->add_option("--n", c.n, "LSB count")->required();
  probe_cmd->add_option("--seed", c.seed, "Random seed");
  probe_cmd->add_option("--out", c.out, "Output safetensors file")->required();
  probe_cmd->add_option("--record", c.record, "Probe record JSON for the target stage");
  pattern_opt(probe_cmd);

  auto* pai_cmd = app.add_subcommand("pai", "Performance-aware importance of one score pair");
  pai_cmd->add_option("--clean", c.clean, "Clean model score file")->required();
  pai_cmd->add_option("--embedded", c.embedded, "Probed model score file")->required();

  auto* target = app.add_subcommand("target", "Select the group and LSB count with minimum d_PAI");
  target->add_option("--clean", c.clean, "Clean model score file")->required();
  target->add_option("--probe-records", c.probe_records, "Probe record files")->required()->expected(1, -1);
  target->add_option("--scores", c.scores, "Score files of probed models")->required()->expected(1, -1);
  target->add_option("--out", c.out, "PAI report JSON");

  auto* embed_cmd = app.add_subcommand("embed", "Embed a payload file");
  model_opt(embed_cmd);
  embed_cmd->add_option("--payload", c.payload, "Payload file")->required();
  embed_cmd->add_option("--mode", c.mode, "general or robust");
  embed_cmd->add_option("--scheme", c.scheme, "none, q8_0, q4_0 or affine");
  embed_cmd->add_option("--group", c.group, "Group id")->required();
  embed_cmd->add_option("--n", c.n, "LSB count")->required();
  embed_cmd->add_option("--seed", c.seed, "Pad-bit seed");
  embed_cmd->add_option("--plane-offset", c.plane_offset, "General mode: bits above the LSB to start at");
  embed_cmd->add_option("--out", c.out, "Output safetensors file")->required();
  embed_cmd->add_option("--manifest", c.manifest, "Manifest output")->required();
  c.affine.add_to(embed_cmd);
  pattern_opt(embed_cmd);

  auto* extract_cmd = app.add_subcommand("extract", "Recover a payload");
  model_opt(extract_cmd);
  extract_cmd->add_option("--manifest", c.manifest, "Manifest")->required();
  extract_cmd->add_option("--out", c.out, "Recovered payload file")->required();
  extract_cmd->add_option("--reference", c.reference, "Original payload, for the bit-error rate");

  auto* quantize = app.add_subcommand("quantize", "Simulate a quantized deployment");
  model_opt(quantize);
  quantize->add_option("--scheme", c.scheme, "q8_0, q4_0 or affine")->required();
  quantize->add_option("--out", c.out, "Output F32 safetensors file")->required();
  c.affine.add_to(quantize);

  auto* sanitize_cmd = app.add_subcommand("sanitize", "Overwrite low bit-planes with random bits");
  model_opt(sanitize_cmd);
  sanitize_cmd->add_option("--k", c.k, "Bit-planes to overwrite");
  sanitize_cmd->add_option("--seed", c.seed, "Random seed");
  sanitize_cmd->add_option("--out", c.out, "Output safetensors file")->required();

  auto* detect = app.add_subcommand("detect", "Bit-plane statistics report");
  model_opt(detect);
  detect->add_option("--group", c.group, "Restrict to one group");
  detect->add_option("--entropy-planes", c.entropy_planes, "Bits in the entropy symbol");
  detect->add_option("--out", c.out, "Report JSON (default: stdout)");
  pattern_opt(detect);

  std::vector<std::string> storage;
  storage.reserve(args.size() + 1);
  storage.push_back("wsteg");
  storage.insert(storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : storage) argv.push_back(s.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 2;
  }

  try {
    if (*inspect) return cmd_inspect(c, out);
    if (*group) return cmd_group(c, out);
    if (*capacity) return cmd_capacity(c, out);
    if (*probe_cmd) return cmd_probe(c, out, err);
    if (*pai_cmd) return cmd_pai(c, out, err);
    if (*target) return cmd_target(c, out, err);
    if (*embed_cmd) return cmd_embed(c, out, err);
    if (*extract_cmd) return cmd_extract(c, out, err);
    if (*quantize) return cmd_quantize(c, out, err);
    if (*sanitize_cmd) return cmd_sanitize(c, out, err);
    if (*detect) return cmd_detect(c, out);
  } catch (const Error& e) {
    err << "error[" << error_code_name(e.code()) << "]: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error[" << error_code_name(ErrorCode::IoError) << "]: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace wsteg::cli

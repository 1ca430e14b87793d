#include "wfrevive/target.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <chrono>
#include <functional>
#include <set>
#include <sstream>

#include "wfrevive/beanshell.hpp"
#include "wfrevive/digest.hpp"
#include "wfrevive/errors.hpp"
#include "wfrevive/process.hpp"

namespace wfr {

namespace {

const std::string kInputRef = "config[\"input\"]";
const std::string kOutputRef = "config[\"output\"]";

std::string join(const std::vector<std::string>& items, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? sep : "") + items[i];
  return out;
}

std::string quote(const std::string& s) { return nlohmann::json(s).dump(); }

std::string entry_text(const std::string& entry) { return is_config_ref(entry) ? entry : quote(entry); }

bool is_python_keyword(const std::string& s) {
  static const std::set<std::string> kw = {
      "False", "None",   "True",    "and",   "as",       "assert", "async",  "await",    "break",
      "class", "continue", "def",   "del",   "elif",     "else",   "except", "finally",  "for",
      "from",  "global", "if",      "import", "in",      "is",     "lambda", "nonlocal", "not",
      "or",    "pass",   "raise",   "return", "try",     "while",  "with",   "yield",    "rule",
      "input", "output", "log",     "params", "script",  "config"};
  return kw.count(s) > 0;
}

std::string rule_name_for(const std::string& step_id) {
  bool ident = !step_id.empty() && !std::isdigit(static_cast<unsigned char>(step_id[0]));
  for (char c : step_id) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_') ident = false;
  }
  if (!ident) return "step_" + py_ident(step_id);
  if (step_id == "all" || step_id == kGatherRule || is_python_keyword(step_id)) return "step_" + step_id;
  return step_id;
}

// A value travelling out of one step port, possibly through an adapter.
struct ArtifactKey {
  std::string step, port, adapter;
  auto operator<=>(const ArtifactKey&) const = default;
};

struct RulePlan {
  std::string step_id;  // empty for gather_outputs
  RuleSpec spec;
  std::vector<std::string> lines;  // body of main()
  std::set<std::string> adapters;  // adapter names used by the script
  std::string doc;
};

class Planner {
 public:
  Planner(const PivotScript& s, const WorkflowIR& ir) : s_(s), ir_(ir) {}

  std::vector<RulePlan> plan() {
    choose_output_writer();
    name_artifacts();
    std::vector<RulePlan> rules;
    for (const auto& f : s_.functions) rules.push_back(step_rule(f));
    if (writer_.empty()) rules.push_back(gather_rule());
    return rules;
  }

  std::vector<std::string> all_inputs() const {
    std::vector<std::string> in = {kOutputRef};
    for (const auto& f : s_.functions) {
      if (auto it = dead_end_.find(f.step_id); it != dead_end_.end()) in.push_back(it->second);
    }
    return in;
  }

 private:
  void choose_output_writer() {
    std::set<std::string> producers;
    for (const auto* e : ir_.edges_into(kSinkStepId)) producers.insert(e->from_step);
    if (producers.size() == 1 && *producers.begin() != kSourceStepId) writer_ = *producers.begin();
  }

  std::string claim(const std::string& candidate, const std::string& step) {
    std::string name = candidate;
    if (taken_.count(name)) name = step + "_" + candidate;
    for (int n = 2; taken_.count(name); ++n) name = step + "_" + candidate + "_" + std::to_string(n);
    taken_.insert(name);
    return "results/" + name + ".json";
  }

  ArtifactKey key_of(const Edge& e) const {
    const auto* a = s_.adapter_for(e);
    return {e.from_step, e.from_port, a ? a->name : ""};
  }

  void name_artifacts() {
    taken_ = {"output"};
    for (const auto& f : s_.functions) {
      auto out = ir_.edges_out_of(f.step_id);
      if (out.empty()) {
        dead_end_[f.step_id] = claim(f.step_id, f.step_id);
        continue;
      }
      for (const auto* e : out) {
        if (e->to_step == kSinkStepId && writer_ == f.step_id) continue;
        auto key = key_of(*e);
        if (artifacts_.count(key)) continue;
        artifacts_[key] = claim(key.adapter.empty() ? e->from_port : e->to_port, f.step_id);
        produced_[f.step_id].push_back(key);
      }
    }
  }

  // Python expression for the value arriving along `e`, given the rule's
  // inputs so far. Registers new inputs as needed.
  std::string arriving(const Edge& e, RulePlan& r) {
    const auto* a = s_.adapter_for(e);
    if (e.from_step == kSourceStepId) {
      auto v = "inputs[" + py_str(e.from_port) + "]";
      if (a) {
        r.adapters.insert(a->name);
        v = "_each(" + a->name + ", " + v + ")";
      }
      return v;
    }
    const auto& path = artifacts_.at(key_of(e));
    auto it = std::find(r.spec.inputs.begin(), r.spec.inputs.end(), path);
    auto index = static_cast<std::size_t>(it - r.spec.inputs.begin());
    if (it == r.spec.inputs.end()) r.spec.inputs.push_back(path);
    return "_read_artifact(snakemake.input[" + std::to_string(index) + "])";
  }

  void load_inputs(const std::vector<const Edge*>& into, RulePlan& r) {
    bool from_source = std::any_of(into.begin(), into.end(), [](const Edge* e) { return e->from_step == kSourceStepId; });
    if (!from_source) return;
    r.spec.inputs.insert(r.spec.inputs.begin(), kInputRef);
    std::vector<std::string> names;
    for (const auto& n : s_.workflow_inputs) names.push_back(py_str(n));
    r.lines.push_back("inputs = _load_input([" + join(names, ", ") + "])");
  }

  std::string output_dict(const std::function<std::string(const Edge&)>& value) {
    std::vector<std::string> outs;
    auto into_sink = ir_.edges_into(kSinkStepId);
    for (const auto& name : s_.workflow_outputs) {
      std::string v = "None";
      for (const auto* e : into_sink) {
        if (e->to_port == name) {
          v = value(*e);
          break;
        }
      }
      outs.push_back(py_str(name) + ": " + v);
    }
    return "_write_output({" + join(outs, ", ") + "})";
  }

  RulePlan step_rule(const PivotFunction& f) {
    RulePlan r;
    r.step_id = f.step_id;
    r.doc = f.doc;
    r.spec.name = rule_name_for(f.step_id);
    auto into = ir_.edges_into(f.step_id);
    load_inputs(into, r);
    std::vector<std::string> args;
    for (std::size_t i = 0; i < f.in_ports.size(); ++i) {
      std::string v = "None";
      for (const auto* e : into) {
        if (e->to_port == f.in_ports[i]) {
          v = arriving(*e, r);
          break;
        }
      }
      args.push_back(f.params[i] + "=" + v);
    }
    // A port fed twice still waits for both producers.
    for (const auto* e : into) {
      if (e->from_step != kSourceStepId) arriving(*e, r);
    }
    r.lines.push_back("result = " + f.name + "(" + join(args, ", ") + ")");
    for (const auto& key : produced_[f.step_id]) {
      auto v = "result.get(" + py_str(key.port) + ")";
      if (!key.adapter.empty()) {
        r.adapters.insert(key.adapter);
        v = "_each(" + key.adapter + ", " + v + ")";
      }
      r.lines.push_back("_write_artifact(snakemake.output[" + std::to_string(r.spec.outputs.size()) + "], " + v + ")");
      r.spec.outputs.push_back(artifacts_.at(key));
    }
    if (auto it = dead_end_.find(f.step_id); it != dead_end_.end()) {
      r.lines.push_back("_write_artifact(snakemake.output[" + std::to_string(r.spec.outputs.size()) + "], result)");
      r.spec.outputs.push_back(it->second);
    }
    if (writer_ == f.step_id) {
      r.spec.outputs.push_back(kOutputRef);
      r.lines.push_back(output_dict([&](const Edge& e) {
        auto v = "result.get(" + py_str(e.from_port) + ")";
        if (const auto* a = s_.adapter_for(e)) {
          r.adapters.insert(a->name);
          v = "_each(" + a->name + ", " + v + ")";
        }
        return v;
      }));
    }
    r.spec.log = "logs/" + r.spec.name + ".log";
    if (auto it = s_.api_of_step.find(f.step_id); it != s_.api_of_step.end()) {
      r.spec.params[it->second + "_api"] = it->second + "_api";
    }
    r.spec.script = "scripts/" + r.spec.name + ".py";
    return r;
  }

  RulePlan gather_rule() {
    RulePlan r;
    r.doc = "Collects the workflow outputs into one file.";
    r.spec.name = std::string(kGatherRule);
    load_inputs(ir_.edges_into(kSinkStepId), r);
    r.spec.outputs.push_back(kOutputRef);
    r.lines.push_back(output_dict([&](const Edge& e) { return arriving(e, r); }));
    r.spec.log = "logs/" + r.spec.name + ".log";
    r.spec.script = "scripts/" + r.spec.name + ".py";
    return r;
  }

  const PivotScript& s_;
  const WorkflowIR& ir_;
  std::string writer_;
  std::set<std::string> taken_;
  std::map<ArtifactKey, std::string> artifacts_;
  std::map<std::string, std::vector<ArtifactKey>> produced_;
  std::map<std::string, std::string> dead_end_;
};

const char* kArtifactHelpers = R"PY(def _read_artifact(path):
    with open(path, encoding='utf-8') as handle:
        return json.load(handle)


def _write_artifact(path, value):
    os.makedirs(os.path.dirname(path) or '.', exist_ok=True)
    with open(path, 'w', encoding='utf-8') as handle:
        json.dump(value, handle, indent=2)
        handle.write('\n')
)PY";

std::string render_rule_script(const PivotScript& s, const RulePlan& r) {
  std::string out = "#!/usr/bin/env python3\n\"\"\"\n";
  out += "Rule " + r.spec.name + " of the repaired workflow " + s.title + "\n";
  if (!r.doc.empty()) out += r.doc + "\n";
  out += "\"\"\"\n\n" + render_imports() + "\n";
  bool reads_input = !r.spec.inputs.empty() && r.spec.inputs.front() == kInputRef;
  auto out_it = std::find(r.spec.outputs.begin(), r.spec.outputs.end(), kOutputRef);
  out += "CONFIG = {\n";
  out += std::string("    'input': ") + (reads_input ? "snakemake.input[0]" : "snakemake.config.get('input')") + ",\n";
  out += "    'output': " +
         (out_it != r.spec.outputs.end()
              ? "snakemake.output[" + std::to_string(out_it - r.spec.outputs.begin()) + "]"
              : std::string("snakemake.config['output']")) +
         ",\n";
  out += "    'apis': {";
  if (r.spec.params.empty()) {
    out += "},\n";
  } else {
    out += "\n";
    for (const auto& [param, key] : r.spec.params) {
      out += "        " + py_str(param.substr(0, param.size() - 4)) + ": snakemake.params." + param + ",\n";
    }
    out += "    },\n";
  }
  out += "}\n\n\n" + render_runtime();
  out += "\n\n_LOG_PATH = snakemake.log[0]\n";
  for (const auto& a : s.adapters) {
    if (r.adapters.count(a.name)) out += "\n\n" + render_adapter(a);
  }
  if (const auto* f = s.function_for(r.step_id); f && !r.step_id.empty()) out += "\n\n" + render_function(*f);
  out += "\n\n" + std::string(kArtifactHelpers);
  out += "\n\ndef main():\n" + indent(join(r.lines, "\n"), 1) + "\n";
  out += "\n\nmain()\n";
  return out;
}

std::string render_rule(const RuleSpec& r) {
  std::string out = "rule " + r.name + ":\n";
  std::vector<std::string> items;
  if (!r.inputs.empty()) {
    for (const auto& i : r.inputs) items.push_back(entry_text(i));
    out += "    input: " + join(items, ", ") + "\n";
  }
  if (!r.outputs.empty()) {
    items.clear();
    for (const auto& o : r.outputs) items.push_back(entry_text(o));
    out += "    output: " + join(items, ", ") + "\n";
  }
  if (!r.log.empty()) out += "    log: " + quote(r.log) + "\n";
  if (!r.params.empty()) {
    items.clear();
    for (const auto& [name, key] : r.params) items.push_back(name + "=" + config_ref(key));
    out += "    params: " + join(items, ", ") + "\n";
  }
  if (!r.script.empty()) out += "    script: " + quote(r.script) + "\n";
  return out;
}

// Splits on commas outside quotes and brackets.
std::vector<std::string> split_items(const std::string& text) {
  std::vector<std::string> items;
  std::string cur;
  int depth = 0;
  char q = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    if (q) {
      cur += c;
      if (c == '\\' && i + 1 < text.size()) {
        cur += text[++i];
      } else if (c == q) {
        q = 0;
      }
      continue;
    }
    if (c == '"' || c == '\'') q = c;
    if (c == '[' || c == '(') ++depth;
    if (c == ']' || c == ')') --depth;
    if (c == ',' && depth == 0) {
      items.push_back(cur);
      cur.clear();
      continue;
    }
    cur += c;
  }
  if (!cur.empty()) items.push_back(cur);
  for (auto& s : items) {
    auto b = s.find_first_not_of(" \t");
    auto e = s.find_last_not_of(" \t");
    s = b == std::string::npos ? "" : s.substr(b, e - b + 1);
  }
  std::erase_if(items, [](const std::string& s) { return s.empty(); });
  return items;
}

std::string read_entry(const std::string& item, int line) {
  if (is_config_ref(item)) return item;
  if (item.size() >= 2 && (item.front() == '"' || item.front() == '\'') && item.back() == item.front()) {
    if (item.front() == '"') {
      try {
        return nlohmann::json::parse(item).get<std::string>();
      } catch (const nlohmann::json::exception&) {
      }
    }
    return item.substr(1, item.size() - 2);
  }
  throw Error(Errc::SchemaViolation, "unsupported Snakefile value: " + item, {std::to_string(line)});
}

std::map<std::string, std::string> read_config(const std::string& yaml, bool& ok) {
  std::map<std::string, std::string> out;
  ok = true;
  try {
    auto node = YAML::Load(yaml);
    if (!node.IsMap()) {
      ok = node.IsNull();
      return out;
    }
    for (const auto& kv : node) {
      out[kv.first.as<std::string>()] = kv.second.IsScalar() ? kv.second.as<std::string>() : "";
    }
  } catch (const YAML::Exception&) {
    ok = false;
  }
  return out;
}

}  // namespace

bool is_config_ref(const std::string& entry) {
  return entry.size() > 10 && entry.rfind("config[\"", 0) == 0 && entry.ends_with("\"]");
}

std::string config_ref(const std::string& key) { return "config[" + quote(key) + "]"; }

std::string config_ref_key(const std::string& entry) {
  return nlohmann::json::parse(entry.substr(7, entry.size() - 8)).get<std::string>();
}

std::string_view to_string(FindingKind k) {
  switch (k) {
    case FindingKind::DanglingReference: return "DanglingReference";
    case FindingKind::Cycle: return "Cycle";
    case FindingKind::Unreachable: return "Unreachable";
    case FindingKind::UndefinedConfigKey: return "UndefinedConfigKey";
    case FindingKind::MissingScript: return "MissingScript";
  }
  return "?";
}

TargetWorkflow emit_snakemake(const PivotScript& script, const WorkflowIR& ir) {
  for (const auto& f : script.functions) {
    if (!f.populated) throw Error(Errc::EmissionImpossible, "step " + f.step_id + " has no body", {f.step_id});
    if (needs_curator(f)) {
      throw Error(Errc::EmissionImpossible, "step " + f.step_id + " still waits for a curator decision", {f.step_id});
    }
  }
  for (const auto& a : script.adapters) {
    if (needs_curator(a)) {
      throw Error(Errc::EmissionImpossible, "the adapter into " + a.to_step + " still waits for a curator decision",
                  {a.to_step});
    }
  }

  Planner planner(script, ir);
  auto plans = planner.plan();

  TargetWorkflow tw;
  RuleSpec all;
  all.name = "all";
  all.inputs = planner.all_inputs();
  tw.rules.push_back(all);
  for (const auto& p : plans) tw.rules.push_back(p.spec);

  tw.snakefile = "configfile: \"config.yaml\"\n\nimport os\n";
  tw.snakefile += "os.makedirs(\"results\", exist_ok=True)\nos.makedirs(\"logs\", exist_ok=True)\n";
  for (const auto& r : tw.rules) tw.snakefile += "\n\n" + render_rule(r);

  tw.config_yaml = "input: " + quote("../data/input.txt") + "\n";
  tw.config_yaml += "output: " + quote(script.output_path) + "\n";
  for (const auto& [key, url] : script.apis) tw.config_yaml += key + "_api: " + quote(url) + "\n";

  for (const auto& p : plans) tw.scripts[p.spec.script] = render_rule_script(script, p);
  tw.layout = {"Snakefile", "config.yaml"};
  for (const auto& [path, _] : tw.scripts) tw.layout.push_back(path);
  std::sort(tw.layout.begin(), tw.layout.end());
  return tw;
}

std::vector<RuleSpec> read_snakefile(const std::string& text) {
  std::vector<RuleSpec> rules;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  RuleSpec* cur = nullptr;
  std::string key, value;
  int key_line = 0;

  auto flush = [&] {
    if (key.empty()) return;
    auto items = split_items(value);
    if (key == "input" || key == "output") {
      auto& dst = key == "input" ? cur->inputs : cur->outputs;
      for (const auto& i : items) dst.push_back(read_entry(i, key_line));
    } else if (key == "log" || key == "script") {
      if (items.size() != 1) throw Error(Errc::SchemaViolation, key + " takes one path", {std::to_string(key_line)});
      (key == "log" ? cur->log : cur->script) = read_entry(items[0], key_line);
    } else if (key == "params") {
      for (const auto& i : items) {
        auto eq = i.find('=');
        if (eq == std::string::npos) throw Error(Errc::SchemaViolation, "unnamed param", {std::to_string(key_line)});
        auto ref = i.substr(eq + 1);
        auto b = ref.find_first_not_of(' ');
        ref = b == std::string::npos ? "" : ref.substr(b);
        if (!is_config_ref(ref)) throw Error(Errc::SchemaViolation, "param is not a config value", {std::to_string(key_line)});
        auto name = i.substr(0, eq);
        while (!name.empty() && name.back() == ' ') name.pop_back();
        cur->params[name] = config_ref_key(ref);
      }
    } else {
      throw Error(Errc::SchemaViolation, "unsupported rule directive: " + key, {std::to_string(key_line)});
    }
    key.clear();
    value.clear();
  };

  while (std::getline(in, raw)) {
    ++line_no;
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    auto first = raw.find_first_not_of(" \t");
    if (first == std::string::npos || raw[first] == '#') continue;
    if (first == 0) {
      flush();
      cur = nullptr;
      if (raw.rfind("rule ", 0) == 0) {
        auto colon = raw.find(':');
        if (colon == std::string::npos) throw Error(Errc::SchemaViolation, "rule line without colon", {std::to_string(line_no)});
        auto name = raw.substr(5, colon - 5);
        while (!name.empty() && name.back() == ' ') name.pop_back();
        rules.push_back(RuleSpec{name, {}, {}, "", {}, ""});
        cur = &rules.back();
        if (raw.find_first_not_of(" \t", colon + 1) != std::string::npos) {
          throw Error(Errc::SchemaViolation, "directive on the rule line", {std::to_string(line_no)});
        }
      }
      continue;
    }
    if (!cur) throw Error(Errc::SchemaViolation, "indented line outside a rule", {std::to_string(line_no)});
    auto body = raw.substr(first);
    auto colon = body.find(':');
    bool is_key = colon != std::string::npos && first <= 4;
    if (is_key) {
      auto k = body.substr(0, colon);
      is_key = !k.empty() && std::all_of(k.begin(), k.end(), [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; });
    }
    if (is_key) {
      flush();
      key = body.substr(0, colon);
      value = body.substr(colon + 1);
      key_line = line_no;
    } else {
      if (key.empty()) throw Error(Errc::SchemaViolation, "continuation without directive", {std::to_string(line_no)});
      value += " " + body;
    }
  }
  flush();
  return rules;
}

std::vector<StructuralFinding> check_target(const TargetWorkflow& tw) {
  std::vector<StructuralFinding> findings;
  std::vector<RuleSpec> rules;
  try {
    rules = read_snakefile(tw.snakefile);
  } catch (const Error& e) {
    findings.push_back({FindingKind::DanglingReference, "", std::string("unreadable Snakefile: ") + e.what()});
    return findings;
  }
  bool config_ok = true;
  auto config = read_config(tw.config_yaml, config_ok);

  auto resolve = [&](const RuleSpec& r, const std::string& entry) -> std::string {
    if (!is_config_ref(entry)) return entry;
    auto key = config_ref_key(entry);
    auto it = config.find(key);
    if (it == config.end()) {
      findings.push_back({FindingKind::UndefinedConfigKey, r.name, key});
      return "";
    }
    return it->second;
  };

  std::map<std::string, std::string> producer;
  for (const auto& r : rules) {
    for (const auto& o : r.outputs) {
      auto p = resolve(r, o);
      if (!p.empty()) producer.emplace(p, r.name);
    }
  }
  std::map<std::string, std::set<std::string>> deps;  // rule -> rules it reads from
  bool has_all = false;
  for (const auto& r : rules) {
    if (r.name == "all") has_all = true;
    deps[r.name];
    for (const auto& i : r.inputs) {
      auto p = resolve(r, i);
      if (p.empty()) continue;
      if (auto it = producer.find(p); it != producer.end()) {
        deps[r.name].insert(it->second);
      } else if (!is_config_ref(i) || r.name == "all") {
        findings.push_back({FindingKind::DanglingReference, r.name, p});
      }
    }
    for (const auto& [name, key] : r.params) {
      if (!config.count(key)) findings.push_back({FindingKind::UndefinedConfigKey, r.name, key});
    }
    if (r.name != "all" && !tw.scripts.count(r.script)) {
      findings.push_back({FindingKind::MissingScript, r.name, r.script});
    }
  }

  // Cycles: strongly connected components with more than one rule, or a
  // rule reading its own output.
  std::map<std::string, int> index, low;
  std::set<std::string> on_stack;
  std::vector<std::string> stack;
  int counter = 0;
  std::function<void(const std::string&)> strong = [&](const std::string& v) {
    index[v] = low[v] = counter++;
    stack.push_back(v);
    on_stack.insert(v);
    for (const auto& w : deps[v]) {
      if (!index.count(w)) {
        strong(w);
        low[v] = std::min(low[v], low[w]);
      } else if (on_stack.count(w)) {
        low[v] = std::min(low[v], index[w]);
      }
    }
    if (low[v] == index[v]) {
      std::vector<std::string> members;
      std::string w;
      do {
        w = stack.back();
        stack.pop_back();
        on_stack.erase(w);
        members.push_back(w);
      } while (w != v);
      if (members.size() > 1 || deps[v].count(v)) {
        std::sort(members.begin(), members.end());
        findings.push_back({FindingKind::Cycle, members.front(), join(members, " -> ")});
      }
    }
  };
  for (const auto& r : rules) {
    if (!index.count(r.name)) strong(r.name);
  }

  if (!has_all) {
    findings.push_back({FindingKind::Unreachable, "all", "no rule named all"});
  } else {
    std::set<std::string> seen = {"all"};
    std::vector<std::string> todo = {"all"};
    while (!todo.empty()) {
      auto v = todo.back();
      todo.pop_back();
      for (const auto& w : deps[v]) {
        if (seen.insert(w).second) todo.push_back(w);
      }
    }
    for (const auto& r : rules) {
      if (!seen.count(r.name)) findings.push_back({FindingKind::Unreachable, r.name, "not needed by rule all"});
    }
  }
  if (!config_ok) findings.push_back({FindingKind::UndefinedConfigKey, "", "config.yaml is not a mapping"});
  return findings;
}

void write_target(const TargetWorkflow& tw, const std::filesystem::path& dir) {
  write_file(dir / "Snakefile", tw.snakefile);
  write_file(dir / "config.yaml", tw.config_yaml);
  for (const auto& [path, text] : tw.scripts) write_file(dir / path, text);
}

namespace {

const char* kBootstrap = R"PY(import json, os, runpy, sys, types
spec = json.loads(os.environ.pop('WFR_SNAKEMAKE_JOB'))


class _Named(list):
    pass


def _named(values, names):
    out = _Named(values)
    for name, value in names.items():
        setattr(out, name, value)
    return out


snakemake = types.SimpleNamespace(
    input=_named(spec['input'], {}),
    output=_named(spec['output'], {}),
    log=_named(spec['log'], {}),
    params=_named(list(spec['params'].values()), spec['params']),
    wildcards=_named([], {}),
    threads=1,
    resources=types.SimpleNamespace(),
    config=spec['config'],
    rule=spec['rule'],
)
sys.argv = [spec['script']]
runpy.run_path(spec['script'], init_globals={'snakemake': snakemake}, run_name='__main__')
)PY";

}  // namespace

TargetRunResult run_target(const std::filesystem::path& workflow_dir, const TargetRunOptions& options) {
  auto start = std::chrono::steady_clock::now();
  auto rules = read_snakefile(read_file(workflow_dir / "Snakefile"));
  bool config_ok = true;
  auto config = read_config(read_file(workflow_dir / "config.yaml"), config_ok);
  if (!config_ok) throw Error(Errc::SchemaViolation, "config.yaml is not a mapping");

  auto resolve = [&](const std::string& entry) {
    if (!is_config_ref(entry)) return entry;
    auto key = config_ref_key(entry);
    auto it = config.find(key);
    if (it == config.end()) throw Error(Errc::SchemaViolation, "undefined config key " + key, {key});
    return it->second;
  };

  std::map<std::string, const RuleSpec*> by_name;
  std::map<std::string, std::string> producer;
  for (const auto& r : rules) {
    by_name[r.name] = &r;
    for (const auto& o : r.outputs) producer[resolve(o)] = r.name;
  }
  if (!by_name.count("all")) throw Error(Errc::SchemaViolation, "no rule named all");

  // Post-order walk from `all` gives a dependency-respecting order.
  std::vector<std::string> order;
  std::map<std::string, int> mark;
  std::function<void(const std::string&)> visit = [&](const std::string& name) {
    if (mark[name] == 2) return;
    if (mark[name] == 1) throw Error(Errc::SchemaViolation, "rule graph has a cycle", {name});
    mark[name] = 1;
    for (const auto& i : by_name.at(name)->inputs) {
      if (auto it = producer.find(resolve(i)); it != producer.end()) visit(it->second);
    }
    mark[name] = 2;
    order.push_back(name);
  };
  visit("all");

  nlohmann::json config_json = nlohmann::json::object();
  for (const auto& [k, v] : config) config_json[k] = v;

  TargetRunResult result;
  result.ok = true;
  for (const auto& name : order) {
    const auto& r = *by_name.at(name);
    if (r.script.empty()) continue;
    nlohmann::json job;
    job["rule"] = r.name;
    job["script"] = r.script;
    job["config"] = config_json;
    job["input"] = nlohmann::json::array();
    job["output"] = nlohmann::json::array();
    job["log"] = nlohmann::json::array();
    job["params"] = nlohmann::json::object();
    for (const auto& i : r.inputs) job["input"].push_back(resolve(i));
    for (const auto& o : r.outputs) {
      auto p = resolve(o);
      job["output"].push_back(p);
      std::filesystem::create_directories((workflow_dir / p).parent_path());
    }
    if (!r.log.empty()) {
      job["log"].push_back(r.log);
      std::filesystem::create_directories((workflow_dir / r.log).parent_path());
    }
    for (const auto& [pname, key] : r.params) job["params"][pname] = config.count(key) ? config.at(key) : "";

    TargetRuleRun run;
    run.rule = r.name;
    bool missing_input = false;
    for (const auto& i : job["input"]) {
      if (!std::filesystem::exists(workflow_dir / i.get<std::string>())) {
        missing_input = true;
        run.err = "missing input " + i.get<std::string>();
      }
    }
    if (missing_input) {
      run.exit_code = 1;
    } else {
      auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start);
      ProcessSpec spec;
      spec.argv = {python_executable(), "-c", kBootstrap};
      spec.cwd = workflow_dir;
      spec.env = options.env;
      spec.env["WFR_SNAKEMAKE_JOB"] = job.dump();
      spec.timeout = std::max(std::chrono::milliseconds(1), options.timeout - elapsed);
      auto p = run_process(spec);
      run.exit_code = p.exit_code;
      run.timed_out = p.timed_out;
      run.err = p.err;
      run.wall_ms = p.wall_ms;
      if (p.exit_code == 0) {
        for (const auto& o : job["output"]) {
          if (!std::filesystem::exists(workflow_dir / o.get<std::string>())) {
            run.exit_code = 1;
            run.err += "missing output " + o.get<std::string>() + "\n";
          }
        }
      }
    }
    result.rules.push_back(run);
    if (run.exit_code != 0) {
      result.ok = false;
      result.failed_rule = r.name;
      break;
    }
  }
  result.wall_ms =
      std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start).count();
  return result;
}

nlohmann::json to_json(const TargetWorkflow& tw) {
  nlohmann::json rules = nlohmann::json::array();
  for (const auto& r : tw.rules) {
    rules.push_back({{"name", r.name},
                     {"inputs", r.inputs},
                     {"outputs", r.outputs},
                     {"log", r.log},
                     {"params", r.params},
                     {"script", r.script}});
  }
  return {{"snakefile", tw.snakefile},
          {"config_yaml", tw.config_yaml},
          {"scripts", tw.scripts},
          {"layout", tw.layout},
          {"rules", rules}};
}

TargetWorkflow target_from_json(const nlohmann::json& j) {
  TargetWorkflow tw;
  tw.snakefile = j.at("snakefile").get<std::string>();
  tw.config_yaml = j.at("config_yaml").get<std::string>();
  tw.scripts = j.at("scripts").get<std::map<std::string, std::string>>();
  tw.layout = j.at("layout").get<std::vector<std::string>>();
  for (const auto& r : j.at("rules")) {
    tw.rules.push_back(RuleSpec{r.at("name").get<std::string>(), r.at("inputs").get<std::vector<std::string>>(),
                                r.at("outputs").get<std::vector<std::string>>(), r.at("log").get<std::string>(),
                                r.at("params").get<std::map<std::string, std::string>>(),
                                r.at("script").get<std::string>()});
  }
  return tw;
}

nlohmann::json to_json(const StructuralFinding& f) {
  return {{"kind", to_string(f.kind)}, {"rule", f.rule}, {"detail", f.detail}};
}

}  // namespace wfr

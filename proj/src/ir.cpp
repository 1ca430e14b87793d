#include "wfrevive/ir.hpp"

#include <algorithm>
#include <cctype>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "wfrevive/errors.hpp"

namespace wfr {

// ------------------------------------------------------------ basics

const Step* WorkflowIR::find(std::string_view id) const {
  for (const auto& s : steps) {
    if (s.id == id) return &s;
  }
  return nullptr;
}

Step* WorkflowIR::find(std::string_view id) {
  for (auto& s : steps) {
    if (s.id == id) return &s;
  }
  return nullptr;
}

std::vector<const Edge*> WorkflowIR::edges_into(std::string_view step) const {
  std::vector<const Edge*> out;
  for (const auto& e : edges) {
    if (e.to_step == step) out.push_back(&e);
  }
  return out;
}

std::vector<const Edge*> WorkflowIR::edges_out_of(std::string_view step) const {
  std::vector<const Edge*> out;
  for (const auto& e : edges) {
    if (e.from_step == step) out.push_back(&e);
  }
  return out;
}

std::string to_string(StepKind k) {
  switch (k) {
    case StepKind::Source: return "Source";
    case StepKind::Sink: return "Sink";
    case StepKind::ServiceCall: return "ServiceCall";
    case StepKind::LocalCompute: return "LocalCompute";
    case StepKind::Shim: return "Shim";
    case StepKind::Opaque: return "Opaque";
  }
  return "Opaque";
}

StepKind step_kind_from_string(const std::string& s) {
  for (auto k : {StepKind::Source, StepKind::Sink, StepKind::ServiceCall, StepKind::LocalCompute, StepKind::Shim,
                 StepKind::Opaque}) {
    if (to_string(k) == s) return k;
  }
  throw Error(Errc::SchemaViolation, "unknown step kind " + s, {"kind"});
}

std::string snake_case(std::string_view name) {
  std::string out;
  char prev = '\0';
  for (char c : name) {
    auto u = static_cast<unsigned char>(c);
    if (std::isalnum(u)) {
      // "getPathways" -> "get_pathways"
      if (std::isupper(u) && std::islower(static_cast<unsigned char>(prev)) && !out.empty()) out.push_back('_');
      out.push_back(static_cast<char>(std::tolower(u)));
    } else if (!out.empty() && out.back() != '_') {
      out.push_back('_');
    }
    prev = c;
  }
  while (!out.empty() && out.back() == '_') out.pop_back();
  if (out.empty()) return "step";
  if (std::isdigit(static_cast<unsigned char>(out[0]))) out = "step_" + out;
  return out;
}

namespace {

std::vector<std::string> path_segments(const std::string& operation) {
  std::vector<std::string> segs;
  std::string cur;
  for (char c : operation) {
    if (c == '?' || c == '#') break;
    if (c == '/') {
      if (!cur.empty()) segs.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) segs.push_back(cur);
  return segs;
}

std::string java_string_literal(std::string_view text) {
  std::string out = "\"";
  for (char c : text) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      case '\t': out += "\\t"; break;
      default: out.push_back(c);
    }
  }
  return out + "\"";
}

std::string singular(std::string word) {
  if (word.size() > 3 && word.back() == 's' && word[word.size() - 2] != 's') word.pop_back();
  return word;
}

}  // namespace

std::string default_summary(const Step& step) {
  switch (step.kind) {
    case StepKind::Source: return "Provides the workflow's input values.";
    case StepKind::Sink: return "Collects the workflow's final outputs.";
    case StepKind::Shim: return "Rewrites values so the next step can read them; it only adapts data format.";
    case StepKind::Opaque:
      return "Performs an operation the engine could not classify; a curator needs to describe it.";
    case StepKind::LocalCompute: {
      const std::string script = step.script_text.value_or("");
      if (step.in_ports.empty()) return "Provides a constant value used by downstream steps.";
      if (script.find("split(") != std::string::npos) return "Splits its text input into separate values.";
      return "Runs a local script over its inputs.";
    }
    case StepKind::ServiceCall: {
      if (!step.endpoint) return "Calls a remote service.";
      const auto& e = *step.endpoint;
      auto svc = service_display_name(e.host());
      if (e.protocol == Protocol::Soap) {
        return "Calls the " + e.operation + " operation of the " + svc + " SOAP service.";
      }
      auto segs = path_segments(e.operation);
      std::vector<std::string> literal;
      for (const auto& s : segs) {
        if (s.find('{') == std::string::npos) literal.push_back(s);
      }
      auto db = literal.size() > 1 ? singular(literal[1]) : std::string("database");
      if (!literal.empty()) {
        const auto& verb = literal[0];
        if (verb == "conv") {
          return "Converts source " + db + " identifiers to " + svc + " identifiers via the " + svc +
                 " conversion service.";
        }
        if (verb == "link") {
          return "Links " + svc + " identifiers to related " + db + " entries via the " + svc + " link service.";
        }
        if (verb == "get") return "Retrieves " + svc + " database entries via the " + svc + " get service.";
        if (verb == "find") return "Searches " + svc + " entries by keyword via the " + svc + " find service.";
        if (verb == "list") return "Lists " + svc + " entries via the " + svc + " list service.";
      }
      return "Fetches data from the " + svc + " web service.";
    }
  }
  return "";
}

// ------------------------------------------------------------ cycles / order

namespace {

std::map<std::string, std::vector<std::string>> adjacency(const WorkflowIR& ir) {
  std::map<std::string, std::vector<std::string>> adj;
  for (const auto& s : ir.steps) adj[s.id];
  for (const auto& e : ir.edges) adj[e.from_step].push_back(e.to_step);
  for (auto& [_, v] : adj) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
  }
  return adj;
}

// Returns one cycle, rotated to start at its smallest id; empty if acyclic.
std::vector<std::string> find_cycle(const std::map<std::string, std::vector<std::string>>& adj) {
  std::map<std::string, int> color;  // 0 white, 1 grey, 2 black
  std::vector<std::string> stack;
  std::vector<std::string> cycle;
  std::function<bool(const std::string&)> visit = [&](const std::string& u) {
    color[u] = 1;
    stack.push_back(u);
    auto it = adj.find(u);
    if (it != adj.end()) {
      for (const auto& v : it->second) {
        if (color[v] == 1) {
          auto from = std::find(stack.begin(), stack.end(), v);
          cycle.assign(from, stack.end());
          return true;
        }
        if (color[v] == 0 && visit(v)) return true;
      }
    }
    stack.pop_back();
    color[u] = 2;
    return false;
  };
  for (const auto& [u, _] : adj) {
    if (color[u] == 0 && visit(u)) break;
  }
  if (!cycle.empty()) {
    auto smallest = std::min_element(cycle.begin(), cycle.end());
    std::rotate(cycle.begin(), smallest, cycle.end());
  }
  return cycle;
}

[[noreturn]] void throw_cycle(const std::vector<std::string>& cycle) {
  std::string joined;
  for (const auto& s : cycle) joined += (joined.empty() ? "" : " -> ") + s;
  throw Error(Errc::CyclicWorkflow, "workflow contains a cycle: " + joined, cycle);
}

}  // namespace

std::vector<std::string> topo_order(const WorkflowIR& ir) {
  auto adj = adjacency(ir);
  std::map<std::string, int> indegree;
  for (const auto& [u, _] : adj) indegree[u];
  for (const auto& [_, vs] : adj) {
    for (const auto& v : vs) ++indegree[v];
  }
  std::set<std::string> ready;
  for (const auto& [u, d] : indegree) {
    if (d == 0) ready.insert(u);
  }
  std::vector<std::string> order;
  while (!ready.empty()) {
    auto u = *ready.begin();
    ready.erase(ready.begin());
    order.push_back(u);
    for (const auto& v : adj[u]) {
      if (--indegree[v] == 0) ready.insert(v);
    }
  }
  if (order.size() != indegree.size()) throw_cycle(find_cycle(adj));
  return order;
}

// ------------------------------------------------------------ lowering

WorkflowIR lower(const LegacyWorkflow& wf) {
  WorkflowIR ir;
  ir.title = wf.title;
  ir.origin_digest = wf.source_digest;
  ir.outputs = wf.workflow_outputs;
  for (const auto& name : wf.workflow_inputs) {
    WorkflowInput in{name, std::nullopt};
    if (auto it = wf.raw_annotations.find("input." + name + ".example"); it != wf.raw_annotations.end()) {
      in.sample_value = it->second;
    }
    ir.inputs.push_back(std::move(in));
  }

  std::set<std::string> used{std::string(kSourceStepId), std::string(kSinkStepId)};
  std::map<std::string, std::string> id_of;
  for (const auto& p : wf.processors) {
    auto base = snake_case(p.name);
    auto id = base;
    for (int n = 2; used.count(id); ++n) id = base + "_" + std::to_string(n);
    used.insert(id);
    id_of[p.name] = id;
  }

  if (!wf.workflow_inputs.empty()) {
    Step src;
    src.id = kSourceStepId;
    src.kind = StepKind::Source;
    src.out_ports = wf.workflow_inputs;
    src.summary = default_summary(src);
    ir.steps.push_back(std::move(src));
  }
  for (const auto& p : wf.processors) {
    Step s;
    s.id = id_of[p.name];
    switch (p.activity_kind) {
      case ActivityKind::SoapCall:
      case ActivityKind::RestCall: s.kind = StepKind::ServiceCall; break;
      case ActivityKind::LocalScript:
      case ActivityKind::StringConstant: s.kind = StepKind::LocalCompute; break;
      case ActivityKind::Opaque: s.kind = StepKind::Opaque; break;
    }
    s.endpoint = p.endpoint;
    s.script_text = p.script_text;
    for (const auto& port : p.input_ports) s.in_ports.push_back(port.name);
    for (const auto& port : p.output_ports) s.out_ports.push_back(port.name);
    if (p.activity_kind == ActivityKind::StringConstant) {
      if (s.out_ports.empty()) s.out_ports.push_back("value");
      s.script_text = "String " + s.out_ports.front() + " = " + java_string_literal(p.script_text.value_or("")) + ";";
    }
    s.summary = default_summary(s);
    ir.steps.push_back(std::move(s));
  }
  if (!wf.workflow_outputs.empty()) {
    Step sink;
    sink.id = kSinkStepId;
    sink.kind = StepKind::Sink;
    sink.in_ports = wf.workflow_outputs;
    sink.summary = default_summary(sink);
    ir.steps.push_back(std::move(sink));
  }

  auto end_step = [&](const EndpointRef& r) -> std::string {
    switch (r.kind) {
      case EndpointRef::Kind::WorkflowInput: return std::string(kSourceStepId);
      case EndpointRef::Kind::WorkflowOutput: return std::string(kSinkStepId);
      case EndpointRef::Kind::ProcessorPort: return id_of.at(r.processor);
    }
    return "";
  };
  for (const auto& l : wf.datalinks) {
    Edge e{end_step(l.source), l.source.port, end_step(l.sink), l.sink.port, std::nullopt};
    if (std::find(ir.edges.begin(), ir.edges.end(), e) == ir.edges.end()) ir.edges.push_back(std::move(e));
  }
  topo_order(ir);  // throws on cycles
  return ir;
}

// ------------------------------------------------------------ shims

bool looks_like_shim_script(std::string_view script) {
  std::string lower;
  lower.reserve(script.size());
  for (char c : script) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  for (const char* banned : {"http", "url", "request"}) {
    if (lower.find(banned) != std::string::npos) return false;
  }
  static const std::set<std::string> kKeywords = {"if",    "else",  "for",    "while", "do",     "switch",
                                                  "case",  "try",   "catch",  "finally", "new",  "throw",
                                                  "import", "class", "break", "continue", "synchronized"};
  static const std::set<std::string> kCalls = {"split", "join", "concat", "trim", "toString", "valueOf"};
  bool assigns = false;
  std::size_t i = 0;
  const std::size_t n = script.size();
  while (i < n) {
    char c = script[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
    } else if (script.substr(i, 2) == "//") {
      while (i < n && script[i] != '\n') ++i;
    } else if (script.substr(i, 2) == "/*") {
      auto end = script.find("*/", i + 2);
      if (end == std::string_view::npos) return false;
      i = end + 2;
    } else if (c == '"' || c == '\'') {
      ++i;
      while (i < n && script[i] != c) {
        if (script[i] == '\\') ++i;
        ++i;
      }
      if (i >= n) return false;
      ++i;
    } else if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      auto start = i;
      while (i < n && (std::isalnum(static_cast<unsigned char>(script[i])) || script[i] == '_')) ++i;
      std::string word(script.substr(start, i - start));
      if (kKeywords.count(word)) return false;
      auto j = i;
      while (j < n && std::isspace(static_cast<unsigned char>(script[j]))) ++j;
      if (j < n && script[j] == '(' && !kCalls.count(word)) return false;
    } else if (std::isdigit(static_cast<unsigned char>(c))) {
      ++i;
    } else if (c == '=') {
      if (i + 1 < n && script[i + 1] == '=') return false;
      assigns = true;
      ++i;
    } else if (std::string_view("+.,;()[]").find(c) != std::string_view::npos) {
      ++i;
    } else {
      return false;
    }
  }
  return assigns;
}

WorkflowIR detect_shims(WorkflowIR ir) {
  for (auto& s : ir.steps) {
    if (s.kind == StepKind::LocalCompute && s.in_ports.size() == 1 && s.out_ports.size() == 1 && s.script_text &&
        looks_like_shim_script(*s.script_text)) {
      s.kind = StepKind::Shim;
      s.summary = default_summary(s);
    }
  }
  return ir;
}

std::string format_adapter_stages(const std::vector<AdapterStage>& stages) {
  std::string out;
  for (const auto& st : stages) {
    if (!out.empty()) out += "\n";
    out += "# stage " + st.step_id + ": " + st.in_port + " -> " + st.out_port + "\n";
    out += st.script;
    if (out.empty() || out.back() != '\n') out += "\n";
  }
  return out;
}

std::vector<AdapterStage> parse_adapter_stages(std::string_view text) {
  std::vector<AdapterStage> stages;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("# stage ", 0) == 0) {
      AdapterStage st;
      auto rest = line.substr(8);
      auto colon = rest.find(": ");
      auto arrow = rest.find(" -> ");
      if (colon == std::string::npos || arrow == std::string::npos || arrow < colon) {
        throw Error(Errc::SchemaViolation, "malformed adapter stage header: " + line, {"adapter_script"});
      }
      st.step_id = rest.substr(0, colon);
      st.in_port = rest.substr(colon + 2, arrow - colon - 2);
      st.out_port = rest.substr(arrow + 4);
      stages.push_back(std::move(st));
    } else if (!stages.empty()) {
      stages.back().script += line + "\n";
    } else if (!line.empty()) {
      throw Error(Errc::SchemaViolation, "adapter script text before the first stage header", {"adapter_script"});
    }
  }
  // format_adapter_stages separates stages with one blank line.
  for (std::size_t k = 0; k + 1 < stages.size(); ++k) {
    auto& s = stages[k].script;
    if (s.size() >= 2 && s.substr(s.size() - 2) == "\n\n") s.pop_back();
  }
  return stages;
}

CollapseResult collapse_shims(const WorkflowIR& ir) {
  std::map<std::string, const Step*> collapsible;
  for (const auto& s : ir.steps) {
    if (s.kind == StepKind::Shim && ir.edges_into(s.id).size() == 1 && !ir.edges_out_of(s.id).empty()) {
      collapsible[s.id] = &s;
    }
  }
  CollapseResult result;
  if (collapsible.empty()) {
    result.ir = ir;
    return result;
  }
  auto stages_of = [](const std::optional<std::string>& script) {
    return script ? parse_adapter_stages(*script) : std::vector<AdapterStage>{};
  };

  std::vector<Edge> edges;
  for (const auto& e : ir.edges) {
    if (collapsible.count(e.from_step)) continue;
    if (!collapsible.count(e.to_step)) {
      edges.push_back(e);
      continue;
    }
    struct Visit {
      std::string shim;
      std::size_t position;
    };
    std::function<void(const Edge&, std::vector<AdapterStage>, std::vector<Visit>)> walk =
        [&](const Edge& into, std::vector<AdapterStage> stages, std::vector<Visit> chain) {
          const Step& shim = *collapsible.at(into.to_step);
          stages.push_back({shim.id, shim.in_ports.front(), shim.out_ports.front(), shim.script_text.value_or("")});
          chain.push_back({shim.id, chain.size()});
          for (const Edge* out : ir.edges_out_of(shim.id)) {
            auto next = stages;
            for (auto& st : stages_of(out->adapter_script)) next.push_back(std::move(st));
            if (collapsible.count(out->to_step)) {
              walk(*out, std::move(next), chain);
              continue;
            }
            Edge folded{e.from_step, e.from_port, out->to_step, out->to_port, format_adapter_stages(next)};
            if (std::find(edges.begin(), edges.end(), folded) == edges.end()) edges.push_back(folded);
            for (const auto& v : chain) {
              result.records.push_back(
                  {*collapsible.at(v.shim), e.from_step, e.from_port, out->to_step, out->to_port, v.position});
            }
          }
        };
    walk(e, stages_of(e.adapter_script), {});
  }

  result.ir = ir;
  result.ir.steps.erase(std::remove_if(result.ir.steps.begin(), result.ir.steps.end(),
                                       [&](const Step& s) { return collapsible.count(s.id) > 0; }),
                        result.ir.steps.end());
  result.ir.edges = std::move(edges);
  return result;
}

// ------------------------------------------------------------ validation

namespace {

bool is_snake_id(const std::string& id) {
  if (id.empty()) return false;
  if (!(std::islower(static_cast<unsigned char>(id[0])) || id[0] == '_')) return false;
  return std::all_of(id.begin(), id.end(), [](char c) {
    return std::islower(static_cast<unsigned char>(c)) || std::isdigit(static_cast<unsigned char>(c)) || c == '_';
  });
}

[[noreturn]] void violation(const std::string& path, const std::string& what) {
  throw Error(Errc::SchemaViolation, "schema violation at " + path + ": " + what, {path});
}

}  // namespace

void validate_ir(const WorkflowIR& ir) {
  std::set<std::string> ids;
  for (std::size_t i = 0; i < ir.steps.size(); ++i) {
    const auto& s = ir.steps[i];
    auto path = "$.steps[" + std::to_string(i) + "]";
    if (!is_snake_id(s.id)) violation(path + ".id", "step id must be nonempty snake_case");
    if (!ids.insert(s.id).second) violation(path + ".id", "duplicate step id " + s.id);
    if (s.kind == StepKind::ServiceCall && !s.endpoint) violation(path + ".endpoint", "service call without endpoint");
    if (s.kind == StepKind::Shim && (s.in_ports.size() != 1 || s.out_ports.size() != 1)) {
      violation(path, "shim must have exactly one input and one output port");
    }
  }
  auto has = [](const std::vector<std::string>& v, const std::string& x) {
    return std::find(v.begin(), v.end(), x) != v.end();
  };
  for (std::size_t i = 0; i < ir.edges.size(); ++i) {
    const auto& e = ir.edges[i];
    auto path = "$.edges[" + std::to_string(i) + "]";
    const Step* from = ir.find(e.from_step);
    const Step* to = ir.find(e.to_step);
    if (!from) violation(path + ".from_step", "unknown step " + e.from_step);
    if (!to) violation(path + ".to_step", "unknown step " + e.to_step);
    if (!has(from->out_ports, e.from_port)) violation(path + ".from_port", "undeclared port " + e.from_port);
    if (!has(to->in_ports, e.to_port)) violation(path + ".to_port", "undeclared port " + e.to_port);
  }
  topo_order(ir);
}

// ------------------------------------------------------------ JSON

namespace {

nlohmann::json step_json(const Step& s) {
  nlohmann::json j{{"id", s.id},
                   {"kind", to_string(s.kind)},
                   {"summary", s.summary},
                   {"in_ports", s.in_ports},
                   {"out_ports", s.out_ports}};
  if (s.endpoint) j["endpoint"] = *s.endpoint;
  if (s.script_text) j["script_text"] = *s.script_text;
  return j;
}

nlohmann::json edge_json(const Edge& e) {
  nlohmann::json j{{"from_step", e.from_step}, {"from_port", e.from_port}, {"to_step", e.to_step}, {"to_port", e.to_port}};
  if (e.adapter_script) j["adapter_script"] = *e.adapter_script;
  return j;
}

const nlohmann::json& field(const nlohmann::json& j, const char* key, const std::string& path) {
  if (!j.is_object()) violation(path, "expected an object");
  auto it = j.find(key);
  if (it == j.end()) violation(path + "." + key, "missing field");
  return *it;
}

std::string string_field(const nlohmann::json& j, const char* key, const std::string& path) {
  const auto& v = field(j, key, path);
  if (!v.is_string()) violation(path + "." + key, "expected a string");
  return v.get<std::string>();
}

std::optional<std::string> optional_string(const nlohmann::json& j, const char* key, const std::string& path) {
  auto it = j.find(key);
  if (it == j.end()) return std::nullopt;
  if (!it->is_string()) violation(path + "." + key, "expected a string");
  return it->get<std::string>();
}

std::vector<std::string> string_list(const nlohmann::json& j, const char* key, const std::string& path) {
  const auto& v = field(j, key, path);
  if (!v.is_array()) violation(path + "." + key, "expected an array");
  std::vector<std::string> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_string()) violation(path + "." + key + "[" + std::to_string(i) + "]", "expected a string");
    out.push_back(v[i].get<std::string>());
  }
  return out;
}

const nlohmann::json& array_field(const nlohmann::json& j, const char* key, const std::string& path) {
  const auto& v = field(j, key, path);
  if (!v.is_array()) violation(path + "." + key, "expected an array");
  return v;
}

}  // namespace

nlohmann::json to_json(const WorkflowIR& ir) {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& s : ir.steps) steps.push_back(step_json(s));
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& e : ir.edges) edges.push_back(edge_json(e));
  nlohmann::json inputs = nlohmann::json::array();
  for (const auto& in : ir.inputs) {
    nlohmann::json ji{{"name", in.name}};
    if (in.sample_value) ji["sample_value"] = *in.sample_value;
    inputs.push_back(std::move(ji));
  }
  return {{"title", ir.title}, {"origin_digest", ir.origin_digest}, {"steps", steps},
          {"edges", edges},    {"inputs", inputs},                  {"outputs", ir.outputs}};
}

std::string ir_to_json(const WorkflowIR& ir) { return to_json(ir).dump(2); }

WorkflowIR ir_from_json(const nlohmann::json& j) {
  const std::string root = "$";
  if (!j.is_object()) violation(root, "expected an object");
  WorkflowIR ir;
  ir.title = string_field(j, "title", root);
  ir.origin_digest = string_field(j, "origin_digest", root);
  const auto& steps = array_field(j, "steps", root);
  for (std::size_t i = 0; i < steps.size(); ++i) {
    auto path = "$.steps[" + std::to_string(i) + "]";
    const auto& js = steps[i];
    Step s;
    s.id = string_field(js, "id", path);
    try {
      s.kind = step_kind_from_string(string_field(js, "kind", path));
    } catch (const Error&) {
      violation(path + ".kind", "unknown step kind");
    }
    s.summary = string_field(js, "summary", path);
    if (auto it = js.find("endpoint"); it != js.end()) {
      try {
        s.endpoint = it->get<ServiceEndpoint>();
      } catch (const std::exception&) {
        violation(path + ".endpoint", "malformed endpoint");
      }
    }
    s.script_text = optional_string(js, "script_text", path);
    s.in_ports = string_list(js, "in_ports", path);
    s.out_ports = string_list(js, "out_ports", path);
    ir.steps.push_back(std::move(s));
  }
  const auto& edges = array_field(j, "edges", root);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    auto path = "$.edges[" + std::to_string(i) + "]";
    const auto& je = edges[i];
    ir.edges.push_back({string_field(je, "from_step", path), string_field(je, "from_port", path),
                        string_field(je, "to_step", path), string_field(je, "to_port", path),
                        optional_string(je, "adapter_script", path)});
  }
  const auto& inputs = array_field(j, "inputs", root);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto path = "$.inputs[" + std::to_string(i) + "]";
    ir.inputs.push_back({string_field(inputs[i], "name", path), optional_string(inputs[i], "sample_value", path)});
  }
  ir.outputs = string_list(j, "outputs", root);
  validate_ir(ir);
  return ir;
}

WorkflowIR ir_from_json(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    violation("$", std::string("not valid JSON: ") + e.what());
  }
  return ir_from_json(j);
}

nlohmann::json to_json(const CollapseRecord& r) {
  return {{"shim", step_json(r.shim)},
          {"upstream_step", r.upstream_step},
          {"upstream_port", r.upstream_port},
          {"downstream_step", r.downstream_step},
          {"downstream_port", r.downstream_port},
          {"position", r.position}};
}

CollapseRecord collapse_record_from_json(const nlohmann::json& j) {
  CollapseRecord r;
  nlohmann::json wrapper{{"title", ""}, {"origin_digest", ""}, {"steps", {j.at("shim")}},
                         {"edges", nlohmann::json::array()}, {"inputs", nlohmann::json::array()},
                         {"outputs", nlohmann::json::array()}};
  r.shim = ir_from_json(wrapper).steps.front();
  r.upstream_step = j.at("upstream_step").get<std::string>();
  r.upstream_port = j.at("upstream_port").get<std::string>();
  r.downstream_step = j.at("downstream_step").get<std::string>();
  r.downstream_port = j.at("downstream_port").get<std::string>();
  r.position = j.at("position").get<std::size_t>();
  return r;
}

}  // namespace wfr

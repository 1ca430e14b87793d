#include "wfrevive/synthesis.hpp"

#include <httplib.h>

#include <algorithm>
#include <cctype>
#include <future>
#include <sstream>

#include "wfrevive/beanshell.hpp"
#include "wfrevive/errors.hpp"
#include "wfrevive/process.hpp"

namespace wfr {

const char* const kRolePreamble =
    "You are a workflow repair specialist that converts broken scientific workflows into a single working Python "
    "script.";

namespace {

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::string docstring(const std::string& text) {
  std::string out;
  for (char c : text) {
    if (c == '\\') {
      out += "\\\\";
    } else if (c == '"') {
      out += "\\\"";
    } else if (c == '\n') {
      out += ' ';
    } else {
      out.push_back(c);
    }
  }
  return "\"\"\"" + out + "\"\"\"";
}

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

std::string join(const std::vector<std::string>& items, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? sep : "") + items[i];
  return out;
}

std::vector<std::string> functional_order(const WorkflowIR& ir) {
  std::vector<std::string> out;
  for (const auto& id : topo_order(ir)) {
    if (ir.find(id)->is_functional()) out.push_back(id);
  }
  return out;
}

// apis keys in first-use order; a label already bound to another base URL
// gets a numeric suffix.
std::vector<std::pair<std::string, std::string>> assign_api_keys(const WorkflowIR& ir,
                                                                  std::map<std::string, std::string>* of_step) {
  std::vector<std::pair<std::string, std::string>> apis;
  for (const auto& id : functional_order(ir)) {
    const Step& s = *ir.find(id);
    if (s.kind != StepKind::ServiceCall || !s.endpoint || s.endpoint->protocol != Protocol::Rest) continue;
    const auto& base = s.endpoint->base_url;
    std::string key;
    for (const auto& [k, url] : apis) {
      if (url == base) key = k;
    }
    if (key.empty()) {
      auto label = py_ident(service_label(s.endpoint->host()));
      key = label;
      for (int n = 2; std::any_of(apis.begin(), apis.end(), [&](const auto& a) { return a.first == key; }); ++n) {
        key = label + "_" + std::to_string(n);
      }
      apis.emplace_back(key, base);
    }
    if (of_step) (*of_step)[id] = key;
  }
  return apis;
}

std::vector<std::string> unique_params(const std::vector<std::string>& ports) {
  std::vector<std::string> params;
  for (const auto& p : ports) {
    auto base = py_ident(p);
    auto name = base;
    for (int n = 2; std::find(params.begin(), params.end(), name) != params.end(); ++n) {
      name = base + "_" + std::to_string(n);
    }
    params.push_back(name);
  }
  return params;
}

std::string data_key(const std::string& step, const std::string& port) { return py_str(step + "." + port); }

std::string return_none(const std::vector<std::string>& outs) {
  std::string r = "return {";
  for (std::size_t i = 0; i < outs.size(); ++i) r += (i ? ", " : "") + py_str(outs[i]) + ": None";
  return r + "}";
}

std::string adapter_body(const Edge& e, const std::vector<AdapterStage>& stages) {
  std::vector<std::string> lines;
  for (const auto& st : stages) {
    auto t = transliterate_beanshell(st.script, {st.in_port});
    std::string problem;
    if (!t.ok) {
      problem = t.reason;
    } else if (!t.assigned.count(st.out_port)) {
      problem = "the script never sets " + st.out_port;
    } else {
      for (const auto& l : t.lines) {
        if (l.find("://") != std::string::npos) problem = "the script builds a web address";
      }
    }
    if (!problem.empty()) {
      return "_checkpoint(" + py_str(e.to_step) + ", " +
             py_str(std::string(kCheckpointMarker) + ": could not translate " + st.step_id + ": " + problem) +
             ")\nreturn None";
    }
    lines.push_back(py_ident(st.in_port) + " = _v");
    lines.insert(lines.end(), t.lines.begin(), t.lines.end());
    lines.push_back("_v = " + t.output_expr.at(st.out_port));
  }
  lines.push_back("return _v");
  return join(lines, "\n");
}

std::string value_expr(const PivotScript& s, const Edge& e) {
  auto v = "data[" + data_key(e.from_step, e.from_port) + "]";
  if (const auto* a = s.adapter_for(e)) v = "_each(" + a->name + ", " + v + ")";
  return v;
}

std::string build_main(const WorkflowIR& ir, const PivotScript& s) {
  std::vector<std::string> lines = {"data = {}"};
  if (!s.workflow_inputs.empty()) {
    std::vector<std::string> names;
    for (const auto& n : s.workflow_inputs) names.push_back(py_str(n));
    lines.push_back("inputs = _load_input([" + join(names, ", ") + "])");
    for (const auto& n : s.workflow_inputs) {
      lines.push_back("data[" + data_key(std::string(kSourceStepId), n) + "] = inputs[" + py_str(n) + "]");
    }
  }
  for (const auto& f : s.functions) {
    std::vector<std::string> args;
    auto into = ir.edges_into(f.step_id);
    for (std::size_t i = 0; i < f.in_ports.size(); ++i) {
      std::string v = "None";
      for (const auto* e : into) {
        if (e->to_port == f.in_ports[i]) {
          v = value_expr(s, *e);
          break;
        }
      }
      args.push_back(f.params[i] + "=" + v);
    }
    lines.push_back("result = " + f.name + "(" + join(args, ", ") + ")");
    for (const auto& o : f.out_ports) {
      lines.push_back("data[" + data_key(f.step_id, o) + "] = result.get(" + py_str(o) + ")");
    }
  }
  std::vector<std::string> outs;
  auto into_sink = ir.edges_into(kSinkStepId);
  for (const auto& name : s.workflow_outputs) {
    std::string v = "None";
    for (const auto* e : into_sink) {
      if (e->to_port == name) {
        v = value_expr(s, *e);
        break;
      }
    }
    outs.push_back(py_str(name) + ": " + v);
  }
  lines.push_back("_write_output({" + join(outs, ", ") + "})");
  return join(lines, "\n");
}

const char* kRuntime = R"PY(_LOG_PATH = None
_FIXTURE_CACHE = []


def _log(event, step, detail=''):
    line = ('[wfr] %s %s %s' % (event, step, detail)).rstrip()
    print(line, file=sys.stderr)
    if _LOG_PATH:
        with open(_LOG_PATH, 'a', encoding='utf-8') as handle:
            handle.write(line + '\n')


def _checkpoint(step, reason):
    _log('checkpoint', step, reason)
    sys.exit(4)


def _fixtures():
    if not _FIXTURE_CACHE:
        path = os.environ.get('WFR_FIXTURES')
        if path:
            with open(path, encoding='utf-8') as handle:
                _FIXTURE_CACHE.append(json.load(handle))
        else:
            _FIXTURE_CACHE.append(None)
    return _FIXTURE_CACHE[0]


def _http_get(step, url):
    fixtures = _fixtures()
    if fixtures is not None:
        entry = fixtures.get('GET ' + url)
        if entry is None or entry.get('timeout'):
            _log('unreachable', step, url)
            sys.exit(3)
        status = int(entry.get('status', 200))
        body = entry.get('body', '')
        latency = int(entry.get('latency_ms', 0))
    else:
        start = time.monotonic()
        try:
            with urllib.request.urlopen(url, timeout=60) as response:
                status = response.status
                body = response.read().decode('utf-8', 'replace')
        except urllib.error.HTTPError as exc:
            status = exc.code
            body = ''
        except (urllib.error.URLError, OSError):
            _log('unreachable', step, url)
            sys.exit(3)
        latency = int((time.monotonic() - start) * 1000)
    if not 200 <= status < 300:
        _log('http-error', step, '%d %s' % (status, url))
        sys.exit(3)
    _log('http-ok', step, '%d %d %s' % (status, latency, url))
    return body


def _fill(template, **params):
    out = template
    for name, value in params.items():
        out = out.replace('{' + name + '}', urllib.parse.quote(_jstr(value), safe=':'))
    return out


def _tab_pairs(step, body):
    pairs = {}
    for number, line in enumerate(body.splitlines(), 1):
        if not line.strip():
            continue
        if '\t' not in line:
            _log('parse-error', step, 'line %d has no tab separator' % number)
            sys.exit(5)
        left, right = line.split('\t', 1)
        pairs[left.split(':', 1)[-1].strip()] = right.strip()
    return pairs


def _line_list(step, body):
    items = []
    for line in body.splitlines():
        line = line.strip()
        if line:
            items.append(line.split('\t')[-1].strip().split(':', 1)[-1])
    return items


def _fan_out(call, **kwargs):
    for name, value in kwargs.items():
        if isinstance(value, dict):
            value = list(value.values())
        if isinstance(value, list):
            return True, [call(**dict(kwargs, **{name: item})) for item in value]
    return False, [call(**kwargs)]


def _combine(kind, fanned, results):
    if kind == 'pairs':
        merged = {}
        for part in results:
            merged.update(part)
        return merged
    if kind == 'lines':
        merged = []
        for part in results:
            for item in part:
                if item not in merged:
                    merged.append(item)
        return merged
    return results if fanned else results[0]


def _each(adapter, value):
    if isinstance(value, list):
        return [adapter(item) for item in value]
    return adapter(value)


def _load_input(names):
    path = CONFIG['input']
    if not os.path.exists(path):
        _log('missing-input', 'source', path)
        sys.exit(2)
    with open(path, encoding='utf-8') as handle:
        text = handle.read()
    if len(names) == 1:
        return {names[0]: text.strip()}
    try:
        values = json.loads(text)
    except ValueError:
        values = None
    if not isinstance(values, dict):
        _log('parse-error', 'source', 'input file is not a JSON object')
        sys.exit(5)
    return {name: values.get(name) for name in names}


def _write_output(values):
    path = CONFIG['output']
    os.makedirs(os.path.dirname(path) or '.', exist_ok=True)
    with open(path, 'w', encoding='utf-8') as handle:
        json.dump(values, handle, indent=2)
        handle.write('\n')
    print('Output written to %s' % path)
)PY";

std::string response_kind(ResponseAdapter a) {
  switch (a) {
    case ResponseAdapter::TabSeparatedPairs: return "pairs";
    case ResponseAdapter::LineList: return "lines";
    case ResponseAdapter::None: return "text";
  }
  return "text";
}

std::string service_body(const Step& step, const PivotFunction& f, const PivotScript& s,
                         const SynthesisContext& ctx) {
  const auto& ep = *step.endpoint;
  auto key_it = s.api_of_step.find(step.id);
  if (key_it == s.api_of_step.end()) return checkpoint_body(f, "the step has no service address");
  // Bind template placeholders to inputs: by name first, then by position.
  std::vector<std::string> bound(ep.params.size());
  std::set<std::size_t> used;
  for (std::size_t i = 0; i < ep.params.size(); ++i) {
    for (std::size_t j = 0; j < f.in_ports.size(); ++j) {
      if (!used.count(j) && py_ident(f.in_ports[j]) == py_ident(ep.params[i])) {
        bound[i] = f.params[j];
        used.insert(j);
        break;
      }
    }
  }
  for (std::size_t i = 0; i < ep.params.size(); ++i) {
    if (!bound[i].empty()) continue;
    for (std::size_t j = 0; j < f.in_ports.size(); ++j) {
      if (!used.count(j)) {
        bound[i] = f.params[j];
        used.insert(j);
        break;
      }
    }
    if (bound[i].empty()) return checkpoint_body(f, "no input supplies the " + ep.params[i] + " value");
  }
  std::vector<std::string> call_params, fill_args, fan_args;
  for (std::size_t i = 0; i < ep.params.size(); ++i) {
    auto local = py_ident(ep.params[i]);
    call_params.push_back(local);
    fill_args.push_back(local + "=" + local);
    fan_args.push_back(local + "=" + bound[i]);
  }
  auto adapter = ResponseAdapter::None;
  if (auto it = ctx.response_adapters.find(step.id); it != ctx.response_adapters.end()) adapter = it->second;
  const auto sid = py_str(step.id);
  std::vector<std::string> lines;
  lines.push_back("def call(" + join(call_params, ", ") + "):");
  lines.push_back("    url = CONFIG['apis'][" + py_str(key_it->second) + "] + _fill(" + py_str(ep.operation) +
                  (fill_args.empty() ? "" : ", " + join(fill_args, ", ")) + ")");
  lines.push_back("    body = _http_get(" + sid + ", url)");
  switch (adapter) {
    case ResponseAdapter::TabSeparatedPairs: lines.push_back("    return _tab_pairs(" + sid + ", body)"); break;
    case ResponseAdapter::LineList: lines.push_back("    return _line_list(" + sid + ", body)"); break;
    case ResponseAdapter::None: lines.push_back("    return body"); break;
  }
  lines.push_back("fanned, results = _fan_out(call" + (fan_args.empty() ? "" : ", " + join(fan_args, ", ")) + ")");
  std::string ret = "return {";
  for (std::size_t i = 0; i < f.out_ports.size(); ++i) {
    ret += (i ? ", " : "") + py_str(f.out_ports[i]) + ": " +
           (i == 0 ? "_combine(" + py_str(response_kind(adapter)) + ", fanned, results)" : std::string("None"));
  }
  lines.push_back(ret + "}");
  return join(lines, "\n");
}

std::string script_body(const Step& step, const PivotFunction& f) {
  if (!step.script_text) return checkpoint_body(f, "the step has no script to translate");
  auto t = transliterate_beanshell(*step.script_text, step.in_ports);
  if (!t.ok) return checkpoint_body(f, "could not translate the script: " + t.reason);
  for (const auto& l : t.lines) {
    if (l.find("://") != std::string::npos) return checkpoint_body(f, "the script builds a web address");
  }
  std::vector<std::string> lines;
  for (std::size_t i = 0; i < f.in_ports.size(); ++i) {
    if (py_ident(f.in_ports[i]) != f.params[i]) lines.push_back(py_ident(f.in_ports[i]) + " = " + f.params[i]);
  }
  lines.insert(lines.end(), t.lines.begin(), t.lines.end());
  std::string ret = "return {";
  for (std::size_t i = 0; i < f.out_ports.size(); ++i) {
    auto it = t.output_expr.find(f.out_ports[i]);
    if (it == t.output_expr.end()) return checkpoint_body(f, "the script never sets " + f.out_ports[i]);
    ret += (i ? ", " : "") + py_str(f.out_ports[i]) + ": " + it->second;
  }
  lines.push_back(ret + "}");
  return join(lines, "\n");
}

std::string strip_fences(std::string text) {
  auto first = text.find("```");
  if (first != std::string::npos) {
    auto line_end = text.find('\n', first);
    auto close = text.find("```", line_end == std::string::npos ? first + 3 : line_end);
    if (line_end != std::string::npos) {
      text = text.substr(line_end + 1, close == std::string::npos ? std::string::npos : close - line_end - 1);
    }
  }
  // Drop a leading def line and its indentation.
  auto lines = split_lines(text);
  while (!lines.empty() && lines.front().find_first_not_of(" \t") == std::string::npos) lines.erase(lines.begin());
  if (!lines.empty() && lines.front().rfind("def ", 0) == 0) lines.erase(lines.begin());
  std::size_t common = std::string::npos;
  for (const auto& l : lines) {
    auto p = l.find_first_not_of(' ');
    if (p != std::string::npos) common = std::min(common, p);
  }
  if (common == std::string::npos) common = 0;
  std::string out;
  for (const auto& l : lines) out += (l.size() >= common ? l.substr(common) : std::string()) + "\n";
  while (!out.empty() && (out.back() == '\n' || out.back() == ' ')) out.pop_back();
  return out;
}

std::string function_module(const PivotFunction& f, const std::string& body) {
  return f.signature() + "\n" + indent(body, 1) + "\n";
}

}  // namespace

// ---------------------------------------------------------------- script model

std::string PivotFunction::signature() const { return "def " + name + "(" + join(params, ", ") + "):"; }

const PivotFunction* PivotScript::function_for(const std::string& step_id) const {
  for (const auto& f : functions) {
    if (f.step_id == step_id) return &f;
  }
  return nullptr;
}

PivotFunction* PivotScript::function_for(const std::string& step_id) {
  for (auto& f : functions) {
    if (f.step_id == step_id) return &f;
  }
  return nullptr;
}

const PivotAdapter* PivotScript::adapter_for(const Edge& e) const {
  for (const auto& a : adapters) {
    if (a.from_step == e.from_step && a.from_port == e.from_port && a.to_step == e.to_step && a.to_port == e.to_port) {
      return &a;
    }
  }
  return nullptr;
}

std::string PivotScript::api_url(const std::string& key) const {
  for (const auto& [k, url] : apis) {
    if (k == key) return url;
  }
  return "";
}

bool needs_curator(const PivotFunction& f) {
  return f.body.find("_checkpoint(") != std::string::npos &&
         f.body.find(std::string(kCheckpointMarker)) != std::string::npos;
}

bool needs_curator(const PivotAdapter& a) {
  return a.body.find("_checkpoint(") != std::string::npos &&
         a.body.find(std::string(kCheckpointMarker)) != std::string::npos;
}

std::string indent(const std::string& text, int levels) {
  std::string pad(static_cast<std::size_t>(levels) * 4, ' ');
  std::string out;
  for (const auto& l : split_lines(text)) out += (l.empty() ? "" : pad + l) + "\n";
  if (!out.empty()) out.pop_back();
  return out;
}

std::string domain_tag(const WorkflowIR& ir) {
  std::string text = lower(ir.title);
  for (const auto& s : ir.steps) {
    text += " " + lower(s.id);
    if (s.endpoint) text += " " + lower(s.endpoint->host()) + " " + lower(s.endpoint->operation);
  }
  std::set<std::string> tokens;
  std::string cur;
  for (char c : text + " ") {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      cur.push_back(c);
    } else if (!cur.empty()) {
      tokens.insert(cur);
      cur.clear();
    }
  }
  auto any = [&](std::initializer_list<const char*> words, std::initializer_list<const char*> fragments) {
    for (const char* w : words) {
      if (tokens.count(w)) return true;
    }
    for (const char* f : fragments) {
      if (text.find(f) != std::string::npos) return true;
    }
    return false;
  };
  if (any({"pdb", "dna", "rna", "blat", "blast"},
          {"gene", "kegg", "uniprot", "protein", "pathway", "sequence", "rcsb", "ncbi", "disease", "genom"})) {
    return "bio";
  }
  if (any({"cas", "sdf", "smiles", "inchi"}, {"pubchem", "ugi", "chem", "molecul", "compound"})) return "chem";
  if (any({}, {"votable", "astro", "galax", "stellar", "telescope", "spectra"})) return "physics";
  if (any({}, {"crystal", "material", "alloy", "lattice"})) return "materials";
  return "generic";
}

PivotScript build_skeleton(const WorkflowIR& ir, const SynthesisContext& ctx) {
  validate_ir(ir);
  PivotScript s;
  s.title = ir.title.empty() ? "Untitled workflow" : ir.title;
  s.original_format = ctx.original_format;
  s.domain = domain_tag(ir);
  for (const auto& in : ir.inputs) s.workflow_inputs.push_back(in.name);
  s.workflow_outputs = ir.outputs;

  auto order = functional_order(ir);
  for (const auto& id : order) {
    const Step& st = *ir.find(id);
    if (st.kind == StepKind::ServiceCall && (!st.endpoint || st.endpoint->protocol != Protocol::Rest)) {
      throw Error(Errc::UnsubstitutedEndpoint, "step " + id + " still calls a SOAP service", {id});
    }
  }
  s.apis = assign_api_keys(ir, &s.api_of_step);

  int k = 0;
  for (const auto& id : order) {
    const Step& st = *ir.find(id);
    PivotFunction f;
    f.step_id = id;
    f.number = ++k;
    f.name = "step_" + std::to_string(k) + "_" + id;
    f.in_ports = st.in_ports;
    f.params = unique_params(st.in_ports);
    f.out_ports = st.out_ports;
    f.doc = st.summary.empty() ? default_summary(st) : st.summary;
    f.body = "raise NotImplementedError('body not populated')";
    s.functions.push_back(std::move(f));
  }
  int n = 0;
  for (const auto& e : ir.edges) {
    if (!e.adapter_script) continue;
    auto stages = parse_adapter_stages(*e.adapter_script);
    std::vector<std::string> shims;
    for (const auto& st : stages) shims.push_back(st.step_id);
    PivotAdapter a;
    a.name = "adapter_" + std::to_string(++n);
    a.from_step = e.from_step;
    a.from_port = e.from_port;
    a.to_step = e.to_step;
    a.to_port = e.to_port;
    a.doc = "Adapts " + e.from_step + "." + e.from_port + " for " + e.to_step + "." + e.to_port + " (" +
            join(shims, ", ") + ").";
    a.body = adapter_body(e, stages);
    s.adapters.push_back(std::move(a));
  }
  s.main_body = build_main(ir, s);
  return s;
}

std::string render_imports() {
  std::string out;
  for (const char* m : {"json", "math", "os", "re", "sys", "time", "urllib.error", "urllib.parse", "urllib.request"}) {
    out += std::string("import ") + m + "\n";
  }
  return out;
}

std::string render_runtime() { return std::string(kRuntime) + "\n\n" + beanshell_runtime(); }

std::string render_function(const PivotFunction& f) {
  std::string out = f.signature() + "\n";
  out += "    " + docstring(f.doc) + "\n";
  out += "    print(" + py_str(" Step " + std::to_string(f.number) + ": " + f.step_id) + ")\n";
  out += indent(f.body, 1) + "\n";
  return out;
}

std::string render_adapter(const PivotAdapter& a) {
  return "def " + a.name + "(_v):\n    " + docstring(a.doc) + "\n" + indent(a.body, 1) + "\n";
}

std::string render(const PivotScript& s) {
  std::string out = "#!/usr/bin/env python3\n\"\"\"\n";
  out += "Repaired Workflow: " + s.title + "\n";
  out += "Original: " + s.original_format + " -> Repaired Python Script\n";
  out += "Domain: " + s.domain + "\n\"\"\"\n\n";
  out += render_imports();
  out += "\nCONFIG = {\n";
  out += "    'input': " + py_str(s.input_path) + ",\n";
  out += "    'output': " + py_str(s.output_path) + ",\n";
  out += "    'apis': {";
  if (s.apis.empty()) {
    out += "},\n";
  } else {
    out += "\n";
    for (const auto& [k, url] : s.apis) out += "        " + py_str(k) + ": " + py_str(url) + ",\n";
    out += "    },\n";
  }
  out += "}\n\n\n";
  out += render_runtime();
  for (const auto& a : s.adapters) out += "\n\n" + render_adapter(a);
  for (const auto& f : s.functions) out += "\n\n" + render_function(f);
  out += "\n\ndef main():\n" + indent(s.main_body, 1) + "\n";
  out += "\n\nif __name__ == '__main__':\n    main()\n";
  return out;
}

// ---------------------------------------------------------------- prompts

std::string PromptRequest::text() const {
  std::string out = role_preamble + "\n\n## Workflow Step\n" + ir_excerpt + "\n\n## Service Replacement Rules\n";
  if (rules.empty()) out += "- none\n";
  for (const auto& r : rules) out += "- " + r + "\n";
  out +=
      "\n## Handle Branching with Simple Patterns\n"
      "- Keep conditionals flat: plain if/elif/else on the values at hand.\n"
      "- Do not nest loops or conditionals more than two levels deep.\n"
      "- When the intent of a branch is unclear, call _checkpoint(step, 'needs-curator: <question>') instead of "
      "guessing.\n";
  out += "\n## Expected Output\n" + expected_shape + "\n";
  return out;
}

PromptRequest render_prompt(const WorkflowIR& ir, const Step& step, const std::vector<SubstitutionRule>& rules,
                            const SynthesisContext& ctx) {
  PromptRequest req;
  req.role_preamble = kRolePreamble;

  auto order = functional_order(ir);
  auto pos = std::find(order.begin(), order.end(), step.id);
  int number = pos == order.end() ? 0 : static_cast<int>(pos - order.begin()) + 1;
  std::map<std::string, std::string> keys;
  assign_api_keys(ir, &keys);

  std::ostringstream ex;
  ex << "Workflow: " << ir.title << "\n";
  ex << "Step: " << step.id << " (" << to_string(step.kind) << ")\n";
  ex << "Summary: " << (step.summary.empty() ? default_summary(step) : step.summary) << "\n";
  ex << "Inputs: " << (step.in_ports.empty() ? "none" : join(step.in_ports, ", ")) << "\n";
  ex << "Outputs: " << (step.out_ports.empty() ? "none" : join(step.out_ports, ", ")) << "\n";
  if (step.endpoint) {
    ex << "Endpoint: " << to_string(step.endpoint->protocol) << " "
       << (step.endpoint->protocol == Protocol::Rest ? step.endpoint->url_template()
                                                      : step.endpoint->base_url + " operation " +
                                                            step.endpoint->operation)
       << "\n";
    auto it = ctx.response_adapters.find(step.id);
    ex << "Response format: " << to_string(it == ctx.response_adapters.end() ? ResponseAdapter::None : it->second)
       << "\n";
  }
  if (step.script_text) ex << "Original script:\n" << indent(*step.script_text, 1) << "\n";
  for (const auto* e : ir.edges_into(step.id)) {
    ex << "Input " << e->to_port << " comes from " << e->from_step << "." << e->from_port << "\n";
    if (e->adapter_script) ex << "Adapter on that edge:\n" << indent(*e->adapter_script, 1) << "\n";
  }
  for (const auto* e : ir.edges_out_of(step.id)) {
    ex << "Output " << e->from_port << " feeds " << e->to_step << "." << e->to_port << "\n";
    if (e->adapter_script) ex << "Adapter on that edge:\n" << indent(*e->adapter_script, 1) << "\n";
  }
  if (auto it = ctx.curator_notes.find(step.id); it != ctx.curator_notes.end()) {
    ex << "Curator note: " << it->second << "\n";
  }
  req.ir_excerpt = ex.str();
  if (!req.ir_excerpt.empty() && req.ir_excerpt.back() == '\n') req.ir_excerpt.pop_back();

  for (const auto& r : rules) {
    std::string m = (r.match.protocol ? to_string(*r.match.protocol) : std::string("any")) + " operations matching '" +
                    r.match.operation_pattern + "' on hosts matching '" + r.match.host_pattern + "'";
    std::string to = r.replacement ? r.replacement->url_template() : std::string("keep the original address");
    req.rules.push_back(m + " -> " + to + " (response: " + to_string(r.response_adapter) + ", " +
                        to_string(r.confidence) + ", " + to_string(r.provenance) + ")");
  }

  std::ostringstream shape;
  shape << "Write only the statements of this function body, without the def line:\n";
  shape << "def step_" << number << "_" << step.id << "(" << join(unique_params(step.in_ports), ", ") << "):\n";
  shape << "Helpers already defined: _http_get(step, url), _fill(template, **params), _tab_pairs(step, body), "
           "_line_list(step, body), _fan_out(call, **kwargs), _combine(kind, fanned, results), _checkpoint(step, "
           "reason).\n";
  if (auto it = keys.find(step.id); it != keys.end()) {
    shape << "Build web addresses from CONFIG['apis']['" << it->second << "']; never write a web address literally.\n";
  } else {
    shape << "Never write a web address literally.\n";
  }
  std::vector<std::string> outs;
  for (const auto& o : step.out_ports) outs.push_back(py_str(o));
  shape << "Return a dict with the keys: " << (outs.empty() ? std::string("(none)") : join(outs, ", ")) << ".";
  req.expected_shape = shape.str();
  return req;
}

// ---------------------------------------------------------------- bodies

std::string checkpoint_body(const PivotFunction& f, const std::string& reason) {
  return "_checkpoint(" + py_str(f.step_id) + ", " + py_str(std::string(kCheckpointMarker) + ": " + reason) + ")\n" +
         return_none(f.out_ports);
}

std::string deterministic_body(const WorkflowIR&, const Step& step, const PivotFunction& f, const PivotScript& s,
                               const SynthesisContext& ctx) {
  switch (step.kind) {
    case StepKind::ServiceCall:
      if (!step.endpoint) return checkpoint_body(f, "the step has no service address");
      return service_body(step, f, s, ctx);
    case StepKind::LocalCompute:
    case StepKind::Shim: return script_body(step, f);
    case StepKind::Opaque: return checkpoint_body(f, "the engine could not classify this step");
    case StepKind::Source:
    case StepKind::Sink: break;
  }
  return checkpoint_body(f, "not a functional step");
}

std::string DeterministicProvider::fill_body(const BodyRequest& r) {
  static const SynthesisContext kEmpty;
  return deterministic_body(*r.ir, *r.step, *r.function, *r.skeleton, r.context ? *r.context : kEmpty);
}

std::string DeterministicProvider::summarize(const Step& step) { return default_summary(step); }

RemoteProvider::RemoteProvider(std::string endpoint_url, int max_tokens, std::chrono::milliseconds timeout)
    : url_(std::move(endpoint_url)), max_tokens_(max_tokens), timeout_(timeout) {}

std::string RemoteProvider::complete(const std::string& prompt) {
  auto origin = url_origin(url_);
  auto path = url_path(url_);
  if (origin.empty()) throw Error(Errc::ProviderUnavailable, "provider address is not an absolute URL");
  if (path.empty()) path = "/";
  nlohmann::json req = {{"prompt", prompt}, {"max_tokens", max_tokens_}};
  std::string last_error;
  for (int attempt = 0; attempt < 3; ++attempt) {
    ++requests_;
    httplib::Client client(origin);
    client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout_));
    client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout_));
    auto res = client.Post(path, req.dump(), "application/json");
    if (!res) {
      last_error = httplib::to_string(res.error());
      continue;
    }
    if (res->status >= 500) {
      last_error = "status " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200) throw Error(Errc::ProviderUnavailable, "provider answered " + std::to_string(res->status));
    auto body = nlohmann::json::parse(res->body, nullptr, false);
    if (body.is_discarded() || !body.is_object() || !body.contains("text") || !body["text"].is_string()) {
      throw Error(Errc::ProviderUnavailable, "provider response lacks a text field");
    }
    return body["text"].get<std::string>();
  }
  throw Error(Errc::ProviderUnavailable, "provider unreachable: " + last_error);
}

std::string RemoteProvider::fill_body(const BodyRequest& r) { return strip_fences(complete(r.prompt.text())); }

std::string RemoteProvider::summarize(const Step& step) {
  std::string prompt = std::string(kRolePreamble) +
                       "\n\nDescribe in at most two plain sentences what this workflow step does.\n\nStep: " +
                       step.id + " (" + to_string(step.kind) + ")\n";
  if (step.endpoint) prompt += "Service: " + step.endpoint->host() + " " + step.endpoint->operation + "\n";
  if (step.script_text) prompt += "Script:\n" + *step.script_text + "\n";
  auto text = complete(prompt);
  // Keep at most two sentences.
  std::size_t end = 0;
  for (int n = 0; n < 2; ++n) {
    auto p = text.find_first_of(".!?", end);
    if (p == std::string::npos) {
      end = text.size();
      break;
    }
    end = p + 1;
  }
  auto out = text.substr(0, end);
  auto b = out.find_first_not_of(" \n\t");
  return b == std::string::npos ? default_summary(step) : out.substr(b);
}

std::optional<std::string> body_rejection(const PivotFunction& f, const std::string& body) {
  if (body.find_first_not_of(" \t\n") == std::string::npos) return "the body is empty";
  if (body.find("://") != std::string::npos) return "the body contains a literal web address";
  if (auto err = python_syntax_error(function_module(f, body))) return "syntax error: " + *err;
  return std::nullopt;
}

PivotScript populate_bodies(PivotScript s, const WorkflowIR& ir, SynthesisProvider& provider,
                            const SynthesisContext& ctx, const PopulateOptions& options) {
  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < s.functions.size(); ++i) {
    const auto& f = s.functions[i];
    bool wanted = options.only_steps.empty() ? !f.populated : options.only_steps.count(f.step_id) > 0;
    if (wanted) todo.push_back(i);
  }
  auto request_for = [&](std::size_t i) {
    const auto& f = s.functions[i];
    const Step* st = ir.find(f.step_id);
    if (!st) throw Error(Errc::SchemaViolation, "pivot function for unknown step " + f.step_id, {f.step_id});
    BodyRequest r;
    r.ir = &ir;
    r.step = st;
    r.function = &f;
    r.skeleton = &s;
    r.context = &ctx;
    auto it = options.attempts.find(f.step_id);
    r.attempt = it == options.attempts.end() ? 1 : it->second;
    return r;
  };

  std::vector<std::string> bodies(todo.size());
  std::vector<bool> from_curator(todo.size(), false);
  std::vector<std::size_t> ask;  // positions in todo that go to the provider
  for (std::size_t n = 0; n < todo.size(); ++n) {
    if (auto it = ctx.curator_bodies.find(s.functions[todo[n]].step_id); it != ctx.curator_bodies.end()) {
      bodies[n] = it->second;
      from_curator[n] = true;
    } else {
      ask.push_back(n);
    }
  }
  if (provider.deterministic()) {
    for (auto n : ask) {
      auto r = request_for(todo[n]);
      bodies[n] = provider.fill_body(r);
    }
  } else {
    std::vector<std::future<std::string>> pending;
    for (auto n : ask) {
      auto r = request_for(todo[n]);
      auto rules = ctx.rules.find(r.step->id);
      r.prompt = render_prompt(ir, *r.step, rules == ctx.rules.end() ? std::vector<SubstitutionRule>{} : rules->second,
                               ctx);
      pending.push_back(std::async(std::launch::async, [&provider, r] { return provider.fill_body(r); }));
    }
    std::exception_ptr failure;
    for (std::size_t k = 0; k < pending.size(); ++k) {
      try {
        bodies[ask[k]] = pending[k].get();
      } catch (...) {
        if (!failure) failure = std::current_exception();
      }
    }
    if (failure) std::rethrow_exception(failure);
  }

  // One interpreter run for the common all-valid case; per-body checks only
  // when something is off.
  std::string module;
  bool cheap_ok = true;
  for (std::size_t n = 0; n < todo.size(); ++n) {
    if (bodies[n].find_first_not_of(" \t\n") == std::string::npos || bodies[n].find("://") != std::string::npos) {
      cheap_ok = false;
    }
    module += function_module(s.functions[todo[n]], bodies[n]) + "\n";
  }
  bool all_ok = cheap_ok && !python_syntax_error(module);
  for (std::size_t n = 0; n < todo.size(); ++n) {
    auto& f = s.functions[todo[n]];
    std::optional<std::string> rejection;
    if (!all_ok) rejection = body_rejection(f, bodies[n]);
    if (rejection) {
      f.body = checkpoint_body(f, "the generated body was rejected (" + *rejection + ")");
      f.origin = "fallback";
    } else {
      f.body = bodies[n];
      f.origin = from_curator[n] ? "curator" : provider.name();
    }
    f.populated = true;
  }
  return s;
}

std::string summarize_step(const Step& step, SynthesisProvider& provider) { return provider.summarize(step); }

// ---------------------------------------------------------------- JSON

nlohmann::json to_json(const PivotScript& s) {
  nlohmann::json j;
  j["title"] = s.title;
  j["original_format"] = s.original_format;
  j["domain"] = s.domain;
  j["config"] = {{"input", s.input_path}, {"output", s.output_path}, {"apis", nlohmann::json::array()}};
  for (const auto& [k, url] : s.apis) j["config"]["apis"].push_back({{"key", k}, {"url", url}});
  j["api_of_step"] = s.api_of_step;
  j["workflow_inputs"] = s.workflow_inputs;
  j["workflow_outputs"] = s.workflow_outputs;
  j["functions"] = nlohmann::json::array();
  for (const auto& f : s.functions) {
    j["functions"].push_back({{"step_id", f.step_id},
                              {"number", f.number},
                              {"name", f.name},
                              {"in_ports", f.in_ports},
                              {"params", f.params},
                              {"out_ports", f.out_ports},
                              {"doc", f.doc},
                              {"body", f.body},
                              {"populated", f.populated},
                              {"origin", f.origin}});
  }
  j["adapters"] = nlohmann::json::array();
  for (const auto& a : s.adapters) {
    j["adapters"].push_back({{"name", a.name},
                             {"from_step", a.from_step},
                             {"from_port", a.from_port},
                             {"to_step", a.to_step},
                             {"to_port", a.to_port},
                             {"doc", a.doc},
                             {"body", a.body}});
  }
  j["main_body"] = s.main_body;
  return j;
}

PivotScript pivot_from_json(const nlohmann::json& j) {
  try {
    PivotScript s;
    s.title = j.at("title").get<std::string>();
    s.original_format = j.at("original_format").get<std::string>();
    s.domain = j.at("domain").get<std::string>();
    s.input_path = j.at("config").at("input").get<std::string>();
    s.output_path = j.at("config").at("output").get<std::string>();
    for (const auto& a : j.at("config").at("apis")) {
      s.apis.emplace_back(a.at("key").get<std::string>(), a.at("url").get<std::string>());
    }
    s.api_of_step = j.at("api_of_step").get<std::map<std::string, std::string>>();
    s.workflow_inputs = j.at("workflow_inputs").get<std::vector<std::string>>();
    s.workflow_outputs = j.at("workflow_outputs").get<std::vector<std::string>>();
    for (const auto& jf : j.at("functions")) {
      PivotFunction f;
      f.step_id = jf.at("step_id").get<std::string>();
      f.number = jf.at("number").get<int>();
      f.name = jf.at("name").get<std::string>();
      f.in_ports = jf.at("in_ports").get<std::vector<std::string>>();
      f.params = jf.at("params").get<std::vector<std::string>>();
      f.out_ports = jf.at("out_ports").get<std::vector<std::string>>();
      f.doc = jf.at("doc").get<std::string>();
      f.body = jf.at("body").get<std::string>();
      f.populated = jf.at("populated").get<bool>();
      f.origin = jf.at("origin").get<std::string>();
      s.functions.push_back(std::move(f));
    }
    for (const auto& ja : j.at("adapters")) {
      PivotAdapter a;
      a.name = ja.at("name").get<std::string>();
      a.from_step = ja.at("from_step").get<std::string>();
      a.from_port = ja.at("from_port").get<std::string>();
      a.to_step = ja.at("to_step").get<std::string>();
      a.to_port = ja.at("to_port").get<std::string>();
      a.doc = ja.at("doc").get<std::string>();
      a.body = ja.at("body").get<std::string>();
      s.adapters.push_back(std::move(a));
    }
    s.main_body = j.at("main_body").get<std::string>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::SchemaViolation, std::string("pivot script JSON: ") + e.what());
  }
}

}  // namespace wfr

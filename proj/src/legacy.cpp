#include "wfrevive/legacy.hpp"

#include <algorithm>
#include <functional>
#include <set>

#include "wfrevive/digest.hpp"
#include "wfrevive/errors.hpp"
#include "wfrevive/xml.hpp"

namespace wfr {

namespace {

using xml::Node;

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return "";
  auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

const Node* find_descendant(const Node& n, std::string_view local) {
  for (const auto& c : n.children) {
    if (c.local_name() == local) return &c;
    if (const Node* d = find_descendant(c, local)) return d;
  }
  return nullptr;
}

void for_each_descendant(const Node& n, const std::function<void(const Node&)>& fn) {
  for (const auto& c : n.children) {
    fn(c);
    for_each_descendant(c, fn);
  }
}

[[noreturn]] void schema_broken(const std::string& what, std::size_t line) {
  throw Error(Errc::MalformedXml, "workflow document is inconsistent at line " + std::to_string(line) + ": " + what,
              {std::to_string(line)});
}

// One dataflow level before nested processors are spliced in.
struct Level {
  std::vector<Processor> processors;
  std::vector<DataLink> links;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
};

// Replaces every link that touches the nested processor `name` by links into
// and out of the nested level's own processors.
void splice_nested(Level& parent, const std::string& name, const Level& nested) {
  std::map<std::string, std::vector<EndpointRef>> feeding;   // nested input -> parent sources
  std::map<std::string, std::vector<EndpointRef>> draining;  // nested output -> parent sinks
  std::vector<DataLink> kept;
  for (const auto& l : parent.links) {
    bool into = l.sink.kind == EndpointRef::Kind::ProcessorPort && l.sink.processor == name;
    bool out_of = l.source.kind == EndpointRef::Kind::ProcessorPort && l.source.processor == name;
    if (into) feeding[l.sink.port].push_back(l.source);
    if (out_of) draining[l.source.port].push_back(l.sink);
    if (into && out_of) schema_broken("nested workflow " + name + " is linked to itself", 0);
    if (!into && !out_of) kept.push_back(l);
  }
  for (const auto& s : nested.links) {
    std::vector<EndpointRef> sources = s.source.kind == EndpointRef::Kind::WorkflowInput
                                          ? feeding[s.source.port]
                                          : std::vector<EndpointRef>{s.source};
    std::vector<EndpointRef> sinks = s.sink.kind == EndpointRef::Kind::WorkflowOutput
                                         ? draining[s.sink.port]
                                         : std::vector<EndpointRef>{s.sink};
    for (const auto& src : sources) {
      for (const auto& snk : sinks) kept.push_back({src, snk});
    }
  }
  parent.links = std::move(kept);
  parent.processors.insert(parent.processors.end(), nested.processors.begin(), nested.processors.end());
}

struct PortDecl {
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  bool declared = true;  // false when ports are implied by links (SCUFL services)
};

void check_links(const Level& level, const std::map<std::string, PortDecl>& ports) {
  auto has = [](const std::vector<std::string>& v, const std::string& s) {
    return std::find(v.begin(), v.end(), s) != v.end();
  };
  auto check = [&](const EndpointRef& ref, bool as_source) {
    switch (ref.kind) {
      case EndpointRef::Kind::WorkflowInput:
        if (!has(level.inputs, ref.port)) {
          throw Error(Errc::DanglingLink, "datalink references undeclared workflow input '" + ref.port + "'",
                      {ref.port});
        }
        return;
      case EndpointRef::Kind::WorkflowOutput:
        if (!has(level.outputs, ref.port)) {
          throw Error(Errc::DanglingLink, "datalink references undeclared workflow output '" + ref.port + "'",
                      {ref.port});
        }
        return;
      case EndpointRef::Kind::ProcessorPort: {
        auto it = ports.find(ref.processor);
        if (it == ports.end()) {
          throw Error(Errc::DanglingLink, "datalink references missing processor '" + ref.processor + "'",
                      {ref.processor});
        }
        const auto& names = as_source ? it->second.outputs : it->second.inputs;
        if (it->second.declared && !has(names, ref.port)) {
          throw Error(Errc::DanglingLink,
                      "datalink references missing port '" + ref.port + "' on processor '" + ref.processor + "'",
                      {ref.processor, ref.port});
        }
        return;
      }
    }
  };
  for (const auto& l : level.links) {
    check(l.source, true);
    check(l.sink, false);
  }
}

void require_unique(const std::vector<Port>& ports, const std::string& owner, std::size_t line) {
  std::set<std::string> seen;
  for (const auto& p : ports) {
    if (!seen.insert(p.name).second) schema_broken("duplicate port '" + p.name + "' on " + owner, line);
  }
}

// ---------------------------------------------------------------- t2flow

class T2FlowReader {
 public:
  T2FlowReader(const xml::Document& doc, LegacyWorkflow& wf) : doc_(doc), wf_(wf) {
    for (const Node* df : doc.root.children_named("dataflow")) {
      if (auto id = df->attr("id")) by_id_[*id] = df;
    }
  }

  void read() {
    const Node* top = nullptr;
    for (const Node* df : doc_.root.children_named("dataflow")) {
      if (df->attr("role").value_or("") == "top") {
        top = df;
        break;
      }
    }
    if (!top) top = doc_.root.child("dataflow");
    wf_.title = top_title(*top);
    Level level = read_level(*top, "", true);
    wf_.processors = std::move(level.processors);
    wf_.datalinks = std::move(level.links);
    wf_.workflow_inputs = std::move(level.inputs);
    wf_.workflow_outputs = std::move(level.outputs);
  }

 private:
  std::string top_title(const Node& df) {
    std::string title;
    // Only the dataflow's own annotations count, not a processor's.
    if (const Node* ann = df.child("annotations")) {
      for_each_descendant(*ann, [&](const Node& n) {
        if (!title.empty() || n.local_name() != "annotationBean") return;
        if (ends_with(n.attr("class").value_or(""), "DescriptiveTitle")) title = trim(n.child_text("text"));
      });
    }
    if (title.empty()) title = trim(df.child_text("name"));
    return title;
  }

  static std::vector<Port> read_ports(const Node* list) {
    std::vector<Port> ports;
    if (!list) return ports;
    for (const Node* p : list->children_named("port")) {
      Port port;
      port.name = trim(p->child_text("name"));
      auto depth = trim(p->child_text("depth"));
      if (!depth.empty()) {
        try {
          port.depth = std::max(0, std::stoi(depth));
        } catch (const std::exception&) {
          schema_broken("port depth is not a number", p->line);
        }
      }
      ports.push_back(std::move(port));
    }
    return ports;
  }

  void record_port_annotations(const Node& port, const std::string& name) {
    for_each_descendant(port, [&](const Node& n) {
      if (n.local_name() != "annotationBean") return;
      auto cls = n.attr("class").value_or("");
      if (ends_with(cls, "ExampleValue")) wf_.raw_annotations["input." + name + ".example"] = trim(n.child_text("text"));
      if (ends_with(cls, "FreeTextDescription")) {
        wf_.raw_annotations["input." + name + ".description"] = trim(n.child_text("text"));
      }
    });
  }

  Level read_level(const Node& df, const std::string& prefix, bool top) {
    if (!visiting_.insert(&df).second) schema_broken("nested dataflow refers to itself", df.line);
    Level level;
    if (const Node* in = df.child("inputPorts")) {
      for (const Node* p : in->children_named("port")) {
        auto name = trim(p->child_text("name"));
        level.inputs.push_back(name);
        if (top) record_port_annotations(*p, name);
      }
    }
    if (const Node* out = df.child("outputPorts")) {
      for (const Node* p : out->children_named("port")) level.outputs.push_back(trim(p->child_text("name")));
    }
    if (top) {
      if (const Node* ann = df.child("annotations"); ann && !ann->children.empty()) {
        wf_.raw_annotations["dataflow.annotations"] = std::string(doc_.raw(*ann));
      }
    }

    std::map<std::string, PortDecl> ports;
    std::vector<std::pair<std::string, Level>> nested;
    if (const Node* procs = df.child("processors")) {
      for (const Node* pn : procs->children_named("processor")) {
        Processor proc;
        proc.name = prefix + trim(pn->child_text("name"));
        if (proc.name == prefix) schema_broken("processor without a name", pn->line);
        if (ports.count(proc.name)) schema_broken("duplicate processor name '" + proc.name + "'", pn->line);
        proc.input_ports = read_ports(pn->child("inputPorts"));
        proc.output_ports = read_ports(pn->child("outputPorts"));
        require_unique(proc.input_ports, proc.name, pn->line);
        require_unique(proc.output_ports, proc.name, pn->line);
        PortDecl decl;
        for (const auto& p : proc.input_ports) decl.inputs.push_back(p.name);
        for (const auto& p : proc.output_ports) decl.outputs.push_back(p.name);
        ports[proc.name] = decl;

        if (const Node* iter = pn->child("iterationStrategyStack"); iter && !iter->children.empty()) {
          wf_.raw_annotations["processor." + proc.name + ".iteration"] = std::string(doc_.raw(*iter));
        }

        const Node* activity = nullptr;
        if (const Node* acts = pn->child("activities")) activity = acts->child("activity");
        if (activity) {
          auto cls = trim(activity->child_text("class"));
          if (ends_with(cls, "DataflowActivity")) {
            const Node* ref = find_descendant(*activity, "dataflow");
            auto id = ref ? ref->attr("ref") : std::nullopt;
            auto it = id ? by_id_.find(*id) : by_id_.end();
            if (it == by_id_.end()) schema_broken("nested dataflow reference cannot be resolved", activity->line);
            nested.emplace_back(proc.name, read_level(*it->second, proc.name + ".", false));
            continue;
          }
          classify(*activity, cls, proc);
        } else {
          proc.activity_kind = ActivityKind::Opaque;
          wf_.raw_annotations["opaque." + proc.name] = std::string(doc_.raw(*pn));
        }
        level.processors.push_back(std::move(proc));
      }
    }

    if (const Node* links = df.child("datalinks")) {
      for (const Node* ln : links->children_named("datalink")) {
        level.links.push_back({read_ref(ln->child("source"), prefix, true, ln->line),
                               read_ref(ln->child("sink"), prefix, false, ln->line)});
      }
    }
    resolve_merges(level);
    check_links(level, ports);
    for (auto& [name, sub] : nested) splice_nested(level, name, sub);
    visiting_.erase(&df);
    return level;
  }

  // Merge nodes fan several sources into one sink port; they are represented
  // here as direct links from every merged source.
  void resolve_merges(Level& level) {
    std::map<std::string, std::vector<EndpointRef>> merge_inputs;
    std::vector<DataLink> plain;
    std::vector<std::pair<std::string, EndpointRef>> merge_outputs;
    for (auto& l : level.links) {
      if (l.sink.processor.rfind("\x01merge:", 0) == 0) {
        merge_inputs[l.sink.processor.substr(7)].push_back(l.source);
      } else if (l.source.processor.rfind("\x01merge:", 0) == 0) {
        merge_outputs.emplace_back(l.source.processor.substr(7), l.sink);
      } else {
        plain.push_back(l);
      }
    }
    for (const auto& [merge, sink] : merge_outputs) {
      for (const auto& src : merge_inputs[merge]) plain.push_back({src, sink});
    }
    level.links = std::move(plain);
  }

  EndpointRef read_ref(const Node* end, const std::string& prefix, bool is_source, std::size_t line) {
    if (!end) schema_broken(std::string("datalink without ") + (is_source ? "source" : "sink"), line);
    auto type = end->attr("type").value_or("processor");
    auto port = trim(end->child_text("port"));
    if (type == "dataflow") return is_source ? EndpointRef::input(port) : EndpointRef::output(port);
    if (type == "merge") {
      auto merge_name = trim(end->child_text("processor"));
      if (merge_name.empty()) merge_name = port;
      return EndpointRef::at("\x01merge:" + merge_name, port);
    }
    auto proc = trim(end->child_text("processor"));
    if (proc.empty()) schema_broken("datalink end without processor", end->line);
    return EndpointRef::at(prefix + proc, port);
  }

  void classify(const Node& activity, const std::string& cls, Processor& proc) {
    auto bean_text = [&](std::string_view field) -> std::string {
      const Node* bean = activity.child("configBean");
      const Node* n = bean ? find_descendant(*bean, field) : nullptr;
      return n ? n->text : std::string();
    };
    if (ends_with(cls, "WSDLActivity")) {
      auto wsdl = trim(bean_text("wsdl"));
      auto op = trim(bean_text("operation"));
      if (is_absolute_url(wsdl) && !op.empty()) {
        ServiceEndpoint e;
        e.protocol = Protocol::Soap;
        e.base_url = wsdl;
        e.operation = op;
        for (const auto& p : proc.input_ports) e.params.push_back(p.name);
        proc.activity_kind = ActivityKind::SoapCall;
        proc.endpoint = std::move(e);
        return;
      }
    } else if (ends_with(cls, "RESTActivity")) {
      auto url = trim(bean_text("urlSignature"));
      if (is_absolute_url(url)) {
        proc.activity_kind = ActivityKind::RestCall;
        proc.endpoint = rest_endpoint_from_template(url);
        return;
      }
    } else if (ends_with(cls, "BeanshellActivity") || ends_with(cls, "LocalworkerActivity") ||
               ends_with(cls, "RshellActivity")) {
      proc.activity_kind = ActivityKind::LocalScript;
      proc.script_text = bean_text("script");
      return;
    } else if (ends_with(cls, "StringConstantActivity")) {
      proc.activity_kind = ActivityKind::StringConstant;
      proc.script_text = bean_text("value");
      return;
    }
    proc.activity_kind = ActivityKind::Opaque;
    wf_.raw_annotations["opaque." + proc.name] = std::string(doc_.raw(activity));
  }

  const xml::Document& doc_;
  LegacyWorkflow& wf_;
  std::map<std::string, const Node*> by_id_;
  std::set<const Node*> visiting_;
};

// ---------------------------------------------------------------- SCUFL

class ScuflReader {
 public:
  ScuflReader(const xml::Document& doc, LegacyWorkflow& wf) : doc_(doc), wf_(wf) {}

  void read() {
    if (const Node* d = doc_.root.child("workflowdescription")) wf_.title = trim(d->attr("title").value_or(""));
    Level level = read_level(doc_.root, "", true);
    wf_.processors = std::move(level.processors);
    wf_.datalinks = std::move(level.links);
    wf_.workflow_inputs = std::move(level.inputs);
    wf_.workflow_outputs = std::move(level.outputs);
  }

 private:
  static int list_depth(const std::string& syntactic_type) {
    int depth = 0;
    for (std::size_t pos = 0; (pos = syntactic_type.find("l(", pos)) != std::string::npos; pos += 2) ++depth;
    return depth;
  }

  static EndpointRef split_ref(const std::string& text, const std::string& prefix, bool is_source) {
    auto colon = text.find(':');
    if (colon == std::string::npos) {
      return is_source ? EndpointRef::input(text) : EndpointRef::output(text);
    }
    return EndpointRef::at(prefix + text.substr(0, colon), text.substr(colon + 1));
  }

  Level read_level(const Node& scufl, const std::string& prefix, bool top) {
    Level level;
    for (const Node* s : scufl.children_named("source")) {
      auto name = trim(s->attr("name").value_or(""));
      level.inputs.push_back(name);
      if (top) {
        if (const Node* md = s->child("metadata")) {
          auto desc = trim(md->child_text("description"));
          if (!desc.empty()) wf_.raw_annotations["input." + name + ".description"] = desc;
        }
      }
    }
    for (const Node* s : scufl.children_named("sink")) level.outputs.push_back(trim(s->attr("name").value_or("")));

    std::map<std::string, PortDecl> ports;
    std::vector<std::pair<std::string, Level>> nested;
    std::vector<DataLink> links;
    for (const Node* ln : scufl.children_named("link")) {
      auto src = ln->attr("source");
      auto snk = ln->attr("sink");
      if (!src || !snk) schema_broken("link without source or sink", ln->line);
      links.push_back({split_ref(trim(*src), prefix, true), split_ref(trim(*snk), prefix, false)});
    }

    for (const Node* pn : scufl.children_named("processor")) {
      Processor proc;
      proc.name = prefix + trim(pn->attr("name").value_or(""));
      if (proc.name == prefix) schema_broken("processor without a name", pn->line);
      if (ports.count(proc.name)) schema_broken("duplicate processor name '" + proc.name + "'", pn->line);
      if (const Node* iter = pn->child("iterationstrategy")) {
        wf_.raw_annotations["processor." + proc.name + ".iteration"] = std::string(doc_.raw(*iter));
      }
      const Node* activity = nullptr;
      for (const auto& c : pn->children) {
        auto ln = c.local_name();
        if (ln == "description" || ln == "iterationstrategy" || ln == "mergemode" || ln == "defaults" ||
            ln == "alternate" || ln == "annotations") {
          continue;
        }
        activity = &c;
        break;
      }
      PortDecl decl;
      decl.declared = false;
      if (activity && activity->local_name() == "workflow") {
        const Node* inner = activity->child("scufl");
        if (!inner) schema_broken("nested workflow without a scufl body", activity->line);
        Level sub = read_level(*inner, proc.name + ".", false);
        decl.inputs = sub.inputs;
        decl.outputs = sub.outputs;
        decl.declared = true;
        ports[proc.name] = decl;
        nested.emplace_back(proc.name, std::move(sub));
        continue;
      }
      classify(activity, pn, proc, decl);
      if (!decl.declared) {
        // Ports of service processors are implied by the links that use them.
        for (const auto& l : links) {
          if (l.sink.kind == EndpointRef::Kind::ProcessorPort && l.sink.processor == proc.name &&
              std::none_of(proc.input_ports.begin(), proc.input_ports.end(),
                           [&](const Port& p) { return p.name == l.sink.port; })) {
            proc.input_ports.push_back({l.sink.port, 0});
          }
          if (l.source.kind == EndpointRef::Kind::ProcessorPort && l.source.processor == proc.name &&
              std::none_of(proc.output_ports.begin(), proc.output_ports.end(),
                           [&](const Port& p) { return p.name == l.source.port; })) {
            proc.output_ports.push_back({l.source.port, 0});
          }
        }
        if (proc.endpoint && proc.endpoint->protocol == Protocol::Soap) {
          for (const auto& p : proc.input_ports) proc.endpoint->params.push_back(p.name);
        }
      }
      require_unique(proc.input_ports, proc.name, pn->line);
      require_unique(proc.output_ports, proc.name, pn->line);
      for (const auto& p : proc.input_ports) decl.inputs.push_back(p.name);
      for (const auto& p : proc.output_ports) decl.outputs.push_back(p.name);
      ports[proc.name] = decl;
      level.processors.push_back(std::move(proc));
    }
    level.links = std::move(links);
    check_links(level, ports);
    for (auto& [name, sub] : nested) splice_nested(level, name, sub);
    return level;
  }

  void classify(const Node* activity, const Node* processor, Processor& proc, PortDecl& decl) {
    auto kind = activity ? std::string(activity->local_name()) : std::string();
    if (kind == "arbitrarywsdl") {
      auto wsdl = trim(activity->child_text("wsdl"));
      auto op = trim(activity->child_text("operation"));
      if (is_absolute_url(wsdl) && !op.empty()) {
        proc.activity_kind = ActivityKind::SoapCall;
        proc.endpoint = ServiceEndpoint{Protocol::Soap, wsdl, op, {}};
        return;
      }
    } else if (kind == "soaplabwsdl") {
      auto url = trim(activity->text);
      if (is_absolute_url(url)) {
        proc.activity_kind = ActivityKind::SoapCall;
        proc.endpoint = ServiceEndpoint{Protocol::Soap, url, "runAndWaitFor", {}};
        return;
      }
    } else if (kind == "beanshell") {
      proc.activity_kind = ActivityKind::LocalScript;
      proc.script_text = activity->child_text("scriptvalue");
      if (const Node* ins = activity->child("beanshellinputlist")) {
        for (const Node* i : ins->children_named("beanshellinput")) {
          proc.input_ports.push_back({trim(i->text), list_depth(i->attr("syntactictype").value_or(""))});
        }
      }
      if (const Node* outs = activity->child("beanshelloutputlist")) {
        for (const Node* o : outs->children_named("beanshelloutput")) {
          proc.output_ports.push_back({trim(o->text), list_depth(o->attr("syntactictype").value_or(""))});
        }
      }
      decl.declared = true;
      return;
    } else if (kind == "stringconstant") {
      proc.activity_kind = ActivityKind::StringConstant;
      proc.script_text = activity->text;
      proc.output_ports.push_back({"value", 0});
      decl.declared = true;
      return;
    } else if (kind == "rserv" || kind == "rshell") {
      proc.activity_kind = ActivityKind::LocalScript;
      proc.script_text = activity->child_text("script");
      return;
    }
    proc.activity_kind = ActivityKind::Opaque;
    wf_.raw_annotations["opaque." + proc.name] = std::string(doc_.raw(activity ? *activity : *processor));
  }

  const xml::Document& doc_;
  LegacyWorkflow& wf_;
};

LegacyFormat format_of(const Node& root) {
  if (root.local_name() == "workflow" && root.child("dataflow")) return LegacyFormat::T2Flow;
  if (root.local_name() == "scufl") return LegacyFormat::Scufl;
  return LegacyFormat::Unknown;
}

}  // namespace

const Processor* LegacyWorkflow::find_processor(std::string_view name) const {
  for (const auto& p : processors) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

LegacyFormat detect_format(std::string_view bytes) {
  try {
    return format_of(xml::parse(bytes).root);
  } catch (const Error&) {
    return LegacyFormat::Unknown;
  }
}

LegacyWorkflow parse_legacy(std::string_view bytes) {
  xml::Document doc = xml::parse(bytes);
  LegacyWorkflow wf;
  wf.format = format_of(doc.root);
  wf.source_digest = sha256_hex(bytes);
  switch (wf.format) {
    case LegacyFormat::T2Flow:
      T2FlowReader(doc, wf).read();
      break;
    case LegacyFormat::Scufl:
      ScuflReader(doc, wf).read();
      break;
    case LegacyFormat::Unknown:
      throw Error(Errc::UnsupportedFormat,
                  "root element <" + std::string(doc.root.local_name()) + "> is neither a t2flow nor a SCUFL workflow",
                  {std::string(doc.root.local_name())});
  }
  return wf;
}

std::vector<LintFinding> lint_legacy(const LegacyWorkflow& wf) {
  std::vector<LintFinding> findings;
  for (const auto& p : wf.processors) {
    if (p.activity_kind == ActivityKind::Opaque) {
      findings.push_back({LintFinding::Severity::Warning,
                          "processor '" + p.name + "' uses an activity the engine does not recognize", p.name});
    }
    bool has_outgoing = std::any_of(wf.datalinks.begin(), wf.datalinks.end(), [&](const DataLink& l) {
      return l.source.kind == EndpointRef::Kind::ProcessorPort && l.source.processor == p.name;
    });
    if (!has_outgoing) {
      findings.push_back({LintFinding::Severity::Warning,
                          "unreachable processor '" + p.name + "': none of its outputs is used", p.name});
    }
  }
  if (wf.workflow_outputs.empty()) {
    findings.push_back({LintFinding::Severity::Warning, "workflow declares no outputs", "workflow"});
  }
  return findings;
}

std::string to_string(LegacyFormat f) {
  switch (f) {
    case LegacyFormat::T2Flow: return "T2Flow";
    case LegacyFormat::Scufl: return "Scufl";
    case LegacyFormat::Unknown: return "Unknown";
  }
  return "Unknown";
}

std::string to_string(ActivityKind k) {
  switch (k) {
    case ActivityKind::SoapCall: return "SoapCall";
    case ActivityKind::RestCall: return "RestCall";
    case ActivityKind::LocalScript: return "LocalScript";
    case ActivityKind::StringConstant: return "StringConstant";
    case ActivityKind::Opaque: return "Opaque";
  }
  return "Opaque";
}

LegacyFormat legacy_format_from_string(const std::string& s) {
  if (s == "T2Flow") return LegacyFormat::T2Flow;
  if (s == "Scufl") return LegacyFormat::Scufl;
  return LegacyFormat::Unknown;
}

ActivityKind activity_kind_from_string(const std::string& s) {
  for (auto k : {ActivityKind::SoapCall, ActivityKind::RestCall, ActivityKind::LocalScript,
                 ActivityKind::StringConstant, ActivityKind::Opaque}) {
    if (to_string(k) == s) return k;
  }
  throw Error(Errc::SchemaViolation, "unknown activity kind " + s, {"activity_kind"});
}

namespace {

nlohmann::json ref_json(const EndpointRef& r) {
  switch (r.kind) {
    case EndpointRef::Kind::WorkflowInput: return {{"kind", "WorkflowInput"}, {"port", r.port}};
    case EndpointRef::Kind::WorkflowOutput: return {{"kind", "WorkflowOutput"}, {"port", r.port}};
    case EndpointRef::Kind::ProcessorPort:
      return {{"kind", "ProcessorPort"}, {"processor", r.processor}, {"port", r.port}};
  }
  return {};
}

EndpointRef ref_from_json(const nlohmann::json& j) {
  auto kind = j.at("kind").get<std::string>();
  if (kind == "WorkflowInput") return EndpointRef::input(j.at("port").get<std::string>());
  if (kind == "WorkflowOutput") return EndpointRef::output(j.at("port").get<std::string>());
  return EndpointRef::at(j.at("processor").get<std::string>(), j.at("port").get<std::string>());
}

nlohmann::json ports_json(const std::vector<Port>& ports) {
  auto arr = nlohmann::json::array();
  for (const auto& p : ports) arr.push_back({{"name", p.name}, {"depth", p.depth}});
  return arr;
}

std::vector<Port> ports_from_json(const nlohmann::json& j) {
  std::vector<Port> out;
  for (const auto& p : j) out.push_back({p.at("name").get<std::string>(), p.at("depth").get<int>()});
  return out;
}

}  // namespace

nlohmann::json to_json(const LegacyWorkflow& wf) {
  nlohmann::json procs = nlohmann::json::array();
  for (const auto& p : wf.processors) {
    nlohmann::json jp{{"name", p.name},
                      {"activity_kind", to_string(p.activity_kind)},
                      {"input_ports", ports_json(p.input_ports)},
                      {"output_ports", ports_json(p.output_ports)}};
    if (p.endpoint) jp["endpoint"] = *p.endpoint;
    if (p.script_text) jp["script_text"] = *p.script_text;
    procs.push_back(std::move(jp));
  }
  nlohmann::json links = nlohmann::json::array();
  for (const auto& l : wf.datalinks) links.push_back({{"source", ref_json(l.source)}, {"sink", ref_json(l.sink)}});
  return {{"format", to_string(wf.format)},
          {"title", wf.title},
          {"source_digest", wf.source_digest},
          {"processors", procs},
          {"datalinks", links},
          {"workflow_inputs", wf.workflow_inputs},
          {"workflow_outputs", wf.workflow_outputs},
          {"raw_annotations", wf.raw_annotations}};
}

LegacyWorkflow legacy_from_json(const nlohmann::json& j) {
  LegacyWorkflow wf;
  wf.format = legacy_format_from_string(j.at("format").get<std::string>());
  wf.title = j.at("title").get<std::string>();
  wf.source_digest = j.at("source_digest").get<std::string>();
  for (const auto& jp : j.at("processors")) {
    Processor p;
    p.name = jp.at("name").get<std::string>();
    p.activity_kind = activity_kind_from_string(jp.at("activity_kind").get<std::string>());
    if (jp.contains("endpoint")) p.endpoint = jp.at("endpoint").get<ServiceEndpoint>();
    if (jp.contains("script_text")) p.script_text = jp.at("script_text").get<std::string>();
    p.input_ports = ports_from_json(jp.at("input_ports"));
    p.output_ports = ports_from_json(jp.at("output_ports"));
    wf.processors.push_back(std::move(p));
  }
  for (const auto& jl : j.at("datalinks")) wf.datalinks.push_back({ref_from_json(jl.at("source")), ref_from_json(jl.at("sink"))});
  wf.workflow_inputs = j.at("workflow_inputs").get<std::vector<std::string>>();
  wf.workflow_outputs = j.at("workflow_outputs").get<std::vector<std::string>>();
  wf.raw_annotations = j.at("raw_annotations").get<std::map<std::string, std::string>>();
  return wf;
}

std::string legacy_to_canonical_json(const LegacyWorkflow& wf) { return to_json(wf).dump(2); }

}  // namespace wfr

#include "wfrevive/endpoint.hpp"

#include <algorithm>
#include <cctype>

#include "wfrevive/errors.hpp"

namespace wfr {

namespace {

std::size_t authority_start(const std::string& url) {
  auto scheme_end = url.find("://");
  return scheme_end == std::string::npos ? std::string::npos : scheme_end + 3;
}

}  // namespace

bool is_absolute_url(const std::string& url) {
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos || scheme_end == 0) return false;
  for (std::size_t i = 0; i < scheme_end; ++i) {
    char c = url[i];
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '+' || c == '-' || c == '.')) return false;
  }
  return url.size() > scheme_end + 3 && url[scheme_end + 3] != '/';
}

std::string url_origin(const std::string& url) {
  auto start = authority_start(url);
  if (start == std::string::npos) return "";
  auto path = url.find_first_of("/?#", start);
  return url.substr(0, path);
}

std::string url_host(const std::string& url) {
  auto start = authority_start(url);
  if (start == std::string::npos) return "";
  auto stop = url.find_first_of("/?#", start);
  std::string authority = url.substr(start, stop == std::string::npos ? std::string::npos : stop - start);
  if (auto at = authority.rfind('@'); at != std::string::npos) authority = authority.substr(at + 1);
  if (auto colon = authority.find(':'); colon != std::string::npos) authority = authority.substr(0, colon);
  std::transform(authority.begin(), authority.end(), authority.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return authority;
}

std::string url_path(const std::string& url) {
  auto start = authority_start(url);
  if (start == std::string::npos) return "";
  auto path = url.find_first_of("/?#", start);
  return path == std::string::npos ? std::string() : url.substr(path);
}

std::vector<std::string> template_params(const std::string& operation) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while ((pos = operation.find('{', pos)) != std::string::npos) {
    auto close = operation.find('}', pos);
    if (close == std::string::npos) break;
    auto name = operation.substr(pos + 1, close - pos - 1);
    if (!name.empty() && std::find(out.begin(), out.end(), name) == out.end()) out.push_back(name);
    pos = close + 1;
  }
  return out;
}

ServiceEndpoint rest_endpoint_from_template(const std::string& url_template) {
  if (!is_absolute_url(url_template)) {
    throw Error(Errc::InvalidArgument, "not an absolute URL: " + url_template, {url_template});
  }
  ServiceEndpoint e;
  e.protocol = Protocol::Rest;
  e.base_url = url_origin(url_template);
  e.operation = url_path(url_template);
  if (e.operation.empty() || e.operation[0] != '/') e.operation = "/" + e.operation;
  e.params = template_params(e.operation);
  return e;
}

std::string ServiceEndpoint::host() const { return url_host(base_url); }

std::string ServiceEndpoint::url_template() const {
  if (protocol == Protocol::Soap) return base_url + "#" + operation;
  return base_url + operation;
}

std::string service_label(const std::string& host) {
  static const std::vector<std::string> kGeneric = {"www", "rest", "api", "apis", "soap", "ws", "wsdl", "files",
                                                    "data", "service", "services", "web", "webservices", "ftp"};
  std::vector<std::string> labels;
  std::size_t start = 0;
  while (start <= host.size()) {
    auto dot = host.find('.', start);
    if (dot == std::string::npos) dot = host.size();
    if (dot > start) labels.push_back(host.substr(start, dot - start));
    start = dot + 1;
  }
  if (labels.size() > 1) labels.pop_back();  // top-level domain
  for (const auto& l : labels) {
    if (std::find(kGeneric.begin(), kGeneric.end(), l) == kGeneric.end()) {
      std::string out;
      for (char c : l) out.push_back(std::isalnum(static_cast<unsigned char>(c)) ? c : '_');
      if (!out.empty() && std::isdigit(static_cast<unsigned char>(out[0]))) out = "svc_" + out;
      return out;
    }
  }
  return labels.empty() ? "service" : labels.front();
}

std::string service_display_name(const std::string& host) {
  auto label = service_label(host);
  if (label.size() <= 5) {
    std::transform(label.begin(), label.end(), label.begin(),
                   [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  } else if (!label.empty()) {
    label[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(label[0])));
  }
  return label;
}

std::string to_string(Protocol p) { return p == Protocol::Soap ? "Soap" : "Rest"; }

Protocol protocol_from_string(const std::string& s) {
  if (s == "Soap") return Protocol::Soap;
  if (s == "Rest") return Protocol::Rest;
  throw Error(Errc::SchemaViolation, "unknown protocol " + s, {"protocol"});
}

void to_json(nlohmann::json& j, const ServiceEndpoint& e) {
  j = nlohmann::json{{"protocol", to_string(e.protocol)},
                     {"base_url", e.base_url},
                     {"operation", e.operation},
                     {"params", e.params}};
}

void from_json(const nlohmann::json& j, ServiceEndpoint& e) {
  e.protocol = protocol_from_string(j.at("protocol").get<std::string>());
  e.base_url = j.at("base_url").get<std::string>();
  e.operation = j.at("operation").get<std::string>();
  e.params = j.at("params").get<std::vector<std::string>>();
}

}  // namespace wfr

#pragma once

#include <nlohmann/json.hpp>

#include <string>
#include <vector>

namespace wfr {

enum class Protocol { Soap, Rest };

// A remote service operation. For SOAP, `base_url` is the WSDL location and
// `operation` the operation name. For REST, `operation` is a path template
// such as "/conv/genes/{source_id}" and `params` lists its placeholders.
struct ServiceEndpoint {
  Protocol protocol = Protocol::Rest;
  std::string base_url;
  std::string operation;
  std::vector<std::string> params;

  std::string host() const;
  std::string url_template() const;  // base_url + operation for REST

  bool operator==(const ServiceEndpoint&) const = default;
};

/// Splits an absolute REST URL template into base + operation and collects
/// its `{param}` placeholders.
ServiceEndpoint rest_endpoint_from_template(const std::string& url_template);

std::vector<std::string> template_params(const std::string& operation);

bool is_absolute_url(const std::string& url);

// Lowercased host of an absolute URL ("" when not absolute).
std::string url_host(const std::string& url);

// Scheme + authority of an absolute URL, e.g. "https://rest.kegg.jp".
std::string url_origin(const std::string& url);

// Path + query of an absolute URL ("" when there is none).
std::string url_path(const std::string& url);

// Short identifier for the organisation behind a host, e.g. "rest.kegg.jp"
// -> "kegg", "pubchem.ncbi.nlm.nih.gov" -> "pubchem".
std::string service_label(const std::string& host);

// Human-facing form of service_label: short labels upper-cased ("KEGG").
std::string service_display_name(const std::string& host);

std::string to_string(Protocol p);
Protocol protocol_from_string(const std::string& s);

void to_json(nlohmann::json& j, const ServiceEndpoint& e);
void from_json(const nlohmann::json& j, ServiceEndpoint& e);

}  // namespace wfr

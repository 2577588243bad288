#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <sstream>

#include <httplib.h>

#include "floodgen/image_io.hpp"
#include "floodgen/service.hpp"

namespace floodgen {

namespace {

std::string trim(const std::string& s) {
  auto b = std::find_if_not(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
  auto e = std::find_if_not(s.rbegin(), s.rend(), [](unsigned char c) { return std::isspace(c); }).base();
  return b < e ? std::string(b, e) : std::string();
}

std::string format_angle(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

}  // namespace

std::string to_string(ApiErrorCode code) {
  switch (code) {
    case ApiErrorCode::BadRequest: return "bad_request";
    case ApiErrorCode::NoImagery: return "no_imagery";
    case ApiErrorCode::UpstreamUnavailable: return "upstream_unavailable";
    case ApiErrorCode::ModelError: return "model_error";
    case ApiErrorCode::Unavailable: return "unavailable";
  }
  return "model_error";
}

int http_status(ApiErrorCode code) {
  switch (code) {
    case ApiErrorCode::BadRequest: return 400;
    case ApiErrorCode::NoImagery: return 404;
    case ApiErrorCode::UpstreamUnavailable: return 502;
    case ApiErrorCode::ModelError: return 500;
    case ApiErrorCode::Unavailable: return 503;
  }
  return 500;
}

nlohmann::json ApiError::to_json() const {
  return {{"error", {{"code", to_string(code_)}, {"message", message_}, {"retryable", retryable_}}}};
}

void AddressQuery::validate() const {
  if (trim(address).empty()) throw ApiError(ApiErrorCode::BadRequest, "address is empty");
  if (heading_deg && !(*heading_deg >= 0.0 && *heading_deg < 360.0)) {
    throw ApiError(ApiErrorCode::BadRequest, "heading_deg must lie in [0, 360)");
  }
  if (fov_deg && !(*fov_deg > 0.0 && *fov_deg <= 120.0)) {
    throw ApiError(ApiErrorCode::BadRequest, "fov_deg must lie in (0, 120]");
  }
}

AddressQuery AddressQuery::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ApiError(ApiErrorCode::BadRequest, "expected a JSON object");
  AddressQuery q;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "address") q.address = value.get<std::string>();
      else if (key == "heading_deg") q.heading_deg = value.get<double>();
      else if (key == "fov_deg") q.fov_deg = value.get<double>();
      else throw ApiError(ApiErrorCode::BadRequest, "unknown field '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ApiError(ApiErrorCode::BadRequest, std::string("bad address query: ") + e.what());
  }
  if (!j.contains("address")) throw ApiError(ApiErrorCode::BadRequest, "address is required");
  q.validate();
  return q;
}

std::string AddressQuery::cache_key() const {
  std::string key = trim(address);
  std::transform(key.begin(), key.end(), key.begin(), [](unsigned char c) { return std::tolower(c); });
  key += '|' + (heading_deg ? format_angle(*heading_deg) : std::string("-"));
  key += '|' + (fov_deg ? format_angle(*fov_deg) : std::string("-"));
  return key;
}

// ---------------------------------------------------------------------------
// stub

void StubStreetViewClient::add_image(const std::string& address, Image image) {
  std::lock_guard lock(mutex_);
  images_.insert_or_assign(address, std::move(image));
}

void StubStreetViewClient::add_error(const std::string& address, ApiError error) {
  std::lock_guard lock(mutex_);
  errors_.insert_or_assign(address, std::move(error));
}

Image StubStreetViewClient::fetch(const AddressQuery& query) {
  ++calls_;
  std::lock_guard lock(mutex_);
  if (auto e = errors_.find(query.address); e != errors_.end()) throw e->second;
  if (auto i = images_.find(query.address); i != images_.end()) return i->second;
  throw ApiError(ApiErrorCode::NoImagery, "no street imagery for '" + query.address + "'");
}

// ---------------------------------------------------------------------------
// live

LiveStreetViewClient::LiveStreetViewClient(LiveStreetViewConfig config) : config_(std::move(config)) {
  if (config_.api_key.empty()) throw MissingApiKey("STREETVIEW_API_KEY is not set");
}

std::unique_ptr<LiveStreetViewClient> LiveStreetViewClient::from_env() {
  const char* key = std::getenv("STREETVIEW_API_KEY");
  if (key == nullptr || *key == '\0') throw MissingApiKey("STREETVIEW_API_KEY is not set");
  LiveStreetViewConfig config;
  config.api_key = key;
  return std::make_unique<LiveStreetViewClient>(config);
}

namespace {

httplib::Result get(httplib::Client& client, const std::string& path, const httplib::Params& params) {
  auto res = client.Get(path, params, httplib::Headers{});
  if (!res) {
    throw ApiError(ApiErrorCode::UpstreamUnavailable,
                   "street view upstream unreachable: " + httplib::to_string(res.error()), true);
  }
  if (res->status >= 500) {
    throw ApiError(ApiErrorCode::UpstreamUnavailable,
                   "street view upstream returned " + std::to_string(res->status), true);
  }
  if (res->status != 200) {
    throw ApiError(ApiErrorCode::UpstreamUnavailable,
                   "street view upstream returned " + std::to_string(res->status), false);
  }
  return res;
}

nlohmann::json parse_upstream(const std::string& body) {
  auto j = nlohmann::json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw ApiError(ApiErrorCode::UpstreamUnavailable, "malformed upstream response", true);
  }
  return j;
}

// Maps API status strings.
void check_status(const nlohmann::json& j, const std::string& what) {
  const auto status = j.value("status", std::string("UNKNOWN_ERROR"));
  if (status == "OK") return;
  if (status == "ZERO_RESULTS" || status == "NOT_FOUND") {
    throw ApiError(ApiErrorCode::NoImagery, what + ": " + status);
  }
  const bool retryable = status == "OVER_QUERY_LIMIT" || status == "UNKNOWN_ERROR";
  throw ApiError(ApiErrorCode::UpstreamUnavailable, what + ": " + status, retryable);
}

}  // namespace

Image LiveStreetViewClient::fetch(const AddressQuery& query) {
  query.validate();
  httplib::Client client(config_.base_url);
  client.set_connection_timeout(config_.connect_timeout);
  client.set_read_timeout(config_.read_timeout);
  client.set_write_timeout(config_.read_timeout);

  auto geo = parse_upstream(get(client, "/maps/api/geocode/json",
                                {{"address", trim(query.address)}, {"key", config_.api_key}})->body);
  check_status(geo, "geocoding");
  std::string location;
  try {
    const auto& loc = geo.at("results").at(0).at("geometry").at("location");
    location = format_angle(loc.at("lat").get<double>()) + "," + format_angle(loc.at("lng").get<double>());
  } catch (const nlohmann::json::exception&) {
    throw ApiError(ApiErrorCode::NoImagery, "address could not be located");
  }

  httplib::Params params{{"location", location}, {"key", config_.api_key}};
  auto meta = parse_upstream(get(client, "/maps/api/streetview/metadata", params)->body);
  check_status(meta, "street view metadata");

  const auto side = std::to_string(config_.image_side);
  params.emplace("size", side + "x" + side);
  params.emplace("fov", format_angle(query.fov_deg.value_or(config_.default_fov_deg)));
  if (query.heading_deg) params.emplace("heading", format_angle(*query.heading_deg));
  params.emplace("return_error_code", "true");
  auto res = client.Get("/maps/api/streetview", params, httplib::Headers{});
  if (!res) {
    throw ApiError(ApiErrorCode::UpstreamUnavailable,
                   "street view upstream unreachable: " + httplib::to_string(res.error()), true);
  }
  if (res->status == 404) throw ApiError(ApiErrorCode::NoImagery, "no street imagery at this location");
  if (res->status != 200) {
    throw ApiError(ApiErrorCode::UpstreamUnavailable,
                   "street view upstream returned " + std::to_string(res->status), res->status >= 500);
  }
  try {
    return decode_image(std::vector<std::uint8_t>(res->body.begin(), res->body.end()));
  } catch (const Error& e) {
    throw ApiError(ApiErrorCode::UpstreamUnavailable, std::string("undecodable imagery: ") + e.what(), true);
  }
}

// ---------------------------------------------------------------------------
// cache

double CacheStats::hit_ratio() const {
  const auto total = hits + misses;
  return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
}

nlohmann::json CacheStats::to_json() const {
  return {{"hits", hits}, {"misses", misses}, {"hit_ratio", hit_ratio()}};
}

CachingStreetViewClient::CachingStreetViewClient(std::shared_ptr<StreetViewClient> inner,
                                                 std::chrono::seconds ttl, Clock clock)
    : inner_(std::move(inner)), ttl_(ttl), clock_(clock ? std::move(clock) : [] {
        return std::chrono::steady_clock::now();
      }) {}

Image CachingStreetViewClient::fetch(const AddressQuery& query) {
  const auto key = query.cache_key();
  {
    std::lock_guard lock(mutex_);
    auto it = entries_.find(key);
    if (it != entries_.end() && clock_() - it->second.stored < ttl_) {
      ++stats_.hits;
      return it->second.image;
    }
    ++stats_.misses;
  }
  auto image = inner_->fetch(query);
  std::lock_guard lock(mutex_);
  entries_.insert_or_assign(key, Entry{image, clock_()});
  return image;
}

CacheStats CachingStreetViewClient::stats() const {
  std::lock_guard lock(mutex_);
  return stats_;
}

}  // namespace floodgen

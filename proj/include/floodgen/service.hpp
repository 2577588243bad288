#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "floodgen/errors.hpp"
#include "floodgen/inference.hpp"

namespace floodgen {

struct AddressQuery {
  std::string address;
  std::optional<double> heading_deg;  // [0, 360)
  std::optional<double> fov_deg;      // (0, 120]

  void validate() const;  // throws ApiError(bad_request)
  static AddressQuery from_json(const nlohmann::json& j);
  std::string cache_key() const;
};

enum class ApiErrorCode { BadRequest, NoImagery, UpstreamUnavailable, ModelError, Unavailable };
std::string to_string(ApiErrorCode code);
int http_status(ApiErrorCode code);

class ApiError : public Error {
 public:
  ApiError(ApiErrorCode code, const std::string& message, bool retryable = false)
      : Error("ApiError", message), code_(code), retryable_(retryable), message_(message) {}
  ApiErrorCode code() const { return code_; }
  bool retryable() const { return retryable_; }
  int status() const { return http_status(code_); }
  const std::string& message() const { return message_; }
  nlohmann::json to_json() const;

 private:
  ApiErrorCode code_;
  bool retryable_;
  std::string message_;
};

// ---------------------------------------------------------------------------
// Street View

class StreetViewClient {
 public:
  virtual ~StreetViewClient() = default;
  // Throws ApiError (no_imagery, upstream_unavailable).
  virtual Image fetch(const AddressQuery& query) = 0;
};

// Canned responses keyed by address. Unknown addresses have no imagery.
class StubStreetViewClient : public StreetViewClient {
 public:
  void add_image(const std::string& address, Image image);
  void add_error(const std::string& address, ApiError error);
  Image fetch(const AddressQuery& query) override;
  int calls() const { return calls_; }

 private:
  std::mutex mutex_;
  std::map<std::string, Image> images_;
  std::map<std::string, ApiError> errors_;
  std::atomic<int> calls_{0};
};

struct LiveStreetViewConfig {
  std::string api_key;
  std::string base_url = "https://maps.googleapis.com";
  int image_side = 640;
  double default_fov_deg = 90.0;
  std::chrono::seconds connect_timeout{5};
  std::chrono::seconds read_timeout{15};
};

// Geocoding lookup, imagery metadata check, then the static image.
class LiveStreetViewClient : public StreetViewClient {
 public:
  explicit LiveStreetViewClient(LiveStreetViewConfig config);
  // Reads STREETVIEW_API_KEY; throws MissingApiKey when unset or empty.
  static std::unique_ptr<LiveStreetViewClient> from_env();
  Image fetch(const AddressQuery& query) override;

 private:
  LiveStreetViewConfig config_;
};

struct CacheStats {
  std::uint64_t hits = 0;
  std::uint64_t misses = 0;
  double hit_ratio() const;
  nlohmann::json to_json() const;
};

// Successful fetches cached by (address, heading, fov) for ttl.
class CachingStreetViewClient : public StreetViewClient {
 public:
  using Clock = std::function<std::chrono::steady_clock::time_point()>;
  CachingStreetViewClient(std::shared_ptr<StreetViewClient> inner, std::chrono::seconds ttl,
                          Clock clock = nullptr);
  Image fetch(const AddressQuery& query) override;
  CacheStats stats() const;

 private:
  struct Entry {
    Image image;
    std::chrono::steady_clock::time_point stored;
  };
  std::shared_ptr<StreetViewClient> inner_;
  std::chrono::seconds ttl_;
  Clock clock_;
  mutable std::mutex mutex_;
  std::map<std::string, Entry> entries_;
  CacheStats stats_;
};

// ---------------------------------------------------------------------------
// HTTP service

struct ServiceConfig {
  std::string host = "0.0.0.0";
  int port = 8080;
  int workers = 2;        // concurrent model runs
  int queue_limit = 16;   // waiting requests beyond this get 503
  std::chrono::milliseconds budget{60000};
  int fetch_side = 256;   // fetched imagery is resized to this square
  std::size_t max_upload_bytes = 20u << 20;
  double level_max_m = 3.0;
  double level_step_m = 0.05;
};

std::string sha256_file(const std::filesystem::path& path);
std::string base64_encode(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> base64_decode(const std::string& text);

class FloodService {
 public:
  // streetview may be null: address requests are then rejected with 400.
  FloodService(ServiceConfig config, std::shared_ptr<StreetViewClient> streetview);
  ~FloodService();
  FloodService(const FloodService&) = delete;
  FloodService& operator=(const FloodService&) = delete;

  void set_flooder(std::shared_ptr<const Flooder> flooder, std::string checkpoint_id);
  // Loads in a background thread; health reports loading until done.
  void load_async(std::function<std::shared_ptr<const Flooder>()> loader, std::string checkpoint_id);
  void load_checkpoint_async(const std::filesystem::path& checkpoint);
  void wait_loaded();

  // Blocking. Returns false if the port could not be bound.
  bool listen();
  // Binds (port 0 picks a free one) and serves on a background thread.
  int start();
  void stop();

  nlohmann::json config_json() const;
  nlohmann::json health_json() const;
  bool ready() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace floodgen

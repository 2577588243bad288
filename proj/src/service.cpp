#include "floodgen/service.hpp"

#include <charconv>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <fstream>
#include <future>
#include <thread>

#include <httplib.h>
#include <openssl/evp.h>

#include "floodgen/image_io.hpp"

namespace floodgen {

// ---------------------------------------------------------------------------
// encoding helpers

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFile(path.string());
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), digest, &len);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
  if (text.size() % 4 != 0) throw BadRequest("base64 length must be a multiple of 4");
  std::vector<std::uint8_t> out(3 * text.size() / 4);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                static_cast<int>(text.size()));
  if (n < 0) throw BadRequest("invalid base64");
  std::size_t padding = 0;
  if (!text.empty() && text.back() == '=') ++padding;
  if (text.size() > 1 && text[text.size() - 2] == '=') ++padding;
  out.resize(static_cast<std::size_t>(n) - padding);
  return out;
}

// ---------------------------------------------------------------------------
// bounded worker pool

namespace {

class WorkerPool {
 public:
  WorkerPool(int workers, int queue_limit) : queue_limit_(static_cast<std::size_t>(queue_limit)) {
    for (int i = 0; i < workers; ++i) threads_.emplace_back([this] { run(); });
  }
  ~WorkerPool() {
    {
      std::lock_guard lock(mutex_);
      stopping_ = true;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
  }
  // False when the queue is full.
  bool submit(std::function<void()> job) {
    {
      std::lock_guard lock(mutex_);
      if (stopping_ || queue_.size() >= queue_limit_) return false;
      queue_.push_back(std::move(job));
    }
    cv_.notify_one();
    return true;
  }

 private:
  void run() {
    for (;;) {
      std::function<void()> job;
      {
        std::unique_lock lock(mutex_);
        cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
        if (queue_.empty()) return;
        job = std::move(queue_.front());
        queue_.pop_front();
      }
      job();
    }
  }

  std::size_t queue_limit_;
  std::mutex mutex_;
  std::condition_variable cv_;
  std::deque<std::function<void()>> queue_;
  std::vector<std::thread> threads_;
  bool stopping_ = false;
};

enum class ModelState { Empty, Loading, Ready, Failed };

const char* to_string(ModelState s) {
  switch (s) {
    case ModelState::Empty: return "no_model";
    case ModelState::Loading: return "loading";
    case ModelState::Ready: return "ok";
    case ModelState::Failed: return "error";
  }
  return "error";
}

void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, const ApiError& e) { send_json(res, e.status(), e.to_json()); }

double parse_number(const std::string& text, const char* name) {
  double v = 0.0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v)) {
    throw ApiError(ApiErrorCode::BadRequest, std::string(name) + " must be a finite number");
  }
  return v;
}

std::uint64_t parse_seed(const std::string& text) {
  std::uint64_t v = 0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end || text.empty()) {
    throw ApiError(ApiErrorCode::BadRequest, "style_seed must be a non-negative integer");
  }
  return v;
}

}  // namespace

// ---------------------------------------------------------------------------
// service

struct FloodService::Impl {
  ServiceConfig config;
  std::shared_ptr<StreetViewClient> streetview;
  std::shared_ptr<CachingStreetViewClient> cache;
  std::chrono::steady_clock::time_point started = std::chrono::steady_clock::now();

  mutable std::mutex state_mutex;
  std::condition_variable state_cv;
  ModelState state = ModelState::Empty;
  std::shared_ptr<const Flooder> flooder;
  std::string checkpoint_id;
  std::string load_error;
  std::thread loader;

  std::unique_ptr<WorkerPool> pool;
  httplib::Server server;
  std::thread server_thread;

  struct Loaded {
    std::shared_ptr<const Flooder> flooder;
    std::string checkpoint_id;
  };

  void begin_load(std::function<Loaded()> load) {
    if (loader.joinable()) loader.join();
    {
      std::lock_guard lock(state_mutex);
      state = ModelState::Loading;
    }
    loader = std::thread([this, load = std::move(load)] {
      try {
        auto loaded = load();
        std::lock_guard lock(state_mutex);
        flooder = std::move(loaded.flooder);
        checkpoint_id = std::move(loaded.checkpoint_id);
        state = ModelState::Ready;
      } catch (const std::exception& e) {
        std::lock_guard lock(state_mutex);
        load_error = e.what();
        state = ModelState::Failed;
      }
      state_cv.notify_all();
    });
  }

  std::shared_ptr<const Flooder> current() const {
    std::lock_guard lock(state_mutex);
    if (state == ModelState::Ready) return flooder;
    if (state == ModelState::Loading) throw ApiError(ApiErrorCode::Unavailable, "model is loading", true);
    if (state == ModelState::Failed) throw ApiError(ApiErrorCode::ModelError, "model failed to load: " + load_error);
    throw ApiError(ApiErrorCode::Unavailable, "no model loaded", true);
  }

  void handle_flood(const httplib::Request& req, httplib::Response& res) {
    const auto deadline = std::chrono::steady_clock::now() + config.budget;
    auto flooder = current();

    FloodRequest request;
    if (req.has_param("level_m")) request.flood_level_m = parse_number(req.get_param_value("level_m"), "level_m");
    if (req.has_param("fraction")) request.flood_fraction = parse_number(req.get_param_value("fraction"), "fraction");
    if (req.has_param("style_seed")) request.style_seed = parse_seed(req.get_param_value("style_seed"));
    if (req.has_param("return_mask")) request.return_mask = req.get_param_value("return_mask") != "0";
    if (request.flood_level_m && request.flood_fraction) {
      throw ApiError(ApiErrorCode::BadRequest, "give either level_m or fraction, not both");
    }
    if (request.flood_fraction && !(*request.flood_fraction >= 0.0 && *request.flood_fraction <= 1.0)) {
      throw ApiError(ApiErrorCode::BadRequest, "fraction must lie in [0,1]");
    }

    const bool multipart = req.is_multipart_form_data();
    const bool has_image = multipart && req.has_file("image");
    std::optional<AddressQuery> address;
    if (multipart && req.has_file("address")) {
      address = AddressQuery{req.get_file_value("address").content, std::nullopt, std::nullopt};
      if (req.has_file("heading_deg")) {
        address->heading_deg = parse_number(req.get_file_value("heading_deg").content, "heading_deg");
      }
      if (req.has_file("fov_deg")) address->fov_deg = parse_number(req.get_file_value("fov_deg").content, "fov_deg");
      address->validate();
    } else if (!multipart && !req.body.empty()) {
      auto body = nlohmann::json::parse(req.body, nullptr, false);
      if (body.is_discarded()) throw ApiError(ApiErrorCode::BadRequest, "body is not valid JSON");
      address = AddressQuery::from_json(body);
    }
    if (has_image && address) throw ApiError(ApiErrorCode::BadRequest, "send either an image or an address, not both");
    if (!has_image && !address) throw ApiError(ApiErrorCode::BadRequest, "send an image upload or an address");

    bool fetched = false;
    if (has_image) {
      const auto& content = req.get_file_value("image").content;
      if (content.size() > config.max_upload_bytes) throw ApiError(ApiErrorCode::BadRequest, "image too large");
      try {
        request.image = decode_image(std::vector<std::uint8_t>(content.begin(), content.end()));
      } catch (const Error& e) {
        throw ApiError(ApiErrorCode::BadRequest, std::string("cannot decode image: ") + e.what());
      }
    } else {
      if (!streetview) throw ApiError(ApiErrorCode::BadRequest, "address lookup is disabled on this server");
      request.image = streetview->fetch(*address);
      if (config.fetch_side > 0) request.image = resize_bilinear(request.image, config.fetch_side, config.fetch_side);
      fetched = true;
    }

    auto task = std::make_shared<std::packaged_task<FloodResult()>>(
        [flooder, request] { return flooder->flood(request); });
    auto future = task->get_future();
    if (!pool->submit([task] { (*task)(); })) {
      throw ApiError(ApiErrorCode::Unavailable, "server is busy", true);
    }
    if (future.wait_until(deadline) != std::future_status::ready) {
      throw ApiError(ApiErrorCode::Unavailable, "request exceeded the time budget", true);
    }
    FloodResult result;
    try {
      result = future.get();
    } catch (const BadRequest& e) {
      throw ApiError(ApiErrorCode::BadRequest, e.what());
    } catch (const std::exception& e) {
      throw ApiError(ApiErrorCode::ModelError, e.what());
    }

    nlohmann::json body{{"flooded", base64_encode(encode_png(result.flooded))},
                        {"width", result.flooded.width()},
                        {"height", result.flooded.height()},
                        {"diagnostics", result.diagnostics},
                        {"checkpoint_id", checkpoint_id_snapshot()}};
    if (request.return_mask) body["mask"] = base64_encode(encode_mask_png(result.mask));
    if (fetched) body["original"] = base64_encode(encode_png(request.image));
    send_json(res, 200, body);
  }

  std::string checkpoint_id_snapshot() const {
    std::lock_guard lock(state_mutex);
    return checkpoint_id;
  }

  void install_routes(FloodService& self) {
    server.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
    server.set_payload_max_length(config.max_upload_bytes + (1u << 20));
    server.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) {
      res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type");
      res.status = 204;
    });
    server.Get("/api/health", [&self](const httplib::Request&, httplib::Response& res) {
      send_json(res, self.ready() ? 200 : 503, self.health_json());
    });
    server.Get("/api/config", [&self](const httplib::Request&, httplib::Response& res) {
      send_json(res, 200, self.config_json());
    });
    server.Post("/api/flood", [this](const httplib::Request& req, httplib::Response& res) {
      try {
        handle_flood(req, res);
      } catch (const ApiError& e) {
        send_error(res, e);
      } catch (const std::exception& e) {
        send_error(res, ApiError(ApiErrorCode::ModelError, e.what()));
      }
    });
  }
};

FloodService::FloodService(ServiceConfig config, std::shared_ptr<StreetViewClient> streetview)
    : impl_(std::make_unique<Impl>()) {
  if (config.workers < 1 || config.queue_limit < 1) throw InvalidConfig("workers and queue_limit must be >= 1");
  impl_->config = config;
  impl_->cache = std::dynamic_pointer_cast<CachingStreetViewClient>(streetview);
  impl_->streetview = std::move(streetview);
  impl_->pool = std::make_unique<WorkerPool>(config.workers, config.queue_limit);
  impl_->install_routes(*this);
}

FloodService::~FloodService() {
  stop();
  if (impl_->loader.joinable()) impl_->loader.join();
}

void FloodService::set_flooder(std::shared_ptr<const Flooder> flooder, std::string checkpoint_id) {
  std::lock_guard lock(impl_->state_mutex);
  impl_->flooder = std::move(flooder);
  impl_->checkpoint_id = std::move(checkpoint_id);
  impl_->state = ModelState::Ready;
  impl_->state_cv.notify_all();
}

void FloodService::load_async(std::function<std::shared_ptr<const Flooder>()> loader,
                              std::string checkpoint_id) {
  impl_->begin_load([loader = std::move(loader), id = std::move(checkpoint_id)] {
    return Impl::Loaded{loader(), id};
  });
}

void FloodService::load_checkpoint_async(const std::filesystem::path& checkpoint) {
  impl_->begin_load([checkpoint] {
    auto id = sha256_file(checkpoint);
    return Impl::Loaded{std::make_shared<const Flooder>(Flooder::from_checkpoint(checkpoint)), id};
  });
}

void FloodService::wait_loaded() {
  std::unique_lock lock(impl_->state_mutex);
  impl_->state_cv.wait(lock, [&] { return impl_->state != ModelState::Loading; });
}

bool FloodService::ready() const {
  std::lock_guard lock(impl_->state_mutex);
  return impl_->state == ModelState::Ready;
}

nlohmann::json FloodService::health_json() const {
  std::lock_guard lock(impl_->state_mutex);
  const auto uptime = std::chrono::duration<double>(std::chrono::steady_clock::now() - impl_->started).count();
  nlohmann::json j{{"status", to_string(impl_->state)},
                   {"checkpoint_id", impl_->checkpoint_id.empty() ? nlohmann::json() : nlohmann::json(impl_->checkpoint_id)},
                   {"uptime_s", uptime},
                   {"cache", impl_->cache ? impl_->cache->stats().to_json() : nlohmann::json()}};
  if (impl_->state == ModelState::Failed) j["error"] = impl_->load_error;
  return j;
}

nlohmann::json FloodService::config_json() const {
  const auto& c = impl_->config;
  return {{"flood_level_m", {{"min", 0.0}, {"max", c.level_max_m}, {"step", c.level_step_m}, {"default", 1.0}}},
          {"flood_fraction", {{"min", 0.0}, {"max", 1.0}, {"default", 0.3}}},
          {"heading_deg", {{"min", 0.0}, {"max", 360.0}}},
          {"fov_deg", {{"min", 0.0}, {"max", 120.0}, {"default", 90.0}}},
          {"style_seed", {{"default", 0}}},
          {"max_upload_bytes", c.max_upload_bytes},
          {"features",
           {{"address_lookup", impl_->streetview != nullptr},
            {"upload", true},
            {"mask", true},
            {"style_seed", true}}}};
}

bool FloodService::listen() {
  return impl_->server.listen(impl_->config.host, impl_->config.port);
}

int FloodService::start() {
  auto& server = impl_->server;
  const int port = impl_->config.port == 0 ? server.bind_to_any_port(impl_->config.host)
                                           : (server.bind_to_port(impl_->config.host, impl_->config.port)
                                                  ? impl_->config.port
                                                  : -1);
  if (port < 0) throw InvalidConfig("cannot bind port " + std::to_string(impl_->config.port));
  impl_->server_thread = std::thread([&server] { server.listen_after_bind(); });
  server.wait_until_ready();
  return port;
}

void FloodService::stop() {
  impl_->server.stop();
  if (impl_->server_thread.joinable()) impl_->server_thread.join();
}

}  // namespace floodgen

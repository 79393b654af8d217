#pragma once

#include <condition_variable>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

#include "netsurgeon/project.hpp"
#include "netsurgeon/serialize.hpp"

namespace httplib {
class Server;
}

namespace netsurgeon {

inline constexpr const char* kServiceVersion = "1.0.0";

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::filesystem::path data_root = ".";
  int max_jobs = 2;        ///< worker pool size
  int sync_threshold = 64; ///< inputs with more images than this run as jobs
  int jobs = 1;            ///< threads per computation
};

/// Keys as in ServiceConfig. Missing keys keep their defaults.
ServiceConfig load_service_config(const std::filesystem::path& path);

/// Applies NETSURGEON_DATA_ROOT and NETSURGEON_PORT when set.
void apply_environment(ServiceConfig& config);

/// PNG crops of each patch's rect from its image, in order.
std::vector<std::vector<unsigned char>> render_patch_thumbnails(
    std::span<const PatchRef> patches, std::span<const ImageRecord> images);

/// A map reduced by block averaging to at most max_side x max_side, with the extremes of
/// the full-resolution map.
struct HeatmapPayload {
  int source_rows = 0, source_cols = 0;
  int rows = 0, cols = 0;
  float min = 0.0f, max = 0.0f;
  std::vector<float> values;  ///< row-major rows x cols
};

HeatmapPayload downsample_heatmap(const Tensor& map, int max_side = 128);

struct JobRecord {
  enum class Status { Queued, Running, Done, Failed };
  std::string id;
  std::string kind;
  Status status = Status::Queued;
  double progress = 0.0;
  Json result;
  std::string error_code;
  std::string error_message;
};

std::string_view to_string(JobRecord::Status status);

/// A bounded pool of workers running queued jobs in submission order.
class JobPool {
 public:
  explicit JobPool(int workers);
  ~JobPool();
  JobPool(const JobPool&) = delete;
  JobPool& operator=(const JobPool&) = delete;

  std::string submit(std::string kind, std::function<Json()> work);
  std::optional<JobRecord> get(const std::string& id) const;
  /// Running jobs finish; queued jobs are marked failed.
  void shutdown();

 private:
  void run();

  mutable std::mutex mutex_;
  std::condition_variable wake_;
  std::deque<std::pair<std::string, std::function<Json()>>> queue_;
  std::map<std::string, JobRecord> records_;
  std::vector<std::jthread> workers_;
  int next_id_ = 1;
  bool stopping_ = false;
};

/// A response body plus whether it was deferred to a job (HTTP 202).
struct Reply {
  Json body;
  bool accepted = false;
};

/// The service state and every operation behind the HTTP routes. Thread-safe: reads
/// run concurrently, project mutations are serialised.
class Workbench {
 public:
  explicit Workbench(ServiceConfig config);
  ~Workbench();

  const ServiceConfig& config() const { return config_; }

  Json health() const;
  Json add_network(const Json& body);
  Json add_dataset(const Json& body);
  Json top_patches(const NeuronRef& neuron, int n, const std::string& dataset_id);
  Json search_weights(const Json& body) const;
  Json search_cooccurrence(const Json& body);
  Reply create_embedding(const Json& body);
  Json create_concept(const Json& body);
  Json concept_heatmap(const std::string& concept_id, const std::string& image_id,
                       const std::string& dataset_id);
  Json create_grammar(const Json& body);
  Json grammar(const std::string& id) const;
  Json embedding(const std::string& id) const;
  Reply detect(const Json& body);
  Reply evaluate(const Json& body);
  Json job(const std::string& id) const;
  std::optional<std::string> blob(const std::string& hash) const;

  Json project_json() const;
  Json new_project(const Json& body);
  Json save_project(const Json& body);
  Json load_project(const Json& body);
  Project project() const;

  /// Stops the job pool (running jobs complete, queued ones fail).
  void shutdown();

 private:
  struct DatasetState;

  std::filesystem::path resolve(const std::string& path) const;
  std::shared_ptr<const NetworkSpec> network() const;
  DatasetState& dataset(const std::string& id) const;
  std::shared_ptr<const std::vector<ImageRecord>> images(const std::string& dataset_id) const;
  const ImageRecord& find_image(const std::string& image_id, const std::string& dataset_id,
                               std::shared_ptr<const std::vector<ImageRecord>>& holder) const;
  std::string store_blob(std::vector<unsigned char> bytes);
  void touch();

  Json embedding_work(const Json& body);
  Json detect_work(const Json& body);
  Json evaluate_work(const Json& body);

  ServiceConfig config_;
  mutable std::shared_mutex state_mutex_;
  std::shared_ptr<const NetworkSpec> network_;
  std::map<std::string, std::unique_ptr<DatasetState>> datasets_;
  Project project_;
  int next_embedding_ = 1, next_concept_ = 1, next_grammar_ = 1;
  mutable std::mutex blob_mutex_;
  std::map<std::string, std::string> blobs_;
  JobPool pool_;
};

/// Installs the /health and /api/v1 routes.
void register_routes(httplib::Server& server, Workbench& workbench);

/// Serves until SIGINT/SIGTERM. Returns a process exit code.
int serve(const ServiceConfig& config);

}  // namespace netsurgeon

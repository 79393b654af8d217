#include "netsurgeon/service.hpp"

#include <pthread.h>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <csignal>
#include <cstdio>
#include <cstdlib>

#include <fmt/format.h>

#include "httplib.h"
#include "netsurgeon/error.hpp"
#include "netsurgeon/hash.hpp"
#include "netsurgeon/image.hpp"

namespace netsurgeon {

namespace {

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::NotFound:
      return 404;
    case ErrorCode::InvalidArgument:
    case ErrorCode::Format:
      return 400;
    case ErrorCode::Stale:
    case ErrorCode::VersionMismatch:
      return 409;
    case ErrorCode::ShapeMismatch:
    case ErrorCode::Degenerate:
    case ErrorCode::SilentNeuron:
    case ErrorCode::Unsupported:
      return 422;
    case ErrorCode::Io:
      return 500;
  }
  return 500;
}

Json error_json(std::string_view code, std::string_view message) {
  return {{"error", {{"code", code}, {"message", message}}}};
}

template <class T>
T optional_field(const Json& body, const char* key, T fallback) {
  const auto it = body.find(key);
  if (it == body.end() || it->is_null()) return fallback;
  try {
    return it->get<T>();
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorCode::InvalidArgument, fmt::format("field '{}' has the wrong type", key));
  }
}

template <class T>
T required_field(const Json& body, const char* key) {
  if (!body.contains(key) || body[key].is_null()) {
    throw Error(ErrorCode::InvalidArgument, fmt::format("missing field '{}'", key));
  }
  return optional_field<T>(body, key, T{});
}

/// {"layer": ..., "channel": ...} or "layer:channel".
NeuronRef neuron_field(const Json& body) {
  if (!body.contains("neuron")) throw Error(ErrorCode::InvalidArgument, "missing field 'neuron'");
  const Json& j = body["neuron"];
  if (j.is_string()) {
    const auto text = j.get<std::string>();
    const auto colon = text.rfind(':');
    int channel = -1;
    if (colon != std::string::npos) {
      const char* first = text.data() + colon + 1;
      const char* last = text.data() + text.size();
      const auto [ptr, ec] = std::from_chars(first, last, channel);
      if (ec != std::errc() || ptr != last) channel = -1;
    }
    if (channel < 0) {
      throw Error(ErrorCode::InvalidArgument,
                  fmt::format("neuron '{}' is not of the form layer:channel", text));
    }
    return {text.substr(0, colon), channel};
  }
  return json_as<NeuronRef>(j, "neuron");
}

std::string next_id(std::string_view prefix, int& counter) {
  return fmt::format("{}-{}", prefix, counter++);
}

/// One past the largest "prefix-N" suffix among ids.
template <class Range, class IdOf>
int counter_after(const Range& items, std::string_view prefix, IdOf id_of) {
  int next = 1;
  for (const auto& item : items) {
    const std::string& id = id_of(item);
    if (id.size() <= prefix.size() + 1 || id.compare(0, prefix.size(), prefix) != 0 ||
        id[prefix.size()] != '-') {
      continue;
    }
    int n = 0;
    const char* first = id.data() + prefix.size() + 1;
    const char* last = id.data() + id.size();
    const auto [ptr, ec] = std::from_chars(first, last, n);
    if (ec == std::errc() && ptr == last) next = std::max(next, n + 1);
  }
  return next;
}

Json layers_json(const NetworkSpec& network) {
  const RFGeometry geometry = layer_geometry(network);
  Json layers = Json::array();
  for (std::size_t i = 0; i < network.layers.size(); ++i) {
    const LayerSpec& l = network.layers[i];
    const LayerGeometry& g = geometry.layers[i + 1];
    layers.push_back({{"name", l.name},
                      {"kind", to_string(l.kind)},
                      {"in_channels", l.in_channels},
                      {"out_channels", l.out_channels},
                      {"kernel", {l.kernel.h, l.kernel.w}},
                      {"stride", {l.stride.h, l.stride.w}},
                      {"padding", {l.padding.h, l.padding.w}},
                      {"rf_size", {g.rows.rf_size, g.cols.rf_size}},
                      {"jump", {g.rows.jump, g.cols.jump}},
                      {"offset", {g.rows.offset, g.cols.offset}}});
  }
  return layers;
}

Json report_json(const EvalReport& report) {
  Json rows = Json::array();
  for (const auto& row : report.rows) rows.push_back({{"model", row.model}, {"ap", row.ap}});
  return {{"iou_thresholds", report.iou_thresholds},
          {"rows", rows},
          {"warnings", report.warnings},
          {"table", format_report(report)}};
}

std::string blob_url(const std::string& hash) { return "/api/v1/blobs/" + hash; }

}  // namespace

ServiceConfig load_service_config(const std::filesystem::path& path) {
  const Json j = read_json_file(path);
  if (!j.is_object()) throw_format_error(path.string(), "expected an object");
  ServiceConfig config;
  config.host = optional_field<std::string>(j, "host", config.host);
  config.port = optional_field<int>(j, "port", config.port);
  if (j.contains("data_root")) {
    std::filesystem::path root = optional_field<std::string>(j, "data_root", ".");
    config.data_root = root.is_relative() ? path.parent_path() / root : root;
  }
  config.max_jobs = optional_field<int>(j, "max_jobs", config.max_jobs);
  config.sync_threshold = optional_field<int>(j, "sync_threshold", config.sync_threshold);
  config.jobs = optional_field<int>(j, "jobs", config.jobs);
  if (config.port < 0 || config.port > 65535) {
    throw Error(ErrorCode::InvalidArgument, fmt::format("port {} out of range", config.port));
  }
  if (config.max_jobs < 1 || config.jobs < 1 || config.sync_threshold < 0) {
    throw Error(ErrorCode::InvalidArgument,
                "max_jobs and jobs must be >= 1 and sync_threshold >= 0");
  }
  return config;
}

void apply_environment(ServiceConfig& config) {
  if (const char* root = std::getenv("NETSURGEON_DATA_ROOT"); root && *root) {
    config.data_root = root;
  }
  if (const char* port = std::getenv("NETSURGEON_PORT"); port && *port) {
    const std::string_view text(port);
    int value = -1;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc() || ptr != text.data() + text.size() || value < 0 || value > 65535) {
      throw Error(ErrorCode::InvalidArgument,
                  fmt::format("NETSURGEON_PORT '{}' is not a port number", text));
    }
    config.port = value;
  }
}

std::vector<std::vector<unsigned char>> render_patch_thumbnails(
    std::span<const PatchRef> patches, std::span<const ImageRecord> images) {
  std::map<std::string_view, const ImageRecord*> by_id;
  for (const auto& image : images) by_id.emplace(image.image_id, &image);
  std::vector<std::vector<unsigned char>> out;
  out.reserve(patches.size());
  for (const auto& patch : patches) {
    const auto it = by_id.find(patch.image_id);
    if (it == by_id.end()) {
      throw Error(ErrorCode::NotFound, fmt::format("no image '{}'", patch.image_id));
    }
    out.push_back(encode_png(crop(it->second->pixels, patch.rect)));
  }
  return out;
}

HeatmapPayload downsample_heatmap(const Tensor& map, int max_side) {
  if (max_side < 1) throw Error(ErrorCode::InvalidArgument, "max_side must be >= 1");
  if (map.channels() != 1 || map.height() < 1 || map.width() < 1) {
    throw Error(ErrorCode::ShapeMismatch, "heatmap must be a non-empty single-channel map");
  }
  HeatmapPayload p;
  p.source_rows = map.height();
  p.source_cols = map.width();
  const int factor = (std::max(p.source_rows, p.source_cols) + max_side - 1) / max_side;
  p.rows = (p.source_rows + factor - 1) / factor;
  p.cols = (p.source_cols + factor - 1) / factor;
  const auto [lo, hi] = std::minmax_element(map.data().begin(), map.data().end());
  p.min = *lo;
  p.max = *hi;
  p.values.resize(static_cast<std::size_t>(p.rows) * p.cols);
  for (int r = 0; r < p.rows; ++r) {
    for (int c = 0; c < p.cols; ++c) {
      double sum = 0.0;
      int count = 0;
      for (int y = r * factor; y < std::min(p.source_rows, (r + 1) * factor); ++y) {
        for (int x = c * factor; x < std::min(p.source_cols, (c + 1) * factor); ++x) {
          sum += map.at(0, y, x);
          ++count;
        }
      }
      p.values[static_cast<std::size_t>(r) * p.cols + c] = static_cast<float>(sum / count);
    }
  }
  return p;
}

std::string_view to_string(JobRecord::Status status) {
  switch (status) {
    case JobRecord::Status::Queued:
      return "queued";
    case JobRecord::Status::Running:
      return "running";
    case JobRecord::Status::Done:
      return "done";
    case JobRecord::Status::Failed:
      return "failed";
  }
  return "unknown";
}

// ---- JobPool ----

JobPool::JobPool(int workers) {
  for (int i = 0; i < std::max(1, workers); ++i) workers_.emplace_back([this] { run(); });
}

JobPool::~JobPool() { shutdown(); }

std::string JobPool::submit(std::string kind, std::function<Json()> work) {
  std::lock_guard lock(mutex_);
  if (stopping_) throw Error(ErrorCode::Unsupported, "the service is shutting down");
  std::string id = fmt::format("job-{}", next_id_++);
  JobRecord record;
  record.id = id;
  record.kind = std::move(kind);
  records_.emplace(id, std::move(record));
  queue_.emplace_back(id, std::move(work));
  wake_.notify_one();
  return id;
}

std::optional<JobRecord> JobPool::get(const std::string& id) const {
  std::lock_guard lock(mutex_);
  const auto it = records_.find(id);
  if (it == records_.end()) return std::nullopt;
  return it->second;
}

void JobPool::shutdown() {
  std::vector<std::jthread> workers;
  {
    std::lock_guard lock(mutex_);
    stopping_ = true;
    for (const auto& [id, work] : queue_) {
      JobRecord& r = records_.at(id);
      r.status = JobRecord::Status::Failed;
      r.error_code = "Cancelled";
      r.error_message = "the service shut down before the job started";
    }
    queue_.clear();
    workers.swap(workers_);
  }
  wake_.notify_all();
  for (auto& w : workers) {
    if (w.joinable()) w.join();
  }
}

void JobPool::run() {
  for (;;) {
    std::pair<std::string, std::function<Json()>> job;
    {
      std::unique_lock lock(mutex_);
      wake_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
      if (queue_.empty()) return;
      job = std::move(queue_.front());
      queue_.pop_front();
      records_.at(job.first).status = JobRecord::Status::Running;
    }
    Json result;
    std::string code, message;
    try {
      result = job.second();
    } catch (const Error& e) {
      code = to_string(e.code());
      message = e.what();
    } catch (const std::exception& e) {
      code = "Internal";
      message = e.what();
    }
    std::lock_guard lock(mutex_);
    JobRecord& r = records_.at(job.first);
    if (code.empty()) {
      r.status = JobRecord::Status::Done;
      r.progress = 1.0;
      r.result = std::move(result);
    } else {
      r.status = JobRecord::Status::Failed;
      r.error_code = std::move(code);
      r.error_message = std::move(message);
    }
  }
}

// ---- Workbench ----

struct Workbench::DatasetState {
  explicit DatasetState(Dataset d) : dataset(std::move(d)) {}
  Dataset dataset;
  std::mutex load_mutex;
  std::shared_ptr<const std::vector<ImageRecord>> images;
};

Workbench::Workbench(ServiceConfig config)
    : config_(std::move(config)), pool_(config_.max_jobs) {
  project_.id = "untitled";
  project_.created = project_.modified = utc_timestamp();
}

Workbench::~Workbench() { pool_.shutdown(); }

void Workbench::shutdown() { pool_.shutdown(); }

std::filesystem::path Workbench::resolve(const std::string& path) const {
  if (path.empty()) throw Error(ErrorCode::InvalidArgument, "empty path");
  std::filesystem::path p(path);
  if (p.is_relative()) p = config_.data_root / p;
  return p.lexically_normal();
}

std::shared_ptr<const NetworkSpec> Workbench::network() const {
  std::shared_lock lock(state_mutex_);
  if (!network_) throw Error(ErrorCode::NotFound, "no network loaded (POST /api/v1/networks)");
  return network_;
}

Workbench::DatasetState& Workbench::dataset(const std::string& id) const {
  std::shared_lock lock(state_mutex_);
  if (id.empty()) {
    if (datasets_.size() == 1) return *datasets_.begin()->second;
    throw Error(ErrorCode::InvalidArgument,
                datasets_.empty() ? "no dataset loaded (POST /api/v1/datasets)"
                                  : "several datasets are loaded; name one");
  }
  const auto it = datasets_.find(id);
  if (it == datasets_.end()) throw Error(ErrorCode::NotFound, fmt::format("no dataset '{}'", id));
  return *it->second;
}

std::shared_ptr<const std::vector<ImageRecord>> Workbench::images(
    const std::string& dataset_id) const {
  DatasetState& state = dataset(dataset_id);
  std::lock_guard lock(state.load_mutex);
  if (!state.images) {
    state.images =
        std::make_shared<const std::vector<ImageRecord>>(load_images(state.dataset, config_.jobs));
  }
  return state.images;
}

const ImageRecord& Workbench::find_image(
    const std::string& image_id, const std::string& dataset_id,
    std::shared_ptr<const std::vector<ImageRecord>>& holder) const {
  std::vector<std::string> candidates;
  if (!dataset_id.empty()) {
    candidates.push_back(dataset_id);
  } else {
    std::shared_lock lock(state_mutex_);
    for (const auto& [id, state] : datasets_) candidates.push_back(id);
  }
  for (const auto& id : candidates) {
    if (!dataset(id).dataset.find(image_id)) continue;
    holder = images(id);
    for (const auto& image : *holder) {
      if (image.image_id == image_id) return image;
    }
  }
  throw Error(ErrorCode::NotFound, fmt::format("no image '{}'", image_id));
}

std::string Workbench::store_blob(std::vector<unsigned char> bytes) {
  Fnv1a h;
  h.bytes(bytes.data(), bytes.size());
  std::string key = hash_hex(h.value());
  std::lock_guard lock(blob_mutex_);
  blobs_.try_emplace(key, bytes.begin(), bytes.end());
  return key;
}

std::optional<std::string> Workbench::blob(const std::string& hash) const {
  std::lock_guard lock(blob_mutex_);
  const auto it = blobs_.find(hash);
  if (it == blobs_.end()) return std::nullopt;
  return it->second;
}

void Workbench::touch() { project_.modified = utc_timestamp(); }

Json Workbench::health() const { return {{"status", "ok"}, {"version", kServiceVersion}}; }

Json Workbench::add_network(const Json& body) {
  const auto path = resolve(required_field<std::string>(body, "manifest_path"));
  auto net = std::make_shared<const NetworkSpec>(load_network(path));
  const std::uint64_t hash = network_hash(*net);
  std::vector<std::string> warnings;
  {
    std::unique_lock lock(state_mutex_);
    network_ = net;
    project_.network = {hash_hex(hash), path};
    for (auto& c : project_.concepts) {
      if (!c.stale && c.basis && c.basis->network_hash != hash) {
        c.stale = true;
        warnings.push_back(fmt::format("concept '{}' was built on another network; marked stale",
                                       c.id));
      }
    }
    touch();
  }
  return {{"network_id", hash_hex(hash)}, {"layers", layers_json(*net)}, {"warnings", warnings}};
}

Json Workbench::add_dataset(const Json& body) {
  const auto directory = resolve(required_field<std::string>(body, "directory"));
  std::vector<std::string> warnings;
  Dataset ds = ingest_dataset(directory, &warnings);
  Json ids = Json::array();
  for (const auto& image : ds.images) ids.push_back(image.image_id);
  const std::string id = ds.id;
  const std::size_t count = ds.images.size();
  {
    std::unique_lock lock(state_mutex_);
    datasets_.try_emplace(id, std::make_unique<DatasetState>(std::move(ds)));
    const bool known = std::any_of(project_.datasets.begin(), project_.datasets.end(),
                                   [&](const DatasetRef& d) { return d.id == id; });
    if (!known) project_.datasets.push_back({id, directory});
    touch();
  }
  return {{"dataset_id", id}, {"image_count", count}, {"images", ids}, {"warnings", warnings}};
}

Json Workbench::top_patches(const NeuronRef& neuron, int n, const std::string& dataset_id) {
  if (n < 1) throw Error(ErrorCode::InvalidArgument, "n must be >= 1");
  const auto net = network();
  const auto imgs = images(dataset_id);
  const auto patches =
      mine_top_activations(*net, *imgs, neuron, n, kDefaultPerImageCap, config_.jobs);
  auto thumbs = render_patch_thumbnails(patches, *imgs);
  Json out = Json::array();
  for (std::size_t i = 0; i < patches.size(); ++i) {
    Json j = patches[i];
    j["thumbnail"] = blob_url(store_blob(std::move(thumbs[i])));
    out.push_back(std::move(j));
  }
  return {{"neuron", neuron}, {"patches", out}};
}

Json Workbench::search_weights(const Json& body) const {
  const NeuronRef neuron = neuron_field(body);
  const auto direction_text = optional_field<std::string>(body, "direction", "inputs");
  SearchDirection direction;
  if (direction_text == "inputs") {
    direction = SearchDirection::Inputs;
  } else if (direction_text == "consumers") {
    direction = SearchDirection::Consumers;
  } else {
    throw Error(ErrorCode::InvalidArgument,
                fmt::format("direction must be 'inputs' or 'consumers', not '{}'", direction_text));
  }
  const auto results = weight_search(*network(), neuron, direction);
  return {{"neuron", neuron}, {"direction", direction_text}, {"results", results}};
}

Json Workbench::search_cooccurrence(const Json& body) {
  const NeuronRef neuron = neuron_field(body);
  const int top_k = optional_field<int>(body, "top_k", 100);
  const auto dataset_id = optional_field<std::string>(body, "dataset", "");
  const auto results = cooccurrence_search(*network(), *images(dataset_id), neuron, top_k,
                                           kDefaultPerImageCap, config_.jobs);
  return {{"neuron", neuron}, {"top_k", top_k}, {"results", results}};
}

Reply Workbench::create_embedding(const Json& body) {
  const auto dataset_id = optional_field<std::string>(body, "dataset", "");
  const auto count = static_cast<int>(dataset(dataset_id).dataset.images.size());
  if (optional_field<bool>(body, "async", count > config_.sync_threshold)) {
    const auto id = pool_.submit("embed", [this, body] { return embedding_work(body); });
    return {{{"job_id", id}, {"status", "queued"}}, true};
  }
  return {embedding_work(body), false};
}

Json Workbench::embedding_work(const Json& body) {
  EmbeddingRequest request;
  request.neuron = neuron_field(body);
  request.method = parse_embedding_method(optional_field<std::string>(body, "method", "pca"));
  request.n = optional_field<int>(body, "n", kDefaultEmbeddingSize);
  request.seed = optional_field<std::uint64_t>(body, "seed", 0);
  request.perplexity = optional_field<double>(body, "perplexity", request.perplexity);
  request.tsne_iterations = optional_field<int>(body, "iterations", request.tsne_iterations);
  request.parametric.epochs = optional_field<int>(body, "epochs", request.parametric.epochs);
  request.jobs = config_.jobs;
  const auto net = network();
  const auto imgs = images(optional_field<std::string>(body, "dataset", ""));
  EmbeddingRun run = fit_embedding(*net, *imgs, request);
  auto thumbs = render_patch_thumbnails(run.patches, *imgs);

  Json points = Json::array();
  for (std::size_t i = 0; i < run.basis.points.size(); ++i) {
    const auto& p = run.basis.points[i];
    points.push_back({{"id", p.id},
                      {"c1", p.c1},
                      {"c2", p.c2},
                      {"patch", run.patches[i]},
                      {"thumbnail", blob_url(store_blob(std::move(thumbs[i])))}});
  }
  auto basis = std::make_shared<EmbeddingBasis>(std::move(run.basis));
  {
    std::unique_lock lock(state_mutex_);
    basis->id = next_id("emb", next_embedding_);
    project_.embeddings.push_back(basis);
    touch();
  }
  Json out{{"embedding_id", basis->id},
           {"method", to_string(basis->method)},
           {"neuron", basis->source_neuron},
           {"points", points},
           {"filter_line", run.line ? Json(*run.line) : Json()},
           {"warnings", run.warnings}};
  if (basis->method == EmbeddingMethod::Pca) {
    out["eigenvalues"] = basis->eigenvalues;
  } else {
    out["parametric"] = {{"training_mse", basis->parametric->training_mse},
                         {"converged", basis->parametric->converged}};
  }
  return out;
}

Json Workbench::embedding(const std::string& id) const {
  std::shared_lock lock(state_mutex_);
  return *project_.embedding(id);
}

Json Workbench::create_concept(const Json& body) {
  const auto embedding_id = required_field<std::string>(body, "embedding_id");
  Boundary boundary;
  boundary.alpha1 = required_field<double>(body, "alpha1");
  boundary.alpha2 = required_field<double>(body, "alpha2");
  boundary.beta = required_field<double>(body, "beta");
  const auto name = optional_field<std::string>(body, "name", "");
  std::shared_ptr<const EmbeddingBasis> basis;
  {
    std::shared_lock lock(state_mutex_);
    basis = project_.embedding(embedding_id);
  }
  ConceptFilter cf = make_concept(basis, boundary, name);
  if (body.contains("mode")) {
    const ConceptMode mode = parse_concept_mode(required_field<std::string>(body, "mode"));
    const bool pca = basis->method == EmbeddingMethod::Pca;
    if (pca == (mode == ConceptMode::Parametric)) {
      throw Error(ErrorCode::InvalidArgument,
                  fmt::format("mode '{}' does not apply to a {} embedding", to_string(mode),
                              to_string(basis->method)));
    }
    cf.mode = mode;
  }
  Json classification = Json::array();
  int positives = 0;
  for (const auto& p : basis->points) {
    const bool positive = boundary.alpha1 * p.c1 + boundary.alpha2 * p.c2 + boundary.beta > 0.0;
    positives += positive;
    classification.push_back({{"id", p.id}, {"positive", positive}});
  }
  {
    std::unique_lock lock(state_mutex_);
    cf.id = next_id("concept", next_concept_);
    project_.concepts.push_back(cf);
    touch();
  }
  Json realized;
  if (cf.realized) realized = {{"weights", cf.realized->weights}, {"bias", cf.realized->bias}};
  return {{"concept_id", cf.id},
          {"mode", to_string(cf.mode)},
          {"realized", realized},
          {"positive_count", positives},
          {"classification", classification}};
}

Json Workbench::concept_heatmap(const std::string& concept_id, const std::string& image_id,
                                const std::string& dataset_id) {
  if (image_id.empty()) throw Error(ErrorCode::InvalidArgument, "missing query parameter 'image'");
  ConceptFilter cf;
  {
    std::shared_lock lock(state_mutex_);
    cf = project_.concept_filter(concept_id);
  }
  if (cf.stale) {
    throw Error(ErrorCode::Stale,
                fmt::format("concept '{}' was built on another network", concept_id));
  }
  const auto net = network();
  std::shared_ptr<const std::vector<ImageRecord>> holder;
  const ImageRecord& image = find_image(image_id, dataset_id, holder);
  const HeatmapPayload p =
      downsample_heatmap(netsurgeon::concept_heatmap(*net, image.pixels, cf));
  return {{"concept_id", concept_id}, {"image_id", image_id},
          {"source_rows", p.source_rows}, {"source_cols", p.source_cols},
          {"rows", p.rows},   {"cols", p.cols},
          {"min", p.min},     {"max", p.max},
          {"values", p.values}};
}

Json Workbench::create_grammar(const Json& body) {
  const Json& spec = body.contains("grammar") ? body["grammar"] : body;
  PLCGrammar g = json_as<PLCGrammar>(spec, "grammar");
  validate(g);
  std::shared_ptr<const NetworkSpec> net;
  for (const auto& part : g.parts) {
    if (part.source.kind == PartSource::Kind::Neuron) {
      if (!net) net = network();
      resolve_neuron(*net, part.source.neuron);
    }
  }
  std::unique_lock lock(state_mutex_);
  for (const auto& part : g.parts) {
    if (part.source.kind == PartSource::Kind::Concept) {
      const ConceptFilter& cf = project_.concept_filter(part.source.concept_id);
      if (cf.stale) {
        throw Error(ErrorCode::Stale, fmt::format("concept '{}' is stale", cf.id));
      }
    }
  }
  g.id = next_id("grammar", next_grammar_);
  if (g.name.empty()) g.name = g.id;
  project_.grammars.push_back(g);
  touch();
  return {{"grammar_id", g.id}, {"grammar", g}};
}

Json Workbench::grammar(const std::string& id) const {
  std::shared_lock lock(state_mutex_);
  return project_.grammar(id);
}

Reply Workbench::detect(const Json& body) {
  int count = 1;
  if (!body.contains("image_id")) {
    count = static_cast<int>(
        dataset(optional_field<std::string>(body, "dataset_id", "")).dataset.images.size());
  }
  {
    std::shared_lock lock(state_mutex_);
    project_.grammar(required_field<std::string>(body, "grammar_id"));
  }
  if (optional_field<bool>(body, "async", count > config_.sync_threshold)) {
    const auto id = pool_.submit("detect", [this, body] { return detect_work(body); });
    return {{{"job_id", id}, {"status", "queued"}}, true};
  }
  return {detect_work(body), false};
}

Json Workbench::detect_work(const Json& body) {
  const auto grammar_id = required_field<std::string>(body, "grammar_id");
  PLCGrammar g;
  ConceptRegistry registry;
  {
    std::shared_lock lock(state_mutex_);
    g = project_.grammar(grammar_id);
    registry = project_.concept_registry();
  }
  for (const auto& part : g.parts) {
    if (part.source.kind != PartSource::Kind::Concept) continue;
    const auto it = registry.find(part.source.concept_id);
    if (it != registry.end() && it->second.stale) {
      throw Error(ErrorCode::Stale, fmt::format("concept '{}' is stale", it->first));
    }
  }
  const DetectOptions options = json_as<DetectOptions>(body, "detection options");
  const auto net = network();
  const auto dataset_id = optional_field<std::string>(body, "dataset_id", "");
  std::vector<Detection> dets;
  if (body.contains("image_id")) {
    std::shared_ptr<const std::vector<ImageRecord>> holder;
    const ImageRecord& image =
        find_image(required_field<std::string>(body, "image_id"), dataset_id, holder);
    dets = detect_all(*net, g, registry, std::span(&image, 1), options, config_.jobs);
  } else {
    dets = detect_all(*net, g, registry, *images(dataset_id), options, config_.jobs);
  }
  return {{"grammar_id", grammar_id}, {"detections", dets}, {"text", format_detections(dets)}};
}

Reply Workbench::evaluate(const Json& body) {
  const int count = static_cast<int>(
      dataset(optional_field<std::string>(body, "dataset_id", "")).dataset.images.size());
  if (optional_field<bool>(body, "async", count > config_.sync_threshold)) {
    const auto id = pool_.submit("evaluate", [this, body] { return evaluate_work(body); });
    return {{{"job_id", id}, {"status", "queued"}}, true};
  }
  return {evaluate_work(body), false};
}

Json Workbench::evaluate_work(const Json& body) {
  std::vector<std::string> grammar_ids;
  if (body.contains("grammar_ids")) {
    grammar_ids = required_field<std::vector<std::string>>(body, "grammar_ids");
  } else {
    grammar_ids.push_back(required_field<std::string>(body, "grammar_id"));
  }
  if (grammar_ids.empty()) throw Error(ErrorCode::InvalidArgument, "no grammar to evaluate");
  const auto thresholds =
      optional_field<std::vector<double>>(body, "iou_thresholds", std::vector<double>{0.5});
  const auto truth = load_ground_truth(resolve(required_field<std::string>(body, "gt_path")));
  const DetectOptions options = json_as<DetectOptions>(body, "detection options");

  std::vector<PLCGrammar> grammars;
  ConceptRegistry registry;
  {
    std::shared_lock lock(state_mutex_);
    for (const auto& id : grammar_ids) grammars.push_back(project_.grammar(id));
    registry = project_.concept_registry();
  }
  const auto net = network();
  const auto imgs = images(optional_field<std::string>(body, "dataset_id", ""));
  std::vector<std::pair<std::string, std::vector<Detection>>> models;
  for (const auto& g : grammars) {
    models.emplace_back(g.id, detect_all(*net, g, registry, *imgs, options, config_.jobs));
  }
  return report_json(evaluate_models(models, truth, thresholds));
}

Json Workbench::job(const std::string& id) const {
  const auto record = pool_.get(id);
  if (!record) throw Error(ErrorCode::NotFound, fmt::format("no job '{}'", id));
  Json j{{"job_id", record->id},
         {"kind", record->kind},
         {"status", to_string(record->status)},
         {"progress", record->progress}};
  if (record->status == JobRecord::Status::Done) j["result"] = record->result;
  if (record->status == JobRecord::Status::Failed) {
    j["error"] = {{"code", record->error_code}, {"message", record->error_message}};
  }
  return j;
}

Json Workbench::project_json() const {
  std::shared_lock lock(state_mutex_);
  return project_to_json(project_);
}

Project Workbench::project() const {
  std::shared_lock lock(state_mutex_);
  return project_;
}

Json Workbench::new_project(const Json& body) {
  std::unique_lock lock(state_mutex_);
  Project p;
  p.id = optional_field<std::string>(body, "id", "untitled");
  p.network = project_.network;
  p.datasets = project_.datasets;
  p.created = p.modified = utc_timestamp();
  project_ = std::move(p);
  next_embedding_ = next_concept_ = next_grammar_ = 1;
  return project_to_json(project_);
}

Json Workbench::save_project(const Json& body) {
  const auto path = resolve(required_field<std::string>(body, "path"));
  const Project snapshot = project();
  netsurgeon::save_project(snapshot, path);
  return {{"project_id", snapshot.id}, {"path", path.generic_string()}};
}

Json Workbench::load_project(const Json& body) {
  const auto path = resolve(required_field<std::string>(body, "path"));
  const Json document = read_json_file(path);
  std::vector<std::string> warnings;

  std::shared_ptr<const NetworkSpec> net;
  {
    std::shared_lock lock(state_mutex_);
    net = network_;
  }
  bool loaded_network = false;
  if (!net && document.is_object() && document.contains("network")) {
    const auto manifest = document["network"].value("manifest", std::string());
    if (!manifest.empty()) {
      try {
        net = std::make_shared<const NetworkSpec>(load_network(resolve(manifest)));
        loaded_network = true;
      } catch (const Error& e) {
        warnings.push_back(fmt::format("project network not loaded: {}", e.what()));
      }
    }
  }
  std::optional<std::uint64_t> hash;
  if (net) hash = network_hash(*net);
  LoadedProject loaded = project_from_json(document, path.string(), hash);
  warnings.insert(warnings.end(), loaded.warnings.begin(), loaded.warnings.end());

  std::vector<Dataset> reopened;
  for (const auto& ref : loaded.project.datasets) {
    {
      std::shared_lock lock(state_mutex_);
      if (datasets_.count(ref.id)) continue;
    }
    try {
      Dataset ds = ingest_dataset(ref.directory, &warnings);
      if (ds.id != ref.id) {
        warnings.push_back(fmt::format("dataset '{}' changed on disk (now '{}')", ref.id, ds.id));
      }
      reopened.push_back(std::move(ds));
    } catch (const Error& e) {
      warnings.push_back(fmt::format("dataset '{}' not reopened: {}", ref.id, e.what()));
    }
  }

  std::unique_lock lock(state_mutex_);
  if (loaded_network) network_ = net;
  for (auto& ds : reopened) {
    const std::string id = ds.id;
    datasets_.try_emplace(id, std::make_unique<DatasetState>(std::move(ds)));
  }
  project_ = std::move(loaded.project);
  next_embedding_ = counter_after(project_.embeddings, "emb", [](const auto& e) -> const std::string& {
    return e->id;
  });
  next_concept_ = counter_after(project_.concepts, "concept",
                                [](const auto& c) -> const std::string& { return c.id; });
  next_grammar_ = counter_after(project_.grammars, "grammar",
                                [](const auto& g) -> const std::string& { return g.id; });
  return {{"project", project_to_json(project_)}, {"warnings", warnings}};
}

// ---- HTTP ----

namespace {

void respond(httplib::Response& res, int status, const Json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

Json request_body(const httplib::Request& req) {
  if (req.body.empty()) return Json::object();
  Json body = parse_json(req.body, "request body");
  if (!body.is_object()) throw Error(ErrorCode::InvalidArgument, "request body must be an object");
  return body;
}

int int_param(const httplib::Request& req, const char* key, int fallback) {
  if (!req.has_param(key)) return fallback;
  const std::string text = req.get_param_value(key);
  int value = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw Error(ErrorCode::InvalidArgument,
                fmt::format("query parameter '{}' must be an integer", key));
  }
  return value;
}

using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

Handler guarded(Handler fn) {
  return [fn = std::move(fn)](const httplib::Request& req, httplib::Response& res) {
    try {
      fn(req, res);
    } catch (const Error& e) {
      respond(res, http_status(e.code()), error_json(to_string(e.code()), e.what()));
    } catch (const std::exception& e) {
      respond(res, 500, error_json("Internal", e.what()));
    }
  };
}

void reply(httplib::Response& res, const Reply& r) { respond(res, r.accepted ? 202 : 200, r.body); }

}  // namespace

void register_routes(httplib::Server& server, Workbench& wb) {
  auto post = [&](const std::string& pattern, std::function<Json(const Json&)> op) {
    server.Post(pattern, guarded([op = std::move(op)](const auto& req, auto& res) {
                  respond(res, 200, op(request_body(req)));
                }));
  };
  auto post_reply = [&](const std::string& pattern, std::function<Reply(const Json&)> op) {
    server.Post(pattern, guarded([op = std::move(op)](const auto& req, auto& res) {
                  reply(res, op(request_body(req)));
                }));
  };

  server.Get("/health", guarded([&wb](const auto&, auto& res) { respond(res, 200, wb.health()); }));
  server.Get("/api/v1/health",
             guarded([&wb](const auto&, auto& res) { respond(res, 200, wb.health()); }));

  post("/api/v1/networks", [&wb](const Json& b) { return wb.add_network(b); });
  post("/api/v1/datasets", [&wb](const Json& b) { return wb.add_dataset(b); });
  server.Get(R"(/api/v1/neurons/([^/]+)/(\d+)/top)",
             guarded([&wb](const httplib::Request& req, httplib::Response& res) {
               NeuronRef neuron{req.matches[1].str(), 0};
               const std::string channel = req.matches[2].str();
               const auto [ptr, ec] = std::from_chars(
                   channel.data(), channel.data() + channel.size(), neuron.channel);
               if (ec != std::errc()) throw Error(ErrorCode::InvalidArgument, "bad channel");
               const int n = int_param(req, "n", 6);
               const std::string dataset =
                   req.has_param("dataset") ? req.get_param_value("dataset") : std::string();
               respond(res, 200, wb.top_patches(neuron, n, dataset));
             }));
  post("/api/v1/search/weights", [&wb](const Json& b) { return wb.search_weights(b); });
  post("/api/v1/search/cooccurrence", [&wb](const Json& b) { return wb.search_cooccurrence(b); });
  post_reply("/api/v1/embeddings", [&wb](const Json& b) { return wb.create_embedding(b); });
  server.Get(R"(/api/v1/embeddings/([^/]+))",
             guarded([&wb](const httplib::Request& req, httplib::Response& res) {
               respond(res, 200, wb.embedding(req.matches[1].str()));
             }));
  post("/api/v1/concepts", [&wb](const Json& b) { return wb.create_concept(b); });
  server.Get(R"(/api/v1/concepts/([^/]+)/heatmap)",
             guarded([&wb](const httplib::Request& req, httplib::Response& res) {
               const std::string image =
                   req.has_param("image") ? req.get_param_value("image") : std::string();
               const std::string dataset =
                   req.has_param("dataset") ? req.get_param_value("dataset") : std::string();
               respond(res, 200, wb.concept_heatmap(req.matches[1].str(), image, dataset));
             }));
  post("/api/v1/grammars", [&wb](const Json& b) { return wb.create_grammar(b); });
  server.Get(R"(/api/v1/grammars/([^/]+))",
             guarded([&wb](const httplib::Request& req, httplib::Response& res) {
               respond(res, 200, wb.grammar(req.matches[1].str()));
             }));
  post_reply("/api/v1/detect", [&wb](const Json& b) { return wb.detect(b); });
  post_reply("/api/v1/evaluate", [&wb](const Json& b) { return wb.evaluate(b); });
  server.Get(R"(/api/v1/jobs/([^/]+))",
             guarded([&wb](const httplib::Request& req, httplib::Response& res) {
               respond(res, 200, wb.job(req.matches[1].str()));
             }));
  server.Get(R"(/api/v1/blobs/([0-9a-f]+))",
             guarded([&wb](const httplib::Request& req, httplib::Response& res) {
               const auto bytes = wb.blob(req.matches[1].str());
               if (!bytes) {
                 throw Error(ErrorCode::NotFound,
                             fmt::format("no blob '{}'", req.matches[1].str()));
               }
               res.set_content(*bytes, "image/png");
             }));
  server.Get("/api/v1/projects/current",
             guarded([&wb](const auto&, auto& res) { respond(res, 200, wb.project_json()); }));
  post("/api/v1/projects/new", [&wb](const Json& b) { return wb.new_project(b); });
  post("/api/v1/projects/save", [&wb](const Json& b) { return wb.save_project(b); });
  post("/api/v1/projects/load", [&wb](const Json& b) { return wb.load_project(b); });

  server.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
    if (!res.body.empty()) return httplib::Server::HandlerResponse::Unhandled;
    const auto code = res.status == 404 ? to_string(ErrorCode::NotFound) : "Http";
    respond(res, res.status, error_json(code, fmt::format("{} {}: HTTP {}", req.method, req.path,
                                                          res.status)));
    return httplib::Server::HandlerResponse::Handled;
  });
}

int serve(const ServiceConfig& config) {
  std::error_code ec;
  if (!std::filesystem::is_directory(config.data_root, ec)) {
    fmt::print(stderr, "error: data root '{}' is not a readable directory\n",
               config.data_root.string());
    return 1;
  }
  // Block the stop signals before any thread starts; one thread waits for them.
  sigset_t stop_signals;
  sigemptyset(&stop_signals);
  sigaddset(&stop_signals, SIGINT);
  sigaddset(&stop_signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &stop_signals, nullptr);

  Workbench wb(config);
  httplib::Server server;
  register_routes(server, wb);
  int port = config.port;
  if (port == 0) {
    port = server.bind_to_any_port(config.host);
  } else if (!server.bind_to_port(config.host, port)) {
    port = -1;
  }
  if (port < 0) {
    fmt::print(stderr, "error: cannot listen on {}:{}\n", config.host, config.port);
    return 1;
  }
  std::atomic<bool> done{false}, signalled{false};
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&stop_signals, &sig);
    signalled = true;
    if (!done) server.stop();
  });
  fmt::print("netsurgeon {} listening on http://{}:{}\n", kServiceVersion, config.host, port);
  std::fflush(stdout);
  const bool ok = server.listen_after_bind();
  done = true;
  if (!signalled) pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  wb.shutdown();
  return ok ? 0 : 1;
}

}  // namespace netsurgeon

#include "netsurgeon/cli.hpp"

#include <fstream>
#include <ostream>
#include <sstream>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "netsurgeon/error.hpp"
#include "netsurgeon/fixture.hpp"
#include "netsurgeon/image.hpp"
#include "netsurgeon/metrics.hpp"
#include "netsurgeon/service.hpp"
#include "netsurgeon/stats_store.hpp"

namespace netsurgeon {

namespace {

namespace fs = std::filesystem;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

NeuronRef parse_neuron(const std::string& text) {
  const auto colon = text.rfind(':');
  if (colon == std::string::npos || colon == 0) {
    throw UsageError(fmt::format("neuron '{}' is not of the form layer:channel", text));
  }
  try {
    std::size_t used = 0;
    const int channel = std::stoi(text.substr(colon + 1), &used);
    if (used != text.size() - colon - 1 || channel < 0) throw std::invalid_argument(text);
    return {text.substr(0, colon), channel};
  } catch (const std::logic_error&) {
    throw UsageError(fmt::format("neuron '{}' is not of the form layer:channel", text));
  }
}

std::vector<ImageRecord> load_directory(const fs::path& dir, int jobs, std::ostream& err) {
  std::vector<std::string> warnings;
  const Dataset ds = ingest_dataset(dir, &warnings);
  for (const auto& w : warnings) err << "warning: " << w << '\n';
  return load_images(ds, jobs);
}

ImageRecord load_image_file(const fs::path& path) {
  return {path.stem().string(), read_png(path)};
}

// Options shared by the subcommands; each subcommand binds the ones it uses.
struct Options {
  std::string network;
  std::string images;
  std::vector<std::string> image_files;
  std::string neuron;
  std::string out;
  int n = 6;
  int cap = kDefaultPerImageCap;
  int jobs = 1;
  std::string stats_out;
  // search
  std::string direction = "inputs";
  int top_k = 100;
  // embed
  std::string method = "pca";
  std::uint64_t seed = 0;
  std::string id;
  double perplexity = 30.0;
  int iterations = 1000;
  int epochs = ParametricOptions{}.epochs;
  // concept
  std::string embedding;
  std::string coefficients;
  // grammar / detect
  std::string spec;
  std::string grammar;
  std::vector<std::string> concepts;
  std::optional<double> threshold;
  std::optional<int> scales;
  std::optional<double> nms_iou;
  std::optional<std::string> model;
  // eval
  std::vector<std::string> detections;
  std::string gt;
  std::vector<double> iou_thresholds{0.5};
  // fixture
  std::uint64_t fixture_seed = 7;
  // serve
  std::string config;
  std::optional<int> port;
  std::optional<std::string> host;
  std::optional<std::string> data_root;
  std::optional<int> max_jobs;
};

int cmd_mine(const Options& o, std::ostream& out, std::ostream& err) {
  const NetworkSpec net = load_network(o.network);
  const auto images = load_directory(o.images, o.jobs, err);
  if (!o.stats_out.empty()) {
    precompute_stats(net, images, o.n, o.cap, o.jobs).save(o.stats_out);
  }
  const auto patches = mine_top_activations(net, images, parse_neuron(o.neuron), o.n, o.cap, o.jobs);
  out << format_patches(patches);
  return 0;
}

int cmd_search(const Options& o, std::ostream& out, std::ostream& err) {
  const NetworkSpec net = load_network(o.network);
  const NeuronRef neuron = parse_neuron(o.neuron);
  std::vector<RankedNeuron> ranked;
  if (o.direction == "cooccurrence") {
    if (o.images.empty()) throw UsageError("--images is required for cooccurrence search");
    ranked = cooccurrence_search(net, load_directory(o.images, o.jobs, err), neuron, o.top_k,
                                 o.cap, o.jobs);
  } else {
    ranked = weight_search(net, neuron,
                           o.direction == "inputs" ? SearchDirection::Inputs
                                                   : SearchDirection::Consumers);
  }
  out << format_ranked(ranked);
  return 0;
}

int cmd_embed(const Options& o, std::ostream& out, std::ostream& err) {
  const NetworkSpec net = load_network(o.network);
  const auto images = load_directory(o.images, o.jobs, err);
  EmbeddingRequest request;
  request.neuron = parse_neuron(o.neuron);
  request.method = parse_embedding_method(o.method);
  request.n = o.n;
  request.seed = o.seed;
  request.perplexity = o.perplexity;
  request.tsne_iterations = o.iterations;
  request.parametric.epochs = o.epochs;
  request.per_image_cap = o.cap;
  request.jobs = o.jobs;
  EmbeddingRun run = fit_embedding(net, images, request);
  for (const auto& w : run.warnings) err << "warning: " << w << '\n';
  run.basis.id = o.id.empty() ? fs::path(o.out).stem().string() : o.id;
  write_json_file(o.out, run.basis);
  out << format_points(run.basis);
  return 0;
}

int cmd_concept(const Options& o, std::ostream& out, std::ostream&) {
  auto basis = std::make_shared<const EmbeddingBasis>(
      json_as<EmbeddingBasis>(read_json_file(o.embedding), "embedding file"));
  const Json coeffs = read_json_file(o.coefficients);
  const Boundary boundary = json_as<Boundary>(coeffs, "coefficients file");
  ConceptFilter cf = make_concept(basis, boundary, coeffs.value("name", std::string()));
  cf.id = o.id.empty() ? fs::path(o.out).stem().string() : o.id;
  save_concept_file(o.out, cf);
  out << concept_to_json(cf).dump(2) << '\n';
  return 0;
}

ConceptRegistry load_concepts(const std::vector<std::string>& paths) {
  ConceptRegistry registry;
  for (const auto& path : paths) {
    ConceptFilter cf = load_concept_file(path);
    const std::string id = cf.id;
    if (!registry.emplace(id, std::move(cf)).second) {
      throw Error(ErrorCode::InvalidArgument, fmt::format("concept '{}' given twice", id));
    }
  }
  return registry;
}

int cmd_grammar(const Options& o, std::ostream& out, std::ostream&) {
  const Json spec = read_json_file(o.spec);
  GrammarFile file;
  file.grammar = json_as<PLCGrammar>(spec.contains("grammar") ? spec["grammar"] : spec, "grammar");
  if (!o.id.empty()) file.grammar.id = o.id;
  if (file.grammar.id.empty()) file.grammar.id = fs::path(o.out).stem().string();
  if (spec.contains("detection")) {
    file.detection = json_as<DetectOptions>(spec["detection"], "detection options");
  }
  validate(file.grammar);
  const ConceptRegistry registry = load_concepts(o.concepts);
  std::optional<NetworkSpec> net;
  if (!o.network.empty()) net = load_network(o.network);
  for (const auto& part : file.grammar.parts) {
    if (part.source.kind == PartSource::Kind::Neuron) {
      if (net) resolve_neuron(*net, part.source.neuron);
    } else if (!registry.count(part.source.concept_id)) {
      throw Error(ErrorCode::NotFound,
                  fmt::format("part '{}' uses concept '{}', which no --concept file provides",
                              part.id, part.source.concept_id));
    }
  }
  if (!o.network.empty()) {
    const fs::path out_dir = fs::absolute(fs::path(o.out)).parent_path();
    file.network = fs::relative(fs::absolute(o.network), out_dir);
  }
  save_grammar_file(o.out, file);
  out << Json(file.grammar).dump(2) << '\n';
  return 0;
}

int cmd_detect(const Options& o, std::ostream& out, std::ostream& err) {
  const GrammarFile file = load_grammar_file(o.grammar);
  const fs::path network_path = o.network.empty() ? file.network : fs::path(o.network);
  if (network_path.empty()) throw UsageError("the grammar names no network; pass --network");
  const NetworkSpec net = load_network(network_path);
  const ConceptRegistry registry = load_concepts(o.concepts);
  DetectOptions options = file.detection;
  if (o.threshold) options.threshold = *o.threshold;
  if (o.scales) options.num_scales = *o.scales;
  if (o.nms_iou) options.nms_iou = *o.nms_iou;
  if (o.model) options.model = *o.model == "bag" ? ScoringModel::Bag : ScoringModel::Spatial;

  std::vector<ImageRecord> images;
  if (!o.images.empty()) images = load_directory(o.images, o.jobs, err);
  for (const auto& path : o.image_files) images.push_back(load_image_file(path));
  if (images.empty()) throw UsageError("give --image or --images");
  out << format_detections(detect_all(net, file.grammar, registry, images, options, o.jobs));
  return 0;
}

int cmd_eval(const Options& o, std::ostream& out, std::ostream& err) {
  const auto truth = load_ground_truth(o.gt);
  std::vector<std::pair<std::string, std::vector<Detection>>> models;
  for (const auto& path : o.detections) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::Io, fmt::format("cannot read '{}'", path));
    std::stringstream text;
    text << in.rdbuf();
    models.emplace_back(fs::path(path).stem().string(), parse_detections(text.str()));
  }
  const EvalReport report = evaluate_models(models, truth, o.iou_thresholds);
  for (const auto& w : report.warnings) err << "warning: " << w << '\n';
  out << format_report(report);
  return 0;
}

int cmd_fixture(const Options& o, std::ostream& out, std::ostream&) {
  fixture::write(fixture::make(o.fixture_seed), o.out);
  out << fmt::format("fixture written to {}\n", o.out);
  return 0;
}

int cmd_serve(const Options& o, std::ostream&, std::ostream&) {
  ServiceConfig config;
  if (!o.config.empty()) config = load_service_config(o.config);
  apply_environment(config);
  if (o.host) config.host = *o.host;
  if (o.port) config.port = *o.port;
  if (o.data_root) config.data_root = *o.data_root;
  if (o.max_jobs) config.max_jobs = *o.max_jobs;
  config.jobs = o.jobs;
  return serve(config);
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"netsurgeon: inspect, edit and compose convolution filters", "netsurgeon"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kServiceVersion);

  auto jobs = [&](CLI::App* c) {
    c->add_option("--jobs", o.jobs, "Worker threads for image processing")
        ->check(CLI::PositiveNumber);
  };
  const auto positive = CLI::PositiveNumber;

  auto* mine = app.add_subcommand("mine", "Top activations of one neuron");
  mine->add_option("--network", o.network, "Network manifest")->required();
  mine->add_option("--images", o.images, "Image directory")->required();
  mine->add_option("--neuron", o.neuron, "Neuron as layer:channel")->required();
  mine->add_option("--n", o.n, "Patches to report")->check(positive);
  mine->add_option("--cap", o.cap, "Patches per image")->check(positive);
  mine->add_option("--save-stats", o.stats_out, "Also write a stats store for every neuron");
  jobs(mine);

  auto* search = app.add_subcommand("search", "Related neurons by weight or co-occurrence");
  search->add_option("--network", o.network, "Network manifest")->required();
  search->add_option("--neuron", o.neuron, "Neuron as layer:channel")->required();
  search->add_option("--direction", o.direction, "inputs, consumers or cooccurrence")
      ->check(CLI::IsMember({"inputs", "consumers", "cooccurrence"}));
  search->add_option("--images", o.images, "Image directory (cooccurrence)");
  search->add_option("--top-k", o.top_k, "Top activations considered")->check(positive);
  search->add_option("--cap", o.cap, "Patches per image")->check(positive);
  jobs(search);

  auto* embed = app.add_subcommand("embed", "Fit a 2-D embedding of a neuron's inputs");
  embed->add_option("--network", o.network, "Network manifest")->required();
  embed->add_option("--images", o.images, "Image directory")->required();
  embed->add_option("--neuron", o.neuron, "Neuron as layer:channel")->required();
  embed->add_option("--method", o.method, "pca or tsne")
      ->check(CLI::IsMember({"pca", "tsne"}));
  embed->add_option("--n", o.n, "Patches embedded")->check(positive);
  embed->add_option("--seed", o.seed, "Random seed")->required();
  embed->add_option("--out", o.out, "Embedding file to write")->required();
  embed->add_option("--id", o.id, "Embedding id (default: file stem)");
  embed->add_option("--perplexity", o.perplexity, "t-SNE perplexity")->check(positive);
  embed->add_option("--iterations", o.iterations, "t-SNE iterations")->check(positive);
  embed->add_option("--epochs", o.epochs, "Parametric map training epochs")->check(positive);
  embed->add_option("--cap", o.cap, "Patches per image")->check(positive);
  jobs(embed);

  auto* concept_cmd = app.add_subcommand("concept", "Create a concept from boundary coefficients");
  concept_cmd->add_option("--embedding", o.embedding, "Embedding file")->required();
  concept_cmd
      ->add_option("--coefficients", o.coefficients,
                   "JSON file with alpha1, alpha2, beta and optional name")
      ->required();
  concept_cmd->add_option("--out", o.out, "Concept file to write")->required();
  concept_cmd->add_option("--id", o.id, "Concept id (default: file stem)");

  auto* grammar = app.add_subcommand("grammar", "Create a grammar file from a spec");
  grammar->add_option("--spec", o.spec, "Grammar JSON")->required();
  grammar->add_option("--out", o.out, "Grammar file to write")->required();
  grammar->add_option("--network", o.network, "Network manifest the grammar runs on");
  grammar->add_option("--concept", o.concepts, "Concept file used by a part");
  grammar->add_option("--id", o.id, "Grammar id (default: spec id or file stem)");

  auto* detect = app.add_subcommand("detect", "Run a grammar over images");
  detect->add_option("--grammar", o.grammar, "Grammar file")->required();
  detect->add_option("--image", o.image_files, "PNG image");
  detect->add_option("--images", o.images, "Image directory");
  detect->add_option("--network", o.network, "Override the grammar's network");
  detect->add_option("--concept", o.concepts, "Concept file used by a part");
  detect->add_option("--threshold", o.threshold, "Score threshold");
  detect->add_option("--scales", o.scales, "Pyramid levels")->check(positive);
  detect->add_option("--nms-iou", o.nms_iou, "NMS overlap")->check(CLI::Range(0.0, 1.0));
  detect->add_option("--model", o.model, "spatial or bag")
      ->check(CLI::IsMember({"spatial", "bag"}));
  jobs(detect);

  auto* eval = app.add_subcommand("eval", "Average precision of detection files");
  eval->add_option("--detections", o.detections, "Detection file (one model each)")
      ->required();
  eval->add_option("--gt", o.gt, "Ground-truth file")->required();
  eval->add_option("--iou", o.iou_thresholds, "IoU thresholds")
      ->delimiter(',')
      ->check(CLI::Range(0.0, 1.0));

  auto* fix = app.add_subcommand("fixture", "Write the synthetic bar-pair fixture");
  fix->add_option("--out", o.out, "Output directory")->required();
  fix->add_option("--seed", o.fixture_seed, "Fixture seed")->capture_default_str();

  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP service");
  serve_cmd->add_option("--config", o.config, "JSON config file");
  serve_cmd->add_option("--host", o.host, "Listen address");
  serve_cmd->add_option("--port", o.port, "Port (0 picks a free one)")->check(CLI::Range(0, 65535));
  serve_cmd->add_option("--data-root", o.data_root, "Directory relative paths resolve against");
  serve_cmd->add_option("--max-jobs", o.max_jobs, "Background job workers")->check(positive);
  jobs(serve_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    const CLI::App* target = &app;
    for (const auto* sub : app.get_subcommands()) target = sub;
    out << target->help();
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << kServiceVersion << '\n';
    return 0;
  } catch (const CLI::ParseError& e) {
    const CLI::App* target = &app;
    for (const auto* sub : app.get_subcommands()) target = sub;
    err << "error: " << e.what() << '\n' << target->help();
    return 2;
  }

  try {
    if (mine->parsed()) return cmd_mine(o, out, err);
    if (search->parsed()) return cmd_search(o, out, err);
    if (embed->parsed()) return cmd_embed(o, out, err);
    if (concept_cmd->parsed()) return cmd_concept(o, out, err);
    if (grammar->parsed()) return cmd_grammar(o, out, err);
    if (detect->parsed()) return cmd_detect(o, out, err);
    if (eval->parsed()) return cmd_eval(o, out, err);
    if (fix->parsed()) return cmd_fixture(o, out, err);
    if (serve_cmd->parsed()) return cmd_serve(o, out, err);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    err << "error: " << to_string(e.code()) << ": " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace netsurgeon

#include <csignal>
#include <iostream>

#include "CLI11.hpp"
#include "scarceops/classifier.hpp"
#include "scarceops/service.hpp"
#include "scarceops/svg_plot.hpp"

namespace so = scarceops;
using so::json;

namespace {

struct Cli {
  std::string store_root;
  bool json_out = false;

  so::Stores stores() {
    if (store_root.empty())
      throw so::UsageError(
          "no store root: pass --store or set SCARCEOPS_STORE");
    return so::Stores(store_root);
  }

  // human summary on stderr; machine JSON on stdout when --json
  void emit(const json& machine, const std::string& human) const {
    std::cerr << human << "\n";
    if (json_out) std::cout << machine.dump() << "\n";
  }
};

std::pair<std::string, int> parse_dataset_ref(const std::string& ref) {
  const auto at = ref.find("@v");
  if (at == std::string::npos) return {ref, -1};
  return {ref.substr(0, at), std::stoi(ref.substr(at + 2))};
}

so::nn::TensorPtr concat_images(const std::vector<so::nn::TensorPtr>& parts) {
  int n = 0;
  for (const auto& p : parts) n += p->dim(0);
  if (n == 0) throw so::ValidationError("no images collected");
  auto out = so::nn::Tensor::zeros({n, 3, 32, 32});
  size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p->data.begin(), p->data.end(), out->data.begin() + off);
    off += p->numel();
  }
  return out;
}

void cmd_dataset_import(Cli& cli, const std::string& npz,
                        const std::string& name, const std::string& kind,
                        bool resize) {
  auto stores = cli.stores();
  so::NpzImportOptions opts;
  opts.allow_resize = resize;
  so::ImageContainer c = so::import_npz(npz, opts);
  const std::string dataset_name = name.empty() ? c.name : name;
  auto r = stores.datasets.register_container(c, dataset_name, kind,
                                              "imported from " + npz);
  cli.emit({{"dataset_id", r.dataset_id},
            {"version", r.version},
            {"content_hash", r.content_hash},
            {"images", r.image_count()}},
           "registered " + r.dataset_id + "@v" + std::to_string(r.version) +
               " (" + std::to_string(r.image_count()) + " images)");
}

void cmd_dataset_register(Cli& cli, const std::string& dir,
                          const std::string& name, const std::string& kind) {
  auto stores = cli.stores();
  so::ImageContainer c = so::ImageContainer::load_dir(dir);
  const std::string dataset_name = name.empty() ? c.name : name;
  auto r = stores.datasets.register_container(c, dataset_name, kind,
                                              "registered from " + dir);
  cli.emit({{"dataset_id", r.dataset_id},
            {"version", r.version},
            {"content_hash", r.content_hash}},
           "registered " + r.dataset_id + "@v" + std::to_string(r.version));
}

void cmd_dataset_list(Cli& cli) {
  auto stores = cli.stores();
  json out = json::array();
  std::string human;
  for (const auto& r : stores.datasets.list()) {
    out.push_back(r.to_json());
    human += r.dataset_id + "@v" + std::to_string(r.version) + "  " +
             std::to_string(r.image_count()) + " images, " +
             std::to_string(r.class_labels.size()) + " classes" +
             (r.has_fingerprints ? ", fingerprinted" : "") + "\n";
  }
  if (human.empty()) human = "(no datasets registered)\n";
  human.pop_back();
  cli.emit(out, human);
}

void cmd_embedder_train(Cli& cli, const std::string& preset, int latent,
                        int epochs, int batch, double lr, uint64_t seed,
                        std::vector<std::string> dataset_refs) {
  auto stores = cli.stores();
  if (dataset_refs.empty())
    for (const auto& r : stores.datasets.list())
      if (r.version == stores.datasets.latest_version(r.dataset_id))
        dataset_refs.push_back(r.dataset_id);

  std::vector<so::nn::TensorPtr> train_parts, val_parts;
  for (const auto& ref : dataset_refs) {
    auto [id, version] = parse_dataset_ref(ref);
    so::ImageContainer c = stores.datasets.load_container(id, version);
    if (auto it = c.splits.find("train"); it != c.splits.end() && it->second.count())
      train_parts.push_back(c.to_tensor(&it->second));
    if (auto it = c.splits.find("val"); it != c.splits.end() && it->second.count())
      val_parts.push_back(c.to_tensor(&it->second));
  }
  auto train_images = concat_images(train_parts);
  so::nn::TensorPtr val_images =
      val_parts.empty() ? nullptr : concat_images(val_parts);

  so::AutoencoderConfig cfg;
  cfg.preset = preset;
  cfg.latent_dim = latent;
  cfg.epochs = epochs;
  cfg.batch_size = batch;
  cfg.learning_rate = static_cast<float>(lr);
  cfg.seed = seed;
  so::Autoencoder ae = so::Autoencoder::build(cfg);
  auto report = ae.train(train_images, val_images);
  const std::string hash = stores.save_embedder(ae);
  cli.emit({{"embedder_version", hash},
            {"train_loss", report.train_loss},
            {"val_loss", report.val_loss},
            {"best_epoch", report.best_epoch}},
           "trained " + preset + " embedder on " +
               std::to_string(train_images->dim(0)) + " images, " +
               std::to_string(epochs) + " epochs; final train MSE " +
               std::to_string(report.train_loss.back()) + "; checkpoint " +
               hash.substr(0, 12));
}

void cmd_embedder_fingerprint(Cli& cli, const std::string& ref) {
  auto stores = cli.stores();
  auto [id, version] = parse_dataset_ref(ref);
  if (version < 0) version = stores.datasets.latest_version(id);
  so::Autoencoder ae = stores.load_embedder();
  so::ImageContainer c = stores.datasets.load_container(id, version);
  auto fps = ae.fingerprint_images(c.to_tensor());
  std::vector<std::string> split_names(fps.size());
  for (const auto& [split, r] : c.splits)
    for (size_t i = r.begin; i < r.end; ++i) split_names[i] = split;
  auto embedding = so::dataset_embedding(fps, split_names);
  stores.datasets.attach_fingerprints(id, version, fps, embedding);
  cli.emit({{"dataset_id", id},
            {"version", version},
            {"count", embedding.count},
            {"mean_vector", embedding.mean_vector},
            {"embedder_version", embedding.embedder_version}},
           "fingerprinted " + id + "@v" + std::to_string(version) + " (" +
               std::to_string(embedding.count) + " images)");
}

void cmd_similar(Cli& cli, const std::string& ref, size_t k) {
  auto stores = cli.stores();
  auto [id, version] = parse_dataset_ref(ref);
  auto emb = stores.datasets.load_embedding(id, version);
  if (!emb)
    throw so::ValidationError("dataset " + id +
                              " has no fingerprints attached");
  json out = json::array();
  std::string human;
  for (const auto& [record, distance] : stores.datasets.nearest_datasets(*emb, k)) {
    out.push_back({{"dataset_id", record.dataset_id},
                   {"version", record.version},
                   {"distance", distance}});
    human += record.dataset_id + "@v" + std::to_string(record.version) +
             "  d=" + std::to_string(distance) + "\n";
  }
  if (!human.empty()) human.pop_back();
  cli.emit(out, human);
}

void cmd_task_create(Cli& cli, const std::string& ref,
                     const std::string& metric, const std::string& kind) {
  auto stores = cli.stores();
  auto [id, version] = parse_dataset_ref(ref);
  if (version < 0) version = stores.datasets.latest_version(id);
  stores.datasets.get(id, version);
  if (!so::metric_supported(metric, kind))
    throw so::ValidationError("metric " + metric +
                              " unsupported for task kind " + kind);
  auto t = stores.tasks.create(id, version, metric, kind);
  cli.emit({{"task_id", t.task_id}}, "created " + t.task_id + " on " + id +
                                         "@v" + std::to_string(version) +
                                         " (A_t = -inf)");
}

void cmd_task_develop(Cli& cli, const std::string& task_id, size_t k,
                      size_t trials, uint64_t seed, int retrain_epochs,
                      int finetune_epochs) {
  auto stores = cli.stores();
  so::SearchSpace space;
  space.trials = trials;
  space.seed = seed;
  space.retrain_epochs = retrain_epochs;
  space.fine_tune_epochs = finetune_epochs;
  auto result = so::develop(stores.datasets, stores.models, stores.tasks,
                            task_id, k, space);
  cli.emit({{"task_id", task_id},
            {"best_model_id", result.best_model.model_id},
            {"A_t", result.best_metric},
            {"run_ids", result.run_ids}},
           task_id + ": best model " + result.best_model.model_id +
               ", A_t = " + std::to_string(result.best_metric) + " over " +
               std::to_string(result.run_ids.size()) + " runs");
}

void cmd_task_best(Cli& cli, const std::string& task_id) {
  auto stores = cli.stores();
  stores.tasks.get(task_id);
  auto run = stores.models.best_run(task_id);  // NoModelError when A_t = -inf
  auto model = stores.models.select_best(task_id);
  cli.emit({{"task_id", task_id},
            {"model_id", model.model_id},
            {"metric_name", run.metric_name},
            {"metric_value", run.metric_value},
            {"run_id", run.run_id}},
           task_id + ": m* = " + model.model_id + " (" + run.metric_name +
               " = " + std::to_string(run.metric_value) + ")");
}

std::function<void(int)> g_signal_handler;
void handle_signal(int sig) {
  if (g_signal_handler) g_signal_handler(sig);
}

void cmd_serve(Cli& cli, int port, bool auto_ct, size_t ct_k, size_t ct_trials,
               int ct_epochs) {
  cli.stores();  // validate the root early
  so::ServiceConfig cfg;
  cfg.port = port;
  cfg.auto_ct = auto_ct;
  cfg.ct_k = ct_k;
  cfg.ct_space.trials = ct_trials;
  cfg.ct_space.retrain_epochs = ct_epochs;
  so::Service service(cli.store_root, cfg);
  if (!service.start())
    throw so::InternalError("cannot bind 127.0.0.1:" + std::to_string(port));
  cli.emit({{"port", port}, {"health", "/v1/health"}},
           "serving on 127.0.0.1:" + std::to_string(port) +
               " (Ctrl-C to stop)");
  static volatile std::sig_atomic_t stop_requested = 0;
  g_signal_handler = [](int) { stop_requested = 1; };
  std::signal(SIGINT, handle_signal);
  std::signal(SIGTERM, handle_signal);
  while (!stop_requested)
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
  service.stop();
}

void cmd_simulate_drift(Cli& cli, const std::string& task_id, double shift,
                        size_t count, uint64_t seed, bool trigger_ct,
                        size_t ct_trials, int ct_epochs) {
  auto stores = cli.stores();
  so::TaskSpec task = stores.tasks.get(task_id);
  if (!so::live_deployment(stores, task_id))
    throw so::ValidationError("task " + task_id +
                              " has no live deployment to monitor");
  so::ImageContainer data =
      stores.datasets.load_container(task.dataset_id, task.dataset_version);
  const so::SplitRange* src = nullptr;
  for (const auto* name : {"val", "test", "train"}) {
    auto it = data.splits.find(name);
    if (it != data.splits.end() && it->second.count()) {
      src = &it->second;
      break;
    }
  }
  if (!src) throw so::ValidationError("task dataset has no usable split");

  so::nn::Pcg32 rng(seed, so::nn::kStreamData);
  json alerts = json::array();
  double last_metric = 0.0;
  for (size_t i = 0; i < count; ++i) {
    const size_t idx = src->begin + rng.below(src->count());
    const so::SplitRange one{idx, idx + 1};
    auto image = data.to_tensor(&one);
    for (auto& v : image->data)
      v = std::clamp(v + static_cast<float>(shift), 0.0f, 1.0f);
    auto point = so::feedback(stores, task_id, image, data.labels[idx]);
    last_metric = point.value;
    for (const auto& a : so::check_drift_for_task(stores, task_id)) {
      alerts.push_back(a.to_json());
      if (trigger_ct) {
        so::SearchSpace space;
        space.trials = ct_trials;
        space.retrain_epochs = ct_epochs;
        space.seed = seed;
        so::CtManager ct(cli.store_root);
        const std::string cycle =
            ct.trigger(task_id, a, 1, space, /*synchronous=*/true);
        alerts.back()["ct_cycle"] = cycle;
      }
    }
  }
  cli.emit({{"task_id", task_id},
            {"fed", count},
            {"windowed_metric", last_metric},
            {"alerts", alerts}},
           "fed " + std::to_string(count) + " shifted images; " +
               std::to_string(alerts.size()) + " alert(s); windowed A_t = " +
               std::to_string(last_metric));
}

void cmd_plot_latent(Cli& cli, const std::string& out_path,
                     std::vector<std::string> dataset_refs) {
  auto stores = cli.stores();
  if (dataset_refs.empty())
    for (const auto& r : stores.datasets.list())
      if (r.has_fingerprints) dataset_refs.push_back(
          r.dataset_id + "@v" + std::to_string(r.version));
  if (dataset_refs.empty())
    throw so::ValidationError("no fingerprinted datasets to plot");

  std::vector<so::LatentSeries> series;
  for (const auto& ref : dataset_refs) {
    auto [id, version] = parse_dataset_ref(ref);
    if (version < 0) version = stores.datasets.latest_version(id);
    auto fps = stores.datasets.load_fingerprints(id, version);
    auto emb = stores.datasets.load_embedding(id, version);
    so::LatentSeries s;
    s.label = id + "@v" + std::to_string(version);
    for (const auto& fp : fps)
      if (fp.vector.size() >= 2) s.points.push_back({fp.vector[0], fp.vector[1]});
    if (emb && emb->mean_vector.size() >= 2)
      s.mean = {emb->mean_vector[0], emb->mean_vector[1]};
    series.push_back(std::move(s));
  }
  so::atomic_write_file(out_path, so::render_latent_svg(series));
  cli.emit({{"out", out_path}, {"datasets", dataset_refs.size()}},
           "wrote " + out_path + " (" + std::to_string(dataset_refs.size()) +
               " datasets)");
}

}  // namespace

int main(int argc, char** argv) {
  Cli cli;
  CLI::App app{"scarceops: fingerprint-driven MLOps for scarce image data"};
  app.require_subcommand(1);
  app.add_option("--store", cli.store_root, "store root directory")
      ->envname("SCARCEOPS_STORE");
  app.add_flag("--json", cli.json_out, "machine-readable JSON on stdout");

  std::function<void()> action;

  // dataset import|register|list
  auto* dataset = app.add_subcommand("dataset", "image database operations");
  dataset->require_subcommand(1);
  {
    auto* import = dataset->add_subcommand("import", "import an NPZ archive");
    auto npz = std::make_shared<std::string>();
    auto name = std::make_shared<std::string>();
    auto kind = std::make_shared<std::string>("classification");
    auto resize = std::make_shared<bool>(false);
    import->add_option("--npz", *npz, "NPZ file path")->required();
    import->add_option("--name", *name, "dataset name (default: file stem)");
    import->add_option("--kind", *kind, "task kind");
    import->add_flag("--resize", *resize, "nearest-neighbor resample to 32x32");
    import->callback([&, npz, name, kind, resize]() {
      action = [&, npz, name, kind, resize]() {
        cmd_dataset_import(cli, *npz, *name, *kind, *resize);
      };
    });

    auto* reg = dataset->add_subcommand("register", "register a container dir");
    auto dir = std::make_shared<std::string>();
    auto rname = std::make_shared<std::string>();
    auto rkind = std::make_shared<std::string>("classification");
    reg->add_option("--dir", *dir, "container directory")->required();
    reg->add_option("--name", *rname, "dataset name");
    reg->add_option("--kind", *rkind, "task kind");
    reg->callback([&, dir, rname, rkind]() {
      action = [&, dir, rname, rkind]() {
        cmd_dataset_register(cli, *dir, *rname, *rkind);
      };
    });

    auto* list = dataset->add_subcommand("list", "list registered datasets");
    list->callback([&]() { action = [&]() { cmd_dataset_list(cli); }; });
  }

  // embedder train|fingerprint
  auto* embedder = app.add_subcommand("embedder", "fingerprinting autoencoder");
  embedder->require_subcommand(1);
  {
    auto* train = embedder->add_subcommand(
        "train", "train (or retrain) the embedder from registered datasets");
    auto preset = std::make_shared<std::string>("tiny");
    auto latent = std::make_shared<int>(2);
    auto epochs = std::make_shared<int>(30);
    auto batch = std::make_shared<int>(32);
    auto lr = std::make_shared<double>(1e-3);
    auto seed = std::make_shared<uint64_t>(0);
    auto refs = std::make_shared<std::vector<std::string>>();
    train->add_option("--preset", *preset, "tiny | resnet18_32");
    train->add_option("--latent", *latent, "latent dimension");
    train->add_option("--epochs", *epochs);
    train->add_option("--batch", *batch);
    train->add_option("--lr", *lr);
    train->add_option("--seed", *seed);
    train->add_option("--datasets", *refs, "dataset refs (default: all)");
    train->callback([&, preset, latent, epochs, batch, lr, seed, refs]() {
      action = [&, preset, latent, epochs, batch, lr, seed, refs]() {
        cmd_embedder_train(cli, *preset, *latent, *epochs, *batch, *lr, *seed,
                           *refs);
      };
    });

    auto* fp = embedder->add_subcommand("fingerprint",
                                        "fingerprint a dataset and attach");
    auto ref = std::make_shared<std::string>();
    fp->add_option("--dataset", *ref, "dataset id[@vN]")->required();
    fp->callback([&, ref]() {
      action = [&, ref]() { cmd_embedder_fingerprint(cli, *ref); };
    });
  }

  // similar
  {
    auto* similar = app.add_subcommand("similar", "nearest datasets in latent space");
    auto ref = std::make_shared<std::string>();
    auto k = std::make_shared<size_t>(5);
    similar->add_option("--dataset", *ref, "dataset id[@vN]")->required();
    similar->add_option("-k", *k, "neighbors to report");
    similar->callback([&, ref, k]() {
      action = [&, ref, k]() { cmd_similar(cli, *ref, *k); };
    });
  }

  // task create|develop|best
  auto* task = app.add_subcommand("task", "image-analysis tasks");
  task->require_subcommand(1);
  {
    auto* create = task->add_subcommand("create", "register a task (I, A, T_a)");
    auto ref = std::make_shared<std::string>();
    auto metric = std::make_shared<std::string>("accuracy");
    auto kind = std::make_shared<std::string>("classification");
    create->add_option("--dataset", *ref, "dataset id[@vN]")->required();
    create->add_option("--metric", *metric, "accuracy | macro_f1 | neg_mse");
    create->add_option("--kind", *kind, "classification | reconstruction");
    create->callback([&, ref, metric, kind]() {
      action = [&, ref, metric, kind]() {
        cmd_task_create(cli, *ref, *metric, *kind);
      };
    });

    auto* dev = task->add_subcommand("develop", "rank strategies and run AutoML");
    auto id = std::make_shared<std::string>();
    auto k = std::make_shared<size_t>(1);
    auto trials = std::make_shared<size_t>(8);
    auto seed = std::make_shared<uint64_t>(0);
    auto repochs = std::make_shared<int>(30);
    auto fepochs = std::make_shared<int>(5);
    dev->add_option("--task", *id)->required();
    dev->add_option("-k", *k, "top-k plans to execute");
    dev->add_option("--trials", *trials);
    dev->add_option("--seed", *seed);
    dev->add_option("--retrain-epochs", *repochs);
    dev->add_option("--finetune-epochs", *fepochs);
    dev->callback([&, id, k, trials, seed, repochs, fepochs]() {
      action = [&, id, k, trials, seed, repochs, fepochs]() {
        cmd_task_develop(cli, *id, *k, *trials, *seed, *repochs, *fepochs);
      };
    });

    auto* best = task->add_subcommand("best", "show m* for a task");
    auto bid = std::make_shared<std::string>();
    best->add_option("--task", *bid)->required();
    best->callback([&, bid]() {
      action = [&, bid]() { cmd_task_best(cli, *bid); };
    });
  }

  // serve
  {
    auto* serve = app.add_subcommand("serve", "HTTP service + monitor");
    auto port = std::make_shared<int>(8080);
    auto no_auto_ct = std::make_shared<bool>(false);
    auto ct_k = std::make_shared<size_t>(1);
    auto ct_trials = std::make_shared<size_t>(2);
    auto ct_epochs = std::make_shared<int>(5);
    serve->add_option("--port", *port);
    serve->add_flag("--no-auto-ct", *no_auto_ct,
                    "alerts do not trigger continuous training");
    serve->add_option("--ct-k", *ct_k, "plans per CT cycle");
    serve->add_option("--ct-trials", *ct_trials, "trials per CT plan");
    serve->add_option("--ct-epochs", *ct_epochs, "retrain epochs per CT trial");
    serve->callback([&, port, no_auto_ct, ct_k, ct_trials, ct_epochs]() {
      action = [&, port, no_auto_ct, ct_k, ct_trials, ct_epochs]() {
        cmd_serve(cli, *port, !*no_auto_ct, *ct_k, *ct_trials, *ct_epochs);
      };
    });
  }

  // monitor simulate-drift
  auto* monitor = app.add_subcommand("monitor", "monitoring utilities");
  monitor->require_subcommand(1);
  {
    auto* sim = monitor->add_subcommand(
        "simulate-drift", "feed brightness-shifted feedback into the monitor");
    auto id = std::make_shared<std::string>();
    auto shift = std::make_shared<double>(0.5);
    auto count = std::make_shared<size_t>(200);
    auto seed = std::make_shared<uint64_t>(0);
    auto trigger = std::make_shared<bool>(false);
    auto ct_trials = std::make_shared<size_t>(2);
    auto ct_epochs = std::make_shared<int>(5);
    sim->add_option("--task", *id)->required();
    sim->add_option("--shift", *shift, "brightness shift in [0,1]");
    sim->add_option("--count", *count, "feedback samples to send");
    sim->add_option("--seed", *seed);
    sim->add_flag("--trigger-ct", *trigger, "run CT synchronously on alert");
    sim->add_option("--ct-trials", *ct_trials);
    sim->add_option("--ct-epochs", *ct_epochs);
    sim->callback([&, id, shift, count, seed, trigger, ct_trials, ct_epochs]() {
      action = [&, id, shift, count, seed, trigger, ct_trials, ct_epochs]() {
        cmd_simulate_drift(cli, *id, *shift, *count, *seed, *trigger,
                           *ct_trials, *ct_epochs);
      };
    });
  }

  // plot latent
  auto* plot = app.add_subcommand("plot", "figures");
  plot->require_subcommand(1);
  {
    auto* latent = plot->add_subcommand("latent", "latent-space scatter SVG");
    auto out = std::make_shared<std::string>("latent.svg");
    auto refs = std::make_shared<std::vector<std::string>>();
    latent->add_option("--out", *out, "output SVG path");
    latent->add_option("--datasets", *refs, "dataset refs (default: all)");
    latent->callback([&, out, refs]() {
      action = [&, out, refs]() { cmd_plot_latent(cli, *out, *refs); };
    });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << json{{"error", {{"code", 2}, {"message", e.what()}}}}.dump()
              << "\n";
    return 2;
  }

  try {
    if (action) action();
    return 0;
  } catch (const so::Error& e) {
    std::cerr << json{{"error",
                       {{"code", e.exit_code()}, {"message", e.what()}}}}
                     .dump()
              << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << json{{"error", {{"code", 5}, {"message", e.what()}}}}.dump()
              << "\n";
    return 5;
  }
}

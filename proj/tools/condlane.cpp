#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "condlane/overlay.hpp"
#include "condlane/pipeline.hpp"

namespace fs = std::filesystem;
using namespace condlane;

namespace {

Json lane_json(const LanePolyline& lane) {
  Json pts = Json::array();
  for (const auto& p : lane.points) pts.push_back({p.x, p.y});
  return pts;
}

void write_json(const fs::path& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::unique_ptr<CondLaneModel<float>> model_from_checkpoint(const std::string& path, Json* config_out = nullptr) {
  const Json cfg = read_checkpoint_config(path);
  if (!cfg.contains("model")) throw FormatError(path + ": checkpoint config has no model section");
  auto model = std::make_unique<CondLaneModel<float>>(model_from_json(cfg.at("model")), 0);
  load_checkpoint(path, model->store());
  if (config_out) *config_out = cfg;
  return model;
}

void require_same_canvas(const ModelConfig& m, const ImageSpec& data, const std::string& what) {
  if (m.image.height != data.height || m.image.width != data.width) {
    throw ConfigError(what + " is " + std::to_string(data.height) + "x" + std::to_string(data.width) +
                      " but the checkpoint model expects " + std::to_string(m.image.height) + "x" +
                      std::to_string(m.image.width));
  }
}

// ---- gen-data ---------------------------------------------------------------

struct GenArgs {
  std::string config, out;
  int count = 0;
  bool force = false;
  std::optional<std::uint64_t> seed;
};

int cmd_gen_data(const GenArgs& a) {
  SceneConfig scene = a.config.empty() ? SceneConfig{} : load_config(a.config).data.scene;
  if (a.seed) scene.seed = *a.seed;
  const Json manifest = write_dataset(a.out, scene, a.count, a.force);
  std::cout << Json{{"event", "gen-data"}, {"out", a.out}, {"count", a.count}, {"categories", manifest.at("categories")}}.dump()
            << '\n';
  return 0;
}

// ---- train ------------------------------------------------------------------

struct TrainArgs {
  std::string config, dataset, out, resume;
};

int cmd_train(const TrainArgs& a) {
  RunConfig cfg = load_config(a.config);
  if (!a.dataset.empty()) cfg.data.dataset = a.dataset;
  if (!a.out.empty()) cfg.data.output = a.out;
  if (cfg.data.dataset.empty() || cfg.data.output.empty()) throw ConfigError("data.dataset and data.output are required");
  const Dataset ds = open_dataset(cfg.data.dataset);
  require_same_canvas(cfg.model, ds.scene.image, "dataset " + cfg.data.dataset);
  const auto data = load_all(ds);

  const fs::path run(cfg.data.output);
  fs::create_directories(run);
  const Json snapshot = to_json(cfg);
  write_json(run / "config.json", snapshot);

  CondLaneModel<float> model(cfg.model, cfg.train.seed);
  Trainer<float> trainer(model, cfg.train, data);
  if (!a.resume.empty()) {
    const Json stored = read_checkpoint_config(a.resume);
    if (stored.contains("model") && stored.at("model") != snapshot.at("model")) {
      throw ConfigError("checkpoint " + a.resume + " was written for a different model configuration");
    }
    trainer.resume(a.resume);
  }

  std::ofstream log(run / "train.log.jsonl", a.resume.empty() ? std::ios::trunc : std::ios::app);
  const auto t0 = std::chrono::steady_clock::now();
  trainer.fit(run, snapshot, [&](const StepLog& s) {
    Json j = to_json(s);
    j["elapsed_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log << j.dump() << '\n';
    log.flush();
  });

  const Evaluation ev = evaluate(model, data, MatchConfig::for_canvas(cfg.model.image), cfg.model.proposal_threshold);
  Json metrics = to_json(ev);
  metrics["step"] = trainer.step();
  metrics["split"] = "train";
  log << Json{{"event", "eval"}, {"step", trainer.step()}, {"f1", ev.report.scores().f1}}.dump() << '\n';

  Json checkpoints = Json::array();
  if (fs::exists(run / "checkpoints")) {
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(run / "checkpoints")) names.push_back("checkpoints/" + e.path().filename().string());
    std::sort(names.begin(), names.end());
    for (auto& n : names) checkpoints.push_back(n);
  }
  Json history = Json::array();
  if (std::ifstream prev(run / "run.json"); prev && !a.resume.empty()) {
    const Json old = Json::parse(prev, nullptr, false);
    if (old.is_object() && old.contains("metrics")) history = old.at("metrics");
  }
  history.push_back(metrics);
  write_json(run / "run.json", Json{{"config", snapshot},
                                    {"seed", cfg.train.seed},
                                    {"dataset", cfg.data.dataset},
                                    {"latest", "latest.ckpt"},
                                    {"checkpoints", checkpoints},
                                    {"metrics", history}});
  std::cout << Json{{"event", "train"}, {"steps", trainer.step()}, {"train_f1", ev.report.scores().f1}}.dump() << '\n';
  return 0;
}

// ---- eval -------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint, dataset, out;
  double iou = 0.5;
  std::optional<double> threshold;
  bool labels_as_predictions = false;
  double tusimple_tolerance = 20.0;  // pixels on a 1280-wide frame
};

int cmd_eval(const EvalArgs& a) {
  const Dataset ds = open_dataset(a.dataset);
  const auto data = load_all(ds);
  const MatchConfig mc = MatchConfig::for_canvas(ds.scene.image, a.iou);

  std::vector<std::vector<LanePolyline>> predictions;
  Json report{{"dataset", a.dataset}};
  if (a.labels_as_predictions) {
    for (const auto& s : data) predictions.push_back(s.lanes);
    report["predictions"] = "labels";
  } else {
    if (a.checkpoint.empty()) throw ConfigError("--checkpoint is required unless --labels-as-predictions is given");
    auto model = model_from_checkpoint(a.checkpoint);
    require_same_canvas(model->config(), ds.scene.image, "dataset " + a.dataset);
    std::vector<const Image*> images;
    for (const auto& s : data) images.push_back(&s.image);
    const double thr = a.threshold.value_or(model->config().proposal_threshold);
    for (const auto& d : detect(*model, images, thr)) predictions.push_back(lanes_of(d));
    report["checkpoint"] = a.checkpoint;
    report["threshold"] = thr;
  }

  std::vector<ImageLanes> images;
  for (std::size_t i = 0; i < data.size(); ++i) images.push_back({predictions[i], data[i].lanes, data[i].category});
  const EvalReport r = match_and_score(images, mc);
  const Json scored = to_json(r);
  report["iou_threshold"] = a.iou;
  report["line_width"] = mc.line_width;
  report["images"] = data.size();
  report["overall"] = scored.at("overall");
  report["per_category"] = scored.at("per_category");

  const fs::path ts_path = ds.root / "labels" / "tusimple.json";
  if (fs::exists(ts_path)) {
    std::ifstream in(ts_path);
    const auto gts = read_tusimple(in);
    std::vector<TuSimpleRecord> preds;
    for (std::size_t i = 0; i < data.size() && i < gts.size(); ++i) {
      preds.push_back(tusimple_record(gts[i].raw_file, predictions[i], gts[i].h_samples));
    }
    const double tol = a.tusimple_tolerance * ds.scene.image.width / 1280.0;
    const TuSimpleResult t = tusimple_score(preds, gts, tol, 0.85);
    report["tusimple"] = Json{{"pixel_tolerance", tol}, {"accuracy", t.accuracy()},
                              {"fp_rate", t.fp_rate()}, {"fn_rate", t.fn_rate()}, {"f1", t.f1()}};
  }

  if (a.out.empty()) {
    std::cout << report.dump(2) << '\n';
  } else {
    if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
    write_json(a.out, report);
    std::cout << Json{{"event", "eval"}, {"report", a.out}, {"f1", scores_from(r.total).f1}}.dump() << '\n';
  }
  return 0;
}

// ---- infer ------------------------------------------------------------------

struct InferArgs {
  std::string checkpoint, out;
  std::vector<std::string> images;
  std::optional<double> threshold;
};

int cmd_infer(const InferArgs& a) {
  auto model = model_from_checkpoint(a.checkpoint);
  const double thr = a.threshold.value_or(model->config().proposal_threshold);
  const GridSpec& pg = model->proposal_grid();
  fs::create_directories(a.out);
  int written = 0;
  for (const auto& path : a.images) {
    Image img;
    try {
      img = read_ppm(path);
      require_same_canvas(model->config(), {img.height, img.width}, "image " + path);
    } catch (const Error& e) {
      std::cerr << "warning: skipping " << path << ": " << e.what() << '\n';
      continue;
    }
    const auto det = detect(*model, {&img}, thr).front();
    std::vector<OverlayLane> lanes;
    Json items = Json::array();
    for (const auto& d : det) {
      const double mx = (d.proposal_x + 0.5) * pg.cell_width(), my = (d.proposal_y + 0.5) * pg.cell_height();
      lanes.push_back({d.lane, mx, my});
      items.push_back(Json{{"score", d.score},
                           {"proposal", Json{{"x", d.proposal_x}, {"y", d.proposal_y}}},
                           {"step", d.step},
                           {"points", lane_json(d.lane)}});
    }
    const std::string stem = fs::path(path).stem().string();
    write_ppm((fs::path(a.out) / (stem + ".overlay.ppm")).string(), render_overlay(img, lanes));
    write_json(fs::path(a.out) / (stem + ".json"),
               Json{{"image", path}, {"threshold", thr}, {"count", det.size()}, {"lanes", items}});
    ++written;
  }
  std::cout << Json{{"event", "infer"}, {"inputs", a.images.size()}, {"written", written}}.dump() << '\n';
  return written == 0 && !a.images.empty() ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conditional lane detection: synthetic data, training, evaluation and inference"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen-data", "Generate a synthetic lane dataset");
  g->add_option("--config", gen.config, "Run config JSON (uses data.scene)")->check(CLI::ExistingFile);
  g->add_option("--out", gen.out, "Output dataset directory")->required();
  g->add_option("--count", gen.count, "Number of scenes")->required()->check(CLI::NonNegativeNumber);
  g->add_option("--seed", gen.seed, "Override data.scene.seed");
  g->add_flag("--force", gen.force, "Replace an existing dataset in a non-empty directory");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model; writes checkpoints, train.log.jsonl and run.json");
  t->add_option("--config", tr.config, "Run config JSON")->required()->check(CLI::ExistingFile);
  t->add_option("--dataset", tr.dataset, "Override data.dataset");
  t->add_option("--out", tr.out, "Override data.output (run directory)");
  t->add_option("--resume", tr.resume, "Checkpoint to resume from")->check(CLI::ExistingFile);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Score a checkpoint on a dataset");
  e->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->check(CLI::ExistingFile);
  e->add_option("--dataset", ev.dataset, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  e->add_option("--out", ev.out, "Report JSON path (stdout when omitted)");
  e->add_option("--iou", ev.iou, "IoU threshold for a true positive")->check(CLI::Range(0.0, 1.0));
  e->add_option("--threshold", ev.threshold, "Proposal threshold (default: from the checkpoint)");
  e->add_option("--tusimple-tolerance", ev.tusimple_tolerance, "Point tolerance in pixels at 1280 width");
  e->add_flag("--labels-as-predictions", ev.labels_as_predictions, "Score the labels against themselves");

  InferArgs in;
  auto* i = app.add_subcommand("infer", "Detect lanes and write overlay images");
  i->add_option("--checkpoint", in.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  i->add_option("--out", in.out, "Output directory")->required();
  i->add_option("--threshold", in.threshold, "Proposal threshold (default: from the checkpoint)");
  i->add_option("images", in.images, "Input PPM images")->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (g->parsed()) return cmd_gen_data(gen);
    if (t->parsed()) return cmd_train(tr);
    if (e->parsed()) return cmd_eval(ev);
    if (i->parsed()) return cmd_infer(in);
  } catch (const ConfigError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 2;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 1;
  }
  return 0;
}

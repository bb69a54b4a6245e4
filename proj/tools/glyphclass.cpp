#include <malloc.h>

#include <charconv>
#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "glyphclass/checkpoint.hpp"
#include "glyphclass/error.hpp"
#include "glyphclass/metrics.hpp"
#include "glyphclass/synth.hpp"
#include "glyphclass/training.hpp"

namespace gc = glyphclass;

namespace {

// One line a script can split on spaces: error kind=<kind> message="<text>".
int report(std::string_view kind, std::string_view message, int code) {
  std::string escaped;
  for (char ch : message) {
    if (ch == '"' || ch == '\\') escaped += '\\';
    escaped += ch == '\n' ? ' ' : ch;
  }
  std::cerr << "error kind=" << kind << " message=\"" << escaped << "\"\n";
  return code;
}

std::optional<std::size_t> parse_max_len(const std::string& text) {
  if (text == "unbounded") return std::nullopt;
  std::size_t v = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc{} || res.ptr != text.data() + text.size() || v == 0)
    gc::fail(gc::ErrorKind::Parameter, "max-len must be a positive integer or 'unbounded', got '" + text + "'");
  return v;
}

std::optional<double> parse_beta(const std::string& text) {
  if (text == "off") return std::nullopt;
  double v = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc{} || res.ptr != text.data() + text.size())
    gc::fail(gc::ErrorKind::Parameter, "beta must be a number in [0,1) or 'off', got '" + text + "'");
  return v;
}

// Reads flat key = value files and files every key under the subcommand being
// run, so the file uses the same names as that subcommand's flags.
class SubcommandConfig : public CLI::ConfigTOML {
 public:
  explicit SubcommandConfig(const CLI::App* app) : app_(app) {}

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    auto items = CLI::ConfigTOML::from_config(input);
    const auto subs = app_->get_subcommands();
    if (!subs.empty())
      for (auto& item : items) item.parents.insert(item.parents.begin(), subs.front()->get_name());
    return items;
  }

 private:
  const CLI::App* app_;
};

struct TrainArgs {
  gc::train::TrainConfig config;
  std::string classifier = "bigru";
  std::string max_len = "unbounded";
  std::string beta = "0.99";
  std::string pooling = "top";
  bool unstratified = false;
  bool isolated_forms = false;
  bool split_marks = false;
  bool unnormalized_weights = false;
  std::string resume;
};

void add_train_options(CLI::App& cmd, TrainArgs& a) {
  auto& c = a.config;
  cmd.fallthrough();
  cmd.add_option("--dataset", c.dataset, "label<TAB>text file");
  cmd.add_option("--atlas", c.atlas, "glyph atlas file");
  cmd.add_option("--classifier", a.classifier, "clcnn or bigru")->capture_default_str();
  cmd.add_option("--max-len", a.max_len, "clusters per document, or 'unbounded'")->capture_default_str();
  cmd.add_option("--batch-size", c.batch_size)->capture_default_str();
  cmd.add_option("--lr", c.lr)->capture_default_str();
  cmd.add_option("--beta", a.beta, "class-balance beta in [0,1), or 'off'")->capture_default_str();
  cmd.add_option("--wildcard-ratio", c.wildcard_ratio)->capture_default_str();
  cmd.add_option("--epochs", c.epochs)->capture_default_str();
  cmd.add_option("--seed", c.seed)->capture_default_str();
  cmd.add_option("--checkpoint-dir", c.checkpoint_dir)->capture_default_str();
  cmd.add_option("--eval-every", c.eval_every, "evaluate and checkpoint every N epochs")->capture_default_str();
  cmd.add_option("--threads", c.threads, "workers for document encoding")->capture_default_str();
  cmd.add_option("--test-fraction", c.test_fraction)->capture_default_str();
  cmd.add_option("--val-fraction", c.val_fraction, "hold out part of the training split for tuning")
      ->capture_default_str();
  cmd.add_flag("--unstratified", a.unstratified, "plain random split instead of per-class");
  cmd.add_flag("--unnormalized-weights", a.unnormalized_weights, "use raw class-balanced weights");
  cmd.add_option("--pooling", a.pooling, "BiGRU sentence pooling: top or all")->capture_default_str();
  cmd.add_option("--gru-hidden", c.gru_hidden)->capture_default_str();
  cmd.add_option("--gru-layers", c.gru_layers)->capture_default_str();
  cmd.add_flag("--isolated-forms", a.isolated_forms, "render every letter in its isolated form");
  cmd.add_flag("--split-marks", a.split_marks, "treat combining marks as separate characters");
  cmd.add_flag("--stop-when-fit", c.stop_when_fit, "stop once training accuracy reaches 100%");
  cmd.add_flag("--keep-checkpoints", c.keep_checkpoints, "keep a checkpoint per eval epoch");
  cmd.add_option("--resume", a.resume, "continue from this checkpoint (its stored settings apply)");
}

void finish_train_args(TrainArgs& a) {
  auto& c = a.config;
  c.classifier = gc::model::parse_classifier(a.classifier);
  c.max_len = parse_max_len(a.max_len);
  c.beta = parse_beta(a.beta);
  c.pooling = gc::model::parse_pooling(a.pooling);
  c.stratified = !a.unstratified;
  c.normalize_weights = !a.unnormalized_weights;
  c.shaping.contextual_forms = !a.isolated_forms;
  c.shaping.fuse_marks = !a.split_marks;
}

int run(int argc, char** argv) {
  CLI::App app("Arabic text classification from rendered character images", "glyphclass");
  app.require_subcommand(1);
  app.set_config("--config", "", "key = value file with the same keys as the train flags");
  app.config_formatter(std::make_shared<SubcommandConfig>(&app));
  app.allow_config_extras(CLI::config_extras_mode::error);

  // build-atlas
  auto* build = app.add_subcommand("build-atlas", "pack rendered glyph bitmaps into an atlas file");
  std::string glyph_dir, manifest, atlas_out;
  bool synthetic_atlas = false;
  std::uint64_t atlas_seed = 0;
  build->add_option("--glyph-dir", glyph_dir, "directory of raw 36x36 bitmaps");
  build->add_option("--manifest", manifest, "hex+hex<TAB>file per line");
  build->add_flag("--synthetic", synthetic_atlas, "procedural atlas for the synthetic corpora");
  build->add_option("--seed", atlas_seed)->capture_default_str();
  build->add_option("--out", atlas_out)->required();

  // make-synthetic
  auto* synth = app.add_subcommand("make-synthetic", "write a long-tailed synthetic corpus");
  std::size_t synth_classes = 5, synth_head = 1000, synth_tail = 10, synth_vocab = 5;
  std::uint64_t synth_seed = 0;
  std::string synth_out;
  synth->add_option("--classes", synth_classes)->capture_default_str();
  synth->add_option("--head-count", synth_head)->capture_default_str();
  synth->add_option("--tail-count", synth_tail)->capture_default_str();
  synth->add_option("--vocab-per-class", synth_vocab)->capture_default_str();
  synth->add_option("--seed", synth_seed)->capture_default_str();
  synth->add_option("--out", synth_out)->required();

  // train
  auto* train = app.add_subcommand("train", "train a classifier");
  TrainArgs targs;
  add_train_options(*train, targs);

  // eval
  auto* evalc = app.add_subcommand("eval", "score a checkpoint on its held-out test split");
  std::string eval_ckpt, eval_dataset, eval_atlas, eval_out;
  evalc->add_option("--checkpoint", eval_ckpt)->required();
  evalc->add_option("--dataset", eval_dataset, "overrides the stored dataset path");
  evalc->add_option("--atlas", eval_atlas, "overrides the stored atlas path");
  evalc->add_option("--out", eval_out, "metrics JSON file (default: stdout)");
  bool eval_majority = false;
  evalc->add_flag("--majority", eval_majority, "score the majority-class baseline on the same split instead");

  // predict
  auto* predict = app.add_subcommand("predict", "classify text");
  std::string pred_ckpt, pred_atlas, pred_text;
  predict->add_option("--checkpoint", pred_ckpt)->required();
  predict->add_option("--atlas", pred_atlas, "overrides the stored atlas path");
  predict->add_option("--text", pred_text, "text to classify (default: one document per stdin line)");

  // export-embeddings
  auto* exportc = app.add_subcommand("export-embeddings", "write the character embedding of every atlas glyph");
  std::string exp_ckpt, exp_atlas, exp_out;
  exportc->add_option("--checkpoint", exp_ckpt)->required();
  exportc->add_option("--atlas", exp_atlas, "overrides the stored atlas path");
  exportc->add_option("--out", exp_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report("usage", e.what(), 2);
  }

  if (*build) {
    gc::atlas::GlyphAtlas atlas;
    if (synthetic_atlas) {
      atlas = gc::synth::synth_atlas(atlas_seed);
    } else {
      if (glyph_dir.empty() || manifest.empty())
        gc::fail(gc::ErrorKind::Parameter, "build-atlas needs --glyph-dir and --manifest, or --synthetic");
      atlas = gc::atlas::GlyphAtlas::build(glyph_dir, manifest);
    }
    atlas.save(atlas_out);
    std::cout << nlohmann::json{{"atlas", atlas_out}, {"entries", atlas.size()}}.dump() << '\n';
  } else if (*synth) {
    const auto ds = gc::synth::synth_longtail(synth_classes, synth_head, synth_tail, synth_vocab, synth_seed);
    gc::data::write_dataset(ds, synth_out);
    std::cout << nlohmann::json{{"dataset", synth_out}, {"records", ds.size()}}.dump() << '\n';
  } else if (*train) {
    finish_train_args(targs);
    const gc::train::TrainHooks hooks{[](const gc::train::EpochRecord& r) { std::cout << r.to_json() << std::endl; }};
    gc::train::TrainResult result;
    if (!targs.resume.empty()) {
      const auto epochs = train->count("--epochs") ? std::optional<std::size_t>(targs.config.epochs) : std::nullopt;
      result = gc::train::resume_train(targs.resume, epochs, hooks);
    } else {
      if (targs.config.dataset.empty() || targs.config.atlas.empty())
        gc::fail(gc::ErrorKind::Parameter, "train needs --dataset and --atlas");
      result = gc::train::run_train(targs.config, hooks);
    }
    nlohmann::ordered_json done{{"checkpoint", result.checkpoint.string()}, {"epoch", result.state.epoch}};
    if (result.final_metrics) {
      done["micro_f"] = result.final_metrics->micro_f;
      done["macro_f"] = result.final_metrics->macro_f;
    }
    std::cout << done.dump() << '\n';
  } else if (*evalc) {
    gc::eval::Metrics metrics;
    if (eval_majority) {
      auto config = gc::ckpt::load(eval_ckpt).config;
      if (!eval_dataset.empty()) config.dataset = eval_dataset;
      const auto splits = gc::train::make_splits(gc::data::load_dataset(config.dataset), config);
      metrics = gc::eval::majority_baseline(splits.train, splits.test);
    } else {
      metrics = gc::train::run_eval(
          eval_ckpt, eval_dataset.empty() ? std::nullopt : std::optional<std::filesystem::path>(eval_dataset),
          eval_atlas.empty() ? std::nullopt : std::optional<std::filesystem::path>(eval_atlas));
    }
    if (eval_out.empty()) {
      std::cout << gc::eval::metrics_json(metrics) << '\n';
    } else {
      gc::eval::write_metrics(metrics, eval_out);
    }
  } else if (*predict) {
    const gc::train::Predictor predictor(
        pred_ckpt, pred_atlas.empty() ? std::nullopt : std::optional<std::filesystem::path>(pred_atlas));
    const auto emit = [&](std::string_view text) {
      const auto p = predictor(text);
      nlohmann::ordered_json probs;
      for (std::size_t k = 0; k < p.probabilities.size(); ++k)
        probs[predictor.state().labels.name(static_cast<int>(k))] = p.probabilities[k];
      std::cout << nlohmann::ordered_json{{"label", p.label}, {"probabilities", probs}}.dump() << '\n';
    };
    if (predict->count("--text")) {
      emit(pred_text);
    } else {
      std::string line;
      while (std::getline(std::cin, line)) emit(line);
    }
  } else if (*exportc) {
    const auto state = gc::ckpt::load(exp_ckpt);
    const auto atlas = gc::atlas::GlyphAtlas::load(exp_atlas.empty() ? state.config.atlas : std::filesystem::path(exp_atlas));
    const std::size_t n = gc::eval::export_embeddings(state.params, atlas, exp_out);
    std::cout << nlohmann::json{{"embeddings", exp_out}, {"count", n}}.dump() << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  // Keep large tensors in the heap between batches instead of remapping them.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  try {
    return run(argc, argv);
  } catch (const gc::Error& e) {
    return report(gc::to_string(e.kind()), e.what(), 1);
  } catch (const std::exception& e) {
    return report("internal", e.what(), 1);
  }
}

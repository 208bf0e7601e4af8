// secnn: train, evaluate and report on self-expanding CNN runs.
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "secnn/checkpoint.hpp"
#include "secnn/errors.hpp"
#include "secnn/kernels.hpp"
#include "secnn/report.hpp"
#include "secnn/run_config.hpp"
#include "secnn/trainer.hpp"

namespace fs = std::filesystem;
using namespace secnn;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

void add_overrides(CLI::App& cmd, std::map<std::string, std::string>& overrides) {
  for (const ConfigKey& key : config_keys()) cmd.add_option("--" + key.name, overrides[key.name], key.help);
}

RunConfig resolve_config(const CLI::App& cmd, const std::string& config_path,
                         const std::map<std::string, std::string>& overrides) {
  RunConfig config = config_path.empty() ? RunConfig{} : load_run_config(config_path);
  for (const ConfigKey& key : config_keys())
    if (cmd.count("--" + key.name) > 0) set_config_value(config, key.name, overrides.at(key.name));
  config.validate();
  return config;
}

void select_backend(const std::string& name) {
  if (name == "scalar") kernels::set_backend(kernels::Backend::Scalar);
  if (name == "avx2") kernels::set_backend(kernels::Backend::Avx2);
}

CheckpointMeta make_meta(const RunConfig& config, const data::Normalization& norm, const TrainState& state,
                         CheckpointReason reason) {
  CheckpointMeta meta;
  meta.config = to_json(config);
  meta.normalization = norm;
  meta.state.epoch = state.epoch;
  meta.state.lr = state.lr;
  meta.state.best_val_accuracy = state.best_val_accuracy;
  meta.state.epochs_since_improvement = state.epochs_since_improvement;
  meta.state.cooldown_remaining = state.cooldown_remaining;
  meta.state.reason = std::string(to_string(reason));
  return meta;
}

std::string epoch_tag(std::size_t epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04zu", epoch);
  return buf;
}

int run_train(const RunConfig& config) {
  select_backend(config.kernel_backend);
  const Datasets datasets = load_datasets(config);
  SecnnModel model = build_model(config);
  const fs::path out(config.out);
  fs::create_directories(out / "checkpoints");
  {
    std::ofstream cfg(out / "config.txt", std::ios::trunc);
    cfg << to_config_text(config);
  }
  std::ofstream metrics(out / kMetricsFile, std::ios::trunc);
  if (!metrics) fail(ErrorCode::Io, "cannot write " + (out / kMetricsFile).string());

  std::cerr << "train " << datasets.train.size() << " / val " << datasets.val.size() << " samples, "
            << model.param_count() << " parameters, kernels " << kernels::to_string(kernels::active_backend()) << "\n";
  auto started = std::chrono::steady_clock::now();
  FitHooks hooks;
  hooks.on_record = [&](const MetricsRecord& r) {
    metrics << metrics_line(r) << "\n";
    metrics.flush();
    const auto now = std::chrono::steady_clock::now();
    const double secs = std::chrono::duration<double>(now - started).count();
    started = now;
    std::fprintf(stderr, "epoch %4zu  loss %.4f  val_loss %.4f  val_acc %.4f  params %zu  lr %.2e  %.1fs%s\n", r.epoch,
                 r.train_loss, r.val_loss, r.val_accuracy, r.param_count, static_cast<double>(r.lr), secs,
                 r.expanded() ? ("  -> " + std::string(to_string(r.expansion->kind)) + "@" +
                                 std::to_string(*r.expansion->block))
                                    .c_str()
                              : "");
  };
  hooks.on_checkpoint = [&](CheckpointReason reason, const SecnnModel& m, const TrainState& state) {
    const fs::path dir = reason == CheckpointReason::Expansion
                             ? out / "checkpoints" / ("expansion_epoch_" + epoch_tag(state.epoch))
                             : out / "checkpoints" / std::string(to_string(reason));
    save_checkpoint(m, make_meta(config, datasets.normalization, state, reason), dir);
  };
  const FitResult result = fit(model, datasets.train, datasets.val, config.train, hooks);
  if (result.history.empty()) {
    std::cout << "no epochs run\n";
    return 0;
  }
  const std::string summary = format_summary(summarize(result.history)) + "\n" + format_growth_table(result.history);
  std::ofstream(out / "summary.txt", std::ios::trunc) << summary;
  std::cout << summary;
  return 0;
}

int run_evaluate(const std::string& checkpoint, const std::string& dataset_override, std::size_t batch_size) {
  LoadedCheckpoint loaded = load_checkpoint(checkpoint);
  RunConfig config;
  for (const auto& [key, value] : loaded.meta.config.items()) set_config_value(config, key, value.get<std::string>());
  if (!dataset_override.empty()) config.dataset = dataset_override;
  select_backend(config.kernel_backend);
  const Datasets datasets = load_datasets(config);
  const EvalResult r = evaluate(loaded.model, datasets.val, batch_size);
  std::printf("checkpoint %s (epoch %zu, %s)\nparameters %zu\nval_loss %.6f\nval_accuracy %.4f\n", checkpoint.c_str(),
              loaded.meta.state.epoch, loaded.meta.state.reason.c_str(), loaded.model.param_count(), r.loss,
              r.accuracy);
  return 0;
}

int run_report(const std::string& run_dir) {
  const auto history = read_metrics_log(fs::path(run_dir) / kMetricsFile);
  std::cout << format_summary(summarize(history)) << "\n" << format_growth_table(history);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-expanding CNN trainer"};
  app.require_subcommand(1);

  auto* train = app.add_subcommand("train", "train a model and write metrics and checkpoints");
  std::string train_config;
  std::map<std::string, std::string> overrides;
  train->add_option("--config", train_config, "key = value configuration file");
  add_overrides(*train, overrides);

  auto* eval = app.add_subcommand("evaluate", "evaluate a checkpoint on its validation split");
  std::string checkpoint, eval_dataset;
  std::size_t eval_batch = 512;
  eval->add_option("checkpoint", checkpoint, "checkpoint directory")->required();
  eval->add_option("--dataset", eval_dataset, "override the dataset recorded in the checkpoint");
  eval->add_option("--batch_size", eval_batch, "evaluation batch size");

  auto* report = app.add_subcommand("report", "summarize a run directory");
  std::string run_dir;
  report->add_option("run_dir", run_dir, "run directory holding metrics.jsonl")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*train) return run_train(resolve_config(*train, train_config, overrides));
    if (*eval) return run_evaluate(checkpoint, eval_dataset, eval_batch);
    if (*report) return run_report(run_dir);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    switch (e.code()) {
      case ErrorCode::Config:
      case ErrorCode::Io:
      case ErrorCode::CorruptData:
      case ErrorCode::ChecksumMismatch:
      case ErrorCode::VersionMismatch:
      case ErrorCode::LengthMismatch:
      case ErrorCode::InvalidArgument: return kExitUsage;
      default: return kExitFailure;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}

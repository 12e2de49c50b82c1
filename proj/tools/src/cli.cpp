#include "dvtk/cli.hpp"

#include <CLI11.hpp>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "dvtk/checkpoint.hpp"
#include "dvtk/data.hpp"
#include "dvtk/io.hpp"
#include "dvtk/pipeline.hpp"
#include "dvtk/token_file.hpp"

namespace dvtk::cli {

namespace {

namespace fs = std::filesystem;

struct Args {
  std::string config, checkpoint, in, out, device = "cpu";
  std::uint64_t seed = 0;
  bool seed_set = false;
  int log_interval = 0;
  bool resume = false;
  bool packed = false;
  bool self_check = false;
  int clips = 0;
  int index = 0;
};

fs::path cache_dir() {
  const char* env = std::getenv("DVTK_CACHE");
  return env && *env ? fs::path(env) : fs::temp_directory_path() / "dvtk_cache";
}

void check_device(const Args& a) {
  if (a.device != "cpu") fail(ErrorKind::kConfig, "--device: only 'cpu' is available, got '" + a.device + "'");
}

std::string format_report(int step, const LossReport& report) {
  std::ostringstream os;
  os << "step " << step;
  for (const auto& [name, value] : report) os << ' ' << name << '=' << value;
  return os.str();
}

int cmd_train(const Args& a, std::ostream& out, std::ostream& err) {
  check_device(a);
  RunConfig config = load_run_config(a.config);
  if (a.seed_set) config.train.seed = a.seed;
  if (a.log_interval > 0) config.train.log_interval = a.log_interval;
  if (!a.out.empty()) config.output_dir = a.out;
  config.validate();
  RunOptions options;
  options.resume = a.resume;
  options.on_log = [&](int step, const LossReport& r) { err << format_report(step, r) << '\n'; };
  const RunOutcome outcome = train_and_evaluate(config, options);
  out << "config_hash " << outcome.config_hash << '\n'
      << "checkpoint " << outcome.checkpoint.string() << '\n'
      << "heldout_psnr_db " << outcome.heldout.aggregate.psnr_db << '\n'
      << "heldout_ssim " << outcome.heldout.aggregate.ssim << '\n';
  return 0;
}

int cmd_encode(const Args& a, std::ostream& out) {
  check_device(a);
  CheckpointHeader header;
  const Tokenizer model = load_tokenizer(a.checkpoint, &header);
  const Tensor video = read_video(a.in);
  TokenFile file;
  file.grid = model.tokenize(video);
  file.video_dims = video.shape();
  file.compression = model.config().compression();
  file.config_hash = header.config_hash;
  file.packed = a.packed;
  write_token_file(a.out, file);
  out << "tokens " << file.grid.token_count() << '\n';
  return 0;
}

int cmd_decode(const Args& a, std::ostream& out) {
  check_device(a);
  // Both headers are checked before the model is built.
  const TokenFile file = read_token_file(a.in);
  const CheckpointHeader header = read_checkpoint_header(a.checkpoint);
  if (file.config_hash != header.config_hash) {
    fail(ErrorKind::kCompatibility, a.in + " was encoded with config " + file.config_hash + ", checkpoint has " +
                                        header.config_hash);
  }
  const Tokenizer model = load_tokenizer(a.checkpoint);
  NoGradGuard no_grad;
  const Tensor video = model.detokenize(file.grid, file.video_dims.at(0));
  write_video(a.out, video);
  out << "frames " << video.dim(0) << '\n';
  return 0;
}

int cmd_eval(const Args& a, std::ostream& out) {
  check_device(a);
  CheckpointHeader header;
  const Tokenizer model = load_tokenizer(a.checkpoint, &header);
  DataSpec data = header.config.data;
  if (!a.config.empty()) data = load_run_config(a.config).data;
  if (a.clips > 0) data.eval_clips = a.clips;
  const auto clips = held_out_clips(data);
  MetricsTable table;
  if (a.self_check) {
    NoGradGuard no_grad;
    std::vector<TokenGrid> grids;
    for (const auto& c : clips) grids.push_back(model.tokenize(c));
    table = metrics_table(clips, clips, grids);
  } else {
    table = evaluate(model, clips);
  }
  if (a.out.empty()) {
    table.write_csv(out);
  } else {
    std::ostringstream csv;
    table.write_csv(csv);
    write_file_atomic(a.out, csv.str());
    out << "mean_psnr_db " << table.aggregate.psnr_db << "\nmean_ssim " << table.aggregate.ssim << '\n';
  }
  return 0;
}

int cmd_sweep(const Args& a, std::ostream& out, std::ostream& err) {
  check_device(a);
  std::vector<std::pair<std::string, std::string>> errors;
  SweepConfig sweep = load_sweep_config(a.config, &errors);
  if (a.seed_set) sweep.seeds = {a.seed};
  if (a.log_interval > 0) {
    for (auto& cell : sweep.cells) cell.config.train.log_interval = a.log_interval;
  }
  SweepOptions options;
  options.out_dir = a.out.empty() ? cache_dir() / "sweep" : fs::path(a.out);
  options.resume = a.resume;
  options.progress = [&](const std::string& msg) { err << "sweep: " << msg << '\n'; };
  const auto rows = run_sweep(sweep, options, errors);
  std::ostringstream csv;
  write_sweep_table(csv, rows);
  write_file_atomic(options.out_dir / "sweep_table.csv", csv.str());
  out << csv.str();
  return 0;
}

int cmd_synth(const Args& a, std::ostream& out) {
  DataSpec data;
  if (!a.config.empty()) data = load_run_config(a.config).data;
  const Tensor clip = synthetic_clip(data, a.seed_set ? a.seed : data.eval_seed, a.index);
  write_video(a.out, clip);
  out << "wrote " << shape_str(clip.shape()) << '\n';
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Discrete video tokenizer"};
  app.require_subcommand(1);
  Args a;
  auto seed_opt = [&](CLI::App* c) {
    c->add_option_function<std::uint64_t>(
        "--seed", [&](std::uint64_t s) { a.seed = s, a.seed_set = true; }, "Random seed override");
  };
  auto device_opt = [&](CLI::App* c) { c->add_option("--device", a.device, "Compute device (cpu)"); };

  auto* train = app.add_subcommand("train", "Train a tokenizer from a run configuration");
  train->add_option("--config", a.config, "Run configuration (YAML)")->required();
  train->add_option("--out", a.out, "Output directory (overrides output.dir)");
  train->add_option("--log-interval", a.log_interval, "Steps between loss-log rows");
  train->add_flag("--resume", a.resume, "Continue from the newest checkpoint in the output directory");
  seed_opt(train);
  device_opt(train);

  auto* encode = app.add_subcommand("encode", "Tokenize a raw video file");
  encode->add_option("--checkpoint", a.checkpoint)->required();
  encode->add_option("--in", a.in, "Raw video (.json sidecar next to it)")->required();
  encode->add_option("--out", a.out, "Token file")->required();
  encode->add_flag("--packed", a.packed, "Store one packed id per pixel (channel-split LFQ only)");
  device_opt(encode);

  auto* decode = app.add_subcommand("decode", "Reconstruct a video from a token file");
  decode->add_option("--checkpoint", a.checkpoint)->required();
  decode->add_option("--in", a.in, "Token file")->required();
  decode->add_option("--out", a.out, "Raw video output")->required();
  device_opt(decode);

  auto* eval = app.add_subcommand("eval", "Write the held-out metrics table");
  eval->add_option("--checkpoint", a.checkpoint)->required();
  eval->add_option("--config", a.config, "Take the data section from this run configuration");
  eval->add_option("--out", a.out, "CSV output (stdout when omitted)");
  eval->add_option("--clips", a.clips, "Number of held-out clips");
  eval->add_flag("--self-check", a.self_check, "Score each clip against itself");
  device_opt(eval);

  auto* sweep = app.add_subcommand("sweep", "Train and evaluate every cell of a sweep");
  sweep->add_option("--config", a.config, "Sweep configuration (YAML)")->required();
  sweep->add_option("--out", a.out, "Output directory (default $DVTK_CACHE/sweep)");
  sweep->add_option("--log-interval", a.log_interval);
  sweep->add_flag("--resume", a.resume, "Reuse finished runs and continue partial ones");
  seed_opt(sweep);
  device_opt(sweep);

  auto* synth = app.add_subcommand("synth", "Write a synthetic clip as a raw video file");
  synth->add_option("--config", a.config, "Take the data section from this run configuration");
  synth->add_option("--out", a.out)->required();
  synth->add_option("--index", a.index, "Clip index within the stream");
  seed_opt(synth);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "dvtk: " << e.what() << '\n';
    return 2;
  }

  try {
    if (*train) return cmd_train(a, out, err);
    if (*encode) return cmd_encode(a, out);
    if (*decode) return cmd_decode(a, out);
    if (*eval) return cmd_eval(a, out);
    if (*sweep) return cmd_sweep(a, out, err);
    if (*synth) return cmd_synth(a, out);
  } catch (const Error& e) {
    err << "dvtk: " << error_kind_name(e.kind()) << ": " << e.what() << '\n';
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    err << "dvtk: runtime error: " << e.what() << '\n';
    return 4;
  }
  return 2;
}

}  // namespace dvtk::cli

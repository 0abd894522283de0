// Command-line front end: train / evaluate / enhance / synth / align / metrics.

#include "vecnet/harness.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <iostream>

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir) {
  const vecnet::core::Config config = vecnet::core::load_config(config_path);
  auto result = vecnet::harness::train(config, data_dir, out_dir, &std::cout);
  std::cout << "trained " << result.steps_run << " steps; best val PSNR "
            << result.best_val_psnr << " dB\n"
            << "last checkpoint: " << result.last_checkpoint << "\n"
            << "best checkpoint: " << result.best_checkpoint << "\n";
  return 0;
}

int cmd_evaluate(const std::string& ckpt, const std::string& data_dir, const std::string& csv,
                 const std::string& json_path, bool identity) {
  auto loaded = vecnet::restore::load_checkpoint(ckpt);
  auto result = vecnet::harness::evaluate(*loaded.model, data_dir, identity, &std::cerr);
  const json j = vecnet::harness::eval_to_json(result);
  std::cout << j.dump(2) << "\n";
  if (!json_path.empty()) {
    std::ofstream os(json_path);
    os << j.dump(2) << "\n";
  }
  if (!csv.empty()) vecnet::harness::eval_to_csv(result, csv);
  return 0;
}

int cmd_enhance(const std::string& ckpt, const std::string& in_dir, const std::string& out_dir) {
  auto loaded = vecnet::restore::load_checkpoint(ckpt);
  vecnet::harness::enhance_directory(*loaded.model, in_dir, out_dir, &std::cerr);
  return 0;
}

int cmd_synth(const std::string& mode, const std::string& params_path, const std::string& in_dir,
              const std::string& out_dir) {
  vecnet::datapipe::DegradationParams params;
  if (!params_path.empty())
    params = vecnet::datapipe::DegradationParams::from_kv(vecnet::core::parse_kv_file(params_path));
  params.mode = vecnet::datapipe::mode_from_name(mode);
  params.validate();

  const auto normal = vecnet::datapipe::load_clip_dir(in_dir);
  const auto degraded = vecnet::datapipe::synthesize_exposure(normal, params);

  fs::create_directories(out_dir);
  vecnet::datapipe::save_clip_dir((fs::path(out_dir) / "input").string(), degraded);
  vecnet::datapipe::save_clip_dir((fs::path(out_dir) / "gt").string(), normal);
  auto meta = params.to_kv();
  meta["source"] = in_dir;
  std::ofstream os(fs::path(out_dir) / "meta.txt");
  for (const auto& [k, v] : meta) os << k << " = " << v << "\n";
  std::cout << "wrote " << degraded.size() << " degraded frames to " << out_dir << "\n";
  return 0;
}

int cmd_align(const std::string& src_dir, const std::string& ref_dir, const std::string& out_dir) {
  const auto src = vecnet::datapipe::load_clip_dir(src_dir);
  const auto ref = vecnet::datapipe::load_clip_dir(ref_dir);
  auto aligned = vecnet::datapipe::align_pair(src, ref);

  fs::create_directories(out_dir);
  vecnet::datapipe::save_clip_dir((fs::path(out_dir) / "input").string(), aligned.src);
  vecnet::datapipe::save_clip_dir((fs::path(out_dir) / "gt").string(), aligned.ref);
  {
    std::ofstream os(fs::path(out_dir) / "meta.txt");
    os << "source = " << src_dir << "\n";
  }
  json stats = json::array();
  for (const auto& st : aligned.stats)
    stats.push_back({{"frame", st.index},
                     {"loe_before", st.loe_before},
                     {"loe_after", st.loe_after},
                     {"residual_flow", st.residual_flow}});
  json excluded = json::array();
  for (const auto& [idx, reason] : aligned.excluded)
    excluded.push_back({{"frame", idx}, {"reason", reason}});
  std::ofstream os(fs::path(out_dir) / "align_stats.json");
  os << json{{"frames", stats}, {"excluded", excluded}}.dump(2) << "\n";
  std::cout << "aligned " << aligned.src.size() << " frames (" << aligned.excluded.size()
            << " excluded)\n";
  return 0;
}

int cmd_metrics(const std::string& a_dir, const std::string& b_dir, const std::string& json_path,
                const std::string& csv_path) {
  const auto a = vecnet::datapipe::load_clip_dir(a_dir);
  vecnet::metrics::MetricReport report;
  json per_frame = json::array();

  if (a.size() >= 2) {
    report.values["alv"] = vecnet::metrics::alv(a);
    report.values["mean_flow"] = vecnet::metrics::mean_flow(a);
  }
  if (!b_dir.empty()) {
    const auto b = vecnet::datapipe::load_clip_dir(b_dir);
    if (a.size() != b.size()) throw std::runtime_error("metrics: frame counts differ");
    double psnr_acc = 0.0, ssim_acc = 0.0, loe_acc = 0.0;
    int finite = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double p = vecnet::metrics::psnr(a[i], b[i]);
      const double s = vecnet::metrics::ssim(a[i], b[i]);
      const double l = vecnet::metrics::loe(a[i], b[i]);
      per_frame.push_back({{"frame", static_cast<int>(i)},
                           {"psnr", std::isinf(p) ? json("inf") : json(p)},
                           {"ssim", s},
                           {"loe", l}});
      if (std::isfinite(p)) {
        psnr_acc += p;
        ++finite;
      }
      ssim_acc += s;
      loe_acc += l;
    }
    report.values["psnr"] =
        finite > 0 ? psnr_acc / finite : std::numeric_limits<double>::infinity();
    report.values["ssim"] = ssim_acc / static_cast<double>(a.size());
    report.values["loe"] = loe_acc / static_cast<double>(a.size());
    if (b.size() >= 2) report.values["alv_reference"] = vecnet::metrics::alv(b);
  }

  json j = json::object();
  for (const auto& [k, v] : report.values)
    j[k] = std::isinf(v) ? json("inf") : json(v);
  std::cout << j.dump(2) << "\n";
  if (!json_path.empty()) {
    std::ofstream os(json_path);
    os << j.dump(2) << "\n";
  }
  if (!csv_path.empty()) {
    std::ofstream os(csv_path);
    os << "frame,psnr,ssim,loe\n";
    for (const auto& row : per_frame)
      os << row["frame"] << "," << row["psnr"].dump() << "," << row["ssim"] << ","
         << row["loe"] << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"video exposure correction toolkit"};
  app.require_subcommand(1);

  std::string config_path, data_dir, out_dir, ckpt, csv_path, json_path, in_dir;
  std::string mode, params_path, src_dir, ref_dir, a_dir, b_dir;
  bool identity = false;

  auto* train = app.add_subcommand("train", "train a model on a dataset root");
  train->add_option("--config", config_path, "config file (key = value)")->required();
  train->add_option("--data", data_dir, "dataset root")->required();
  train->add_option("--out", out_dir, "output directory")->required();

  auto* evaluate = app.add_subcommand("evaluate", "run PSNR/SSIM tables over a dataset");
  evaluate->add_option("--ckpt", ckpt, "checkpoint file")->required();
  evaluate->add_option("--data", data_dir, "dataset root")->required();
  evaluate->add_option("--csv", csv_path, "write per-clip CSV table");
  evaluate->add_option("--json", json_path, "write JSON report");
  evaluate->add_flag("--identity", identity, "bypass the model (output = input baseline)");

  auto* enhance = app.add_subcommand("enhance", "enhance a directory of frames");
  enhance->add_option("--ckpt", ckpt, "checkpoint file")->required();
  enhance->add_option("--in", in_dir, "input frame directory")->required();
  enhance->add_option("--out", out_dir, "output frame directory")->required();

  auto* synth = app.add_subcommand("synth", "make a degraded clip from normal frames");
  synth->add_option("--mode", mode, "under|over")->required();
  synth->add_option("--params", params_path, "degradation parameter file");
  synth->add_option("--in", in_dir, "normal frame directory")->required();
  synth->add_option("--out", out_dir, "output clip directory")->required();

  auto* align = app.add_subcommand("align", "two-stage alignment of a paired capture");
  align->add_option("--src", src_dir, "degraded frame directory (geometry target)")->required();
  align->add_option("--ref", ref_dir, "normal frame directory (gets warped)")->required();
  align->add_option("--out", out_dir, "output clip directory")->required();

  auto* metrics = app.add_subcommand("metrics", "quality metrics for frame directories");
  metrics->add_option("--a", a_dir, "primary frame directory")->required();
  metrics->add_option("--b", b_dir, "reference frame directory");
  metrics->add_option("--json", json_path, "write JSON report")->required();
  metrics->add_option("--csv", csv_path, "write per-frame CSV table");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_train(config_path, data_dir, out_dir);
    if (evaluate->parsed()) return cmd_evaluate(ckpt, data_dir, csv_path, json_path, identity);
    if (enhance->parsed()) return cmd_enhance(ckpt, in_dir, out_dir);
    if (synth->parsed()) return cmd_synth(mode, params_path, in_dir, out_dir);
    if (align->parsed()) return cmd_align(src_dir, ref_dir, out_dir);
    if (metrics->parsed()) return cmd_metrics(a_dir, b_dir, json_path, csv_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

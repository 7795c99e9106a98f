// Command-line front end for the neighbourhood-consensus matcher.
//
// Subcommands:
//   match     run the full matching pipeline on two feature files
//   train     train NC-net weights from a labelled manifest of pairs
//   eval-pck  keypoint-transfer PCK evaluation
//   gradcheck finite-difference verification of the analytic gradients
//   bench     timing table for the core kernels
//   synth     generate a synthetic dataset (features, manifest, keypoints)
//
// Exit codes: 0 success, 1 usage, 2 data error, 3 check failure.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ncmatch/assignment.hpp"
#include "ncmatch/correlation.hpp"
#include "ncmatch/features.hpp"
#include "ncmatch/matchfilter.hpp"
#include "ncmatch/ncnet.hpp"
#include "ncmatch/pipeline.hpp"
#include "ncmatch/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct ManifestEntry {
  std::string path_a, path_b;
  int label = +1;
};

// Plain-text manifest: one line per sample, "path_a path_b +1|-1".
// Relative paths resolve against the manifest's directory.
std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ncmatch::DataError("cannot open manifest: " + path);
  const fs::path base = fs::path(path).parent_path();
  std::vector<ManifestEntry> entries;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    ManifestEntry e;
    std::string label;
    if (!(ls >> e.path_a >> e.path_b >> label))
      throw ncmatch::DataError("manifest parse error at " + path + ":" +
                               std::to_string(lineno));
    if (label == "+1")
      e.label = +1;
    else if (label == "-1")
      e.label = -1;
    else
      throw ncmatch::DataError("manifest label must be +1 or -1 at " + path + ":" +
                               std::to_string(lineno));
    auto resolve = [&base](const std::string& p) {
      return fs::path(p).is_absolute() ? p : (base / p).string();
    };
    e.path_a = resolve(e.path_a);
    e.path_b = resolve(e.path_b);
    entries.push_back(std::move(e));
  }
  return entries;
}

std::vector<ncmatch::TrainSample> load_samples(const std::vector<ManifestEntry>& entries) {
  std::vector<ncmatch::TrainSample> samples;
  for (const ManifestEntry& e : entries) {
    ncmatch::TrainSample s;
    s.fa = ncmatch::read_features(e.path_a);
    s.fb = ncmatch::read_features(e.path_b);
    s.label = e.label;
    samples.push_back(std::move(s));
  }
  return samples;
}

struct KeypointFile {
  int image_a_h = 0, image_a_w = 0;
  int image_b_h = 0, image_b_w = 0;
  std::vector<std::array<float, 2>> points_a;
  std::vector<std::array<float, 2>> points_b;
};

KeypointFile read_keypoints(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ncmatch::DataError("cannot open keypoint file: " + path);
  json j;
  try {
    is >> j;
  } catch (const json::exception& ex) {
    throw ncmatch::DataError("keypoint file parse error: " + path + ": " + ex.what());
  }
  KeypointFile kf;
  try {
    kf.image_a_h = j.at("image_a").at("h").get<int>();
    kf.image_a_w = j.at("image_a").at("w").get<int>();
    kf.image_b_h = j.at("image_b").at("h").get<int>();
    kf.image_b_w = j.at("image_b").at("w").get<int>();
    for (const auto& pair : j.at("pairs")) {
      kf.points_a.push_back({pair.at(0).get<float>(), pair.at(1).get<float>()});
      kf.points_b.push_back({pair.at(2).get<float>(), pair.at(3).get<float>()});
    }
  } catch (const json::exception& ex) {
    throw ncmatch::DataError("keypoint file schema error: " + path + ": " + ex.what());
  }
  return kf;
}

ncmatch::NCNetConfig preset_config(const std::string& preset) {
  if (preset == "category") return ncmatch::NCNetConfig::category();
  if (preset == "instance") return ncmatch::NCNetConfig::instance();
  throw ncmatch::DataError("unknown preset: " + preset);
}

int cmd_match(const std::string& features_a, const std::string& features_b,
              const std::string& weights, const std::string& out_path,
              bool relocalize) {
  const ncmatch::FeatureMap fa = ncmatch::read_features(features_a);
  const ncmatch::FeatureMap fb = ncmatch::read_features(features_b);
  const ncmatch::NCNetParams params = ncmatch::load_params(weights);
  ncmatch::PipelineOutput out = ncmatch::match_pipeline(fa, fb, params, relocalize);
  std::ofstream os(out_path);
  if (!os) throw ncmatch::DataError("cannot open for writing: " + out_path);
  ncmatch::write_matches_jsonl(out.matches, os);
  std::cout << "wrote " << out.matches.matches.size() << " matches to " << out_path
            << "\n";
  return 0;
}

int cmd_train(const std::string& manifest, const std::string& val_manifest,
              const std::string& preset, uint32_t seed, double lr, int epochs,
              const std::string& weights_out, const std::string& log_out) {
  std::vector<ncmatch::TrainSample> dataset = load_samples(read_manifest(manifest));
  std::vector<ncmatch::TrainSample> validation;
  if (!val_manifest.empty())
    validation = load_samples(read_manifest(val_manifest));
  ncmatch::NCNetParams params = ncmatch::init_params(preset_config(preset), seed);
  ncmatch::TrainConfig config;
  config.epochs = epochs;
  config.lr = lr;
  config.seed = seed;
  ncmatch::TrainResult result = ncmatch::train(dataset, validation, std::move(params), config);
  ncmatch::save_params(result.params, weights_out);
  std::ofstream os(log_out);
  if (!os) throw ncmatch::DataError("cannot open for writing: " + log_out);
  os << "epoch,mean_train_loss,mean_val_loss\n";
  for (const ncmatch::EpochLog& e : result.log)
    os << e.epoch << "," << e.mean_train_loss << ","
       << (validation.empty() ? std::nan("") : e.mean_val_loss) << "\n";
  std::cout << "trained " << epochs << " epochs; final mean train loss "
            << result.log.back().mean_train_loss << "\n";
  std::cout << "weights: " << weights_out << "  log: " << log_out << "\n";
  return 0;
}

int cmd_eval_pck(const std::string& features_a, const std::string& features_b,
                 const std::string& weights, const std::string& keypoints,
                 double alpha, bool relocalize, const std::string& out_path) {
  const KeypointFile kf = read_keypoints(keypoints);
  ncmatch::FeatureMap fa = ncmatch::read_features(features_a);
  ncmatch::FeatureMap fb = ncmatch::read_features(features_b);
  const ncmatch::NCNetParams params = ncmatch::load_params(weights);
  ncmatch::PipelineOutput out = ncmatch::match_pipeline(fa, fb, params, relocalize);
  const auto transferred = ncmatch::transfer_keypoints(kf.points_a, out.matches);
  const double value =
      ncmatch::pck(transferred, kf.points_b, kf.image_b_h, kf.image_b_w, alpha);
  std::cout << std::fixed << std::setprecision(4) << value << "\n";
  if (!out_path.empty()) {
    std::ofstream os(out_path);
    if (!os) throw ncmatch::DataError("cannot open for writing: " + out_path);
    os << std::fixed << std::setprecision(4) << value << "\n";
  }
  return 0;
}

int cmd_gradcheck(uint32_t seed, int grid, int dim, bool corrupt) {
  const ncmatch::TrainSample sample =
      ncmatch::synth_pair(seed, grid, grid, dim, 1, 1, 0.2f);
  const ncmatch::NCNetParams params =
      ncmatch::init_params(ncmatch::NCNetConfig::instance(), seed + 1);
  const ncmatch::FdReport report =
      ncmatch::finite_diff_check(sample, params, 1e-3, 1e-6, corrupt);
  for (size_t li = 0; li < report.layers.size(); ++li)
    std::cout << "layer " << li << ": max rel error "
              << report.layers[li].max_rel_error << ", max abs error "
              << report.layers[li].max_abs_error << "\n";
  std::cout << (report.pass ? "PASS" : "FAIL") << "\n";
  return report.pass ? 0 : 3;
}

int cmd_bench(const std::vector<int>& sizes, const std::string& out_path) {
  std::ofstream os(out_path);
  if (!os) throw ncmatch::DataError("cannot open for writing: " + out_path);
  os << "op,h,w,k,elements,total_ms,ns_per_element\n";
  auto time_ms = [](auto&& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count();
  };
  std::mt19937 rng(0);
  std::uniform_real_distribution<float> u(-1.f, 1.f);
  for (int hw : sizes) {
    const double elems = std::pow(static_cast<double>(hw) * hw, 2);
    if (elems * sizeof(float) * 20 > 8e9)
      throw ncmatch::DataError("bench size " + std::to_string(hw) +
                               " would exceed the memory guard");
    ncmatch::TrainSample s = ncmatch::synth_pair(1, hw, hw, 16, 0, 0, 0.1f);
    ncmatch::CorrTensor corr = ncmatch::correlate(s.fa, s.fb);
    {
      const double ms = time_ms([&] { ncmatch::correlate(s.fa, s.fb); });
      os << "correlate," << hw << "," << hw << ",," << elems << "," << ms << ","
         << ms * 1e6 / elems << "\n";
    }
    {
      const double ms =
          time_ms([&] { ncmatch::soft_mutual_nn(corr); });
      os << "soft_mutual_nn," << hw << "," << hw << ",," << elems << "," << ms
         << "," << ms * 1e6 / elems << "\n";
    }
    for (int k : {3, 5}) {
      ncmatch::Conv4dLayer layer(1, 16, k);
      for (float& w : layer.weights) w = u(rng);
      const double msd =
          time_ms([&] { ncmatch::conv4d_direct(corr.tensor, layer); });
      os << "conv4d_direct," << hw << "," << hw << "," << k << "," << elems << ","
         << msd << "," << msd * 1e6 / elems << "\n";
      const double msa =
          time_ms([&] { ncmatch::conv4d_aggregated(corr.tensor, layer); });
      os << "conv4d_aggregated," << hw << "," << hw << "," << k << "," << elems
         << "," << msa << "," << msa * 1e6 / elems << "\n";
    }
  }
  std::cout << "wrote " << out_path << "\n";
  return 0;
}

int cmd_synth(const std::string& out_dir, int pairs, int h, int w, int d, int period,
              double sigma, int max_shift, uint32_t seed) {
  fs::create_directories(out_dir);
  const fs::path dir(out_dir);
  std::ofstream manifest(dir / "manifest.txt");
  std::mt19937 rng(seed);
  std::uniform_int_distribution<int> shift_dist(-max_shift, max_shift);
  const std::optional<int> rep =
      period > 0 ? std::optional<int>(period) : std::nullopt;
  for (int n = 0; n < pairs; ++n) {
    const int dy = shift_dist(rng), dx = shift_dist(rng);
    ncmatch::TrainSample pos = ncmatch::synth_pair(seed + 2 * n, h, w, d, dy, dx,
                                                   static_cast<float>(sigma), rep);
    char name_a[64], name_b[64];
    std::snprintf(name_a, sizeof(name_a), "pos_%04d_a.ncf", n);
    std::snprintf(name_b, sizeof(name_b), "pos_%04d_b.ncf", n);
    ncmatch::write_features(pos.fa, (dir / name_a).string());
    ncmatch::write_features(pos.fb, (dir / name_b).string());
    manifest << name_a << " " << name_b << " +1\n";
    // Ground-truth keypoints at cell centers for PCK evaluation.
    json kp;
    kp["image_a"] = {{"h", pos.fa.image_h}, {"w", pos.fa.image_w}};
    kp["image_b"] = {{"h", pos.fb.image_h}, {"w", pos.fb.image_w}};
    json kp_pairs = json::array();
    for (const auto& [i, j, k, l] : pos.ground_truth) {
      const auto ca = pos.fa.cell_center(i, j);
      const auto cb = pos.fb.cell_center(k, l);
      kp_pairs.push_back({ca[0], ca[1], cb[0], cb[1]});
    }
    kp["pairs"] = kp_pairs;
    char kp_name[64];
    std::snprintf(kp_name, sizeof(kp_name), "pos_%04d_kp.json", n);
    std::ofstream(dir / kp_name) << kp.dump(2) << "\n";

    ncmatch::TrainSample neg = ncmatch::synth_negative(
        seed + 100000 + 2 * n, seed + 100001 + 2 * n, h, w, d,
        static_cast<float>(sigma), rep);
    char neg_a[64], neg_b[64];
    std::snprintf(neg_a, sizeof(neg_a), "neg_%04d_a.ncf", n);
    std::snprintf(neg_b, sizeof(neg_b), "neg_%04d_b.ncf", n);
    ncmatch::write_features(neg.fa, (dir / neg_a).string());
    ncmatch::write_features(neg.fb, (dir / neg_b).string());
    manifest << neg_a << " " << neg_b << " -1\n";
  }
  std::cout << "wrote " << 2 * pairs << " samples to " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neighbourhood-consensus dense feature matcher"};
  app.require_subcommand(1);

  auto* match = app.add_subcommand("match", "Match two feature files");
  std::string m_a, m_b, m_weights, m_out = "matches.jsonl";
  bool m_reloc = false;
  match->add_option("features_a", m_a)->required();
  match->add_option("features_b", m_b)->required();
  match->add_option("--weights", m_weights)->required();
  match->add_option("--out", m_out);
  match->add_flag("--relocalize", m_reloc,
                  "Pool the full-resolution correlation once and refine "
                  "coordinates with the recorded shifts");

  auto* train = app.add_subcommand("train", "Train NC-net weights");
  std::string t_manifest, t_val, t_preset = "category";
  std::string t_weights = "weights.ncw", t_log = "loss_log.csv";
  uint32_t t_seed = 0;
  double t_lr = 5e-4;
  int t_epochs = 5;
  train->add_option("--manifest", t_manifest)->required();
  train->add_option("--val-manifest", t_val);
  train->add_option("--preset", t_preset)->check(CLI::IsMember({"category", "instance"}));
  train->add_option("--seed", t_seed);
  train->add_option("--lr", t_lr);
  train->add_option("--epochs", t_epochs);
  train->add_option("--weights-out", t_weights);
  train->add_option("--log-out", t_log);

  auto* eval = app.add_subcommand("eval-pck", "Keypoint-transfer PCK");
  std::string e_a, e_b, e_weights, e_kp, e_out;
  double e_alpha = 0.1;
  bool e_reloc = false;
  eval->add_option("features_a", e_a)->required();
  eval->add_option("features_b", e_b)->required();
  eval->add_option("--weights", e_weights)->required();
  eval->add_option("--keypoints", e_kp)->required();
  eval->add_option("--alpha", e_alpha);
  eval->add_option("--out", e_out);
  eval->add_flag("--relocalize", e_reloc);

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient check");
  uint32_t g_seed = 0;
  int g_grid = 6, g_dim = 8;
  bool g_corrupt = false;
  grad->add_option("--seed", g_seed);
  grad->add_option("--grid", g_grid);
  grad->add_option("--dim", g_dim);
  grad->add_flag("--corrupt", g_corrupt,
                 "Deliberately corrupt the analytic gradient (negative control)");

  auto* bench = app.add_subcommand("bench", "Kernel timing table");
  std::vector<int> b_sizes = {8, 16};
  std::string b_out = "bench.csv";
  bench->add_option("--sizes", b_sizes);
  bench->add_option("--out", b_out);

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  std::string s_out = "synth_data";
  int s_pairs = 20, s_h = 8, s_w = 8, s_d = 16, s_period = 0, s_shift = 2;
  double s_sigma = 0.3;
  uint32_t s_seed = 0;
  synth->add_option("--out", s_out);
  synth->add_option("--pairs", s_pairs);
  synth->add_option("--height", s_h);
  synth->add_option("--width", s_w);
  synth->add_option("--dim", s_d);
  synth->add_option("--period", s_period, "Descriptor tiling period (0 = none)");
  synth->add_option("--sigma", s_sigma);
  synth->add_option("--max-shift", s_shift);
  synth->add_option("--seed", s_seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (match->parsed()) return cmd_match(m_a, m_b, m_weights, m_out, m_reloc);
    if (train->parsed())
      return cmd_train(t_manifest, t_val, t_preset, t_seed, t_lr, t_epochs,
                       t_weights, t_log);
    if (eval->parsed())
      return cmd_eval_pck(e_a, e_b, e_weights, e_kp, e_alpha, e_reloc, e_out);
    if (grad->parsed()) return cmd_gradcheck(g_seed, g_grid, g_dim, g_corrupt);
    if (bench->parsed()) return cmd_bench(b_sizes, b_out);
    if (synth->parsed())
      return cmd_synth(s_out, s_pairs, s_h, s_w, s_d, s_period, s_sigma, s_shift,
                       s_seed);
  } catch (const ncmatch::DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

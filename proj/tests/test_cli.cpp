#include <gtest/gtest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "evsnn/evsnn.hpp"
#include "evsnn/image_io.hpp"

namespace fs = std::filesystem;
using namespace evsnn;

namespace {

const fs::path& workdir() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / ("evsnn_cli_test_" + std::to_string(::getpid()));
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

int run(const std::string& args) {
  const std::string cmd = std::string(EVSNN_CLI_PATH) + " " + args + " >> " + (workdir() / "cli.log").string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_json(const fs::path& p, const nlohmann::json& j) { std::ofstream(p) << j.dump(2); }

fs::path scene(const std::string& name, SceneConfig c) {
  const fs::path cfg = workdir() / (name + ".json");
  write_json(cfg, to_json(c));
  const fs::path out = workdir() / name;
  EXPECT_EQ(run("simulate --config " + cfg.string() + " --out " + out.string()), 0);
  return out;
}

SceneConfig small_scene() {
  SceneConfig c;
  c.height = 16;
  c.width = 16;
  c.steps = 6;
  c.seed = 4;
  return c;
}

NetworkSpec small_spec() {
  NetworkSpec s;
  s.n_channels = 2;
  s.n_encoders = 2;
  s.n_residual = 1;
  s.seed = 9;
  return s;
}

fs::path trained(const std::string& name, const fs::path& data, std::size_t epochs) {
  const fs::path spec = workdir() / (name + "_spec.json");
  write_json(spec, to_json(small_spec()));
  const fs::path tc = workdir() / (name + "_train.json");
  TrainConfig t;
  t.seq_len = 6;
  t.batch = 1;
  write_json(tc, to_json(t));
  const fs::path out = workdir() / name;
  EXPECT_EQ(run("train --config " + spec.string() + " --train-config " + tc.string() + " --data " + data.string() +
                " --out " + out.string() + " --epochs " + std::to_string(epochs) + " --bins 2"),
            0);
  return out / "checkpoint.spkt";
}

}  // namespace

TEST(Cli, SimulateIsDeterministicAndComplete) {
  const fs::path a = scene("sim_a", small_scene());
  const fs::path b = scene("sim_b", small_scene());
  EXPECT_EQ(slurp(a / "events.txt"), slurp(b / "events.txt"));
  const SimulationResult sim = read_dataset(a);
  EXPECT_EQ(sim.frames.size(), 6u);
  EXPECT_EQ(sim.sensor.height, 16u);
  EXPECT_FALSE(sim.events.empty());
  const SimulationResult direct = generate_events(make_scene(small_scene()));
  ASSERT_EQ(sim.events.size(), direct.events.size());
  for (std::size_t i = 0; i < sim.events.size(); ++i) {
    EXPECT_EQ(sim.events[i].x, direct.events[i].x);
    EXPECT_EQ(sim.events[i].p, direct.events[i].p);
    EXPECT_NEAR(sim.events[i].t, direct.events[i].t, 1e-9);
  }
}

TEST(Cli, StaticSceneHasNoEvents) {
  SceneConfig c = small_scene();
  c.velocity = {0, 0};
  const SimulationResult sim = read_dataset(scene("sim_static", c));
  EXPECT_TRUE(sim.events.empty());
  EXPECT_EQ(sim.frames.size(), 6u);
}

TEST(Cli, VoxelizeMatchesLibrary) {
  const fs::path data = scene("vox_src", small_scene());
  const fs::path out = workdir() / "vox";
  ASSERT_EQ(run("voxelize --events " + (data / "events.txt").string() + " --out " + out.string() +
                " --bins 3 --window-ms 10"),
            0);
  const TensorArchive ar = TensorArchive::load((out / "voxels.spkt").string());
  const EventStream es = read_event_file((data / "events.txt").string());
  const auto windows = split_windows(es.events, FixedDuration{0.01}, *es.sensor);
  ASSERT_EQ(ar.tensor("windows").dim(0), windows.size());
  for (std::size_t i = 0; i < windows.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "window_%04zu", i);
    const VoxelGrid g = encode_voxel_grid(windows[i], 3);
    const Tensor t = ar.tensor(name);
    ASSERT_EQ(t.shape(), (Shape{3, 16, 16}));
    for (std::size_t k = 0; k < g.data.size(); ++k) EXPECT_EQ(t[k], g.data[k]);
  }
}

TEST(Cli, VoxelizeEmptyStreamGivesZeroGrids) {
  const fs::path ev = workdir() / "empty_events.txt";
  std::ofstream(ev) << "# 4 5\n";
  const fs::path out = workdir() / "vox_empty";
  ASSERT_EQ(run("voxelize --events " + ev.string() + " --out " + out.string() + " --bins 2"), 0);
  const TensorArchive ar = TensorArchive::load((out / "voxels.spkt").string());
  for (const auto& n : ar.names())
    if (n.rfind("window_", 0) == 0)
      for (double v : ar.tensor(n).data()) EXPECT_EQ(v, 0.0);
}

TEST(Cli, TrainZeroEpochsSavesInitialWeights) {
  const fs::path data = scene("train_src", small_scene());
  const Network loaded = Network::load(trained("train0", data, 0).string());
  NetworkSpec s = small_spec();
  s.height = s.width = 16;
  const Network init(s);
  const auto a = loaded.named_parameters(), b = init.named_parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].first, b[i].first);
    EXPECT_TRUE(std::ranges::equal(a[i].second.data(), b[i].second.data())) << a[i].first;
  }
}

TEST(Cli, ReconstructMatchesLibraryForward) {
  const fs::path data = scene("rec_src", small_scene());
  const fs::path ckpt = trained("rec_train", data, 1);
  const fs::path out = workdir() / "rec";
  ASSERT_EQ(run("reconstruct --checkpoint " + ckpt.string() + " --data " + data.string() + " --out " + out.string()), 0);
  const Network net = Network::load(ckpt.string());
  const SimulationResult sim = read_dataset(data);
  const auto bins = voxelize_frames(sim.events, sim.timestamps, sim.sensor, 2);
  NoGradGuard ng;
  NetworkState st = net.initial_state(1);
  for (std::size_t k = 0; k < bins.size(); ++k) {
    Tensor img;
    for (const auto& b : bins[k]) img = net.forward_step(st, b);
    const auto expect = to_bytes(metrics::histogram_normalize(img.reshape({16, 16})));
    const Tensor got = read_pgm((out / "recon" / frame_name(k)).string());
    ASSERT_EQ(got.shape(), (Shape{16, 16}));
    for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_EQ(got[i], expect[i] / 255.0);
  }
}

TEST(Cli, ProbeRatesAreFractions) {
  const fs::path data = scene("probe_src", small_scene());
  const fs::path ckpt = trained("probe_train", data, 0);
  const fs::path out = workdir() / "probe";
  ASSERT_EQ(run("probe --checkpoint " + ckpt.string() + " --data " + data.string() + " --out " + out.string() +
                " --cutoff 3 --extra-steps 4 --fold-bn --zero-bias"),
            0);
  std::ifstream csv(out / "probe.csv");
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "step,empty_input,mse,ssim,spike_rate,lif_state_inf,lif_state_l2");
  std::size_t rows = 0;
  while (std::getline(csv, line)) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string x; std::getline(ss, x, ',');) f.push_back(x);
    ASSERT_EQ(f.size(), 7u) << line;
    const double rate = std::stod(f[4]);
    EXPECT_GE(rate, 0.0);
    EXPECT_LE(rate, 1.0);
    EXPECT_EQ(f[1], rows >= 3 ? "1" : "0");
    ++rows;
  }
  EXPECT_EQ(rows, 10u);
}

TEST(Cli, ProfilePublishedRates) {
  const fs::path out = workdir() / "profile_published";
  ASSERT_EQ(run("profile --published-rates --out " + out.string()), 0);
  const auto j = nlohmann::json::parse(slurp(out / "energy_report.json"));
  const auto& p = j.at("published_rates");
  EXPECT_NEAR(p.at("evsnn_energy_j").get<double>() / 3.83e-3, 1.0, 0.005);
  EXPECT_NEAR(p.at("pa_evsnn_energy_j").get<double>() / 1.055e-2, 1.0, 0.005);
  EXPECT_NEAR(p.at("evsnn_ann_snn_ratio").get<double>() / 19.36, 1.0, 0.005);
}

TEST(Cli, ProfileMeasuredReport) {
  const fs::path data = scene("prof_src", small_scene());
  const fs::path ckpt = trained("prof_train", data, 0);
  const fs::path out = workdir() / "profile";
  ASSERT_EQ(run("profile --checkpoint " + ckpt.string() + " --data " + data.string() + " --out " + out.string()), 0);
  const auto j = nlohmann::json::parse(slurp(out / "energy_report.json"));
  double sum = 0.0;
  for (const auto& l : j.at("layers")) sum += l.at("energy_j").get<double>();
  EXPECT_NEAR(sum, j.at("total_energy_j").get<double>(), 1e-20);
}

TEST(Cli, GradcheckPasses) { EXPECT_EQ(run("gradcheck --seed 3"), 0); }

TEST(Cli, BadArgumentsFail) {
  EXPECT_NE(run(""), 0);
  EXPECT_NE(run("voxelize --events /nonexistent/file --out " + (workdir() / "x").string()), 0);
}

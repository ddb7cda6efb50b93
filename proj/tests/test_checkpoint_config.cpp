#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "bhpeft/checkpoint.hpp"
#include "bhpeft/config.hpp"
#include "bhpeft/errors.hpp"

using namespace bhpeft;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name) : path("/tmp/bhpeft_test_" + name) {}
  ~TempFile() { std::remove(path.c_str()); }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

ModelConfig ckpt_config() {
  ModelConfig cfg;
  cfg.d = 8;
  cfg.h = 2;
  cfg.layers = 1;
  cfg.n_max = 8;
  cfg.vocab = 32;
  cfg.prefix_len = 2;
  cfg.r_prefix = 2;
  cfg.r_adapter = 2;
  return cfg;
}

}  // namespace

TEST_CASE("checkpoint round trip is byte-identical and reproduces predictions") {
  Model m = Model::create(ckpt_config(), 51);
  CheckpointMeta meta;
  meta.seed = 51;
  meta.round_index = 2;
  meta.config_digest = "abc123";
  meta.command_line = "bhpeft train --config c.txt";

  TempFile a("ckpt_a.bin"), b("ckpt_b.bin");
  checkpoint_save(a.path, m, meta);
  LoadedCheckpoint loaded = checkpoint_load(a.path);
  checkpoint_save(b.path, loaded.model, loaded.meta);
  CHECK(slurp(a.path) == slurp(b.path));

  CHECK(loaded.meta.seed == 51);
  CHECK(loaded.meta.round_index == 2);
  CHECK(loaded.meta.command_line == meta.command_line);
  std::vector<int> tokens = {1, 2, 3};
  CHECK(bitwise_equal(loaded.model.forward_mean(tokens), m.forward_mean(tokens)));
  CHECK(loaded.model.backbone_digest() == m.backbone_digest());
}

TEST_CASE("checkpoint rejects corruption distinctly") {
  Model m = Model::create(ckpt_config(), 53);
  TempFile f("ckpt_corrupt.bin");
  checkpoint_save(f.path, m, CheckpointMeta{});
  std::string bytes = slurp(f.path);

  SUBCASE("bad magic") {
    std::string bad = bytes;
    bad[0] = 'X';
    std::ofstream(f.path, std::ios::binary) << bad;
    CHECK_THROWS_WITH_AS(checkpoint_load(f.path), doctest::Contains("magic"), io_error);
  }

  SUBCASE("truncated payload names the array") {
    std::string bad = bytes.substr(0, bytes.size() - 24);
    std::ofstream(f.path, std::ios::binary) << bad;
    CHECK_THROWS_WITH_AS(checkpoint_load(f.path), doctest::Contains("truncated"), io_error);
  }

  SUBCASE("wrong version") {
    auto pos = bytes.find("\"format_version\":1");
    REQUIRE(pos != std::string::npos);
    std::string bad = bytes;
    bad.replace(pos, 18, "\"format_version\":9");
    std::ofstream(f.path, std::ios::binary) << bad;
    CHECK_THROWS_WITH_AS(checkpoint_load(f.path), doctest::Contains("version"), io_error);
  }
}

TEST_CASE("config defaults carry the documented hyperparameters") {
  RunConfig cfg;
  CHECK(cfg.model.r_adapter == 8);
  CHECK(cfg.model.r_prefix == 8);
  CHECK(cfg.model.adapter_scale == 4.0);
  CHECK(cfg.model.sigma0 == 0.1);
  CHECK(cfg.model.delta == 0.1);
  CHECK(cfg.train.mc_samples == 1);
  CHECK(cfg.train.eval_samples == 32);
  CHECK(cfg.train.kl_weight == 1.0);
}

TEST_CASE("config file parsing") {
  TempFile f("config.txt");

  SUBCASE("values and comments") {
    std::ofstream(f.path) << "# comment\n d = 16 \nlayers=1\nlearning_rate = 0.005\n"
                          << "task = regression\nseed = 99\n";
    RunConfig cfg = load_run_config(f.path);
    CHECK(cfg.model.d == 16);
    CHECK(cfg.model.layers == 1);
    CHECK(cfg.train.learning_rate == 0.005);
    CHECK(cfg.model.task == TaskKind::regression);
    CHECK(cfg.seed == 99);
  }

  SUBCASE("unknown key") {
    std::ofstream(f.path) << "depth = 4\n";
    CHECK_THROWS_WITH_AS(load_run_config(f.path), doctest::Contains("depth"), config_error);
  }

  SUBCASE("bad value") {
    std::ofstream(f.path) << "d = banana\n";
    CHECK_THROWS_AS(load_run_config(f.path), config_error);
  }

  SUBCASE("duplicate key") {
    std::ofstream(f.path) << "d = 4\nd = 8\n";
    CHECK_THROWS_WITH_AS(load_run_config(f.path), doctest::Contains("duplicate"), config_error);
  }

  SUBCASE("missing file") {
    CHECK_THROWS_WITH_AS(load_run_config("/nonexistent/cfg.txt"),
                         doctest::Contains("/nonexistent/cfg.txt"), config_error);
  }
}

TEST_CASE("config digest tracks content") {
  RunConfig a, b;
  CHECK(config_digest(a) == config_digest(b));
  b.train.learning_rate = 0.123;
  CHECK(config_digest(a) != config_digest(b));
  CHECK(config_text(a).find("r_adapter = 8") != std::string::npos);
}

TEST_CASE("derived seeds for model and training differ") {
  RunConfig cfg;
  cfg.seed = 5;
  CHECK(cfg.model_seed() != cfg.train_seed());
}

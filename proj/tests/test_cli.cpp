#include <doctest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

namespace fs = std::filesystem;

namespace {

const fs::path kWork = fs::temp_directory_path() / "odgs_cli_tests";

int run(const std::string& args) {
  const std::string command =
      std::string(ODGS_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(command.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string quoted(const fs::path& p) { return "\"" + p.string() + "\""; }

long count_lines(const fs::path& p) {
  std::ifstream in(p);
  long lines = 0;
  std::string line;
  while (std::getline(in, line)) ++lines;
  return lines;
}

struct Workspace {
  Workspace() {
    fs::remove_all(kWork);
    fs::create_directories(kWork);
  }
};

/// A small scene on disk every subcommand test can reuse.
const fs::path& tiny_scene() {
  static const fs::path dir = [] {
    static Workspace workspace;
    const fs::path scene = kWork / "scene";
    REQUIRE(run("synth --out " + quoted(scene) +
                " --width 64 --height 32 --gaussians 6 --points 12"
                " --views 2 --seed 3") == 0);
    return scene;
  }();
  return dir;
}

}  // namespace

TEST_CASE("usage errors exit with code 2") {
  CHECK(run("") == 2);
  CHECK(run("trian") == 2);
  CHECK(run("train --out somewhere") == 2);  // missing required --scene
  CHECK(run("train --scene " + quoted(kWork / "missing.txt") + " --out " +
            quoted(kWork / "r")) == 2);
}

TEST_CASE("--help exits cleanly") {
  CHECK(run("--help") == 0);
  CHECK(run("train --help") == 0);
}

TEST_CASE("a malformed manifest is a usage error") {
  fs::create_directories(kWork);
  const fs::path bad = kWork / "bad.txt";
  std::ofstream(bad) << "view ghost.png 64 32  1 0.5 0  0 1 0  0 0 1  0 0 0\n";
  CHECK(run("train --scene " + quoted(bad) + " --out " +
            quoted(kWork / "r")) == 2);
  CHECK(run("render --checkpoint x.ply --scene " + quoted(bad) + " --out " +
            quoted(kWork / "r")) == 2);
}

TEST_CASE("synth then train produces checkpoints, a log, and renders") {
  const fs::path& scene = tiny_scene();
  CHECK(fs::exists(scene / "scene.txt"));
  CHECK(fs::exists(scene / "init_points.ply"));
  CHECK(fs::exists(scene / "view_0.png"));
  CHECK(fs::exists(scene / "view_1.png"));

  const fs::path out = kWork / "run";
  REQUIRE(run("train --scene " + quoted(scene / "scene.txt") + " --out " +
              quoted(out) +
              " --iterations 12 --checkpoint-interval 5 --seed 5"
              " --threads 1") == 0);
  CHECK(fs::exists(out / "checkpoint_5.ply"));
  CHECK(fs::exists(out / "checkpoint_10.ply"));
  CHECK(fs::exists(out / "checkpoint_final.ply"));
  CHECK(count_lines(out / "log.csv") == 1 + 12);

  const fs::path renders = kWork / "renders";
  CHECK(run("render --checkpoint " + quoted(out / "checkpoint_final.ply") +
            " --scene " + quoted(scene / "scene.txt") + " --out " +
            quoted(renders) + " --threads 1") == 0);
  CHECK(fs::exists(renders / "render_0.png"));
  CHECK(fs::exists(renders / "render_1.png"));

  const fs::path csv = kWork / "metrics.csv";
  CHECK(run("eval --checkpoint " + quoted(out / "checkpoint_final.ply") +
            " --scene " + quoted(scene / "scene.txt") +
            " --split train --threads 1 --out " + quoted(csv)) == 0);
  // Header, one row per view, then the mean row.
  CHECK(count_lines(csv) == 1 + 2 + 1);
}

TEST_CASE("config files steer training and flags override them") {
  const fs::path& scene = tiny_scene();

  const fs::path config = kWork / "train.json";
  std::ofstream(config) << R"({"iterations": 7, "densify_until_iter": 0})";
  const fs::path out = kWork / "run_config";
  REQUIRE(run("train --scene " + quoted(scene / "scene.txt") + " --out " +
              quoted(out) + " --config " + quoted(config) + " --threads 1") ==
          0);
  CHECK(count_lines(out / "log.csv") == 1 + 7);

  const fs::path out2 = kWork / "run_override";
  REQUIRE(run("train --scene " + quoted(scene / "scene.txt") + " --out " +
              quoted(out2) + " --config " + quoted(config) +
              " --iterations 9 --threads 1") == 0);
  CHECK(count_lines(out2 / "log.csv") == 1 + 9);

  const fs::path bad = kWork / "bad.json";
  std::ofstream(bad) << R"({"iterationz": 3})";
  CHECK(run("train --scene " + quoted(scene / "scene.txt") + " --out " +
            quoted(kWork / "r2") + " --config " + quoted(bad)) == 2);
}

TEST_CASE("the wall clock budget halts a long run") {
  const fs::path& scene = tiny_scene();
  const fs::path out = kWork / "run_clock";
  REQUIRE(run("train --scene " + quoted(scene / "scene.txt") + " --out " +
              quoted(out) +
              " --iterations 500000 --max-minutes 0.002 --threads 1") == 0);
  CHECK(count_lines(out / "log.csv") < 500000);
  CHECK(fs::exists(out / "checkpoint_final.ply"));
}

TEST_CASE("gradient verification drives the exit code") {
  CHECK(run("gradcheck --scenes 3") == 0);
  CHECK(run("gradcheck --scenes 2 --mutate-term 4") == 1);
}

// End-to-end checks of the command-line tool: exit codes, determinism of
// outputs, and the filter round trip, all driven through the real binary.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include "robust3s/csv.hpp"
#include "robust3s/filter.hpp"
#include "robust3s/rng.hpp"

using namespace robust3s;

namespace {

const std::string kCli = ROBUST3S_CLI_PATH;
const std::string kDir = "cli_work";

int run(const std::string& args, const std::string& out = "/dev/null") {
  const std::string cmd = kCli + " " + args + " > " + out + " 2> " + kDir + "/stderr.txt";
  const int rc = std::system(cmd.c_str());
  return WEXITSTATUS(rc);
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  out << content;
}

struct Setup {
  Setup() {
    const int rc = std::system(("rm -rf " + kDir + " && mkdir -p " + kDir).c_str());
    (void)rc;

    write_file(kDir + "/line.csv", "x,y\n1,2\n2,4\n3,6\n4,8\n5,10\n6,12\n7,14\n8,16\n");

    Rng rng(808);
    std::ostringstream noisy;
    noisy << "x1,x2,y\n";
    for (int i = 0; i < 120; ++i) {
      const double x1 = normal_draw(rng), x2 = normal_draw(rng);
      const double y = 1.0 + 2.0 * x1 - x2 + 0.1 * normal_draw(rng);
      noisy << x1 << ',' << x2 << ',' << y << '\n';
    }
    write_file(kDir + "/noisy.csv", noisy.str());

    std::ostringstream spike;
    spike << "a,b\n";
    Rng rng2(809);
    for (int i = 0; i < 200; ++i)
      spike << (i == 57 ? 1e6 : normal_draw(rng2)) << ',' << normal_draw(rng2) << '\n';
    write_file(kDir + "/spike.csv", spike.str());

    std::ostringstream big;
    big << "v\n";
    Rng rng3(810);
    for (int i = 0; i < 10000; ++i) big << normal_draw(rng3) << '\n';
    write_file(kDir + "/clean1e4.csv", big.str());

    write_file(kDir + "/empty.csv", "");
  }
};

const Setup setup_once;

}  // namespace

TEST_CASE("cli fit: exact line gives slope 2 with a vanishing p-value") {
  REQUIRE(run("fit --input " + kDir + "/line.csv --response y --method ls --format tsv --seed 1",
              kDir + "/line_fit.tsv") == 0);
  const std::string out = slurp(kDir + "/line_fit.tsv");
  CHECK(out.find("x\t2\t") != std::string::npos);
  // p-value column for the slope is exactly zero here.
  std::istringstream ss(out);
  std::string line;
  bool found = false;
  while (std::getline(ss, line)) {
    if (line.rfind("x\t", 0) == 0) {
      const auto last = line.rfind('\t');
      CHECK(std::stod(line.substr(last + 1)) < 1e-6);
      found = true;
    }
  }
  CHECK(found);
}

TEST_CASE("cli fit: 3s on a noisy line recovers the coefficients") {
  REQUIRE(run("fit --input " + kDir + "/noisy.csv --response y --method 3s --format json --seed 3",
              kDir + "/noisy_fit.json") == 0);
  const std::string out = slurp(kDir + "/noisy_fit.json");
  CHECK(out.find("\"filter\"") != std::string::npos);
  CHECK(out.find("\"coefficients\"") != std::string::npos);
}

TEST_CASE("cli fit: usage and data errors use distinct exit codes") {
  CHECK(run("fit --input " + kDir + "/line.csv --response y --method alternating") == 2);
  CHECK(run("fit --input " + kDir + "/line.csv --response nope --method ls") == 3);
  CHECK(run("fit --input " + kDir + "/missing_file.csv --response y") == 3);
  CHECK(run("fit --input " + kDir + "/line.csv") == 2);  // --response required
  CHECK(run("filter --input " + kDir + "/empty.csv --out /dev/null") == 3);
}

TEST_CASE("cli fit: same seed twice gives byte-identical output") {
  REQUIRE(run("fit --input " + kDir + "/noisy.csv --response y --method 3s --format tsv --seed 11",
              kDir + "/fit_a.tsv") == 0);
  REQUIRE(run("fit --input " + kDir + "/noisy.csv --response y --method 3s --format tsv --seed 11",
              kDir + "/fit_b.tsv") == 0);
  CHECK(slurp(kDir + "/fit_a.tsv") == slurp(kDir + "/fit_b.tsv"));
}

TEST_CASE("cli filter: spike becomes NA and the flag matrix round trips") {
  REQUIRE(run("filter --input " + kDir + "/spike.csv --out " + kDir + "/spike_filtered.csv" +
              " --stats-out " + kDir + "/spike_stats.tsv") == 0);
  const io::CsvTable filtered = io::read_csv_file(kDir + "/spike_filtered.csv", true);
  CHECK(std::isnan(filtered.values(57, 0)));

  // Re-ingesting the sentinel-aware output reconstructs U exactly.
  const io::CsvTable original = io::read_csv_file(kDir + "/spike.csv", false);
  const FilterReport rep = filter_matrix(original.values, 0.20, 0.01);
  for (Index j = 0; j < rep.flags.cols(); ++j)
    for (Index i = 0; i < rep.flags.rows(); ++i)
      CHECK((rep.flags(i, j) == 0) == std::isnan(filtered.values(i, j)));
}

TEST_CASE("cli filter: clean normal input keeps more than 99.5% of cells") {
  REQUIRE(run("filter --input " + kDir + "/clean1e4.csv --out " + kDir + "/clean_filtered.csv") ==
          0);
  const io::CsvTable filtered = io::read_csv_file(kDir + "/clean_filtered.csv", true);
  Index nas = 0;
  for (Index i = 0; i < filtered.values.rows(); ++i)
    if (std::isnan(filtered.values(i, 0))) ++nas;
  CHECK(double(nas) / double(filtered.values.rows()) < 0.005);
}

TEST_CASE("cli simulate: smoke grid and deterministic replay") {
  const std::string args =
      "simulate --scenario clean --estimators ls --n 150 --p 5 --replicates 10 --seed 99 --format tsv";
  REQUIRE(run(args, kDir + "/sim_a.tsv") == 0);
  REQUIRE(run(args, kDir + "/sim_b.tsv") == 0);
  const std::string a = slurp(kDir + "/sim_a.tsv");
  CHECK(a == slurp(kDir + "/sim_b.tsv"));
  // one header comment, one column header, one (scenario, estimator) row
  int rows = 0;
  std::istringstream ss(a);
  std::string line;
  while (std::getline(ss, line))
    if (!line.empty() && line[0] != '#') ++rows;
  CHECK(rows == 2);
  CHECK(a.find("clean\tls\t150\t5") != std::string::npos);

  CHECK(run("simulate --scenario nope --estimators ls") == 2);
}

TEST_CASE("cli simulate: default estimator set on a small clean grid") {
  const auto t0 = std::chrono::steady_clock::now();
  REQUIRE(run("simulate --scenario clean --n 150 --p 5 --replicates 10 --seed 12",
              kDir + "/sim_default.tsv") == 0);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(wall < 60.0);
  const std::string out = slurp(kDir + "/sim_default.tsv");
  int rows = 0;
  std::istringstream ss(out);
  std::string line;
  while (std::getline(ss, line))
    if (!line.empty() && line[0] != '#') ++rows;
  CHECK(rows == 4);  // header + one row per default estimator (3s, 2s, ls)
  CHECK(out.find("\t3s\t") != std::string::npos);
  CHECK(out.find("\t2s\t") != std::string::npos);
  CHECK(out.find("\tls\t") != std::string::npos);
}

TEST_CASE("cli simulate: thread cap env var and entropy seeding") {
  const std::string args =
      "simulate --scenario clean --estimators ls --n 150 --p 5 --replicates 8 --seed 3";
  const std::string cmd = "ROBUST3S_THREADS=1 " + kCli + " " + args + " > " + kDir +
                          "/sim_env.tsv 2> /dev/null";
  const int rc = std::system(cmd.c_str());
  REQUIRE(WEXITSTATUS(rc) == 0);
  REQUIRE(run(args, kDir + "/sim_free.tsv") == 0);
  CHECK(slurp(kDir + "/sim_env.tsv") == slurp(kDir + "/sim_free.tsv"));

  // Without --seed the header says the seed was drawn from entropy.
  REQUIRE(run("simulate --scenario clean --estimators ls --n 150 --p 5 --replicates 2",
              kDir + "/sim_noseed.tsv") == 0);
  CHECK(slurp(kDir + "/sim_noseed.tsv").find("drawn from entropy") != std::string::npos);
}

TEST_CASE("cli: config file provides defaults, flags override") {
  write_file(kDir + "/fit.conf", "fit.method=ls\nfit.format=tsv\nfit.seed=5\n");
  REQUIRE(run("--config " + kDir + "/fit.conf fit --input " + kDir + "/noisy.csv --response y",
              kDir + "/conf_a.tsv") == 0);
  const std::string a = slurp(kDir + "/conf_a.tsv");
  CHECK(a.find("# method: ls") != std::string::npos);
  CHECK(a.find("# seed: 5") != std::string::npos);

  REQUIRE(run("--config " + kDir + "/fit.conf fit --input " + kDir +
              "/noisy.csv --response y --method 2s",
              kDir + "/conf_b.tsv") == 0);
  CHECK(slurp(kDir + "/conf_b.tsv").find("# method: 2s") != std::string::npos);
}

TEST_CASE("cli fit: auto-dummies routes binary columns to the alternating block") {
  Rng rng(888);
  std::ostringstream mixed;
  mixed << "x1,x2,flag,y\n";
  for (int i = 0; i < 150; ++i) {
    const double x1 = normal_draw(rng), x2 = normal_draw(rng);
    const double f = uniform01(rng) < 0.3 ? 1.0 : 0.0;
    const double y = 0.5 + 2.0 * x1 - x2 + 1.5 * f + 0.2 * normal_draw(rng);
    mixed << x1 << ',' << x2 << ',' << f << ',' << y << '\n';
  }
  write_file(kDir + "/mixed.csv", mixed.str());
  REQUIRE(run("fit --input " + kDir + "/mixed.csv --response y --method alternating "
              "--auto-dummies --format tsv --seed 2",
              kDir + "/mixed_fit.tsv") == 0);
  const std::string out = slurp(kDir + "/mixed_fit.tsv");
  CHECK(out.find("flag\t1.") != std::string::npos);  // dummy coefficient near 1.5

  // Continuous-only methods refuse explicit dummy columns.
  CHECK(run("fit --input " + kDir + "/mixed.csv --response y --method 2s --dummies flag") == 2);
}

TEST_CASE("cli simulate: plot data file and argument validation") {
  REQUIRE(run("simulate --scenario cellwise --epsilon 0.05 --k-grid 3 --estimators ls --n 120 "
              "--p 4 --replicates 4 --seed 6 --plot-data " + kDir + "/plot.tsv",
              kDir + "/plot_main.tsv") == 0);
  const std::string plot = slurp(kDir + "/plot.tsv");
  CHECK(plot.find("cellwise\t3\tls\tmse\t") != std::string::npos);
  CHECK(plot.find("\tcil\t") != std::string::npos);

  CHECK(run("simulate --scenario cellwise --epsilon 0.7 --estimators ls") == 2);
  CHECK(run("simulate --scenario cellwise --k-grid abc --estimators ls") == 2);
  CHECK(run("simulate --scenario clean --estimators ls --replicates 0") == 2);
}

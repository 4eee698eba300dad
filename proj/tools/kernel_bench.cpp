#include <chrono>
#include <cstdint>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "affinefence/enforce.hpp"
#include "affinefence/linalg.hpp"
#include "affinefence/network.hpp"
#include "affinefence/parallel.hpp"
#include "affinefence/regions.hpp"
#include "affinefence/signs.hpp"

namespace af = affinefence;

namespace {

af::Matrix random_matrix(std::size_t rows, std::size_t cols,
                         std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  af::Matrix m(rows, cols);
  for (double& v : m.data) v = gauss(rng);
  return m;
}

template <typename Fn>
double best_seconds(std::size_t reps, Fn&& fn) {
  double best = 0.0;
  for (std::size_t r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const double s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    if (r == 0 || s < best) best = s;
  }
  return best;
}

void print_row(const std::string& kernel, const std::string& size,
               double serial_s, double parallel_s, bool bit_equal) {
  std::cout << kernel << ',' << size << ',' << serial_s << ',' << parallel_s
            << ',' << (parallel_s > 0.0 ? serial_s / parallel_s : 0.0) << ','
            << (bit_equal ? "yes" : "no") << '\n';
}

}  // namespace

// Compares the serial reference kernels against the parallel ones and checks
// the results agree bitwise, which the parallel contract requires for any
// job count. Exit 1 on any mismatch.
int main(int argc, char** argv) {
  CLI::App app{"Serial-vs-parallel kernel comparison"};
  int jobs = af::hardware_jobs();
  std::size_t reps = 3;
  std::uint64_t seed = 0;
  app.add_option("--jobs", jobs, "Parallel worker count")
      ->check(CLI::PositiveNumber);
  app.add_option("--reps", reps, "Repetitions per cell (best time wins)")
      ->check(CLI::PositiveNumber);
  app.add_option("--seed", seed, "Seed for the random inputs");
  CLI11_PARSE(app, argc, argv);

  std::cout << "parallel jobs: " << jobs << "\n"
            << "kernel,size,serial_s,parallel_s,speedup,bit_equal\n";
  bool all_equal = true;

  for (const std::size_t n : {128, 256, 512}) {
    const af::Matrix a = random_matrix(n, n, seed + n);
    const af::Matrix b = random_matrix(n, n, seed + 2 * n + 1);
    af::Matrix serial_out, parallel_out;
    const double t_serial =
        best_seconds(reps, [&] { serial_out = af::matmul_serial(a, b); });
    af::set_max_jobs(jobs);
    const double t_parallel =
        best_seconds(reps, [&] { parallel_out = af::matmul(a, b); });
    af::set_max_jobs(1);
    const bool equal = serial_out == parallel_out;
    all_equal = all_equal && equal;
    print_row("matmul", std::to_string(n) + "x" + std::to_string(n), t_serial,
              t_parallel, equal);
  }

  {
    std::vector<af::ConvexRegion> list;
    for (std::size_t i = 0; i < 4; ++i) {
      const double lo0 = -2.0 + 1.0 * static_cast<double>(i) + 0.2;
      list.push_back(af::make_region(
          "B" + std::to_string(i),
          af::make_box(af::Vector{lo0, 0.0, 0.0, 0.0},
                       af::Vector{lo0 + 0.6, 1.0, 1.0, 1.0})));
    }
    const af::RegionSet regions = af::make_region_set(std::move(list));
    const af::MlpNetwork net =
        af::init_network({4, 256, 256, 256, 1}, 0.01, seed + 99);
    const af::RegionPreActivations preacts =
        af::propagate_vertices(net, regions);
    const af::SignMap map =
        af::ensure_unique(af::assign_majority(preacts), preacts);

    af::MlpNetwork serial_net, parallel_net;
    const double t_serial = best_seconds(reps, [&] {
      serial_net = af::enforce_signs(net, regions, map, af::EnforceConfig{})
                       .first;
    });
    af::set_max_jobs(jobs);
    const double t_parallel = best_seconds(reps, [&] {
      parallel_net = af::enforce_signs(net, regions, map, af::EnforceConfig{})
                         .first;
    });
    af::set_max_jobs(1);
    const bool equal = serial_net == parallel_net;
    all_equal = all_equal && equal;
    print_row("enforce", "4x16 vertices, 3x256", t_serial, t_parallel, equal);
  }

  if (!all_equal) {
    std::cerr << "parallel kernels diverged from the serial reference\n";
    return 1;
  }
  return 0;
}

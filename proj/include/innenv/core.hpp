#pragma once

#include <Eigen/Dense>

#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <functional>
#include <mutex>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace innenv {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using MatRef = const Eigen::Ref<const Mat>&;
using VecRef = const Eigen::Ref<const Vec>&;

// observations in rows: Y is n x r, X is n x p
struct Dataset {
  Mat Y;
  Mat X;
  int n() const { return static_cast<int>(Y.rows()); }
  int r() const { return static_cast<int>(Y.cols()); }
  int p() const { return static_cast<int>(X.cols()); }
};

struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// raised when a coordinate chart needs an invertible top block but does not have one;
// carries a row order (from pivoted QR) that would fix it if applied to the responses
struct SingularUpperBlock : std::runtime_error {
  std::vector<int> suggested_permutation;
  SingularUpperBlock(const std::string& msg, std::vector<int> perm)
      : std::runtime_error(msg), suggested_permutation(std::move(perm)) {}
};

// --- deterministic RNG streams -------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// independent substream `stream` of a master seed; stable across runs and platforms
inline std::mt19937_64 rng_stream(std::uint64_t master_seed, std::uint64_t stream = 0) {
  return std::mt19937_64(splitmix64(splitmix64(master_seed) ^ splitmix64(stream ^ 0x632be59bd9b4e019ULL)));
}

// --- parallel replicate map ----------------------------------------------------

inline int default_jobs() {
  if (const char* env = std::getenv("INNENV_JOBS")) {
    int v = std::atoi(env);
    if (v > 0) return v;
  }
  unsigned hc = std::thread::hardware_concurrency();
  return hc ? static_cast<int>(hc) : 1;
}

// runs body(i) for i in [0, count); results must be written to preallocated
// per-index slots so the outcome is identical for any job count
inline void parallel_for(int count, const std::function<void(int)>& body, int jobs = 0) {
  if (jobs <= 0) jobs = default_jobs();
  jobs = std::min(jobs, count);
  if (jobs <= 1) {
    for (int i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(jobs);
  for (int w = 0; w < jobs; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        int i = next.fetch_add(1);
        if (i >= count) return;
        try {
          body(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

// --- small helpers -------------------------------------------------------------

inline Mat column_center(MatRef M) {
  return M.rowwise() - M.colwise().mean();
}

// sample covariance with 1/n normalization (moment convention used throughout)
inline Mat covariance(MatRef M) {
  Mat C = column_center(M);
  return C.transpose() * C / static_cast<double>(M.rows());
}

inline Mat symmetric_sqrt(MatRef S) {
  Eigen::SelfAdjointEigenSolver<Mat> es(S);
  return es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
         es.eigenvectors().transpose();
}

inline Mat symmetric_inv_sqrt(MatRef S) {
  Eigen::SelfAdjointEigenSolver<Mat> es(S);
  Vec ev = es.eigenvalues();
  Vec inv = ev.unaryExpr([](double v) { return v > 1e-300 ? 1.0 / std::sqrt(v) : 0.0; });
  return es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace innenv

#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <exception>
#include <functional>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "srx/core/types.hpp"

namespace srx::pipeline {

/// Real-time budget accounting. A buffer is `buffer_duration_s` of signal; S streams
/// keep up iff the mean processing time per buffer is below S times that.
struct BudgetReport {
  std::size_t n_streams = 1;
  double buffer_duration_s = kBufferDuration;
  std::vector<std::string> stage_names;
  std::vector<std::uint64_t> sequence;           // per measured buffer
  std::vector<double> buffer_wall_s;             // first stage start to last stage end
  std::vector<double> buffer_wait_s;             // time blocked on cross-buffer dependencies
  std::vector<double> buffer_processing_s;       // wall - wait
  std::vector<std::vector<double>> stage_s;      // [stage][buffer]
  double total_wall_s = 0.0;
  std::size_t excluded_warmup = 0;

  [[nodiscard]] std::size_t n_buffers() const { return buffer_processing_s.size(); }

  [[nodiscard]] double mean_processing_s() const { return mean(buffer_processing_s); }

  [[nodiscard]] double realtime_ratio() const {
    return mean_processing_s() / (buffer_duration_s * static_cast<double>(n_streams));
  }

  [[nodiscard]] bool realtime_capable() const { return realtime_ratio() < 1.0; }

  [[nodiscard]] double stage_mean_s(std::size_t i) const { return mean(stage_s.at(i)); }

  [[nodiscard]] double stage_sum_s() const {
    double s = 0.0;
    for (std::size_t i = 0; i < stage_s.size(); ++i) s += stage_mean_s(i);
    return s;
  }

  /// |sum of stage means - mean processing| / mean processing.
  [[nodiscard]] double consistency_error() const {
    const double p = mean_processing_s();
    return p > 0.0 ? std::abs(stage_sum_s() - p) / p : 0.0;
  }

  /// Log-spaced histogram of one stage's durations: (bin lower edge in s, count).
  [[nodiscard]] std::vector<std::pair<double, std::size_t>> stage_histogram(std::size_t i, std::size_t bins = 16) const {
    const auto& v = stage_s.at(i);
    std::vector<std::pair<double, std::size_t>> h;
    if (v.empty()) return h;
    const double lo = std::max(*std::min_element(v.begin(), v.end()), 1e-9);
    const double hi = std::max(*std::max_element(v.begin(), v.end()), lo * 1.0001);
    const double r = std::log(hi / lo) / static_cast<double>(bins);
    for (std::size_t b = 0; b < bins; ++b) h.emplace_back(lo * std::exp(r * static_cast<double>(b)), 0);
    for (double x : v) {
      auto b = r > 0.0 ? static_cast<std::size_t>(std::log(std::max(x, lo) / lo) / r) : 0;
      ++h[std::min(b, bins - 1)].second;
    }
    return h;
  }

  [[nodiscard]] std::string to_csv() const {
    std::ostringstream os;
    os << "key,value\n";
    os << "n_streams," << n_streams << "\n";
    os << "n_buffers," << n_buffers() << "\n";
    os << "excluded_warmup," << excluded_warmup << "\n";
    os << "buffer_duration_s," << buffer_duration_s << "\n";
    os << "mean_processing_s," << mean_processing_s() << "\n";
    os << "realtime_ratio," << realtime_ratio() << "\n";
    os << "realtime_capable," << (realtime_capable() ? 1 : 0) << "\n";
    os << "stage_sum_s," << stage_sum_s() << "\n";
    os << "consistency_error," << consistency_error() << "\n";
    os << "total_wall_s," << total_wall_s << "\n";
    for (std::size_t i = 0; i < stage_names.size(); ++i) os << "stage_mean_s:" << stage_names[i] << "," << stage_mean_s(i) << "\n";
    return os.str();
  }

  [[nodiscard]] std::string to_table() const {
    std::ostringstream os;
    char line[512];
    std::snprintf(line, sizeof line, "%-24s %12s %8s\n", "stage", "mean [ms]", "share");
    os << line;
    const double p = mean_processing_s();
    for (std::size_t i = 0; i < stage_names.size(); ++i) {
      std::snprintf(line, sizeof line, "%-24s %12.3f %7.1f%%\n", stage_names[i].c_str(), stage_mean_s(i) * 1e3,
                    p > 0.0 ? 100.0 * stage_mean_s(i) / p : 0.0);
      os << line;
    }
    std::snprintf(line, sizeof line,
                  "buffers %zu (warm-up excluded %zu), streams %zu\n"
                  "mean processing %.3f ms, budget %.3f ms x %zu streams\n"
                  "realtime_ratio %.4g (%s), stage sum deviation %.1f%%\n",
                  n_buffers(), excluded_warmup, n_streams, p * 1e3, buffer_duration_s * 1e3, n_streams, realtime_ratio(),
                  realtime_capable() ? "real-time capable" : "not real-time", 100.0 * consistency_error());
    os << line;
    return os.str();
  }

 private:
  static double mean(const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  }
};

struct PipelineOptions {
  std::size_t n_streams = 5;
  /// Called before every stage with (stage, sequence index); used to inject delays.
  std::function<void(std::size_t, std::uint64_t)> jitter;
  /// Buffers at the start that are left out of the report.
  std::size_t exclude_warmup = 0;
};

/// Runs `chain` over the buffers produced by `source` (a callable returning
/// std::optional<Input>, empty at the end) on `n_streams` worker threads and hands the
/// frames to `sink` in buffer order. Buffer m goes to worker m mod S; stages flagged
/// dependent wait until the previous buffer has completed the same stage. At most S
/// buffers are in flight: buffer m is accepted only after frame m-S was emitted.
template <class Chain, class Source, class Sink>
BudgetReport run_pipeline(Chain& chain, Source&& source, Sink&& sink, const PipelineOptions& opt = {}) {
  using Clock = std::chrono::steady_clock;
  using Input = typename Chain::Input;
  using Output = typename Chain::Output;
  using Work = typename Chain::Work;
  constexpr std::size_t kStages = Chain::kStages;
  const std::size_t S = std::max<std::size_t>(1, opt.n_streams);

  struct Record {
    std::uint64_t seq = 0;
    double wall = 0.0, wait = 0.0;
    std::array<double, kStages> stage{};
  };
  struct Done {
    Output out;
    Record rec;
  };
  struct Job {
    std::uint64_t ordinal = 0;
    Work work;
  };

  std::mutex mu;
  std::condition_variable cv_jobs, cv_dep, cv_done;
  std::vector<std::deque<Job>> queues(S);
  std::array<std::uint64_t, kStages> dep_done{};
  std::map<std::uint64_t, Done> finished;
  bool stop = false;
  bool abort = false;
  std::exception_ptr error;

  auto fail = [&](std::exception_ptr e) {
    std::lock_guard lk(mu);
    if (!error) error = e;
    abort = true;
    cv_jobs.notify_all();
    cv_dep.notify_all();
    cv_done.notify_all();
  };

  auto worker = [&](std::size_t id) {
    for (;;) {
      Job job;
      {
        std::unique_lock lk(mu);
        cv_jobs.wait(lk, [&] { return abort || stop || !queues[id].empty(); });
        if (abort) return;
        if (queues[id].empty()) return;  // stop requested and nothing left
        job = std::move(queues[id].front());
        queues[id].pop_front();
      }
      try {
        Record rec;
        const auto t_start = Clock::now();
        for (std::size_t s = 0; s < kStages; ++s) {
          if (Chain::kDependent[s]) {
            const auto w0 = Clock::now();
            std::unique_lock lk(mu);
            cv_dep.wait(lk, [&] { return abort || dep_done[s] == job.ordinal; });
            if (abort) return;
            rec.wait += std::chrono::duration<double>(Clock::now() - w0).count();
          }
          if (opt.jitter) opt.jitter(s, job.ordinal);
          const auto t0 = Clock::now();
          chain.run_stage(s, job.work);
          rec.stage[s] = std::chrono::duration<double>(Clock::now() - t0).count();
          if (Chain::kDependent[s]) {
            std::lock_guard lk(mu);
            ++dep_done[s];
            cv_dep.notify_all();
          }
        }
        Output out = chain.finish(job.work);
        rec.wall = std::chrono::duration<double>(Clock::now() - t_start).count();
        rec.seq = job.ordinal;
        std::lock_guard lk(mu);
        finished.emplace(job.ordinal, Done{std::move(out), rec});
        cv_done.notify_all();
      } catch (...) {
        fail(std::current_exception());
        return;
      }
    }
  };

  BudgetReport report;
  report.n_streams = S;
  report.excluded_warmup = opt.exclude_warmup;
  for (auto* n : Chain::kStageNames) report.stage_names.emplace_back(n);
  report.stage_s.assign(kStages, {});

  std::uint64_t emitted = 0;
  auto emit_one = [&](Done&& d) {
    if (d.rec.seq >= opt.exclude_warmup) {
      report.sequence.push_back(d.rec.seq);
      report.buffer_wall_s.push_back(d.rec.wall);
      report.buffer_wait_s.push_back(d.rec.wait);
      report.buffer_processing_s.push_back(d.rec.wall - d.rec.wait);
      for (std::size_t s = 0; s < kStages; ++s) report.stage_s[s].push_back(d.rec.stage[s]);
    }
    sink(std::move(d.out));
    ++emitted;
  };
  // Waits for the next in-order frame and emits it outside the lock.
  auto emit_next = [&]() -> bool {
    std::optional<Done> d;
    {
      std::unique_lock lk(mu);
      cv_done.wait(lk, [&] { return abort || finished.count(emitted) > 0; });
      if (abort) return false;
      auto it = finished.find(emitted);
      d.emplace(std::move(it->second));
      finished.erase(it);
    }
    emit_one(std::move(*d));
    return true;
  };

  const auto wall0 = Clock::now();
  std::vector<std::thread> threads;
  threads.reserve(S);
  for (std::size_t i = 0; i < S; ++i) threads.emplace_back(worker, i);

  std::uint64_t fed = 0;
  std::optional<std::uint64_t> last_seq;
  try {
    for (;;) {
      std::optional<Input> in = source();
      if (!in) break;
      if (last_seq && sequence_gap(*last_seq, in->sequence_index)) {
        throw std::runtime_error("source gap: buffer " + std::to_string(in->sequence_index) + " follows " +
                                 std::to_string(*last_seq));
      }
      last_seq = in->sequence_index;
      while (emitted + S <= fed) {
        if (!emit_next()) break;
      }
      {
        std::lock_guard lk(mu);
        if (abort) break;
      }
      Job job{fed, chain.make_work(std::move(*in))};
      {
        std::lock_guard lk(mu);
        queues[fed % S].push_back(std::move(job));
        cv_jobs.notify_all();
      }
      ++fed;
    }
    while (emitted < fed) {
      if (!emit_next()) break;
    }
  } catch (...) {
    fail(std::current_exception());
  }
  {
    std::lock_guard lk(mu);
    stop = true;
    cv_jobs.notify_all();
  }
  for (auto& t : threads) t.join();
  if (error) std::rethrow_exception(error);
  if (auto tail = chain.flush()) sink(std::move(*tail));
  report.total_wall_s = std::chrono::duration<double>(Clock::now() - wall0).count();
  return report;
}

/// Pipeline run whose output is discarded; the first three buffers are excluded from
/// the statistics.
template <class Chain, class Source>
BudgetReport throughput_probe(Chain& chain, Source&& source, PipelineOptions opt = {}) {
  opt.exclude_warmup = std::max<std::size_t>(opt.exclude_warmup, 3);
  return run_pipeline(chain, std::forward<Source>(source), [](auto&&) {}, opt);
}

/// Chain that copies its input through a configurable number of trivial stages.
/// Stage 0 is dependent and checks buffer order.
template <class T>
class PassthroughChain {
 public:
  using Input = SampleBuffer<T>;
  using Output = SampleBuffer<T>;
  static constexpr std::size_t kStages = 3;
  static constexpr std::array<const char*, kStages> kStageNames = {"carry", "copy", "checksum"};
  static constexpr std::array<bool, kStages> kDependent = {true, false, false};

  struct Work {
    Input in;
    Output out;
  };

  Work make_work(Input&& in) { return Work{std::move(in), {}}; }

  void run_stage(std::size_t stage, Work& w) {
    switch (stage) {
      case 0:
        if (w.in.sequence_index != next_) throw std::logic_error("passthrough: carry out of order");
        ++next_;
        break;
      case 1:
        w.out = w.in;
        break;
      case 2:
        w.out.sequence_index = w.in.sequence_index;
        break;
      default:
        throw std::out_of_range("stage index");
    }
  }

  Output finish(Work& w) { return std::move(w.out); }
  std::optional<Output> flush() { return std::nullopt; }

 private:
  std::uint64_t next_ = 0;
};

}  // namespace srx::pipeline

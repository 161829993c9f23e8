#include <gtest/gtest.h>

#include <random>
#include <thread>

#include "srx/pipeline/pipeline.hpp"

using namespace srx;
using namespace srx::pipeline;

namespace {

/// Stage 0 carries a running checksum across buffers (dependent), stage 1 does
/// independent per-buffer work, stage 2 combines them.
class CarryChain {
 public:
  using Input = SampleBuffer<float>;
  using Output = std::vector<double>;
  static constexpr std::size_t kStages = 3;
  static constexpr std::array<const char*, kStages> kStageNames = {"carry", "work", "combine"};
  static constexpr std::array<bool, kStages> kDependent = {true, false, false};

  struct Work {
    Input in;
    double carry = 0.0;
    std::vector<double> out;
  };

  std::chrono::microseconds spin{0};

  Work make_work(Input&& in) { return Work{std::move(in), 0.0, {}}; }

  void run_stage(std::size_t s, Work& w) {
    busy();
    if (s == 0) {
      if (w.in.sequence_index != next_) throw std::logic_error("carry out of order");
      ++next_;
      w.carry = state_;
      for (float v : w.in.samples) state_ = state_ * 0.999 + v;
    } else if (s == 1) {
      w.out.resize(w.in.samples.size());
      for (std::size_t i = 0; i < w.out.size(); ++i) w.out[i] = std::sin(double(w.in.samples[i]));
    } else {
      for (auto& v : w.out) v += w.carry;
      if (fail_at && w.in.sequence_index == *fail_at) throw std::runtime_error("stage failure");
    }
  }

  Output finish(Work& w) { return std::move(w.out); }
  std::optional<Output> flush() { return std::nullopt; }

  std::optional<std::uint64_t> fail_at;

 private:
  void busy() const {
    const auto until = std::chrono::steady_clock::now() + spin;
    while (std::chrono::steady_clock::now() < until) {
    }
  }
  std::uint64_t next_ = 0;
  double state_ = 0.0;
};

template <class T>
auto counting_source(std::size_t n_buffers, std::size_t len, std::uint64_t seed = 1) {
  return [n_buffers, len, seq = std::uint64_t{0}, rng = std::mt19937_64(seed)]() mutable -> std::optional<SampleBuffer<T>> {
    if (seq == n_buffers) return std::nullopt;
    SampleBuffer<T> b;
    b.sequence_index = seq++;
    b.samples.resize(len);
    for (auto& v : b.samples) v = static_cast<T>(rng() % 1000) / T(100);
    return b;
  };
}

std::vector<std::vector<double>> run_carry(std::size_t streams, std::function<void(std::size_t, std::uint64_t)> jitter = {}) {
  CarryChain chain;
  std::vector<std::vector<double>> out;
  PipelineOptions opt;
  opt.n_streams = streams;
  opt.jitter = std::move(jitter);
  run_pipeline(chain, counting_source<float>(40, 4096), [&](std::vector<double>&& v) { out.push_back(std::move(v)); }, opt);
  return out;
}

}  // namespace

TEST(Pipeline, StreamCountDoesNotChangeTheOutput) {
  const auto one = run_carry(1);
  ASSERT_EQ(one.size(), 40u);
  EXPECT_EQ(run_carry(5), one);
  EXPECT_EQ(run_carry(3), one);
}

TEST(Pipeline, RandomizedSchedulingIsDeterministic) {
  const auto ref = run_carry(1);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto jitter = [seed](std::size_t stage, std::uint64_t seq) {
      std::mt19937_64 r(seed * 1000003u + seq * 31u + stage);
      std::this_thread::sleep_for(std::chrono::microseconds(r() % 300));
    };
    EXPECT_EQ(run_carry(5, jitter), ref) << seed;
  }
}

TEST(Pipeline, SourceGapThrows) {
  CarryChain chain;
  std::uint64_t i = 0;
  auto src = [&]() -> std::optional<SampleBuffer<float>> {
    if (i == 5) return std::nullopt;
    SampleBuffer<float> b;
    b.samples.assign(16, 1.0f);
    b.sequence_index = i == 3 ? 4 : i;
    ++i;
    return b;
  };
  try {
    run_pipeline(chain, src, [](auto&&) {}, PipelineOptions{});
    FAIL() << "no throw";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("source gap"), std::string::npos);
  }
}

TEST(Pipeline, StageExceptionPropagates) {
  CarryChain chain;
  chain.fail_at = 7;
  EXPECT_THROW(run_pipeline(chain, counting_source<float>(20, 64), [](auto&&) {}, PipelineOptions{}), std::runtime_error);
}

TEST(Pipeline, AtMostStreamsBuffersInFlight) {
  CarryChain chain;
  const std::size_t S = 3;
  std::uint64_t requested = 0, emitted = 0;
  bool ok = true;
  auto inner = counting_source<float>(30, 256);
  auto src = [&]() {
    // before buffer m is accepted, frame m - S must have been emitted
    if (requested >= S && emitted + S < requested) ok = false;
    ++requested;
    return inner();
  };
  PipelineOptions opt;
  opt.n_streams = S;
  opt.jitter = [](std::size_t, std::uint64_t) { std::this_thread::sleep_for(std::chrono::microseconds(200)); };
  run_pipeline(chain, src, [&](auto&&) { ++emitted; }, opt);
  EXPECT_TRUE(ok);
  EXPECT_EQ(emitted, 30u);
}

TEST(Pipeline, PassthroughIsFarBelowRealtime) {
  PassthroughChain<std::uint16_t> chain;
  const auto rep = throughput_probe(chain, counting_source<std::uint16_t>(50, 1024), PipelineOptions{});
  EXPECT_EQ(rep.n_buffers(), 47u);
  EXPECT_EQ(rep.excluded_warmup, 3u);
  EXPECT_LT(rep.realtime_ratio(), 0.1);
  EXPECT_TRUE(rep.realtime_capable());
}

TEST(Pipeline, InjectedDelayCrossesRealtime) {
  PassthroughChain<std::uint16_t> chain;
  PipelineOptions opt;
  opt.n_streams = 1;
  // each buffer is ~1.05 ms of signal; 3 stages x 1 ms of injected work exceeds it
  CarryChain busy;
  busy.spin = std::chrono::microseconds(1000);
  const auto rep = throughput_probe(busy, counting_source<float>(10, 64), opt);
  EXPECT_GT(rep.realtime_ratio(), 1.0);
  EXPECT_FALSE(rep.realtime_capable());
  const auto fast = throughput_probe(chain, counting_source<std::uint16_t>(10, 64), opt);
  EXPECT_LT(fast.realtime_ratio(), 1.0);
}

TEST(Pipeline, StageTimesAddUpToTheBufferTime) {
  CarryChain chain;
  chain.spin = std::chrono::microseconds(400);
  PipelineOptions opt;
  opt.n_streams = 1;
  const auto rep = throughput_probe(chain, counting_source<float>(20, 4096), opt);
  EXPECT_LT(rep.consistency_error(), 0.2);
  ASSERT_EQ(rep.stage_names.size(), 3u);
  EXPECT_EQ(rep.stage_names[0], "carry");
}

TEST(BudgetReport, CsvAndTable) {
  BudgetReport r;
  r.n_streams = 2;
  r.stage_names = {"a", "b"};
  r.stage_s = {{1e-3, 1e-3}, {2e-3, 2e-3}};
  r.buffer_processing_s = {3e-3, 3e-3};
  EXPECT_NEAR(r.realtime_ratio(), 3e-3 / (2.0 * kBufferDuration), 1e-12);
  EXPECT_NEAR(r.consistency_error(), 0.0, 1e-12);
  const auto csv = r.to_csv();
  EXPECT_NE(csv.find("realtime_ratio,"), std::string::npos);
  EXPECT_NE(csv.find("stage_mean_s:b,0.002"), std::string::npos);
  EXPECT_NE(r.to_table().find("not real-time"), std::string::npos);
  const auto h = r.stage_histogram(0, 4);
  std::size_t total = 0;
  for (const auto& [edge, n] : h) total += n;
  EXPECT_EQ(total, 2u);
}

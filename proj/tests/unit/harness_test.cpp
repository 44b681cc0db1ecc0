#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "fxq/error.hpp"
#include "fxq/harness/config.hpp"
#include "fxq/harness/csv.hpp"
#include "fxq/harness/dataset.hpp"
#include "fxq/harness/experiment.hpp"
#include "fxq/quantizer.hpp"

namespace fxq::harness {
namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("fxq_harness_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void spit(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out << bytes;
}

std::string be32(std::uint32_t v) {
  return {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8), static_cast<char>(v)};
}

ExperimentConfig small_config() {
  ExperimentConfig c;
  c.task = Task::ClassificationVector;
  c.dataset.source = "synthetic-clusters";
  c.dataset.samples = 240;
  c.dataset.dims = 6;
  c.dataset.classes = 3;
  c.dataset.noise = 0.6;
  c.dataset.split = {0.2, 0.2};
  c.network = {nn::fully_connected(12), nn::activation(nn::ActivationFn::Tanh), nn::fully_connected(3)};
  c.float_training.optimizer.lr_schedule.initial_lr = 0.05;
  c.float_training.batching.batch_size = 16;
  c.float_training.max_epochs = 4;
  c.retraining.batching.batch_size = 16;
  c.retraining.optimizer.lr_schedule.initial_lr = 0.01;
  c.retraining.max_epochs = 2;
  c.cells = {{2, qat::Schedule::parse("direct")}, {2, qat::Schedule::parse("adaptive")}};
  c.seeds = {1, 2};
  return c;
}

// --- datasets ---------------------------------------------------------------

TEST(Idx, ParsesThreeDimensionalUnsignedByteArray) {
  std::string bytes = be32(0x00000803) + be32(10) + be32(4) + be32(4);
  for (int i = 0; i < 160; ++i) bytes.push_back(static_cast<char>(i));
  const auto a = parse_idx(bytes);
  EXPECT_EQ(a.dims, (std::vector<std::uint32_t>{10, 4, 4}));
  ASSERT_EQ(a.data.size(), 160u);
  EXPECT_EQ(a.data[159], 159);

  std::string lbytes = be32(0x00000801) + be32(10);
  for (int i = 0; i < 10; ++i) lbytes.push_back(static_cast<char>(i % 3));
  const auto d = idx_dataset(a, parse_idx(lbytes), 3);
  EXPECT_EQ(d.size(), 10u);
  EXPECT_EQ(d.inputs.shape(), (nn::Shape{10, 1, 4, 4}));
  EXPECT_FLOAT_EQ(d.inputs[17], 17.0f / 255.0f);
  EXPECT_EQ(d.labels[4], 1);
}

TEST(Idx, WriteReadRoundTrip) {
  const auto dir = scratch("idx");
  IdxArray a{{3, 2}, {1, 2, 3, 4, 5, 255}};
  write_idx(dir / "a.idx", a);
  EXPECT_EQ(read_idx(dir / "a.idx"), a);
}

TEST(Idx, MalformedInputsReportByteOffsets) {
  auto offset_of = [](const std::string& bytes) {
    try {
      parse_idx(bytes);
    } catch (const ParseError& e) {
      return static_cast<long long>(e.offset());
    }
    return -1LL;
  };
  EXPECT_EQ(offset_of(std::string("\0\0", 2)), 2);                      // truncated magic
  EXPECT_EQ(offset_of(std::string("\1\0\x08\1", 4) + be32(1) + "x"), 0);  // nonzero leading bytes
  EXPECT_EQ(offset_of(be32(0x00000d01) + be32(1) + "abcd"), 2);          // float type code unsupported
  EXPECT_EQ(offset_of(be32(0x00000802) + be32(2)), 8);                   // dims cut short
  EXPECT_EQ(offset_of(be32(0x00000801) + be32(4) + "ab"), 10);           // payload cut short
  EXPECT_THROW(read_idx("/nonexistent/fxq.idx"), IoError);
}

TEST(Datasets, GeneratorsAreDeterministic) {
  EXPECT_EQ(synthetic_clusters(100, 5, 4, 0.5, 9), synthetic_clusters(100, 5, 4, 0.5, 9));
  EXPECT_NE(synthetic_clusters(100, 5, 4, 0.5, 9), synthetic_clusters(100, 5, 4, 0.5, 10));
  EXPECT_EQ(synthetic_digits(50, 10, 1.0, 3), synthetic_digits(50, 10, 1.0, 3));
  EXPECT_EQ(synthetic_text(5000, 3), synthetic_text(5000, 3));

  DatasetConfig cfg;
  cfg.samples = 300;
  const auto a = load_dataset(cfg, Task::ClassificationImage);
  const auto b = load_dataset(cfg, Task::ClassificationImage);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.dev, b.dev);
  EXPECT_EQ(a.test, b.test);
  EXPECT_EQ(a.train.inputs.rank(), 4u);
  EXPECT_EQ(load_dataset(cfg, Task::ClassificationVector).train.inputs.rank(), 2u);
}

TEST(Datasets, DigitsCoverEveryClass) {
  const auto d = synthetic_digits(500, 10, 1.0, 4);
  std::set<int> seen(d.labels.begin(), d.labels.end());
  EXPECT_EQ(seen.size(), 10u);
  for (std::size_t i = 0; i < d.inputs.size(); ++i) {
    ASSERT_GE(d.inputs[i], 0.0f);
    ASSERT_LE(d.inputs[i], 1.0f);
  }
}

TEST(Datasets, SplitSizesFloorRule) {
  const auto s = split_sizes(101, {0.1, 0.15});
  EXPECT_EQ(s.dev, 10u);
  EXPECT_EQ(s.test, 15u);
  EXPECT_EQ(s.train, 76u);
}

TEST(Datasets, OneMegabyteCorpusSplitsExactly) {
  const auto dir = scratch("corpus");
  std::string text = synthetic_text(1000003, 5);
  spit(dir / "corpus.txt", text);
  DatasetConfig cfg;
  cfg.source = "text";
  cfg.path = dir / "corpus.txt";
  cfg.split = {0.05, 0.05};
  const auto d = load_dataset(cfg, Task::CharLanguageModel);
  // floor(0.05 * 1000003) = 50000 each, 900003 to train.
  EXPECT_EQ(d.dev.size(), 50000u);
  EXPECT_EQ(d.test.size(), 50000u);
  EXPECT_EQ(d.train.size(), 900003u);
  // Contiguous split: the test stream is the tail of the corpus.
  EXPECT_EQ(d.vocabulary[d.test.labels.back()], std::string(1, text.back()));
}

TEST(Datasets, Utf8Vocabularies) {
  const auto t = tokenize("h\xc3\xa9llo", "charset");
  EXPECT_EQ(t.tokens.size(), 5u);
  EXPECT_EQ(t.vocabulary, (std::vector<std::string>{"h", "l", "o", "\xc3\xa9"}));
  EXPECT_EQ(tokenize("h\xc3\xa9", "byte").tokens.size(), 3u);
  try {
    tokenize("ab\xc3(", "charset");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 3u);  // the bad continuation byte
  }
  EXPECT_THROW(read_text_file("/nonexistent/corpus.txt"), IoError);
}

// --- CSV and config --------------------------------------------------------

TEST(Csv, QuotingRoundTrip) {
  CsvTable t{{"a", "b"}, {{"plain", "with,comma"}, {"quote\"d", "line\nbreak"}, {"", "x"}}};
  const auto dir = scratch("csv");
  write_csv(dir / "t.csv", t);
  const auto back = read_csv(dir / "t.csv");
  EXPECT_EQ(back.header, t.header);
  EXPECT_EQ(back.rows, t.rows);
  EXPECT_EQ(back.column("b"), 1u);
  EXPECT_THROW(back.column("c"), ParseError);
  EXPECT_THROW(parse_csv("a,b\n1,2,3\n"), ParseError);
}

TEST(Csv, DoublesRoundTrip) {
  for (const double v : {0.1, 1.0 / 3.0, 29.61, 1e-300, -2.5}) {
    EXPECT_EQ(std::stod(format_double(v)), v);
  }
}

TEST(Config, JsonRoundTripAndStrictKeys) {
  const auto c = small_config();
  const auto j = c.to_json();
  EXPECT_EQ(ExperimentConfig::from_json(j).to_json(), j);

  auto bad = j;
  bad["retraining"]["learning_rate"] = 0.1;
  EXPECT_THROW(ExperimentConfig::from_json(bad), InvalidArgument);
  bad = j;
  bad["seeds"] = nlohmann::json::array();
  EXPECT_THROW(ExperimentConfig::from_json(bad), InvalidArgument);
  bad = j;
  bad["cells"][0]["schedule"] = "sometimes";
  EXPECT_THROW(ExperimentConfig::from_json(bad), InvalidArgument);
}

TEST(Config, RetrainConfigPerCell) {
  auto c = small_config();
  c.cells.push_back({2, qat::Schedule::parse("gradual:4:2:1:conventional")});
  const auto r = c.retrain_config(c.cells.back(), 7);
  EXPECT_EQ(r.bits, 2);
  EXPECT_EQ(r.seed, 7u);
  EXPECT_EQ(r.schedule.kind, qat::ScheduleKind::Gradual);
  EXPECT_EQ(r.batching.batch_size, 16u);
}

// --- training and sweeps -----------------------------------------------------

TEST(TrainFloat, LinearlySeparableReachesZeroTrainError) {
  auto c = small_config();
  c.dataset.classes = 2;
  c.dataset.noise = 0.05;
  c.network = {nn::fully_connected(8), nn::activation(nn::ActivationFn::Tanh), nn::fully_connected(2)};
  c.float_training.max_epochs = 10;
  const auto data = load_dataset(c.dataset, c.task);
  const auto r = train_float(c, data, 3);
  EXPECT_EQ(r.train_metric, 0.0);
}

TEST(TrainFloat, FixedSeedGivesIdenticalCheckpoints) {
  const auto c = small_config();
  const auto data = load_dataset(c.dataset, c.task);
  const auto dir = scratch("float_det");
  write_float_outputs(dir / "a", 5, train_float(c, data, 5), c);
  write_float_outputs(dir / "b", 5, train_float(c, data, 5), c);
  EXPECT_EQ(slurp(dir / "a/float/seed-5/model.ckpt"), slurp(dir / "b/float/seed-5/model.ckpt"));
  EXPECT_EQ(slurp(dir / "a/float/seed-5/history.csv"), slurp(dir / "b/float/seed-5/history.csv"));
}

TEST(TrainFloat, BestDevCheckpointIsKept) {
  const auto c = small_config();
  const auto data = load_dataset(c.dataset, c.task);
  const auto r = train_float(c, data, 2);
  ASSERT_GE(r.best_epoch, 1);
  double best = 1e300;
  for (const auto& row : r.history) best = std::min(best, *row.dev_metric);
  EXPECT_EQ(*r.history[r.best_epoch - 1].dev_metric, best);
  EXPECT_DOUBLE_EQ(r.dev_metric, best);
}

TEST(TrainFloat, RepeatingCorpusIsLearnedAlmostPerfectly) {
  ExperimentConfig c;
  c.task = Task::CharLanguageModel;
  c.dataset.source = "repeating-text";
  c.dataset.length = 1000;
  c.dataset.pattern = "the quick brown fox. ";
  c.network = {nn::lstm(32), nn::fully_connected(0)};
  c.dataset.split = {0.2, 0.2};
  c.float_training.optimizer.lr_schedule.initial_lr = 0.3;
  c.float_training.optimizer.lr_schedule.final_lr = 1e-4;
  c.float_training.batching = {2, 40, 20};
  c.float_training.max_epochs = 150;
  c.cells = {{2, qat::Schedule::parse("direct")}};
  const auto data = load_dataset(c.dataset, c.task);
  c.network.back().units = data.train.num_classes;
  const auto r = train_float(c, data, 1);
  EXPECT_LT(r.train_metric, 0.1);
  EXPECT_LT(r.test_metric, 0.1);
}

class SweepTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    out_ = new fs::path(scratch("sweep"));
    summary_ = sweep(small_config(), *out_);
  }
  static void TearDownTestSuite() { delete out_; }

  static fs::path* out_;
  static SweepSummary summary_;
};

fs::path* SweepTest::out_ = nullptr;
SweepSummary SweepTest::summary_;

TEST_F(SweepTest, ResultsSchemaAndCompleteness) {
  const auto t = read_csv(*out_ / "results.csv");
  EXPECT_EQ(t.header, (std::vector<std::string>{"cell_bits", "schedule", "seed", "split", "metric", "value"}));
  EXPECT_EQ(t.rows.size(), 4u);
  EXPECT_EQ(summary_.runs, 4u);
  EXPECT_EQ(summary_.failures, 0u);
  for (const auto& r : t.rows) {
    EXPECT_EQ(r[0], "2");
    EXPECT_EQ(r[3], "test");
    EXPECT_EQ(r[4], "error_rate");
    std::size_t used = 0;
    const double v = std::stod(r[5], &used);
    EXPECT_EQ(used, r[5].size());
    EXPECT_GE(v, 0.0);
  }
  EXPECT_EQ(parse_csv(slurp(*out_ / "results.csv")).rows, t.rows);
  EXPECT_EQ(read_csv(*out_ / "baseline.csv").rows.size(), 2u);
  EXPECT_EQ(read_csv(*out_ / "failures.csv").rows.size(), 0u);
}

TEST_F(SweepTest, TrajectoryHasOneRowPerEpochAndGroup) {
  const auto t = read_csv(*out_ / "runs/b2_adaptive_s1/trajectory.csv");
  EXPECT_EQ(t.header, (std::vector<std::string>{"run_id", "epoch", "group_id", "delta"}));
  // Epochs 0..2, groups fc1.weight and fc3.weight.
  ASSERT_EQ(t.rows.size(), 6u);
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    EXPECT_EQ(std::stoi(t.rows[i][1]), static_cast<int>(i / 2));
    EXPECT_GT(std::stod(t.rows[i][3]), 0.0);
  }
}

TEST_F(SweepTest, DirectCellsDoNotRetrain) {
  for (const auto* id : {"b2_direct_s1", "b2_direct_s2"}) {
    std::ifstream in(*out_ / "runs" / id / "result.json");
    const auto j = nlohmann::json::parse(in);
    EXPECT_EQ(j.at("retrain_epochs").get<int>(), 0) << id;
  }
}

TEST_F(SweepTest, DirectCellMatchesIndependentQuantization) {
  const auto c = small_config();
  const auto data = load_dataset(c.dataset, c.task);
  auto model = nn::load_checkpoint<float>(*out_ / "float/seed-1/model.ckpt");
  auto params = model.state.params;
  for (auto& e : params.entries()) {
    if (!e.quantizable) continue;
    auto& w = e.value;
    const std::span<const float> view(w.data(), w.size());
    const auto sol = optimize_step(view, points_for_bits(2), c.retraining.solver);
    const auto spec = QuantizerSpec::make(2, sol.step);
    quantize(view, std::span<float>(w.data(), w.size()), spec);
  }
  nn::Network<float> net(model.layers, model.input_shape);
  const auto expect = nn::evaluate(net, params, model.state.buffers, data.test, c.retraining.batching);
  const auto t = read_csv(*out_ / "results.csv");
  EXPECT_EQ(std::stod(t.rows[0][5]), expect.error_rate());
  EXPECT_EQ(t.rows[0][1], "direct");
  EXPECT_EQ(t.rows[0][2], "1");
}

TEST_F(SweepTest, RerunIsByteIdentical) {
  const auto again = scratch("sweep_again");
  sweep(small_config(), again);
  for (const auto* f : {"results.csv", "baseline.csv", "failures.csv", "runs/b2_adaptive_s2/trajectory.csv",
                        "runs/b2_adaptive_s2/history.csv"}) {
    EXPECT_EQ(slurp(*out_ / f), slurp(again / f)) << f;
  }
}

TEST_F(SweepTest, ReportSummarizesEveryCell) {
  report(*out_);
  const auto s = read_csv(*out_ / "summary.csv");
  EXPECT_EQ(s.header,
            (std::vector<std::string>{"cell_bits", "schedule", "split", "metric", "seeds", "mean", "min", "max"}));
  ASSERT_EQ(s.rows.size(), 3u);  // float baseline + two cells
  EXPECT_EQ(s.rows[0][1], "float");
  const auto traj = read_csv(*out_ / "trajectory.csv");
  EXPECT_EQ(traj.rows.size(), 2u * 6u + 2u * 2u);  // adaptive runs 3 epochs, direct runs 1, two groups each
}

TEST(Sweep, FailingCellsAreRecordedAndSkipped) {
  auto c = small_config();
  c.retraining.optimizer.lr_schedule.initial_lr = 1e38;
  c.retraining.optimizer.lr_schedule.final_lr = 1e37;
  const auto out = scratch("sweep_fail");
  const auto s = sweep(c, out);
  EXPECT_EQ(s.runs, 2u);
  EXPECT_EQ(s.failures, 2u);
  const auto results = read_csv(out / "results.csv");
  const auto failures = read_csv(out / "failures.csv");
  EXPECT_EQ(results.rows.size(), c.cells.size() * c.seeds.size() - failures.rows.size());
  for (const auto& r : failures.rows) {
    EXPECT_EQ(r[1], "adaptive");
    EXPECT_EQ(r[3], "divergence");
  }
}

TEST(Report, MeanOfSeedsIsExact) {
  const auto dir = scratch("report");
  CsvTable t{{"cell_bits", "schedule", "seed", "split", "metric", "value"}, {}};
  const std::vector<double> v{31.43, 30.61, 29.999999999999996};
  for (std::size_t i = 0; i < v.size(); ++i) {
    t.rows.push_back({"2", "adaptive", std::to_string(i + 1), "test", "error_rate", format_double(v[i])});
  }
  write_csv(dir / "results.csv", t);
  report(dir);
  const auto s = read_csv(dir / "summary.csv");
  ASSERT_EQ(s.rows.size(), 1u);
  const long double mean = (static_cast<long double>(v[0]) + v[1] + v[2]) / 3.0L;
  EXPECT_NEAR(std::stod(s.rows[0][5]), static_cast<double>(mean), 1e-12);
  EXPECT_EQ(s.rows[0][4], "3");
  EXPECT_EQ(std::stod(s.rows[0][6]), v[2]);
  EXPECT_EQ(std::stod(s.rows[0][7]), v[0]);
}

TEST(Report, EmptyDirectoryIsAnError) {
  const auto dir = scratch("report_empty");
  EXPECT_THROW(report(dir), EmptyInput);
  EXPECT_THROW(report(dir / "missing"), EmptyInput);
  write_csv(dir / "results.csv", {{"cell_bits", "schedule", "seed", "split", "metric", "value"}, {}});
  EXPECT_THROW(report(dir), EmptyInput);
}

}  // namespace
}  // namespace fxq::harness

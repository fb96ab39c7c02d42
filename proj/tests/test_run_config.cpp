#include <cstdlib>

#include <gtest/gtest.h>

#include "auseq/run_config.hpp"
#include "test_util.hpp"

using namespace auseq;

TEST(RunConfig, DefaultsProduceValidConfigs) {
  const RunConfig c;
  EXPECT_EQ(c.get_u64("seed"), 0u);
  const auto t = c.train_config();
  EXPECT_EQ(t.hidden_dim, 64);
  EXPECT_EQ(t.batch_size, 32);
  EXPECT_EQ(t.learning_rate, 1e-3);
  EXPECT_EQ(t.dropout_rate, 0.5);
  const auto p = c.prepare_config();
  EXPECT_EQ(p.window_len, 30);
  EXPECT_EQ(p.train_fraction, 0.7);
  EXPECT_EQ(p.policy.k, 3);
  EXPECT_NO_THROW(c.synthetic_spec());
}

TEST(RunConfig, UnknownKeysRejected) {
  RunConfig c;
  EXPECT_THROW(c.set("epoch", "3"), Error);
  try {
    c.apply_text("seed=1\nlearnig_rate=0.1\n", "cfg.txt");
    FAIL();
  } catch (const Error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("cfg.txt line 2"), std::string::npos) << msg;
    EXPECT_NE(msg.find("learnig_rate"), std::string::npos) << msg;
  }
  EXPECT_THROW(c.apply_text("just words\n", "x"), Error);
}

TEST(RunConfig, CommentsAndWhitespace) {
  RunConfig c;
  c.apply_text("# header\n\n  epochs = 7  \r\n# hidden=3\n", "x");
  EXPECT_EQ(c.get_int("epochs"), 7);
  EXPECT_EQ(c.get_int("hidden"), 64);
}

TEST(RunConfig, Precedence) {
  const auto dir = testutil::scratch_dir("rc");
  detail::write_file(dir / "c.txt", "seed=20\nepochs=5\n");

  RunConfig c;
  ::setenv("AUSEQ_SEED", "10", 1);
  c.apply_environment();
  ::unsetenv("AUSEQ_SEED");
  EXPECT_EQ(c.get_u64("seed"), 10u);
  c.apply_file(dir / "c.txt");
  EXPECT_EQ(c.get_u64("seed"), 20u);
  c.set("seed", "30");
  EXPECT_EQ(c.get_u64("seed"), 30u);
  EXPECT_EQ(c.get_int("epochs"), 5);

  RunConfig fresh;
  fresh.apply_environment();
  EXPECT_EQ(fresh.get_u64("seed"), 0u);
}

TEST(RunConfig, ToTextReplays) {
  RunConfig a;
  a.set("seed", "99");
  a.set("drop_k", "0");
  a.set("learning_rate", "0.005");
  RunConfig b;
  b.apply_text(a.to_text(), "replay");
  EXPECT_EQ(a.to_text(), b.to_text());
  EXPECT_EQ(b.prepare_config().policy.k, 0);
  EXPECT_EQ(b.train_config().seed, a.train_config().seed);
}

TEST(RunConfig, StageSeedsDiffer) {
  RunConfig c;
  c.set("seed", "1");
  EXPECT_NE(c.prepare_config().seed, c.train_config().seed);
  EXPECT_NE(c.synthetic_spec().seed, c.train_config().seed);
  RunConfig d;
  d.set("seed", "2");
  EXPECT_NE(c.train_config().seed, d.train_config().seed);
}

TEST(RunConfig, InvalidValuesNameTheKey) {
  const auto expect_msg = [](const std::string& key, const std::string& value, auto build) {
    RunConfig c;
    c.set(key, value);
    try {
      build(c);
      ADD_FAILURE() << key << "=" << value << " accepted";
    } catch (const Error& e) {
      EXPECT_NE(std::string(e.what()).find(key), std::string::npos) << e.what();
    }
  };
  expect_msg("split", "1.5", [](const RunConfig& c) { c.prepare_config(); });
  expect_msg("split", "0", [](const RunConfig& c) { c.prepare_config(); });
  expect_msg("drop_k", "35", [](const RunConfig& c) { c.prepare_config(); });
  expect_msg("window", "abc", [](const RunConfig& c) { c.prepare_config(); });
  expect_msg("shuffle", "maybe", [](const RunConfig& c) { c.train_config(); });
  expect_msg("seed", "-1", [](const RunConfig& c) { c.train_config(); });

  RunConfig e;
  e.set("epochs", "0");
  EXPECT_THROW(e.train_config(), Error);
  RunConfig f;
  f.set("confessions", "1");
  EXPECT_THROW(f.synthetic_spec(), Error);
}

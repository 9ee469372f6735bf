#include <gtest/gtest.h>

#include "score/errors.hpp"
#include "score/serialize.hpp"
#include "score_app/config.hpp"
#include "support.hpp"

namespace score::app {
namespace {

constexpr const char* kText = R"(# experiment
seed = 7
preset = wb100   ; trailing comment

[finetune]
alpha = 0.05
epochs = 20
keep_best = yes
seeds = 1, 2,3
)";

TEST(Config, SectionsAndTypedGetters) {
  auto cfg = Config::parse(kText);
  EXPECT_EQ(cfg.get_uint("seed", 0), 7u);
  EXPECT_EQ(cfg.get_string("preset", ""), "wb100");
  EXPECT_DOUBLE_EQ(cfg.get_double("finetune.alpha", 0), 0.05);
  EXPECT_EQ(cfg.get_int("finetune.epochs", 0), 20);
  EXPECT_TRUE(cfg.get_bool("finetune.keep_best", false));
  EXPECT_EQ(cfg.get_uint_list("finetune.seeds", {}), (std::vector<std::uint64_t>{1, 2, 3}));
  EXPECT_EQ(cfg.get_int("missing", -4), -4);
  EXPECT_FALSE(cfg.has("alpha"));
  EXPECT_EQ(cfg.keys().size(), 6u);
}

TEST(Config, BadValueNamesLineAndKey) {
  auto cfg = Config::parse("a = 1\nb = banana\n", "exp.ini");
  try {
    cfg.get_double("b", 0);
    FAIL();
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("exp.ini:2"), std::string::npos) << msg;
    EXPECT_NE(msg.find("'b'"), std::string::npos);
    EXPECT_NE(msg.find("banana"), std::string::npos);
  }
  EXPECT_THROW(Config::parse("n = -3").get_uint("n", 0), ConfigError);
  EXPECT_THROW(Config::parse("n = 3x").get_int("n", 0), ConfigError);
  EXPECT_THROW(Config::parse("n = maybe").get_bool("n", false), ConfigError);
  EXPECT_THROW(Config::parse("n = 1,,2").get_uint_list("n", {}), ConfigError);
}

TEST(Config, SyntaxErrors) {
  EXPECT_THROW(Config::parse("[open\n"), ConfigError);
  EXPECT_THROW(Config::parse("no equals sign\n"), ConfigError);
  EXPECT_THROW(Config::parse("bad key = 1\n"), ConfigError);
  try {
    Config::parse("x = 1\n\nx = 2\n", "c");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("c:3"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("line 1"), std::string::npos);
  }
}

TEST(Config, UnknownKeysAreRejected) {
  auto cfg = Config::parse("seed = 1\n[finetune]\nalhpa = 0.1\n", "f");
  EXPECT_NO_THROW(Config::parse("seed = 1").require_known({"seed"}));
  try {
    cfg.require_known({"seed", "finetune.alpha"});
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("f:3: unknown key 'finetune.alhpa'"), std::string::npos) << e.what();
  }
}

TEST(Config, LoadFromFile) {
  testing::TempDir dir;
  write_file_atomic(dir / "c.ini", "[a]\nb = 2\n");
  auto cfg = Config::load(dir / "c.ini");
  EXPECT_EQ(cfg.get_int("a.b", 0), 2);
  cfg.set("a.b", "5");
  EXPECT_EQ(cfg.get_int("a.b", 0), 5);
  EXPECT_THROW(Config::load(dir / "none.ini"), IoError);
}

}  // namespace
}  // namespace score::app

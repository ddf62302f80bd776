#include <fstream>

#include "carunet/run_config.hpp"
#include "helpers.hpp"

namespace carunet {
namespace {

struct Published {
  const char* name;
  std::size_t batch;
  std::size_t epochs;
  std::size_t padded;
};

TEST(Presets, MatchPublishedTrainingSettings) {
  for (const Published& p : {Published{"drive", 2, 100, 592}, Published{"chase", 1, 50, 1008},
                             Published{"stare", 3, 80, 704}}) {
    const RunConfig c = preset(p.name);
    EXPECT_EQ(c.train.batch_size, p.batch) << p.name;
    EXPECT_EQ(c.train.epochs, p.epochs) << p.name;
    EXPECT_EQ(c.train.learning_rate, 1e-3) << p.name;
    EXPECT_EQ(c.model.base_channels, 16u) << p.name;
    EXPECT_EQ(c.model.dropblock.block_size, 7u) << p.name;
    EXPECT_EQ(c.model.dropblock.drop_rate, 0.15) << p.name;
    EXPECT_EQ(c.model.depth, 4u) << p.name;
    EXPECT_EQ(padded_size(c.data.kind), p.padded) << p.name;
    EXPECT_EQ(c.train.max_steps, 0u) << p.name;
  }
}

TEST(Presets, SmokeIsSmallAndSynthetic) {
  const RunConfig c = preset("smoke");
  EXPECT_EQ(c.data.kind, DatasetKind::synthetic);
  EXPECT_EQ(c.data.synthetic_count, 4u);
  EXPECT_EQ(c.data.synthetic_size, 64u);
  EXPECT_EQ(c.train.max_steps, 200u);
  EXPECT_EQ(preset_names().size(), 4u);
  EXPECT_ERROR_KIND(preset("imagenet"), ErrorKind::usage);
}

TEST(ConfigText, ParsesSectionsCommentsAndWhitespace) {
  const RunConfig c = parse_config(
      "# comment\n[model]\n  depth = 3 ; trailing\nbase_channels=4\nmeca_placement = pre_sum\n\n[train]\n"
      "learning_rate = 2.5e-4\ndropblock_schedule=linear\n[data]\ndataset = stare\nfold=2\n[output]\ndir = out/x\n",
      RunConfig{});
  EXPECT_EQ(c.model.depth, 3u);
  EXPECT_EQ(c.model.base_channels, 4u);
  EXPECT_EQ(c.model.meca_placement, MecaPlacement::pre_sum);
  EXPECT_EQ(c.train.learning_rate, 2.5e-4);
  EXPECT_EQ(c.train.dropblock_schedule, DropBlockSchedule::linear);
  EXPECT_EQ(c.data.kind, DatasetKind::stare);
  EXPECT_EQ(c.train.dataset, DatasetKind::stare);
  EXPECT_EQ(c.data.fold, 2u);
  EXPECT_EQ(c.output_dir, "out/x");
}

TEST(ConfigText, ErrorsNameTheLineAndKey) {
  const auto message = [](std::string_view text) {
    try {
      parse_config(text, RunConfig{}, "cfg");
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::usage);
      return std::string(e.what());
    }
    ADD_FAILURE() << "accepted: " << text;
    return std::string();
  };
  EXPECT_NE(message("[model]\ncolour = red\n").find("cfg:2"), std::string::npos);
  EXPECT_NE(message("[model]\ncolour = red\n").find("model.colour"), std::string::npos);
  EXPECT_NE(message("[nope]\nx=1\n").find("nope"), std::string::npos);
  EXPECT_NE(message("depth=2\n").find("section"), std::string::npos);
  EXPECT_NE(message("[model]\ndepth two\n").find("cfg:2"), std::string::npos);
  EXPECT_NE(message("[model]\ndepth = two\n").find("depth"), std::string::npos);
  EXPECT_NE(message("[model]\ndepth = -1\n").find("depth"), std::string::npos);
  EXPECT_NE(message("[train]\nlearning_rate = 1e-3x\n").find("learning_rate"), std::string::npos);
  EXPECT_NE(message("[data]\ndataset = kitti\n").find("kitti"), std::string::npos);
  EXPECT_NE(message("[model\n").find("cfg:1"), std::string::npos);
}

TEST(ConfigText, SerializeRoundTripsEveryPreset) {
  for (const std::string& name : preset_names()) {
    RunConfig c = preset(name);
    c.data.root = "some/dir";
    c.model.seed = 77;
    c.train.adam_epsilon = 1.0 / 3.0;
    const std::string text = serialize(c);
    const RunConfig back = parse_config(text, RunConfig{});
    EXPECT_EQ(back.model, c.model) << name;
    EXPECT_EQ(back.train.adam_epsilon, 1.0 / 3.0);
    EXPECT_EQ(serialize(back), text) << name;
  }
}

TEST(Overrides, ApplyOnTopAndRejectMalformed) {
  RunConfig c = preset("drive");
  apply_override(c, "train.epochs=3");
  apply_override(c, "model.dropblock_rate = 0.05");
  apply_override(c, "data.root=/tmp/a=b");
  EXPECT_EQ(c.train.epochs, 3u);
  EXPECT_EQ(c.model.dropblock.drop_rate, 0.05);
  EXPECT_EQ(c.data.root, "/tmp/a=b");
  EXPECT_ERROR_KIND(apply_override(c, "epochs=3"), ErrorKind::usage);
  EXPECT_ERROR_KIND(apply_override(c, "train.epochs"), ErrorKind::usage);
  EXPECT_ERROR_KIND(apply_override(c, "train.epoch=3"), ErrorKind::usage);
}

TEST(ConfigFile, LoadsFromDiskAndReportsMissingFile) {
  const auto dir = test::scratch_dir("");
  std::ofstream(dir / "c.ini") << "[train]\nbatch_size = 5\n";
  const RunConfig c = load_config(dir / "c.ini", preset("chase"));
  EXPECT_EQ(c.train.batch_size, 5u);
  EXPECT_EQ(c.train.epochs, 50u);
  EXPECT_ERROR_KIND(load_config(dir / "missing.ini", RunConfig{}), ErrorKind::usage);
}

TEST(Architecture, DiffListsStructuralFieldsOnly) {
  CarUnetConfig a, b;
  EXPECT_TRUE(architecture_diff(a, b).empty());
  b.seed = 5;
  b.dropblock.drop_rate = 0.3;
  EXPECT_TRUE(architecture_diff(a, b).empty());
  b.depth = 3;
  b.meca_placement = MecaPlacement::pre_sum;
  EXPECT_EQ(architecture_diff(a, b).size(), 2u);
}

}  // namespace
}  // namespace carunet

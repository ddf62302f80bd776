#include <fstream>
#include <functional>
#include <sstream>

#include "carunet/checkpoint.hpp"
#include "carunet/train.hpp"
#include "helpers.hpp"

namespace carunet {
namespace {

namespace fs = std::filesystem;

CarUnetConfig model(std::size_t depth = 2, std::size_t base = 2, std::uint64_t seed = 0) {
  CarUnetConfig c;
  c.depth = depth;
  c.base_channels = base;
  c.seed = seed;
  c.dropblock = {5, 0.2};
  c.meca_placement = MecaPlacement::pre_sum;
  return c;
}

Snapshot snapshot_of(const CarUnet& net) { return snapshot(net.parameters()); }

std::string read_all(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_all(const fs::path& p, const std::string& bytes) {
  std::ofstream(p, std::ios::binary | std::ios::trunc) << bytes;
}

std::string error_of(const std::function<void()>& fn, ErrorKind expected) {
  try {
    fn();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), expected) << e.what();
    return e.what();
  }
  ADD_FAILURE() << "no error";
  return {};
}

TEST(Checkpoint, RoundTripIsBitwiseIncludingRunningStatistics) {
  CarUnet net = CarUnet::build(model(2, 3, 9));
  for (const NamedTensor& p : net.parameters()) {
    Tensor t = p.tensor;
    Rng rng(std::hash<std::string>{}(p.name));
    for (Real& v : t.data()) v = static_cast<Real>(rng.uniform(-2, 2));
  }
  const fs::path path = test::scratch_dir("") / "w.bin";
  save_weights(net, path);
  EXPECT_EQ(read_checkpoint_config(path), net.config());
  const CarUnet loaded = load_weights(path);
  EXPECT_EQ(loaded.config(), net.config());
  const ParameterList a = net.parameters(), b = loaded.parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(test::bitwise_equal(a[i].tensor, b[i].tensor)) << a[i].name;

  CarUnet other = CarUnet::build(model(2, 3, 1));
  load_weights_into(other, path);
  const ParameterList c = other.parameters();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(test::bitwise_equal(a[i].tensor, c[i].tensor));
}

TEST(Checkpoint, HeaderIsReadableText) {
  const CarUnet net = CarUnet::build(model());
  const fs::path path = test::scratch_dir("") / "w.bin";
  save_weights(net, path);
  const std::string bytes = read_all(path);
  EXPECT_EQ(bytes.rfind("CARUNET-CHECKPOINT 1\n", 0), 0u);
  EXPECT_NE(bytes.find("model.depth=2\n"), std::string::npos);
  EXPECT_NE(bytes.find("tensor enc0.meca.kernel 3 "), std::string::npos);
  EXPECT_NE(bytes.find("\nend\n"), std::string::npos);
}

TEST(Checkpoint, TruncatedFileIsADataErrorNamingTensors) {
  const CarUnet net = CarUnet::build(model());
  const fs::path path = test::scratch_dir("") / "w.bin";
  save_weights(net, path);
  const std::string bytes = read_all(path);
  write_all(path, bytes.substr(0, bytes.size() - 10));
  const std::string msg = error_of([&] { load_weights(path); }, ErrorKind::data);
  EXPECT_NE(msg.find("head.bias"), std::string::npos) << msg;
  EXPECT_NE(msg.find("truncated"), std::string::npos) << msg;

  write_all(path, bytes.substr(0, 40));
  error_of([&] { load_weights(path); }, ErrorKind::data);
  write_all(path, "");
  error_of([&] { load_weights(path); }, ErrorKind::data);
  error_of([&] { load_weights(path.parent_path() / "absent.bin"); }, ErrorKind::data);
}

TEST(Checkpoint, FlippedByteFailsTheChecksum) {
  const CarUnet net = CarUnet::build(model());
  const fs::path path = test::scratch_dir("") / "w.bin";
  save_weights(net, path);
  std::string bytes = read_all(path);
  bytes[bytes.size() - 2] ^= 0x40;
  write_all(path, bytes);
  const std::string msg = error_of([&] { load_weights(path); }, ErrorKind::data);
  EXPECT_NE(msg.find("checksum"), std::string::npos) << msg;
  EXPECT_NE(msg.find("head.bias"), std::string::npos) << msg;
}

TEST(Checkpoint, ManifestNotFittingItsArchitectureIsADataError) {
  const CarUnet net = CarUnet::build(model());
  const fs::path path = test::scratch_dir("") / "w.bin";
  save_weights(net, path);
  std::string bytes = read_all(path);
  const auto at = bytes.find("model.base_channels=2");
  ASSERT_NE(at, std::string::npos);
  bytes.replace(at, 21, "model.base_channels=4");
  write_all(path, bytes);
  const std::string msg = error_of([&] { load_weights(path); }, ErrorKind::data);
  EXPECT_NE(msg.find("enc0.unit1.conv1.weight"), std::string::npos) << msg;
}

TEST(Checkpoint, LoadingIntoADifferentArchitectureListsEveryMismatch) {
  const CarUnet net = CarUnet::build(model(2, 2));
  const fs::path path = test::scratch_dir("") / "w.bin";
  save_weights(net, path);
  CarUnet wider = CarUnet::build(model(2, 4));
  const Snapshot before = snapshot_of(wider);
  const std::string msg = error_of([&] { load_weights_into(wider, path); }, ErrorKind::shape);
  EXPECT_NE(msg.find("head.weight"), std::string::npos) << msg;
  EXPECT_NE(msg.find("enc1.unit2.conv2.weight"), std::string::npos) << msg;
  EXPECT_EQ(snapshot_of(wider), before);

  CarUnet deeper = CarUnet::build(model(3, 2));
  const std::string missing = error_of([&] { load_weights_into(deeper, path); }, ErrorKind::shape);
  EXPECT_NE(missing.find("enc2"), std::string::npos) << missing;
  EXPECT_NE(missing.find("missing"), std::string::npos) << missing;
}

TEST(Checkpoint, BadHeaderLinesAreDataErrors) {
  const fs::path dir = test::scratch_dir("");
  write_all(dir / "a.bin", "NOT-A-CHECKPOINT\n");
  error_of([&] { load_weights(dir / "a.bin"); }, ErrorKind::data);
  write_all(dir / "b.bin", "CARUNET-CHECKPOINT 1\nmodel.depth=2\ntensors=0\n");
  error_of([&] { load_weights(dir / "b.bin"); }, ErrorKind::data);
  write_all(dir / "c.bin", "CARUNET-CHECKPOINT 1\nmodel.colour=blue\ntensors=0\nend\n");
  error_of([&] { read_checkpoint_config(dir / "c.bin"); }, ErrorKind::data);
}

}  // namespace
}  // namespace carunet

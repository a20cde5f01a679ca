#include "test_util.hpp"

#include <fstream>

using namespace rgd;
using namespace rgd::test;

namespace {

void write_bytes(const std::filesystem::path& p, const std::string& b) {
  std::ofstream(p, std::ios::binary) << b;
}

std::string header(std::initializer_list<std::uint32_t> words) {
  std::string out;
  for (std::uint32_t w : words)
    for (int i = 3; i >= 0; --i) out.push_back(char((w >> (8 * i)) & 0xFF));
  return out;
}

// Two 2x2 images and their labels, assembled byte by byte.
std::string fixture_images() { return header({0x803, 2, 2, 2}) + std::string("\x00\xff\x80\x40\x10\x20\x30\xfe", 8); }
std::string fixture_labels(std::uint32_t n = 2) { return header({0x801, n}) + std::string("\x00\x03", 2); }

}  // namespace

TEST(Idx, HandCraftedFixtureLoadsExactly) {
  TempDir dir("idx");
  write_bytes(dir.path() / "i.idx", fixture_images());
  write_bytes(dir.path() / "l.idx", fixture_labels());
  const Dataset d = load_idx(dir.path() / "i.idx", dir.path() / "l.idx");
  EXPECT_EQ(d.images.shape(), (Shape{2, 1, 2, 2}));
  const unsigned char raw[8] = {0x00, 0xff, 0x80, 0x40, 0x10, 0x20, 0x30, 0xfe};
  for (int i = 0; i < 8; ++i) EXPECT_DOUBLE_EQ(d.images[std::size_t(i)], raw[i] / 255.0 * 2.0 - 1.0);
  EXPECT_EQ(d.images[0], -1.0);
  EXPECT_EQ(d.images[1], 1.0);
  EXPECT_EQ(d.labels, (std::vector<int>{1, 4}));
  EXPECT_EQ(d.classes, 4);
  EXPECT_NO_THROW(d.validate());
}

TEST(Idx, Errors) {
  TempDir dir("idx_err");
  write_bytes(dir.path() / "i.idx", fixture_images());
  write_bytes(dir.path() / "l3.idx", header({0x801, 3}) + std::string("\x00\x01\x02", 3));
  EXPECT_THROW(load_idx(dir.path() / "i.idx", dir.path() / "l3.idx"), IoError);
  write_bytes(dir.path() / "bad.idx", header({0x804, 2, 2, 2}) + std::string(8, '\0'));
  write_bytes(dir.path() / "l.idx", fixture_labels());
  EXPECT_THROW(load_idx(dir.path() / "bad.idx", dir.path() / "l.idx"), IoError);
  write_bytes(dir.path() / "short.idx", fixture_images().substr(0, 20));
  EXPECT_THROW(load_idx(dir.path() / "short.idx", dir.path() / "l.idx"), IoError);
  write_bytes(dir.path() / "stub.idx", header({0x803, 2}));
  EXPECT_THROW(load_idx(dir.path() / "stub.idx", dir.path() / "l.idx"), IoError);
  write_bytes(dir.path() / "lshort.idx", header({0x801, 5}) + "\x01");
  EXPECT_THROW(parse_idx_labels(read_file(dir.path() / "lshort.idx")), IoError);
  EXPECT_THROW(load_idx(dir.path() / "missing.idx", dir.path() / "l.idx"), IoError);
}

TEST(Idx, DatasetRoundTripWithMasks) {
  TempDir dir("idx_rt");
  const Dataset d = generate_shapes_toy(3, 8, RngStream(1, 1));
  save_dataset(d, dir.path());
  const Dataset back = load_image_dir(dir.path());
  EXPECT_EQ(back.labels, d.labels);
  EXPECT_EQ(*back.masks, *d.masks);
  for (std::size_t i = 0; i < d.images.size(); ++i) EXPECT_LE(std::abs(back.images[i] - d.images[i]), 1.0 / 255.0);
}

TEST(Image, QuantizationEndpoints) {
  const std::string lo = encode_image(Tensor({1, 2, 3}, -1.0), PixelRange::Signed);
  const std::string hi = encode_image(Tensor({1, 2, 3}, 1.0), PixelRange::Signed);
  const std::string head = "P5\n3 2\n255\n";
  ASSERT_EQ(lo.substr(0, head.size()), head);
  EXPECT_EQ(lo.substr(head.size()), std::string(6, '\0'));
  EXPECT_EQ(hi.substr(head.size()), std::string(6, '\xff'));
  EXPECT_EQ(encode_image(Tensor({1, 1, 1}, 1.0), PixelRange::Unit).back(), '\xff');
}

TEST(Image, RoundTripWithinOneQuantizationStep) {
  TempDir dir("img");
  for (std::size_t c : {1u, 3u}) {
    Tensor x = random_tensor({c, 5, 7}, c, 0.6);
    for (double& v : x.storage()) v = std::clamp(v, -1.0, 1.0);
    const auto path = dir.path() / (c == 1 ? "a.pgm" : "a.ppm");
    write_image(x, path);
    const Tensor back = read_image(path);
    ASSERT_EQ(back.shape(), x.shape());
    // Signed range spans 2, so one 8-bit step is 2/255 in pixel units, 1/255 in [0, 1] units.
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_LE(std::abs((back[i] - x[i]) * 0.5), 1.0 / 255.0);
  }
  Tensor u = random_tensor({1, 4, 4}, 9);
  for (double& v : u.storage()) v = std::clamp(std::abs(v), 0.0, 1.0);
  write_image(u, dir.path() / "u.pgm", PixelRange::Unit);
  const Tensor ub = read_image(dir.path() / "u.pgm", PixelRange::Unit);
  for (std::size_t i = 0; i < u.size(); ++i) EXPECT_LE(std::abs(ub[i] - u[i]), 1.0 / 255.0);
}

TEST(Image, WrongChannelCountRejected) {
  EXPECT_THROW(encode_image(Tensor({2, 4, 4}), PixelRange::Signed), std::invalid_argument);
  EXPECT_THROW(encode_image(Tensor({1, 1, 4, 4}), PixelRange::Signed), std::invalid_argument);
  TempDir dir("img_bad");
  write_bytes(dir.path() / "x.pgm", "P2\n1 1\n255\n0");
  EXPECT_THROW(read_image(dir.path() / "x.pgm"), IoError);
}

TEST(Checkpoint, RoundTripIsBitwise) {
  TempDir dir("ckpt");
  const TimeClassifier m(tiny_classifier(), 4);
  save_params(m.params(), dir.path() / "m.rgdl");
  const ModelParams back = load_params(dir.path() / "m.rgdl");
  EXPECT_EQ(back, m.params());
  const TimeClassifier r = TimeClassifier::from_params(back);
  const Tensor x = random_tensor({2, 1, 8, 8}, 1);
  EXPECT_EQ(r.logits(x, std::vector<int>{0, 3}), m.logits(x, std::vector<int>{0, 3}));
  const DenoiserModel d(tiny_denoiser(), 5);
  save_params(d.params(), dir.path() / "d.rgdl");
  EXPECT_EQ(serialize_params(DenoiserModel::from_params(load_params(dir.path() / "d.rgdl")).params()), serialize_params(d.params()));
  EXPECT_EQ(params_id(back), params_id(m.params()));
  EXPECT_NE(params_id(back), params_id(d.params()));
}

TEST(Checkpoint, CorruptFilesRejected) {
  const TimeClassifier m(tiny_classifier(), 4);
  std::string b = serialize_params(m.params());
  EXPECT_EQ(b.substr(0, 4), "RGDL");
  std::string bad = b;
  bad[0] = 'X';
  EXPECT_THROW(deserialize_params(bad), IoError);
  EXPECT_THROW(deserialize_params(b.substr(0, b.size() - 3)), IoError);
  std::string version = b;
  version[4] = 9;
  EXPECT_THROW(deserialize_params(version), IoError);
  EXPECT_THROW(DenoiserModel::from_params(m.params()), std::exception);
}

TEST(Checkpoint, AtomicWriteLeavesNoTemporaries) {
  TempDir dir("atomic");
  write_file_atomic(dir.path() / "f.bin", "abc");
  write_file_atomic(dir.path() / "f.bin", "defg");
  EXPECT_EQ(read_file(dir.path() / "f.bin"), "defg");
  int files = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir.path())) files += e.is_regular_file();
  EXPECT_EQ(files, 1);
}

TEST(ShapesToy, DeterministicAndInRange) {
  const Dataset a = generate_shapes_toy(8, 16, RngStream(3, 1)), b = generate_shapes_toy(8, 16, RngStream(3, 1));
  EXPECT_EQ(encode_idx_images(a.images), encode_idx_images(b.images));
  EXPECT_EQ(a.images, b.images);
  EXPECT_NE(generate_shapes_toy(8, 16, RngStream(4, 1)).images, a.images);
  for (double v : a.images.storage()) {
    ASSERT_GE(v, -1.0);
    ASSERT_LE(v, 1.0);
  }
  EXPECT_NO_THROW(a.validate());
  EXPECT_EQ(a.classes, 4);
  EXPECT_THROW(generate_shapes_toy(2, 7, RngStream(1, 1)), std::invalid_argument);
}

TEST(ShapesToy, ClassMeansWellSeparated) {
  const Dataset d = generate_shapes_toy(128, 16, RngStream(5, 1));
  const std::size_t p = 256;
  std::vector<Vec> mean(4, Vec::Zero(p)), sq(4, Vec::Zero(p));
  std::vector<double> n(4, 0.0);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto c = std::size_t(d.labels[i] - 1);
    const Vec x = ConstVecMap(d.images.row(i).data(), p);
    mean[c] += x;
    sq[c] += x.cwiseProduct(x);
    n[c] += 1.0;
  }
  double worst_se = 0.0;
  for (std::size_t c = 0; c < 4; ++c) {
    mean[c] /= n[c];
    const Vec var = (sq[c] / n[c] - mean[c].cwiseProduct(mean[c])) * (n[c] / (n[c] - 1.0));
    // Standard error of the class-mean image, L2 over pixels.
    worst_se = std::max(worst_se, std::sqrt(var.sum() / n[c]));
  }
  for (std::size_t a = 0; a < 4; ++a)
    for (std::size_t b = a + 1; b < 4; ++b) EXPECT_GT((mean[a] - mean[b]).norm(), 10.0 * worst_se);
}

TEST(ShapesToy, MasksAreBinaryAndMatchBrightPixels) {
  const Dataset d = generate_shapes_toy(4, 16, RngStream(6, 1));
  std::size_t agree = 0;
  for (std::size_t i = 0; i < d.images.size(); ++i) {
    const double m = (*d.masks)[i];
    ASSERT_TRUE(m == 0.0 || m == 1.0);
    agree += (m == 1.0) == (d.images[i] > 0.0);
  }
  EXPECT_EQ(agree, d.images.size());
}

TEST(Config, ParsesCommentsAndTypes) {
  const auto c = ExperimentConfig::parse("# header\nattack.eps = 0.3  # inline\nattack.steps=5\n\nattack.early_stop = true\nsweep.scales = 0, 0.5,1\n");
  EXPECT_EQ(c.real("attack.eps"), 0.3);
  EXPECT_EQ(c.integer("attack.steps"), 5);
  EXPECT_TRUE(c.boolean("attack.early_stop"));
  EXPECT_EQ(c.reals("sweep.scales"), (std::vector<double>{0, 0.5, 1}));
  EXPECT_FALSE(c.optional_real("attack.step_size"));
  EXPECT_THROW(c.str("attack.norm"), ConfigError);
  EXPECT_THROW(c.integer("attack.eps"), ConfigError);
  EXPECT_THROW(c.boolean("attack.eps"), ConfigError);
}

TEST(Config, LineNumberedErrors) {
  auto message = [](const std::string& text) {
    try {
      ExperimentConfig::parse(text, "f.cfg");
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  EXPECT_NE(message("a = 1\nbroken line\n").find("f.cfg:2"), std::string::npos);
  EXPECT_NE(message("\n\n = 3\n").find("f.cfg:3"), std::string::npos);
  EXPECT_NE(message("a b = 3\n").find("f.cfg:1"), std::string::npos);
  EXPECT_NE(message("a = 1\na = 2\n").find("f.cfg:2"), std::string::npos);
}

TEST(Config, SetOverridesAndUnknownKeys) {
  auto c = ExperimentConfig::parse("attack.eps = 0.3\nmystery.key = 1\n");
  c.set("attack.eps=0.5");
  EXPECT_EQ(c.real("attack.eps"), 0.5);
  EXPECT_NE(c.dump().find("attack.eps = 0.5"), std::string::npos);
  EXPECT_THROW(c.set("novalue"), ConfigError);
  EXPECT_EQ(c.unknown_keys(), (std::vector<std::string>{"mystery.key"}));
  std::ostringstream w;
  c.warn_unknown(w);
  EXPECT_NE(w.str().find("mystery.key"), std::string::npos);
}

TEST(Config, ShippedPresetsParseWithOnlyDocumentedKeys) {
  for (const char* name : {"shapes16-desk.cfg", "imagenet128-paper.cfg"}) {
    const auto c = ExperimentConfig::load(std::filesystem::path(RGD_SOURCE_DIR) / "configs" / name);
    EXPECT_TRUE(c.unknown_keys().empty()) << name;
    EXPECT_NO_THROW(cli::schedule_from(c));
    EXPECT_NO_THROW(cli::threat_from(c));
  }
}

#include "glyphclass/checkpoint.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "glyphclass/error.hpp"

namespace glyphclass::ckpt {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'A', 'R', 'D', 'C'};
constexpr std::string_view kAdamM = "adam.m/";
constexpr std::string_view kAdamV = "adam.v/";
constexpr std::string_view kBuffer = "buffer/";

std::string number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string number(std::uint64_t v) { return std::to_string(v); }

std::string flag(bool v) { return v ? "true" : "false"; }

class Writer {
 public:
  void bytes(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  void str(std::string_view s) {
    if (s.size() > UINT32_MAX) fail(ErrorKind::Size, "checkpoint string too long");
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void tensor(const std::string& name, const nn::Tensor& t) {
    str(name);
    if (t.rank() > 255) fail(ErrorKind::Size, "tensor rank too large for " + name);
    u8(static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.shape()) u32(static_cast<std::uint32_t>(d));
    bytes(t.data(), t.size() * sizeof(float));
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view in) : in_(in) {}
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n)
      fail(ErrorKind::Truncation, "checkpoint truncated: expected at least " + std::to_string(pos_ + n) +
                                      " bytes, file has " + std::to_string(in_.size()));
  }
  void bytes(void* p, std::size_t n) {
    need(n);
    std::memcpy(p, in_.data() + pos_, n);
    pos_ += n;
  }
  std::uint8_t u8() {
    std::uint8_t v;
    bytes(&v, 1);
    return v;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    bytes(&v, 4);
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(in_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  std::pair<std::string, nn::Tensor> tensor() {
    std::string name = str();
    const std::uint8_t rank = u8();
    nn::Shape shape(rank);
    for (auto& d : shape) d = u32();
    const std::size_t count = nn::element_count(shape);
    need(count * sizeof(float));
    std::vector<float> data(count);
    bytes(data.data(), count * sizeof(float));
    return {std::move(name), nn::Tensor(std::move(shape), std::move(data))};
  }
  bool done() const { return pos_ == in_.size(); }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  std::string_view in_;
  std::size_t pos_ = 0;
};

const std::string& entry(const std::map<std::string, std::string>& kv, const std::string& key) {
  const auto it = kv.find(key);
  if (it == kv.end()) fail(ErrorKind::Format, "checkpoint config lacks '" + key + "'");
  return it->second;
}

template <class T>
T parse_number(const std::map<std::string, std::string>& kv, const std::string& key) {
  const std::string& text = entry(kv, key);
  T v{};
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc{} || res.ptr != text.data() + text.size())
    fail(ErrorKind::Format, "checkpoint config '" + key + "' is not a number: " + text);
  return v;
}

bool parse_flag(const std::map<std::string, std::string>& kv, const std::string& key) {
  const std::string& text = entry(kv, key);
  if (text == "true") return true;
  if (text == "false") return false;
  fail(ErrorKind::Format, "checkpoint config '" + key + "' is not a boolean: " + text);
}

}  // namespace

std::map<std::string, std::string> config_entries(const train::TrainState& state) {
  const auto& c = state.config;
  std::map<std::string, std::string> kv;
  kv["dataset"] = c.dataset.string();
  kv["atlas"] = c.atlas.string();
  kv["classifier"] = std::string(model::to_string(c.classifier));
  kv["max-len"] = c.max_len ? number(std::uint64_t{*c.max_len}) : "unbounded";
  kv["batch-size"] = number(std::uint64_t{c.batch_size});
  kv["lr"] = number(c.lr);
  kv["beta"] = c.beta ? number(*c.beta) : "off";
  kv["wildcard-ratio"] = number(c.wildcard_ratio);
  kv["epochs"] = number(std::uint64_t{c.epochs});
  kv["seed"] = number(c.seed);
  kv["checkpoint-dir"] = c.checkpoint_dir.string();
  kv["eval-every"] = number(std::uint64_t{c.eval_every});
  kv["threads"] = number(std::uint64_t{c.threads});
  kv["test-fraction"] = number(c.test_fraction);
  kv["val-fraction"] = number(c.val_fraction);
  kv["stratified"] = flag(c.stratified);
  kv["normalize-weights"] = flag(c.normalize_weights);
  kv["pooling"] = std::string(model::to_string(c.pooling));
  kv["gru-hidden"] = number(std::uint64_t{c.gru_hidden});
  kv["gru-layers"] = number(std::uint64_t{c.gru_layers});
  kv["contextual-forms"] = flag(c.shaping.contextual_forms);
  kv["fuse-marks"] = flag(c.shaping.fuse_marks);
  kv["stop-when-fit"] = flag(c.stop_when_fit);
  kv["keep-checkpoints"] = flag(c.keep_checkpoints);
  std::string labels;
  for (std::size_t i = 0; i < state.labels.size(); ++i) {
    if (i) labels += '\t';
    labels += state.labels.name(static_cast<int>(i));
  }
  kv["labels"] = labels;
  kv["epoch"] = number(state.epoch);
  kv["adam-step"] = number(state.adam.step);
  return kv;
}

std::string serialize(const train::TrainState& state) {
  Writer w;
  w.bytes(kMagic, 4);
  w.u32(kVersion);

  std::string blob;
  for (const auto& [key, value] : config_entries(state)) {
    if (value.find('\n') != std::string::npos) fail(ErrorKind::Format, "config value for '" + key + "' has a newline");
    blob += key + '=' + value + '\n';
  }
  w.str(blob);

  const auto& p = state.params;
  const std::size_t count = p.weights.size() + p.buffers.size() + state.adam.m.size() + state.adam.v.size();
  w.u32(static_cast<std::uint32_t>(count));
  for (const auto& [name, t] : p.weights) w.tensor(name, t);
  for (const auto& [name, t] : p.buffers) w.tensor(std::string(kBuffer) + name, t);
  for (const auto& [name, t] : state.adam.m) w.tensor(std::string(kAdamM) + name, t);
  for (const auto& [name, t] : state.adam.v) w.tensor(std::string(kAdamV) + name, t);

  std::ostringstream rng;
  rng << state.rng;
  w.str(rng.str());
  return w.take();
}

train::TrainState deserialize(std::string_view bytes) {
  Reader r(bytes);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) fail(ErrorKind::Format, "not a checkpoint (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kVersion)
    fail(ErrorKind::Format, "unsupported checkpoint version " + std::to_string(version));

  std::map<std::string, std::string> kv;
  {
    const std::string blob = r.str();
    std::istringstream lines(blob);
    std::string line;
    while (std::getline(lines, line)) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) fail(ErrorKind::Format, "malformed checkpoint config line: " + line);
      kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
  }

  train::TrainState s;
  auto& c = s.config;
  c.dataset = entry(kv, "dataset");
  c.atlas = entry(kv, "atlas");
  c.classifier = model::parse_classifier(entry(kv, "classifier"));
  if (entry(kv, "max-len") == "unbounded") {
    c.max_len.reset();
  } else {
    c.max_len = parse_number<std::size_t>(kv, "max-len");
  }
  c.batch_size = parse_number<std::size_t>(kv, "batch-size");
  c.lr = parse_number<double>(kv, "lr");
  if (entry(kv, "beta") == "off") {
    c.beta.reset();
  } else {
    c.beta = parse_number<double>(kv, "beta");
  }
  c.wildcard_ratio = parse_number<double>(kv, "wildcard-ratio");
  c.epochs = parse_number<std::size_t>(kv, "epochs");
  c.seed = parse_number<std::uint64_t>(kv, "seed");
  c.checkpoint_dir = entry(kv, "checkpoint-dir");
  c.eval_every = parse_number<std::size_t>(kv, "eval-every");
  c.threads = parse_number<unsigned>(kv, "threads");
  c.test_fraction = parse_number<double>(kv, "test-fraction");
  c.val_fraction = parse_number<double>(kv, "val-fraction");
  c.stratified = parse_flag(kv, "stratified");
  c.normalize_weights = parse_flag(kv, "normalize-weights");
  c.pooling = model::parse_pooling(entry(kv, "pooling"));
  c.gru_hidden = parse_number<std::size_t>(kv, "gru-hidden");
  c.gru_layers = parse_number<std::size_t>(kv, "gru-layers");
  c.shaping.contextual_forms = parse_flag(kv, "contextual-forms");
  c.shaping.fuse_marks = parse_flag(kv, "fuse-marks");
  c.stop_when_fit = parse_flag(kv, "stop-when-fit");
  c.keep_checkpoints = parse_flag(kv, "keep-checkpoints");
  {
    const std::string& labels = entry(kv, "labels");
    std::size_t begin = 0;
    while (begin <= labels.size()) {
      const auto tab = labels.find('\t', begin);
      const std::string name = labels.substr(begin, tab == std::string::npos ? std::string::npos : tab - begin);
      if (s.labels.find(name)) fail(ErrorKind::Format, "checkpoint repeats label '" + name + "'");
      s.labels.intern(name);
      if (tab == std::string::npos) break;
      begin = tab + 1;
    }
  }
  s.epoch = parse_number<std::uint64_t>(kv, "epoch");
  s.adam.step = parse_number<std::uint64_t>(kv, "adam-step");

  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    auto [name, t] = r.tensor();
    nn::TensorMap* target = &s.params.weights;
    std::string key = name;
    if (name.starts_with(kBuffer)) {
      target = &s.params.buffers;
      key = name.substr(kBuffer.size());
    } else if (name.starts_with(kAdamM)) {
      target = &s.adam.m;
      key = name.substr(kAdamM.size());
    } else if (name.starts_with(kAdamV)) {
      target = &s.adam.v;
      key = name.substr(kAdamV.size());
    }
    if (!target->emplace(key, std::move(t)).second) fail(ErrorKind::Format, "checkpoint repeats tensor '" + name + "'");
  }
  {
    const std::string text = r.str();
    std::istringstream in(text);
    in >> s.rng;
    if (!in) fail(ErrorKind::Format, "checkpoint RNG state is unreadable");
  }
  if (!r.done()) fail(ErrorKind::Format, std::to_string(r.remaining()) + " trailing bytes after checkpoint");

  c.validate();
  const model::ModelParams expected = model::init_params(c.model_config(s.labels.size()), 0);
  const auto same_layout = [](const nn::TensorMap& a, const nn::TensorMap& b) {
    if (a.size() != b.size()) return false;
    for (auto ia = a.begin(), ib = b.begin(); ia != a.end(); ++ia, ++ib)
      if (ia->first != ib->first || ia->second.shape() != ib->second.shape()) return false;
    return true;
  };
  if (!same_layout(s.params.weights, expected.weights) || !same_layout(s.params.buffers, expected.buffers))
    fail(ErrorKind::Format, "checkpoint tensors do not match its model configuration");
  return s;
}

void save(const train::TrainState& state, const std::filesystem::path& path) {
  const std::string bytes = serialize(state);
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) fail(ErrorKind::Io, "cannot write checkpoint " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorKind::Io, "failed writing checkpoint " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrorKind::Io, "cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

train::TrainState load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

}  // namespace glyphclass::ckpt

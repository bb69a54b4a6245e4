#include "glyphclass/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "glyphclass/error.hpp"

namespace glyphclass::eval {

std::uint64_t Confusion::total() const { return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0}); }

void Confusion::add(int truth, int predicted) {
  const auto in_range = [this](int v) { return v >= 0 && static_cast<std::size_t>(v) < classes_; };
  if (!in_range(truth) || !in_range(predicted))
    fail(ErrorKind::Input, "label pair (" + std::to_string(truth) + ", " + std::to_string(predicted) +
                               ") outside [0," + std::to_string(classes_) + ")");
  ++counts_[static_cast<std::size_t>(truth) * classes_ + static_cast<std::size_t>(predicted)];
}

Confusion& Confusion::operator+=(const Confusion& other) {
  if (other.classes_ != classes_) fail(ErrorKind::Input, "cannot merge confusion matrices of different sizes");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  return *this;
}

Confusion confusion(const std::vector<int>& predictions, const std::vector<int>& labels, std::size_t classes) {
  if (predictions.size() != labels.size())
    fail(ErrorKind::Input, std::to_string(predictions.size()) + " predictions for " + std::to_string(labels.size()) +
                               " labels");
  Confusion cm(classes);
  for (std::size_t i = 0; i < labels.size(); ++i) cm.add(labels[i], predictions[i]);
  return cm;
}

namespace {
double ratio(std::uint64_t num, std::uint64_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}
}  // namespace

Metrics f_scores(const Confusion& cm, const std::vector<std::string>& label_names) {
  const std::uint64_t total = cm.total();
  if (total == 0) fail(ErrorKind::Input, "confusion matrix is empty");
  const std::size_t c = cm.classes();
  Metrics m;
  std::uint64_t tp_sum = 0;
  double f_sum = 0.0;
  for (std::size_t k = 0; k < c; ++k) {
    std::uint64_t row = 0, col = 0;
    for (std::size_t j = 0; j < c; ++j) {
      row += cm.at(k, j);
      col += cm.at(j, k);
    }
    const std::uint64_t tp = cm.at(k, k);
    ClassScore s;
    s.label = k < label_names.size() ? label_names[k] : std::to_string(k);
    s.precision = ratio(tp, col);
    s.recall = ratio(tp, row);
    s.f1 = s.precision + s.recall == 0.0 ? 0.0 : 2.0 * s.precision * s.recall / (s.precision + s.recall);
    s.support = row;
    tp_sum += tp;
    f_sum += s.f1;
    m.per_class.push_back(std::move(s));
  }
  // Pooled: TP / (TP + (FP + FN)/2) with FP = FN = total - TP.
  m.micro_f = ratio(tp_sum, total);
  m.macro_f = f_sum / static_cast<double>(c);
  return m;
}

int majority_label(const data::Dataset& train) {
  if (train.size() == 0) fail(ErrorKind::Input, "training split is empty");
  std::vector<std::size_t> counts(train.num_classes(), 0);
  for (const auto& r : train.records) ++counts[static_cast<std::size_t>(r.label)];
  return static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

Metrics majority_baseline(const data::Dataset& train, const data::Dataset& test) {
  const int label = majority_label(train);
  Confusion cm(train.num_classes());
  for (const auto& r : test.records) cm.add(r.label, label);
  return f_scores(cm, train.labels.names());
}

std::string metrics_json(const Metrics& m) {
  nlohmann::ordered_json j;
  j["micro_f"] = m.micro_f;
  j["macro_f"] = m.macro_f;
  j["per_class"] = nlohmann::ordered_json::array();
  for (const auto& s : m.per_class)
    j["per_class"].push_back(
        {{"label", s.label}, {"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}, {"support", s.support}});
  return j.dump();
}

void write_metrics(const Metrics& m, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write metrics to " + path.string());
  out << metrics_json(m) << '\n';
  if (!out) fail(ErrorKind::Io, "failed writing " + path.string());
}

std::size_t export_embeddings(const model::ModelParams& params, const atlas::GlyphAtlas& atlas,
                              const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write embeddings to " + path.string());
  const auto& keys = atlas.keys();
  constexpr std::size_t kChunk = 256;
  char buf[32];
  for (std::size_t begin = 0; begin < keys.size(); begin += kChunk) {
    const std::size_t count = std::min(kChunk, keys.size() - begin);
    nn::Tensor planes({count, 1, atlas::kGlyphSize, atlas::kGlyphSize});
    for (std::size_t i = 0; i < count; ++i)
      atlas::write_feature(*atlas.find(keys[begin + i]), planes.data() + i * atlas::kGlyphBytes);
    const nn::Tensor emb = model::encode_planes(planes, params);
    for (std::size_t i = 0; i < count; ++i) {
      out << keys[begin + i].to_string();
      for (std::size_t k = 0; k < model::kEmbedDim; ++k) {
        const auto res = std::to_chars(buf, buf + sizeof buf, emb[i * model::kEmbedDim + k]);
        out << '\t' << std::string_view(buf, res.ptr);
      }
      out << '\n';
    }
  }
  if (!out) fail(ErrorKind::Io, "failed writing " + path.string());
  return keys.size();
}

}  // namespace glyphclass::eval

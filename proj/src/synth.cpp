#include "glyphclass/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "glyphclass/error.hpp"
#include "glyphclass/utf8.hpp"

namespace glyphclass::synth {

namespace {

using atlas::GlyphBitmap;
using atlas::kGlyphSize;

void stamp(GlyphBitmap& bmp, double x, double y, double radius) {
  const int lo_x = std::max(0, static_cast<int>(std::floor(x - radius - 1)));
  const int hi_x = std::min(static_cast<int>(kGlyphSize) - 1, static_cast<int>(std::ceil(x + radius + 1)));
  const int lo_y = std::max(0, static_cast<int>(std::floor(y - radius - 1)));
  const int hi_y = std::min(static_cast<int>(kGlyphSize) - 1, static_cast<int>(std::ceil(y + radius + 1)));
  for (int py = lo_y; py <= hi_y; ++py)
    for (int px = lo_x; px <= hi_x; ++px) {
      const double d = std::hypot(px + 0.5 - x, py + 0.5 - y);
      const double ink = std::clamp(radius + 0.5 - d, 0.0, 1.0);
      auto& p = bmp.pixels[static_cast<std::size_t>(py) * kGlyphSize + static_cast<std::size_t>(px)];
      p = std::max<std::uint8_t>(p, static_cast<std::uint8_t>(std::lround(ink * 255.0)));
    }
}

void stroke(GlyphBitmap& bmp, double x0, double y0, double x1, double y1, double radius) {
  const int steps = std::max(2, static_cast<int>(std::hypot(x1 - x0, y1 - y0) * 2));
  for (int s = 0; s <= steps; ++s) {
    const double t = static_cast<double>(s) / steps;
    stamp(bmp, x0 + (x1 - x0) * t, y0 + (y1 - y0) * t, radius);
  }
}

GlyphBitmap letter_bitmap(char32_t base, shaping::Form form, std::uint64_t seed) {
  GlyphBitmap bmp;
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ull + base);
  std::uniform_real_distribution<double> coord(8.0, 28.0);
  const int strokes = 2 + static_cast<int>(rng() % 3);
  for (int s = 0; s < strokes; ++s) stroke(bmp, coord(rng), coord(rng), coord(rng), coord(rng), 1.3);
  const int dots = static_cast<int>(rng() % 4);
  for (int d = 0; d < dots; ++d) stamp(bmp, coord(rng), coord(rng) < 18.0 ? 5.0 : 31.0, 1.8);
  // Joining connectors sit on the baseline: right edge joins the previous
  // letter, left edge the next (right-to-left script).
  const bool joins_prev = form == shaping::Form::Final || form == shaping::Form::Medial;
  const bool joins_next = form == shaping::Form::Initial || form == shaping::Form::Medial;
  if (joins_prev) stroke(bmp, 24.0, 26.0, 35.0, 26.0, 1.2);
  if (joins_next) stroke(bmp, 1.0, 26.0, 12.0, 26.0, 1.2);
  if (form == shaping::Form::Isolated) stroke(bmp, 10.0, 30.0, 26.0, 30.0, 0.8);
  return bmp;
}

}  // namespace

const std::vector<char32_t>& alphabet() {
  static const std::vector<char32_t> letters = [] {
    std::vector<char32_t> out;
    for (char32_t cp = 0x0627; cp <= 0x063A; ++cp) out.push_back(cp);
    for (char32_t cp = 0x0641; cp <= 0x064A; ++cp) out.push_back(cp);
    return out;
  }();
  return letters;
}

std::vector<std::size_t> longtail_counts(std::size_t num_classes, std::size_t head_count, std::size_t tail_count) {
  if (num_classes == 0) fail(ErrorKind::Parameter, "synthetic corpus needs at least one class");
  if (tail_count < 2 || head_count < tail_count)
    fail(ErrorKind::Parameter, "synthetic corpus needs head_count >= tail_count >= 2");
  std::vector<std::size_t> counts(num_classes, head_count);
  const double ratio = static_cast<double>(tail_count) / static_cast<double>(head_count);
  for (std::size_t c = 1; c < num_classes; ++c)
    counts[c] = static_cast<std::size_t>(
        std::llround(static_cast<double>(head_count) * std::pow(ratio, static_cast<double>(c) / (num_classes - 1))));
  return counts;
}

data::Dataset synth_longtail(std::size_t num_classes, std::size_t head_count, std::size_t tail_count,
                             std::size_t vocab_per_class, std::uint64_t seed) {
  const auto counts = longtail_counts(num_classes, head_count, tail_count);
  if (vocab_per_class == 0) fail(ErrorKind::Parameter, "vocab_per_class must be positive");
  const auto& letters = alphabet();

  std::vector<std::vector<char32_t>> vocab(num_classes);
  std::vector<bool> owned(letters.size(), false);
  for (std::size_t c = 0; c < num_classes; ++c)
    for (std::size_t k = 0; k < vocab_per_class; ++k) {
      const std::size_t idx = (c * vocab_per_class + k) % letters.size();
      vocab[c].push_back(letters[idx]);
      owned[idx] = true;
    }
  std::vector<char32_t> filler;
  for (std::size_t i = 0; i < letters.size(); ++i)
    if (!owned[i]) filler.push_back(letters[i]);
  if (filler.empty()) filler = letters;

  data::Dataset ds;
  for (std::size_t c = 0; c < num_classes; ++c) ds.labels.intern("class" + std::to_string(c));

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> length_dist(8, 20);
  std::uniform_int_distribution<std::size_t> word_dist(2, 6);
  // Records are interleaved across classes so prefixes stay mixed.
  std::vector<std::size_t> emitted(num_classes, 0);
  for (bool any = true; any;) {
    any = false;
    for (std::size_t c = 0; c < num_classes; ++c) {
      if (emitted[c] == counts[c]) continue;
      any = true;
      ++emitted[c];
      const std::size_t length = length_dist(rng);
      std::u32string text;
      std::size_t word_left = word_dist(rng);
      while (text.size() < length) {
        if (word_left == 0 && text.size() + 1 < length) {
          text.push_back(U' ');
          word_left = word_dist(rng);
          continue;
        }
        const auto& pool = (rng() & 1) ? vocab[c] : filler;
        text.push_back(pool[rng() % pool.size()]);
        if (word_left > 0) --word_left;
      }
      ds.records.push_back(data::Record{static_cast<int>(c), utf8::encode(text)});
    }
  }
  return ds;
}

atlas::GlyphAtlas synth_atlas(std::uint64_t seed) {
  std::vector<std::pair<atlas::GlyphKey, GlyphBitmap>> entries;
  for (char32_t base : alphabet()) {
    for (auto form : {shaping::Form::Isolated, shaping::Form::Final, shaping::Form::Initial, shaping::Form::Medial}) {
      const char32_t cp = shaping::presentation_form(base, form);
      if (cp == 0) continue;
      entries.emplace_back(atlas::GlyphKey{{cp}}, letter_bitmap(base, form, seed));
    }
  }
  GlyphBitmap space;
  stroke(space, 4.0, 33.0, 32.0, 33.0, 0.6);
  entries.emplace_back(atlas::GlyphKey{{U' '}}, space);

  GlyphBitmap box;
  stroke(box, 6, 6, 30, 6, 1.0);
  stroke(box, 30, 6, 30, 30, 1.0);
  stroke(box, 30, 30, 6, 30, 1.0);
  stroke(box, 6, 30, 6, 6, 1.0);
  return atlas::GlyphAtlas(std::move(entries), box);
}

}  // namespace glyphclass::synth

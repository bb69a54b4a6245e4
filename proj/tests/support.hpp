#pragma once

#include <unicode/uchar.h>
#include <unicode/ushape.h>
#include <unicode/uscript.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <string>
#include <unistd.h>
#include <vector>

#include "glyphclass/arabic_shaping.hpp"
#include "glyphclass/error.hpp"
#include "glyphclass/gradcheck.hpp"
#include "glyphclass/tensor.hpp"

namespace testing_support {

namespace gc = glyphclass;
using gc::nn::Shape;
using gc::nn::Tensor;

class TempDir {
 public:
  TempDir() {
    std::string pattern = (std::filesystem::temp_directory_path() / "glyphclass-XXXXXX").string();
    if (!::mkdtemp(pattern.data())) throw std::runtime_error("mkdtemp failed");
    path_ = pattern;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (float& v : t.values()) v = static_cast<float>(dist(rng));
  return t;
}

/// Values in [lo,hi] with sign chosen at random, magnitude at least lo.
inline Tensor away_from_zero(Shape shape, std::mt19937_64& rng, double lo = 0.1, double hi = 1.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  std::bernoulli_distribution sign(0.5);
  for (float& v : t.values()) v = static_cast<float>(sign(rng) ? dist(rng) : -dist(rng));
  return t;
}

inline double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

/// Gradient check of a tensor-valued map through the scalar <out, R> with a
/// fixed random R. `backward(R)` must return gradients for every input.
inline double check_map(const std::function<Tensor()>& forward, std::vector<Tensor*> inputs,
                        const std::function<std::vector<Tensor>(const Tensor&)>& backward, std::uint64_t seed,
                        std::size_t samples = 64, double step = 1e-3, double floor = 1e-6) {
  // Offset so R never coincides with inputs drawn from the same seed.
  std::mt19937_64 rng(seed + 0x5bd1e995);
  const Tensor probe = forward();
  const Tensor r = random_tensor(probe.shape(), rng);
  const std::vector<Tensor> analytic = backward(r);
  gc::nn::GradCheckOptions options;
  options.seed = seed;
  options.samples = samples;
  options.step = step;
  options.denominator_floor = floor;
  return gc::nn::finite_diff_check([&] { return dot(forward(), r); }, inputs, analytic, options);
}

// ---------------------------------------------------------------- shaping oracle

/// Joining class from ICU's own Joining_Type property, with the same mapping
/// of the Unicode types onto the four classes the engine uses.
inline gc::shaping::JoiningClass icu_joining_class(char32_t cp) {
  using gc::shaping::JoiningClass;
  switch (u_getIntPropertyValue(static_cast<UChar32>(cp), UCHAR_JOINING_TYPE)) {
    case U_JT_DUAL_JOINING:
    case U_JT_JOIN_CAUSING:
      return JoiningClass::Dual;
    case U_JT_RIGHT_JOINING:
      return JoiningClass::RightJoining;
    case U_JT_TRANSPARENT:
      return JoiningClass::Transparent;
    default:
      return JoiningClass::NonJoining;
  }
}

inline bool icu_is_arabic_letter(char32_t cp) {
  UErrorCode status = U_ZERO_ERROR;
  const UScriptCode script = uscript_getScript(static_cast<UChar32>(cp), &status);
  return cp == gc::shaping::kTatweel || script == USCRIPT_ARABIC;
}

/// Textbook joining algorithm over raw code points (no normalization): for
/// each non-transparent character look left and right past transparent
/// ones; a character joins its predecessor when it can join right and the
/// predecessor can join left, and symmetrically for its successor.
inline std::vector<gc::shaping::Form> reference_forms(const std::u32string& text) {
  using gc::shaping::Form;
  using gc::shaping::JoiningClass;
  const auto cls = [&](std::size_t i) {
    const JoiningClass c = icu_joining_class(text[i]);
    if (c == JoiningClass::Transparent) return c;
    return icu_is_arabic_letter(text[i]) ? c : JoiningClass::NonJoining;
  };
  const auto joins_left = [](JoiningClass c) { return c == JoiningClass::Dual; };
  const auto joins_right = [](JoiningClass c) { return c == JoiningClass::Dual || c == JoiningClass::RightJoining; };

  std::vector<Form> forms;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const JoiningClass c = cls(i);
    if (c == JoiningClass::Transparent) {
      forms.push_back(Form::Isolated);
      continue;
    }
    std::ptrdiff_t before = static_cast<std::ptrdiff_t>(i) - 1;
    while (before >= 0 && cls(static_cast<std::size_t>(before)) == JoiningClass::Transparent) --before;
    std::size_t after = i + 1;
    while (after < text.size() && cls(after) == JoiningClass::Transparent) ++after;
    const bool right = joins_right(c) && before >= 0 && joins_left(cls(static_cast<std::size_t>(before)));
    const bool left = joins_left(c) && after < text.size() && joins_right(cls(after));
    if (right && left) forms.push_back(Form::Medial);
    else if (right) forms.push_back(Form::Final);
    else if (left) forms.push_back(Form::Initial);
    else forms.push_back(Form::Isolated);
  }
  return forms;
}

/// ICU's presentation-form shaping of logical-order text, one output code
/// unit per input character (lam-alef ligatures are left to the caller to
/// avoid).
inline std::u32string icu_shape(const std::u32string& text) {
  std::u16string in;
  for (char32_t cp : text) in.push_back(static_cast<char16_t>(cp));
  std::u16string out(in.size() * 2 + 8, u'\0');
  UErrorCode status = U_ZERO_ERROR;
  const int32_t n = u_shapeArabic(reinterpret_cast<const UChar*>(in.data()), static_cast<int32_t>(in.size()),
                                  reinterpret_cast<UChar*>(out.data()), static_cast<int32_t>(out.size()),
                                  U_SHAPE_LETTERS_SHAPE | U_SHAPE_TEXT_DIRECTION_LOGICAL | U_SHAPE_LENGTH_FIXED_SPACES_NEAR,
                                  &status);
  if (U_FAILURE(status)) throw std::runtime_error("u_shapeArabic failed");
  std::u32string result;
  for (int32_t i = 0; i < n; ++i) result.push_back(out[static_cast<std::size_t>(i)]);
  return result;
}

/// Random strings over Arabic letters, tatweel, harakat, spaces, Latin and
/// digits, chosen so that normalization leaves them unchanged.
inline std::u32string random_arabic_text(std::mt19937_64& rng, std::size_t max_len = 24) {
  static const std::vector<char32_t> letters = [] {
    std::vector<char32_t> v;
    for (char32_t cp = 0x0621; cp <= 0x063A; ++cp) v.push_back(cp);
    for (char32_t cp = 0x0641; cp <= 0x064A; ++cp) v.push_back(cp);
    for (char32_t cp : {0x0671, 0x067E, 0x0686, 0x0698, 0x06A4, 0x06A9, 0x06AF, 0x06CC, 0x06D2}) v.push_back(cp);
    return v;
  }();
  static const std::vector<char32_t> marks = {0x064B, 0x064C, 0x064D, 0x064E, 0x064F, 0x0650, 0x0651, 0x0652, 0x0670};
  static const std::vector<char32_t> others = {U' ', U'a', U'Z', U'7', U'١', U'.', U'،'};
  std::uniform_int_distribution<std::size_t> len(1, max_len);
  std::uniform_int_distribution<int> kind(0, 99);
  std::u32string s;
  const std::size_t n = len(rng);
  for (std::size_t i = 0; i < n; ++i) {
    const int k = kind(rng);
    if (k < 68) s.push_back(letters[rng() % letters.size()]);
    else if (k < 73) s.push_back(gc::shaping::kTatweel);
    else if (k < 88) s.push_back(marks[rng() % marks.size()]);
    else s.push_back(others[rng() % others.size()]);
  }
  return s;
}

}  // namespace testing_support

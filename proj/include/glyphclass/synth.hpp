#pragma once

#include <cstdint>
#include <vector>

#include "glyphclass/data.hpp"
#include "glyphclass/glyph_atlas.hpp"

namespace glyphclass::synth {

/// Letters used by the synthetic corpora: alef through ghain and feh
/// through yeh (36 joining letters).
const std::vector<char32_t>& alphabet();

/// round(head * (tail/head)^(c/(C-1))) for c = 0..C-1.
std::vector<std::size_t> longtail_counts(std::size_t num_classes, std::size_t head_count, std::size_t tail_count);

/// Long-tailed labelled corpus. Each class owns `vocab_per_class` letters
/// (disjoint while the alphabet allows); letters outside every class set act
/// as shared filler. A text is 8 to 20 clusters of space-separated words in
/// which each letter comes from the class set or the filler with equal odds.
/// Labels are "class0", "class1", ... in id order.
data::Dataset synth_longtail(std::size_t num_classes, std::size_t head_count, std::size_t tail_count,
                             std::size_t vocab_per_class, std::uint64_t seed);

/// Procedural atlas covering every positional form of alphabet() plus space
/// and a boxed fallback glyph. Forms of one letter share a stroke skeleton
/// and differ in their joining connectors.
atlas::GlyphAtlas synth_atlas(std::uint64_t seed);

}  // namespace glyphclass::synth

#pragma once

#include <array>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "xmodal/util.hpp"

namespace xmodal {

// Character inventory shared by the corpus generator, the NER head, the
// n-gram LM and the scorer. Plain text uses lowercase letters and space;
// entity annotations use one reserved open character per tag plus a single
// shared close character that never appear in plain text.

enum class EntityTag : int { kPlace = 0, kPerson = 1, kOrg = 2 };
inline constexpr int kNumEntityTags = 3;

inline constexpr std::string_view kPlainChars = "abcdefghijklmnopqrstuvwxyz ";
inline constexpr std::array<char, kNumEntityTags> kTagOpenChars = {'$', '#', '@'};
inline constexpr char kTagCloseChar = '|';

inline constexpr std::array<std::string_view, kNumEntityTags> kTagNames = {"PLACE", "PERSON",
                                                                           "ORG"};

inline std::string_view tag_name(EntityTag t) { return kTagNames[static_cast<size_t>(t)]; }

inline EntityTag tag_from_name(std::string_view name) {
  for (int i = 0; i < kNumEntityTags; ++i)
    if (kTagNames[static_cast<size_t>(i)] == name) return static_cast<EntityTag>(i);
  fail("unknown entity tag: " + std::string(name));
}

// Full tagged alphabet: plain chars, then tag opens, then the close char.
inline constexpr int kPlainAlphabetSize = static_cast<int>(kPlainChars.size());  // 27
inline constexpr int kTaggedAlphabetSize = kPlainAlphabetSize + kNumEntityTags + 1;  // 31

inline int char_to_id(char c) {
  if (c >= 'a' && c <= 'z') return c - 'a';
  if (c == ' ') return 26;
  for (int i = 0; i < kNumEntityTags; ++i)
    if (c == kTagOpenChars[static_cast<size_t>(i)]) return kPlainAlphabetSize + i;
  if (c == kTagCloseChar) return kPlainAlphabetSize + kNumEntityTags;
  fail(std::string("character outside the tagged alphabet: '") + c + "'");
}

inline char id_to_char(int id) {
  require(id >= 0 && id < kTaggedAlphabetSize, "character id out of range");
  if (id < 26) return static_cast<char>('a' + id);
  if (id == 26) return ' ';
  if (id < kPlainAlphabetSize + kNumEntityTags)
    return kTagOpenChars[static_cast<size_t>(id - kPlainAlphabetSize)];
  return kTagCloseChar;
}

inline std::vector<int> string_to_ids(std::string_view s) {
  std::vector<int> ids;
  ids.reserve(s.size());
  for (char c : s) ids.push_back(char_to_id(c));
  return ids;
}

inline std::string ids_to_string(std::span<const int> ids) {
  std::string s;
  s.reserve(ids.size());
  for (int id : ids) s.push_back(id_to_char(id));
  return s;
}

}  // namespace xmodal

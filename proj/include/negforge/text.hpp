#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "negforge/common.hpp"

namespace negforge::text {

// Lenient UTF-8 decoding; invalid sequences decode to U+FFFD one byte at a time.
inline std::vector<char32_t> utf8_decode(std::string_view s) {
  std::vector<char32_t> out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    unsigned char b = static_cast<unsigned char>(s[i]);
    char32_t cp = 0xFFFD;
    std::size_t len = 1;
    if (b < 0x80) {
      cp = b;
    } else if ((b >> 5) == 0x6 && i + 1 < s.size()) {
      cp = static_cast<char32_t>((b & 0x1F) << 6 | (s[i + 1] & 0x3F));
      len = 2;
    } else if ((b >> 4) == 0xE && i + 2 < s.size()) {
      cp = static_cast<char32_t>((b & 0x0F) << 12 | (s[i + 1] & 0x3F) << 6 | (s[i + 2] & 0x3F));
      len = 3;
    } else if ((b >> 3) == 0x1E && i + 3 < s.size()) {
      cp = static_cast<char32_t>((b & 0x07) << 18 | (s[i + 1] & 0x3F) << 12 |
                                 (s[i + 2] & 0x3F) << 6 | (s[i + 3] & 0x3F));
      len = 4;
    }
    out.push_back(cp);
    i += len;
  }
  return out;
}

inline void utf8_append(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out += static_cast<char>(cp);
  } else if (cp < 0x800) {
    out += static_cast<char>(0xC0 | (cp >> 6));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else if (cp < 0x10000) {
    out += static_cast<char>(0xE0 | (cp >> 12));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else {
    out += static_cast<char>(0xF0 | (cp >> 18));
    out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  }
}

enum class Script { latin, cyrillic, greek, arabic, hebrew, devanagari, bengali, telugu, thai, han, kana, hangul, other };

inline Script script_of(char32_t cp) {
  if ((cp >= 'A' && cp <= 'Z') || (cp >= 'a' && cp <= 'z')) return Script::latin;
  if (cp >= 0x00C0 && cp <= 0x024F) return Script::latin;
  if (cp >= 0x0370 && cp <= 0x03FF) return Script::greek;
  if (cp >= 0x0400 && cp <= 0x04FF) return Script::cyrillic;
  if (cp >= 0x0590 && cp <= 0x05FF) return Script::hebrew;
  if ((cp >= 0x0600 && cp <= 0x06FF) || (cp >= 0x0750 && cp <= 0x077F)) return Script::arabic;
  if (cp >= 0x0900 && cp <= 0x097F) return Script::devanagari;
  if (cp >= 0x0980 && cp <= 0x09FF) return Script::bengali;
  if (cp >= 0x0C00 && cp <= 0x0C7F) return Script::telugu;
  if (cp >= 0x0E00 && cp <= 0x0E7F) return Script::thai;
  if ((cp >= 0x4E00 && cp <= 0x9FFF) || (cp >= 0x3400 && cp <= 0x4DBF)) return Script::han;
  if ((cp >= 0x3040 && cp <= 0x309F) || (cp >= 0x30A0 && cp <= 0x30FF)) return Script::kana;
  if ((cp >= 0xAC00 && cp <= 0xD7AF) || (cp >= 0x1100 && cp <= 0x11FF)) return Script::hangul;
  return Script::other;
}

// Scripts without word delimiters are indexed as character bigrams.
inline bool is_bigram_script(char32_t cp) {
  Script s = script_of(cp);
  return s == Script::han || s == Script::kana || s == Script::thai;
}

inline bool is_word_cp(char32_t cp) {
  if ((cp >= '0' && cp <= '9')) return true;
  if (cp == '_') return true;
  return script_of(cp) != Script::other;
}

inline char32_t fold_cp(char32_t cp) {
  if (cp >= 'A' && cp <= 'Z') return cp - 'A' + 'a';
  return cp;
}

// Word tokens for space-delimited scripts, character bigrams for zh/ja/th.
// A bigram-script run of length 1 yields the single character.
inline std::vector<std::string> tokenize(std::string_view s) {
  std::vector<std::string> tokens;
  std::vector<char32_t> cps = utf8_decode(s);
  std::string word;
  std::vector<char32_t> run;

  auto flush_word = [&] {
    if (!word.empty()) {
      tokens.push_back(word);
      word.clear();
    }
  };
  auto flush_run = [&] {
    if (run.empty()) return;
    if (run.size() == 1) {
      std::string t;
      utf8_append(t, run[0]);
      tokens.push_back(std::move(t));
    } else {
      for (std::size_t i = 0; i + 1 < run.size(); ++i) {
        std::string t;
        utf8_append(t, run[i]);
        utf8_append(t, run[i + 1]);
        tokens.push_back(std::move(t));
      }
    }
    run.clear();
  };

  for (char32_t cp : cps) {
    if (is_bigram_script(cp)) {
      flush_word();
      run.push_back(cp);
    } else if (is_word_cp(cp)) {
      flush_run();
      utf8_append(word, fold_cp(cp));
    } else {
      flush_word();
      flush_run();
    }
  }
  flush_word();
  flush_run();
  return tokens;
}

// Majority script over letter codepoints; Script::other when nothing letters.
inline Script dominant_script(std::string_view s) {
  std::unordered_map<int, int> counts;
  for (char32_t cp : utf8_decode(s)) {
    Script sc = script_of(cp);
    if (sc == Script::other) continue;
    if (cp >= '0' && cp <= '9') continue;
    counts[static_cast<int>(sc)]++;
  }
  int best = -1, best_count = 0;
  for (auto& [k, v] : counts) {
    if (v > best_count) {
      best_count = v;
      best = k;
    }
  }
  return best < 0 ? Script::other : static_cast<Script>(best);
}

}  // namespace negforge::text

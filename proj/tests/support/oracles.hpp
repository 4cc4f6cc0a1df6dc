#pragma once

// Brute-force reference implementations used to pin the metric code. They
// share nothing with the library: tokens are rebuilt character by character,
// n-grams are counted by linear scans and sets are plain sorted vectors.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

namespace oracle {

inline bool word_char(unsigned char ch) { return std::isalnum(ch) != 0 || ch >= 0x80; }

inline std::vector<std::string> tokens(const std::string& facet) {
  std::vector<std::string> raw;
  std::string cur;
  for (char ch : facet) {
    if (ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r' || ch == '\f' || ch == '\v') {
      if (!cur.empty()) raw.push_back(cur);
      cur.clear();
    } else {
      cur += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    }
  }
  if (!cur.empty()) raw.push_back(cur);
  std::vector<std::string> out;
  for (const std::string& t : raw) {
    std::size_t b = 0;
    std::size_t e = t.size();
    while (b < e && !word_char(static_cast<unsigned char>(t[b]))) ++b;
    while (e > b && !word_char(static_cast<unsigned char>(t[e - 1]))) --e;
    if (e > b) out.push_back(t.substr(b, e - b));
  }
  return out;
}

inline std::string joined(const std::string& facet) {
  std::string s;
  for (const std::string& t : tokens(facet)) {
    if (!s.empty()) s += ' ';
    s += t;
  }
  return s;
}

inline void add_unique(std::vector<std::string>& bag, const std::string& x) {
  for (const std::string& y : bag) {
    if (y == x) return;
  }
  bag.push_back(x);
}

inline std::size_t shared(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::size_t k = 0;
  for (const std::string& x : a) {
    for (const std::string& y : b) {
      if (x == y) {
        ++k;
        break;
      }
    }
  }
  return k;
}

inline double f1(std::size_t k, std::size_t np, std::size_t ng) {
  const double p = np == 0 ? 0.0 : double(k) / double(np);
  const double r = ng == 0 ? 0.0 : double(k) / double(ng);
  return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

inline double term_overlap(const std::vector<std::string>& pred, const std::vector<std::string>& gold) {
  std::vector<std::string> P, G;
  for (const auto& f : pred)
    for (const auto& t : tokens(f)) add_unique(P, t);
  for (const auto& f : gold)
    for (const auto& t : tokens(f)) add_unique(G, t);
  return f1(shared(P, G), P.size(), G.size());
}

inline double exact_match(const std::vector<std::string>& pred, const std::vector<std::string>& gold) {
  std::vector<std::string> P, G;
  for (const auto& f : pred)
    if (!joined(f).empty()) add_unique(P, joined(f));
  for (const auto& f : gold)
    if (!joined(f).empty()) add_unique(G, joined(f));
  return f1(shared(P, G), P.size(), G.size());
}

inline std::size_t occurrences(const std::vector<std::string>& seq, const std::vector<std::string>& gram) {
  std::size_t n = gram.size();
  std::size_t count = 0;
  for (std::size_t i = 0; i + n <= seq.size(); ++i) {
    bool same = true;
    for (std::size_t j = 0; j < n && same; ++j) same = seq[i + j] == gram[j];
    if (same) ++count;
  }
  return count;
}

inline double bleu_one(const std::vector<std::string>& cand, const std::vector<std::vector<std::string>>& refs) {
  const std::size_t c = cand.size();
  if (c == 0) return 0.0;
  std::size_t best = 0;
  std::size_t best_gap = static_cast<std::size_t>(-1);
  for (const auto& ref : refs) {
    if (ref.empty()) continue;
    const std::size_t gap = ref.size() > c ? ref.size() - c : c - ref.size();
    if (gap < best_gap || (gap == best_gap && ref.size() < best)) {
      best_gap = gap;
      best = ref.size();
    }
  }
  const double bp = std::min(1.0, std::exp(1.0 - double(best) / double(c)));
  const std::size_t max_n = std::min<std::size_t>(4, c);
  std::vector<double> p;
  double total = 0.0;
  for (std::size_t n = 1; n <= max_n; ++n) {
    std::size_t matched = 0;
    std::size_t grams = c - n + 1;
    // Each distinct candidate n-gram is clipped once, at its first position.
    for (std::size_t i = 0; i + n <= c; ++i) {
      std::vector<std::string> gram(cand.begin() + i, cand.begin() + i + n);
      bool seen_before = false;
      for (std::size_t k = 0; k < i && !seen_before; ++k) {
        seen_before = std::equal(gram.begin(), gram.end(), cand.begin() + k);
      }
      if (seen_before) continue;
      std::size_t ref_max = 0;
      for (const auto& ref : refs) ref_max = std::max(ref_max, occurrences(ref, gram));
      matched += std::min(occurrences(cand, gram), ref_max);
    }
    double pn = double(matched) / double(grams);
    if (pn == 0.0) pn = 1e-9;
    p.push_back(pn);
    double prod = 1.0;
    for (double x : p) prod *= x;
    total += bp * std::pow(prod, 1.0 / double(n));
  }
  return total / double(max_n);
}

inline double set_bleu(const std::vector<std::string>& pred, const std::vector<std::string>& gold) {
  if (pred.empty()) return 0.0;
  std::vector<std::vector<std::string>> refs;
  for (const auto& g : gold) refs.push_back(tokens(g));
  double sum = 0.0;
  for (const auto& c : pred) sum += bleu_one(tokens(c), refs);
  return sum / double(pred.size());
}

inline double trigram_cosine(const std::string& a, const std::string& b) {
  auto grams = [](const std::string& facet) {
    const std::string s = "##" + joined(facet) + "##";
    std::vector<std::pair<std::string, int>> bag;
    for (std::size_t i = 0; i + 3 <= s.size(); ++i) {
      const std::string g = s.substr(i, 3);
      bool found = false;
      for (auto& [k, v] : bag) {
        if (k == g) {
          ++v;
          found = true;
        }
      }
      if (!found) bag.emplace_back(g, 1);
    }
    return bag;
  };
  const auto ga = grams(a);
  const auto gb = grams(b);
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (const auto& [k, v] : ga) {
    na += double(v) * v;
    for (const auto& [k2, v2] : gb)
      if (k == k2) dot += double(v) * v2;
  }
  for (const auto& [k, v] : gb) nb += double(v) * v;
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / std::sqrt(na * nb);
}

}  // namespace oracle

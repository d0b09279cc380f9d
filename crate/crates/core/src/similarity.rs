//! Composite string similarity used to rank confusion candidates.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::distance::damerau_levenshtein;
use crate::error::SearchError;
use crate::phonetic::{metaphone, soundex};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityBreakdown {
    pub normalized_damerau_levenshtein: f64,
    pub ngram_jaccard: f64,
    pub phonetic: f64,
    pub substring: f64,
    pub fuzzy_ratio: f64,
    pub max_score: f64,
}

impl SimilarityBreakdown {
    pub fn components(&self) -> [f64; 5] {
        [
            self.normalized_damerau_levenshtein,
            self.ngram_jaccard,
            self.phonetic,
            self.substring,
            self.fuzzy_ratio,
        ]
    }
}

/// Five-way similarity between two normalized names.
pub fn typosim(a: &str, b: &str) -> Result<SimilarityBreakdown, SearchError> {
    if a.is_empty() || b.is_empty() {
        return Err(SearchError::EmptyString);
    }
    // fuzzy_ratio depends on argument order; fix it so the result is symmetric
    let (a, b) = if a <= b { (a, b) } else { (b, a) };
    let ac: Vec<char> = a.chars().collect();
    let bc: Vec<char> = b.chars().collect();
    let longest = ac.len().max(bc.len()) as f64;

    let normalized_damerau_levenshtein = 1.0 - damerau_levenshtein(a, b) as f64 / longest;
    let ngram_jaccard = bigram_jaccard(&ac, &bc);
    let phonetic = (phonetic_match(a, b, soundex) + phonetic_match(a, b, metaphone)) / 2.0;
    let (_, _, lcs) = longest_match(&ac, 0, ac.len(), &bc, 0, bc.len());
    let substring = lcs as f64 / longest;
    let fuzzy_ratio = 2.0 * matching_chars(&ac, &bc) as f64 / (ac.len() + bc.len()) as f64;

    let max_score = [normalized_damerau_levenshtein, ngram_jaccard, phonetic, substring, fuzzy_ratio]
        .into_iter()
        .fold(0.0, f64::max);
    Ok(SimilarityBreakdown {
        normalized_damerau_levenshtein,
        ngram_jaccard,
        phonetic,
        substring,
        fuzzy_ratio,
        max_score,
    })
}

fn phonetic_match(a: &str, b: &str, code: fn(&str) -> String) -> f64 {
    let (ca, cb) = (code(a), code(b));
    let equal = if ca.is_empty() && cb.is_empty() { a == b } else { ca == cb };
    if equal {
        1.0
    } else {
        0.0
    }
}

fn bigram_jaccard(a: &[char], b: &[char]) -> f64 {
    if a.len() < 2 || b.len() < 2 {
        return 0.0;
    }
    let grams = |s: &[char]| s.windows(2).map(|w| (w[0], w[1])).collect::<HashSet<_>>();
    let (ga, gb) = (grams(a), grams(b));
    let inter = ga.intersection(&gb).count();
    let union = ga.union(&gb).count();
    inter as f64 / union as f64
}

/// Longest common block in a[alo..ahi] x b[blo..bhi]; earliest on ties.
/// Returns (start in a, start in b, length).
fn longest_match(
    a: &[char],
    alo: usize,
    ahi: usize,
    b: &[char],
    blo: usize,
    bhi: usize,
) -> (usize, usize, usize) {
    let (mut best_i, mut best_j, mut best) = (alo, blo, 0usize);
    let width = bhi - blo;
    let mut prev = vec![0usize; width + 1];
    let mut cur = vec![0usize; width + 1];
    for i in alo..ahi {
        for j in blo..bhi {
            let k = j - blo;
            cur[k + 1] = if a[i] == b[j] { prev[k] + 1 } else { 0 };
            if cur[k + 1] > best {
                best = cur[k + 1];
                best_i = i + 1 - best;
                best_j = j + 1 - best;
            }
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    (best_i, best_j, best)
}

/// Total size of Ratcliff/Obershelp matching blocks.
fn matching_chars(a: &[char], b: &[char]) -> usize {
    let mut total = 0;
    let mut stack = vec![(0, a.len(), 0, b.len())];
    while let Some((alo, ahi, blo, bhi)) = stack.pop() {
        if alo >= ahi || blo >= bhi {
            continue;
        }
        let (i, j, k) = longest_match(a, alo, ahi, b, blo, bhi);
        if k == 0 {
            continue;
        }
        total += k;
        stack.push((alo, i, blo, j));
        stack.push((i + k, ahi, j + k, bhi));
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_is_all_ones() {
        let s = typosim("lodash", "lodash").unwrap();
        for c in s.components() {
            assert_eq!(c, 1.0);
        }
        assert_eq!(s.max_score, 1.0);
    }

    #[test]
    fn one_edit_pairs() {
        let s = typosim("crypto", "crypt").unwrap();
        assert!((s.normalized_damerau_levenshtein - (1.0 - 1.0 / 6.0)).abs() < 1e-12);
        let s = typosim("lodash", "lodahs").unwrap();
        assert!((s.normalized_damerau_levenshtein - (1.0 - 1.0 / 6.0)).abs() < 1e-12);
    }

    #[test]
    fn hand_computed_components() {
        // bigrams: ab bc cd / ab bc ce -> 2 shared of 4
        let s = typosim("abcd", "abce").unwrap();
        assert!((s.ngram_jaccard - 0.5).abs() < 1e-12);
        assert!((s.substring - 0.75).abs() < 1e-12);
        assert!((s.fuzzy_ratio - 0.75).abs() < 1e-12);
        // "eslint" vs "eslintplugin": one block of 6 chars
        let s = typosim("eslint", "eslintplugin").unwrap();
        assert!((s.fuzzy_ratio - 12.0 / 18.0).abs() < 1e-12);
        assert!((s.substring - 0.5).abs() < 1e-12);
        let s = typosim("a", "b").unwrap();
        assert_eq!(s.ngram_jaccard, 0.0);
    }

    #[test]
    fn empty_rejected() {
        assert!(matches!(typosim("", "a"), Err(SearchError::EmptyString)));
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded(a in "[a-e0-2]{1,10}", b in "[a-e0-2]{1,10}") {
            let ab = typosim(&a, &b).unwrap();
            let ba = typosim(&b, &a).unwrap();
            prop_assert_eq!(ab, ba);
            for c in ab.components() {
                prop_assert!((0.0..=1.0).contains(&c));
            }
            let max = ab.components().into_iter().fold(0.0, f64::max);
            prop_assert_eq!(ab.max_score, max);
        }
    }
}

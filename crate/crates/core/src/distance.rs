//! Damerau-Levenshtein distance (unrestricted: adjacent transpositions count
//! as one edit even when other edits touch the same characters).

use std::collections::HashMap;

/// Full Damerau-Levenshtein distance over Unicode scalar values.
pub fn damerau_levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let bound = a.len() + b.len();
    dl_table(&a, &b, bound, None).unwrap_or(bound)
}

/// Distance when it is at most `max`, otherwise `None`. Runs a banded
/// table and stops as soon as two consecutive rows exceed `max`.
pub fn damerau_levenshtein_bounded(a: &str, b: &str, max: usize) -> Option<usize> {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.len().abs_diff(b.len()) > max {
        return None;
    }
    dl_table(&a, &b, max, Some(max))
}

pub(crate) fn damerau_levenshtein_chars_bounded(a: &[char], b: &[char], max: usize) -> Option<usize> {
    if a.len().abs_diff(b.len()) > max {
        return None;
    }
    dl_table(a, b, max, Some(max))
}

fn dl_table(a: &[char], b: &[char], max: usize, band: Option<usize>) -> Option<usize> {
    let (n, m) = (a.len(), b.len());
    if n == 0 || m == 0 {
        let d = n.max(m);
        return (d <= max).then_some(d);
    }
    // Values above `max` are clamped to `cap`; every recurrence term is
    // monotone, so clamping never changes a result that is <= max.
    let cap = max + 1;
    let width = m + 2;
    let mut h = vec![cap; (n + 2) * width];
    let idx = |i: usize, j: usize| i * width + j;
    for i in 0..=n {
        h[idx(i + 1, 1)] = i.min(cap);
    }
    for j in 0..=m {
        h[idx(1, j + 1)] = j.min(cap);
    }
    let mut last_row: HashMap<char, usize> = HashMap::new();
    let mut prev_row_min = 0usize;
    for i in 1..=n {
        let mut last_match_col = 0usize;
        let (lo, hi) = match band {
            Some(k) => (i.saturating_sub(k).max(1), (i + k).min(m)),
            None => (1, m),
        };
        let mut row_min = h[idx(i + 1, 1)];
        for j in lo..=hi {
            let i1 = last_row.get(&b[j - 1]).copied().unwrap_or(0);
            let j1 = last_match_col;
            let cost = if a[i - 1] == b[j - 1] {
                last_match_col = j;
                0
            } else {
                1
            };
            let substitute = h[idx(i, j)] + cost;
            let insert = h[idx(i + 1, j)] + 1;
            let delete = h[idx(i, j + 1)] + 1;
            let transpose = if i1 > 0 && j1 > 0 {
                h[idx(i1, j1)] + (i - i1 - 1) + 1 + (j - j1 - 1)
            } else {
                usize::MAX
            };
            let v = substitute.min(insert).min(delete).min(transpose).min(cap);
            h[idx(i + 1, j + 1)] = v;
            row_min = row_min.min(v);
        }
        last_row.insert(a[i - 1], i);
        if band.is_some() && row_min > max && prev_row_min > max {
            return None;
        }
        prev_row_min = row_min;
    }
    let d = h[idx(n + 1, m + 1)];
    (d <= max).then_some(d)
}

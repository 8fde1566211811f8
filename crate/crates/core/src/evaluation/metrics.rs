//! QA metrics over answer-normalized tokens.

use std::collections::HashMap;

use crate::text::{answer_tokens, contains_lexical, normalize_answer};

/// Lowercase, strip punctuation, drop articles, collapse whitespace.
///
/// ```
/// use rag_selftrain::evaluation::normalize;
/// assert_eq!(normalize("The Cat!"), "cat");
/// assert_eq!(normalize(""), "");
/// ```
pub fn normalize(text: &str) -> String {
    normalize_answer(text)
}

/// 1.0 iff the normalized forms are equal.
pub fn exact_match(pred: &str, gold: &str) -> f64 {
    if normalize(pred) == normalize(gold) {
        1.0
    } else {
        0.0
    }
}

fn f_measure(overlap: usize, pred_len: usize, gold_len: usize, beta: f64) -> f64 {
    match (pred_len, gold_len) {
        (0, 0) => return 1.0,
        (0, _) | (_, 0) => return 0.0,
        _ => {}
    }
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / pred_len as f64;
    let r = overlap as f64 / gold_len as f64;
    let b2 = beta * beta;
    (1.0 + b2) * p * r / (r + b2 * p)
}

/// Token-overlap F1 with multiset counting.
///
/// ```
/// use rag_selftrain::evaluation::token_f1;
/// assert!((token_f1("the cat sat", "cat sat down") - 0.8).abs() < 1e-12);
/// ```
pub fn token_f1(pred: &str, gold: &str) -> f64 {
    let p = answer_tokens(pred);
    let g = answer_tokens(gold);
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &g {
        *counts.entry(t).or_default() += 1;
    }
    let mut overlap = 0;
    for t in &p {
        if let Some(c) = counts.get_mut(t.as_str()).filter(|c| **c > 0) {
            *c -= 1;
            overlap += 1;
        }
    }
    f_measure(overlap, p.len(), g.len(), 1.0)
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if b.len() <= 64 {
        lcs_len_bits(a, b)
    } else {
        lcs_len_dp(a, b)
    }
}

/// Bit-parallel LCS (Hyyrö's form of Allison-Dix): bit `j` of `v` is cleared
/// once row `j` of the DP table has stepped up, so the LCS is the count of
/// cleared bits.
fn lcs_len_bits<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    debug_assert!(b.len() <= 64);
    let mut v = u64::MAX;
    for x in a {
        let matches = b
            .iter()
            .enumerate()
            .fold(0u64, |m, (j, y)| m | u64::from(x == y) << j);
        let u = v & matches;
        v = v.wrapping_add(u) | (v - u);
    }
    let low = if b.len() == 64 {
        u64::MAX
    } else {
        (1u64 << b.len()) - 1
    };
    (!v & low).count_ones() as usize
}

fn lcs_len_dp<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row = vec![0usize; b.len()];
    for x in a {
        let (mut diag, mut left) = (0, 0);
        for (y, cell) in b.iter().zip(row.iter_mut()) {
            let up = *cell;
            left = if x == y { diag + 1 } else { up.max(left) };
            *cell = left;
            diag = up;
        }
    }
    row.last().copied().unwrap_or(0)
}

/// Rouge-L F-measure over already-tokenized sequences.
///
/// ```
/// use rag_selftrain::evaluation::rouge_l_tokens;
/// let f = rouge_l_tokens(&["a", "b", "c", "d"], &["a", "c", "d"], 1.0);
/// assert!((f - 6.0 / 7.0).abs() < 1e-12);
/// ```
pub fn rouge_l_tokens<T: PartialEq>(pred: &[T], gold: &[T], beta: f64) -> f64 {
    f_measure(lcs_len(pred, gold), pred.len(), gold.len(), beta)
}

/// Rouge-L F-measure on answer-normalized tokens, recall weighted by `beta`.
pub fn rouge_l_beta(pred: &str, gold: &str, beta: f64) -> f64 {
    rouge_l_tokens(&answer_tokens(pred), &answer_tokens(gold), beta)
}

/// Rouge-L with the balanced F (beta = 1). Articles are dropped before the
/// LCS, so `"a b c d"` against `"a c d"` compares `b c d` with `c d`.
///
/// ```
/// use rag_selftrain::evaluation::rouge_l;
/// assert!((rouge_l("w x y z", "w y z") - 6.0 / 7.0).abs() < 1e-12);
/// assert!((rouge_l("a b c d", "a c d") - 0.8).abs() < 1e-12);
/// ```
pub fn rouge_l(pred: &str, gold: &str) -> f64 {
    rouge_l_beta(pred, gold, 1.0)
}

/// Pick a choice letter out of a free-form prediction.
///
/// The first whitespace token that is a bare capital `A`–`D` (punctuation
/// around it ignored) wins. Failing that, if exactly one option's text occurs
/// in the prediction, that option's letter.
///
/// ```
/// use rag_selftrain::evaluation::extract_choice;
/// let opts = ["red", "green", "blue", "black"];
/// assert_eq!(extract_choice("The answer is C.", &opts), Some('C'));
/// assert_eq!(extract_choice("surely green", &opts), Some('B'));
/// assert_eq!(extract_choice("no idea", &opts), None);
/// ```
pub fn extract_choice<S: AsRef<str>>(pred: &str, options: &[S]) -> Option<char> {
    let letters = &['A', 'B', 'C', 'D'][..options.len().min(4)];
    for tok in pred.split_whitespace() {
        let core = tok.trim_matches(|c: char| !c.is_alphanumeric());
        let mut chars = core.chars();
        if let (Some(c), None) = (chars.next(), chars.next()) {
            if letters.contains(&c) {
                return Some(c);
            }
        }
    }
    let mut hits = options
        .iter()
        .zip(letters)
        .filter(|(o, _)| !answer_tokens(o.as_ref()).is_empty() && contains_answer(pred, o.as_ref()))
        .map(|(_, &l)| l);
    match (hits.next(), hits.next()) {
        (Some(l), None) => Some(l),
        _ => None,
    }
}

fn contains_answer(haystack: &str, needle: &str) -> bool {
    contains_lexical(&normalize(haystack), &normalize(needle))
}

/// First standalone yes/no in a prediction, as `"yes"` or `"no"`.
pub fn extract_yes_no(pred: &str) -> Option<&'static str> {
    answer_tokens(pred)
        .into_iter()
        .find_map(|t| match t.as_str() {
            "yes" => Some("yes"),
            "no" => Some("no"),
            _ => None,
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_lcs(a: &[u8], b: &[u8]) -> usize {
        // every subsequence of a, checked against b
        (0u32..1 << a.len())
            .filter_map(|mask| {
                let sub: Vec<u8> = (0..a.len())
                    .filter(|i| mask >> i & 1 == 1)
                    .map(|i| a[i])
                    .collect();
                let mut it = b.iter();
                sub.iter().all(|x| it.any(|y| y == x)).then_some(sub.len())
            })
            .max()
            .unwrap_or(0)
    }

    #[test]
    fn hand_values() {
        assert_eq!(exact_match("The answer", "answer"), 1.0);
        assert_eq!(exact_match("cat", "dog"), 0.0);
        assert_eq!(token_f1("", ""), 1.0);
        assert_eq!(token_f1("the", "cat"), 0.0);
        assert_eq!(token_f1("cat cat", "cat"), 2.0 / 3.0);
        assert_eq!(rouge_l("", ""), 1.0);
        assert_eq!(rouge_l("x", ""), 0.0);
    }

    #[test]
    fn beta_weights_recall() {
        // P = 1, R = 1/2
        let f2 = rouge_l_beta("x y", "x y z w", 2.0);
        assert!((f2 - 5.0 * 0.5 / (0.5 + 4.0)).abs() < 1e-12);
    }

    #[test]
    fn lcs_matches_brute_force() {
        let seqs: Vec<Vec<u8>> = (0..6u32)
            .flat_map(|len| {
                (0..3u32.pow(len))
                    .map(move |n| (0..len).map(|i| (n / 3u32.pow(i) % 3) as u8).collect())
            })
            .collect();
        for a in &seqs {
            for b in &seqs {
                assert_eq!(lcs_len(a, b), brute_lcs(a, b), "{a:?} {b:?}");
            }
        }
    }

    /// Textbook full-table DP.
    fn table_lcs(a: &[u8], b: &[u8]) -> usize {
        let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
        for i in 1..=a.len() {
            for j in 1..=b.len() {
                t[i][j] = if a[i - 1] == b[j - 1] {
                    t[i - 1][j - 1] + 1
                } else {
                    t[i - 1][j].max(t[i][j - 1])
                };
            }
        }
        t[a.len()][b.len()]
    }

    #[test]
    fn both_lcs_paths_agree_across_the_word_boundary() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..2000 {
            let alphabet = rng.random_range(1..5u8);
            let mut seq = |max| -> Vec<u8> {
                (0..rng.random_range(0..max))
                    .map(|_| rng.random_range(0..alphabet))
                    .collect()
            };
            let (a, b) = (seq(150), seq(150));
            let want = table_lcs(&a, &b);
            assert_eq!(lcs_len(&a, &b), want);
            assert_eq!(lcs_len_dp(&a, &b), want);
            if b.len() <= 64 {
                assert_eq!(lcs_len_bits(&a, &b), want);
            }
        }
        let ones = vec![1u8; 64];
        assert_eq!(lcs_len_bits(&ones, &ones), 64);
    }

    #[test]
    fn choice_extraction() {
        let opts = ["Paris", "Lyon", "Nice", "Lille"];
        assert_eq!(extract_choice("B", &opts), Some('B'));
        assert_eq!(extract_choice("(D) Lille", &opts), Some('D'));
        assert_eq!(extract_choice("Paris or Lyon", &opts), None);
        assert_eq!(extract_choice("Between AB", &opts), None);
        assert_eq!(extract_choice("D", &opts[..3]), None);
    }

    #[test]
    fn yes_no_extraction() {
        assert_eq!(extract_yes_no("Yes, it is."), Some("yes"));
        assert_eq!(extract_yes_no("I think no"), Some("no"));
        assert_eq!(extract_yes_no("nothing"), None);
    }
}

/// Largest-remainder apportionment of `total` across named ratios.
///
/// Each entry first gets `floor(ratio * total)`; the leftover units go to the
/// largest fractional remainders, ties broken by the lexicographically
/// smallest name. Ratios are rescaled by their sum first, so counts always add
/// up to `total` and each differs from `ratio * total` by less than one.
///
/// ```
/// use rag_selftrain::blending::apportion;
/// let third = 1.0 / 3.0;
/// assert_eq!(apportion(&[("a", third), ("b", third), ("c", third)], 10), [4, 3, 3]);
/// ```
pub fn apportion(entries: &[(&str, f64)], total: usize) -> Vec<usize> {
    let sum: f64 = entries.iter().map(|e| e.1).sum();
    if entries.is_empty() || sum <= 0.0 {
        return vec![0; entries.len()];
    }
    let quotas: Vec<f64> = entries.iter().map(|e| e.1 / sum * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let leftover = total.saturating_sub(assigned);

    let mut order: Vec<usize> = (0..entries.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra)
            .then_with(|| entries[a].0.cmp(entries[b].0))
    });
    for &i in order.iter().take(leftover) {
        counts[i] += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_split() {
        assert_eq!(
            apportion(&[("a", 0.5), ("b", 0.3), ("c", 0.2)], 10),
            [5, 3, 2]
        );
    }

    #[test]
    fn ties_go_to_first_name() {
        let t = 1.0 / 3.0;
        assert_eq!(apportion(&[("b", t), ("a", t), ("c", t)], 10), [3, 4, 3]);
        assert_eq!(apportion(&[("a", t), ("b", t), ("c", t)], 11), [4, 4, 3]);
    }

    #[test]
    fn zero_total() {
        assert_eq!(apportion(&[("a", 1.0)], 0), [0]);
    }

    proptest! {
        #[test]
        fn sums_and_bounds(raw in proptest::collection::vec(0.0f64..1.0, 1..12), total in 0usize..10_000) {
            let sum: f64 = raw.iter().sum();
            prop_assume!(sum > 1e-6);
            let names: Vec<String> = (0..raw.len()).map(|i| format!("e{i:02}")).collect();
            let entries: Vec<(&str, f64)> = names.iter().map(String::as_str).zip(raw.iter().map(|r| r / sum)).collect();
            let counts = apportion(&entries, total);
            prop_assert_eq!(counts.iter().sum::<usize>(), total);
            for (c, (_, r)) in counts.iter().zip(&entries) {
                prop_assert!((*c as f64 - r * total as f64).abs() < 1.0);
            }
        }
    }
}

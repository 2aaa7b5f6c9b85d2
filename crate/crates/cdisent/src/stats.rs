//! Small estimation helpers shared by dataset diagnostics and tests:
//! entropy, mutual information and Cramér's V over categorical label
//! columns, plus basic moments.

/// Joint count table of two label columns.
pub fn joint_counts(a: &[u16], b: &[u16], card_a: usize, card_b: usize) -> Vec<Vec<usize>> {
    assert_eq!(a.len(), b.len(), "label columns must align");
    let mut table = vec![vec![0usize; card_b]; card_a];
    for (&x, &y) in a.iter().zip(b) {
        table[x as usize][y as usize] += 1;
    }
    table
}

/// Shannon entropy in nats of an empirical distribution given by counts.
pub fn entropy(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let nf = n as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / nf;
            -p * p.ln()
        })
        .sum()
}

/// Plug-in mutual information in nats between two label columns.
pub fn mutual_information(a: &[u16], b: &[u16], card_a: usize, card_b: usize) -> f64 {
    let table = joint_counts(a, b, card_a, card_b);
    let n: usize = table.iter().flatten().sum();
    if n == 0 {
        return 0.0;
    }
    let nf = n as f64;
    let row: Vec<usize> = table.iter().map(|r| r.iter().sum()).collect();
    let col: Vec<usize> = (0..card_b).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    let mut mi = 0.0;
    for (i, r) in table.iter().enumerate() {
        for (j, &c) in r.iter().enumerate() {
            if c > 0 {
                let pxy = c as f64 / nf;
                let px = row[i] as f64 / nf;
                let py = col[j] as f64 / nf;
                mi += pxy * (pxy / (px * py)).ln();
            }
        }
    }
    mi.max(0.0)
}

/// Mutual information normalized by `min(H(a), H(b))`; 0 when either column
/// is constant.
pub fn normalized_mi(a: &[u16], b: &[u16], card_a: usize, card_b: usize) -> f64 {
    let table = joint_counts(a, b, card_a, card_b);
    let row: Vec<usize> = table.iter().map(|r| r.iter().sum()).collect();
    let col: Vec<usize> = (0..card_b).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    let h = entropy(&row).min(entropy(&col));
    if h < 1e-12 {
        return 0.0;
    }
    mutual_information(a, b, card_a, card_b) / h
}

/// Cramér's V association statistic between two label columns.
pub fn cramers_v(a: &[u16], b: &[u16], card_a: usize, card_b: usize) -> f64 {
    let table = joint_counts(a, b, card_a, card_b);
    let n: usize = table.iter().flatten().sum();
    if n == 0 || card_a < 2 || card_b < 2 {
        return 0.0;
    }
    let nf = n as f64;
    let row: Vec<f64> = table.iter().map(|r| r.iter().sum::<usize>() as f64).collect();
    let col: Vec<f64> = (0..card_b).map(|j| table.iter().map(|r| r[j]).sum::<usize>() as f64).collect();
    let mut chi2 = 0.0;
    for (i, r) in table.iter().enumerate() {
        for (j, &c) in r.iter().enumerate() {
            let expected = row[i] * col[j] / nf;
            if expected > 0.0 {
                let d = c as f64 - expected;
                chi2 += d * d / expected;
            }
        }
    }
    let k = (card_a.min(card_b) - 1) as f64;
    (chi2 / (nf * k)).sqrt()
}

/// Mean and (population) standard deviation of a slice.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn independent_columns_have_near_zero_mi() {
        // Perfectly balanced independent design: MI is exactly 0.
        let a: Vec<u16> = (0..100).map(|i| (i % 2) as u16).collect();
        let b: Vec<u16> = (0..100).map(|i| ((i / 2) % 2) as u16).collect();
        assert!(mutual_information(&a, &b, 2, 2) < 1e-12);
        assert!(cramers_v(&a, &b, 2, 2) < 1e-12);
    }

    #[test]
    fn identical_columns_have_full_association() {
        let a: Vec<u16> = (0..300).map(|i| (i % 3) as u16).collect();
        let v = cramers_v(&a, &a, 3, 3);
        assert!((v - 1.0).abs() < 1e-12, "V = {v}");
        let nmi = normalized_mi(&a, &a, 3, 3);
        assert!((nmi - 1.0).abs() < 1e-12, "nMI = {nmi}");
    }

    #[test]
    fn entropy_of_uniform_counts() {
        assert!((entropy(&[5, 5, 5, 5]) - (4f64).ln()).abs() < 1e-12);
        assert_eq!(entropy(&[10, 0, 0]), 0.0);
    }
}

//! Evaluation metrics.

use alloc::vec::Vec;

use crate::{Error, Result};

fn check_pair(a: usize, b: usize, op: &'static str) -> Result<()> {
    if a == 0 {
        return Err(Error::NoData(op));
    }
    if a != b {
        return Err(Error::shape(op, alloc::format!("{} vs {} values", a, b)));
    }
    Ok(())
}

/// Area under the ROC curve, i.e. the Mann-Whitney statistic
/// `P(s+ > s-) + P(s+ = s-) / 2`, computed from average ranks.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_pair(scores.len(), labels.len(), "auc")?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("auc scores".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of 1-based ranks of the positives, ties sharing their mean rank.
    // Doubled so every quantity stays an integer until the final division.
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let pos_in_group = order[i..=j].iter().filter(|&&k| labels[k]).count() as u128;
        // mean rank of the group is (i + 1 + j + 1) / 2
        rank_sum2 += pos_in_group * (i as u128 + j as u128 + 2);
        i = j + 1;
    }
    let p = n_pos as u128;
    // U = rank_sum - p(p+1)/2, doubled
    let u2 = rank_sum2 - p * (p + 1);
    Ok(u2 as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}

/// Macro-averaged AUC over tasks.
///
/// `scores` and `labels` are row-major `[n, tasks]`; `None` labels are
/// missing. Tasks without both classes are skipped. Returns the mean and the
/// number of tasks that contributed.
pub fn macro_auc(scores: &[f64], labels: &[Option<bool>], tasks: usize) -> Result<(f64, usize)> {
    check_pair(scores.len(), labels.len(), "macro_auc")?;
    if tasks == 0 || !scores.len().is_multiple_of(tasks) {
        return Err(Error::shape("macro_auc", alloc::format!("{} values, {} tasks", scores.len(), tasks)));
    }
    let mut total = 0.0;
    let mut used = 0;
    for t in 0..tasks {
        let (s, l): (Vec<f64>, Vec<bool>) = labels
            .iter()
            .enumerate()
            .skip(t)
            .step_by(tasks)
            .filter_map(|(i, l)| l.map(|l| (scores[i], l)))
            .unzip();
        match auc(&s, &l) {
            Ok(a) => {
                total += a;
                used += 1;
            }
            Err(Error::SingleClass) | Err(Error::NoData(_)) => {}
            Err(e) => return Err(e),
        }
    }
    if used == 0 {
        return Err(Error::SingleClass);
    }
    Ok((total / used as f64, used))
}

pub fn rmse(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_pair(pred.len(), target.len(), "rmse")?;
    let ss: f64 = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(libm::sqrt(ss / pred.len() as f64))
}

pub fn mae(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_pair(pred.len(), target.len(), "mae")?;
    let s: f64 = pred.iter().zip(target).map(|(p, t)| libm::fabs(p - t)).sum();
    Ok(s / pred.len() as f64)
}

/// Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x.len(), y.len(), "pearson")?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(Error::ZeroVariance("first series"));
    }
    if syy == 0.0 {
        return Err(Error::ZeroVariance("second series"));
    }
    Ok((sxy / libm::sqrt(sxx * syy)).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_edge_cases() {
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(), 1.0);
        assert_eq!(auc(&[0.5; 4], &[false, true, false, true]).unwrap(), 0.5);
        assert_eq!(auc(&[0.1, 0.2], &[true, true]), Err(Error::SingleClass));
    }

    #[test]
    fn rmse_of_three_four() {
        let r = rmse(&[3.0, -4.0], &[0.0, 0.0]).unwrap();
        assert!((r - libm::sqrt(12.5)).abs() < 1e-15);
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!(rmse(&[], &[]).is_err());
    }

    #[test]
    fn pearson_extremes() {
        let x = [1.0, 2.0, 4.0, 7.0];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&x, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert!(pearson(&x, &[1.0; 4]).is_err());
    }
}

//! Ranking metrics and per-domain evaluation.

use alloc::vec::Vec;

use crate::data::{MultiDomainDataset, Split};
use crate::error::{Error, Result};
use crate::math;
use crate::model::{self, ModelSpec};
use crate::strategy::MdrState;

const EVAL_CHUNK: usize = 4096;

/// Area under the ROC curve from average ranks; tied scores count one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidArgument("one label per score is required".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("score"));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j share their mean
        let rank = (i + 1 + j) as f64 / 2.0;
        let pos_in_run = order[i..j].iter().filter(|&&k| labels[k]).count();
        pos_rank_sum += rank * pos_in_run as f64;
        i = j;
    }
    let p = n_pos as f64;
    let n = n_neg as f64;
    Ok((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Unweighted mean.
pub fn macro_average(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::NothingToEvaluate);
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainMetric {
    pub domain_id: usize,
    pub n_pos: usize,
    pub n_neg: usize,
    /// `None` when the split of this domain is single-class or empty.
    pub auc: Option<f64>,
    /// Mean log loss; NaN for an empty split.
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub split: Split,
    pub domains: Vec<DomainMetric>,
    /// Mean AUC over the domains that have one.
    pub macro_auc: f64,
    /// Domains left out of `macro_auc`.
    pub skipped: Vec<usize>,
}

impl MetricReport {
    pub fn per_domain_auc(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.domains.iter().filter_map(|d| d.auc.map(|a| (d.domain_id, a)))
    }
}

/// Scores every row of `split` with `combine(shared, specific[i])` for its domain.
pub fn evaluate(spec: &ModelSpec, state: &MdrState, data: &MultiDomainDataset, split: Split) -> Result<MetricReport> {
    if state.num_domains() != data.num_domains() {
        return Err(Error::InvalidArgument("state and data disagree on the number of domains".into()));
    }
    let mut domains = Vec::with_capacity(data.num_domains());
    let mut skipped = Vec::new();
    let mut aucs = Vec::new();
    for (i, d) in data.domains().iter().enumerate() {
        let rows = d.rows(split);
        let params = state.domain_params(i)?;
        let mut logits = Vec::with_capacity(rows.len());
        let mut labels = Vec::with_capacity(rows.len());
        for chunk in rows.chunks(EVAL_CHUNK) {
            let batch = d.batch(chunk)?;
            logits.extend(model::logits(spec, &params, &batch)?);
            labels.extend(batch.labels().iter().map(|&y| y > 0.5));
        }
        let loss = if rows.is_empty() {
            f64::NAN
        } else {
            logits
                .iter()
                .zip(&labels)
                .map(|(&z, &y)| math::bce_with_logit(z, if y { 1.0 } else { 0.0 }))
                .sum::<f64>()
                / rows.len() as f64
        };
        let n_pos = labels.iter().filter(|&&y| y).count();
        let auc = match auc(&logits, &labels) {
            Ok(a) => Some(a),
            Err(Error::SingleClass) => None,
            Err(e) => return Err(e.in_domain(i)),
        };
        match auc {
            Some(a) => aucs.push(a),
            None => skipped.push(i),
        }
        domains.push(DomainMetric {
            domain_id: d.domain_id,
            n_pos,
            n_neg: labels.len() - n_pos,
            auc,
            loss,
        });
    }
    Ok(MetricReport {
        split,
        domains,
        macro_auc: macro_average(&aucs)?,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_examples() {
        assert_eq!(auc(&[0.9, 0.5, 0.5, 0.1], &[true, true, false, false]).unwrap(), 0.875);
        assert_eq!(auc(&[3.0, 2.0, 1.0, 0.0], &[true, true, false, false]).unwrap(), 1.0);
        assert_eq!(auc(&[0.3; 5], &[true, false, true, false, false]).unwrap(), 0.5);
        assert_eq!(auc(&[0.0, 1.0], &[true, false]).unwrap(), 0.0);
    }

    #[test]
    fn single_class_and_mismatch_are_errors() {
        assert_eq!(auc(&[0.1, 0.2], &[true, true]), Err(Error::SingleClass));
        assert!(auc(&[0.1], &[true, false]).is_err());
        assert!(auc(&[f64::NAN, 0.1], &[true, false]).is_err());
    }

    #[test]
    fn macro_average_of_two() {
        assert!((macro_average(&[0.7, 0.9]).unwrap() - 0.8).abs() < 1e-15);
        assert_eq!(macro_average(&[]), Err(Error::NothingToEvaluate));
    }
}

//! Segmentation and depth losses with analytic gradients. These are
//! standalone numerical functions; nothing in the crate optimizes them.

use crate::error::{Error, Result};

pub const DEFAULT_IGNORE_INDEX: usize = 255;
pub const DEFAULT_FOCAL_GAMMA: f64 = 2.0;
pub const DEFAULT_HUBER_DELTA: f64 = 1.0;

/// Row-major `items × num_classes` logits with one target per item.
#[derive(Debug, Clone, Copy)]
pub struct LossInput<'a> {
    pub logits: &'a [f64],
    pub num_classes: usize,
    pub targets: &'a [usize],
    /// Targets equal to this are skipped.
    pub ignore_index: usize,
}

impl<'a> LossInput<'a> {
    pub fn new(logits: &'a [f64], num_classes: usize, targets: &'a [usize]) -> Self {
        Self {
            logits,
            num_classes,
            targets,
            ignore_index: DEFAULT_IGNORE_INDEX,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.logits.len() != self.targets.len() * self.num_classes {
            return Err(Error::InvalidInput(format!(
                "{} logits do not match {} items x {} classes",
                self.logits.len(),
                self.targets.len(),
                self.num_classes
            )));
        }
        if let Some(t) = self.targets.iter().find(|&&t| t >= self.num_classes && t != self.ignore_index) {
            return Err(Error::InvalidLabel {
                label: *t,
                max: self.num_classes - 1,
            });
        }
        if !self.logits.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("non-finite logits".into()));
        }
        Ok(())
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.logits[i * self.num_classes..(i + 1) * self.num_classes]
    }

    fn valid_items(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.targets.len()).filter(|&i| self.targets[i] != self.ignore_index)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    /// Same layout as the differentiated input.
    pub gradient: Vec<f64>,
}

/// Pairwise summation, for reductions that must not depend on chunking.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if values.len() <= LEAF {
        return values.iter().sum();
    }
    let (a, b) = values.split_at(values.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

/// Mean over non-ignored items of `-(1 - p_t)^γ · ln p_t`.
pub fn focal_loss(input: &LossInput<'_>, gamma: f64) -> Result<LossOutput> {
    input.validate()?;
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(Error::InvalidInput(format!("focal gamma must be >= 0, got {gamma}")));
    }
    let nc = input.num_classes;
    let valid: Vec<usize> = input.valid_items().collect();
    if valid.is_empty() {
        return Err(Error::UndefinedLoss);
    }
    let scale = 1.0 / valid.len() as f64;
    let mut gradient = vec![0.0; input.logits.len()];
    let mut losses = Vec::with_capacity(valid.len());
    for &i in &valid {
        let t = input.targets[i];
        let logp = log_softmax(input.row(i));
        let p: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
        // 1 - p_t summed from the other classes keeps precision near p_t = 1
        let q: f64 = p.iter().enumerate().filter(|&(k, _)| k != t).map(|(_, v)| v).sum();
        let lp = logp[t];
        let mod_factor = if gamma == 0.0 { 1.0 } else { q.powf(gamma) };
        losses.push(-mod_factor * lp);
        // dL/dp_t · p_t
        let dp = if gamma == 0.0 || q == 0.0 {
            -mod_factor
        } else {
            gamma * q.powf(gamma - 1.0) * p[t] * lp - mod_factor
        };
        let g = &mut gradient[i * nc..(i + 1) * nc];
        for k in 0..nc {
            let delta = if k == t { 1.0 } else { 0.0 };
            g[k] = dp * (delta - p[k]) * scale;
        }
    }
    Ok(LossOutput {
        value: pairwise_sum(&losses) * scale,
        gradient,
    })
}

/// Mean cross-entropy over non-ignored items.
pub fn cross_entropy(input: &LossInput<'_>) -> Result<f64> {
    input.validate()?;
    let losses: Vec<f64> = input.valid_items().map(|i| -log_softmax(input.row(i))[input.targets[i]]).collect();
    if losses.is_empty() {
        return Err(Error::UndefinedLoss);
    }
    Ok(pairwise_sum(&losses) / losses.len() as f64)
}

/// Gradient of the Lovász extension of the Jaccard loss w.r.t. errors
/// sorted in decreasing order; `fg_sorted` are the matching ground-truth
/// indicators.
pub fn lovasz_grad(fg_sorted: &[bool]) -> Vec<f64> {
    let gts = fg_sorted.iter().filter(|&&f| f).count() as f64;
    let mut grad = Vec::with_capacity(fg_sorted.len());
    let mut cum_fg = 0.0;
    let mut cum_bg = 0.0;
    let mut prev = 0.0;
    for &f in fg_sorted {
        if f {
            cum_fg += 1.0;
        } else {
            cum_bg += 1.0;
        }
        let intersection = gts - cum_fg;
        let union = gts + cum_bg;
        let jaccard = 1.0 - intersection / union;
        grad.push(jaccard - prev);
        prev = jaccard;
    }
    grad
}

/// Lovász hinge of one class: `errors[i] = |fg[i] - p[i]|`.
pub fn lovasz_class(errors: &[f64], fg: &[bool]) -> f64 {
    let mut order: Vec<usize> = (0..errors.len()).collect();
    order.sort_by(|&a, &b| errors[b].total_cmp(&errors[a]));
    let fg_sorted: Vec<bool> = order.iter().map(|&i| fg[i]).collect();
    let grad = lovasz_grad(&fg_sorted);
    order.iter().zip(&grad).map(|(&i, g)| errors[i] * g).sum()
}

/// Lovász-softmax loss averaged over the classes present among the
/// non-ignored targets. Result lies in `[0, 1]`.
pub fn lovasz_softmax(input: &LossInput<'_>) -> Result<f64> {
    input.validate()?;
    let valid: Vec<usize> = input.valid_items().collect();
    if valid.is_empty() {
        return Err(Error::UndefinedLoss);
    }
    let probs: Vec<Vec<f64>> = valid
        .iter()
        .map(|&i| log_softmax(input.row(i)).into_iter().map(f64::exp).collect())
        .collect();
    let mut per_class = Vec::new();
    for k in 0..input.num_classes {
        let fg: Vec<bool> = valid.iter().map(|&i| input.targets[i] == k).collect();
        if !fg.iter().any(|&f| f) {
            continue;
        }
        let errors: Vec<f64> = fg
            .iter()
            .zip(&probs)
            .map(|(&f, p)| ((if f { 1.0 } else { 0.0 }) - p[k]).abs())
            .collect();
        per_class.push(lovasz_class(&errors, &fg));
    }
    Ok(per_class.iter().sum::<f64>() / per_class.len() as f64)
}

/// Mean Huber loss of `pred - gt` over entries whose ground truth is finite
/// and positive. Gradient entries of skipped items are 0.
pub fn huber_depth(pred: &[f64], gt: &[f64], delta: f64) -> Result<LossOutput> {
    if pred.len() != gt.len() {
        return Err(Error::InvalidInput(format!(
            "prediction has {} entries, ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::InvalidInput(format!("huber delta must be > 0, got {delta}")));
    }
    let valid: Vec<usize> = (0..gt.len()).filter(|&i| gt[i].is_finite() && gt[i] > 0.0).collect();
    if valid.is_empty() {
        return Err(Error::UndefinedLoss);
    }
    if valid.iter().any(|&i| !pred[i].is_finite()) {
        return Err(Error::InvalidInput("non-finite depth prediction".into()));
    }
    let scale = 1.0 / valid.len() as f64;
    let mut gradient = vec![0.0; pred.len()];
    let mut losses = Vec::with_capacity(valid.len());
    for &i in &valid {
        let r = pred[i] - gt[i];
        if r.abs() <= delta {
            losses.push(0.5 * r * r);
            gradient[i] = r * scale;
        } else {
            losses.push(delta * (r.abs() - 0.5 * delta));
            gradient[i] = delta * r.signum() * scale;
        }
    }
    Ok(LossOutput {
        value: pairwise_sum(&losses) * scale,
        gradient,
    })
}

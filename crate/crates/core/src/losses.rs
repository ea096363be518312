//! Training likelihoods, per-member loss averaging and predictive aggregation.
//!
//! The Gaussian training loss is `½·log σ² + (y − μ)² / 2σ²`, without the
//! `½·log 2π` constant. Evaluation NLL in [`crate::metrics`] includes it.

use crate::error::{Error, Result};
use crate::numcore::{Tape, Tensor, Var};

/// Probability floor applied inside logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

/// A scalar loss on the tape, with the penalty part kept separately for reporting.
#[derive(Clone, Copy, Debug)]
pub struct LossValue {
    pub total: Var,
    pub nll: Var,
    pub penalty: Option<Var>,
}

impl LossValue {
    pub fn value(&self, tape: &Tape) -> f64 {
        tape.scalar(self.total)
    }

    pub fn penalty_value(&self, tape: &Tape) -> f64 {
        self.penalty.map_or(0.0, |p| tape.scalar(p))
    }
}

/// Elementwise `½·logσ² + ½·(y − μ)²·exp(−logσ²)`.
pub fn gaussian_nll_terms(tape: &Tape, mu: Var, log_var: Var, y: Var) -> Result<Var> {
    let resid = tape.sub(y, mu)?;
    let sq = tape.square(resid);
    let precision = tape.exp(tape.neg(log_var));
    let quad = tape.mul(sq, precision)?;
    let sum = tape.add(log_var, quad)?;
    Ok(tape.scale(sum, 0.5))
}

/// Mean Gaussian NLL over all elements.
pub fn gaussian_nll(tape: &Tape, mu: Var, log_var: Var, y: Var) -> Result<LossValue> {
    for (v, what) in [(mu, "gaussian_nll: mean"), (log_var, "gaussian_nll: log-variance"), (y, "gaussian_nll: target")] {
        tape.check_finite(v, what)?;
    }
    let terms = gaussian_nll_terms(tape, mu, log_var, y)?;
    let nll = tape.mean(terms);
    tape.check_finite(nll, "gaussian_nll")?;
    Ok(LossValue {
        total: nll,
        nll,
        penalty: None,
    })
}

fn check_labels(labels: &[usize], classes: usize) -> Result<()> {
    if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
        return Err(Error::Data(format!(
            "label {l} at row {i} outside 0..{classes}"
        )));
    }
    Ok(())
}

/// Mean `−log max(p_true, 1e-12)` for probability rows; labels are 0-based.
pub fn categorical_nll(tape: &Tape, probs: Var, labels: &[usize]) -> Result<LossValue> {
    let (rows, classes) = tape.dims(probs);
    if labels.len() != rows {
        return Err(Error::shape("categorical_nll", &tape.shape(probs), &[labels.len()]));
    }
    check_labels(labels, classes)?;
    tape.check_finite(probs, "categorical_nll: probabilities")?;
    let picked = tape.pick(probs, labels)?;
    let floored = tape.clamp(picked, PROB_FLOOR, f64::INFINITY);
    let nll = tape.neg(tape.mean(tape.ln(floored)));
    Ok(LossValue {
        total: nll,
        nll,
        penalty: None,
    })
}

/// Per-row `−log p_true` computed from logits through a log-softmax.
pub fn categorical_nll_terms(tape: &Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let (rows, classes) = tape.dims(logits);
    if labels.len() != rows {
        return Err(Error::shape("categorical_nll", &tape.shape(logits), &[labels.len()]));
    }
    check_labels(labels, classes)?;
    let logp = tape.log_softmax(logits);
    let picked = tape.pick(logp, labels)?;
    Ok(tape.neg(picked))
}

/// Splits an `(n·K)×1` column of per-row losses into `K` member means.
pub fn member_losses(tape: &Tape, terms: Var, members: usize) -> Result<Vec<Var>> {
    let means = tape.member_mean(terms, members)?;
    (0..members).map(|k| tape.element(means, k)).collect()
}

/// Mean over members plus the sum of penalties.
pub fn ensemble_loss(tape: &Tape, members: &[Var], penalties: &[Var]) -> Result<LossValue> {
    let first = *members
        .first()
        .ok_or_else(|| Error::Contract("ensemble_loss needs at least one member loss".into()))?;
    let mut sum = first;
    for &m in &members[1..] {
        sum = tape.add(sum, m)?;
    }
    let nll = tape.scale(sum, 1.0 / members.len() as f64);
    let penalty = match penalties.split_first() {
        None => None,
        Some((&p0, rest)) => {
            let mut p = p0;
            for &q in rest {
                p = tape.add(p, q)?;
            }
            Some(p)
        }
    };
    let total = match penalty {
        Some(p) => tape.add(nll, p)?,
        None => nll,
    };
    tape.check_finite(total, "ensemble_loss")?;
    Ok(LossValue { total, nll, penalty })
}

/// Moment-matched Gaussian of an equally weighted mixture:
/// `μ* = mean(μ_k)`, `σ²* = mean(σ²_k + μ_k²) − μ*²`.
///
/// The variance is evaluated in the equivalent two-pass form
/// `mean(σ²_k) + mean((μ_k − μ*)²)`, which cannot round below the mean
/// member variance.
pub fn aggregate_gaussian(mu: &[f64], var: &[f64]) -> (f64, f64) {
    let k = mu.len() as f64;
    let mean = mu.iter().sum::<f64>() / k;
    let aleatoric = var.iter().sum::<f64>() / k;
    let epistemic = mu.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / k;
    (mean, aleatoric + epistemic)
}

/// Element-wise mean of member probability rows.
pub fn aggregate_categorical(rows: &[&[f64]]) -> Vec<f64> {
    let c = rows.first().map_or(0, |r| r.len());
    let mut out = vec![0.0; c];
    for r in rows {
        for (o, p) in out.iter_mut().zip(*r) {
            *o += p;
        }
    }
    let k = rows.len() as f64;
    out.iter_mut().for_each(|o| *o /= k);
    out
}

/// Convenience for tests and evaluation: loads a column vector as a constant.
pub fn column(tape: &Tape, values: &[f64]) -> Result<Var> {
    Ok(tape.constant(Tensor::matrix(values.len(), 1, values.to_vec())?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gnll(mu: f64, var: f64, y: f64) -> f64 {
        let t = Tape::new();
        let l = gaussian_nll(
            &t,
            column(&t, &[mu]).unwrap(),
            column(&t, &[var.ln()]).unwrap(),
            column(&t, &[y]).unwrap(),
        )
        .unwrap();
        l.value(&t)
    }

    #[test]
    fn gaussian_examples() {
        assert_eq!(gnll(1.5, 1.0, 1.5), 0.0);
        assert!((gnll(0.0, 1.0, 1.0) - 0.5).abs() < 1e-15);
        let expected = 0.5 * 4f64.ln() + 4.0 / 8.0;
        assert!((gnll(0.0, 4.0, 2.0) - expected).abs() < 1e-12);
        assert!((expected - 1.1931).abs() < 1e-4);
    }

    #[test]
    fn gaussian_rejects_non_finite() {
        let t = Tape::new();
        let r = gaussian_nll(
            &t,
            column(&t, &[f64::NAN]).unwrap(),
            column(&t, &[0.0]).unwrap(),
            column(&t, &[0.0]).unwrap(),
        );
        assert!(matches!(r, Err(Error::Numerical(_))));
    }

    fn cnll(probs: &[&[f64]], labels: &[usize]) -> Result<f64> {
        let t = Tape::new();
        let p = t.constant(Tensor::from_rows(probs).unwrap());
        Ok(categorical_nll(&t, p, labels)?.value(&t))
    }

    #[test]
    fn categorical_examples() {
        assert_eq!(cnll(&[&[0.0, 1.0]], &[1]).unwrap(), 0.0);
        assert!((cnll(&[&[0.5, 0.5]], &[0]).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!((cnll(&[&[0.25, 0.75]], &[0]).unwrap() - 4f64.ln()).abs() < 1e-15);
        assert!((cnll(&[&[0.0, 1.0]], &[0]).unwrap() - (-PROB_FLOOR.ln())).abs() < 1e-9);
        assert!(matches!(cnll(&[&[0.5, 0.5]], &[2]), Err(Error::Data(_))));
    }

    #[test]
    fn ensemble_loss_is_member_mean() {
        let t = Tape::new();
        let a = t.constant(Tensor::scalar(0.2));
        let b = t.constant(Tensor::scalar(0.4));
        assert!((ensemble_loss(&t, &[a, b], &[]).unwrap().value(&t) - 0.3).abs() < 1e-15);
        assert_eq!(ensemble_loss(&t, &[a], &[]).unwrap().value(&t), 0.2);
        let same = vec![b; 7];
        assert!((ensemble_loss(&t, &same, &[]).unwrap().value(&t) - 0.4).abs() < 1e-15);
        let p = t.constant(Tensor::scalar(1.0));
        let with_pen = ensemble_loss(&t, &[a, b], &[p, p]).unwrap();
        assert!((with_pen.value(&t) - 2.3).abs() < 1e-15);
        assert_eq!(with_pen.penalty_value(&t), 2.0);
        assert!(matches!(ensemble_loss(&t, &[], &[]), Err(Error::Contract(_))));
    }

    #[test]
    fn member_losses_split_rows_by_member() {
        let t = Tape::new();
        // n = 2 samples, K = 3 members; row i·K + k.
        let terms = column(&t, &[1.0, 2.0, 3.0, 3.0, 4.0, 5.0]).unwrap();
        let ms = member_losses(&t, terms, 3).unwrap();
        let vals: Vec<f64> = ms.iter().map(|&m| t.scalar(m)).collect();
        assert_eq!(vals, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn aggregation_examples() {
        assert_eq!(aggregate_gaussian(&[0.3], &[2.0]), (0.3, 2.0));
        let (m, v) = aggregate_gaussian(&[0.0, 2.0], &[1.0, 1.0]);
        assert_eq!((m, v), (1.0, 2.0));
        let (_, v) = aggregate_gaussian(&[0.7; 5], &[0.25; 5]);
        assert_eq!(v, 0.25);

        assert_eq!(aggregate_categorical(&[&[0.2, 0.8]]), vec![0.2, 0.8]);
        assert_eq!(aggregate_categorical(&[&[1.0, 0.0], &[0.0, 1.0]]), vec![0.5, 0.5]);
        let p = aggregate_categorical(&[&[0.6, 0.4], &[0.8, 0.2]]);
        assert!((p[0] - 0.7).abs() < 1e-15 && (p[1] - 0.3).abs() < 1e-15);
    }
}

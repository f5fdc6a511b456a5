use milpmt_core::Scalar;

use crate::NnError;

/// Temperature used for every contrastive objective.
pub const TAU: f64 = 0.07;

fn check<T: Scalar>(p: &[T], pos: &[Vec<T>], neg: &[Vec<T>]) -> Result<(), NnError> {
    if pos.is_empty() {
        return Err(NnError::NoPositives);
    }
    if let Some(bad) = pos.iter().chain(neg).find(|s| s.len() != p.len()) {
        return Err(NnError::DimMismatch(format!(
            "sample has length {}, prediction has {}",
            bad.len(),
            p.len()
        )));
    }
    Ok(())
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// For each positive `a`, the softmax over `{a} ∪ S₋` of `sᵀp / τ`, with the
/// positive first.
fn softmaxes<T: Scalar>(p: &[T], pos: &[Vec<T>], neg: &[Vec<T>], tau: T) -> Vec<(T, Vec<T>)> {
    let neg_logits: Vec<T> = neg.iter().map(|s| dot(s, p) / tau).collect();
    pos.iter()
        .map(|a| {
            let la = dot(a, p) / tau;
            let m = neg_logits.iter().copied().fold(la, T::max);
            let ea = (la - m).exp();
            let en: Vec<T> = neg_logits.iter().map(|&l| (l - m).exp()).collect();
            let z = ea + en.iter().copied().sum::<T>();
            // log of the positive's probability, computed stably
            let log_prob = (la - m) - z.ln();
            let probs = std::iter::once(ea / z).chain(en.iter().map(|&e| e / z)).collect();
            (log_prob, probs)
        })
        .collect()
}

/// `−(1/|S₊|) Σ_{a ∈ S₊} log( exp(aᵀp/τ) / Σ_{a′ ∈ S₋ ∪ {a}} exp(a′ᵀp/τ) )`.
pub fn infonce_forward<T: Scalar>(p: &[T], pos: &[Vec<T>], neg: &[Vec<T>], tau: T) -> Result<T, NnError> {
    check(p, pos, neg)?;
    let sm = softmaxes(p, pos, neg, tau);
    let total: T = sm.iter().map(|(lp, _)| *lp).sum();
    Ok((T::zero() - total) / T::from_usize_lossy(pos.len()))
}

/// Gradient of [`infonce_forward`] with respect to `p`. Inputs are assumed
/// valid.
pub fn infonce_grad<T: Scalar>(p: &[T], pos: &[Vec<T>], neg: &[Vec<T>], tau: T) -> Vec<T> {
    let mut g = vec![T::zero(); p.len()];
    let scale = T::one() / (tau * T::from_usize_lossy(pos.len()));
    for (a, (_, probs)) in pos.iter().zip(softmaxes(p, pos, neg, tau)) {
        // d(−log prob_a)/dp = (Σ_k prob_k s_k − a) / τ
        let wa = probs[0] - T::one();
        for k in 0..p.len() {
            g[k] += scale * wa * a[k];
        }
        for (s, &w) in neg.iter().zip(&probs[1..]) {
            for k in 0..p.len() {
                g[k] += scale * w * s[k];
            }
        }
    }
    g
}

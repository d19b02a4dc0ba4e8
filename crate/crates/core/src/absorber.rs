//! Bounded adversarial perturbation of the synthetic features.
//!
//! The perturbation `delta` ascends the matching distance inside an l-infinity ball of
//! radius `epsilon` and is applied only on the `top_k` entries whose distance gradient is
//! largest. GroC spends `rounds` passes per epoch on it and updates the synthetic graph
//! from the mean gradient; TimGroC reuses each epoch's single pass for both.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::condense::{Condenser, PassPerturbation, RoundRecord, UpdateTarget};
use crate::error::{Error, Result};
use crate::linalg::{entry_std, max_abs, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AbsorberConfig {
    /// Perturbation radius; defaults to `epsilon_scale * std(initial features)`.
    pub epsilon: Option<f64>,
    pub epsilon_scale: f64,
    /// Ascent step; defaults to `epsilon / rounds`.
    pub alpha: Option<f64>,
    /// Rounds per GroC epoch, and epochs per TimGroC perturbation cycle.
    pub rounds: usize,
    /// Perturbed entries; defaults to `ceil(top_k_fraction * n * d)`.
    pub top_k: Option<usize>,
    pub top_k_fraction: f64,
}

impl Default for AbsorberConfig {
    fn default() -> Self {
        Self {
            epsilon: None,
            epsilon_scale: 0.05,
            alpha: None,
            rounds: 3,
            top_k: None,
            top_k_fraction: 0.5,
        }
    }
}

/// Absorber parameters after defaults are resolved against the initial features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbsorberSettings {
    pub epsilon: f64,
    pub alpha: f64,
    pub rounds: usize,
    pub top_k: usize,
}

impl AbsorberConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::Config("absorber rounds must be at least 1".into()));
        }
        if self.epsilon.is_some_and(|e| !(e >= 0.0 && e.is_finite())) || !(self.epsilon_scale >= 0.0) {
            return Err(Error::Config("absorber epsilon must be finite and non-negative".into()));
        }
        if self.alpha.is_some_and(|a| !(a > 0.0 && a.is_finite())) {
            return Err(Error::Config("absorber alpha must be positive".into()));
        }
        if self.top_k == Some(0) || !(self.top_k_fraction > 0.0 && self.top_k_fraction <= 1.0) {
            return Err(Error::Config("absorber top_k must be at least 1 and top_k_fraction in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn resolve(&self, features: &Matrix) -> Result<AbsorberSettings> {
        self.validate()?;
        let epsilon = self.epsilon.unwrap_or(self.epsilon_scale * entry_std(features));
        let alpha = self.alpha.unwrap_or(epsilon / self.rounds as f64);
        let top_k = self
            .top_k
            .unwrap_or_else(|| ((self.top_k_fraction * features.len() as f64).ceil() as usize).max(1));
        Ok(AbsorberSettings {
            epsilon,
            alpha,
            rounds: self.rounds,
            top_k,
        })
    }
}

/// Entries i.i.d. uniform in `[-epsilon, epsilon]`.
pub fn init_perturbation(shape: (usize, usize), epsilon: f64, rng: &mut impl Rng) -> Result<Matrix> {
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidArgument(format!("epsilon must be non-negative, got {epsilon}")));
    }
    if epsilon == 0.0 {
        return Ok(Matrix::zeros(shape));
    }
    Ok(Matrix::from_shape_fn(shape, |_| rng.gen_range(-epsilon..=epsilon)))
}

/// `clamp(delta + alpha * grad, -epsilon, epsilon)`: projected ascent, no sign().
pub fn absorber_step(delta: &Matrix, grad: &Matrix, alpha: f64, epsilon: f64) -> Result<Matrix> {
    if delta.dim() != grad.dim() {
        return Err(crate::error::shape_err!("delta {:?} vs gradient {:?}", delta.dim(), grad.dim()));
    }
    if !(alpha > 0.0) || !(epsilon >= 0.0) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} must be positive, epsilon {epsilon} non-negative")));
    }
    if grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("perturbation gradient".into()));
    }
    let mut out = delta.clone();
    out.zip_mut_with(grad, |d, &g| *d = (*d + alpha * g).clamp(-epsilon, epsilon));
    Ok(out)
}

/// Binary mask of the `k` largest entries of `r`, lowest flat index first on ties.
pub fn locate_gradients(r: &Matrix, k: usize) -> Result<Matrix> {
    if k == 0 {
        return Err(Error::InvalidArgument("top-k needs k >= 1".into()));
    }
    if r.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidArgument("gradient magnitudes must be finite and non-negative".into()));
    }
    if k >= r.len() {
        return Ok(Matrix::ones(r.dim()));
    }
    let flat: Vec<f64> = r.iter().copied().collect();
    let mut order: Vec<usize> = (0..flat.len()).collect();
    order.select_nth_unstable_by(k - 1, |&a, &b| flat[b].total_cmp(&flat[a]).then(a.cmp(&b)));
    let mut mask = Matrix::zeros(r.dim());
    let cols = r.ncols();
    for &i in &order[..k] {
        mask[[i / cols, i % cols]] = 1.0;
    }
    Ok(mask)
}

/// Mean of the per-round distances.
pub fn averaged_distance(rounds: &[f64]) -> Result<f64> {
    if rounds.is_empty() {
        return Err(Error::InvalidArgument("no rounds to average".into()));
    }
    Ok(rounds.iter().sum::<f64>() / rounds.len() as f64)
}

/// Perturbation state: raw `delta`, located mask, and the round counter.
///
/// The all-ones gradient carrier is rebuilt by each pass and never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct Absorber {
    pub delta: Matrix,
    pub mask: Matrix,
    pub gamma: usize,
    pub located: bool,
}

impl Absorber {
    pub fn new(shape: (usize, usize), epsilon: f64, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            delta: init_perturbation(shape, epsilon, rng)?,
            mask: Matrix::ones(shape),
            gamma: 0,
            located: false,
        })
    }

    pub fn perturbation(&self) -> PassPerturbation<'_> {
        PassPerturbation {
            delta: &self.delta,
            mask: &self.mask,
        }
    }

    /// Ascends `delta` and relocates the mask from `|grad_carrier|`; returns the round's
    /// `(linf_delta, mask_churn)`.
    pub fn update(&mut self, settings: &AbsorberSettings, grad_delta: &Matrix, grad_carrier: &Matrix) -> Result<(f64, usize)> {
        self.delta = absorber_step(&self.delta, grad_delta, settings.alpha, settings.epsilon)?;
        let located = locate_gradients(&grad_carrier.mapv(f64::abs), settings.top_k)?;
        let churn = self.mask.iter().zip(&located).filter(|(a, b)| a != b).count();
        self.mask = located;
        self.located = true;
        Ok((max_abs(&self.delta), churn))
    }
}

/// Running mean `m_k = m_{k-1} + (g - m_{k-1}) / k`; exact when all `g` are equal.
fn running_mean(mean: &mut Option<Matrix>, g: &Matrix, k: usize) {
    match mean {
        None => *mean = Some(g.clone()),
        Some(m) => {
            let diff = g - &*m;
            m.scaled_add(1.0 / k as f64, &diff);
        }
    }
}

type EpochResult = (UpdateTarget, f64, Vec<RoundRecord>);

/// `rounds` passes on a fresh perturbation with the model held fixed, then one synthetic
/// update from the mean gradient. The perturbation is discarded afterwards.
pub(crate) fn groc_epoch(c: &mut Condenser, t: usize) -> Result<EpochResult> {
    let settings = c.settings;
    let batches = c.sample_batches();
    let shape = c.synthetic.features.dim();
    let mut absorber = Absorber::new(shape, settings.epsilon, &mut c.delta_rng)?;
    let features = c.config.updates_features(t);

    let mut distances = Vec::with_capacity(settings.rounds);
    let mut rounds = Vec::with_capacity(settings.rounds);
    let mut mean_features = None;
    let mut mean_generator: Vec<Option<Matrix>> = vec![None; 5];
    for gamma in 0..settings.rounds {
        let out = c.pass(&batches, Some(absorber.perturbation()))?;
        distances.push(out.distance);
        if features {
            running_mean(&mut mean_features, &out.grad_features, gamma + 1);
        } else {
            for (m, g) in mean_generator.iter_mut().zip(out.grad_generator.matrices()) {
                running_mean(m, g, gamma + 1);
            }
        }
        let grad_delta = out.grad_delta.as_ref().expect("perturbed pass");
        let grad_carrier = out.grad_carrier.as_ref().expect("perturbed pass");
        let (linf_delta, mask_churn) = absorber.update(&settings, grad_delta, grad_carrier)?;
        absorber.gamma = (gamma + 1) % settings.rounds;
        rounds.push(RoundRecord {
            distance: out.distance,
            linf_delta,
            mask_churn,
        });
    }

    let update = if features {
        let g = mean_features.expect("at least one round");
        let zero = c.generator.zeros_like();
        c.update_synthetic(t, &g, &zero)
    } else {
        let mut g = c.generator.zeros_like();
        for (dst, src) in g.matrices_mut().into_iter().zip(mean_generator) {
            *dst = src.expect("at least one round");
        }
        let zero = Matrix::zeros(shape);
        c.update_synthetic(t, &zero, &g)
    };
    c.inner_step()?;
    Ok((update, averaged_distance(&distances)?, rounds))
}

/// One shared pass: descend the synthetic side and ascend the persistent perturbation.
/// The perturbation restarts every `rounds` epochs.
pub(crate) fn timgroc_epoch(c: &mut Condenser, t: usize) -> Result<EpochResult> {
    let settings = c.settings;
    let shape = c.synthetic.features.dim();
    if c.absorber.as_ref().is_none_or(|a| a.gamma == 0) {
        c.absorber = Some(Absorber::new(shape, settings.epsilon, &mut c.delta_rng)?);
    }
    let batches = c.sample_batches();
    let mut absorber = c.absorber.take().expect("initialized above");
    let out = c.pass(&batches, Some(absorber.perturbation()))?;
    let update = c.update_synthetic(t, &out.grad_features, &out.grad_generator);
    let grad_delta = out.grad_delta.as_ref().expect("perturbed pass");
    let grad_carrier = out.grad_carrier.as_ref().expect("perturbed pass");
    let (linf_delta, mask_churn) = absorber.update(&settings, grad_delta, grad_carrier)?;
    absorber.gamma = (absorber.gamma + 1) % settings.rounds;
    c.absorber = Some(absorber);
    c.inner_step()?;
    Ok((
        update,
        out.distance,
        vec![RoundRecord {
            distance: out.distance,
            linf_delta,
            mask_churn,
        }],
    ))
}

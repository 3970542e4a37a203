//! Training objectives: classification loss, the rationale regularizers
//! (sparsity, continuity, comprehensiveness, singularity), silver-mask
//! supervision, and their weighted assembly.
//!
//! Every function records on a [`Tape`], so the mask-valued inputs may be
//! straight-through hard masks and gradients reach the soft scores.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Which comparison a comprehensiveness-style regularizer makes between the
/// selected mask and an alternative mask.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ComparisonVariant {
    /// `max(L_p - L_p' + h, 0)` over classification losses.
    LossMargin,
    /// Hinged mean per-label probability gap with margin `h`.
    #[default]
    ProbMargin,
    /// `|cos(D_M, D_M')|` over document representations.
    ReprCosine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_s: f64,
    pub lambda_c: f64,
    pub lambda_g: f64,
    pub lambda_r: f64,
    pub lambda_ns: f64,
    /// Target fraction of selected paragraphs.
    pub sparsity_target: f64,
    pub margin: f64,
    pub g_variant: ComparisonVariant,
    pub r_variant: ComparisonVariant,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_s: 0.0,
            lambda_c: 0.0,
            lambda_g: 0.0,
            lambda_r: 0.0,
            lambda_ns: 0.0,
            sparsity_target: 0.3,
            margin: 0.1,
            g_variant: ComparisonVariant::ReprCosine,
            r_variant: ComparisonVariant::ProbMargin,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_s", self.lambda_s),
            ("lambda_c", self.lambda_c),
            ("lambda_g", self.lambda_g),
            ("lambda_r", self.lambda_r),
            ("lambda_ns", self.lambda_ns),
            ("margin", self.margin),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("loss.{name} must be a nonnegative number, got {v}")));
            }
        }
        if !(self.sparsity_target > 0.0 && self.sparsity_target < 1.0) {
            return Err(Error::Config(format!(
                "loss.sparsity_target must lie in (0, 1), got {}",
                self.sparsity_target
            )));
        }
        Ok(())
    }

    /// Sets a weight by its config name (`lambda_s`, ...).
    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        let slot = match name {
            "lambda_s" => &mut self.lambda_s,
            "lambda_c" => &mut self.lambda_c,
            "lambda_g" => &mut self.lambda_g,
            "lambda_r" => &mut self.lambda_r,
            "lambda_ns" => &mut self.lambda_ns,
            other => return Err(Error::Config(format!("unknown weight `{other}`"))),
        };
        *slot = value;
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        Some(match name {
            "lambda_s" => self.lambda_s,
            "lambda_c" => self.lambda_c,
            "lambda_g" => self.lambda_g,
            "lambda_r" => self.lambda_r,
            "lambda_ns" => self.lambda_ns,
            _ => return None,
        })
    }
}

/// Summed binary cross-entropy over labels.
pub fn classification_loss(tape: &mut Tape, probs: Var, targets: &[f64]) -> Result<Var> {
    Ok(tape.binary_cross_entropy(probs, targets)?)
}

/// `|T - mean(z)|`.
pub fn sparsity_loss(tape: &mut Tape, mask: Var, target: f64) -> Var {
    let m = tape.mean(mask);
    let d = tape.affine(m, -1.0, target);
    tape.abs(d)
}

/// Mean absolute difference of neighbouring mask entries; 0 for one paragraph.
pub fn continuity_loss(tape: &mut Tape, mask: Var) -> Result<Var> {
    let n = tape.value(mask).len();
    if n < 2 {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let head = tape.slice(mask, 0, n - 1)?;
    let tail = tape.slice(mask, 1, n - 1)?;
    let diff = tape.sub(tail, head)?;
    let a = tape.abs(diff);
    Ok(tape.mean(a))
}

/// Hinge on classification losses: `max(L_p - L_p' + h, 0)`.
pub fn comprehensiveness_margin(tape: &mut Tape, loss: Var, other_loss: Var, margin: f64) -> Result<Var> {
    let d = tape.sub(loss, other_loss)?;
    let d = tape.affine(d, 1.0, margin);
    Ok(tape.relu(d))
}

/// `max((1/|A|) sum_i [y_i (q'_i - q_i + h) + (1 - y_i)(q_i - q'_i + h)], 0)`.
pub fn comprehensiveness_prob(tape: &mut Tape, probs: Var, other_probs: Var, targets: &[f64], margin: f64) -> Result<Var> {
    let n = tape.value(probs).len();
    if targets.len() != n {
        return Err(Error::MaskLength {
            got: targets.len(),
            expected: n,
        });
    }
    // y (q' - q) + (1 - y)(q - q') = (2y - 1)(q' - q)
    let signs = tape.constant(Tensor::vector(targets.iter().map(|y| 2.0 * y - 1.0).collect()));
    let gap = tape.sub(other_probs, probs)?;
    let signed = tape.mul(signs, gap)?;
    let m = tape.mean(signed);
    let m = tape.affine(m, 1.0, margin);
    Ok(tape.relu(m))
}

/// `|cos(D_M, D_M')|`, 0 when either representation is the zero vector.
pub fn comprehensiveness_repr(tape: &mut Tape, doc: Var, other_doc: Var) -> Result<Var> {
    let c = tape.cosine(doc, other_doc)?;
    Ok(tape.abs(c))
}

/// Quantities of one masked pass that the comparison variants need.
#[derive(Clone, Copy, Debug)]
pub struct MaskedPass {
    pub loss: Var,
    pub probs: Var,
    pub doc: Var,
}

/// Dispatches to the chosen comprehensiveness variant.
pub fn compare_masks(
    tape: &mut Tape,
    variant: ComparisonVariant,
    selected: &MaskedPass,
    other: &MaskedPass,
    targets: &[f64],
    margin: f64,
) -> Result<Var> {
    match variant {
        ComparisonVariant::LossMargin => comprehensiveness_margin(tape, selected.loss, other.loss, margin),
        ComparisonVariant::ProbMargin => comprehensiveness_prob(tape, selected.probs, other.probs, targets, margin),
        ComparisonVariant::ReprCosine => comprehensiveness_repr(tape, selected.doc, other.doc),
    }
}

/// Number of paragraphs a random mask selects: `round(T * N)`, at least one.
pub fn random_mask_size(n: usize, target: f64) -> usize {
    ((target * n as f64).round() as usize).clamp(1, n.max(1))
}

/// Binary mask with exactly [`random_mask_size`] ones at uniformly drawn
/// positions.
pub fn random_mask<R: Rng>(n: usize, target: f64, rng: &mut R) -> Vec<f64> {
    let k = random_mask_size(n, target);
    let mut mask = vec![0.0; n];
    for i in index::sample(rng, n, k) {
        mask[i] = 1.0;
    }
    mask
}

/// `gamma = 1 - cos(Z^r, Z)`.
pub fn singularity_gamma(tape: &mut Tape, mask: Var, random: Var) -> Result<Var> {
    let c = tape.cosine(random, mask)?;
    Ok(tape.affine(c, -1.0, 1.0))
}

/// `gamma * L_g(Z, Z^r)` where `comparison` is the chosen variant computed
/// against the random-mask pass.
pub fn singularity_loss(tape: &mut Tape, mask: Var, random: Var, comparison: Var) -> Result<Var> {
    let gamma = singularity_gamma(tape, mask, random)?;
    Ok(tape.scale_by(gamma, comparison)?)
}

/// Mean absolute error between the predicted and the silver mask.
pub fn supervision_loss(tape: &mut Tape, mask: Var, silver: Var) -> Result<Var> {
    let (a, b) = (tape.value(mask).len(), tape.value(silver).len());
    if a != b {
        return Err(Error::MaskLength { got: b, expected: a });
    }
    let d = tape.sub(mask, silver)?;
    let d = tape.abs(d);
    Ok(tape.mean(d))
}

/// Training objective selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    /// `L_p + l_s L_s + l_c L_c + l_g (L_g + L_p^c) + l_r (L_r + L_p^r)`.
    Regularized,
    /// `L_p + l_ns MAE(Z, Z^s)`.
    Supervised,
}

/// Loss terms computed for one case. `None` marks a term that was not computed.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub lp: Var,
    pub lp_complement: Option<Var>,
    pub lp_random: Option<Var>,
    pub sparsity: Option<Var>,
    pub continuity: Option<Var>,
    pub comprehensiveness: Option<Var>,
    pub singularity: Option<Var>,
    pub supervision: Option<Var>,
}

impl LossTerms {
    pub fn new(lp: Var) -> Self {
        Self {
            lp,
            lp_complement: None,
            lp_random: None,
            sparsity: None,
            continuity: None,
            comprehensiveness: None,
            singularity: None,
            supervision: None,
        }
    }
}

/// One loss term with its activity flag.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Component {
    pub value: f64,
    pub active: bool,
}

impl Component {
    fn from(tape: &Tape, v: Option<Var>, active: bool) -> Self {
        match v {
            Some(v) if active => Self {
                value: tape.scalar(v),
                active: true,
            },
            _ => Self::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub lp: Component,
    pub lp_complement: Component,
    pub lp_random: Component,
    pub sparsity: Component,
    pub continuity: Component,
    pub comprehensiveness: Component,
    pub singularity: Component,
    pub supervision: Component,
    pub total: f64,
}

pub const BREAKDOWN_COLUMNS: [&str; 9] = ["l_p", "l_p_c", "l_p_r", "l_s", "l_c", "l_g", "l_r", "l_sup", "l_total"];

impl LossBreakdown {
    fn components(&self) -> [(&'static str, Component); 8] {
        [
            ("l_p", self.lp),
            ("l_p_c", self.lp_complement),
            ("l_p_r", self.lp_random),
            ("l_s", self.sparsity),
            ("l_c", self.continuity),
            ("l_g", self.comprehensiveness),
            ("l_r", self.singularity),
            ("l_sup", self.supervision),
        ]
    }

    /// Recomputes the weighted total from the components.
    pub fn reassemble(&self, w: &LossWeights, objective: Objective) -> f64 {
        match objective {
            Objective::Supervised => self.lp.value + w.lambda_ns * self.supervision.value,
            Objective::Regularized => {
                self.lp.value
                    + w.lambda_s * self.sparsity.value
                    + w.lambda_c * self.continuity.value
                    + w.lambda_g * (self.comprehensiveness.value + self.lp_complement.value)
                    + w.lambda_r * (self.singularity.value + self.lp_random.value)
            }
        }
    }

    /// Component-wise mean over per-case breakdowns.
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        let mut out = LossBreakdown::default();
        if items.is_empty() {
            return out;
        }
        let k = items.len() as f64;
        for b in items {
            for (dst, src) in [
                (&mut out.lp, b.lp),
                (&mut out.lp_complement, b.lp_complement),
                (&mut out.lp_random, b.lp_random),
                (&mut out.sparsity, b.sparsity),
                (&mut out.continuity, b.continuity),
                (&mut out.comprehensiveness, b.comprehensiveness),
                (&mut out.singularity, b.singularity),
                (&mut out.supervision, b.supervision),
            ] {
                dst.value += src.value / k;
                dst.active |= src.active;
            }
            out.total += b.total / k;
        }
        out
    }

    /// Tab-separated header for [`LossBreakdown::log_line`].
    pub fn log_header() -> String {
        let mut cols = vec!["step"];
        cols.extend(BREAKDOWN_COLUMNS);
        cols.push("inactive");
        cols.join("\t")
    }

    /// `step, components..., total, inactive-list` separated by tabs.
    /// Inactive components are written as 0 and listed in the last column.
    pub fn log_line(&self, step: usize) -> String {
        let mut fields = vec![step.to_string()];
        let mut inactive = Vec::new();
        for (name, c) in self.components() {
            fields.push(format!("{:.10e}", c.value));
            if !c.active {
                inactive.push(name);
            }
        }
        fields.push(format!("{:.10e}", self.total));
        fields.push(if inactive.is_empty() {
            "-".to_string()
        } else {
            inactive.join(",")
        });
        fields.join("\t")
    }
}

/// Weighted total of one case's terms.
///
/// Fails when a nonzero weight needs a term that was not computed.
pub fn total_loss(tape: &mut Tape, terms: &LossTerms, w: &LossWeights, objective: Objective) -> Result<(Var, LossBreakdown)> {
    let need = |v: Option<Var>, name: &'static str| v.ok_or(Error::MissingComponent(name));
    let mut bd = LossBreakdown {
        lp: Component::from(tape, Some(terms.lp), true),
        ..LossBreakdown::default()
    };
    let mut total = terms.lp;
    let add_weighted = |tape: &mut Tape, total: &mut Var, weight: f64, v: Var| -> Result<()> {
        let scaled = tape.affine(v, weight, 0.0);
        *total = tape.add(*total, scaled)?;
        Ok(())
    };
    match objective {
        Objective::Supervised => {
            if w.lambda_ns > 0.0 {
                let s = need(terms.supervision, "supervision")?;
                add_weighted(tape, &mut total, w.lambda_ns, s)?;
                bd.supervision = Component::from(tape, Some(s), true);
            }
        }
        Objective::Regularized => {
            if w.lambda_s > 0.0 {
                let s = need(terms.sparsity, "sparsity")?;
                add_weighted(tape, &mut total, w.lambda_s, s)?;
                bd.sparsity = Component::from(tape, Some(s), true);
            }
            if w.lambda_c > 0.0 {
                let c = need(terms.continuity, "continuity")?;
                add_weighted(tape, &mut total, w.lambda_c, c)?;
                bd.continuity = Component::from(tape, Some(c), true);
            }
            if w.lambda_g > 0.0 {
                let g = need(terms.comprehensiveness, "comprehensiveness")?;
                let lpc = need(terms.lp_complement, "complement classification loss")?;
                let sum = tape.add(g, lpc)?;
                add_weighted(tape, &mut total, w.lambda_g, sum)?;
                bd.comprehensiveness = Component::from(tape, Some(g), true);
                bd.lp_complement = Component::from(tape, Some(lpc), true);
            }
            if w.lambda_r > 0.0 {
                let r = need(terms.singularity, "singularity")?;
                let lpr = need(terms.lp_random, "random-mask classification loss")?;
                let sum = tape.add(r, lpr)?;
                add_weighted(tape, &mut total, w.lambda_r, sum)?;
                bd.singularity = Component::from(tape, Some(r), true);
                bd.lp_random = Component::from(tape, Some(lpr), true);
            }
        }
    }
    bd.total = tape.scalar(total);
    Ok((total, bd))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vecvar(t: &mut Tape, v: &[f64]) -> Var {
        t.param(Tensor::vector(v.to_vec()))
    }

    #[test]
    fn continuity_single_paragraph_is_zero() {
        let mut t = Tape::new();
        let z = vecvar(&mut t, &[1.0]);
        let c = continuity_loss(&mut t, z).unwrap();
        assert_eq!(t.scalar(c), 0.0);
    }

    #[test]
    fn random_mask_has_exact_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let m = random_mask(10, 0.3, &mut rng);
            assert_eq!(m.iter().sum::<f64>(), 3.0);
        }
        assert_eq!(random_mask(1, 0.3, &mut rng), vec![1.0]);
        assert_eq!(random_mask(1, 0.01, &mut rng), vec![1.0]);
    }

    #[test]
    fn missing_component_is_reported() {
        let mut t = Tape::new();
        let lp = t.param(Tensor::scalar(0.7));
        let terms = LossTerms::new(lp);
        let w = LossWeights {
            lambda_g: 1e-3,
            ..LossWeights::default()
        };
        let err = total_loss(&mut t, &terms, &w, Objective::Regularized).unwrap_err();
        assert!(matches!(err, Error::MissingComponent(_)));
    }

    #[test]
    fn log_line_flags_inactive_terms() {
        let bd = LossBreakdown {
            lp: Component { value: 0.5, active: true },
            total: 0.5,
            ..LossBreakdown::default()
        };
        let line = bd.log_line(3);
        let fields: Vec<&str> = line.split('\t').collect();
        assert_eq!(fields.len(), LossBreakdown::log_header().split('\t').count());
        assert_eq!(fields[0], "3");
        assert!(fields.last().unwrap().contains("l_g"));
        assert!(!fields.last().unwrap().contains("l_p,"));
    }

    #[test]
    fn weights_validate() {
        let mut w = LossWeights::default();
        w.validate().unwrap();
        w.sparsity_target = 1.0;
        assert!(w.validate().is_err());
        let mut w = LossWeights::default();
        w.lambda_s = -0.1;
        assert!(w.validate().is_err());
        assert!(w.clone().set("lambda_x", 1.0).is_err());
    }
}

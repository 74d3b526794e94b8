//! Debiasing criteria as differentiable losses.
//!
//! Kernel criteria (MI, HSIC and their conditional forms) are the statistic
//! itself. Adversarial criteria hold scalar networks `f(R)` and `g(B)`; the
//! loss is the squared (partial) correlation of their outputs, which the
//! adversaries maximise and the classifier minimises.

use alloc::vec::Vec;

use crate::autodiff::{AdamState, Graph, Var};
use crate::kernel::{self, BandwidthRule, ConditioningBasis};
use crate::nn::{self, Classifier, Mlp, Tap};
use crate::rng::{stream, streams};
use crate::{Error, Result, Tensor};

pub const MIN_BATCH: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CriterionKind {
    UncondMI,
    CondMI,
    UncondHSIC,
    CondHSIC,
    Predictability,
    MCCOnly,
    PCOnly,
    CondMCC,
}

impl CriterionKind {
    pub const ALL: [CriterionKind; 8] = [
        CriterionKind::UncondMI,
        CriterionKind::CondMI,
        CriterionKind::UncondHSIC,
        CriterionKind::CondHSIC,
        CriterionKind::Predictability,
        CriterionKind::MCCOnly,
        CriterionKind::PCOnly,
        CriterionKind::CondMCC,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CriterionKind::UncondMI => "uncond_mi",
            CriterionKind::CondMI => "cond_mi",
            CriterionKind::UncondHSIC => "uncond_hsic",
            CriterionKind::CondHSIC => "cond_hsic",
            CriterionKind::Predictability => "predictability",
            CriterionKind::MCCOnly => "mcc_only",
            CriterionKind::PCOnly => "pc_only",
            CriterionKind::CondMCC => "cond_mcc",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    pub fn uses_f(self) -> bool {
        matches!(
            self,
            CriterionKind::Predictability | CriterionKind::MCCOnly | CriterionKind::PCOnly | CriterionKind::CondMCC
        )
    }

    pub fn uses_g(self) -> bool {
        matches!(self, CriterionKind::MCCOnly | CriterionKind::CondMCC)
    }

    pub fn is_adversarial(self) -> bool {
        self.uses_f()
    }

    pub fn is_conditional(self) -> bool {
        matches!(
            self,
            CriterionKind::CondMI | CriterionKind::CondHSIC | CriterionKind::PCOnly | CriterionKind::CondMCC
        )
    }

    pub fn default_tap(self) -> Tap {
        match self {
            CriterionKind::Predictability => Tap::ConvFeatures,
            _ => Tap::Softmax,
        }
    }
}

/// An adversary network with its own optimiser state.
#[derive(Debug, Clone)]
pub struct Adversary {
    pub net: Mlp,
    pub adam: AdamState,
}

impl Adversary {
    pub fn new(net: Mlp) -> Self {
        let adam = AdamState::new(&net.params);
        Adversary { net, adam }
    }
}

#[derive(Debug, Clone)]
pub struct DebiasCriterion {
    pub kind: CriterionKind,
    pub beta: f64,
    pub tap: Tap,
    pub bandwidth_rule: BandwidthRule,
    pub adversary_f: Option<Adversary>,
    pub adversary_g: Option<Adversary>,
}

impl DebiasCriterion {
    /// A criterion whose adversaries (if any) are initialised from dedicated
    /// streams of `seed`, so they never disturb the classifier's draws.
    pub fn new(kind: CriterionKind, beta: f64, tap: Tap, bias_dim: usize, seed: u64) -> Result<Self> {
        let adversary_f = kind
            .uses_f()
            .then(|| Adversary::new(Mlp::new(tap.width(), &mut stream(seed, streams::INIT_ADVERSARY_F))));
        let adversary_g = kind
            .uses_g()
            .then(|| Adversary::new(Mlp::new(bias_dim, &mut stream(seed, streams::INIT_ADVERSARY_G))));
        let c = DebiasCriterion {
            kind,
            beta,
            tap,
            bandwidth_rule: BandwidthRule::default(),
            adversary_f,
            adversary_g,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(alloc::format!("beta must be finite and non-negative, got {}", self.beta)));
        }
        if self.kind.uses_f() != self.adversary_f.is_some() {
            return Err(Error::Config(alloc::format!(
                "criterion {} {} an adversary f",
                self.kind.name(),
                if self.kind.uses_f() { "needs" } else { "takes no" }
            )));
        }
        if self.kind.uses_g() != self.adversary_g.is_some() {
            return Err(Error::Config(alloc::format!(
                "criterion {} {} an adversary g",
                self.kind.name(),
                if self.kind.uses_g() { "needs" } else { "takes no" }
            )));
        }
        if let Some(f) = &self.adversary_f {
            if f.net.input_dim() != self.tap.width() {
                return Err(Error::Config(alloc::format!(
                    "adversary f expects width {}, tap {} has width {}",
                    f.net.input_dim(),
                    self.tap.name(),
                    self.tap.width()
                )));
            }
        }
        Ok(())
    }
}

/// Label column `m x 1` with values 0/1/...
pub fn label_column(labels: &[usize]) -> Tensor {
    Tensor::column(labels.iter().map(|&l| l as f64).collect())
}

fn bandwidth(x: &Tensor, rule: BandwidthRule) -> Result<Option<f64>> {
    if kernel::is_constant(x) {
        return Ok(None);
    }
    kernel::bandwidth_with_rule(x, rule).map(Some)
}

fn zero(g: &mut Graph) -> Var {
    g.constant(Tensor::scalar(0.0))
}

fn conditioning(kind: CriterionKind, labels: &[usize]) -> Result<ConditioningBasis> {
    if kind.is_conditional() {
        ConditioningBasis::new(&label_column(labels))
    } else {
        Ok(ConditioningBasis::intercept(labels.len()))
    }
}

/// Squared (partial) correlation between `f(R)` and `B` or `g(B)`.
fn adversarial_objective(
    g: &mut Graph,
    kind: CriterionKind,
    f: &[Var],
    gb: Option<&[Var]>,
    r: Var,
    b: Var,
    labels: &[usize],
) -> Result<(Var, bool)> {
    let fr = Mlp::forward(g, f, r)?;
    let bside = match gb {
        Some(params) => Mlp::forward(g, params, b)?,
        None => {
            let (_, width) = g.value(b).dims2()?;
            if width != 1 {
                return Err(Error::Config(alloc::format!(
                    "criterion {} needs a scalar bias variable, got width {width}",
                    kind.name()
                )));
            }
            b
        }
    };
    let basis = conditioning(kind, labels)?;
    let (rho, degenerate) = kernel::partial_correlation_var(g, fr, bside, &basis)?;
    Ok((g.mul(rho, rho)?, degenerate))
}

fn check_batch(g: &Graph, kind: CriterionKind, r: Var, b: Var, labels: &[usize]) -> Result<usize> {
    let (m, _) = g.value(r).dims2()?;
    let (mb, _) = g.value(b).dims2()?;
    if mb != m || labels.len() != m {
        return Err(Error::ShapeMismatch {
            op: "debias_loss",
            left: g.value(r).shape().to_vec(),
            right: alloc::vec![mb, labels.len()],
        });
    }
    if m < MIN_BATCH {
        return Err(Error::TooFewSamples { got: m, min: MIN_BATCH });
    }
    if kind.is_conditional() {
        kernel::checked_strata(labels, kernel::MIN_STRATUM)?;
    }
    Ok(m)
}

/// Records the debiasing term (without `beta`) for a batch. `r` is the tapped
/// representation, `b` the bias values (`m x k`), `labels` the class labels.
/// Adversaries enter as constants.
pub fn debias_loss(g: &mut Graph, criterion: &DebiasCriterion, r: Var, b: Var, labels: &[usize]) -> Result<Var> {
    let kind = criterion.kind;
    check_batch(g, kind, r, b, labels)?;
    let rule = criterion.bandwidth_rule;
    let (rv, bv) = (g.value(r).clone(), g.value(b).clone());
    match kind {
        CriterionKind::UncondHSIC => match (bandwidth(&rv, rule)?, bandwidth(&bv, rule)?) {
            (Some(sr), Some(sb)) => kernel::hsic_var(g, r, b, sr, sb),
            _ => Ok(zero(g)),
        },
        CriterionKind::CondHSIC => match (bandwidth(&rv, rule)?, bandwidth(&bv, rule)?) {
            (Some(sr), Some(sb)) => {
                let lcol = label_column(labels);
                let sl = bandwidth(&lcol, rule)?;
                let l = g.constant(lcol);
                let m = labels.len();
                let stat = kernel::cond_hsic_var(g, r, b, l, sr, sb, sl)?;
                // Same (m-1)^-2 scale as the unconditional loss.
                Ok(g.scale(stat, 1.0 / ((m - 1) * (m - 1)) as f64))
            }
            _ => Ok(zero(g)),
        },
        CriterionKind::UncondMI => match (bandwidth(&rv, rule)?, bandwidth(&bv, rule)?) {
            (Some(sr), Some(sb)) => kernel::mutual_information_var(g, r, b, sr, sb),
            _ => Ok(zero(g)),
        },
        CriterionKind::CondMI => {
            let strata = kernel::checked_strata(labels, kernel::MIN_STRATUM)?;
            let m = labels.len() as f64;
            let mut total = zero(g);
            for (_, idx) in &strata {
                let (rs, bs) = (rv.select_rows(idx), bv.select_rows(idx));
                // A constant variable within a stratum carries no information.
                if let (Some(sr), Some(sb)) = (bandwidth(&rs, rule)?, bandwidth(&bs, rule)?) {
                    let r_l = g.select_rows(r, idx);
                    let b_l = g.select_rows(b, idx);
                    let mi = kernel::mutual_information_var(g, r_l, b_l, sr, sb)?;
                    let w = g.scale(mi, idx.len() as f64 / m);
                    total = g.add(total, w)?;
                }
            }
            Ok(total)
        }
        _ => {
            let f = criterion
                .adversary_f
                .as_ref()
                .ok_or_else(|| Error::Config(alloc::format!("criterion {} needs an adversary f", kind.name())))?;
            let fv = nn::register(g, &f.net.params, false);
            let gv = match (&criterion.adversary_g, kind.uses_g()) {
                (Some(a), true) => Some(nn::register(g, &a.net.params, false)),
                (None, true) => {
                    return Err(Error::Config(alloc::format!(
                        "criterion {} needs an adversary g",
                        kind.name()
                    )))
                }
                _ => None,
            };
            Ok(adversarial_objective(g, kind, &fv, gv.as_deref(), r, b, labels)?.0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AdversaryUpdate {
    /// The criterion has no adversary; nothing was changed.
    NotApplicable,
    /// The objective was degenerate on this batch; the step was skipped.
    Skipped,
    /// One ascent step was taken; the objective before the step.
    Stepped { objective: f64 },
}

/// One Adam ascent step for the adversaries on a detached representation.
pub fn adversary_step(
    criterion: &mut DebiasCriterion,
    r: &Tensor,
    b: &Tensor,
    labels: &[usize],
    lr_b: f64,
) -> Result<AdversaryUpdate> {
    let kind = criterion.kind;
    if !kind.is_adversarial() {
        return Ok(AdversaryUpdate::NotApplicable);
    }
    let mut g = Graph::new();
    let (rv, bv) = (g.constant(r.clone()), g.constant(b.clone()));
    check_batch(&g, kind, rv, bv, labels)?;
    let f = criterion
        .adversary_f
        .as_mut()
        .ok_or_else(|| Error::Config(alloc::format!("criterion {} needs an adversary f", kind.name())))?;
    let fv = nn::register(&mut g, &f.net.params, true);
    let gv: Option<Vec<Var>> = match (&criterion.adversary_g, kind.uses_g()) {
        (Some(a), true) => Some(nn::register(&mut g, &a.net.params, true)),
        (None, true) => {
            return Err(Error::Config(alloc::format!(
                "criterion {} needs an adversary g",
                kind.name()
            )))
        }
        _ => None,
    };
    let (obj, degenerate) = adversarial_objective(&mut g, kind, &fv, gv.as_deref(), rv, bv, labels)?;
    if degenerate {
        return Ok(AdversaryUpdate::Skipped);
    }
    let objective = g.value(obj).data()[0];
    let grads = g.backward(obj)?;
    let gf: Vec<Tensor> = fv.iter().map(|&v| grads.wrt(v)).collect();
    f.adam.ascend(&mut f.net.params, &gf, lr_b)?;
    if let (Some(gv), Some(adv)) = (gv, criterion.adversary_g.as_mut()) {
        let gg: Vec<Tensor> = gv.iter().map(|&v| grads.wrt(v)).collect();
        adv.adam.ascend(&mut adv.net.params, &gg, lr_b)?;
    }
    Ok(AdversaryUpdate::Stepped { objective })
}

/// The adversarial objective at the current adversary parameters.
pub fn adversary_objective(criterion: &DebiasCriterion, r: &Tensor, b: &Tensor, labels: &[usize]) -> Result<f64> {
    let mut g = Graph::new();
    let (rv, bv) = (g.constant(r.clone()), g.constant(b.clone()));
    let loss = debias_loss(&mut g, criterion, rv, bv, labels)?;
    Ok(g.value(loss).data()[0])
}

/// The representation a criterion sees for a batch of images.
pub fn tap_representation(model: &Classifier, images: &Tensor, tap: Tap) -> Result<Tensor> {
    Ok(model.predict(images)?.tap(tap).clone())
}

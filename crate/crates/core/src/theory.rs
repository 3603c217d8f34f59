//! Binary-label accuracy comparisons between probabilistic and
//! deterministic label mappings, checked by exhaustive grid enumeration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parallel::Workers;

pub const BOUND_TOLERANCE: f64 = 1e-12;

/// `p[s][t]`: joint probability of pretrained label `s` and downstream label `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointDistribution {
    pub p: [[f64; 2]; 2],
}

impl JointDistribution {
    pub fn new(p: [[f64; 2]; 2]) -> Result<Self> {
        let flat = p.iter().flatten();
        if flat.clone().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("joint entries must be finite and non-negative"));
        }
        let total: f64 = flat.sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("joint sums to {total}, not 1")));
        }
        Ok(Self { p })
    }

    pub fn marginal_t(&self, t: usize) -> f64 {
        self.p[0][t] + self.p[1][t]
    }

    /// `p(s | t)`, or `None` when `p(t) = 0`.
    pub fn conditional(&self, s: usize, t: usize) -> Option<f64> {
        let m = self.marginal_t(t);
        (m > 0.0).then(|| self.p[s][t] / m)
    }

    fn conditional_or_err(&self, s: usize, t: usize) -> Result<f64> {
        self.conditional(s, t).ok_or(Error::ConditionUndefined(t))
    }
}

/// A 2×2 column-stochastic mapping `omega[s][t]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryPlm {
    pub omega: [[f64; 2]; 2],
}

impl BinaryPlm {
    pub fn new(omega: [[f64; 2]; 2]) -> Result<Self> {
        for t in 0..2 {
            let col = [omega[0][t], omega[1][t]];
            if col.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::invalid("mapping entries must lie in [0, 1]"));
            }
            if (col[0] + col[1] - 1.0).abs() > 1e-12 {
                return Err(Error::invalid(format!("mapping column {t} does not sum to 1")));
            }
        }
        Ok(Self { omega })
    }

    /// Column `t` puts weight `w_t` on pretrained label 0.
    fn from_weights(w0: f64, w1: f64) -> Self {
        Self {
            omega: [[w0, w1], [1.0 - w0, 1.0 - w1]],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DlmRule {
    Identity,
    Flip,
}

impl DlmRule {
    pub const ALL: [DlmRule; 2] = [DlmRule::Identity, DlmRule::Flip];

    fn source_for(self, t: usize) -> usize {
        match self {
            DlmRule::Identity => t,
            DlmRule::Flip => 1 - t,
        }
    }
}

/// Expected accuracy of a probabilistic mapping.
pub fn acc_plm(j: &JointDistribution, m: &BinaryPlm) -> f64 {
    (0..2)
        .map(|t| match j.marginal_t(t) {
            pt if pt > 0.0 => pt * (0..2).map(|s| j.p[s][t] / pt * m.omega[s][t]).sum::<f64>(),
            _ => 0.0,
        })
        .sum()
}

/// Expected accuracy of a deterministic mapping.
pub fn acc_dlm(j: &JointDistribution, rule: DlmRule) -> f64 {
    (0..2).map(|t| j.p[rule.source_for(t)][t]).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionFlags {
    pub lemma1: bool,
    pub lemma2: bool,
    pub corollary: bool,
}

pub fn lemma_conditions(j: &JointDistribution) -> Result<ConditionFlags> {
    let c = |s, t| j.conditional_or_err(s, t);
    let (p00, p10, p01, p11) = (c(0, 0)?, c(1, 0)?, c(0, 1)?, c(1, 1)?);
    Ok(ConditionFlags {
        lemma1: p10 >= p00 && p01 >= p11,
        lemma2: p00 <= p10 && p01 <= p11,
        // a = 1 compares at t = 0, a = 0 at t = 1.
        corollary: p10 >= p00 || p01 >= p11,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub joint: [[f64; 2]; 2],
    pub omega: [[f64; 2]; 2],
    pub rule: DlmRule,
    pub acc_plm: f64,
    pub acc_dlm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub joint_steps: usize,
    pub omega_steps: usize,
    pub n_joints: usize,
    pub n_omegas: usize,
    pub lemma1_checked: usize,
    pub lemma1_violations: usize,
    pub lemma2_checked: usize,
    pub lemma2_violations: usize,
    /// Up to `max_witnesses` lemma violations of each lemma, in grid order.
    pub lemma_witnesses: Vec<LemmaWitness>,
    pub corollary_checked: usize,
    pub corollary_identity_violations: usize,
    pub corollary_flip_violations: usize,
    /// Up to `max_witnesses` corollary counterexamples, in grid order.
    pub corollary_counterexamples: Vec<Witness>,
}

impl TheoryReport {
    pub fn lemma_violations(&self) -> usize {
        self.lemma1_violations + self.lemma2_violations
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaWitness {
    pub lemma: u8,
    #[serde(flatten)]
    pub witness: Witness,
}

/// All joints with entries `k / n` and both downstream marginals positive,
/// in lexicographic order of `(p00, p01, p10)`.
pub fn joint_grid(n: usize) -> Vec<JointDistribution> {
    let step = n as f64;
    let mut out = Vec::new();
    for a in 0..=n {
        for b in 0..=n - a {
            for c in 0..=n - a - b {
                let d = n - a - b - c;
                if a + c == 0 || b + d == 0 {
                    continue;
                }
                out.push(JointDistribution {
                    p: [
                        [a as f64 / step, b as f64 / step],
                        [c as f64 / step, d as f64 / step],
                    ],
                });
            }
        }
    }
    out
}

/// All column-stochastic 2×2 mappings with entries `i / m`.
pub fn omega_grid(m: usize) -> Vec<BinaryPlm> {
    let step = m as f64;
    (0..=m)
        .flat_map(|i| (0..=m).map(move |k| BinaryPlm::from_weights(i as f64 / step, k as f64 / step)))
        .collect()
}

#[derive(Default)]
struct Tally {
    lemma1_checked: usize,
    lemma1_violations: usize,
    lemma2_checked: usize,
    lemma2_violations: usize,
    lemma_witnesses: Vec<LemmaWitness>,
    corollary_checked: usize,
    identity_violations: usize,
    flip_violations: usize,
    witnesses: Vec<Witness>,
}

fn witness(j: &JointDistribution, m: &BinaryPlm, rule: DlmRule, plm: f64) -> Witness {
    Witness {
        joint: j.p,
        omega: m.omega,
        rule,
        acc_plm: plm,
        acc_dlm: acc_dlm(j, rule),
    }
}

fn check_joint(j: &JointDistribution, omegas: &[BinaryPlm], cap: usize) -> Result<Tally> {
    let flags = lemma_conditions(j)?;
    let identity = acc_dlm(j, DlmRule::Identity);
    let flip = acc_dlm(j, DlmRule::Flip);
    let mut t = Tally::default();
    let mut lemma_kept = [0usize; 2];
    for m in omegas {
        let plm = acc_plm(j, m);
        for (lemma, holds, rule, bound) in [
            (1u8, flags.lemma1, DlmRule::Identity, identity),
            (2u8, flags.lemma2, DlmRule::Flip, flip),
        ] {
            if !holds {
                continue;
            }
            let (checked, violations) = if lemma == 1 {
                (&mut t.lemma1_checked, &mut t.lemma1_violations)
            } else {
                (&mut t.lemma2_checked, &mut t.lemma2_violations)
            };
            *checked += 1;
            if plm < bound - BOUND_TOLERANCE {
                *violations += 1;
                let kept = &mut lemma_kept[usize::from(lemma - 1)];
                if *kept < cap {
                    *kept += 1;
                    t.lemma_witnesses.push(LemmaWitness {
                        lemma,
                        witness: witness(j, m, rule, plm),
                    });
                }
            }
        }
        if flags.corollary {
            t.corollary_checked += 1;
            for (rule, bound) in [(DlmRule::Identity, identity), (DlmRule::Flip, flip)] {
                if plm < bound - BOUND_TOLERANCE {
                    match rule {
                        DlmRule::Identity => t.identity_violations += 1,
                        DlmRule::Flip => t.flip_violations += 1,
                    }
                    if t.witnesses.len() < cap {
                        t.witnesses.push(witness(j, m, rule, plm));
                    }
                }
            }
        }
    }
    Ok(t)
}

/// Exhaustively checks both lemma bounds on the grid and records corollary
/// counterexamples. Per-joint tallies are merged in grid order, so the
/// report does not depend on the worker count.
pub fn enumerate_and_check(
    joint_steps: usize,
    omega_steps: usize,
    max_witnesses: usize,
    workers: &Workers,
) -> Result<TheoryReport> {
    if joint_steps < 2 || omega_steps < 2 {
        return Err(Error::invalid("grid step counts must be at least 2"));
    }
    let joints = joint_grid(joint_steps);
    let omegas = omega_grid(omega_steps);
    let tallies = workers.map(joints.len(), |i| check_joint(&joints[i], &omegas, max_witnesses))?;

    let mut report = TheoryReport {
        joint_steps,
        omega_steps,
        n_joints: joints.len(),
        n_omegas: omegas.len(),
        lemma1_checked: 0,
        lemma1_violations: 0,
        lemma2_checked: 0,
        lemma2_violations: 0,
        lemma_witnesses: Vec::new(),
        corollary_checked: 0,
        corollary_identity_violations: 0,
        corollary_flip_violations: 0,
        corollary_counterexamples: Vec::new(),
    };
    let mut lemma_kept = [0usize; 2];
    for t in tallies {
        report.lemma1_checked += t.lemma1_checked;
        report.lemma1_violations += t.lemma1_violations;
        report.lemma2_checked += t.lemma2_checked;
        report.lemma2_violations += t.lemma2_violations;
        report.corollary_checked += t.corollary_checked;
        report.corollary_identity_violations += t.identity_violations;
        report.corollary_flip_violations += t.flip_violations;
        for w in t.lemma_witnesses {
            let kept = &mut lemma_kept[usize::from(w.lemma - 1)];
            if *kept < max_witnesses {
                *kept += 1;
                report.lemma_witnesses.push(w);
            }
        }
        let room = max_witnesses - report.corollary_counterexamples.len();
        report.corollary_counterexamples.extend(t.witnesses.into_iter().take(room));
    }
    Ok(report)
}

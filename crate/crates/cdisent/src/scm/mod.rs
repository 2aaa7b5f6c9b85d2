//! Exact discrete structural causal models with graph-surgery
//! interventions.
//!
//! Everything here works on dense probability tables in `f64`, which keeps
//! the arithmetic exact enough (1e-12 tolerances) to serve as the oracle
//! for backdoor adjustment over a label set: with the full confounder set in
//! the adjustment, `adjustment_estimate` must reproduce the interventional
//! distribution obtained by graph surgery, and `confounding_gap` measures
//! how far a given label set falls short of that.
//!
//! Sizes are capped at 8 variables with 6 states each so that exact joints
//! stay tiny and fuzz suites run in well under a second.

mod dsep;
mod random;
mod spec_io;

pub use dsep::d_separated;
pub use random::{random_scm, RandomScmSpec};
pub use spec_io::{scm_from_json, scm_to_json};

use std::collections::BTreeMap;
use thiserror::Error;

/// Hard caps on model size; exact tables stay small under these.
pub const MAX_VARS: usize = 8;
pub const MAX_STATES: usize = 6;
/// Largest joint table `joint` will materialize.
pub const MAX_JOINT_ENTRIES: usize = 1_000_000;

/// Normalization tolerance for probability tables.
pub const PROB_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ScmError {
    #[error("graph has a cycle")]
    Cyclic,
    #[error("unknown variable {0:?}")]
    UnknownVariable(String),
    #[error("value {value} out of range for variable {var:?} (cardinality {card})")]
    ValueOutOfRange { var: String, value: usize, card: usize },
    #[error("CPT row {row} of variable {var:?} sums to {sum}, expected 1")]
    BadCptRow { var: String, row: usize, sum: f64 },
    #[error("CPT of variable {var:?} has {got} rows, expected {want}")]
    BadCptShape { var: String, got: usize, want: usize },
    #[error("size cap exceeded: {0}")]
    SizeCap(String),
    #[error("confounder {0:?} has a parent among factors")]
    ConfounderWithFactorParent(String),
    #[error("edge between factor variables {0:?} and {1:?}")]
    EdgeWithinFactors(String, String),
    #[error("conditioning cell has zero probability: {0}")]
    EmptySupport(String),
    #[error("adjustment set overlaps target or treatment")]
    AdjustOverlap,
    #[error("spec parse: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, ScmError>;

/// Causal role tag carried by each variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Confounder,
    Factor,
    Other,
}

#[derive(Debug, Clone)]
pub struct Variable {
    pub name: String,
    pub card: usize,
    pub role: Role,
}

/// Discrete SCM: variables with cardinalities, DAG parent sets, and one
/// conditional probability table per variable.
///
/// CPT layout: `cpt[v]` has one row per joint parent assignment (odometer
/// order over `parents[v]`, last parent fastest) and `card(v)` entries per
/// row.
#[derive(Debug, Clone)]
pub struct DiscreteScm {
    vars: Vec<Variable>,
    parents: Vec<Vec<usize>>,
    cpts: Vec<Vec<f64>>,
    topo: Vec<usize>,
}

/// Dense probability table over a subset of variables, in odometer order
/// (last variable fastest).
#[derive(Debug, Clone)]
pub struct DistTable {
    pub vars: Vec<String>,
    pub cards: Vec<usize>,
    pub probs: Vec<f64>,
}

impl DistTable {
    fn validate(&self) -> Result<()> {
        let total: f64 = self.probs.iter().sum();
        if self.probs.iter().any(|&p| p < -PROB_TOL) || (total - 1.0).abs() > PROB_TOL {
            return Err(ScmError::BadCptRow {
                var: format!("table over {:?}", self.vars),
                row: 0,
                sum: total,
            });
        }
        Ok(())
    }

    /// Index into `probs` for a full assignment over this table's variables.
    pub fn index_of(&self, assign: &[usize]) -> usize {
        let mut idx = 0usize;
        for (a, c) in assign.iter().zip(&self.cards) {
            idx = idx * c + a;
        }
        idx
    }

    pub fn prob(&self, assign: &[usize]) -> f64 {
        self.probs[self.index_of(assign)]
    }

    /// Marginalize onto the named variables (kept in the given order).
    pub fn marginal(&self, keep: &[&str]) -> Result<DistTable> {
        let keep_idx: Vec<usize> = keep
            .iter()
            .map(|k| {
                self.vars
                    .iter()
                    .position(|v| v == k)
                    .ok_or_else(|| ScmError::UnknownVariable((*k).to_string()))
            })
            .collect::<Result<_>>()?;
        let cards: Vec<usize> = keep_idx.iter().map(|&i| self.cards[i]).collect();
        let mut probs = vec![0.0; cards.iter().product()];
        for (flat, &p) in self.probs.iter().enumerate() {
            let assign = unflatten(flat, &self.cards);
            let mut idx = 0usize;
            for (&ki, &c) in keep_idx.iter().zip(&cards) {
                idx = idx * c + assign[ki];
            }
            probs[idx] += p;
        }
        Ok(DistTable { vars: keep.iter().map(|s| s.to_string()).collect(), cards, probs })
    }

    /// Largest absolute cell difference against another table over the same
    /// variables in the same order.
    pub fn max_abs_diff(&self, other: &DistTable) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Odometer decode: flat index -> per-variable assignment.
pub(crate) fn unflatten(mut flat: usize, cards: &[usize]) -> Vec<usize> {
    let mut out = vec![0usize; cards.len()];
    for i in (0..cards.len()).rev() {
        out[i] = flat % cards[i];
        flat /= cards[i];
    }
    out
}

impl DiscreteScm {
    /// Build and validate an SCM. `parents` and `cpts` are indexed like
    /// `vars`; see the type-level comment for the CPT layout.
    pub fn new(vars: Vec<Variable>, parents: Vec<Vec<usize>>, cpts: Vec<Vec<f64>>) -> Result<Self> {
        if vars.len() > MAX_VARS {
            return Err(ScmError::SizeCap(format!("{} variables > {MAX_VARS}", vars.len())));
        }
        for v in &vars {
            if v.card < 1 || v.card > MAX_STATES {
                return Err(ScmError::SizeCap(format!(
                    "variable {:?} cardinality {} outside 1..={MAX_STATES}",
                    v.name, v.card
                )));
            }
        }
        let topo = toposort(vars.len(), &parents).ok_or(ScmError::Cyclic)?;

        for (vi, var) in vars.iter().enumerate() {
            let rows: usize = parents[vi].iter().map(|&p| vars[p].card).product();
            if cpts[vi].len() != rows * var.card {
                return Err(ScmError::BadCptShape {
                    var: var.name.clone(),
                    got: cpts[vi].len(),
                    want: rows * var.card,
                });
            }
            for r in 0..rows {
                let row = &cpts[vi][r * var.card..(r + 1) * var.card];
                let sum: f64 = row.iter().sum();
                if row.iter().any(|&p| p < -PROB_TOL) || (sum - 1.0).abs() > PROB_TOL {
                    return Err(ScmError::BadCptRow { var: var.name.clone(), row: r, sum });
                }
            }
        }

        // Role constraints: confounders are causally upstream of factors
        // and factors do not cause each other.
        for (vi, var) in vars.iter().enumerate() {
            match var.role {
                Role::Confounder => {
                    if parents[vi].iter().any(|&p| vars[p].role == Role::Factor) {
                        return Err(ScmError::ConfounderWithFactorParent(var.name.clone()));
                    }
                }
                Role::Factor => {
                    if let Some(&p) = parents[vi].iter().find(|&&p| vars[p].role == Role::Factor) {
                        return Err(ScmError::EdgeWithinFactors(
                            vars[p].name.clone(),
                            var.name.clone(),
                        ));
                    }
                }
                Role::Other => {}
            }
        }

        Ok(DiscreteScm { vars, parents, cpts, topo })
    }

    pub fn vars(&self) -> &[Variable] {
        &self.vars
    }

    pub fn parents(&self, v: usize) -> &[usize] {
        &self.parents[v]
    }

    pub fn cpt(&self, v: usize) -> &[f64] {
        &self.cpts[v]
    }

    pub fn index_of_var(&self, name: &str) -> Result<usize> {
        self.vars
            .iter()
            .position(|v| v.name == name)
            .ok_or_else(|| ScmError::UnknownVariable(name.to_string()))
    }

    pub fn confounders(&self) -> Vec<&str> {
        self.vars
            .iter()
            .filter(|v| v.role == Role::Confounder)
            .map(|v| v.name.as_str())
            .collect()
    }

    pub fn factors(&self) -> Vec<&str> {
        self.vars.iter().filter(|v| v.role == Role::Factor).map(|v| v.name.as_str()).collect()
    }

    fn cpt_prob(&self, v: usize, assign: &[usize]) -> f64 {
        let mut row = 0usize;
        for &p in &self.parents[v] {
            row = row * self.vars[p].card + assign[p];
        }
        self.cpts[v][row * self.vars[v].card + assign[v]]
    }

    /// Exact joint distribution by the chain rule over a topological order.
    pub fn joint(&self) -> Result<DistTable> {
        let cards: Vec<usize> = self.vars.iter().map(|v| v.card).collect();
        let size: usize = cards.iter().product();
        if size > MAX_JOINT_ENTRIES {
            return Err(ScmError::SizeCap(format!("joint has {size} > {MAX_JOINT_ENTRIES} cells")));
        }
        let mut probs = vec![0.0; size];
        for (flat, slot) in probs.iter_mut().enumerate() {
            let assign = unflatten(flat, &cards);
            let mut p = 1.0;
            for &v in &self.topo {
                p *= self.cpt_prob(v, &assign);
                if p == 0.0 {
                    break;
                }
            }
            *slot = p;
        }
        let table = DistTable {
            vars: self.vars.iter().map(|v| v.name.clone()).collect(),
            cards,
            probs,
        };
        table.validate()?;
        Ok(table)
    }

    /// Graph surgery: intervened variables lose their parents and get
    /// point-mass CPTs; every other CPT is untouched. Idempotent for a
    /// fixed assignment map.
    pub fn intervene(&self, assignments: &BTreeMap<String, usize>) -> Result<DiscreteScm> {
        let mut out = self.clone();
        for (name, &value) in assignments {
            let vi = self.index_of_var(name)?;
            let card = self.vars[vi].card;
            if value >= card {
                return Err(ScmError::ValueOutOfRange { var: name.clone(), value, card });
            }
            out.parents[vi] = Vec::new();
            let mut row = vec![0.0; card];
            row[value] = 1.0;
            out.cpts[vi] = row;
        }
        out.topo = toposort(out.vars.len(), &out.parents).ok_or(ScmError::Cyclic)?;
        Ok(out)
    }

    /// Exact marginal of `target` under `do(do_map)` via truncated
    /// factorization (surgery followed by the exact joint).
    pub fn interventional_dist(
        &self,
        target: &str,
        do_map: &BTreeMap<String, usize>,
    ) -> Result<DistTable> {
        let surgered = self.intervene(do_map)?;
        let joint = surgered.joint()?;
        joint.marginal(&[target])
    }
}

fn toposort(n: usize, parents: &[Vec<usize>]) -> Option<Vec<usize>> {
    let mut indeg = vec![0usize; n];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (v, ps) in parents.iter().enumerate() {
        indeg[v] = ps.len();
        for &p in ps {
            children[p].push(v);
        }
    }
    let mut stack: Vec<usize> = (0..n).filter(|&v| indeg[v] == 0).collect();
    stack.reverse(); // deterministic order: smallest index first
    let mut order = Vec::with_capacity(n);
    while let Some(v) = stack.pop() {
        order.push(v);
        for &c in &children[v] {
            indeg[c] -= 1;
            if indeg[c] == 0 {
                stack.push(c);
            }
        }
        stack.sort_unstable_by(|a, b| b.cmp(a));
    }
    (order.len() == n).then_some(order)
}

/// How `adjustment_estimate` treats conditioning cells with zero
/// probability mass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ZeroCellPolicy {
    /// Error out, naming the first empty cell.
    #[default]
    Error,
    /// Drop empty cells and renormalize the remaining label weights;
    /// skipped cells are reported in the result.
    SkipAndRenormalize,
}

/// Backdoor adjustment of `target` w.r.t. `treatment` over the label set
/// `adjust`: one probability row per treatment value.
#[derive(Debug, Clone)]
pub struct AdjustmentTable {
    pub treatment: String,
    pub target: String,
    pub treatment_card: usize,
    pub target_card: usize,
    /// `rows[t][y] = Σ_c P(target=y | treatment=t, c) P(c)`.
    pub rows: Vec<Vec<f64>>,
    /// `(treatment value, label cell)` pairs skipped under
    /// [`ZeroCellPolicy::SkipAndRenormalize`].
    pub skipped: Vec<(usize, Vec<usize>)>,
}

impl AdjustmentTable {
    pub fn row(&self, t: usize) -> DistTable {
        DistTable {
            vars: vec![self.target.clone()],
            cards: vec![self.target_card],
            probs: self.rows[t].clone(),
        }
    }
}

/// Estimate `P(target | do(treatment))` from an observational joint table
/// by adjusting over the label set `adjust`:
/// `Σ_c P(target | treatment, C=c) P(C=c)` for each treatment value.
pub fn adjustment_estimate(
    joint: &DistTable,
    target: &str,
    treatment: &str,
    adjust: &[&str],
    policy: ZeroCellPolicy,
) -> Result<AdjustmentTable> {
    if adjust.contains(&target) || adjust.contains(&treatment) {
        return Err(ScmError::AdjustOverlap);
    }
    let pos = |name: &str| -> Result<usize> {
        joint
            .vars
            .iter()
            .position(|v| v == name)
            .ok_or_else(|| ScmError::UnknownVariable(name.to_string()))
    };
    let ti = pos(treatment)?;
    let yi = pos(target)?;
    let ci: Vec<usize> = adjust.iter().map(|c| pos(c)).collect::<Result<_>>()?;
    let t_card = joint.cards[ti];
    let y_card = joint.cards[yi];
    let c_cards: Vec<usize> = ci.iter().map(|&i| joint.cards[i]).collect();
    let c_size: usize = c_cards.iter().product();

    // Accumulate P(c), P(treatment, c) and P(target, treatment, c).
    let mut p_c = vec![0.0; c_size];
    let mut p_tc = vec![0.0; t_card * c_size];
    let mut p_ytc = vec![0.0; y_card * t_card * c_size];
    for (flat, &p) in joint.probs.iter().enumerate() {
        let assign = unflatten(flat, &joint.cards);
        let mut cidx = 0usize;
        for (&i, &card) in ci.iter().zip(&c_cards) {
            cidx = cidx * card + assign[i];
        }
        p_c[cidx] += p;
        p_tc[assign[ti] * c_size + cidx] += p;
        p_ytc[(assign[yi] * t_card + assign[ti]) * c_size + cidx] += p;
    }

    let mut rows = Vec::with_capacity(t_card);
    let mut skipped = Vec::new();
    for t in 0..t_card {
        let mut usable_weight = 0.0;
        let mut contrib = vec![0.0; y_card];
        for c in 0..c_size {
            if p_c[c] <= 0.0 {
                // A label cell with zero marginal mass carries no weight.
                continue;
            }
            let denom = p_tc[t * c_size + c];
            if denom <= 0.0 {
                match policy {
                    ZeroCellPolicy::Error => {
                        return Err(ScmError::EmptySupport(format!(
                            "P({treatment}={t}, {adjust:?}={:?}) = 0",
                            unflatten(c, &c_cards)
                        )));
                    }
                    ZeroCellPolicy::SkipAndRenormalize => {
                        skipped.push((t, unflatten(c, &c_cards)));
                        continue;
                    }
                }
            }
            usable_weight += p_c[c];
            for (y, slot) in contrib.iter_mut().enumerate() {
                *slot += p_ytc[(y * t_card + t) * c_size + c] / denom * p_c[c];
            }
        }
        if usable_weight <= 0.0 {
            return Err(ScmError::EmptySupport(format!(
                "no label cell supports {treatment}={t}"
            )));
        }
        for y in contrib.iter_mut() {
            *y /= usable_weight;
        }
        rows.push(contrib);
    }

    Ok(AdjustmentTable {
        treatment: treatment.to_string(),
        target: target.to_string(),
        treatment_card: t_card,
        target_card: y_card,
        rows,
        skipped,
    })
}

/// Max over treatment and target values of the absolute difference between
/// the adjustment estimate over `adjust` and the exact interventional
/// distribution. Zero (within 1e-12) exactly when the adjustment over this
/// label set identifies the interventional distribution.
pub fn confounding_gap(
    scm: &DiscreteScm,
    target: &str,
    treatment: &str,
    adjust: &[&str],
    policy: ZeroCellPolicy,
) -> Result<f64> {
    let joint = scm.joint()?;
    let adj = adjustment_estimate(&joint, target, treatment, adjust, policy)?;
    let ti = scm.index_of_var(treatment)?;
    let mut gap = 0.0f64;
    for t in 0..scm.vars[ti].card {
        let mut do_map = BTreeMap::new();
        do_map.insert(treatment.to_string(), t);
        let exact = scm.interventional_dist(target, &do_map)?;
        gap = gap.max(adj.row(t).max_abs_diff(&exact));
    }
    Ok(gap)
}

//! JSON interchange for SCM specs: variables (name, cardinality, role),
//! edges as (parent, child) name pairs, and CPTs as nested row arrays.
//! Serialization round-trips exactly (serde_json emits shortest
//! round-trippable floats).

use serde::{Deserialize, Serialize};

use super::{DiscreteScm, Result, Role, ScmError, Variable};

#[derive(Debug, Serialize, Deserialize)]
struct VarSpec {
    name: String,
    cardinality: usize,
    role: Role,
}

#[derive(Debug, Serialize, Deserialize)]
struct ScmSpec {
    variables: Vec<VarSpec>,
    /// Directed edges `[parent, child]` by name.
    edges: Vec<[String; 2]>,
    /// One CPT per variable, rows in odometer order over its parents.
    cpts: Vec<Vec<Vec<f64>>>,
}

pub fn scm_to_json(scm: &DiscreteScm) -> String {
    let variables = scm
        .vars()
        .iter()
        .map(|v| VarSpec { name: v.name.clone(), cardinality: v.card, role: v.role })
        .collect();
    let mut edges = Vec::new();
    for (vi, v) in scm.vars().iter().enumerate() {
        for &p in scm.parents(vi) {
            edges.push([scm.vars()[p].name.clone(), v.name.clone()]);
        }
    }
    let cpts = scm
        .vars()
        .iter()
        .enumerate()
        .map(|(vi, v)| scm.cpt(vi).chunks(v.card).map(|r| r.to_vec()).collect())
        .collect();
    serde_json::to_string_pretty(&ScmSpec { variables, edges, cpts }).expect("spec serializes")
}

pub fn scm_from_json(json: &str) -> Result<DiscreteScm> {
    let spec: ScmSpec =
        serde_json::from_str(json).map_err(|e| ScmError::Parse(e.to_string()))?;
    let vars: Vec<Variable> = spec
        .variables
        .iter()
        .map(|v| Variable { name: v.name.clone(), card: v.cardinality, role: v.role })
        .collect();
    let index = |name: &str| -> Result<usize> {
        vars.iter()
            .position(|v| v.name == name)
            .ok_or_else(|| ScmError::UnknownVariable(name.to_string()))
    };
    let mut parents: Vec<Vec<usize>> = vec![Vec::new(); vars.len()];
    for [p, c] in &spec.edges {
        let ci = index(c)?;
        parents[ci].push(index(p)?);
    }
    if spec.cpts.len() != vars.len() {
        return Err(ScmError::Parse(format!(
            "{} CPTs for {} variables",
            spec.cpts.len(),
            vars.len()
        )));
    }
    let cpts = spec.cpts.into_iter().map(|rows| rows.into_iter().flatten().collect()).collect();
    DiscreteScm::new(vars, parents, cpts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scm::{random_scm, RandomScmSpec};

    #[test]
    fn json_roundtrip_is_exact() {
        let scm = random_scm(&RandomScmSpec::default(), 5).unwrap();
        let json = scm_to_json(&scm);
        let back = scm_from_json(&json).unwrap();
        for v in 0..scm.vars().len() {
            assert_eq!(scm.vars()[v].name, back.vars()[v].name);
            assert_eq!(scm.vars()[v].card, back.vars()[v].card);
            assert_eq!(scm.vars()[v].role, back.vars()[v].role);
            assert_eq!(scm.parents(v), back.parents(v));
            let bits_a: Vec<u64> = scm.cpt(v).iter().map(|x| x.to_bits()).collect();
            let bits_b: Vec<u64> = back.cpt(v).iter().map(|x| x.to_bits()).collect();
            assert_eq!(bits_a, bits_b, "CPT of variable {v} must round-trip bit-exactly");
        }
        // And the second serialization is byte-identical.
        assert_eq!(json, scm_to_json(&back));
    }

    #[test]
    fn malformed_json_reports_parse_error() {
        assert!(matches!(scm_from_json("{"), Err(ScmError::Parse(_))));
    }
}

//! d-separation by Bayes-ball reachability. Used by the do-calculus
//! rule property tests, never by estimation itself.

use super::DiscreteScm;

/// True iff `x` and `y` are d-separated given the conditioning set `given`
/// in the SCM's graph.
pub fn d_separated(scm: &DiscreteScm, x: usize, y: usize, given: &[usize]) -> bool {
    let n = scm.vars().len();
    let mut observed = vec![false; n];
    for &g in given {
        observed[g] = true;
    }
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    for v in 0..n {
        for &p in scm.parents(v) {
            children[p].push(v);
        }
    }

    // Bayes-ball: states are (node, direction) with direction = arrived
    // from child (up) or from parent (down).
    let mut visited = vec![[false; 2]; n];
    let mut stack = vec![(x, 0usize)]; // start as if arriving from a child
    while let Some((v, dir)) = stack.pop() {
        if visited[v][dir] {
            continue;
        }
        visited[v][dir] = true;
        if v == y && v != x {
            return false;
        }
        if dir == 0 {
            // Arrived from a child: pass up to parents and down to children
            // unless observed.
            if !observed[v] {
                for &p in scm.parents(v) {
                    stack.push((p, 0));
                }
                for &c in &children[v] {
                    stack.push((c, 1));
                }
            }
        } else {
            // Arrived from a parent.
            if !observed[v] {
                for &c in &children[v] {
                    stack.push((c, 1));
                }
            }
            // Collider opens when v or a descendant is observed.
            if observed[v] || has_observed_descendant(v, &children, &observed) {
                for &p in scm.parents(v) {
                    stack.push((p, 0));
                }
            }
        }
    }
    true
}

fn has_observed_descendant(v: usize, children: &[Vec<usize>], observed: &[bool]) -> bool {
    let mut seen = vec![false; children.len()];
    let mut stack = vec![v];
    while let Some(u) = stack.pop() {
        if seen[u] {
            continue;
        }
        seen[u] = true;
        if observed[u] && u != v {
            return true;
        }
        for &c in &children[u] {
            stack.push(c);
        }
    }
    observed[v]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scm::{DiscreteScm, Role, Variable};

    fn var(name: &str) -> Variable {
        Variable { name: name.to_string(), card: 2, role: Role::Other }
    }

    fn chain() -> DiscreteScm {
        // a -> b -> c
        DiscreteScm::new(
            vec![var("a"), var("b"), var("c")],
            vec![vec![], vec![0], vec![1]],
            vec![
                vec![0.5, 0.5],
                vec![0.8, 0.2, 0.3, 0.7],
                vec![0.6, 0.4, 0.1, 0.9],
            ],
        )
        .unwrap()
    }

    #[test]
    fn chain_blocked_by_middle() {
        let scm = chain();
        assert!(!d_separated(&scm, 0, 2, &[]));
        assert!(d_separated(&scm, 0, 2, &[1]));
    }

    #[test]
    fn collider_opens_when_observed() {
        // a -> c <- b
        let scm = DiscreteScm::new(
            vec![var("a"), var("b"), var("c")],
            vec![vec![], vec![], vec![0, 1]],
            vec![
                vec![0.5, 0.5],
                vec![0.5, 0.5],
                vec![0.9, 0.1, 0.4, 0.6, 0.3, 0.7, 0.2, 0.8],
            ],
        )
        .unwrap();
        assert!(d_separated(&scm, 0, 1, &[]));
        assert!(!d_separated(&scm, 0, 1, &[2]));
    }

    #[test]
    fn fork_blocked_by_root() {
        // a <- c -> b
        let scm = DiscreteScm::new(
            vec![var("c"), var("a"), var("b")],
            vec![vec![], vec![0], vec![0]],
            vec![
                vec![0.5, 0.5],
                vec![0.9, 0.1, 0.2, 0.8],
                vec![0.7, 0.3, 0.4, 0.6],
            ],
        )
        .unwrap();
        assert!(!d_separated(&scm, 1, 2, &[]));
        assert!(d_separated(&scm, 1, 2, &[0]));
    }
}

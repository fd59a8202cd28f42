//! Three-objective trade-off on a disagreement subset.
//!
//! Atoms carry three objectives over three actions (`g1_a0 .. g3_a2`) and a
//! 0/1 subset flag `S`. Where the three per-objective optimal actions
//! disagree pairwise, no single action can satisfy more than one objective,
//! so the summed optimality gaps of any policy are bounded below by the
//! subset mass times the smallest margin — and, since at least two
//! objectives lose at every such atom, by twice that.

use crate::error::{Error, Result};
use crate::measure::DiscreteMeasure;
use crate::rng::RngStream;

pub const NUM_OBJECTIVES: usize = 3;
pub const NUM_ACTIONS: usize = 3;

/// Attribute name for objective `j` (1-based) under action `a` (0-based).
pub fn objective_attr(j: usize, a: usize) -> String {
    format!("g{j}_a{a}")
}

/// Both sides of the trade-off inequality for one policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TradeOffCheck {
    /// `Σ_j (E[g_j(π^{(j)})] - E[g_j(π)])`.
    pub lhs: f64,
    /// `alpha_S · min_j m_j`.
    pub rhs: f64,
    /// The sharper composite form `k·alpha_S·min_j m_j` with `k = 2`
    /// disagreeing-losing objectives per subset atom.
    pub rhs_composite: f64,
    pub alpha_s: f64,
    pub min_margin: f64,
}

struct Instance<'a> {
    weights: &'a [f64],
    s_flag: &'a [f64],
    /// `g[j][a][atom]`.
    g: Vec<Vec<&'a [f64]>>,
    /// per-atom optimal action of each objective
    opt: Vec<Vec<usize>>,
}

fn load_instance(mu: &DiscreteMeasure) -> Result<Instance<'_>> {
    let s_flag = mu.attr("S")?;
    if s_flag.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::InvalidInstance("attribute `S` must be a 0/1 flag".into()));
    }
    let mut g = Vec::with_capacity(NUM_OBJECTIVES);
    for j in 1..=NUM_OBJECTIVES {
        let mut per_action = Vec::with_capacity(NUM_ACTIONS);
        for a in 0..NUM_ACTIONS {
            per_action.push(mu.attr(&objective_attr(j, a))?);
        }
        g.push(per_action);
    }
    let n = mu.len();
    let mut opt = vec![vec![0usize; n]; NUM_OBJECTIVES];
    for j in 0..NUM_OBJECTIVES {
        for i in 0..n {
            let mut best = 0usize;
            let mut tied = false;
            for a in 1..NUM_ACTIONS {
                if g[j][a][i] > g[j][best][i] {
                    best = a;
                    tied = false;
                } else if g[j][a][i] == g[j][best][i] {
                    tied = true;
                }
            }
            if tied && s_flag[i] > 0.5 {
                return Err(Error::InvalidInstance(format!(
                    "objective {} has tied optima on subset atom {i}",
                    j + 1
                )));
            }
            opt[j][i] = best;
        }
    }
    // pairwise disagreement on S
    for i in 0..n {
        if s_flag[i] > 0.5 {
            let (a, b, c) = (opt[0][i], opt[1][i], opt[2][i]);
            if a == b || b == c || a == c {
                return Err(Error::InvalidInstance(format!(
                    "optimal actions are not pairwise distinct on subset atom {i}"
                )));
            }
        }
    }
    Ok(Instance {
        weights: mu.weights(),
        s_flag,
        g,
        opt,
    })
}

/// Evaluate the inequality for one per-atom action assignment.
pub fn multiobjective_gap_check(mu: &DiscreteMeasure, policy: &[usize]) -> Result<TradeOffCheck> {
    let inst = load_instance(mu)?;
    let n = mu.len();
    if policy.len() != n {
        return Err(Error::invalid(format!(
            "policy assigns {} atoms, instance has {n}",
            policy.len()
        )));
    }
    if policy.iter().any(|&a| a >= NUM_ACTIONS) {
        return Err(Error::invalid("policy action out of range"));
    }

    let alpha_s: f64 = inst
        .weights
        .iter()
        .zip(inst.s_flag)
        .filter(|(_, &s)| s > 0.5)
        .map(|(&w, _)| w)
        .sum();

    // m_j: margin to the best non-optimal action, minimized over S
    let mut min_margin = f64::INFINITY;
    for j in 0..NUM_OBJECTIVES {
        let mut m_j = f64::INFINITY;
        for i in 0..n {
            if inst.s_flag[i] <= 0.5 {
                continue;
            }
            let best = inst.opt[j][i];
            let runner_up = (0..NUM_ACTIONS)
                .filter(|&a| a != best)
                .map(|a| inst.g[j][a][i])
                .fold(f64::NEG_INFINITY, f64::max);
            m_j = m_j.min(inst.g[j][best][i] - runner_up);
        }
        min_margin = min_margin.min(m_j);
    }
    if alpha_s == 0.0 {
        min_margin = 0.0; // rhs vanishes with the subset
    }

    let mut lhs = 0.0;
    for j in 0..NUM_OBJECTIVES {
        for i in 0..n {
            let gap = inst.g[j][inst.opt[j][i]][i] - inst.g[j][policy[i]][i];
            lhs += inst.weights[i] * gap;
        }
    }

    Ok(TradeOffCheck {
        lhs,
        rhs: alpha_s * min_margin,
        rhs_composite: 2.0 * alpha_s * min_margin,
        alpha_s,
        min_margin,
    })
}

/// Per-atom optimal assignment of objective `j` (1-based), itself a valid
/// policy for the check.
pub fn objective_optimal_policy(mu: &DiscreteMeasure, j: usize) -> Result<Vec<usize>> {
    if !(1..=NUM_OBJECTIVES).contains(&j) {
        return Err(Error::invalid(format!("objective index {j} out of range")));
    }
    let inst = load_instance(mu)?;
    Ok(inst.opt[j - 1].clone())
}

/// Random valid instance: on subset atoms the three optimal actions form a
/// random permutation with margins in `[0.1, 0.5]`; off the subset the
/// objectives are arbitrary (tie-free).
pub fn random_instance(atoms: usize, subset_atoms: usize, rng: &mut RngStream) -> DiscreteMeasure {
    assert!(subset_atoms <= atoms && atoms > 0);
    let raw: Vec<f64> = (0..atoms).map(|_| rng.uniform() + 0.2).collect();
    let total: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();

    let mut columns: Vec<Vec<f64>> = vec![Vec::with_capacity(atoms); NUM_OBJECTIVES * NUM_ACTIONS];
    let mut s_flag = Vec::with_capacity(atoms);
    for i in 0..atoms {
        let in_subset = i < subset_atoms;
        s_flag.push(if in_subset { 1.0 } else { 0.0 });
        // a permutation assigning each objective its optimal action
        let perm = random_permutation(rng);
        for j in 0..NUM_OBJECTIVES {
            let best = if in_subset {
                perm[j]
            } else {
                (rng.next_u64() % NUM_ACTIONS as u64) as usize
            };
            let top = 0.5 + 0.5 * rng.uniform();
            let margin = 0.1 + 0.4 * rng.uniform();
            let second = top - margin;
            for a in 0..NUM_ACTIONS {
                let v = if a == best {
                    top
                } else {
                    // strictly below the runner-up gap, no ties
                    second - 0.2 * rng.uniform() * (1.0 + a as f64 * 0.1)
                };
                columns[j * NUM_ACTIONS + a].push(v);
            }
            // runner-up exactly at margin below the top for one non-optimal action
            let runner = (best + 1) % NUM_ACTIONS;
            let col = &mut columns[j * NUM_ACTIONS + runner];
            *col.last_mut().unwrap() = second;
        }
    }

    let mut attrs: Vec<(String, Vec<f64>)> = vec![("S".to_string(), s_flag)];
    for j in 0..NUM_OBJECTIVES {
        for a in 0..NUM_ACTIONS {
            attrs.push((objective_attr(j + 1, a), columns[j * NUM_ACTIONS + a].clone()));
        }
    }
    DiscreteMeasure::new(weights, attrs).expect("constructed instance is valid")
}

fn random_permutation(rng: &mut RngStream) -> [usize; 3] {
    let mut p = [0usize, 1, 2];
    // Fisher-Yates on three elements
    for i in (1..3).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        p.swap(i, j);
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Six-atom instance with hand-set values: two subset atoms of mass 0.1
    /// each, margins all 0.5.
    fn hand_instance() -> DiscreteMeasure {
        let weights = vec![0.1, 0.1, 0.2, 0.2, 0.2, 0.2];
        let s = vec![1.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        // subset atoms: objective j optimal action = j-1 (perm identity),
        // optimal value 1.0, others 0.5 (margin 0.5)
        let mut attrs: Vec<(String, Vec<f64>)> = vec![("S".to_string(), s)];
        for j in 1..=3 {
            for a in 0..3 {
                let mut col = Vec::new();
                for atom in 0..6 {
                    let v = if atom < 2 {
                        if a == j - 1 {
                            1.0
                        } else {
                            0.5
                        }
                    } else {
                        // off-subset: action 0 optimal everywhere
                        if a == 0 {
                            0.8
                        } else {
                            0.6 - 0.1 * a as f64
                        }
                    };
                    col.push(v);
                }
                attrs.push((objective_attr(j, a), col));
            }
        }
        DiscreteMeasure::new(weights, attrs).unwrap()
    }

    #[test]
    fn pure_policy_satisfies_both_bounds() {
        let mu = hand_instance();
        // policy = objective 1's optimum everywhere
        let policy = objective_optimal_policy(&mu, 1).unwrap();
        let check = multiobjective_gap_check(&mu, &policy).unwrap();
        // alpha_S = 0.2, min margin 0.5
        assert_abs_diff_eq!(check.alpha_s, 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(check.min_margin, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(check.rhs, 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(check.rhs_composite, 0.2, epsilon = 1e-15);
        // objective 1 contributes zero; the other two carry the bound
        assert!(check.lhs >= check.rhs_composite - 1e-12);
    }

    #[test]
    fn exhaustive_pure_policies_on_six_atoms() {
        let mu = hand_instance();
        let n = mu.len();
        let total = 3usize.pow(n as u32);
        for code in 0..total {
            let mut c = code;
            let policy: Vec<usize> = (0..n)
                .map(|_| {
                    let a = c % 3;
                    c /= 3;
                    a
                })
                .collect();
            let check = multiobjective_gap_check(&mu, &policy).unwrap();
            assert!(
                check.lhs >= check.rhs - 1e-12,
                "tri bound failed for policy {policy:?}: {} < {}",
                check.lhs,
                check.rhs
            );
            assert!(
                check.lhs >= check.rhs_composite - 1e-12,
                "composite bound failed for policy {policy:?}"
            );
        }
    }

    #[test]
    fn empty_subset_trivializes_the_bound() {
        let mut rng = RngStream::seed(5);
        let mu = random_instance(5, 0, &mut rng);
        let check = multiobjective_gap_check(&mu, &[0, 0, 0, 0, 0]).unwrap();
        assert_eq!(check.rhs, 0.0);
        assert!(check.lhs >= -1e-12);
    }

    #[test]
    fn random_instances_and_policies_respect_the_bound() {
        let mut rng = RngStream::seed(6);
        for _ in 0..1000 {
            let atoms = 3 + (rng.next_u64() % 8) as usize;
            let subset = 1 + (rng.next_u64() % atoms as u64) as usize;
            let mu = random_instance(atoms, subset.min(atoms), &mut rng);
            let policy: Vec<usize> =
                (0..atoms).map(|_| (rng.next_u64() % 3) as usize).collect();
            let check = multiobjective_gap_check(&mu, &policy).unwrap();
            assert!(check.lhs >= check.rhs - 1e-12);
            assert!(check.lhs >= check.rhs_composite - 1e-12);
        }
    }

    #[test]
    fn violations_of_the_precondition_are_rejected() {
        // two objectives share an optimum on a subset atom
        let weights = vec![0.5, 0.5];
        let mut attrs: Vec<(String, Vec<f64>)> = vec![("S".to_string(), vec![1.0, 0.0])];
        for j in 1..=3 {
            for a in 0..3 {
                // all objectives prefer action 0
                let v = if a == 0 { 1.0 } else { 0.4 + 0.1 * a as f64 };
                attrs.push((objective_attr(j, a), vec![v, v]));
            }
        }
        let mu = DiscreteMeasure::new(weights, attrs).unwrap();
        assert!(matches!(
            multiobjective_gap_check(&mu, &[0, 0]),
            Err(Error::InvalidInstance(_))
        ));
    }

    #[test]
    fn policy_shape_is_validated() {
        let mut rng = RngStream::seed(7);
        let mu = random_instance(4, 2, &mut rng);
        assert!(multiobjective_gap_check(&mu, &[0, 1]).is_err());
        assert!(multiobjective_gap_check(&mu, &[0, 1, 2, 3]).is_err());
    }
}

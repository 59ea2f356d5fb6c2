//! Stationary distributions of finite discrete-time Markov chains.

use super::linalg::Lu;
use crate::error::{domain, Error, Result};

const ROW_SUM_TOL: f64 = 1e-9;

/// Stationary distribution `pi` of a row-stochastic matrix, `pi P = pi`,
/// `sum(pi) = 1`.
///
/// The chain must have exactly one closed communicating class; transient
/// states receive zero mass. The balance system `(P^T - I) pi = 0` is solved
/// by Gaussian elimination with partial pivoting after replacing its last
/// equation by the normalization, followed by one refinement step.
pub fn steady_state(p: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = p.len();
    if n == 0 {
        return Err(domain("empty transition matrix"));
    }
    for (i, row) in p.iter().enumerate() {
        if row.len() != n {
            return Err(domain(format!(
                "row {i} has length {} in a {n}-state chain",
                row.len()
            )));
        }
        if row.iter().any(|&x| !(x >= 0.0)) {
            return Err(domain(format!("row {i} has a negative or NaN entry")));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > ROW_SUM_TOL {
            return Err(domain(format!("row {i} sums to {s}")));
        }
    }
    let closed = closed_classes(p);
    if closed != 1 {
        return Err(Error::NotErgodic(closed));
    }

    let mut a = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            a[j][i] = p[i][j];
        }
        a[i][i] -= 1.0;
    }
    a[n - 1].iter_mut().for_each(|x| *x = 1.0);
    let mut b = vec![0.0; n];
    b[n - 1] = 1.0;

    let lu = Lu::factor(a.clone())?;
    let mut x = lu.solve(&b);
    // One step of iterative refinement.
    let r: Vec<f64> = (0..n)
        .map(|i| b[i] - a[i].iter().zip(&x).map(|(aij, xj)| aij * xj).sum::<f64>())
        .collect();
    let dx = lu.solve(&r);
    for (xi, d) in x.iter_mut().zip(dx) {
        *xi += d;
    }
    for xi in &mut x {
        if *xi < 0.0 {
            *xi = 0.0;
        }
    }
    let s: f64 = x.iter().sum();
    x.iter_mut().for_each(|xi| *xi /= s);
    Ok(x)
}

/// Largest `|pi P - pi|` entry.
pub fn balance_residual(p: &[Vec<f64>], pi: &[f64]) -> f64 {
    let n = p.len();
    (0..n)
        .map(|j| ((0..n).map(|i| pi[i] * p[i][j]).sum::<f64>() - pi[j]).abs())
        .fold(0.0, f64::max)
}

/// Number of closed communicating classes (strongly connected components
/// with no edge leaving them).
fn closed_classes(p: &[Vec<f64>]) -> usize {
    let adj: Vec<Vec<usize>> = p
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .filter(|(_, &x)| x > 0.0)
                .map(|(j, _)| j)
                .collect()
        })
        .collect();
    let comp = tarjan(&adj);
    let count = comp.iter().copied().max().map_or(0, |m| m + 1);
    let mut leaves = vec![true; count];
    for (i, edges) in adj.iter().enumerate() {
        for &j in edges {
            if comp[i] != comp[j] {
                leaves[comp[i]] = false;
            }
        }
    }
    leaves.into_iter().filter(|&l| l).count()
}

/// Iterative Tarjan SCC; returns the component id of each vertex.
fn tarjan(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let mut index = vec![usize::MAX; n];
    let mut low = vec![0; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut comp = vec![usize::MAX; n];
    let mut next_index = 0;
    let mut next_comp = 0;
    let mut call: Vec<(usize, usize)> = Vec::new();
    for root in 0..n {
        if index[root] != usize::MAX {
            continue;
        }
        call.push((root, 0));
        while let Some(&mut (v, ref mut edge)) = call.last_mut() {
            if *edge == 0 && index[v] == usize::MAX {
                index[v] = next_index;
                low[v] = next_index;
                next_index += 1;
                stack.push(v);
                on_stack[v] = true;
            }
            if let Some(&w) = adj[v].get(*edge) {
                *edge += 1;
                if index[w] == usize::MAX {
                    call.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
                continue;
            }
            call.pop();
            if let Some(&(parent, _)) = call.last() {
                low[parent] = low[parent].min(low[v]);
            }
            if low[v] == index[v] {
                loop {
                    let w = stack.pop().expect("scc stack");
                    on_stack[w] = false;
                    comp[w] = next_comp;
                    if w == v {
                        break;
                    }
                }
                next_comp += 1;
            }
        }
    }
    comp
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::RngStream;
    use rand::Rng;

    #[test]
    fn two_cycle_is_uniform() {
        let p = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        let pi = steady_state(&p).unwrap();
        assert_eq!(pi, vec![0.5, 0.5]);
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(matches!(
            steady_state(&[vec![0.5, 0.4], vec![0.0, 1.0]]),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            steady_state(&[vec![1.5, -0.5], vec![0.0, 1.0]]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn rejects_multiple_closed_classes() {
        let p = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.5, 0.5, 0.0],
        ];
        assert!(matches!(steady_state(&p), Err(Error::NotErgodic(2))));
    }

    #[test]
    fn transient_states_get_no_mass() {
        let p = vec![
            vec![0.2, 0.8, 0.0],
            vec![0.0, 0.3, 0.7],
            vec![0.0, 0.6, 0.4],
        ];
        let pi = steady_state(&p).unwrap();
        assert_eq!(pi[0], 0.0);
        assert!(balance_residual(&p, &pi) < 1e-15);
    }

    #[test]
    fn random_chains_agree_with_power_iteration() {
        let mut rng = RngStream::new(99, 0, 0);
        for _ in 0..20 {
            let n = 5;
            let p: Vec<Vec<f64>> = (0..n)
                .map(|_| {
                    let row: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() + 0.01).collect();
                    let s: f64 = row.iter().sum();
                    row.into_iter().map(|x| x / s).collect()
                })
                .collect();
            let pi = steady_state(&p).unwrap();
            assert!(balance_residual(&p, &pi) <= 1e-12);
            assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-14);

            let mut v = vec![1.0 / n as f64; n];
            for _ in 0..2000 {
                v = (0..n)
                    .map(|j| (0..n).map(|i| v[i] * p[i][j]).sum())
                    .collect();
            }
            for (a, b) in pi.iter().zip(&v) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

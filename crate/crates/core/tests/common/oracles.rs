//! Slow, obviously-correct reference solvers used as test oracles.

use std::collections::HashMap;

use distmatch::tensor::Tensor;

/// Minimum of `sum_i cost[i][perm[i]]` over every permutation.
pub fn brute_assignment(cost: &Tensor) -> (f64, Vec<usize>) {
    let n = cost.rows();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = (f64::INFINITY, perm.clone());
    permute(&mut perm, 0, &mut |p| {
        let v: f64 = p.iter().enumerate().map(|(i, &j)| cost.get(i, j)).sum();
        if v < best.0 {
            best = (v, p.to_vec());
        }
    });
    best
}

fn permute(p: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == p.len() {
        visit(p);
        return;
    }
    for i in k..p.len() {
        p.swap(k, i);
        permute(p, k + 1, visit);
        p.swap(k, i);
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 { a } else { gcd(b, a % b) }
}

/// Exact transport cost between uniform measures of sizes `n1` and `n2`.
///
/// Scaling masses by `L = lcm(n1, n2)` gives integer supplies `L / n1` and
/// demands `L / n2`; the transportation polytope then has integral
/// vertices, so an exhaustive search over integer couplings (row by row,
/// memoized on the remaining column capacities) finds the optimum.
pub fn uniform_transport(cost: &Tensor) -> f64 {
    let (n1, n2) = (cost.rows(), cost.cols());
    let l = n1 / gcd(n1, n2) * n2;
    let supply = l / n1;
    let caps = vec![l / n2; n2];
    let mut memo = HashMap::new();
    best_from(cost, 0, supply, caps, &mut memo) / l as f64
}

fn best_from(cost: &Tensor, row: usize, supply: usize, caps: Vec<usize>, memo: &mut HashMap<(usize, Vec<usize>), f64>) -> f64 {
    if row == cost.rows() {
        return 0.0;
    }
    if let Some(&v) = memo.get(&(row, caps.clone())) {
        return v;
    }
    let mut best = f64::INFINITY;
    let mut split = vec![0; caps.len()];
    distribute(&caps, supply, 0, &mut split, &mut |s| {
        let here: f64 = s.iter().enumerate().map(|(j, &u)| u as f64 * cost.get(row, j)).sum();
        let rest: Vec<usize> = caps.iter().zip(s).map(|(c, u)| c - u).collect();
        let v = here + best_from(cost, row + 1, supply, rest, memo);
        if v < best {
            best = v;
        }
    });
    memo.insert((row, caps), best);
    best
}

fn distribute(caps: &[usize], left: usize, j: usize, split: &mut Vec<usize>, visit: &mut impl FnMut(&[usize])) {
    if j == caps.len() {
        if left == 0 {
            visit(split);
        }
        return;
    }
    let room: usize = caps[j + 1..].iter().sum();
    let lo = left.saturating_sub(room);
    for u in lo..=caps[j].min(left) {
        split[j] = u;
        distribute(caps, left - u, j + 1, split, visit);
    }
    split[j] = 0;
}

/// Exact transport cost for arbitrary weights, by enumerating every basic
/// feasible solution: each choice of `n1 + n2 - 1` cells whose equality
/// system has full rank and a nonnegative solution.
pub fn lp_vertex_transport(a: &[f64], b: &[f64], cost: &Tensor) -> f64 {
    let (n1, n2) = (a.len(), b.len());
    let cells: Vec<(usize, usize)> = (0..n1).flat_map(|i| (0..n2).map(move |j| (i, j))).collect();
    let m = n1 + n2 - 1;
    let mut best = f64::INFINITY;
    let mut pick = Vec::with_capacity(m);
    choose(cells.len(), m, 0, &mut pick, &mut |sel| {
        // rows: n1 supply equations and the first n2 - 1 demand equations
        // (the last one is implied by total mass)
        let mut mat = vec![vec![0.0; m + 1]; m];
        for (col, &c) in sel.iter().enumerate() {
            let (i, j) = cells[c];
            mat[i][col] = 1.0;
            if j + 1 < n2 {
                mat[n1 + j][col] = 1.0;
            }
        }
        for i in 0..n1 {
            mat[i][m] = a[i];
        }
        for j in 0..n2 - 1 {
            mat[n1 + j][m] = b[j];
        }
        if let Some(x) = solve(mat) {
            if x.iter().all(|&v| v >= -1e-12) {
                let v: f64 = sel.iter().zip(&x).map(|(&c, &f)| f * cost.get(cells[c].0, cells[c].1)).sum();
                best = best.min(v);
            }
        }
    });
    best
}

fn choose(n: usize, k: usize, start: usize, pick: &mut Vec<usize>, visit: &mut impl FnMut(&[usize])) {
    if pick.len() == k {
        visit(pick);
        return;
    }
    for c in start..n {
        if n - c < k - pick.len() {
            break;
        }
        pick.push(c);
        choose(n, k, c + 1, pick, visit);
        pick.pop();
    }
}

/// Gaussian elimination with partial pivoting on an augmented square
/// system; `None` when singular.
fn solve(mut m: Vec<Vec<f64>>) -> Option<Vec<f64>> {
    let n = m.len();
    for c in 0..n {
        let p = (c..n).max_by(|&x, &y| m[x][c].abs().total_cmp(&m[y][c].abs()))?;
        if m[p][c].abs() < 1e-12 {
            return None;
        }
        m.swap(c, p);
        for r in 0..n {
            if r != c {
                let f = m[r][c] / m[c][c];
                if f != 0.0 {
                    for k in c..=n {
                        m[r][k] -= f * m[c][k];
                    }
                }
            }
        }
    }
    Some((0..n).map(|i| m[i][n] / m[i][i]).collect())
}

/// Spearman rank correlation computed from scratch (average ranks for ties).
pub fn spearman_oracle(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        v.iter()
            .map(|a| {
                let below = v.iter().filter(|b| *b < a).count() as f64;
                let equal = v.iter().filter(|b| *b == a).count() as f64;
                below + (equal + 1.0) / 2.0
            })
            .collect()
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

//! Independent reference computations used by tests.

#![allow(dead_code)]

/// Minimum-cost partial transport by enumerating every basic solution.
///
/// The problem is balanced with a zero-cost slack row or column; its basic
/// solutions are exactly the spanning trees of the complete bipartite graph
/// on rows and columns. Each tree's flow is forced, found by peeling leaves.
/// Returns `work / moved mass`.
pub fn emd_by_vertex_enumeration(p: &[f64], q: &[f64], cost: &[Vec<f64>]) -> f64 {
    let (pt, qt): (f64, f64) = (p.iter().sum(), q.iter().sum());
    let mut supply = p.to_vec();
    let mut demand = q.to_vec();
    let mut c: Vec<Vec<f64>> = cost.to_vec();
    if pt > qt {
        demand.push(pt - qt);
        for row in &mut c {
            row.push(0.0);
        }
    } else if qt > pt {
        supply.push(qt - pt);
        c.push(vec![0.0; q.len()]);
    }
    let (r, k) = (supply.len(), demand.len());
    let cells: Vec<(usize, usize)> = (0..r).flat_map(|i| (0..k).map(move |j| (i, j))).collect();
    let mut best = f64::INFINITY;
    let mut chosen = Vec::new();
    let parent: Vec<usize> = (0..r + k).collect();
    enumerate(&cells, r, 0, r + k - 1, &mut chosen, parent, &mut |tree| {
        if let Some(flow) = tree_flow(tree, &supply, &demand) {
            let w: f64 = tree.iter().zip(&flow).map(|(&(i, j), f)| f * c[i][j]).sum();
            best = best.min(w);
        }
    });
    best / pt.min(qt)
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        x = parent[x];
    }
    x
}

type Visit<'a> = dyn FnMut(&[(usize, usize)]) + 'a;

fn enumerate(
    cells: &[(usize, usize)],
    rows: usize,
    start: usize,
    need: usize,
    chosen: &mut Vec<(usize, usize)>,
    parent: Vec<usize>,
    visit: &mut Visit<'_>,
) {
    if chosen.len() == need {
        visit(chosen);
        return;
    }
    for idx in start..cells.len() {
        if cells.len() - idx < need - chosen.len() {
            break;
        }
        let (i, j) = cells[idx];
        let mut p = parent.clone();
        let (a, b) = (find(&mut p, i), find(&mut p, rows + j));
        if a == b {
            continue;
        }
        p[a] = b;
        chosen.push((i, j));
        enumerate(cells, rows, idx + 1, need, chosen, p, visit);
        chosen.pop();
    }
}

/// Flows on a spanning tree meeting supply and demand exactly, or `None`
/// if some flow would be negative.
fn tree_flow(tree: &[(usize, usize)], supply: &[f64], demand: &[f64]) -> Option<Vec<f64>> {
    let r = supply.len();
    let mut left: Vec<f64> = supply.iter().chain(demand).copied().collect();
    let mut flow = vec![f64::NAN; tree.len()];
    let mut open: Vec<bool> = vec![true; tree.len()];
    for _ in 0..tree.len() {
        let mut degree = vec![0usize; left.len()];
        for (e, &(i, j)) in tree.iter().enumerate() {
            if open[e] {
                degree[i] += 1;
                degree[r + j] += 1;
            }
        }
        let (e, leaf) =
            tree.iter()
                .enumerate()
                .filter(|(e, _)| open[*e])
                .find_map(|(e, &(i, j))| {
                    if degree[i] == 1 {
                        Some((e, i))
                    } else if degree[r + j] == 1 {
                        Some((e, r + j))
                    } else {
                        None
                    }
                })?;
        let (i, j) = tree[e];
        let other = if leaf == i { r + j } else { i };
        let f = left[leaf];
        flow[e] = f;
        left[leaf] = 0.0;
        left[other] -= f;
        open[e] = false;
    }
    let scale = supply
        .iter()
        .chain(demand)
        .fold(0.0f64, |m, v| m.max(v.abs()));
    flow.iter()
        .all(|&f| f >= -1e-12 * scale.max(1.0))
        .then_some(flow)
}

/// Pearson r from raw moments: `(nΣxy − ΣxΣy) / sqrt((nΣx² − (Σx)²)(nΣy² − (Σy)²))`.
pub fn pearson_raw_moments(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (sx, sy): (f64, f64) = (xs.iter().sum(), ys.iter().sum());
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let syy: f64 = ys.iter().map(|y| y * y).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

/// Pearson r as covariance over the product of standard deviations, each
/// computed with its own pass over the data.
pub fn pearson_covariance(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let cov = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum::<f64>()
        / n;
    let sx = (xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>() / n).sqrt();
    let sy = (ys.iter().map(|y| (y - my).powi(2)).sum::<f64>() / n).sqrt();
    cov / (sx * sy)
}

/// Fraction of `sample` at or below `x`, by counting.
pub fn rank_fraction(sample: &[f64], x: f64) -> f64 {
    sample.iter().filter(|&&v| v <= x).count() as f64 / sample.len() as f64
}

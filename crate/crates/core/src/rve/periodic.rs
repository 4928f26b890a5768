//! Periodic master-slave constraints of a cubic lattice.

use std::collections::VecDeque;

use super::RveModel;
use crate::error::{Error, Result};

/// Affine constraints `u_n = u_m + E (x_n - x_m)`, `theta_n = theta_m` tying
/// every boundary node to a single master node.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicConstraints {
    /// master node of every node (a node may be its own master)
    pub master: Vec<usize>,
    /// `x_n - x_m`
    pub offset: Vec<[f64; 3]>,
    /// master whose translations are fixed
    pub pinned: usize,
    pub strain: [[f64; 3]; 3],
}

impl PeriodicConstraints {
    /// Prescribed translation jump of node `n` relative to its master.
    pub fn jump(&self, n: usize) -> [f64; 3] {
        let o = self.offset[n];
        let e = &self.strain;
        [
            e[0][0] * o[0] + e[0][1] * o[1] + e[0][2] * o[2],
            e[1][0] * o[0] + e[1][1] * o[1] + e[1][2] * o[2],
            e[2][0] * o[0] + e[2][1] * o[1] + e[2][2] * o[2],
        ]
    }

    pub fn masters(&self) -> Vec<usize> {
        (0..self.master.len()).filter(|&n| self.master[n] == n).collect()
    }
}

fn is_symmetric(e: &[[f64; 3]; 3]) -> bool {
    (0..3).all(|i| (0..3).all(|j| (e[i][j] - e[j][i]).abs() <= 1e-14 * (1.0 + e[i][j].abs())))
}

/// Resolves the face pairing into master-slave constraints. Chains through
/// edges and corners collapse onto one master carrying the summed offset.
pub fn apply_periodic_bcs(rve: &RveModel, strain: [[f64; 3]; 3]) -> Result<PeriodicConstraints> {
    if !is_symmetric(&strain) {
        return Err(Error::invalid("macroscopic strain must be symmetric"));
    }
    let n = rve.nodes.len();
    let l = rve.cube_size;
    let mut adj: Vec<Vec<(usize, [f64; 3])>> = vec![Vec::new(); n];
    for p in &rve.pairs {
        if p.plus >= n || p.minus >= n || p.axis > 2 {
            return Err(Error::Pairing(format!("pair {p:?} out of range")));
        }
        let mut d = [0.0; 3];
        d[p.axis] = l;
        adj[p.plus].push((p.minus, d.map(|v| -v)));
        adj[p.minus].push((p.plus, d));
    }

    let mut master = vec![usize::MAX; n];
    let mut offset = vec![[0.0; 3]; n];
    let tol = 1e-9 * l.max(1.0);
    for root in 0..n {
        if master[root] != usize::MAX {
            continue;
        }
        // offsets relative to the root, checked for consistency on cycles
        let mut rel: Vec<(usize, [f64; 3])> = vec![(root, [0.0; 3])];
        let mut seen = std::collections::BTreeMap::new();
        seen.insert(root, [0.0; 3]);
        let mut queue = VecDeque::from([root]);
        while let Some(a) = queue.pop_front() {
            let oa = seen[&a];
            for &(b, d) in &adj[a] {
                let ob = [oa[0] + d[0], oa[1] + d[1], oa[2] + d[2]];
                match seen.get(&b) {
                    Some(prev) => {
                        if (0..3).any(|k| (prev[k] - ob[k]).abs() > tol) {
                            return Err(Error::Pairing(format!("inconsistent pairing chain between nodes {a} and {b}")));
                        }
                    }
                    None => {
                        seen.insert(b, ob);
                        rel.push((b, ob));
                        queue.push_back(b);
                    }
                }
            }
        }
        // the master is the image nearest the origin corner
        let (m, om) = rel
            .iter()
            .min_by(|x, y| {
                let sx = x.1[0] + x.1[1] + x.1[2];
                let sy = y.1[0] + y.1[1] + y.1[2];
                sx.partial_cmp(&sy).unwrap().then(x.0.cmp(&y.0))
            })
            .cloned()
            .unwrap();
        for (node, o) in rel {
            master[node] = m;
            offset[node] = [o[0] - om[0], o[1] - om[1], o[2] - om[2]];
            let x = rve.nodes[node];
            let xm = rve.nodes[m];
            if (0..3).any(|k| (x[k] - xm[k] - offset[node][k]).abs() > tol) {
                return Err(Error::Pairing(format!("node {node} is not a periodic image of {m}")));
            }
        }
    }

    let centre = 0.5 * l;
    let pinned = (0..n)
        .filter(|&k| master[k] == k && !rve.is_boundary_node(k))
        .min_by(|&a, &b| {
            let da: f64 = rve.nodes[a].iter().map(|x| (x - centre).powi(2)).sum();
            let db: f64 = rve.nodes[b].iter().map(|x| (x - centre).powi(2)).sum();
            da.partial_cmp(&db).unwrap().then(a.cmp(&b))
        })
        .or_else(|| (0..n).find(|&k| master[k] == k))
        .ok_or_else(|| Error::Pairing("no master node".into()))?;
    Ok(PeriodicConstraints { master, offset, pinned, strain })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rve::small_rve;

    #[test]
    fn zero_strain_ties_images_and_chains_resolve() {
        let rve = small_rve();
        let pc = apply_periodic_bcs(rve, [[0.0; 3]; 3]).unwrap();
        let l = rve.cube_size;
        // brute-force oracle: every node's master is the image of it with all
        // boundary coordinates moved to the 0-faces
        for (n, x) in rve.nodes.iter().enumerate() {
            let want: Vec<f64> = x.iter().map(|&v| if v == l { 0.0 } else { v }).collect();
            let m = pc.master[n];
            for k in 0..3 {
                assert!((rve.nodes[m][k] - want[k]).abs() < 1e-12);
            }
            assert_eq!(pc.jump(n), [0.0; 3]);
        }
        // a corner node chains through three faces
        let corner = (0..rve.nodes.len()).find(|&n| rve.nodes[n].iter().all(|&v| v == l)).unwrap();
        assert_eq!(pc.offset[corner], [l, l, l]);
        assert!(!rve.is_boundary_node(pc.pinned));
    }

    #[test]
    fn uniaxial_strain_offsets_x_faces() {
        let rve = small_rve();
        let eps = 0.01;
        let pc = apply_periodic_bcs(rve, [[eps, 0.0, 0.0], [0.0; 3], [0.0; 3]]).unwrap();
        for p in rve.pairs.iter().filter(|p| p.axis == 0) {
            let j = pc.jump(p.plus);
            let jm = pc.jump(p.minus);
            assert!((j[0] - jm[0] - eps * rve.cube_size).abs() < 1e-15);
            assert_eq!(j[1] - jm[1], 0.0);
        }
    }

    #[test]
    fn broken_pairing_is_detected() {
        let mut rve = small_rve().clone();
        let p0 = rve.pairs[0];
        let other = rve.pairs.iter().find(|p| p.axis == p0.axis && p.minus != p0.minus).unwrap().minus;
        rve.pairs[0].minus = other;
        assert!(matches!(apply_periodic_bcs(&rve, [[0.0; 3]; 3]), Err(Error::Pairing(_))));
        assert!(apply_periodic_bcs(small_rve(), [[0.0, 1.0, 0.0], [0.0; 3], [0.0; 3]]).is_err());
    }
}

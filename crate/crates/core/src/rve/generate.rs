//! Periodic, boundary-conforming tetrahedral lattices.
//!
//! Points live on the unit torus. A corner point, points on the three
//! coordinate axes and points on the three coordinate planes are kept on
//! their lines and planes, so that the triangulation of the periodic point
//! set, clipped to the unit cube, tiles the cube exactly and matches on
//! opposite faces. Edge lengths are equalized by spring relaxation with
//! retriangulation after every step.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::delaunay::{circumsphere, tetrahedralize};
use super::{FacePair, RveModel, Strut, RVE_FORMAT_VERSION};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Corner,
    /// on the coordinate axis along the given direction
    Line(usize),
    /// on the coordinate plane with the given normal
    Plane(usize),
    Interior,
}

/// Generation settings. `tol_len` is the admissible max relative deviation
/// of strut lengths from their mean.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RveParams {
    pub seed: u64,
    pub target_cells: usize,
    pub strut_length: f64,
    pub tol_len: f64,
    /// spreading iterations before length equalization
    pub spread_iterations: usize,
    /// length equalization iterations
    pub equalize_iterations: usize,
    /// rounds of boundary repair (Steiner points on the periodic planes)
    pub repair_rounds: usize,
}

/// Default admissible max relative deviation of strut lengths.
pub const DEFAULT_TOL_LEN: f64 = 0.5;

impl Default for RveParams {
    fn default() -> Self {
        RveParams {
            seed: 1,
            target_cells: 2845,
            strut_length: 1.0,
            tol_len: DEFAULT_TOL_LEN,
            spread_iterations: 120,
            equalize_iterations: 250,
            repair_rounds: 12,
        }
    }
}

const OUTLIER_GAIN: f64 = 5.0;
const CELLS_PER_POINT: f64 = 6.4;
const MIN_CELLS: usize = 100;

pub fn generate_rve(seed: u64, target_cells: usize, l: f64, tol_len: f64) -> Result<RveModel> {
    generate_rve_with(&RveParams { seed, target_cells, strut_length: l, tol_len, ..Default::default() })
}

pub fn generate_rve_with(p: &RveParams) -> Result<RveModel> {
    if p.target_cells < MIN_CELLS {
        return Err(Error::invalid(format!("target_cells = {} is too small for a periodic lattice (minimum {MIN_CELLS})", p.target_cells)));
    }
    if !(p.strut_length > 0.0) || !(p.tol_len > 0.0) {
        return Err(Error::invalid("strut length and tol_len must be positive"));
    }
    let mut n_points = (p.target_cells as f64 / CELLS_PER_POINT).round() as usize;
    let mut best: Option<RveModel> = None;
    for attempt in 0..3 {
        let model = build(p, n_points)?;
        let ratio = model.cell_count as f64 / p.target_cells as f64;
        log::debug!(
            "rve attempt {attempt}: {n_points} points, {} cells, {} struts, max dev {:.3}",
            model.cell_count,
            model.struts.len(),
            model.max_length_deviation
        );
        let done = (ratio - 1.0).abs() <= 0.03;
        let closer = best
            .as_ref()
            .is_none_or(|b| (model.cell_count as f64 - p.target_cells as f64).abs() < (b.cell_count as f64 - p.target_cells as f64).abs());
        if closer {
            best = Some(model);
        }
        if done {
            break;
        }
        n_points = ((n_points as f64) / ratio).round() as usize;
    }
    let model = best.expect("at least one attempt");
    if model.max_length_deviation > p.tol_len {
        return Err(Error::Relaxation { achieved: model.max_length_deviation, target: p.tol_len });
    }
    Ok(model)
}

struct Torus {
    pts: Vec<[f64; 3]>,
    roles: Vec<Role>,
}

/// Periodic edge from point `i` to the image `j + shift`.
type PEdge = (usize, usize, [i8; 3]);

struct Triangulation {
    /// extended point set: (point, image shift)
    ids: Vec<(usize, [i8; 3])>,
    tets: Vec<[usize; 4]>,
    edges: Vec<PEdge>,
}

fn wrap(x: f64) -> f64 {
    let w = x - x.floor();
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

fn torus_dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3)
        .map(|k| {
            let d = (a[k] - b[k]).abs();
            let d = d.min(1.0 - d);
            d * d
        })
        .sum()
}

fn seed_points(rng: &mut ChaCha8Rng, n: usize) -> Torus {
    let n_line = ((n as f64).cbrt().round() as usize).max(1);
    let n_plane = ((n as f64).powf(2.0 / 3.0).round() as usize).max(1);
    let n_int = n.saturating_sub(1 + 3 * n_line + 3 * n_plane).max(1);
    let spacing = (1.0 / n as f64).cbrt();
    let band = 0.25 * spacing;
    let mut t = Torus { pts: vec![[0.0; 3]], roles: vec![Role::Corner] };
    let mut r = 0.75 * spacing;
    let place = |t: &mut Torus, role: Role, rng: &mut ChaCha8Rng, r: &mut f64| {
        let mut misses = 0;
        loop {
            let mut x = [0.0; 3];
            for k in 0..3 {
                let free = match role {
                    Role::Corner => false,
                    Role::Line(a) => k == a,
                    Role::Plane(a) => k != a,
                    Role::Interior => true,
                };
                if free {
                    x[k] = band + (1.0 - 2.0 * band) * rng.gen::<f64>();
                }
            }
            if t.pts.iter().all(|q| torus_dist2(q, &x) >= *r * *r) {
                t.pts.push(x);
                t.roles.push(role);
                return;
            }
            misses += 1;
            if misses > 200 {
                *r *= 0.95;
                misses = 0;
            }
        }
    };
    for a in 0..3 {
        for _ in 0..n_line {
            place(&mut t, Role::Line(a), rng, &mut r);
        }
    }
    for a in 0..3 {
        for _ in 0..n_plane {
            place(&mut t, Role::Plane(a), rng, &mut r);
        }
    }
    for _ in 0..n_int {
        place(&mut t, Role::Interior, rng, &mut r);
    }
    t
}

fn triangulate(t: &Torus, margin: f64) -> Result<Triangulation> {
    let mut ids = Vec::new();
    let mut coords = Vec::new();
    for (i, p) in t.pts.iter().enumerate() {
        for sx in -1i8..=1 {
            for sy in -1i8..=1 {
                for sz in -1i8..=1 {
                    let s = [sx, sy, sz];
                    let q = [p[0] + sx as f64, p[1] + sy as f64, p[2] + sz as f64];
                    if q.iter().all(|&v| v >= -margin && v <= 1.0 + margin) {
                        ids.push((i, s));
                        coords.push(q);
                    }
                }
            }
        }
    }
    let all = tetrahedralize(&coords)?;
    let mut tets = Vec::new();
    let mut edges = Vec::new();
    for tet in all {
        let v = tet.map(|i| coords[i]);
        let cen: Vec<f64> = (0..3).map(|k| 0.25 * (v[0][k] + v[1][k] + v[2][k] + v[3][k])).collect();
        if !cen.iter().all(|&x| (0.0..1.0).contains(&x)) {
            continue;
        }
        let (cc, r2) = circumsphere(&v[0], &v[1], &v[2], &v[3]);
        let r = r2.sqrt();
        if cc.iter().any(|&x| x - r < -margin || x + r > 1.0 + margin) {
            return Err(Error::Singular("periodic margin too small for the triangulation".into()));
        }
        for a in 0..4 {
            for b in a + 1..4 {
                let (ia, sa) = ids[tet[a]];
                let (ib, sb) = ids[tet[b]];
                let rel = [sb[0] - sa[0], sb[1] - sa[1], sb[2] - sa[2]];
                let neg = [-rel[0], -rel[1], -rel[2]];
                let e = if ia < ib || (ia == ib && rel > neg) { (ia, ib, rel) } else { (ib, ia, neg) };
                edges.push(e);
            }
        }
        tets.push(tet);
    }
    edges.sort_unstable();
    edges.dedup();
    Ok(Triangulation { ids, tets, edges })
}

fn edge_vec(t: &Torus, e: &PEdge) -> [f64; 3] {
    let (a, b, s) = *e;
    [t.pts[b][0] + s[0] as f64 - t.pts[a][0], t.pts[b][1] + s[1] as f64 - t.pts[a][1], t.pts[b][2] + s[2] as f64 - t.pts[a][2]]
}

fn norm(v: &[f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn length_stats(t: &Torus, edges: &[PEdge]) -> (f64, f64) {
    let lens: Vec<f64> = edges.iter().map(|e| norm(&edge_vec(t, e))).collect();
    let mean = lens.iter().sum::<f64>() / lens.len() as f64;
    let dev = lens.iter().map(|l| (l - mean).abs() / mean).fold(0.0, f64::max);
    (mean, dev)
}

/// Points where edges cross the periodic planes, tagged with the plane.
fn crossings(t: &Torus, edges: &[PEdge]) -> Vec<([f64; 3], usize)> {
    let mut out = Vec::new();
    for e in edges {
        let d = edge_vec(t, e);
        let a = t.pts[e.0];
        for k in 0..3 {
            let (lo, hi) = if d[k] >= 0.0 { (a[k], a[k] + d[k]) } else { (a[k] + d[k], a[k]) };
            for z in [0.0, 1.0] {
                if lo < z && z < hi {
                    let s = (z - a[k]) / d[k];
                    let mut q = [wrap(a[0] + s * d[0]), wrap(a[1] + s * d[1]), wrap(a[2] + s * d[2])];
                    q[k] = 0.0;
                    out.push((q, k));
                }
            }
        }
    }
    out
}

/// Moves points along the edge forces and re-imposes the role constraints.
fn step(t: &mut Torus, edges: &[PEdge], mean: f64, spread: bool, band: f64) {
    let mut disp = vec![[0.0; 3]; t.pts.len()];
    let l0 = if spread {
        let ms = edges.iter().map(|e| norm(&edge_vec(t, e)).powi(2)).sum::<f64>() / edges.len() as f64;
        1.2 * ms.sqrt()
    } else {
        mean
    };
    for e in edges {
        let d = edge_vec(t, e);
        let len = norm(&d);
        let mut f = l0 - len;
        if spread && f < 0.0 {
            f = 0.0;
        }
        if !spread {
            // stiffen the springs of outliers, the max deviation is what counts
            f *= 1.0 + OUTLIER_GAIN * (f / l0).powi(2);
        }
        let s = f / len;
        for k in 0..3 {
            disp[e.0][k] -= s * d[k];
            disp[e.1][k] += s * d[k];
        }
    }
    let dt = if spread { 0.2 } else { 0.1 };
    let cap = 0.1 * mean;
    let min_gap2 = (0.05 * mean).powi(2);
    for i in 0..t.pts.len() {
        let role = t.roles[i];
        let mut d = disp[i].map(|v| v * dt);
        let dn = norm(&d);
        if dn > cap {
            d = d.map(|v| v * cap / dn);
        }
        let mut p = t.pts[i];
        for k in 0..3 {
            let free = match role {
                Role::Corner => false,
                Role::Line(a) => k == a,
                Role::Plane(a) => k != a,
                Role::Interior => true,
            };
            if free {
                let x = wrap(p[k] + d[k]);
                p[k] = x.clamp(band, 1.0 - band);
            }
        }
        // the band clamp can stack points; such moves are dropped
        if t.pts.iter().enumerate().all(|(j, q)| j == i || torus_dist2(q, &p) >= min_gap2) {
            t.pts[i] = p;
        }
    }
}

fn build(p: &RveParams, n_points: usize) -> Result<RveModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut torus = seed_points(&mut rng, n_points);
    let spacing = (1.0 / n_points as f64).cbrt();
    let mut margin = spacing.min(1.0);

    let mut tri = loop {
        match triangulate(&torus, margin) {
            Ok(t) => break t,
            Err(_) if margin < 1.0 => margin = (1.5 * margin).min(1.0),
            Err(e) => return Err(e),
        }
    };

    let run = |torus: &mut Torus,
               tri: &mut Triangulation,
               margin: &mut f64,
               iters: usize,
               spread: bool|
     -> Result<Option<(f64, Vec<[f64; 3]>)>> {
        let mut best: Option<(f64, Vec<[f64; 3]>)> = None;
        for _ in 0..iters {
            let (mean, dev) = length_stats(torus, &tri.edges);
            if !spread && crossings(torus, &tri.edges).is_empty() && best.as_ref().is_none_or(|b| dev < b.0) {
                best = Some((dev, torus.pts.clone()));
            }
            step(torus, &tri.edges, mean, spread, 0.25 * mean);
            *tri = loop {
                match triangulate(torus, *margin) {
                    Ok(t) => break t,
                    Err(_) if *margin < 1.0 => *margin = (1.5 * *margin).min(1.0),
                    Err(e) => return Err(e),
                }
            };
        }
        Ok(best)
    };

    run(&mut torus, &mut tri, &mut margin, p.spread_iterations, true)?;
    let mut best = None;
    for round in 0..=p.repair_rounds {
        let found = run(&mut torus, &mut tri, &mut margin, p.equalize_iterations / (1 + round.min(1) * 2), false)?;
        if let Some((dev, pts)) = found {
            if best.as_ref().is_none_or(|(d, _, _): &(f64, _, _)| dev < *d) {
                best = Some((dev, pts, torus.roles.clone()));
            }
        }
        if best.is_some() {
            break;
        }
        // add Steiner points where edges still cross the periodic planes
        let (mean, _) = length_stats(&torus, &tri.edges);
        let mut added: Vec<[f64; 3]> = Vec::new();
        for (q, k) in crossings(&torus, &tri.edges) {
            let far = |a: &[f64; 3]| torus_dist2(a, &q) > (0.3 * mean).powi(2);
            if added.iter().all(far) && torus.pts.iter().all(|a| torus_dist2(a, &q) > (0.05 * mean).powi(2)) {
                added.push(q);
                torus.pts.push(q);
                torus.roles.push(Role::Plane(k));
            }
        }
        log::debug!("boundary repair round {round}: {} Steiner points", added.len());
        tri = triangulate(&torus, margin)?;
    }
    let (_, pts, roles) =
        best.ok_or_else(|| Error::NoConvergence("could not obtain a boundary-conforming periodic triangulation".into()))?;
    let torus = Torus { pts, roles };
    let tri = loop {
        match triangulate(&torus, margin) {
            Ok(t) => break t,
            Err(_) if margin < 1.0 => margin = (1.5 * margin).min(1.0),
            Err(e) => return Err(e),
        }
    };
    extract(p, &torus, &tri)
}

/// Clips the periodic triangulation to the unit cube and rescales.
fn extract(p: &RveParams, torus: &Torus, tri: &Triangulation) -> Result<RveModel> {
    use std::collections::BTreeMap;
    let inside = |s: &[i8; 3], x: &[f64; 3]| (0..3).all(|k| s[k] == 0 || (s[k] == 1 && x[k] == 0.0));
    let mut node_of: BTreeMap<(usize, [i8; 3]), usize> = BTreeMap::new();
    let mut cube_tets = Vec::new();
    // tets inside the closed cube have their centroid in the open cube, so
    // they are among the canonical ones
    for tet in &tri.tets {
        if tet.iter().all(|&v| {
            let (i, s) = tri.ids[v];
            inside(&s, &torus.pts[i])
        }) {
            cube_tets.push(tet.map(|v| tri.ids[v]));
        }
    }
    for tet in &cube_tets {
        for &key in tet {
            node_of.insert(key, 0);
        }
    }
    for (idx, v) in node_of.values_mut().enumerate() {
        *v = idx;
    }
    let keys: Vec<(usize, [i8; 3])> = node_of.keys().cloned().collect();
    let unit: Vec<[f64; 3]> = keys
        .iter()
        .map(|(i, s)| {
            let x = torus.pts[*i];
            [x[0] + s[0] as f64, x[1] + s[1] as f64, x[2] + s[2] as f64]
        })
        .collect();

    let vol: f64 = cube_tets
        .iter()
        .map(|t| {
            let v = t.map(|k| unit[node_of[&k]]);
            super::delaunay::tet_volume(&v[0], &v[1], &v[2], &v[3])
        })
        .sum();
    if (vol - 1.0).abs() > 1e-9 {
        return Err(Error::Pairing(format!("clipped lattice covers volume {vol} of the unit cube")));
    }

    let mut pairs_set = Vec::new();
    for t in &cube_tets {
        for a in 0..4 {
            for b in a + 1..4 {
                let (x, y) = (node_of[&t[a]], node_of[&t[b]]);
                pairs_set.push((x.min(y), x.max(y)));
            }
        }
    }
    pairs_set.sort_unstable();
    pairs_set.dedup();

    let raw_len = |a: usize, b: usize| norm(&[unit[b][0] - unit[a][0], unit[b][1] - unit[a][1], unit[b][2] - unit[a][2]]);
    let mean = pairs_set.iter().map(|&(a, b)| raw_len(a, b)).sum::<f64>() / pairs_set.len() as f64;
    let scale = p.strut_length / mean;
    let cube = scale;
    let nodes: Vec<[f64; 3]> = unit.iter().map(|x| x.map(|v| v * scale)).collect();

    let mut struts = Vec::with_capacity(pairs_set.len());
    let mut dev: f64 = 0.0;
    for &(a, b) in &pairs_set {
        let shared = (0..3).filter(|&k| nodes[a][k] == nodes[b][k] && (nodes[a][k] == 0.0 || nodes[a][k] == cube)).count();
        let weight = match shared {
            0 => 1.0,
            1 => 0.5,
            _ => 0.25,
        };
        let length = raw_len(a, b) * scale;
        dev = dev.max((length - p.strut_length).abs() / p.strut_length);
        struts.push(Strut { nodes: [a, b], length, weight });
    }

    let mut pairs = Vec::new();
    for (key, &node) in &node_of {
        let (i, s) = *key;
        for k in 0..3 {
            if s[k] == 1 {
                let mut sm = s;
                sm[k] = 0;
                let minus = *node_of.get(&(i, sm)).ok_or_else(|| Error::Pairing(format!("face image of point {i} missing")))?;
                pairs.push(FacePair { axis: k, plus: node, minus });
            }
        }
    }

    Ok(RveModel {
        format_version: RVE_FORMAT_VERSION,
        seed: p.seed,
        cube_size: cube,
        strut_length: p.strut_length,
        tol_len: p.tol_len,
        nodes,
        struts,
        pairs,
        cell_count: cube_tets.len(),
        max_length_deviation: dev,
    })
}

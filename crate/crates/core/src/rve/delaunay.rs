//! Incremental Bowyer-Watson tetrahedralization on exact predicates.

use std::collections::HashMap;

use robust::{insphere, orient3d, Coord3D};

use crate::error::{Error, Result};

const NONE: u32 = u32::MAX;

#[derive(Clone, Copy)]
struct Tet {
    v: [u32; 4],
    n: [u32; 4],
}

fn c(p: &[f64; 3]) -> Coord3D<f64> {
    Coord3D { x: p[0], y: p[1], z: p[2] }
}

pub fn orient(a: &[f64; 3], b: &[f64; 3], cc: &[f64; 3], d: &[f64; 3]) -> f64 {
    orient3d(c(a), c(b), c(cc), c(d))
}

/// Delaunay tetrahedralization of `pts`. Every returned tet is positively
/// oriented in the sense of `orient` (> 0).
pub fn tetrahedralize(pts: &[[f64; 3]]) -> Result<Vec<[usize; 4]>> {
    let n = pts.len();
    if n < 4 {
        return Err(Error::invalid("need at least four points to tetrahedralize"));
    }
    if n >= (u32::MAX as usize) - 8 {
        return Err(Error::invalid("too many points"));
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in pts {
        for k in 0..3 {
            if !p[k].is_finite() {
                return Err(Error::NonFinite("Delaunay input".into()));
            }
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let mut sorted: Vec<&[f64; 3]> = pts.iter().collect();
    sorted.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::invalid("duplicate points in Delaunay input"));
    }
    let span = (0..3).map(|k| hi[k] - lo[k]).fold(0.0, f64::max).max(1e-300);
    let mid: Vec<f64> = (0..3).map(|k| 0.5 * (lo[k] + hi[k])).collect();
    let big = 1e3 * span;
    let mut all = pts.to_vec();
    let dirs = [[1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]];
    for d in dirs {
        all.push([mid[0] + big * d[0], mid[1] + big * d[1], mid[2] + big * d[2]]);
    }
    let s = n as u32;
    let mut first = [s, s + 1, s + 2, s + 3];
    if orient(&all[n], &all[n + 1], &all[n + 2], &all[n + 3]) < 0.0 {
        first.swap(0, 1);
    }

    let mut tets = vec![Tet { v: first, n: [NONE; 4] }];
    let mut alive = vec![true];
    let mut free: Vec<u32> = Vec::new();
    let mut stamp: Vec<u32> = vec![0];
    let mut conflict: Vec<bool> = vec![false];

    let order = spatial_order(pts, lo, span);
    let mut last: u32 = 0;
    let mut rng: u64 = 0x9E37_79B9_7F4A_7C15;
    let mut cavity: Vec<u32> = Vec::new();
    let mut boundary: Vec<([u32; 4], usize, u32, u32)> = Vec::new();
    let mut edge_map: HashMap<(u32, u32), (u32, usize)> = HashMap::new();

    for (step, &pi) in order.iter().enumerate() {
        let mark = step as u32 + 1;
        let p = all[pi];
        let t0 = locate(&tets, &all, &p, last, &mut rng)?;

        cavity.clear();
        boundary.clear();
        cavity.push(t0);
        stamp[t0 as usize] = mark;
        conflict[t0 as usize] = true;
        let mut head = 0;
        while head < cavity.len() {
            let t = cavity[head];
            head += 1;
            let tet = tets[t as usize];
            for f in 0..4 {
                let nb = tet.n[f];
                let inside = if nb == NONE {
                    false
                } else if stamp[nb as usize] == mark {
                    conflict[nb as usize]
                } else {
                    let nt = tets[nb as usize];
                    let v = nt.v.map(|i| all[i as usize]);
                    let inc = insphere(c(&v[0]), c(&v[1]), c(&v[2]), c(&v[3]), c(&p)) > 0.0;
                    stamp[nb as usize] = mark;
                    conflict[nb as usize] = inc;
                    if inc {
                        cavity.push(nb);
                    }
                    inc
                };
                if !inside {
                    let mut v = tet.v;
                    v[f] = pi as u32;
                    boundary.push((v, f, nb, t));
                }
            }
        }

        edge_map.clear();
        let mut created = Vec::with_capacity(boundary.len());
        for &(v, f, nb, old) in &boundary {
            let id = match free.pop() {
                Some(id) => {
                    tets[id as usize] = Tet { v, n: [NONE; 4] };
                    alive[id as usize] = true;
                    id
                }
                None => {
                    tets.push(Tet { v, n: [NONE; 4] });
                    alive.push(true);
                    stamp.push(0);
                    conflict.push(false);
                    (tets.len() - 1) as u32
                }
            };
            tets[id as usize].n[f] = nb;
            if nb != NONE {
                let nbt = &mut tets[nb as usize];
                let k = nbt.n.iter().position(|&x| x == old).expect("neighbour back-link");
                nbt.n[k] = id;
            }
            for j in 0..4 {
                if j == f {
                    continue;
                }
                let others: Vec<u32> = (0..4).filter(|&k| k != f && k != j).map(|k| v[k]).collect();
                let key = (others[0].min(others[1]), others[0].max(others[1]));
                if let Some((other, oj)) = edge_map.remove(&key) {
                    tets[id as usize].n[j] = other;
                    tets[other as usize].n[oj] = id;
                } else {
                    edge_map.insert(key, (id, j));
                }
            }
            created.push(id);
        }
        if !edge_map.is_empty() {
            return Err(Error::Singular("Delaunay cavity is not closed".into()));
        }
        for &t in &cavity {
            alive[t as usize] = false;
            free.push(t);
        }
        last = *created.last().expect("cavity has a boundary");
    }

    let out = tets
        .iter()
        .zip(&alive)
        .filter(|(t, &a)| a && t.v.iter().all(|&i| (i as usize) < n))
        .map(|(t, _)| t.v.map(|i| i as usize))
        .collect();
    Ok(out)
}

fn locate(tets: &[Tet], all: &[[f64; 3]], p: &[f64; 3], start: u32, rng: &mut u64) -> Result<u32> {
    let mut t = start;
    let limit = 10 * tets.len() + 1000;
    'walk: for _ in 0..limit {
        let tet = tets[t as usize];
        *rng ^= *rng << 13;
        *rng ^= *rng >> 7;
        *rng ^= *rng << 17;
        let off = (*rng % 4) as usize;
        for k in 0..4 {
            let f = (k + off) % 4;
            let mut v = tet.v.map(|i| all[i as usize]);
            v[f] = *p;
            if orient(&v[0], &v[1], &v[2], &v[3]) < 0.0 {
                let nb = tet.n[f];
                if nb == NONE {
                    return Err(Error::Singular("point outside the bounding tetrahedron".into()));
                }
                t = nb;
                continue 'walk;
            }
        }
        return Ok(t);
    }
    Err(Error::NoConvergence("point location walk did not terminate".into()))
}

/// Insertion order along a serpentine sweep of a coarse grid.
fn spatial_order(pts: &[[f64; 3]], lo: [f64; 3], span: f64) -> Vec<usize> {
    let m = ((pts.len() as f64).cbrt() / 2.0).ceil().max(1.0) as usize;
    let cell = |x: f64, k: usize| (((x - lo[k]) / span * m as f64) as usize).min(m - 1);
    let mut keyed: Vec<(usize, usize)> = pts
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let (a, b, cc) = (cell(p[0], 0), cell(p[1], 1), cell(p[2], 2));
            let b = if cc % 2 == 1 { m - 1 - b } else { b };
            let a = if (cc * m + b) % 2 == 1 { m - 1 - a } else { a };
            ((cc * m + b) * m + a, i)
        })
        .collect();
    keyed.sort_unstable();
    keyed.into_iter().map(|(_, i)| i).collect()
}

/// Circumcentre and squared circumradius of a tetrahedron.
pub fn circumsphere(a: &[f64; 3], b: &[f64; 3], cc: &[f64; 3], d: &[f64; 3]) -> ([f64; 3], f64) {
    let sub = |x: &[f64; 3]| [x[0] - a[0], x[1] - a[1], x[2] - a[2]];
    let (u, v, w) = (sub(b), sub(cc), sub(d));
    let dot = |x: &[f64; 3]| x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
    let cross = |x: &[f64; 3], y: &[f64; 3]| [x[1] * y[2] - x[2] * y[1], x[2] * y[0] - x[0] * y[2], x[0] * y[1] - x[1] * y[0]];
    let vw = cross(&v, &w);
    let wu = cross(&w, &u);
    let uv = cross(&u, &v);
    let det = 2.0 * (u[0] * vw[0] + u[1] * vw[1] + u[2] * vw[2]);
    let (nu, nv, nw) = (dot(&u), dot(&v), dot(&w));
    let r = [
        (nu * vw[0] + nv * wu[0] + nw * uv[0]) / det,
        (nu * vw[1] + nv * wu[1] + nw * uv[1]) / det,
        (nu * vw[2] + nv * wu[2] + nw * uv[2]) / det,
    ];
    ([a[0] + r[0], a[1] + r[1], a[2] + r[2]], dot(&r))
}

pub fn tet_volume(a: &[f64; 3], b: &[f64; 3], cc: &[f64; 3], d: &[f64; 3]) -> f64 {
    let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let v = [cc[0] - a[0], cc[1] - a[1], cc[2] - a[2]];
    let w = [d[0] - a[0], d[1] - a[1], d[2] - a[2]];
    (u[0] * (v[1] * w[2] - v[2] * w[1]) - u[1] * (v[0] * w[2] - v[2] * w[0]) + u[2] * (v[0] * w[1] - v[1] * w[0])).abs() / 6.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_points(n: usize, seed: u64) -> Vec<[f64; 3]> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect()
    }

    #[test]
    fn empty_sphere_property_brute_force() {
        let pts = random_points(60, 3);
        let tets = tetrahedralize(&pts).unwrap();
        for t in &tets {
            let v = t.map(|i| pts[i]);
            assert!(orient(&v[0], &v[1], &v[2], &v[3]) > 0.0);
            for (i, p) in pts.iter().enumerate() {
                if t.contains(&i) {
                    continue;
                }
                let s = insphere(c(&v[0]), c(&v[1]), c(&v[2]), c(&v[3]), c(p));
                assert!(s <= 0.0, "point {i} inside circumsphere of {t:?}");
            }
        }
    }

    #[test]
    fn tets_tile_the_convex_hull_of_a_cube_lattice() {
        // includes heavy cospherical degeneracy
        let mut pts = vec![];
        for i in 0..4 {
            for j in 0..4 {
                for k in 0..4 {
                    pts.push([i as f64, j as f64, k as f64]);
                }
            }
        }
        let tets = tetrahedralize(&pts).unwrap();
        let vol: f64 = tets.iter().map(|t| tet_volume(&pts[t[0]], &pts[t[1]], &pts[t[2]], &pts[t[3]])).sum();
        assert!((vol - 27.0).abs() < 1e-9, "volume {vol}");
    }

    #[test]
    fn random_hull_volume_matches_tiling() {
        let pts = random_points(400, 11);
        let tets = tetrahedralize(&pts).unwrap();
        // every interior face is shared by exactly two tets
        let mut faces = std::collections::BTreeMap::new();
        for t in &tets {
            for f in 0..4 {
                let mut key: Vec<usize> = (0..4).filter(|&k| k != f).map(|k| t[k]).collect();
                key.sort();
                *faces.entry(key).or_insert(0) += 1;
            }
        }
        assert!(faces.values().all(|&c| c == 1 || c == 2));
        let v = tets.len() as f64 / pts.len() as f64;
        assert!(v > 5.0 && v < 7.5, "tets per point {v}");
    }

    #[test]
    fn circumsphere_is_equidistant() {
        let (cc, r2) = circumsphere(&[0.0, 0.0, 0.0], &[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]);
        assert!((cc[0] - 0.5).abs() < 1e-15 && (r2 - 0.75).abs() < 1e-15);
    }
}

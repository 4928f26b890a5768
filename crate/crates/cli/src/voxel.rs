//! Voxel mask files: a header line `nx ny nz edge_length` followed by one
//! role code per voxel (0 excluded, 1 design, 2 frozen solid), x fastest.
//! Lines starting with `#` are comments. `nz = 1` gives a plane strain
//! grid.

use std::path::Path;

use latticeopt::optimizer::ElementRole;
use latticeopt::GridModel;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelMask {
    pub counts: [usize; 3],
    pub edge: f64,
    pub roles: Vec<ElementRole>,
}

impl VoxelMask {
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut tokens = text.lines().filter(|l| !l.trim_start().starts_with('#')).flat_map(str::split_whitespace);
        let bad = |m: String| CliError::Config(format!("voxel mask: {m}"));
        let mut counts = [0usize; 3];
        for c in counts.iter_mut() {
            let t = tokens.next().ok_or_else(|| bad("missing header".into()))?;
            *c = t.parse().map_err(|_| bad(format!("bad count '{t}'")))?;
        }
        let t = tokens.next().ok_or_else(|| bad("missing edge length".into()))?;
        let edge: f64 = t.parse().map_err(|_| bad(format!("bad edge length '{t}'")))?;
        if counts.contains(&0) || !(edge > 0.0 && edge.is_finite()) {
            return Err(bad(format!("need positive counts and edge length, got {counts:?} {edge}")));
        }
        let n = counts.iter().product::<usize>();
        let mut roles = Vec::with_capacity(n);
        for t in tokens {
            let code: u8 = t.parse().map_err(|_| bad(format!("bad role code '{t}'")))?;
            roles.push(ElementRole::from_code(code).map_err(|e| bad(e.to_string()))?);
        }
        if roles.len() != n {
            return Err(bad(format!("expected {n} role codes, got {}", roles.len())));
        }
        Ok(VoxelMask { counts, edge, roles })
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        Self::parse(&std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?)
    }

    pub fn grid(&self) -> CliResult<GridModel> {
        let [nx, ny, nz] = self.counts;
        let h = self.edge;
        let mut g = if nz == 1 {
            GridModel::new_2d(nx, ny, nx as f64 * h, ny as f64 * h)?
        } else {
            GridModel::new_3d(nx, ny, nz, nx as f64 * h, ny as f64 * h, nz as f64 * h)?
        };
        g.set_active_mask(self.roles.iter().map(|&r| r != ElementRole::Excluded).collect())?;
        Ok(g)
    }
}

//! Benchmark problems.

use serde::{Deserialize, Serialize};

use super::{DesignField, OptConfig};
use crate::error::{Error, Result};
use crate::fe::GridModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub name: String,
    pub grid: GridModel,
    pub field: DesignField,
    pub config: OptConfig,
}

/// Plane strain MBB beam on `[0, 2] x [0, 1]`: pinned at the bottom-left
/// corner, roller at the bottom-right corner, unit downward point load at
/// the bottom centre. `V_frac = 0.15`, `kappa` in `[0.1, 0.25]`, uniform
/// feasible start `gamma = 1`, `kappa = 0.15`.
pub fn mbb(nx: usize, ny: usize) -> Result<Problem> {
    if nx < 2 || !nx.is_multiple_of(2) || ny < 1 {
        return Err(Error::invalid(format!("MBB grid needs an even nx >= 2 and ny >= 1, got {nx} x {ny}")));
    }
    let mut grid = GridModel::new_2d(nx, ny, 2.0, 1.0)?;
    grid.fix_node(grid.node_index(0, 0, 0));
    grid.fix(grid.node_index(nx, 0, 0), 1, 0.0);
    grid.add_load(grid.node_index(nx / 2, 0, 0), 1, -1.0);
    let field = DesignField::uniform(grid.n_elements(), 1.0, 0.15, 0.1, 0.25)?;
    let config = OptConfig { volume_fraction: 0.15, ..Default::default() };
    Ok(Problem { name: "mbb".into(), grid, field, config })
}

/// Cantilever on `[0, 2] x [0, 1] x [0, 1]` clamped at `x = 0`, with a unit
/// traction in `-y` on a centred 0.15 x 0.15 patch of the face `x = 2`.
/// `V_frac = 0.1`, `kappa` in `[0.05, 0.4]`, infeasible start `gamma = 1`,
/// `kappa = 0.4`.
pub fn cantilever(nx: usize, ny: usize, nz: usize) -> Result<Problem> {
    let mut grid = GridModel::new_3d(nx, ny, nz, 2.0, 1.0, 1.0)?;
    for node in grid.nodes_where(|x| x[0] == 0.0) {
        grid.fix_node(node);
    }
    grid.add_face_traction(0, true, [0.425, 0.425], [0.575, 0.575], [0.0, -1.0, 0.0])?;
    let field = DesignField::uniform(grid.n_elements(), 1.0, 0.4, 0.05, 0.4)?;
    let config = OptConfig { volume_fraction: 0.1, ..Default::default() };
    Ok(Problem { name: "cantilever".into(), grid, field, config })
}

pub fn by_name(name: &str, counts: Option<[usize; 3]>) -> Result<Problem> {
    match name {
        "mbb" => {
            let n = counts.unwrap_or([200, 100, 1]);
            mbb(n[0], n[1])
        }
        "cantilever" => {
            let n = counts.unwrap_or([50, 25, 25]);
            cantilever(n[0], n[1], n[2])
        }
        _ => Err(Error::invalid(format!("unknown preset '{name}' (expected mbb or cantilever)"))),
    }
}

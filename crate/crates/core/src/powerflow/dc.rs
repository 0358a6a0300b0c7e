//! Steady-state DC grid solution: lines are resistive, capacitors open.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::vsc::DcGrid;

#[derive(Debug, Clone, PartialEq)]
pub struct DcSolution {
    /// Bus voltages (pu).
    pub u: Vec<f64>,
    /// Line currents from `from` to `to` (pu).
    pub i_line: Vec<f64>,
    /// Power injected at each bus, slack included (pu).
    pub p_inj: Vec<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for DcOptions {
    fn default() -> Self {
        DcOptions {
            tolerance: 1e-12,
            max_iterations: 30,
        }
    }
}

fn conductance_matrix(grid: &DcGrid) -> Result<DMatrix<f64>> {
    let n = grid.buses.len();
    let mut g = DMatrix::zeros(n, n);
    for k in 0..grid.lines.len() {
        let (f, t) = grid.line_ends(k)?;
        let y = 1.0 / grid.line_r_pu(k);
        g[(f, f)] += y;
        g[(t, t)] += y;
        g[(f, t)] -= y;
        g[(t, f)] -= y;
    }
    Ok(g)
}

/// Solves the DC nodal equations `p_k = u_k * sum_j G_kj u_j` with bus
/// `slack` held at `u_slack`. `p_inj` gives the injections at the other buses
/// (the slack entry is ignored).
pub fn solve_dc_network(grid: &DcGrid, slack: usize, u_slack: f64, p_inj: &[f64], opts: &DcOptions) -> Result<DcSolution> {
    let n = grid.buses.len();
    if p_inj.len() != n || slack >= n {
        return Err(Error::data("DC injection vector does not match the grid"));
    }
    if !(u_slack > 0.0) {
        return Err(Error::data("DC slack voltage must be positive"));
    }
    let g = conductance_matrix(grid)?;
    let others: Vec<usize> = (0..n).filter(|&i| i != slack).collect();
    let mut u = vec![u_slack; n];
    let mut iterations = 0;
    loop {
        let uv = DVector::from_column_slice(&u);
        let gu = &g * &uv;
        let f = DVector::from_iterator(others.len(), others.iter().map(|&k| u[k] * gu[k] - p_inj[k]));
        let mismatch = f.amax();
        if !mismatch.is_finite() {
            return Err(Error::NonConvergence {
                solver: "DC power flow",
                iterations,
                residual: mismatch,
            });
        }
        if mismatch < opts.tolerance {
            break;
        }
        if iterations >= opts.max_iterations {
            return Err(Error::NonConvergence {
                solver: "DC power flow",
                iterations,
                residual: mismatch,
            });
        }
        let m = others.len();
        let mut jac = DMatrix::zeros(m, m);
        for (r, &k) in others.iter().enumerate() {
            for (c, &j) in others.iter().enumerate() {
                jac[(r, c)] = u[k] * g[(k, j)];
            }
            jac[(r, r)] += gu[k];
        }
        let dx = jac.lu().solve(&f).ok_or(Error::Singular("DC power-flow Jacobian"))?;
        for (r, &k) in others.iter().enumerate() {
            u[k] -= dx[r];
        }
        iterations += 1;
    }
    if let Some(k) = u.iter().position(|&x| !(x > 0.0)) {
        return Err(Error::data(format!("DC power flow gives non-positive voltage at DC bus {}", grid.buses[k].id)));
    }
    let gu = &g * DVector::from_column_slice(&u);
    let p_inj: Vec<f64> = (0..n).map(|k| u[k] * gu[k]).collect();
    let i_line = (0..grid.lines.len())
        .map(|k| {
            let (f, t) = grid.line_ends(k)?;
            Ok((u[f] - u[t]) / grid.line_r_pu(k))
        })
        .collect::<Result<_>>()?;
    Ok(DcSolution {
        u,
        i_line,
        p_inj,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vsc::tests::table_grid;

    #[test]
    fn no_flow() {
        let g = table_grid();
        let s = solve_dc_network(&g, 1, 1.0, &[0.0, 0.0], &DcOptions::default()).unwrap();
        assert_eq!(s.u, vec![1.0, 1.0]);
        assert_eq!(s.i_line, vec![0.0]);
    }

    #[test]
    fn line_resistance_per_unit() {
        let g = table_grid();
        assert!((g.line_r_pu(0) - 3.288 / 409.6).abs() < 1e-15);
    }

    #[test]
    fn negative_voltage_rejected() {
        let g = table_grid();
        // far beyond the maximum transferable power u^2/(4R)
        let r = solve_dc_network(&g, 1, 1.0, &[-40.0, 0.0], &DcOptions::default());
        assert!(r.is_err());
    }
}

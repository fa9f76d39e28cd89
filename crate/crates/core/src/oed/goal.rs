use crate::domain::{region_indicator, Grid, QoiSpec, RegionRect};
use crate::error::{Error, Result};
use crate::transport::Transport;

/// Representation `c` of a linear quantity of interest `P(m) = <m, c>_M`.
#[derive(Debug, Clone, PartialEq)]
pub struct GoalVector {
    pub c: Vec<f64>,
    pub qoi: QoiSpec,
}

impl GoalVector {
    /// `sqrt(<c, c>_M)`.
    pub fn m_norm(&self, area: f64) -> f64 {
        (area * self.c.iter().map(|v| v * v).sum::<f64>()).sqrt()
    }
}

/// Region integral of the initial condition: `c = 1_P`.
pub fn goal_vector_initial(grid: &std::sync::Arc<Grid>, region: &RegionRect) -> Result<GoalVector> {
    let c = region_indicator(grid, region)?.into_values();
    Ok(GoalVector {
        c,
        qoi: QoiSpec::initial(*region),
    })
}

/// Space-time integral `int_{t0}^{t1} int_P u dx dt`, discretized by the
/// trapezoid rule on the time steps in the window. `c` solves the discrete
/// adjoint recursion with the region indicator as a source, so that
/// `<m, c>_M` equals the discrete integral for every initial condition `m`.
/// A window of zero length gives `c = 0`.
pub fn goal_vector_spacetime(transport: &Transport, qoi: &QoiSpec) -> Result<GoalVector> {
    let t_final = transport.config().t_final;
    if !(0.0 <= qoi.t_start && qoi.t_start <= qoi.t_end && qoi.t_end <= t_final * (1.0 + 1e-12)) {
        return Err(Error::InvalidArgument(format!(
            "QoI window [{}, {}] not inside [0, {t_final}]",
            qoi.t_start, qoi.t_end
        )));
    }
    let chi = region_indicator(transport.grid(), &qoi.region)?.into_values();
    let k0 = transport.step_of(qoi.t_start).expect("checked window");
    let k1 = transport.step_of(qoi.t_end).expect("checked window");
    let dt = transport.dt();
    let tau = |k: usize| {
        if k0 == k1 || k < k0 || k > k1 {
            0.0
        } else if k == k0 || k == k1 {
            0.5 * dt
        } else {
            dt
        }
    };
    let mut lam = vec![0.0; chi.len()];
    for k in (0..=k1).rev() {
        let w = tau(k);
        if w != 0.0 {
            for (l, x) in lam.iter_mut().zip(&chi) {
                *l += w * x;
            }
        }
        if k > 0 {
            transport.step_adjoint_in_place(&mut lam);
        }
    }
    Ok(GoalVector { c: lam, qoi: *qoi })
}

/// Trapezoid space-time integral of a forward trajectory, the quantity
/// represented by [`goal_vector_spacetime`].
pub fn spacetime_integral(transport: &Transport, m: &[f64], qoi: &QoiSpec) -> Result<f64> {
    let chi = region_indicator(transport.grid(), &qoi.region)?.into_values();
    let k0 = transport.step_of(qoi.t_start).ok_or_else(|| Error::InvalidArgument("bad window".into()))?;
    let k1 = transport.step_of(qoi.t_end).ok_or_else(|| Error::InvalidArgument("bad window".into()))?;
    if k0 == k1 {
        return Ok(0.0);
    }
    let area = transport.grid().cell_area();
    let dt = transport.dt();
    let mut u = m.to_vec();
    let mut total = 0.0;
    for k in 0..=k1 {
        if k > 0 {
            transport.step_forward_in_place(&mut u);
        }
        if k >= k0 {
            let w = if k == k0 || k == k1 { 0.5 * dt } else { dt };
            total += w * area * u.iter().zip(&chi).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    Ok(total)
}

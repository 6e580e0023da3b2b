//! Decision-vector layout, scaling and bounds for the transcribed problem.
//!
//! Ordering: for each interval k, the boundary state x_k followed by the
//! degree collocation nodes, each holding state, control, (optional
//! fictitious forces), algebraic variables; then the final boundary state
//! x_N; then the free scalars. Single systems carry
//! [d_t, a, T_ro, T_ri, R?, theta_e]; dual systems append the secondary
//! geometry and the dividing-plane angle:
//! [d_t, d_s, l_s, a, T_ro, T_ri, R?, theta_e, phi0].

use crate::vehicle::{SystemModel, TopologyKind};

use super::OcpSpec;

#[derive(Clone, Debug)]
pub struct Layout {
    pub n_x: usize,
    pub n_u: usize,
    pub n_z: usize,
    /// Fictitious force components per collocation node (relaxed stages).
    pub n_fict: usize,
    pub n_nodes: usize,
    pub n_aircraft: usize,
    pub degree: usize,
    pub n_intervals: usize,
    pub n_reel_out: usize,
    pub radius_free: bool,
    pub dual: bool,
    /// Per-variable characteristic magnitudes (physical = scale * scaled).
    pub x_scale: Vec<f64>,
    block: usize,
    node_block: usize,
    n_globals: usize,
}

impl Layout {
    pub fn new(spec: &OcpSpec, relaxed: bool) -> Self {
        let model = &spec.model;
        let d = model.dims();
        let dual = model.topology.kind == TopologyKind::Dual;
        let n_fict = if relaxed { 3 * d.n_nodes } else { 0 };
        let node_block = d.n_x + d.n_u + n_fict + d.n_z;
        let block = d.n_x + spec.degree * node_block;
        let radius_free = spec.fixed_radius.is_none();
        // dual: d_t, d_s, l_s, a, T_ro, T_ri, [R], theta_e, phi0
        // single: d_t, a, T_ro, T_ri, [R], theta_e
        let mut layout = Self {
            n_x: d.n_x,
            n_u: d.n_u,
            n_z: d.n_z,
            n_fict,
            n_nodes: d.n_nodes,
            n_aircraft: d.n_aircraft,
            degree: spec.degree,
            n_intervals: spec.n_intervals,
            n_reel_out: spec.n_reel_out,
            radius_free,
            dual,
            x_scale: Vec::new(),
            block,
            node_block,
            n_globals: if dual { 8 } else { 5 } + usize::from(radius_free),
        };
        layout.x_scale = layout.build_scales(model, spec);
        layout
    }

    pub fn n_vars(&self) -> usize {
        self.n_intervals * self.block + self.n_x + self.n_globals
    }

    /// Offset of boundary state k (k in 0..=n_intervals).
    pub fn x_boundary(&self, k: usize) -> usize {
        debug_assert!(k <= self.n_intervals);
        if k == self.n_intervals {
            self.n_intervals * self.block
        } else {
            k * self.block
        }
    }

    fn node_start(&self, k: usize, j: usize) -> usize {
        debug_assert!(k < self.n_intervals && j < self.degree);
        k * self.block + self.n_x + j * self.node_block
    }

    /// Offset of the collocation state (k, j).
    pub fn x_coll(&self, k: usize, j: usize) -> usize {
        self.node_start(k, j)
    }

    /// Offset of the control vector at node (k, j).
    pub fn u_coll(&self, k: usize, j: usize) -> usize {
        self.node_start(k, j) + self.n_x
    }

    /// Offset of the fictitious force block at node (k, j) (relaxed only).
    pub fn fict_coll(&self, k: usize, j: usize) -> usize {
        debug_assert!(self.n_fict > 0);
        self.node_start(k, j) + self.n_x + self.n_u
    }

    /// Offset of the algebraic variables at node (k, j).
    pub fn z_coll(&self, k: usize, j: usize) -> usize {
        self.node_start(k, j) + self.n_x + self.n_u + self.n_fict
    }

    fn globals_start(&self) -> usize {
        self.n_intervals * self.block + self.n_x
    }

    pub fn g_tether_diameter(&self) -> usize {
        self.globals_start()
    }
    pub fn g_secondary_diameter(&self) -> usize {
        debug_assert!(self.dual);
        self.globals_start() + 1
    }
    pub fn g_secondary_length(&self) -> usize {
        debug_assert!(self.dual);
        self.globals_start() + 2
    }
    pub fn g_induction(&self) -> usize {
        self.globals_start() + if self.dual { 3 } else { 1 }
    }
    pub fn g_t_reel_out(&self) -> usize {
        self.g_induction() + 1
    }
    pub fn g_t_reel_in(&self) -> usize {
        self.g_induction() + 2
    }
    pub fn g_radius(&self) -> Option<usize> {
        self.radius_free.then(|| self.g_induction() + 3)
    }
    pub fn g_theta_e(&self) -> usize {
        self.g_induction() + 3 + usize::from(self.radius_free)
    }
    pub fn g_phi0(&self) -> usize {
        debug_assert!(self.dual);
        self.g_theta_e() + 1
    }

    /// Whether interval k belongs to the reel-out phase.
    pub fn interval_reel_out(&self, k: usize) -> bool {
        k < self.n_reel_out
    }

    /// Intervals in the phase of interval k.
    pub fn intervals_in_phase(&self, reel_out: bool) -> usize {
        if reel_out {
            self.n_reel_out
        } else {
            self.n_intervals - self.n_reel_out
        }
    }

    fn build_scales(&self, model: &SystemModel, spec: &OcpSpec) -> Vec<f64> {
        let mut s = vec![1.0; self.n_vars()];
        let lim = &spec.limits;
        let state_scale = |scale: &mut [f64], base: usize| {
            for node in 0..self.n_nodes {
                for c in 0..3 {
                    scale[base + model.idx_pos(node, c)] = 100.0;
                    scale[base + model.idx_vel(node, c)] = 30.0;
                }
            }
            scale[base + model.idx_lt()] = 100.0;
            scale[base + model.idx_ldt()] = 10.0;
            for k in 0..self.n_aircraft {
                scale[base + model.idx_cl(k)] = 1.0;
                scale[base + model.idx_bank(k)] = 1.0;
            }
        };

        for k in 0..=self.n_intervals {
            state_scale(&mut s, self.x_boundary(k));
        }
        for k in 0..self.n_intervals {
            for j in 0..self.degree {
                state_scale(&mut s, self.x_coll(k, j));
                let ub = self.u_coll(k, j);
                for a in 0..self.n_aircraft {
                    s[ub + 2 * a] = lim.cl_rate_max;
                    s[ub + 2 * a + 1] = lim.bank_rate_max;
                }
                s[ub + self.n_u - 1] = lim.reel_accel_max;
                if self.n_fict > 0 {
                    let fb = self.fict_coll(k, j);
                    for i in 0..self.n_fict {
                        s[fb + i] = 1.0; // already in units of m g
                    }
                }
                let zb = self.z_coll(k, j);
                s[zb] = 10.0;
                for i in 1..self.n_z {
                    s[zb + i] = 100.0;
                }
            }
        }
        s[self.g_tether_diameter()] = 0.01;
        if self.dual {
            s[self.g_secondary_diameter()] = 0.01;
            s[self.g_secondary_length()] = 10.0;
        }
        s[self.g_induction()] = 0.1;
        s[self.g_t_reel_out()] = 10.0;
        s[self.g_t_reel_in()] = 10.0;
        if let Some(gr) = self.g_radius() {
            s[gr] = 10.0;
        }
        s[self.g_theta_e()] = 1.0;
        if self.dual {
            s[self.g_phi0()] = 1.0;
        }
        s
    }

    pub fn to_physical(&self, x_scaled: &[f64]) -> Vec<f64> {
        x_scaled
            .iter()
            .zip(&self.x_scale)
            .map(|(v, s)| v * s)
            .collect()
    }

    pub fn to_scaled(&self, x_phys: &[f64]) -> Vec<f64> {
        x_phys
            .iter()
            .zip(&self.x_scale)
            .map(|(v, s)| v / s)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atmosphere::{IsaAtmosphere, WindProfile};
    use crate::vehicle::{AircraftParams, SystemModel, SystemTopology, TetherParams};

    fn spec_single(n: usize) -> OcpSpec {
        let model = SystemModel::new(
            SystemTopology::single(),
            AircraftParams::reference(),
            TetherParams::default(),
            WindProfile::default(),
            IsaAtmosphere::default(),
        );
        OcpSpec::new(model).with_mesh(n)
    }

    #[test]
    fn variable_count_matches_formula() {
        // single system, 100 intervals, degree 4, R free:
        // 100 (4 (10+3+1) + 10) + 10 + 6 = 6616
        let spec = spec_single(100);
        let layout = Layout::new(&spec, false);
        assert_eq!(layout.n_vars(), 6616);

        // with R fixed, R leaves the decision vector
        let mut spec_fixed = spec_single(100);
        spec_fixed.fixed_radius = Some(40.0);
        let layout = Layout::new(&spec_fixed, false);
        assert_eq!(layout.n_vars(), 6615);
        assert!(layout.g_radius().is_none());
    }

    #[test]
    fn offsets_are_disjoint_and_cover() {
        let spec = spec_single(7);
        let layout = Layout::new(&spec, true);
        let mut seen = vec![false; layout.n_vars()];
        let mut mark = |lo: usize, len: usize| {
            for i in lo..lo + len {
                assert!(!seen[i], "overlap at {i}");
                seen[i] = true;
            }
        };
        for k in 0..=layout.n_intervals {
            mark(layout.x_boundary(k), layout.n_x);
        }
        for k in 0..layout.n_intervals {
            for j in 0..layout.degree {
                mark(layout.x_coll(k, j), layout.n_x);
                mark(layout.u_coll(k, j), layout.n_u);
                mark(layout.fict_coll(k, j), layout.n_fict);
                mark(layout.z_coll(k, j), layout.n_z);
            }
        }
        mark(layout.g_tether_diameter(), 1);
        mark(layout.g_induction(), 3); // a, T_ro, T_ri are contiguous
        if let Some(gr) = layout.g_radius() {
            mark(gr, 1);
        }
        mark(layout.g_theta_e(), 1);
        assert!(seen.iter().all(|&b| b), "gaps in the layout");
    }
}

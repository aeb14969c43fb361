use crate::diffcore::{Graph, NodeId};
use crate::error::Result;
use crate::scalar::Scalar;

/// `max(0, v - v_t)`; the gradient is zero at `v == v_t`.
pub fn hinge(v: f64, v_t: f64) -> f64 {
    (v - v_t).max(0.0)
}

/// Tape version of [`hinge`] on a scalar node.
pub fn speed_loss<T: Scalar>(g: &mut Graph<T>, v_n: NodeId, v_t: T) -> NodeId {
    let d = g.add_const(v_n, -v_t);
    g.relu(d)
}

/// `l_sr + gamma · l_spd`.
pub fn total_loss<T: Scalar>(g: &mut Graph<T>, l_sr: NodeId, l_spd: NodeId, gamma: T) -> Result<NodeId> {
    let w = g.scale(l_spd, gamma);
    g.add(l_sr, w)
}

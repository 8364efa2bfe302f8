use super::{EmpiricalMeasure, Order, Transfer, TransportResult};
use crate::error::{Error, Result};

fn sorted_order(m: &EmpiricalMeasure) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..m.len()).collect();
    let xs = m.points();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]).then(a.cmp(&b)));
    idx
}

/// Exact `W_p` on the line via the monotone (quantile) coupling.
///
/// Atoms are sorted and mass is transported greedily from left to right, splitting
/// an atom whenever the two cumulative distribution functions step at different places.
pub fn wasserstein_1d(order: Order, mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<TransportResult> {
    if mu.dim() != 1 || nu.dim() != 1 {
        return Err(Error::invalid(format!(
            "wasserstein_1d needs one-dimensional measures, got d={} and d={}",
            mu.dim(),
            nu.dim()
        )));
    }
    if mu.is_empty() || nu.is_empty() {
        return Err(Error::invalid("empty measure"));
    }
    let ia = sorted_order(mu);
    let ib = sorted_order(nu);
    let (xa, wa) = (mu.points(), mu.weights());
    let (xb, wb) = (nu.points(), nu.weights());

    let mut plan = Vec::with_capacity(ia.len() + ib.len());
    let mut total = 0.0;
    let (mut i, mut j) = (0usize, 0usize);
    let (mut left_a, mut left_b) = (wa[ia[0]], wb[ib[0]]);
    loop {
        let (from, to) = (ia[i], ib[j]);
        let mass = left_a.min(left_b);
        if mass > 0.0 {
            total += mass * order.ground_cost(&xa[from..from + 1], &xb[to..to + 1]);
            plan.push(Transfer { from, to, mass });
        }
        if left_a <= left_b {
            left_b -= left_a;
            i += 1;
            if i == ia.len() {
                break;
            }
            left_a = wa[ia[i]];
        } else {
            left_a -= left_b;
            j += 1;
            if j == ib.len() {
                break;
            }
            left_b = wb[ib[j]];
        }
    }
    Ok(TransportResult {
        cost: order.root(total),
        plan,
        order,
    })
}
